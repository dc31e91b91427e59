import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tripleforge.gateway import GatewayError
from tripleforge.similarity import (
    HashingEmbedder,
    HttpEmbeddingProvider,
    PoolDistanceMatrix,
    embed_triple_sets,
    pool_distances,
    set_distance,
    triple_distance,
)

from conftest import StubEmbedder

vectors = st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=2)
vector_sets = st.lists(vectors, min_size=1, max_size=4)


def brute_force_set_distance(zi, zj):
    # literal two-directional mean-of-minima, written with loops
    def directed(a_set, b_set):
        total = 0.0
        for a in a_set:
            total += min(float(np.linalg.norm(np.asarray(a) - np.asarray(b))) for b in b_set)
        return total / len(a_set)

    return directed(zi, zj) + directed(zj, zi)


class TestTripleDistance:
    def test_identity(self):
        assert triple_distance(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0

    def test_pythagorean(self):
        assert triple_distance(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == 5.0

    def test_symmetry(self):
        a, b = np.array([1.0, -2.0, 0.5]), np.array([0.0, 3.0, 2.5])
        assert triple_distance(a, b) == triple_distance(b, a)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="dim mismatch"):
            triple_distance(np.zeros(2), np.zeros(3))


class TestSetDistance:
    def test_identical_sets_zero(self):
        z = [np.array([1.0, 2.0]), np.array([3.0, 4.0])]
        assert set_distance(z, z) == 0.0

    def test_hand_computed_fixture(self):
        # one singleton vs a pair at distances 1 and 3: 1*1 + (1+3)/2 = 3
        a, b, c = np.array([0.0]), np.array([1.0]), np.array([3.0])
        assert set_distance([a], [b, c]) == pytest.approx(3.0, abs=1e-9)

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError, match="empty triple set"):
            set_distance([], [np.zeros(2)])
        with pytest.raises(ValueError, match="empty triple set"):
            set_distance([np.zeros(2)], [])

    @given(vector_sets, vector_sets)
    @settings(max_examples=80)
    def test_symmetric(self, zi, zj):
        assert set_distance(zi, zj) == pytest.approx(set_distance(zj, zi), abs=1e-9)

    @given(vector_sets, vector_sets)
    @settings(max_examples=80)
    def test_matches_brute_force(self, zi, zj):
        assert set_distance(zi, zj) == pytest.approx(brute_force_set_distance(zi, zj), abs=1e-9)

    @given(vector_sets, vector_sets, st.randoms(use_true_random=False))
    @settings(max_examples=50)
    def test_permutation_invariant(self, zi, zj, rand):
        zi2, zj2 = list(zi), list(zj)
        rand.shuffle(zi2)
        rand.shuffle(zj2)
        assert set_distance(zi, zj) == pytest.approx(set_distance(zi2, zj2), abs=1e-9)

    def test_non_negative(self):
        zi = [np.array([0.0, 1.0])]
        zj = [np.array([5.0, -2.0]), np.array([1.0, 1.0])]
        assert set_distance(zi, zj) >= 0


class TestHashingEmbedder:
    def test_deterministic_and_normalized(self):
        emb = HashingEmbedder(dim=64)
        a = emb.embed("Per Booth Kill Per Lincoln")
        b = emb.embed("Per Booth Kill Per Lincoln")
        assert np.array_equal(a, b)
        assert np.linalg.norm(a) == pytest.approx(1.0)
        assert a.shape == (64,)

    def test_different_texts_differ(self):
        emb = HashingEmbedder(dim=64)
        assert not np.array_equal(emb.embed("alpha beta"), emb.embed("gamma delta"))

    def test_bigrams_make_order_matter(self):
        emb = HashingEmbedder(dim=64)
        assert not np.array_equal(emb.embed("a b c"), emb.embed("c b a"))


class TestPoolDistances:
    def fixture_provider(self):
        return StubEmbedder({
            "u": [0.0, 0.0], "v": [1.0, 0.0], "w": [0.0, 2.0], "z": [3.0, 4.0],
        })

    def test_single_sample_zero_matrix(self):
        matrix = pool_distances({"s1": ["u"]}, self.fixture_provider())
        assert matrix.n == 1 and matrix.entries[0, 0] == 0.0

    def test_matches_hand_computation(self):
        provider = self.fixture_provider()
        pre = {"a": ["u", "v"], "b": ["w"], "c": ["z"]}
        matrix = pool_distances(pre, provider)
        embedded = {sid: [provider.embed(t) for t in texts] for sid, texts in pre.items()}
        ids = list(pre)
        for i, si in enumerate(ids):
            for j, sj in enumerate(ids):
                expected = 0.0 if i == j else brute_force_set_distance(embedded[si], embedded[sj])
                assert matrix.entries[i, j] == pytest.approx(expected, abs=1e-9)

    def test_triple_order_within_sample_irrelevant(self):
        provider = self.fixture_provider()
        m1 = pool_distances({"a": ["u", "v"], "b": ["w"]}, provider)
        m2 = pool_distances({"a": ["v", "u"], "b": ["w"]}, provider)
        assert np.array_equal(m1.entries, m2.entries)

    def test_supply_order_permutes_consistently(self):
        provider = self.fixture_provider()
        pre = {"a": ["u"], "b": ["v"], "c": ["w"]}
        m1 = pool_distances(pre, provider)
        m2 = pool_distances({"c": ["w"], "a": ["u"], "b": ["v"]}, provider)
        perm = [m2.sample_ids.index(sid) for sid in m1.sample_ids]
        assert np.array_equal(m1.entries, m2.entries[np.ix_(perm, perm)])

    def test_memoized_and_plain_paths_identical(self):
        provider = HashingEmbedder(dim=32)
        pre = {"a": ["x y", "y z"], "b": ["x y"], "c": ["q r", "y z"]}
        with_memo = pool_distances(pre, provider, memoize=True)
        without = pool_distances(pre, provider, memoize=False)
        assert np.array_equal(with_memo.entries, without.entries)

    def test_memoization_embeds_each_unique_text_once(self):
        calls = []

        class SpyEmbedder(HashingEmbedder):
            def embed(self, text):
                calls.append(text)
                return super().embed(text)

        pre = {"a": ["same", "other"], "b": ["same"], "c": ["same", "other"]}
        embed_triple_sets(pre, SpyEmbedder(dim=16), memoize=True)
        assert sorted(calls) == ["other", "same"]

    def test_empty_preextraction_rejected(self):
        with pytest.raises(ValueError, match="no pre-extracted triples"):
            pool_distances({"a": []}, self.fixture_provider())

    def test_save_load_round_trip(self, tmp_path):
        matrix = pool_distances({"a": ["u"], "b": ["v"]}, self.fixture_provider())
        path = tmp_path / "pool.json"
        matrix.save(path)
        loaded = PoolDistanceMatrix.load(path)
        assert loaded.sample_ids == matrix.sample_ids
        assert np.array_equal(loaded.entries, matrix.entries)
        assert loaded.provider == matrix.provider and loaded.dim == matrix.dim


class TestPoolDistanceMatrixInvariants:
    def test_asymmetry_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            PoolDistanceMatrix(("a", "b"), np.array([[0.0, 1.0], [2.0, 0.0]]), "p", 2)

    def test_negative_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            PoolDistanceMatrix(("a", "b"), np.array([[0.0, -1.0], [-1.0, 0.0]]), "p", 2)

    def test_shape_rejected(self):
        with pytest.raises(ValueError, match="entries must be"):
            PoolDistanceMatrix(("a",), np.zeros((2, 2)), "p", 2)


class FakeResponse:
    def __init__(self, status_code, payload=None):
        self.status_code = status_code
        self._payload = payload

    def json(self):
        return self._payload


class TestHttpEmbeddingProvider:
    def test_reads_embedding_payload(self):
        def post(url, json=None, headers=None, timeout=None):
            return FakeResponse(200, {"data": [{"embedding": [1.0, 2.0, 3.0]}]})

        provider = HttpEmbeddingProvider("https://x.test", "emb-1", dim=3,
                                         api_key="k", post=post)
        assert np.array_equal(provider.embed("text"), np.array([1.0, 2.0, 3.0]))

    def test_dim_mismatch_rejected(self):
        def post(*a, **k):
            return FakeResponse(200, {"data": [{"embedding": [1.0]}]})

        provider = HttpEmbeddingProvider("https://x.test", "emb-1", dim=3,
                                         api_key="k", post=post)
        with pytest.raises(GatewayError, match="dim mismatch"):
            provider.embed("text")

    def test_missing_key_rejected(self, monkeypatch):
        monkeypatch.delenv("TRIPLEFORGE_API_KEY", raising=False)
        with pytest.raises(GatewayError, match="TRIPLEFORGE_API_KEY"):
            HttpEmbeddingProvider("https://x.test", "emb-1", dim=3)
