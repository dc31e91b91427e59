import json

import pytest

from tripleforge.core import TripleSet
from tripleforge.gateway import (
    GatewayError,
    HttpChatProvider,
    LlmGateway,
    LlmRequest,
    MockEchoGoldProvider,
    TransientProviderError,
)
from tripleforge.prompting import PromptFormat, render_zero_shot, serialize_triples

from conftest import make_triple


class CountingProvider:
    name = "counting"

    def __init__(self, reply="ok"):
        self.calls = 0
        self.reply = reply

    def generate(self, request):
        self.calls += 1
        return self.reply


class FlakyProvider:
    name = "flaky"

    def __init__(self, failures, status=429):
        self.failures = failures
        self.status = status
        self.calls = 0

    def generate(self, request):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransientProviderError(f"HTTP {self.status}", status=self.status)
        return "recovered"


def request(prompt="hello", **kw):
    return LlmRequest(model_id="m1", prompt=prompt, **kw)


class TestCacheAndRetry:
    def test_second_call_served_from_cache(self, tmp_path):
        provider = CountingProvider("answer")
        gw = LlmGateway(provider, tmp_path / "cache")
        first = gw.complete(request())
        second = gw.complete(request())
        assert not first.from_cache and second.from_cache
        assert first.text == second.text == "answer"
        assert provider.calls == 1
        assert gw.stats.provider_calls == 1 and gw.stats.cache_hits == 1

    def test_cache_persists_across_gateway_instances(self, tmp_path):
        gw1 = LlmGateway(CountingProvider("x"), tmp_path / "cache")
        gw1.complete(request())
        fresh = CountingProvider("should-not-be-called")
        gw2 = LlmGateway(fresh, tmp_path / "cache")
        assert gw2.complete(request()).text == "x"
        assert fresh.calls == 0

    def test_cache_file_is_inspectable_json(self, tmp_path):
        gw = LlmGateway(CountingProvider("body"), tmp_path / "cache")
        req = request()
        gw.complete(req)
        entry = json.loads((tmp_path / "cache" / f"{gw.cache_key(req)}.json").read_text())
        assert entry["text"] == "body"

    def test_transient_failures_retried_with_backoff(self, tmp_path):
        sleeps = []
        gw = LlmGateway(FlakyProvider(failures=2), tmp_path / "cache",
                        max_attempts=4, backoff_base=0.5, sleep=sleeps.append)
        assert gw.complete(request()).text == "recovered"
        assert sleeps == [0.5, 1.0]
        assert gw.stats.retries == 2

    def test_exhausted_retries_carry_last_status(self, tmp_path):
        gw = LlmGateway(FlakyProvider(failures=99, status=503), tmp_path / "cache",
                        max_attempts=3, sleep=lambda _: None)
        with pytest.raises(GatewayError, match="after 3 attempts") as err:
            gw.complete(request())
        assert err.value.status == 503

    def test_failed_requests_not_cached(self, tmp_path):
        provider = FlakyProvider(failures=1)
        gw = LlmGateway(provider, tmp_path / "cache", max_attempts=1, sleep=lambda _: None)
        with pytest.raises(GatewayError):
            gw.complete(request())
        gw2 = LlmGateway(provider, tmp_path / "cache", max_attempts=2, sleep=lambda _: None)
        assert gw2.complete(request()).text == "recovered"


class TestCacheKey:
    def test_identical_requests_same_key(self, tmp_path):
        gw = LlmGateway(CountingProvider(), tmp_path)
        assert gw.cache_key(request()) == gw.cache_key(request())

    def test_one_char_prompt_difference(self, tmp_path):
        gw = LlmGateway(CountingProvider(), tmp_path)
        assert gw.cache_key(request("hello")) != gw.cache_key(request("hellp"))

    def test_temperature_in_key(self, tmp_path):
        gw = LlmGateway(CountingProvider(), tmp_path)
        assert gw.cache_key(request(temperature=0.0)) != gw.cache_key(request(temperature=0.7))

    def test_stop_sequences_in_key(self, tmp_path):
        gw = LlmGateway(CountingProvider(), tmp_path)
        assert gw.cache_key(request()) != gw.cache_key(request(stop_sequences=("\n\n",)))

    def test_provider_in_key(self, tmp_path):
        a = LlmGateway(CountingProvider(), tmp_path)
        b = LlmGateway(FlakyProvider(0), tmp_path)
        assert a.cache_key(request()) != b.cache_key(request())


class TestLlmRequest:
    def test_empty_prompt_rejected(self):
        with pytest.raises(ValueError, match="prompt"):
            LlmRequest(model_id="m", prompt="")

    def test_temperature_defaults_to_zero(self):
        assert request().temperature == 0.0


class TestMockEchoGold:
    def test_zero_shot_echoes_gold_table(self, pool_dataset):
        by_id = pool_dataset.sample_by_id()
        gold_by_text = {by_id[sid].text: ann.triples for sid, ann in pool_dataset.gold.items()}
        provider = MockEchoGoldProvider(gold_by_text)
        sample = pool_dataset.samples[0]
        reply = provider.generate(request(prompt=render_zero_shot(sample)))
        assert reply == serialize_triples(PromptFormat.TABLEIE, pool_dataset.gold[sample.id].triples)

    def test_unknown_sentence_yields_empty(self):
        provider = MockEchoGoldProvider({})
        assert provider.generate(request(prompt=render_zero_shot_like("mystery"))) == ""

    def test_deterministic(self, pool_dataset):
        by_id = pool_dataset.sample_by_id()
        gold_by_text = {by_id[sid].text: ann.triples for sid, ann in pool_dataset.gold.items()}
        provider = MockEchoGoldProvider(gold_by_text)
        req = request(prompt=render_zero_shot(pool_dataset.samples[3]))
        assert provider.generate(req) == provider.generate(req)

    def test_textie_mode_uses_text_grammar(self):
        gold = TripleSet.of([make_triple()])
        provider = MockEchoGoldProvider({"Some sentence .": gold}, fmt=PromptFormat.TEXTIE)
        reply = provider.generate(request(prompt="instruction\nSome sentence ."))
        assert reply == "(Per: Booth, Kill, Per: Lincoln)"


def render_zero_shot_like(text):
    from tripleforge.prompting import TABLE_HEADER, ZERO_SHOT_INSTRUCTION
    return f"{ZERO_SHOT_INSTRUCTION}\n{text}\n{TABLE_HEADER}"


class FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text

    def json(self):
        return self._payload


class TestHttpChatProvider:
    def test_missing_api_key_is_configuration_error(self, monkeypatch):
        monkeypatch.delenv("TRIPLEFORGE_API_KEY", raising=False)
        with pytest.raises(GatewayError, match="TRIPLEFORGE_API_KEY"):
            HttpChatProvider("https://example.test/v1/chat")

    def test_success_reads_message_content(self):
        seen = {}

        def post(url, json=None, headers=None, timeout=None):
            seen.update(url=url, payload=json, headers=headers)
            return FakeResponse(200, {"choices": [{"message": {"content": "|1|a|b|c|d|e|"}}]})

        provider = HttpChatProvider("https://example.test/v1/chat", api_key="k", post=post)
        text = provider.generate(request(prompt="Do it", temperature=0.0))
        assert text == "|1|a|b|c|d|e|"
        assert seen["payload"]["model"] == "m1"
        assert seen["payload"]["messages"] == [{"role": "user", "content": "Do it"}]
        assert seen["headers"]["Authorization"] == "Bearer k"

    def test_429_is_transient(self):
        provider = HttpChatProvider("https://x.test", api_key="k",
                                    post=lambda *a, **k: FakeResponse(429))
        with pytest.raises(TransientProviderError):
            provider.generate(request())

    def test_400_is_fatal(self):
        provider = HttpChatProvider("https://x.test", api_key="k",
                                    post=lambda *a, **k: FakeResponse(400, text="bad request"))
        with pytest.raises(GatewayError, match="HTTP 400"):
            provider.generate(request())

    def test_connection_error_is_transient(self):
        import requests

        def post(*a, **k):
            raise requests.ConnectionError("refused")

        provider = HttpChatProvider("https://x.test", api_key="k", post=post)
        with pytest.raises(TransientProviderError, match="connection failure"):
            provider.generate(request())
