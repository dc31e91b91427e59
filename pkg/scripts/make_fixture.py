#!/usr/bin/env python3
"""Regenerate the bundled mini dataset (data/conll04_mini/).

Every entity surface occurs exactly once in its sentence so that
first-occurrence alignment recovers exactly the gold spans; the script
asserts this before writing.
"""
from __future__ import annotations

import json
from pathlib import Path

HEADER = {
    "entity_types": ["Loc", "Org", "Other", "Per"],
    "relation_types": ["Kill", "Live_In", "Located_In", "OrgBased_In", "Work_For"],
}

# (id, sentence, [(predicate, subject_type, subject, object_type, object)])
TRAIN = [
    ("x01", "John Wilkes Booth shot Abraham Lincoln .",
     [("Kill", "Per", "John Wilkes Booth", "Per", "Abraham Lincoln")]),
    ("x02", "Lee Harvey Oswald assassinated John F. Kennedy in Dallas .",
     [("Kill", "Per", "Lee Harvey Oswald", "Per", "John F. Kennedy")]),
    ("x03", "Sirhan Sirhan killed Robert Kennedy in Los Angeles .",
     [("Kill", "Per", "Sirhan Sirhan", "Per", "Robert Kennedy")]),
    ("x04", "Mark Chapman murdered John Lennon outside the Dakota .",
     [("Kill", "Per", "Mark Chapman", "Per", "John Lennon")]),
    ("x05", "Gavrilo Princip shot Archduke Franz Ferdinand in Sarajevo .",
     [("Kill", "Per", "Gavrilo Princip", "Per", "Archduke Franz Ferdinand")]),
    ("x06", "Anne Meyer lives in Heidelberg .",
     [("Live_In", "Per", "Anne Meyer", "Loc", "Heidelberg")]),
    ("x07", "Carlos Ruiz resides in Barcelona .",
     [("Live_In", "Per", "Carlos Ruiz", "Loc", "Barcelona")]),
    ("x08", "Priya Sharma settled in Mumbai .",
     [("Live_In", "Per", "Priya Sharma", "Loc", "Mumbai")]),
    ("x09", "Heidelberg lies in southern Germany .",
     [("Located_In", "Loc", "Heidelberg", "Loc", "Germany")]),
    ("x10", "Toronto sits on the northern shore of a lake in Canada .",
     [("Located_In", "Loc", "Toronto", "Loc", "Canada")]),
    ("x11", "Nairobi is the capital of Kenya .",
     [("Located_In", "Loc", "Nairobi", "Loc", "Kenya")]),
    ("x12", "Acme Corp is headquartered in Boston .",
     [("OrgBased_In", "Org", "Acme Corp", "Loc", "Boston")]),
    ("x13", "Globex maintains offices in Zurich .",
     [("OrgBased_In", "Org", "Globex", "Loc", "Zurich")]),
    ("x14", "The United Nations is based in New York .",
     [("OrgBased_In", "Org", "United Nations", "Loc", "New York")]),
    ("x15", "Maria Santos works for Initech .",
     [("Work_For", "Per", "Maria Santos", "Org", "Initech")]),
    ("x16", "David Chen joined Stark Industries .",
     [("Work_For", "Per", "David Chen", "Org", "Stark Industries")]),
    ("x17", "Elena Petrova is employed by Gazprom .",
     [("Work_For", "Per", "Elena Petrova", "Org", "Gazprom")]),
    ("x18", "Walter Bishop teaches chemistry at Kelvin University .",
     [("Work_For", "Per", "Walter Bishop", "Org", "Kelvin University")]),
    ("x19", "Omar Hassan moved to Cairo and works for Nile Software .",
     [("Live_In", "Per", "Omar Hassan", "Loc", "Cairo"),
      ("Work_For", "Per", "Omar Hassan", "Org", "Nile Software")]),
    ("x20", "Umbrella Corp of Raccoon City hired Alice Abernathy .",
     [("OrgBased_In", "Org", "Umbrella Corp", "Loc", "Raccoon City"),
      ("Work_For", "Per", "Alice Abernathy", "Org", "Umbrella Corp")]),
]

TEST = [
    ("t01", "John Hinckley shot Ronald Reagan outside a hotel .",
     [("Kill", "Per", "John Hinckley", "Per", "Ronald Reagan")]),
    ("t02", "Nadia Comaneci lives in Bucharest .",
     [("Live_In", "Per", "Nadia Comaneci", "Loc", "Bucharest")]),
    ("t03", "Salzburg lies in Austria .",
     [("Located_In", "Loc", "Salzburg", "Loc", "Austria")]),
    ("t04", "Cyberdyne Systems is based in Sunnyvale .",
     [("OrgBased_In", "Org", "Cyberdyne Systems", "Loc", "Sunnyvale")]),
    ("t05", "Rachel Green works for Central Perk .",
     [("Work_For", "Per", "Rachel Green", "Org", "Central Perk")]),
    ("t06", "Viktor Krum killed Igor Karkaroff in Sofia .",
     [("Kill", "Per", "Viktor Krum", "Per", "Igor Karkaroff")]),
    ("t07", "Hans Gruber moved to Berlin and works for Nakatomi Trading .",
     [("Live_In", "Per", "Hans Gruber", "Loc", "Berlin"),
      ("Work_For", "Per", "Hans Gruber", "Org", "Nakatomi Trading")]),
    ("t08", "Tyrell Corp of Los Angeles employs Rick Deckard .",
     [("OrgBased_In", "Org", "Tyrell Corp", "Loc", "Los Angeles"),
      ("Work_For", "Per", "Rick Deckard", "Org", "Tyrell Corp")]),
]


def span(text: str, surface: str) -> list[int]:
    assert text.count(surface) == 1, f"{surface!r} must occur exactly once in {text!r}"
    start = text.index(surface)
    return [start, start + len(surface)]


def to_record(sid: str, text: str, triples) -> dict:
    return {
        "id": sid,
        "text": text,
        "triples": [
            {
                "predicate": pred,
                "subject_type": st,
                "subject": subj,
                "object_type": ot,
                "object": obj,
                "subject_span": span(text, subj),
                "object_span": span(text, obj),
            }
            for pred, st, subj, ot, obj in triples
        ],
    }


def write_split(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(HEADER, ensure_ascii=False) + "\n")
        for sid, text, triples in rows:
            fh.write(json.dumps(to_record(sid, text, triples), ensure_ascii=False) + "\n")
    print(f"wrote {path} ({len(rows)} samples)")


if __name__ == "__main__":
    root = Path(__file__).resolve().parent.parent / "data" / "conll04_mini"
    write_split(root / "train.jsonl", TRAIN)
    write_split(root / "test.jsonl", TEST)
