#!/usr/bin/env python3
"""Generate the small topic-structured word-vector table used by the test fixtures.

Each word gets a weighted mix of eight topic axes plus a deterministic
per-word perturbation, so words sharing a topic end up close in cosine
terms. The output is word2vec text format.

    python3 scripts/make_fixture_model.py > crates/core/tests/fixtures/toy_model.vec
"""
import hashlib
import random

DIM = 16
TOPICS = ["kin", "time", "place", "person", "art", "lang", "org", "misc"]

WORDS = {
    "kin": "family father mother spouse child relative sibling brother sister son daughter dad mum mom "
           "mama papa daddy pa parent husband wife married marriage partner consort kin kinsman cousin "
           "offspring children kids wedded siblings male female relation kinship relationships",
    "time": "time date start end began since until ended ending till stop beginning starting year "
            "birthday begins starts ceases valid early childhood",
    "place": "place country location birthplace deathplace territorial administrative subdivisions villages "
             "divides capital city seat government province state land sovereign inhabiting inhabitants "
             "population pob pod",
    "person": "occupation profession job work career employment employer employed workplace works worked "
              "student teacher pupil studied taught educated school alma mater education educational "
              "institution attended university field domain area discipline specialization sex gender "
              "biological identity person people master",
    "art": "movement art artistic notable magnum opus famous image picture photo photograph depiction "
           "illustration influenced influence influences inspired literary scientific philosophical scene "
           "significance idea informed",
    "lang": "language languages spoken written signed native tongue first speaks writes signs learned",
    "org": "member membership organization club musical group belongs",
    "misc": "instance type example class particular entity item subject object list direct relevant known "
            "contains cause underlying immediate number",
}

# Words that straddle topics: (word, {topic: weight}).
MIXED = {
    "birth": {"time": 0.8, "kin": 0.5, "place": 0.2},
    "born": {"time": 0.8, "kin": 0.4, "place": 0.3},
    "death": {"time": 0.8, "misc": 0.3},
    "died": {"time": 0.8, "misc": 0.3},
    "die": {"time": 0.7, "misc": 0.3},
    "dob": {"time": 0.9},
    "dod": {"time": 0.9},
    "divorced": {"kin": 0.6, "time": 0.5},
    "citizenship": {"place": 0.8, "person": 0.4},
    "citizen": {"place": 0.7, "person": 0.5},
    "nationality": {"place": 0.8, "person": 0.3},
    "national": {"place": 0.7, "person": 0.3},
    "recognizes": {"place": 0.3, "misc": 0.6},
    "animal": {"person": 0.5, "misc": 0.5},
    "fictional": {"art": 0.6, "person": 0.3},
    "character": {"art": 0.6, "person": 0.4},
    "covered": {"misc": 1.0},
    "properties": {"misc": 1.0},
    "qualify": {"misc": 1.0},
    "common": {"misc": 0.8, "kin": 0.2},
    "least": {"misc": 1.0},
}

# Frequent filler words that no property uses.
FILLER = "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima oscar quebec romeo tango".split()


def unit_noise(word):
    rng = random.Random(int.from_bytes(hashlib.sha256(word.encode()).digest()[:8], "little"))
    return [rng.gauss(0.0, 1.0) for _ in range(DIM)]


def vector(weights, word):
    v = [0.0] * DIM
    for topic, w in weights.items():
        v[TOPICS.index(topic)] += w
    noise = unit_noise(word)
    return [c + 0.15 * n for c, n in zip(v, noise)]


def main():
    rows = []
    seen = set()
    for topic, words in WORDS.items():
        for word in words.split():
            if word not in seen:
                seen.add(word)
                rows.append((word, vector({topic: 1.0}, word)))
    for word, weights in MIXED.items():
        if word not in seen:
            seen.add(word)
            rows.append((word, vector(weights, word)))
    for word in FILLER:
        rows.append((word, [0.6 * n for n in unit_noise(word)]))
    print(f"{len(rows)} {DIM}")
    for word, v in rows:
        print(word + " " + " ".join(f"{c:.5f}" for c in v))


if __name__ == "__main__":
    main()
