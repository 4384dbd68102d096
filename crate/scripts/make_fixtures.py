"""Regenerates the JSONL fixtures under crates/core/tests/fixtures.

Deterministic: re-running produces byte-identical files.
"""

import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"

TOPICS = {
    "cooking": ("bake bread roast vegetables simmer soup season pasta knead dough oven pan garlic onion salt "
                "butter flour yeast temperature minutes recipe taste").split(),
    "travel": ("pack luggage book flights passport itinerary hotel train airport budget map museum local "
               "guide tickets visa weather route city beach").split(),
    "programming": ("write function compile code debug variable loop array string test module error compiler "
                    "type memory thread library interface return value").split(),
    "gardening": ("plant seeds water soil compost prune roses sunlight shade weeds mulch garden bed tomato "
                  "harvest spring roots fertilizer leaves pots").split(),
    "finance": ("save money budget invest stocks bonds interest savings account loan credit debt retirement "
                "income expenses tax fund risk returns portfolio").split(),
    "fitness": ("run stretch lift weights cardio muscles rest recovery protein workout squat sleep heart rate "
                "routine training strength endurance warm cool").split(),
    "astronomy": ("planet star orbit telescope galaxy moon light gravity comet solar system nebula observe "
                  "night sky distance mass universe dark matter").split(),
    "history": ("empire war treaty king revolution century trade ancient republic battle dynasty colony "
                "reform archive records power city law peace").split(),
}

FUNCTION = "the a to and of in is it for with this you your can on as by that be are".split()
OPENERS = ["the", "to", "first", "start", "you", "a", "here", "in", "this"]
RARE_OPENERS = ["honestly", "well", "surprisingly", "briefly", "generally"]

INSTRUCTIONS = [
    "Explain how to {v} {n}.",
    "Give three tips about {n} and {m}.",
    "Describe the role of {n} in {topic}.",
    "What should a beginner know about {n}?",
    "Write a short guide on {n} for {topic}.",
    "Compare {n} with {m}.",
]


def sample(rng, topic, words):
    v, n, m = rng.sample(words, 3)
    instruction = rng.choice(INSTRUCTIONS).format(v=v, n=n, m=m, topic=topic)
    length = rng.randint(14, 40)
    opener = rng.choice(RARE_OPENERS) if rng.random() < 0.3 else rng.choice(OPENERS)
    body = [opener]
    # mention the instruction's nouns, then mix topic and function words
    body += [n, m]
    while len(body) < length:
        pool = words if rng.random() < 0.55 else FUNCTION
        body.append(rng.choice(pool))
    return {"instruction": instruction, "response": " ".join(body) + "."}


def corpus(seed, n):
    rng = random.Random(seed)
    topics = sorted(TOPICS)
    rows = []
    for i in range(n):
        topic = topics[i % len(topics)] if rng.random() < 0.7 else rng.choice(topics)
        rows.append(sample(rng, topic, TOPICS[topic]))
    return rows


def write(name, rows):
    with open(OUT / name, "w", encoding="utf-8", newline="\n") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False, sort_keys=False) + "\n")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    write("corpus_100.jsonl", corpus(20240601, 100))
    write("pretrain.jsonl", corpus(77, 60))
    write("corpus_10.jsonl", corpus(1010, 10))
    write(
        "div_3.jsonl",
        [
            {"instruction": "write a poem", "response": "roses are red and violets are blue"},
            {"instruction": "write a poem", "response": "roses are red and violets are blue"},
            {"instruction": "summarize the quarterly report", "response": "roses are red and violets are blue"},
        ],
    )


if __name__ == "__main__":
    main()
