#!/usr/bin/env python3
"""Writes the small synthetic corpora under data/.

toy50.txt    50 dialogues over about 20 word types; every response is a
             deterministic function of the history, so a model can memorize it.
topics.txt   topical dialogues where the generic reply "i know" competes with
             topic-specific replies.
factor.txt   a hidden binary factor picks one token in the opening utterance
             and one in the closing utterance; the middle turn ignores it.
"""

import argparse
import itertools
import pathlib
import random


def toy50(rng):
    nouns = ["tea", "milk", "rain", "sun", "book", "song", "cat", "dog", "bird", "cake"]
    pairs = list(itertools.permutations(nouns, 2))
    rng.shuffle(pairs)
    out = []
    for x, y in pairs[:50]:
        liked = x if nouns.index(x) < nouns.index(y) else y
        turns = [f"do you like {x} and {y}"]
        turns.append(f"i like {liked}" if liked == x else f"no i like {liked}")
        turns.append(f"why {liked}")
        if rng.random() < 0.5:
            turns.append(f"because {liked} is good")
        out.append(turns)
    return out


TOPICS = {
    "movies": (["film", "actor", "cinema"], ["funny", "long"]),
    "food": (["pizza", "pasta", "soup"], ["tasty", "hot"]),
    "sports": (["football", "tennis", "golf"], ["fast", "hard"]),
    "music": (["guitar", "piano", "drums"], ["loud", "calm"]),
    "travel": (["paris", "tokyo", "rome"], ["busy", "far"]),
    "weather": (["snow", "storm", "wind"], ["cold", "wild"]),
}


def topical_reply(rng, keywords, adjectives):
    kw = rng.choice(keywords)
    form = rng.randrange(3)
    if form == 0:
        return f"yes the {kw} is {rng.choice(adjectives)}"
    if form == 1:
        return f"i think {kw} is {rng.choice(adjectives)} today"
    return f"the {kw} was really {rng.choice(adjectives)}"


def topics(rng, count):
    names = sorted(TOPICS)
    out = []
    for _ in range(count):
        keywords, adjectives = TOPICS[rng.choice(names)]
        turns = [f"do you like the {rng.choice(keywords)}"]
        for _ in range(rng.randint(1, 3)):
            if rng.random() < 0.4:
                turns.append("i know")
            else:
                turns.append(topical_reply(rng, keywords, adjectives))
            if rng.random() < 0.5:
                turns.append(f"what about the {rng.choice(keywords)}")
        out.append(turns)
    return out


def factor(rng, count):
    fillers = ["we", "they", "then", "now"]
    middles = ["okay", "sure", "right", "fine", "maybe", "perhaps", "indeed", "really"]
    out = []
    for _ in range(count):
        bit = rng.randrange(2)
        opener = ["alpha" if bit else "beta", rng.choice(fillers)]
        middle = rng.sample(middles, 2)
        closer = [rng.choice(fillers), "north" if bit else "south"]
        out.append([" ".join(opener), " ".join(middle), " ".join(closer)])
    return out


def write(path, dialogues):
    with open(path, "w", encoding="utf-8") as f:
        for turns in dialogues:
            f.write(" __eou__ ".join(turns) + " __eou__\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--seed", type=int, default=20191)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write(out / "toy50.txt", toy50(random.Random(args.seed)))
    write(out / "topics.txt", topics(random.Random(args.seed + 1), 600))
    write(out / "factor.txt", factor(random.Random(args.seed + 2), 400))


if __name__ == "__main__":
    main()
