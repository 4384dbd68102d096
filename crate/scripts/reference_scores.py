"""Independent reference for the toy-model complexity scores.

Re-implements the interpolated add-k trigram model and the perplexity ratio directly from
their definitions, with no shared code, and writes golden score tables.

usage: python3 scripts/reference_scores.py
"""

import json
import math
from collections import Counter
from pathlib import Path

FIX = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"
TEMPLATE = "Below is an instruction. Write a response.\n\n### Instruction:\n{instruction}\n\n### Response:\n"
K = 0.1
L1, L2, L3 = 0.2, 0.3, 0.5
BOS = "<s>"  # never part of the vocabulary


def toks(text):
    return text.lower().split()


def load(path):
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def render(instruction):
    return TEMPLATE.replace("{instruction}", instruction)


class Model:
    def __init__(self, vocab):
        self.vocab = vocab
        self.c1, self.c2, self.c3 = Counter(), Counter(), Counter()

    def train(self, rows):
        for r in rows:
            seq = [w if w in self.vocab else "<unk>" for w in toks(render(r["instruction"])) + toks(r["response"])]
            hist = [BOS, BOS] + seq
            for i, w in enumerate(seq):
                u, v = hist[i], hist[i + 1]
                self.c1[w] += 1
                self.c2[(v, w)] += 1
                self.c3[(u, v, w)] += 1

    def p(self, u, v, w):
        V = len(self.vocab)
        n1 = sum(self.c1.values())
        h2 = sum(c for (a, _), c in self.c2.items() if a == v)
        h3 = sum(c for (a, b, _), c in self.c3.items() if (a, b) == (u, v))
        return (
            L1 * (self.c1[w] + K) / (n1 + K * V)
            + L2 * (self.c2[(v, w)] + K) / (h2 + K * V)
            + L3 * (self.c3[(u, v, w)] + K) / (h3 + K * V)
        )

    def nll(self, context, continuation):
        enc = lambda t: [w if w in self.vocab else "<unk>" for w in toks(t)]
        hist = [BOS, BOS] + enc(context)
        cont = enc(continuation)
        total = 0.0
        for w in cont:
            total -= math.log(self.p(hist[-2], hist[-1], w))
            hist.append(w)
        return total / len(cont)


def score(corpus_file, pretrain_file):
    corpus = load(FIX / corpus_file)
    pretrain = load(FIX / pretrain_file)
    vocab = {"<unk>"}
    for r in corpus + pretrain:
        vocab.update(toks(r["instruction"]))
        vocab.update(toks(r["response"]))
    vocab.update(toks(render("")))
    m = Model(vocab)
    m.train(pretrain)
    rows = []
    for i, r in enumerate(corpus):
        ppl_prior = math.exp(m.nll("", r["response"]))
        ppl_cond = math.exp(m.nll(render(r["instruction"]), r["response"]))
        rows.append({"id": i, "ppl_prior": ppl_prior, "ppl_cond": ppl_cond, "s_com": ppl_cond / ppl_prior})
    return {"vocab_size": len(vocab), "scores": rows}


def main():
    out = FIX / "golden"
    out.mkdir(exist_ok=True)
    for name in ["corpus_10", "corpus_100"]:
        table = score(f"{name}.jsonl", "pretrain.jsonl")
        aligned = sum(r["s_com"] < 1 for r in table["scores"])
        print(f"{name}: V={table['vocab_size']} aligned={aligned}/{len(table['scores'])}")
        with open(out / f"scores_{name}.json", "w", encoding="utf-8", newline="\n") as f:
            json.dump(table, f, indent=1)
            f.write("\n")


if __name__ == "__main__":
    main()
