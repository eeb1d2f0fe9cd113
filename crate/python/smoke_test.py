#!/usr/bin/env python3
"""Smoke test for the fairrag_py extension module.

Build and run:

    cargo build -p fairrag-py
    cp target/debug/libfairrag_py.so python/fairrag_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import fairrag_py as fr


def main():
    toks = fr.tokenize("The cat, sat DOWN!")
    assert toks == ["the", "cat", "sat", "down"], toks

    body = " ".join(f"word{i}" for i in range(20))
    spans = fr.chunk_text(body, chunk_size=8, overlap=2)
    assert spans[0][:2] == (0, 8), spans
    assert spans[-1][1] == 20, spans

    p = fr.softmax([0.0, 0.0], 0.1)
    assert abs(p[0] - 0.5) < 1e-12 and abs(sum(p) - 1.0) < 1e-12

    kl = fr.kl_divergence([1.0, 0.0], [0.5, 0.5])
    assert abs(kl - math.log(2)) < 1e-12, kl

    docs = [("a", "the cat sat"), ("b", "dogs bark loudly"), ("c", "the cat slept")]
    top = fr.bm25_topk(docs, "cat", k=2)
    assert [t[0] for t in top] == ["a", "c"], top

    vecs = [("x", [1.0, 0.0]), ("y", [0.0, 1.0]), ("z", [0.7, 0.7])]
    top = fr.dense_topk(vecs, [1.0, 0.1], k=2)
    assert top[0][0] == "x", top

    assert fr.parse_verdict('{"Pass": true}') == (True, "ok")
    assert fr.parse_verdict('```json\n{"pass": false}\n```') == (False, "recovered")
    assert fr.parse_verdict("I refuse.") == (None, "unparseable")

    assert fr.classify_stance("Yes. Because reasons.") == "agree"
    assert fr.classify_stance("No. It is a stereotype.") == "disagree"

    prompt = fr.fairness_filter_prompt("q?", "doc body")
    assert "### Query:q?" in prompt and "### Document: doc body" in prompt
    prompt = fr.utility_filter_prompt("q?", "doc body")
    assert prompt.rstrip().endswith("### Response:")

    print("smoke test passed")


if __name__ == "__main__":
    main()
