"""Sample-quality metrics: n-gram diversity, oracle-LM perplexity, recovery rate."""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from .nets import BOS


def _validate_samples(samples):
    samples = [list(map(int, s)) for s in samples]
    if not samples:
        raise ValueError("sample set is empty")
    if any(len(s) == 0 for s in samples):
        raise ValueError("sample set contains an empty sequence")
    return samples


def distinct_ratio(samples, n: int) -> float:
    """Unique n-grams over total n-grams, both pooled across the whole set."""
    grams = Counter()
    for s in samples:
        for i in range(len(s) - n + 1):
            grams[tuple(s[i:i + n])] += 1
    total = sum(grams.values())
    if total == 0:
        raise ValueError(f"sample set has no {n}-grams")
    return len(grams) / total


def ngram_diversity(samples, orders=(2, 3, 4)) -> float:
    samples = _validate_samples(samples)
    return math.prod(distinct_ratio(samples, n) for n in orders)


class NGramLM:
    """Add-k smoothed n-gram model over a fixed vocabulary; the fluency judge.

    Each sequence is scored left to right with BOS padding for the context.
    """

    def __init__(self, vocab_size: int, order: int = 2, add_k: float = 0.1):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.vocab_size = vocab_size
        self.order = order
        self.add_k = add_k
        self.counts: dict[tuple, np.ndarray] = {}
        self.frozen = False

    def _contexts(self, seq):
        padded = [BOS] * (self.order - 1) + list(seq)
        for i in range(len(seq)):
            yield tuple(padded[i:i + self.order - 1]), int(seq[i])

    def fit(self, sequences) -> "NGramLM":
        if self.frozen:
            raise RuntimeError("oracle LM is frozen")
        for seq in sequences:
            for ctx, tok in self._contexts(seq):
                c = self.counts.get(ctx)
                if c is None:
                    c = self.counts[ctx] = np.zeros(self.vocab_size)
                c[tok] += 1
        self.frozen = True
        return self

    def log_prob(self, ctx: tuple, tok: int) -> float:
        c = self.counts.get(ctx)
        V, k = self.vocab_size, self.add_k
        if c is None:
            return -math.log(V)
        return math.log((c[tok] + k) / (c.sum() + k * V))

    def next_distribution(self, ctx: tuple) -> np.ndarray:
        c = self.counts.get(tuple(ctx))
        if c is None:
            return np.full(self.vocab_size, 1.0 / self.vocab_size)
        p = c + self.add_k
        return p / p.sum()

    def nll(self, seq) -> tuple[float, int]:
        total = 0.0
        for ctx, tok in self._contexts(seq):
            if not 0 <= tok < self.vocab_size:
                raise ValueError(f"token {tok} outside oracle vocabulary of {self.vocab_size}")
            total -= self.log_prob(ctx, tok)
        return total, len(seq)

    def sample(self, n: int, length: int, seed: int = 0, exclude=()) -> list[list[int]]:
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            seq: list[int] = []
            for _ in range(length):
                ctx = tuple(([BOS] * (self.order - 1) + seq)[len(seq):]) if self.order > 1 else ()
                p = self.next_distribution(ctx)
                if exclude:
                    p = p.copy()
                    p[list(exclude)] = 0.0
                    p /= p.sum()
                seq.append(int(rng.choice(self.vocab_size, p=p)))
            out.append(seq)
        return out


def generative_ppl(samples, oracle: NGramLM) -> float:
    """exp of the token-weighted mean NLL under the oracle."""
    samples = _validate_samples(samples)
    tot, n = 0.0, 0
    for s in samples:
        nll, k = oracle.nll(s)
        tot += nll
        n += k
    return math.exp(tot / n)


def recovery_rate(predicted, truth) -> float:
    p, t = np.asarray(predicted), np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: predicted {p.shape} vs truth {t.shape}")
    if p.size == 0:
        raise ValueError("empty sequences")
    return float(np.mean(p == t))
