"""Brute-force reference implementations used to check the production paths.

Nothing here imports the n-gram estimator or the autograd engine's internals;
the reference Kneser-Ney scorer recounts the corpus and evaluates the
interpolation recursion literally, enumerating the vocabulary for every sum.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class ReferenceKN:
    """Literal interpolated modified Kneser-Ney over plain count dictionaries.

    Slow by design: every normalizer and backoff mass is a fresh sum over the
    whole vocabulary. Only suitable for corpora of a few thousand tokens.
    """

    def __init__(self, sentences: Sequence[Sequence[int]], order: int, vocab_size: int, bos_id: int = 0):
        self.n = order
        self.V = vocab_size
        self.bos = bos_id
        self.raw: dict[int, dict[tuple, int]] = {k: {} for k in range(1, order + 1)}
        for sent in sentences:
            padded = [bos_id] * (order - 1) + list(sent)
            for end in range(order - 1, len(padded)):
                for k in range(1, order + 1):
                    g = tuple(padded[end - k + 1 : end + 1])
                    self.raw[k][g] = self.raw[k].get(g, 0) + 1
        # left extensions: for every observed (k+1)-gram, record its first token
        self.left: dict[tuple, set] = {}
        for k in range(2, order + 1):
            for g in self.raw[k]:
                self.left.setdefault(g[1:], set()).add(g[0])
        self.discount_table = {k: self._discounts(k) for k in range(1, order + 1)}

    def adjusted(self, g: tuple) -> int:
        k = len(g)
        if g not in self.raw[k]:
            return 0
        if k == self.n or g[0] == self.bos:
            return self.raw[k][g]
        return len(self.left.get(g, ()))

    def _discounts(self, k: int) -> tuple[float, float, float]:
        n_r = [0, 0, 0, 0, 0]
        for g in self.raw[k]:
            a = self.adjusted(g)
            if 1 <= a <= 4:
                n_r[a] += 1
        n1, n2, n3, n4 = n_r[1:]
        if n1 == 0 or n2 == 0 or n3 == 0:
            return (0.5, 0.5, 0.5)
        y = n1 / (n1 + 2.0 * n2)
        out = []
        for i, d in enumerate((1.0 - 2.0 * y * n2 / n1, 2.0 - 3.0 * y * n3 / n2, 3.0 - 4.0 * y * n4 / n3), start=1):
            out.append(min(max(d, 1e-6), i - 1e-6))
        return tuple(out)

    def _d(self, k: int, a: int) -> float:
        if a <= 0:
            return 0.0
        return self.discount_table[k][min(a, 3) - 1]

    def prob(self, word: int, context: Sequence[int]) -> float:
        """P(word | last n-1 tokens of context), evaluated by literal recursion."""
        h = tuple(context)[-(self.n - 1) :] if self.n > 1 else ()
        return self._p(word, h)

    def _p(self, w: int, h: tuple) -> float:
        if w == self.bos:
            raise ValueError("BOS is never predicted")
        k = len(h) + 1
        lower = self._p(w, h[1:]) if h else 1.0 / (self.V - 1)
        total = 0
        mass = 0.0
        for v in range(self.V):
            a = self.adjusted(h + (v,))
            total += a
            mass += self._d(k, a)
        if total == 0:
            return lower
        a_w = self.adjusted(h + (w,))
        return max(a_w - self._d(k, a_w), 0.0) / total + (mass / total) * lower

    def logprob(self, word: int, context: Sequence[int]) -> float:
        return math.log(self.prob(word, context))


def ref_logprob(word: int, context: Sequence[int], sentences, n: int, vocab_size: int, bos_id: int = 0) -> float:
    return ReferenceKN(sentences, n, vocab_size, bos_id).logprob(word, context)


def ref_generator_ppl(desc, corpus, include_eos: bool = True) -> float:
    """Perplexity of ``corpus`` under the exact generating chain of ``desc``.

    EOS is certain under a fixed-length generator and contributes zero nats;
    ``include_eos`` controls whether it still counts towards the token total.
    """
    gen = desc.generator
    id_to_word = {int(i): w for w, i in enumerate(desc.word_to_id())}
    V, k = gen.vocab_size, gen.order
    total = 0.0
    count = 0
    rows = []
    for sent in corpus.sentences:
        words = [id_to_word[i] for i in sent[:-1]]
        if len(words) != gen.sentence_len:
            raise ValueError("sentence length does not match the generator")
        rows.append(words)
    words = np.array(rows, dtype=np.int64).reshape(len(rows), gen.sentence_len)
    ctx = np.full((len(rows), k), V, dtype=np.int64)
    for t in range(gen.sentence_len):
        probs = gen.conditional(ctx)
        total += float(np.log(probs[np.arange(len(rows)), words[:, t]]).sum())
        ctx = np.concatenate([ctx[:, 1:], words[:, t : t + 1]], axis=1)
    count = words.size + (len(rows) if include_eos else 0)
    return math.exp(-total / count)


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), with a tiny floor for all-zero gradients."""
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)
