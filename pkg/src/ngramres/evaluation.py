"""Perplexity evaluation, per-sentence binning and domain-swap matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Mapping, Sequence

import numpy as np

from . import autograd as ag
from .corpus import Batch, TokenizedCorpus, make_batches
from .fusion import DEFAULT_FLOOR
from .neural_lm import NeuralLM
from .ngram import KneserNeyModel

SCORER_KINDS = ("uniform", "ngram", "vanilla", "ngram_res", "prob_inter")


class EvalError(ValueError):
    pass


@dataclass
class Scorer:
    """Which model (combination) assigns probabilities to a corpus."""

    kind: str
    neural: NeuralLM | None = None
    ngram: KneserNeyModel | None = None
    alpha: float = 0.0
    lam: float = 0.5
    constant: float = 0.0
    floor: float = DEFAULT_FLOOR
    vocab_size: int | None = None

    def __post_init__(self):
        if self.kind not in SCORER_KINDS:
            raise EvalError(f"unknown scorer kind {self.kind!r}; expected one of {SCORER_KINDS}")
        if self.kind in ("vanilla", "ngram_res", "prob_inter") and self.neural is None:
            raise EvalError(f"scorer {self.kind!r} needs a neural model")
        if self.kind in ("ngram", "ngram_res", "prob_inter") and self.ngram is None:
            raise EvalError(f"scorer {self.kind!r} needs an n-gram model")
        sizes = {m.vocab_size for m in (self.neural, self.ngram) if m is not None}
        if self.vocab_size is not None:
            sizes.add(self.vocab_size)
        if len(sizes) > 1:
            raise EvalError(f"vocabulary mismatch between scorer components: sizes {sorted(sizes)}")
        if not sizes:
            raise EvalError("uniform scorer needs vocab_size")
        self.vocab_size = sizes.pop()

    @property
    def name(self) -> str:
        if self.kind == "ngram_res":
            return f"ngram_res(alpha={self.alpha:g})"
        if self.kind == "prob_inter":
            return f"prob_inter(lambda={self.lam:g})"
        if self.kind == "ngram":
            return "ngram-only"
        return self.kind


def ngram_context(ngram: KneserNeyModel, sentence: Sequence[int], position: int) -> tuple[int, ...]:
    """The truncated, BOS-padded n-gram context of ``sentence[position]``."""
    k = ngram.order - 1
    if k == 0:
        return ()
    start = position - k
    if start >= 0:
        return tuple(sentence[start:position])
    return (ngram.bos_id,) * (-start) + tuple(sentence[:position])


def batch_ngram_logprobs(ngram: KneserNeyModel, corpus: TokenizedCorpus, batch: Batch, floor: float) -> np.ndarray:
    """Full n-gram log-distributions for every batch position, shape [B * T, V].

    Padding rows are filled with a uniform log-distribution; they are masked
    out of every loss.
    """
    B, T = batch.targets.shape
    V = ngram.vocab_size
    pad = np.full(V, -math.log(V))
    rows = []
    for r in range(B):
        sent = corpus.sentences[batch.sentence_index[r]]
        off = int(batch.offset[r])
        for t in range(T):
            if batch.mask[r, t]:
                rows.append(ngram.full_distribution(ngram_context(ngram, sent, off + t), floor))
            else:
                rows.append(pad)
    return np.stack(rows)


def position_logprobs(scorer: Scorer, corpus: TokenizedCorpus, batch: Batch) -> np.ndarray:
    """log P(target) at every batch position (row-major [B * T]); padding gives 0."""
    targets = batch.targets.reshape(-1)
    mask = batch.mask.reshape(-1)
    rows = np.arange(len(targets))
    if scorer.kind == "uniform":
        out = np.full(len(targets), -math.log(scorer.vocab_size - 1))
    elif scorer.kind == "ngram":
        out = batch_ngram_logprobs(scorer.ngram, corpus, batch, scorer.floor)[rows, targets]
    else:
        scorer.neural.eval()
        with ag.no_grad():
            logits = scorer.neural.forward(batch.inputs).data
        if scorer.kind == "ngram_res" and scorer.alpha != 0.0:
            q = batch_ngram_logprobs(scorer.ngram, corpus, batch, scorer.floor)
            logits = logits + scorer.alpha * (q + scorer.constant)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        out = logp[rows, targets]
        if scorer.kind == "prob_inter":
            q = batch_ngram_logprobs(scorer.ngram, corpus, batch, scorer.floor)[rows, targets]
            out = np.log(scorer.lam * np.exp(q) + (1.0 - scorer.lam) * np.exp(out))
    return np.where(mask, out, 0.0)


def score_corpus(scorer: Scorer, corpus: TokenizedCorpus, batch_size: int = 64) -> list[np.ndarray]:
    """Per-sentence arrays of token log-probabilities (EOS included, BOS never)."""
    V = scorer.vocab_size
    for i, s in enumerate(corpus.sentences):
        if s and (max(s) >= V or min(s) < 0):
            raise EvalError(f"sentence {i} has token ids outside the scorer vocabulary of size {V}")
    if scorer.kind in ("uniform", "ngram"):
        if scorer.kind == "uniform":
            return [np.full(len(s), -math.log(V - 1)) for s in corpus.sentences]
        return [np.array(scorer.ngram.sentence_logprobs(s)) for s in corpus.sentences]
    out: list[np.ndarray] = [None] * len(corpus)
    max_len = max(len(s) for s in corpus.sentences)
    for batch in make_batches(corpus, batch_size, max_len, seed=None):
        lp = position_logprobs(scorer, corpus, batch).reshape(batch.targets.shape)
        for r, idx in enumerate(batch.sentence_index):
            out[idx] = lp[r, : len(corpus.sentences[idx])]
    return out


@dataclass
class EvalReport:
    model: str
    corpus: str
    corpus_ppl: float
    sentence_ppls: list[float]
    token_count: int
    total_logprob: float
    config_hash: str = ""
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    @property
    def cross_entropy(self) -> float:
        return -self.total_logprob / self.token_count


def corpus_ppl(scorer: Scorer, corpus: TokenizedCorpus, config_hash: str = "", batch_size: int = 64) -> EvalReport:
    if len(corpus) == 0:
        raise EvalError("cannot evaluate an empty corpus")
    per_sentence = score_corpus(scorer, corpus, batch_size)
    total = float(sum(lp.sum() for lp in per_sentence))
    count = sum(len(lp) for lp in per_sentence)
    return EvalReport(
        model=scorer.name,
        corpus=corpus.source_path,
        corpus_ppl=math.exp(-total / count),
        sentence_ppls=[math.exp(-float(lp.sum()) / len(lp)) for lp in per_sentence],
        token_count=count,
        total_logprob=total,
        config_hash=config_hash,
    )


# ---------------------------------------------------------------------------
# per-sentence PPL binning


@dataclass
class Bin:
    index: int
    ngram_ppl: float
    comparison_ppl: float
    count: int

    @property
    def gap(self) -> float:
        return self.ngram_ppl - self.comparison_ppl


@dataclass
class BinReport:
    comparison: str
    bins: list[Bin]

    @property
    def num_bins(self) -> int:
        return len(self.bins)

    def observation(self) -> str:
        first, last = self.bins[0], self.bins[-1]
        return (
            f"n-gram minus {self.comparison} PPL gap: first bin {first.gap:.4f}, last bin {last.gap:.4f}; "
            f"gap larger in the highest-PPL bin: {last.gap > first.gap}"
        )


def bin_partition(ngram_ppls: Sequence[float], num_bins: int) -> list[list[int]]:
    """Sentence indices sorted by n-gram PPL (ties by index), cut into near-equal bins."""
    if num_bins < 2:
        raise EvalError(f"need at least 2 bins, got {num_bins}")
    if len(ngram_ppls) < num_bins:
        raise EvalError(f"{len(ngram_ppls)} sentences cannot fill {num_bins} bins")
    order = sorted(range(len(ngram_ppls)), key=lambda i: (ngram_ppls[i], i))
    base, extra = divmod(len(order), num_bins)
    bins, start = [], 0
    for b in range(num_bins):
        size = base + (1 if b < extra else 0)
        bins.append(order[start : start + size])
        start += size
    return bins


def bin_report(ngram: KneserNeyModel, comparison: Scorer, corpus: TokenizedCorpus, num_bins: int = 5) -> BinReport:
    ngram_report = corpus_ppl(Scorer("ngram", ngram=ngram), corpus)
    cmp_report = corpus_ppl(comparison, corpus)
    bins = []
    for b, idx in enumerate(bin_partition(ngram_report.sentence_ppls, num_bins)):
        bins.append(
            Bin(
                index=b + 1,
                ngram_ppl=float(np.mean([ngram_report.sentence_ppls[i] for i in idx])),
                comparison_ppl=float(np.mean([cmp_report.sentence_ppls[i] for i in idx])),
                count=len(idx),
            )
        )
    return BinReport(comparison.name, bins)


# ---------------------------------------------------------------------------
# plug-and-play domain swap


@dataclass
class DomainMatrix:
    domains: list[str]
    # cells[i][j]: PPL with domain i's n-gram model on domain j's test data
    cells: list[list[float]]
    neural_hash: str
    alpha: float

    def best_rows(self) -> list[str]:
        return [self.domains[int(np.argmin([row[j] for row in self.cells]))] for j in range(len(self.domains))]

    def diagonal_wins(self) -> bool:
        n = len(self.domains)
        return all(self.cells[j][j] < self.cells[i][j] for j in range(n) for i in range(n) if i != j)

    def max_relative_gap(self) -> float:
        n = len(self.domains)
        gaps = [
            abs(self.cells[j][j] - self.cells[i][j]) / self.cells[j][j] for j in range(n) for i in range(n) if i != j
        ]
        return max(gaps) if gaps else 0.0


def domain_matrix(
    neural: NeuralLM,
    ngrams: Mapping[str, KneserNeyModel],
    tests: Mapping[str, TokenizedCorpus],
    alpha: float,
    kind: str = "ngram_res",
) -> DomainMatrix:
    if list(ngrams) != list(tests):
        raise EvalError(f"n-gram domains {list(ngrams)} and test domains {list(tests)} differ")
    sizes = {m.vocab_size for m in ngrams.values()} | {neural.vocab_size}
    if len(sizes) != 1:
        raise EvalError(f"vocabulary mismatch across domain models: sizes {sorted(sizes)}")
    before = neural.fingerprint()
    domains = list(ngrams)
    cells = []
    for row in domains:
        scorer = Scorer(kind, neural=neural, ngram=ngrams[row], alpha=alpha)
        cells.append([corpus_ppl(scorer, tests[col]).corpus_ppl for col in domains])
    after = neural.fingerprint()
    if before != after:
        raise EvalError("neural parameters changed during domain evaluation")
    return DomainMatrix(domains, cells, before, alpha)
