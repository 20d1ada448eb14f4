"""Interpolated modified Kneser-Ney n-gram model with ARPA and binary I/O."""

from __future__ import annotations

import json
import math
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import TokenizedCorpus, Vocabulary

LN10 = math.log(10.0)
ARPA_SENTINEL = -99.0
DISCOUNT_EPS = 1e-6
FALLBACK_DISCOUNT = 0.5
DEFAULT_FLOOR = 1e-10
MAX_ORDER = 8

BINARY_MAGIC = b"NGRAMRES-KN\x00"
BINARY_VERSION = 1


class NgramError(ValueError):
    pass


class ArpaParseError(NgramError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class CountTable:
    order: int
    # counts[k - 1] maps k-gram tuples to raw counts
    counts: list[dict[tuple[int, ...], int]]
    total_tokens: int
    bos_id: int = 0


def count_ngrams(corpus: TokenizedCorpus, n: int, bos_id: int = 0) -> CountTable:
    if n < 1:
        raise NgramError(f"order must be >= 1, got {n}")
    if n > MAX_ORDER:
        raise NgramError(f"order must be <= {MAX_ORDER}, got {n}")
    if len(corpus) == 0:
        raise NgramError("cannot count an empty corpus")
    counters = [Counter() for _ in range(n)]
    pad = (bos_id,) * (n - 1)
    total = 0
    for sent in corpus.sentences:
        stream = pad + tuple(sent)
        total += len(sent)
        for i in range(n - 1, len(stream)):
            for k in range(1, n + 1):
                counters[k - 1][stream[i - k + 1 : i + 1]] += 1
    return CountTable(n, [dict(c) for c in counters], total, bos_id)


@dataclass
class ContextStats:
    total: int = 0
    n1: int = 0
    n2: int = 0
    n3plus: int = 0


@dataclass
class AdjustedCounts:
    order: int
    counts: list[dict[tuple[int, ...], int]]
    # counts_of_counts[k - 1] = (n_1, n_2, n_3, n_4) over adjusted k-gram counts
    counts_of_counts: list[tuple[int, int, int, int]]
    # context_stats[k - 1] maps a (k-1)-tuple context to its continuation tallies
    context_stats: list[dict[tuple[int, ...], ContextStats]]
    bos_id: int = 0


def adjust_counts(counts: CountTable) -> AdjustedCounts:
    """Replace lower-order counts with continuation counts.

    Keys that start with BOS keep raw counts since nothing can precede them.
    """
    n = counts.order
    bos = counts.bos_id
    adjusted: list[dict] = [None] * n
    adjusted[n - 1] = dict(counts.counts[n - 1])
    for k in range(n - 1, 0, -1):
        continuation: Counter = Counter()
        for g in counts.counts[k]:
            continuation[g[1:]] += 1
        adjusted[k - 1] = {
            key: (raw if key[0] == bos else continuation[key]) for key, raw in counts.counts[k - 1].items()
        }
    coc = []
    stats = []
    for table in adjusted:
        hist = Counter(min(a, 5) for a in table.values())
        coc.append((hist[1], hist[2], hist[3], hist[4]))
        per_ctx: dict = defaultdict(ContextStats)
        for key, a in table.items():
            s = per_ctx[key[:-1]]
            s.total += a
            if a == 1:
                s.n1 += 1
            elif a == 2:
                s.n2 += 1
            else:
                s.n3plus += 1
        stats.append(dict(per_ctx))
    return AdjustedCounts(n, adjusted, coc, stats, bos)


@dataclass(frozen=True)
class DiscountSet:
    # per order, (D_1, D_2, D_3+)
    discounts: tuple[tuple[float, float, float], ...]

    def for_count(self, order: int, a: int) -> float:
        d = self.discounts[order - 1]
        return d[min(a, 3) - 1]


def discounts_from_counts_of_counts(n1: int, n2: int, n3: int, n4: int) -> tuple[float, float, float]:
    if n1 == 0 or n2 == 0 or n3 == 0:
        return (FALLBACK_DISCOUNT,) * 3
    y = n1 / (n1 + 2 * n2)
    raw = (1 - 2 * y * n2 / n1, 2 - 3 * y * n3 / n2, 3 - 4 * y * n4 / n3)
    return tuple(min(max(d, DISCOUNT_EPS), i - DISCOUNT_EPS) for i, d in enumerate(raw, start=1))


def estimate_discounts(adjusted: AdjustedCounts) -> DiscountSet:
    return DiscountSet(tuple(discounts_from_counts_of_counts(*c) for c in adjusted.counts_of_counts))


class KneserNeyModel:
    """Backoff-form n-gram model: per-order log-probabilities and backoff weights.

    ``logp[k]`` maps k-gram tuples to the natural log of the fully interpolated
    probability; ``logbo[k]`` maps k-tuple contexts to natural-log backoff
    weights. Anything not stored backs off with weight 1. This is the same
    information an ARPA file carries.
    """

    def __init__(
        self,
        order: int,
        vocab_size: int,
        logp: list[dict[tuple[int, ...], float]],
        logbo: list[dict[tuple[int, ...], float]],
        bos_id: int = 0,
        discounts: DiscountSet | None = None,
    ):
        self.order = order
        self.vocab_size = vocab_size
        self.bos_id = bos_id
        # index 0 unused so that logp[k] is the k-gram table
        self.logp = [{}] + list(logp)
        self.logbo = [{}] + list(logbo)
        self.discounts = discounts
        uni = np.zeros(vocab_size)
        for (w,), lp in self.logp[1].items():
            uni[w] = math.exp(lp)
        self._unigram = uni
        self._grouped: list[dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]]] = [{} for _ in range(order + 1)]
        for k in range(2, order + 1):
            by_ctx: dict = defaultdict(lambda: ([], []))
            for key, lp in self.logp[k].items():
                ids, vals = by_ctx[key[:-1]]
                ids.append(key[-1])
                vals.append(math.exp(lp))
            self._grouped[k] = {h: (np.array(i, dtype=np.int64), np.array(v)) for h, (i, v) in by_ctx.items()}
        self._cache: dict[tuple[tuple[int, ...], float], np.ndarray] = {}

    def __repr__(self) -> str:
        sizes = ", ".join(str(len(t)) for t in self.logp[1:])
        return f"KneserNeyModel(order={self.order}, V={self.vocab_size}, ngrams=[{sizes}])"

    def truncate(self, context: Sequence[int]) -> tuple[int, ...]:
        context = tuple(context)
        if self.order == 1:
            return ()
        return context[-(self.order - 1) :]

    def logprob(self, word: int, context: Sequence[int] = ()) -> float:
        if word == self.bos_id:
            raise NgramError("BOS is never a prediction target")
        if not 0 <= word < self.vocab_size:
            raise NgramError(f"word id {word} outside vocabulary of size {self.vocab_size}")
        ctx = self.truncate(context)
        penalty = 0.0
        for j in range(len(ctx), -1, -1):
            h = ctx[len(ctx) - j :]
            lp = self.logp[j + 1].get(h + (word,))
            if lp is not None:
                return lp + penalty
            if j > 0:
                penalty += self.logbo[j].get(h, 0.0)
        raise NgramError(f"word id {word} has no unigram entry")

    def distribution(self, context: Sequence[int] = ()) -> np.ndarray:
        """Probabilities over the vocabulary for ``context``; BOS gets 0."""
        ctx = self.truncate(context)
        vec = self._unigram.copy()
        for j in range(1, len(ctx) + 1):
            h = ctx[len(ctx) - j :]
            bo = self.logbo[j].get(h)
            if bo is not None:
                vec *= math.exp(bo)
            grouped = self._grouped[j + 1].get(h)
            if grouped is not None:
                vec[grouped[0]] = grouped[1]
        return vec

    def full_distribution(self, context: Sequence[int] = (), floor: float = DEFAULT_FLOOR) -> np.ndarray:
        """Log-probability vector of length V; the BOS slot holds ``log(floor)``.

        Memoized by truncated context. Callers must not mutate the result.
        """
        key = (self.truncate(context), floor)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        p = self.distribution(key[0])
        p[self.bos_id] = floor
        out = np.log(np.maximum(p, floor))
        out.setflags(write=False)
        self._cache[key] = out
        return out

    def clear_cache(self) -> None:
        self._cache.clear()

    def sentence_logprobs(self, sentence: Sequence[int]) -> list[float]:
        stream = (self.bos_id,) * (self.order - 1) + tuple(sentence)
        off = self.order - 1
        return [self.logprob(stream[off + i], stream[i : off + i]) for i in range(len(sentence))]

    def ngram_counts(self) -> list[int]:
        return [len(t) for t in self.logp[1:]]

    def fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256(to_binary(self)).hexdigest()


def estimate_model(adjusted: AdjustedCounts, discounts: DiscountSet, vocab_size: int) -> KneserNeyModel:
    n = adjusted.order
    bos = adjusted.bos_id
    n_predictable = vocab_size - 1
    logp: list[dict] = []
    logbo: list[dict] = []

    def backoff_weight(order: int, h: tuple[int, ...]) -> float | None:
        s = adjusted.context_stats[order - 1].get(h)
        if s is None or s.total == 0:
            return None
        d1, d2, d3 = discounts.discounts[order - 1]
        return (d1 * s.n1 + d2 * s.n2 + d3 * s.n3plus) / s.total

    # unigrams: interpolate with a uniform distribution over predictable tokens
    b0 = backoff_weight(1, ())
    s0 = adjusted.context_stats[0].get(())
    uni = {}
    for w in range(vocab_size):
        if w == bos:
            continue
        a = adjusted.counts[0].get((w,), 0)
        u = max(a - discounts.for_count(1, a), 0.0) / s0.total if a > 0 else 0.0
        uni[(w,)] = math.log(u + (b0 if b0 is not None else 1.0) / n_predictable)
    logp.append(uni)

    for k in range(2, n + 1):
        table = {}
        lower = logp[k - 2]
        ctx_weights: dict = {}
        for key, a in adjusted.counts[k - 1].items():
            h = key[:-1]
            if h not in ctx_weights:
                ctx_weights[h] = backoff_weight(k, h)
            b = ctx_weights[h]
            total = adjusted.context_stats[k - 1][h].total
            u = max(a - discounts.for_count(k, a), 0.0) / total
            table[key] = math.log(u + b * math.exp(lower[key[1:]]))
        logp.append(table)
        logbo.append({h: math.log(b) for h, b in ctx_weights.items() if b is not None})
    return KneserNeyModel(n, vocab_size, logp, logbo, bos_id=bos, discounts=discounts)


def train_model(corpus: TokenizedCorpus, n: int, vocab_size: int, bos_id: int = 0) -> KneserNeyModel:
    adjusted = adjust_counts(count_ngrams(corpus, n, bos_id))
    return estimate_model(adjusted, estimate_discounts(adjusted), vocab_size)


def sentence_ppl(model: KneserNeyModel, sentence: Sequence[int]) -> float:
    lps = model.sentence_logprobs(sentence)
    return math.exp(-sum(lps) / len(lps))


def corpus_logprob(model: KneserNeyModel, corpus: TokenizedCorpus) -> tuple[float, int]:
    total = 0.0
    count = 0
    for s in corpus.sentences:
        lps = model.sentence_logprobs(s)
        total += sum(lps)
        count += len(lps)
    return total, count


# ---------------------------------------------------------------------------
# ARPA


def _fmt(x: float) -> str:
    s = f"{x:.7g}"
    return "0" if s == "-0" else s


def export_arpa(model: KneserNeyModel, vocab: Vocabulary) -> str:
    if len(vocab) != model.vocab_size:
        raise NgramError(f"vocabulary size {len(vocab)} does not match model size {model.vocab_size}")
    tok = vocab.id_to_token
    sections = []
    for k in range(1, model.order + 1):
        keys = set(model.logp[k])
        if k < model.order:
            keys |= set(model.logbo[k])
        if k == 1:
            keys.add((model.bos_id,))
        lines = []
        for key in sorted(keys):
            lp = model.logp[k].get(key)
            lp10 = ARPA_SENTINEL if lp is None else lp / LN10
            row = f"{_fmt(lp10)}\t{' '.join(tok[i] for i in key)}"
            if k < model.order:
                bo = model.logbo[k].get(key, 0.0)
                if bo != 0.0:
                    row += f"\t{_fmt(bo / LN10)}"
            lines.append(row)
        sections.append(lines)
    out = ["\\data\\"]
    out += [f"ngram {k}={len(lines)}" for k, lines in enumerate(sections, start=1)]
    for k, lines in enumerate(sections, start=1):
        out += ["", f"\\{k}-grams:"] + lines
    out += ["", "\\end\\", ""]
    return "\n".join(out)


def import_arpa(text: str, vocab: Vocabulary) -> KneserNeyModel:
    lines = text.splitlines()
    i = 0

    def skip_blank():
        nonlocal i
        while i < len(lines) and not lines[i].strip():
            i += 1

    skip_blank()
    if i >= len(lines) or lines[i].strip() != "\\data\\":
        raise ArpaParseError(i + 1, "expected '\\data\\' header")
    i += 1
    declared: dict[int, int] = {}
    while i < len(lines) and lines[i].startswith("ngram "):
        try:
            lhs, rhs = lines[i][6:].split("=")
            declared[int(lhs)] = int(rhs)
        except ValueError:
            raise ArpaParseError(i + 1, f"malformed count line {lines[i]!r}") from None
        i += 1
    if not declared or sorted(declared) != list(range(1, len(declared) + 1)):
        raise ArpaParseError(i + 1, f"header declares orders {sorted(declared)}; expected 1..n")
    order = len(declared)
    logp: list[dict] = [{} for _ in range(order)]
    logbo: list[dict] = [{} for _ in range(order - 1)]
    for k in range(1, order + 1):
        skip_blank()
        if i >= len(lines) or lines[i].strip() != f"\\{k}-grams:":
            found = lines[i].strip() if i < len(lines) else "end of file"
            raise ArpaParseError(i + 1, f"expected '\\{k}-grams:', found {found!r}")
        i += 1
        seen = 0
        while i < len(lines) and lines[i].strip() and not lines[i].startswith("\\"):
            parts = lines[i].split("\t")
            if len(parts) not in (2, 3) or (len(parts) == 3 and k == order):
                raise ArpaParseError(i + 1, f"malformed {k}-gram entry")
            words = parts[1].split(" ")
            if len(words) != k:
                raise ArpaParseError(i + 1, f"expected {k} tokens, found {len(words)}")
            try:
                key = tuple(vocab.token_to_id[w] for w in words)
            except KeyError as e:
                raise ArpaParseError(i + 1, f"token {e.args[0]!r} not in vocabulary") from None
            try:
                lp10 = float(parts[0])
                bo10 = float(parts[2]) if len(parts) == 3 else None
            except ValueError:
                raise ArpaParseError(i + 1, "non-numeric log value") from None
            if lp10 > ARPA_SENTINEL:
                logp[k - 1][key] = lp10 * LN10
            if bo10 is not None:
                logbo[k - 1][key] = bo10 * LN10
            seen += 1
            i += 1
        if seen != declared[k]:
            raise ArpaParseError(i + 1, f"header declares {declared[k]} {k}-grams, found {seen}")
    skip_blank()
    if i >= len(lines) or lines[i].strip() != "\\end\\":
        raise ArpaParseError(i + 1, "expected '\\end\\'")
    return KneserNeyModel(order, len(vocab), logp, logbo, bos_id=vocab.bos_id)


# ---------------------------------------------------------------------------
# binary serialization
#
# layout: MAGIC (12 bytes) | version (uint32 LE) | header length (uint32 LE)
#         | JSON header (utf-8) | raw little-endian array payload
# the header records order, vocab size, BOS id, discounts and an ordered list
# of arrays (name, dtype, shape); payload arrays follow in that order. Arrays
# are p{k}_keys [m, k] int32 and p{k}_vals float64 per order, and the same for
# backoffs as b{k}_keys / b{k}_vals.


def pack_arrays(header: dict, arrays: dict[str, np.ndarray], magic: bytes, version: int) -> bytes:
    header = dict(header)
    header["arrays"] = [[name, a.dtype.str, list(a.shape)] for name, a in arrays.items()]
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a).tobytes() for a in arrays.values())
    return magic + struct.pack("<II", version, len(head)) + head + payload


def unpack_arrays(data: bytes, magic: bytes, version: int, what: str) -> tuple[dict, dict[str, np.ndarray]]:
    if not data.startswith(magic):
        raise NgramError(f"not an ngramres {what} file (bad magic)")
    off = len(magic)
    found, hlen = struct.unpack("<II", data[off : off + 8])
    if found != version:
        raise NgramError(f"unsupported {what} version {found}, expected {version}")
    off += 8
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    arrays = {}
    for name, dtype, shape in header["arrays"]:
        dt = np.dtype(dtype)
        size = int(np.prod(shape)) * dt.itemsize
        arrays[name] = np.frombuffer(data[off : off + size], dtype=dt).reshape(shape).copy()
        off += size
    return header, arrays


def to_binary(model: KneserNeyModel) -> bytes:
    header = {
        "format": "ngramres-kn",
        "order": model.order,
        "vocab_size": model.vocab_size,
        "bos_id": model.bos_id,
        "discounts": None if model.discounts is None else [list(d) for d in model.discounts.discounts],
    }
    arrays = {}
    for k in range(1, model.order + 1):
        for tag, table in (("p", model.logp[k]), ("b", model.logbo[k] if k < model.order else {})):
            keys = sorted(table)
            arrays[f"{tag}{k}_keys"] = np.array(keys, dtype="<i4").reshape(len(keys), k)
            arrays[f"{tag}{k}_vals"] = np.array([table[key] for key in keys], dtype="<f8")
    return pack_arrays(header, arrays, BINARY_MAGIC, BINARY_VERSION)


def from_binary(data: bytes) -> KneserNeyModel:
    header, arrays = unpack_arrays(data, BINARY_MAGIC, BINARY_VERSION, "binary n-gram model")
    order = header["order"]
    logp, logbo = [], []
    for k in range(1, order + 1):
        logp.append(dict(zip(map(tuple, arrays[f"p{k}_keys"].tolist()), arrays[f"p{k}_vals"].tolist())))
        if k < order:
            logbo.append(dict(zip(map(tuple, arrays[f"b{k}_keys"].tolist()), arrays[f"b{k}_vals"].tolist())))
    d = header["discounts"]
    discounts = None if d is None else DiscountSet(tuple(tuple(x) for x in d))
    return KneserNeyModel(order, header["vocab_size"], logp, logbo, bos_id=header["bos_id"], discounts=discounts)


def save_model(model: KneserNeyModel, path) -> None:
    with open(path, "wb") as f:
        f.write(to_binary(model))


def load_model(path) -> KneserNeyModel:
    with open(path, "rb") as f:
        return from_binary(f.read())
