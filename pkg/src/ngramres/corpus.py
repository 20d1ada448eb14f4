"""Corpus ingestion, vocabulary construction, batching and synthetic corpora."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SPECIALS = (BOS, EOS, UNK)


class VocabularyError(ValueError):
    pass


class Vocabulary:
    """Bidirectional token/id map. Specials always occupy ids 0, 1, 2."""

    def __init__(self, tokens: Sequence[str], min_freq: int = 1):
        tokens = list(tokens)
        if tuple(tokens[:3]) != SPECIALS:
            raise VocabularyError(f"vocabulary must start with {SPECIALS}, got {tokens[:3]}")
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("duplicate tokens in vocabulary")
        self.id_to_token: tuple[str, ...] = tuple(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(tokens)}
        self.min_freq = min_freq
        self.bos_id = 0
        self.eos_id = 1
        self.unk_id = 2

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def __hash__(self) -> int:
        return hash(self.id_to_token)

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)}, min_freq={self.min_freq})"

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def to_text(self) -> str:
        return "".join(t + "\n" for t in self.id_to_token)

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        return cls(text.splitlines())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def build_vocabulary(lines: Iterable[Sequence[str]], min_freq: int = 1) -> Vocabulary:
    """Specials first, then tokens by descending frequency, ties lexicographic."""
    if min_freq < 1:
        raise VocabularyError(f"min_freq must be >= 1, got {min_freq}")
    freq: Counter[str] = Counter()
    n_lines = 0
    for line in lines:
        n_lines += 1
        freq.update(line)
    if n_lines == 0 or not freq:
        raise VocabularyError("cannot build a vocabulary from empty input")
    kept = [t for t, c in freq.items() if c >= min_freq and t not in SPECIALS]
    kept.sort(key=lambda t: (-freq[t], t))
    return Vocabulary(list(SPECIALS) + kept, min_freq=min_freq)


def encode(line: Sequence[str], vocab: Vocabulary) -> tuple[int, ...]:
    """Map tokens to ids, OOV to UNK, and append EOS. BOS is never embedded."""
    return tuple(vocab.lookup(t) for t in line) + (vocab.eos_id,)


def decode(ids: Sequence[int], vocab: Vocabulary, strip_eos: bool = True) -> list[str]:
    ids = list(ids)
    if strip_eos and ids and ids[-1] == vocab.eos_id:
        ids = ids[:-1]
    return [vocab.id_to_token[i] for i in ids]


@dataclass(frozen=True)
class TokenizedCorpus:
    sentences: tuple[tuple[int, ...], ...]
    source_path: str = ""

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def num_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    def validate(self, vocab: Vocabulary) -> None:
        V = len(vocab)
        for i, s in enumerate(self.sentences):
            if not s or s[-1] != vocab.eos_id:
                raise VocabularyError(f"sentence {i} does not end with EOS")
            if vocab.eos_id in s[:-1]:
                raise VocabularyError(f"sentence {i} has EOS in its body")
            if vocab.bos_id in s:
                raise VocabularyError(f"sentence {i} contains BOS")
            if max(s) >= V or min(s) < 0:
                raise VocabularyError(f"sentence {i} has an id outside [0, {V})")


def read_lines(path) -> list[list[str]]:
    """One sentence per line, whitespace tokenized."""
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f]


def encode_corpus(lines: Iterable[Sequence[str]], vocab: Vocabulary, source_path: str = "") -> TokenizedCorpus:
    return TokenizedCorpus(tuple(encode(line, vocab) for line in lines), str(source_path))


def load_corpus(path, vocab: Vocabulary) -> TokenizedCorpus:
    return encode_corpus(read_lines(path), vocab, source_path=str(path))


def write_corpus(corpus: TokenizedCorpus, vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in corpus.sentences:
            f.write(" ".join(decode(s, vocab)) + "\n")


# ---------------------------------------------------------------------------
# batching


@dataclass(frozen=True)
class Batch:
    """A padded block of sentence chunks.

    ``inputs[r, t]`` is the token preceding ``targets[r, t]`` (BOS at the start of
    a sentence). ``sentence_index[r]`` and ``offset[r]`` locate the chunk in the
    source corpus so that n-gram contexts can be rebuilt.
    """

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    sentence_index: np.ndarray
    offset: np.ndarray

    @property
    def num_tokens(self) -> int:
        return int(self.mask.sum())


def _chunks(corpus: TokenizedCorpus, max_len: int):
    for i, s in enumerate(corpus.sentences):
        for start in range(0, len(s), max_len):
            yield i, start


def make_batches(
    corpus: TokenizedCorpus,
    batch_size: int,
    max_len: int,
    seed: int | None,
    bos_id: int = 0,
    pad_id: int = 0,
) -> list[Batch]:
    """Split sentences into chunks of at most ``max_len`` and group them into batches.

    Chunks are shuffled with ``seed``; ``seed=None`` keeps corpus order.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    chunks = list(_chunks(corpus, max_len))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(chunks))
        chunks = [chunks[j] for j in order]
    batches = []
    for b in range(0, len(chunks), batch_size):
        group = chunks[b : b + batch_size]
        width = max(min(max_len, len(corpus.sentences[i]) - start) for i, start in group)
        inputs = np.full((len(group), width), pad_id, dtype=np.int64)
        targets = np.full((len(group), width), pad_id, dtype=np.int64)
        mask = np.zeros((len(group), width), dtype=bool)
        for r, (i, start) in enumerate(group):
            s = corpus.sentences[i]
            piece = s[start : start + max_len]
            prev = (bos_id,) + s[:-1]
            targets[r, : len(piece)] = piece
            inputs[r, : len(piece)] = prev[start : start + len(piece)]
            mask[r, : len(piece)] = True
        batches.append(
            Batch(
                inputs=inputs,
                targets=targets,
                mask=mask,
                sentence_index=np.array([i for i, _ in group], dtype=np.int64),
                offset=np.array([start for _, start in group], dtype=np.int64),
            )
        )
    return batches


# ---------------------------------------------------------------------------
# synthetic corpora


def _word(i: int, width: int) -> str:
    return f"w{i:0{width}d}"


class MarkovGenerator:
    """Order-k chain over ``vocab_size`` words with fixed-length sentences.

    Conditionals come from a low-rank log-linear table:
    ``softmax(sharpness * sum_j U_j[c_j] @ W + bias)`` where ``c_j`` is the j-th
    most recent token (or the BOS state). ``sharpness=0`` gives a uniform chain.
    Every sentence has exactly ``sentence_len`` words followed by EOS, so under
    the generator EOS is certain and costs zero nats.

    A generator may also be a convex mixture of other generators of the same
    order and vocabulary, which is how related domains are built.
    """

    def __init__(self, order: int, vocab_size: int, sentence_len: int, params=None, components=None):
        self.order = order
        self.vocab_size = vocab_size
        self.sentence_len = sentence_len
        self.params = params
        self.components = components or []
        width = len(str(vocab_size - 1))
        self.words = [_word(i, width) for i in range(vocab_size)]

    @classmethod
    def random(cls, seed: int, vocab_size: int, order: int, sentence_len: int, sharpness: float = 3.0, rank: int = 16):
        rng = np.random.default_rng(seed)
        V = vocab_size
        r = min(rank, V)
        # row V of each U_j is the BOS state
        U = rng.standard_normal((order, V + 1, r)) / math.sqrt(r)
        decay = 1.0 / np.arange(1, order + 1)
        W = rng.standard_normal((r, V))
        bias = -0.5 * np.log(np.arange(1, V + 1))
        rng.shuffle(bias)
        params = {"U": U, "W": W, "bias": bias, "decay": decay, "sharpness": float(sharpness)}
        return cls(order, vocab_size, sentence_len, params=params)

    @classmethod
    def mixture(cls, weighted: Sequence[tuple[float, "MarkovGenerator"]]):
        g0 = weighted[0][1]
        weighted = [(w, g) for w, g in weighted if w > 0]
        return cls(g0.order, g0.vocab_size, g0.sentence_len, components=weighted)

    def conditional(self, contexts: np.ndarray) -> np.ndarray:
        """Next-word distributions for ``contexts`` [N, order] (oldest first; V = BOS state)."""
        contexts = np.asarray(contexts, dtype=np.int64).reshape(-1, self.order)
        if self.components:
            out = np.zeros((len(contexts), self.vocab_size))
            for w, g in self.components:
                out += w * g.conditional(contexts)
            return out
        p = self.params
        if p["sharpness"] == 0.0:
            return np.full((len(contexts), self.vocab_size), 1.0 / self.vocab_size)
        h = np.zeros((len(contexts), p["U"].shape[2]))
        for j in range(self.order):
            # j = 0 is the most recent token
            h += p["decay"][j] * p["U"][j][contexts[:, self.order - 1 - j]]
        z = p["sharpness"] * (h @ p["W"]) + p["bias"]
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def sample(self, rng: np.random.Generator, num_sentences: int) -> np.ndarray:
        """Word indices [num_sentences, sentence_len]."""
        L, k, V = self.sentence_len, self.order, self.vocab_size
        ctx = np.full((num_sentences, k), V, dtype=np.int64)
        out = np.empty((num_sentences, L), dtype=np.int64)
        for t in range(L):
            probs = self.conditional(ctx)
            cdf = np.cumsum(probs, axis=1)
            u = rng.random(num_sentences) * cdf[:, -1]
            nxt = (cdf < u[:, None]).sum(axis=1)
            out[:, t] = np.minimum(nxt, V - 1)
            ctx = np.concatenate([ctx[:, 1:], out[:, t : t + 1]], axis=1)
        return out

    def cross_entropy(self, max_states: int = 2_000_000) -> tuple[float, str]:
        """Expected nats per sentence body token, by exact forward propagation.

        Propagates the distribution over context states position by position.
        Falls back to a 20k-sentence Monte Carlo estimate when the reachable
        state space exceeds ``max_states``.
        """
        V, k, L = self.vocab_size, self.order, self.sentence_len
        if (V + 1) ** k > max_states:
            rng = np.random.default_rng(0)
            words = self.sample(rng, 20_000)
            return -float(np.mean(self._word_logprobs(words))), "monte_carlo"
        base = V + 1
        n_states = base**k
        # state code: sum_j c_j * base**(k-1-j), oldest first
        mass = np.zeros(n_states)
        mass[V * sum(base**j for j in range(k))] = 1.0
        total = 0.0
        for _ in range(L):
            states = np.flatnonzero(mass)
            m = mass[states]
            ctx = np.stack([(states // base ** (k - 1 - j)) % base for j in range(k)], axis=1)
            probs = self.conditional(ctx)
            with np.errstate(divide="ignore", invalid="ignore"):
                ent = -np.where(probs > 0, probs * np.log(probs), 0.0).sum(axis=1)
            total += float(m @ ent)
            shifted = (states % base ** (k - 1)) * base if k > 1 else np.zeros_like(states)
            new_states = (shifted[:, None] + np.arange(V)[None, :]).ravel()
            mass = np.bincount(new_states, weights=(m[:, None] * probs).ravel(), minlength=n_states)
        return total / L, "exact"

    def _word_logprobs(self, words: np.ndarray) -> np.ndarray:
        N, L = words.shape
        ctx = np.full((N, self.order), self.vocab_size, dtype=np.int64)
        out = np.empty((N, L))
        for t in range(L):
            probs = self.conditional(ctx)
            out[:, t] = np.log(probs[np.arange(N), words[:, t]])
            ctx = np.concatenate([ctx[:, 1:], words[:, t : t + 1]], axis=1)
        return out


@dataclass
class GeneratorDescription:
    """What a synthetic corpus was sampled from, plus its closed-form entropy.

    ``body_cross_entropy`` is nats per word excluding EOS; ``cross_entropy``
    spreads the same total over ``sentence_len + 1`` tokens because EOS is
    certain under the generator. ``ppl`` is the per-token perplexity including
    EOS, which is the floor for any model scored the usual way.
    """

    generator: MarkovGenerator
    vocab: Vocabulary
    seed: int
    body_cross_entropy: float
    method: str
    extra: dict = field(default_factory=dict)

    @property
    def cross_entropy(self) -> float:
        L = self.generator.sentence_len
        return self.body_cross_entropy * L / (L + 1)

    @property
    def ppl(self) -> float:
        return math.exp(self.cross_entropy)

    @property
    def body_ppl(self) -> float:
        return math.exp(self.body_cross_entropy)

    def word_to_id(self) -> np.ndarray:
        return np.array([self.vocab.token_to_id[w] for w in self.generator.words], dtype=np.int64)

    def to_dict(self) -> dict:
        g = self.generator
        return {
            "seed": self.seed,
            "order": g.order,
            "vocab_size": g.vocab_size,
            "sentence_len": g.sentence_len,
            "eos_handling": "fixed sentence length; EOS follows the last word with probability 1",
            "body_cross_entropy": self.body_cross_entropy,
            "cross_entropy": self.cross_entropy,
            "body_ppl": self.body_ppl,
            "ppl": self.ppl,
            "method": self.method,
            **self.extra,
        }


def synth_vocabulary(generator: MarkovGenerator) -> Vocabulary:
    return Vocabulary(list(SPECIALS) + generator.words)


def _to_corpus(words: np.ndarray, word_ids: np.ndarray, eos_id: int, name: str) -> TokenizedCorpus:
    ids = word_ids[words]
    return TokenizedCorpus(tuple(tuple(int(x) for x in row) + (eos_id,) for row in ids), name)


def sample_splits(generator: MarkovGenerator, vocab: Vocabulary, seed: int, num_sentences: int, name: str = "synth"):
    """Train / valid / test with an 80/10/10 sentence split."""
    rng = np.random.default_rng([seed, 1])
    words = generator.sample(rng, num_sentences)
    word_ids = np.array([vocab.token_to_id[w] for w in generator.words], dtype=np.int64)
    n_train = int(round(0.8 * num_sentences))
    n_valid = (num_sentences - n_train) // 2
    parts = {
        "train": words[:n_train],
        "valid": words[n_train : n_train + n_valid],
        "test": words[n_train + n_valid :],
    }
    return tuple(_to_corpus(w, word_ids, vocab.eos_id, f"{name}:{split}") for split, w in parts.items())


def synth_markov(
    seed: int,
    vocab_size: int,
    order: int,
    num_sentences: int,
    sentence_len: int,
    sharpness: float = 3.0,
    rank: int = 16,
):
    """Sample train/valid/test corpora from a seeded random Markov chain.

    Returns ``(train, valid, test, description)``.
    """
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    if vocab_size < 4:
        raise ValueError(f"vocab_size must be >= 4, got {vocab_size}")
    gen = MarkovGenerator.random(seed, vocab_size, order, sentence_len, sharpness=sharpness, rank=rank)
    vocab = synth_vocabulary(gen)
    train, valid, test = sample_splits(gen, vocab, seed, num_sentences, name=f"synth_markov:{seed}")
    ce, method = gen.cross_entropy()
    desc = GeneratorDescription(gen, vocab, seed, ce, method, {"sharpness": sharpness, "rank": rank})
    return train, valid, test, desc


def synth_domains(
    seed: int,
    vocab_size: int,
    divergence: float,
    order: int = 2,
    num_sentences: int = 2500,
    sentence_len: int = 20,
    sharpness: float = 3.0,
    rank: int = 16,
):
    """Two domains whose tables mix a shared base chain with private chains.

    Each domain's conditional is ``(1 - divergence) * base + divergence * own``.
    Returns ``((train, valid, test, desc_a), (train, valid, test, desc_b))``
    over one shared vocabulary.
    """
    if not 0.0 <= divergence <= 1.0:
        raise ValueError(f"divergence must be in [0, 1], got {divergence}")
    base = MarkovGenerator.random(seed, vocab_size, order, sentence_len, sharpness, rank)
    out = []
    for d, tag in enumerate("AB", start=1):
        own = MarkovGenerator.random(seed + 7919 * d, vocab_size, order, sentence_len, sharpness, rank)
        gen = MarkovGenerator.mixture([(1.0 - divergence, base), (divergence, own)])
        vocab = synth_vocabulary(gen)
        splits = sample_splits(gen, vocab, seed + d, num_sentences, name=f"synth_domain_{tag}:{seed}")
        ce, method = gen.cross_entropy()
        desc = GeneratorDescription(gen, vocab, seed, ce, method, {"domain": tag, "divergence": divergence})
        out.append((*splits, desc))
    return tuple(out)
