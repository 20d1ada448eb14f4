"""A small gated-recurrent language model built on the autograd engine."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .ngram import NgramError, pack_arrays, unpack_arrays

CHECKPOINT_MAGIC = b"NGRAMRES-NLM\x00"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NeuralLMConfig:
    embed_dim: int = 128
    hidden_dim: int = 128
    num_layers: int = 2
    tie_embeddings: bool = True
    dropout_rate: float = 0.1
    init_scale: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if min(self.embed_dim, self.hidden_dim, self.num_layers) < 1:
            raise ValueError("embed_dim, hidden_dim and num_layers must all be >= 1")
        if self.tie_embeddings and self.embed_dim != self.hidden_dim:
            raise ValueError("tie_embeddings requires embed_dim == hidden_dim")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be positive")


def expected_param_count(config: NeuralLMConfig, vocab_size: int) -> int:
    """Embedding + per-layer GRU weights and biases + output projection and bias."""
    E, H, V = config.embed_dim, config.hidden_dim, vocab_size
    count = V * E
    for layer in range(config.num_layers):
        d_in = E if layer == 0 else H
        count += d_in * 3 * H + H * 3 * H + 2 * 3 * H
    if not config.tie_embeddings:
        count += H * V
    return count + V


class NeuralLM:
    """Embedding -> stacked GRU layers -> linear projection to vocabulary logits.

    The recurrent cell uses update gate ``z``, reset gate ``r`` and candidate
    ``n``: ``h' = n + z * (h - n)``. Input projections for a whole batch are
    computed in one matmul; the recurrence itself runs inside
    ``autograd.gru_sequence``.
    """

    def __init__(self, config: NeuralLMConfig, vocab_size: int, params: dict[str, np.ndarray] | None = None):
        config.validate()
        self.config = config
        self.vocab_size = vocab_size
        self.training = False
        self._dropout_rng = np.random.default_rng([config.seed, 1])
        if params is None:
            params = self._init_params()
        self.params = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in params.items()}

    def _init_params(self) -> dict[str, np.ndarray]:
        c = self.config
        rng = np.random.default_rng(c.seed)
        s = c.init_scale
        V, E, H = self.vocab_size, c.embed_dim, c.hidden_dim
        out = {"embedding": rng.uniform(-s, s, (V, E))}
        for layer in range(c.num_layers):
            d_in = E if layer == 0 else H
            out[f"gru{layer}.w_ih"] = rng.uniform(-s, s, (d_in, 3 * H))
            out[f"gru{layer}.w_hh"] = rng.uniform(-s, s, (H, 3 * H))
            out[f"gru{layer}.b_ih"] = rng.uniform(-s, s, (3 * H,))
            out[f"gru{layer}.b_hh"] = rng.uniform(-s, s, (3 * H,))
        if not c.tie_embeddings:
            out["proj.weight"] = rng.uniform(-s, s, (H, V))
        out["proj.bias"] = rng.uniform(-s, s, (V,))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def projection_weight(self) -> np.ndarray:
        if self.config.tie_embeddings:
            return self.params["embedding"].data.T
        return self.params["proj.weight"].data

    def train(self, mode: bool = True) -> "NeuralLM":
        self.training = mode
        return self

    def eval(self) -> "NeuralLM":
        return self.train(False)

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].data[...] = v

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k].data).tobytes())
        return h.hexdigest()

    def _dropout(self, x: Tensor) -> Tensor:
        rate = self.config.dropout_rate
        if not self.training or rate == 0.0:
            return x
        keep = (self._dropout_rng.random(x.shape) >= rate) / (1.0 - rate)
        return ag.mul(x, Tensor(keep))

    def _gru_layer(self, x: Tensor, layer: int) -> Tensor:
        """Run one GRU layer over ``x`` [B, T, d_in]; returns [B, T, H]."""
        w_ih = self.params[f"gru{layer}.w_ih"]
        w_hh = self.params[f"gru{layer}.w_hh"]
        b_ih = self.params[f"gru{layer}.b_ih"]
        b_hh = self.params[f"gru{layer}.b_hh"]
        gi = ag.add(ag.matmul(x, w_ih), b_ih)
        return ag.gru_sequence(gi, w_hh, b_hh)

    def forward(self, inputs: np.ndarray) -> Tensor:
        """Logits [B * T, V] for ``inputs`` [B, T] of previous-token ids.

        Position ``t`` sees only ``inputs[:, :t + 1]``, i.e. tokens strictly
        before the one it predicts.
        """
        inputs = np.asarray(inputs, dtype=np.int64)
        if inputs.ndim != 2:
            raise ag.ShapeError("forward", inputs.shape)
        B, T = inputs.shape
        x = self._dropout(ag.embedding_gather(self.params["embedding"], inputs))
        for layer in range(self.config.num_layers):
            x = self._dropout(self._gru_layer(x, layer))
        flat = ag.reshape(x, (B * T, self.config.hidden_dim))
        if self.config.tie_embeddings:
            weight = ag.transpose(self.params["embedding"])
        else:
            weight = self.params["proj.weight"]
        return ag.add(ag.matmul(flat, weight), self.params["proj.bias"])

    __call__ = forward


def init(config: NeuralLMConfig, vocab_size: int) -> NeuralLM:
    return NeuralLM(config, vocab_size)


def save(model: NeuralLM, path, extra: dict | None = None) -> None:
    """Write a versioned checkpoint holding the config and every parameter."""
    header = {
        "format": "ngramres-neural-lm",
        "config": asdict(model.config),
        "vocab_size": model.vocab_size,
        "num_parameters": model.num_parameters,
        "extra": extra or {},
    }
    arrays = {k: np.asarray(v, dtype="<f8") for k, v in sorted(model.state().items())}
    with open(path, "wb") as f:
        f.write(pack_arrays(header, arrays, CHECKPOINT_MAGIC, CHECKPOINT_VERSION))


def load(path, vocab_size: int | None = None) -> NeuralLM:
    with open(path, "rb") as f:
        data = f.read()
    try:
        header, arrays = unpack_arrays(data, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "neural checkpoint")
    except NgramError as e:
        raise CheckpointError(str(e)) from None
    if vocab_size is not None and header["vocab_size"] != vocab_size:
        raise CheckpointError(
            f"checkpoint vocab_size {header['vocab_size']} does not match vocabulary size {vocab_size}"
        )
    config = NeuralLMConfig(**header["config"])
    model = NeuralLM(config, header["vocab_size"], params=arrays)
    expected = NeuralLM(config, header["vocab_size"]).state()
    for k, v in expected.items():
        if k not in arrays or arrays[k].shape != v.shape:
            raise CheckpointError(f"parameter {k!r} missing or misshapen in checkpoint")
    if model.num_parameters != header["num_parameters"]:
        raise CheckpointError("parameter count does not match checkpoint header")
    return model


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        data = f.read()
    header, _ = unpack_arrays(data, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "neural checkpoint")
    return header


def config_json(config: NeuralLMConfig) -> str:
    return json.dumps(asdict(config), sort_keys=True)
