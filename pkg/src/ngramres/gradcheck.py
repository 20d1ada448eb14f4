"""Finite-difference gradient checks for every autograd op and the fused losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .oracle import numeric_grad, relative_error

DEFAULT_TOLERANCE = 1e-4


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def check(name: str, inputs: list[Tensor], build: Callable[[], Tensor], tolerance: float = DEFAULT_TOLERANCE):
    """Compare backprop gradients of scalar ``build()`` against central differences."""
    for t in inputs:
        t.grad = None
    out = build()
    out.backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_grad(lambda: float(build().data), t.data)
        worst = max(worst, relative_error(analytic, numeric))
    return GradCheckResult(name, worst, tolerance)


def _param(rng, *shape, low=-1.0, high=1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)


def _weighted(rng, out_shape):
    w = Tensor(rng.normal(size=out_shape))
    return lambda y: ag.sum_all(ag.mul(y, w))


def _composed_gru_cell(gi, h, w_hh, b_hh):
    """The GRU step written with core ops only (reference for the fused op)."""
    H = h.shape[1]
    gh = ag.add(ag.matmul(h, w_hh), b_hh)
    r = ag.sigmoid(ag.add(ag.slice_axis(gi, 1, 0, H), ag.slice_axis(gh, 1, 0, H)))
    z = ag.sigmoid(ag.add(ag.slice_axis(gi, 1, H, 2 * H), ag.slice_axis(gh, 1, H, 2 * H)))
    n = ag.tanh(ag.add(ag.slice_axis(gi, 1, 2 * H, 3 * H), ag.mul(r, ag.slice_axis(gh, 1, 2 * H, 3 * H))))
    return ag.add(n, ag.mul(z, ag.sub(h, n)))


def op_cases(seed: int = 0):
    """(name, inputs, build) triples covering every differentiable op."""
    rng = np.random.default_rng(seed)
    cases = []

    def unary(name, op, low=-1.0, high=1.0, shape=(3, 4)):
        x = _param(rng, *shape, low=low, high=high)
        red = _weighted(rng, shape)
        cases.append((name, [x], lambda: red(op(x))))

    unary("tanh", ag.tanh)
    unary("sigmoid", ag.sigmoid)
    unary("exp", ag.exp)
    unary("log", ag.log, low=0.5, high=2.0)
    # keep relu inputs away from the kink
    x = Tensor(rng.choice([-1, 1], (3, 4)) * rng.uniform(0.2, 1.0, (3, 4)), requires_grad=True)
    red = _weighted(rng, (3, 4))
    cases.append(("relu", [x], lambda x=x, red=red: red(ag.relu(x))))

    for name, op in (("add", ag.add), ("sub", ag.sub), ("mul", ag.mul)):
        a, b = _param(rng, 3, 4), _param(rng, 4)
        red = _weighted(rng, (3, 4))
        cases.append((f"{name}_broadcast", [a, b], lambda op=op, a=a, b=b, red=red: red(op(a, b))))

    a = _param(rng, 3, 4)
    c = rng.normal(size=(3, 4))
    red = _weighted(rng, (3, 4))
    cases.append(("add_constant_bias", [a], lambda a=a, red=red: red(ag.add_constant_bias(a, c))))

    a, b = _param(rng, 2, 3, 4), _param(rng, 4, 5)
    red = _weighted(rng, (2, 3, 5))
    cases.append(("matmul", [a, b], lambda a=a, b=b, red=red: red(ag.matmul(a, b))))

    a = _param(rng, 3, 5)
    red = _weighted(rng, (5, 3))
    cases.append(("transpose", [a], lambda a=a, red=red: red(ag.transpose(a))))
    red2 = _weighted(rng, (5, 3))
    cases.append(("reshape", [a], lambda a=a: red2(ag.reshape(a, (5, 3)))))

    a, b = _param(rng, 2, 3), _param(rng, 2, 4)
    red = _weighted(rng, (2, 7))
    cases.append(("concat", [a, b], lambda a=a, b=b, red=red: red(ag.concat([a, b], axis=1))))
    a, b = _param(rng, 2, 3), _param(rng, 2, 3)
    red = _weighted(rng, (2, 2, 3))
    cases.append(("stack", [a, b], lambda a=a, b=b, red=red: red(ag.stack([a, b], axis=1))))

    a = _param(rng, 3, 6)
    red = _weighted(rng, (3, 3))
    cases.append(("slice_axis", [a], lambda a=a, red=red: red(ag.slice_axis(a, 1, 2, 5))))

    table = _param(rng, 6, 3)
    ids = np.array([[0, 2, 2], [5, 1, 0]])
    red = _weighted(rng, (2, 3, 3))
    cases.append(("embedding_gather", [table], lambda red=red: red(ag.embedding_gather(table, ids))))

    a = _param(rng, 4, 5)
    picks = np.array([0, 4, 2, 2])
    red = _weighted(rng, (4,))
    cases.append(("pick", [a], lambda a=a, red=red: red(ag.pick(a, picks))))

    a = _param(rng, 3, 4)
    cases.append(("sum_all", [a], lambda a=a: ag.sum_all(ag.mul(a, a))))

    a = _param(rng, 3, 5, low=-2, high=2)
    red = _weighted(rng, (3, 5))
    cases.append(("log_softmax", [a], lambda a=a, red=red: red(ag.log_softmax(a))))

    logits = _param(rng, 5, 6, low=-2, high=2)
    tgt = np.array([1, 0, 5, 3, 3])
    mask = np.array([True, True, False, True, True])
    cases.append(("cross_entropy", [logits], lambda: ag.cross_entropy_from_logits(logits, tgt, mask)))

    B, H = 3, 4
    gi, h = _param(rng, B, 3 * H), _param(rng, B, H)
    w_hh, b_hh = _param(rng, H, 3 * H, low=-0.5, high=0.5), _param(rng, 3 * H)
    red = _weighted(rng, (B, H))
    cases.append(("gru_cell", [gi, h, w_hh, b_hh], lambda red=red: red(ag.gru_cell(gi, h, w_hh, b_hh))))

    T = 4
    gis = _param(rng, B, T, 3 * H)
    red = _weighted(rng, (B, T, H))
    cases.append(("gru_sequence", [gis, w_hh, b_hh], lambda red=red: red(ag.gru_sequence(gis, w_hh, b_hh))))
    return cases


def fused_loss_cases(seed: int = 0):
    """End-to-end losses through a tiny recurrent LM, one per training mode."""
    from .corpus import TokenizedCorpus, make_batches
    from .fusion import FusionConfig
    from .neural_lm import NeuralLM, NeuralLMConfig
    from .ngram import train_model
    from .trainer import batch_loss

    rng = np.random.default_rng(seed)
    V = 7
    sents = tuple(tuple(int(t) for t in rng.integers(2, V, rng.integers(2, 6))) + (1,) for _ in range(12))
    corpus = TokenizedCorpus(sents)
    ngram = train_model(corpus, 3, V, 0)
    cfg = NeuralLMConfig(embed_dim=4, hidden_dim=4, num_layers=2, dropout_rate=0.0, init_scale=0.5, seed=seed)
    model = NeuralLM(cfg, V)
    batch = make_batches(corpus, 4, 8, seed=None)[0]
    fusion = FusionConfig(alpha0=0.3, inverse_softmax_constant=1.7)
    cases = []
    for mode in ("vanilla", "ngram_res", "prob_inter"):
        cases.append(
            (
                f"loss_{mode}",
                model.parameters(),
                lambda mode=mode: batch_loss(model, ngram, corpus, batch, mode, fusion.alpha0, fusion),
            )
        )
    return cases


def run_suite(tolerance: float = DEFAULT_TOLERANCE, seed: int = 0) -> list[GradCheckResult]:
    results = [check(name, inputs, build, tolerance) for name, inputs, build in op_cases(seed)]
    results += [check(name, inputs, build, tolerance) for name, inputs, build in fused_loss_cases(seed)]
    return results


def composed_vs_fused_gru(seed: int = 0) -> float:
    """Max abs difference (values and gradients) between fused and composed GRU steps."""
    rng = np.random.default_rng(seed)
    B, H = 3, 5
    arrays = [rng.uniform(-1, 1, s) for s in ((B, 3 * H), (B, H), (H, 3 * H), (3 * H,))]
    w = rng.normal(size=(B, H))
    worst = 0.0
    outs, grads = [], []
    for fn in (ag.gru_cell, _composed_gru_cell):
        ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        y = fn(*ts)
        ag.sum_all(ag.mul(y, Tensor(w))).backward()
        outs.append(y.data)
        grads.append([t.grad for t in ts])
    worst = float(np.abs(outs[0] - outs[1]).max())
    for g0, g1 in zip(*grads):
        worst = max(worst, float(np.abs(g0 - g1).max()))
    return worst
