"""MLE training of the neural LM through the fused (or plain) softmax."""

from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import Batch, TokenizedCorpus, make_batches
from .evaluation import Scorer, batch_ngram_logprobs, corpus_ppl
from .fusion import FusionConfig, alpha_at_step
from .neural_lm import NeuralLM
from .ngram import KneserNeyModel

TRAIN_MODES = ("vanilla", "ngram_res", "prob_inter")


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    max_len: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float = 1.0
    seed: int = 0
    mode: str = "vanilla"
    fusion: FusionConfig = field(default_factory=FusionConfig)
    early_stop_patience: int = 5

    def validate(self) -> None:
        if self.mode not in TRAIN_MODES:
            raise TrainError(f"mode: unknown training mode {self.mode!r}; expected one of {TRAIN_MODES}")
        if self.epochs < 0:
            raise TrainError(f"epochs must be >= 0, got {self.epochs}")
        for name in ("batch_size", "max_len", "early_stop_patience"):
            if getattr(self, name) < 1:
                raise TrainError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("learning_rate", "adam_eps", "grad_clip_norm"):
            if not getattr(self, name) > 0:
                raise TrainError(f"{name} must be > 0, got {getattr(self, name)}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise TrainError("adam betas must lie in [0, 1)")
        self.fusion.validate()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    mode: str
    train_loss: list[float] = field(default_factory=list)
    valid_ppl: list[float] = field(default_factory=list)
    # effective alpha used at every optimizer update, in order
    alpha_trace: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    selected_epoch: int = 0
    selected_step: int = 0
    selected_alpha: float = 0.0
    stopped_early: bool = False

    @property
    def best_valid_ppl(self) -> float:
        return self.valid_ppl[self.selected_epoch - 1] if self.selected_epoch else math.nan

    def to_dict(self) -> dict:
        return asdict(self)


def effective_alpha(config: TrainConfig, step: int) -> float:
    if config.mode != "ngram_res":
        return 0.0
    return alpha_at_step(config.fusion, step)


def batch_loss(
    neural: NeuralLM,
    ngram: KneserNeyModel | None,
    corpus: TokenizedCorpus,
    batch: Batch,
    mode: str,
    alpha: float,
    fusion: FusionConfig,
) -> Tensor:
    """Mean per-token negative log-likelihood of ``batch`` under ``mode``."""
    logits = neural.forward(batch.inputs)
    targets = batch.targets.reshape(-1)
    mask = batch.mask.reshape(-1)
    if mode == "vanilla" or (mode == "ngram_res" and alpha == 0.0):
        return ag.cross_entropy_from_logits(logits, targets, mask)
    q = batch_ngram_logprobs(ngram, corpus, batch, fusion.prob_floor)
    if mode == "ngram_res":
        fused = ag.add_constant_bias(logits, alpha * (q + fusion.inverse_softmax_constant))
        return ag.cross_entropy_from_logits(fused, targets, mask)
    # prob_inter: -log(lam * q[target] + (1 - lam) * p_neural[target])
    lam = fusion.interp_lambda
    q_t = np.exp(q[np.arange(len(targets)), targets])
    p_t = ag.exp(ag.pick(ag.log_softmax(logits), targets))
    mix = ag.add_constant_bias(ag.mul(p_t, Tensor(np.full(len(targets), 1.0 - lam))), lam * q_t)
    weights = np.where(mask, -1.0 / mask.sum(), 0.0)
    return ag.sum_all(ag.mul(ag.log(mix), Tensor(weights)))


def validation_scorer(neural: NeuralLM, ngram: KneserNeyModel | None, config: TrainConfig, alpha: float) -> Scorer:
    f = config.fusion
    kind = config.mode
    if kind == "ngram_res" and alpha == 0.0:
        kind = "vanilla"
    return Scorer(
        kind,
        neural=neural,
        ngram=ngram if kind != "vanilla" else None,
        alpha=alpha,
        lam=f.interp_lambda,
        constant=f.inverse_softmax_constant,
        floor=f.prob_floor,
    )


def _check_inputs(neural: NeuralLM, ngram: KneserNeyModel | None, config: TrainConfig) -> None:
    config.validate()
    if config.mode != "vanilla":
        if ngram is None:
            raise TrainError(f"mode={config.mode} needs an n-gram model")
        if ngram.vocab_size != neural.vocab_size:
            raise TrainError(
                f"vocabulary mismatch: neural model has {neural.vocab_size} tokens, n-gram model has {ngram.vocab_size}"
            )


def train(
    neural: NeuralLM,
    ngram: KneserNeyModel | None,
    splits: tuple[TokenizedCorpus, TokenizedCorpus],
    config: TrainConfig,
) -> tuple[NeuralLM, TrainLog]:
    """Train ``neural`` in place and return it restored to its best-validation state.

    ``splits`` is ``(train, valid)``. Batch order depends on ``(seed, epoch)``
    and dropout masks on ``seed``, so a run is reproducible bitwise.
    """
    _check_inputs(neural, ngram, config)
    train_corpus, valid_corpus = splits[0], splits[1]
    if len(train_corpus) == 0 or len(valid_corpus) == 0:
        raise TrainError("train and valid corpora must be non-empty")
    for name, corp in (("train", train_corpus), ("valid", valid_corpus)):
        if max(max(s) for s in corp.sentences) >= neural.vocab_size:
            raise TrainError(f"{name} corpus has token ids outside the vocabulary of size {neural.vocab_size}")

    neural._dropout_rng = np.random.default_rng([config.seed, 2])
    params = neural.parameters()
    opt = ag.Adam(params, lr=config.learning_rate, betas=(config.beta1, config.beta2), eps=config.adam_eps)
    log = TrainLog(mode=config.mode)
    best_state, best_ppl, since_best = neural.state(), math.inf, 0
    step = 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        if ngram is not None:
            ngram.clear_cache()
        neural.train()
        losses, weights = [], []
        for batch in make_batches(train_corpus, config.batch_size, config.max_len, seed=[config.seed, epoch]):
            alpha = effective_alpha(config, step)
            loss = batch_loss(neural, ngram, train_corpus, batch, config.mode, alpha, config.fusion)
            ag.zero_grad(params)
            loss.backward()
            ag.clip_grad_norm(params, config.grad_clip_norm)
            opt.step()
            ag.check_finite(loss)
            losses.append(loss.item())
            weights.append(int(batch.mask.sum()))
            log.alpha_trace.append(alpha)
            step += 1
        log.train_loss.append(float(np.average(losses, weights=weights)))

        alpha = effective_alpha(config, step)
        if ngram is not None:
            ngram.clear_cache()
        ppl = corpus_ppl(validation_scorer(neural, ngram, config, alpha), valid_corpus).corpus_ppl
        log.valid_ppl.append(ppl)
        log.epoch_seconds.append(time.perf_counter() - start)
        if ppl < best_ppl:
            best_ppl, best_state, since_best = ppl, neural.state(), 0
            log.selected_epoch, log.selected_step, log.selected_alpha = epoch, step, alpha
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                log.stopped_early = True
                break
    neural.load_state(best_state)
    neural.eval()
    if ngram is not None:
        ngram.clear_cache()
    return neural, log


def finetune(
    trained: NeuralLM,
    ngram: KneserNeyModel | None,
    splits: tuple[TokenizedCorpus, TokenizedCorpus],
    config: TrainConfig,
) -> NeuralLM:
    """Continue training a copy of ``trained`` on domain data; the input model is untouched."""
    model = copy.deepcopy(trained)
    if config.epochs == 0:
        _check_inputs(model, ngram, config)
        return model
    model, _ = train(model, ngram, splits, config)
    return model
