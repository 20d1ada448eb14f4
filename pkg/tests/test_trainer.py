from __future__ import annotations

import math

import numpy as np
import pytest

from ngramres import corpus as C
from ngramres import evaluation as E
from ngramres import neural_lm as NL
from ngramres import ngram as N
from ngramres import trainer as T
from ngramres.fusion import FusionConfig

NET = NL.NeuralLMConfig(embed_dim=16, hidden_dim=16, num_layers=1, seed=2)


@pytest.fixture(scope="module")
def data():
    train, valid, test, desc = C.synth_markov(7, 20, 2, 250, 8)
    V = len(desc.vocab)
    return train, valid, test, V, N.train_model(train, 3, V)


def run(data, **kw):
    train, valid, _, V, ng = data
    cfg = T.TrainConfig(**{"epochs": 3, "batch_size": 16, **kw})
    return T.train(NL.init(NET, V), ng, (train, valid), cfg)


def test_alpha_zero_is_bitwise_vanilla(data):
    m0, log0 = run(data, mode="vanilla")
    m1, log1 = run(data, mode="ngram_res", fusion=FusionConfig(alpha0=0.0))
    assert m0.fingerprint() == m1.fingerprint()
    assert log0.train_loss == log1.train_loss
    assert log0.valid_ppl == log1.valid_ppl


@pytest.mark.parametrize("mode", ["vanilla", "ngram_res", "prob_inter"])
def test_deterministic_by_seed(data, mode):
    a, la = run(data, mode=mode, epochs=2)
    b, lb = run(data, mode=mode, epochs=2)
    assert a.fingerprint() == b.fingerprint()
    assert la.train_loss == lb.train_loss and la.valid_ppl == lb.valid_ppl


def test_seed_changes_trajectory(data):
    a, _ = run(data, epochs=1, seed=0)
    b, _ = run(data, epochs=1, seed=1)
    assert a.fingerprint() != b.fingerprint()


def test_ngram_untouched_by_training(data):
    before = N.to_binary(data[4])
    run(data, mode="ngram_res", epochs=1)
    run(data, mode="prob_inter", epochs=1)
    assert N.to_binary(data[4]) == before


@pytest.mark.parametrize("mode,alpha", [("vanilla", 0.3), ("ngram_res", 0.3), ("prob_inter", 0.3)])
def test_validation_ppl_matches_eval_module(data, mode, alpha):
    train, valid, _, V, ng = data
    cfg = T.TrainConfig(epochs=2, batch_size=16, mode=mode, fusion=FusionConfig(alpha0=alpha))
    model, log = T.train(NL.init(NET, V), ng, (train, valid), cfg)
    rep = E.corpus_ppl(T.validation_scorer(model, ng, cfg, log.selected_alpha), valid)
    assert math.log(rep.corpus_ppl) == pytest.approx(math.log(log.best_valid_ppl), abs=1e-9)
    assert log.best_valid_ppl == min(log.valid_ppl)


def test_vocab_mismatch_before_training(data):
    train, valid, _, V, ng = data
    with pytest.raises(T.TrainError, match="vocabulary mismatch"):
        T.train(NL.init(NET, V + 1), ng, (train, valid), T.TrainConfig(mode="ngram_res"))


def test_fused_mode_needs_ngram(data):
    train, valid, _, V, _ = data
    with pytest.raises(T.TrainError):
        T.train(NL.init(NET, V), None, (train, valid), T.TrainConfig(mode="ngram_res"))


@pytest.mark.parametrize(
    "kwargs", [dict(mode="other"), dict(batch_size=0), dict(learning_rate=0.0), dict(beta1=1.0), dict(epochs=-1)]
)
def test_config_validation(kwargs):
    with pytest.raises(T.TrainError):
        T.TrainConfig(**kwargs).validate()


def test_annealed_alpha_trace(data):
    _, log = run(data, mode="ngram_res", epochs=2, fusion=FusionConfig(alpha0=0.4, schedule="linear_anneal", anneal_steps=10))
    trace = log.alpha_trace
    assert trace[0] == 0.4
    assert trace[5] == pytest.approx(0.2)
    assert all(a == 0.0 for a in trace[10:])
    assert all(x >= y for x, y in zip(trace, trace[1:]))


def test_reweighting_lowers_loss_where_ngram_is_confident():
    # token 4 always follows token 3, so the bigram model is nearly certain
    sents = tuple((3, 4, 5, 1) for _ in range(50)) + tuple((5, 6, 1) for _ in range(50))
    corp = C.TokenizedCorpus(sents)
    V = 8
    ng = N.train_model(corp, 2, V)
    assert math.exp(ng.logprob(4, (3,))) > 0.9
    model = NL.init(NET, V)
    batch = C.make_batches(C.TokenizedCorpus((sents[0],)), 1, 10, seed=None)[0]
    probe = C.TokenizedCorpus((sents[0],))
    vanilla = -E.position_logprobs(E.Scorer("vanilla", neural=model), probe, batch)
    fused = -E.position_logprobs(E.Scorer("ngram_res", neural=model, ngram=ng, alpha=0.3), probe, batch)
    assert fused[1] < vanilla[1]


def test_smoothed_training_loss_non_increasing():
    train, valid, _, desc = C.synth_markov(8, 30, 2, 400, 10)
    V = len(desc.vocab)
    cfg = T.TrainConfig(epochs=12, batch_size=32, early_stop_patience=12)
    _, log = T.train(NL.init(NET, V), None, (train, valid), cfg)
    smooth = np.convolve(log.train_loss, np.ones(5) / 5, mode="valid")
    violations = int((np.diff(smooth) > 0).sum())
    assert violations <= 1
    assert all(math.isfinite(x) for x in log.train_loss)


def test_finetune_zero_epochs_is_identity(data):
    train, valid, _, V, ng = data
    model = NL.init(NET, V)
    out = T.finetune(model, ng, (train, valid), T.TrainConfig(epochs=0, mode="ngram_res"))
    assert out is not model
    assert out.fingerprint() == model.fingerprint()


def test_finetune_leaves_inputs_alone(data):
    train, valid, _, V, ng = data
    model = NL.init(NET, V)
    before_model, before_ng = model.fingerprint(), N.to_binary(ng)
    out = T.finetune(model, ng, (train, valid), T.TrainConfig(epochs=1, mode="ngram_res"))
    assert model.fingerprint() == before_model
    assert N.to_binary(ng) == before_ng
    assert out.fingerprint() != before_model


def test_finetuned_model_beats_unified_on_its_domain():
    (tr_a, va_a, te_a, da), (tr_b, va_b, _, _) = C.synth_domains(3, 20, 1.0, num_sentences=300, sentence_len=8)
    V = len(da.vocab)
    mixed_train = C.TokenizedCorpus(tr_a.sentences + tr_b.sentences)
    mixed_valid = C.TokenizedCorpus(va_a.sentences + va_b.sentences)
    cfg = T.TrainConfig(epochs=4, batch_size=16)
    unified, _ = T.train(NL.init(NET, V), None, (mixed_train, mixed_valid), cfg)
    tuned = T.finetune(unified, None, (tr_a, va_a), cfg)
    ppl_u = E.corpus_ppl(E.Scorer("vanilla", neural=unified), te_a).corpus_ppl
    ppl_t = E.corpus_ppl(E.Scorer("vanilla", neural=tuned), te_a).corpus_ppl
    assert ppl_t <= ppl_u
