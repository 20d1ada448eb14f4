from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ngramres import corpus as C
from ngramres import evaluation as E
from ngramres import neural_lm as NL
from ngramres import ngram as N
from ngramres import plotting, reports
from ngramres.config import DEFAULTS

NET = NL.NeuralLMConfig(embed_dim=8, hidden_dim=8, num_layers=1, seed=1)


@pytest.fixture(scope="module")
def setup():
    train, valid, test, desc = C.synth_markov(9, 15, 2, 200, 7)
    V = len(desc.vocab)
    return train, test, V, N.train_model(train, 3, V), NL.init(NET, V)


def test_uniform_scorer_ppl_is_predictable_vocab_size(setup):
    _, test, V, _, _ = setup
    rep = E.corpus_ppl(E.Scorer("uniform", vocab_size=V), test)
    # BOS is never predicted, so the uniform distribution spans V - 1 tokens
    assert rep.corpus_ppl == pytest.approx(V - 1, rel=1e-12)


def test_report_invariants(setup):
    _, test, _, ng, model = setup
    for scorer in (E.Scorer("ngram", ngram=ng), E.Scorer("ngram_res", neural=model, ngram=ng, alpha=0.4)):
        rep = E.corpus_ppl(scorer, test)
        assert len(rep.sentence_ppls) == len(test)
        assert rep.token_count == test.num_tokens
        lps = E.score_corpus(scorer, test)
        assert rep.corpus_ppl == pytest.approx(math.exp(-np.concatenate(lps).mean()), rel=1e-12)


def test_ngram_scores_training_data_better(setup):
    train, test, _, ng, _ = setup
    s = E.Scorer("ngram", ngram=ng)
    assert E.corpus_ppl(s, train).corpus_ppl <= E.corpus_ppl(s, test).corpus_ppl


def test_alpha_zero_fused_equals_vanilla(setup):
    _, test, _, ng, model = setup
    a = E.corpus_ppl(E.Scorer("vanilla", neural=model), test)
    b = E.corpus_ppl(E.Scorer("ngram_res", neural=model, ngram=ng, alpha=0.0), test)
    assert a.corpus_ppl == b.corpus_ppl and a.sentence_ppls == b.sentence_ppls


def test_batched_ngram_path_matches_direct_query(setup):
    _, test, _, ng, _ = setup
    scorer = E.Scorer("ngram", ngram=ng)
    direct = E.score_corpus(scorer, test)
    for batch in C.make_batches(test, 8, 50, seed=None):
        lp = E.position_logprobs(scorer, test, batch).reshape(batch.targets.shape)
        for r, idx in enumerate(batch.sentence_index):
            np.testing.assert_allclose(lp[r, : len(test.sentences[idx])], direct[idx], atol=1e-12)


def test_batch_size_does_not_change_scores(setup):
    _, test, _, ng, model = setup
    s = E.Scorer("prob_inter", neural=model, ngram=ng, lam=0.5)
    a = E.corpus_ppl(s, test, batch_size=3).corpus_ppl
    b = E.corpus_ppl(s, test, batch_size=64).corpus_ppl
    assert a == pytest.approx(b, rel=1e-12)


def test_vocab_mismatch(setup):
    _, test, V, ng, _ = setup
    with pytest.raises(E.EvalError, match="mismatch"):
        E.Scorer("ngram_res", neural=NL.init(NET, V + 2), ngram=ng)
    small = E.Scorer("uniform", vocab_size=3)
    with pytest.raises(E.EvalError, match="outside"):
        E.corpus_ppl(small, test)


def test_empty_corpus(setup):
    _, _, V, _, _ = setup
    with pytest.raises(E.EvalError):
        E.corpus_ppl(E.Scorer("uniform", vocab_size=V), C.TokenizedCorpus(()))


def test_scorer_names():
    s = E.Scorer("uniform", vocab_size=5)
    assert s.name == "uniform"
    with pytest.raises(E.EvalError):
        E.Scorer("ngram_res", vocab_size=5)


# ---------------------------------------------------------------------------
# binning


@given(st.lists(st.floats(1, 50), min_size=2, max_size=60), st.integers(2, 8))
def test_bin_partition_properties(ppls, B):
    if len(ppls) < B:
        with pytest.raises(E.EvalError):
            E.bin_partition(ppls, B)
        return
    bins = E.bin_partition(ppls, B)
    sizes = [len(b) for b in bins]
    assert max(sizes) - min(sizes) <= 1
    assert sizes == sorted(sizes, reverse=True)
    assert sorted(i for b in bins for i in b) == list(range(len(ppls)))
    flat = [i for b in bins for i in b]
    assert flat == sorted(range(len(ppls)), key=lambda i: (ppls[i], i))


def test_bin_ties_broken_by_index():
    assert E.bin_partition([2.0, 1.0, 2.0, 1.0], 2) == [[1, 3], [0, 2]]


def test_one_sentence_per_bin(setup):
    _, test, _, ng, model = setup
    sub = C.TokenizedCorpus(test.sentences[:6])
    rep = E.bin_report(ng, E.Scorer("vanilla", neural=model), sub, num_bins=6)
    assert [b.count for b in rep.bins] == [1] * 6


def test_bin_report_monotone(setup):
    _, test, _, ng, model = setup
    rep = E.bin_report(ng, E.Scorer("vanilla", neural=model), test, 5)
    means = [b.ngram_ppl for b in rep.bins]
    assert means == sorted(means)
    assert sum(b.count for b in rep.bins) == len(test)
    assert "gap" in rep.observation()


def test_bin_report_needs_enough_sentences(setup):
    _, test, _, ng, model = setup
    with pytest.raises(E.EvalError):
        E.bin_report(ng, E.Scorer("vanilla", neural=model), C.TokenizedCorpus(test.sentences[:3]), 5)
    with pytest.raises(E.EvalError):
        E.bin_report(ng, E.Scorer("vanilla", neural=model), test, 1)


# ---------------------------------------------------------------------------
# domain matrix


def test_domain_matrix_shape_and_order_independence():
    (tr_a, _, te_a, da), (tr_b, _, te_b, _) = C.synth_domains(1, 12, 1.0, num_sentences=120, sentence_len=6)
    V = len(da.vocab)
    ngs = {"A": N.train_model(tr_a, 2, V), "B": N.train_model(tr_b, 2, V)}
    model = NL.init(NET, V)
    m = E.domain_matrix(model, ngs, {"A": te_a, "B": te_b}, 0.5)
    assert len(m.cells) == 2 and all(len(r) == 2 for r in m.cells)
    assert np.all(np.isfinite(m.cells))
    assert m.neural_hash == model.fingerprint()
    rev = E.domain_matrix(model, {"B": ngs["B"], "A": ngs["A"]}, {"B": te_b, "A": te_a}, 0.5)
    assert rev.cells[0][0] == m.cells[1][1] and rev.cells[0][1] == m.cells[1][0]
    assert set(m.best_rows()) <= {"A", "B"} and len(m.best_rows()) == 2


def test_domain_matrix_vocab_mismatch():
    (tr_a, _, te_a, da), _ = C.synth_domains(1, 12, 1.0, num_sentences=60, sentence_len=5)
    V = len(da.vocab)
    with pytest.raises(E.EvalError):
        E.domain_matrix(NL.init(NET, V), {"A": N.train_model(tr_a, 2, V + 1)}, {"A": te_a}, 0.3)


def test_matrix_helpers():
    m = E.DomainMatrix(["A", "B"], [[5.0, 9.0], [8.0, 6.0]], "h", 0.3)
    assert m.diagonal_wins()
    assert m.best_rows() == ["A", "B"]
    assert m.max_relative_gap() == pytest.approx(0.6)


# ---------------------------------------------------------------------------
# reports and figures


def test_csv_report_layout(tmp_path):
    cfg = dict(DEFAULTS)
    a = reports.render_csv(("x", "y"), [(1, 0.5)], cfg, notes=["hello"], timestamp="t1")
    b = reports.render_csv(("x", "y"), [(1, 0.5)], cfg, notes=["hello"], timestamp="t2")
    assert a != b and reports.strip_timestamp(a) == reports.strip_timestamp(b)
    assert a.splitlines()[0] == "# generated_at: t1"
    path = reports.write_csv(tmp_path / "r.csv", ("x", "y"), [(1, 0.5)], cfg)
    meta, rows = reports.read_csv(path)
    assert meta["config"]["ngram.order"] == DEFAULTS["ngram.order"]
    assert rows == [{"x": "1", "y": "0.5"}]


def test_figures_are_written_deterministically(tmp_path):
    rep = E.BinReport("vanilla", [E.Bin(i, 10.0 * i, 8.0 * i, 3) for i in range(1, 6)])
    a = plotting.plot_bins(rep, tmp_path / "a.png")
    b = plotting.plot_bins(rep, tmp_path / "b.png")
    assert a.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert a.read_bytes() == b.read_bytes()
    m = E.DomainMatrix(["A", "B"], [[5.0, 9.0], [8.0, 6.0]], "h", 0.3)
    assert plotting.plot_domain_matrix(m, tmp_path / "m.png").stat().st_size > 0
