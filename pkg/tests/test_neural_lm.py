from __future__ import annotations

import numpy as np
import pytest

from ngramres import autograd as ag
from ngramres import neural_lm as NL

SMALL = NL.NeuralLMConfig(embed_dim=8, hidden_dim=8, num_layers=2, seed=4)


@pytest.mark.parametrize("tie", [True, False])
def test_parameter_count_matches_formula(tie):
    cfg = NL.NeuralLMConfig(embed_dim=8, hidden_dim=8, tie_embeddings=tie)
    m = NL.init(cfg, 30)
    assert m.num_parameters == NL.expected_param_count(cfg, 30)


def test_default_size():
    cfg = NL.NeuralLMConfig()
    V = 203
    # 2 layers x (3 * 128 * 128 * 2 + 6 * 128) + tied embedding + output bias
    assert NL.expected_param_count(cfg, V) == V * 128 + 2 * (2 * 3 * 128 * 128 + 6 * 128) + V


def test_forward_shape():
    m = NL.init(SMALL, 11).eval()
    out = m.forward(np.zeros((3, 5), dtype=np.int64))
    assert out.shape == (15, 11)


def test_causal():
    m = NL.init(SMALL, 11).eval()
    rng = np.random.default_rng(0)
    a = rng.integers(0, 11, (2, 6))
    b = a.copy()
    b[:, 4:] = (b[:, 4:] + 1) % 11
    la = m.forward(a).data.reshape(2, 6, 11)
    lb = m.forward(b).data.reshape(2, 6, 11)
    np.testing.assert_array_equal(la[:, :4], lb[:, :4])
    assert not np.allclose(la[:, 4:], lb[:, 4:])


def test_init_is_seeded():
    assert NL.init(SMALL, 11).fingerprint() == NL.init(SMALL, 11).fingerprint()
    other = NL.NeuralLMConfig(embed_dim=8, hidden_dim=8, seed=5)
    assert NL.init(other, 11).fingerprint() != NL.init(SMALL, 11).fingerprint()


def test_dropout_only_in_training_mode():
    m = NL.init(SMALL, 11)
    x = np.ones((2, 4), dtype=np.int64)
    with ag.no_grad():
        m.eval()
        e1, e2 = m.forward(x).data, m.forward(x).data
        m.train()
        t1 = m.forward(x).data
    np.testing.assert_array_equal(e1, e2)
    assert not np.allclose(e1, t1)


def test_checkpoint_roundtrip(tmp_path):
    m = NL.init(SMALL, 11)
    NL.save(m, tmp_path / "a.ckpt", extra={"note": 1})
    NL.save(m, tmp_path / "b.ckpt", extra={"note": 1})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    again = NL.load(tmp_path / "a.ckpt", vocab_size=11)
    assert again.fingerprint() == m.fingerprint()
    assert again.config == m.config
    assert NL.read_checkpoint_header(tmp_path / "a.ckpt")["extra"] == {"note": 1}
    x = np.array([[0, 3, 4]])
    np.testing.assert_array_equal(again.eval().forward(x).data, m.eval().forward(x).data)


def test_checkpoint_vocab_mismatch(tmp_path):
    NL.save(NL.init(SMALL, 11), tmp_path / "a.ckpt")
    with pytest.raises(NL.CheckpointError, match="vocab"):
        NL.load(tmp_path / "a.ckpt", vocab_size=12)


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"\x00" * 64)
    with pytest.raises(NL.CheckpointError):
        NL.load(tmp_path / "x.ckpt")


@pytest.mark.parametrize(
    "kwargs",
    [dict(embed_dim=0), dict(tie_embeddings=True, embed_dim=8, hidden_dim=16), dict(dropout_rate=1.0)],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        NL.NeuralLMConfig(**kwargs).validate()
