from __future__ import annotations

import pytest

from ngramres import cli, reports
from ngramres import config as C

TINY = """\
seed = 1
[synth]
vocab_size = 20
num_sentences = 150
sentence_len = 6
[ngram]
order = 3
[neural]
embed_dim = 8
hidden_dim = 8
num_layers = 1
[train]
epochs = 2
[domain]
num_sentences = 120
ngram_order = 2
[sweep]
epochs = 1
grid = 0.1,0.5
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(C.REPORT_DIR_ENV, raising=False)
    (tmp_path / "exp.cfg").write_text(TINY)
    return tmp_path


def run(*args):
    return cli.main([args[0], "--config", "exp.cfg", *args[1:]])


def test_parse_config_sections_and_types():
    cfg = C.parse_config_text("seed = 3\n[train]\nepochs = 4 # comment\n[fusion]\nschedule = linear_anneal\n")
    assert cfg == {"seed": 3, "train.epochs": 4, "fusion.schedule": "linear_anneal"}


def test_unknown_key_is_named():
    with pytest.raises(C.ConfigError, match="train.epoch"):
        C.parse_config_text("[train]\nepoch = 3\n")


def test_bad_value_is_named():
    with pytest.raises(C.ConfigError, match="train.epochs"):
        C.parse_config_text("train.epochs = many\n")


def test_flags_override_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed = 3\n")
    cfg = C.resolve(str(p), {"seed": "5", "neural.tie_embeddings": "false"})
    assert cfg["seed"] == 5
    assert cfg["neural.tie_embeddings"] is False
    assert cfg["ngram.order"] == 5


def test_env_overrides_report_dir(monkeypatch):
    monkeypatch.setenv(C.REPORT_DIR_ENV, "/tmp/elsewhere")
    assert C.resolve()["paths.report_dir"] == "/tmp/elsewhere"


def test_config_hash_ignores_report_dir():
    a = C.resolve(None, {"paths.report_dir": "x"})
    b = C.resolve(None, {"paths.report_dir": "y"})
    assert C.config_hash(a) == C.config_hash(b)
    assert C.config_hash(a) != C.config_hash(C.resolve(None, {"seed": "9"}))


def test_invalid_values_rejected():
    with pytest.raises(C.ConfigError, match="mode"):
        C.resolve(None, {"mode": "magic"})
    with pytest.raises(C.ConfigError, match="sweep.grid"):
        C.resolve(None, {"sweep.grid": "a,b"})
    with pytest.raises(C.ConfigError, match="train"):
        C.resolve(None, {"train.batch_size": "0"})


def test_unknown_flag_exits_nonzero():
    with pytest.raises(SystemExit) as e:
        cli.main(["eval", "--no-such-flag", "1"])
    assert e.value.code != 0


def test_missing_input_names_field(workdir, capsys):
    assert run("train-ngram") == 1
    assert "paths.vocab" in capsys.readouterr().err


def test_missing_config_file(workdir, capsys):
    assert cli.main(["synth", "--config", "nope.cfg"]) == 1
    assert "config" in capsys.readouterr().err


def test_full_pipeline(workdir):
    for cmd in ("synth", "build-vocab", "train-ngram", "export-arpa", "train-neural", "eval", "bin-report"):
        assert run(cmd) == 0, cmd
    out = workdir / "reports"
    for name in ("eval.csv", "bins.csv", "bins.png", "train_log.csv", "train_log.png", "model.arpa", "neural.ckpt"):
        assert (out / name).is_file(), name
    meta, rows = reports.read_csv(out / "eval.csv")
    assert meta["config"]["ngram.order"] == 3
    scorers = {r["scorer"] for r in rows}
    assert {"ngram-only", "vanilla", "prob_inter(lambda=0.5)"} <= scorers
    assert all(r["config_hash"] == meta["config_hash"] for r in rows)


def test_arpa_roundtrip_then_eval_matches(workdir):
    for cmd in ("synth", "train-ngram", "export-arpa", "eval"):
        assert run(cmd) == 0, cmd
    _, direct = reports.read_csv("reports/eval.csv")
    assert run("import-arpa", "--paths.ngram", "reports/from_arpa.bin") == 0
    assert run("eval", "--paths.ngram", "reports/from_arpa.bin") == 0
    _, again = reports.read_csv("reports/eval.csv")
    a = float(next(r["value"] for r in direct if r["metric"] == "ppl"))
    b = float(next(r["value"] for r in again if r["metric"] == "ppl"))
    assert abs(a - b) / a <= 1e-5


def test_commands_are_idempotent(workdir):
    assert run("synth") == 0
    first = (workdir / "reports" / "synth.csv").read_text()
    assert run("synth") == 0
    second = (workdir / "reports" / "synth.csv").read_text()
    assert reports.strip_timestamp(first) == reports.strip_timestamp(second)


def test_vocab_mismatch_is_reported(workdir, capsys):
    assert run("synth") == 0
    assert run("train-ngram") == 0
    (workdir / "small.vocab").write_text("<s>\n</s>\n<unk>\nw00\n")
    assert run("eval", "--paths.vocab", "small.vocab") == 1
    assert "mismatch" in capsys.readouterr().err


def test_sweep_alpha_emits_selection(workdir):
    for cmd in ("synth", "train-ngram", "sweep-alpha"):
        assert run(cmd) == 0, cmd
    meta, rows = reports.read_csv("reports/sweep_alpha.csv")
    assert [float(r["alpha"]) for r in rows] == [0.1, 0.5]
    assert sum(int(r["selected"]) for r in rows) == 1


def test_domain_demo(workdir):
    assert run("domain-demo", "--train.epochs", "1") == 0
    _, rows = reports.read_csv("reports/domain_matrix.csv")
    assert len(rows) == 4
    assert (workdir / "reports" / "domain_matrix.png").is_file()


def test_gradcheck_command(workdir):
    assert run("gradcheck") == 0
    _, rows = reports.read_csv("reports/gradcheck.csv")
    assert all(r["passed"] == "1" for r in rows)


def test_gradcheck_fails_loudly_with_impossible_tolerance(workdir, capsys):
    assert run("gradcheck", "--gradcheck.tolerance", "1e-30") == 1
    assert "above tolerance" in capsys.readouterr().err
