"""Command-line entry point: ``ngramres <command> [--config FILE] [--<key> VALUE ...]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as C
from . import corpus, evaluation, gradcheck, neural_lm, ngram, plotting, reports, trainer
from .oracle import ref_generator_ppl

COMMANDS = {
    "synth": "sample train/valid/test corpora and a vocabulary from a seeded Markov chain",
    "build-vocab": "build a vocabulary file from the training corpus",
    "train-ngram": "estimate a modified Kneser-Ney model and save it in binary form",
    "export-arpa": "write the n-gram model as an ARPA file",
    "import-arpa": "read an ARPA file and save it as a binary n-gram model",
    "train-neural": "train the recurrent LM (vanilla, ngram_res or prob_inter)",
    "eval": "word-level perplexity of every available scorer on the test corpus",
    "bin-report": "per-sentence PPL bins ordered by n-gram PPL, with a figure",
    "domain-demo": "two synthetic domains, one unified fused model, n-gram swap matrix",
    "gradcheck": "finite-difference check of every autograd op and the fused losses",
    "sweep-alpha": "train across the alpha grid and pick alpha by validation PPL",
}


class CommandError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# path helpers


def report_dir(cfg) -> Path:
    d = Path(cfg["paths.report_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def output_path(cfg, key: str, default_name: str) -> Path:
    p = Path(cfg[key]) if cfg[key] else report_dir(cfg) / default_name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def input_path(cfg, key: str, default_name: str | None = None) -> Path:
    """An existing input file: ``cfg[key]``, else the report-dir default."""
    if cfg[key]:
        p = Path(cfg[key])
    elif default_name is not None:
        p = Path(cfg["paths.report_dir"]) / default_name
    else:
        raise C.ConfigError(key, "required but not set")
    if not p.is_file():
        raise C.ConfigError(key, f"file not found: {p}")
    return p


def load_vocab(cfg) -> corpus.Vocabulary:
    return corpus.Vocabulary.load(input_path(cfg, "paths.vocab", "vocab.txt"))


def load_split(cfg, split: str, vocab) -> corpus.TokenizedCorpus:
    return corpus.load_corpus(input_path(cfg, f"paths.{split}", f"{split}.txt"), vocab)


def load_ngram(cfg, vocab) -> ngram.KneserNeyModel:
    model = ngram.load_model(input_path(cfg, "paths.ngram", "ngram.bin"))
    if model.vocab_size != len(vocab):
        raise C.ConfigError(
            "paths.ngram", f"vocabulary mismatch: model has {model.vocab_size} tokens, vocabulary has {len(vocab)}"
        )
    return model


def load_checkpoint(cfg, vocab):
    path = input_path(cfg, "paths.checkpoint", "neural.ckpt")
    try:
        model = neural_lm.load(path, vocab_size=len(vocab))
    except neural_lm.CheckpointError as e:
        raise C.ConfigError("paths.checkpoint", str(e)) from None
    return model, neural_lm.read_checkpoint_header(path)["extra"]


def _emit(cfg, name: str, header, rows, notes=()) -> Path:
    path = reports.write_csv(report_dir(cfg) / name, header, rows, cfg, notes)
    print(reports.format_table(header, rows))
    for note in notes:
        print(note)
    print(f"wrote {path}")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg) -> None:
    train, valid, test, desc = corpus.synth_markov(
        cfg["seed"],
        cfg["synth.vocab_size"],
        cfg["synth.order"],
        cfg["synth.num_sentences"],
        cfg["synth.sentence_len"],
        sharpness=cfg["synth.sharpness"],
        rank=cfg["synth.rank"],
    )
    rows = []
    for split, corp in (("train", train), ("valid", valid), ("test", test)):
        path = output_path(cfg, f"paths.{split}", f"{split}.txt")
        corpus.write_corpus(corp, desc.vocab, path)
        rows.append((split, len(corp), corp.num_tokens, ref_generator_ppl(desc, corp)))
    desc.vocab.save(output_path(cfg, "paths.vocab", "vocab.txt"))
    d = desc.to_dict()
    notes = [f"generator: {json.dumps(d, sort_keys=True)}"]
    _emit(cfg, "synth.csv", ("split", "sentences", "tokens", "generator_ppl"), rows, notes)


def cmd_build_vocab(cfg) -> None:
    lines = corpus.read_lines(input_path(cfg, "paths.train", "train.txt"))
    vocab = corpus.build_vocabulary(lines, cfg["vocab.min_freq"])
    path = output_path(cfg, "paths.vocab", "vocab.txt")
    vocab.save(path)
    _emit(cfg, "build_vocab.csv", ("vocab_size", "min_freq"), [(len(vocab), cfg["vocab.min_freq"])])


def cmd_train_ngram(cfg) -> None:
    vocab = load_vocab(cfg)
    train = load_split(cfg, "train", vocab)
    model = ngram.train_model(train, cfg["ngram.order"], len(vocab), vocab.bos_id)
    ngram.save_model(model, output_path(cfg, "paths.ngram", "ngram.bin"))
    counts = model.ngram_counts()
    rows = [(k, counts[k - 1], *model.discounts.discounts[k - 1]) for k in range(1, model.order + 1)]
    notes = [f"fingerprint: {model.fingerprint()}"]
    _emit(cfg, "train_ngram.csv", ("order", "entries", "D1", "D2", "D3+"), rows, notes)


def cmd_export_arpa(cfg) -> None:
    vocab = load_vocab(cfg)
    model = load_ngram(cfg, vocab)
    path = output_path(cfg, "paths.arpa", "model.arpa")
    path.write_text(ngram.export_arpa(model, vocab), encoding="utf-8")
    _emit(cfg, "export_arpa.csv", ("order", "entries"), list(enumerate(model.ngram_counts(), start=1)))


def cmd_import_arpa(cfg) -> None:
    vocab = load_vocab(cfg)
    text = input_path(cfg, "paths.arpa", "model.arpa").read_text(encoding="utf-8")
    model = ngram.import_arpa(text, vocab)
    ngram.save_model(model, output_path(cfg, "paths.ngram", "ngram.bin"))
    notes = [f"fingerprint: {model.fingerprint()}"]
    _emit(cfg, "import_arpa.csv", ("order", "entries"), list(enumerate(model.ngram_counts(), start=1)), notes)


def cmd_train_neural(cfg) -> None:
    vocab = load_vocab(cfg)
    train = load_split(cfg, "train", vocab)
    valid = load_split(cfg, "valid", vocab)
    tcfg = C.train_config(cfg)
    ng = load_ngram(cfg, vocab) if tcfg.mode != "vanilla" else None
    model = neural_lm.init(C.neural_config(cfg), len(vocab))
    model, log = trainer.train(model, ng, (train, valid), tcfg)
    extra = {
        "mode": tcfg.mode,
        "selected_epoch": log.selected_epoch,
        "selected_alpha": log.selected_alpha,
        "config_hash": C.config_hash(cfg),
    }
    neural_lm.save(model, output_path(cfg, "paths.checkpoint", "neural.ckpt"), extra)
    steps_per_epoch = len(log.alpha_trace) // max(len(log.train_loss), 1)
    rows = []
    for e, (loss, ppl) in enumerate(zip(log.train_loss, log.valid_ppl), start=1):
        rows.append((e, loss, ppl, log.alpha_trace[e * steps_per_epoch - 1], int(e == log.selected_epoch)))
    notes = [f"selected_epoch: {log.selected_epoch}", f"checkpoint: {model.fingerprint()}"]
    _emit(cfg, "train_log.csv", ("epoch", "train_loss", "valid_ppl", "alpha", "selected"), rows, notes)
    plotting.plot_train_log(log, report_dir(cfg) / "train_log.png")
    print(f"wall-clock per epoch (s): {[round(s, 1) for s in log.epoch_seconds]}")


def _scorers(cfg, vocab, ng, model, extra):
    f = C.fusion_config(cfg)
    out = []
    if ng is not None:
        out.append(evaluation.Scorer("ngram", ngram=ng))
    if model is not None:
        out.append(evaluation.Scorer("vanilla", neural=model))
    if ng is not None and model is not None:
        alpha = extra.get("selected_alpha", f.alpha0) if extra.get("mode") == "ngram_res" else f.alpha0
        out.append(
            evaluation.Scorer(
                "ngram_res", neural=model, ngram=ng, alpha=alpha, constant=f.inverse_softmax_constant, floor=f.prob_floor
            )
        )
        out.append(evaluation.Scorer("prob_inter", neural=model, ngram=ng, lam=f.interp_lambda, floor=f.prob_floor))
    return out


def cmd_eval(cfg) -> None:
    vocab = load_vocab(cfg)
    test = load_split(cfg, "test", vocab)
    have_ngram = bool(cfg["paths.ngram"]) or (Path(cfg["paths.report_dir"]) / "ngram.bin").is_file()
    have_ckpt = bool(cfg["paths.checkpoint"]) or (Path(cfg["paths.report_dir"]) / "neural.ckpt").is_file()
    ng = load_ngram(cfg, vocab) if have_ngram else None
    model, extra = load_checkpoint(cfg, vocab) if have_ckpt else (None, {})
    if ng is None and model is None:
        raise C.ConfigError("paths.ngram", "eval needs an n-gram model or a neural checkpoint")
    rows = []
    h = C.config_hash(cfg)
    for scorer in _scorers(cfg, vocab, ng, model, extra):
        rep = evaluation.corpus_ppl(scorer, test, config_hash=h, batch_size=cfg["eval.batch_size"])
        rows.append((rep.model, "test", "ppl", rep.corpus_ppl, h))
        rows.append((rep.model, "test", "tokens", rep.token_count, h))
    _emit(cfg, "eval.csv", ("scorer", "corpus", "metric", "value", "config_hash"), rows)


def cmd_bin_report(cfg) -> None:
    vocab = load_vocab(cfg)
    test = load_split(cfg, "test", vocab)
    ng = load_ngram(cfg, vocab)
    model, extra = load_checkpoint(cfg, vocab)
    f = C.fusion_config(cfg)
    if extra.get("mode") == "ngram_res":
        cmp = evaluation.Scorer("ngram_res", neural=model, ngram=ng, alpha=extra["selected_alpha"], floor=f.prob_floor)
    else:
        cmp = evaluation.Scorer("vanilla", neural=model)
    rep = evaluation.bin_report(ng, cmp, test, cfg["eval.bins"])
    rows = [(b.index, b.ngram_ppl, b.comparison_ppl, b.count) for b in rep.bins]
    _emit(cfg, "bins.csv", ("bin", "ngram_ppl", "comparison_ppl", "count"), rows, [rep.observation()])
    plotting.plot_bins(rep, report_dir(cfg) / "bins.png")


def _concat(*corpora, name: str) -> corpus.TokenizedCorpus:
    return corpus.TokenizedCorpus(tuple(s for c in corpora for s in c.sentences), name)


def run_domain_demo(cfg):
    """synth_domains, per-domain n-grams, one unified neural model, swap matrix."""
    (tr_a, va_a, te_a, d_a), (tr_b, va_b, te_b, _) = corpus.synth_domains(
        cfg["seed"],
        cfg["synth.vocab_size"],
        cfg["domain.divergence"],
        order=cfg["synth.order"],
        num_sentences=cfg["domain.num_sentences"],
        sentence_len=cfg["synth.sentence_len"],
        sharpness=cfg["synth.sharpness"],
        rank=cfg["synth.rank"],
    )
    vocab = d_a.vocab
    V, n = len(vocab), cfg["domain.ngram_order"]
    train = _concat(tr_a, tr_b, name="domains:train")
    valid = _concat(va_a, va_b, name="domains:valid")
    ngrams = {"A": ngram.train_model(tr_a, n, V), "B": ngram.train_model(tr_b, n, V)}
    # the unified model trains against an n-gram estimated on the same mixed data
    mixed = ngram.train_model(train, n, V)
    tcfg = C.train_config(cfg)
    model = neural_lm.init(C.neural_config(cfg), V)
    model, log = trainer.train(model, mixed if tcfg.mode != "vanilla" else None, (train, valid), tcfg)
    alpha = log.selected_alpha if tcfg.mode == "ngram_res" else C.fusion_config(cfg).alpha0
    matrix = evaluation.domain_matrix(model, ngrams, {"A": te_a, "B": te_b}, alpha)
    return matrix, log


def cmd_domain_demo(cfg) -> None:
    matrix, _ = run_domain_demo(cfg)
    best = matrix.best_rows()
    rows = []
    for i, r in enumerate(matrix.domains):
        for j, c in enumerate(matrix.domains):
            rows.append((r, c, matrix.cells[i][j], int(best[j] == r)))
    notes = [
        f"neural_checkpoint: {matrix.neural_hash}",
        f"alpha: {matrix.alpha!r}",
        f"diagonal_wins_every_column: {matrix.diagonal_wins()}",
        f"max_relative_gap: {matrix.max_relative_gap()!r}",
    ]
    _emit(cfg, "domain_matrix.csv", ("ngram_domain", "test_domain", "ppl", "best_in_column"), rows, notes)
    plotting.plot_domain_matrix(matrix, report_dir(cfg) / "domain_matrix.png")


def cmd_gradcheck(cfg) -> None:
    tol = cfg["gradcheck.tolerance"]
    results = gradcheck.run_suite(tol, seed=cfg["seed"])
    rows = [(r.name, r.max_rel_error, int(r.passed)) for r in results]
    diff = gradcheck.composed_vs_fused_gru(cfg["seed"])
    rows.append(("gru_cell_vs_composed_ops", diff, int(diff < tol)))
    _emit(cfg, "gradcheck.csv", ("check", "max_rel_error", "passed"), rows)
    failed = [r[0] for r in rows if not r[2]]
    if failed:
        raise CommandError(f"gradient check above tolerance {tol:g}: {', '.join(failed)}")


def sweep_alpha(cfg, vocab, train, valid, ng, epochs: int | None = None):
    """Short ngram_res runs over the alpha grid; returns (rows, selected alpha)."""
    rows = []
    for alpha in C.sweep_grid(cfg):
        c = dict(cfg, mode="ngram_res", **{"fusion.alpha0": alpha})
        tcfg = C.train_config(c, epochs=epochs if epochs is not None else cfg["sweep.epochs"])
        model = neural_lm.init(C.neural_config(cfg), len(vocab))
        _, log = trainer.train(model, ng, (train, valid), tcfg)
        rows.append((alpha, log.best_valid_ppl))
    best = min(rows, key=lambda r: (r[1], r[0]))[0]
    return rows, best


def cmd_sweep_alpha(cfg) -> None:
    vocab = load_vocab(cfg)
    train = load_split(cfg, "train", vocab)
    valid = load_split(cfg, "valid", vocab)
    ng = load_ngram(cfg, vocab)
    rows, best = sweep_alpha(cfg, vocab, train, valid, ng)
    out = [(a, p, int(a == best)) for a, p in rows]
    _emit(cfg, "sweep_alpha.csv", ("alpha", "valid_ppl", "selected"), out, [f"selected_alpha: {best!r}"])
    plotting.plot_sweep([r[0] for r in rows], [r[1] for r in rows], best, report_dir(cfg) / "sweep_alpha.png")


HANDLERS = {
    "synth": cmd_synth,
    "build-vocab": cmd_build_vocab,
    "train-ngram": cmd_train_ngram,
    "export-arpa": cmd_export_arpa,
    "import-arpa": cmd_import_arpa,
    "train-neural": cmd_train_neural,
    "eval": cmd_eval,
    "bin-report": cmd_bin_report,
    "domain-demo": cmd_domain_demo,
    "gradcheck": cmd_gradcheck,
    "sweep-alpha": cmd_sweep_alpha,
}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' experiment config file")
    keys = common.add_argument_group("config keys (override the config file)")
    for key, default in C.DEFAULTS.items():
        keys.add_argument(f"--{key}", dest=key, default=argparse.SUPPRESS, metavar=type(default).__name__.upper())
    parser = argparse.ArgumentParser(
        prog="ngramres", description="n-gram residual language modelling experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, help_text in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k in C.DEFAULTS}
    try:
        cfg = C.resolve(args.config, overrides)
        HANDLERS[args.command](cfg)
    except (C.ConfigError, CommandError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
