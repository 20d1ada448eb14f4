"""PNG figures for bin reports, domain matrices and training curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import BinReport, DomainMatrix  # noqa: E402
from .trainer import TrainLog  # noqa: E402

# no software/version stamp, so identical data gives identical bytes
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_bins(report: BinReport, path) -> Path:
    """Per-bin mean PPL of the n-gram model and the comparison model, log y-axis."""
    idx = [b.index for b in report.bins]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(idx, [b.ngram_ppl for b in report.bins], "o-", label="n-gram")
    ax.plot(idx, [b.comparison_ppl for b in report.bins], "s-", label=report.comparison)
    ax.set_yscale("log")
    ax.set_xticks(idx)
    ax.set_xlabel("bin (ascending n-gram PPL)")
    ax.set_ylabel("mean sentence PPL")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_domain_matrix(matrix: DomainMatrix, path) -> Path:
    cells = np.asarray(matrix.cells)
    fig, ax = plt.subplots(figsize=(4, 3.5))
    im = ax.imshow(cells, cmap="viridis_r")
    n = len(matrix.domains)
    ax.set_xticks(range(n), matrix.domains)
    ax.set_yticks(range(n), matrix.domains)
    ax.set_xlabel("test domain")
    ax.set_ylabel("n-gram domain")
    for i in range(n):
        for j in range(n):
            ax.text(j, i, f"{cells[i, j]:.2f}", ha="center", va="center", color="w", fontsize=9)
    fig.colorbar(im, ax=ax, label="PPL")
    fig.tight_layout()
    return _save(fig, path)


def plot_train_log(log: TrainLog, path) -> Path:
    epochs = np.arange(1, len(log.train_loss) + 1)
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    a1.plot(epochs, np.exp(log.train_loss), "o-", label="train (exp loss)")
    a1.plot(epochs, log.valid_ppl, "s-", label="valid PPL")
    a1.axvline(log.selected_epoch, color="grey", ls=":")
    a1.set_xlabel("epoch")
    a1.set_ylabel("PPL")
    a1.legend(frameon=False)
    a2.plot(np.arange(len(log.alpha_trace)), log.alpha_trace)
    a2.set_xlabel("update")
    a2.set_ylabel("effective alpha")
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(alphas, ppls, selected: float, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(alphas, ppls, "o-")
    ax.axvline(selected, color="grey", ls=":")
    ax.set_xscale("log")
    ax.set_xlabel("alpha")
    ax.set_ylabel("valid PPL")
    fig.tight_layout()
    return _save(fig, path)
