"""Self-describing CSV reports.

Layout: one ``# generated_at`` line (the only non-deterministic content),
then ``# config_hash`` and ``# config`` lines, then a CSV table.
"""

from __future__ import annotations

import csv
import io
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .config import canonical, config_hash

TIMESTAMP_PREFIX = "# generated_at: "


def render_csv(
    header: Sequence[str], rows: Iterable[Sequence], cfg: dict, notes: Sequence[str] = (), timestamp: str | None = None
) -> str:
    buf = io.StringIO()
    stamp = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    buf.write(f"{TIMESTAMP_PREFIX}{stamp}\n")
    buf.write(f"# config_hash: {config_hash(cfg)}\n")
    buf.write(f"# config: {canonical(cfg)}\n")
    for note in notes:
        buf.write(f"# note: {note}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, header, rows, cfg: dict, notes: Sequence[str] = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_csv(header, rows, cfg, notes), encoding="utf-8")
    return path


def read_csv(path) -> tuple[dict, list[dict]]:
    """Return (metadata, rows); metadata has ``generated_at``, ``config_hash`` and ``config``."""
    meta: dict = {}
    body = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            meta[key] = json.loads(value) if key == "config" else value
        else:
            body.append(line)
    return meta, list(csv.DictReader(body))


def strip_timestamp(text: str) -> str:
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith(TIMESTAMP_PREFIX))


def format_table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Fixed-width text table for terminal output."""
    cells = [[str(h) for h in header]] + [[f"{v:.4f}" if isinstance(v, float) else str(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
