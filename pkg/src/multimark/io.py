"""File formats.

History file: one record per line, ``<history>[,<count>]`` (count defaults
to 1); lines starting with ``#`` are comments; every history has the length
of the first record. Chain, summary, truth and study-score files are CSV.
Floats are written with ``repr`` so a write/read round trip is exact.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import FAMILIES, ParamSummary, PosteriorSummary, StudyScore
from .histories import ObservedData, parse_history
from .sampler import Chain


def read_history_records(path) -> list[tuple[str, int]]:
    records, T = [], None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) > 2:
            raise ValueError(f"{path}:{lineno}: expected '<history>[,<count>]'")
        try:
            h = parse_history(parts[0], T)
            count = int(parts[1]) if len(parts) == 2 else 1
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        T = h.T
        records.append((str(h), count))
    if not records:
        raise ValueError(f"{path}: no history records")
    return records


def read_histories(path) -> ObservedData:
    return ObservedData.from_records(read_history_records(path))


def write_histories(path, data, header: str | None = None) -> None:
    """Write ObservedData (or anything with ``histories`` and ``counts``)."""
    lines = [f"# {line}" for line in (header or "").splitlines()]
    lines += [f"{h},{c}" for h, c in zip(data.histories, data.counts)]
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_chain_csv(path, chain: Chain) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(chain.columns)
        for s, row in zip(chain.sweeps, chain.values):
            w.writerow([int(s)] + [repr(float(v)) for v in row])


def read_chain_csv(path) -> Chain:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "sweep":
        raise ValueError(f"{path}: not a chain file (first column must be 'sweep')")
    body = rows[1:]
    sweeps = np.array([int(r[0]) for r in body], dtype=np.int64)
    values = np.array([[float(v) for v in r[1:]] for r in body], dtype=float).reshape(len(body), len(rows[0]) - 1)
    return Chain(rows[0], sweeps, values, {"source": str(path)})


def write_summary_csv(path, summary: PosteriorSummary) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ParamSummary.FIELDS)
        for s in summary:
            w.writerow([_fmt(v) for v in s.row()])


def read_summary_csv(path) -> PosteriorSummary:
    out = PosteriorSummary()
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.params[r["parameter"]] = ParamSummary(
                r["parameter"], float(r["mean"]), float(r["sd"]), float(r["lower"]), float(r["upper"]),
                float(r["psrf"]), bool(int(r["psrf_degenerate"])), float(r["mcse"]), float(r["ess"]))
    return out


def write_truth_csv(path, truth: dict[str, float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "value"])
        for k, v in truth.items():
            w.writerow([k, _fmt(float(v))])


def read_truth_csv(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        return {r["parameter"]: float(r["value"]) for r in csv.DictReader(fh)}


def write_study_csv(path, scores: dict[str, StudyScore]) -> None:
    """Table layout: one row per (family, metric), one column per model."""
    models = list(scores)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family", "metric"] + models)
        for fam in FAMILIES:
            for metric, attr in (("MSE", "relative_mse"), ("Width", "width"), ("Cover", "coverage")):
                w.writerow([fam, metric] + [_fmt(getattr(scores[m], attr).get(fam, float("nan"))) for m in models])


def read_study_csv(path) -> dict[tuple[str, str], dict[str, float]]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return {(row.pop("family"), row.pop("metric")): {k: float(v) for k, v in row.items()} for row in r}


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, command: str, config: dict, seed: int, inputs: list, started: _dt.datetime,
                   outputs: list | None = None) -> dict:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "software_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": sorted(str(p) for p in outputs or []),
        "started": started.isoformat(timespec="seconds"),
        "finished": _dt.datetime.now().isoformat(timespec="seconds"),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
