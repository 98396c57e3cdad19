"""Readers and writers for the on-disk formats used by the command line."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .analysis import PosteriorSummary, SweepResult
from .model import ObservationSet, SoftLabelTruth
from .sampler import PosteriorDraws


class DataFileError(ValueError):
    pass


def format_float(x) -> str:
    """Shortest round-tripping text for a float."""
    return repr(float(x))


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def write_json(path, obj) -> None:
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_features(path, header: bool = False) -> np.ndarray:
    try:
        x = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    except ValueError as exc:
        raise DataFileError(f"{path}: {exc}") from None
    return x


def write_labels(path, obs: ObservationSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex", "label"])
        w.writerows(zip(obs.vertices.tolist(), obs.labels.tolist()))


def read_labels(path, n: int) -> ObservationSet:
    """Label CSV with columns ``vertex,label``; vertices not listed are unobserved."""
    verts, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"vertex", "label"} <= set(reader.fieldnames):
            raise DataFileError(f"{path}: expected columns 'vertex,label'")
        for lineno, row in enumerate(reader, start=2):
            try:
                verts.append(int(row["vertex"]))
                labels.append(int(row["label"]))
            except (TypeError, ValueError):
                raise DataFileError(f"{path}:{lineno}: bad row {row}") from None
    try:
        return ObservationSet(n, np.array(verts, dtype=np.int64), np.array(labels, dtype=np.int8))
    except ValueError as exc:
        raise DataFileError(f"{path}: {exc}") from None


def write_truth(path, truth: SoftLabelTruth, labels) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex", "label", "f0", "ell0"])
        for i, (y, f, ell) in enumerate(zip(np.asarray(labels).tolist(), truth.f0, truth.ell0)):
            w.writerow([i, y, format_float(f), format_float(ell)])


def read_truth(path) -> tuple[SoftLabelTruth, np.ndarray]:
    """Truth CSV ``vertex,label,f0,ell0`` covering every vertex; returns (truth, labels)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"vertex", "label", "f0"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataFileError(f"{path}: expected columns 'vertex,label,f0,ell0'")
        for row in reader:
            rows.append((int(row["vertex"]), int(row["label"]), float(row["f0"])))
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise DataFileError(f"{path}: truth must list every vertex 0..n-1 exactly once")
    labels = np.array([r[1] for r in rows], dtype=np.int8)
    f0 = np.array([r[2] for r in rows])
    return SoftLabelTruth(f0, ndtr(f0), np.full(len(f0), np.nan), float("nan")), labels


def write_draws(out_dir, draws: PosteriorDraws, scaled=None) -> None:
    """``f_draws.npy`` plus ``c_draws.csv``; the JSON sidecar lives in ``draws.json``."""
    out_dir = Path(out_dir)
    np.save(out_dir / "f_draws.npy", draws.f_draws)
    with open(out_dir / "c_draws.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if scaled is None:
            w.writerow(["c"])
            w.writerows([format_float(c)] for c in draws.c_draws)
        else:
            w.writerow(["c", "scaled"])
            w.writerows([format_float(c), format_float(s)] for c, s in zip(draws.c_draws, scaled))


def write_summary(path, summary: PosteriorSummary, obs: ObservationSet, truth=None) -> None:
    observed = obs.observed_mask()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["vertex", "mean", "lower", "upper", "observed"]
        if truth is not None:
            head.append("truth")
        w.writerow(head)
        for i in range(summary.n):
            row = [i, format_float(summary.mean[i]), format_float(summary.lower[i]), format_float(summary.upper[i]),
                   int(observed[i])]
            if truth is not None:
                row.append(format_float(truth.ell0[i]))
            w.writerow(row)


def read_summary_means(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = sorted((int(r["vertex"]), float(r["mean"])) for r in csv.DictReader(fh))
    return np.array([m for _, m in rows])


def write_sweep(out_dir, result: SweepResult) -> None:
    out_dir = Path(out_dir)
    with open(out_dir / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["c", "mse"])
        w.writerows([format_float(c), format_float(m)] for c, m in result.curve)
    write_json(out_dir / "sweep.json", {"c_star": result.c_star, "failed": result.failed})
