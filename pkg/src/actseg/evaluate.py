"""Per-token precision / recall / F1 and aggregation over repetitions."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

MACRO = "__macro__"
REPORT_HEADER = ("model", "scenario", "rho", "repetition", "label", "precision", "recall", "f1")


def confusion(truth, predicted, n_labels: int) -> np.ndarray:
    """(n_labels, n_labels) counts, rows = true label, columns = predicted."""
    if len(truth) != len(predicted):
        raise ValueError(f"{len(truth)} truth sequences vs {len(predicted)} predicted")
    table = np.zeros((n_labels, n_labels), dtype=np.int64)
    for i, (t, p) in enumerate(zip(truth, predicted)):
        t = np.asarray(t, dtype=np.int64)
        p = np.asarray(p, dtype=np.int64)
        if t.shape != p.shape:
            raise ValueError(f"sequence {i}: length {t.size} vs {p.size}")
        if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= n_labels):
            raise ValueError(f"sequence {i}: label outside alphabet")
        np.add.at(table, (t, p), 1)
    return table


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class MetricsReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    confusion: np.ndarray
    undefined: list  # labels whose P or R had a zero denominator
    meta: dict = field(default_factory=dict)

    @property
    def macro_labels(self) -> np.ndarray:
        return np.flatnonzero(self.support > 0)

    def _macro(self, arr) -> float:
        idx = self.macro_labels
        return float(arr[idx].mean()) if idx.size else 0.0

    @property
    def macro_precision(self) -> float:
        return self._macro(self.precision)

    @property
    def macro_recall(self) -> float:
        return self._macro(self.recall)

    @property
    def macro_f1(self) -> float:
        """Unweighted mean of per-label F1 over labels present in the truth."""
        return self._macro(self.f1)

    def rows(self, label_names=None) -> list:
        m = self.meta
        key = (m.get("model", ""), m.get("scenario", ""), _fmt(m.get("rho", "")),
               m.get("repetition", ""))
        out = []
        for lab in self.macro_labels:
            name = label_names[lab] if label_names is not None else str(lab)
            out.append(key + (name, _fmt(self.precision[lab]), _fmt(self.recall[lab]),
                              _fmt(self.f1[lab])))
        out.append(key + (MACRO, _fmt(self.macro_precision), _fmt(self.macro_recall),
                          _fmt(self.macro_f1)))
        return out


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def score_confusion(table: np.ndarray, meta: dict | None = None) -> MetricsReport:
    table = np.asarray(table)
    tp = np.diag(table).astype(float)
    pred = table.sum(axis=0)
    support = table.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred > 0, tp / pred, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
    f1 = np.array([f1_score(p, r) for p, r in zip(precision, recall)])
    undefined = [int(i) for i in np.flatnonzero((pred == 0) | (support == 0))]
    return MetricsReport(precision, recall, f1, support, table, undefined, dict(meta or {}))


def score(truth, predicted, n_labels: int, meta: dict | None = None) -> MetricsReport:
    """Per-token metrics of label sequences ``predicted`` against ``truth``."""
    return score_confusion(confusion(truth, predicted, n_labels), meta)


def aggregate(reports) -> list:
    """Mean and population stddev of macro P / R / F1 per (model, scenario, rho).

    Rows are sorted by that key and carry the number of repetitions.
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    groups = {}
    for rep in reports:
        key = (rep.meta.get("model", ""), rep.meta.get("scenario", ""), float(rep.meta.get("rho", 0.0)))
        groups.setdefault(key, []).append(rep)
    rows = []
    for key in sorted(groups):
        reps = groups[key]
        arr = np.array([[r.macro_precision, r.macro_recall, r.macro_f1] for r in reps])
        mean, std = arr.mean(axis=0), arr.std(axis=0)
        rows.append({"model": key[0], "scenario": key[1], "rho": key[2], "n": len(reps),
                     "precision": mean[0], "precision_std": std[0],
                     "recall": mean[1], "recall_std": std[1],
                     "f1": mean[2], "f1_std": std[2]})
    return rows


AGGREGATE_HEADER = ("model", "scenario", "rho", "n", "precision", "precision_std",
                    "recall", "recall_std", "f1", "f1_std")


def write_reports(reports, path, label_names=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for rep in reports:
            w.writerows(rep.rows(label_names))


def read_reports(path) -> list:
    """Rows of a report file as dicts (values kept as strings)."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_aggregate(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_HEADER)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in AGGREGATE_HEADER])


def plot_table(rows) -> str:
    """Plot data: one block per scenario, rho (in %) against mean macro F1
    (in %) of each model, as CSV text."""
    models = sorted({r["model"] for r in rows})
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("scenario", "rho_percent") + tuple(models))
    cells = {(r["scenario"], r["rho"], r["model"]): r["f1"] for r in rows}
    for sc in sorted({r["scenario"] for r in rows}):
        for rho in sorted({r["rho"] for r in rows if r["scenario"] == sc}):
            vals = [cells.get((sc, rho, m)) for m in models]
            w.writerow([sc, f"{100 * rho:g}"] +
                       ["" if v is None else f"{100 * v:.2f}" for v in vals])
    return out.getvalue()
