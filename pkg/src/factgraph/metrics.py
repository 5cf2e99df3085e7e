"""Classification and correlation metrics.

Labels are integers with 0 = Factual and 1 = NonFactual. For single-label
binary data micro-averaged F1 is the same number as accuracy; NonFactual is
nominally the positive class.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

__all__ = [
    "MissingClass",
    "EmptyInput",
    "ZeroVariance",
    "RankDeficient",
    "MetricsReport",
    "confusion",
    "bacc",
    "micro_f1",
    "pearson",
    "spearman",
    "partial_corr",
    "report",
]


class MissingClass(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


class RankDeficient(ValueError):
    pass


def _labels(predictions, labels) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"predictions {p.shape} and labels {y.shape} must be equal-length vectors")
    if len(y) == 0:
        raise EmptyInput("no predictions")
    if not (np.isin(p, (0, 1)).all() and np.isin(y, (0, 1)).all()):
        raise ValueError("labels must be 0 (Factual) or 1 (NonFactual)")
    return p, y


def confusion(predictions, labels) -> np.ndarray:
    """``C[true, predicted]`` counts."""
    p, y = _labels(predictions, labels)
    c = np.zeros((2, 2), dtype=np.int64)
    np.add.at(c, (y, p), 1)
    return c


def per_class_recall(predictions, labels) -> np.ndarray:
    c = confusion(predictions, labels)
    support = c.sum(axis=1)
    if np.any(support == 0):
        missing = [("Factual", "NonFactual")[i] for i in np.flatnonzero(support == 0)]
        raise MissingClass(f"no true instances of {', '.join(missing)}")
    return np.diag(c) / support


def bacc(predictions, labels) -> float:
    """Balanced accuracy: mean of the two per-class recalls."""
    return float(per_class_recall(predictions, labels).mean())


def micro_f1(predictions, labels) -> float:
    """Micro-averaged F1 over both classes (equal to accuracy here)."""
    c = confusion(predictions, labels)
    tp = np.trace(c)
    fp = fn = c.sum() - tp
    return float(2 * tp / (2 * tp + fp + fn))


def _t_pvalue(r: float, n: int) -> float:
    if n <= 2:
        return float("nan")
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2 * stats.t.sf(abs(t), n - 2))


def _corr(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    sx, sy = math.sqrt(float(xc @ xc)), math.sqrt(float(yc @ yc))
    if sx == 0 or sy == 0:
        raise ZeroVariance("correlation undefined for a constant vector")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def _vectors(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length vectors")
    if len(x) < 3:
        raise ValueError("need at least 3 points")
    return x, y


def pearson(x, y) -> tuple[float, float]:
    x, y = _vectors(x, y)
    r = _corr(x, y)
    return r, _t_pvalue(r, len(x))


def spearman(x, y) -> tuple[float, float]:
    """Pearson correlation of average ranks."""
    x, y = _vectors(x, y)
    r = _corr(stats.rankdata(x), stats.rankdata(y))
    return r, _t_pvalue(r, len(x))


def partial_corr(x, y, covariates=None, method: str = "pearson") -> tuple[float, float]:
    """Correlation of ``x`` and ``y`` after regressing out ``covariates``.

    An intercept is always included. With ``method="spearman"`` all inputs
    are rank-transformed first. The p-value uses ``n - 2 - n_covariates``
    degrees of freedom.
    """
    x, y = _vectors(x, y)
    n = len(x)
    if covariates is None:
        z = np.zeros((n, 0))
    else:
        z = np.asarray(covariates, dtype=np.float64)
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[0] != n:
            raise ValueError("covariates must have one row per point")
    if method == "spearman":
        x, y = stats.rankdata(x), stats.rankdata(y)
        z = np.column_stack([stats.rankdata(c) for c in z.T]) if z.shape[1] else z
    elif method != "pearson":
        raise ValueError("method must be 'pearson' or 'spearman'")
    design = np.column_stack([np.ones(n), z])
    # constant columns duplicate the intercept and carry no information
    keep = [0] + [j for j in range(1, design.shape[1]) if np.ptp(design[:, j]) > 0]
    design = design[:, keep]
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise RankDeficient("covariate matrix is not full rank")
    beta_x, *_ = np.linalg.lstsq(design, x, rcond=None)
    beta_y, *_ = np.linalg.lstsq(design, y, rcond=None)
    rx = x - design @ beta_x
    ry = y - design @ beta_y
    for raw, res in ((x, rx), (y, ry)):
        scale = np.linalg.norm(raw - raw.mean())
        if scale == 0:
            raise ZeroVariance("correlation undefined for a constant vector")
        if np.linalg.norm(res) <= 1e-12 * scale:
            # fully explained by the covariates: nothing left to correlate
            return 0.0, 1.0
    r = _corr(rx, ry)
    dof = n - 2 - (design.shape[1] - 1)
    if dof <= 0 or abs(r) >= 1.0:
        return r, (0.0 if abs(r) >= 1.0 else float("nan"))
    t = r * math.sqrt(dof / (1.0 - r * r))
    return r, float(2 * stats.t.sf(abs(t), dof))


@dataclass
class MetricsReport:
    bacc: float
    micro_f1: float
    recall: dict[str, float]
    confusion: list[list[int]]
    n: int
    correlation: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        lines = [
            f"examples     {self.n}",
            f"BACC         {self.bacc:.4f}",
            f"micro-F1     {self.micro_f1:.4f}",
            f"recall F     {self.recall['Factual']:.4f}",
            f"recall NF    {self.recall['NonFactual']:.4f}",
        ]
        for key, value in self.extra.items():
            lines.append(f"{key:<12} {value:.4f}" if isinstance(value, float) else f"{key:<12} {value}")
        return "\n".join(lines)


def report(predictions: Sequence[int], labels: Sequence[int], **extra) -> MetricsReport:
    rec = per_class_recall(predictions, labels)
    return MetricsReport(
        bacc=float(rec.mean()),
        micro_f1=micro_f1(predictions, labels),
        recall={"Factual": float(rec[0]), "NonFactual": float(rec[1])},
        confusion=confusion(predictions, labels).tolist(),
        n=len(labels),
        extra=extra,
    )
