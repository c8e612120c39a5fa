"""Next-response prediction, its four metrics, and student-level k-fold CV."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .belief import init_belief, predict_response, update_belief
from .domain import Dataset, HPOMDPModel
from .exceptions import ContractError
from .learning import EMConfig, em_fit, fit_baseline_pomdp

logger = logging.getLogger(__name__)

RMSE_FORMS = ("standard", "verbatim")


@dataclass(frozen=True)
class PredictionRecord:
    trajectory: str
    step: int          # 1-based
    predicted: float
    actual: int


@dataclass(frozen=True)
class MetricReport:
    acc: float
    auc: Optional[float]   # None when only one class is present
    mae: float
    rmse: float
    n: int
    positives: int
    negatives: int

    def as_dict(self) -> dict:
        return {"acc": self.acc, "auc": self.auc, "mae": self.mae, "rmse": self.rmse,
                "n": self.n, "positives": self.positives, "negatives": self.negatives}


def next_step_predictions(model: HPOMDPModel, trajectories, include_first: bool = True) -> list:
    """Predict every answer from the belief built on the answers before it.

    Steps whose question is not in the model's catalog are skipped (and do
    not update the belief).
    """
    records = []
    for tr in trajectories:
        belief = init_belief(model)
        for t, (a, o) in enumerate(tr.steps, start=1):
            if a not in model.question_index:
                logger.warning("skipping unknown question %r in trajectory %r", a, tr.student)
                continue
            if t > 1 or include_first:
                records.append(PredictionRecord(tr.student, t, predict_response(model, belief, a), int(o)))
            belief = update_belief(model, belief, a, o)
    return records


def pairwise_auc(pos, neg) -> float:
    """Reference AUC by enumerating all positive/negative pairs (ties count 1/2)."""
    pos = np.asarray(pos, dtype=float)
    neg = np.asarray(neg, dtype=float)
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins / (len(pos) * len(neg)))


def rank_auc(scores, labels) -> Optional[float]:
    """AUC from the Mann-Whitney rank sum; equal to :func:`pairwise_auc`."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    m, n = int(labels.sum()), int((~labels).sum())
    if m == 0 or n == 0:
        return None
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[labels].sum() - m * (m + 1) / 2.0
    return float(u / (m * n))


def compute_metrics(records, rmse_form: str = "standard", threshold: float = 0.5) -> MetricReport:
    """ACC (predictions >= threshold count as correct), AUC, MAE and RMSE.

    ``rmse_form='verbatim'`` divides the root of the summed squares by n
    instead of taking the root of the mean.
    """
    if rmse_form not in RMSE_FORMS:
        raise ContractError(f"rmse_form must be one of {RMSE_FORMS}")
    records = list(records)
    if not records:
        raise ContractError("no prediction records")
    y = np.array([r.actual for r in records], dtype=float)
    p = np.array([r.predicted for r in records], dtype=float)
    n = len(y)
    acc = float(((p >= threshold).astype(float) == y).mean())
    mae = float(np.abs(y - p).sum() / n)
    sq = float(((y - p) ** 2).sum())
    rmse = math.sqrt(sq / n) if rmse_form == "standard" else math.sqrt(sq) / n
    pos = int(y.sum())
    return MetricReport(acc, rank_auc(p, y), mae, rmse, n, pos, n - pos)


def mean_report(reports) -> MetricReport:
    reports = list(reports)
    aucs = [r.auc for r in reports if r.auc is not None]
    return MetricReport(
        acc=float(np.mean([r.acc for r in reports])),
        auc=float(np.mean(aucs)) if aucs else None,
        mae=float(np.mean([r.mae for r in reports])),
        rmse=float(np.mean([r.rmse for r in reports])),
        n=sum(r.n for r in reports),
        positives=sum(r.positives for r in reports),
        negatives=sum(r.negatives for r in reports),
    )


def assign_folds(student_ids, folds: int, seed: int = 0) -> dict:
    """Map each distinct student id to a fold.

    Students are ordered by a seeded hash of their id and dealt round-robin,
    so the assignment ignores input order and fold sizes differ by at most one.
    """
    unique = sorted(set(map(str, student_ids)))
    if len(unique) < folds:
        raise ContractError(f"{len(unique)} students cannot fill {folds} folds")

    def key(sid):
        return hashlib.sha256(f"{seed}:{sid}".encode()).hexdigest(), sid

    return {sid: rank % folds for rank, sid in enumerate(sorted(unique, key=key))}


@dataclass
class CVReport:
    folds: int
    assignment: dict
    hpomdp: list = field(default_factory=list)
    pomdp: list = field(default_factory=list)

    @property
    def hpomdp_mean(self) -> MetricReport:
        return mean_report(self.hpomdp)

    @property
    def pomdp_mean(self) -> Optional[MetricReport]:
        return mean_report(self.pomdp) if self.pomdp else None


def cross_validate(dataset: Dataset, folds: int = 10, config: EMConfig = None, baseline: bool = True,
                   seed: int = 0, include_first: bool = True, rmse_form: str = "standard") -> CVReport:
    """Student-level k-fold CV of the mixture model and (optionally) the
    single-pattern baseline, both fitted on identical training splits."""
    config = config or EMConfig(k=3)
    if folds < 2:
        raise ContractError("need at least 2 folds")
    if len(dataset) < folds:
        raise ContractError(f"{len(dataset)} trajectories cannot fill {folds} folds")
    assignment = assign_folds([tr.student for tr in dataset.trajectories], folds, seed)
    report = CVReport(folds, assignment)
    fold_of = np.array([assignment[tr.student] for tr in dataset.trajectories])
    for f in range(folds):
        train = dataset.subset(np.flatnonzero(fold_of != f))
        test = dataset.subset(np.flatnonzero(fold_of == f))
        fold_config = replace(config, seed=config.seed + f)
        model = em_fit(train, fold_config).model
        report.hpomdp.append(compute_metrics(next_step_predictions(model, test.trajectories, include_first),
                                             rmse_form))
        if baseline:
            base = fit_baseline_pomdp(train, fold_config).model
            report.pomdp.append(compute_metrics(next_step_predictions(base, test.trajectories, include_first),
                                                rmse_form))
    return report


def format_metric_table(columns: dict, title: str = "") -> str:
    """Plain-text table with one row per metric and one column per model."""
    names = list(columns)
    lines = []
    if title:
        lines.append(title)
    lines.append("metric\t" + "\t".join(names))
    for metric in ("acc", "auc", "mae", "rmse"):
        cells = []
        for name in names:
            v = getattr(columns[name], metric)
            cells.append("n/a" if v is None else f"{v:.4f}")
        lines.append(metric.upper() + "\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"
