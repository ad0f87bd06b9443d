"""Model fidelity per subpopulation and the equity of its distribution.

NRMSE here is the model's RMSE inside a group divided by the RMSE of the
constant predictor that always answers the group's own mean target.  A value
of 1 means the model does no better than that constant; lower is better.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

MIN_GROUP_SIZE = 20


class UndefinedNrmseError(ValueError):
    def __init__(self, group_id, message: str | None = None):
        self.group_id = group_id
        super().__init__(message or f"NRMSE undefined for group {group_id}: constant targets")


class UndefinedGiniError(ValueError):
    pass


def _pair(predictions, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if p.shape != y.shape:
        raise ValueError("predictions and targets must have the same length")
    if len(y) == 0:
        raise ValueError("empty input")
    return p, y


def rmse(predictions, targets) -> float:
    p, y = _pair(predictions, targets)
    return float(np.sqrt(np.mean((p - y) ** 2)))


def nrmse(predictions, targets, group_indices=None, group_id=None) -> float:
    """RMSE within a group over the RMS deviation of its targets from their mean.

    ``group_indices`` selects the group (all rows when omitted).
    """
    p, y = _pair(predictions, targets)
    if group_indices is not None:
        p, y = p[group_indices], y[group_indices]
        if len(y) == 0:
            raise ValueError("group is empty")
    spread = np.sqrt(np.mean((y - y.mean()) ** 2))
    if spread == 0:
        raise UndefinedNrmseError(group_id)
    return float(np.sqrt(np.mean((p - y) ** 2)) / spread)


@dataclass(frozen=True)
class GroupMetrics:
    """Per-group fidelity; ``nrmse`` is NaN where it is undefined."""

    group_ids: np.ndarray
    counts: np.ndarray
    rmse: np.ndarray
    nrmse: np.ndarray
    mse: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.nrmse)

    @property
    def undefined_groups(self) -> list[int]:
        return self.group_ids[~self.defined].tolist()

    def __len__(self) -> int:
        return len(self.group_ids)

    def select(self, mask) -> GroupMetrics:
        mask = np.asarray(mask)
        return GroupMetrics(
            self.group_ids[mask], self.counts[mask], self.rmse[mask], self.nrmse[mask], self.mse[mask]
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "group_id": self.group_ids,
                "count": self.counts,
                "rmse": self.rmse,
                "nrmse": self.nrmse,
            }
        )


def group_metrics(predictions, targets, labels) -> GroupMetrics:
    p, y = _pair(predictions, targets)
    labels = np.asarray(labels)
    if labels.shape != y.shape:
        raise ValueError("labels must align with predictions")
    ids = np.unique(labels)
    counts, rm, nr, ms = [], [], [], []
    for gid in ids:
        idx = labels == gid
        mse = float(np.mean((p[idx] - y[idx]) ** 2))
        counts.append(int(idx.sum()))
        ms.append(mse)
        rm.append(np.sqrt(mse))
        try:
            nr.append(nrmse(p, y, idx, group_id=gid))
        except UndefinedNrmseError:
            nr.append(np.nan)
    return GroupMetrics(ids, np.array(counts), np.array(rm), np.array(nr), np.array(ms))


def stratified_nrmse(predictions, targets, values, split: str = "levels", name: str = "") -> pd.DataFrame:
    """NRMSE per stratum of one variable.

    ``split="levels"`` uses each distinct value as a stratum;
    ``split="mean"`` binarizes at the mean into ``low`` (<= mean) and ``high``.
    """
    p, y = _pair(predictions, targets)
    values = np.asarray(values)
    if values.shape != y.shape:
        raise ValueError("stratifier must align with predictions")
    if split == "mean":
        cut = values.mean()
        if np.all(values == values[0]):
            strata = np.full(len(values), "all", dtype=object)
        else:
            strata = np.where(values > cut, "high", "low").astype(object)
    elif split == "levels":
        strata = values
    else:
        raise ValueError(f"unknown split {split!r}")
    rows = []
    for level in pd.unique(pd.Series(strata)):
        idx = strata == level
        try:
            score = nrmse(p, y, idx, group_id=level)
        except UndefinedNrmseError:
            score = np.nan
        rows.append((name, level, int(idx.sum()), score))
    if split == "mean":
        order = {"low": 0, "high": 1, "all": 0}
        rows.sort(key=lambda r: order[r[1]])
    else:
        rows.sort(key=lambda r: r[1])
    return pd.DataFrame(rows, columns=["variable", "level", "count", "nrmse"])


def gini(values) -> float:
    """Relative mean absolute difference over twice the mean."""
    v = np.asarray(values, dtype=float).ravel()
    if len(v) == 0:
        raise ValueError("gini of an empty set")
    if np.any(v < 0):
        raise ValueError("gini is defined for non-negative values only")
    if not np.any(v > 0):
        raise UndefinedGiniError("gini is undefined when every value is zero")
    v = np.sort(v)
    n = len(v)
    # sum_ij |v_i - v_j| = 2 * sum_i (2i - n - 1) v_(i) for sorted v; the rank
    # weights sum to zero, so shifting by the minimum changes nothing except
    # that equal values now cancel exactly
    ranks = 2.0 * np.arange(1, n + 1) - n - 1
    return float(np.sum(ranks * (v - v[0])) / (n * n * v.mean()))


def weighted_gini(values, weights) -> float:
    """Gini where each value counts with the given non-negative weight."""
    v = np.asarray(values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if v.shape != w.shape or len(v) == 0:
        raise ValueError("values and weights must be non-empty and aligned")
    if np.any(v < 0) or np.any(w < 0):
        raise ValueError("values and weights must be non-negative")
    mean = np.sum(w * v) / np.sum(w)
    if mean <= 0:
        raise UndefinedGiniError("gini is undefined when every value is zero")
    diff = np.abs(v[:, None] - v[None, :])
    return float(np.sum(w[:, None] * w[None, :] * diff) / (2 * np.sum(w) ** 2 * mean))


@dataclass(frozen=True)
class EquitySummary:
    gini: float
    weighted: bool
    n_groups: int
    excluded_groups: tuple[int, ...] = ()

    @property
    def defined(self) -> bool:
        return not np.isnan(self.gini)


def equity(metrics: GroupMetrics, weighted: bool = False, min_size: int = MIN_GROUP_SIZE) -> EquitySummary:
    """Gini of group NRMSE over groups with defined NRMSE and at least ``min_size`` members.

    Returns NaN when fewer than two groups qualify or all qualifying NRMSE are zero.
    """
    keep = metrics.defined & (metrics.counts >= min_size)
    excluded = tuple(int(g) for g in metrics.group_ids[~keep])
    scores = metrics.nrmse[keep]
    if len(scores) < 2 or not np.any(scores > 0):
        return EquitySummary(float("nan"), weighted, int(keep.sum()), excluded)
    if weighted:
        value = weighted_gini(scores, metrics.counts[keep])
    else:
        value = gini(scores)
    return EquitySummary(value, weighted, int(keep.sum()), excluded)
