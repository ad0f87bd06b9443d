"""Permutation tests of group means and Benjamini-Hochberg FDR control."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
import pandas as pd

DEFAULT_ROUNDS = 1000


@dataclass(frozen=True)
class PermutationResult:
    variable: str
    group_id: int
    observed_difference: float
    p_value: float
    rounds: int


@dataclass(frozen=True)
class FdrOutcome:
    rejected: np.ndarray
    alpha: float
    n_rejected: int
    threshold_rank: int


def permutation_test(
    values,
    group_mask,
    rounds: int = DEFAULT_ROUNDS,
    seed: int | np.random.SeedSequence = 0,
    variable: str = "",
    group_id: int = -1,
) -> PermutationResult:
    """Two-sided permutation test of a group's mean against everyone else.

    The statistic is ``|mean(group) - mean(rest)|``; group membership is
    reassigned uniformly at random ``rounds`` times and the p-value uses the
    add-one estimator ``(1 + #{permuted >= observed}) / (rounds + 1)``.
    ``observed_difference`` keeps its sign (group minus rest).
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(group_mask, dtype=bool)
    if values.shape != mask.shape or values.ndim != 1:
        raise ValueError("values and group_mask must be aligned vectors")
    n = len(values)
    g = int(mask.sum())
    if g == 0 or g == n:
        raise ValueError("the group must be a non-empty proper subset of the rows")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")

    centered = values - values.mean()
    total = centered.sum()

    def diff(group_sum):
        return group_sum / g - (total - group_sum) / (n - g)

    observed = diff(centered[mask].sum())
    rng = np.random.default_rng(seed)
    # permuting labels is the same as drawing a random size-g subset
    permuted = np.empty(rounds)
    for r in range(rounds):
        permuted[r] = centered[rng.choice(n, size=g, replace=False)].sum()
    permuted = np.abs(diff(permuted))
    tol = 1e-9 * max(np.max(np.abs(centered)), np.finfo(float).tiny)
    exceed = int(np.sum(permuted >= abs(observed) - tol))
    return PermutationResult(
        variable=variable,
        group_id=group_id,
        observed_difference=float(values[mask].mean() - values[~mask].mean()),
        p_value=(1 + exceed) / (rounds + 1),
        rounds=rounds,
    )


def bh_procedure(p_values, alpha: float = 0.05) -> FdrOutcome:
    """Benjamini-Hochberg step-up rule at false discovery rate ``alpha``."""
    p = np.asarray(p_values, dtype=float).ravel()
    if len(p) == 0:
        raise ValueError("no p-values given")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if np.any((p <= 0) | (p > 1)):
        raise ValueError("p-values must lie in (0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    passing = np.flatnonzero(p[order] <= alpha * np.arange(1, m + 1) / m)
    k = int(passing[-1]) + 1 if len(passing) else 0
    rejected = np.zeros(m, dtype=bool)
    rejected[order[:k]] = True
    return FdrOutcome(rejected, alpha, k, k)


def derive_seed(seed: int, variable: str, group_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, zlib.crc32(variable.encode()), int(group_id)])


@dataclass(frozen=True)
class Characterization:
    """Permutation results for every (variable, group) cell plus the joint FDR outcome."""

    results: tuple[PermutationResult, ...]
    fdr: FdrOutcome
    variables: tuple[str, ...]
    group_ids: tuple[int, ...]

    def p_matrix(self) -> pd.DataFrame:
        """Variables x groups grid of p-values."""
        grid = pd.DataFrame(index=list(self.variables), columns=list(self.group_ids), dtype=float)
        for r in self.results:
            grid.loc[r.variable, r.group_id] = r.p_value
        grid.index.name = "variable"
        return grid

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "variable": [r.variable for r in self.results],
                "group_id": [r.group_id for r in self.results],
                "observed_difference": [r.observed_difference for r in self.results],
                "p_value": [r.p_value for r in self.results],
                "rejected": self.fdr.rejected,
            }
        )

    def rejected_variables(self, group_id: int) -> list[str]:
        return [
            r.variable
            for r, rej in zip(self.results, self.fdr.rejected)
            if rej and r.group_id == group_id
        ]

    def summary(self) -> dict:
        return {
            "tests": len(self.results),
            "alpha": self.fdr.alpha,
            "n_rejected": self.fdr.n_rejected,
            "rounds": self.results[0].rounds if self.results else 0,
        }


def characterize_groups(
    cohort,
    labels,
    group_ids,
    variables=None,
    rounds: int = DEFAULT_ROUNDS,
    alpha: float = 0.05,
    seed: int = 0,
) -> Characterization:
    """Test every variable's mean in every listed group against the rest.

    Benjamini-Hochberg runs once over the whole variable x group matrix.
    Results are ordered variable-major, groups in the order given.
    """
    labels = np.asarray(labels)
    variables = list(cohort.test_variables() if variables is None else variables)
    group_ids = [int(g) for g in group_ids]
    present = set(np.unique(labels).tolist())
    missing = [g for g in group_ids if g not in present]
    if missing:
        raise ValueError(f"groups not present in the assignment: {missing}")
    columns = {}
    for var in variables:
        try:
            columns[var] = cohort.variable(var)
        except KeyError:
            raise ValueError(f"unknown variable {var!r}") from None
    results = []
    for var in variables:
        for gid in group_ids:
            results.append(
                permutation_test(
                    columns[var],
                    labels == gid,
                    rounds=rounds,
                    seed=derive_seed(seed, var, gid),
                    variable=var,
                    group_id=gid,
                )
            )
    if not results:
        raise ValueError("nothing to test")
    fdr = bh_procedure([r.p_value for r in results], alpha)
    return Characterization(tuple(results), fdr, tuple(variables), tuple(group_ids))
