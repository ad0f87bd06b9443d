"""Representational calibration: fidelity of a model across latent subpopulations.

``calibrate`` embeds a cohort with a trained autoencoder, segments the
embedding with a fitted mixture, scores the regressor inside every segment,
summarizes equity with the Gini coefficient and characterizes the largest of
the worst-performing segments by permutation testing.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Cohort, DataWarning, fmt
from .metrics import MIN_GROUP_SIZE, EquitySummary, GroupMetrics, equity, group_metrics
from .neuralnet import Autoencoder, Regressor
from .segmentation import Gmm, assign
from .stats import Characterization, characterize_groups


class ProvenanceError(ValueError):
    """Artifacts and cohort do not fit together."""


@dataclass(frozen=True)
class CalibrationConfig:
    top_n: int = 5
    min_group_size: int = MIN_GROUP_SIZE
    rounds: int = 1000
    alpha: float = 0.05
    seed: int = 0
    weighted_gini: bool = False
    characterize: bool = True


@dataclass(frozen=True, eq=False)
class CalibrationReport:
    latent: np.ndarray
    labels: np.ndarray
    predictions: np.ndarray
    group_metrics: GroupMetrics
    equity: EquitySummary
    worst_quartile_groups: list[int]
    characterization: Characterization | None
    provenance: dict
    warnings: tuple[str, ...] = ()

    @property
    def flagged_mask(self) -> np.ndarray:
        """Rows belonging to the flagged groups."""
        return np.isin(self.labels, self.worst_quartile_groups)

    def planted_recall(self, oracle_labels, planted_id: int = 1) -> float:
        """Share of planted-group members that fall in flagged groups."""
        planted = np.asarray(oracle_labels) == planted_id
        if not planted.any():
            raise ValueError(f"no members of planted group {planted_id}")
        return float(self.flagged_mask[planted].mean())

    def to_dict(self) -> dict:
        gm = self.group_metrics
        out = {
            "n": int(len(self.labels)),
            "k": int(self.provenance["k"]),
            "groups": [
                {
                    "group_id": int(g),
                    "count": int(c),
                    "rmse": _num(r),
                    "nrmse": _num(v),
                }
                for g, c, r, v in zip(gm.group_ids, gm.counts, gm.rmse, gm.nrmse)
            ],
            "equity": {
                "gini": _num(self.equity.gini),
                "defined": self.equity.defined,
                "weighted": self.equity.weighted,
                "n_groups": self.equity.n_groups,
                "excluded_groups": list(self.equity.excluded_groups),
            },
            "worst_quartile_groups": [int(g) for g in self.worst_quartile_groups],
            "characterization": None,
            "provenance": self.provenance,
            "warnings": list(self.warnings),
        }
        if self.characterization is not None:
            ch = self.characterization
            out["characterization"] = {
                **ch.summary(),
                "tests_detail": [
                    {
                        "variable": r.variable,
                        "group_id": int(r.group_id),
                        "observed_difference": _num(r.observed_difference),
                        "p_value": _num(r.p_value),
                        "rejected": bool(rej),
                    }
                    for r, rej in zip(ch.results, ch.fdr.rejected)
                ],
            }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _num(x: float):
    """Round-trip a float through the 6-significant-digit format; NaN becomes null."""
    x = float(x)
    if not np.isfinite(x):
        return None
    return float(fmt(x))


def worst_quartile_groups(
    metrics: GroupMetrics, top_n: int = 5, min_size: int = MIN_GROUP_SIZE
) -> list[int]:
    """Largest groups whose NRMSE lies strictly above the 75th percentile.

    The percentile is taken over groups with defined NRMSE and at least
    ``min_size`` members; among the qualifying groups the ``top_n`` largest
    by count are returned, ties to the lower id.
    """
    eligible = metrics.select(metrics.defined & (metrics.counts >= min_size))
    if len(eligible) == 0:
        raise ValueError("no group has a defined NRMSE")
    q75 = np.percentile(eligible.nrmse, 75)
    worst = eligible.select(eligible.nrmse > q75)
    if len(worst) == 0:
        warnings.warn("no group lies strictly above the NRMSE 75th percentile", DataWarning, stacklevel=2)
        return []
    order = np.lexsort((worst.group_ids, -worst.counts))
    return [int(g) for g in worst.group_ids[order][:top_n]]


def _digest_array(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a, dtype="<f8").tobytes()).hexdigest()[:16]


def gmm_digest(gmm: Gmm) -> str:
    return _digest_array(np.concatenate([gmm.weights, gmm.means.ravel(), gmm.covariances.ravel()]))


def calibrate(
    model: Regressor,
    cohort: Cohort,
    autoencoder: Autoencoder,
    gmm: Gmm,
    config: CalibrationConfig | None = None,
) -> CalibrationReport:
    config = config or CalibrationConfig()
    width = cohort.features.shape[1]
    if model.spec.n_inputs != width:
        raise ProvenanceError(f"regressor expects {model.spec.n_inputs} inputs, cohort has {width}")
    if autoencoder.spec.n_inputs != width:
        raise ProvenanceError(f"autoencoder expects {autoencoder.spec.n_inputs} inputs, cohort has {width}")
    if gmm.dim != 2:
        raise ProvenanceError("the mixture must live in the 2-D latent space")

    caught: list[str] = []
    predictions = model.predict(cohort.features)
    latent = autoencoder.encode(cohort.features)
    labels = assign(gmm, latent)
    metrics = group_metrics(predictions, cohort.target, labels)
    if metrics.undefined_groups:
        caught.append(f"NRMSE undefined for groups {metrics.undefined_groups}")
    summary = equity(metrics, weighted=config.weighted_gini, min_size=config.min_group_size)
    if not summary.defined:
        caught.append("Gini undefined: fewer than two groups qualify")

    with warnings.catch_warnings(record=True) as wlist:
        warnings.simplefilter("always", DataWarning)
        try:
            worst = worst_quartile_groups(metrics, config.top_n, config.min_group_size)
        except ValueError as exc:
            worst = []
            caught.append(str(exc))
    caught.extend(str(w.message) for w in wlist)

    characterization = None
    if config.characterize and worst:
        characterization = characterize_groups(
            cohort, labels, worst, rounds=config.rounds, alpha=config.alpha, seed=config.seed
        )

    provenance = {
        "model": model.digest(),
        "autoencoder": autoencoder.digest(),
        "gmm": gmm_digest(gmm),
        "cohort": _digest_array(np.column_stack([cohort.features, cohort.target])),
        "k": gmm.k,
        "seed": config.seed,
        "rounds": config.rounds,
        "alpha": config.alpha,
        "top_n": config.top_n,
        "min_group_size": config.min_group_size,
    }
    return CalibrationReport(
        latent=latent,
        labels=labels,
        predictions=predictions,
        group_metrics=metrics,
        equity=summary,
        worst_quartile_groups=worst,
        characterization=characterization,
        provenance=provenance,
        warnings=tuple(caught),
    )


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "CalibrationReport",
    "type": "object",
    "required": [
        "n",
        "k",
        "groups",
        "equity",
        "worst_quartile_groups",
        "characterization",
        "provenance",
        "warnings",
    ],
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "k": {"type": "integer", "minimum": 1},
        "groups": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["group_id", "count", "rmse", "nrmse"],
                "properties": {
                    "group_id": {"type": "integer", "minimum": 0},
                    "count": {"type": "integer", "minimum": 1},
                    "rmse": {"type": "number", "minimum": 0},
                    "nrmse": {"type": ["number", "null"], "minimum": 0},
                },
            },
        },
        "equity": {
            "type": "object",
            "required": ["gini", "defined", "weighted", "n_groups", "excluded_groups"],
            "properties": {
                "gini": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                "defined": {"type": "boolean"},
                "weighted": {"type": "boolean"},
                "n_groups": {"type": "integer", "minimum": 0},
                "excluded_groups": {"type": "array", "items": {"type": "integer"}},
            },
        },
        "worst_quartile_groups": {"type": "array", "items": {"type": "integer"}},
        "characterization": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["tests", "alpha", "n_rejected", "rounds", "tests_detail"],
                    "properties": {
                        "tests": {"type": "integer"},
                        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "n_rejected": {"type": "integer", "minimum": 0},
                        "rounds": {"type": "integer", "minimum": 1},
                        "tests_detail": {
                            "type": "array",
                            "items": {
                                "type": "object",
                                "required": [
                                    "variable",
                                    "group_id",
                                    "observed_difference",
                                    "p_value",
                                    "rejected",
                                ],
                                "properties": {
                                    "variable": {"type": "string"},
                                    "group_id": {"type": "integer"},
                                    "observed_difference": {"type": ["number", "null"]},
                                    "p_value": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                                    "rejected": {"type": "boolean"},
                                },
                            },
                        },
                    },
                },
            ]
        },
        "provenance": {
            "type": "object",
            "required": ["model", "autoencoder", "gmm", "cohort", "k", "seed"],
        },
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}


def write_schema(path: str | Path) -> None:
    Path(path).write_text(json.dumps(REPORT_SCHEMA, indent=2) + "\n")
