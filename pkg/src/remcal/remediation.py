"""Remediation by oversampling under-served subpopulations.

Groups whose NRMSE is strictly above the median are under-served.  Their
rows are oversampled with replacement, the regressor is retrained from a
fresh initialization and fidelity is compared before and after, over several
independently seeded trials.  The autoencoder and mixture stay frozen, so the
subpopulations are the same before and after.

Deltas follow the convention ``before - after``: positive means the NRMSE
went down (better fit) or the Gini went down (more equitable).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .dataset import Cohort, DataWarning
from .metrics import GroupMetrics, equity, group_metrics, nrmse
from .neuralnet import Autoencoder, MlpSpec, Regressor, TrainConfig, TrainingError, train_regressor
from .segmentation import Gmm, assign

logger = logging.getLogger(__name__)

SUBSETS = ("all", "base", "underserved")
SPLITS = ("train", "val")


@dataclass(frozen=True)
class RemediationConfig:
    multiplier: float = 2.0
    trials: int = 10
    seed: int = 0
    train_config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.multiplier < 1:
            raise ValueError("multiplier must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


def flag_underserved(metrics: GroupMetrics) -> np.ndarray:
    """Mask over ``metrics`` groups with NRMSE strictly above the median."""
    defined = metrics.defined
    if defined.sum() < 2:
        raise ValueError("need at least two groups with defined NRMSE")
    median = np.median(metrics.nrmse[defined])
    return defined & (np.nan_to_num(metrics.nrmse, nan=-np.inf) > median)


def rebalance(cohort: Cohort, member_mask, multiplier: float, seed: int = 0) -> Cohort:
    """Append ``round((multiplier - 1) * flagged)`` resampled flagged rows.

    Draws are uniform over flagged rows, so each flagged subgroup grows in
    proportion to its size.  Original rows keep their order at the front.
    """
    if multiplier < 1:
        raise ValueError("multiplier must be >= 1")
    mask = np.asarray(member_mask, dtype=bool)
    if mask.shape != (len(cohort),):
        raise ValueError("member_mask must have one entry per record")
    flagged = np.flatnonzero(mask)
    if len(flagged) == 0:
        warnings.warn("no flagged rows; cohort returned unchanged", DataWarning, stacklevel=2)
        return cohort
    extra = int(np.floor(multiplier * len(flagged) + 0.5)) - len(flagged)
    if extra <= 0:
        return cohort
    draws = np.random.default_rng(seed).choice(flagged, size=extra, replace=True)
    return cohort.take(np.concatenate([np.arange(len(cohort)), draws]))


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def _subset_scores(model: Regressor, cohort: Cohort, underserved_rows: np.ndarray) -> dict:
    pred = model.predict(cohort.features)
    y = cohort.target
    out = {"all": nrmse(pred, y)}
    for name, rows in (("underserved", underserved_rows), ("base", ~underserved_rows)):
        out[name] = nrmse(pred, y, rows) if rows.any() else float("nan")
    return out


def _gini(model: Regressor, cohort: Cohort, labels: np.ndarray) -> float:
    return equity(group_metrics(model.predict(cohort.features), cohort.target, labels)).gini


@dataclass(frozen=True)
class Baseline:
    """One trial's model trained on the unaltered cohort, with its flags."""

    trial: int
    seed: int
    model: Regressor
    metrics: GroupMetrics
    underserved_groups: tuple[int, ...]


@dataclass(frozen=True)
class TrialResult:
    trial: int
    seed: int
    underserved_groups: tuple[int, ...]
    # nrmse[stage][split][subset], stage in {"before", "after"}
    nrmse: dict
    gini: dict

    def delta(self, split: str, subset: str) -> float:
        return self.nrmse["before"][split][subset] - self.nrmse["after"][split][subset]

    def gini_delta(self, split: str) -> float:
        return self.gini["before"][split] - self.gini["after"][split]


@dataclass(frozen=True)
class RemediationOutcome:
    multiplier: float
    trials: tuple[TrialResult, ...]
    failed: tuple[tuple[int, str], ...] = ()

    def _values(self, fn) -> np.ndarray:
        if not self.trials:
            raise ValueError("no successful trials")
        return np.array([fn(t) for t in self.trials])

    def mean_delta(self, split: str, subset: str) -> float:
        return float(np.mean(self._values(lambda t: t.delta(split, subset))))

    def std_delta(self, split: str, subset: str) -> float:
        return float(np.std(self._values(lambda t: t.delta(split, subset))))

    def mean_nrmse(self, stage: str, split: str, subset: str) -> float:
        return float(np.mean(self._values(lambda t: t.nrmse[stage][split][subset])))

    def mean_gini(self, stage: str, split: str) -> float:
        return float(np.mean(self._values(lambda t: t.gini[stage][split])))

    def std_gini(self, stage: str, split: str) -> float:
        return float(np.std(self._values(lambda t: t.gini[stage][split])))

    def mean_gini_delta(self, split: str) -> float:
        return float(np.mean(self._values(lambda t: t.gini_delta(split))))

    def std_gini_delta(self, split: str) -> float:
        return float(np.std(self._values(lambda t: t.gini_delta(split))))

    def delta_table(self) -> pd.DataFrame:
        """Mean and std of NRMSE differences by subset and split."""
        rows = []
        for subset in SUBSETS:
            rows.append(
                {
                    "subset": subset,
                    "mean_train": self.mean_delta("train", subset),
                    "mean_val": self.mean_delta("val", subset),
                    "std_train": self.std_delta("train", subset),
                    "std_val": self.std_delta("val", subset),
                }
            )
        return pd.DataFrame(rows)

    def gini_table(self) -> pd.DataFrame:
        rows = []
        for label, stage in (("original", "before"), ("rebalanced", "after")):
            rows.append(
                {
                    "row": label,
                    "mean_train": self.mean_gini(stage, "train"),
                    "mean_val": self.mean_gini(stage, "val"),
                    "std_train": self.std_gini(stage, "train"),
                    "std_val": self.std_gini(stage, "val"),
                }
            )
        rows.append(
            {
                "row": "difference",
                "mean_train": self.mean_gini_delta("train"),
                "mean_val": self.mean_gini_delta("val"),
                "std_train": self.std_gini_delta("train"),
                "std_val": self.std_gini_delta("val"),
            }
        )
        return pd.DataFrame(rows)

    def trial_frame(self) -> pd.DataFrame:
        rows = []
        for t in self.trials:
            row = {"trial": t.trial, "seed": t.seed, "n_underserved_groups": len(t.underserved_groups)}
            for stage in ("before", "after"):
                for split in SPLITS:
                    for subset in SUBSETS:
                        row[f"nrmse_{stage}_{split}_{subset}"] = t.nrmse[stage][split][subset]
                    row[f"gini_{stage}_{split}"] = t.gini[stage][split]
            rows.append(row)
        return pd.DataFrame(rows)

    def to_dict(self) -> dict:
        return {
            "multiplier": self.multiplier,
            "n_trials": len(self.trials),
            "failed_trials": [{"trial": i, "error": msg} for i, msg in self.failed],
            "nrmse_delta": {
                split: {
                    subset: {"mean": self.mean_delta(split, subset), "std": self.std_delta(split, subset)}
                    for subset in SUBSETS
                }
                for split in SPLITS
            },
            "gini": {
                split: {
                    "before_mean": self.mean_gini("before", split),
                    "after_mean": self.mean_gini("after", split),
                    "before_std": self.std_gini("before", split),
                    "after_std": self.std_gini("after", split),
                    "delta_mean": self.mean_gini_delta(split),
                    "delta_std": self.std_gini_delta(split),
                }
                for split in SPLITS
            },
            "trials": [
                {
                    "trial": t.trial,
                    "seed": t.seed,
                    "underserved_groups": list(t.underserved_groups),
                    "nrmse": t.nrmse,
                    "gini": t.gini,
                }
                for t in self.trials
            ],
        }


class _Context:
    """Frozen segmentation of both splits, shared by every trial."""

    def __init__(self, train: Cohort, val: Cohort, autoencoder: Autoencoder, gmm: Gmm):
        self.train = train
        self.val = val
        self.labels = {
            "train": assign(gmm, autoencoder.encode(train.features)),
            "val": assign(gmm, autoencoder.encode(val.features)),
        }

    def cohort(self, split: str) -> Cohort:
        return self.train if split == "train" else self.val

    def scores(self, model: Regressor, groups) -> tuple[dict, dict]:
        scores, ginis = {}, {}
        for split in SPLITS:
            cohort = self.cohort(split)
            rows = np.isin(self.labels[split], groups)
            scores[split] = _subset_scores(model, cohort, rows)
            ginis[split] = _gini(model, cohort, self.labels[split])
        return scores, ginis


def train_baselines(
    train: Cohort,
    val: Cohort,
    spec: MlpSpec | None,
    autoencoder: Autoencoder,
    gmm: Gmm,
    config: RemediationConfig,
    context: _Context | None = None,
) -> list[Baseline | tuple[int, str]]:
    """Train one baseline regressor per trial and flag its under-served groups.

    Failed trials come back as ``(trial, message)`` tuples.
    """
    context = context or _Context(train, val, autoencoder, gmm)
    baselines: list = []
    for trial in range(config.trials):
        seed = trial_seed(config.seed, trial)
        tc = replace(config.train_config, seed=seed)
        try:
            model, _ = train_regressor(train, val, spec, tc)
        except TrainingError as exc:
            logger.warning("baseline for trial %d failed: %s", trial, exc)
            baselines.append((trial, str(exc)))
            continue
        metrics = group_metrics(model.predict(train.features), train.target, context.labels["train"])
        flags = flag_underserved(metrics)
        baselines.append(Baseline(trial, seed, model, metrics, tuple(int(g) for g in metrics.group_ids[flags])))
    return baselines


def remediate_loop(
    train: Cohort,
    val: Cohort,
    spec: MlpSpec | None,
    autoencoder: Autoencoder,
    gmm: Gmm,
    config: RemediationConfig,
    baselines=None,
    context: _Context | None = None,
) -> RemediationOutcome:
    """Flag, oversample, retrain and compare, once per trial.

    The retrained model starts from the same fresh initialization seed as its
    trial's baseline, so the rebalanced data is the only difference.
    """
    context = context or _Context(train, val, autoencoder, gmm)
    if baselines is None:
        baselines = train_baselines(train, val, spec, autoencoder, gmm, config, context)
    results, failed = [], []
    for base in baselines:
        if isinstance(base, tuple):
            failed.append(base)
            continue
        groups = np.array(base.underserved_groups, dtype=int)
        rows = np.isin(context.labels["train"], groups)
        rebalanced = rebalance(train, rows, config.multiplier, seed=base.seed)
        tc = replace(config.train_config, seed=base.seed)
        try:
            model, _ = train_regressor(rebalanced, val, spec, tc)
        except TrainingError as exc:
            logger.warning("retraining for trial %d failed: %s", base.trial, exc)
            failed.append((base.trial, str(exc)))
            continue
        before, gini_before = context.scores(base.model, groups)
        after, gini_after = context.scores(model, groups)
        results.append(
            TrialResult(
                trial=base.trial,
                seed=base.seed,
                underserved_groups=base.underserved_groups,
                nrmse={"before": before, "after": after},
                gini={"before": gini_before, "after": gini_after},
            )
        )
    return RemediationOutcome(config.multiplier, tuple(results), tuple(failed))


@dataclass(frozen=True)
class SweepResult:
    outcomes: tuple[RemediationOutcome, ...]

    @property
    def multipliers(self) -> list[float]:
        return [o.multiplier for o in self.outcomes]

    def table(self) -> pd.DataFrame:
        """One row per multiplier: mean NRMSE after rebalancing and mean Gini."""
        rows = []
        for o in self.outcomes:
            row = {"multiplier": o.multiplier}
            for split in SPLITS:
                for subset in SUBSETS:
                    row[f"nrmse_{split}_{subset}"] = o.mean_nrmse("after", split, subset)
                row[f"gini_{split}"] = o.mean_gini("after", split)
            rows.append(row)
        return pd.DataFrame(rows)

    def best_multiplier(self, split: str = "val") -> float:
        """Multiplier with the lowest mean post-remediation Gini."""
        ginis = [o.mean_gini("after", split) for o in self.outcomes]
        return self.outcomes[int(np.argmin(ginis))].multiplier


def multiplier_sweep(
    train: Cohort,
    val: Cohort,
    spec: MlpSpec | None,
    autoencoder: Autoencoder,
    gmm: Gmm,
    multipliers,
    config: RemediationConfig,
) -> SweepResult:
    """Run the remediation loop at each multiplier against shared baselines."""
    multipliers = [float(m) for m in multipliers]
    if not multipliers:
        raise ValueError("no multipliers given")
    if any(m < 1 for m in multipliers) or multipliers != sorted(multipliers):
        raise ValueError("multipliers must be >= 1 and ascending")
    context = _Context(train, val, autoencoder, gmm)
    baselines = train_baselines(train, val, spec, autoencoder, gmm, config, context)
    outcomes = tuple(
        remediate_loop(
            train,
            val,
            spec,
            autoencoder,
            gmm,
            replace(config, multiplier=m),
            baselines=baselines,
            context=context,
        )
        for m in multipliers
    )
    return SweepResult(outcomes)
