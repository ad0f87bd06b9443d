"""Cohort schema, CSV ingestion, normalization, splitting and synthetic cohorts.

A :class:`Cohort` holds the *encoded* model inputs (categoricals expanded to
one-hot columns in level order), the HbA1c target, any schema columns that are
recorded but not fed to models (``extras``, e.g. the diabetes flag) and, for
synthetic cohorts, the planted-group oracle labels.
"""

from __future__ import annotations

import csv
import json
import operator
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

BINARY = "binary"
CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
KINDS = (BINARY, CATEGORICAL, CONTINUOUS)

DEFAULT_TARGET_WINDOW = (15.0, 200.0)
NA_VALUES = ["NA", ""]


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


class EmptyCohortError(ValueError):
    pass


class DataWarning(UserWarning):
    pass


def fmt(x: float) -> str:
    """Fixed 6-significant-digit float formatting used by every file writer."""
    return f"{float(x):.6g}"


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    unit: str = ""
    levels: tuple[str, ...] = ()
    model_input: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL and len(self.levels) < 2:
            raise SchemaError(f"categorical column {self.name!r} needs at least two levels")
        object.__setattr__(self, "levels", tuple(self.levels))

    def encoded_names(self) -> list[str]:
        if self.kind == CATEGORICAL:
            return [f"{self.name}={level}" for level in self.levels]
        return [self.name]


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[Column, ...]
    target_name: str = "hba1c"
    target_unit: str = "mmol/mol"
    target_window: tuple[float, float] = DEFAULT_TARGET_WINDOW

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        if self.target_name in names:
            raise SchemaError("the target is declared separately from the feature columns")
        lo, hi = self.target_window
        if not lo < hi:
            raise SchemaError("target window must satisfy low < high")

    @property
    def input_columns(self) -> list[Column]:
        return [c for c in self.columns if c.model_input]

    @property
    def extra_columns(self) -> list[Column]:
        return [c for c in self.columns if not c.model_input]

    @property
    def feature_names(self) -> list[str]:
        return [name for c in self.input_columns for name in c.encoded_names()]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def continuous_mask(self) -> np.ndarray:
        return np.array(
            [c.kind == CONTINUOUS for c in self.input_columns for _ in c.encoded_names()]
        )

    def to_dict(self) -> dict:
        return {
            "target": self.target_name,
            "target_unit": self.target_unit,
            "target_window": list(self.target_window),
            "columns": [
                {
                    "name": c.name,
                    "kind": c.kind,
                    "unit": c.unit,
                    **({"levels": list(c.levels)} if c.levels else {}),
                    **({} if c.model_input else {"model_input": False}),
                }
                for c in self.columns
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> FeatureSchema:
        cols = tuple(
            Column(
                name=c["name"],
                kind=c["kind"],
                unit=c.get("unit", ""),
                levels=tuple(c.get("levels", ())),
                model_input=c.get("model_input", True),
            )
            for c in d["columns"]
        )
        return cls(
            columns=cols,
            target_name=d.get("target", "hba1c"),
            target_unit=d.get("target_unit", "mmol/mol"),
            target_window=tuple(d.get("target_window", DEFAULT_TARGET_WINDOW)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> FeatureSchema:
        return cls.from_dict(json.loads(Path(path).read_text()))


ETHNIC_GROUPS = ("white", "mixed", "asian", "black", "chinese", "other")


def reference_schema() -> FeatureSchema:
    """The HbA1c cohort roster, encoding to 20 model inputs.

    Ethnicity uses the six top-level groups of the self-reported ethnicity
    field. ``diabetes`` is recorded for descriptive tables but never used as a
    model input.
    """
    return FeatureSchema(
        columns=(
            Column("sex", BINARY, "1=male"),
            Column("age", CONTINUOUS, "years"),
            Column("smoking", BINARY, "1=current smoker"),
            Column("ethnicity", CATEGORICAL, "", ETHNIC_GROUPS),
            Column("townsend", CONTINUOUS, "index"),
            Column("haemoglobin", CONTINUOUS, "g/dL"),
            Column("bmi", CONTINUOUS, "kg/m2"),
            Column("weight", CONTINUOUS, "kg"),
            Column("body_fat", CONTINUOUS, "%"),
            Column("high_bp", BINARY, "diagnosis"),
            Column("heart_attack_angina_stroke", BINARY, "diagnosis"),
            Column("clot_emphysema", BINARY, "diagnosis"),
            Column("asthma", BINARY, "diagnosis"),
            Column("hayfever_eczema", BINARY, "diagnosis"),
            Column("other_serious", BINARY, "diagnosis"),
            Column("diabetes", BINARY, "diagnosis", model_input=False),
        ),
    )


@dataclass(frozen=True)
class NormalizationStats:
    """Z-score parameters for the continuous encoded columns.

    ``columns`` are indices into the encoded feature matrix; ``std`` is the
    population standard deviation, with zero for constant columns.
    """

    columns: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    zero_variance: tuple[str, ...] = ()

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=float, copy=True)
        cols = self.columns
        safe = np.where(self.std > 0, self.std, 1.0)
        X[:, cols] = np.where(self.std > 0, (X[:, cols] - self.mean) / safe, 0.0)
        return X

    def invert(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=float, copy=True)
        X[:, self.columns] = X[:, self.columns] * self.std + self.mean
        return X

    def to_dict(self) -> dict:
        return {
            "columns": self.columns.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "zero_variance": list(self.zero_variance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> NormalizationStats:
        return cls(
            np.asarray(d["columns"], dtype=int),
            np.asarray(d["mean"], dtype=float),
            np.asarray(d["std"], dtype=float),
            tuple(d.get("zero_variance", ())),
        )


@dataclass(frozen=True, eq=False)
class Cohort:
    schema: FeatureSchema
    features: np.ndarray
    target: np.ndarray
    extras: dict[str, np.ndarray] = field(default_factory=dict)
    oracle_labels: np.ndarray | None = None
    row_ids: np.ndarray | None = None
    normalization: NormalizationStats | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.target, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.schema.n_features:
            raise SchemaError(
                f"feature matrix has shape {X.shape}, schema expects {self.schema.n_features} columns"
            )
        if len(X) == 0:
            raise EmptyCohortError("cohort has no records")
        if y.shape != (len(X),):
            raise ValueError("target length must match the number of records")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("cohort values must be finite")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "target", y)
        if self.row_ids is None:
            object.__setattr__(self, "row_ids", np.arange(len(X)))

    def __len__(self) -> int:
        return len(self.target)

    @property
    def feature_names(self) -> list[str]:
        return self.schema.feature_names

    def take(self, idx) -> Cohort:
        idx = np.asarray(idx)
        return replace(
            self,
            features=self.features[idx],
            target=self.target[idx],
            extras={k: v[idx] for k, v in self.extras.items()},
            oracle_labels=None if self.oracle_labels is None else self.oracle_labels[idx],
            row_ids=self.row_ids[idx],
        )

    def raw_features(self) -> np.ndarray:
        """Features in original units, undoing normalization if applied."""
        if self.normalization is None:
            return self.features
        return self.normalization.invert(self.features)

    def variable(self, name: str) -> np.ndarray:
        """One variable in original units: an encoded column, extra, or the target.

        A categorical schema column is returned as integer level codes.
        """
        if name == self.schema.target_name:
            return self.target
        if name in self.extras:
            return self.extras[name]
        names = self.feature_names
        if name in names:
            return self.raw_features()[:, names.index(name)]
        try:
            col = self.schema.column(name)
        except KeyError:
            raise KeyError(f"unknown variable {name!r}") from None
        if col.kind == CATEGORICAL:
            block = [names.index(n) for n in col.encoded_names()]
            return np.argmax(self.features[:, block], axis=1)
        raise KeyError(f"unknown variable {name!r}")

    def test_variables(self) -> list[str]:
        """Variables whose group means are compared during characterization."""
        return [*self.feature_names, *self.extras, self.schema.target_name]

    def same_data(self, other: Cohort) -> bool:
        return (
            self.schema == other.schema
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.target, other.target)
            and self.extras.keys() == other.extras.keys()
            and all(np.array_equal(v, other.extras[k]) for k, v in self.extras.items())
        )


# --------------------------------------------------------------------------
# ingestion


def clean_frame(frame: pd.DataFrame, schema: FeatureSchema) -> pd.DataFrame:
    """Drop incomplete records and implausible targets; keep row order.

    Expects numeric columns already converted (categoricals as level strings).
    """
    cols = [c.name for c in schema.columns] + [schema.target_name]
    frame = frame.dropna(subset=cols)
    lo, hi = schema.target_window
    target = frame[schema.target_name]
    return frame[(target >= lo) & (target <= hi)]


def _parse_frame(raw: pd.DataFrame, schema: FeatureSchema) -> pd.DataFrame:
    out = {}
    for col in [*schema.columns, Column(schema.target_name, CONTINUOUS)]:
        values = raw[col.name]
        present = values.notna()
        if col.kind == CATEGORICAL:
            bad = present & ~values.isin(col.levels)
            parsed = values
        else:
            parsed = pd.to_numeric(values, errors="coerce")
            bad = present & parsed.isna()
            if col.kind == BINARY:
                bad |= parsed.notna() & ~parsed.isin([0, 1])
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise ParseError(
                f"row {row}: cannot parse {values.iloc[row]!r} in column {col.name!r}"
            )
        out[col.name] = parsed
    return pd.DataFrame(out)


def _encode(frame: pd.DataFrame, schema: FeatureSchema) -> np.ndarray:
    blocks = []
    for col in schema.input_columns:
        if col.kind == CATEGORICAL:
            values = frame[col.name].to_numpy()
            blocks.append(np.stack([values == lv for lv in col.levels], axis=1).astype(float))
        else:
            blocks.append(frame[col.name].to_numpy(dtype=float)[:, None])
    return np.hstack(blocks)


def read_frame(path: str | Path, schema: FeatureSchema) -> pd.DataFrame:
    raw = pd.read_csv(
        path, dtype=str, keep_default_na=False, na_values=NA_VALUES, encoding="utf-8"
    )
    for name in [c.name for c in schema.columns] + [schema.target_name]:
        if name not in raw.columns:
            raise SchemaError(f"CSV is missing schema column {name!r}")
    return _parse_frame(raw, schema)


def load_csv(path: str | Path, schema: FeatureSchema) -> Cohort:
    """Read, clean and encode a cohort CSV.

    An ``oracle_label`` column, when present, is carried through as the
    planted-group labels.
    """
    frame = clean_frame(read_frame(path, schema), schema)
    if frame.empty:
        raise EmptyCohortError(f"no complete, plausible records in {path}")
    oracle = None
    header = pd.read_csv(path, nrows=0).columns
    if "oracle_label" in header:
        labels = pd.read_csv(path, usecols=["oracle_label"])["oracle_label"]
        oracle = labels.to_numpy()[frame.index.to_numpy()].astype(int)
    return Cohort(
        schema=schema,
        features=_encode(frame, schema),
        target=frame[schema.target_name].to_numpy(dtype=float),
        extras={c.name: frame[c.name].to_numpy(dtype=float) for c in schema.extra_columns},
        oracle_labels=oracle,
        row_ids=frame.index.to_numpy(),
    )


def write_csv(cohort: Cohort, path: str | Path, include_oracle: bool = True) -> None:
    """Write a cohort in original units using the schema's raw column layout."""
    schema = cohort.schema
    X = cohort.raw_features()
    names = schema.feature_names
    header = [c.name for c in schema.columns] + [schema.target_name]
    with_oracle = include_oracle and cohort.oracle_labels is not None
    if with_oracle:
        header.append("oracle_label")
    columns = []
    for col in schema.columns:
        if not col.model_input:
            columns.append([fmt(v) for v in cohort.extras[col.name]])
        elif col.kind == CATEGORICAL:
            codes = cohort.variable(col.name)
            columns.append([col.levels[i] for i in codes])
        else:
            columns.append([fmt(v) for v in X[:, names.index(col.name)]])
    columns.append([fmt(v) for v in cohort.target])
    if with_oracle:
        columns.append([str(int(v)) for v in cohort.oracle_labels])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(zip(*columns))


# --------------------------------------------------------------------------
# normalization and splitting


def fit_normalization(cohort: Cohort) -> NormalizationStats:
    cols = np.flatnonzero(cohort.schema.continuous_mask())
    X = cohort.raw_features()[:, cols]
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    names = np.array(cohort.feature_names)[cols]
    constant = tuple(names[std == 0])
    if constant:
        warnings.warn(
            f"zero-variance columns mapped to 0: {', '.join(constant)}", DataWarning, stacklevel=2
        )
    return NormalizationStats(cols, mean, np.where(std > 0, std, 0.0), constant)


def apply_normalization(cohort: Cohort, stats: NormalizationStats) -> Cohort:
    return replace(cohort, features=stats.apply(cohort.raw_features()), normalization=stats)


def normalize(cohort: Cohort) -> tuple[Cohort, NormalizationStats]:
    """Z-score continuous columns with the population std; binaries pass through."""
    stats = fit_normalization(cohort)
    return apply_normalization(cohort, stats), stats


def denormalize(cohort: Cohort) -> Cohort:
    return replace(cohort, features=cohort.raw_features(), normalization=None)


def split(cohort: Cohort, train_fraction: float = 0.75, seed: int = 0) -> tuple[Cohort, Cohort]:
    """Random disjoint partition; each part keeps the original row order."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(cohort)
    n_train = int(np.floor(n * train_fraction + 0.5))
    if n_train in (0, n):
        raise ValueError(f"split of {n} records at {train_fraction} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return cohort.take(np.sort(perm[:n_train])), cohort.take(np.sort(perm[n_train:]))


# --------------------------------------------------------------------------
# synthetic cohorts

_OPS = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


@dataclass(frozen=True)
class Condition:
    """``feature op value`` over an encoded feature in original units."""

    feature: str
    op: str
    value: float

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown comparison {self.op!r}")

    def evaluate(self, X: np.ndarray, names: Sequence[str]) -> np.ndarray:
        try:
            j = list(names).index(self.feature)
        except ValueError:
            raise KeyError(f"unknown feature {self.feature!r}") from None
        return _OPS[self.op](X[:, j], self.value)


@dataclass(frozen=True)
class PlantedGroup:
    """A conjunction of conditions plus the effect applied to its members.

    ``slope_shift`` maps feature names to extra target slope (mmol/mol per
    reference-scaled unit) inside the group.
    """

    conditions: tuple[Condition, ...]
    noise_multiplier: float = 1.0
    slope_shift: dict[str, float] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.noise_multiplier < 1:
            raise ValueError("noise_multiplier must be >= 1")
        object.__setattr__(self, "conditions", tuple(self.conditions))

    def members(self, X: np.ndarray, names: Sequence[str]) -> np.ndarray:
        mask = np.ones(len(X), dtype=bool)
        for cond in self.conditions:
            mask &= cond.evaluate(X, names)
        return mask

    @property
    def defining_features(self) -> list[str]:
        return sorted({c.feature for c in self.conditions} | set(self.slope_shift))


@dataclass(frozen=True)
class SyntheticConfig:
    n: int
    seed: int = 0
    planted_groups: tuple[PlantedGroup, ...] = ()
    base_noise_sigma: float = 1.0

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        if self.base_noise_sigma < 0:
            raise ValueError("base_noise_sigma must be non-negative")
        object.__setattr__(self, "planted_groups", tuple(self.planted_groups))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "seed": self.seed,
            "base_noise_sigma": self.base_noise_sigma,
            "planted_groups": [
                {
                    "name": g.name,
                    "conditions": [[c.feature, c.op, c.value] for c in g.conditions],
                    "noise_multiplier": g.noise_multiplier,
                    "slope_shift": dict(g.slope_shift),
                }
                for g in self.planted_groups
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticConfig:
        groups = tuple(
            PlantedGroup(
                conditions=tuple(Condition(f, op, float(v)) for f, op, v in g["conditions"]),
                noise_multiplier=float(g.get("noise_multiplier", 1.0)),
                slope_shift={k: float(v) for k, v in g.get("slope_shift", {}).items()},
                name=g.get("name", ""),
            )
            for g in d.get("planted_groups", [])
        )
        return cls(
            n=int(d["n"]),
            seed=int(d.get("seed", 0)),
            planted_groups=groups,
            base_noise_sigma=float(d.get("base_noise_sigma", 1.0)),
        )


# Reference location/scale of each continuous input; the generating function
# works on (x - loc) / scale so it does not depend on the sample drawn.
REFERENCE_SCALE = {
    "age": (57.0, 8.0),
    "townsend": (-1.3, 3.0),
    "haemoglobin": (14.1, 1.2),
    "bmi": (27.4, 4.5),
    "weight": (78.0, 15.0),
    "body_fat": (31.0, 8.0),
}

# share of women drawn from the high-adiposity component
ADIPOSE_SHARE = 0.112
ETHNICITY_PROBS = (0.88, 0.01, 0.04, 0.03, 0.01, 0.03)
ETHNICITY_EFFECT = {"mixed": 1.0, "asian": 4.0, "black": 3.0, "chinese": 1.0, "other": 1.5}


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _draw_features(n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    sex = (rng.random(n) < 0.46).astype(float)
    age = np.clip(rng.normal(57.0, 8.0, n), 40.0, 70.0)
    eth = rng.choice(len(ETHNIC_GROUPS), size=n, p=ETHNICITY_PROBS)
    smoking = (rng.random(n) < 0.09 + 0.04 * sex).astype(float)
    townsend = rng.normal(-1.3, 3.0, n) + 1.2 * (eth != 0)
    haemoglobin = rng.normal(13.4 + 1.5 * sex, 1.0, n)
    # mixture component: a high-adiposity female phenotype
    adipose = (sex == 0) & (rng.random(n) < ADIPOSE_SHARE)
    fat_mean = 36.0 - 11.0 * sex + 12.0 * adipose
    body_fat = np.clip(rng.normal(fat_mean, 6.0, n), 5.0, 60.0)
    bmi_main = 26.5 + 0.35 * (body_fat - fat_mean) + rng.normal(0.0, 3.2, n)
    bmi = np.clip(np.where(adipose, rng.normal(38.0, 2.5, n), bmi_main), 15.0, 60.0)
    height = rng.normal(1.63 + 0.13 * sex, 0.065, n)
    weight = bmi * height**2
    high_bp = rng.random(n) < _sigmoid(-1.0 + 0.06 * (age - 57) + 0.1 * (bmi - 27.4) + 0.3 * sex)
    cardio = rng.random(n) < _sigmoid(-3.0 + 0.07 * (age - 57) + 0.8 * sex + 0.6 * smoking)
    clot = rng.random(n) < _sigmoid(-3.2 + 0.04 * (age - 57) + 0.9 * smoking)
    asthma = rng.random(n) < 0.11
    hayfever = rng.random(n) < 0.23
    other = rng.random(n) < _sigmoid(-1.4 + 0.03 * (age - 57))
    cols = {
        "sex": sex,
        "age": age,
        "smoking": smoking,
        **{f"ethnicity={lv}": (eth == i).astype(float) for i, lv in enumerate(ETHNIC_GROUPS)},
        "townsend": townsend,
        "haemoglobin": haemoglobin,
        "bmi": bmi,
        "weight": weight,
        "body_fat": body_fat,
        "high_bp": high_bp.astype(float),
        "heart_attack_angina_stroke": cardio.astype(float),
        "clot_emphysema": clot.astype(float),
        "asthma": asthma.astype(float),
        "hayfever_eczema": hayfever.astype(float),
        "other_serious": other.astype(float),
    }
    # recorded precision: 3 decimals, which the 6-significant-digit writer preserves
    return {k: np.round(v, 3) for k, v in cols.items()}


def _scaled(X: np.ndarray, names: Sequence[str]) -> dict[str, np.ndarray]:
    out = {}
    for j, name in enumerate(names):
        loc, scale = REFERENCE_SCALE.get(name, (0.0, 1.0))
        out[name] = (X[:, j] - loc) / scale
    return out


def generating_mean(X: np.ndarray, names: Sequence[str], config: SyntheticConfig) -> np.ndarray:
    """Noise-free target of the synthetic generator, planted slope shifts included."""
    z = _scaled(X, names)
    mean = (
        36.0
        + 2.5 * z["age"]
        + 2.5 * z["bmi"]
        + 1.5 * np.logaddexp(0.0, 2.0 * (z["bmi"] - 1.0))
        + 1.0 * z["body_fat"]
        + 3.5 * z["townsend"]
        + 1.0 * np.tanh(z["townsend"])
        - 1.0 * z["haemoglobin"]
        + 0.3 * z["age"] * z["bmi"]
        + 1.5 * z["smoking"]
        + 1.0 * z["sex"]
        + 2.0 * z["high_bp"]
        + 2.5 * z["heart_attack_angina_stroke"]
        + 1.0 * z["other_serious"]
    )
    for level, effect in ETHNICITY_EFFECT.items():
        mean = mean + effect * z[f"ethnicity={level}"]
    for group in config.planted_groups:
        inside = group.members(X, names)
        for feature, shift in group.slope_shift.items():
            mean = mean + inside * shift * z[feature]
    return mean


def generate_synthetic(config: SyntheticConfig, schema: FeatureSchema | None = None) -> Cohort:
    """Draw a cohort over the reference schema with planted inequities.

    Features come from a fixed generative model (sex-dependent body
    composition, age/BMI-driven diagnoses, ethnicity-shifted deprivation).
    The target is ``generating_mean`` plus Gaussian noise whose scale is
    multiplied inside planted groups.  ``oracle_labels`` hold the 1-based
    index of the first planted group a record belongs to, 0 otherwise.
    Targets are clipped to the schema's plausibility window so that a
    written cohort reloads unchanged.
    """
    schema = schema or reference_schema()
    rng = np.random.default_rng(config.seed)
    cols = _draw_features(config.n, rng)
    names = schema.feature_names
    X = np.column_stack([cols[name] for name in names])

    sigma = np.full(config.n, config.base_noise_sigma)
    labels = np.zeros(config.n, dtype=int)
    for gid, group in enumerate(config.planted_groups, start=1):
        inside = group.members(X, names)
        sigma = np.where(inside, sigma * group.noise_multiplier, sigma)
        labels = np.where((labels == 0) & inside, gid, labels)

    noise = rng.standard_normal(config.n)
    target = generating_mean(X, names, config) + sigma * noise
    lo, hi = schema.target_window
    target = np.clip(np.round(target, 3), lo, hi)
    diabetes = (rng.random(config.n) < _sigmoid((target - 48.0) / 2.5)).astype(float)
    return Cohort(
        schema=schema,
        features=X,
        target=target,
        extras={"diabetes": diabetes},
        oracle_labels=labels,
    )


def reference_planted_group(noise_multiplier: float = 3.0, slope_shift=None) -> PlantedGroup:
    """Women with BMI above 33 kg/m2: about 8% of the reference population."""
    return PlantedGroup(
        conditions=(Condition("sex", "==", 0.0), Condition("bmi", ">", 33.0)),
        noise_multiplier=noise_multiplier,
        slope_shift=dict(slope_shift or {}),
        name="female_high_bmi",
    )


def reference_synthetic_config(n: int = 20_000, seed: int = 0) -> SyntheticConfig:
    """Cohort with the single reference planted group (noise tripled)."""
    return SyntheticConfig(n=n, seed=seed, planted_groups=(reference_planted_group(),))


# --------------------------------------------------------------------------
# descriptive tables


def stratified_prevalence(cohort: Cohort, variable: str, condition: str) -> pd.DataFrame:
    """Mean of a binary condition within each level of ``variable``.

    Continuous variables are cut into quintile bins (labelled by their edges);
    binary and categorical variables use their levels.
    """
    try:
        cond = cohort.variable(condition)
        values = cohort.variable(variable)
    except KeyError as exc:
        raise ValueError(str(exc)) from None
    if not np.isin(cond, (0, 1)).all():
        raise ValueError(f"condition {condition!r} is not binary")

    kind = None
    try:
        col = cohort.schema.column(variable)
        kind = col.kind
    except KeyError:
        kind = BINARY if np.isin(values, (0, 1)).all() else CONTINUOUS

    if kind == CATEGORICAL:
        labels = [col.levels[i] for i in values]
        order = list(col.levels)
    elif kind == BINARY:
        labels = [str(int(v)) for v in values]
        order = ["0", "1"]
    else:
        edges = np.unique(np.quantile(values, np.linspace(0, 1, 6)))
        bins = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, len(edges) - 2)
        order = [f"[{fmt(edges[i])}, {fmt(edges[i + 1])}]" for i in range(len(edges) - 1)]
        labels = [order[b] for b in bins]

    frame = pd.DataFrame({"level": labels, "condition": cond})
    table = frame.groupby("level", sort=False)["condition"].agg(["mean", "size"])
    table = table.reindex([lv for lv in order if lv in table.index])
    return pd.DataFrame(
        {
            "level": table.index.to_list(),
            "prevalence": table["mean"].to_numpy(dtype=float),
            "count": table["size"].to_numpy(dtype=int),
        }
    )
