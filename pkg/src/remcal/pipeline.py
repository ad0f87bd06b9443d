"""End-to-end pipeline plumbing: configuration, stage seeds, artifacts, manifests.

Every stage draws its seed from the master seed through ``stage_seed`` so that
one integer fixes the whole run.  All emitted floats go through the
6-significant-digit formatter, which is what makes re-runs byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .calibration import CalibrationConfig
from .dataset import (
    Cohort,
    FeatureSchema,
    NormalizationStats,
    SyntheticConfig,
    apply_normalization,
    fmt,
    load_csv,
    reference_schema,
    reference_synthetic_config,
)
from .neuralnet import TrainConfig
from .remediation import RemediationConfig
from .segmentation import EmConfig

OUT_ENV = "REMCAL_OUT"
DEFAULT_OUT = "remcal-out"

STAGES = ("generate", "split", "regressor", "autoencoder", "gmm", "characterize", "remediate")


class MissingArtifactError(FileNotFoundError):
    """A command was run before the command that produces its inputs."""

    def __init__(self, path: Path, command: str):
        self.path = Path(path)
        self.command = command
        super().__init__(f"missing {self.path.name} in {self.path.parent}; run `remcal {command}` first")


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and its seed."""

    def __init__(self, stage: str, seed: int, cause: Exception):
        self.stage = stage
        self.seed = seed
        super().__init__(f"stage {stage!r} failed (seed {seed}): {cause}")


def default_out() -> str:
    return os.environ.get(OUT_ENV, DEFAULT_OUT)


def stage_seed(master: int, stage: str) -> int:
    """Independent 32-bit seed for one pipeline stage."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    seq = np.random.SeedSequence([int(master), zlib.crc32(stage.encode())])
    return int(seq.generate_state(1)[0])


# --------------------------------------------------------------------------
# configuration


def _from_fields(cls, d: dict, base):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return replace(base, **d)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run depends on.

    Per-stage ``seed`` fields inside the sub-configs are ignored; seeds are
    always derived from ``seed`` (see :func:`stage_seed`).
    """

    out: str = field(default_factory=default_out)
    data: str | None = None
    schema: str | None = None
    seed: int = 0
    k: int = 50
    train_fraction: float = 0.75
    synthetic: SyntheticConfig = field(default_factory=reference_synthetic_config)
    regressor: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20))
    autoencoder: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=50))
    em: EmConfig = field(default_factory=EmConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    remediation: RemediationConfig = field(default_factory=RemediationConfig)
    multipliers: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    gini_threshold: float | None = None
    color_by: tuple[str, ...] = ("sex", "hba1c")

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        object.__setattr__(self, "multipliers", tuple(float(m) for m in self.multipliers))
        object.__setattr__(self, "color_by", tuple(self.color_by))
        if list(self.multipliers) != sorted(self.multipliers) or min(self.multipliers, default=1) < 1:
            raise ValueError("multipliers must be >= 1 and ascending")

    # seeded sub-configs -------------------------------------------------

    def synthetic_config(self) -> SyntheticConfig:
        return replace(self.synthetic, seed=stage_seed(self.seed, "generate"))

    def regressor_config(self) -> TrainConfig:
        return replace(self.regressor, seed=stage_seed(self.seed, "regressor"))

    def autoencoder_config(self) -> TrainConfig:
        return replace(self.autoencoder, seed=stage_seed(self.seed, "autoencoder"))

    def em_config(self) -> EmConfig:
        return replace(self.em, seed=stage_seed(self.seed, "gmm"))

    def calibration_config(self) -> CalibrationConfig:
        return replace(self.calibration, seed=stage_seed(self.seed, "characterize"))

    def remediation_config(self) -> RemediationConfig:
        return replace(
            self.remediation,
            seed=stage_seed(self.seed, "remediate"),
            train_config=self.regressor,
        )

    def load_schema(self) -> FeatureSchema:
        return reference_schema() if self.schema is None else FeatureSchema.load(self.schema)

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        rem = asdict(self.remediation)
        rem.pop("train_config")
        return {
            "out": self.out,
            "data": self.data,
            "schema": self.schema,
            "seed": self.seed,
            "k": self.k,
            "train_fraction": self.train_fraction,
            "synthetic": self.synthetic.to_dict(),
            "regressor": asdict(self.regressor),
            "autoencoder": asdict(self.autoencoder),
            "em": asdict(self.em),
            "calibration": asdict(self.calibration),
            "remediation": rem,
            "multipliers": list(self.multipliers),
            "gini_threshold": self.gini_threshold,
            "color_by": list(self.color_by),
        }

    @classmethod
    def from_dict(cls, d: dict, base: PipelineConfig | None = None) -> PipelineConfig:
        """Overlay a (possibly partial) dict onto ``base`` or the defaults."""
        base = base or cls()
        d = dict(d)
        nested = {}
        if "synthetic" in d:
            nested["synthetic"] = SyntheticConfig.from_dict({**base.synthetic.to_dict(), **d.pop("synthetic")})
        for key, klass in (
            ("regressor", TrainConfig),
            ("autoencoder", TrainConfig),
            ("em", EmConfig),
            ("calibration", CalibrationConfig),
            ("remediation", RemediationConfig),
        ):
            if key in d:
                nested[key] = _from_fields(klass, d.pop(key), getattr(base, key))
        for key in ("multipliers", "color_by"):
            if key in d:
                d[key] = tuple(d[key])
        return _from_fields(cls, {**d, **nested}, base)

    @classmethod
    def load(cls, path: str | Path, base: PipelineConfig | None = None) -> PipelineConfig:
        return cls.from_dict(json.loads(Path(path).read_text()), base)

    def digest(self) -> str:
        """Hash of everything except the output location."""
        body = self.to_dict()
        body.pop("out")
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# deterministic writers


def clean_floats(obj):
    """Recursively round floats to 6 significant digits; non-finite becomes None."""
    if isinstance(obj, dict):
        return {str(k): clean_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_floats(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(fmt(x)) if np.isfinite(x) else None
    return obj


def write_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(clean_floats(obj), indent=2, sort_keys=True) + "\n")


def write_table(frame: pd.DataFrame, path: str | Path) -> None:
    frame.to_csv(path, index=False, float_format="%.6g", na_rep="NA", lineterminator="\n")


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# manifests


@dataclass
class RunManifest:
    """Provenance of one command run.

    Timings are wall-clock and therefore not reproducible; they are kept on
    the object (and printed) but left out of the file written to disk so the
    manifest itself stays byte-identical across re-runs.
    """

    command: str
    config_hash: str
    seed: int
    tool_version: str = __version__
    artifacts: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    def time(self, stage: str):
        return _Timer(self, stage)

    def record(self, *paths: Path) -> None:
        for p in paths:
            self.artifacts[Path(p).name] = file_digest(p)

    def to_dict(self, with_timings: bool = False) -> dict:
        body = {
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "artifacts": dict(sorted(self.artifacts.items())),
        }
        if with_timings:
            body["timings"] = dict(self.timings)
        return body

    def write(self, out: Path) -> Path:
        path = Path(out) / f"manifest_{self.command}.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


class _Timer:
    def __init__(self, manifest: RunManifest, stage: str):
        self.manifest = manifest
        self.stage = stage

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.manifest.timings[self.stage] = time.perf_counter() - self.start
        return False


# --------------------------------------------------------------------------
# artifact layout

COHORT_FILE = "cohort.csv"
ORACLE_FILE = "oracle_labels.csv"
SPLIT_FILE = "split.json"
REGRESSOR_FILE = "regressor.json"
AUTOENCODER_FILE = "autoencoder.json"
GMM_FILE = "gmm.json"
REPORT_FILE = "report.json"
SWEEP_FILE = "sweep.json"

PRODUCER = {
    COHORT_FILE: "generate",
    SPLIT_FILE: "train",
    REGRESSOR_FILE: "train",
    AUTOENCODER_FILE: "train",
    GMM_FILE: "train",
    REPORT_FILE: "audit",
    SWEEP_FILE: "sweep",
}


def require(out: Path, name: str) -> Path:
    path = Path(out) / name
    if not path.exists():
        raise MissingArtifactError(path, PRODUCER[name])
    return path


def write_oracle(cohort: Cohort, path: str | Path) -> None:
    labels = pd.DataFrame({"row": cohort.row_ids, "oracle_label": cohort.oracle_labels})
    labels.to_csv(path, index=False, lineterminator="\n")


def load_cohort(config: PipelineConfig) -> Cohort:
    """The configured CSV, else the generated cohort in the output directory.

    An oracle-label sidecar next to a generated cohort is attached by row.
    """
    schema = config.load_schema()
    if config.data is not None:
        return load_csv(config.data, schema)
    path = require(Path(config.out), COHORT_FILE)
    cohort = load_csv(path, schema)
    sidecar = Path(config.out) / ORACLE_FILE
    if sidecar.exists():
        labels = pd.read_csv(sidecar).set_index("row")["oracle_label"]
        cohort = replace(cohort, oracle_labels=labels.loc[cohort.row_ids].to_numpy(dtype=int))
    return cohort


def split_cohort(cohort: Cohort, out: Path) -> tuple[Cohort, Cohort]:
    """Rebuild the recorded train/validation split, normalized with the train statistics."""
    body = json.loads(require(out, SPLIT_FILE).read_text())
    index = {int(r): i for i, r in enumerate(cohort.row_ids)}
    try:
        train = cohort.take([index[r] for r in body["train"]])
        val = cohort.take([index[r] for r in body["val"]])
    except KeyError as exc:
        raise ValueError(f"recorded split refers to row {exc} absent from the cohort") from None
    stats = NormalizationStats.from_dict(body["normalization"])
    return apply_normalization(train, stats), apply_normalization(val, stats)
