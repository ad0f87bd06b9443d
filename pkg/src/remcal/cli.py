"""Command-line entry point: ``remcal <command> [options]``.

Commands share one output directory and hand artifacts to each other through
it: ``generate`` writes the cohort, ``train`` the models and mixture,
``audit`` the calibration report, ``remediate`` and ``sweep`` the
rebalancing tables, and ``report`` a readable summary of whatever exists.

Exit status is 0 on success, 1 on an error (including a missing prerequisite
artifact) and 3 when a configured Gini threshold is not met.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from .calibration import CalibrationReport, calibrate
from .dataset import (
    CATEGORICAL,
    CONTINUOUS,
    Cohort,
    apply_normalization,
    fmt,
    generate_synthetic,
    normalize,
    split,
    write_csv,
)
from .metrics import stratified_nrmse
from .neuralnet import TrainingError, load_checkpoint, save_checkpoint, train_autoencoder, train_regressor
from .pipeline import (
    AUTOENCODER_FILE,
    COHORT_FILE,
    GMM_FILE,
    ORACLE_FILE,
    REGRESSOR_FILE,
    REPORT_FILE,
    SPLIT_FILE,
    SWEEP_FILE,
    MissingArtifactError,
    PipelineConfig,
    RunManifest,
    StageError,
    load_cohort,
    require,
    split_cohort,
    stage_seed,
    write_json,
    write_oracle,
    write_table,
)
from .remediation import multiplier_sweep, remediate_loop
from .segmentation import DegenerateDataError, Gmm, fit_gmm, silhouette
from .svg import emit_latent_plot

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_GINI = 3

__all__ = [
    "main",
    "build_parser",
    "cmd_generate",
    "cmd_train",
    "cmd_audit",
    "cmd_remediate",
    "cmd_sweep",
    "cmd_report",
    "emit_latent_plot",
]


def _out(config: PipelineConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(command: str, config: PipelineConfig) -> RunManifest:
    return RunManifest(command=command, config_hash=config.digest(), seed=config.seed)


def _finish(manifest: RunManifest, out: Path, *paths: Path) -> RunManifest:
    manifest.record(*paths)
    manifest.write(out)
    for stage, seconds in manifest.timings.items():
        print(f"[{manifest.command}] {stage}: {seconds:.2f}s", file=sys.stderr)
    return manifest


# --------------------------------------------------------------------------
# generate


def cmd_generate(config: PipelineConfig) -> RunManifest:
    """Draw the synthetic cohort; write it, its oracle labels and its config."""
    out = _out(config)
    manifest = _manifest("generate", config)
    synthetic = config.synthetic_config()
    with manifest.time("generate"):
        cohort = generate_synthetic(synthetic, config.load_schema())
    paths = [out / COHORT_FILE, out / ORACLE_FILE, out / "synthetic_config.json"]
    write_csv(cohort, paths[0], include_oracle=False)
    write_oracle(cohort, paths[1])
    write_json(synthetic.to_dict(), paths[2])
    return _finish(manifest, out, *paths)


# --------------------------------------------------------------------------
# train


def _stage(name: str, seed: int, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (TrainingError, DegenerateDataError, FloatingPointError, np.linalg.LinAlgError) as exc:
        raise StageError(name, seed, exc) from exc


def cmd_train(config: PipelineConfig) -> RunManifest:
    """Split, normalize, train regressor and autoencoder, fit the mixture."""
    out = _out(config)
    manifest = _manifest("train", config)
    cohort = load_cohort(config)
    with manifest.time("split"):
        raw_train, raw_val = split(cohort, config.train_fraction, seed=stage_seed(config.seed, "split"))
        train, stats = normalize(raw_train)
        val = apply_normalization(raw_val, stats)
    rc, ac, ec = config.regressor_config(), config.autoencoder_config(), config.em_config()
    with manifest.time("regressor"):
        model, history = _stage("regressor", rc.seed, train_regressor, train, val, None, rc)
    with manifest.time("autoencoder"):
        autoencoder = _stage("autoencoder", ac.seed, train_autoencoder, train, None, ac)
    with manifest.time("gmm"):
        gmm = _stage("gmm", ec.seed, fit_gmm, autoencoder.encode(train.features), config.k, ec)

    paths = [out / SPLIT_FILE, out / REGRESSOR_FILE, out / AUTOENCODER_FILE, out / GMM_FILE, out / "history.csv"]
    write_json(
        {
            "train": [int(r) for r in train.row_ids],
            "val": [int(r) for r in val.row_ids],
            "normalization": stats.to_dict(),
        },
        paths[0],
    )
    save_checkpoint(model, paths[1], normalization=stats)
    save_checkpoint(autoencoder, paths[2], normalization=stats)
    gmm.save(paths[3])
    write_table(
        pd.DataFrame(
            {
                "epoch": np.arange(1, len(history.train_loss) + 1),
                "train_mse": history.train_loss,
                "val_mse": history.val_loss if history.val_loss else np.nan,
            }
        ),
        paths[4],
    )
    return _finish(manifest, out, *paths)


def _load_trained(config: PipelineConfig):
    out = Path(config.out)
    regressor, _ = load_checkpoint(require(out, REGRESSOR_FILE))
    autoencoder, _ = load_checkpoint(require(out, AUTOENCODER_FILE))
    gmm = Gmm.load(require(out, GMM_FILE))
    train, val = split_cohort(load_cohort(config), out)
    return regressor, autoencoder, gmm, train, val


# --------------------------------------------------------------------------
# audit


def stratified_table(cohort: Cohort, predictions: np.ndarray) -> pd.DataFrame:
    """NRMSE by the levels of each discrete variable and by mean split of continuous ones."""
    frames = []
    schema = cohort.schema
    for col in schema.columns:
        values = cohort.variable(col.name)
        if col.kind == CONTINUOUS:
            frames.append(stratified_nrmse(predictions, cohort.target, values, "mean", col.name))
            continue
        if col.kind == CATEGORICAL:
            values = np.array(col.levels, dtype=object)[values.astype(int)]
        frames.append(stratified_nrmse(predictions, cohort.target, values, "levels", col.name))
    table = pd.concat(frames, ignore_index=True)
    table["level"] = [fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in table["level"]]
    return table


def _svg_name(variable: str) -> str:
    return f"latent_{''.join(c if c.isalnum() else '_' for c in variable)}.svg"


def cmd_audit(config: PipelineConfig, train_first: bool = False) -> tuple[RunManifest, CalibrationReport]:
    """Calibrate the regressor over the mixture's segments of the training split."""
    out = _out(config)
    if train_first:
        cmd_train(config)
    manifest = _manifest("audit", config)
    regressor, autoencoder, gmm, train, _ = _load_trained(config)
    cc = config.calibration_config()
    with manifest.time("calibrate"):
        report = _stage("calibrate", cc.seed, calibrate, regressor, train, autoencoder, gmm, cc)
    with manifest.time("silhouette"):
        if len(np.unique(report.labels)) > 1:
            sil = silhouette(report.latent, report.labels, seed=cc.seed)
        else:
            sil = float("nan")

    body = report.to_dict()
    body["silhouette"] = sil
    if train.oracle_labels is not None and np.any(train.oracle_labels > 0):
        body["planted_recall"] = report.planted_recall(train.oracle_labels)
    paths = [out / REPORT_FILE, out / "groups.csv", out / "stratified.csv", out / "latent.csv"]
    write_json(body, paths[0])
    write_table(report.group_metrics.to_frame(), paths[1])
    write_table(stratified_table(train, report.predictions), paths[2])
    abs_error = np.abs(report.predictions - train.target)
    write_table(
        pd.DataFrame(
            {
                "row": train.row_ids,
                "z1": report.latent[:, 0],
                "z2": report.latent[:, 1],
                "group": report.labels,
                "abs_error": abs_error,
            }
        ),
        paths[3],
    )
    if report.characterization is not None:
        paths.append(out / "characterization.csv")
        write_table(report.characterization.to_frame(), paths[-1])
        paths.append(out / "pvalues.csv")
        write_table(report.characterization.p_matrix().reset_index(), paths[-1])

    with manifest.time("plots"):
        paths.append(
            emit_latent_plot(report.latent, abs_error, out / "latent_error.svg", "Latent space: absolute error", "|error|")
        )
        for variable in config.color_by:
            try:
                values = train.variable(variable)
            except KeyError:
                raise ValueError(f"cannot colour by unknown variable {variable!r}") from None
            paths.append(
                emit_latent_plot(report.latent, values, out / _svg_name(variable), f"Latent space: {variable}", variable)
            )
    _finish(manifest, out, *paths)
    return manifest, report


# --------------------------------------------------------------------------
# remediate and sweep


def _gini_status(config: PipelineConfig, achieved: float, what: str) -> int:
    print(f"{what} Gini (validation) = {fmt(achieved)}")
    if config.gini_threshold is None:
        return EXIT_OK
    if np.isfinite(achieved) and achieved <= config.gini_threshold:
        print(f"equity criterion met: {fmt(achieved)} <= {fmt(config.gini_threshold)}")
        return EXIT_OK
    print(f"equity criterion NOT met: {fmt(achieved)} > {fmt(config.gini_threshold)}")
    return EXIT_GINI


def sweep_multiplier(out: Path) -> float | None:
    """Gini-minimizing multiplier recorded by an earlier sweep, if any."""
    path = out / SWEEP_FILE
    if not path.exists():
        return None
    return float(json.loads(path.read_text())["best_multiplier"])


def cmd_remediate(config: PipelineConfig, use_sweep: bool = False) -> tuple[RunManifest, int]:
    """Oversample under-served groups and retrain, once per trial.

    With ``use_sweep`` the multiplier comes from ``sweep.json`` when a sweep
    has been run in the output directory.
    """
    out = _out(config)
    require(out, REPORT_FILE)
    source = "config"
    if use_sweep:
        best = sweep_multiplier(out)
        if best is not None:
            config = replace(config, remediation=replace(config.remediation, multiplier=best))
            source = "sweep"
    print(f"multiplier = {fmt(config.remediation.multiplier)} (from {source})")
    manifest = _manifest("remediate", config)
    _, autoencoder, gmm, train, val = _load_trained(config)
    rc = config.remediation_config()
    with manifest.time("remediate"):
        outcome = remediate_loop(train, val, None, autoencoder, gmm, rc)
    if not outcome.trials:
        raise StageError("remediate", rc.seed, RuntimeError("every trial failed"))
    paths = [
        out / "remediation_delta.csv",
        out / "remediation_gini.csv",
        out / "remediation_trials.csv",
        out / "remediation.json",
    ]
    write_table(outcome.delta_table(), paths[0])
    write_table(outcome.gini_table(), paths[1])
    write_table(outcome.trial_frame(), paths[2])
    write_json({**outcome.to_dict(), "multiplier_source": source}, paths[3])
    _finish(manifest, out, *paths)
    return manifest, _gini_status(config, outcome.mean_gini("after", "val"), "post-remediation")


def cmd_sweep(config: PipelineConfig) -> tuple[RunManifest, int]:
    """Remediate at every configured multiplier against shared baselines."""
    out = _out(config)
    require(out, REPORT_FILE)
    manifest = _manifest("sweep", config)
    _, autoencoder, gmm, train, val = _load_trained(config)
    rc = config.remediation_config()
    with manifest.time("sweep"):
        result = multiplier_sweep(train, val, None, autoencoder, gmm, config.multipliers, rc)
    best = result.best_multiplier("val")
    paths = [out / "sweep.csv", out / SWEEP_FILE]
    write_table(result.table(), paths[0])
    write_json(
        {
            "multipliers": result.multipliers,
            "best_multiplier": best,
            "trials": rc.trials,
            "outcomes": [o.to_dict() for o in result.outcomes],
        },
        paths[1],
    )
    _finish(manifest, out, *paths)
    achieved = min(o.mean_gini("after", "val") for o in result.outcomes)
    return manifest, _gini_status(config, achieved, f"best (multiplier {fmt(best)})")


# --------------------------------------------------------------------------
# report


def _markdown_table(frame: pd.DataFrame) -> str:
    cells = [[fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row] for row in frame.itertuples(index=False)]
    lines = ["| " + " | ".join(map(str, frame.columns)) + " |", "|" + "---|" * len(frame.columns)]
    lines += ["| " + " | ".join(row) + " |" for row in cells]
    return "\n".join(lines)


def cmd_report(config: PipelineConfig) -> RunManifest:
    """Summarize the audit and, when present, remediation and sweep outputs."""
    out = _out(config)
    body = json.loads(require(out, REPORT_FILE).read_text())
    manifest = _manifest("report", config)
    eq = body["equity"]
    lines = [
        "# Calibration report",
        "",
        f"- records audited: {body['n']}",
        f"- mixture components: {body['k']}",
        f"- Gini of group NRMSE: {eq['gini'] if eq['defined'] else 'undefined'}",
        f"- groups excluded from Gini (too small): {len(eq['excluded_groups'])}",
        f"- silhouette: {body.get('silhouette')}",
        f"- worst-quartile groups (largest first): {body['worst_quartile_groups']}",
    ]
    if "planted_recall" in body:
        lines.append(f"- planted-group recall of flagged groups: {body['planted_recall']}")
    if body["characterization"]:
        ch = body["characterization"]
        lines += ["", "## Characterization", "", f"{ch['n_rejected']} of {ch['tests']} tests rejected at FDR {ch['alpha']}."]
        by_group: dict[int, list[str]] = {}
        for t in ch["tests_detail"]:
            if t["rejected"]:
                by_group.setdefault(t["group_id"], []).append(t["variable"])
        for gid in body["worst_quartile_groups"]:
            lines.append(f"- group {gid}: {', '.join(by_group.get(gid, [])) or 'none'}")
    for name, heading in (
        ("remediation_delta.csv", "Remediation: NRMSE change (before - after)"),
        ("remediation_gini.csv", "Remediation: Gini"),
        ("sweep.csv", "Multiplier sweep"),
    ):
        path = out / name
        if path.exists():
            lines += ["", f"## {heading}", "", _markdown_table(pd.read_csv(path))]
    if body["warnings"]:
        lines += ["", "## Warnings", ""] + [f"- {w}" for w in body["warnings"]]
    path = out / "report.md"
    path.write_text("\n".join(lines) + "\n")
    return _finish(manifest, out, path)


# --------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file overriding pipeline defaults")
    common.add_argument("--seed", type=int, help="master seed (every stage seed derives from it)")
    common.add_argument("--out", help="output directory (default: $REMCAL_OUT or ./remcal-out)")
    common.add_argument("--k", type=int, help="number of mixture components")
    common.add_argument("--multiplier", type=float, help="oversampling multiplier for remediate")
    common.add_argument("--trials", type=int, help="independent remediation trials")
    common.add_argument("--gini-threshold", type=float, help="equity criterion for the exit status")

    parser = argparse.ArgumentParser(
        prog="remcal",
        description="Audit a regressor for unequal fidelity across latent subpopulations and remediate it.",
        epilog="Exit status: 0 success, 1 error or missing prerequisite, 3 Gini threshold not met.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="draw a synthetic cohort")
    sub.add_parser("train", parents=[common], help="train regressor, autoencoder and mixture")
    audit = sub.add_parser("audit", parents=[common], help="calibrate and characterize")
    audit.add_argument("--train", action="store_true", help="train from scratch before auditing")
    sub.add_parser("remediate", parents=[common], help="oversample under-served groups and retrain")
    sub.add_parser("sweep", parents=[common], help="remediate across the configured multipliers")
    sub.add_parser("report", parents=[common], help="write a markdown summary of the outputs")
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.k is not None:
        overrides["k"] = args.k
    if args.gini_threshold is not None:
        overrides["gini_threshold"] = args.gini_threshold
    rem = {}
    if args.multiplier is not None:
        rem["multiplier"] = args.multiplier
    if args.trials is not None:
        rem["trials"] = args.trials
    if rem:
        overrides["remediation"] = replace(config.remediation, **rem)
    return replace(config, **overrides)


def _multiplier_given(args: argparse.Namespace) -> bool:
    if args.multiplier is not None:
        return True
    if args.config is None:
        return False
    return "multiplier" in json.loads(Path(args.config).read_text()).get("remediation", {})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        if args.command == "generate":
            cmd_generate(config)
        elif args.command == "train":
            cmd_train(config)
        elif args.command == "audit":
            cmd_audit(config, train_first=args.train)
        elif args.command == "remediate":
            return cmd_remediate(config, use_sweep=not _multiplier_given(args))[1]
        elif args.command == "sweep":
            return cmd_sweep(config)[1]
        elif args.command == "report":
            cmd_report(config)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (StageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
