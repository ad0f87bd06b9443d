"""Acceptance suite: one PASS/FAIL line per criterion, at its stated tolerance.

The end-to-end criteria (6 and 7) share one full-scale run at master seed 0
(n = 20,000, k = 50).  Expect roughly 6 to 10 minutes on a single core.
"""

import filecmp
import json
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy import stats as sps

from remcal.cli import cmd_audit, cmd_generate, cmd_remediate, cmd_sweep, cmd_train, main
from remcal.metrics import gini, nrmse
from remcal.neuralnet import MlpSpec, loss_and_grad
from remcal.pipeline import PipelineConfig
from remcal.segmentation import EmConfig, fit_gmm
from remcal.stats import bh_procedure, permutation_test

from .test_stats import brute_force_bh

DEFINING = {"sex", "bmi"}


def inversions(values) -> int:
    return int(np.sum(np.diff(np.asarray(values, dtype=float)) > 0))


@pytest.fixture(scope="module")
def reference_run(tmp_path_factory):
    """generate, train and audit at the reference configuration."""
    config = PipelineConfig(out=str(tmp_path_factory.mktemp("reference")), seed=0)
    start = time.perf_counter()
    cmd_generate(config)
    cmd_train(config)
    _, report = cmd_audit(config)
    return config, report, time.perf_counter() - start


class TestAcceptance:
    def test_1_gradient_correctness(self, criterion):
        rng = np.random.default_rng(2024)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(120):
            depth = int(rng.integers(1, 4))
            widths = (int(rng.integers(1, 8)), *rng.integers(1, 9, size=depth), int(rng.integers(1, 3)))
            spec = MlpSpec(tuple(int(w) for w in widths))
            params = rng.normal(0, 0.7, spec.parameter_count())
            X = rng.normal(0, 1, (int(rng.integers(2, 12)), widths[0]))
            y = rng.normal(0, 1, (len(X), widths[-1]))
            _, grad = loss_and_grad(spec, params, X, y)
            num = np.empty_like(params)
            h = 1e-6
            for i in range(len(params)):
                up, down = params.copy(), params.copy()
                up[i] += h
                down[i] -= h
                num[i] = (loss_and_grad(spec, up, X, y)[0] - loss_and_grad(spec, down, X, y)[0]) / (2 * h)
            denom = max(np.linalg.norm(grad), np.linalg.norm(num), 1e-12)
            worst = max(worst, np.linalg.norm(grad - num) / denom)
        elapsed = time.perf_counter() - start
        ok = worst < 1e-4 and elapsed < 30
        assert criterion(1, "gradient check", ok, f"120 configs, max rel err {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 30s)")

    def test_2_architecture(self, criterion):
        count = MlpSpec((20, 16, 16, 8, 1)).parameter_count()
        assert criterion(2, "architecture", count == 753, f"(20,16,16,8,1) has {count} parameters (expected 753)")

    def test_3_em_soundness(self, criterion):
        rng = np.random.default_rng(3)
        start = time.perf_counter()
        worst_drop = 0.0
        for i in range(50):
            n = int(rng.integers(60, 400))
            centres = rng.normal(0, 4, (int(rng.integers(1, 5)), 2))
            pts = centres[rng.integers(0, len(centres), n)] + rng.normal(0, 1, (n, 2)) * rng.uniform(0.2, 2, 2)
            gmm = fit_gmm(pts, int(rng.integers(1, 6)), EmConfig(seed=i))
            worst_drop = max(worst_drop, float(-np.min(np.diff(gmm.trace), initial=0.0)))
        blob_rng = np.random.default_rng(0)
        blobs = np.vstack([blob_rng.normal([0, 0], 0.5, (1000, 2)), blob_rng.normal([10, 10], 0.5, (1000, 2))])
        means = fit_gmm(blobs, 2, EmConfig(seed=0)).means
        means = means[np.argsort(means[:, 0])]
        err = float(np.max(np.abs(means - [[0, 0], [10, 10]])))
        elapsed = time.perf_counter() - start
        ok = worst_drop <= 1e-9 and err < 0.1 and elapsed < 60
        assert criterion(
            3,
            "EM soundness",
            ok,
            f"max log-lik drop {worst_drop:.1e} (<= 1e-9), two-blob mean error {err:.3f} (< 0.1), {elapsed:.1f}s",
        )

    def test_4_metric_oracles(self, criterion):
        start = time.perf_counter()
        g123 = gini([1.0, 2.0, 3.0])
        g_const = max(gini([c] * n) for c in (0.1, 0.7, 3.3) for n in (2, 5, 50))
        y = np.random.default_rng(0).normal(40, 6, 500)
        unit = nrmse(np.full(500, y.mean()), y)
        rng = np.random.default_rng(4)
        grid = np.array([1 / 1001, 0.002, 0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.1, 0.5, 1.0])
        mismatches = 0
        for _ in range(5000):
            m = int(rng.integers(1, 13))
            p = rng.choice(grid, m) if rng.random() < 0.5 else rng.uniform(1e-4, 1, m)
            alpha = float(rng.choice([0.01, 0.05, 0.1]))
            mismatches += not np.array_equal(bh_procedure(p, alpha).rejected, brute_force_bh(p, alpha))
        elapsed = time.perf_counter() - start
        ok = (
            abs(g123 - 0.2222) <= 1e-4
            and g_const == 0
            and abs(unit - 1.0) <= 1e-9
            and mismatches == 0
            and elapsed < 60
        )
        assert criterion(
            4,
            "metric oracles",
            ok,
            f"gini([1,2,3])={g123:.6f}, gini(const)={g_const}, NRMSE(mean)={unit:.12f}, "
            f"BH mismatches {mismatches}/5000",
        )

    def test_5_permutation_calibration(self, criterion):
        rng = np.random.default_rng(5)
        start = time.perf_counter()
        ps = []
        while len(ps) < 500:
            values = rng.normal(size=80)
            mask = rng.random(80) < 0.3
            if 0 < mask.sum() < 80:
                ps.append(permutation_test(values, mask, rounds=1000, seed=len(ps)).p_value)
        ks = sps.kstest(ps, "uniform").pvalue
        shifted = np.r_[np.zeros(50), np.full(50, 5.0)]
        floor = permutation_test(shifted, np.arange(100) >= 50, rounds=1000).p_value
        elapsed = time.perf_counter() - start
        ok = ks > 0.05 and abs(floor - 1 / 1001) < 1e-15 and elapsed < 120
        assert criterion(
            5,
            "permutation calibration",
            ok,
            f"KS p={ks:.3f} (> 0.05) over 500 nulls, floor={floor:.6f} (1/1001), {elapsed:.1f}s",
        )

    def test_6_detection_power(self, reference_run, criterion):
        config, report, elapsed = reference_run
        recall = json.loads((Path(config.out) / "report.json").read_text())["planted_recall"]
        flagged = report.worst_quartile_groups
        hits = {g: sorted(set(report.characterization.rejected_variables(g)) & DEFINING) for g in flagged}
        ok = recall >= 0.5 and flagged and all(hits.values()) and elapsed < 600
        assert criterion(
            6,
            "detection power",
            bool(ok),
            f"recall {recall:.3f} (>= 0.5) over groups {flagged}, defining variable rejected in "
            f"{sum(map(bool, hits.values()))}/{len(flagged)} groups, {elapsed:.0f}s (< 600s)",
        )

    def test_7_remediation_signs_and_trends(self, reference_run, criterion):
        config, _, _ = reference_run
        out = Path(config.out)
        start = time.perf_counter()
        cmd_sweep(config)
        cmd_remediate(config, use_sweep=True)
        elapsed = time.perf_counter() - start
        result = json.loads((out / "remediation.json").read_text())
        under = result["nrmse_delta"]["train"]["underserved"]["mean"]
        base = result["nrmse_delta"]["train"]["base"]["mean"]
        gini_delta = result["gini"]["train"]["delta_mean"]
        sweep = pd.read_csv(out / "sweep.csv")
        trend = sweep["nrmse_train_underserved"].to_numpy()
        signs_ok = under > 0 and base < 0 and gini_delta > 0
        trend_ok = inversions(trend) <= 1
        ok = signs_ok and trend_ok and elapsed < 1800
        assert criterion(
            7,
            "remediation signs and trends",
            ok,
            f"multiplier {result['multiplier']:g} ({result['multiplier_source']}), training deltas: "
            f"under-served {under:+.4f} (> 0), base {base:+.4f} (< 0), Gini {gini_delta:+.4f} (> 0); "
            f"under-served NRMSE by multiplier {np.round(trend, 4).tolist()} "
            f"({inversions(trend)} inversions, <= 1); {elapsed:.0f}s (< 1800s)",
        )

    def test_7_sweep_gini_trend(self, reference_run, criterion):
        config, _, _ = reference_run
        path = Path(config.out) / "sweep.csv"
        if not path.exists():
            pytest.skip("needs the sweep from the criterion 7 run")
        ginis = pd.read_csv(path)["gini_train"].to_numpy()
        ok = inversions(ginis) <= 1
        assert criterion(7, "sweep Gini trend", ok, f"Gini by multiplier {np.round(ginis, 4).tolist()} (<= 1 inversion)")

    def test_8_reproducibility(self, reference_run, tmp_path, criterion):
        small = tmp_path / "small.json"
        small.write_text(
            json.dumps(
                {
                    "k": 6,
                    "synthetic": {"n": 1500},
                    "regressor": {"epochs": 3},
                    "autoencoder": {"epochs": 3},
                    "calibration": {"rounds": 99},
                    "remediation": {"trials": 2},
                    "multipliers": [1, 2],
                }
            )
        )
        runs = [tmp_path / "a", tmp_path / "b"]
        for out in runs:
            for cmd in ("generate", "train", "audit", "sweep", "remediate", "report"):
                assert main([cmd, "--config", str(small), "--out", str(out), "--seed", "7"]) == 0
        names = sorted(p.name for p in runs[0].iterdir())
        _, mismatch, errors = filecmp.cmpfiles(runs[0], runs[1], names, shallow=False)

        config, _, _ = reference_run
        again = PipelineConfig(out=str(tmp_path / "reference"), seed=config.seed)
        cmd_generate(again)
        cmd_train(again)
        cmd_audit(again)
        full = sorted(p.name for p in Path(again.out).iterdir())
        _, full_mismatch, full_errors = filecmp.cmpfiles(Path(config.out), Path(again.out), full, shallow=False)

        bad = mismatch + errors + full_mismatch + full_errors
        assert criterion(
            8,
            "reproducibility",
            not bad,
            f"{len(names)} files from all six commands (small config) and {len(full)} files from the "
            f"reference generate/train/audit re-run; differing: {bad or 'none'}",
        )
