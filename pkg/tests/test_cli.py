import json
import re
import shutil

import numpy as np
import pandas as pd
import pytest

from remcal.cli import main
from remcal.dataset import load_csv, reference_schema
from remcal.pipeline import PipelineConfig, stage_seed
from remcal.svg import latent_svg

SMALL = {
    "k": 6,
    "synthetic": {"n": 1500},
    "regressor": {"epochs": 3},
    "autoencoder": {"epochs": 3},
    "em": {"restarts": 1},
    "calibration": {"rounds": 49},
    "remediation": {"trials": 2},
    "multipliers": [1, 2],
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "small.json"
    config.write_text(json.dumps(SMALL))
    out = root / "out"
    for cmd in ("generate", "train", "audit"):
        assert main([cmd, "--config", str(config), "--out", str(out), "--seed", "5"]) == 0
    return root, config, out


def run(workdir, *args, out=None):
    root, config, default_out = workdir
    return main([*args, "--config", str(config), "--out", str(out or default_out), "--seed", "5"])


def digests(out, command):
    return json.loads((out / f"manifest_{command}.json").read_text())["artifacts"]


class TestGenerate:
    def test_cohort_round_trips(self, workdir):
        _, _, out = workdir
        cohort = load_csv(out / "cohort.csv", reference_schema())
        assert len(cohort) == 1500
        oracle = pd.read_csv(out / "oracle_labels.csv")
        assert list(oracle.columns) == ["row", "oracle_label"]
        assert len(oracle) == 1500
        assert "oracle_label" not in pd.read_csv(out / "cohort.csv").columns

    def test_manifest_records_seed_and_hashes(self, workdir):
        _, _, out = workdir
        manifest = json.loads((out / "manifest_generate.json").read_text())
        assert manifest["seed"] == 5
        assert manifest["command"] == "generate"
        assert set(manifest["artifacts"]) >= {"cohort.csv", "oracle_labels.csv"}
        assert "timings" not in manifest

    def test_rerun_gives_identical_hashes(self, workdir, tmp_path):
        assert run(workdir, "generate", out=tmp_path) == 0
        _, _, out = workdir
        assert digests(tmp_path, "generate") == digests(out, "generate")

    def test_seed_override_changes_the_data(self, workdir, tmp_path):
        root, config, out = workdir
        assert main(["generate", "--config", str(config), "--out", str(tmp_path), "--seed", "6"]) == 0
        assert digests(tmp_path, "generate")["cohort.csv"] != digests(out, "generate")["cohort.csv"]


class TestAudit:
    def test_outputs_exist(self, workdir):
        _, _, out = workdir
        for name in ("report.json", "groups.csv", "pvalues.csv", "latent_error.svg", "latent_sex.svg"):
            assert (out / name).exists(), name
        report = json.loads((out / "report.json").read_text())
        assert report["k"] == 6
        assert 0 <= report["planted_recall"] <= 1

    def test_svg_has_one_circle_per_record(self, workdir):
        _, _, out = workdir
        n_train = len(json.loads((out / "split.json").read_text())["train"])
        svg = (out / "latent_error.svg").read_text()
        assert svg.count('class="point"') == n_train

    def test_binary_variable_has_two_legend_classes(self, workdir):
        _, _, out = workdir
        svg = (out / "latent_sex.svg").read_text()
        assert svg.count('class="legend-class"') == 2

    def test_rerun_is_byte_identical(self, workdir, tmp_path):
        _, _, out = workdir
        for name in ("cohort.csv", "oracle_labels.csv"):
            shutil.copy(out / name, tmp_path / name)
        assert run(workdir, "train", out=tmp_path) == 0
        assert run(workdir, "audit", out=tmp_path) == 0
        assert digests(tmp_path, "train") == digests(out, "train")
        assert digests(tmp_path, "audit") == digests(out, "audit")


class TestErrors:
    def test_missing_prerequisite_names_the_command(self, workdir, tmp_path, capsys):
        assert run(workdir, "audit", out=tmp_path) == 1
        err = capsys.readouterr().err
        assert "remcal train" in err or "remcal generate" in err

    def test_remediate_needs_audit(self, workdir, tmp_path, capsys):
        assert run(workdir, "remediate", out=tmp_path) == 1
        assert "remcal audit" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"nonsense": 1}))
        assert main(["generate", "--config", str(bad), "--out", str(tmp_path)]) == 1


class TestRemediate:
    def test_gini_threshold_exit_codes(self, workdir, capsys):
        assert run(workdir, "remediate", "--gini-threshold", "1.0") == 0
        assert run(workdir, "remediate", "--gini-threshold", "0.0") == 3
        assert "NOT met" in capsys.readouterr().out

    def test_single_trial_reports_zero_std(self, workdir):
        _, _, out = workdir
        assert run(workdir, "remediate", "--trials", "1", "--multiplier", "2") == 0
        table = pd.read_csv(out / "remediation_delta.csv")
        assert np.all(table[["std_train", "std_val"]].to_numpy() == 0)
        assert json.loads((out / "remediation.json").read_text())["multiplier_source"] == "config"

    def test_default_multiplier_comes_from_the_sweep(self, workdir, capsys):
        _, _, out = workdir
        assert run(workdir, "sweep") == 0
        best = json.loads((out / "sweep.json").read_text())["best_multiplier"]
        assert run(workdir, "remediate") == 0
        result = json.loads((out / "remediation.json").read_text())
        assert result["multiplier_source"] == "sweep"
        assert result["multiplier"] == best
        assert run(workdir, "report") == 0
        assert (out / "report.md").exists()


class TestSeeding:
    def test_stage_seeds_are_distinct_and_stable(self):
        seeds = {stage_seed(0, s) for s in ("generate", "split", "regressor", "autoencoder", "gmm")}
        assert len(seeds) == 5
        assert stage_seed(3, "gmm") == stage_seed(3, "gmm")

    def test_config_digest_ignores_output_location(self):
        a = PipelineConfig(out="a")
        b = PipelineConfig(out="b")
        assert a.digest() == b.digest()
        assert PipelineConfig(seed=1).digest() != a.digest()


class TestSvg:
    def test_continuous_values_get_a_ramp(self):
        rng = np.random.default_rng(0)
        svg = latent_svg(rng.normal(size=(30, 2)), rng.normal(size=30))
        assert svg.count('class="point"') == 30
        assert svg.count('class="legend-tick"') == 5
        assert len(set(re.findall(r'fill="(#[0-9a-f]{6})"', svg))) > 5
