from dataclasses import dataclass

import numpy as np
import pytest

from remcal.dataset import Cohort, SyntheticConfig, apply_normalization, generate_synthetic, normalize, reference_planted_group, split
from remcal.neuralnet import Autoencoder, Regressor, TrainConfig, train_autoencoder, train_regressor
from remcal.segmentation import EmConfig, Gmm, fit_gmm


@dataclass
class SmallPipeline:
    train: Cohort
    val: Cohort
    regressor: Regressor
    autoencoder: Autoencoder
    gmm: Gmm


@pytest.fixture(scope="session")
def small_pipeline() -> SmallPipeline:
    """A quickly trained pipeline on 2,000 synthetic records (k = 6)."""
    cohort = generate_synthetic(SyntheticConfig(n=2000, seed=3, planted_groups=(reference_planted_group(),)))
    train, val = split(cohort, 0.75, seed=1)
    train, stats = normalize(train)
    val = apply_normalization(val, stats)
    regressor, _ = train_regressor(train, val, config=TrainConfig(epochs=5, seed=2))
    autoencoder = train_autoencoder(train, config=TrainConfig(epochs=5, seed=3))
    gmm = fit_gmm(autoencoder.encode(train.features), 6, EmConfig(seed=4))
    return SmallPipeline(train, val, regressor, autoencoder, gmm)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# acceptance lines are echoed in the terminal summary so they survive output capture
CRITERION_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion and return the verdict."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}: {detail}"
        CRITERION_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
