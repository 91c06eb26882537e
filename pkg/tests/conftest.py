import numpy as np
import pytest

from template_null import Dataset, DesignSpec, RunConfig, fit_training, parse_design, simulate_outcomes
from template_null import _rng
from template_null.simlab import REFERENCE_TRUTH, TRAIN_DESIGN


def one_subject(y, design, sid="p1"):
    """Dataset for one subject from an array of shape (conditions, trials)."""
    return Dataset.from_array(np.asarray(y, dtype=float)[None], design, [sid])


def from_means(means, weights_g, trials=3, sid="p1"):
    """Subject whose trials scatter symmetrically around the given condition means."""
    design = parse_design(",".join(str(g) for g in weights_g) + f"g x {trials}")
    offsets = np.linspace(-0.1, 0.1, trials)
    y = np.asarray(means, dtype=float)[:, None] + offsets[None, :]
    return one_subject(y, design, sid)


@pytest.fixture(scope="session")
def healthy_train():
    y = simulate_outcomes(REFERENCE_TRUTH, TRAIN_DESIGN, 10, _rng.stream(2024, 99))
    return Dataset.from_array(y, TRAIN_DESIGN, [f"h{i:02d}" for i in range(10)])


@pytest.fixture(scope="session")
def healthy_post(healthy_train):
    return fit_training(healthy_train, run=RunConfig(seed=7))


@pytest.fixture
def scenario_one():
    return DesignSpec((0.25, 0.50), 5)
