from pathlib import Path

import numpy as np
import pytest

from fairproxy.core import LabeledDataset
from fairproxy.oracle import LinearThresholdHypothesis
from fairproxy.splitter import RandomizedSplitter
from fairproxy.tree import ProxyTree

ROOT = Path(__file__).resolve().parents[1]
ADULT = ROOT / "data" / "adult.csv"


def make_dataset(X, z, K=None, y=None):
    X = np.asarray(X, dtype=np.float64)
    z = np.asarray(z, dtype=np.int64)
    K = int(z.max()) + 1 if K is None else K
    y = np.zeros(len(z), dtype=np.int8) if y is None else y
    return LabeledDataset(X, y, z, K)


def correlated_data(n, strength, rates=(0.6, 0.3, 0.1), p=4, seed=0):
    """Groups drawn from ``rates``; feature ``j < K`` is ``strength * 1[z=j]`` plus noise."""
    rng = np.random.default_rng(seed)
    K = len(rates)
    z = rng.choice(K, size=n, p=rates)
    while len(np.unique(z)) < K:
        z = rng.choice(K, size=n, p=rates)
    X = rng.normal(size=(n, p))
    X[:, :K] += strength * np.eye(K)[z]
    X = (X - X.min(axis=0)) / (X.max(axis=0) - X.min(axis=0))
    return make_dataset(X, z, K)


def separable_data(n=600, seed=0, minority=0.2):
    """Two groups; the sign of the first (centred) feature determines the group."""
    rng = np.random.default_rng(seed)
    z = (rng.random(n) < minority).astype(np.int64)
    x1 = np.where(z == 1, rng.uniform(0.55, 1.0, n), rng.uniform(0.0, 0.45, n))
    X = np.column_stack([x1, rng.random(n)])
    return make_dataset(X, z, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def adult_path():
    if not ADULT.exists():
        pytest.skip("data/adult.csv not present; run scripts/prepare_adult.py")
    return ADULT


def write_synthetic_csv(path, n=600, seed=0):
    """Headered CSV: a colour column tied to the group, a noisy age, a binary label."""
    rng = np.random.default_rng(seed)
    groups = np.array(["north", "south", "east"])
    z = rng.choice(3, size=n, p=[0.6, 0.3, 0.1])
    colours = np.array(["red", "green", "blue"])
    colour = np.where(rng.random(n) < 0.7, colours[z], colours[rng.integers(0, 3, n)])
    age = np.round(30 + 10 * z + rng.normal(0, 8, n)).astype(int)
    label = np.where(rng.random(n) < 0.3, ">50K", "<=50K")
    lines = ["age,colour,weight,group,income"]
    lines += [f"{a},{c},{rng.integers(1, 9)},{groups[g]},{y}"
              for a, c, g, y in zip(age, colour, z, label)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def threshold(j, t, p, above=True):
    """Deterministic hypothesis ``1[x_j > t]`` (or ``<`` when ``above`` is false)."""
    coef = np.zeros(p)
    coef[j] = -1.0 if above else 1.0
    return LinearThresholdHypothesis(coef, t if above else -t)


def depth_two_tree():
    root = RandomizedSplitter.from_hypotheses([threshold(0, 0.5, 2), threshold(0, 0.2, 2),
                                               threshold(1, 0.5, 2)])
    left = RandomizedSplitter.from_hypotheses([threshold(1, 0.3, 2), threshold(1, 0.7, 2)])
    return ProxyTree(2, {"0": root, "00": left}, ("000", "001", "01"), 20)
