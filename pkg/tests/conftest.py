import numpy as np
import pytest

from quasiboot.model_core import ModelSpec, ObservationTable


def grouped_table(seed, n=300, k=12, p=2, sd=0.8, beta=None, binary=False):
    """Fractional data with one random intercept factor ``g``."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    codes = rng.permutation(np.arange(n) % k)
    b = rng.normal(0, sd, k)
    beta = np.linspace(0.3, -0.3, p + 1) if beta is None else np.asarray(beta)
    mu = 1 / (1 + np.exp(-(beta[0] + X @ beta[1:] + b[codes])))
    y = (rng.random(n) < mu).astype(float) if binary else rng.beta(2 * mu, 2 * (1 - mu))
    names = [f"x{j + 1}" for j in range(p)]
    table = ObservationTable.from_arrays(y, X, names, {"g": [f"L{c}" for c in codes]})
    return table, ModelSpec.build(names, ("g",))


def crossed_table(seed, n=400, ka=10, kb=8):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1))
    a = rng.permutation(np.arange(n) % ka)
    c = rng.permutation(np.arange(n) % kb)
    eta = 0.2 + 0.5 * x[:, 0] + rng.normal(0, 0.7, ka)[a] + rng.normal(0, 0.5, kb)[c]
    mu = 1 / (1 + np.exp(-eta))
    y = rng.beta(3 * mu, 3 * (1 - mu))
    table = ObservationTable.from_arrays(
        y, x, ["x1"], {"a": [f"a{i}" for i in a], "b": [f"b{i}" for i in c]}
    )
    return table, ModelSpec.build(["x1"], ("a", "b"))


@pytest.fixture
def small_grouped():
    return grouped_table(7)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
