import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from viking import net

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_problem(rng, loss=None, max_width=6, max_rows=8):
    """A small random network, parameters and batch."""
    loss = loss or rng.choice(net.LOSSES)
    depth = int(rng.integers(1, 3))
    sizes = [int(rng.integers(1, 4))] + [int(rng.integers(2, max_width)) for _ in range(depth)]
    sizes.append(int(rng.integers(2, 4)) if loss == "categorical" else int(rng.integers(1, 3)))
    acts = tuple(rng.choice(["tanh", "elu", "identity"]) for _ in range(depth))
    spec = net.ModelSpec(tuple(sizes), acts, loss, noise_std=float(rng.uniform(0.3, 2.0)))
    B = int(rng.integers(1, max_rows))
    x = rng.standard_normal((B, sizes[0]))
    if loss == "categorical":
        y = rng.integers(0, sizes[-1], size=B)
    else:
        y = rng.standard_normal((B, sizes[-1]))
    params = net.init_params(spec, rng)
    return spec, params, net.Batch(x, y)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, name, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key:<4s}{name}: {detail}")
