import numpy as np
import pytest
from hypothesis import given, strategies as st

from viking import checkpoint
from viking.errors import FormatError, IncompatibleCheckpointError
from viking.net import ModelSpec
from viking.posterior import Posterior

SPEC = ModelSpec((2, 3, 2), ("tanh",), "categorical")


@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_roundtrip_is_bit_exact(seed, a, b):
    post = Posterior(np.random.default_rng(seed).standard_normal(SPEC.n_params), a, b)
    back, spec, header = checkpoint.loads(checkpoint.dumps(post, SPEC, seed=seed))
    np.testing.assert_array_equal(back.theta_hat, post.theta_hat)
    assert (back.log_alpha, back.log_sigma_im) == (post.log_alpha, post.log_sigma_im)
    assert spec == SPEC and header["seed"] == seed


def test_point_mass_roundtrip():
    post = Posterior.point_mass(np.ones(SPEC.n_params))
    back, _, _ = checkpoint.loads(checkpoint.dumps(post, SPEC))
    assert back.sigma_ker == 0.0 and back.sigma_im == 0.0


def test_layout_header_then_little_endian_values():
    post = Posterior(np.arange(SPEC.n_params, dtype=float), 1.5, -0.5)
    blob = checkpoint.dumps(post, SPEC)
    assert blob[:8] == b"VIKNGCKP"
    tail = np.frombuffer(blob[-8 * (SPEC.n_params + 2):], dtype="<f8")
    assert tail[0] == 1.5 and tail[1] == -0.5 and tail[-1] == SPEC.n_params - 1


@pytest.mark.parametrize("mutate,field", [
    (lambda b: b"XXXXXXXX" + b[8:], "magic"),
    (lambda b: b[:8] + b"\x02" + b[9:], "version"),
    (lambda b: b[:-8], "payload"),
    (lambda b: b.replace(b'"tanh"', b'"relu"'), "model_hash"),
])
def test_corruption_is_detected(mutate, field):
    blob = checkpoint.dumps(Posterior(np.zeros(SPEC.n_params)), SPEC)
    with pytest.raises(FormatError) as info:
        checkpoint.loads(mutate(blob))
    assert info.value.field == field


def test_dimension_mismatch_on_save():
    with pytest.raises(IncompatibleCheckpointError):
        checkpoint.dumps(Posterior(np.zeros(3)), SPEC)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "sub" / "ck.vkp"
    checkpoint.save(target, Posterior(np.zeros(SPEC.n_params)), SPEC)
    checkpoint.save(target, Posterior(np.ones(SPEC.n_params)), SPEC)
    assert [p.name for p in target.parent.iterdir()] == ["ck.vkp"]
    assert checkpoint.load(target)[0].theta_hat[0] == 1.0
