import numpy as np
import pytest

from ddmhe import mhe
from ddmhe.behavioral import TrajectoryDataset
from ddmhe.stability import (
    DualRankError,
    LmiRegion,
    SynthesisError,
    build_dual_data,
    extract_gain,
    synthesize,
    verify_constraints,
)
from helpers import random_offset_system, simulate_affine


def _noisy_dataset(seed=0, n=3, p=2, steps=120, sigma=1e-4):
    rng = np.random.default_rng(seed)
    a, e, c, r = random_offset_system(rng, n, p)
    ds = simulate_affine(
        a, e, c, r, rng.standard_normal(n), steps,
        w=sigma * rng.standard_normal((steps, n)),
        v=sigma * rng.standard_normal((steps, p)),
    )
    return (a, e, c, r), ds


def test_lmi_region_validation():
    with pytest.raises(ValueError, match="radius"):
        LmiRegion(1.0)
    with pytest.raises(ValueError, match="radius"):
        LmiRegion(0.0)
    assert LmiRegion(0.5).radius == 0.5


def test_dual_data_rank_gates():
    flat = TrajectoryDataset(
        sample_interval=0.01,
        states=np.ones((30, 3)),
        outputs=np.ones((29, 2)),
    )
    with pytest.raises(DualRankError, match="rank"):
        build_dual_data(flat)
    # exactly linear noise-free data fails the excitation condition ...
    (a, e, c, r), _ = _noisy_dataset(seed=1, sigma=0.0)
    rng = np.random.default_rng(2)
    clean = simulate_affine(a, np.zeros(3), c, np.zeros(2),
                            rng.standard_normal(3), 80)
    with pytest.raises(DualRankError, match="X1; Y0"):
        build_dual_data(clean, differenced=False)
    # ... unless the caller opts out
    dd = build_dual_data(clean, differenced=False, require_full_rank=False)
    assert dd.n == 3 and dd.p == 2


def test_dual_data_shapes():
    _, ds = _noisy_dataset(seed=3)
    dd = build_dual_data(ds)
    assert dd.x0.shape[0] == ds.n
    assert dd.u0.shape[0] == ds.p
    assert dd.x0.shape[1] == dd.x1.shape[1] == dd.u0.shape[1]


def test_synthesize_places_poles_and_certifies():
    (a, e, c, r), ds = _noisy_dataset(seed=4)
    result = synthesize(ds, r_d0=0.9)
    assert result.rho0 < 1.0
    assert result.mu0 >= 0.0
    # all LMI blocks strictly satisfied at the returned point
    assert all(m >= -1e-7 for m in result.lmi_margins.values())
    # every closed-loop eigenvalue inside the certified circle
    eigs = np.abs(np.linalg.eigvals(result.a_closed))
    assert eigs.max() < result.radius + 1e-6
    assert verify_constraints(result, rho=0.999, mu=1e9)


def test_verify_constraints_floor_enforced_by_params():
    _, ds = _noisy_dataset(seed=5)
    result = synthesize(ds, r_d0=0.9)
    rho0 = 6.0 * np.linalg.eigvalsh(result.a_closed.T @ result.a_closed)[-1]
    mu0 = 6.0 * np.linalg.eigvalsh(result.gain.T @ result.gain)[-1]
    assert not verify_constraints(result, rho=rho0 * 0.5, mu=mu0 + 1.0)
    if rho0 < 0.9:
        params = mhe.MheParams(
            rho=0.9, mu=max(mu0 * 2, 1.0), horizon=20,
            prior=np.zeros(ds.n), synthesis=result,
        )
        assert params.synthesis is result
    with pytest.raises(ValueError, match="stability floor"):
        mhe.MheParams(
            rho=0.9, mu=mu0 * 0.5 if mu0 > 0 else -1.0, horizon=20,
            prior=np.zeros(ds.n), synthesis=result,
        )


def test_extract_gain_rejects_degenerate_combiner():
    _, ds = _noisy_dataset(seed=6)
    dd = build_dual_data(ds)
    with pytest.raises(SynthesisError, match="near-singular"):
        extract_gain(dd, np.zeros((dd.width, dd.n)))
