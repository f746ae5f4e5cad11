"""Ground-truth plant: rigid-body attitude dynamics under eddy-current
braking torque, with forward-Euler discretization, finite-difference
linearization, and reproducible disturbance/noise injection.

All internal math is in rad/s and SI units; deg/s conversion happens only
at the config boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .behavioral import TrajectoryDataset

__all__ = [
    "RigidBodyParams",
    "PlantState",
    "NoiseSpec",
    "skew",
    "eddy_torque_target",
    "eddy_force",
    "measured_output",
    "step",
    "linearize",
    "simulate",
]

DEG = np.pi / 180.0


def skew(a) -> np.ndarray:
    """Cross-product matrix of a 3-vector."""
    a = np.asarray(a, dtype=float).ravel()
    return np.array(
        [
            [0.0, -a[2], a[1]],
            [a[2], 0.0, -a[0]],
            [-a[1], a[0], 0.0],
        ]
    )


@dataclass(frozen=True)
class RigidBodyParams:
    """De-tumbling plant parameters.

    j_t: 3x3 inertia tensor (kg m^2), symmetric positive definite.
    m_eff: 3x3 effective magnetic tensor (S m^4).
    b_gt: magnetic field at the target COG (T).
    lambda_gt: field Jacobian tensor at the target COG (T/m).
    r: chaser-to-target position (m).
    omega_c: chaser angular velocity (rad/s).
    ts: sample interval (s).
    """

    j_t: np.ndarray
    m_eff: np.ndarray
    b_gt: np.ndarray
    lambda_gt: np.ndarray
    r: np.ndarray
    omega_c: np.ndarray
    ts: float

    def __post_init__(self):
        for name in ("j_t", "m_eff", "b_gt", "lambda_gt", "r", "omega_c"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), dtype=float)
            )
        if self.ts <= 0:
            raise ValueError("sample interval must be positive")
        j = self.j_t
        if j.shape != (3, 3) or np.linalg.norm(j - j.T) > 1e-9 * np.linalg.norm(j):
            raise ValueError("inertia tensor must be symmetric 3x3")
        if np.any(np.linalg.eigvalsh(0.5 * (j + j.T)) <= 0):
            raise ValueError("inertia tensor must be positive definite")
        object.__setattr__(self, "_j_inv", np.linalg.inv(j))

    @property
    def j_inv(self) -> np.ndarray:
        return self._j_inv


@dataclass(frozen=True)
class PlantState:
    omega_t: np.ndarray
    t: int = 0

    def __post_init__(self):
        w = np.asarray(self.omega_t, dtype=float).ravel()
        if not np.all(np.isfinite(w)):
            raise ValueError("angular velocity must be finite")
        object.__setattr__(self, "omega_t", w)


def eddy_torque_target(omega_t, params: RigidBodyParams) -> np.ndarray:
    """Braking torque on the target from the induced eddy currents."""
    rel = np.asarray(omega_t, dtype=float) - params.omega_c
    b = params.b_gt
    return np.cross(params.m_eff @ np.cross(rel, b), b)


def eddy_force(omega_t, params: RigidBodyParams) -> np.ndarray:
    """Induced force on the target; linear in the relative rate."""
    rel = np.asarray(omega_t, dtype=float) - params.omega_c
    return params.lambda_gt @ (params.m_eff @ np.cross(rel, params.b_gt))


def measured_output(omega_t, params: RigidBodyParams) -> np.ndarray:
    """Reaction torque measured on the chaser."""
    tau_t = eddy_torque_target(omega_t, params)
    f_ct = eddy_force(omega_t, params)
    return -tau_t - np.cross(params.r, f_ct)


def _f(omega_t: np.ndarray, params: RigidBodyParams) -> np.ndarray:
    """One forward-Euler step of the rotational dynamics (no disturbance)."""
    tau_t = eddy_torque_target(omega_t, params)
    gyro = np.cross(omega_t, params.j_t @ omega_t)
    return omega_t + params.ts * (params.j_inv @ (tau_t - gyro))


def step(state: PlantState, params: RigidBodyParams, w=None) -> PlantState:
    """Advance the plant one sample, adding process disturbance ``w``."""
    nxt = _f(state.omega_t, params)
    if w is not None:
        nxt = nxt + np.asarray(w, dtype=float).ravel()
    return PlantState(omega_t=nxt, t=state.t + 1)


def linearize(params: RigidBodyParams, x_tilde):
    """Affine model (A, e, C, r) of the plant around ``x_tilde``.

    Jacobians by central finite differences with per-coordinate step
    h_i = 1e-6 * (1 + |x_i|); the offsets make the affine model exact at
    the expansion point by construction.
    """
    x0 = np.asarray(x_tilde, dtype=float).ravel()
    n = x0.size
    a = np.empty((n, n))
    c = np.empty((3, n))
    for i in range(n):
        h = 1e-6 * (1.0 + abs(x0[i]))
        dx = np.zeros(n)
        dx[i] = h
        a[:, i] = (_f(x0 + dx, params) - _f(x0 - dx, params)) / (2 * h)
        c[:, i] = (
            measured_output(x0 + dx, params) - measured_output(x0 - dx, params)
        ) / (2 * h)
    e = _f(x0, params) - a @ x0
    r = measured_output(x0, params) - c @ x0
    return a, e, c, r


@dataclass(frozen=True)
class NoiseSpec:
    """Reproducible disturbance/noise schedules.

    Each of ``process`` and ``measurement`` is one of:
      ("zero",)
      ("gaussian", sigma)
      ("pulse", t0, t1, amplitude_vector)
    Gaussian streams are drawn from a generator seeded with ``seed`` so a
    fixed spec realizes the same arrays every time.
    """

    process: tuple = ("zero",)
    measurement: tuple = ("zero",)
    seed: int = 0

    def realize(self, horizon: int, dim: int = 3):
        """Materialize (w, v) arrays of shape (horizon, dim)."""
        rng = np.random.default_rng(self.seed)
        w = self._materialize(self.process, horizon, dim, rng)
        v = self._materialize(self.measurement, horizon, dim, rng)
        return w, v

    @staticmethod
    def _materialize(spec, horizon, dim, rng) -> np.ndarray:
        kind = spec[0]
        if kind == "zero":
            return np.zeros((horizon, dim))
        if kind == "gaussian":
            return float(spec[1]) * rng.standard_normal((horizon, dim))
        if kind == "pulse":
            t0, t1 = int(spec[1]), int(spec[2])
            amp = np.asarray(spec[3], dtype=float).ravel()
            out = np.zeros((horizon, dim))
            out[t0:t1] = amp
            return out
        raise ValueError(f"unknown noise kind {kind!r}")


def simulate(
    params: RigidBodyParams,
    x0,
    horizon: int,
    noise: NoiseSpec | None = None,
    start_index: int = 0,
) -> TrajectoryDataset:
    """Run the plant for ``horizon`` samples.

    Returns a dataset with horizon+1 states and horizon outputs; the output
    at step k is measured from the (noise-free) state at step k and then
    perturbed by the measurement schedule. Deterministic under the spec's
    seed; blows up loudly (naming the step) if the state leaves the finite
    range.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    x0 = np.asarray(x0, dtype=float).ravel()
    w, v = (noise or NoiseSpec()).realize(horizon, x0.size)
    states = np.empty((horizon + 1, x0.size))
    outputs = np.empty((horizon, 3))
    states[0] = x0
    for k in range(horizon):
        outputs[k] = measured_output(states[k], params) + v[k]
        states[k + 1] = _f(states[k], params) + w[k]
        if not np.all(np.isfinite(states[k + 1])):
            raise FloatingPointError(f"state became non-finite at step {k + 1}")
    return TrajectoryDataset(
        sample_interval=params.ts,
        states=states,
        outputs=outputs,
        start_index=start_index,
    )
