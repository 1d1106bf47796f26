"""N-particle alignment dynamics and its fixed-step integrator.

The velocity of every particle relaxes toward the interaction-weighted
average velocity of its neighbours; the weight of particle ``j`` in the
update of particle ``i`` is ``U(q_i - q_j)`` divided by the i-th row mass
(plus ``epsilon`` in the regularized variant).  States with all velocities
equal form an invariant manifold; :func:`dist_to_manifold` measures the
distance to it and the ``check_*`` helpers certify the ball-invariance and
stability properties of trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ._kernels import alignment_sums
from .errors import InputError, NumericalError
from .geometry import Domain, PotentialSpec, Torus, wrap_positions

__all__ = [
    "ParticleEnsemble",
    "Plain",
    "Regularized",
    "DynamicsMode",
    "MetricsRecord",
    "Trajectory",
    "rhs",
    "integrate",
    "barycenter_project",
    "dist_to_manifold",
    "check_velocity_ball",
    "check_mean_velocity_ball",
    "default_dt",
]

_DEN_FLOOR = 1e-30


@dataclass(frozen=True)
class Plain:
    """Unmodified alignment weights (row-stochastic)."""


@dataclass(frozen=True)
class Regularized:
    """Alignment weights with ``epsilon`` added to every row denominator."""

    epsilon: float

    def __post_init__(self) -> None:
        if not self.epsilon > 0.0:
            raise InputError(f"epsilon must be positive, got {self.epsilon}")


DynamicsMode = Union[Plain, Regularized]


@dataclass
class ParticleEnsemble:
    """Positions and velocities of ``N`` particles on a domain."""

    domain: Domain
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.p = np.atleast_2d(np.asarray(self.p, dtype=float))
        if self.q.shape != self.p.shape or self.q.ndim != 2:
            raise InputError(
                f"positions {self.q.shape} and velocities {self.p.shape} must share shape (N, d)"
            )
        if self.q.shape[1] != self.domain.d:
            raise InputError(
                f"state dimension {self.q.shape[1]} does not match domain dimension {self.domain.d}"
            )
        if self.q.shape[0] < 1:
            raise InputError("at least one particle is required")
        if not (np.isfinite(self.q).all() and np.isfinite(self.p).all()):
            raise InputError("non-finite entries in initial state")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def d(self) -> int:
        return self.q.shape[1]

    def max_speed(self) -> float:
        return float(np.sqrt(np.max(np.sum(np.square(self.p), axis=1))))


@dataclass
class MetricsRecord:
    """Per-frame diagnostics attached to a trajectory."""

    t: float
    dist_to_manifold: float
    mean_velocity: np.ndarray
    second_moment: float
    max_speed: float
    connected: bool | None = None
    spectral_gap: float | None = None
    flock: bool | None = None


@dataclass
class Trajectory:
    """Saved frames of one integration run.

    ``q`` holds wrapped positions on a torus while ``q_raw`` keeps the
    unwrapped ones (identical in free space); mean-position identities must
    be checked on the unwrapped coordinates.
    """

    domain: Domain
    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    q_raw: np.ndarray
    metrics: list[MetricsRecord] = field(default_factory=list)
    max_speed_overall: float = 0.0
    dt: float = 0.0

    @property
    def n_frames(self) -> int:
        return len(self.times)

    def state_at(self, k: int) -> ParticleEnsemble:
        return ParticleEnsemble(self.domain, self.q[k].copy(), self.p[k].copy())


def _mode_epsilon(mode: DynamicsMode) -> float:
    return mode.epsilon if isinstance(mode, Regularized) else 0.0


def rhs(state: ParticleEnsemble, spec: PotentialSpec, mode: DynamicsMode = Plain()
        ) -> tuple[np.ndarray, np.ndarray]:
    """Time derivative ``(dq, dp)`` of the particle system."""
    if not (np.isfinite(state.q).all() and np.isfinite(state.p).all()):
        raise InputError("non-finite state passed to rhs")
    den, s = alignment_sums(spec, state.domain, state.q, state.p, state.q, state.p)
    eps = _mode_epsilon(mode)
    if eps == 0.0 and float(den.min()) < _DEN_FLOOR:
        raise NumericalError(
            "interaction row mass underflowed below 1e-30 in plain mode; "
            "check the potential configuration"
        )
    dp = s / (den + eps)[:, None]
    return state.p.copy(), dp


def _rhs_arrays(q: np.ndarray, p: np.ndarray, domain: Domain, spec: PotentialSpec,
                eps: float) -> np.ndarray:
    den, s = alignment_sums(spec, domain, q, p, q, p)
    if eps == 0.0 and float(den.min()) < _DEN_FLOOR:
        raise NumericalError(
            "interaction row mass underflowed below 1e-30 in plain mode; "
            "check the potential configuration"
        )
    return s / (den + eps)[:, None]


def _frame_metrics(t: float, p: np.ndarray) -> MetricsRecord:
    n = p.shape[0]
    pbar = p.mean(axis=0)
    centered = p - pbar
    return MetricsRecord(
        t=t,
        dist_to_manifold=float(np.sqrt(np.sum(np.square(centered)))),
        mean_velocity=pbar,
        second_moment=float(np.sum(np.square(p)) / n),
        max_speed=float(np.sqrt(np.max(np.sum(np.square(p), axis=1)))),
    )


def integrate(w0: ParticleEnsemble, spec: PotentialSpec, mode: DynamicsMode,
              T: float, dt: float, save_every: int = 1) -> Trajectory:
    """Integrate the system with the classical fourth-order one-step method.

    The grid is uniform with step ``dt``; every ``save_every``-th step (plus
    the final one) is recorded.  Torus positions are wrapped once per step;
    all displacement evaluations use minimum images, so the right-hand side
    is wrap-consistent.  Deterministic for fixed inputs.
    """
    if not dt > 0.0:
        raise InputError(f"dt must be positive, got {dt}")
    if T < 0.0:
        raise InputError(f"horizon must be nonnegative, got {T}")
    if save_every < 1:
        raise InputError("save_every must be >= 1")
    domain = w0.domain
    eps = _mode_epsilon(mode)
    n_steps = int(round(T / dt))
    q = wrap_positions(domain, w0.q.copy())
    q_raw = w0.q.copy()
    p = w0.p.copy()

    times = [0.0]
    frames_q = [q.copy()]
    frames_p = [p.copy()]
    frames_q_raw = [q_raw.copy()]
    metrics = [_frame_metrics(0.0, p)]
    max_speed = metrics[0].max_speed

    for step in range(1, n_steps + 1):
        k1p = _rhs_arrays(q, p, domain, spec, eps)
        k1q = p
        k2p = _rhs_arrays(q + 0.5 * dt * k1q, p + 0.5 * dt * k1p, domain, spec, eps)
        k2q = p + 0.5 * dt * k1p
        k3p = _rhs_arrays(q + 0.5 * dt * k2q, p + 0.5 * dt * k2p, domain, spec, eps)
        k3q = p + 0.5 * dt * k2p
        k4p = _rhs_arrays(q + dt * k3q, p + dt * k3p, domain, spec, eps)
        k4q = p + dt * k3p

        dq = (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        q_raw = q_raw + dq
        q = wrap_positions(domain, q + dq)
        p = p + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)

        if not (np.isfinite(p).all() and np.isfinite(q).all()):
            raise NumericalError(
                f"non-finite state at step {step} (t = {step * dt:.6g}); "
                "reduce dt or check the configuration"
            )
        speed = float(np.sqrt(np.max(np.sum(np.square(p), axis=1))))
        max_speed = max(max_speed, speed)

        if step % save_every == 0 or step == n_steps:
            t = step * dt
            times.append(t)
            frames_q.append(q.copy())
            frames_p.append(p.copy())
            frames_q_raw.append(q_raw.copy())
            metrics.append(_frame_metrics(t, p))

    return Trajectory(
        domain=domain,
        times=np.asarray(times),
        q=np.stack(frames_q),
        p=np.stack(frames_p),
        q_raw=np.stack(frames_q_raw),
        metrics=metrics,
        max_speed_overall=max_speed,
        dt=dt,
    )


def barycenter_project(p: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto the subspace of equal rows."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    mean = p.mean(axis=0)
    return np.tile(mean, (p.shape[0], 1))


def dist_to_manifold(state: ParticleEnsemble) -> float:
    """Distance from the state to the equal-velocity manifold, ``|p - mean(p)|``."""
    centered = state.p - state.p.mean(axis=0)
    return float(np.sqrt(np.sum(np.square(centered))))


@dataclass
class BallReport:
    """Whether all speeds stayed inside the initial speed ball."""

    radius: float
    max_speed: float
    tolerance: float
    ok: bool


@dataclass
class MeanBallReport:
    """Whether velocities stayed near the initial mean and the manifold."""

    epsilon: float
    max_dev_from_initial_mean: float
    max_dist_to_manifold: float
    tolerance: float
    ok: bool


def check_velocity_ball(traj: Trajectory, r: float, tolerance: float = 1e-9) -> BallReport:
    """Certify that speeds never exceeded ``r`` (up to ``tolerance``)."""
    frame_max = float(max(rec.max_speed for rec in traj.metrics))
    max_speed = max(frame_max, traj.max_speed_overall)
    return BallReport(radius=r, max_speed=max_speed, tolerance=tolerance,
                      ok=max_speed <= r + tolerance)


def check_mean_velocity_ball(traj: Trajectory, epsilon: float,
                             tolerance: float = 1e-9) -> MeanBallReport:
    """Certify stability around the initial mean velocity.

    Checks ``|p(t) - mean(p(0))| <= epsilon`` and the induced neighbourhood
    bound ``dist(w(t), I) <= 2 epsilon`` on every saved frame.
    """
    p0_mean = traj.p[0].mean(axis=0)
    devs = traj.p - p0_mean[None, None, :]
    max_dev = float(np.max(np.sqrt(np.sum(np.square(devs), axis=(1, 2)))))
    max_dist = float(max(rec.dist_to_manifold for rec in traj.metrics))
    ok = (max_dev <= epsilon + tolerance) and (max_dist <= 2.0 * epsilon + tolerance)
    return MeanBallReport(epsilon=epsilon, max_dev_from_initial_mean=max_dev,
                          max_dist_to_manifold=max_dist, tolerance=tolerance, ok=ok)


def interaction_range(spec: PotentialSpec) -> float:
    """Length scale of the interaction used by the default step rule."""
    for name in ("radius", "width", "decay"):
        if hasattr(spec, name):
            return float(getattr(spec, name))
    raise InputError(f"unknown potential family {type(spec).__name__}")


def default_dt(spec: PotentialSpec, w0: ParticleEnsemble) -> float:
    """Default step: 1e-3 times interaction range over maximal initial speed."""
    speed = max(w0.max_speed(), 1e-6)
    return 1e-3 * interaction_range(spec) / speed
