"""Mean-field machinery: velocity-increment field, characteristics flow,
transport distance, convergence and stability experiments, and the fixed
point iteration for the kinetic equation.

Measures are uniform-weight point clouds in phase space.  A measure curve
is a time grid of clouds, interpolated piecewise-constant from the left;
characteristics integrate the non-autonomous system driven by such a
curve, while :func:`evolve_cloud` runs the fully coupled empirical
dynamics (which is itself a measure solution of the kinetic equation).
The transport distance is the exact optimal-assignment cost under the
phase-space metric, clipped at one; it dominates the bounded-Lipschitz
distance, so every upper bound certified with it holds a fortiori.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._kernels import alignment_sums
from .dynamics import DynamicsMode, Plain, Regularized, Trajectory
from .errors import ConfigError, DegenerateInputError, InputError, NumericalError
from .geometry import (
    CompactBump,
    Domain,
    GaussianPeriodized,
    LogGradBounded,
    PotentialSpec,
    Torus,
    displacement_table,
    potential_inf_lower,
)

__all__ = [
    "PointCloud",
    "MeasureCurve",
    "FieldSpec",
    "FieldConstants",
    "mean_field_M",
    "mean_field_batch",
    "lipschitz_probe",
    "LipschitzReport",
    "flow_characteristics",
    "FlowPath",
    "transport_distance",
    "evolve_cloud",
    "mean_field_convergence",
    "stability_bound_check",
    "StabilityReport",
    "picard_iterate",
    "PicardResult",
    "curve_distance",
    "field_constants",
]

_SPEED_TOL = 1e-9


@dataclass
class PointCloud:
    """Uniform-weight empirical measure on phase space ``X x B_1``."""

    domain: Domain
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.x.shape != self.v.shape or self.x.shape[1] != self.domain.d:
            raise InputError(
                f"cloud arrays must share shape (n, {self.domain.d}); "
                f"got {self.x.shape} and {self.v.shape}"
            )
        speeds = np.sqrt(np.sum(np.square(self.v), axis=1))
        if speeds.size and float(speeds.max()) > 1.0 + _SPEED_TOL:
            raise InputError(
                f"cloud velocities must lie in the unit ball; max speed {speeds.max():.6g}"
            )

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass
class MeasureCurve:
    """Time grid of clouds with piecewise-constant-left interpolation."""

    domain: Domain
    times: np.ndarray
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        if self.x.shape[0] != len(self.times) or self.v.shape != self.x.shape:
            raise InputError("curve arrays must have one cloud per grid time")
        if np.any(np.diff(self.times) <= 0.0):
            raise InputError("curve grid times must be strictly increasing")

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def index_at(self, t: float) -> int:
        idx = int(np.searchsorted(self.times, t + 1e-12, side="right") - 1)
        return min(max(idx, 0), len(self.times) - 1)

    def cloud_at(self, t: float) -> PointCloud:
        k = self.index_at(t)
        return PointCloud(self.domain, self.x[k].copy(), self.v[k].copy())

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "MeasureCurve":
        return cls(domain=traj.domain, times=traj.times.copy(),
                   x=traj.q.copy(), v=traj.p.copy())


@dataclass(frozen=True)
class FieldSpec:
    """Interaction family plus dynamics mode driving the mean-field increment.

    ``zero_overlap_zero`` selects the convention that forces the increment
    to vanish when the interaction mass at the evaluation point is zero
    (the literal regularized formula returns ``-v`` there instead).
    """

    spec: PotentialSpec
    mode: DynamicsMode = Plain()
    zero_overlap_zero: bool = False

    @property
    def epsilon(self) -> float:
        return self.mode.epsilon if isinstance(self.mode, Regularized) else 0.0


def _validate_field(field: FieldSpec, domain: Domain) -> None:
    if field.spec.d != domain.d:
        raise ConfigError(
            f"field dimension {field.spec.d} does not match domain dimension {domain.d}"
        )
    if isinstance(field.mode, Plain):
        if not isinstance(domain, Torus):
            raise ConfigError(
                "plain-mode mean-field dynamics requires a torus domain "
                "(free space needs the regularized mode)"
            )
        if not potential_inf_lower(field.spec, domain) > 0.0:
            raise ConfigError(
                "plain-mode mean-field dynamics requires an interaction with "
                "positive infimum on the torus (periodized smooth families)"
            )


def _field_rhs(x: np.ndarray, v: np.ndarray, cloud_x: np.ndarray, cloud_v: np.ndarray,
               field: FieldSpec, domain: Domain, literal: bool = False) -> np.ndarray:
    """Velocity increment of targets ``(x, v)`` against a source cloud (batch).

    The default is the convention of the regularized particle system itself:
    the interaction-weighted average of the velocity differences, with
    ``epsilon`` added to the denominator.  Its velocity divergence is
    ``-d * mass/(mass + epsilon)`` and it vanishes where the interaction
    mass does, which the volume-transport and entropy laws rely on.  With
    ``literal=True`` the increment is instead the weighted average velocity
    over the regularized mass minus ``v`` (the textbook display), which
    returns ``-v`` at zero overlap; the two coincide in plain mode.
    """
    den, s = alignment_sums(field.spec, domain, x, v, cloud_x, cloud_v)
    n_src = cloud_x.shape[0]
    if isinstance(field.mode, Plain):
        if float(den.min()) <= 0.0:
            raise ConfigError(
                "zero interaction mass in plain mode; the field-spec invariant "
                "(positive infimum on the torus) is violated"
            )
        return s / den[:, None]
    eps_total = field.epsilon * n_src
    if literal:
        out = (s - eps_total * v) / (den + eps_total)[:, None]
        if field.zero_overlap_zero:
            out[den == 0.0] = 0.0
        return out
    return s / (den + eps_total)[:, None]


def mean_field_M(x: np.ndarray, v: np.ndarray, cloud: PointCloud,
                 field: FieldSpec) -> np.ndarray:
    """Mean-field velocity increment at one phase point; bounded by two.

    Uses the literal regularized display (weighted average velocity over the
    regularized mass, minus ``v``), which returns ``-v`` at zero overlap
    unless ``field.zero_overlap_zero`` selects the vanishing convention.
    """
    _validate_field(field, cloud.domain)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    v = np.asarray(v, dtype=float).reshape(1, -1)
    if float(np.sqrt(np.sum(np.square(v)))) > 1.0 + _SPEED_TOL:
        raise InputError("velocity argument must lie in the unit ball")
    return _field_rhs(x, v, cloud.x, cloud.v, field, cloud.domain, literal=True)[0]


def mean_field_batch(x: np.ndarray, v: np.ndarray, cloud: PointCloud,
                     field: FieldSpec) -> np.ndarray:
    """Vectorized :func:`mean_field_M` over rows of ``x`` and ``v``."""
    _validate_field(field, cloud.domain)
    return _field_rhs(np.atleast_2d(x), np.atleast_2d(v), cloud.x, cloud.v,
                      field, cloud.domain, literal=True)


# ---------------------------------------------------------------------------
# Lipschitz probes


@dataclass
class LipschitzReport:
    lemma: str
    L_emp: float
    L_paper: float

    @property
    def ok(self) -> bool:
        return self.L_emp <= self.L_paper + 1e-12


def _local_average(x: np.ndarray, cloud: PointCloud, field: FieldSpec) -> np.ndarray:
    """Interaction-weighted average cloud velocity at positions ``x`` (no -v term)."""
    zeros = np.zeros_like(x)
    return _field_rhs(x, zeros, cloud.x, cloud.v, field, cloud.domain)


def lipschitz_probe(field: FieldSpec, cloud: PointCloud, samples: int,
                    rng: np.random.Generator | None = None) -> LipschitzReport:
    """Empirical Lipschitz quotient of the averaged field versus the known constant.

    Matches the field against one of the three Lipschitz regimes: bounded
    logarithmic gradient (constant ``2K``), periodized Gaussian on the torus
    (constant ``D/R^2``), or the regularized field with compact support and
    gradient supremum at most one (constant ``2/epsilon``).  The quotient is
    the componentwise difference ratio maximized over sampled position pairs.
    """
    rng = rng or np.random.default_rng(0)
    spec = field.spec
    domain = cloud.domain
    if isinstance(field.mode, Plain) and isinstance(spec, LogGradBounded) and spec.period:
        lemma, l_paper = "log-grad-bounded", 2.0 * spec.log_grad_bound
    elif isinstance(field.mode, Plain) and isinstance(spec, GaussianPeriodized):
        lemma, l_paper = "gaussian-periodized", domain.size / spec.width**2
    elif isinstance(field.mode, Regularized) and isinstance(spec, CompactBump):
        if spec.grad_sup > 1.0 + 1e-12:
            raise ConfigError(
                f"regularized Lipschitz regime needs grad sup <= 1, got {spec.grad_sup:.6g}"
            )
        lemma, l_paper = "regularized", 2.0 / field.mode.epsilon
    else:
        raise ConfigError(
            "field does not match any Lipschitz regime "
            "(log-grad/Gaussian on torus in plain mode, compact support regularized)"
        )
    _validate_field(field, domain)

    if isinstance(domain, Torus):
        xs = rng.uniform(0.0, domain.size, size=(samples, domain.d))
        zs = rng.uniform(0.0, domain.size, size=(samples, domain.d))
    else:
        lo = cloud.x.min(axis=0) - 2.0 * spec.radius
        hi = cloud.x.max(axis=0) + 2.0 * spec.radius
        xs = rng.uniform(lo, hi, size=(samples, domain.d))
        zs = xs + rng.uniform(-spec.radius, spec.radius, size=(samples, domain.d))

    if lemma == "regularized":
        v = np.zeros((samples, domain.d))
        fx = _field_rhs(xs, v, cloud.x, cloud.v, field, domain, literal=True)
        fz = _field_rhs(zs, v, cloud.x, cloud.v, field, domain, literal=True)
    else:
        fx = _local_average(xs, cloud, field)
        fz = _local_average(zs, cloud, field)

    if isinstance(domain, Torus):
        delta = xs - zs
        delta -= domain.size * np.rint(delta / domain.size)
    else:
        delta = xs - zs
    dist = np.sqrt(np.sum(np.square(delta), axis=1))
    keep = dist > 1e-9
    quot = np.max(np.abs(fx - fz), axis=1)[keep] / dist[keep]
    return LipschitzReport(lemma=lemma, L_emp=float(quot.max()), L_paper=l_paper)


# ---------------------------------------------------------------------------
# Characteristics


@dataclass
class FlowPath:
    """Recorded characteristics of a batch of phase points."""

    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    overlap_integral: np.ndarray | None = None

    def final(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x[-1], self.v[-1]


def _as_batch(w0) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(w0, tuple):
        x, v = w0
    elif isinstance(w0, PointCloud):
        x, v = w0.x, w0.v
    else:
        arr = np.asarray(w0, dtype=float)
        half = arr.shape[-1] // 2
        arr = np.atleast_2d(arr)
        x, v = arr[:, :half], arr[:, half:]
    return np.atleast_2d(np.asarray(x, dtype=float)).copy(), \
        np.atleast_2d(np.asarray(v, dtype=float)).copy()


def flow_characteristics(w0, curve: MeasureCurve, field: FieldSpec,
                         t_final: float, dt: float, t_start: float | None = None,
                         record_times: Sequence[float] | None = None,
                         want_overlap: bool = False) -> FlowPath:
    """Integrate characteristics driven by a frozen measure curve.

    ``w0`` may be a ``(x, v)`` pair, a cloud, or a ``(m, 2d)`` batch.  The
    driving measure is frozen per step at the left grid cloud; backward flow
    (``t_final < t_start``) inverts the dynamics.  With ``want_overlap`` the
    per-point path integral of the regularized overlap fraction
    ``h = m/(m + epsilon)`` (trapezoid rule) is returned, which the
    volume-contraction diagnostics consume.  Positions are never wrapped;
    interaction evaluations use minimum images throughout.
    """
    _validate_field(field, curve.domain)
    if not dt > 0.0:
        raise InputError(f"dt must be positive, got {dt}")
    x, v = _as_batch(w0)
    t0 = float(curve.times[0]) if t_start is None else float(t_start)
    span_lo, span_hi = float(curve.times[0]), float(curve.times[-1])
    if not (span_lo - 1e-9 <= t_final <= span_hi + 1e-9):
        raise InputError(
            f"t_final {t_final} outside curve span [{span_lo}, {span_hi}]"
        )
    backward = t_final < t0
    h = -dt if backward else dt
    n_steps = max(1, int(round(abs(t_final - t0) / dt))) if t_final != t0 else 0

    extra = [] if record_times is None else [float(s) for s in record_times]
    record = sorted(set([t0, t_final] + extra), reverse=backward)
    rec_times: list[float] = []
    rec_x: list[np.ndarray] = []
    rec_v: list[np.ndarray] = []
    rec_overlap: list[np.ndarray] = []
    eps = field.epsilon

    overlap = np.zeros(x.shape[0])

    def overlap_fraction(xx: np.ndarray, t: float) -> np.ndarray:
        k = curve.index_at(t)
        den, _ = alignment_sums(field.spec, curve.domain, xx,
                                np.zeros_like(xx), curve.x[k], curve.v[k])
        mass = den / curve.x[k].shape[0]
        return mass / (mass + eps)

    def maybe_record(t: float) -> None:
        while record and abs(record[0] - t) <= 1e-9:
            rec_times.append(record.pop(0))
            rec_x.append(x.copy())
            rec_v.append(v.copy())
            rec_overlap.append(overlap.copy())

    t = t0
    maybe_record(t)
    h_prev = overlap_fraction(x, t) if want_overlap else None
    for step in range(n_steps):
        k = curve.index_at(t if not backward else t + h)
        cx, cv = curve.x[k], curve.v[k]

        k1 = _field_rhs(x, v, cx, cv, field, curve.domain)
        v2 = v + 0.5 * h * k1
        x2 = x + 0.5 * h * v
        k2 = _field_rhs(x2, v2, cx, cv, field, curve.domain)
        v3 = v + 0.5 * h * k2
        x3 = x + 0.5 * h * v2
        k3 = _field_rhs(x3, v3, cx, cv, field, curve.domain)
        v4 = v + h * k3
        x4 = x + h * v3
        k4 = _field_rhs(x4, v4, cx, cv, field, curve.domain)

        x = x + (h / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t0 + (step + 1) * h
        if not (np.isfinite(x).all() and np.isfinite(v).all()):
            raise NumericalError(f"non-finite characteristics at step {step + 1}")
        if want_overlap:
            h_now = overlap_fraction(x, t)
            overlap += 0.5 * abs(h) * (h_prev + h_now)
            h_prev = h_now
        maybe_record(t)

    maybe_record(t_final)
    if record:
        raise InputError(
            f"record times {record} do not lie on the integration step grid"
        )
    return FlowPath(times=np.asarray(rec_times), x=np.stack(rec_x),
                    v=np.stack(rec_v),
                    overlap_integral=np.stack(rec_overlap) if want_overlap else None)


# ---------------------------------------------------------------------------
# Transport distance


def _phase_cost(a: PointCloud, b: PointCloud) -> np.ndarray:
    dx = displacement_table(a.domain, a.x, b.x)
    dv = a.v[:, None, :] - b.v[None, :, :]
    return np.sqrt(np.sum(np.square(dx), axis=-1) + np.sum(np.square(dv), axis=-1))


def _subsample(cloud: PointCloud, m: int, rng: np.random.Generator) -> PointCloud:
    idx = np.sort(rng.choice(cloud.n, size=m, replace=False))
    return PointCloud(cloud.domain, cloud.x[idx].copy(), cloud.v[idx].copy())


def transport_distance(a: PointCloud, b: PointCloud, max_points: int = 2000,
                       seed: int = 0) -> float:
    """Optimal-assignment phase-space distance between clouds, clipped at one.

    Exact Hungarian matching under ``sqrt(|dx|^2 + |dv|^2)`` with minimum
    images in position on a torus.  Unequal clouds are reduced by seeded
    uniform subsampling of the larger one; clouds beyond ``max_points`` are
    subsampled to that cap.
    """
    if type(a.domain) is not type(b.domain) or a.domain.d != b.domain.d:
        raise InputError("transport distance requires clouds on the same domain")
    rng = np.random.default_rng(np.random.SeedSequence([seed, a.n, b.n]))
    m = min(a.n, b.n, max_points)
    if a.n != m:
        a = _subsample(a, m, rng)
    if b.n != m:
        b = _subsample(b, m, rng)
    cost = _phase_cost(a, b)
    rows, cols = linear_sum_assignment(cost)
    w1 = float(cost[rows, cols].mean())
    return min(w1, 1.0)


def curve_distance(a: MeasureCurve, b: MeasureCurve, alpha: float = 0.0,
                   max_points: int = 2000, seed: int = 0) -> float:
    """Exponentially weighted sup over the grid of cloud transport distances."""
    if len(a.times) != len(b.times) or not np.allclose(a.times, b.times):
        raise InputError("curve distance requires matching time grids")
    best = 0.0
    for k, t in enumerate(a.times):
        w = transport_distance(PointCloud(a.domain, a.x[k], a.v[k]),
                               PointCloud(b.domain, b.x[k], b.v[k]),
                               max_points=max_points, seed=seed)
        best = max(best, float(np.exp(-alpha * t)) * w)
    return best


# ---------------------------------------------------------------------------
# Cloud evolution (coupled empirical dynamics)


def evolve_cloud(cloud: PointCloud, field: FieldSpec, T: float, dt: float,
                 save_times: Sequence[float] | None = None) -> MeasureCurve:
    """Evolve a cloud under its own empirical mean-field increment.

    The resulting curve is an exact measure solution of the kinetic
    equation; in plain mode it coincides with the particle system.
    """
    _validate_field(field, cloud.domain)
    if not dt > 0.0:
        raise InputError(f"dt must be positive, got {dt}")
    n_steps = int(round(T / dt))
    extra = [] if save_times is None else [float(s) for s in save_times]
    save = sorted(set([0.0, float(T)] + extra))
    x = cloud.x.copy()
    v = cloud.v.copy()
    rec_t: list[float] = []
    rec_x: list[np.ndarray] = []
    rec_v: list[np.ndarray] = []

    def maybe_record(t: float) -> None:
        while save and save[0] <= t + 1e-9:
            rec_t.append(save.pop(0))
            rec_x.append(x.copy())
            rec_v.append(v.copy())

    maybe_record(0.0)
    for step in range(n_steps):
        k1 = _field_rhs(x, v, x, v, field, cloud.domain)
        x2, v2 = x + 0.5 * dt * v, v + 0.5 * dt * k1
        k2 = _field_rhs(x2, v2, x2, v2, field, cloud.domain)
        x3, v3 = x + 0.5 * dt * v2, v + 0.5 * dt * k2
        k3 = _field_rhs(x3, v3, x3, v3, field, cloud.domain)
        x4, v4 = x + dt * v3, v + dt * k3
        k4 = _field_rhs(x4, v4, x4, v4, field, cloud.domain)
        x = x + (dt / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
        v = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not (np.isfinite(x).all() and np.isfinite(v).all()):
            raise NumericalError(f"non-finite cloud state at step {step + 1}")
        maybe_record((step + 1) * dt)

    return MeasureCurve(domain=cloud.domain, times=np.asarray(rec_t),
                        x=np.stack(rec_x), v=np.stack(rec_v))


# ---------------------------------------------------------------------------
# Experiments


def mean_field_convergence(sampler: Callable[[int, np.random.Generator], PointCloud],
                           n_list: Sequence[int], n_ref: int, t_eval: float,
                           field: FieldSpec, seeds: Sequence[int], dt: float,
                           ) -> list[dict]:
    """Transport distance of finite-size evolutions to a large reference.

    For every seed, i.i.d. initial clouds of each requested size plus the
    reference size are drawn, evolved to ``t_eval``, and compared to the
    reference cloud; rows of ``(N, seed, t, W_hat)`` are returned.
    """
    rows: list[dict] = []
    for seed in seeds:
        evolved: dict[int, PointCloud] = {}
        for n in list(n_list) + [n_ref]:
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(n)]))
            cloud = sampler(int(n), rng)
            curve = evolve_cloud(cloud, field, t_eval, dt)
            evolved[n] = PointCloud(cloud.domain, curve.x[-1], curve.v[-1])
        for n in n_list:
            w = transport_distance(evolved[n], evolved[n_ref], seed=int(seed))
            rows.append({"N": int(n), "seed": int(seed), "t": float(t_eval),
                         "W_hat": float(w)})
    return rows


@dataclass
class StabilityReport:
    """Growth of the transport distance between two evolutions versus the bound."""

    c: float
    initial_distance: float
    rows: list[dict]
    ok: bool


def stability_bound_check(cloud_a: PointCloud, cloud_b: PointCloud, field: FieldSpec,
                          T: float, dt: float, n_checks: int = 8,
                          slack: float = 1.01) -> StabilityReport:
    """Certify the exponential stability bound on paired cloud evolutions.

    Both clouds evolve under their own empirical dynamics; the ratio of the
    transport distance to its initial value must stay below ``exp(c t)``
    (times ``slack``), with ``c`` assembled from the Lipschitz constant of
    the field and the interaction-mass lower bound.  Comparison happens in
    log space so huge bounds do not overflow.
    """
    consts = field_constants(field, cloud_a.domain)
    w0 = transport_distance(cloud_a, cloud_b)
    if w0 == 0.0:
        raise DegenerateInputError("initial clouds coincide; stability ratio undefined")
    check_times = np.linspace(0.0, T, n_checks + 1)[1:]
    curve_a = evolve_cloud(cloud_a, field, T, dt, save_times=check_times)
    curve_b = evolve_cloud(cloud_b, field, T, dt, save_times=check_times)
    rows = []
    ok = True
    for t in check_times:
        ka = curve_a.index_at(t)
        w = transport_distance(PointCloud(curve_a.domain, curve_a.x[ka], curve_a.v[ka]),
                               PointCloud(curve_b.domain, curve_b.x[ka], curve_b.v[ka]))
        ratio = w / w0
        log_bound = consts.c * float(t)
        row_ok = np.log(max(ratio, 1e-300)) <= log_bound + np.log(slack)
        ok = ok and bool(row_ok)
        rows.append({"t": float(t), "W_hat": float(w), "ratio": float(ratio),
                     "log_bound": float(log_bound), "ok": bool(row_ok)})
    return StabilityReport(c=consts.c, initial_distance=w0, rows=rows, ok=ok)


@dataclass
class FieldConstants:
    """Constants entering the stability and contraction bounds."""

    lemma: str
    L: float
    c0: float
    a: float

    @property
    def c(self) -> float:
        return self.L + self.c0 / self.a


def field_constants(field: FieldSpec, domain: Domain) -> FieldConstants:
    """Lipschitz constant, field-drift constant and mass lower bound for a field."""
    spec = field.spec
    if isinstance(field.mode, Plain):
        _validate_field(field, domain)
        if isinstance(spec, LogGradBounded) and spec.period:
            lemma, L = "log-grad-bounded", 2.0 * spec.log_grad_bound
        elif isinstance(spec, GaussianPeriodized):
            lemma, L = "gaussian-periodized", domain.size / spec.width**2
        else:
            raise ConfigError("no Lipschitz constant known for this plain-mode field")
        a = potential_inf_lower(spec, domain)
    else:
        if isinstance(spec, CompactBump) and spec.grad_sup <= 1.0 + 1e-12:
            lemma, L = "regularized", 2.0 / field.mode.epsilon
        else:
            raise ConfigError(
                "regularized Lipschitz constant requires compact support with "
                "gradient supremum at most one"
            )
        a = field.mode.epsilon
    c0 = 2.0 * domain.d * (spec.grad_sup + spec.sup_upper)
    return FieldConstants(lemma=lemma, L=L, c0=c0, a=a)


@dataclass
class PicardResult:
    """Iterates of the measure fixed-point map and their contraction ratios."""

    curves: list[MeasureCurve]
    distances: list[float]
    ratios: list[float]
    bound: float
    alpha: float
    converged: bool


def picard_iterate(cloud0: PointCloud, field: FieldSpec, T: float, grid_K: int,
                   iters: int, alpha: float | None = None, dt: float | None = None,
                   stop_tol: float = 1e-10) -> PicardResult:
    """Fixed-point iteration for the kinetic equation on a measure curve.

    Iterate zero is the constant-in-time initial cloud; each next iterate
    pushes the initial cloud along characteristics driven by the previous
    curve, sampled on the grid.  Contraction is measured in the
    exponentially weighted sup distance with weight ``alpha`` (default twice
    the field Lipschitz constant, which must exceed it).  Ratios eventually
    sitting above one yield ``converged=False`` rather than an exception.
    """
    consts = field_constants(field, cloud0.domain)
    if alpha is None:
        alpha = 2.0 * consts.L
    if alpha <= consts.L:
        raise ConfigError(f"alpha must exceed the Lipschitz constant {consts.L:.6g}")
    if dt is None:
        dt = T / grid_K
    times = np.linspace(0.0, T, grid_K + 1)
    bound = consts.c0 / (consts.a * (alpha - consts.L))

    const_curve = MeasureCurve(
        domain=cloud0.domain, times=times,
        x=np.repeat(cloud0.x[None, :, :], grid_K + 1, axis=0),
        v=np.repeat(cloud0.v[None, :, :], grid_K + 1, axis=0),
    )
    curves = [const_curve]
    distances: list[float] = []
    ratios: list[float] = []
    for _ in range(iters):
        prev = curves[-1]
        path = flow_characteristics(cloud0, prev, field, t_final=T, dt=dt,
                                    record_times=list(times))
        nxt = MeasureCurve(domain=cloud0.domain, times=path.times,
                           x=path.x, v=path.v)
        curves.append(nxt)
        dist = curve_distance(prev, nxt, alpha=alpha)
        distances.append(dist)
        if len(distances) >= 2 and distances[-2] > 0.0:
            ratios.append(distances[-1] / distances[-2])
        if dist <= stop_tol:
            break
    converged = bool(distances and (distances[-1] <= stop_tol
                                    or distances[-1] < distances[0]))
    return PicardResult(curves=curves, distances=distances, ratios=ratios,
                        bound=bound, alpha=alpha, converged=converged)
