"""Row-stochastic interaction matrix, its real spectrum and gap diagnostics.

The alignment weights form a row-stochastic matrix that is reversible with
respect to the normalized row masses, so conjugating with the square root
of that distribution yields a symmetric matrix with the same (real)
spectrum.  Eigenvalues are computed with a deterministic cyclic Jacobi
sweep.  The gap ``1 - lambda_2`` equals the spectral gap of the full
phase-space generator, whose nonzero eigenvalues are the weight
eigenvalues shifted by minus one.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ._kernels import kernel_table
from .dynamics import DynamicsMode, ParticleEnsemble, Plain, Regularized
from .errors import InputError, NumericalError, PreconditionError
from .geometry import FreeSpace, PotentialSpec, displacement_table

__all__ = [
    "InteractionMatrix",
    "SpectrumReport",
    "interaction_matrix",
    "jacobi_eigenvalues",
    "spectrum",
    "c_matrix_gap",
    "velocity_projector",
    "BNormReport",
    "b_norm_check",
    "operator_norm",
]

_SIMPLE_TOL = 1e-10


@dataclass
class InteractionMatrix:
    """Alignment weight matrix with its reversibility distribution.

    ``stationary`` is proportional to the row interaction masses (plus the
    regularization, when active), normalized to total mass one; detailed
    balance ``stationary_i a_ij = stationary_j a_ji`` holds in both modes.
    In the regularized mode rows sum to strictly less than one and
    ``substochastic`` flags it.
    """

    a: np.ndarray
    stationary: np.ndarray
    substochastic: bool

    @property
    def n(self) -> int:
        return self.a.shape[0]


@dataclass
class SpectrumReport:
    """Real sorted spectrum of the symmetrized weight matrix."""

    eigenvalues: np.ndarray
    gap: float
    perron_simple: bool
    max_imag_residual: float


def interaction_matrix(state: ParticleEnsemble, spec: PotentialSpec,
                       mode: DynamicsMode = Plain()) -> InteractionMatrix:
    """Build the weight matrix ``a_ij = U(q_i - q_j) / (row mass + epsilon)``."""
    u = kernel_table(spec, state.domain, state.q)
    den = u.sum(axis=1)
    eps = mode.epsilon if isinstance(mode, Regularized) else 0.0
    if eps == 0.0 and float(den.min()) <= 0.0:
        raise NumericalError("zero interaction row mass in plain mode")
    weights = den + eps
    a = u / weights[:, None]
    stationary = weights / weights.sum()
    return InteractionMatrix(a=a, stationary=stationary, substochastic=eps > 0.0)


def _pattern_connected(a: np.ndarray) -> bool:
    """Connectivity of the positive-entry pattern (irreducibility test)."""
    n = a.shape[0]
    if n == 1:
        return True
    adj = a > 0.0
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(adj[i] & ~seen):
            seen[j] = True
            queue.append(int(j))
    return bool(seen.all())


def jacobi_eigenvalues(sym: np.ndarray, tol: float = 1e-14, max_sweeps: int = 60
                       ) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Deterministic row-cyclic sweeps; converges when the off-diagonal
    Frobenius mass falls below ``tol`` relative to the matrix scale.
    """
    a = np.array(sym, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise InputError(f"matrix must be square, got shape {a.shape}")
    if n == 1:
        return a.ravel().copy()
    scale = max(float(np.max(np.abs(a))), 1e-300)
    for _ in range(max_sweeps):
        strict = a - np.diag(np.diag(a))
        off = np.sqrt(np.sum(np.square(strict)))
        if off <= tol * n * scale:
            return np.sort(np.diag(a))
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e8:
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                a[p, q] = 0.0
                a[q, p] = 0.0
    raise NumericalError(f"Jacobi eigenvalue iteration did not converge in {max_sweeps} sweeps")


def spectrum(m: InteractionMatrix) -> SpectrumReport:
    """Real spectrum of the weight matrix via the reversibility symmetrization."""
    if not np.all(m.stationary > 0.0):
        raise PreconditionError("stationary distribution must be strictly positive")
    root = np.sqrt(m.stationary)
    sym = root[:, None] * m.a / root[None, :]
    residual = float(np.max(np.abs(sym - sym.T)))
    sym = 0.5 * (sym + sym.T)
    eig = jacobi_eigenvalues(sym)[::-1]
    gap = float(1.0 - eig[1]) if m.n > 1 else 1.0
    perron_simple = m.n > 1 and (eig[0] - eig[1]) > _SIMPLE_TOL
    return SpectrumReport(eigenvalues=eig, gap=gap, perron_simple=perron_simple,
                          max_imag_residual=residual)


def c_matrix_gap(report: SpectrumReport) -> float:
    """Spectral gap of the phase-space generator: smallest ``|Re|`` of its
    negative spectrum, which equals ``1 - lambda_2`` of the weight matrix."""
    if not report.perron_simple:
        raise PreconditionError(
            "spectral gap undefined: leading eigenvalue is not simple (reducible weights)"
        )
    return report.gap


def velocity_projector(m: InteractionMatrix) -> np.ndarray:
    """Rank-one projector onto the aligned velocity mode.

    Built from the right eigenvector of ones and the stationary left
    eigenvector; applied per velocity component, its complement isolates
    the decaying modes.
    """
    if not _pattern_connected(m.a):
        raise PreconditionError("projector requires an irreducible weight matrix")
    return np.outer(np.ones(m.n), m.stationary)


def operator_norm(b: np.ndarray) -> float:
    """Largest singular value, via the Jacobi spectrum of ``b^T b``."""
    b = np.asarray(b, dtype=float)
    gram = b.T @ b
    gram = 0.5 * (gram + gram.T)
    eig = jacobi_eigenvalues(gram)
    return float(np.sqrt(max(eig[-1], 0.0)))


@dataclass
class BNormReport:
    """Both sides of the weight-drift norm bound along a trajectory."""

    lhs: float
    rhs: float
    eta: float
    eta_grid: float
    max_pair_shift: float

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs + 1e-12


def _segment_min_interaction(q_t: np.ndarray, q_0: np.ndarray, spec: PotentialSpec,
                             n_s: int) -> float:
    """Minimum interaction along straight segments between all pair displacements."""
    free = FreeSpace(q_t.shape[1])
    d0 = displacement_table(free, q_0, q_0)
    d1 = displacement_table(free, q_t, q_t)
    best = np.inf
    for s in np.linspace(0.0, 1.0, n_s):
        vals = spec.values((1.0 - s) * d0 + s * d1)
        best = min(best, float(vals.min()))
    return best


def b_norm_check(q_t: np.ndarray, q_0: np.ndarray, spec: PotentialSpec,
                 n_s: int = 128) -> BNormReport:
    """Check the operator-norm bound on the drift of the weight matrix.

    ``lhs`` is the largest singular value of the difference of the weight
    matrices at the two configurations; ``rhs`` is the certified bound built
    from the interaction's gradient supremum, its value at the origin, the
    pairwise displacement drift, and a lower bound ``eta`` on the
    interaction along all pair segments.  ``eta`` is certified only for
    monotone radial families (segment minima sit at endpoints); otherwise
    zero is used.  ``eta_grid`` reports the ``n_s``-point grid evaluation.
    """
    q_t = np.atleast_2d(np.asarray(q_t, dtype=float))
    q_0 = np.atleast_2d(np.asarray(q_0, dtype=float))
    if q_t.shape != q_0.shape:
        raise InputError(f"configuration shapes differ: {q_t.shape} vs {q_0.shape}")
    n, d = q_t.shape
    free = FreeSpace(d)

    u_t = kernel_table(spec, free, q_t)
    u_0 = kernel_table(spec, free, q_0)
    den_t = u_t.sum(axis=1)
    den_0 = u_0.sum(axis=1)
    if min(float(den_t.min()), float(den_0.min())) <= 0.0:
        raise NumericalError("zero interaction row mass while forming weight matrices")
    b = u_t / den_t[:, None] - u_0 / den_0[:, None]
    lhs = operator_norm(b)

    d0 = displacement_table(free, q_0, q_0)
    d1 = displacement_table(free, q_t, q_t)
    max_shift = float(np.max(np.sqrt(np.sum(np.square(d1 - d0), axis=-1))))

    eta_grid = _segment_min_interaction(q_t, q_0, spec, n_s)
    if spec.monotone_radial:
        eta = min(float(spec.values(d0).min()), float(spec.values(d1).min()))
    else:
        eta = 0.0

    rhs = 2.0 * n * spec.grad_sup / (spec.u0 + (n - 1) * eta) * max_shift
    return BNormReport(lhs=lhs, rhs=rhs, eta=eta, eta_grid=eta_grid,
                       max_pair_shift=max_shift)
