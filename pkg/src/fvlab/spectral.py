"""QSD, killed and pi-return semigroups, and the reduced drift/diffusion operators.

Reduced coordinates
-------------------
With reference state ``x0 = 0`` the zero-mass measures are spanned by
``e_j = delta_j - delta_0`` (j = 1..k-1), so a measure ``xi`` has reduced
coordinates ``xi[1:]``. Centred functions are spanned by the dual basis
``g_i = delta_i - pi(i) 1``, for which ``<e_j, g_i> = delta_ij``; a centred
``f`` has reduced coordinates ``f[1:] - f[0]``. In these coordinates the
pairing ``<xi, f>`` is the plain dot product, adjoints are transposes and a
symmetric operator is a symmetric matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.stats import poisson

from . import tolerances as tol
from .chain import FiniteChain, _vec
from .errors import (
    DimensionMismatch,
    EigenFailure,
    InconsistentSpectralData,
    MassUnderflow,
    NegativeTime,
    NotCentered,
)

# -- uniformisation -------------------------------------------------------


def _poisson_terms(mu: float) -> int:
    if mu == 0.0:
        return 0
    return int(poisson.isf(tol.POISSON_TAIL, mu)) + 1


def uniformized_expm(P: np.ndarray, t: float, v: np.ndarray, left: bool = False) -> np.ndarray:
    """Apply ``exp(t (P - I))`` to ``v`` for a nonnegative matrix ``P``.

    Uses the Poisson mixture ``sum_m e^{-t} t^m / m! P^m`` truncated once the
    Poisson tail drops below ``POISSON_TAIL``; long horizons are split into
    steps with ``t <= UNIFORMIZATION_MAX_RATE_TIME``. Every term is a
    nonnegative combination of powers of ``P``, so positivity and (sub)
    stochasticity are preserved. ``v`` may be a vector or a matrix whose
    columns are acted on; ``left=True`` applies the adjoint (acts on measures).
    """
    if t < 0:
        raise NegativeTime(f"t={t} < 0")
    v = np.array(v, dtype=float)
    if t == 0.0:
        return v
    M = P.T if left else P
    steps = max(1, math.ceil(t / tol.UNIFORMIZATION_MAX_RATE_TIME))
    h = t / steps
    nterms = _poisson_terms(h)
    weights = poisson.pmf(np.arange(nterms + 1), h)
    for _ in range(steps):
        term = v
        acc = weights[0] * term
        for m in range(1, nterms + 1):
            term = M @ term
            acc = acc + weights[m] * term
        v = acc
    return v


# -- QSD ------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralData:
    """QSD ``pi``, killing rate ``lam``, spectral gap ``gamma`` of ``p_D``.

    ``gamma`` is ``inf`` when ``|D| = 1`` (no second eigenvalue).
    """

    pi: np.ndarray = field(repr=False)
    lam: float
    gamma: float
    perron_residual: float
    eigenvalues: np.ndarray = field(repr=False)
    method: str = "power"

    @property
    def k(self) -> int:
        return self.pi.shape[0]


def _power_iteration(M: np.ndarray, max_iter: int, rtol: float):
    """Perron vector of ``M^T`` via the lazy matrix ``(I + M)/2``.

    The lazy matrix has the same Perron vector and is aperiodic, so the
    iteration converges even for periodic supports.
    """
    k = M.shape[0]
    lazy_T = 0.5 * (np.eye(k) + M.T)
    v = np.full(k, 1.0 / k)
    for _ in range(max_iter):
        w = lazy_T @ v
        w /= w.sum()
        if np.max(np.abs(w - v)) <= rtol * np.max(np.abs(w)):
            return w, True
        v = w
    return v, False


def _perron_dense(M: np.ndarray) -> np.ndarray:
    vals, vecs = linalg.eig(M.T)
    i = int(np.argmax(vals.real))
    v = np.real(vecs[:, i])
    v = np.abs(v)
    return v / v.sum()


def _polish(M: np.ndarray, pi: np.ndarray, rho: float) -> np.ndarray:
    """Refine ``pi`` by solving ``(M^T - rho I) pi = 0`` bordered by ``sum pi = 1``."""
    k = M.shape[0]
    A = M.T - rho * np.eye(k)
    A[-1, :] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    try:
        new = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return pi
    if np.all(np.isfinite(new)) and np.all(new > 0):
        return new
    return pi


def solve_qsd(chain: FiniteChain, max_iter: int = 100_000) -> SpectralData:
    """Quasi-stationary distribution, killing rate and spectral gap.

    ``pi`` comes from power iteration on ``p_D^T`` (lazy form) with a dense
    eigensolve as fallback when the iteration stalls. The killing rate is the
    Rayleigh-type estimate ``lambda = <pi, q>`` which is exact for the Perron
    vector. ``gamma`` uses the full dense spectrum.
    """
    M = np.asarray(chain.p_D)
    k = chain.k
    pi, ok = _power_iteration(M, max_iter, 1e-15)
    method = "power"
    if not ok:
        pi = _perron_dense(M)
        method = "dense"
    lam = float(pi @ chain.q)
    pi = _polish(M, pi, 1.0 - lam)
    lam = float(pi @ chain.q)
    resid = float(np.max(np.abs(M.T @ pi - (1.0 - lam) * pi)))
    if resid > tol.SPECTRAL or np.any(pi <= 0):
        raise EigenFailure(f"QSD solve failed: residual {resid:.3e}, min pi {pi.min():.3e}")
    try:
        eig = linalg.eigvals(M)
    except linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    if k == 1:
        gamma = math.inf
    else:
        perron = int(np.argmin(np.abs(eig - (1.0 - lam))))
        rest = np.delete(eig, perron)
        gamma = float((1.0 - lam) - rest.real.max())
        if gamma <= 0:
            raise EigenFailure(f"nonpositive spectral gap {gamma}")
    pi.setflags(write=False)
    return SpectralData(pi, lam, gamma, resid, eig, method)


def killed_semigroup(chain: FiniteChain, f, t: float) -> np.ndarray:
    """``Q_t f = exp(t (p_D - I)) f``."""
    f = _vec(f, chain.k, "function")
    return uniformized_expm(np.asarray(chain.p_D), t, f)


def yaglom_conditional(chain: FiniteChain, mu, t: float) -> np.ndarray:
    """Law at time ``t`` of the chain started from ``mu``, conditioned on survival."""
    mu = _vec(mu, chain.k, "mu")
    m = uniformized_expm(np.asarray(chain.p_D), t, mu, left=True)
    mass = m.sum()
    if not mass > 1e-300:
        raise MassUnderflow(f"surviving mass {mass} underflows at t={t}")
    return m / mass


# -- pi-return process ----------------------------------------------------


@dataclass(frozen=True)
class PiReturnProcess:
    p_pi: np.ndarray = field(repr=False)
    chain: FiniteChain = field(repr=False)
    spec: SpectralData = field(repr=False)

    @property
    def generator(self) -> np.ndarray:
        return self.p_pi - np.eye(self.p_pi.shape[0])

    @property
    def basis(self) -> "ZeroSumBasis":
        return ZeroSumBasis(self.spec.pi)


def build_pi_return(chain: FiniteChain, spec: SpectralData) -> PiReturnProcess:
    """Jump kernel ``p_pi(x, y) = p_D(x, y) + q(x) pi(y)``."""
    pi = np.asarray(spec.pi)
    if pi.shape[0] != chain.k:
        raise DimensionMismatch("spectral data does not match the chain")
    p_pi = chain.p_D + np.outer(chain.q, pi)
    stat = np.max(np.abs(p_pi.T @ pi - pi))
    if stat > tol.SPECTRAL:
        raise InconsistentSpectralData(f"pi is not stationary for p_pi (residual {stat:.3e})")
    p_pi.setflags(write=False)
    return PiReturnProcess(p_pi, chain, spec)


def pi_semigroup(pr: PiReturnProcess, f, t: float) -> np.ndarray:
    """``exp(t L_pi) f``."""
    f = _vec(f, pr.p_pi.shape[0], "function")
    return uniformized_expm(np.asarray(pr.p_pi), t, f)


def dirichlet_form(pr: PiReturnProcess, f) -> float:
    """``0.5 * sum_{x,y} pi(x) p_pi(x, y) (f(y) - f(x))^2``."""
    f = _vec(f, pr.p_pi.shape[0], "function")
    diff = f[None, :] - f[:, None]
    return 0.5 * float(np.sum(pr.spec.pi[:, None] * pr.p_pi * diff * diff))


# -- reduced operators ----------------------------------------------------


@dataclass(frozen=True)
class ZeroSumBasis:
    """Lift/restrict maps between full vectors and reduced coordinates."""

    pi: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return self.pi.shape[0]

    @property
    def dim(self) -> int:
        return self.k - 1

    @property
    def lift_measure_matrix(self) -> np.ndarray:
        """Columns ``e_j = delta_j - delta_0``; shape (k, k-1)."""
        L = np.zeros((self.k, self.dim))
        L[0, :] = -1.0
        L[1:, :] = np.eye(self.dim)
        return L

    @property
    def lift_function_matrix(self) -> np.ndarray:
        """Columns ``g_i = delta_i - pi(i) 1``; shape (k, k-1)."""
        G = np.zeros((self.k, self.dim))
        G[1:, :] = np.eye(self.dim)
        return G - np.outer(np.ones(self.k), self.pi[1:])

    def restrict_measure(self, xi) -> np.ndarray:
        xi = _vec(xi, self.k, "measure")
        if abs(xi.sum()) > tol.CENTERED * max(1.0, np.abs(xi).max()):
            raise DimensionMismatch(f"measure has mass {xi.sum()}, not a zero-mass measure")
        return xi[1:].copy()

    def lift_measure(self, a) -> np.ndarray:
        a = _vec(a, self.dim, "reduced measure")
        return np.concatenate([[-a.sum()], a])

    def restrict_function(self, f) -> np.ndarray:
        f = _vec(f, self.k, "function")
        if abs(self.pi @ f) > tol.CENTERED * max(1.0, np.abs(f).max()):
            raise NotCentered(f"<pi, f> = {self.pi @ f:.3e} is not zero")
        return f[1:] - f[0]

    def lift_function(self, b) -> np.ndarray:
        b = _vec(b, self.dim, "reduced function")
        return self.lift_function_matrix @ b


@dataclass(frozen=True)
class OperatorOnZeroSum:
    """A linear map on the (k-1)-dimensional centred spaces.

    ``kind`` names domain and codomain: ``"M0->M0"`` (drift-type),
    ``"C0->M0"`` (covariance-type, acts on functions, returns measures) or
    ``"M0->C0"`` (test operators such as Hessians).
    """

    reduced: np.ndarray
    kind: str
    basis: ZeroSumBasis = field(repr=False)

    @property
    def dim(self) -> int:
        return self.reduced.shape[0]

    def full_matrix(self) -> np.ndarray:
        """Full k x k matrix acting on full vectors."""
        b = self.basis
        drop0 = np.eye(b.k)[1:, :]
        if self.kind == "M0->M0":
            return b.lift_measure_matrix @ self.reduced @ drop0
        if self.kind == "C0->M0":
            return b.lift_measure_matrix @ self.reduced @ b.lift_measure_matrix.T
        return b.lift_function_matrix @ self.reduced @ drop0

    def quadratic_form(self, v) -> float:
        """``<N f, f>`` for C0->M0 (f centred) or ``<xi, R xi>`` for M0->C0."""
        if self.kind == "C0->M0":
            c = self.basis.restrict_function(v)
        elif self.kind == "M0->C0":
            c = self.basis.restrict_measure(v)
        else:
            raise TypeError("quadratic form is defined for C0->M0 and M0->C0 operators")
        return float(c @ self.reduced @ c)

    def scaled(self, s: float) -> "OperatorOnZeroSum":
        return OperatorOnZeroSum(s * self.reduced, self.kind, self.basis)


def drift_operator(pr: PiReturnProcess) -> OperatorOnZeroSum:
    """``B0 = p_pi^* - (1 - lambda) I`` restricted to zero-mass measures."""
    b = pr.basis
    full = pr.p_pi.T - (1.0 - pr.spec.lam) * np.eye(b.k)
    red = (full @ b.lift_measure_matrix)[1:, :]
    return OperatorOnZeroSum(red, "M0->M0", b)


def drift_operator_generator_form(pr: PiReturnProcess) -> OperatorOnZeroSum:
    """``B0 = L_pi^* + lambda I``; equal to :func:`drift_operator`."""
    b = pr.basis
    full = pr.generator.T + pr.spec.lam * np.eye(b.k)
    red = (full @ b.lift_measure_matrix)[1:, :]
    return OperatorOnZeroSum(red, "M0->M0", b)


def dirichlet_matrix(pr: PiReturnProcess) -> np.ndarray:
    """Symmetric ``S`` with ``f^T S f`` equal to the Dirichlet form."""
    W = pr.spec.pi[:, None] * pr.p_pi
    W = 0.5 * (W + W.T)
    return np.diag(W.sum(axis=1)) - W


def diffusion_operator(pr: PiReturnProcess) -> OperatorOnZeroSum:
    """Symmetric positive operator ``A`` with ``<A f, f>`` = Dirichlet form on C0."""
    b = pr.basis
    G = b.lift_function_matrix
    red = G.T @ dirichlet_matrix(pr) @ G
    red = 0.5 * (red + red.T)
    return OperatorOnZeroSum(red, "C0->M0", b)


def semigroup_identity_gap(pr: PiReturnProcess, f, t: float) -> float:
    """``max |P^pi_t f - Q_t(f - <pi,f>) - <pi,f>|``; zero in exact arithmetic."""
    mean = float(pr.spec.pi @ f)
    lhs = pi_semigroup(pr, f, t)
    rhs = killed_semigroup(pr.chain, np.asarray(f, float) - mean, t) + mean
    return float(np.max(np.abs(lhs - rhs)))


@dataclass
class DecayReport:
    constant: float
    rate: float
    ratios: list
    holds: bool
    stable: bool
    trivial: bool = False


def check_decay(pr: PiReturnProcess, f, delta: float, t_grid) -> DecayReport:
    """Fit ``C_delta`` in ``max_x |P^pi_t f(x)| <= C e^{-t(lambda+gamma-delta)} ||f||``.

    ``||f||`` is the sup norm. The bound "holds" when the fitted constant is
    finite, and "stable" when the scaled ratios show no growth over the
    second half of the grid.
    """
    f = _vec(f, pr.p_pi.shape[0], "function")
    if delta <= 0:
        raise ValueError("delta must be positive")
    if abs(pr.spec.pi @ f) > tol.CENTERED * max(1.0, np.abs(f).max()):
        raise NotCentered(f"<pi, f> = {pr.spec.pi @ f:.3e}")
    norm = np.abs(f).max()
    rate = pr.spec.lam + pr.spec.gamma - delta
    if norm == 0.0 or not math.isfinite(pr.spec.gamma):
        return DecayReport(float("nan"), rate, [], True, True, trivial=True)
    grid = sorted(float(t) for t in t_grid)
    ratios = []
    g = f.copy()
    prev = 0.0
    for t in grid:
        g = pi_semigroup(pr, g, t - prev)
        prev = t
        ratios.append(math.exp(t * rate) * np.abs(g).max() / norm)
    C = max(ratios)
    tail = np.log(np.maximum(ratios[len(ratios) // 2:], 1e-300))
    slope = 0.0
    if len(tail) >= 2:
        ts = np.array(grid[len(grid) // 2:])
        slope = float(np.polyfit(ts, tail, 1)[0])
    return DecayReport(C, rate, ratios, math.isfinite(C), slope <= 1e-6)
