"""Symmetric operators on the centred spaces, Lyapunov solves and the CLT covariance.

The covariance is computed twice: as the stable solution of
``B0 K + K B0^T + 2 A = 0`` and as the semigroup integral
``Var_pi(f) + 2 lam int_0^inf e^{2 lam s} Var_pi(Q_s f) ds``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from . import tolerances as tol
from .chain import FiniteChain, _vec
from .errors import (
    NotCentered,
    NotSymmetric,
    QuadratureMismatch,
    SingularSystem,
    TailBoundFailure,
    UnstableDrift,
)
from .spectral import (
    OperatorOnZeroSum,
    PiReturnProcess,
    SpectralData,
    ZeroSumBasis,
    build_pi_return,
    diffusion_operator,
    drift_operator,
    uniformized_expm,
)


def _check_symmetric(N: OperatorOnZeroSum) -> np.ndarray:
    M = np.asarray(N.reduced, dtype=float)
    if M.size and np.max(np.abs(M - M.T)) > tol.SYMMETRY * max(1.0, np.abs(M).max()):
        raise NotSymmetric(f"asymmetry {np.max(np.abs(M - M.T)):.3e}")
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class SymmetricDecomposition:
    """``<N f, f> = sum_l c[l] <zeta[l], f>^2`` (or the measure-side analogue).

    ``vectors`` holds full-dimensional measures (for C0->M0 operators) or
    functions (for M0->C0 operators) as rows.
    """

    vectors: np.ndarray
    coefficients: np.ndarray
    reduced_vectors: np.ndarray = field(repr=False)

    def evaluate(self, v) -> float:
        return float(np.sum(self.coefficients * (self.vectors @ np.asarray(v, float)) ** 2))


def diagonalize_symmetric(N: OperatorOnZeroSum) -> SymmetricDecomposition:
    M = _check_symmetric(N)
    b = N.basis
    if M.shape[0] == 0:
        empty = np.zeros((0, b.k))
        return SymmetricDecomposition(empty, np.zeros(0), np.zeros((0, 0)))
    c, V = np.linalg.eigh(M)
    lift = b.lift_measure if N.kind == "C0->M0" else b.lift_function
    vectors = np.array([lift(V[:, i]) for i in range(V.shape[1])])
    return SymmetricDecomposition(vectors, c, V.T)


@dataclass(frozen=True)
class DefinitenessCertificate:
    positive: bool
    c_min: float

    def __bool__(self) -> bool:
        return self.positive


def _gram(N: OperatorOnZeroSum, norm: str) -> np.ndarray | None:
    if norm == "euclidean":
        return None
    if norm != "l2_pi":
        raise ValueError(f"unknown norm {norm!r}")
    b = N.basis
    if N.kind == "C0->M0":
        L = b.lift_function_matrix
        return L.T @ (b.pi[:, None] * L)
    L = b.lift_measure_matrix
    return L.T @ (L / b.pi[:, None])


def is_positive_definite(N: OperatorOnZeroSum, norm: str = "l2_pi") -> DefinitenessCertificate:
    """Positive definiteness with the best constant ``c_N`` in ``<N f, f> >= c_N ||f||^2``.

    ``norm="l2_pi"`` measures centred functions in ``L^2(pi)`` (and measures
    in the dual norm ``sum xi^2 / pi``); ``"euclidean"`` uses reduced
    coordinates. The sign of ``c_N`` does not depend on the choice.
    """
    M = _check_symmetric(N)
    if M.shape[0] == 0:
        return DefinitenessCertificate(True, math.inf)
    G = _gram(N, norm)
    c = float(eigh(M, G, eigvals_only=True)[0])
    return DefinitenessCertificate(c > tol.POSITIVE_DEFINITE, c)


@dataclass(frozen=True)
class CovarianceOperator:
    op: OperatorOnZeroSum
    route: str
    residual: float

    @property
    def reduced(self) -> np.ndarray:
        return self.op.reduced

    def quadratic_form(self, f) -> float:
        """``<K f, f>`` for a full-dimensional, pi-centred ``f``."""
        if self.op.dim == 0:
            return 0.0
        return self.op.quadratic_form(f)

    def full_matrix(self) -> np.ndarray:
        """Covariance of the fluctuation field in full coordinates (k x k)."""
        return self.op.full_matrix()


def lyapunov_residual(B: np.ndarray, K: np.ndarray, A: np.ndarray) -> float:
    if K.size == 0:
        return 0.0
    return float(np.max(np.abs(B @ K + K @ B.T + 2.0 * A)))


def solve_lyapunov(B: OperatorOnZeroSum, A: OperatorOnZeroSum) -> CovarianceOperator:
    """Stable symmetric solution of ``B K + K B^T + 2 A = 0`` via the Kronecker system."""
    Bm = np.asarray(B.reduced, float)
    Am = _check_symmetric(A)
    d = Bm.shape[0]
    if d == 0:
        return CovarianceOperator(OperatorOnZeroSum(np.zeros((0, 0)), "C0->M0", A.basis), "lyapunov", 0.0)
    ev = np.linalg.eigvals(Bm)
    if np.max(ev.real) >= 0:
        raise UnstableDrift(f"drift has an eigenvalue with real part {np.max(ev.real):.3e} >= 0")
    I = np.eye(d)
    # row-major vec: vec(B K) = (B kron I) vec K, vec(K B^T) = (I kron B) vec K
    system = np.kron(Bm, I) + np.kron(I, Bm)
    if np.linalg.cond(system) > 1e14:
        raise SingularSystem("Kronecker system is numerically singular")
    K = np.linalg.solve(system, -2.0 * Am.reshape(-1)).reshape(d, d)
    K = 0.5 * (K + K.T)
    return CovarianceOperator(OperatorOnZeroSum(K, "C0->M0", A.basis), "lyapunov", lyapunov_residual(Bm, K, Am))


def covariance_lyapunov(chain: FiniteChain, spec: SpectralData, pr: PiReturnProcess | None = None) -> CovarianceOperator:
    pr = pr if pr is not None else build_pi_return(chain, spec)
    return solve_lyapunov(drift_operator(pr), diffusion_operator(pr))


def contract_dirichlet(pr: PiReturnProcess, R: OperatorOnZeroSum) -> float:
    """``0.5 * sum_{x,y} pi(x) p_pi(x,y) <theta^{x,y}, R theta^{x,y}>`` by direct double sum."""
    Rm = _check_symmetric(R)
    k = pr.p_pi.shape[0]
    if k == 1:
        return 0.0
    pi = pr.spec.pi
    total = 0.0
    for x in range(k):
        for y in range(k):
            if x == y:
                continue
            th = np.zeros(k)
            th[y] += 1.0
            th[x] -= 1.0
            a = th[1:]
            total += pi[x] * pr.p_pi[x, y] * float(a @ Rm @ a)
    return 0.5 * total


# -- integral route ---------------------------------------------------------


@dataclass
class IntegralResult:
    value: np.ndarray
    value_pi_return: np.ndarray
    horizon: float
    panels: int


def _var_columns(pi: np.ndarray, G: np.ndarray) -> np.ndarray:
    mean = pi @ G
    return pi @ (G - mean) ** 2


def _simpson_grid(P: np.ndarray, F: np.ndarray, pi: np.ndarray, lam: float, T: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Simpson of ``e^{2 lam s} Var_pi(exp(s(P-I)) f)`` on ``[0, T]``, N even intervals."""
    h = T / N
    step = uniformized_expm(P, h, np.eye(P.shape[0]))
    vals = np.empty((N + 1, F.shape[1]))
    G = F.copy()
    vals[0] = _var_columns(pi, G)
    for i in range(1, N + 1):
        G = step @ G
        vals[i] = math.exp(2.0 * lam * i * h) * _var_columns(pi, G)
    w = np.ones(N + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return (h / 3.0) * (w @ vals), vals[-1]


def _adaptive_simpson(P, F, pi, lam, T, atol, max_panels=1 << 16):
    N = 32
    prev, last = _simpson_grid(P, F, pi, lam, T, N)
    while True:
        N *= 2
        cur, last = _simpson_grid(P, F, pi, lam, T, N)
        if np.all(np.abs(cur - prev) < atol / 4) or N >= max_panels:
            return cur, last, N
        prev = cur


def _centred_columns(spec: SpectralData, F) -> np.ndarray:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape[0] != spec.k:
        F = F.T
    pi = np.asarray(spec.pi)
    means = pi @ F
    scale = np.maximum(1.0, np.abs(F).max(axis=0))
    if np.any(np.abs(means) > tol.CENTERED * scale):
        raise NotCentered(f"<pi, f> = {means[np.argmax(np.abs(means))]:.3e} is not zero")
    return F - means


def covariance_integral_detail(chain: FiniteChain, spec: SpectralData, F, atol: float = tol.QUADRATURE,
                               horizon: float | None = None) -> IntegralResult:
    """Semigroup-integral route for one or several centred functions (columns of ``F``).

    With ``horizon=None`` the integral runs to a horizon ``T`` chosen from the
    decay rate ``2 (gamma - delta)``, ``delta = gamma / 10``, and then extended
    until the tail estimate ``2 lam h(T) / (2 (gamma - delta))`` is below
    ``atol / 4``. With a finite ``horizon`` it is the finite-time variance.
    """
    if atol <= 0:
        raise ValueError("atol must be positive")
    F = _centred_columns(spec, F)
    pi = np.asarray(spec.pi)
    var0 = _var_columns(pi, F)
    lam = spec.lam
    if spec.k == 1 or lam == 0.0 or horizon == 0.0:
        return IntegralResult(var0, var0.copy(), 0.0 if horizon is None else horizon, 0)
    P_D = np.asarray(chain.p_D)
    P_pi = P_D + np.outer(chain.q, pi)
    if horizon is not None:
        T = float(horizon)
        iq, _, N = _adaptive_simpson(P_D, F, pi, lam, T, atol)
        ip, _, _ = _adaptive_simpson(P_pi, F, pi, lam, T, atol)
    else:
        delta = spec.gamma / 10.0
        decay = 2.0 * (spec.gamma - delta)
        if not decay > 0 or not math.isfinite(decay):
            raise TailBoundFailure(f"decay rate {decay} is not positive")
        scale = max(1.0, 2.0 * lam * float(var0.max()) / decay)
        T = math.log(scale / atol) / decay
        for _ in range(60):
            iq, last, N = _adaptive_simpson(P_D, F, pi, lam, T, atol)
            if np.all(2.0 * lam * last / decay < atol / 4):
                break
            T *= 1.5
        else:
            raise TailBoundFailure("integrand does not decay at the predicted rate")
        ip, _, _ = _adaptive_simpson(P_pi, F, pi, lam, T, atol)
    vq = var0 + 2.0 * lam * iq
    vp = var0 + 2.0 * lam * ip
    if np.any(np.abs(vq - vp) > 10 * atol):
        raise QuadratureMismatch(f"integrand variants differ by {np.max(np.abs(vq - vp)):.3e}")
    return IntegralResult(vq, vp, T, N)


def covariance_integral(chain: FiniteChain, spec: SpectralData, f, atol: float = tol.QUADRATURE) -> float:
    """``<K f, f>`` for one centred ``f`` through the semigroup integral."""
    f = _vec(f, spec.k, "function")
    return float(covariance_integral_detail(chain, spec, f[:, None], atol).value[0])


def covariance_finite_time(chain: FiniteChain, spec: SpectralData, f, t: float, atol: float = tol.QUADRATURE) -> float:
    """Finite-horizon variance ``Var_pi(f) + 2 lam int_0^t e^{2 lam s} Var_pi(Q_s f) ds``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    f = _vec(f, spec.k, "function")
    return float(covariance_integral_detail(chain, spec, f[:, None], atol, horizon=t).value[0])


def zero_covariance(basis: ZeroSumBasis, route: str) -> CovarianceOperator:
    d = basis.dim
    return CovarianceOperator(OperatorOnZeroSum(np.zeros((d, d)), "C0->M0", basis), route, 0.0)
