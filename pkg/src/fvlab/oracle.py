"""Exact analysis of the Fleming-Viot empirical-measure chain for small (n, k).

The empirical measure ``eta = counts / n`` lives on the lattice of
compositions of ``n`` into ``k`` parts. From ``eta`` the chain jumps to
``eta + theta^{x,y} / n`` at rate ``n eta(x) (p_D(x,y) + q(x) n eta(y) / (n-1))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.special import comb, logsumexp

from . import tolerances as tol
from .chain import FiniteChain
from .covariance import contract_dirichlet
from .errors import NonRepresentableXi, SingularSolve, TooLarge
from .spectral import (
    OperatorOnZeroSum,
    SpectralData,
    ZeroSumBasis,
    build_pi_return,
    drift_operator,
)


def lattice_size(n: int, k: int) -> int:
    return int(comb(n + k - 1, k - 1, exact=True))


@dataclass(frozen=True)
class SimplexLattice:
    """Compositions of ``n`` into ``k`` parts in descending lexicographic order."""

    states: np.ndarray = field(repr=False)
    n: int
    k: int

    def __len__(self) -> int:
        return self.states.shape[0]

    def _keys(self, rows: np.ndarray):
        if (self.n + 1) ** self.k < 2**62:
            w = (self.n + 1) ** np.arange(self.k - 1, -1, -1, dtype=np.int64)
            return rows.astype(np.int64) @ w
        return None

    def index(self, rows) -> np.ndarray:
        """Ids of count vectors (one per row); -1 for vectors not in the lattice."""
        rows = np.atleast_2d(np.asarray(rows))
        keys = self._keys(rows)
        if keys is None:
            lookup = {tuple(r): i for i, r in enumerate(self.states.tolist())}
            return np.array([lookup.get(tuple(r), -1) for r in rows.tolist()])
        own = self._keys(self.states)[::-1]  # ascending
        pos = np.searchsorted(own, keys)
        pos = np.clip(pos, 0, own.shape[0] - 1)
        found = own[pos] == keys
        return np.where(found, len(self) - 1 - pos, -1)


def _compositions(n: int, k: int) -> np.ndarray:
    if k == 1:
        return np.array([[n]], dtype=np.int64)
    blocks = []
    for first in range(n, -1, -1):
        rest = _compositions(n - first, k - 1)
        blocks.append(np.hstack([np.full((rest.shape[0], 1), first, dtype=np.int64), rest]))
    return np.vstack(blocks)


def enumerate_simplex(n: int, k: int, cap: int = tol.LATTICE_CAP) -> SimplexLattice:
    if n < 2 or k < 1:
        raise ValueError("need n >= 2 and k >= 1")
    size = lattice_size(n, k)
    if size > cap:
        raise TooLarge(f"lattice has {size} states, cap is {cap}")
    return SimplexLattice(_compositions(n, k), n, k)


@dataclass(frozen=True)
class FVGeneratorMatrix:
    lattice: SimplexLattice
    matrix: sparse.csr_matrix = field(repr=False)


def fv_rates(chain: FiniteChain, counts: np.ndarray, n: int) -> np.ndarray:
    """Rate array ``r[s, x, y]`` of the move ``x -> y`` from each count row ``s`` (diagonal zero)."""
    c = np.atleast_2d(counts).astype(float)
    r = c[:, :, None] * (chain.p_D[None, :, :] + chain.q[None, :, None] * c[:, None, :] / (n - 1))
    idx = np.arange(chain.k)
    r[:, idx, idx] = 0.0
    return r


def build_fv_generator(chain: FiniteChain, n: int, cap: int = tol.LATTICE_CAP) -> FVGeneratorMatrix:
    lat = enumerate_simplex(n, chain.k, cap)
    k = chain.k
    N = len(lat)
    rates = fv_rates(chain, lat.states, n)
    rows, cols, vals = [], [], []
    for x in range(k):
        for y in range(k):
            if x == y:
                continue
            r = rates[:, x, y]
            src = np.nonzero(r > 0)[0]
            if src.size == 0:
                continue
            tgt = lat.states[src].copy()
            tgt[:, x] -= 1
            tgt[:, y] += 1
            rows.append(src)
            cols.append(lat.index(tgt))
            vals.append(r[src])
    if rows:
        rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    Q = sparse.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()
    Q = Q - sparse.diags(np.asarray(Q.sum(axis=1)).ravel())
    return FVGeneratorMatrix(lat, Q.tocsr())


def exact_stationary(gen: FVGeneratorMatrix) -> np.ndarray:
    """Solve ``nu Q = 0``, ``sum nu = 1`` with one balance equation replaced by normalisation."""
    Q = gen.matrix
    N = Q.shape[0]
    if N == 1:
        return np.ones(1)
    A = Q.T.tolil()
    A[N - 1, :] = np.ones(N)
    b = np.zeros(N)
    b[-1] = 1.0
    nu = spsolve(A.tocsc(), b)
    if not np.all(np.isfinite(nu)):
        raise SingularSolve("stationary system is singular")
    resid = float(np.max(np.abs(Q.T @ nu)))
    if resid > tol.STATIONARY_RESIDUAL or nu.min() < -1e-12:
        raise SingularSolve(f"stationary solve residual {resid:.3e}, min {nu.min():.3e}")
    return np.clip(nu, 0.0, None) / np.clip(nu, 0.0, None).sum()


def birth_death_stationary(chain: FiniteChain, n: int) -> np.ndarray:
    """Closed-form stationary law for ``k = 2`` by detailed balance.

    Indexed like :func:`enumerate_simplex`: entry ``i`` is the state with
    ``n - i`` particles on the first domain state.
    """
    if chain.k != 2:
        raise ValueError("birth-death fast path requires |D| = 2")
    j = np.arange(n + 1, dtype=float)  # particles on state 0
    p, q = chain.p_D, chain.q
    up = (n - j[:-1]) * (p[1, 0] + q[1] * j[:-1] / (n - 1))  # j -> j+1
    down = j[1:] * (p[0, 1] + q[0] * (n - j[1:]) / (n - 1))  # j+1 -> j
    logw = np.concatenate([[0.0], np.cumsum(np.log(up) - np.log(down))])
    w = np.exp(logw - logsumexp(logw))
    return w[::-1].copy()


@dataclass
class ExactLaw:
    lattice: SimplexLattice
    nu: np.ndarray
    method: str

    @property
    def weights(self) -> np.ndarray:
        return self.lattice.states / self.lattice.n


def exact_law(chain: FiniteChain, n: int, cap: int = tol.LATTICE_CAP, method: str = "auto") -> ExactLaw:
    """Stationary law of the empirical measure; ``k = 2`` uses the birth-death formula."""
    k = chain.k
    if method == "auto":
        method = "birth-death" if k == 2 else "linear-solve"
    if method == "birth-death":
        lat = SimplexLattice(_compositions(n, 2), n, 2)
        return ExactLaw(lat, birth_death_stationary(chain, n), method)
    gen = build_fv_generator(chain, n, cap)
    return ExactLaw(gen.lattice, exact_stationary(gen), method)


def exact_fluctuation_covariance(chain: FiniteChain, spec: SpectralData, n: int,
                                 cap: int = tol.LATTICE_CAP, law: ExactLaw | None = None) -> OperatorOnZeroSum:
    """``n E_nu[(eta - pi)(eta - pi)^T]`` as a reduced C0->M0 operator."""
    basis = ZeroSumBasis(np.asarray(spec.pi))
    if chain.k == 1:
        return OperatorOnZeroSum(np.zeros((0, 0)), "C0->M0", basis)
    law = law or exact_law(chain, n, cap)
    a = (law.weights - spec.pi)[:, 1:]
    C = n * (a.T * law.nu) @ a
    return OperatorOnZeroSum(0.5 * (C + C.T), "C0->M0", basis)


def exact_mean_sq_distance(chain: FiniteChain, spec: SpectralData, n: int, cap: int = tol.LATTICE_CAP,
                           law: ExactLaw | None = None) -> float:
    """``E ||eta - pi||_2^2`` under the stationary law."""
    law = law or exact_law(chain, n, cap)
    d = law.weights - spec.pi
    return float(law.nu @ np.sum(d * d, axis=1))


def identity_test_operator(spec: SpectralData) -> OperatorOnZeroSum:
    """Reduced identity as a symmetric M0->C0 operator."""
    basis = ZeroSumBasis(np.asarray(spec.pi))
    return OperatorOnZeroSum(np.eye(basis.dim), "M0->C0", basis)


def check_moment_estimate(chain: FiniteChain, spec: SpectralData, n: int, R: OperatorOnZeroSum,
                          cap: int = tol.LATTICE_CAP, law: ExactLaw | None = None) -> float:
    """Exact ``E[<B0 d + <d, q> d, R d>]`` with ``d = eta - pi`` under the stationary law."""
    if chain.k == 1:
        return 0.0
    law = law or exact_law(chain, n, cap)
    B0 = drift_operator(build_pi_return(chain, spec)).reduced
    Rm = np.asarray(R.reduced)
    d = law.weights - spec.pi
    a = d[:, 1:]
    drift = a @ B0.T + (d @ chain.q)[:, None] * a
    return float(law.nu @ np.sum(drift * (a @ Rm.T), axis=1))


def moment_identity_rhs(chain: FiniteChain, spec: SpectralData, n: int, R: OperatorOnZeroSum,
                        cap: int = tol.LATTICE_CAP, law: ExactLaw | None = None) -> float:
    """The O(1/n) expression the moment expectation equals under stationarity.

    ``-E[<-q eta + <eta,q> eta, R d>] / (n-1)
    - E[sum_{x,y} eta(x)(p_D + q(x) n eta(y)/(n-1)) <theta, R theta>] / (2n)``.
    Serves as an independent check of :func:`check_moment_estimate`.
    """
    if chain.k == 1:
        return 0.0
    law = law or exact_law(chain, n, cap)
    Rm = np.asarray(R.reduced)
    eta = law.weights
    d = eta - spec.pi
    Rd = d[:, 1:] @ Rm.T
    rho = -chain.q * eta + (eta @ chain.q)[:, None] * eta
    first = law.nu @ np.sum(rho[:, 1:] * Rd, axis=1)
    k = chain.k
    th = np.zeros((k, k))
    for x in range(k):
        for y in range(k):
            t = np.zeros(k)
            t[y] += 1
            t[x] -= 1
            th[x, y] = t[1:] @ Rm @ t[1:]
    rates = fv_rates(chain, law.lattice.states, n) / n
    second = law.nu @ np.einsum("sxy,xy->s", rates, th)
    return float(-first / (n - 1) - second / (2 * n))


@dataclass
class VarianceConditionReport:
    alpha: float
    gamma: float
    holds: bool


def check_variance_condition(chain: FiniteChain, spec: SpectralData) -> VarianceConditionReport:
    """Compare the exit-rate spread ``max q - min q`` with the spectral gap."""
    alpha = float(chain.q.max() - chain.q.min())
    return VarianceConditionReport(alpha, spec.gamma, bool(alpha < spec.gamma))


# -- generator comparison ---------------------------------------------------


@dataclass
class GeneratorComparison:
    n: int
    sup_difference: float
    points: int
    differences: np.ndarray = field(repr=False)


def representable_fluctuations(spec: SpectralData, n: int, radius: float = 3.0,
                               cap: int = tol.LATTICE_CAP) -> np.ndarray:
    """All ``xi = sqrt(n)(eta - pi)`` with ``eta`` on the lattice and ``||xi||_2 <= radius``."""
    lat = enumerate_simplex(n, spec.k, cap)
    xi = math.sqrt(n) * (lat.states / n - spec.pi)
    return xi[np.linalg.norm(xi, axis=1) <= radius]


def _check_representable(spec: SpectralData, n: int, xi: np.ndarray) -> None:
    c = n * (np.asarray(spec.pi) + xi / math.sqrt(n))
    if np.any(np.abs(c - np.round(c)) > 1e-8) or np.any(np.round(c) < 0) or abs(c.sum() - n) > 1e-8:
        raise NonRepresentableXi(f"xi={xi} is not sqrt(n)(eta - pi) for a lattice eta")


def compare_fluctuation_generators(chain: FiniteChain, spec: SpectralData, n: int, R: OperatorOnZeroSum,
                                   g, xi_list=None, radius: float = 3.0) -> GeneratorComparison:
    """``sup |M^n psi - Mbar psi|`` for ``psi(xi) = <xi, R xi>/2 + <xi, g>``.

    ``g`` is given in reduced coordinates. ``M^n`` is evaluated by exact
    differences of ``psi`` over the jumps ``xi + theta^{x,y} / sqrt(n)``.
    """
    k = chain.k
    if k == 1:
        return GeneratorComparison(n, 0.0, 1, np.zeros(1))
    if xi_list is None:
        xi_list = representable_fluctuations(spec, n, radius)
    xi_list = np.atleast_2d(np.asarray(xi_list, float))
    for xi in xi_list:
        _check_representable(spec, n, xi)
    Rm = np.asarray(R.reduced, float)
    g = np.asarray(g, float)
    pr = build_pi_return(chain, spec)
    B0 = drift_operator(pr).reduced
    contraction = contract_dirichlet(pr, R)
    pi = np.asarray(spec.pi)
    sq = math.sqrt(n)

    def psi(a):
        return 0.5 * a @ Rm @ a + a @ g

    diffs = np.empty(xi_list.shape[0])
    for i, xi in enumerate(xi_list):
        a = xi[1:]
        base = psi(a)
        mn = 0.0
        for x in range(k):
            for y in range(k):
                if x == y:
                    continue
                rate = n * (pi[x] + xi[x] / sq) * (chain.p_D[x, y] + chain.q[x] * n / (n - 1) * (pi[y] + xi[y] / sq))
                if rate == 0.0:
                    continue
                step = np.zeros(k)
                step[y] += 1.0
                step[x] -= 1.0
                mn += rate * (psi(a + step[1:] / sq) - base)
        mbar = (B0 @ a) @ (Rm @ a + g) + contraction
        diffs[i] = abs(mn - mbar)
    return GeneratorComparison(n, float(diffs.max()), xi_list.shape[0], diffs)
