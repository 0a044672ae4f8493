"""Killed finite-state Markov chains and the function/measure algebra on D.

Functions on ``D`` and signed measures on ``D`` are both plain 1-d float
arrays indexed by the dense position of the state in ``FiniteChain.domain``.
The distinction is semantic only: measures act on functions through
:func:`bracket`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import tolerances as tol
from .errors import (
    ChainFileError,
    DimensionMismatch,
    EmptyDomain,
    NotIrreducible,
    NotStochastic,
    StateNotInDomain,
)


@dataclass(frozen=True)
class FiniteChain:
    """A jump chain on ``E`` with total jump rate 1 and a domain ``D``.

    Attributes
    ----------
    states : tuple of str
        Labels of ``E`` in declaration order.
    transition : ndarray, shape (|E|, |E|)
        Row-stochastic matrix ``p(x, y)``.
    domain : tuple of str
        Labels of ``D`` in declaration order; position ``i`` in every
        D-indexed vector refers to ``domain[i]``.
    p_D : ndarray, shape (k, k)
        Restriction of ``transition`` to ``D x D`` (substochastic).
    q : ndarray, shape (k,)
        Exit probability ``q(x) = 1 - sum_y p_D(x, y)``.
    """

    states: tuple
    transition: np.ndarray = field(repr=False)
    domain: tuple
    p_D: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return len(self.domain)

    def index(self, label) -> int:
        """Dense index of a domain label."""
        try:
            return self.domain.index(str(label))
        except ValueError:
            raise StateNotInDomain(f"state {label!r} is not in D={list(self.domain)}") from None

    @property
    def exit_row(self) -> np.ndarray:
        """``[p_D | q]``: the jump law from each x in D, exits lumped in the last column."""
        return np.hstack([self.p_D, self.q[:, None]])


def _check_stochastic(P: np.ndarray) -> None:
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise NotStochastic(f"transition matrix must be square, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        r, c = np.argwhere(~np.isfinite(P))[0]
        raise NotStochastic(f"non-finite entry at row {r}, column {c}")
    if np.any(P < 0):
        r, c = np.argwhere(P < 0)[0]
        raise NotStochastic(f"negative entry {P[r, c]} at row {r}, column {c}")
    dev = np.abs(P.sum(axis=1) - 1.0)
    if np.any(dev > tol.STOCHASTIC):
        r = int(np.argmax(dev))
        raise NotStochastic(f"row {r} sums to {P[r].sum()!r}, not 1")


def is_irreducible(M: np.ndarray) -> bool:
    """Strong connectivity of the support digraph ``{(x, y): M[x, y] > 1e-15}``."""
    if M.shape[0] <= 1:
        return True
    ncomp, _ = connected_components(M > tol.SUPPORT_ZERO, directed=True, connection="strong")
    return ncomp == 1


def build_chain(transition, domain_labels, states=None) -> FiniteChain:
    """Validate a transition matrix and restrict it to a domain.

    Parameters
    ----------
    transition : array_like, shape (m, m)
        Row-stochastic matrix on ``E``.
    domain_labels : sequence
        Labels of the states forming ``D``. Order defines the dense index.
    states : sequence, optional
        Labels of ``E``; defaults to ``"1", ..., "m"``.
    """
    P = np.array(transition, dtype=float)
    _check_stochastic(P)
    m = P.shape[0]
    states = tuple(str(s) for s in (states if states is not None else range(1, m + 1)))
    if len(states) != m:
        raise DimensionMismatch(f"{len(states)} state labels for a {m}x{m} matrix")
    if len(set(states)) != m:
        raise ChainFileError("state labels must be unique")
    domain = tuple(str(s) for s in domain_labels)
    if not domain:
        raise EmptyDomain("domain D must be nonempty")
    if len(set(domain)) != len(domain):
        raise ChainFileError("domain labels must be unique")
    try:
        idx = [states.index(s) for s in domain]
    except ValueError:
        bad = [s for s in domain if s not in states]
        raise StateNotInDomain(f"domain labels {bad} are not states of E") from None
    p_D = P[np.ix_(idx, idx)].copy()
    q = 1.0 - p_D.sum(axis=1)
    q[np.abs(q) < tol.STOCHASTIC] = 0.0
    if not is_irreducible(p_D):
        raise NotIrreducible("p_D is not irreducible on D (support digraph not strongly connected)")
    for a in (P, p_D, q):
        a.setflags(write=False)
    return FiniteChain(states, P, domain, p_D, q)


def chain_from_dict(doc: dict) -> FiniteChain:
    for key in ("states", "transition", "domain"):
        if key not in doc:
            raise ChainFileError(f"missing field {key!r}")
    states = doc["states"]
    rows = doc["transition"]
    if not isinstance(rows, list) or len(rows) != len(states):
        raise ChainFileError(f"'transition' must have one row per state ({len(states)})")
    for r, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != len(states):
            raise ChainFileError(f"row {r} of 'transition' must have {len(states)} entries")
        for c, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ChainFileError(f"entry at row {r}, column {c} is not a number: {v!r}")
    return build_chain(rows, doc["domain"], states=states)


def load_chain(path) -> FiniteChain:
    """Read a chain file (JSON with ``states``, ``transition``, ``domain``)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ChainFileError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
    return chain_from_dict(doc)


def chain_to_dict(chain: FiniteChain) -> dict:
    return {
        "states": list(chain.states),
        "transition": chain.transition.tolist(),
        "domain": list(chain.domain),
    }


def random_chain(k: int, rng=None, exit_scale: float = 0.5, density: float = 0.6) -> FiniteChain:
    """Random chain with ``|D| = k`` and a single cemetery state ``"dead"``.

    A directed cycle through ``D`` guarantees irreducibility; extra edges are
    added with probability ``density``. Exit probabilities are uniform on
    ``[0, exit_scale]``.
    """
    rng = np.random.default_rng(rng)
    W = rng.random((k, k)) * (rng.random((k, k)) < density)
    cyc = rng.permutation(k)
    for a, b in zip(cyc, np.roll(cyc, -1)):
        if k > 1:
            W[a, b] += 0.1 + rng.random()
    if k == 1:
        W[0, 0] = 1.0
    W /= W.sum(axis=1, keepdims=True)
    q = rng.random(k) * exit_scale
    P = np.zeros((k + 1, k + 1))
    P[:k, :k] = W * (1.0 - q)[:, None]
    P[:k, k] = 1.0 - P[:k, :k].sum(axis=1)
    P[k, k] = 1.0
    labels = [f"s{i}" for i in range(k)] + ["dead"]
    return build_chain(P, labels[:k], states=labels)


# -- function / measure algebra -------------------------------------------


def _vec(a, k=None, what="vector") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or (k is not None and a.shape[0] != k):
        raise DimensionMismatch(f"{what} has shape {a.shape}, expected ({k},)")
    return a


def bracket(rho, f) -> float:
    """Duality pairing ``<rho, f> = sum_x rho(x) f(x)``."""
    rho = _vec(rho, what="measure")
    f = _vec(f, rho.shape[0], "function")
    return float(rho @ f)


def theta(x: int, y: int, k: int) -> np.ndarray:
    """Elementary zero-mass measure ``delta_y - delta_x``."""
    if not (0 <= x < k and 0 <= y < k):
        raise StateNotInDomain(f"indices ({x}, {y}) outside D of size {k}")
    out = np.zeros(k)
    out[y] += 1.0
    out[x] -= 1.0
    return out


def project_zero_mean(f, pi) -> np.ndarray:
    """``f - <pi, f> 1``: the component of ``f`` in the pi-centred functions."""
    pi = _vec(pi, what="pi")
    f = _vec(f, pi.shape[0], "function")
    return f - (pi @ f)


def project_zero_sum(xi, pi) -> np.ndarray:
    """``xi - <xi, 1> pi``: projection onto zero-mass measures along ``R pi``."""
    pi = _vec(pi, what="pi")
    xi = _vec(xi, pi.shape[0], "measure")
    return xi - xi.sum() * pi


def var_pi(f, pi) -> float:
    g = project_zero_mean(f, pi)
    return float(np.asarray(pi) @ (g * g))


def l2_norm(xi) -> float:
    return float(np.linalg.norm(xi))


def tv_norm(xi) -> float:
    """Total variation norm ``0.5 * sum |xi(x)|`` of a signed measure."""
    return 0.5 * float(np.abs(xi).sum())
