"""Exact simulation of the Fleming-Viot particle system, the pi-return process
and Euler-Maruyama paths of the limiting Ornstein-Uhlenbeck diffusion.

Fleming-Viot events use one aggregate exponential clock of rate ``n``: each
particle has total jump rate ``sum_y p(x, y) = 1`` (self-loops and exit
attempts included), so an event picks a particle uniformly, draws its
destination from the full row of ``p`` and, on an exit, copies the position
of one of the other ``n - 1`` particles chosen uniformly.

Random numbers come from Philox streams keyed by ``(seed, stream)`` and are
drawn in fixed-size batches, so a run is bit-reproducible and independent
replicas can run concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .chain import FiniteChain
from .errors import DimensionMismatch, InvalidParams, InvalidStepSize, StateNotInDomain
from .spectral import PiReturnProcess, SpectralData

BATCH = 1 << 15


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for replica ``stream`` of run ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def cumulative_rows(chain: FiniteChain) -> np.ndarray:
    """Row-wise cumulative ``[p_D | q]`` with the last column pinned to 1."""
    cum = np.cumsum(chain.exit_row, axis=1)
    cum[:, -1] = 1.0
    return np.ascontiguousarray(cum)


@numba.njit(cache=True, nogil=True)
def _apply_event(pos, counts, cum, u_particle, u_dest, u_other):
    n = pos.shape[0]
    k = cum.shape[1] - 1
    p = int(u_particle * n)
    if p >= n:
        p = n - 1
    x = pos[p]
    y = np.searchsorted(cum[x], u_dest, side="right")
    if y > k:
        y = k
    if y == k:
        j = int(u_other * (n - 1))
        if j >= n - 1:
            j = n - 2
        if j >= p:
            j += 1
        y = pos[j]
    if y != x:
        pos[p] = y
        counts[x] -= 1
        counts[y] += 1
    return x, y


@numba.njit(cache=True, nogil=True)
def _fv_run(pos, counts, cum, t, waits, unif, record_times, rec, out):
    """Advance through one batch of events; record counts at ``record_times``.

    Returns the new time, the next record index and the number of events used.
    """
    m = waits.shape[0]
    nrec = record_times.shape[0]
    for i in range(m):
        t_new = t + waits[i]
        while rec < nrec and record_times[rec] < t_new:
            out[rec, :] = counts
            rec += 1
        if rec >= nrec:
            return t, rec, i
        _apply_event(pos, counts, cum, unif[i, 0], unif[i, 1], unif[i, 2])
        t = t_new
    return t, rec, m


@numba.njit(cache=True, nogil=True)
def _markov_path(cum, x0, unif):
    out = np.empty(unif.shape[0] + 1, dtype=np.int64)
    out[0] = x0
    x = x0
    for i in range(unif.shape[0]):
        x = np.searchsorted(cum[x], unif[i], side="right")
        if x >= cum.shape[1]:
            x = cum.shape[1] - 1
        out[i + 1] = x
    return out


@numba.njit(cache=True, nogil=True)
def _euler_maruyama(x, drift, noise, dt, normals, every, out, start):
    d = x.shape[0]
    sq = math.sqrt(dt)
    nsteps = normals.shape[0]
    rec = start
    y = np.empty(d)
    for s in range(nsteps):
        for a in range(d):
            acc = 0.0
            for b in range(d):
                acc += drift[a, b] * x[b]
            w = 0.0
            for b in range(noise.shape[1]):
                w += noise[a, b] * normals[s, b]
            y[a] = x[a] + dt * acc + sq * w
        for a in range(d):
            x[a] = y[a]
        if (s + 1) % every == 0:
            out[rec, :] = x
            rec += 1
    return rec


# -- data types -------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalMeasure:
    counts: np.ndarray
    n: int

    def __post_init__(self):
        if int(np.sum(self.counts)) != self.n:
            raise InvalidParams(f"counts sum to {np.sum(self.counts)}, expected n={self.n}")

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.counts, float) / self.n


@dataclass(frozen=True)
class FluctuationSample:
    xi: np.ndarray
    n: int


@dataclass
class ParticleConfiguration:
    positions: np.ndarray
    time: float = 0.0
    rng: np.random.Generator = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def empirical(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(np.bincount(self.positions, minlength=k), self.n)


def fluctuation(eta: EmpiricalMeasure, spec: SpectralData) -> FluctuationSample:
    """``xi = sqrt(n) (eta - pi)``."""
    w = eta.weights
    if w.shape[0] != spec.k:
        raise DimensionMismatch(f"measure on {w.shape[0]} states, pi on {spec.k}")
    xi = math.sqrt(eta.n) * (w - spec.pi)
    xi[-1] = -xi[:-1].sum() if xi.shape[0] > 1 else 0.0
    return FluctuationSample(xi, eta.n)


def initial_positions(chain: FiniteChain, spec: SpectralData, n: int, how: str, rng) -> np.ndarray:
    """``"pi"`` (iid from pi), ``"uniform"`` or ``"point:<label>"``."""
    k = chain.k
    if how == "pi":
        counts = rng.multinomial(n, np.asarray(spec.pi) / np.sum(spec.pi))
        return np.repeat(np.arange(k), counts).astype(np.int64)
    if how == "uniform":
        return rng.integers(0, k, size=n).astype(np.int64)
    if how.startswith("point:"):
        return np.full(n, chain.index(how.split(":", 1)[1]), dtype=np.int64)
    raise InvalidParams(f"unknown initialiser {how!r}")


def fv_step(chain: FiniteChain, config: ParticleConfiguration, uniforms=None, wait=None) -> ParticleConfiguration:
    """Advance one Fleming-Viot event.

    ``uniforms`` = (particle, destination, resample) in [0, 1) and ``wait``
    override the random draws, which makes individual events scriptable.
    """
    n = config.n
    if n < 2:
        raise InvalidParams("Fleming-Viot dynamics need n >= 2")
    rng = config.rng
    if uniforms is None:
        uniforms = rng.random(3)
    if wait is None:
        wait = rng.standard_exponential() / n
    pos = config.positions.astype(np.int64, copy=True)
    counts = np.bincount(pos, minlength=chain.k).astype(np.int64)
    _apply_event(pos, counts, cumulative_rows(chain), *map(float, uniforms))
    return ParticleConfiguration(pos, config.time + float(wait), rng)


def default_burn_in(gamma: float, n: int) -> float:
    if not math.isfinite(gamma):
        return 0.0
    return 20.0 / gamma * (1.0 + math.log(n))


def default_spacing(gamma: float) -> float:
    return 5.0 / gamma if math.isfinite(gamma) else 1.0


@dataclass
class StationarySamples:
    """Empirical measures recorded along one long Fleming-Viot trajectory."""

    counts: np.ndarray
    n: int
    times: np.ndarray = field(repr=False)
    burn_in: float = 0.0
    spacing: float = 0.0
    heuristic_schedule: bool = True
    events: int = 0

    def measures(self) -> list:
        return [EmpiricalMeasure(c, self.n) for c in self.counts]

    @property
    def weights(self) -> np.ndarray:
        return self.counts / self.n

    def fluctuations(self, pi) -> np.ndarray:
        return math.sqrt(self.n) * (self.weights - np.asarray(pi))


def sample_stationary(chain: FiniteChain, spec: SpectralData, n: int, burn_in: float | None = None,
                      spacing: float | None = None, samples: int = 1000, seed: int = 0,
                      stream: int = 0, init: str = "pi") -> StationarySamples:
    """Record the empirical measure every ``spacing`` time units after ``burn_in``.

    Defaults follow ``burn_in = 20 / gamma * (1 + ln n)`` and
    ``spacing = 5 / gamma``; these are heuristics (no mixing bound is known)
    and the result carries ``heuristic_schedule=True`` when they are used.
    """
    if n < 2:
        raise InvalidParams("n must be >= 2")
    if samples < 1:
        raise InvalidParams("samples must be >= 1")
    heuristic = burn_in is None or spacing is None
    burn_in = default_burn_in(spec.gamma, n) if burn_in is None else float(burn_in)
    spacing = default_spacing(spec.gamma) if spacing is None else float(spacing)
    if burn_in < 0 or spacing < 0:
        raise InvalidParams("burn_in and spacing must be nonnegative")
    rng = make_rng(seed, stream)
    pos = initial_positions(chain, spec, n, init, rng)
    counts = np.bincount(pos, minlength=chain.k).astype(np.int64)
    cum = cumulative_rows(chain)
    record_times = burn_in + spacing * np.arange(samples, dtype=float)
    out = np.zeros((samples, chain.k), dtype=np.int64)
    t, rec, events = 0.0, 0, 0
    while rec < samples:
        waits = rng.standard_exponential(BATCH) / n
        unif = rng.random((BATCH, 3))
        t, rec, used = _fv_run(pos, counts, cum, t, waits, unif, record_times, rec, out)
        events += used
    return StationarySamples(out, n, record_times, burn_in, spacing, heuristic, events)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    t_end: float

    def occupation(self, k: int) -> np.ndarray:
        """Fraction of ``[0, t_end]`` spent in each state."""
        if self.t_end == 0:
            out = np.zeros(k)
            out[self.states[0]] = 1.0
            return out
        dur = np.diff(np.append(self.times, self.t_end))
        return np.bincount(self.states, weights=dur, minlength=k) / self.t_end


def simulate_pi_return(pr: PiReturnProcess, t_end: float, x0, seed: int = 0, stream: int = 0) -> Trajectory:
    """Jump-chain path of the pi-return process on ``[0, t_end]`` (rate-1 clock)."""
    if t_end < 0:
        raise InvalidParams("t_end must be nonnegative")
    k = pr.p_pi.shape[0]
    # strings are domain labels, integers are dense indices
    x0 = pr.chain.index(x0) if isinstance(x0, str) else int(x0)
    if not 0 <= x0 < k:
        raise StateNotInDomain(f"x0={x0} outside D")
    rng = make_rng(seed, stream)
    jumps = []
    t = 0.0
    while True:
        w = np.cumsum(rng.standard_exponential(BATCH)) + t
        keep = w[w <= t_end]
        jumps.append(keep)
        if keep.shape[0] < BATCH:
            break
        t = w[-1]
    jump_times = np.concatenate(jumps)
    cum = np.cumsum(pr.p_pi, axis=1)
    cum[:, -1] = 1.0
    states = _markov_path(np.ascontiguousarray(cum), x0, rng.random(jump_times.shape[0]))
    return Trajectory(np.concatenate([[0.0], jump_times]), states, float(t_end))


@dataclass
class OUPath:
    times: np.ndarray
    xi: np.ndarray
    dt: float

    def states(self) -> list:
        return [OUState(x, t) for t, x in zip(self.times, self.xi)]


@dataclass(frozen=True)
class OUState:
    xi: np.ndarray
    time: float


def simulate_ou(B0, decomp, dt: float, t_end: float, seed: int = 0, xi0=None,
                record_every: int = 1, stream: int = 0) -> OUPath:
    """Euler-Maruyama for ``d xi = B0 xi dt + sum_l sqrt(2 c_l) zeta_l dW_l`` in reduced coordinates.

    ``B0`` is a reduced drift operator (or matrix), ``decomp`` a
    :class:`~fvlab.covariance.SymmetricDecomposition` of the diffusion
    operator. The path is recorded every ``record_every`` steps, plus the
    initial state.
    """
    if not dt > 0:
        raise InvalidStepSize(f"dt={dt} must be positive")
    if t_end < 0:
        raise InvalidParams("t_end must be nonnegative")
    drift = np.ascontiguousarray(np.asarray(getattr(B0, "reduced", B0), float))
    d = drift.shape[0]
    c = np.asarray(decomp.coefficients, float)
    if np.any(c < 0):
        raise InvalidParams("diffusion coefficients must be nonnegative")
    Z = np.asarray(decomp.reduced_vectors, float).reshape(-1, d)
    noise = np.ascontiguousarray((Z * np.sqrt(2.0 * c)[:, None]).T) if d else np.zeros((0, 0))
    x = np.zeros(d) if xi0 is None else np.array(xi0, dtype=float)
    nsteps = int(round(t_end / dt))
    every = max(1, int(record_every))
    nrec = nsteps // every
    out = np.empty((nrec + 1, d))
    out[0] = x
    rng = make_rng(seed, stream)
    rec, done = 1, 0
    while done < nsteps:
        m = min(BATCH * 8, nsteps - done)
        m -= m % every if m >= every else 0
        normals = rng.standard_normal((m, noise.shape[1]))
        rec = _euler_maruyama(x, drift, noise, dt, normals, every, out, rec)
        done += m
    times = dt * every * np.arange(rec)
    return OUPath(times, out[:rec], dt)
