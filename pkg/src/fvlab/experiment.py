"""Config-driven verification pipeline: QSD, covariance, exact oracle, simulation, statistics.

Reports are deterministic functions of the configuration: no timestamps or
timings are written and every random draw derives from ``config.seed``.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sps

from . import tolerances as tol
from .chain import FiniteChain, load_chain, project_zero_mean
from .covariance import covariance_integral_detail, covariance_lyapunov
from .errors import ConfigError, ReportWriteFailure, TooLarge
from .oracle import exact_fluctuation_covariance, exact_law, exact_mean_sq_distance, lattice_size
from .simulate import StationarySamples, make_rng, sample_stationary
from .spectral import SpectralData, ZeroSumBasis, solve_qsd
from .stats import effective_sample_size, jackknife, mean_with_se

SCHEMA_VERSION = 1

DEFAULT_TOLERANCES = {
    "route_agreement": tol.ROUTE_AGREEMENT,
    "quadrature": tol.QUADRATURE,
    "se_band": 3.0,
    "ks_level": 0.01,
    # allowed relative gap to K when no exact oracle is available at that n
    "asymptotic_bias": 0.05,
    "jackknife_blocks": 50,
}


@dataclass
class ExperimentConfig:
    chain: str
    n_list: list
    samples: int = 2000
    seed: int = 0
    burn_in: float | None = None
    spacing: float | None = None
    tolerances: dict = field(default_factory=dict)
    out_dir: str | None = None
    random_directions: int = 5
    oracle_cap: int = 50_000
    init: str = "pi"

    def __post_init__(self):
        if not self.n_list:
            raise ConfigError("n_list must be nonempty")
        if any(int(n) != n or n < 2 for n in self.n_list):
            raise ConfigError("every n must be an integer >= 2")
        self.n_list = [int(n) for n in self.n_list]
        if self.samples < 2:
            raise ConfigError("samples must be >= 2")
        if self.seed is None:
            raise ConfigError("seed is required")
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown tolerance keys: {sorted(unknown)}")

    @property
    def tol(self) -> dict:
        return {**DEFAULT_TOLERANCES, **self.tolerances}

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "ExperimentConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "chain" not in doc or "n_list" not in doc:
            raise ConfigError("config needs 'chain' and 'n_list'")
        doc = dict(doc)
        if base_dir is not None:
            p = Path(doc["chain"])
            if not p.is_absolute():
                doc["chain"] = str(Path(base_dir) / p)
            if doc.get("out_dir") and not Path(doc["out_dir"]).is_absolute():
                doc["out_dir"] = str(Path(base_dir) / doc["out_dir"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(doc, base_dir=path.parent)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FVLAB_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


def projection_directions(K_reduced: np.ndarray, basis: ZeroSumBasis, count: int, seed: int) -> list:
    """Eigenvectors of ``K`` (as centred functions) followed by seeded random centred directions."""
    dirs = []
    if basis.dim == 0:
        return dirs
    _, V = np.linalg.eigh(K_reduced)
    for i in range(V.shape[1]):
        dirs.append(("eig%d" % i, basis.lift_function(V[:, i])))
    rng = make_rng(seed, stream=10_000)
    for i in range(count):
        f = project_zero_mean(rng.standard_normal(basis.k), basis.pi)
        dirs.append(("rand%d" % i, f / np.linalg.norm(f)))
    return dirs


def _integral_matrix(chain, spec, basis, atol) -> np.ndarray:
    """Reduced ``K`` by polarisation of the integral route."""
    d = basis.dim
    L = basis.lift_function_matrix
    cols = [L[:, i] for i in range(d)]
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    cols += [L[:, i] + L[:, j] for i, j in pairs]
    vals = covariance_integral_detail(chain, spec, np.column_stack(cols), atol).value
    K = np.diag(vals[:d]).astype(float)
    for m, (i, j) in enumerate(pairs):
        K[i, j] = K[j, i] = 0.5 * (vals[d + m] - vals[i] - vals[j])
    return K


def _lattice_jitter(f: np.ndarray, n: int) -> float:
    """Largest single-jump change of ``<xi, f>``.

    Uniform noise of this width smooths the atoms of the lattice law before
    the KS test; its variance ``h^2 / 12`` is added to the reference variance.
    """
    return float(np.ptp(f)) / math.sqrt(n)


@dataclass
class CovarianceReport:
    data: dict

    @property
    def passed(self) -> bool:
        return bool(self.data["passed"])

    def to_json(self) -> str:
        return json.dumps(_clean(self.data), sort_keys=True, indent=2)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _simulate_all(chain, spec, config) -> dict:
    def one(item):
        i, n = item
        return n, sample_stationary(chain, spec, n, config.burn_in, config.spacing, config.samples,
                                    seed=config.seed, stream=i, init=config.init)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        return dict(pool.map(one, enumerate(config.n_list)))


def _oracle_law(chain, n, cap):
    if chain.k == 2 or (chain.k > 2 and lattice_size(n, chain.k) <= cap) or chain.k == 1:
        try:
            return exact_law(chain, n, cap)
        except TooLarge:
            return None
    return None


def lln_from_samples(chain: FiniteChain, spec: SpectralData, sims: dict, laws: dict | None = None) -> dict:
    """Distances ``||eta - pi||`` (l2 and total variation) per n, with a monotone-trend check."""
    pi = np.asarray(spec.pi)
    rows = []
    for n in sorted(sims):
        d = sims[n].weights - pi
        l2 = np.linalg.norm(d, axis=1)
        tv = 0.5 * np.abs(d).sum(axis=1)
        l2m, l2se = mean_with_se(l2)
        tvm, tvse = mean_with_se(tv)
        row = {"n": n, "l2_mean": l2m, "l2_se": l2se, "tv_mean": tvm, "tv_se": tvse, "samples": int(l2.shape[0])}
        law = (laws or {}).get(n)
        if law is not None:
            row["exact_rms_l2"] = math.sqrt(exact_mean_sq_distance(chain, spec, n, law=law))
        rows.append(row)
    monotone = True
    for a, b in zip(rows, rows[1:]):
        for key in ("l2", "tv"):
            se = math.hypot(a[key + "_se"] or 0.0, b[key + "_se"] or 0.0)
            if b[key + "_mean"] > a[key + "_mean"] + 2.0 * se + 1e-15:
                monotone = False
    return {"rows": rows, "monotone_decrease": monotone, "threshold": "2 combined standard errors"}


def lln_check(config: ExperimentConfig) -> dict:
    """Law-of-large-numbers check on its own simulation run."""
    chain = load_chain(config.chain)
    spec = solve_qsd(chain)
    sims = _simulate_all(chain, spec, config)
    laws = {n: _oracle_law(chain, n, config.oracle_cap) for n in config.n_list}
    return lln_from_samples(chain, spec, sims, laws)


def run_experiment(config: ExperimentConfig, write: bool = True) -> CovarianceReport:
    t = config.tol
    chain = load_chain(config.chain)
    spec = solve_qsd(chain)
    basis = ZeroSumBasis(np.asarray(spec.pi))
    d = basis.dim

    K_lyap = covariance_lyapunov(chain, spec)
    K_int = _integral_matrix(chain, spec, basis, t["quadrature"]) if d else np.zeros((0, 0))
    K_l = np.asarray(K_lyap.reduced)

    directions = projection_directions(K_l, basis, config.random_directions, config.seed)
    dir_rows = []
    route_ok = True
    for name, f in directions:
        b = basis.restrict_function(f)
        kl = float(b @ K_l @ b)
        ki = float(b @ K_int @ b)
        ok = abs(kl - ki) <= t["route_agreement"] * (1.0 + abs(kl))
        route_ok &= ok
        dir_rows.append({"name": name, "f": f, "K_lyapunov": kl, "K_integral": ki, "route_ok": ok})
    if d:
        mat_gap = float(np.max(np.abs(K_l - K_int)))
        route_ok &= mat_gap <= t["route_agreement"] * (1.0 + float(np.max(np.abs(K_l))))
    else:
        mat_gap = 0.0

    laws = {n: _oracle_law(chain, n, config.oracle_cap) for n in config.n_list}
    oracle = {}
    for n, law in laws.items():
        if law is None or d == 0:
            oracle[n] = None
            continue
        C = exact_fluctuation_covariance(chain, spec, n, law=law).reduced
        oracle[n] = {"matrix": C, "distance_to_K": float(np.max(np.abs(C - K_l))), "method": law.method}

    sims = _simulate_all(chain, spec, config)

    per_n = []
    all_pass = route_ok
    for n in config.n_list:
        sim: StationarySamples = sims[n]
        xi = sim.fluctuations(spec.pi)
        a = xi[:, 1:]
        mc_cov = (a.T @ a) / a.shape[0] if d else np.zeros((0, 0))
        tests = []
        m = len(directions)
        ks_threshold = t["ks_level"] / max(m, 1)
        jitter_rng = make_rng(config.seed, stream=20_000 + n)
        for (name, f), row in zip(directions, dir_rows):
            y = xi @ f
            est, se = jackknife(y, lambda v: float(np.mean(v * v)), int(t["jackknife_blocks"]))
            ess = effective_sample_size(y)
            b = basis.restrict_function(f)
            if oracle[n] is not None:
                ref, ref_kind = float(b @ oracle[n]["matrix"] @ b), "exact_oracle"
                band = t["se_band"] * se
            else:
                ref, ref_kind = row["K_lyapunov"], "K_lyapunov"
                band = t["se_band"] * se + t["asymptotic_bias"] * abs(ref)
            var_ok = abs(est - ref) <= band
            h = _lattice_jitter(f, n)
            z = (y + h * (jitter_rng.random(y.shape[0]) - 0.5)) / math.sqrt(row["K_lyapunov"] + h * h / 12.0)
            ks = sps.kstest(z, "norm")
            ks_ok = ks.pvalue >= ks_threshold
            tests.append({
                "direction": name,
                "n_var": est, "n_var_se": se, "reference": ref, "reference_kind": ref_kind,
                "variance_threshold": band, "variance_pass": var_ok,
                "ks_statistic": float(ks.statistic), "ks_pvalue": float(ks.pvalue),
                "ks_threshold": ks_threshold, "ks_pass": ks_ok, "jitter_width": h,
                "sample_size": int(y.shape[0]), "effective_sample_size": ess,
            })
            all_pass &= var_ok and ks_ok
        per_n.append({
            "n": n,
            "samples": int(xi.shape[0]),
            "burn_in": sim.burn_in, "spacing": sim.spacing, "heuristic_schedule": sim.heuristic_schedule,
            "events": sim.events,
            "mc_n_cov": mc_cov,
            "oracle": oracle[n],
            "tests": tests,
        })

    lln = lln_from_samples(chain, spec, sims, laws)
    all_pass &= lln["monotone_decrease"]

    data = {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "chain": Path(config.chain).name, "n_list": config.n_list, "samples": config.samples,
            "seed": config.seed, "burn_in": config.burn_in, "spacing": config.spacing,
            "random_directions": config.random_directions, "oracle_cap": config.oracle_cap, "init": config.init,
        },
        "tolerances": t,
        "qsd": {"pi": spec.pi, "lambda": spec.lam, "gamma": spec.gamma, "states": [str(s) for s in chain.domain]},
        "covariance": {
            "K_lyapunov": K_l, "K_integral": K_int, "lyapunov_residual": K_lyap.residual,
            "matrix_route_gap": mat_gap, "route_agreement": route_ok,
            "directions": dir_rows,
        },
        "per_n": per_n,
        "lln": lln,
        "passed": all_pass,
    }
    report = CovarianceReport(data)
    if write and config.out_dir:
        write_report(report, config.out_dir)
    return report


def write_report(report: CovarianceReport, out_dir) -> None:
    out = Path(out_dir)
    data = _clean(report.data)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json() + "\n")
        with open(out / "directions.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "direction", "K_lyapunov", "K_integral", "n_var", "n_var_se", "reference",
                        "reference_kind", "variance_pass", "ks_pvalue", "ks_pass", "effective_sample_size"])
            dirs = {r["name"]: r for r in data["covariance"]["directions"]}
            for block in data["per_n"]:
                for tst in block["tests"]:
                    r = dirs[tst["direction"]]
                    w.writerow([block["n"], tst["direction"], r["K_lyapunov"], r["K_integral"], tst["n_var"],
                                tst["n_var_se"], tst["reference"], tst["reference_kind"], tst["variance_pass"],
                                tst["ks_pvalue"], tst["ks_pass"], tst["effective_sample_size"]])
        with open(out / "oracle_covariance.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "i", "j", "oracle", "monte_carlo", "K_lyapunov"])
            K = data["covariance"]["K_lyapunov"]
            for block in data["per_n"]:
                orc = block["oracle"]
                for i in range(len(K)):
                    for j in range(len(K)):
                        w.writerow([block["n"], i, j, orc["matrix"][i][j] if orc else "",
                                    block["mc_n_cov"][i][j], K[i][j]])
        with open(out / "lln.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "l2_mean", "l2_se", "tv_mean", "tv_se", "exact_rms_l2"])
            for r in data["lln"]["rows"]:
                w.writerow([r["n"], r["l2_mean"], r["l2_se"], r["tv_mean"], r["tv_se"], r.get("exact_rms_l2", "")])
    except OSError as exc:
        raise ReportWriteFailure(str(exc)) from exc
