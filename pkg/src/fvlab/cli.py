"""Command-line entry point ``fvlab``.

Exit codes: 0 when every check passes, 2 on a numerical check failure,
1 on usage or I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import errors as E
from .chain import load_chain
from .covariance import (
    covariance_integral_detail,
    covariance_lyapunov,
    diagonalize_symmetric,
)
from .experiment import _clean, load_config, run_experiment
from .oracle import (
    build_fv_generator,
    check_moment_estimate,
    exact_fluctuation_covariance,
    exact_law,
    identity_test_operator,
)
from .simulate import sample_stationary, simulate_ou
from .spectral import build_pi_return, diffusion_operator, drift_operator, solve_qsd

USAGE_ERRORS = (
    E.ChainFileError, E.ConfigError, E.NotStochastic, E.EmptyDomain, E.NotIrreducible,
    E.DimensionMismatch, E.StateNotInDomain, E.InvalidParams, E.NotCentered, E.TooLarge,
    E.NonRepresentableXi, OSError,
)


def _emit(text: str, out: str | None) -> None:
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise E.ReportWriteFailure(str(exc)) from exc
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _load_functions(path, chain):
    """Functions from JSON: a list of value lists, or an object ``name -> list | {label: value}``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise E.ConfigError(f"cannot read function file {path}: {exc}") from exc
    items = doc.items() if isinstance(doc, dict) else (("f%d" % i, v) for i, v in enumerate(doc))
    out = []
    for name, v in items:
        if isinstance(v, dict):
            v = [v[str(s)] if str(s) in v else v.get(s) for s in chain.domain]
            if any(x is None for x in v):
                raise E.ConfigError(f"function {name!r} does not give a value for every domain state")
        v = np.asarray(v, dtype=float)
        if v.shape != (chain.k,):
            raise E.DimensionMismatch(f"function {name!r} has {v.size} values, expected {chain.k}")
        out.append((str(name), v))
    return out


def cmd_qsd(args) -> int:
    chain = load_chain(args.chain)
    spec = solve_qsd(chain)
    if args.csv:
        _emit(_csv(["state", "weight"], [[str(s), repr(float(p))] for s, p in zip(chain.domain, spec.pi)]), args.out)
        return 0
    exit_res = abs(float(spec.pi @ chain.q) - spec.lam)
    _emit(_json({
        "states": [str(s) for s in chain.domain],
        "lambda": spec.lam, "gamma": spec.gamma, "pi": spec.pi,
        "perron_residual": spec.perron_residual, "killing_rate_residual": exit_res,
        "method": spec.method,
    }), args.out)
    return 0


def cmd_covariance(args) -> int:
    chain = load_chain(args.chain)
    spec = solve_qsd(chain)
    pr = build_pi_return(chain, spec)
    basis = pr.basis
    if args.f:
        funcs = _load_functions(args.f, chain)
    else:
        funcs = [("basis%d" % i, basis.lift_function_matrix[:, i]) for i in range(basis.dim)]
    report = {"states": [str(s) for s in chain.domain], "route": args.route, "tol": args.tol}
    ok = True
    K = None
    if args.route in ("both", "lyapunov"):
        K = covariance_lyapunov(chain, spec, pr)
        report["K_lyapunov"] = K.reduced
        report["lyapunov_residual"] = K.residual
    forms = []
    integral = None
    if args.route in ("both", "integral") and funcs:
        F = np.column_stack([f for _, f in funcs])
        integral = covariance_integral_detail(chain, spec, F, args.tol).value
    for i, (name, f) in enumerate(funcs):
        row = {"name": name, "f": f}
        if K is not None:
            row["lyapunov"] = K.quadratic_form(f)
        if integral is not None:
            row["integral"] = float(integral[i])
        if K is not None and integral is not None:
            delta = abs(row["lyapunov"] - row["integral"])
            row["route_delta"] = delta
            row["agree"] = delta <= 1e-6 * (1.0 + abs(row["lyapunov"]))
            ok &= row["agree"]
        forms.append(row)
    report["quadratic_forms"] = forms
    report["passed"] = ok
    _emit(_json(report), args.out)
    return 0 if ok else 2


def cmd_simulate(args) -> int:
    chain = load_chain(args.chain)
    spec = solve_qsd(chain)
    sim = sample_stationary(chain, spec, args.n, args.burn_in, args.spacing, args.samples,
                            seed=args.seed, init=args.init)
    _emit(_csv([str(s) for s in chain.domain], sim.counts.tolist()), args.out)
    return 0


def cmd_ou(args) -> int:
    chain = load_chain(args.chain)
    spec = solve_qsd(chain)
    pr = build_pi_return(chain, spec)
    B0 = drift_operator(pr)
    decomp = diagonalize_symmetric(diffusion_operator(pr))
    path = simulate_ou(B0, decomp, args.dt, args.t_end, seed=args.seed, record_every=args.record_every)
    lift = pr.basis.lift_measure_matrix
    xi = path.xi @ lift.T if pr.basis.dim else np.zeros((path.times.shape[0], chain.k))
    rows = [[repr(float(t))] + [repr(float(v)) for v in x] for t, x in zip(path.times, xi)]
    _emit(_csv(["time"] + [str(s) for s in chain.domain], rows), args.out)
    return 0


def cmd_oracle(args) -> int:
    chain = load_chain(args.chain)
    spec = solve_qsd(chain)
    n = args.n
    if args.emit == "generator":
        gen = build_fv_generator(chain, n, args.cap)
        Q = gen.matrix.tocoo()
        labels = [" ".join(map(str, s)) for s in gen.lattice.states.tolist()]
        rows = [[labels[i], labels[j], repr(float(v))] for i, j, v in zip(Q.row, Q.col, Q.data)]
        _emit(_csv(["from", "to", "rate"], rows), args.out)
    elif args.emit == "stationary":
        law = exact_law(chain, n, args.cap)
        rows = [list(map(int, s)) + [repr(float(p))] for s, p in zip(law.lattice.states.tolist(), law.nu)]
        _emit(_csv([str(s) for s in chain.domain] + ["probability"], rows), args.out)
    elif args.emit == "covariance":
        C = exact_fluctuation_covariance(chain, spec, n, args.cap).reduced
        K = covariance_lyapunov(chain, spec).reduced
        d = C.shape[0]
        dist = float(np.max(np.abs(C - K))) if d else 0.0
        header = ["n"] + ["c%d_%d" % (i, j) for i in range(d) for j in range(d)] + ["distance_to_K"]
        _emit(_csv(header, [[n] + [repr(float(v)) for v in C.ravel()] + [repr(dist)]]), args.out)
    else:
        R = identity_test_operator(spec)
        value = check_moment_estimate(chain, spec, n, R, args.cap)
        _emit(_csv(["n", "value", "n_times_abs_value"], [[n, repr(value), repr(n * abs(value))]]), args.out)
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.out:
        config.out_dir = args.out
    report = run_experiment(config)
    d = report.data
    print(f"route agreement: {d['covariance']['route_agreement']}")
    for block in d["per_n"]:
        for t in block["tests"]:
            print(f"n={block['n']:<6} {t['direction']:<6} nVar={t['n_var']:.5f} +- {t['n_var_se']:.5f} "
                  f"ref={t['reference']:.5f} ({t['reference_kind']}) var_pass={t['variance_pass']} "
                  f"ks_p={t['ks_pvalue']:.4f} ks_pass={t['ks_pass']}")
    print(f"lln monotone: {d['lln']['monotone_decrease']}")
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fvlab", description="Fleming-Viot fluctuation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="run a configured experiment and write report.json + CSVs")
    s.add_argument("config")
    s.add_argument("--out", help="override the output directory")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("qsd", help="quasi-stationary distribution, killing rate and gap")
    s.add_argument("chain")
    s.add_argument("--csv", action="store_true", help="emit pi as state,weight CSV")
    s.add_argument("--out")
    s.set_defaults(func=cmd_qsd)

    s = sub.add_parser("covariance", help="limit covariance by the Lyapunov and/or integral route")
    s.add_argument("chain")
    s.add_argument("--f", help="JSON file with centred test functions")
    s.add_argument("--route", choices=["both", "lyapunov", "integral"], default="both")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--out")
    s.set_defaults(func=cmd_covariance)

    s = sub.add_parser("simulate", help="sample the stationary Fleming-Viot empirical measure")
    s.add_argument("chain")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--burn-in", type=float)
    s.add_argument("--spacing", type=float)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--init", default="pi")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("ou", help="simulate the limiting Ornstein-Uhlenbeck fluctuation field")
    s.add_argument("chain")
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--t-end", type=float, default=10.0)
    s.add_argument("--record-every", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_ou)

    s = sub.add_parser("oracle", help="exact finite-n analysis on the particle lattice")
    s.add_argument("chain")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--emit", choices=["generator", "stationary", "covariance", "moment"], default="stationary")
    s.add_argument("--cap", type=int, default=2_000_000)
    s.add_argument("--out")
    s.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"fvlab: error: {exc}", file=sys.stderr)
        return 1
    except E.FVLabError as exc:
        print(f"fvlab: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
