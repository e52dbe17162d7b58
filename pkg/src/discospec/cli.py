"""Command-line entry point: one subcommand per module operation.

Every run writes its outputs plus a ``manifest.json`` into the output directory.
Exit codes: 0 success, 2 contract error, 3 numerical failure, 64 unknown subcommand.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .asymptotics import DIRICHLET, ROBIN, constants, parity_limits, residuals
from .core import ContractError, IncompleteSpectrumError, ProblemSpec, Spectrum
from .forward import DEFAULT_CONFIG, eigenvalues, g_wronskian, transfer_matrix
from .inverse import ExperimentConfig, InverseSetup, reconstruct, uniqueness_experiment
from .probe import (
    E_decay_probe,
    Lattice,
    decay_evaluators,
    g_integral,
    g_integral_log,
    growth_scan,
    phi0,
    phi_product,
    spectrum_lattice,
)
from .spectral_data import (
    SpectralSubset,
    check_condition_I,
    check_density_i,
    check_multi_N,
    check_summability_ii,
    generate_regular_subset,
)

SUBCOMMANDS = ("forward", "asym", "conditions", "probe", "invert", "experiment", "selftest")
EXIT_OK, EXIT_CONTRACT, EXIT_NUMERIC, EXIT_USAGE = 0, 2, 3, 64


class NumericalFailure(RuntimeError):
    pass


def tool_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # not installed
        return "0.0.0"


# ---------------------------------------------------------------------------
# persistence helpers
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if np.isfinite(f) else repr(f)
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, sub: str, inputs, params: dict, outputs, wall: float) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "subcommand": sub,
        "inputs": {str(p): sha256(p) for p in inputs},
        "params": params,
        "version": tool_version(),
        "wall_time_s": wall,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "outputs": sorted(Path(p).name for p in outputs),
    }
    return write_json(out_dir / "manifest.json", manifest)


def load_problem(path) -> ProblemSpec:
    return ProblemSpec.from_json(Path(path).read_text())


def _cfg(args):
    cpu = getattr(args, "cells_per_unit", None)
    return DEFAULT_CONFIG if cpu is None else replace(DEFAULT_CONFIG, cells_per_unit=cpu)


def _out_dir(out: Path) -> Path:
    return out.parent if out.suffix else out


# ---------------------------------------------------------------------------
# subcommands; each returns (outputs, inputs)
# ---------------------------------------------------------------------------


def cmd_forward(args):
    B = load_problem(args.problem)
    spec = eigenvalues(B, args.nmax, _cfg(args))
    out = Path(args.out)
    roots = np.sign(spec.values) * np.sqrt(np.abs(spec.values))
    if out.suffix == ".json":
        write_json(out, {"problem": B.to_dict(), "n": spec.indices, "lambda": spec.values,
                         "sqrt_lambda": roots, "residual_abs": spec.residuals})
    else:
        write_csv(out, ["n", "lambda", "sqrt_lambda", "residual_abs"],
                  zip(spec.indices, spec.values, roots, spec.residuals))
    return [out], [args.problem]


def cmd_asym(args):
    B = load_problem(args.problem)
    spec = eigenvalues(B, args.nmax, _cfg(args))
    rep = residuals(spec)
    out = Path(args.out)
    write_csv(out, ["n", "sqrt_lambda", "predicted", "residual_times_n"],
              zip(rep.n, rep.sqrt_lambda, rep.predicted, rep.r))
    c = constants(B)
    summary = {"constants": {"a": c.a, "omega": c.omega, "omega0": c.omega0, "omega1": c.omega1},
               "tail_max": rep.tail_max}
    if not B.dirichlet and args.nmax >= 60:
        ev, od = parity_limits(spec)
        summary.update(parity_limits=[ev, od], parity_gap=ev - od,
                       predicted_gap=2 * c.omega1 / np.pi)
    if args.nmax >= 50:
        summary["window_50_100_max"] = rep.window_max(50, min(100, args.nmax))
    js = out.with_name(out.stem + "_summary.json")
    write_json(js, summary)
    return [out, js], [args.problem]


def _load_spectrum(path, nmax, cfg) -> Spectrum:
    return eigenvalues(load_problem(path), nmax, cfg)


def _parse_subsets(text: str, spectra):
    if text.startswith("regular:"):
        kv = dict(part.split("=", 1) for part in text[len("regular:"):].split(","))
        sigma = float(kv["sigma"])
        return [generate_regular_subset(s, sigma) for s in spectra], sigma
    raw = json.loads(Path(text).read_text()) if Path(text).exists() else json.loads(text)
    if not isinstance(raw, list) or len(raw) != len(spectra):
        raise ContractError("explicit subsets need one index list per spectrum")
    return [SpectralSubset.from_indices(s, idx) for s, idx in zip(spectra, raw)], None


def cmd_conditions(args):
    cfg = _cfg(args)
    spectra = [_load_spectrum(p, args.nmax, cfg) for p in args.spectra]
    subsets, sigma_reg = _parse_subsets(args.subsets, spectra)
    sigma = args.sigma if args.sigma is not None else sigma_reg
    b = args.b
    reports = []
    kinds = [DIRICHLET if s.problem.dirichlet else ROBIN for s in spectra]
    for s, k in zip(subsets, kinds):
        if k == ROBIN and len(s):
            reports.append(check_condition_I(s, args.nmax))
    if len(spectra) == 2:
        if sigma is not None:
            reports.append(check_density_i(subsets[0], subsets[1], spectra[0], spectra[1], sigma))
        sig = args.sigmas
        if sig is not None:
            a = constants(spectra[1].problem).a
            reports.append(check_summability_ii(subsets[0], subsets[1], sig[0], sig[1], b, a))
    elif len(spectra) >= 3:
        Hs = [s.problem.H for s in spectra]
        a = constants(spectra[1].problem).a
        if sigma is not None:
            reports.append(check_multi_N(subsets, spectra, "i", b, sigma=sigma, kinds=kinds, Hs=Hs))
        if args.sigmas:
            reports.append(check_multi_N(subsets, spectra, "ii", b, sigmas=args.sigmas, kinds=kinds,
                                         Hs=Hs, a=a))
    out = Path(args.out)
    outputs = [write_json(out / "report.json", {"reports": [r.to_dict() for r in reports],
                                                "subset_sizes": [len(s) for s in subsets]})]
    for r in reports:
        if "margin" in r.margins:
            m = r.margins
            outputs.append(write_csv(out / f"margins_{r.condition}.csv", ["r", "N_S", "N_Lambda", "margin"],
                                     zip(m["r"], m["N_S"], m["N_Lambda"], m["margin"])))
    return outputs, list(args.spectra)


def cmd_probe(args):
    B, Bt = load_problem(args.pair[0]), load_problem(args.pair[1])
    cfg = _cfg(args)
    out = Path(args.out)
    outputs = []
    summary = {"mode": args.mode, "b": args.b}
    if args.mode == "identity":
        ks = np.arange(1, 101) * 0.5
        gi = g_integral(B, Bt, args.b, ks, cfg)
        gw = g_wronskian(B, Bt, ks, cfg, extra=(args.b,))
        rel = np.abs(gi - gw) / np.maximum(np.abs(gw), np.finfo(float).tiny)
        outputs.append(write_csv(out / "identity.csv", ["k", "g_integral", "g_wronskian", "rel_diff"],
                                 zip(ks, gi.real, gw.real, rel)))
        summary["max_rel_diff"] = float(rel.max())
    elif args.mode == "decay":
        if args.sigma1 is None:
            spec = eigenvalues(B, args.nmax, cfg)
            c = constants(B)
            from .asymptotics import predict_sqrt

            kind = DIRICHLET if B.dirichlet else ROBIN
            ext = lambda n: np.array([predict_sqrt(kind, c, int(k)) for k in n]) ** 2
            lat1 = spectrum_lattice(spec.values, kind, 1.0, c.a, ext)
        else:
            lat1 = Lattice.alpha(args.sigma1)
        lat2 = Lattice.empty() if args.sigma2 == 0 else Lattice.beta(args.sigma2, constants(B).a)
        G, P = decay_evaluators(B, Bt, args.b, lat1, lat2, cfg, args.factors)
        ts = np.logspace(2, 6, 25)
        d = E_decay_probe(G, P, ts)
        outputs.append(write_csv(out / "decay.csv", ["t", "abs_E", "skipped"], zip(d.t, d.abs_E, d.skipped)))
        summary["slope"] = d.slope
    elif args.mode == "growth":
        radii = np.linspace(5, 50, 91)
        ge = growth_scan(lambda k: g_integral_log(B, Bt, args.b, k, cfg), radii)
        outputs.append(write_csv(out / "growth_theta.csv", ["theta", "h"], zip(ge.theta, ge.h)))
        outputs.append(write_csv(out / "zero_counts.csv", ["r", "n_winding", "n_real", "ratio"],
                                 zip(ge.radii, ge.zero_counts, ge.real_zero_counts, ge.zero_ratio)))
        summary.update(h_half_pi=float(ge.h[-1]), indicator=ge.indicator,
                       h_bound=2 * args.b, indicator_bound=4 * args.b / np.pi)
    elif args.mode == "phi":
        a = constants(B).a
        s1 = 1.0 if args.sigma1 is None else args.sigma1
        rng = np.random.default_rng(args.seed)
        lam = rng.uniform(-100, 100, 20) + 1j * rng.uniform(-100, 100, 20)
        lam = lam * np.minimum(1.0, 100 / np.abs(lam))
        lat2 = Lattice.empty() if args.sigma2 == 0 else Lattice.beta(args.sigma2, a)
        val, err = phi_product(Lattice.alpha(s1), lat2, lam, args.factors)
        ref = phi0(lam, s1, args.sigma2, a) / (1 + a)
        outputs.append(write_csv(out / "phi.csv", ["lam_re", "lam_im", "product_re", "product_im",
                                                   "closed_re", "closed_im", "err_bar"],
                                 zip(lam.real, lam.imag, val.real, val.imag, ref.real, ref.imag, err)))
        summary.update(max_dev_over_bar=float(np.max(np.abs(val - ref) / err)),
                       max_rel_bar=float(np.max(err / np.abs(val))))
    outputs.append(write_json(out / "summary.json", summary))
    return outputs, list(args.pair)


def cmd_invert(args):
    setup = InverseSetup.from_dict(json.loads(Path(args.setup).read_text()))
    res = reconstruct(setup)
    out = Path(args.out)
    write_json(out, res.to_dict())
    if res.status != "converged":
        raise NumericalFailure(f"inversion stalled: {res.message}")
    return [out], [args.setup]


def cmd_experiment(args):
    cfg = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
    reports = uniqueness_experiment(cfg)
    out = Path(args.out)
    outputs = []
    for r in reports:
        outputs.append(write_json(out / f"sigma_{r['sigma']:.4f}.json", r))
    outputs.append(write_csv(out / "summary.csv",
                             ["sigma", "threshold", "above_threshold", "n_data", "n_success", "spread", "agree"],
                             ([r["sigma"], r["threshold"], r["above_threshold"], r["n_data"], r["n_success"],
                               r["spread"], r["agree"]] for r in reports)))
    return outputs, [args.config]


def selftest_checks():
    """Closed-form oracle checks: (name, passed, detail)."""
    from .core import Dirichlet, Potential, Robin, Transmission

    out = []
    n = np.arange(101)
    free = ProblemSpec(Potential.constant(0.0))
    jump = ProblemSpec(Potential.constant(0.0), jump=Transmission(2.0, 0.0))
    for name, P in (("free", free), ("jump a1=2", jump)):
        v = eigenvalues(P, 100).values
        err = float(np.max(np.abs(v[1:] - (n[1:] * np.pi) ** 2) / (n[1:] * np.pi) ** 2))
        err = max(err, abs(v[0]))
        out.append((name, err <= 1e-9, err))
    D = ProblemSpec(Potential.constant(0.0), right=Dirichlet(), jump=Transmission(2.0, 0.0))
    v = np.sqrt(eigenvalues(D, 100).values)
    # roots of cos k = -0.6
    s = np.arcsin(0.6)
    roots = np.sort(np.concatenate([2 * np.pi * np.arange(51) + np.pi / 2 + s,
                                    2 * np.pi * np.arange(51) + 3 * np.pi / 2 - s]))[:101]
    err = float(np.max(np.abs(v - roots) / roots))
    out.append(("dirichlet a1=2", err <= 1e-9, err))
    M = transfer_matrix(ProblemSpec(Potential.constant(1.0), h=0.5, right=Robin(0.0),
                                    jump=Transmission(1.7, 0.3)), 12.5)
    det = float(abs(np.linalg.det(M) - 1))
    out.append(("transfer det", det <= 1e-10, det))
    g = float(np.max(np.abs(g_integral(jump, jump, 0.5, np.array([1.0, 7.0, 3 + 2j])))))
    out.append(("g(B,B)=0", g == 0.0, g))
    return out


def cmd_selftest(args):
    checks = selftest_checks()
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail:.3e}")
    outputs = []
    if args.out:
        outputs.append(write_csv(Path(args.out) / "selftest.csv", ["check", "passed", "detail"],
                                 [(n, ok, d) for n, ok, d in checks]))
    if not all(ok for _, ok, _ in checks):
        raise NumericalFailure("selftest failed")
    return outputs, []


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="discospec", description=__doc__.splitlines()[0])
    sp = ap.add_subparsers(dest="cmd", required=True)

    def add_cells(p):
        p.add_argument("--cells-per-unit", type=int, default=None, help="forward cells per unit length")

    p = sp.add_parser("forward", help="eigenvalues of a problem")
    p.add_argument("--problem", required=True)
    p.add_argument("--nmax", type=int, required=True)
    p.add_argument("--out", required=True, help="output .csv or .json")
    add_cells(p)

    p = sp.add_parser("asym", help="asymptotic residuals")
    p.add_argument("--problem", required=True)
    p.add_argument("--nmax", type=int, required=True)
    p.add_argument("--out", required=True, help="output .csv")
    add_cells(p)

    p = sp.add_parser("conditions", help="mixed-data sufficiency checks")
    p.add_argument("--spectra", nargs="+", required=True, help="problem JSON files, Dirichlet one second")
    p.add_argument("--subsets", required=True, help="'regular:sigma=<v>' or JSON list of index lists")
    p.add_argument("--nmax", type=int, default=100)
    p.add_argument("--b", type=float, default=0.5)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--sigmas", type=float, nargs="+", default=None)
    p.add_argument("--out", required=True, help="output directory")
    add_cells(p)

    p = sp.add_parser("probe", help="entire-function probes for a pair of problems")
    p.add_argument("--pair", nargs=2, required=True, metavar=("B", "BTILDE"))
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--mode", choices=("identity", "decay", "growth", "phi"), required=True)
    p.add_argument("--sigma1", type=float, default=None, help="comparison lattice density (default: spectrum of B)")
    p.add_argument("--sigma2", type=float, default=0.0)
    p.add_argument("--nmax", type=int, default=400)
    p.add_argument("--factors", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    add_cells(p)

    p = sp.add_parser("invert", help="reconstruct from partial spectra")
    p.add_argument("--setup", required=True)
    p.add_argument("--out", required=True, help="output .json")

    p = sp.add_parser("experiment", help="multi-start uniqueness experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sp.add_parser("selftest", help="closed-form oracle suite")
    p.add_argument("--out", default=None, help="optional output directory")
    return ap


COMMANDS = {"forward": cmd_forward, "asym": cmd_asym, "conditions": cmd_conditions, "probe": cmd_probe,
            "invert": cmd_invert, "experiment": cmd_experiment, "selftest": cmd_selftest}


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    if not argv or argv[0] not in SUBCOMMANDS:
        if argv and argv[0] in ("-h", "--help"):
            ap.print_help()
            return EXIT_OK
        ap.print_usage(sys.stderr)
        print(f"unknown subcommand; choose from {', '.join(SUBCOMMANDS)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONTRACT
    t0 = time.perf_counter()
    try:
        outputs, inputs = COMMANDS[args.cmd](args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except IncompleteSpectrumError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"contract error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    if outputs:
        params = {k: v for k, v in vars(args).items() if k != "cmd"}
        dirs = {_out_dir(Path(o)) for o in outputs}
        for d in dirs:
            write_manifest(d, args.cmd, inputs, params, [o for o in outputs if _out_dir(Path(o)) == d],
                           time.perf_counter() - t0)
    return EXIT_OK


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
