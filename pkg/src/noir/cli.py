"""Command-line entry point: ``noir validate|simulate|spectrum|mpc-solve``."""

from __future__ import annotations

import argparse
import csv
import sys
import warnings

import numpy as np

from . import mpc
from .conduction import assemble_L
from .conservation import assemble_P, conservation_matrices
from .phases import iter_lambdas, phase_space_size
from .scenario import ScenarioError, ScenarioWarning, load_scenario
from .simulate import SimulationError, emit_outputs, run_scenario

SPECTRUM_LIMIT = 1024


def _load(path):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ScenarioWarning)
        sc = load_scenario(path)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return sc


def _eig_summary(name: str, M: np.ndarray) -> str:
    ev = np.linalg.eigvals(M)
    return (f"{name}: n={len(ev)} min_re={ev.real.min():.6g} max_re={ev.real.max():.6g} "
            f"max_abs_im={np.abs(ev.imag).max():.3g}")


def cmd_validate(args) -> int:
    sc = _load(args.file)
    net, tbl = sc.network, sc.table
    print(f"ok: {len(net.roads)} roads, {net.n_elements} elements, {net.n_inlets} inlets, "
          f"{net.n_outlets} outlets, {len(tbl.signals)} lights, "
          f"|Lambda|={phase_space_size(tbl)}")
    return 0


def cmd_simulate(args) -> int:
    sc = _load(args.file)
    trace = run_scenario(sc, steps=args.steps)
    for p in emit_outputs(trace, args.out):
        print(p)
    return 0


def cmd_spectrum(args) -> int:
    sc = _load(args.file)
    net, tend, tbl = sc.network, sc.tendency, sc.table
    cm = conservation_matrices(net, tend, tbl, sc.config.dt)
    print(_eig_summary("L", assemble_L(net)))
    print(_eig_summary("Qbar", cm.Qbar))
    size = phase_space_size(tbl)
    if size > SPECTRUM_LIMIT:
        print(f"Q_lambda: skipped, |Lambda|={size} > {SPECTRUM_LIMIT}")
        return 0
    for lam in iter_lambdas(tbl):
        _, Q = assemble_P(net, tend, tbl, lam)
        print(_eig_summary(f"Q{tuple(j + 1 for j in lam)}", Q))
    return 0


def _read_state(path, net) -> np.ndarray:
    X = np.zeros(net.n_state)
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#") or row[0].strip() == "element":
                continue
            e = net.element(int(row[0]))
            if net.kind(e) == "out":
                continue
            X[net.state_index(e)] = float(row[1])
    if np.any(X < 0):
        raise ValueError("state densities must be nonnegative")
    return X


def cmd_mpc_solve(args) -> int:
    sc = _load(args.file)
    net, cfg = sc.network, sc.config
    X = _read_state(args.state, net)
    cm = conservation_matrices(net, sc.tendency, sc.table, cfg.dt)
    prob = mpc.build_problem(cm.Q_D, cm.W_D, X, cfg.mpc)
    sol = mpc.solve(prob, cfg.mpc)
    u = mpc.actuate(sol.U, cfg.mpc, net.n_inlets)
    print(f"objective {float(sol.objective)!r} residual {sol.residual:.3g} iterations {sol.iterations}")
    print("inlet,inflow")
    for e, v in zip(net.inlets, u):
        print(f"{net.local_id(e)},{float(v)!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="noir", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("validate", help="parse and check a scenario file")
    p.add_argument("file")
    p.set_defaults(fn=cmd_validate)
    p = sub.add_parser("simulate", help="run the closed loop and write CSV outputs")
    p.add_argument("file")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(fn=cmd_simulate)
    p = sub.add_parser("spectrum", help="eigenvalue summaries of L, Qbar and each Q_lambda")
    p.add_argument("file")
    p.set_defaults(fn=cmd_spectrum)
    p = sub.add_parser("mpc-solve", help="one-shot inflow QP for a given state")
    p.add_argument("file")
    p.add_argument("--state", required=True, help="CSV of element,vehicles (road-local ids)")
    p.set_defaults(fn=cmd_mpc_solve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as exc:
        print(f"error: invalid scenario\n{exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"error: simulation aborted at {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, KeyError, mpc.MpcError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
