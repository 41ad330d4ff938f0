"""Closed loop: light actions, boundary inflows, density update, records."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mpc
from .conduction import PotentialMap, assemble_L, derive_A_from_conservation, full_potentials
from .conservation import (ConservationMatrices, Gating, TendencyConfig, _p_and_q,
                           conservation_matrices, outlet_discharge, step)
from .network import NoirNetwork
from .phases import Action, PhaseState, PhaseTable, apply_action, green_roads
from .rho import RolloutEngine, choose_action
from .scenario import Scenario, SimConfig


class SimulationError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True, eq=False)
class StepRecord:
    step: int
    X: np.ndarray          # reduced state
    rho: np.ndarray        # all elements, global order
    phi: np.ndarray        # all elements, global order (0 on outlets)
    u: np.ndarray
    action: Action
    phases: tuple[int, ...]    # green road id per light
    total_vehicles: float
    discharge: float
    max_density: float


@dataclass(eq=False)
class SimTrace:
    network: NoirNetwork
    table: PhaseTable
    cadence: int = 1
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def at(self, k: int) -> StepRecord:
        for r in self.records:
            if r.step == k:
                return r
        raise KeyError(f"step {k} not recorded")

    def potential(self, local_id: int) -> tuple[np.ndarray, np.ndarray]:
        """(steps, potential) of one element, by road-local id."""
        e = self.network.element(local_id)
        steps = np.array([r.step for r in self.records])
        return steps, np.array([r.phi[e] for r in self.records])


class InterfaceLayer:
    """Keeps the averaged conservation model and the conduction parameters
    derived from it in sync with the current tendency."""

    def __init__(self, net: NoirNetwork, tbl: PhaseTable, dt: float):
        self.net, self.tbl, self.dt = net, tbl, dt
        self.L = assemble_L(net)
        self._tend = None

    def refresh(self, tend: TendencyConfig) -> ConservationMatrices:
        if tend is not self._tend:
            self._tend = tend
            self.cm = conservation_matrices(self.net, tend, self.tbl, self.dt)
            self.A = derive_A_from_conservation(self.cm.Qbar, self.cm.pbar, self.L)
            self.potentials = PotentialMap(self.L, self.cm.pbar)
            self.mpc_template = None
        return self.cm

    def mpc_problem(self, X: np.ndarray, cfg: mpc.MpcConfig) -> mpc.MpcProblem:
        if self.mpc_template is None:
            self.mpc_template = mpc.build_problem(self.cm.Q_D, self.cm.W_D, X, cfg)
        t = self.mpc_template
        return mpc.MpcProblem(t.G, t.S, t.H, t.S.T @ (t.G @ X), np.asarray(X, float),
                              t.n_inlets, t.horizon)


def green_road_ids(tbl: PhaseTable, st: PhaseState) -> tuple[int, ...]:
    """Representative green road per light (smallest id in the active phase)."""
    return tuple(min(roads) for roads in green_roads(tbl, st.phase).values())


def run(net: NoirNetwork, tend: TendencyConfig, tbl: PhaseTable, cfg: SimConfig) -> SimTrace:
    dt = cfg.dt
    layer = InterfaceLayer(net, tbl, dt)
    gating = Gating.build(net, tbl)
    engine = RolloutEngine(net, tend, tbl, dt)
    trace = SimTrace(net, tbl, cfg.cadence)

    X = np.broadcast_to(np.asarray(cfg.x0, dtype=float), (net.n_state,)).copy()
    rho_out = np.zeros(net.n_outlets)
    outlet_rows = tend.routing.tocsr()[list(net.outlets)][:, net.state_elements]
    st = tbl.initial_state()
    u = np.full(net.n_inlets, cfg.mpc.budget / net.n_inlets)
    plan = None

    for k in range(1, cfg.steps + 1):
        try:
            layer.refresh(tend)
            decision = choose_action(net, tend, tbl, st, X, u, cfg.rho, dt, engine)
            st = apply_action(tbl, st, decision.action)

            prob = layer.mpc_problem(X, cfg.mpc)
            warm = None if plan is None else mpc.shift_plan(plan, net.n_inlets)
            sol = mpc.solve(prob, cfg.mpc, warm_start=warm)
            plan = sol.U
            u = mpc.actuate(plan, cfg.mpc, net.n_inlets)

            p = gating.apply(tend.p, st.phase)
            _, Q = _p_and_q(net, tend, p)
            discharge = outlet_discharge(net, tend, p, X, dt)
            into_outlets = outlet_rows @ (p[net.state_elements] * X)
            p_out = p[list(net.outlets)]
            X = step(X, u, Q, dt)
            rho_out = rho_out + dt * (into_outlets - p_out * rho_out)
        except Exception as exc:  # noqa: BLE001 - re-raised with the step index
            raise SimulationError(k, exc) from exc

        if (k - 1) % cfg.cadence == 0:
            rho = np.zeros(net.n_elements)
            rho[net.state_elements] = X
            rho[list(net.outlets)] = rho_out
            phi = full_potentials(net, layer.potentials(X))
            trace.records.append(StepRecord(
                step=k, X=X.copy(), rho=rho, phi=phi, u=u.copy(), action=decision.action,
                phases=green_road_ids(tbl, st), total_vehicles=float(X.sum()),
                discharge=discharge, max_density=float(X.max()),
            ))
    return trace


def run_scenario(sc: Scenario, steps: int | None = None) -> SimTrace:
    cfg = sc.config
    if steps is not None:
        cfg = SimConfig(steps=steps, dt=cfg.dt, mpc=cfg.mpc, rho=cfg.rho,
                        cadence=cfg.cadence, x0=cfg.x0)
    return run(sc.network, sc.tendency, sc.table, cfg)


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_bytes(buf.getvalue().encode("utf-8"))


def emit_outputs(trace: SimTrace, out: str | Path) -> list[Path]:
    """Write the per-step CSV files and a run summary into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    net, tbl = trace.network, trace.table
    order = np.argsort(net.local_ids)            # columns in road-local id order
    lids = net.local_ids[order]
    inlets = list(net.inlets)
    recs = trace.records

    files = {
        "densities.csv": (["step"] + [f"e{l}" for l in lids],
                          [[r.step] + [_fmt(v) for v in r.rho[order]] for r in recs]),
        "potentials.csv": (["step"] + [f"e{l}" for l in lids],
                           [[r.step] + [_fmt(v) for v in r.phi[order]] for r in recs]),
        "inflows.csv": (["step"] + [f"inlet_e{net.local_id(e)}" for e in inlets],
                        [[r.step] + [_fmt(v) for v in r.u] for r in recs]),
        "phases.csv": (["step"] + [f"i{v}" for v in tbl.intersections],
                       [[r.step] + list(r.phases) for r in recs]),
    }
    paths = []
    for name, (header, rows) in files.items():
        _write_csv(out / name, header, rows)
        paths.append(out / name)

    lines = [f"records: {len(recs)}", f"cadence: {trace.cadence}",
             f"elements: {net.n_elements}", f"inlets: {net.n_inlets}",
             f"outlets: {net.n_outlets}", f"lights: {len(tbl.signals)}"]
    if recs:
        last = recs[-1]
        lines += [
            f"final_step: {last.step}",
            f"final_total_vehicles: {_fmt(last.total_vehicles)}",
            f"final_max_density: {_fmt(last.max_density)}",
            f"final_max_potential: {_fmt(last.phi.max())}",
            f"total_discharge: {_fmt(math.fsum(r.discharge for r in recs))}",
            f"min_density: {_fmt(min(r.rho.min() for r in recs))}",
            f"min_potential: {_fmt(min(r.phi.min() for r in recs))}",
        ]
    (out / "summary.txt").write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    paths.append(out / "summary.txt")
    return paths
