"""Line-oriented scenario files.

::

    # comment
    [intersections]
    14 C                  # id kind (B = boundary terminal, C = connection)
    signal 14 3           # light at 14 with threshold 3
    [roads]
    1 EXT 14 5            # id from to n_elements; EXT or a B id is outside
    [phases]
    14 1 18               # intersection phase road: road 18 is green in phase 1
    [tendency]
    p_free 0.8            # defaults, then per element / per turn overrides
    p_release 0.8
    p 162 0.5             # road-local element id, value
    q 10 11 0.5           # from, to (road-local), value
    [params]
    u0 54

Problems are collected as line-anchored diagnostics and raised together.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conservation import (P_FREE, P_RELEASE, DynamicsError, TendencyConfig,
                           average_p, check_step_size, default_tendency, validate_tendency)
from .mpc import MpcConfig
from .network import (BOUNDARY, CONNECTION, EXT, NetworkError, NoirNetwork, RoadSpec,
                      build_network)
from .phases import PhaseError, PhaseTable, Signal
from .rho import RhoConfig

SECTIONS = ("intersections", "roads", "phases", "tendency", "params")


class ScenarioWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Diagnostic:
    line: int
    rule: str
    message: str

    def __str__(self):
        return f"line {self.line}: [{self.rule}] {self.message}"


class ScenarioError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = sorted(diagnostics, key=lambda d: d.line)
        super().__init__("\n".join(str(d) for d in self.diagnostics))

    @property
    def rules(self) -> set[str]:
        return {d.rule for d in self.diagnostics}


@dataclass(frozen=True, eq=False)
class SimConfig:
    steps: int = 200
    dt: float = 1.0
    mpc: MpcConfig = field(default_factory=MpcConfig)
    rho: RhoConfig = field(default_factory=RhoConfig)
    cadence: int = 1
    x0: np.ndarray | float = 0.0   # initial vehicles per state element

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("step count must be at least 1")
        if self.cadence < 1:
            raise ValueError("recording cadence must be at least 1")
        if self.mpc.dt != self.dt:
            raise ValueError("MPC step size differs from the simulation step size")


@dataclass(frozen=True, eq=False)
class Scenario:
    network: NoirNetwork
    tendency: TendencyConfig
    table: PhaseTable
    config: SimConfig
    warnings: tuple[str, ...] = ()


_INT = re.compile(r"^[+-]?\d+$")


def _int(tok: str) -> int:
    if not _INT.match(tok):
        raise ValueError(tok)
    return int(tok)


def parse_scenario(text: str) -> Scenario:
    diags: list[Diagnostic] = []

    def err(line, rule, msg):
        diags.append(Diagnostic(line, rule, msg))

    kinds: dict[int, str] = {}
    kind_line: dict[int, int] = {}
    bad_kind: set[int] = set()       # declared with an unknown kind; already reported
    signals: dict[int, tuple[int, int]] = {}       # intersection -> (threshold, line)
    roads: list[RoadSpec] = []
    road_line: dict[int, int] = {}
    phase_lines: list[tuple[int, int, int, int]] = []   # (line, v, phase, road)
    tendency_lines: list[tuple[int, list[str]]] = []
    params: dict[str, float] = {}
    gamma_lines: list[tuple[int, int, float]] = []
    x0_lines: list[tuple[int, int, float]] = []
    seen_sections: set[str] = set()
    section = None

    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            section = m.group(1)
            if section not in SECTIONS:
                err(no, "UNKNOWN_SECTION", f"unknown section [{section}]")
                section = "?"
            else:
                seen_sections.add(section)
            continue
        tok = line.split()
        if section is None:
            err(no, "NO_SECTION", "content before the first section header")
            continue
        if section == "?":
            continue
        try:
            if section == "intersections":
                if tok[0] == "signal":
                    if len(tok) != 3:
                        raise ValueError
                    v, t_l = _int(tok[1]), _int(tok[2])
                    if v in signals:
                        err(no, "DUPLICATE", f"second light at intersection {v}")
                    elif t_l < 1:
                        err(no, "SIGNAL", "threshold must be a positive integer")
                    else:
                        signals[v] = (t_l, no)
                else:
                    if len(tok) != 2:
                        raise ValueError
                    v, kind = _int(tok[0]), tok[1]
                    if kind not in (BOUNDARY, CONNECTION):
                        err(no, "INTERSECTION_KIND", f"kind must be B or C, got {kind!r}")
                        bad_kind.add(v)
                    elif v in kinds:
                        err(no, "DUPLICATE", f"duplicate intersection id {v}")
                    else:
                        kinds[v] = kind
                        kind_line[v] = no
            elif section == "roads":
                if len(tok) != 4:
                    raise ValueError
                rid = _int(tok[0])
                ends = [EXT if t == "EXT" else _int(t) for t in tok[1:3]]
                n_e = _int(tok[3])
                if rid in road_line:
                    err(no, "DUPLICATE", f"duplicate road id {rid}")
                    continue
                if any(e in bad_kind for e in ends):
                    continue
                bad = [e for e in ends if e is not None and e not in kinds]
                if bad:
                    err(no, "DANGLING", f"road {rid} references undeclared intersection {bad[0]}")
                    continue
                if n_e < 1:
                    err(no, "ROAD", f"road {rid} needs at least one element")
                    continue
                roads.append(RoadSpec(rid, ends[0], ends[1], n_e))
                road_line[rid] = no
            elif section == "phases":
                if len(tok) != 3:
                    raise ValueError
                phase_lines.append((no, _int(tok[0]), _int(tok[1]), _int(tok[2])))
            elif section == "tendency":
                tendency_lines.append((no, tok))
            elif section == "params":
                key = tok[0]
                if key in ("gamma", "x0") and len(tok) == 3:  # per-element form
                    (gamma_lines if key == "gamma" else x0_lines).append(
                        (no, _int(tok[1]), float(tok[2])))
                elif len(tok) == 2 and key in _PARAMS:
                    params[key] = _PARAMS[key](tok[1])
                elif key in _PARAMS or key == "gamma":
                    raise ValueError
                else:
                    err(no, "PARAM", f"unknown parameter {key!r}")
        except (ValueError, IndexError):
            err(no, "MALFORMED", f"cannot parse {line!r} in [{section}]")

    for v, (_, no) in signals.items():
        if v in bad_kind:
            continue
        if v not in kinds:
            err(no, "DANGLING", f"light at undeclared intersection {v}")
        elif kinds[v] != CONNECTION:
            err(no, "SIGNAL", f"light at boundary intersection {v}")
    if diags:
        raise ScenarioError(diags)

    try:
        net = build_network(roads, kinds)
    except NetworkError as exc:
        m = re.search(r"road (\d+)", str(exc))
        no = road_line.get(int(m.group(1)), 0) if m else 0
        raise ScenarioError([Diagnostic(no, "NETWORK", str(exc))]) from None

    table = _phase_table(net, signals, phase_lines, err)
    if diags:
        raise ScenarioError(diags)

    tend = _tendency(net, table, tendency_lines, err)
    if diags:
        raise ScenarioError(diags)

    notes = []
    if "params" not in seen_sections:
        notes.append("no [params] section; defaults applied")
    cfg = _config(net, params, gamma_lines, x0_lines, err)
    if diags:
        raise ScenarioError(diags)
    try:
        check_step_size(tend, cfg.dt)
        average_p(net, tend, table)
    except DynamicsError as exc:
        raise ScenarioError([Diagnostic(0, "DYNAMICS", str(exc))]) from None
    for note in notes:
        warnings.warn(note, ScenarioWarning, stacklevel=2)
    return Scenario(net, tend, table, cfg, tuple(notes))


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


_PARAMS = {
    "u0": float, "dt": float, "beta": float, "n_tau": _int, "N_tau": _int,
    "steps": _int, "cadence": _int, "x0": float,
}


def _phase_table(net, signals, phase_lines, err) -> PhaseTable:
    grants: dict[int, dict[int, set[int]]] = {}
    for no, v, j, rid in phase_lines:
        if v not in signals:
            err(no, "SIGNAL_PHASES", f"phases given for intersection {v} without a light")
            continue
        if rid not in net.incoming_roads(v):
            err(no, "PHASE_ROAD", f"road {rid} does not enter intersection {v}")
            continue
        grants.setdefault(v, {}).setdefault(j, set()).add(rid)
    sigs = []
    for v, (t_l, no) in sorted(signals.items()):
        phases = grants.get(v, {})
        if not phases:
            err(no, "SIGNAL_PHASES", f"light at {v} has no phases")
            continue
        if sorted(phases) != list(range(1, len(phases) + 1)):
            err(no, "PHASE_ORDER", f"phases at {v} must be numbered 1..{len(phases)}")
            continue
        sigs.append(Signal(v, tuple(frozenset(phases[j]) for j in sorted(phases)), t_l))
    table = PhaseTable(tuple(sigs))
    try:
        table.validate(net)
    except PhaseError as exc:
        m = re.search(r"at (\d+)", str(exc))
        no = signals.get(int(m.group(1)), (0, 0))[1] if m else 0
        err(no, "PHASE_COVER", str(exc))
    return table


def _tendency(net, table, lines, err) -> TendencyConfig:
    p_free, p_release = P_FREE, P_RELEASE
    p_over: dict[int, float] = {}
    q_over: dict[tuple[int, int], float] = {}
    edges = set(net.edges())
    for no, tok in lines:
        try:
            if tok[0] in ("p_free", "p_release") and len(tok) == 2:
                if tok[0] == "p_free":
                    p_free = float(tok[1])
                else:
                    p_release = float(tok[1])
            elif tok[0] == "p" and len(tok) == 3:
                e = net.element(_int(tok[1]))
                p_over[e] = float(tok[2])
            elif tok[0] == "q" and len(tok) == 4:
                i, j = net.element(_int(tok[1])), net.element(_int(tok[2]))
                if (i, j) not in edges:
                    err(no, "TENDENCY", f"no edge from element {tok[1]} to {tok[2]}")
                    continue
                q_over[(i, j)] = float(tok[3])
            else:
                err(no, "MALFORMED", f"cannot parse {' '.join(tok)!r} in [tendency]")
        except KeyError as exc:
            err(no, "TENDENCY", str(exc.args[0]))
        except ValueError:
            err(no, "MALFORMED", f"cannot parse {' '.join(tok)!r} in [tendency]")
    tend = default_tendency(net, table, p_free=p_free, p_release=p_release)
    if p_over:
        tend = tend.with_p(p_over)
    if q_over:
        tend = tend.with_q(q_over)
    try:
        validate_tendency(net, tend)
    except DynamicsError as exc:
        rule = "TURN_SUM" if "sum to" in str(exc) else "TENDENCY"
        err(lines[-1][0] if lines else 0, rule, str(exc))
    return tend


def _config(net, params, gamma_lines, x0_lines, err) -> SimConfig:
    dt = params.get("dt", 1.0)
    gamma = np.ones(net.n_state)
    x0 = np.full(net.n_state, params.get("x0", 0.0))
    for lines, target in ((gamma_lines, gamma), (x0_lines, x0)):
        for no, lid, v in lines:
            try:
                target[net.state_index(net.element(lid))] = v
            except KeyError as exc:
                err(no, "PARAM", str(exc.args[0]))
    try:
        return SimConfig(
            steps=params.get("steps", 200),
            dt=dt,
            mpc=MpcConfig(horizon=params.get("n_tau", 5), beta=params.get("beta", 1.0),
                          budget=params.get("u0", 54.0), dt=dt),
            rho=RhoConfig(horizon=params.get("N_tau", 3), weights=gamma),
            cadence=params.get("cadence", 1),
            x0=x0,
        )
    except ValueError as exc:
        err(0, "PARAM", str(exc))
        return None
