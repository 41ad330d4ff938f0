"""Movement phases, the fixed-cycle light automaton and its action set.

Each light runs a fixed circular cycle of phases. At every step it either
continues (``C``) the active phase or switches (``S``) to the next one in
the cycle. The timer counts the steps the active phase has already run
before the current one, so a phase that is kept until it is overridden is
active for exactly ``threshold`` consecutive steps.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator

from .network import CONNECTION, NoirNetwork

CONTINUE = "C"
SWITCH = "S"

Action = tuple[str, ...]


class PhaseError(ValueError):
    pass


@dataclass(frozen=True)
class Signal:
    """A traffic light: ``phases[j]`` is the set of incoming road ids that
    may discharge while phase ``j`` is active."""

    intersection: int
    phases: tuple[frozenset[int], ...]
    threshold: int

    def __post_init__(self):
        if not self.phases:
            raise PhaseError(f"light at {self.intersection} has no phases")
        if self.threshold < 1:
            raise PhaseError(f"light at {self.intersection}: threshold must be a positive integer")

    @property
    def n_phases(self) -> int:
        return len(self.phases)


@dataclass(frozen=True)
class PhaseTable:
    signals: tuple[Signal, ...]

    def __post_init__(self):
        ids = [s.intersection for s in self.signals]
        if len(set(ids)) != len(ids):
            raise PhaseError("more than one light at the same intersection")
        object.__setattr__(self, "signals",
                           tuple(sorted(self.signals, key=lambda s: s.intersection)))

    @property
    def intersections(self) -> tuple[int, ...]:
        return tuple(s.intersection for s in self.signals)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(s.n_phases for s in self.signals)

    def signal(self, v: int) -> Signal:
        for s in self.signals:
            if s.intersection == v:
                return s
        raise KeyError(v)

    def initial_state(self) -> "PhaseState":
        return PhaseState((0,) * len(self.signals), (0,) * len(self.signals))

    def validate(self, net: NoirNetwork) -> None:
        for s in self.signals:
            v = s.intersection
            if net.intersections.get(v) != CONNECTION:
                raise PhaseError(f"light at {v}: not a connection intersection")
            incoming = set(net.incoming_roads(v))
            covered: set[int] = set()
            for j, roads in enumerate(s.phases):
                stray = set(roads) - incoming
                if stray:
                    raise PhaseError(f"light at {v}, phase {j + 1}: roads {sorted(stray)} "
                                     f"do not enter the intersection")
                covered |= roads
            missing = incoming - covered
            if missing:
                raise PhaseError(f"light at {v}: incoming roads {sorted(missing)} never get green")
            for r in incoming:
                if net.kind(net.tail(r)) != "interior":
                    raise PhaseError(f"light at {v}: road {r} ends in a non-interior element")


@dataclass(frozen=True)
class PhaseState:
    phase: tuple[int, ...]
    timer: tuple[int, ...]


def phase_space_size(tbl: PhaseTable) -> int:
    return math.prod(tbl.sizes)


def iter_lambdas(tbl: PhaseTable) -> Iterator[tuple[int, ...]]:
    """All global phase tuples, lexicographically."""
    return itertools.product(*(range(m) for m in tbl.sizes))


def options(sig: Signal, phase: int, timer: int) -> tuple[str, ...]:
    if sig.n_phases == 1:
        return (CONTINUE,)
    if timer + 1 < sig.threshold:
        return (CONTINUE, SWITCH)
    return (SWITCH,)


def admissible_actions(tbl: PhaseTable, st: PhaseState) -> list[Action]:
    """Admissible Switch/Continue tuples in lexicographic order (C before S)."""
    per_light = [options(s, p, t) for s, p, t in zip(tbl.signals, st.phase, st.timer)]
    return list(itertools.product(*per_light))


def apply_action(tbl: PhaseTable, st: PhaseState, a: Action) -> PhaseState:
    if len(a) != len(tbl.signals):
        raise PhaseError(f"action has {len(a)} entries, table has {len(tbl.signals)} lights")
    phase, timer = [], []
    for s, p, t, ai in zip(tbl.signals, st.phase, st.timer, a):
        if ai not in options(s, p, t):
            raise PhaseError(f"action {ai!r} not admissible at {s.intersection} "
                             f"(phase {p + 1}, timer {t}, threshold {s.threshold})")
        if s.n_phases == 1:
            phase.append(p)
            timer.append(0)
        elif ai == SWITCH:
            phase.append((p + 1) % s.n_phases)
            timer.append(0)
        else:
            phase.append(p)
            timer.append(t + 1)
    return PhaseState(tuple(phase), tuple(timer))


def hold_action(tbl: PhaseTable, st: PhaseState) -> Action:
    """Continue wherever allowed; switch only where the threshold forces it."""
    return tuple(options(s, p, t)[0] for s, p, t in zip(tbl.signals, st.phase, st.timer))


def active_lambda(tbl: PhaseTable, st: PhaseState) -> tuple[int, ...]:
    return st.phase


def green_roads(tbl: PhaseTable, lam: tuple[int, ...]) -> dict[int, frozenset[int]]:
    """Incoming roads allowed to discharge at each lit intersection."""
    return {s.intersection: s.phases[j] for s, j in zip(tbl.signals, lam)}


def is_gated(net: NoirNetwork, tbl: PhaseTable, lam: tuple[int, ...], e: int) -> bool:
    """Whether element ``e`` is held by a red light under ``lam``."""
    road = net.road(int(net.element_road[e]))
    if e != net.tail(road.id) or road.dst is None:
        return False
    green = green_roads(tbl, lam)
    return road.dst in green and road.id not in green[road.dst]
