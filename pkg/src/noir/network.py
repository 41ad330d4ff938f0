"""Road-network topology: intersections, roads and the element-level graph.

Every road is cut into serially connected elements. Elements are numbered
globally (0-based) in three contiguous ranges: inlets, then outlets, then
interior elements. Files and reports use *road-local* ids instead: 1-based,
assigned road by road in increasing road id, so that with a uniform element
count ``n`` element ``j`` of road ``r`` gets ``n*(r-1)+j``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

EXT = None  # road endpoint outside the network
BOUNDARY = "B"
CONNECTION = "C"

INLET = "in"
OUTLET = "out"
INTERIOR = "interior"


class NetworkError(ValueError):
    """Raised for topologies that cannot be turned into a valid element graph."""


@dataclass(frozen=True)
class RoadSpec:
    id: int
    src: int | None
    dst: int | None
    n_elements: int = 1


@dataclass(frozen=True, eq=False)
class NoirNetwork:
    intersections: Mapping[int, str]
    roads: tuple[RoadSpec, ...]
    n_inlets: int
    n_outlets: int
    element_road: np.ndarray
    element_pos: np.ndarray
    local_ids: np.ndarray
    in_neighbors: tuple[tuple[int, ...], ...]
    out_neighbors: tuple[tuple[int, ...], ...]
    road_elements: Mapping[int, tuple[int, ...]]
    _by_local: Mapping[int, int] = field(repr=False)

    @property
    def n_elements(self) -> int:
        return len(self.element_road)

    @property
    def n_interior(self) -> int:
        return self.n_elements - self.n_inlets - self.n_outlets

    @property
    def n_state(self) -> int:
        """Size of the reduced state (inlets followed by interior elements)."""
        return self.n_elements - self.n_outlets

    @property
    def inlets(self) -> range:
        return range(0, self.n_inlets)

    @property
    def outlets(self) -> range:
        return range(self.n_inlets, self.n_inlets + self.n_outlets)

    @property
    def interior(self) -> range:
        return range(self.n_inlets + self.n_outlets, self.n_elements)

    @property
    def state_elements(self) -> np.ndarray:
        """Global ids of the reduced state entries, in state order."""
        return np.r_[self.inlets, self.interior]

    def kind(self, e: int) -> str:
        if e < self.n_inlets:
            return INLET
        if e < self.n_inlets + self.n_outlets:
            return OUTLET
        return INTERIOR

    def state_index(self, e: int) -> int:
        """Position of global element ``e`` in the reduced state vector."""
        if e < self.n_inlets:
            return e
        if e < self.n_inlets + self.n_outlets:
            raise KeyError(f"outlet element {e} is not part of the reduced state")
        return e - self.n_outlets

    def element(self, local_id: int) -> int:
        """Global id of the element with road-local id ``local_id``."""
        try:
            return self._by_local[local_id]
        except KeyError:
            raise KeyError(f"unknown road-local element id {local_id}") from None

    def local_id(self, e: int) -> int:
        return int(self.local_ids[e])

    def road(self, road_id: int) -> RoadSpec:
        for r in self.roads:
            if r.id == road_id:
                return r
        raise KeyError(road_id)

    def head(self, road_id: int) -> int:
        return self.road_elements[road_id][0]

    def tail(self, road_id: int) -> int:
        return self.road_elements[road_id][-1]

    def is_boundary(self, endpoint: int | None) -> bool:
        return endpoint is None or self.intersections[endpoint] == BOUNDARY

    def incoming_roads(self, v: int) -> tuple[int, ...]:
        return tuple(r.id for r in self.roads if r.dst == v)

    def outgoing_roads(self, v: int) -> tuple[int, ...]:
        return tuple(r.id for r in self.roads if r.src == v)

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i, outs in enumerate(self.out_neighbors) for j in outs]


def _is_boundary(endpoint, kinds) -> bool:
    return endpoint is None or kinds[endpoint] == BOUNDARY


def _is_uturn(a: RoadSpec, b: RoadSpec) -> bool:
    return b.src == a.dst and b.dst == a.src


def build_network(roads: Iterable[RoadSpec],
                  intersections: Mapping[int, str] | Iterable[tuple[int, str]]) -> NoirNetwork:
    """Discretize the roads and derive the element graph.

    Endpoints that are ``EXT`` or a boundary (kind ``"B"``) intersection are
    network terminals: a road leaving one starts with an inlet element, a
    road entering one ends with an outlet element. Connection intersections
    (kind ``"C"``) join the tail of every incoming road to the head of every
    outgoing road, except for the reverse road when another exit exists.
    """
    if isinstance(intersections, Mapping):
        items = list(intersections.items())
    else:
        items = [tuple(x) for x in intersections]
    kinds: dict[int, str] = {}
    for v, kind in items:
        if v in kinds:
            raise NetworkError(f"duplicate intersection id {v}")
        if kind not in (BOUNDARY, CONNECTION):
            raise NetworkError(f"intersection {v}: unknown kind {kind!r}")
        kinds[v] = kind

    roads = list(roads)
    seen: set[int] = set()
    for r in roads:
        if r.id in seen:
            raise NetworkError(f"duplicate road id {r.id}")
        seen.add(r.id)
        if r.n_elements < 1:
            raise NetworkError(f"road {r.id}: element count must be >= 1")
        for end in (r.src, r.dst):
            if end is not None and end not in kinds:
                raise NetworkError(f"road {r.id}: dangling intersection reference {end}")
        if r.src is not None and r.src == r.dst:
            raise NetworkError(f"road {r.id}: starts and ends at intersection {r.src}")
        if _is_boundary(r.src, kinds) and _is_boundary(r.dst, kinds):
            raise NetworkError(f"road {r.id}: both endpoints are outside the network")
    roads.sort(key=lambda r: r.id)
    if not roads:
        raise NetworkError("network has no roads")

    for v, kind in kinds.items():
        if kind != CONNECTION:
            continue
        n_in = sum(r.dst == v for r in roads)
        n_out = sum(r.src == v for r in roads)
        if n_in and not n_out:
            raise NetworkError(f"intersection {v}: incoming roads but no exit")
        if n_out and not n_in:
            raise NetworkError(f"intersection {v}: outgoing roads but no entry")

    # road-local numbering, then classification
    local: list[tuple[int, int, int]] = []  # (road id, position, local id)
    lid = 0
    for r in roads:
        for j in range(r.n_elements):
            lid += 1
            local.append((r.id, j, lid))

    def classify(road: RoadSpec, j: int) -> str:
        if j == 0 and _is_boundary(road.src, kinds):
            return INLET
        if j == road.n_elements - 1 and _is_boundary(road.dst, kinds):
            return OUTLET
        return INTERIOR

    by_id = {r.id: r for r in roads}
    groups: dict[str, list[tuple[int, int, int]]] = {INLET: [], OUTLET: [], INTERIOR: []}
    for rid, j, l in local:
        groups[classify(by_id[rid], j)].append((rid, j, l))
    order = groups[INLET] + groups[OUTLET] + groups[INTERIOR]
    n = len(order)
    element_road = np.array([o[0] for o in order], dtype=int)
    element_pos = np.array([o[1] for o in order], dtype=int)
    local_ids = np.array([o[2] for o in order], dtype=int)
    glob = {(rid, j): g for g, (rid, j, _) in enumerate(order)}
    road_elements = {r.id: tuple(glob[(r.id, j)] for j in range(r.n_elements)) for r in roads}

    outs: list[list[int]] = [[] for _ in range(n)]
    for r in roads:
        els = road_elements[r.id]
        for a, b in zip(els[:-1], els[1:]):
            outs[a].append(b)
        if _is_boundary(r.dst, kinds):
            continue
        exits = [b for b in roads if b.src == r.dst]
        straight = [b for b in exits if not _is_uturn(r, b)] or exits
        for b in straight:
            outs[els[-1]].append(road_elements[b.id][0])
    ins: list[list[int]] = [[] for _ in range(n)]
    for i, targets in enumerate(outs):
        for j in targets:
            ins[j].append(i)

    n_in, n_out = len(groups[INLET]), len(groups[OUTLET])
    net = NoirNetwork(
        intersections=dict(sorted(kinds.items())),
        roads=tuple(roads),
        n_inlets=n_in,
        n_outlets=n_out,
        element_road=element_road,
        element_pos=element_pos,
        local_ids=local_ids,
        in_neighbors=tuple(tuple(x) for x in ins),
        out_neighbors=tuple(tuple(x) for x in outs),
        road_elements=road_elements,
        _by_local={int(l): g for g, l in enumerate(local_ids)},
    )
    _validate(net)
    return net


def _validate(net: NoirNetwork) -> None:
    if net.n_inlets == 0:
        raise NetworkError("network has no inlet element")
    if net.n_outlets == 0:
        raise NetworkError("network has no outlet element")
    for i in net.inlets:
        outs = net.out_neighbors[i]
        if len(outs) != 1 or net.kind(outs[0]) != INTERIOR:
            raise NetworkError(
                f"inlet element (local id {net.local_id(i)}) must feed exactly one interior element")
    # every element has to be able to discharge into some outlet
    drains = set(net.outlets)
    queue = deque(drains)
    while queue:
        j = queue.popleft()
        for i in net.in_neighbors[j]:
            if i not in drains:
                drains.add(i)
                queue.append(i)
    stuck = sorted(set(range(net.n_elements)) - drains)
    if stuck:
        raise NetworkError(
            f"elements {[net.local_id(e) for e in stuck]} (road-local) cannot reach any outlet")


def upstream_pairs(net: NoirNetwork) -> list[tuple[int, int]]:
    """Every (upstream, downstream) adjacent element pair, road by road."""
    pairs = []
    for r in net.roads:
        els = net.road_elements[r.id]
        pairs.extend(zip(els[:-1], els[1:]))
        pairs.extend((els[-1], j) for j in net.out_neighbors[els[-1]]
                     if net.element_road[j] != r.id)
    return pairs


def reachable_from_inlets(net: NoirNetwork,
                          active: Callable[[int, int], bool] | None = None) -> set[int]:
    """Breadth-first closure of the inlet set under the active edges."""
    seen = set(net.inlets)
    queue = deque(seen)
    while queue:
        i = queue.popleft()
        for j in net.out_neighbors[i]:
            if j not in seen and (active is None or active(i, j)):
                seen.add(j)
                queue.append(j)
    return seen


def random_network(rng: np.random.Generator, max_elements: int = 60,
                   n_intersections: tuple[int, int] = (1, 6),
                   signal_prob: float = 0.6,
                   thresholds: tuple[int, int] = (1, 4)):
    """Draw a random valid network together with a phase table.

    A chain of connection intersections guarantees that every element is fed
    by an inlet and drains into an outlet; extra roads (including backward
    ones, which create loops) are then sprinkled on top. Intersections with
    several incoming roads get a light with probability ``signal_prob``,
    one phase per incoming road.
    """
    from .phases import PhaseTable, Signal

    for _ in range(200):
        m = int(rng.integers(n_intersections[0], n_intersections[1] + 1))
        kinds = {v: CONNECTION for v in range(1, m + 1)}
        roads: list[RoadSpec] = []

        def add(src, dst, lo=1):
            roads.append(RoadSpec(len(roads) + 1, src, dst, int(rng.integers(lo, 4))))

        add(EXT, 1, lo=2)
        for v in range(1, m):
            add(v, v + 1)
        add(m, EXT)
        for v in range(1, m + 1):
            if rng.random() < 0.4:
                add(EXT, v, lo=2)
            if rng.random() < 0.3:
                add(v, EXT)
        for _ in range(int(rng.integers(0, 2 * m))):
            a, b = rng.integers(1, m + 1, size=2)
            if a != b:
                add(int(a), int(b))
        try:
            net = build_network(roads, kinds)
        except NetworkError:
            continue
        if net.n_elements > max_elements:
            continue
        signals = []
        for v in kinds:
            incoming = net.incoming_roads(v)
            if len(incoming) >= 2 and rng.random() < signal_prob:
                t_l = int(rng.integers(thresholds[0], thresholds[1] + 1))
                signals.append(Signal(v, tuple(frozenset([r]) for r in incoming), t_l))
        return net, PhaseTable(tuple(signals))
    raise RuntimeError("could not draw a valid random network")
