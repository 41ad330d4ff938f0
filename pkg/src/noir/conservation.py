"""Phase-gated conservation dynamics of the vehicle counts.

``p[i]`` is the fraction of the vehicles in element ``i`` that leaves it in
one unit of time and ``routing[j, i]`` the fraction of that outflow that
enters out-neighbor ``j``. A red light sets ``p`` of the tail element of
every road it holds to zero. Matrices are indexed by global element id;
reduced objects (``Q``, ``X``) use the state order inlets + interiors.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .network import NoirNetwork, reachable_from_inlets
from .phases import PhaseTable, iter_lambdas

P_FREE = 0.8
P_RELEASE = 0.8

_TOL = 1e-9


class DynamicsError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TendencyConfig:
    p: np.ndarray              # discharge fraction when not held by a red light
    routing: sp.csr_matrix     # routing[j, i] = q_{j,i}

    def with_p(self, values: Mapping[int, float]) -> "TendencyConfig":
        p = self.p.copy()
        for e, v in values.items():
            p[e] = v
        return replace(self, p=p)

    def with_q(self, values: Mapping[tuple[int, int], float]) -> "TendencyConfig":
        q = self.routing.tolil(copy=True)
        for (i, j), v in values.items():
            q[j, i] = v
        return replace(self, routing=q.tocsr())


@dataclass(frozen=True, eq=False)
class Gating:
    """Tail elements under a light and the phases that give them green."""

    elements: np.ndarray       # global element ids
    signal: np.ndarray         # index of the governing light in the table
    green: tuple[np.ndarray, ...]

    @classmethod
    def build(cls, net: NoirNetwork, tbl: PhaseTable) -> "Gating":
        elements, signal, green = [], [], []
        for k, s in enumerate(tbl.signals):
            for r in net.incoming_roads(s.intersection):
                elements.append(net.tail(r))
                signal.append(k)
                green.append(np.array([r in ph for ph in s.phases]))
        return cls(np.array(elements, dtype=int), np.array(signal, dtype=int), tuple(green))

    def apply(self, p: np.ndarray, lam) -> np.ndarray:
        out = p.copy()
        for e, k, g in zip(self.elements, self.signal, self.green):
            if not g[lam[k]]:
                out[e] = 0.0
        return out

    def average(self, p: np.ndarray) -> np.ndarray:
        out = p.copy()
        for e, g in zip(self.elements, self.green):
            out[e] = p[e] * g.mean()
        return out


def default_tendency(net: NoirNetwork, tbl: PhaseTable | None = None,
                     p_free: float = P_FREE, p_release: float = P_RELEASE) -> TendencyConfig:
    """Uniform turning, ``p = 1`` at the boundary, ``p_release`` on lit tails."""
    n = net.n_elements
    p = np.full(n, p_free)
    p[net.inlets] = 1.0
    p[net.outlets] = 1.0
    if tbl is not None:
        for e in Gating.build(net, tbl).elements:
            p[e] = p_release
    rows, cols, vals = [], [], []
    for i, outs in enumerate(net.out_neighbors):
        for j in outs:
            rows.append(j)
            cols.append(i)
            vals.append(1.0 / len(outs))
    routing = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return TendencyConfig(p, routing)


def validate_tendency(net: NoirNetwork, tend: TendencyConfig) -> None:
    p = tend.p
    if p.shape != (net.n_elements,):
        raise DynamicsError("p has the wrong length")
    if np.any(p < 0) or np.any(p > 1):
        bad = np.flatnonzero((p < 0) | (p > 1))
        raise DynamicsError(f"p outside [0, 1] at elements {[net.local_id(e) for e in bad]}")
    for e in list(net.inlets) + list(net.outlets):
        if p[e] != 1.0:
            raise DynamicsError(f"boundary element {net.local_id(e)} must have p = 1")
    q = tend.routing.tocoo()
    edges = set(net.edges())
    for j, i, v in zip(q.row, q.col, q.data):
        if v == 0:
            continue
        if (i, j) not in edges:
            raise DynamicsError(f"turn fraction on non-edge {net.local_id(i)} -> {net.local_id(j)}")
        if v < 0 or v > 1:
            raise DynamicsError(f"turn fraction {v} outside [0, 1]")
    sums = np.asarray(tend.routing.sum(axis=0)).ravel()
    for i in net.state_elements:
        if abs(sums[i] - 1.0) > _TOL:
            raise DynamicsError(
                f"turn fractions out of element {net.local_id(i)} sum to {sums[i]:.6g}, not 1")


def phase_p(net: NoirNetwork, tend: TendencyConfig, tbl: PhaseTable, lam) -> np.ndarray:
    return Gating.build(net, tbl).apply(tend.p, lam)


def assemble_P(net: NoirNetwork, tend: TendencyConfig, tbl: PhaseTable, lam,
               gating: Gating | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Full transition matrix ``P`` (N x N) and reduced ``Q = -I + P_r``."""
    validate_tendency(net, tend)
    gating = gating or Gating.build(net, tbl)
    return _p_and_q(net, tend, gating.apply(tend.p, lam))


def _p_and_q(net: NoirNetwork, tend: TendencyConfig, p: np.ndarray):
    P = tend.routing.toarray() * p[None, :]
    P[np.diag_indices_from(P)] += 1.0 - p
    r = net.state_elements
    Q = P[np.ix_(r, r)] - np.eye(len(r))
    return P, Q


def average_p(net: NoirNetwork, tend: TendencyConfig, tbl: PhaseTable) -> np.ndarray:
    """Discharge fraction of every element averaged over all phase tuples.

    A tail element only depends on the phase of its own light, so the
    average over the product set equals the average over that light's cycle.
    """
    pbar = Gating.build(net, tbl).average(tend.p)
    r = net.state_elements
    dead = r[pbar[r] <= 0]
    if len(dead):
        raise DynamicsError(
            f"elements {[net.local_id(e) for e in dead]} never discharge under any phase")
    return pbar


def average_dynamics(net: NoirNetwork, tend: TendencyConfig,
                     tbl: PhaseTable) -> tuple[np.ndarray, np.ndarray]:
    """Phase-averaged ``Q_bar`` and ``D = diag(p_bar)`` over the reduced state."""
    validate_tendency(net, tend)
    pbar = average_p(net, tend, tbl)
    _, Qbar = _p_and_q(net, tend, pbar)
    return Qbar, np.diag(pbar[net.state_elements])


def brute_force_average(net: NoirNetwork, tend: TendencyConfig, tbl: PhaseTable,
                        limit: int = 1024) -> np.ndarray:
    """Mean of ``Q_lambda`` over an explicit enumeration of every phase tuple."""
    gating = Gating.build(net, tbl)
    total, count = None, 0
    for lam in iter_lambdas(tbl):
        count += 1
        if count > limit:
            raise DynamicsError(f"phase space larger than {limit}")
        _, Q = assemble_P(net, tend, tbl, lam, gating)
        total = Q if total is None else total + Q
    return total / count


def input_matrix(net: NoirNetwork) -> np.ndarray:
    W = np.zeros((net.n_state, net.n_inlets))
    W[: net.n_inlets, :] = np.eye(net.n_inlets)
    return W


@dataclass(frozen=True, eq=False)
class ConservationMatrices:
    Qbar: np.ndarray
    pbar: np.ndarray           # reduced-state diagonal of D
    W: np.ndarray
    dt: float

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.pbar)

    @property
    def Q_D(self) -> np.ndarray:
        return np.eye(len(self.Qbar)) + self.dt * self.Qbar

    @property
    def W_D(self) -> np.ndarray:
        return self.dt * self.W


def conservation_matrices(net: NoirNetwork, tend: TendencyConfig, tbl: PhaseTable,
                          dt: float = 1.0) -> ConservationMatrices:
    check_step_size(tend, dt)
    Qbar, D = average_dynamics(net, tend, tbl)
    return ConservationMatrices(Qbar, np.diag(D).copy(), input_matrix(net), float(dt))


def check_step_size(tend: TendencyConfig, dt: float) -> None:
    """Reject steps for which ``I + dt*Q`` could have a negative entry."""
    if not 0 < dt <= 1:
        raise DynamicsError(f"step size {dt} outside (0, 1]")
    if dt * float(tend.p.max()) > 1 + 1e-12:
        raise DynamicsError(f"step size {dt} too large for discharge fraction {tend.p.max()}")


def step(X: np.ndarray, u: np.ndarray, Q: np.ndarray, dt: float = 1.0) -> np.ndarray:
    """One forward-Euler step of ``dX/dt = Q X + W u``."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise DynamicsError("inflow must be strictly positive at every inlet")
    if not 0 < dt <= 1:
        raise DynamicsError(f"step size {dt} outside (0, 1]")
    X = np.asarray(X, dtype=float)
    dX = Q @ X
    dX[: len(u)] += u
    return X + dt * dX


def outflow_rates(X: np.ndarray, D: np.ndarray) -> np.ndarray:
    D = np.asarray(D)
    return (np.diag(D) if D.ndim == 2 else D) * X


def exit_fraction(net: NoirNetwork, tend: TendencyConfig) -> np.ndarray:
    """Per state element, the share of its outflow that goes straight to outlets."""
    q = tend.routing.tocsr()[list(net.outlets), :]
    return np.asarray(q.sum(axis=0)).ravel()[net.state_elements]


def outlet_discharge(net: NoirNetwork, tend: TendencyConfig, p: np.ndarray,
                     X: np.ndarray, dt: float = 1.0) -> float:
    """Vehicles leaving the reduced state into outlet elements in one step."""
    r = net.state_elements
    return float(dt * np.sum(p[r] * X * exit_fraction(net, tend)))


@dataclass(frozen=True)
class HurwitzCertificate:
    abscissa: float
    reachable: bool   # every interior element reachable from the inlets
    drains: bool      # every state element has an active path to an outlet

    @property
    def hypothesis(self) -> bool:
        return self.reachable and self.drains


def hurwitz_certificate(Q: np.ndarray, net: NoirNetwork, p: np.ndarray,
                        tend: TendencyConfig | None = None) -> HurwitzCertificate:
    """Spectral abscissa of ``Q`` plus the graph conditions that imply stability.

    ``p`` is the discharge vector the matrix was built with; an edge is
    active when its source discharges and its turn fraction is positive.
    """
    routing = (tend.routing if tend is not None else None)

    def active(i, j):
        if p[i] <= 0:
            return False
        return routing is None or routing[j, i] > 0

    reach = reachable_from_inlets(net, active)
    reachable = all(e in reach for e in net.interior)
    drains = set(net.outlets)
    queue = deque(drains)
    while queue:
        j = queue.popleft()
        for i in net.in_neighbors[j]:
            if i not in drains and active(i, j):
                drains.add(i)
                queue.append(i)
    drains_all = all(int(e) in drains for e in net.state_elements)
    abscissa = float(np.max(np.linalg.eigvals(Q).real))
    cert = HurwitzCertificate(abscissa, reachable, drains_all)
    if cert.hypothesis and not abscissa < 0:
        raise RuntimeError(f"graph conditions hold but spectral abscissa is {abscissa}")
    return cert
