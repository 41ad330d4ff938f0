"""Receding-horizon choice of the Switch/Continue light actions.

Each admissible action tuple is applied once; the resulting phases are then
held for the rest of the horizon, except where a light's threshold forces a
switch. The action with the smallest ``sum_t X[k+t]' Gamma X[k+t]`` wins;
ties go to the lexicographically smallest tuple (``C`` before ``S``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conservation import Gating, TendencyConfig, assemble_P
from .network import NoirNetwork
from .phases import (SWITCH, Action, PhaseState, PhaseTable, admissible_actions,
                     apply_action, hold_action)

TIE_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class RhoConfig:
    horizon: int = 3
    weights: np.ndarray | None = None     # diagonal of Gamma; identity if None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("RHO horizon must be at least 1")
        if self.weights is not None and np.any(np.asarray(self.weights) <= 0):
            raise ValueError("state weights must be positive")

    def gamma(self, n: int) -> np.ndarray:
        return np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float)


@dataclass(frozen=True, eq=False)
class RhoDecision:
    action: Action
    cost: float
    actions: list[Action]
    costs: np.ndarray


def horizon_cost(net: NoirNetwork, tend: TendencyConfig, tbl: PhaseTable, st: PhaseState,
                 a: Action, X: np.ndarray, u: np.ndarray, cfg: RhoConfig,
                 dt: float = 1.0) -> float:
    """Rollout cost of a single action tuple, one dense ``Q_lambda`` per step."""
    gamma = cfg.gamma(net.n_state)
    gating = Gating.build(net, tbl)
    st = apply_action(tbl, st, a)
    x = np.asarray(X, dtype=float)
    cost = 0.0
    for t in range(cfg.horizon):
        if t:
            st = apply_action(tbl, st, hold_action(tbl, st))
        _, Q = assemble_P(net, tend, tbl, st.phase, gating)
        dx = Q @ x
        dx[: net.n_inlets] += u
        x = x + dt * dx
        cost += float(x @ (gamma * x))
    return cost


class RolloutEngine:
    """Evaluates many action tuples at once on a batch of state copies.

    The routing matrix is shared by every phase; a phase only zeroes the
    discharge fraction of red tails, so a step is
    ``X + dt * (R (pX) - pX + W u)`` with ``p`` varying per candidate.
    """

    def __init__(self, net: NoirNetwork, tend: TendencyConfig, tbl: PhaseTable,
                 dt: float = 1.0):
        self.net, self.tbl, self.dt = net, tbl, dt
        r = net.state_elements
        self.routing = tend.routing.tocsr()[r][:, r]
        self.p = tend.p[r]
        gating = Gating.build(net, tbl)
        self.gated = np.array([net.state_index(e) for e in gating.elements], dtype=int)
        self.gate_signal = gating.signal
        self.gate_green = gating.green
        self.n_phases = np.array(tbl.sizes, dtype=int)
        self.threshold = np.array([s.threshold for s in tbl.signals], dtype=int)

    def _p_batch(self, phase: np.ndarray) -> np.ndarray:
        """Discharge fractions, one column per candidate."""
        p = np.repeat(self.p[:, None], len(phase), axis=1)
        for e, k, g in zip(self.gated, self.gate_signal, self.gate_green):
            p[e] *= g[phase[:, k]]
        return p

    def _hold(self, phase: np.ndarray, timer: np.ndarray):
        multi = self.n_phases > 1
        forced = multi & (timer + 1 >= self.threshold)
        phase = np.where(forced, (phase + 1) % self.n_phases, phase)
        timer = np.where(forced | ~multi, 0, timer + 1)
        return phase, timer

    def costs(self, st: PhaseState, actions: list[Action], X: np.ndarray, u: np.ndarray,
              cfg: RhoConfig) -> np.ndarray:
        n_cand = len(actions)
        gamma = cfg.gamma(self.net.n_state)
        switch = np.array([[ai == SWITCH for ai in a] for a in actions], dtype=bool)
        switch = switch.reshape(n_cand, len(self.n_phases))
        phase0 = np.array(st.phase, dtype=int)
        timer0 = np.array(st.timer, dtype=int)
        multi = self.n_phases > 1
        phase = np.where(switch, (phase0 + 1) % self.n_phases, phase0)
        timer = np.where(switch | ~multi, 0, timer0 + 1)
        # state-major layout: column c is candidate c
        x = np.repeat(np.asarray(X, dtype=float)[:, None], n_cand, axis=1)
        inflow = np.zeros((self.net.n_state, 1))
        inflow[: self.net.n_inlets, 0] = u
        total = np.zeros(n_cand)
        for t in range(cfg.horizon):
            if t:
                phase, timer = self._hold(phase, timer)
            out = self._p_batch(phase) * x
            x += self.dt * (self.routing @ out - out + inflow)
            total += gamma @ (x * x)
        return total


def _argmin(costs: np.ndarray) -> int:
    best = float(np.min(costs))
    tied = np.flatnonzero(costs <= best + TIE_RTOL * max(abs(best), 1.0))
    return int(tied[0])


def choose_action(net: NoirNetwork, tend: TendencyConfig, tbl: PhaseTable, st: PhaseState,
                  X: np.ndarray, u: np.ndarray, cfg: RhoConfig, dt: float = 1.0,
                  engine: RolloutEngine | None = None) -> RhoDecision:
    """Exhaustive search over the admissible action tuples."""
    actions = admissible_actions(tbl, st)
    engine = engine or RolloutEngine(net, tend, tbl, dt)
    costs = engine.costs(st, actions, X, u, cfg)
    k = _argmin(costs)
    return RhoDecision(actions[k], float(costs[k]), actions, costs)
