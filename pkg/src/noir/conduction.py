"""Conduction-side model: potential field, stiffness and the bridge from the
conservation dynamics.

The potential of an element is the heat-like quantity whose drop along a
road is the traffic outflow: ``V = L @ Phi`` with ``Phi = 0`` on outlets.
All reduced objects use the state order inlets + interiors.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np
import scipy.linalg as la

from .network import NoirNetwork

_RESIDUAL = 1e-10


def assemble_L(net: NoirNetwork) -> np.ndarray:
    """Outflow-from-potential matrix over the reduced state.

    Row ``i``: ``|out(i)|`` on the diagonal and ``-1`` for every out-neighbor
    that is not an outlet (outlet potentials are pinned to zero).
    """
    n = net.n_state
    L = np.zeros((n, n))
    for r, e in enumerate(net.state_elements):
        outs = net.out_neighbors[e]
        L[r, r] = len(outs)
        for h in outs:
            if net.kind(h) != "out":
                L[r, net.state_index(h)] -= 1.0
    return L


def assemble_K(net: NoirNetwork,
               stiffness: float | Mapping[tuple[int, int], float] = 1.0
               ) -> tuple[np.ndarray, np.ndarray]:
    """Stiffness matrix over all elements and its inlet/interior block.

    Every edge ``(i, j)`` couples both endpoints with the same stiffness, so
    ``K`` is symmetric with zero row sums. ``stiffness`` is either a scalar
    or a map from directed edge to value.
    """
    n = net.n_elements
    K = np.zeros((n, n))
    for i, j in net.edges():
        k = stiffness if np.isscalar(stiffness) else stiffness[(i, j)]
        if not k > 0:
            raise ValueError(f"stiffness on edge ({i}, {j}) must be positive, got {k}")
        K[i, j] += k
        K[j, i] += k
        K[i, i] -= k
        K[j, j] -= k
    r = net.state_elements
    return K, K[np.ix_(r, r)]


def _as_diag(D) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    return np.diag(D).copy() if D.ndim == 2 else D


class PotentialMap:
    """Cached factorization of ``L`` for repeated ``Phi = L^-1 D X`` solves."""

    def __init__(self, L: np.ndarray, D):
        self.L = L
        self.d = _as_diag(D)
        self._lu = la.lu_factor(L)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        V = self.d * X
        phi = la.lu_solve(self._lu, V)
        res = np.max(np.abs(self.L @ phi - V), initial=0.0)
        if res > _RESIDUAL * max(1.0, np.max(np.abs(V), initial=0.0)):
            raise np.linalg.LinAlgError(f"potential solve residual {res:.3g}")
        return phi


def potentials_from_density(X: np.ndarray, D, L: np.ndarray) -> np.ndarray:
    return PotentialMap(L, D)(np.asarray(X, dtype=float))


def full_potentials(net: NoirNetwork, phi: np.ndarray) -> np.ndarray:
    """Scatter reduced potentials onto all elements (zero on outlets)."""
    out = np.zeros(net.n_elements)
    out[net.state_elements] = phi
    return out


def derive_A_from_conservation(Qbar: np.ndarray, D, L: np.ndarray) -> np.ndarray:
    """``A = L^-1 D Qbar D^-1 L``, computed with solves only."""
    d = _as_diag(D)
    if np.any(d == 0):
        raise np.linalg.LinAlgError("D is singular")
    M = (d[:, None] * Qbar) / d[None, :] @ L
    return la.lu_solve(la.lu_factor(L), M)


def inlet_capacity(net: NoirNetwork, D) -> np.ndarray:
    """SCC of the inlet elements implied by the averaged discharge: ``1/p_bar``."""
    return 1.0 / _as_diag(D)[: net.n_inlets]


def capacity_vector(net: NoirNetwork, D, interior: float | np.ndarray = 1.0) -> np.ndarray:
    c = np.empty(net.n_state)
    c[: net.n_inlets] = inlet_capacity(net, D)
    c[net.n_inlets:] = interior
    return c


def conduction_matrices(K_R: np.ndarray, c: np.ndarray, W: np.ndarray):
    """``A = C^-1 K_R`` and ``B = C^-1 W`` for a standalone conduction study."""
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0):
        raise ValueError("capacities must be positive")
    return K_R / c[:, None], W / c[:, None]


def conduction_step(phi: np.ndarray, u: np.ndarray, A: np.ndarray, B: np.ndarray,
                    dt: float = 1.0) -> np.ndarray:
    if not 0 < dt <= 1:
        raise ValueError(f"step size {dt} outside (0, 1]")
    return phi + dt * (A @ phi + B @ u)
