"""Model predictive boundary control of the inlet inflows.

Over a horizon of ``n`` steps the predicted states are
``X[k+1..k+n] = G X[k] + S U`` with ``U = (u[k], ..., u[k+n-1])``. The cost
``1/2 sum(|X[k+t]|^2 + beta |u|^2)`` becomes the QP
``min 1/2 U'HU + g'U`` where ``H = beta I + S'S`` and ``g = S'G X[k]``,
subject to every per-step inflow block lying on the simplex
``{v >= eps, sum(v) = u0}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_FRACTION = 1e-9


class MpcError(RuntimeError):
    def __init__(self, msg, U=None, residual=None):
        super().__init__(msg)
        self.U = U
        self.residual = residual


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 5
    beta: float = 1.0
    budget: float = 54.0
    dt: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("MPC horizon must be at least 1")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.budget > 0:
            raise ValueError("inflow budget must be positive")

    @property
    def floor(self) -> float:
        return EPS_FRACTION * self.budget


@dataclass(frozen=True, eq=False)
class MpcProblem:
    G: np.ndarray
    S: np.ndarray
    H: np.ndarray
    g: np.ndarray
    x0: np.ndarray
    n_inlets: int
    horizon: int

    def objective(self, U: np.ndarray) -> float:
        return float(0.5 * U @ self.H @ U + self.g @ U)

    def gradient(self, U: np.ndarray) -> np.ndarray:
        return self.H @ U + self.g

    def predict(self, U: np.ndarray) -> np.ndarray:
        """Stacked predicted states, shape ``(horizon, n_state)``."""
        return (self.G @ self.x0 + self.S @ U).reshape(self.horizon, -1)


def build_problem(Q_D: np.ndarray, W_D: np.ndarray, X: np.ndarray,
                  cfg: MpcConfig) -> MpcProblem:
    n, m = W_D.shape
    h = cfg.horizon
    powers = [np.eye(n)]
    for _ in range(h):
        powers.append(Q_D @ powers[-1])
    G = np.vstack(powers[1:])
    blocks = [P @ W_D for P in powers[:h]]     # Q_D^k W_D
    S = np.zeros((h * n, h * m))
    for t in range(h):
        for j in range(t + 1):
            S[t * n:(t + 1) * n, j * m:(j + 1) * m] = blocks[t - j]
    H = cfg.beta * np.eye(h * m) + S.T @ S
    X = np.asarray(X, dtype=float)
    g = S.T @ (G @ X)
    return MpcProblem(G, S, H, g, X, m, h)


def rollout_cost(Q_D: np.ndarray, W_D: np.ndarray, X: np.ndarray, U: np.ndarray,
                 beta: float) -> float:
    """Horizon cost by explicit simulation, up to the U-independent constant."""
    m = W_D.shape[1]
    x = np.asarray(X, dtype=float)
    total = 0.0
    const = 0.0
    free = x.copy()
    for u in np.asarray(U, dtype=float).reshape(-1, m):
        x = Q_D @ x + W_D @ u
        free = Q_D @ free
        total += x @ x + beta * u @ u
        const += free @ free
    return 0.5 * (total - const)


def project_simplex(v: np.ndarray, z: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{w >= 0, sum(w) = z}``."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - z
    idx = np.arange(1, len(v) + 1)
    rho = np.count_nonzero(u - css / idx > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def _project(U: np.ndarray, m: int, lo: float, total: float) -> np.ndarray:
    blocks = U.reshape(-1, m) - lo
    out = np.vstack([project_simplex(b, total - m * lo) for b in blocks]) + lo
    return out.ravel()


def kkt_residual(prob: MpcProblem, U: np.ndarray, cfg: MpcConfig) -> float:
    """Fixed-point residual of the projected gradient map (0 at the optimum)."""
    P = _project(U - prob.gradient(U), prob.n_inlets, cfg.floor, cfg.budget)
    return float(np.max(np.abs(U - P)))


@dataclass(frozen=True, eq=False)
class MpcSolution:
    U: np.ndarray
    objective: float
    residual: float
    iterations: int


def _polish(prob: MpcProblem, U: np.ndarray, cfg: MpcConfig, tol: float):
    """Solve the equality-constrained QP on the current free set.

    Returns the candidate if it is primal feasible and its multipliers on the
    bounded entries have the right sign, else ``None``.
    """
    m, h = prob.n_inlets, prob.horizon
    lo = cfg.floor
    free = U > lo + 1e-12 * cfg.budget
    for _ in range(4 * m * h):
        F = np.flatnonzero(free)
        A_ = np.flatnonzero(~free)
        E = np.zeros((h, m * h))
        for t in range(h):
            E[t, t * m:(t + 1) * m] = 1.0
        rhs_eq = np.full(h, cfg.budget) - E[:, A_].sum(axis=1) * lo
        nF = len(F)
        K = np.zeros((nF + h, nF + h))
        K[:nF, :nF] = prob.H[np.ix_(F, F)]
        K[:nF, nF:] = E[:, F].T
        K[nF:, :nF] = E[:, F]
        rhs = np.concatenate([-prob.g[F] - prob.H[np.ix_(F, A_)] @ np.full(len(A_), lo), rhs_eq])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            return None
        V = np.full(m * h, lo)
        V[F] = sol[:nF]
        nu = sol[nF:]
        if np.any(V[F] < lo - tol):
            # drop the most violated free entry onto its bound and retry
            worst = F[np.argmin(V[F])]
            free[worst] = False
            continue
        mu = prob.gradient(V) + E.T @ nu
        if len(A_) and np.min(mu[A_]) < -tol:
            free[A_[np.argmin(mu[A_])]] = True
            continue
        return np.maximum(V, lo)
    return None


def solve(prob: MpcProblem, cfg: MpcConfig, warm_start: np.ndarray | None = None,
          tol: float = 1e-8, max_iter: int = 20000) -> MpcSolution:
    """Minimize the QP over the per-step scaled simplices.

    Accelerated projected gradient identifies the active bounds; an exact
    solve of the KKT system on the free entries then finishes the job.
    """
    m, h = prob.n_inlets, prob.horizon
    lo, total = cfg.floor, cfg.budget
    if warm_start is None:
        U = np.full(m * h, total / m)
    else:
        U = _project(np.asarray(warm_start, dtype=float), m, lo, total)
    lip = float(np.linalg.eigvalsh(prob.H)[-1])
    step = 1.0 / lip
    Y, t_k = U.copy(), 1.0
    best = U
    for it in range(1, max_iter + 1):
        U_next = _project(Y - step * prob.gradient(Y), m, lo, total)
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t_k * t_k))
        if prob.objective(U_next) > prob.objective(U):
            Y, t_k = U.copy(), 1.0    # adaptive restart
        else:
            Y = U_next + ((t_k - 1) / t_next) * (U_next - U)
            U, t_k = U_next, t_next
        if it % 25 == 0 or it == max_iter:
            cand = _polish(prob, U, cfg, tol * 1e-2)
            if cand is not None and kkt_residual(prob, cand, cfg) <= tol:
                best = cand
                break
            if kkt_residual(prob, U, cfg) <= tol * 1e-3:
                best = U
                break
    else:
        res = kkt_residual(prob, U, cfg)
        raise MpcError(f"QP did not converge in {max_iter} iterations (residual {res:.3g})",
                       U=U, residual=res)
    return MpcSolution(best, prob.objective(best), kkt_residual(prob, best, cfg), it)


def actuate(U: np.ndarray, cfg: MpcConfig, n_inlets: int) -> np.ndarray:
    """First block of the plan, clipped to the floor and rescaled to the budget."""
    u = np.maximum(np.asarray(U, dtype=float)[:n_inlets], cfg.floor)
    return u * (cfg.budget / u.sum())


def shift_plan(U: np.ndarray, n_inlets: int) -> np.ndarray:
    """Warm start for the next step: drop the first block, repeat the last."""
    blocks = np.asarray(U).reshape(-1, n_inlets)
    return np.vstack([blocks[1:], blocks[-1:]]).ravel()
