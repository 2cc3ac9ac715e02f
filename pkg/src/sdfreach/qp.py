"""Dense convex quadratic-program solver.

Solves

    min  1/2 x' Q x + c' x
    s.t. Aeq x  = beq
         Ain x <= bin
         lb <= x <= ub

with a dual active-set method (Goldfarb-Idnani). The iterate starts at the
unconstrained minimum and activates violated constraints one at a time,
taking partial dual steps that release blocking constraints along the way.
Problems are small (tens of variables) and dense, so every step refactorizes
instead of updating factors incrementally.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_ZERO_DIR = 1e-12   # below this an activation direction counts as zero
_TRIVIAL_ROW = 1e-13  # rows with smaller norm are constant constraints


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class SolverSettings:
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    max_iterations: int = 4000
    regularization: float = 1e-9  # added to diag(Q) for strict convexity


@dataclass
class QpProblem:
    """Dense QP data. Empty constraint blocks may be None."""

    Q: np.ndarray
    c: np.ndarray
    Aeq: np.ndarray | None = None
    beq: np.ndarray | None = None
    Ain: np.ndarray | None = None
    bin: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def validate(self, sym_tol: float = 1e-12) -> None:
        Q, c = np.asarray(self.Q, float), np.asarray(self.c, float)
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise ValueError(f"Q must be square, got {Q.shape}")
        scale = max(1.0, float(np.abs(Q).max()))
        if np.abs(Q - Q.T).max() > sym_tol * scale:
            raise ValueError("Q is not symmetric")
        if c.shape != (n,):
            raise ValueError(f"c has shape {c.shape}, expected ({n},)")
        if (self.Aeq is None) != (self.beq is None):
            raise ValueError("Aeq and beq must be given together")
        if self.Aeq is not None:
            if self.Aeq.shape[1] != n or self.Aeq.shape[0] != self.beq.shape[0]:
                raise ValueError("equality constraint dimensions inconsistent")
        if (self.Ain is None) != (self.bin is None):
            raise ValueError("Ain and bin must be given together")
        if self.Ain is not None:
            if self.Ain.shape[1] != n or self.Ain.shape[0] != self.bin.shape[0]:
                raise ValueError("inequality constraint dimensions inconsistent")
        for b, name in ((self.lb, "lb"), (self.ub, "ub")):
            if b is not None and np.asarray(b).shape != (n,):
                raise ValueError(f"{name} has wrong shape")
        if self.lb is not None and self.ub is not None:
            both = np.isfinite(self.lb) & np.isfinite(self.ub)
            if np.any(self.lb[both] > self.ub[both]):
                raise ValueError("lb > ub")

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Q @ x + self.c @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    status: SolveStatus
    primal_residual: float
    dual_residual: float
    iterations: int
    eq_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ineq_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lb_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ub_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _stack_inequalities(problem: QpProblem):
    """Fold box bounds into a single G x <= h block.

    Returns (G, h, m_in, ub_idx, lb_idx) where ub_idx/lb_idx map bound rows
    back to variable indices for multiplier recovery.
    """
    n = problem.n
    blocks_G, blocks_h = [], []
    m_in = 0
    if problem.Ain is not None and problem.Ain.shape[0] > 0:
        blocks_G.append(np.asarray(problem.Ain, float))
        blocks_h.append(np.asarray(problem.bin, float))
        m_in = problem.Ain.shape[0]
    ub_idx = np.zeros(0, int)
    if problem.ub is not None:
        ub_idx = np.flatnonzero(np.isfinite(problem.ub))
        if ub_idx.size:
            E = np.zeros((ub_idx.size, n))
            E[np.arange(ub_idx.size), ub_idx] = 1.0
            blocks_G.append(E)
            blocks_h.append(np.asarray(problem.ub, float)[ub_idx])
    lb_idx = np.zeros(0, int)
    if problem.lb is not None:
        lb_idx = np.flatnonzero(np.isfinite(problem.lb))
        if lb_idx.size:
            E = np.zeros((lb_idx.size, n))
            E[np.arange(lb_idx.size), lb_idx] = -1.0
            blocks_G.append(E)
            blocks_h.append(-np.asarray(problem.lb, float)[lb_idx])
    if blocks_G:
        return np.vstack(blocks_G), np.concatenate(blocks_h), m_in, ub_idx, lb_idx
    return np.zeros((0, n)), np.zeros(0), 0, ub_idx, lb_idx


class _Infeasible(Exception):
    pass


class _OutOfIterations(Exception):
    pass


class _GoldfarbIdnani:
    """Dual active-set core.

    Works on constraints ``N x >= b`` where the first ``ne`` rows are
    equalities (activated first, free-signed multipliers, never released).
    """

    def __init__(self, Q, c, N, b, ne, settings):
        self.cho = cho_factor(Q)
        self.Q = Q
        self.c = c
        self.N = N
        self.b = b
        self.ne = ne
        self.m = N.shape[0]
        self.tol = settings.tol_primal
        self.max_iter = settings.max_iterations
        self.x = -cho_solve(self.cho, c)
        self.active: list[int] = []
        self.u: list[float] = []
        self.iterations = 0

    def _directions(self, np_row):
        """Primal step z and dual step r for activating the row np_row."""
        qn = cho_solve(self.cho, np_row)
        if not self.active:
            return qn, np.zeros(0)
        Nact = self.N[self.active]
        QiNt = cho_solve(self.cho, Nact.T)      # n x k
        M = Nact @ QiNt                          # k x k, SPD for independent rows
        r = np.linalg.solve(M, Nact @ qn)
        z = qn - QiNt @ r
        return z, r

    def _tick(self):
        self.iterations += 1
        if self.iterations > self.max_iter:
            raise _OutOfIterations

    def activate(self, p):
        """Add constraint p to the active set, releasing blockers as needed."""
        row = self.N[p]
        u_plus = 0.0
        while True:
            self._tick()
            s_p = float(row @ self.x - self.b[p])
            if s_p >= -self.tol:
                if u_plus > 0.0 or p < self.ne:
                    self.active.append(p)
                    self.u.append(u_plus)
                return
            z, r = self._directions(row)
            # Dual blocking step: smallest ratio over active inequalities
            # whose multiplier would be driven negative.
            t1, j_block = np.inf, -1
            for idx, (j, uj) in enumerate(zip(self.active, self.u)):
                if j < self.ne:
                    continue
                if r[idx] > _ZERO_DIR:
                    ratio = uj / r[idx]
                    if ratio < t1 - 1e-15:
                        t1, j_block = ratio, idx
            denom = float(row @ z)
            t2 = (-s_p) / denom if denom > _ZERO_DIR else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                raise _Infeasible
            if np.isfinite(t2):
                self.x = self.x + t * z
            if self.active:
                for idx in range(len(self.u)):
                    self.u[idx] -= t * r[idx]
            u_plus += t
            if t == t2 and np.isfinite(t2):
                self.active.append(p)
                self.u.append(u_plus)
                return
            # blocked: release j_block and retry
            self.active.pop(j_block)
            self.u.pop(j_block)

    def run(self):
        for e in range(self.ne):
            s = float(self.N[e] @ self.x - self.b[e])
            if s > 0:  # flip so equalities are approached from below
                self.N[e] = -self.N[e]
                self.b[e] = -self.b[e]
            z, _ = self._directions(self.N[e])
            if float(np.abs(z).max()) <= _ZERO_DIR:
                if abs(s) > self.tol:
                    raise _Infeasible  # inconsistent equalities
                continue  # redundant consistent equality
            self.activate(e)
        while True:
            s = self.N @ self.x - self.b if self.m else np.zeros(0)
            violated = np.flatnonzero(s < -self.tol)
            violated = violated[violated >= self.ne]
            if violated.size == 0:
                return
            p = int(violated[np.argmin(s[violated])])
            self.activate(p)


def solve(problem: QpProblem, settings: SolverSettings = SolverSettings()) -> QpSolution:
    """Solve a dense convex QP. Deterministic for identical inputs."""
    problem.validate()
    n = problem.n
    Q = 0.5 * (np.asarray(problem.Q, float) + np.asarray(problem.Q, float).T)
    Q = Q + settings.regularization * np.eye(n)
    c = np.asarray(problem.c, float)
    if problem.Aeq is not None:
        Aeq = np.asarray(problem.Aeq, float)
        beq = np.asarray(problem.beq, float)
    else:
        Aeq = np.zeros((0, n))
        beq = np.zeros(0)
    G, h, m_in, ub_idx, lb_idx = _stack_inequalities(problem)

    # Normalize rows for scale-free tolerances; remember norms to undo the
    # scaling on the recovered multipliers.
    eq_norms = np.linalg.norm(Aeq, axis=1) if Aeq.shape[0] else np.zeros(0)
    if np.any(eq_norms <= _TRIVIAL_ROW):
        bad = eq_norms <= _TRIVIAL_ROW
        if np.any(np.abs(beq[bad]) > settings.tol_primal):
            return _finalize(problem, np.zeros(n), np.zeros(Aeq.shape[0]),
                             np.zeros(G.shape[0]), G, h, Aeq, beq, m_in,
                             ub_idx, lb_idx, np.ones_like(eq_norms),
                             np.ones(G.shape[0]), SolveStatus.INFEASIBLE, 0, Q, c)
        keep = ~bad
        Aeq, beq, eq_norms = Aeq[keep], beq[keep], eq_norms[keep]
    in_norms = np.linalg.norm(G, axis=1) if G.shape[0] else np.zeros(0)
    trivial = in_norms <= _TRIVIAL_ROW
    if np.any(trivial):
        if np.any(h[trivial] < -settings.tol_primal):
            return _finalize(problem, np.zeros(n), np.zeros(Aeq.shape[0]),
                             np.zeros(G.shape[0]), G, h, Aeq, beq, m_in,
                             ub_idx, lb_idx, eq_norms, np.ones(G.shape[0]),
                             SolveStatus.INFEASIBLE, 0, Q, c)
    keep_in = np.flatnonzero(~trivial)

    ne = Aeq.shape[0]
    N = np.vstack([
        Aeq / eq_norms[:, None] if ne else Aeq,
        -G[keep_in] / in_norms[keep_in, None] if keep_in.size else np.zeros((0, n)),
    ])
    b = np.concatenate([
        beq / eq_norms if ne else beq,
        -h[keep_in] / in_norms[keep_in] if keep_in.size else np.zeros(0),
    ])

    core = _GoldfarbIdnani(Q, c, N.copy(), b.copy(), ne, settings)
    try:
        core.run()
        status = SolveStatus.OPTIMAL
    except _Infeasible:
        status = SolveStatus.INFEASIBLE
    except _OutOfIterations:
        status = SolveStatus.MAX_ITERATIONS
    except np.linalg.LinAlgError:
        status = SolveStatus.MAX_ITERATIONS

    nu = np.zeros(Aeq.shape[0])
    lam_scaled = np.zeros(G.shape[0])
    for j, uj in zip(core.active, core.u):
        if j < ne:
            # undo the equality sign flip applied inside the core
            sign = 1.0 if np.dot(core.N[j], Aeq[j]) > 0 else -1.0
            nu[j] = sign * uj / eq_norms[j]
        else:
            orig = keep_in[j - ne]
            lam_scaled[orig] = uj / in_norms[orig]
    return _finalize(problem, core.x, nu, lam_scaled, G, h, Aeq, beq, m_in,
                     ub_idx, lb_idx, eq_norms, in_norms, status,
                     core.iterations, Q, c)


def _finalize(problem, x, nu, lam_full, G, h, Aeq, beq,
              m_in, ub_idx, lb_idx, eq_norms, in_norms, status, iterations, Qr, c):
    n = problem.n
    m = G.shape[0]
    eq_res = float(np.abs(Aeq @ x - beq).max()) if Aeq.shape[0] else 0.0
    viol = float(np.maximum(G @ x - h, 0.0).max()) if m else 0.0
    primal = max(eq_res, viol)
    grad = Qr @ x + c
    if Aeq.shape[0]:
        grad = grad + Aeq.T @ nu
    if m:
        grad = grad + G.T @ lam_full
    dual = float(np.abs(grad).max())
    lam_in = lam_full[:m_in]
    lam_ub = np.zeros(n)
    lam_lb = np.zeros(n)
    nub = ub_idx.size
    if nub:
        lam_ub[ub_idx] = lam_full[m_in:m_in + nub]
    if lb_idx.size:
        lam_lb[lb_idx] = lam_full[m_in + nub:m_in + nub + lb_idx.size]
    return QpSolution(
        x=x, status=status, primal_residual=primal, dual_residual=dual,
        iterations=iterations, eq_multipliers=nu, ineq_multipliers=lam_in,
        lb_multipliers=lam_lb, ub_multipliers=lam_ub,
    )
