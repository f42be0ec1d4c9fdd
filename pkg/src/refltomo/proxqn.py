"""Proximal quasi-Newton outer loop and its building blocks.

The outer iteration minimizes a smooth misfit over the TV-and-nonnegativity
set by (i) building a limited-memory BFGS model B of the misfit Hessian,
(ii) solving the constrained quadratic subproblem

    min_s  <grad, s> + 1/2 s^T B s   s.t.  ||D(f+s)||_1 <= tau,  f+s >= 0

with the same three-term primal-dual scheme used for the proximal map (the
metric resolvent (I + gamma B)^{-1} is applied through the compact L-BFGS
representation and a Woodbury identity, never by forming B), and (iii)
backtracking on the misfit along the proximally mapped trial points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .forward import ScatteredData, WavefieldSet
from .objective import AdjointState, gradient, misfit
from .proxtv import TVOperator, project_l1_ball, prox_nn_tv

logger = logging.getLogger(__name__)

_CURVATURE_GUARD = 1e-12
_ALPHA_MIN = 1e-8


# ---------------------------------------------------------------------------
# limited-memory quadratic model
# ---------------------------------------------------------------------------


class LBFGSState:
    """Curvature pairs and the compact representation of B.

    With pairs S = [s_1 .. s_p], Y = [y_1 .. y_p] and theta = sigma0 (the
    scaling of the last accepted pair),

        B = theta I - U Minv U^T,   U = [theta S, Y],
        M = [[theta S^T S, L], [L^T, -D]],

    where L is the strictly lower triangle of S^T Y and D its diagonal.
    Pairs failing the curvature guard <s, y> > 1e-12 ||s|| ||y|| are skipped.
    """

    def __init__(self, memory: int = 10):
        if memory < 0:
            raise ValueError("memory must be nonnegative")
        self.memory = memory
        self._s: list[np.ndarray] = []
        self._y: list[np.ndarray] = []
        self.sigma0 = 1.0
        self._factors = None

    def __len__(self) -> int:
        return len(self._s)

    def update(self, s: np.ndarray, y: np.ndarray) -> bool:
        """Append a pair; returns False when the curvature guard rejects it."""
        if self.memory == 0:
            return False
        sy = float(np.dot(s, y))
        if sy <= _CURVATURE_GUARD * np.linalg.norm(s) * np.linalg.norm(y):
            logger.debug("lbfgs: skipped pair with curvature %.3e", sy)
            return False
        self._s.append(np.array(s, dtype=float))
        self._y.append(np.array(y, dtype=float))
        if len(self._s) > self.memory:
            self._s.pop(0)
            self._y.pop(0)
        self.sigma0 = sy / float(np.dot(y, y))
        self._factors = None
        return True

    def _compact(self):
        """U and M of the compact form, rebuilt lazily after updates."""
        if self._factors is None:
            S = np.column_stack(self._s)
            Y = np.column_stack(self._y)
            theta = self.sigma0
            SY = S.T @ Y
            D = np.diag(np.diag(SY))
            Lmat = np.tril(SY, k=-1)
            M = np.block([[theta * (S.T @ S), Lmat], [Lmat.T, -D]])
            U = np.hstack([theta * S, Y])
            self._factors = (U, M)
        return self._factors


def lbfgs_apply_B(state: LBFGSState, v: np.ndarray) -> np.ndarray:
    """Apply the quadratic-model Hessian: B v."""
    if len(state) == 0:
        return state.sigma0 * v
    U, M = state._compact()
    return state.sigma0 * v - U @ np.linalg.solve(M, U.T @ v)


def lbfgs_apply_inv_shifted(state: LBFGSState, gamma: float, v: np.ndarray) -> np.ndarray:
    """Apply (I + gamma B)^{-1} v through the Woodbury identity.

    I + gamma B = c I - gamma U Minv U^T with c = 1 + gamma theta, so

        (I + gamma B)^{-1} v
            = v / c + (gamma / c^2) U (M - (gamma / c) U^T U)^{-1} U^T v.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    c = 1.0 + gamma * state.sigma0
    if len(state) == 0:
        return v / c
    U, M = state._compact()
    core = M - (gamma / c) * (U.T @ U)
    return v / c + (gamma / c**2) * (U @ np.linalg.solve(core, U.T @ v))


# ---------------------------------------------------------------------------
# constrained subproblem
# ---------------------------------------------------------------------------


def search_direction(
    grad: np.ndarray,
    lbfgs: LBFGSState,
    f_current: np.ndarray,
    D: TVOperator,
    tau: float,
    gamma: float | None = None,
    t_max: int = 200,
    tol: float = 1e-9,
    u0: np.ndarray | None = None,
    v0: np.ndarray | None = None,
    full_output: bool = False,
):
    """Solve the metric subproblem for the step s at the current iterate.

    The primal-dual sweeps mirror the proximal map but with the quadratic
    model as the smooth term and constraints shifted to the step variable:
    the l1 ball acts on D(f + s) and the orthant on f + s, so the projections
    are conjugated by the corresponding shifts.  Duals can be warm-started
    across outer iterations.  When the sweep budget runs out the best (last)
    iterate is returned with ``converged=False`` in the info dict.
    """
    f_current = np.asarray(f_current, dtype=float)
    Df = D.apply_D(f_current)
    if gamma is None:
        gamma = D.default_step()
    s = np.zeros_like(f_current)
    u = np.zeros(D.n_rows) if u0 is None else np.array(u0, dtype=float)
    v = np.zeros_like(f_current) if v0 is None else np.array(v0, dtype=float)
    converged = False
    t_done = 0
    for t in range(t_max):
        s_new = lbfgs_apply_inv_shifted(
            lbfgs, gamma, s - gamma * D.apply_Dt(u) - gamma * v - gamma * grad
        )
        bar = 2.0 * s_new - s
        z = u + gamma * D.apply_D(bar)
        u_new = z - gamma * (project_l1_ball(z / gamma + Df, tau) - Df)
        zp = v + gamma * bar
        v_new = zp - gamma * np.maximum(zp / gamma, -f_current)
        change = max(
            float(np.linalg.norm(s_new - s)),
            float(np.linalg.norm(u_new - u)),
            float(np.linalg.norm(v_new - v)),
        ) / (1.0 + float(np.linalg.norm(s_new)))
        s, u, v = s_new, u_new, v_new
        t_done = t + 1
        if change < tol:
            converged = True
            break
    if not converged:
        logger.debug("search_direction: sweep budget %d exhausted", t_max)
    if full_output:
        return s, u, v, {"iterations": t_done, "converged": converged}
    return s


def linesearch(
    f: np.ndarray,
    s: np.ndarray,
    tau: float,
    misfit_callable,
    gamma_ls: float = 0.5,
    c_suff: float = 1e-4,
    *,
    grad: np.ndarray,
    misfit0: float,
    tv: TVOperator,
    prox_t_max: int = 2000,
    prox_tol: float = 1e-8,
):
    """Backtrack on alpha with trial points f(alpha) = prox(f + alpha s).

    Accepts once misfit(f(alpha)) <= misfit0 - c_suff * alpha * |<grad, s>|.
    Returns (alpha, f_next); an alpha of 0.0 signals underflow below 1e-8,
    with f returned unchanged so the caller can stop.
    """
    slope = abs(float(np.dot(grad, s)))
    alpha = 1.0
    while alpha >= _ALPHA_MIN:
        trial = prox_nn_tv(
            f + alpha * s, tau, t_max=prox_t_max, tol=prox_tol, shape=(tv.nx, tv.ny)
        )
        value = misfit_callable(trial)
        if value <= misfit0 - c_suff * alpha * slope:
            return alpha, trial
        alpha *= gamma_ls
    logger.warning("linesearch: alpha underflow, no acceptable step")
    return 0.0, np.asarray(f, dtype=float)


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------


@dataclass
class ProxQNConfig:
    """Knobs of the outer loop and its inner solvers."""

    i_max: int = 500
    grad_tol: float = 1e-6
    memory: int = 10
    inner_t_max: int = 200
    inner_tol: float = 1e-9
    prox_t_max: int = 2000
    prox_tol: float = 1e-8
    forward_tol: float = 1e-8
    gamma_ls: float = 0.5
    c_suff: float = 1e-4


@dataclass
class TraceRecord:
    """One outer-iteration row: state of the iterate the loop just visited."""

    iteration: int
    misfit: float
    alpha: float
    tv: float
    min_value: float
    grad_map_norm: float


def prox_qn_minimize(
    value_and_grad,
    misfit_only,
    f0: np.ndarray,
    tv: TVOperator,
    tau: float,
    config: ProxQNConfig | None = None,
):
    """Generic engine: minimize a smooth callable over the constraint set.

    ``value_and_grad(f) -> (float, vector)`` and ``misfit_only(f) -> float``
    evaluate the smooth term.  Returns the final iterate and the trace, one
    record per visited iterate (so the misfit column is non-increasing).
    Termination: gradient-map norm below ``grad_tol``, the iteration budget,
    or a failed linesearch.
    """
    cfg = config or ProxQNConfig()
    f = np.array(f0, dtype=float)
    lbfgs = LBFGSState(memory=cfg.memory)
    value, grad = value_and_grad(f)
    u_warm: np.ndarray | None = None
    v_warm: np.ndarray | None = None
    trace: list[TraceRecord] = []
    alpha = np.nan
    for i in range(cfg.i_max + 1):
        grad_map = f - prox_nn_tv(
            f - grad, tau, t_max=cfg.prox_t_max, tol=cfg.prox_tol, shape=(tv.nx, tv.ny)
        )
        gm_norm = float(np.linalg.norm(grad_map))
        trace.append(
            TraceRecord(
                iteration=i,
                misfit=value,
                alpha=alpha,
                tv=tv.tv(f),
                min_value=float(np.min(f)),
                grad_map_norm=gm_norm,
            )
        )
        if gm_norm <= cfg.grad_tol:
            logger.info("prox-qn: converged at iteration %d (grad map %.3e)", i, gm_norm)
            break
        if i == cfg.i_max:
            logger.info("prox-qn: iteration budget %d reached", cfg.i_max)
            break
        s, u_warm, v_warm, _ = search_direction(
            grad,
            lbfgs,
            f,
            tv,
            tau,
            t_max=cfg.inner_t_max,
            tol=cfg.inner_tol,
            u0=u_warm,
            v0=v_warm,
            full_output=True,
        )
        alpha, f_next = linesearch(
            f,
            s,
            tau,
            misfit_only,
            cfg.gamma_ls,
            cfg.c_suff,
            grad=grad,
            misfit0=value,
            tv=tv,
            prox_t_max=cfg.prox_t_max,
            prox_tol=cfg.prox_tol,
        )
        if alpha == 0.0:
            logger.warning("prox-qn: stopping on linesearch failure at iteration %d", i)
            break
        value_next, grad_next = value_and_grad(f_next)
        lbfgs.update(f_next - f, grad_next - grad)
        f, value, grad = f_next, value_next, grad_next
    return f, trace


def prox_qn_solve(
    f0: np.ndarray,
    batch,
    data: ScatteredData,
    ops,
    tau: float,
    config: ProxQNConfig | None = None,
    cache: WavefieldSet | None = None,
):
    """Minimize the scattering misfit over ``batch`` subject to the TV budget.

    Wraps :func:`prox_qn_minimize` around the adjoint-state objective.  Total
    fields are cached across evaluations and used to warm-start GMRES, which
    makes the repeated linesearch evaluations cheap.  Passing a ``cache``
    shares those fields with the caller (useful across warm-started stages).
    """
    cfg = config or ProxQNConfig()
    batch = list(batch)
    first = ops[batch[0]] if isinstance(ops, dict) else next(
        op for op in ([ops] if not hasattr(ops, "__iter__") else ops)
        if op.freq_index == batch[0]
    )
    grid = first.grid
    tv = TVOperator(grid.nx, grid.ny)
    if cache is None:
        cache = WavefieldSet()
    adjoint_cache = AdjointState()

    def value_and_grad(fv):
        value, residuals, fields = misfit(
            fv, batch, data, ops, tol=cfg.forward_tol, warm=cache
        )
        cache.merge(fields)
        g = gradient(
            fv,
            batch,
            data,
            ops,
            tol=cfg.forward_tol,
            precomputed=(residuals, fields),
            adjoint_warm=adjoint_cache,
        )
        return value, g

    def misfit_only(fv):
        value, _, fields = misfit(fv, batch, data, ops, tol=cfg.forward_tol, warm=cache)
        cache.merge(fields)
        return value

    return prox_qn_minimize(value_and_grad, misfit_only, f0, tv, tau, cfg)
