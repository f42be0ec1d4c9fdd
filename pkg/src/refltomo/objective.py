"""Data misfit and its gradient via adjoint wavefields.

For a batch of frequency indices the misfit is

    F(f) = sum_j 1/2 || Y_j - H_j diag(f) U_j(f) ||_F^2,

where ``U_j(f)`` solves the total-field system ``(I - G_j diag(f)) U_j = V_j``.
Differentiating through that implicit dependence gives, per transmitter column
``u`` with residual projection ``e = H^H (yhat - y)``,

    grad += Re[ conj(u) * (e - G^H lam) ],
    (I - diag(f) G^H) lam = diag(f) (-e),

i.e. the adjoint system carries the conjugate transpose of the forward
operator.  The adjoint solves go through the same solver paths as the forward
ones (shared LU factors at oracle scale, restarted GMRES above).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .forward import (
    ForwardSolveError,
    ScatteredData,
    WavefieldSet,
    _contrast_vector,
    direct_columns,
    gmres_column,
    run_column_tasks,
    solve_total_field,
)
from .greens import _DENSE_LIMIT, GreenOperators


@dataclass
class ResidualSet:
    """Per-frequency residual matrices ``R[j] = Y_j - H_j diag(f) U_j``."""

    R: dict[int, np.ndarray] = field(default_factory=dict)

    def norm(self, batch=None) -> float:
        idx = sorted(self.R.keys()) if batch is None else list(batch)
        total = sum(float(np.sum(np.abs(self.R[j]) ** 2)) for j in idx)
        return float(np.sqrt(total))


@dataclass
class AdjointState:
    """Adjoint wavefields, one (n_cells, n_tx) matrix per frequency index."""

    fields: dict[int, np.ndarray] = field(default_factory=dict)
    residuals: dict[int, float] = field(default_factory=dict)


def _as_ops_map(ops) -> dict[int, GreenOperators]:
    if isinstance(ops, GreenOperators):
        return {ops.freq_index: ops}
    if isinstance(ops, dict):
        return ops
    return {op.freq_index: op for op in ops}


def misfit(
    f,
    batch,
    data: ScatteredData,
    ops,
    tol: float = 1e-8,
    warm: WavefieldSet | None = None,
):
    """Evaluate ``F(f)`` over ``batch``; returns (value, residuals, wavefields).

    ``warm`` optionally carries previous total fields used to warm-start the
    per-column GMRES iterations; it is not modified.
    """
    ops_map = _as_ops_map(ops)
    fv = _contrast_vector(f)
    wavefields = WavefieldSet()
    residuals = ResidualSet()
    value = 0.0
    for j in batch:
        op = ops_map[j]
        x0 = warm.fields.get(j) if warm is not None else None
        sol = solve_total_field(op, fv, tol=tol, initial=x0)
        U = sol.fields[j]
        R = data.Y[j] - op.H @ (fv[:, None] * U)
        value += 0.5 * float(np.sum(np.abs(R) ** 2))
        wavefields.merge(sol)
        residuals.R[j] = R
    return value, residuals, wavefields


def _solve_adjoint(
    op: GreenOperators,
    fv: np.ndarray,
    B: np.ndarray,
    tol: float,
    initial: np.ndarray | None = None,
) -> np.ndarray:
    """Solve ``(I - diag(f) G^H) Lam = B``, mirroring the forward solver paths."""
    n = op.grid.n_cells
    if n <= _DENSE_LIMIT:
        Lam = direct_columns(op, fv, B, adjoint=True)
    else:
        def matvec(x: np.ndarray) -> np.ndarray:
            return x - fv * op.apply_GH(x[:, None])[:, 0]

        A = LinearOperator((n, n), matvec=matvec, dtype=np.complex128)
        Lam = np.empty_like(B)

        def column_task(i: int):
            def run():
                x0 = None if initial is None else initial[:, i]
                Lam[:, i] = gmres_column(A, B[:, i], x0, tol)
            return run

        run_column_tasks([column_task(i) for i in range(B.shape[1])])
    resid = np.linalg.norm(Lam - fv[:, None] * op.apply_GH(Lam) - B)
    nB = np.linalg.norm(B)
    if nB > 0 and not resid / nB <= tol:
        raise ForwardSolveError(op.freq_index, float(resid / nB), tol)
    return Lam


def gradient(
    f,
    batch,
    data: ScatteredData,
    ops,
    tol: float = 1e-8,
    precomputed=None,
    warm: WavefieldSet | None = None,
    adjoint_warm: AdjointState | None = None,
) -> np.ndarray:
    """Adjoint-state gradient of the misfit over ``batch`` (real n_cells vector).

    ``precomputed`` accepts the ``(residuals, wavefields)`` pair returned by
    :func:`misfit` at the same ``f`` so the forward solves are not repeated.
    ``adjoint_warm`` carries adjoint fields from a previous call; it is
    updated in place with the new solutions, which keeps the adjoint GMRES
    cheap across outer iterations as the iterates settle.
    """
    ops_map = _as_ops_map(ops)
    fv = _contrast_vector(f)
    if precomputed is not None:
        residuals, wavefields = precomputed
    else:
        _, residuals, wavefields = misfit(fv, batch, data, ops_map, tol=tol, warm=warm)
    grad = np.zeros(fv.shape[0])
    for j in batch:
        op = ops_map[j]
        U = wavefields.fields[j]
        # E = H^H (yhat - y) = -H^H R
        E = -(op.H.conj().T @ residuals.R[j])
        x0 = adjoint_warm.fields.get(j) if adjoint_warm is not None else None
        Lam = _solve_adjoint(op, fv, fv[:, None] * (-E), tol, initial=x0)
        if adjoint_warm is not None:
            adjoint_warm.fields[j] = Lam
        grad += np.sum(np.real(np.conj(U) * (E - op.apply_GH(Lam))), axis=1)
    return grad
