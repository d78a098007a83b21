"""Discrete Dirichlet-Neumann operator and the displacement recovery map.

The D-N operator sends surface values to the normal derivative of their
harmonic extension (no flux through the solid walls).  It is assembled as a
dense matrix on the collocation nodes, one extension solve per basis column,
by pairing each column's surface flux against every basis function; the
quadrature-weighted symmetric part of that pairing is the operator used
everywhere, so self-adjointness, nonnegativity, and the zero-mean property
hold to solver round-off in the moved-surface inner product.

On top of it sit the third-order operator (normal flux of the surface
Laplacian), its positive cubic shift, and a damped Newton iteration that
recovers the surface displacement from the shifted curvature flux and the
two endpoint displacements.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    StateError,
    evaluate_frame,
    surface_laplacian,
    surface_laplacian_matrix,
)
from .elliptic import harmonic_extension, solve_domain_map

log = logging.getLogger(__name__)


@dataclass
class DnoOperator:
    """Dense Dirichlet-Neumann operator on the collocation nodes.

    The matrix is the quadrature-weighted symmetric part of the Galerkin
    flux pairing of the extension solves, so it annihilates constants, has
    mean-free output, and is self-adjoint and positive semi-definite in the
    moved-surface inner product, all to factorization round-off.
    """

    mat: np.ndarray  # (m+1, m+1) action on collocation values
    w: np.ndarray    # quadrature weights of the moved-surface measure
    frame: object
    hmap: object

    def apply(self, f):
        return self.mat @ f

    def form(self, f, g):
        """Variational pairing of the D-N action of f against g."""
        return float(f @ (self.w * (self.mat @ g)))

    def inner(self, f, g):
        """Surface-measure inner product on the moved curve."""
        return float(f @ (self.w * g))

    def norm(self, f):
        return float(np.sqrt(max(self.inner(f, f), 0.0)))


def assemble_dno(hmap, frame) -> DnoOperator:
    """Materialize the D-N operator by one extension solve per column.

    Column j extends the j-th collocation cardinal function harmonically
    and pairs its surface flux against every cardinal through the
    interpolation transpose.  The pairing matrix is a Galerkin energy, so
    it is symmetric positive semi-definite and kills constants up to solver
    round-off; dividing its symmetrized form by the quadrature weights
    turns it into the nodal action while keeping that structure exact.
    """
    ws = hmap.ws
    R = ws.R
    m1 = R.shape[1]
    B = np.empty((m1, m1))
    for j in range(m1):
        ext = harmonic_extension(hmap, R[:, j])
        B[:, j] = R.T @ ext.flux_weights_top()
    B = 0.5 * (B + B.T)
    w = ws.ref.quad_w * frame.metric
    return DnoOperator(mat=B / w[:, None], w=w, frame=frame, hmap=hmap)


def dno_inverse(op: DnoOperator, g):
    """Invert the D-N operator on the mean-zero subspace.

    The input must carry no net flux; a defect beyond 1e-10 of the input
    norm is an error, a smaller one is projected away and logged.  The
    constant direction is pinned by a rank-one shift of the weighted
    pairing, which leaves the mean-zero subspace untouched, so forward
    actions are reproduced exactly up to solver round-off.
    """
    g = np.asarray(g, dtype=float)
    norm_g = op.norm(g)
    total = float(op.w @ g)
    if norm_g > 0.0 and abs(total) > 1e-10 * norm_g:
        raise ValueError(
            f"input to the inverse D-N solve carries net flux {total:.3e} "
            f"(relative defect {abs(total) / norm_g:.3e})"
        )
    if total != 0.0:
        log.debug("inverse D-N input mean %.3e projected away", total)
    g = g - total / op.w.sum()
    pairing = op.w[:, None] * op.mat
    shift = np.abs(pairing).max()
    sys = pairing + shift * np.outer(op.w, op.w) / op.w.sum()
    f = np.linalg.solve(sys, op.w * g)
    return f - (op.w @ f) / op.w.sum()


# -- third-order operator ----------------------------------------------------


def apply_third_order(op: DnoOperator, f):
    """Negative normal flux of the surface Laplacian (third order in f)."""
    ref = op.hmap.ws.ref
    return -op.apply(surface_laplacian(ref, op.frame, f))


def third_order_matrix(op: DnoOperator):
    ref = op.hmap.ws.ref
    return -op.mat @ surface_laplacian_matrix(ref, op.frame)


def solve_third_order(op: DnoOperator, shift, rhs, bc):
    """Solve (shift^3 + third-order) f = rhs with endpoint values bc.

    The endpoint rows are replaced by identity conditions; the interior
    residual is verified to 1e-9 of the data norm before returning.
    """
    sys = third_order_matrix(op)
    sys[np.diag_indices_from(sys)] += shift**3
    sys[0, :] = 0.0
    sys[0, 0] = 1.0
    sys[-1, :] = 0.0
    sys[-1, -1] = 1.0
    b = np.asarray(rhs, dtype=float).copy()
    b[0], b[-1] = bc
    try:
        f = np.linalg.solve(sys, b)
    except np.linalg.LinAlgError:
        smin = np.linalg.svd(sys, compute_uv=False)[-1]
        raise StateError(
            f"shifted third-order system is singular (smallest singular "
            f"value {smin:.3e}); the shift is too small for this geometry"
        ) from None
    scale = np.linalg.norm(b)
    res = np.linalg.norm(sys @ f - b)
    if res > 1e-9 * max(scale, 1.0):
        smin = np.linalg.svd(sys, compute_uv=False)[-1]
        raise StateError(
            f"shifted third-order solve left residual {res:.3e} "
            f"(smallest singular value {smin:.3e})"
        )
    return f


def shifted_curvature_flux(op: DnoOperator, shift, d):
    """Normal flux of the surface curvature plus the cubic-shift multiple."""
    return op.apply(op.frame.kappa) + shift**3 * np.asarray(d, dtype=float)


# -- displacement recovery ---------------------------------------------------


@dataclass
class NewtonSettings:
    """Damped-Newton controls for the displacement recovery."""

    max_iter: int = 12
    tol: float = 1e-8        # residual tolerance in units of shift^3
    backtracks: int = 6
    min_shift: float = 1.0


@dataclass
class RecoveryResult:
    d: np.ndarray
    iterations: int
    residuals: list = field(default_factory=list)


def _recovery_residual(ws, shift, d, target, d_l, d_r):
    frame = evaluate_frame(ws.ref, d)
    hmap = solve_domain_map(ws, frame)
    op = assemble_dno(hmap, frame)
    res = shifted_curvature_flux(op, shift, d) - target
    res[0] = d[0] - d_l
    res[-1] = d[-1] - d_r
    return res, op


def _recovery_jacobian(ref, op, shift):
    """Linearization of the shifted curvature flux at the current iterate.

    Displacing the surface by delta moves it (mu.N) delta along the normal
    and (mu.tau) delta along itself, so the curvature changes by the surface
    Laplacian of the normal shift, the curvature-squared multiple of it, and
    the tangential transport of the existing curvature; the flux map is
    frozen at the iterate.  Endpoint rows are identity (prescribed values).
    """
    fr = op.frame
    nu = fr.mu_dot_n
    lap = surface_laplacian_matrix(ref, fr)
    slope_k = (ref.diff @ fr.kappa) / fr.metric
    dkap = -(lap * nu[None, :])
    idx = np.diag_indices_from(dkap)
    dkap[idx] -= fr.kappa**2 * nu
    dkap[idx] += fr.mu_dot_tau * slope_k
    J = op.mat @ dkap
    J[np.diag_indices_from(J)] += shift**3
    J[0, :] = 0.0
    J[0, 0] = 1.0
    J[-1, :] = 0.0
    J[-1, -1] = 1.0
    return J


def recover_displacement(
    ws, shift, target, d_l, d_r, guess=None, settings=None
) -> RecoveryResult:
    """Newton inversion: displacement from shifted curvature flux + endpoints.

    The analytic Jacobian carries the curvature linearization but freezes
    the flux map at the iterate; the variation of the map itself is picked
    up by rank-one secant corrections accumulated from the accepted steps,
    which restores the fast terminal convergence.  The nonlinear residual
    is exact every iteration.  Steps are damped by halving until the
    residual decreases; trial states outside the admissible neighborhood
    count as failed trials.
    """
    settings = settings or NewtonSettings()
    if shift < settings.min_shift:
        raise ValueError(
            f"cubic shift {shift} below the configured floor {settings.min_shift}"
        )
    ref = ws.ref
    if guess is None:
        d = d_l + (d_r - d_l) * ref.s / ref.length
    else:
        d = np.asarray(guess, dtype=float).copy()
    d[0], d[-1] = d_l, d_r

    target = np.asarray(target, dtype=float)
    res, op = _recovery_residual(ws, shift, d, target, d_l, d_r)
    history = [float(np.abs(res).max())]
    secant = None
    for it in range(1, settings.max_iter + 1):
        if history[-1] <= settings.tol * shift**3:
            return RecoveryResult(d=d, iterations=it - 1, residuals=history)
        J = _recovery_jacobian(ref, op, shift)
        if secant is None:
            secant = np.zeros_like(J)
        else:
            J = J + secant
        try:
            step = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError:
            smin = np.linalg.svd(J, compute_uv=False)[-1]
            raise StateError(
                f"recovery Jacobian singular (smallest singular value "
                f"{smin:.3e}); the shift is too small"
            ) from None
        accepted = False
        lam = 1.0
        for _ in range(settings.backtracks + 1):
            trial = d + lam * step
            try:
                trial_res, trial_op = _recovery_residual(
                    ws, shift, trial, target, d_l, d_r
                )
            except StateError:
                lam *= 0.5
                continue
            if np.abs(trial_res).max() < history[-1]:
                dd = lam * step
                upd = np.outer((trial_res - res) - J @ dd, dd) / (dd @ dd)
                upd[0, :] = 0.0
                upd[-1, :] = 0.0
                secant += upd
                d, res, op = trial, trial_res, trial_op
                history.append(float(np.abs(res).max()))
                accepted = True
                break
            lam *= 0.5
        log.debug(
            "recovery newton iteration=%d residual=%.3e damping=%.3g",
            it, history[-1], lam,
        )
        if not accepted:
            raise StateError(
                "displacement recovery stalled; residual history "
                + ", ".join(f"{r:.3e}" for r in history)
            )
    if history[-1] <= settings.tol * shift**3:
        return RecoveryResult(d=d, iterations=settings.max_iter, residuals=history)
    raise StateError(
        "displacement recovery did not converge; residual history "
        + ", ".join(f"{r:.3e}" for r in history)
    )
