"""Time integration of the surface state with slaved contact lines.

The state is the pair (d, w): surface displacement along the transversal
field and its time rate at the collocation nodes.  Each right-hand-side
evaluation rebuilds the moved geometry, solves for the velocity potential
with the surface normal speed as Neumann data, recovers the curvature flux
and the dynamic pressure, and forms the normal-trace acceleration.  The two
contact nodes never integrate an acceleration: their velocity is assigned
from the slip law at every stage, so the contact law holds exactly at every
accepted state.

Time stepping is classical four-stage Runge-Kutta under a surface-tension
CFL rule dt ~ (min node spacing)^{3/2}/sqrt(sigma), with an optional
endpoint-preserving exponential filter and admissibility-based step
rejection.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .chebgrid import filter_preserving_endpoints
from .geometry import (
    StateError,
    SurfaceState,
    arc_displacement,
    arc_shoelace,
    chord_shoelace,
    evaluate_frame,
)
from .elliptic import (
    harmonic_extension,
    solve_domain_map,
    solve_dynamic_pressure,
    solve_potential,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepperConfig:
    """Physical constants and stepper controls.

    filter: "off" disables the exponential modal filter (the default), a
    positive number sets its strength.  Filtering rewrites the last decade
    of surface modes, and the curvature operator amplifies that by the
    fourth power of the mode count, so it is reserved for long runs that
    need dealiasing and never applied silently.
    """

    sigma: float = 1.0
    beta_c: float = 1.0
    omega_s: float = np.pi / 4
    g: float = 0.0
    a: float = 2.0
    cfl: float = 0.5
    filter: object = "off"
    filter_p: int = 8
    max_steps: int = 100000
    output_every: int = 1

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError(f"surface tension must be positive, got {self.sigma}")
        if not self.beta_c > 0.0:
            raise ValueError(f"contact friction must be positive, got {self.beta_c}")
        if not 0.0 < self.omega_s < 0.5 * np.pi:
            raise ValueError(
                f"equilibrium contact angle {self.omega_s} outside (0, pi/2)"
            )
        if not self.a > 0.0:
            raise ValueError(f"cubic shift must be positive, got {self.a}")
        if not self.cfl > 0.0:
            raise ValueError(f"cfl constant must be positive, got {self.cfl}")
        if isinstance(self.filter, str):
            if self.filter != "off":
                raise ValueError(f"filter must be off or a strength, got {self.filter!r}")
        elif self.filter is not None and not float(self.filter) > 0.0:
            raise ValueError(f"filter strength must be positive, got {self.filter}")
        if self.max_steps < 1 or self.output_every < 1:
            raise ValueError("max_steps and output_every must be at least 1")


def contact_slip(frame, cfg: StepperConfig):
    """Endpoint velocities from the unbalanced wetting stress.

    A contact angle steeper than the equilibrium one drives the contact
    point toward the dry side (positive rate), a shallower one pulls it
    back; at the equilibrium angle the contact rests.
    """
    coef = cfg.sigma / cfg.beta_c
    ceq = math.cos(cfg.omega_s)
    return (
        coef * (ceq - math.cos(frame.omega_left)),
        coef * (ceq - math.cos(frame.omega_right)),
    )


@dataclass
class RhsBundle:
    """Everything one right-hand-side evaluation solves for.

    w is the displacement rate with the slip law already written into its
    endpoint entries; the boundary velocity is represented tangentially by
    the spectral derivative of the potential trace and normally by the
    imposed Neumann data, so the normal component matches (w mu).N exactly.
    """

    frame: object
    hmap: object
    phi: object          # potential field on the domain
    v_nodes: np.ndarray  # nodal velocity, (n, 2)
    v_tau: np.ndarray    # tangential boundary velocity at collocation nodes
    v_n: np.ndarray      # normal boundary velocity (imposed data)
    kappa_ext: object    # harmonic extension of the curvature
    flux_kappa: np.ndarray
    pvv: object          # dynamic pressure field
    flux_pvv: np.ndarray
    v_star: np.ndarray   # reference-domain transport speed
    xi: float            # net-flux compatibility scalar
    w: np.ndarray


def build_rhs_bundle(ws, state: SurfaceState, cfg: StepperConfig) -> RhsBundle:
    """Solve the recovery chain for one state: map, potential, curvature
    flux, dynamic pressure, and the reference transport field."""
    ref = ws.ref
    frame = evaluate_frame(ref, state.d)
    w = np.asarray(state.w, dtype=float).copy()
    w[0], w[-1] = contact_slip(frame, cfg)

    hmap = solve_domain_map(ws, frame)
    phi, v_nodes, xi = solve_potential(ws, hmap, frame, w)
    v_tau = (ref.diff @ phi.top_colloc()) / frame.metric
    v_n = w * frame.mu_dot_n

    kext = harmonic_extension(hmap, ws.R @ frame.kappa)
    pvv = solve_dynamic_pressure(hmap, v_nodes, (0.0, -cfg.g))
    v_star = (v_tau - w * frame.mu_dot_tau) / frame.metric
    return RhsBundle(
        frame=frame,
        hmap=hmap,
        phi=phi,
        v_nodes=v_nodes,
        v_tau=v_tau,
        v_n=v_n,
        kappa_ext=kext,
        flux_kappa=kext.flux_top_colloc(),
        pvv=pvv,
        flux_pvv=pvv.flux_top_colloc(),
        v_star=v_star,
        xi=xi,
        w=w,
    )


def normal_force(bundle, cfg: StepperConfig):
    """Normal-trace force: curvature flux, dynamic pressure flux, gravity."""
    return (
        cfg.sigma * bundle.flux_kappa
        + bundle.flux_pvv
        + cfg.g * bundle.frame.normal[:, 1]
    )


def accel(bundle, cfg: StepperConfig):
    """Second time derivative of the displacement at the interior nodes.

    The bracket collects the transport of the rate along the moving frame,
    the rotation of the transversal field, the normal-turning term, and the
    normal force; dividing by mu.N converts the normal acceleration into a
    displacement acceleration.  The endpoint entries are zeroed: contact
    nodes follow the slip law, not an integrated acceleration.
    """
    ref = bundle.hmap.ws.ref
    fr = bundle.frame
    mn = fr.mu_dot_n
    if mn.min() < 0.5 * ref.c0:
        raise StateError(
            f"transversality mu.N degenerated to {mn.min():.6g} "
            f"(floor {0.5 * ref.c0:.6g})"
        )
    grad_w = ref.diff @ bundle.w
    dmu_n = np.einsum("ij,ij->i", ref.dmu_ds, fr.normal)
    turn = fr.kappa * bundle.v_tau - (ref.diff @ bundle.v_n) / fr.metric
    bracket = (
        mn * bundle.v_star * grad_w
        + bundle.w * bundle.v_star * dmu_n
        + (bundle.w * fr.mu_dot_tau - bundle.v_tau) * turn
        + normal_force(bundle, cfg)
    )
    out = -bracket / mn
    out[0] = 0.0
    out[-1] = 0.0
    return out


def contact_acceleration(bundle, cfg: StepperConfig):
    """Diagnostic endpoint accelerations implied by the evolution equations.

    At the contact points the fluid velocity equals the contact velocity,
    so the normal-turning term drops and the bracket reduces to transport
    plus force.  Consistency with the time derivative of the slip law is a
    property of the scheme, checked in tests, not enforced here.
    """
    ref = bundle.hmap.ws.ref
    fr = bundle.frame
    mn = fr.mu_dot_n
    grad_w = ref.diff @ bundle.w
    dmu_n = np.einsum("ij,ij->i", ref.dmu_ds, fr.normal)
    bracket = (
        mn * bundle.v_star * grad_w
        + bundle.w * bundle.v_star * dmu_n
        + normal_force(bundle, cfg)
    )
    out = -bracket / mn
    return float(out[0]), float(out[-1])


# -- time stepping -------------------------------------------------------------


def _filter_alpha(cfg: StepperConfig):
    if cfg.filter == "off" or cfg.filter is None:
        return None
    return float(cfg.filter)


def _rate(ws, d, w, cfg):
    bundle = build_rhs_bundle(ws, SurfaceState(d, w), cfg)
    return bundle.w, accel(bundle, cfg)


def rk4_step(ws, state: SurfaceState, dt, cfg: StepperConfig) -> SurfaceState:
    """One classical Runge-Kutta step with slaved contact velocities.

    Every stage re-evaluates the slip law on its own frame; after the
    combination the endpoint rates are re-assigned on the final frame (and
    again after the optional filter), so the contact law is an identity of
    accepted states.  A stage that leaves the admissible neighborhood
    rejects the step; the step is retried at half the size, at most five
    times.
    """
    if dt <= 0.0:
        raise ValueError(f"time step must be positive, got {dt}")
    alpha = _filter_alpha(cfg)
    length = ws.ref.length
    for halving in range(6):
        try:
            k1d, k1w = _rate(ws, state.d, state.w, cfg)
            k2d, k2w = _rate(ws, state.d + 0.5 * dt * k1d, state.w + 0.5 * dt * k1w, cfg)
            k3d, k3w = _rate(ws, state.d + 0.5 * dt * k2d, state.w + 0.5 * dt * k2w, cfg)
            k4d, k4w = _rate(ws, state.d + dt * k3d, state.w + dt * k3w, cfg)
            d = state.d + (dt / 6.0) * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
            w = state.w + (dt / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
            if alpha is not None:
                d = filter_preserving_endpoints(d, length, alpha, cfg.filter_p)
                w = filter_preserving_endpoints(w, length, alpha, cfg.filter_p)
            frame = evaluate_frame(ws.ref, d)
            w[0], w[-1] = contact_slip(frame, cfg)
            return SurfaceState(d=d, w=w, t=state.t + dt)
        except StateError as exc:
            if halving == 5:
                raise StateError(
                    f"step rejected after 5 halvings (dt={dt:.3e}): {exc}"
                ) from exc
            log.debug("step rejected at dt=%.3e (%s); halving", dt, exc)
            dt *= 0.5
    raise AssertionError("unreachable")


def cfl_dt(ref, state: SurfaceState, cfg: StepperConfig):
    """Stable step for the curvature-driven evolution.

    The effective node spacing is the collocation gap stretched by the
    moved metric; the 3/2 power matches the third-order dispersion of the
    surface-tension term, so dt scales like (node count)^-3 and like
    sigma^-1/2.
    """
    if cfg.cfl <= 0.0:
        raise ValueError(f"cfl constant must be positive, got {cfg.cfl}")
    frame = evaluate_frame(ref, state.d)
    mid = 0.5 * (frame.metric[:-1] + frame.metric[1:])
    ds = np.diff(ref.s) * mid
    return cfg.cfl * float(ds.min()) ** 1.5 / math.sqrt(cfg.sigma)


# -- equilibrium fixtures -------------------------------------------------------


def equilibrium_state(ref, cfg: StepperConfig, area=None) -> SurfaceState:
    """Zero-gravity rest state: a circular arc meeting both walls at the
    equilibrium contact angle, with the enclosed fluid area matched to the
    requested one (the reference area by default) by sliding the contacts.

    Needs g = 0: with gravity the static surface is not a circle.  The
    tank families are left-right symmetric by construction, so the arc
    center sits on the midline and a single slide parameter remains.
    """
    if cfg.g != 0.0:
        raise ValueError(f"equilibrium arc requires g = 0, got g={cfg.g}")
    target = ref.area if area is None else float(area)
    if target <= 0.0:
        raise ValueError(f"target fluid area must be positive, got {target}")
    path = ref.path
    u = path.tangent_at(ref.s_contact_left + 1e-12)
    # wall direction angle below the horizontal; theta is the circle angle
    # of the left contact, fixed by the contact-angle condition alone
    phi_w = math.atan2(-u[1], u[0])
    theta = 0.5 * math.pi + cfg.omega_s - phi_w
    flat = abs(math.cos(theta)) < 1e-9
    cx = 0.5 * (ref.pts[0, 0] + ref.pts[-1, 0])

    def geometry(c):
        s_l = ref.s_contact_left - c
        s_r = ref.s_contact_right + c
        p_l = path.point_at(s_l)
        radius = (p_l[0] - cx) / math.cos(theta)
        center = (cx, p_l[1] - radius * math.sin(theta))
        return s_l, s_r, center, radius

    def area_of(c):
        # closed loop: wetted wall and floor left to right, surface back
        s_l = ref.s_contact_left - c
        s_r = ref.s_contact_right + c
        wet = path.piece_shoelace(s_l, s_r)
        if flat:
            return wet + chord_shoelace(path.point_at(s_r), path.point_at(s_l))
        _, _, center, radius = geometry(c)
        return wet + arc_shoelace(center, radius, math.pi - theta, theta)

    # slide bracket: delta ball intersected with the straight wall ranges
    lim = 0.98 * min(
        ref.delta,
        ref.straight_left[0], ref.straight_left[1],
        ref.straight_right[0], ref.straight_right[1],
    )
    lo, hi = area_of(-lim) - target, area_of(lim) - target
    if lo * hi > 0.0:
        raise ValueError(
            f"no admissible equilibrium surface: area misfit keeps sign "
            f"({lo:.6g} .. {hi:.6g}) across the slide range +-{lim:.6g}"
        )
    c = brentq(lambda x: area_of(x) - target, -lim, lim, xtol=1e-14)
    if flat:
        # surface is the horizontal line through the slid contact point
        z0 = path.point_at(ref.s_contact_left - c)[1]
        d = (z0 - ref.pts[:, 1]) / ref.mu[:, 1]
    else:
        _, _, center, radius = geometry(c)
        d = arc_displacement(ref, center, radius)
    frame = evaluate_frame(ref, d)  # validates the delta ball and the angles
    log.debug(
        "equilibrium surface: slide %.3e angles (%.6f, %.6f) area misfit %.3e",
        c, frame.omega_left, frame.omega_right, area_of(c) - target,
    )
    return SurfaceState(d=d, w=np.zeros(ref.m + 1), t=0.0)
