"""Reference surface, tank boundary, and moving-frame geometry.

The free surface is a graph over a flat reference segment of length L; a
surface state is the collocation vector d of normal-ish displacements along a
fixed transversal field mu.  The wetted solid is a sub-path of a fixed
polyline-with-arcs boundary, and the contact points slide along it as the
endpoint displacements change.

Conventions: the surface is traversed left to right, the fluid lies below,
and the surface normal N = rot90(tau) points out of the fluid (up for the
flat reference).  Curvature is positive for an upward-bulging arc.  The
boundary path parameter S increases from the left dry wall, down through the
left contact point, along the bottom, and up past the right contact point.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import chebgrid as cg


class StateError(RuntimeError):
    """A surface state left the admissible set."""


def angle_gate(s):
    """Largest admissible contact angle for surface smoothness index s."""
    if s < 2:
        raise ValueError(f"smoothness index must be >= 2, got {s}")
    return 0.5 * np.pi / (math.ceil(s) - 1)


def _rot90(v):
    # (x, y) -> (-y, x), row-wise
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


# -- fixed boundary path ----------------------------------------------------


@dataclass(frozen=True)
class _Line:
    p0: tuple
    p1: tuple

    def length(self):
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])

    def point(self, t):
        p0, p1 = np.asarray(self.p0), np.asarray(self.p1)
        return p0 + t * (p1 - p0)

    def tangent(self, t):
        d = np.asarray(self.p1) - np.asarray(self.p0)
        return d / np.hypot(*d)

    def curvature(self, t):
        return 0.0


@dataclass(frozen=True)
class _Arc:
    center: tuple
    radius: float
    th0: float
    th1: float  # signed sweep th1 - th0, traversed monotonically

    def length(self):
        return self.radius * abs(self.th1 - self.th0)

    def _theta(self, t):
        return self.th0 + t * (self.th1 - self.th0)

    def point(self, t):
        th = self._theta(t)
        c = np.asarray(self.center)
        return c + self.radius * np.array([math.cos(th), math.sin(th)])

    def tangent(self, t):
        th = self._theta(t)
        sgn = 1.0 if self.th1 >= self.th0 else -1.0
        return sgn * np.array([-math.sin(th), math.cos(th)])

    def curvature(self, t):
        sgn = 1.0 if self.th1 >= self.th0 else -1.0
        return sgn / self.radius


class BoundaryPath:
    """Arclength-parametrized chain of line and circular-arc segments."""

    def __init__(self, segments):
        self.segments = list(segments)
        lens = np.array([seg.length() for seg in self.segments])
        self.breaks = np.concatenate([[0.0], np.cumsum(lens)])
        self.total_length = self.breaks[-1]

    def _locate(self, s):
        s = float(np.clip(s, 0.0, self.total_length))
        i = int(np.searchsorted(self.breaks, s, side="right") - 1)
        i = min(i, len(self.segments) - 1)
        seg = self.segments[i]
        t = (s - self.breaks[i]) / seg.length()
        return seg, t

    def point_at(self, s):
        seg, t = self._locate(s)
        return seg.point(t)

    def tangent_at(self, s):
        seg, t = self._locate(s)
        return seg.tangent(t)

    def normal_at(self, s):
        """Outward normal (fluid on the left of the traversal)."""
        t = self.tangent_at(s)
        return np.array([t[1], -t[0]])

    def curvature_at(self, s):
        seg, t = self._locate(s)
        return seg.curvature(t)

    def points_at(self, s_values):
        return np.array([self.point_at(s) for s in np.atleast_1d(s_values)])

    def arclength_of_x(self, x, lo=None, hi=None):
        """Invert S -> point(S).x on a graph-like (monotone in x) stretch."""
        from scipy.optimize import brentq

        a = 0.0 if lo is None else lo
        b = self.total_length if hi is None else hi
        fa = self.point_at(a)[0] - x
        fb = self.point_at(b)[0] - x
        if fa == 0.0:
            return a
        if fb == 0.0:
            return b
        if fa * fb > 0:
            raise ValueError(f"x={x} not bracketed by path interval [{a}, {b}]")
        return brentq(lambda s: self.point_at(s)[0] - x, a, b, xtol=1e-14)

    def piece_shoelace(self, s_a, s_b):
        """Integral (x dy - y dx)/2 along the path from s_a to s_b."""
        if s_b < s_a:
            return -self.piece_shoelace(s_b, s_a)
        total = 0.0
        for i, seg in enumerate(self.segments):
            lo = max(s_a, self.breaks[i])
            hi = min(s_b, self.breaks[i + 1])
            if hi <= lo:
                continue
            t0 = (lo - self.breaks[i]) / seg.length()
            t1 = (hi - self.breaks[i]) / seg.length()
            if isinstance(seg, _Line):
                p, q = seg.point(t0), seg.point(t1)
                total += 0.5 * (p[0] * q[1] - q[0] * p[1])
            else:
                th0 = seg.th0 + t0 * (seg.th1 - seg.th0)
                th1 = seg.th0 + t1 * (seg.th1 - seg.th0)
                total += arc_shoelace(seg.center, seg.radius, th0, th1)
        return total


def chord_shoelace(p, q):
    """Shoelace contribution of the straight move p -> q."""
    return 0.5 * (p[0] * q[1] - q[0] * p[1])


def arc_shoelace(center, radius, th0, th1):
    """Shoelace contribution of a circular arc traversed th0 -> th1."""
    cx, cy = center
    r = radius
    return 0.5 * (
        r * r * (th1 - th0)
        + r * cx * (math.sin(th1) - math.sin(th0))
        + r * cy * (math.cos(th0) - math.cos(th1))
    )


# -- tank construction ------------------------------------------------------


@dataclass(frozen=True)
class GeometryConfig:
    tank: str  # "rectangle" or "basin"
    length: float
    m: int
    depth: float = 0.25  # rectangle only
    wall_angle: float = np.pi / 24.0  # basin only
    straight_wall: float = 0.25  # basin: wetted straight wall length
    fillet_radius: float = 0.25  # basin: corner-to-floor transition radius
    dry_wall: float = 0.2  # spare solid beyond each reference contact
    blend_frac: float = 0.25
    c0: float | None = None
    delta: float | None = None
    override_angle_gate: bool = False
    origin: tuple = (0.0, 0.0)


def _rectangle_path(cfg):
    ox, oy = cfg.origin
    length, depth, dry = cfg.length, cfg.depth, cfg.dry_wall
    segs = [
        _Line((ox, oy + dry), (ox, oy - depth)),
        _Line((ox, oy - depth), (ox + length, oy - depth)),
        _Line((ox + length, oy - depth), (ox + length, oy + dry)),
    ]
    path = BoundaryPath(segs)
    return path, dry, dry + depth + length + depth


def _basin_path(cfg):
    ox, oy = cfg.origin
    length, omega = cfg.length, cfg.wall_angle
    ls, rf, dry = cfg.straight_wall, cfg.fillet_radius, cfg.dry_wall
    tw = np.array([math.cos(omega), -math.sin(omega)])  # down the left wall
    p_l = np.array([ox, oy])
    start = p_l - dry * tw
    a = p_l + ls * tw  # fillet start
    c1 = a + rf * np.array([math.sin(omega), math.cos(omega)])
    th_a = -0.5 * np.pi - omega
    e1 = c1 + rf * np.array([0.0, -1.0])
    x_turn = e1[0] - ox
    if 2.0 * x_turn >= length - 1e-12:
        raise ValueError(
            f"basin walls meet: straight_wall+fillet span {x_turn:.4g} per side "
            f"exceeds half the length {length / 2:.4g}"
        )
    e2 = np.array([2 * ox + length - e1[0], e1[1]])
    c2 = np.array([2 * ox + length - c1[0], c1[1]])
    q_r = np.array([ox + length, oy])
    tw_r = np.array([math.cos(omega), math.sin(omega)])  # up the right wall
    end = q_r + (dry) * tw_r
    segs = [
        _Line(tuple(start), tuple(a)),
        _Arc(tuple(c1), rf, th_a, -0.5 * np.pi),
        _Line(tuple(e1), tuple(e2)),
        _Arc(tuple(c2), rf, -0.5 * np.pi, -0.5 * np.pi + omega),
        _Line(tuple(q_r - ls * tw_r), tuple(end)),
    ]
    path = BoundaryPath(segs)
    s_l = dry
    s_r = path.total_length - dry
    return path, s_l, s_r


# -- reference surface ------------------------------------------------------


@dataclass
class ReferenceSurface:
    cfg: GeometryConfig
    s: np.ndarray  # collocation arclengths in [0, L]
    pts: np.ndarray  # reference surface points (M+1, 2)
    mu: np.ndarray  # transversal field (M+1, 2), unit rows
    dmu_ds: np.ndarray
    diff: np.ndarray  # spectral differentiation matrix
    bary_w: np.ndarray
    quad_w: np.ndarray  # Clenshaw-Curtis weights on [0, L]
    path: BoundaryPath
    s_contact_left: float  # path arclength of the left reference contact
    s_contact_right: float
    omega_left: float  # reference contact angles
    omega_right: float
    c0: float
    delta: float
    area: float  # reference fluid area (exact)
    straight_left: tuple  # admissible slide range (toward dry, toward wet)
    straight_right: tuple

    @property
    def length(self):
        return self.cfg.length

    @property
    def m(self):
        return self.cfg.m

    @property
    def wetted_length(self):
        return self.s_contact_right - self.s_contact_left

    def geometry_hash(self):
        payload = json.dumps(
            {
                "tank": self.cfg.tank,
                "length": self.cfg.length,
                "m": self.cfg.m,
                "depth": self.cfg.depth,
                "wall_angle": self.cfg.wall_angle,
                "straight_wall": self.cfg.straight_wall,
                "fillet_radius": self.cfg.fillet_radius,
                "dry_wall": self.cfg.dry_wall,
                "blend_frac": self.cfg.blend_frac,
                "c0": self.c0,
                "delta": self.delta,
                "origin": list(self.cfg.origin),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


def build_reference(cfg: GeometryConfig) -> ReferenceSurface:
    """Construct the reference configuration for a tank geometry."""
    if cfg.tank == "rectangle":
        path, s_l, s_r = _rectangle_path(cfg)
        omega = 0.5 * np.pi
        wet_straight = cfg.depth
    elif cfg.tank == "basin":
        if not 0.0 < cfg.wall_angle < 0.5 * np.pi:
            raise ValueError(f"wall angle must lie in (0, pi/2), got {cfg.wall_angle}")
        path, s_l, s_r = _basin_path(cfg)
        omega = cfg.wall_angle
        wet_straight = cfg.straight_wall
    else:
        raise ValueError(f"unknown tank kind {cfg.tank!r}")

    gate = angle_gate(9)  # pi/16
    if omega > gate + 1e-12 and not cfg.override_angle_gate:
        raise ValueError(
            f"contact angle {omega:.6g} exceeds the smoothness gate {gate:.6g}; "
            "set override_angle_gate to proceed anyway"
        )

    m = cfg.m
    s = cg.lobatto_nodes(m, cfg.length)
    bw = cg.bary_weights(m)
    diff = cg.diff_matrix(s, bw)
    qw = cg.clenshaw_curtis(m, cfg.length)

    ox, oy = cfg.origin
    pts = np.column_stack([ox + s, np.full(m + 1, oy)])

    if not 0.0 < cfg.blend_frac <= 0.4:
        raise ValueError(f"blend_frac={cfg.blend_frac} outside (0, 0.4]")
    mu_l = -path.tangent_at(s_l)
    mu_r = path.tangent_at(s_r)
    # blend the tilt angle and rotate: unit by construction, never
    # renormalized (the sqrt would put complex singularities near the
    # interval and dent spectral accuracy).  The Gaussian profile is
    # shifted to hit 0/1 at the ends exactly.
    alpha_l = math.atan2(mu_l[0], mu_l[1])
    alpha_r = math.atan2(mu_r[0], mu_r[1])
    ell = cfg.blend_frac * cfg.length
    far = math.exp(-((cfg.length / ell) ** 2))
    bl = (np.exp(-((s / ell) ** 2)) - far) / (1.0 - far)
    br = bl[::-1]
    alpha = alpha_l * bl + alpha_r * br
    mu = np.column_stack([np.sin(alpha), np.cos(alpha)])
    mu[0] = mu_l
    mu[-1] = mu_r

    sin_omega = math.sin(omega)
    c0 = cfg.c0 if cfg.c0 is not None else 0.8 * sin_omega
    trans = mu @ np.array([0.0, 1.0])
    if trans.min() < c0 - 1e-12:
        raise ValueError(
            f"transversal field dips to {trans.min():.6g} below c0={c0:.6g}"
        )

    delta = cfg.delta
    if delta is None:
        delta = min(0.8 * cfg.dry_wall, 0.8 * wet_straight, 0.15 * cfg.length)
    if delta > min(cfg.dry_wall, wet_straight):
        raise ValueError(
            f"delta={delta:.6g} exceeds a straight wall stretch "
            f"(dry {cfg.dry_wall:.6g}, wetted {wet_straight:.6g})"
        )

    # exact reference fluid area: bottom piece plus the flat top closing chord
    area = path.piece_shoelace(s_l, s_r) + chord_shoelace(
        path.point_at(s_r), path.point_at(s_l)
    )

    return ReferenceSurface(
        cfg=cfg,
        s=s,
        pts=pts,
        mu=mu,
        dmu_ds=diff @ mu,
        diff=diff,
        bary_w=bw,
        quad_w=qw,
        path=path,
        s_contact_left=s_l,
        s_contact_right=s_r,
        omega_left=omega,
        omega_right=omega,
        c0=c0,
        delta=delta,
        area=area,
        straight_left=(cfg.dry_wall, wet_straight),
        straight_right=(cfg.dry_wall, wet_straight),
    )


# -- surface states and frames ----------------------------------------------


@dataclass
class SurfaceState:
    d: np.ndarray
    w: np.ndarray
    t: float = 0.0

    def copy(self):
        return SurfaceState(self.d.copy(), self.w.copy(), self.t)


@dataclass
class CurveFrame:
    d: np.ndarray
    pts: np.ndarray
    tau: np.ndarray
    normal: np.ndarray
    metric: np.ndarray
    kappa: np.ndarray
    mu_dot_n: np.ndarray
    mu_dot_tau: np.ndarray
    omega_left: float
    omega_right: float
    s_left: float  # moved contact arclengths on the path
    s_right: float

    @property
    def d_left(self):
        return self.d[0]

    @property
    def d_right(self):
        return self.d[-1]


def _segments_cross(p):
    """Any proper crossing among the open polyline segments? O(n^2) test."""
    a, b = p[:-1], p[1:]
    n = a.shape[0]
    for i in range(n - 2):
        # skip adjacent segment pairs sharing a vertex
        c, d = a[i + 2 :], b[i + 2 :]
        r = b[i] - a[i]
        s = d - c
        denom = r[0] * s[:, 1] - r[1] * s[:, 0]
        dc = c - a[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (dc[:, 0] * s[:, 1] - dc[:, 1] * s[:, 0]) / denom
            u = (dc[:, 0] * r[1] - dc[:, 1] * r[0]) / denom
        hit = (np.abs(denom) > 1e-300) & (t > 0) & (t < 1) & (u > 0) & (u < 1)
        if hit.any():
            return True
    return False


def evaluate_frame(ref: ReferenceSurface, d: np.ndarray, validate: bool = True) -> CurveFrame:
    """Geometry of the moved surface for a displacement vector d."""
    d = np.asarray(d, dtype=float)
    if d.shape != ref.s.shape:
        raise ValueError(f"displacement has shape {d.shape}, expected {ref.s.shape}")
    if validate:
        mag = np.max(np.abs(d))
        if mag > ref.delta:
            raise StateError(f"displacement norm {mag:.6g} exceeds delta={ref.delta:.6g}")
        # positive endpoint displacement slides a contact toward the dry side
        if d[0] > ref.straight_left[0] or -d[0] > ref.straight_left[1]:
            raise StateError(f"left contact slide {d[0]:.6g} leaves the straight wall")
        if d[-1] > ref.straight_right[0] or -d[-1] > ref.straight_right[1]:
            raise StateError(f"right contact slide {d[-1]:.6g} leaves the straight wall")

    pts = ref.pts + d[:, None] * ref.mu
    dp = ref.diff @ pts
    metric = np.hypot(dp[:, 0], dp[:, 1])
    if validate and metric.min() < 0.1:
        raise StateError(f"surface metric degenerates to {metric.min():.6g}")
    tau = dp / metric[:, None]
    normal = _rot90(tau)
    dn = ref.diff @ normal
    kappa = np.einsum("ij,ij->i", dn, tau) / metric

    s_left = ref.s_contact_left - d[0]
    s_right = ref.s_contact_right + d[-1]
    t_bl = ref.path.tangent_at(s_left)
    t_br = ref.path.tangent_at(s_right)
    omega_l = math.acos(float(np.clip(tau[0] @ t_bl, -1.0, 1.0)))
    omega_r = math.acos(float(np.clip(tau[-1] @ t_br, -1.0, 1.0)))

    if validate:
        hi = np.pi - 1e-6 if ref.cfg.override_angle_gate else 0.5 * np.pi + 1e-12
        for name, om in (("left", omega_l), ("right", omega_r)):
            if not 1e-12 < om < hi:
                raise StateError(f"{name} contact angle {om:.6g} outside (0, pi/2)")
        if _segments_cross(pts):
            raise StateError("surface self-intersects")

    return CurveFrame(
        d=d,
        pts=pts,
        tau=tau,
        normal=normal,
        metric=metric,
        kappa=kappa,
        mu_dot_n=np.einsum("ij,ij->i", ref.mu, normal),
        mu_dot_tau=np.einsum("ij,ij->i", ref.mu, tau),
        omega_left=omega_l,
        omega_right=omega_r,
        s_left=s_left,
        s_right=s_right,
    )


def contact_angles(ref: ReferenceSurface, frame: CurveFrame):
    return frame.omega_left, frame.omega_right


# -- surface differential operators -----------------------------------------


def surface_gradient(ref, frame, f):
    """Tangential derivative of a surface scalar (component along tau)."""
    return (ref.diff @ f) / frame.metric


def surface_laplacian(ref, frame, f):
    """Laplace-Beltrami of a surface scalar on the moved curve."""
    return (ref.diff @ ((ref.diff @ f) / frame.metric)) / frame.metric


def surface_laplacian_matrix(ref, frame):
    inv_m = 1.0 / frame.metric
    return (inv_m[:, None] * ref.diff) @ (inv_m[:, None] * ref.diff)


# -- exact circular-arc displacements (equilibrium fixtures) -----------------


def arc_displacement(ref: ReferenceSurface, center, radius):
    """Displacement field landing each node on a circle; radius signed.

    radius > 0: center below the surface, upward-bulging dome;
    radius < 0: center above, downward-sagging arc.
    """
    c = np.asarray(center, dtype=float)
    rel = ref.pts - c
    b = np.einsum("ij,ij->i", ref.mu, rel)
    q = np.einsum("ij,ij->i", rel, rel) - radius * radius
    disc = b * b - q
    if np.any(disc <= 0.0):
        raise ValueError("circle not reachable along the transversal field")
    return -b + math.copysign(1.0, radius) * np.sqrt(disc)
