"""Finite-element solves on the fixed reference triangulation.

Every moving-domain problem is pulled back to the reference mesh through a
harmonic coordinate map: the map is the componentwise harmonic extension of
the surface displacement (the wetted solid slides arclength-proportionally
between the moved contact points), and each subsequent solve uses the
pulled-back coefficient matrix A = det(F) F^{-1} F^{-T} built from the
per-triangle Jacobian F of the map.  Linear elements throughout; factorized
sparse direct solves are cached on the map and reused.

Conormal fluxes are recovered variationally: the residual of the bilinear
form at boundary nodes equals the flux integrated against the boundary hat
functions, so a tridiagonal chain-mass solve yields pointwise values that
keep the second-order accuracy of the field itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded
from scipy.sparse import bmat, coo_matrix
from scipy.sparse.linalg import splu

from . import chebgrid as cg
from .geometry import StateError

_I2 = np.eye(2)


def _assemble_stiffness(mesh, coeff=None):
    """Stiffness matrix for div(coeff grad u); coeff per triangle or identity."""
    g = mesh.grads
    if coeff is None:
        local = np.einsum("tid,tjd->tij", g, g)
    else:
        local = np.einsum("tid,tde,tje->tij", g, coeff, g)
    local = local * mesh.areas[:, None, None]
    nt = mesh.n_triangles
    rows = np.broadcast_to(mesh.tris[:, :, None], (nt, 3, 3))
    cols = np.broadcast_to(mesh.tris[:, None, :], (nt, 3, 3))
    n = mesh.n_vertices
    return coo_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)
    ).tocsr()


def _assemble_mass(mesh, weight):
    """Consistent P1 mass with a per-triangle scalar weight."""
    nt = mesh.n_triangles
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0  # (1 + delta_ij)/12
    local = weight[:, None, None] * mesh.areas[:, None, None] * base
    rows = np.broadcast_to(mesh.tris[:, :, None], (nt, 3, 3))
    cols = np.broadcast_to(mesh.tris[:, None, :], (nt, 3, 3))
    n = mesh.n_vertices
    return coo_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)
    ).tocsr()


def _chain_loads(ids, lengths, values, n):
    """Loads of a boundary integral of values against hat functions.

    values is either one value per chain node (continuous data) or an
    (edges, 2) array of per-edge endpoint values; the second form lets data
    jump across chain corners where the one-sided normals disagree.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        ga, gb = values[:-1], values[1:]
    else:
        ga, gb = values[:, 0], values[:, 1]
    load = np.zeros(n)
    np.add.at(load, ids[:-1], lengths * (2.0 * ga + gb) / 6.0)
    np.add.at(load, ids[1:], lengths * (ga + 2.0 * gb) / 6.0)
    return load


def _chain_mass_solve(lengths, rhs):
    """Solve the P1 mass system of a boundary chain (banded Cholesky)."""
    k = lengths.size + 1
    ab = np.zeros((2, k))
    ab[1, :-1] += lengths / 3.0
    ab[1, 1:] += lengths / 3.0
    ab[0, 1:] = lengths / 6.0
    return solveh_banded(ab, rhs)


def _linear_eval_matrix(chain_s, targets):
    """Evaluate a piecewise-linear chain function at target arclengths."""
    idx = np.clip(np.searchsorted(chain_s, targets, side="right") - 1, 0, chain_s.size - 2)
    th = (targets - chain_s[idx]) / (chain_s[idx + 1] - chain_s[idx])
    out = np.zeros((targets.size, chain_s.size))
    rows = np.arange(targets.size)
    out[rows, idx] = 1.0 - th
    out[rows, idx + 1] = th
    return out


class Workspace:
    """Per-(reference, mesh) precomputation shared by every solve."""

    def __init__(self, ref, mesh):
        self.ref = ref
        self.mesh = mesh
        # spectral trace onto the chain and linear evaluation back
        self.R = cg.interp_matrix(ref.s, ref.bary_w, mesh.top_s)
        self.E = _linear_eval_matrix(mesh.top_s, ref.s)
        self.K_ref = _assemble_stiffness(mesh)
        self.interior = np.where(mesh.tags == 0)[0]
        top_mask = np.zeros(mesh.n_vertices, dtype=bool)
        top_mask[mesh.top_ids] = True
        self.top_mask = top_mask
        self.free = np.where(~top_mask)[0]  # free set for Dirichlet-top solves
        kii = self.K_ref[self.interior][:, self.interior].tocsc()
        self._lu_interior = splu(kii)

    def to_chain(self, colloc_values):
        return self.R @ colloc_values

    def to_colloc(self, chain_values):
        return self.E @ chain_values


@dataclass
class HarmonicMap:
    """Harmonic coordinate map with its pulled-back solve machinery."""

    ws: Workspace
    T: np.ndarray  # nodal map positions (n, 2)
    F: np.ndarray  # per-triangle Jacobian (nt, 2, 2)
    det: np.ndarray
    A: np.ndarray  # det F^{-1} F^{-T} per triangle
    bottom_S_t: np.ndarray = None  # moved solid-chain arclengths, or None at rest
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def bottom_arclengths(self):
        if self.bottom_S_t is None:
            return self.ws.mesh.bottom_S
        return self.bottom_S_t

    @property
    def K(self):
        if "K" not in self._cache:
            self._cache["K"] = _assemble_stiffness(self.ws.mesh, self.A)
        return self._cache["K"]

    @property
    def mass_det(self):
        if "M" not in self._cache:
            self._cache["M"] = _assemble_mass(self.ws.mesh, self.det)
        return self._cache["M"]

    @property
    def volume(self):
        return float(np.dot(self.det, self.ws.mesh.areas))

    @property
    def top_lengths(self):
        if "tl" not in self._cache:
            p = self.T[self.ws.mesh.top_ids]
            self._cache["tl"] = np.hypot(*np.diff(p, axis=0).T)
        return self._cache["tl"]

    @property
    def bottom_lengths(self):
        if "bl" not in self._cache:
            p = self.T[self.ws.mesh.bottom_ids]
            self._cache["bl"] = np.hypot(*np.diff(p, axis=0).T)
        return self._cache["bl"]

    def _lu_dirichlet(self):
        if "luD" not in self._cache:
            free = self.ws.free
            self._cache["luD"] = splu(self.K[free][:, free].tocsc())
        return self._cache["luD"]

    def _lu_neumann(self):
        # zero-physical-mean gauge through a scalar multiplier
        if "luN" not in self._cache:
            m = np.asarray(self.mass_det.sum(axis=1)).ravel()
            self._cache["mvec"] = m
            sys = bmat(
                [[self.K, m[:, None]], [m[None, :], None]], format="csc"
            )
            self._cache["luN"] = splu(sys)
        return self._cache["luN"]

    def solve_dirichlet_top(self, load, f_chain):
        mesh = self.ws.mesh
        u = np.zeros(mesh.n_vertices)
        u[mesh.top_ids] = f_chain
        rhs = load - self.K @ u
        free = self.ws.free
        u[free] = self._lu_dirichlet().solve(rhs[free])
        return u

    def solve_neumann(self, load):
        lu = self._lu_neumann()
        sol = lu.solve(np.append(load, 0.0))
        return sol[:-1]


@dataclass
class FieldOnDomain:
    """A solved nodal field plus its boundary traces."""

    hmap: HarmonicMap
    values: np.ndarray
    load: np.ndarray

    def residual(self):
        if not hasattr(self, "_res"):
            self._res = self.hmap.K @ self.values - self.load
        return self._res

    def top_chain(self):
        return self.values[self.hmap.ws.mesh.top_ids]

    def top_colloc(self):
        return self.hmap.ws.E @ self.top_chain()

    def flux_weights_top(self):
        """Conormal flux integrated against the surface hat functions."""
        return self.residual()[self.hmap.ws.mesh.top_ids]

    def flux_top(self):
        return _chain_mass_solve(self.hmap.top_lengths, self.flux_weights_top())

    def flux_top_colloc(self):
        return self.hmap.ws.E @ self.flux_top()

    def flux_weights_bottom(self):
        return self.residual()[self.hmap.ws.mesh.bottom_ids]

    def flux_bottom(self):
        return _chain_mass_solve(self.hmap.bottom_lengths, self.flux_weights_bottom())

    def grad_phys(self):
        """Per-triangle physical gradient of the field."""
        mesh = self.hmap.ws.mesh
        g_ref = np.einsum("tv,tvd->td", self.values[mesh.tris], mesh.grads)
        adj = _adjugate(self.hmap.F)
        # grad_x u = F^{-T} grad_X u = adj(F)^T grad_X u / det
        return np.einsum("tab,ta->tb", adj, g_ref) / self.hmap.det[:, None]

    def l2_norm(self):
        return float(np.sqrt(self.values @ (self.hmap.mass_det @ self.values)))


def _adjugate(F):
    adj = np.empty_like(F)
    adj[:, 0, 0] = F[:, 1, 1]
    adj[:, 0, 1] = -F[:, 0, 1]
    adj[:, 1, 0] = -F[:, 1, 0]
    adj[:, 1, 1] = F[:, 0, 0]
    return adj


def solve_domain_map(ws: Workspace, frame) -> HarmonicMap:
    """Harmonic extension of the surface motion into the reference domain.

    Top data is the displacement along the transversal field; the wetted
    solid boundary slides onto the moved wetted stretch proportionally in
    arclength, which pins the contact points exactly.
    """
    ref, mesh = ws.ref, ws.mesh
    n = mesh.n_vertices
    u = np.zeros((n, 2))
    S_new = mesh.bottom_S
    if np.any(frame.d):
        dmu = frame.d[:, None] * ref.mu
        u[mesh.top_ids] = ws.R @ dmu
        span0 = ref.s_contact_right - ref.s_contact_left
        scale = (frame.s_right - frame.s_left) / span0
        S_new = frame.s_left + (mesh.bottom_S - ref.s_contact_left) * scale
        bot = ref.path.points_at(S_new) - mesh.pts[mesh.bottom_ids]
        u[mesh.bottom_ids] = bot
        # contact nodes sit in both chains; the straight-wall slide makes the
        # two prescriptions agree, and the surface value wins the overwrite
        u[mesh.top_ids[0]] = dmu[0]
        u[mesh.top_ids[-1]] = dmu[-1]
        idx = ws.interior
        for c in (0, 1):
            rhs = -(ws.K_ref @ u[:, c])
            u[idx, c] = ws._lu_interior.solve(rhs[idx])

    T = mesh.pts + u
    F = np.broadcast_to(_I2, (mesh.n_triangles, 2, 2)).copy()
    F += np.einsum("tva,tvb->tab", u[mesh.tris], mesh.grads)
    det = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
    if det.min() <= 0.0:
        raise StateError(
            f"coordinate map folds over: min Jacobian determinant {det.min():.3g}"
        )
    adj = _adjugate(F)
    A = np.einsum("tab,tcb->tac", adj, adj) / det[:, None, None]
    return HarmonicMap(ws=ws, T=T, F=F, det=det, A=A, bottom_S_t=S_new)


def _source_load(hmap, source):
    mesh = hmap.ws.mesh
    s = np.asarray(source, dtype=float)
    if s.shape == (mesh.n_triangles,):
        load = np.zeros(mesh.n_vertices)
        contrib = s * hmap.det * mesh.areas / 3.0
        for v in range(3):
            np.add.at(load, mesh.tris[:, v], contrib)
        return load
    if s.shape == (mesh.n_vertices,):
        return hmap.mass_det @ s
    raise ValueError(f"source shape {s.shape} matches neither triangles nor vertices")


def solve_mixed(hmap, source=None, dirichlet_top=None, neumann_bottom=None):
    """Pulled-back Poisson solve: Dirichlet on the surface chain, Neumann below.

    source: per-triangle or nodal values of the physical Laplacian;
    dirichlet_top: values on the surface chain nodes; neumann_bottom:
    physical normal-derivative values on the solid chain, nodal or per-edge
    endpoint pairs (the latter for data with jumps at chain corners).
    """
    mesh = hmap.ws.mesh
    load = np.zeros(mesh.n_vertices)
    if source is not None:
        # laplacian u = s weakly: the source enters the load with a minus
        load -= _source_load(hmap, source)
    if neumann_bottom is not None:
        g = np.asarray(neumann_bottom, dtype=float)
        load += _chain_loads(mesh.bottom_ids, hmap.bottom_lengths, g, mesh.n_vertices)
    f = np.zeros(mesh.top_ids.size) if dirichlet_top is None else np.asarray(dirichlet_top)
    u = hmap.solve_dirichlet_top(load, f)
    return FieldOnDomain(hmap=hmap, values=u, load=load)


def harmonic_extension(hmap, f_chain):
    """Harmonic field matching surface values, no flux through the solid."""
    return solve_mixed(hmap, dirichlet_top=f_chain)


def laplace_inverse(hmap, source=None, neumann_bottom=None):
    """Solution vanishing on the surface with prescribed solid-side flux."""
    return solve_mixed(hmap, source=source, neumann_bottom=neumann_bottom)


def solve_dynamic_pressure(hmap, v_nodes, gravity):
    """Pressure correction driven by the velocity field and gravity.

    Solves the Poisson problem with source -tr((grad v)^2), zero surface
    values, and solid-side flux kappa_b (v.t)^2 + N_b.g, where kappa_b is the
    solid boundary curvature (zero on straight stretches).
    """
    ws = hmap.ws
    mesh = ws.mesh
    G = np.einsum("tva,tvb->tab", v_nodes[mesh.tris], mesh.grads)
    adj = _adjugate(hmap.F)
    # physical gradient: dv_a/dx_b = (G F^{-1})_{ab}
    M = np.einsum("tac,tcb->tab", G, adj) / hmap.det[:, None, None]
    source = -np.einsum("tab,tba->t", M, M)

    # Flux data per solid-chain edge: chord tangent/normal are exact on the
    # straight stretches, and midpoint curvature never samples a path corner,
    # so data jumps across corners land on the correct side of each edge.
    p = hmap.T[mesh.bottom_ids]
    chord = np.diff(p, axis=0)
    ell = np.hypot(chord[:, 0], chord[:, 1])
    tan = chord / ell[:, None]
    nor = np.column_stack([tan[:, 1], -tan[:, 0]])
    S_bot = hmap.bottom_arclengths
    S_mid = 0.5 * (S_bot[:-1] + S_bot[1:])
    kap = np.array([ws.ref.path.curvature_at(s) for s in S_mid])
    vb = v_nodes[mesh.bottom_ids]
    vt_a = np.einsum("ij,ij->i", vb[:-1], tan)
    vt_b = np.einsum("ij,ij->i", vb[1:], tan)
    g_vec = np.asarray(gravity, dtype=float)
    ng = nor @ g_vec
    g_data = np.column_stack([kap * vt_a * vt_a + ng, kap * vt_b * vt_b + ng])
    return laplace_inverse(hmap, source=source, neumann_bottom=g_data)


def solve_potential(ws, hmap, frame, w):
    """Velocity potential from the surface normal speed.

    The surface flux is (w mu).N per unit moved arclength; the uniform bulk
    source absorbs the net flux so the pure-Neumann system is compatible to
    round-off by construction.  Returns the potential field, the nodal
    velocity (physical gradient projected to vertices), and the net flux.
    """
    mesh = ws.mesh
    g_colloc = np.asarray(w, dtype=float) * frame.mu_dot_n
    g_chain = ws.R @ g_colloc
    load = _chain_loads(mesh.top_ids, hmap.top_lengths, g_chain, mesh.n_vertices)
    xi = float(load.sum())
    vol = hmap.volume
    m = hmap.mass_det @ np.ones(mesh.n_vertices)
    load = load - (xi / vol) * m
    u = hmap.solve_neumann(load)
    phi = FieldOnDomain(hmap=hmap, values=u, load=load)

    gp = phi.grad_phys()  # per-triangle velocity
    v_nodes = np.empty((mesh.n_vertices, 2))
    if "luM" not in hmap._cache:
        hmap._cache["luM"] = splu(hmap.mass_det.tocsc())
    lu_m = hmap._cache["luM"]
    contrib = hmap.det * mesh.areas / 3.0
    for c in (0, 1):
        rhs = np.zeros(mesh.n_vertices)
        for v in range(3):
            np.add.at(rhs, mesh.tris[:, v], contrib * gp[:, c])
        v_nodes[:, c] = lu_m.solve(rhs)
    return phi, v_nodes, xi
