"""Graded deterministic triangulation of the reference fluid domain.

The rest domain is a strip under the flat reference surface, so every vertex
is placed on a vertical station line and each pair of adjacent stations is
triangulated by marching up the two node columns.  Station spacing is graded
toward the contact corners and capped by the local fluid thickness: the thin
wedge where a sloped wall meets the surface is filled with a single row of
flat triangles, while the bulk stays isotropic.

Vertex tags: 0 interior, 1 free-surface side, 2 solid-boundary side, 3 the
two contact corners.  The surface chain is ordered left to right and carries
reference-surface arclengths; the solid chain is ordered by boundary-path
arclength.  Meshes built from mirror-symmetric tanks are exactly symmetric,
node for node and triangle for triangle.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

TAG_INTERIOR = 0
TAG_SURFACE = 1
TAG_BOTTOM = 2
TAG_CORNER = 3

# spacing growth per unit distance from a corner (ratio <= 1.3 per strip)
_GROWTH = 0.3
# spacing never exceeds this multiple of the local fluid thickness
_THIN_CAP = 1.7
# thickness below this multiple of the spacing marks the forced corner wedge
_THIN_EXEMPT = 0.55
# the piecewise-linear solve needs the max-angle condition; the min-angle
# floor only rules out degenerate slivers.  Where the column cell count
# changes across a strip, one node faces two opposite cells, and the wedge
# between those two rays cannot exceed atan(sqrt(2)) - atan(1/sqrt(2)),
# about 19.5 degrees, so a tighter floor than this is not constructible
_MIN_ANGLE = float(np.deg2rad(12.0))
_MAX_ANGLE = float(np.deg2rad(150.0))


class MeshError(RuntimeError):
    """Mesh construction or parsing failed."""


@dataclass
class Mesh:
    """Conforming triangulation of the reference domain.

    pts: (n, 2) vertex coordinates, tris: (nt, 3) CCW vertex triples,
    tags: per-vertex boundary tag, top/bottom chains ordered with their
    arclength values, thin_wedge: per-triangle flag marking the forced
    thin-wedge zone near the contact corners (exempt from the min-angle
    guarantee).
    """

    pts: np.ndarray
    tris: np.ndarray
    tags: np.ndarray
    top_ids: np.ndarray
    top_s: np.ndarray
    bottom_ids: np.ndarray
    bottom_S: np.ndarray
    h: float
    grading: float
    thin_wedge: np.ndarray
    areas: np.ndarray = field(init=False)
    grads: np.ndarray = field(init=False)
    top_edges: np.ndarray = field(init=False)
    bottom_edges: np.ndarray = field(init=False)

    def __post_init__(self):
        p = self.pts[self.tris]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        self.areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if self.areas.size == 0 or self.areas.min() <= 0.0:
            raise MeshError("triangulation contains a non-positive triangle")
        # P1 basis gradients: grad lambda_i = perp(edge opposite vertex i)/(2A)
        e = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]
        grads = np.stack([-e[..., 1], e[..., 0]], axis=-1)
        self.grads = grads / (2.0 * self.areas)[:, None, None]
        self.top_edges = np.column_stack([self.top_ids[:-1], self.top_ids[1:]])
        self.bottom_edges = np.column_stack(
            [self.bottom_ids[:-1], self.bottom_ids[1:]]
        )
        self._check_quality()

    @property
    def n_vertices(self):
        return self.pts.shape[0]

    @property
    def n_triangles(self):
        return self.tris.shape[0]

    def angles(self):
        """Interior angles per triangle, shape (nt, 3), radians."""
        p = self.pts[self.tris]
        out = np.empty((self.n_triangles, 3))
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            nu = np.hypot(u[:, 0], u[:, 1])
            nv = np.hypot(v[:, 0], v[:, 1])
            c = np.einsum("ij,ij->i", u, v) / (nu * nv)
            out[:, i] = np.arccos(np.clip(c, -1.0, 1.0))
        return out

    def quality(self):
        ang = self.angles()
        clear = ~self.thin_wedge
        report = {
            "min_angle_deg": float(np.rad2deg(ang.min())),
            "max_angle_deg": float(np.rad2deg(ang.max())),
            "thin_triangles": int(self.thin_wedge.sum()),
        }
        if clear.any():
            report["min_clear_angle_deg"] = float(np.rad2deg(ang[clear].min()))
        return report

    def _check_quality(self):
        ang = self.angles()
        worst_max = ang.max()
        if worst_max > _MAX_ANGLE + 1e-9:
            raise MeshError(
                f"max triangle angle {np.rad2deg(worst_max):.2f} deg exceeds 150"
            )
        clear = ~self.thin_wedge
        if clear.any():
            worst = ang[clear].min()
            if worst < _MIN_ANGLE - 1e-9:
                raise MeshError(
                    f"min triangle angle {np.rad2deg(worst):.2f} deg below "
                    f"{np.rad2deg(_MIN_ANGLE):.0f} outside the corner wedge zone"
                )

    def dumps(self):
        """Plain-text form: vertex lines 'id x y tag', element lines 'id v1 v2 v3'."""
        lines = [
            f"# wavetank mesh h={float(self.h)!r} grading={float(self.grading)!r}",
            f"{self.n_vertices} {self.n_triangles}",
        ]
        for i in range(self.n_vertices):
            x, y = self.pts[i]
            lines.append(f"{i} {float(x)!r} {float(y)!r} {int(self.tags[i])}")
        for i in range(self.n_triangles):
            a, b, c = self.tris[i]
            lines.append(f"{i} {a} {b} {c}")
        return "\n".join(lines) + "\n"

    def dump(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())


# -- station layout -----------------------------------------------------------


def _bottom_probe(ref):
    """Return probe(xi) -> (thickness, bottom y, path arclength) at offset xi."""
    cfg = ref.cfg
    ox, oy = cfg.origin
    L = cfg.length
    s_l, s_r = ref.s_contact_left, ref.s_contact_right
    if cfg.tank == "rectangle":

        def probe(xi):
            return cfg.depth, oy - cfg.depth, s_l + cfg.depth + xi

        return probe

    cache = {}
    tol = 1e-12 * max(1.0, L)

    def probe(xi):
        hit = cache.get(xi)
        if hit is not None:
            return hit
        if xi <= tol:
            out = (0.0, oy, s_l)
        elif xi >= L - tol:
            out = (0.0, oy, s_r)
        else:
            S = ref.path.arclength_of_x(ox + xi, lo=s_l, hi=s_r)
            y = float(ref.path.point_at(S)[1])
            out = (oy - y, y, S)
        cache[xi] = out
        return out

    return probe


def _spacing_fn(L, h, grading, probe):
    floor = grading * h

    def spacing(xi):
        d = min(xi, L - xi)
        t = probe(xi)[0]
        return max(floor, min(h, floor + _GROWTH * d, _THIN_CAP * t))

    return spacing


def _half_stations(L, spacing):
    """Station offsets on [0, L/2], graded from the left corner."""
    half = 0.5 * L
    xs = [0.0]
    while True:
        c = spacing(xs[-1])
        if len(xs) > 1:
            c = min(c, 1.35 * (xs[-1] - xs[-2]))
        r = half - xs[-1]
        if r <= 1.5 * c:
            n = max(1, int(round(r / c)))
            base = xs[-1]
            xs.extend(base + r * (j / n) for j in range(1, n))
            xs.append(half)
            return xs
        xs.append(xs[-1] + c)


def _merge_surface_stations(xi_half, surf_s, L):
    """Insert surface collocation offsets the graded stations cannot resolve.

    The surface chain must carry a node near every collocation point at a
    fraction of the local collocation gap, or the value transfer between the
    two grids degenerates where the collocation nodes cluster.  A point is
    inserted verbatim when no station sits close enough; graded stations
    crowding an inserted point are dropped to keep the strips shape-regular.
    """
    half = 0.5 * L
    tol = 1e-12 * max(1.0, L)
    s = np.asarray(surf_s, dtype=float)
    gaps = np.diff(s)
    reach = np.minimum(np.append(gaps, gaps[-1]), np.insert(gaps, 0, gaps[0]))
    inner = (s > tol) & (s < half - tol)
    stations = sorted(xi_half)
    protected = {0.0, half}
    for node, r in zip(s[inner], reach[inner]):
        near = min(abs(node - x) for x in stations)
        if near <= 0.35 * r:
            continue
        drop = 0.35 * r
        stations = [
            x for x in stations
            if x in protected or abs(x - node) > drop
        ]
        stations.append(node)
        protected.add(node)
        stations.sort()
    # keep neighbouring strip widths within 2x of each other
    while True:
        split = None
        for i in range(len(stations) - 1):
            g = stations[i + 1] - stations[i]
            left = stations[i] - stations[i - 1] if i > 0 else g
            right = (
                stations[i + 2] - stations[i + 1]
                if i + 2 < len(stations)
                else g
            )
            if g > 2.0 * min(left, right) + tol:
                split = i
                break
        if split is None:
            return stations
        stations.insert(split + 1, 0.5 * (stations[split] + stations[split + 1]))


def _ladder(t, top_cell, cap):
    """Depth offsets 0..t, first cell ~top_cell growing by 1.3 up to cap.

    The closure never emits a cell taller than the cap (the aspect bound of
    the strip triangles) and folds sub-half-cap remainders into the previous
    cell, so closure cells stay within [cap/2, cap] whenever the column is
    deep enough to have one full cell.
    """
    zs = [0.0]
    cell = max(min(top_cell, cap), 1e-14 * max(t, 1.0))
    while True:
        r = t - zs[-1]
        if r <= 1.6 * cell:
            if r < 0.5 * cap and len(zs) > 1:
                # fold a sub-half-cap remainder into the previous cell
                zs.pop()
                r = t - zs[-1]
            n = max(1, int(np.ceil(r / cap - 1e-9)))
            base = zs[-1]
            zs.extend(base + r * (j / n) for j in range(1, n))
            zs.append(t)
            return np.asarray(zs)
        zs.append(zs[-1] + cell)
        cell = min(cap, 1.3 * cell)


# -- strip triangulation -------------------------------------------------------


def _merge_strip(left, right, pts):
    """March up two node columns, always taking the shorter diagonal."""
    tris = []
    li = ri = 0
    nl, nr = len(left) - 1, len(right) - 1
    while li < nl or ri < nr:
        if li < nl and ri < nr:
            dl = pts[left[li + 1]] - pts[right[ri]]
            dr = pts[right[ri + 1]] - pts[left[li]]
            take_left = float(np.hypot(*dl)) <= float(np.hypot(*dr))
        else:
            take_left = li < nl
        if take_left:
            tris.append((left[li], right[ri], left[li + 1]))
            li += 1
        else:
            tris.append((left[li], right[ri], right[ri + 1]))
            ri += 1
    return tris


def triangulate_reference(ref, h, grading=1.0):
    """Graded conforming triangulation of the reference domain.

    Corner elements come out at roughly grading*h; interior elements at h.
    The mesh of a symmetric tank is exactly mirror-symmetric.
    """
    if h <= 0.0:
        raise ValueError(f"mesh size must be positive, got {h}")
    if not 0.0 < grading <= 1.0:
        raise ValueError(f"grading must lie in (0, 1], got {grading}")
    cfg = ref.cfg
    L = cfg.length
    ox, oy = cfg.origin
    rect = cfg.tank == "rectangle"
    probe = _bottom_probe(ref)
    spacing = _spacing_fn(L, h, grading, probe)

    xi_half = _half_stations(L, spacing)
    xi_half = _merge_surface_stations(xi_half, ref.s, L)
    J = len(xi_half) - 1
    xi = np.array(xi_half + [L - v for v in xi_half[-2::-1]])
    K = xi.size - 1  # stations 0..K with K = 2J

    # vertical cells per column track the adjacent strip widths: the ladder
    # starts at the narrower neighbour and its cap keeps depth cells from
    # outgrowing the strips, so the surface-refined zones stay shape-regular
    dx = np.diff(xi)
    tc = np.empty(K + 1)
    vcap = np.empty(K + 1)
    for i in range(K + 1):
        left = dx[i - 1] if i > 0 else dx[0]
        right = dx[i] if i < K else dx[-1]
        tc[i] = min(left, right, spacing(xi[i]))
        vcap[i] = min(spacing(xi[i]), 2.2 * min(left, right))
    tc = np.minimum(tc, tc[::-1])
    vcap = np.minimum(vcap, vcap[::-1])

    # per-station bottom data; the right half copies its mirror twin exactly
    t_arr = np.empty(K + 1)
    b_arr = np.empty(K + 1)
    S_arr = np.empty(K + 1)
    for i in range(J + 1):
        t_arr[i], b_arr[i], S_arr[i] = probe(xi[i])
    for i in range(J + 1, K + 1):
        tw = K - i
        t_arr[i] = t_arr[tw]
        b_arr[i] = b_arr[tw]
        S_arr[i] = ref.s_contact_left + ref.s_contact_right - S_arr[tw]

    tiny = 1e-12 * max(1.0, L)
    pts = []
    tags = []
    cols = []
    col_ys = []
    col_exempt = np.zeros(K + 1, dtype=bool)

    def add_node(x, y, tag):
        pts.append((x, y))
        tags.append(tag)
        return len(pts) - 1

    def build_column(i, ys, col_tags):
        x = ox + xi[i]
        ids = [add_node(x, float(y), tg) for y, tg in zip(ys, col_tags)]
        cols.append(ids)
        col_ys.append(ys)

    left_tags = []
    for i in range(J + 1):
        c_i = spacing(xi[i])
        col_exempt[i] = t_arr[i] < _THIN_EXEMPT * c_i
        if t_arr[i] <= tiny:
            # degenerate corner station: the contact point itself
            ys = np.array([oy])
            ctags = [TAG_CORNER]
        else:
            zs = _ladder(t_arr[i], tc[i], vcap[i])
            ys = oy - zs[::-1]
            ys[0] = b_arr[i]
            ys[-1] = oy
            n = len(ys) - 1
            wall = rect and i == 0
            ctags = [TAG_BOTTOM]
            ctags += [TAG_BOTTOM if wall else TAG_INTERIOR] * (n - 1)
            ctags += [TAG_CORNER if wall else TAG_SURFACE]
        left_tags.append(ctags)
        build_column(i, ys, ctags)
    for i in range(J + 1, K + 1):
        tw = K - i
        col_exempt[i] = col_exempt[tw]
        build_column(i, col_ys[tw], left_tags[tw])

    P = np.array(pts)
    left_strips = []
    tris = []
    for i in range(J):
        tr = _merge_strip(cols[i], cols[i + 1], P)
        left_strips.append(tr)
        tris.extend(tr)
    mirror = np.empty(len(pts), dtype=np.int64)
    for i in range(K + 1):
        mirror[np.asarray(cols[i])] = np.asarray(cols[K - i])
    for i in range(J, K):
        for a, b, c in left_strips[K - 1 - i]:
            tris.append((mirror[a], mirror[c], mirror[b]))

    tris = np.array(tris, dtype=np.int64)
    tags = np.array(tags, dtype=np.int64)

    node_exempt = np.zeros(len(pts), dtype=bool)
    for i in range(K + 1):
        node_exempt[np.asarray(cols[i])] = col_exempt[i]
    thin = node_exempt[tris].any(axis=1)

    top_ids = np.array([col[-1] for col in cols], dtype=np.int64)
    top_s = xi.copy()

    bot_ids = []
    bot_S = []
    if rect:
        ysl = col_ys[0]
        n = len(ysl) - 1
        for k in range(n, -1, -1):  # contact corner down the left wall
            bot_ids.append(cols[0][k])
            bot_S.append(ref.s_contact_left + (oy - ysl[k]))
        for i in range(1, K):
            bot_ids.append(cols[i][0])
            bot_S.append(S_arr[i])
        ysr = col_ys[K]
        for k in range(0, n + 1):  # floor corner up the right wall
            bot_ids.append(cols[K][k])
            bot_S.append(ref.s_contact_left + cfg.depth + L + (ysr[k] - (oy - cfg.depth)))
        bot_S[0] = ref.s_contact_left
        bot_S[-1] = ref.s_contact_right
    else:
        for i in range(K + 1):
            bot_ids.append(cols[i][0])
            bot_S.append(S_arr[i])

    top_s = np.asarray(top_s, dtype=float)
    bot_S = np.asarray(bot_S, dtype=float)
    if np.any(np.diff(top_s) <= 0) or np.any(np.diff(bot_S) <= 0):
        raise MeshError("boundary chain arclengths are not strictly increasing")

    return Mesh(
        pts=P,
        tris=tris,
        tags=tags,
        top_ids=top_ids,
        top_s=top_s,
        bottom_ids=np.array(bot_ids, dtype=np.int64),
        bottom_S=bot_S,
        h=float(h),
        grading=float(grading),
        thin_wedge=thin,
    )


# -- plain-text round trip -----------------------------------------------------


def parse_mesh(text, ref):
    """Rebuild a Mesh from its plain-text dump (chains recovered from tags)."""
    head = re.search(r"h=([^\s]+)\s+grading=([^\s]+)", text)
    if head is None:
        raise MeshError("mesh text lacks the 'h=... grading=...' header line")
    h = float(head.group(1))
    grading = float(head.group(2))
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows or len(rows[0]) != 2:
        raise MeshError("mesh text lacks the 'n_vertices n_triangles' count line")
    nv, nt = int(rows[0][0]), int(rows[0][1])
    if len(rows) != 1 + nv + nt:
        raise MeshError(f"expected {1 + nv + nt} data lines, found {len(rows)}")
    pts = np.empty((nv, 2))
    tags = np.empty(nv, dtype=np.int64)
    for r in rows[1 : 1 + nv]:
        if len(r) != 4:
            raise MeshError(f"bad vertex line: {' '.join(r)!r}")
        i = int(r[0])
        pts[i] = (float(r[1]), float(r[2]))
        tags[i] = int(r[3])
    tris = np.empty((nt, 3), dtype=np.int64)
    for r in rows[1 + nv :]:
        if len(r) != 4:
            raise MeshError(f"bad element line: {' '.join(r)!r}")
        tris[int(r[0])] = (int(r[1]), int(r[2]), int(r[3]))
    if tris.min() < 0 or tris.max() >= nv:
        raise MeshError("element vertex id out of range")

    top_ids, top_s, bot_ids, bot_S = _rebuild_chains(pts, tags, ref)
    thin = _thin_flags(pts, tris, ref, h, grading)
    return Mesh(
        pts=pts,
        tris=tris,
        tags=tags,
        top_ids=top_ids,
        top_s=top_s,
        bottom_ids=bot_ids,
        bottom_S=bot_S,
        h=h,
        grading=grading,
        thin_wedge=thin,
    )


def load_mesh(path, ref):
    with open(path) as fh:
        return parse_mesh(fh.read(), ref)


def _rebuild_chains(pts, tags, ref):
    cfg = ref.cfg
    ox, oy = cfg.origin
    L = cfg.length
    top = np.where((tags == TAG_SURFACE) | (tags == TAG_CORNER))[0]
    if top.size < 2:
        raise MeshError("mesh has no usable surface chain")
    top = top[np.argsort(pts[top, 0], kind="stable")]
    top_s = pts[top, 0] - ox
    top_s[0] = 0.0
    top_s[-1] = L

    bottom = np.where((tags == TAG_BOTTOM) | (tags == TAG_CORNER))[0]
    S = np.empty(bottom.size)
    tol = 1e-9 * max(1.0, L)
    s_l, s_r = ref.s_contact_left, ref.s_contact_right
    for j, idx in enumerate(bottom):
        x, y = pts[idx]
        if cfg.tank == "rectangle":
            if abs(x - ox) <= tol:
                S[j] = s_l + (oy - y)
            elif abs(x - (ox + L)) <= tol:
                S[j] = s_l + cfg.depth + L + (y - (oy - cfg.depth))
            else:
                S[j] = s_l + cfg.depth + (x - ox)
        else:
            if abs(y - oy) <= tol and abs(x - ox) <= tol:
                S[j] = s_l
            elif abs(y - oy) <= tol and abs(x - (ox + L)) <= tol:
                S[j] = s_r
            else:
                S[j] = ref.path.arclength_of_x(x, lo=s_l, hi=s_r)
    order = np.argsort(S, kind="stable")
    return top, top_s, bottom[order], S[order]


def _thin_flags(pts, tris, ref, h, grading):
    """Per-triangle wedge-zone flags recomputed from geometry alone."""
    probe = _bottom_probe(ref)
    spacing = _spacing_fn(ref.cfg.length, h, grading, probe)
    ox = ref.cfg.origin[0]
    node_flag = np.zeros(pts.shape[0], dtype=bool)
    for x in np.unique(pts[:, 0]):
        xi = min(max(x - ox, 0.0), ref.cfg.length)
        flag = probe(xi)[0] < _THIN_EXEMPT * spacing(xi)
        node_flag[pts[:, 0] == x] = flag
    return node_flag[tris].any(axis=1)
