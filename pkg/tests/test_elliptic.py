"""Pulled-back FEM solves: maps, mixed problems, pressure, potential."""

from __future__ import annotations

import numpy as np
import pytest

from wavetank.geometry import GeometryConfig, StateError, build_reference, evaluate_frame
from wavetank.meshing import triangulate_reference
from wavetank.elliptic import (
    Workspace,
    harmonic_extension,
    laplace_inverse,
    solve_domain_map,
    solve_dynamic_pressure,
    solve_mixed,
    solve_potential,
)

LENGTH = 2.0
DEPTH = 0.25


def rect_setup(h=0.1, m=16, grading=0.5, depth=DEPTH):
    cfg = GeometryConfig(
        tank="rectangle", length=LENGTH, m=m, depth=depth, override_angle_gate=True
    )
    ref = build_reference(cfg)
    mesh = triangulate_reference(ref, h=h, grading=grading)
    return ref, mesh, Workspace(ref, mesh)


def basin_setup(h=0.05, m=16, grading=0.25, **kw):
    params = dict(tank="basin", length=LENGTH, m=m)
    params.update(kw)
    ref = build_reference(GeometryConfig(**params))
    mesh = triangulate_reference(ref, h=h, grading=grading)
    return ref, mesh, Workspace(ref, mesh)


def rest_map(ref, ws):
    frame = evaluate_frame(ref, np.zeros(ref.m + 1))
    return frame, solve_domain_map(ws, frame)


def l2_error(hmap, u_h, u_exact_nodal):
    err = u_h - u_exact_nodal
    m = hmap.mass_det
    return float(np.sqrt(err @ (m @ err)) / np.sqrt(u_exact_nodal @ (m @ u_exact_nodal)))


# -- coordinate map ---------------------------------------------------------------


def test_rest_map_is_exact_identity():
    ref, mesh, ws = rect_setup()
    _, hmap = rest_map(ref, ws)
    assert np.array_equal(hmap.T, mesh.pts)
    assert np.all(hmap.det == 1.0)
    eye = np.broadcast_to(np.eye(2), hmap.A.shape)
    assert np.array_equal(hmap.A, eye)


def vertical_shift_probe(h, c):
    ref, mesh, ws = rect_setup(h=h, grading=1.0)
    frame = evaluate_frame(ref, np.full(ref.m + 1, c))
    hmap = solve_domain_map(ws, frame)
    u = hmap.T - mesh.pts
    probe = np.argmin(np.hypot(mesh.pts[:, 0] - 1.0, mesh.pts[:, 1] + 0.15))
    assert np.allclose(mesh.pts[probe], [1.0, -0.15])
    return mesh, u, u[probe, 1]


def test_vertical_shift_map_on_rectangle():
    c = 0.01
    mesh, u, probe_coarse = vertical_shift_probe(0.05, c)
    top = mesh.top_ids
    assert np.allclose(u[top, 0], 0.0, atol=1e-12)
    assert np.allclose(u[top, 1], c, atol=1e-12)
    # componentwise maximum principle: boundary data never exceeds c
    assert np.abs(u[:, 0]).max() <= c + 1e-12
    assert np.abs(u[:, 1]).max() <= c + 1e-12
    # vertical shear decays roughly linearly over the depth
    assert 0.25 * c < probe_coarse < 0.55 * c
    # refining the mesh barely moves the interior value
    _, _, probe_fine = vertical_shift_probe(0.025, c)
    assert abs(probe_coarse - probe_fine) < 0.05 * c


def test_random_smooth_displacement_keeps_diffeomorphism():
    ref, mesh, ws = basin_setup()
    rng = np.random.default_rng(7)
    s = ref.s / ref.length
    d = np.zeros(ref.m + 1)
    for k in range(1, 4):
        d += rng.normal() * np.cos(np.pi * k * s) + rng.normal() * np.sin(np.pi * k * s)
    # cap amplitude and surface slope: a slope comparable to the contact
    # wedge opening would legitimately fold the sliver triangles
    slope = ref.diff @ d
    d *= min(0.3 * ref.delta / np.abs(d).max(), 0.05 / np.abs(slope).max())
    frame = evaluate_frame(ref, d)
    hmap = solve_domain_map(ws, frame)
    assert hmap.det.min() > 0.0
    # the surface trace of the map equals the displaced surface
    assert np.allclose(hmap.T[mesh.top_ids], ws.R @ frame.pts, atol=1e-10)


def test_folding_displacement_is_rejected():
    # a surface lift comparable to the corner mesh spacing drags solid-chain
    # nodes around the wall corner and must be caught, not silently used
    ref, mesh, ws = rect_setup(h=0.05)
    frame = evaluate_frame(ref, np.full(ref.m + 1, 0.05))
    with pytest.raises(StateError):
        solve_domain_map(ws, frame)


def test_contact_points_pinned_by_slide():
    ref, mesh, ws = basin_setup()
    d = 0.04 * np.cos(np.pi * ref.s / ref.length)
    frame = evaluate_frame(ref, d)
    hmap = solve_domain_map(ws, frame)
    left = hmap.T[mesh.top_ids[0]]
    right = hmap.T[mesh.top_ids[-1]]
    assert np.allclose(left, ref.path.point_at(frame.s_left), atol=1e-12)
    assert np.allclose(right, ref.path.point_at(frame.s_right), atol=1e-12)


# -- mixed solves -----------------------------------------------------------------


def test_constant_extension_is_constant():
    ref, mesh, ws = rect_setup()
    _, hmap = rest_map(ref, ws)
    f = np.full(mesh.top_ids.size, 3.5)
    field = harmonic_extension(hmap, f)
    assert np.allclose(field.values, 3.5, atol=1e-11)
    assert np.abs(field.flux_weights_top()).max() < 1e-10


def test_extension_is_linear_operator():
    ref, mesh, ws = basin_setup()
    _, hmap = rest_map(ref, ws)
    x = mesh.pts[mesh.top_ids, 0]
    f = np.cos(np.pi * x / LENGTH)
    g = x**2
    lhs = harmonic_extension(hmap, 2.0 * f - 3.0 * g).values
    rhs = 2.0 * harmonic_extension(hmap, f).values - 3.0 * harmonic_extension(hmap, g).values
    assert np.allclose(lhs, rhs, atol=1e-12)


def manufactured_errors(u_fn, grad_fn, lap, levels, setup):
    errs = []
    h1s = []
    for h in levels:
        ref, mesh, ws = setup(h)
        _, hmap = rest_map(ref, ws)
        exact = u_fn(mesh.pts[:, 0], mesh.pts[:, 1])
        f = exact[mesh.top_ids]
        # per-edge flux data with chord normals: one-sided at wall corners
        bp = mesh.pts[mesh.bottom_ids]
        chord = np.diff(bp, axis=0)
        ell = np.hypot(chord[:, 0], chord[:, 1])
        tan = chord / ell[:, None]
        nor = np.column_stack([tan[:, 1], -tan[:, 0]])
        ga = np.einsum("ij,ij->i", grad_fn(bp[:-1, 0], bp[:-1, 1]), nor)
        gb = np.einsum("ij,ij->i", grad_fn(bp[1:, 0], bp[1:, 1]), nor)
        g = np.column_stack([ga, gb])
        source = None if lap == 0.0 else np.full(mesh.n_triangles, lap)
        field = solve_mixed(hmap, source=source, dirichlet_top=f, neumann_bottom=g)
        errs.append(l2_error(hmap, field.values, exact))
        diff = field.values - exact
        h1s.append(float(np.sqrt(diff @ (hmap.K @ diff))))
    return errs, h1s


def test_manufactured_harmonic_convergence():
    u = lambda x, y: x * x - y * y
    gu = lambda x, y: np.column_stack([2.0 * x, -2.0 * y])
    # three levels: corner refinement perturbs single-pair rates at coarse h
    errs, h1s = manufactured_errors(u, gu, 0.0, [0.1, 0.05, 0.025], rect_setup)
    assert 0.5 * np.log2(errs[0] / errs[2]) > 1.8
    assert 0.5 * np.log2(h1s[0] / h1s[2]) > 0.9


def test_manufactured_poisson_convergence():
    u = lambda x, y: 0.5 * (x * x + y * y)
    gu = lambda x, y: np.column_stack([x, y])
    # three levels: corner refinement perturbs single-pair rates at coarse h
    errs, _ = manufactured_errors(u, gu, 2.0, [0.1, 0.05, 0.025], rect_setup)
    assert 0.5 * np.log2(errs[0] / errs[2]) > 1.8


def test_laplace_inverse_zero_data_zero():
    ref, mesh, ws = basin_setup()
    _, hmap = rest_map(ref, ws)
    field = laplace_inverse(hmap, source=np.zeros(mesh.n_triangles),
                            neumann_bottom=np.zeros(mesh.bottom_ids.size))
    assert np.allclose(field.values, 0.0, atol=1e-13)


def test_discrete_maximum_principle_shrinks():
    over = []
    for h in (0.1, 0.05):
        ref, mesh, ws = rect_setup(h=h)
        _, hmap = rest_map(ref, ws)
        rng = np.random.default_rng(3)
        f = rng.uniform(-1.0, 1.0, mesh.top_ids.size)
        u = harmonic_extension(hmap, f).values
        over.append(max(u.max() - f.max(), f.min() - u.min(), 0.0))
    assert over[1] <= over[0] + 1e-12
    assert over[1] < 0.05


def test_cos_mode_extension_matches_separation_profile():
    k = 2
    ref, mesh, ws = rect_setup(h=0.04)
    _, hmap = rest_map(ref, ws)
    x, y = mesh.pts[:, 0], mesh.pts[:, 1]
    kk = k * np.pi / LENGTH
    f = np.cos(kk * x[mesh.top_ids])
    field = harmonic_extension(hmap, f)
    exact = np.cos(kk * x) * np.cosh(kk * (y + DEPTH)) / np.cosh(kk * DEPTH)
    assert np.abs(field.values - exact).max() < 0.01


def test_odd_data_gives_odd_extension():
    ref, mesh, ws = rect_setup(h=0.07, grading=0.4)
    _, hmap = rest_map(ref, ws)
    x_top = mesh.pts[mesh.top_ids, 0]
    f = np.sin(np.pi * (2.0 * x_top / LENGTH - 1.0))
    u = harmonic_extension(hmap, f).values
    lookup = {
        (round(float(x), 10), round(float(y), 10)): i
        for i, (x, y) in enumerate(mesh.pts)
    }
    for i, (x, y) in enumerate(mesh.pts):
        j = lookup[(round(float(LENGTH - x), 10), round(float(y), 10))]
        assert abs(u[i] + u[j]) < 1e-10


def test_flux_recovery_matches_mode_symbol():
    k = 2
    ref, mesh, ws = rect_setup(h=1.0 / 32.0)
    _, hmap = rest_map(ref, ws)
    kk = k * np.pi / LENGTH
    f = np.cos(kk * mesh.pts[mesh.top_ids, 0])
    field = harmonic_extension(hmap, f)
    got = field.flux_top_colloc()
    want = kk * np.tanh(kk * DEPTH) * np.cos(kk * ref.s)
    assert np.abs(got - want).max() < 0.02 * np.abs(want).max()


# -- dynamic pressure -------------------------------------------------------------


def test_hydrostatic_pressure_is_exact():
    ref, mesh, ws = rect_setup()
    _, hmap = rest_map(ref, ws)
    g = 9.81
    field = solve_dynamic_pressure(hmap, np.zeros((mesh.n_vertices, 2)), (0.0, -g))
    assert np.allclose(field.values, -g * mesh.pts[:, 1], atol=1e-9)


def test_uniform_flow_adds_nothing_to_hydrostatic():
    ref, mesh, ws = rect_setup()
    _, hmap = rest_map(ref, ws)
    g_vec = (0.0, -9.81)
    still = solve_dynamic_pressure(hmap, np.zeros((mesh.n_vertices, 2)), g_vec)
    v = np.tile([0.7, 0.0], (mesh.n_vertices, 1))
    moving = solve_dynamic_pressure(hmap, v, g_vec)
    assert np.allclose(still.values, moving.values, atol=1e-12)


def test_strain_field_pressure_profile():
    # v = grad(x^2 - y^2) has tr((grad v)^2) = 8 exactly in P1
    errs = []
    for h in (0.04, 0.02):
        ref, mesh, ws = rect_setup(h=h)
        _, hmap = rest_map(ref, ws)
        v = np.column_stack([2.0 * mesh.pts[:, 0], -2.0 * mesh.pts[:, 1]])
        field = solve_dynamic_pressure(hmap, v, (0.0, 0.0))
        y = mesh.pts[:, 1]
        exact = -4.0 * y * y - 8.0 * DEPTH * y
        errs.append(np.abs(field.values - exact).max())
    scale = 4.0 * DEPTH * DEPTH
    assert errs[1] < 0.01 * scale
    assert errs[1] < 0.45 * errs[0]


# -- potential --------------------------------------------------------------------


def test_zero_speed_zero_potential():
    ref, mesh, ws = rect_setup()
    frame, hmap = rest_map(ref, ws)
    phi, v, xi = solve_potential(ws, hmap, frame, np.zeros(ref.m + 1))
    assert xi == 0.0
    assert np.allclose(phi.values, 0.0, atol=1e-14)
    assert np.allclose(v, 0.0, atol=1e-14)


def test_constant_speed_flux_and_balance():
    ref, mesh, ws = rect_setup()
    frame, hmap = rest_map(ref, ws)
    w = np.ones(ref.m + 1)
    phi, v, xi = solve_potential(ws, hmap, frame, w)
    assert xi == pytest.approx(LENGTH, rel=1e-13)
    # discrete flux balance is exact by construction
    assert abs(phi.load.sum()) < 1e-12 * abs(xi)
    assert abs(xi / hmap.volume - xi / (LENGTH * DEPTH)) < 1e-10


def test_cos_mode_potential_matches_separation():
    k = 1
    ref, mesh, ws = rect_setup(h=0.04)
    frame, hmap = rest_map(ref, ws)
    kk = k * np.pi / LENGTH
    w = np.cos(kk * ref.s)
    phi, v, xi = solve_potential(ws, hmap, frame, w)
    assert abs(xi) < 1e-12
    x, y = mesh.pts[:, 0], mesh.pts[:, 1]
    exact = np.cos(kk * x) * np.cosh(kk * (y + DEPTH)) / (kk * np.sinh(kk * DEPTH))
    m = hmap.mass_det
    ones = np.ones(mesh.n_vertices)
    exact = exact - (exact @ (m @ ones)) / hmap.volume
    scale = np.abs(exact).max()
    assert np.abs(phi.values - exact).max() < 0.02 * scale
    # the projected velocity approximates grad(phi) away from the boundary
    interior = (
        (np.abs(x - LENGTH / 2) < 0.6)
        & (y < -0.35 * DEPTH)
        & (y > -0.8 * DEPTH)
    )
    vx = -kk * np.sin(kk * x) * np.cosh(kk * (y + DEPTH)) / (kk * np.sinh(kk * DEPTH))
    vy = np.cos(kk * x) * np.sinh(kk * (y + DEPTH)) / np.sinh(kk * DEPTH)
    verr = np.hypot(v[interior, 0] - vx[interior], v[interior, 1] - vy[interior])
    vscale = np.hypot(vx[interior], vy[interior]).max()
    assert verr.max() < 0.05 * vscale


def test_potential_on_displaced_basin_runs_and_balances():
    ref, mesh, ws = basin_setup()
    d = 0.02 * np.sin(np.pi * ref.s / ref.length) ** 2
    frame = evaluate_frame(ref, d)
    hmap = solve_domain_map(ws, frame)
    w = 0.01 * np.cos(2.0 * np.pi * ref.s / ref.length)
    phi, v, xi = solve_potential(ws, hmap, frame, w)
    assert abs(phi.load.sum()) < 1e-12 * max(abs(xi), 1e-30) + 1e-15
    assert np.isfinite(phi.values).all()
