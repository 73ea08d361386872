import numpy as np
import pytest

from sketchmesh.fields import (
    AnalyticField,
    Capsule,
    Sphere,
    Subtract,
    mesh_to_field,
    unit_sphere_field,
)
from sketchmesh.mesh import MeshError, TriMesh, VertexRegion, k_ring, laplacian
from sketchmesh.primitives import grid_patch, icosphere
from sketchmesh.refine import (
    FitParams,
    ProjectionSchedule,
    carve_details,
    extrude,
    fit_with_smoothness,
    project_to_isosurface,
    refine_coarse,
    snap_stroke_to_vertices,
)
from sketchmesh.stroke import Stroke


def scalar_walk(r0: float, field, sched: ProjectionSchedule, direction=(1.0, 0.0, 0.0)):
    """Brute-force 1-D simulation of the projection schedule along a ray
    from the origin; returns the visited radii."""
    d = np.asarray(direction)
    r, step, last = r0, sched.step0, 0.0
    traj = []
    for _ in range(sched.iters):
        occ = field.eval_one(r * d)
        s = float(np.sign(occ - sched.alpha))
        if s != 0.0 and last != 0.0 and s != last:
            step *= sched.ratio
        r += step * s
        if s != 0.0:
            last = s
        traj.append(r)
    return traj


# ----------------------------------------------------------------------
# projection


def test_schedule_validation():
    with pytest.raises(ValueError):
        ProjectionSchedule(iters=0)
    with pytest.raises(ValueError):
        ProjectionSchedule(ratio=1.5)
    with pytest.raises(ValueError):
        ProjectionSchedule(alpha=0.0)


def test_vertex_on_level_set_holds():
    from sketchmesh.primitives import octahedron

    # octahedron vertices are exactly representable on |p| = 1, so the
    # occupancy is exactly 0.5 and sign(0) = 0 holds every vertex
    oct_mesh = octahedron()
    f = unit_sphere_field()
    targets = project_to_isosurface(oct_mesh, f, normals=oct_mesh.positions)
    assert np.array_equal(targets, oct_mesh.positions)


def test_axis_vertex_matches_oracle_exactly():
    # (0.8, 0, 0) with outward normal (1, 0, 0): positions stay on the x
    # axis where the field evaluation is bitwise the oracle's
    f = unit_sphere_field()
    sched = ProjectionSchedule()
    m = icosphere(1)
    pos = m.positions.copy()
    pos[0] = (0.8, 0.0, 0.0)
    mesh = TriMesh(pos, m.faces, validate=False)
    normals = np.zeros_like(pos)
    normals[0] = (1.0, 0.0, 0.0)
    v = mesh.positions.copy()
    traj = []
    for k in range(1, sched.iters + 1):
        partial = ProjectionSchedule(iters=k)
        out = project_to_isosurface(mesh, f, partial, normals=normals)
        traj.append(out[0, 0])
    oracle = scalar_walk(0.8, f, sched)
    assert np.abs(np.array(traj) - np.array(oracle)).max() == 0.0


def test_icosphere_trajectories_match_oracle(sphere3):
    # start radius 1.27: every field evaluation happens >= 0.005 from the
    # level set, so fp noise cannot flip a sign and the per-vertex radii
    # must match the scalar walk to 1e-12 at every iteration
    f = unit_sphere_field()
    sched = ProjectionSchedule()
    start = sphere3.with_positions(sphere3.positions * 1.27)
    normals = start.positions / np.linalg.norm(start.positions, axis=1)[:, None]
    oracle = scalar_walk(1.27, f, sched)
    for k in range(1, sched.iters + 1):
        out = project_to_isosurface(
            start, f, ProjectionSchedule(iters=k), normals=normals
        )
        radii = np.linalg.norm(out, axis=1)
        assert np.abs(radii - oracle[k - 1]).max() <= 1e-12


def test_projection_region_locality(sphere2):
    f = unit_sphere_field()
    start = sphere2.with_positions(sphere2.positions * 1.2)
    region = VertexRegion.from_members(start, range(20))
    out = project_to_isosurface(start, f, region=region)
    outside = np.arange(20, start.n_vertices)
    assert np.array_equal(out[outside], start.positions[outside])
    moved = np.linalg.norm(out[:20] - start.positions[:20], axis=1)
    assert moved.min() > 0


def test_projection_as_printed_sign_moves_away():
    # the literal printed form moves an outside vertex further outside
    f = unit_sphere_field()
    m = icosphere(1)
    start = m.with_positions(m.positions * 1.2)
    normals = start.positions / np.linalg.norm(start.positions, axis=1)[:, None]
    out = project_to_isosurface(
        start, f, ProjectionSchedule(iters=1), normals=normals,
        sign_convention="as_printed",
    )
    assert np.all(np.linalg.norm(out, axis=1) > 1.2)


def test_projection_monotone_convergence_bound():
    # 1-D oracle property: once the sign has flipped, the distance to the
    # level set stays within twice the current step
    f = unit_sphere_field()
    sched = ProjectionSchedule(iters=12)
    rng = np.random.default_rng(0)
    for gap in rng.uniform(-0.45, 0.45, size=40):
        r, step, last = 1.0 + float(gap), sched.step0, 0.0
        flipped = False
        for _ in range(sched.iters):
            occ = f.eval_one((r, 0.0, 0.0))
            s = float(np.sign(occ - sched.alpha))
            if s != 0.0 and last != 0.0 and s != last:
                step *= sched.ratio
                flipped = True
            r += step * s
            if s != 0.0:
                last = s
            if flipped:
                assert abs(r - 1.0) <= 2.0 * step + 1e-12


def test_projection_step_bounds():
    f = unit_sphere_field()
    sched = ProjectionSchedule()
    rng = np.random.default_rng(1)
    geo = sched.step0 * sum(sched.ratio**j for j in range(sched.iters))
    for gap in rng.uniform(-0.4, 0.4, size=30):
        traj = scalar_walk(1.0 + float(gap), f, sched)
        total = abs(traj[-1] - (1.0 + gap))
        assert total <= sched.step0 * sched.iters + 1e-12
        moves = np.abs(np.diff([1.0 + gap] + traj))
        first_flip = None
        step = sched.step0
        for k in range(1, len(moves)):
            if moves[k] < moves[k - 1] - 1e-15:
                first_flip = k
                break
        if first_flip is not None:
            assert moves[first_flip:].sum() <= geo + 1e-12


# ----------------------------------------------------------------------
# smoothness fitting


def test_fit_lambda_zero_exact(sphere2):
    rng = np.random.default_rng(2)
    targets = sphere2.positions + rng.normal(scale=0.02, size=sphere2.positions.shape)
    out = fit_with_smoothness(sphere2, targets, FitParams(lam=0.0))
    assert np.array_equal(out.positions, targets)


def test_fit_translation_equivariant(sphere2):
    rng = np.random.default_rng(3)
    targets = sphere2.positions + rng.normal(scale=0.02, size=sphere2.positions.shape)
    t = np.array([0.4, -0.1, 0.25])
    a = fit_with_smoothness(sphere2, targets, FitParams(lam=0.5))
    b = fit_with_smoothness(
        sphere2.with_positions(sphere2.positions + t), targets + t, FitParams(lam=0.5)
    )
    assert np.abs(b.positions - (a.positions + t)).max() <= 1e-9


def test_fit_large_lambda_smooths(sphere2):
    rng = np.random.default_rng(4)
    targets = sphere2.positions + rng.normal(scale=0.05, size=sphere2.positions.shape)
    lap = laplacian(sphere2)
    rough = fit_with_smoothness(sphere2, targets, FitParams(lam=0.0))
    smooth = fit_with_smoothness(sphere2, targets, FitParams(lam=1e3))
    e_rough = np.sum((lap @ rough.positions) ** 2)
    e_smooth = np.sum((lap @ smooth.positions) ** 2)
    assert e_smooth <= e_rough


def test_fit_region_pins_outside(sphere2):
    rng = np.random.default_rng(5)
    targets = sphere2.positions + rng.normal(scale=0.05, size=sphere2.positions.shape)
    region = VertexRegion.from_members(sphere2, range(30))
    out = fit_with_smoothness(sphere2, targets, FitParams(lam=0.3, region=region))
    outside = np.arange(30, sphere2.n_vertices)
    assert np.array_equal(out.positions[outside], sphere2.positions[outside])


def test_fit_energy_optimality(sphere2):
    rng = np.random.default_rng(6)
    targets = sphere2.positions + rng.normal(scale=0.03, size=sphere2.positions.shape)
    lam = 0.7
    out = fit_with_smoothness(sphere2, targets, FitParams(lam=lam))
    lap = laplacian(sphere2)

    def energy(pos):
        return lam * np.sum((lap @ pos) ** 2) + np.sum((pos - targets) ** 2)

    base = energy(out.positions)
    for _ in range(10):
        d = rng.normal(size=out.positions.shape)
        d *= 1e-4 / np.linalg.norm(d)
        assert energy(out.positions + d) >= base - 1e-14


# ----------------------------------------------------------------------
# coarse refinement


def test_refine_coarse_self_field_fixed_point(sphere2):
    field = mesh_to_field(sphere2)
    out = refine_coarse(sphere2, field)
    sched = ProjectionSchedule()
    bound = sched.step0 * sched.ratio**4
    assert np.linalg.norm(out.positions - sphere2.positions, axis=1).max() <= bound


def test_refine_coarse_ellipsoid_to_sphere(sphere3):
    pos = sphere3.positions * np.array([0.9, 1.0, 1.1])
    start = sphere3.with_positions(pos)
    out = refine_coarse(start, unit_sphere_field())
    assert np.abs(np.linalg.norm(out.positions, axis=1) - 1.0).max() <= 0.05


def test_refine_coarse_deterministic(sphere2):
    start = sphere2.with_positions(sphere2.positions * 1.15)
    f = unit_sphere_field()
    a = refine_coarse(start, f)
    b = refine_coarse(start, f)
    assert np.array_equal(a.positions, b.positions)


# ----------------------------------------------------------------------
# detail carving


def test_carve_empty_strokes_identity(sphere2):
    out = carve_details(sphere2, [], unit_sphere_field())
    assert out is sphere2


def test_carve_self_field_near_fixed_point(sphere3):
    # every projected vertex holds exactly on the self-field (occupancy
    # exactly 0.5); what remains is the lambda=0.2 fit smoothing of the
    # subdivision chords, O(h^2), well inside the schedule bound at
    # interactive resolution
    field = mesh_to_field(sphere3)
    stroke = Stroke([sphere3.positions[0]])
    out = carve_details(sphere3, [stroke], field)
    sched = ProjectionSchedule()
    bound = sched.step0 * sched.ratio**4
    disp = np.linalg.norm(out.positions[: sphere3.n_vertices] - sphere3.positions, axis=1)
    assert disp.max() <= bound


def test_carve_region_locality(sphere2):
    field = mesh_to_field(sphere2)
    stroke = Stroke([sphere2.positions[0]])
    out = carve_details(sphere2, [stroke], field)
    # affected set: the 3-ring region plus the 2-ring filter band around it
    affected = k_ring(sphere2, [0], 5)
    untouched = np.setdiff1d(np.arange(sphere2.n_vertices), sorted(affected))
    assert untouched.size > 0
    assert np.array_equal(out.positions[untouched], sphere2.positions[untouched])


def test_carve_groove_moves_inward(sphere3):
    # capsule subtracted along the +x pole: stroke vertices move inward
    cutter = Capsule((1.0, -0.35, 0.0), (1.0, 0.35, 0.0), 0.18)
    groove = AnalyticField(
        Subtract(Sphere((0, 0, 0), 1.0), cutter), falloff=0.03
    )
    seed_ids = [int(np.argmax(sphere3.positions[:, 0]))]
    stroke = Stroke(sphere3.positions[seed_ids])
    out = carve_details(sphere3, [stroke], groove)
    n0 = sphere3.n_vertices
    region = k_ring(sphere3, seed_ids, 3)
    ridx = sorted(region)
    before = np.linalg.norm(sphere3.positions[ridx], axis=1)
    after = np.linalg.norm(out.positions[ridx], axis=1)
    assert (after - before).mean() < 0.0
    affected = k_ring(sphere3, seed_ids, 5)
    untouched = np.setdiff1d(np.arange(n0), sorted(affected))
    assert np.array_equal(out.positions[untouched], sphere3.positions[untouched])


def test_carve_off_surface_stroke_rejected(sphere2):
    stroke = Stroke([[5.0, 5.0, 5.0]])
    with pytest.raises(MeshError, match="stroke 0"):
        carve_details(sphere2, [stroke], unit_sphere_field())


def test_snap_tie_break_lowest_index():
    m = TriMesh(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]],
        [[0, 1, 2], [1, 3, 2]],
    )
    # equidistant to vertices 0 and 1
    ids = snap_stroke_to_vertices(m, Stroke([[0.5, 0.0, 0.0]]), snap_tol=1.0)
    assert ids.tolist() == [0]


# ----------------------------------------------------------------------
# extrusion


def _patch_with_ring(n: int = 12):
    mesh = grid_patch(n, n)
    center = np.array([0.5, 0.5, 0.0])
    angles = np.linspace(0, 2 * np.pi, 17)  # closed: last point = first
    ring = center + 0.3 * np.stack(
        [np.cos(angles), np.sin(angles), np.zeros_like(angles)], axis=1
    )
    return mesh, Stroke(ring)


def test_extrude_flat_profile_identity():
    mesh, ring = _patch_with_ring()
    profile = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
    out = extrude(mesh, ring, profile, view="top")
    assert out is mesh


def test_extrude_apex_height():
    mesh, ring = _patch_with_ring()
    h = 0.2
    profile = np.array([[0.2, 0.0], [0.5, h], [0.8, 0.0]])
    out = extrude(mesh, ring, profile, view="top")
    disp = np.abs(out.positions[:, 2])
    assert abs(disp.max() - h) <= 0.05 * h


def test_extrude_linear_in_profile():
    # fine grid: mean region edge < profile extent / 16, no subdivision,
    # so both extrusions share the input vertex set
    mesh, ring = _patch_with_ring(24)
    p1 = np.array([[0.0, 0.0], [0.5, 0.1], [1.0, 0.0]])
    p2 = p1 * np.array([1.0, 2.0])
    a = extrude(mesh, ring, p1, view="top")
    b = extrude(mesh, ring, p2, view="top")
    assert a.n_vertices == mesh.n_vertices == b.n_vertices
    da = a.positions - mesh.positions
    db = b.positions - mesh.positions
    assert np.abs(db - 2.0 * da).max() <= 1e-12


def test_extrude_open_region_rejected():
    mesh = grid_patch(8, 8)
    arc = Stroke(np.array([[0.2, 0.2, 0.0], [0.8, 0.2, 0.0], [0.8, 0.8, 0.0]]))
    with pytest.raises(MeshError, match="not closed"):
        extrude(mesh, arc, np.array([[0.0, 0.0], [0.5, 0.1], [1.0, 0.0]]), view="top")


def test_extrude_profile_must_start_at_zero():
    mesh, ring = _patch_with_ring()
    profile = np.array([[0.0, 0.3], [0.5, 0.5], [1.0, 0.4]])
    with pytest.raises(MeshError, match="rise"):
        extrude(mesh, ring, profile, view="top")
