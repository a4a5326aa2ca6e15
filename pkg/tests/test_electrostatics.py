"""Voxel Poisson solver checks against closed-form capacitor solutions.

A parallel-plate capacitor (linear potential) and a two-layer dielectric
stack (piecewise-linear potential, flux continuity at the interface) have
exact solutions that the discrete operator reproduces to solver tolerance,
which makes them sharp oracles.  Mesh convergence is probed by moving a
dielectric interface off the face lattice so the discretization error is
set by the face-snapping distance.
"""

import re

import numpy as np
import pytest

from donorlab.electrostatics import (FIELD_TABLE_HEADER, FieldGrid, SolveError,
                                     VoxelGrid, export_field_table,
                                     grid_from_layout, import_field_table,
                                     refine_region, sample_field, solve_poisson)


def _plate_grid(shape=(4, 4, 12), h=1e-9, v_lo=0.0, v_hi=1.0, eps=None):
    """Capacitor with Dirichlet planes at k=0 (v_hi) and k=nz-1 (v_lo)."""
    perm = np.full(shape, 11.7) if eps is None else eps
    mask = np.zeros(shape, dtype=bool)
    mask[:, :, 0] = True
    mask[:, :, -1] = True
    value = np.zeros(shape)
    value[:, :, 0] = v_hi
    value[:, :, -1] = v_lo
    return VoxelGrid(spacing=h, permittivity=perm, dirichlet_mask=mask,
                     dirichlet_value=value)


def test_grid_validation():
    ok = _plate_grid()
    assert ok.shape == (4, 4, 12)
    with pytest.raises(ValueError, match="spacing"):
        _plate_grid(h=0.0)
    with pytest.raises(ValueError, match="permittivity"):
        _plate_grid(eps=np.full((4, 4, 12), -1.0))
    with pytest.raises(ValueError, match="[Dd]irichlet"):
        VoxelGrid(1e-9, np.ones((3, 3, 3)), np.zeros((3, 3, 3), bool),
                  np.zeros((3, 3, 3)))
    with pytest.raises(ValueError, match="shape"):
        VoxelGrid(1e-9, np.ones((3, 3, 3)), np.zeros((3, 3, 4), bool),
                  np.zeros((3, 3, 3)))
    with pytest.raises(ValueError):
        VoxelGrid(1e-9, np.ones((3, 3)), np.zeros((3, 3), bool),
                  np.zeros((3, 3)))


def test_solver_parameter_validation():
    g = _plate_grid()
    with pytest.raises(ValueError, match="tol"):
        solve_poisson(g, tol=0.0)
    with pytest.raises(ValueError, match="relax"):
        solve_poisson(g, relax=2.0)


def test_uniform_capacitor_is_linear():
    h = 1e-9
    grid = _plate_grid(shape=(4, 4, 12), h=h, v_hi=3.0, v_lo=1.0)
    field = solve_poisson(grid, tol=1e-10)
    k = np.arange(12)
    want = 3.0 - 2.0 * k / 11.0
    got = field.potential[2, 1, :]
    np.testing.assert_allclose(got, want, atol=3.0 * 0.005)
    # much tighter than 0.5% in practice: the linear profile is in the
    # kernel of the discrete operator
    np.testing.assert_allclose(got, want, atol=1e-8)
    ez_want = 2.0 / (11.0 * h)
    np.testing.assert_allclose(field.e_field[1:3, 1:3, 3:9, 2], ez_want,
                               rtol=1e-6)
    np.testing.assert_allclose(field.e_field[..., 0], 0.0, atol=1e-3 * ez_want)


def test_two_layer_field_ratio():
    # eps 11.7 below the mid face, 3.9 above: flux continuity makes the
    # field jump by exactly eps1/eps2 = 3 across the interface
    shape = (3, 3, 14)
    eps = np.full(shape, 11.7)
    eps[:, :, 7:] = 3.9
    grid = _plate_grid(shape=shape, eps=eps)
    field = solve_poisson(grid, tol=1e-10)
    e_low = field.e_field[1, 1, 3, 2]
    e_high = field.e_field[1, 1, 10, 2]
    assert e_high / e_low == pytest.approx(3.0, rel=0.01)


def test_discrete_maximum_principle():
    layout = {
        "shape": [8, 8, 8],
        "spacing_m": 1e-9,
        "default_epsilon": 11.7,
        "materials": [
            {"box_m": [[0, 8e-9], [0, 8e-9], [4e-9, 8e-9]], "epsilon": 3.9},
        ],
        "electrodes": [
            {"box_m": [[0, 3e-9], [0, 3e-9], [0, 1e-9]], "voltage": 0.7},
            {"box_m": [[5e-9, 8e-9], [5e-9, 8e-9], [7e-9, 8e-9]], "voltage": -0.3},
        ],
    }
    field = solve_poisson(grid_from_layout(layout), tol=1e-9)
    assert field.potential.min() >= -0.3 - 1e-9
    assert field.potential.max() <= 0.7 + 1e-9


def test_residual_history_monotone():
    field = solve_poisson(_plate_grid(shape=(6, 6, 16)), tol=1e-10)
    hist = np.asarray(field.residual_history)
    assert len(hist) >= 2
    assert np.all(np.diff(hist) <= 0.0)
    assert hist[-1] <= 1e-10
    assert field.iterations > 0


def test_budget_exhaustion_raises_with_state():
    with pytest.raises(SolveError) as exc:
        solve_poisson(_plate_grid(shape=(8, 8, 20)), tol=1e-12, max_iters=3)
    err = exc.value
    assert err.iterations == 3
    assert err.tol == 1e-12
    assert err.residual > 1e-12
    assert "residual" in str(err)


def _two_layer_mesh(h, interface_z, nxy, length=10e-9):
    # voxel centers at k*h so halved lattices share nodes
    nz = round(length / h) + 1
    shape = (nxy, nxy, nz)
    z = np.arange(nz) * h
    eps_line = np.where(z < interface_z, 11.7, 3.9)
    perm = np.broadcast_to(eps_line, shape).copy()
    mask = np.zeros(shape, dtype=bool)
    mask[:, :, 0] = True
    mask[:, :, -1] = True
    value = np.zeros(shape)
    value[:, :, 0] = 1.0
    return VoxelGrid(spacing=h, permittivity=perm, dirichlet_mask=mask,
                     dirichlet_value=value)


def test_mesh_convergence_at_off_lattice_interface():
    # interface at 5.2 nm sits 0.3 nm from the nearest 1 nm face and
    # 0.05 nm from the nearest 0.5 nm face, so halving the spacing should
    # shrink the probe error well beyond the required factor of 2
    z_star, length = 5.2e-9, 10e-9
    ratio = 11.7 / 3.9
    e1 = 1.0 / (z_star + ratio * (length - z_star))
    v_exact = 1.0 - e1 * 5.0e-9

    errs = []
    for h, nxy in ((1e-9, 3), (0.5e-9, 5)):
        grid = _two_layer_mesh(h, z_star, nxy)
        field = solve_poisson(grid, tol=1e-10)
        v, _ = sample_field(field, (1e-9, 1e-9, 5.0e-9))
        errs.append(abs(v - v_exact))
    assert errs[0] / errs[1] >= 2.0
    assert errs[1] < errs[0] < 0.05  # both resolutions are already close


def test_refinement_matches_parent_solution():
    h = 1e-9
    parent = _plate_grid(shape=(12, 12, 12), h=h)
    coarse = solve_poisson(parent, tol=1e-10)
    box = ((1, 11), (1, 11), (1, 11))
    fine_grid = refine_region(parent, coarse, box, factor=2)
    assert fine_grid.shape == (20, 20, 20)
    assert fine_grid.spacing == pytest.approx(h / 2.0)
    # the entire outer shell carries interpolated Dirichlet values
    m = fine_grid.dirichlet_mask
    for face in (m[0], m[-1], m[:, 0], m[:, -1], m[:, :, 0], m[:, :, -1]):
        assert face.all()
    fine = solve_poisson(fine_grid, tol=1e-10)
    probe = (5.5e-9, 5.5e-9, 5.5e-9)
    v_fine, e_fine = sample_field(fine, probe)
    v_coarse, e_coarse = sample_field(coarse, probe)
    ez_want = 1.0 / (11.0 * h)
    assert v_fine == pytest.approx(v_coarse, abs=0.002)
    assert e_fine[2] == pytest.approx(ez_want, rel=0.002)
    assert e_coarse[2] == pytest.approx(ez_want, rel=0.002)


def test_refinement_input_validation():
    parent = _plate_grid(shape=(12, 12, 12))
    coarse = solve_poisson(parent, tol=1e-8)
    with pytest.raises(ValueError, match="factor"):
        refine_region(parent, coarse, ((1, 11), (1, 11), (1, 11)), factor=1)
    with pytest.raises(ValueError, match="box"):
        refine_region(parent, coarse, ((0, 13), (1, 11), (1, 11)), factor=2)
    with pytest.raises(ValueError, match="box"):
        refine_region(parent, coarse, ((5, 5), (1, 11), (1, 11)), factor=2)


def test_sample_field_at_nodes_and_between():
    field = solve_poisson(_plate_grid(shape=(4, 4, 12), v_hi=2.0), tol=1e-10)
    v, e = sample_field(field, (2e-9, 1e-9, 5e-9))
    assert v == pytest.approx(field.potential[2, 1, 5], abs=1e-12)
    # halfway between two nodes the trilinear value is their average
    v_mid, _ = sample_field(field, (2e-9, 1e-9, 5.5e-9))
    want = 0.5 * (field.potential[2, 1, 5] + field.potential[2, 1, 6])
    assert v_mid == pytest.approx(want, abs=1e-12)
    assert e.shape == (3,)


def test_sample_field_out_of_bounds_names_axis():
    field = solve_poisson(_plate_grid(), tol=1e-8)
    with pytest.raises(ValueError, match="y"):
        sample_field(field, (1e-9, 9e-9, 5e-9))
    with pytest.raises(ValueError, match="outside"):
        sample_field(field, (1e-9, 1e-9, -1e-9))


def test_layout_builder():
    layout = {
        "shape": [4, 4, 4],
        "spacing_m": 2e-9,
        "default_epsilon": 11.7,
        "materials": [
            {"box_m": [[0, 8e-9], [0, 8e-9], [0, 4e-9]], "epsilon": 3.9},
        ],
        "electrodes": [
            {"box_m": [[0, 8e-9], [0, 8e-9], [0, 2e-9]], "voltage": 1.5},
            {"box_m": [[0, 8e-9], [0, 8e-9], [6e-9, 8e-9]], "voltage": 0.0},
        ],
    }
    grid = grid_from_layout(layout)
    assert grid.shape == (4, 4, 4)
    # voxel centers at (k + 0.5) h: k=0 center 1 nm lies in the 3.9 slab
    assert grid.permittivity[0, 0, 0] == 3.9
    assert grid.permittivity[0, 0, 2] == 11.7
    assert grid.dirichlet_mask[:, :, 0].all()
    assert grid.dirichlet_value[0, 0, 0] == 1.5
    assert grid.dirichlet_mask[:, :, 3].all()
    assert not grid.dirichlet_mask[:, :, 1].any()

    with pytest.raises(ValueError, match="electrode"):
        grid_from_layout({"shape": [3, 3, 3], "spacing_m": 1e-9,
                          "default_epsilon": 11.7, "electrodes": []})


# --- table round trip ---------------------------------------------------------

@pytest.fixture()
def small_field():
    return solve_poisson(_plate_grid(shape=(4, 3, 5), h=2e-9), tol=1e-9)


def test_table_round_trip(tmp_path, small_field):
    path = tmp_path / "field.csv"
    export_field_table(small_field, path)
    header = path.read_text().splitlines()[0]
    assert header == ",".join(FIELD_TABLE_HEADER)
    back = import_field_table(path)
    assert back.spacing == pytest.approx(small_field.spacing, rel=1e-12)
    assert back.origin == pytest.approx(small_field.origin)
    np.testing.assert_array_equal(back.potential, small_field.potential)
    np.testing.assert_allclose(back.e_field, small_field.e_field, rtol=1e-12)


def _export_lines(field, tmp_path):
    path = tmp_path / "field.csv"
    export_field_table(field, path)
    return path, path.read_text().splitlines()


def test_import_rejects_bad_header(tmp_path, small_field):
    path, lines = _export_lines(small_field, tmp_path)
    lines[0] = "x,y,z,V,Ex,Ey,Ez"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="header"):
        import_field_table(path)


def test_import_names_first_missing_node(tmp_path, small_field):
    path, lines = _export_lines(small_field, tmp_path)
    # drop the row for node (0, 1, 2): z-fastest layout, row offset
    # 1 (header) + 0*3*5 + 1*5 + 2
    lines.pop(1 + 5 + 2)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="missing lattice node") as exc:
        import_field_table(path)
    coords = re.findall(r"[xyz]=([-+0-9.e]+)", str(exc.value))
    assert [float(c) for c in coords] == pytest.approx([0.0, 2e-9, 4e-9])


def test_import_rejects_duplicate_node(tmp_path, small_field):
    path, lines = _export_lines(small_field, tmp_path)
    lines.append(lines[3])
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="duplicate"):
        import_field_table(path)


def test_import_rejects_uneven_spacing(tmp_path, small_field):
    path, lines = _export_lines(small_field, tmp_path)
    # shift every node with the largest x to break the uniform lattice
    out = [lines[0]]
    for ln in lines[1:]:
        cols = ln.split(",")
        if float(cols[0]) == pytest.approx(3 * 2e-9):
            cols[0] = repr(3 * 2e-9 + 0.4e-9)
        out.append(",".join(cols))
    path.write_text("\n".join(out) + "\n")
    with pytest.raises(ValueError, match="spacing"):
        import_field_table(path)


def test_import_rejects_non_numeric(tmp_path, small_field):
    path, lines = _export_lines(small_field, tmp_path)
    cols = lines[4].split(",")
    cols[3] = "oops"
    lines[4] = ",".join(cols)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="row 5"):
        import_field_table(path)


def test_import_rejects_single_point(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text(",".join(FIELD_TABLE_HEADER) + "\n0,0,0,1.0,0,0,0\n")
    with pytest.raises(ValueError, match="single point"):
        import_field_table(path)
