"""Voxel-grid electrostatics for gated donor devices.

A device layout (material permittivities plus electrode voltages on boxes)
is rasterized onto a uniform voxel grid and the charge-free Poisson
equation div(eps grad V) = 0 is solved by red-black successive
over-relaxation with harmonic-mean face permittivities.  Electrode voxels
are Dirichlet points and keep their voltage exactly; outer domain faces
are zero-flux.  The field E = -grad V is formed by central differences
(one-sided at boundaries) and can be sampled anywhere inside the grid by
trilinear interpolation, exported to CSV, or re-imported from one.

Lengths and fields are meters and V/m internally; the CSV table format
carries E in V/um, the unit device plots are usually quoted in.

A two-level refinement pass (refine_region) rebuilds a box of interest at
a finer spacing, taking its boundary potentials from the coarse solution;
this is how sub-angstrom resolution near the donor is reached without
meshing the whole device that finely.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from numba import njit

V_PER_M_TO_V_PER_UM = 1e-6

FIELD_TABLE_HEADER = ("x_m", "y_m", "z_m", "V", "Ex_Vpm", "Ey_Vpm", "Ez_Vpm")


class SolveError(RuntimeError):
    """Poisson iteration did not reach tolerance within max_iters."""

    def __init__(self, residual: float, iterations: int, tol: float):
        self.residual = residual
        self.iterations = iterations
        self.tol = tol
        super().__init__(
            f"no convergence after {iterations} sweeps: relative residual "
            f"{residual:.3e} > tol {tol:.3e}"
        )


@dataclass
class VoxelGrid:
    """Uniform voxel grid; voxel (i, j, k) is centered at origin + (i,j,k)*spacing."""

    spacing: float
    permittivity: np.ndarray      # (nx, ny, nz) relative eps, > 0
    dirichlet_mask: np.ndarray    # (nx, ny, nz) bool
    dirichlet_value: np.ndarray   # (nx, ny, nz) volts (meaningful where mask)
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.spacing > 0.0:
            raise ValueError(f"spacing must be > 0, got {self.spacing!r}")
        self.permittivity = np.ascontiguousarray(self.permittivity, dtype=np.float64)
        if self.permittivity.ndim != 3:
            raise ValueError("permittivity must be a 3-d array")
        if np.any(self.permittivity <= 0.0):
            raise ValueError("permittivity must be > 0 in every voxel")
        shape = self.permittivity.shape
        self.dirichlet_mask = np.ascontiguousarray(self.dirichlet_mask, dtype=np.bool_)
        self.dirichlet_value = np.ascontiguousarray(self.dirichlet_value, dtype=np.float64)
        if self.dirichlet_mask.shape != shape or self.dirichlet_value.shape != shape:
            raise ValueError("permittivity, dirichlet_mask and dirichlet_value "
                             "must share a shape")
        if not self.dirichlet_mask.any():
            raise ValueError("grid needs at least one Dirichlet (electrode) voxel")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.permittivity.shape


@dataclass
class FieldGrid:
    """Solved potential and field on the voxel-center lattice (read-only arrays).

    residual_history holds the relative residual at each convergence
    checkpoint of the solve that produced the grid (empty for imported
    tables); iterations is the total sweep count.
    """

    spacing: float
    origin: Tuple[float, float, float]
    potential: np.ndarray   # (nx, ny, nz) volts
    e_field: np.ndarray     # (nx, ny, nz, 3) V/m
    residual_history: Tuple[float, ...] = ()
    iterations: int = 0

    def __post_init__(self):
        self.potential = np.asarray(self.potential, dtype=np.float64)
        self.e_field = np.asarray(self.e_field, dtype=np.float64)
        if self.potential.ndim != 3 or self.e_field.shape != self.potential.shape + (3,):
            raise ValueError("potential must be (nx,ny,nz) and e_field (nx,ny,nz,3)")
        self.potential.flags.writeable = False
        self.e_field.flags.writeable = False

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.potential.shape

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        lo = np.array(self.origin)
        hi = lo + (np.array(self.shape) - 1) * self.spacing
        return lo, hi


@njit(cache=True)
def _sor_sweep(v, eps, fixed, relax):  # pragma: no cover - numba kernel
    nx, ny, nz = v.shape
    for color in range(2):
        for i in range(nx):
            for j in range(ny):
                for k in range((color + i + j) % 2, nz, 2):
                    if fixed[i, j, k]:
                        continue
                    e0 = eps[i, j, k]
                    num = 0.0
                    den = 0.0
                    if i > 0:
                        ef = 2.0 * e0 * eps[i - 1, j, k] / (e0 + eps[i - 1, j, k])
                        num += ef * v[i - 1, j, k]
                        den += ef
                    if i < nx - 1:
                        ef = 2.0 * e0 * eps[i + 1, j, k] / (e0 + eps[i + 1, j, k])
                        num += ef * v[i + 1, j, k]
                        den += ef
                    if j > 0:
                        ef = 2.0 * e0 * eps[i, j - 1, k] / (e0 + eps[i, j - 1, k])
                        num += ef * v[i, j - 1, k]
                        den += ef
                    if j < ny - 1:
                        ef = 2.0 * e0 * eps[i, j + 1, k] / (e0 + eps[i, j + 1, k])
                        num += ef * v[i, j + 1, k]
                        den += ef
                    if k > 0:
                        ef = 2.0 * e0 * eps[i, j, k - 1] / (e0 + eps[i, j, k - 1])
                        num += ef * v[i, j, k - 1]
                        den += ef
                    if k < nz - 1:
                        ef = 2.0 * e0 * eps[i, j, k + 1] / (e0 + eps[i, j, k + 1])
                        num += ef * v[i, j, k + 1]
                        den += ef
                    if den > 0.0:
                        v[i, j, k] += relax * (num / den - v[i, j, k])


@njit(cache=True)
def _max_residual(v, eps, fixed, vscale):  # pragma: no cover - numba kernel
    nx, ny, nz = v.shape
    worst = 0.0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if fixed[i, j, k]:
                    continue
                e0 = eps[i, j, k]
                num = 0.0
                den = 0.0
                if i > 0:
                    ef = 2.0 * e0 * eps[i - 1, j, k] / (e0 + eps[i - 1, j, k])
                    num += ef * v[i - 1, j, k]
                    den += ef
                if i < nx - 1:
                    ef = 2.0 * e0 * eps[i + 1, j, k] / (e0 + eps[i + 1, j, k])
                    num += ef * v[i + 1, j, k]
                    den += ef
                if j > 0:
                    ef = 2.0 * e0 * eps[i, j - 1, k] / (e0 + eps[i, j - 1, k])
                    num += ef * v[i, j - 1, k]
                    den += ef
                if j < ny - 1:
                    ef = 2.0 * e0 * eps[i, j + 1, k] / (e0 + eps[i, j + 1, k])
                    num += ef * v[i, j + 1, k]
                    den += ef
                if k > 0:
                    ef = 2.0 * e0 * eps[i, j, k - 1] / (e0 + eps[i, j, k - 1])
                    num += ef * v[i, j, k - 1]
                    den += ef
                if k < nz - 1:
                    ef = 2.0 * e0 * eps[i, j, k + 1] / (e0 + eps[i, j, k + 1])
                    num += ef * v[i, j, k + 1]
                    den += ef
                if den > 0.0:
                    r = abs(num - den * v[i, j, k]) / (den * vscale)
                    if r > worst:
                        worst = r
    return worst


def _e_from_potential(v: np.ndarray, h: float) -> np.ndarray:
    e = np.zeros(v.shape + (3,), dtype=np.float64)
    for axis in range(3):
        if v.shape[axis] >= 2:
            e[..., axis] = -np.gradient(v, h, axis=axis, edge_order=1)
    return e


def solve_poisson(grid: VoxelGrid, tol: float = 1e-8, max_iters: int = 100_000,
                  relax: float = 1.9, check_every: int = 20) -> FieldGrid:
    """Solve div(eps grad V) = 0 on the grid.

    Parameters
    ----------
    grid : VoxelGrid
        Geometry, permittivities and electrode voltages.
    tol : float
        Convergence threshold on the maximum relative residual over free
        voxels (normalized by the Dirichlet voltage scale).
    max_iters : int
        Sweep budget; exceeding it raises SolveError with the residual.
    relax : float
        SOR relaxation factor in (0, 2).
    """
    if not tol > 0.0:
        raise ValueError(f"tol must be > 0, got {tol!r}")
    if not 0.0 < relax < 2.0:
        raise ValueError(f"relaxation factor must be in (0, 2), got {relax!r}")
    fixed = grid.dirichlet_mask
    fixed_vals = grid.dirichlet_value[fixed]
    vscale = float(np.max(np.abs(fixed_vals)))
    if vscale == 0.0:
        vscale = 1.0
    v = np.zeros(grid.shape, dtype=np.float64)
    v[fixed] = fixed_vals
    eps = grid.permittivity
    residual = _max_residual(v, eps, fixed, vscale)
    history = [residual]
    it = 0
    while residual > tol:
        if it >= max_iters:
            raise SolveError(residual, it, tol)
        n = min(check_every, max_iters - it)
        for _ in range(n):
            _sor_sweep(v, eps, fixed, relax)
        it += n
        residual = _max_residual(v, eps, fixed, vscale)
        history.append(residual)
    # no-source solutions obey the discrete maximum principle
    v_lo, v_hi = float(fixed_vals.min()), float(fixed_vals.max())
    slack = 1e-9 * max(v_hi - v_lo, 1.0)
    if v.min() < v_lo - slack or v.max() > v_hi + slack:
        raise SolveError(residual, it, tol)
    return FieldGrid(spacing=grid.spacing, origin=grid.origin,
                     potential=v, e_field=_e_from_potential(v, grid.spacing),
                     residual_history=tuple(history), iterations=it)


def sample_field(field: FieldGrid, point: Sequence[float]
                 ) -> Tuple[float, np.ndarray]:
    """Trilinear sample of (potential, E vector) at a point in meters."""
    pt = np.asarray(point, dtype=np.float64)
    if pt.shape != (3,):
        raise ValueError(f"point must be a 3-vector, got shape {pt.shape}")
    lo, hi = field.bounds()
    names = "xyz"
    for ax in range(3):
        if pt[ax] < lo[ax] - 1e-12 or pt[ax] > hi[ax] + 1e-12:
            raise ValueError(
                f"point {names[ax]} = {pt[ax]!r} m is outside the grid range "
                f"[{lo[ax]!r}, {hi[ax]!r}]"
            )
    frac = (pt - lo) / field.spacing
    shape = np.array(field.shape)
    i0 = np.minimum(np.maximum(np.floor(frac).astype(int), 0), shape - 1)
    i1 = np.minimum(i0 + 1, shape - 1)
    w = np.clip(frac - i0, 0.0, 1.0)
    v_out = 0.0
    e_out = np.zeros(3)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                wx = w[0] if dx else 1.0 - w[0]
                wy = w[1] if dy else 1.0 - w[1]
                wz = w[2] if dz else 1.0 - w[2]
                weight = wx * wy * wz
                if weight == 0.0:
                    continue
                ii = i1[0] if dx else i0[0]
                jj = i1[1] if dy else i0[1]
                kk = i1[2] if dz else i0[2]
                v_out += weight * field.potential[ii, jj, kk]
                e_out += weight * field.e_field[ii, jj, kk]
    return float(v_out), e_out


def export_field_table(field: FieldGrid, path) -> None:
    """Write the lattice as CSV (x_m,y_m,z_m,V,Ex_Vpm,...), z varying fastest."""
    nx, ny, nz = field.shape
    ox, oy, oz = field.origin
    h = field.spacing
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIELD_TABLE_HEADER)
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    e = field.e_field[i, j, k] * V_PER_M_TO_V_PER_UM
                    writer.writerow([
                        f"{ox + i * h:.17g}", f"{oy + j * h:.17g}",
                        f"{oz + k * h:.17g}",
                        f"{field.potential[i, j, k]:.17g}",
                        f"{e[0]:.17g}", f"{e[1]:.17g}", f"{e[2]:.17g}",
                    ])


def _axis_coords(values: np.ndarray, name: str) -> np.ndarray:
    return np.unique(values)


def import_field_table(path) -> FieldGrid:
    """Rebuild a FieldGrid from a CSV table of lattice nodes.

    The rows must form a complete rectilinear lattice with one uniform
    spacing; the first offending row is named otherwise.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != list(FIELD_TABLE_HEADER):
            raise ValueError(
                f"bad field table header: {header!r}, need {','.join(FIELD_TABLE_HEADER)}"
            )
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ValueError(f"non-numeric field table row {ln}: {row!r}")
    if not rows:
        raise ValueError("field table has no data rows")
    data = np.array(rows)
    xs, ys, zs = (np.unique(data[:, ax]) for ax in range(3))
    spacings = []
    for coords in (xs, ys, zs):
        if len(coords) > 1:
            d = np.diff(coords)
            spacings.append(d)
    if not spacings:
        raise ValueError("field table is a single point; need a lattice")
    all_d = np.concatenate(spacings)
    h = float(np.median(all_d))
    if np.any(np.abs(all_d - h) > 1e-6 * h):
        raise ValueError(
            f"inconsistent lattice spacing: found steps from {all_d.min()!r} "
            f"to {all_d.max()!r} m"
        )
    nx, ny, nz = len(xs), len(ys), len(zs)
    potential = np.full((nx, ny, nz), np.nan)
    e_field = np.full((nx, ny, nz, 3), np.nan)
    for ln, row in enumerate(data, start=2):
        i = int(np.searchsorted(xs, row[0]))
        j = int(np.searchsorted(ys, row[1]))
        k = int(np.searchsorted(zs, row[2]))
        if not np.isnan(potential[i, j, k]):
            raise ValueError(f"duplicate lattice node at row {ln}: {row[:3]!r}")
        potential[i, j, k] = row[3]
        e_field[i, j, k] = row[4:7] / V_PER_M_TO_V_PER_UM
    if np.isnan(potential).any():
        i, j, k = np.argwhere(np.isnan(potential))[0]
        raise ValueError(
            f"missing lattice node at x={float(xs[i])!r}, y={float(ys[j])!r}, "
            f"z={float(zs[k])!r}"
        )
    return FieldGrid(spacing=h, origin=(float(xs[0]), float(ys[0]), float(zs[0])),
                     potential=potential, e_field=e_field)


def refine_region(grid: VoxelGrid, coarse: FieldGrid,
                  box: Sequence[Sequence[int]], factor: int) -> VoxelGrid:
    """Build a finer grid over a voxel-index box, bounded by the coarse solution.

    ``box`` is ((i0, i1), (j0, j1), (k0, k1)) in half-open voxel indices of
    the parent grid. The returned grid has spacing/factor, inherits the
    parent permittivities and electrode voxels, and fixes its outer shell
    to potentials interpolated from ``coarse`` so it can be solved as a
    stand-alone second pass.
    """
    if int(factor) != factor or factor < 2:
        raise ValueError(f"refinement factor must be an integer >= 2, got {factor!r}")
    factor = int(factor)
    nx, ny, nz = grid.shape
    (i0, i1), (j0, j1), (k0, k1) = ((int(a), int(b)) for a, b in box)
    for (a, b, n, name) in ((i0, i1, nx, "x"), (j0, j1, ny, "y"), (k0, k1, nz, "z")):
        if not (0 <= a < b <= n):
            raise ValueError(
                f"box {name}-range [{a}, {b}) is outside the grid (0..{n})"
            )
    h_f = grid.spacing / factor
    shape_f = ((i1 - i0) * factor, (j1 - j0) * factor, (k1 - k0) * factor)
    # parent voxel i spans center +/- h/2; fine centers tile that span
    base = (
        grid.origin[0] + (i0 - 0.5) * grid.spacing + 0.5 * h_f,
        grid.origin[1] + (j0 - 0.5) * grid.spacing + 0.5 * h_f,
        grid.origin[2] + (k0 - 0.5) * grid.spacing + 0.5 * h_f,
    )
    eps_f = np.empty(shape_f, dtype=np.float64)
    mask_f = np.zeros(shape_f, dtype=np.bool_)
    val_f = np.zeros(shape_f, dtype=np.float64)
    lo, hi = coarse.bounds()
    for fi in range(shape_f[0]):
        pi = i0 + fi // factor
        for fj in range(shape_f[1]):
            pj = j0 + fj // factor
            for fk in range(shape_f[2]):
                pk = k0 + fk // factor
                eps_f[fi, fj, fk] = grid.permittivity[pi, pj, pk]
                if grid.dirichlet_mask[pi, pj, pk]:
                    mask_f[fi, fj, fk] = True
                    val_f[fi, fj, fk] = grid.dirichlet_value[pi, pj, pk]
                elif (fi in (0, shape_f[0] - 1) or fj in (0, shape_f[1] - 1)
                        or fk in (0, shape_f[2] - 1)):
                    pt = np.array([base[0] + fi * h_f, base[1] + fj * h_f,
                                   base[2] + fk * h_f])
                    pt = np.minimum(np.maximum(pt, lo), hi)
                    v, _ = sample_field(coarse, pt)
                    mask_f[fi, fj, fk] = True
                    val_f[fi, fj, fk] = v
    return VoxelGrid(spacing=h_f, permittivity=eps_f, dirichlet_mask=mask_f,
                     dirichlet_value=val_f, origin=base)


def grid_from_layout(layout: dict) -> VoxelGrid:
    """Rasterize a layout description onto a voxel grid.

    Expected keys::

        shape: [nx, ny, nz]
        spacing_m: voxel edge, meters
        default_epsilon: background relative permittivity (default 1.0)
        materials: [{"box_m": [[x0,x1],[y0,y1],[z0,z1]], "epsilon": e}, ...]
        electrodes: [{"box_m": [...], "voltage": v}, ...]

    A voxel belongs to a box when its center does; later boxes override
    earlier ones. Voxel centers sit at (index + 1/2) * spacing.
    """
    try:
        shape = tuple(int(n) for n in layout["shape"])
        h = float(layout["spacing_m"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"layout needs integer 'shape' and numeric 'spacing_m': {exc}")
    if len(shape) != 3 or any(n < 1 for n in shape):
        raise ValueError(f"layout shape must be three positive counts, got {shape!r}")
    if not h > 0.0:
        raise ValueError(f"layout spacing_m must be > 0, got {h!r}")
    eps = np.full(shape, float(layout.get("default_epsilon", 1.0)))
    mask = np.zeros(shape, dtype=np.bool_)
    val = np.zeros(shape, dtype=np.float64)
    centers = [
        (np.arange(shape[ax]) + 0.5) * h for ax in range(3)
    ]

    def _voxels_in(box):
        sel = []
        for ax, (a, b) in enumerate(box):
            c = centers[ax]
            sel.append((c >= float(a)) & (c < float(b)))
        return np.ix_(sel[0].nonzero()[0], sel[1].nonzero()[0], sel[2].nonzero()[0])

    for mat in layout.get("materials", []):
        eps[_voxels_in(mat["box_m"])] = float(mat["epsilon"])
    electrodes = layout.get("electrodes", [])
    for el in electrodes:
        idx = _voxels_in(el["box_m"])
        mask[idx] = True
        val[idx] = float(el["voltage"])
    if not mask.any():
        raise ValueError("layout defines no electrode voxels; add 'electrodes' "
                         "with a 'voltage' each")
    return VoxelGrid(spacing=h, permittivity=eps, dirichlet_mask=mask,
                     dirichlet_value=val, origin=(0.5 * h, 0.5 * h, 0.5 * h))
