"""Hyperfine coupling models: bulk calibration, size and field scaling,
Slater-orbital radial profile, and donor-depth dependence.

The contact coupling is proportional to the donor-site spin density, but
absolute densities from electronic-structure codes are unreliable, so
every operation here scales the measured bulk reference (42 G for P in
bulk silicon) by a density ratio instead of evaluating the prefactor.
Values are stored in Hz internally; gauss appears only at the boundaries.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares

GAUSS_TO_TESLA = 1e-4

BULK_SI_P_GAUSS = 42.0            # measured bulk Si:P contact coupling
BULK_SI_DECAY_LENGTH = 30e-9      # bulk donor-orbital decay length, meters


@dataclass(frozen=True)
class HfsValue:
    """A hyperfine coupling with an explicit unit ('gauss' or 'Hz')."""

    value: float
    unit: str

    def __post_init__(self):
        if self.unit not in ("gauss", "Hz"):
            raise ValueError(f"unit must be 'gauss' or 'Hz', got {self.unit!r}")
        if not np.isfinite(self.value) or self.value < 0.0:
            raise ValueError(f"hyperfine value must be finite and >= 0, got {self.value!r}")


def gauss_to_hz(a: HfsValue, gamma_e: float) -> HfsValue:
    """Convert a contact coupling quoted in gauss to Hz: A[Hz] = A[G]*1e-4*gamma_e.

    The Hz-per-gauss factor is formed first so the conversion is the exact
    inverse of hz_to_gauss (and 42 G lands on 117705000.0 Hz on the nose).
    """
    if a.unit != "gauss":
        raise ValueError(f"expected a gauss value, got unit {a.unit!r}")
    return HfsValue(a.value * (GAUSS_TO_TESLA * gamma_e), "Hz")


def hz_to_gauss(a: HfsValue, gamma_e: float) -> HfsValue:
    if a.unit != "Hz":
        raise ValueError(f"expected an Hz value, got unit {a.unit!r}")
    return HfsValue(a.value / (GAUSS_TO_TESLA * gamma_e), "gauss")


def _ratio_scale(numerator: float, denominator: float, a_ref: HfsValue,
                 what: str) -> HfsValue:
    if not numerator > 0.0 or not denominator > 0.0:
        raise ValueError(f"{what} requires positive densities, got "
                         f"{numerator!r} / {denominator!r}")
    return HfsValue(a_ref.value * (numerator / denominator), a_ref.unit)


def fermi_contact_relative(spin_density_at_donor: float, reference_density: float,
                           a_reference: HfsValue, *,
                           density_correction: float = 1.0) -> HfsValue:
    """Contact coupling scaled by the donor-site spin-density ratio.

    ``density_correction`` is an optional multiplier for workflows whose
    density source reports total orbital density rather than net spin
    density (the two can differ at the ten-percent level); default 1.
    """
    scaled = _ratio_scale(spin_density_at_donor * density_correction,
                          reference_density, a_reference, "fermi_contact_relative")
    return scaled


def scale_by_size(phi_sq_d: float, phi_sq_bulk: float, a_bulk: HfsValue) -> HfsValue:
    """Nanocrystal size scaling: A(d) = A_bulk * |phi_d(r0)|^2 / |phi_bulk(r0)|^2."""
    return _ratio_scale(phi_sq_d, phi_sq_bulk, a_bulk, "scale_by_size")


def stark_scale(phi_sq_e: float, phi_sq_0: float, a_zero_field: HfsValue) -> HfsValue:
    """Field scaling: A(E) = A(0) * |phi_E(r0)|^2 / |phi_0(r0)|^2."""
    return _ratio_scale(phi_sq_e, phi_sq_0, a_zero_field, "stark_scale")


@dataclass(frozen=True)
class SlaterOrbitalModel:
    """1s-type radial density n(r) = normalization * exp(-2 r / a)."""

    decay_length: float                      # a, meters
    normalization: Optional[float] = None    # 1/m^3; computed if omitted

    def __post_init__(self):
        if not self.decay_length > 0.0:
            raise ValueError(f"decay_length must be > 0, got {self.decay_length!r}")
        unit_norm = 1.0 / (np.pi * self.decay_length ** 3)
        if self.normalization is None:
            object.__setattr__(self, "normalization", unit_norm)
        elif abs(self.normalization / unit_norm - 1.0) > 1e-6:
            raise ValueError(
                "normalization does not integrate the density to 1: got "
                f"{self.normalization!r}, need {unit_norm!r}"
            )

    def density(self, r: float) -> float:
        return self.normalization * np.exp(-2.0 * r / self.decay_length)


def slater_cumulative(r: float, model: SlaterOrbitalModel) -> float:
    """Probability inside radius r: 1 - e^(-2R/a) (1 + 2R/a + 2R^2/a^2)."""
    if r < 0.0:
        raise ValueError(f"radius must be >= 0, got {r!r}")
    x = 2.0 * r / model.decay_length
    return float(1.0 - np.exp(-x) * (1.0 + x + 0.5 * x * x))


class SlaterFit(NamedTuple):
    model: SlaterOrbitalModel
    residual: float  # sum of squared residuals at the optimum


def fit_slater(samples: Sequence[Tuple[float, float]]) -> SlaterFit:
    """Least-squares fit of the decay length to cumulative-distribution samples."""
    pts = [(float(r), float(y)) for r, y in samples]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 samples, got {len(pts)}")
    rs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if np.any(rs <= 0.0):
        raise ValueError("sample radii must be positive")
    if len(np.unique(rs)) != len(rs):
        raise ValueError("sample radii must be distinct")

    def resid(log_a):
        a = np.exp(log_a[0])
        x = 2.0 * rs / a
        return (1.0 - np.exp(-x) * (1.0 + x + 0.5 * x * x)) - ys

    # start from the radius closest to the one-third quantile of the curve
    a0 = float(np.median(rs))
    sol = least_squares(resid, x0=[np.log(a0)], method="lm")
    a_fit = float(np.exp(sol.x[0]))
    return SlaterFit(SlaterOrbitalModel(a_fit), float(np.sum(sol.fun ** 2)))


@dataclass(frozen=True)
class DonorPositionModel:
    """Depth dependence of the contact coupling near an interface.

    A(depth) = a_reference * exp((depth - reference_depth) / depth_scale),
    optionally saturating at a bulk value for deep donors; lateral position
    has no effect in this model. The scale and reference depth are device
    specific and must be supplied by the caller.
    """

    a_reference: HfsValue
    depth_scale: float        # z0, meters
    reference_depth: float    # meters
    a_bulk: Optional[HfsValue] = None

    def __post_init__(self):
        if not self.depth_scale > 0.0:
            raise ValueError(f"depth_scale must be > 0, got {self.depth_scale!r}")
        if self.reference_depth < 0.0:
            raise ValueError(f"reference_depth must be >= 0, got {self.reference_depth!r}")
        if self.a_bulk is not None and self.a_bulk.unit != self.a_reference.unit:
            raise ValueError("a_bulk and a_reference must share a unit")


def hfs_at_position(depth: float, lateral: Tuple[float, float],
                    model: DonorPositionModel) -> HfsValue:
    """Contact coupling for a donor at (depth, lateral); lateral is ignored."""
    if depth < 0.0:
        raise ValueError(f"depth must be >= 0, got {depth!r}")
    del lateral  # exactly invariant under in-plane translation
    value = model.a_reference.value * np.exp(
        (depth - model.reference_depth) / model.depth_scale
    )
    if model.a_bulk is not None:
        value = min(value, model.a_bulk.value)
    return HfsValue(float(value), model.a_reference.unit)


def load_ratio_table(path) -> Tuple[np.ndarray, np.ndarray]:
    """Read a two-column CSV of (field magnitude V/um, density ratio).

    Rows are sorted by field magnitude; a header row is allowed.
    """
    fields, ratios = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not row[0].strip():
                continue
            try:
                f, r = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if i == 0:
                    continue  # header
                raise ValueError(f"bad ratio-table row {i + 1}: {row!r}")
            fields.append(f)
            ratios.append(r)
    if len(fields) < 2:
        raise ValueError("ratio table needs at least 2 rows")
    order = np.argsort(fields)
    return np.array(fields)[order], np.array(ratios)[order]


def load_cumulative_samples(path) -> list:
    """Read a two-column CSV of (radius meters, cumulative probability)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not row[0].strip():
                continue
            try:
                out.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if i == 0:
                    continue
                raise ValueError(f"bad cumulative-sample row {i + 1}: {row!r}")
    return out
