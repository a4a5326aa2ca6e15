"""Electron-nuclear spin system for a single group-V donor in silicon.

The model is two coupled spin-1/2 particles. Basis order is fixed
throughout the package as

    |e up, n up>, |e up, n dn>, |e dn, n up>, |e dn, n dn>

with the electron as the left Kronecker factor. All Hamiltonians are kept
in ordinary frequency units (Hz); the single conversion to angular phase
happens inside the propagator. Drive frequencies (``omega``) are the one
exception and are angular (rad/s), since they sit inside a cosine.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Tuple

import numpy as np

from .qmath import hermitian_eig, kron

# Gyromagnetic ratios for Si:P, ordinary frequency per tesla.
GAMMA_E_HZ_PER_T = 28.025e9  # electron, Hz/T
GAMMA_N_HZ_PER_T = 17.235e6  # 31P nucleus, Hz/T

_PAULI_HALF = {
    "x": np.array([[0.0, 0.5], [0.5, 0.0]], dtype=np.complex128),
    "y": np.array([[0.0, -0.5j], [0.5j, 0.0]], dtype=np.complex128),
    "z": np.array([[0.5, 0.0], [0.0, -0.5]], dtype=np.complex128),
}
_ID2 = np.eye(2, dtype=np.complex128)

BASIS_LABELS = ("|e+,n+>", "|e+,n->", "|e-,n+>", "|e-,n->")

# Canonical transition names, usable on the command line.
NMR_E_DOWN = "nmr_e_down"
NMR_E_UP = "nmr_e_up"
ESR_N_UP = "esr_n_up"
ESR_N_DOWN = "esr_n_down"
TRANSITION_NAMES = (ESR_N_UP, ESR_N_DOWN, NMR_E_DOWN, NMR_E_UP)


@dataclass(frozen=True)
class SpinOperators:
    """The six spin-1/2 operators on the 4-dimensional product space."""

    Sx: np.ndarray
    Sy: np.ndarray
    Sz: np.ndarray
    Ix: np.ndarray
    Iy: np.ndarray
    Iz: np.ndarray

    def s_dot_i(self) -> np.ndarray:
        """Isotropic exchange S.I (hyperfine contact form)."""
        return self.Sx @ self.Ix + self.Sy @ self.Iy + self.Sz @ self.Iz


def make_spin_operators() -> SpinOperators:
    """Build S = s x 1 (electron) and I = 1 x s (nucleus) in the fixed basis."""
    return SpinOperators(
        Sx=kron(_PAULI_HALF["x"], _ID2),
        Sy=kron(_PAULI_HALF["y"], _ID2),
        Sz=kron(_PAULI_HALF["z"], _ID2),
        Ix=kron(_ID2, _PAULI_HALF["x"]),
        Iy=kron(_ID2, _PAULI_HALF["y"]),
        Iz=kron(_ID2, _PAULI_HALF["z"]),
    )


_OPS = make_spin_operators()
_S_DOT_I = _OPS.s_dot_i()


@dataclass(frozen=True)
class DeviceParams:
    """Static device working point plus the (single-tone) drive settings.

    gamma_e, gamma_n : Hz/T gyromagnetic ratios (both entered positive;
        the nuclear Zeeman term carries an explicit minus sign).
    b0 : static field, tesla.
    a_iso : isotropic hyperfine coupling, Hz.
    b_ac : drive amplitude, tesla.
    omega : drive angular frequency, rad/s.
    phase : drive phase offset, radians, applied as cos(omega*t + phase).
    """

    gamma_e: float = GAMMA_E_HZ_PER_T
    gamma_n: float = GAMMA_N_HZ_PER_T
    b0: float = 0.9977
    a_iso: float = 117.6e6
    b_ac: float = 0.0
    omega: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        for name in ("gamma_e", "gamma_n", "b0", "a_iso", "b_ac"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
        if not np.isfinite(self.omega) or self.omega < 0.0:
            raise ValueError(f"omega must be finite and >= 0, got {self.omega!r}")

    def with_(self, **changes) -> "DeviceParams":
        return replace(self, **changes)


def default_si_p_params() -> DeviceParams:
    """Si:P working point used across the package.

    b0 = 0.9977 T places the low-frequency nuclear line near
    2*pi*(a_iso/2 + gamma_n*b0) = 477.5 Mrad/s with a_iso at its tuned
    value of 117.6 MHz. The drive is off by default.
    """
    return DeviceParams(b0=0.9977, a_iso=117.6e6, b_ac=0.0, omega=0.0, phase=0.0)


def one_tesla_params() -> DeviceParams:
    """Same device at a round 1.0000 T for comparison studies."""
    return DeviceParams(b0=1.0, a_iso=117.6e6, b_ac=0.0, omega=0.0, phase=0.0)


def static_hamiltonian(p: DeviceParams) -> np.ndarray:
    """Drive-free Hamiltonian in Hz: a_iso S.I + gamma_e b0 Sz - gamma_n b0 Iz."""
    return (
        p.a_iso * _S_DOT_I
        + (p.gamma_e * p.b0) * _OPS.Sz
        - (p.gamma_n * p.b0) * _OPS.Iz
    )


def drive_operator(p: DeviceParams) -> np.ndarray:
    """Amplitude operator of the transverse drive, in Hz.

    The full drive term is cos(omega*t + phase) times this matrix; the
    oscillating field couples to both spins with opposite sign, like the
    static Zeeman terms.
    """
    return (p.gamma_e * p.b_ac) * _OPS.Sx - (p.gamma_n * p.b_ac) * _OPS.Ix


def hamiltonian_at(t: float, p: DeviceParams) -> np.ndarray:
    """Instantaneous Hamiltonian (Hz) at lab time t (seconds)."""
    h = static_hamiltonian(p)
    if p.b_ac != 0.0:
        h = h + np.cos(p.omega * t + p.phase) * drive_operator(p)
    return h


def check_high_field_regime(p: DeviceParams) -> None:
    """Validate the working-point assumptions behind the 4-level labeling.

    The level diagram (and the transition naming) assumes a Zeeman
    splitting much larger than the hyperfine coupling, and a nuclear
    Zeeman term small enough that the nuclear ordering is hyperfine
    dominated. Raises ValueError naming the violated assumption.
    """
    zeeman_sum = (p.gamma_e + p.gamma_n) * p.b0
    if not zeeman_sum > 10.0 * p.a_iso:
        raise ValueError(
            "high-field assumption violated: (gamma_e + gamma_n)*b0 = "
            f"{zeeman_sum:.4e} Hz is not > 10 * a_iso = {10 * p.a_iso:.4e} Hz"
        )
    if not (p.gamma_n * p.b0) < 0.5 * p.a_iso:
        raise ValueError(
            "nuclear-ordering assumption violated: gamma_n*b0 = "
            f"{p.gamma_n * p.b0:.4e} Hz is not < a_iso/2 = {0.5 * p.a_iso:.4e} Hz"
        )


@dataclass(frozen=True)
class Transition:
    """One allowed single-spin transition between exact eigenstates.

    frequency_hz is the exact eigenvalue difference; first_order_hz is the
    textbook high-field formula for the same line. lower/upper index into
    the ascending eigenvalue array of the level structure.
    """

    frequency_hz: float
    first_order_hz: float
    lower: int
    upper: int


@dataclass(frozen=True)
class LevelStructure:
    energies_hz: np.ndarray          # ascending, shape (4,)
    states: np.ndarray               # eigenvector columns matching energies
    labels: Tuple[str, str, str, str]
    transitions: Dict[str, Transition]


def level_structure(p: DeviceParams) -> LevelStructure:
    """Exact 4-level spectrum with named ESR/NMR transitions.

    Energies come from diagonalizing ``static_hamiltonian``; each level is
    tagged by its dominant product-basis component. The four transitions
    flip one spin each:

    - ``esr_n_up``/``esr_n_down``: electron flips, nucleus up/down.
      First-order frequency gamma_e*b0 +/- a_iso/2.
    - ``nmr_e_down``/``nmr_e_up``: nucleus flips, electron down/up.
      First-order frequency a_iso/2 +/- gamma_n*b0.

    The exact frequencies differ from the first-order formulas by the
    level repulsion of the two flip-flop-coupled central states, roughly
    a_iso^2 / (4 (gamma_e + gamma_n) b0); at the default working point
    that is about 124 kHz, which matters for resonant control because it
    is far larger than the kHz-scale drive linewidth.
    """
    check_high_field_regime(p)
    h0 = static_hamiltonian(p)
    w, v = hermitian_eig(h0)
    dominant = [int(np.argmax(np.abs(v[:, k]))) for k in range(4)]
    if sorted(dominant) != [0, 1, 2, 3]:
        raise ValueError(
            "level labeling failed: eigenstates are not dominated by "
            "distinct basis states (working point too far from high field)"
        )
    labels = tuple(BASIS_LABELS[d] for d in dominant)
    level_of = {d: k for k, d in enumerate(dominant)}  # basis index -> level
    e_up_n_up = level_of[0]
    e_up_n_dn = level_of[1]
    e_dn_n_up = level_of[2]
    e_dn_n_dn = level_of[3]

    def _trans(lo: int, hi: int, first_order: float) -> Transition:
        return Transition(
            frequency_hz=float(w[hi] - w[lo]),
            first_order_hz=float(first_order),
            lower=lo,
            upper=hi,
        )

    ge_b0 = p.gamma_e * p.b0
    gn_b0 = p.gamma_n * p.b0
    transitions = {
        ESR_N_UP: _trans(e_dn_n_up, e_up_n_up, ge_b0 + p.a_iso / 2),
        ESR_N_DOWN: _trans(e_dn_n_dn, e_up_n_dn, ge_b0 - p.a_iso / 2),
        NMR_E_DOWN: _trans(e_dn_n_up, e_dn_n_dn, p.a_iso / 2 + gn_b0),
        NMR_E_UP: _trans(e_up_n_dn, e_up_n_up, p.a_iso / 2 - gn_b0),
    }
    for name, tr in transitions.items():
        if tr.frequency_hz <= 0.0:
            raise ValueError(f"transition {name} came out non-positive; "
                             "working point violates the level ordering")
    return LevelStructure(energies_hz=w, states=v, labels=labels,
                          transitions=transitions)


def basis_state(index: int) -> np.ndarray:
    """Unit vector for one product-basis state (0..3, see BASIS_LABELS)."""
    if index not in (0, 1, 2, 3):
        raise ValueError(f"basis index must be 0..3, got {index}")
    e = np.zeros(4, dtype=np.complex128)
    e[index] = 1.0
    return e


def bell_target_state() -> np.ndarray:
    """(|e-,n-> + |e+,n+>)/sqrt(2), the prepared entangled state."""
    t = np.zeros(4, dtype=np.complex128)
    t[0] = 1.0 / np.sqrt(2.0)
    t[3] = 1.0 / np.sqrt(2.0)
    return t
