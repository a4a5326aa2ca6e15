"""Propagator correctness: order of accuracy, unitarity, frames, dephasing.

Independent references used here: scipy.linalg.expm for single steps,
numpy.linalg.eigh for free-evolution phases, the two-level rotating-wave
formula for a resonant drive, and Richardson comparison against a 16x
finer step for the convergence order.
"""

import math

import numpy as np
import pytest
from scipy.linalg import expm as scipy_expm

from donorlab.evolution import (DEPHASING_SI_P, StepPolicy, fidelity,
                                interaction_frame_state, propagate,
                                propagate_density, step, trajectory_to_csv)
from donorlab.spin_system import (ESR_N_UP, NMR_E_DOWN, basis_state,
                                  default_si_p_params, hamiltonian_at,
                                  level_structure, static_hamiltonian)

TWO_PI = 2.0 * math.pi


@pytest.fixture(scope="module")
def esr_drive():
    """Device driven exactly on the nucleus-up electron resonance."""
    p = default_si_p_params().with_(b_ac=1e-4)
    ls = level_structure(p)
    tr = ls.transitions[ESR_N_UP]
    p = p.with_(omega=TWO_PI * tr.frequency_hz)
    lower = np.ascontiguousarray(ls.states[:, tr.lower])
    upper = np.ascontiguousarray(ls.states[:, tr.upper])
    return p, lower, upper


def test_single_step_matches_scipy_expm(esr_drive):
    p, lower, _ = esr_drive
    dt = 2.0e-12
    t = 1.7e-9
    got = step(lower, t, dt, p)
    h_mid = hamiltonian_at(t + dt / 2.0, p)
    want = scipy_expm(-1j * TWO_PI * h_mid * dt) @ lower
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_convergence_is_second_order(esr_drive):
    # halving dt should cut the error ~4x when judged against a dt/16 run
    p, lower, _ = esr_drive
    duration = 5e-8
    period = TWO_PI / p.omega
    base_dt = period / 16.0

    def final_state(dt):
        _, states = propagate(lower, 0.0, duration, p,
                              StepPolicy(dt_max=dt, points_per_drive_period=8))
        return states[-1]

    ref = final_state(base_dt / 16.0)
    e1 = np.linalg.norm(final_state(base_dt) - ref)
    e2 = np.linalg.norm(final_state(base_dt / 2.0) - ref)
    assert 3.5 <= e1 / e2 <= 4.5


def test_unitarity_over_long_drive(esr_drive):
    p, lower, _ = esr_drive
    _, states = propagate(lower, 0.0, 4e-7, p)  # ~220k steps
    norms = np.linalg.norm(states, axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-10


def test_resonant_rabi_matches_rwa(esr_drive):
    # two-level rotating-wave prediction: P_flip = sin^2(pi*f_R*t) with
    # f_R = gamma_e * b_ac / 2 for the electron line
    p, lower, upper = esr_drive
    f_rabi = p.gamma_e * p.b_ac / 2.0
    times, states = propagate(lower, 0.0, 1.2e-7, p, stride=64)
    got = np.abs(states @ upper.conj()) ** 2
    want = np.sin(math.pi * f_rabi * times) ** 2
    assert np.max(np.abs(got - want)) < 5e-3


def test_static_evolution_is_exact_in_one_step():
    # with no drive the propagator is an exact matrix exponential, so a
    # single giant step must match the eigenbasis phase formula
    p = default_si_p_params()
    h0 = static_hamiltonian(p)
    w, v = np.linalg.eigh(h0)
    psi0 = np.array([0.5, 0.5, 0.5, 0.5], dtype=complex)
    t = 5.37e-7
    _, states = propagate(psi0, 0.0, t, p)
    want = v @ (np.exp(-1j * TWO_PI * w * t) * (v.conj().T @ psi0))
    np.testing.assert_allclose(states[-1], want, atol=1e-12)


def test_sampling_contract():
    p = default_si_p_params().with_(b_ac=1e-4, omega=4.78e8)
    t0, duration = 1e-6, 3.3e-8
    times, states = propagate(basis_state(3), t0, duration, p, stride=7)
    assert times[0] == t0
    assert times[-1] == t0 + duration
    assert np.all(np.diff(times) > 0)
    assert states.shape == (len(times), 4)
    # zero duration: just the initial sample
    times0, states0 = propagate(basis_state(3), 0.0, 0.0, p)
    assert len(times0) == 1 and np.array_equal(states0[0], basis_state(3))


def test_step_count_guard():
    p = default_si_p_params()
    with pytest.raises(ValueError, match="steps"):
        propagate(basis_state(0), 0.0, 2.0, p, StepPolicy(dt_max=1e-9))


def test_policy_validation():
    with pytest.raises(ValueError):
        StepPolicy(points_per_drive_period=4)
    with pytest.raises(ValueError):
        StepPolicy(dt_max=0.0)
    with pytest.raises(ValueError):
        StepPolicy(dephasing_rates=(-1.0, 0.0))
    pol = StepPolicy(dt_max=1e-9, points_per_drive_period=10)
    assert pol.step_size(0.0) == 1e-9
    assert pol.step_size(TWO_PI * 1e12) == pytest.approx(1e-13)
    assert StepPolicy().step_size(0.0) is None


def test_propagate_input_checks():
    p = default_si_p_params()
    with pytest.raises(ValueError, match="shape"):
        propagate(np.ones(3), 0.0, 1e-9, p)
    with pytest.raises(ValueError, match="stride"):
        propagate(basis_state(0), 0.0, 1e-9, p, stride=0)
    with pytest.raises(ValueError, match="dt"):
        step(basis_state(0), 0.0, -1e-9, p)


# --- frames and fidelity ----------------------------------------------------

def test_interaction_frame_undoes_free_evolution():
    p = default_si_p_params()
    h0 = static_hamiltonian(p)
    psi0 = np.array([0.6, 0.0, 0.48j, 0.64], dtype=complex)
    psi0 /= np.linalg.norm(psi0)
    t = 7.7e-7
    _, states = propagate(psi0, 0.0, t, p)
    back = interaction_frame_state(states[-1], h0, t)
    np.testing.assert_allclose(back, psi0, atol=1e-11)
    assert fidelity(states[-1], psi0, phase_tracked=True, static_h=h0,
                    elapsed=t) == pytest.approx(1.0, abs=1e-11)


def test_fidelity_basics():
    a = basis_state(0)
    b = (basis_state(0) + basis_state(3)) / math.sqrt(2)
    assert fidelity(a, a) == pytest.approx(1.0)
    assert fidelity(a, basis_state(1)) == 0.0
    assert fidelity(b, a) == pytest.approx(0.5)
    # global phase on either argument is irrelevant
    assert fidelity(np.exp(0.3j) * b, b) == pytest.approx(1.0, abs=1e-14)


def test_fidelity_rejects_unnormalized():
    with pytest.raises(ValueError, match="normalized"):
        fidelity(2.0 * basis_state(0), basis_state(0))
    with pytest.raises(ValueError, match="static_h"):
        fidelity(basis_state(0), basis_state(0), phase_tracked=True)


# --- density matrices and dephasing -----------------------------------------

def test_density_tracks_pure_state(esr_drive):
    p, lower, _ = esr_drive
    rho0 = np.outer(lower, lower.conj())
    duration = 2e-8
    _, rhos = propagate_density(rho0, 0.0, duration, p)
    _, psis = propagate(lower, 0.0, duration, p)
    want = np.outer(psis[-1], psis[-1].conj())
    np.testing.assert_allclose(rhos[-1], want, atol=1e-12)
    assert np.trace(rhos[-1]).real == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("pair,expected_rate", [
    ((0, 1), "rn"),          # same electron label, nuclear flip
    ((0, 3), "re"),          # electron flip, same nucleus
    ((1, 3), "re+rn"),       # both differ
])
def test_dephasing_rates_by_level_pair(pair, expected_rate):
    # free evolution with artificial (fast) rates; coherence between
    # static eigenstates must decay as exp(-Gamma t) with Gamma set by
    # which spin labels differ, while populations stay put
    re_, rn_ = 3.0e4, 1.1e4
    rate = {"rn": rn_, "re": re_, "re+rn": re_ + rn_}[expected_rate]
    p = default_si_p_params()
    ls = level_structure(p)
    i, j = pair
    phi = (ls.states[:, i] + ls.states[:, j]) / math.sqrt(2)
    rho0 = np.outer(phi, phi.conj())
    t = 3.1e-5
    policy = StepPolicy(dt_max=t / 7.3, dephasing_rates=(re_, rn_))
    _, rhos = propagate_density(rho0, 0.0, t, p, policy)
    in_eigen = ls.states.conj().T @ rhos[-1] @ ls.states
    assert abs(in_eigen[i, j]) == pytest.approx(0.5 * math.exp(-rate * t),
                                                rel=1e-9)
    assert in_eigen[i, i].real == pytest.approx(0.5, abs=1e-12)
    assert in_eigen[j, j].real == pytest.approx(0.5, abs=1e-12)


def test_dephasing_presets():
    assert DEPHASING_SI_P == (2.0, 1.0 / 30.0)


def test_density_validation():
    p = default_si_p_params()
    bad = np.eye(4, dtype=complex)  # trace 4
    with pytest.raises(ValueError, match="trace"):
        propagate_density(bad, 0.0, 1e-9, p)
    nonherm = np.diag([1.0, 0.0, 0.0, 0.0]).astype(complex)
    nonherm[0, 1] = 0.5
    with pytest.raises(ValueError, match="Hermitian"):
        propagate_density(nonherm, 0.0, 1e-9, p)
    neg = np.diag([1.2, -0.2, 0.0, 0.0]).astype(complex)
    with pytest.raises(ValueError, match="negative"):
        propagate_density(neg, 0.0, 1e-9, p)


# --- trajectory export -------------------------------------------------------

def test_trajectory_csv_round_trip(tmp_path, esr_drive):
    p, lower, upper = esr_drive
    times, states = propagate(lower, 0.0, 3e-9, p, stride=8)
    path = tmp_path / "traj.csv"
    trajectory_to_csv(path, times, states, target=upper)
    header = path.read_text().splitlines()[0].split(",")
    assert header[0] == "t_seconds"
    assert header[-1] == "fidelity"
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    assert data.shape == (len(times), 14)
    np.testing.assert_allclose(data[:, 0], times, rtol=0, atol=0)
    amps = data[:, 1:9:2] + 1j * data[:, 2:9:2]
    np.testing.assert_allclose(amps, states, atol=1e-15)
    np.testing.assert_allclose(data[:, 9:13], np.abs(states) ** 2, atol=1e-15)
    np.testing.assert_allclose(
        data[:, 13], np.abs(states @ upper.conj()) ** 2, atol=1e-15)
