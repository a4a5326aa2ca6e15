"""donorlab: desk-scale design and verification of single-donor spin qubits.

The package chains three layers that usually live in separate tools:
device electrostatics on a voxel grid, hyperfine-coupling models that turn
fields and donor positions into an isotropic coupling, and full
time-dependent electron-nuclear spin dynamics with simulation-based pulse
calibration. The workflow module ties them into reproducible experiment
runs (single shot or Monte Carlo over placement uncertainty), and the
``donorlab`` CLI exposes the same stages as subcommands.
"""

from .electrostatics import (FieldGrid, SolveError, VoxelGrid,
                             export_field_table, grid_from_layout,
                             import_field_table, refine_region, sample_field,
                             solve_poisson)
from .evolution import (DEPHASING_SI_P, StepPolicy, fidelity,
                        interaction_frame_state, propagate, propagate_density,
                        step, trajectory_to_csv)
from .hfs import (BULK_SI_DECAY_LENGTH, BULK_SI_P_GAUSS, DonorPositionModel,
                  HfsValue, SlaterOrbitalModel, fermi_contact_relative,
                  fit_slater, gauss_to_hz, hfs_at_position, hz_to_gauss,
                  scale_by_size, slater_cumulative, stark_scale)
from .qmath import EigenDecomposition, expm_unitary, hermitian_eig, kron
from .spin_system import (BASIS_LABELS, ESR_N_DOWN, ESR_N_UP,
                          GAMMA_E_HZ_PER_T, GAMMA_N_HZ_PER_T, NMR_E_DOWN,
                          NMR_E_UP, DeviceParams, LevelStructure, Transition,
                          basis_state, bell_target_state,
                          check_high_field_regime, default_si_p_params,
                          drive_operator, hamiltonian_at, level_structure,
                          make_spin_operators, one_tesla_params,
                          static_hamiltonian)
from .workflow import (AdiabaticCheck, CalibrationError, EnsembleResult,
                       EnsembleSampleError, EnsembleSpec, FidelityTrace,
                       PipelineError, PulseSegment, PulseSequence,
                       RabiCalibration, SampleRecord, bell_calibrations,
                       bell_prep_sequence, calibrate_rabi, check_adiabatic,
                       run_ensemble, run_experiment, run_pipeline,
                       write_trace_csv)

__version__ = "0.1.0"

__all__ = [
    "AdiabaticCheck", "BASIS_LABELS", "BULK_SI_DECAY_LENGTH",
    "BULK_SI_P_GAUSS", "CalibrationError", "DEPHASING_SI_P", "DeviceParams",
    "DonorPositionModel", "EigenDecomposition", "EnsembleResult",
    "EnsembleSampleError", "EnsembleSpec", "ESR_N_DOWN", "ESR_N_UP",
    "FidelityTrace", "FieldGrid", "GAMMA_E_HZ_PER_T", "GAMMA_N_HZ_PER_T",
    "HfsValue", "LevelStructure", "NMR_E_DOWN", "NMR_E_UP", "PipelineError",
    "PulseSegment", "PulseSequence", "RabiCalibration", "SampleRecord",
    "SlaterOrbitalModel", "SolveError", "StepPolicy", "Transition",
    "VoxelGrid", "basis_state", "bell_calibrations", "bell_prep_sequence",
    "bell_target_state", "calibrate_rabi", "check_adiabatic",
    "check_high_field_regime", "default_si_p_params", "drive_operator",
    "expm_unitary", "export_field_table", "fermi_contact_relative",
    "fidelity", "fit_slater", "gauss_to_hz", "grid_from_layout",
    "hamiltonian_at", "hermitian_eig", "hfs_at_position", "hz_to_gauss",
    "import_field_table", "interaction_frame_state", "kron",
    "level_structure", "make_spin_operators", "one_tesla_params",
    "propagate", "propagate_density", "refine_region", "run_ensemble",
    "run_experiment", "run_pipeline", "sample_field", "scale_by_size",
    "slater_cumulative", "solve_poisson", "static_hamiltonian", "step",
    "stark_scale", "trajectory_to_csv", "write_trace_csv",
]
