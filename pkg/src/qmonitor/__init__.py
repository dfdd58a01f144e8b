"""Monitoring of noisy quantum gate sets from streams of random-circuit samples.

The estimator fits one CPTP channel per (gate, target) of a device to
measured bit-string counts by regularized maximum likelihood, with the
channels parametrized as Kraus isometries and optimized by Riemannian Adam.
"""

from .channels import (
    Channel,
    CPTPReport,
    apply,
    choi_to_kraus,
    compose,
    gate_fidelity,
    identity_channel,
    kraus_to_choi,
    povm_effect,
    random_channel,
    tensor,
    unitary_channel,
    validate_cptp,
)
from .circuits import (
    DEFAULT_DEVICE,
    Circuit,
    CircuitError,
    Device,
    GateSet,
    Sample,
    parse_circuit,
    parse_sample,
    random_circuit,
    random_circuits,
    serialize_circuit,
    serialize_sample,
    validate_circuit,
)
from .estimator import (
    Checkpoint,
    DataWindow,
    EstimationError,
    EstimatorConfig,
    FitResult,
    KrausIsometry,
    Record,
    fit,
    loss,
    loss_gradient,
    monitoring_run,
    project_to_tangent,
    radam_step,
    regularizer,
    retract,
)
from .metrics import (
    CalibrationMatrix,
    DistanceReport,
    ErrorRates,
    calibration_matrix,
    diamond_distance,
    distance_report,
    error_rates_estimated,
    error_rates_from_calibration,
    layerwise_curves,
    povm_l1_distance,
    prediction_inaccuracy,
)
from .noise import (
    NoiseParams,
    amplitude_damping,
    build_noisy_cx,
    build_noisy_single,
    depolarizing,
    load_noise_table,
    phase_damping,
    smoothed_unitary,
    true_gateset,
)
from .simulator import (
    log_likelihood,
    outcome_distribution,
    outcome_probability,
    run_circuit,
    sample_outcomes,
)

__version__ = "0.1.0"
