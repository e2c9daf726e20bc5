"""Deterministic simulator for distributed convex optimization under
bidirectional communication compression, with exact coordinate accounting."""

from .accounting import (
    CommLedger,
    ParamChoice,
    agd_coupling,
    expected_ledger,
    select_params_optimistic,
    select_params_realistic,
    total_agd,
    total_ef21p_diana,
    total_realistic,
)
from .algorithms import (
    AdianaParams,
    AgdParams,
    Ef21pDianaParams,
    GdParams,
    RunConfig,
    Trace,
    TwoDirectionParams,
    init_2direction,
    init_adiana,
    init_ef21p_diana,
    run,
    step_2direction,
    step_adiana,
    step_agd,
    step_ef21p_diana,
    step_gd,
)
from .compressors import (
    CompressorSpec,
    RngStream,
    alpha_of,
    apply_compressor,
    expected_density,
    omega_of,
    rand_k,
    scale_to_biased,
    top_k,
)
from .harness import (
    ExperimentConfig,
    best_of,
    emit_plot,
    run_experiment,
    toy_dataset_path,
)
from .problems import (
    Dataset,
    DistributedProblem,
    LogRegProblem,
    QuadraticProblem,
    QuadraticSpec,
    estimate_constants,
    load_dataset,
    logreg_grad,
    logreg_value,
    make_logreg,
    make_quadratic,
    parse_libsvm,
    partition,
    reference_minimize,
)
from .schedule import (
    ScheduleParams,
    ScheduleState,
    audit_sequences,
    calc_learning_rates,
    default_gamma0,
    lbar_theory,
    strongly_convex_q,
    theta_min,
)

__version__ = "0.1.0"
