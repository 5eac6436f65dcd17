"""Tempered MCMC by data subsampling.

Samplers: plain MH/HMC, parallel tempering (PT), tempered transitions (TT),
and their subsampled variants (SPT, STT) that heat a chain by evaluating the
likelihood on nested random data subsets instead of exponentiating it.
Includes multi-chain R-hat/ESS diagnostics, an analytic cost model, and an
experiment harness with a CLI.
"""

from .core import (
    Dataset,
    Ladder,
    RngStream,
    SubsampleFamily,
    draw_nested_subsamples,
    make_geometric_ladder,
    subsample_sizes,
)
from .costmodel import CostParams, compare_measured, relative_cost
from .diagnostics import (
    ChainSet,
    DiagnosticReport,
    between_within,
    converged,
    convergence_time,
    diagnostic_report,
    ess,
    ess_per_second,
    median_r_hat,
    r_hat,
    var_hat,
)
from .harness import (
    ExperimentConfig,
    initial_points,
    run_experiment,
    sweep,
)
from .kernels import KernelConfig, TransitionStats, hmc_step, leapfrog, mh_step
from .models import (
    GpNumericalError,
    GpRegressionModel,
    MvnMeanModel,
    ard_kernel,
    mvn_analytic_posterior,
    simulate_gp_data,
    simulate_mvn_data,
)
from .tempering import (
    ChainConfig,
    ChainTrace,
    EnsembleState,
    TemperedTarget,
    pt_iteration,
    run_chain,
    spt_iteration,
    stt_iteration,
    swap_log_ratio,
    tempered_targets,
    tt_iteration,
)

__version__ = "0.1.0"
