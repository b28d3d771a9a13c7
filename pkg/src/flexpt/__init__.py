"""Flexible-partition Polya tree inference.

Density estimation and two-sample comparison on (0,1]^d with a prior over
recursive binary partitions (random cut dimensions and grid locations),
latent Markov states along the tree, and a hybrid sampler: sequential Monte
Carlo over tree structures plus exact message passing given each tree.
"""

from .geometry import Decision, GroupedDataset, Hyperrectangle, count_in, split, unit_cube
from .message_passing import (
    MessageSet,
    compute_messages,
    downward_pass,
    global_null_probability,
    map_tree_index,
    posterior_transitions,
    upward_pass,
)
from .models import (
    AdaptiveSmoothnessModel,
    PlainPTModel,
    TwoSampleCouplingModel,
    apt_model,
    beta_binomial_log_marginal,
    make_model,
    mrs_model,
    plain_pt_model,
)
from .outputs import (
    FitResult,
    TwoSampleReport,
    effect_size,
    finish_fit,
    fit_density,
    fit_twosample,
    leaf_masses,
    population_null_probability,
    predictive_density_at,
    predictive_masses,
    predictive_score,
    two_sample_report,
)
from .priors import TreePriorConfig, location_weights, log_location_weights, spike_weights
from .smc import (
    Particle,
    SMCConfig,
    SMCResult,
    build_proposal,
    ess,
    lookahead_log_score,
    resample_tempered,
    run,
    smc_step,
)
from .tree import NodeView, PartitionTree, StopConfig, should_terminate

__version__ = "0.1.0"
