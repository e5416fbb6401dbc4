"""Priority-aware random-order values for cooperative games.

Core objects: a :class:`~priorder.model.PriorityGraph` (weighted, possibly
cyclic precedence matrix with a temperature), a
:class:`~priorder.model.SoftPriority` (positive per-player weights, possibly
from latent scores), and their pairing :class:`~priorder.model.OrderParams`,
which defines a distribution over player orderings.  Values of a coalition
utility are expectations of marginal contributions under that distribution.
"""

from .errors import MissingUtilityError, SizeLimitError, ValidationError
from .model import (
    OrderParams,
    PriorityGraph,
    SoftPriority,
    dump_params,
    fingerprint,
    load_params,
    log_unnormalized_pmf,
    log_unnormalized_pmf_batch,
    multiplicative_weights,
    stage_factors,
    stage_violation,
    total_violation,
    validate,
)
from .sampler import (
    ChainConfig,
    SampleBatch,
    exact_backward_sample,
    greedy_init,
    load_batch,
    run_chain,
    run_ensemble,
    save_batch,
    swap_log_ratio,
)
from .exact import dp_normalizer, dp_pairwise_probs, enumerate_pmf, exact_value
from .games import (
    CachedOracle,
    ScenarioInstance,
    SumOfRaceGame,
    SumOfUnanimityGame,
    TableOracle,
    UtilityOracle,
    scenario1_closed_form,
    scenario1_instance,
    scenario2_closed_form,
    scenario2_instance,
    table_oracle,
    wrap_cached,
)
from .estimators import (
    CoefficientEstimates,
    SurrogateModel,
    ValueEstimate,
    combine_replicates,
    direct_mc,
    draw_proposal_subsets,
    ess,
    estimate_coefficients,
    fit_surrogate,
    hybrid_estimate,
    marginal_contributions,
    snis_estimate,
    snis_weights,
    surrogate_value,
    two_stage_estimate,
)
from .sweep import SweepPlan, SweepReport, group_summary, run_sweep
from .diagnostics import (
    MixingResult,
    empirical_pairwise,
    pairwise_deviation,
    practical_mixing_time,
)

__version__ = "0.1.0"
