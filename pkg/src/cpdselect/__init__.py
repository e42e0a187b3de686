"""Feature selection by low-rank CPD modeling of the joint PMF and submodular greedy search."""

from .cpd_em import (
    FitConfig,
    FitReport,
    LowRankPMF,
    cross_validate_rank,
    em_fit,
    kl_divergence,
    predict_label_posterior,
)
from .data_pipeline import (
    DiscreteDataset,
    EqualWidthDiscretizer,
    ExperimentReport,
    RawTable,
    SplitSpec,
    discretize_equal_width,
    ingest_csv,
    run_experiment,
    split,
)
from .evaluation import AccuracyCurve, accuracy, knn_classify
from .info_theory import (
    EntropyEstimate,
    bandgap_constant,
    conditional_entropy_given_latent,
    joint_entropy_exact,
    joint_entropy_mc,
    mi_subset_latent,
    mi_subset_target,
)
from .pmf_tensor import (
    CpdModel,
    SparseCountTensor,
    build_empirical_pmf,
    marginalize,
    model_eval,
    random_model,
    sample_from_model,
)
from .selection import (
    CPDFeatureSelector,
    SelectionResult,
    exhaustive_select,
    greedy_select,
    lazy_greedy_select,
    remodeling_select,
)

__version__ = "0.1.0"
