"""Tree-ensemble regression with hydrology metrics and hyperparameter tuning.

The pieces: dataset loading/cleaning/splitting, NSE and modified-KGE
scoring, from-scratch random forest and regularized gradient boosting
engines, bounded random search, a meta-learning recommender trained on
past trials, and a benchmarking harness. `hydrotune --help` lists the
command-line workflows.
"""

__version__ = "0.1.0"

from .dataset import (  # noqa: F401
    Dataset,
    FoldPlan,
    SplitSpec,
    clean,
    kfold_partition,
    load_csv,
    make_variants,
    save_csv,
    train_test_split,
)
from .errors import (  # noqa: F401
    DataError,
    HydrotuneError,
    MetricError,
    ParamError,
    TrialRejected,
)
from .gbt_engine import (  # noqa: F401
    BoostedModel,
    GbtHyperParams,
    fit_gbt,
    leaf_weight,
    predict_gbt,
    split_gain,
)
from .hpo import (  # noqa: F401
    SearchSpace,
    TrialRecord,
    default_params,
    evaluate_config,
    optimal_default_params,
    run_random_search,
    sample_random,
    search_space,
)
from .metalearn import (  # noqa: F401
    MetaFeatures,
    MetaModel,
    MetaRecord,
    build_meta_database,
    compute_new_optimal_defaults,
    extract_meta_features,
    recommend,
    train_meta_model,
)
from .metrics import ScoreReport, kge, nse, standardize_scores  # noqa: F401
from .rf_engine import (  # noqa: F401
    Forest,
    RegressionTree,
    RfHyperParams,
    best_split,
    fit_forest,
    predict,
)
