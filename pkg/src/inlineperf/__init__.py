"""Synthetic-program inlining pipeline: a compact IR with a deterministic
performance oracle, feature extraction, autotuned data collection, a
speedup regression model, and a reward-driven inlining policy.
"""

from .analysis import (
    block_frequencies,
    call_graph_height,
    call_graph_info,
    compute_dominators,
    detect_loops,
    is_recursive,
)
from .dataset import (
    CollectConfig,
    DatasetError,
    TrainingSample,
    autotune_collect,
    contradiction_fraction,
    dedup,
    eligible_sites,
    samples_from_csv,
    samples_to_csv,
)
from .evaluate import (
    EvalReport,
    EvaluateError,
    autotune_regions,
    evaluate,
    region_report,
)
from .features import (
    CALLSITE_FEATURE_NAMES,
    FUNCTION_FEATURE_NAMES,
    extract_callsite_features,
    extract_function_features,
)
from .generate import GenConfig, generate_program
from .inline import apply_inline, enumerate_callsites
from .ir import (
    BasicBlock,
    CallSite,
    Function,
    Instr,
    Module,
    Opcode,
    ProgramError,
    SchemaError,
    module_from_json,
    module_to_json,
)
from .perf_oracle import (
    CostModel,
    DEFAULT_COST_MODEL,
    Measurement,
    apply_unroll_config,
    measure,
    module_runtime,
    static_cost,
)
from .policy import (
    PolicyParams,
    TrainerConfig,
    advise,
    init_policy,
    rollout,
    train_policy,
)
from .preprocess import PreprocessError, PreprocessState, fit_preprocess
from .speedup_model import (
    ModelError,
    RegressionModel,
    TrainSpec,
    cross_validate,
    init_model,
    predict_speedup,
    train,
)

__version__ = "0.1.0"
