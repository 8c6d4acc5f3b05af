"""symode: data factory, tokenizer, and evaluation harness for the
symbolic recovery of scalar autonomous ODEs dy/dt = f(y)."""

from .codec import (
    BOS,
    EOS,
    PAD,
    CodecError,
    ConstantRangeError,
    ConstItem,
    DetokenizeError,
    TokenItem,
    Vocabulary,
    decode_float64,
    default_vocabulary,
    detokenize,
    encode_float64,
    refine_constant,
    teacher_forcing_mix,
    tokenize_expr,
    trajectory_bits,
    two_hot_decode,
    two_hot_encode,
    vocabulary_from_json,
    vocabulary_to_json,
)
from .dataset import (
    GenerationError,
    TestsetSpec,
    build_testset,
    corpus_stats,
    decode_y,
    encode_y,
    generate_corpus,
    load_classic,
    load_textbook,
    read_records,
    record_expr,
    write_records,
)
from .expr import (
    BINARY_OPS,
    UNARY_OPS,
    Expr,
    ExprError,
    ParseError,
    Skeleton,
    Y,
    complexity,
    const,
    constants_of,
    contains_y,
    evaluate,
    instantiate,
    nodes,
    operator_count,
    parse_infix,
    parse_prefix,
    skeletonize,
    sort_key,
    to_infix,
    to_prefix,
    validate,
)
from .generate import (
    GenerationConfig,
    ResampleError,
    count_trees,
    draw_constant,
    resample_constants,
    sample_expr,
    sample_tree,
)
from .inference import (
    BeamConfig,
    NoCandidateError,
    OracleScorer,
    RemoteScorer,
    Scorer,
    ScorerError,
    UniformScorer,
    beam_search,
    top_k_evaluate,
)
from .metrics import (
    MetricsConfig,
    MetricsReport,
    allclose,
    eval_points,
    r_squared,
    score,
    skeleton_match,
)
from .simplify import simplify
from .solver import (
    BLOWUP,
    OK,
    QC_REJECTED,
    SOLVER_FAILED,
    Solution,
    SolveConfig,
    finite_diff,
    grid,
    integrate,
    qc_check,
    sample_initial_values,
    solve_expr,
)

__version__ = "0.1.0"
