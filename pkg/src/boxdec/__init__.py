"""boxdec: block-parallel bounding-box decoding on a tiny numpy transformer.

The package splits into:
    vocab      token table, coordinate quantization, QuantBox
    codec      6-token block grammar: encode, validate, parse
    masks      three-regime training mask, decode-step masks
    sequences  joint next-token / block-parallel training streams
    scenes     synthetic grid-world scenes, queries, dataset files
    model      transformer with manual backprop, Adam, checkpoints
    train      dataset assembly + training loop
    decode     slow / fast / hybrid generation with a KV cache
    packing    best-fit stream packing into fixed token budgets
    metrics    IoU, matching, F1 suite, throughput
    config     flat key=value run configuration
    cli        command-line front end (gen/train/decode/eval/bench/...)
"""

import os as _os

# Thread count must land in the BLAS env vars before numpy's first import,
# which happens in this package's submodules; translating here is the last
# safe moment when the console script is the entry.
_threads = _os.environ.get("BOXDEC_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)
del _os

from .vocab import (
    N_COORD_TOKENS,
    QuantBox,
    Vocabulary,
    dequantize_coord,
    quantize_coord,
    sort_boxes,
)
from .codec import (
    BLOCK_LEN,
    AnswerItem,
    Block,
    BlockKind,
    FormatViolation,
    GrammarState,
    ParsedAnswer,
    encode_answer,
    flatten,
    parse_stream,
    validate_block,
)
from .decode import (
    DecodeConfig,
    DecodeTrace,
    FallbackRecord,
    CachedSession,
    UncachedSession,
    ambiguity_trigger,
    decode,
    decode_fast,
    decode_hybrid,
    decode_slow,
    sample_token,
)
from .metrics import (
    MatchResult,
    ThroughputReport,
    f1_suite,
    iou,
    match_at_threshold,
    measure_bps,
    point_hit,
)
from .model import ModelConfig, TrainingDiverged, init_params
from .packing import CapacityError, PackedBatch, StreamPacker, pack_stream
from .train import TrainSettings, train_model

__version__ = "0.1.0"

__all__ = [
    "N_COORD_TOKENS",
    "QuantBox",
    "Vocabulary",
    "dequantize_coord",
    "quantize_coord",
    "sort_boxes",
    "BLOCK_LEN",
    "AnswerItem",
    "Block",
    "BlockKind",
    "FormatViolation",
    "GrammarState",
    "ParsedAnswer",
    "encode_answer",
    "flatten",
    "parse_stream",
    "validate_block",
    "DecodeConfig",
    "DecodeTrace",
    "FallbackRecord",
    "CachedSession",
    "UncachedSession",
    "ambiguity_trigger",
    "decode",
    "decode_fast",
    "decode_hybrid",
    "decode_slow",
    "sample_token",
    "MatchResult",
    "ThroughputReport",
    "f1_suite",
    "iou",
    "match_at_threshold",
    "measure_bps",
    "point_hit",
    "ModelConfig",
    "TrainingDiverged",
    "init_params",
    "CapacityError",
    "PackedBatch",
    "StreamPacker",
    "pack_stream",
    "TrainSettings",
    "train_model",
    "__version__",
]
