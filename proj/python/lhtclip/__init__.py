"""Python bindings for the LHT-CLIP inference engine.

Images are float32 arrays [H, W, 3] in [0, 1]; token matrices are
[1 + h*w, D] with the [CLS] token in row 0; layers and heads are 1-based.
Strategies are given as a preset name ("plain", "vitb", "vitl") or as the
same JSON-shaped dict the command-line tool reads.
"""

from ._core import (
    ConfigError,
    DataError,
    LhtError,
    Model,
    NumericError,
    ShapeError,
    TextEmbeddings,
    atr,
    auc_brute_force,
    auc_rank,
    apply_she,
    check_parity,
    detect_abnormal,
    expected_shapes,
    forward,
    hoyer_score,
    layer_forward,
    load_image,
    load_label_map,
    load_text_embeddings,
    load_weights,
    make_probe,
    miou,
    read_container,
    she_mask,
    slide_segment,
    strategy_preset,
    tokenize,
    write_container,
)

__version__ = "0.1.0"
