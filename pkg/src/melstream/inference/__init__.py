"""File-driven neural inference: graphs, containers, prediction."""

from .graph import (FORMAT_VERSION, ModelGraph, Node, build_graph, forward,
                    forward_from)
from .model_io import (WEIGHTS_MAGIC, WEIGHTS_VERSION, format_manifest,
                       load_model, parse_manifest, read_weights, save_model,
                       write_weights)
from .ops import OPS, op_def
from .prediction import (AGGREGATIONS, Prediction, embed_patches,
                         patch_to_input, predict, tile_patches, top_label)

__all__ = [
    "FORMAT_VERSION", "ModelGraph", "Node", "build_graph", "forward", "forward_from",
    "WEIGHTS_MAGIC", "WEIGHTS_VERSION", "format_manifest", "load_model",
    "parse_manifest", "read_weights", "save_model", "write_weights",
    "OPS", "op_def",
    "AGGREGATIONS", "Prediction", "embed_patches", "patch_to_input", "predict",
    "tile_patches", "top_label",
]
