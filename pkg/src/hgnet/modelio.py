"""Versioned text serialisation of model parameters.

Models are stored as JSON with arrays as nested lists. Python's float
repr is shortest-round-trip, so a save/load cycle reproduces bitwise
identical parameters and therefore bitwise identical predictions.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .network import LayerParams, ModelDims, ModelParams

FORMAT_VERSION = 1


class ModelIOError(Exception):
    """Base class for model (de)serialisation failures."""


class UnsupportedVersionError(ModelIOError):
    """The file's format version is not supported."""


class ModelFieldError(ModelIOError):
    """A required field is missing or malformed; names the field."""


class ModelDimensionError(ModelIOError):
    """Stored arrays disagree with the declared widths."""


def _layer_doc(layer: LayerParams) -> dict:
    return {
        "weight": [[float(x) for x in row] for row in layer.weight],
        "bias": [float(x) for x in layer.bias],
    }


def save_model(params: ModelParams, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "activation": params.activation,
        "dims": {
            "dim": params.dims.dim,
            "d_h": params.dims.d_h,
            "d_m": params.dims.d_m,
        },
        "node_enc": _layer_doc(params.node_enc),
        "edge_enc": _layer_doc(params.edge_enc),
        "msg_enc": _layer_doc(params.msg_enc),
        "readout": {
            "weight": [float(x) for x in params.readout_w],
            "bias": float(params.readout_b),
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _get(doc: dict, *keys):
    node = doc
    trail = []
    for key in keys:
        trail.append(key)
        if not isinstance(node, dict) or key not in node:
            raise ModelFieldError(f"missing or malformed field {'.'.join(trail)}")
        node = node[key]
    return node


def _load_layer(doc: dict, name: str, shape: tuple[int, int]) -> LayerParams:
    weight = np.asarray(_get(doc, name, "weight"), dtype=np.float64)
    bias = np.asarray(_get(doc, name, "bias"), dtype=np.float64)
    if weight.ndim != 2 or bias.ndim != 1:
        raise ModelFieldError(f"field {name} has malformed arrays")
    if weight.shape != shape or bias.shape != (shape[0],):
        raise ModelDimensionError(
            f"layer {name} has shape {weight.shape}, expected {shape}")
    return LayerParams(weight=weight, bias=bias)


def load_model(path) -> ModelParams:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFieldError(f"truncated or invalid model file: {exc}") from exc
    version = _get(doc, "format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"model format version {version!r} is not supported "
            f"(expected {FORMAT_VERSION})")
    dims = ModelDims(
        dim=int(_get(doc, "dims", "dim")),
        d_h=int(_get(doc, "dims", "d_h")),
        d_m=int(_get(doc, "dims", "d_m")),
    )
    activation = _get(doc, "activation")
    node_enc = _load_layer(doc, "node_enc", (dims.d_h, dims.d_v))
    edge_enc = _load_layer(doc, "edge_enc", (dims.d_h, dims.d_e))
    msg_enc = _load_layer(doc, "msg_enc", (dims.d_m, 2 * dims.d_h))
    readout_w = np.asarray(_get(doc, "readout", "weight"), dtype=np.float64)
    if readout_w.shape != (dims.d_l,):
        raise ModelDimensionError(
            f"readout has length {readout_w.shape}, expected {dims.d_l}")
    readout_b = float(_get(doc, "readout", "bias"))
    try:
        return ModelParams(
            dims=dims, node_enc=node_enc, edge_enc=edge_enc, msg_enc=msg_enc,
            readout_w=readout_w, readout_b=readout_b, activation=activation,
        )
    except ValueError as exc:
        raise ModelFieldError(str(exc)) from exc
