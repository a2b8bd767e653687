"""ModelSpec JSON documents with FT1 weight blobs referenced by relative path."""
import json
import logging
from pathlib import Path

from app.errors import InputError
from models.zoo import (LAYER_KINDS, Box, Conv2dLayer, LayerModel, LinearLayer, MeanPoolLayer,
                        PlantedBoxLayer, PlantedChannelsLayer, ReluLayer)
from storage.tensor_io import read_ft1, write_ft1

logger = logging.getLogger(__name__)


def _layer_from_spec(index: int, entry: dict, root: Path):
    kind = entry.get("kind")
    if kind not in LAYER_KINDS:
        raise InputError(f"layer {index}: unknown kind {kind!r}")
    try:
        if kind == "conv2d":
            return Conv2dLayer(_weights(index, entry, root), padding=entry.get("padding", "zero"))
        if kind == "linear":
            return LinearLayer(_weights(index, entry, root))
        if kind == "relu":
            return ReluLayer()
        if kind == "mean-pool":
            return MeanPoolLayer()
        if kind == "planted-box":
            return PlantedBoxLayer(Box(*entry["box"]), entry.get("weight", 1.0))
        return PlantedChannelsLayer(entry["channels"])
    except (KeyError, TypeError) as err:
        raise InputError(f"layer {index} ({kind}): malformed entry, {err}") from err


def _weights(index: int, entry: dict, root: Path):
    if "weights" not in entry:
        raise InputError(f"layer {index} ({entry['kind']}): missing weights reference")
    path = root / entry["weights"]
    if not path.is_file():
        raise InputError(f"layer {index} ({entry['kind']}): weight blob not found: {path}")
    return read_ft1(path)


def load_model(path) -> LayerModel:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"model file not found: {path}")
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise InputError(f"{path}: invalid model JSON ({err})") from err
    if "input_shape" not in spec or "layers" not in spec:
        raise InputError(f"{path}: model spec needs 'input_shape' and 'layers'")
    layers = [_layer_from_spec(i, entry, path.parent) for i, entry in enumerate(spec["layers"])]
    model = LayerModel(tuple(spec["input_shape"]), layers, spec.get("split_after"))
    logger.info("Loaded model %s: %d layers, input %s", path.name, len(layers), model.input_shape)
    return model


def save_model(model: LayerModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, layer in enumerate(model.layers):
        entry = {"kind": layer.kind, **layer.params()}
        weights = layer.weights()
        if weights is not None:
            blob = f"{path.stem}_layer{index}.ft1"
            write_ft1(path.parent / blob, weights)
            entry["weights"] = blob
        entries.append(entry)
    spec = {"input_shape": list(model.input_shape), "split_after": model.split_after, "layers": entries}
    path.write_text(json.dumps(spec, indent=2))
    return path
