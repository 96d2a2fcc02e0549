"""Model checkpoints in the SDMN container."""

import numpy as np

from . import container
from .container import ContainerError, ShapeMismatchError
from .model import ModelConfig, build_model
from . import tensor as T

KIND = "selfdense"


def model_tensors(model):
    out = {}
    for name, p in model.named_parameters():
        out[name] = p.data
    for name, b in model.named_buffers():
        out[name] = b
    return out


def checkpoint_save(model, path, meta=None):
    """Write weights, running statistics and the model config.

    ``meta`` entries are stored in the config block as ``meta.<key>``.
    """
    config = {"kind": KIND}
    for line in model.cfg.to_text().splitlines():
        key, _, value = line.partition("=")
        config[f"model.{key}"] = value
    for key, value in (meta or {}).items():
        config[f"meta.{key}"] = str(value)
    container.save(path, config, model_tensors(model))


def checkpoint_load(path, return_meta=False):
    config, tensors = container.load(path)
    if config.get("kind") != KIND:
        raise ContainerError(f"{path}: not a model checkpoint (kind={config.get('kind')!r})")
    cfg_raw = {k[len("model."):]: v for k, v in config.items() if k.startswith("model.")}
    try:
        cfg = ModelConfig.from_dict(cfg_raw)
    except (ValueError, TypeError) as exc:
        raise ContainerError(f"{path}: invalid embedded model config: {exc}") from exc
    dtypes = {arr.dtype for arr in tensors.values()}
    dtype = np.float64 if np.dtype(np.float64) in dtypes else np.float32
    with T.precision(dtype):
        model = build_model(cfg)
    expected = model_tensors(model)
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise ShapeMismatchError(f"{path}: tensor names disagree with config (missing {missing[:3]}, extra {extra[:3]})")
    for name, target in expected.items():
        if target.shape != tensors[name].shape:
            raise ShapeMismatchError(f"{path}: tensor {name!r} has shape {tensors[name].shape}, config implies {target.shape}")
        target[...] = tensors[name]
    model.eval()
    if return_meta:
        meta = {k[len("meta."):]: v for k, v in config.items() if k.startswith("meta.")}
        return model, meta
    return model
