"""ScoreCAM saliency: feature maps weighted by the class score of map-masked inputs."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .enhance import resample, to_unit
from .imageio import to_uint8, write_planar, write_png

OVERLAY_ALPHA = 0.4


@dataclass
class ActivationStack:
    maps: np.ndarray  # [K, h, w]
    layer: str

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.float64)
        if self.maps.ndim != 3 or len(self.maps) == 0:
            raise ValueError(f"activation stack must be [K>=1, h, w], got {self.maps.shape}")

    def __len__(self):
        return len(self.maps)


@dataclass
class CamResult:
    cam: np.ndarray  # [H, W] in [0, 1]
    weights: np.ndarray
    target_class: int
    layer: str


def default_layer(model):
    return model.layer_names()[-1]


def _as_batch(image, model):
    x = np.asarray(image, dtype=T.default_dtype())
    if x.ndim == 2:
        x = x[None]
    cfg = model.cfg
    if x.shape != (cfg.in_channels, cfg.image_size, cfg.image_size):
        raise T.DimensionError(f"image {x.shape} does not match model input "
                               f"[{cfg.in_channels},{cfg.image_size},{cfg.image_size}]")
    return x


def _logits(model, batch):
    was_training = model.training
    model.eval()
    try:
        return model(T.Tensor(np.asarray(batch, dtype=T.default_dtype()))).numpy().astype(np.float64)
    finally:
        model.train(was_training)


def extract_activations(model, image, layer=None):
    """Post-activation maps of ``layer`` for one image (eval mode)."""
    layer = layer or default_layer(model)
    if layer not in model.layer_names():
        raise KeyError(f"unknown layer {layer!r}; choose from {model.layer_names()}")
    x = _as_batch(image, model)
    capture = {}
    was_training = model.training
    model.eval()
    try:
        model(T.Tensor(x[None]), capture=capture)
    finally:
        model.train(was_training)
    return ActivationStack(capture[layer].numpy()[0], layer)


def normalize_map(a):
    """Min-max scale to [0, 1]; a constant map becomes zeros."""
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi - lo <= 0:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def upsample(a, h, w):
    return resample(np.asarray(a, dtype=np.float64), h, w)


def cic_scores(model, image, stack, target_class=1, batch_size=16):
    """Softmax over the target-class logits of the K masked inputs."""
    x = _as_batch(image, model)
    h, w = x.shape[-2:]
    logits = []
    for start in range(0, len(stack), batch_size):
        masks = np.stack([upsample(normalize_map(a), h, w) for a in stack.maps[start:start + batch_size]])
        logits.append(_logits(model, x[None] * masks[:, None])[:, target_class])
    logits = np.concatenate(logits)
    if not np.isfinite(logits).all():
        raise FloatingPointError("non-finite logit while scoring activation maps")
    z = np.exp(logits - logits.max())
    return z / z.sum()


def compose_cam(stack, weights, out_shape=None):
    """Rectified weighted sum of the maps, scaled to [0, 1] and upsampled."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(stack),):
        raise ValueError(f"{len(stack)} maps but {weights.size} weights")
    cam = normalize_map(np.maximum(np.tensordot(weights, stack.maps, axes=1), 0.0))
    if out_shape is not None:
        cam = upsample(cam, *out_shape)
    return cam


def score_cam(model, image, layer=None, target_class=1):
    stack = extract_activations(model, image, layer)
    weights = cic_scores(model, image, stack, target_class)
    size = model.cfg.image_size
    return CamResult(compose_cam(stack, weights, (size, size)), weights, target_class, stack.layer)


def overlay_rgb(image, cam, alpha=OVERLAY_ALPHA):
    """Jet-coloured CAM alpha-blended over the grayscale image; uint8 [H, W, 3]."""
    from matplotlib import colormaps

    image = np.asarray(image)
    gray = to_unit(image) if image.dtype.kind in "ui" else image.astype(np.float64)
    if gray.ndim == 3:
        gray = gray[0]  # single channel, or the plain-gray plane of a merged image
    cam = np.asarray(cam, dtype=np.float64)
    if gray.shape != cam.shape:
        raise ValueError(f"image {gray.shape} and cam {cam.shape} differ in size")
    heat = colormaps["jet"](np.clip(cam, 0.0, 1.0))[..., :3]
    blend = (1.0 - alpha) * gray[..., None] + alpha * heat
    return to_uint8(blend)


def overlay_export(image, cam, path, alpha=OVERLAY_ALPHA):
    rgb = overlay_rgb(image, cam, alpha)
    write_png(path, rgb)
    return rgb


def export_raw(cam, path):
    """Dump the CAM as a one-channel planar float file."""
    write_planar(path, np.asarray(cam, dtype=np.float32)[None], magic=b"CAM1")
