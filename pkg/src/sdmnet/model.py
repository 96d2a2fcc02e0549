"""Self-DenseMobileNet: Self-ONN stem, bottleneck stages, multi-scale feature
concatenation and a Self-MLP classification head."""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .layers import BatchNorm2d, Bottleneck, Module, SelfMLP, SelfOnnConv2d
from .rng import stream
from .tensor import DimensionError, ParameterError, Tensor


@dataclass
class ModelConfig:
    in_channels: int = 1
    image_size: int = 64
    stem_width: int = 16
    # (channels, blocks, stride) per stage
    stages: list = field(default_factory=lambda: [(24, 2, 2), (32, 2, 2), (64, 2, 2)])
    expansion: int = 4
    q: int = 3
    block_q: int = 1
    head_hidden: int = 32
    dropout: float = 0.2
    num_classes: int = 2
    seed: int = 0

    def validate(self):
        if self.in_channels not in (1, 3):
            raise ParameterError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if not 1 <= self.q <= 7 or not 1 <= self.block_q <= 7:
            raise ParameterError(f"Self-ONN order must lie in [1, 7], got q={self.q}, block_q={self.block_q}")
        if self.num_classes != 2:
            raise ParameterError("only binary classification is supported")
        if not self.stages:
            raise ParameterError("at least one stage is required")
        for ch, blocks, stride in self.stages:
            if stride not in (1, 2):
                raise ParameterError(f"stage stride must be 1 or 2, got {stride}")
            if ch < 1 or blocks < 1:
                raise ParameterError(f"invalid stage ({ch}, {blocks}, {stride})")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must be in [0, 1)")
        if self.feature_size() < 1:
            raise ParameterError(f"image size {self.image_size} too small for this schedule")
        return self

    def feature_size(self):
        """Spatial size after stem + pooling + all strided stages."""
        s = (self.image_size + 2 - 3) // 2 + 1
        s //= 2
        for _, _, stride in self.stages:
            s = (s + 2 - 3) // stride + 1
        return s

    def to_text(self):
        """Canonical key=value text, sorted by key."""
        d = asdict(self)
        d["stages"] = ";".join(f"{c}x{b}s{s}" for c, b, s in self.stages)
        return "".join(f"{k}={d[k]}\n" for k in sorted(d))

    @classmethod
    def from_text(cls, text):
        raw = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                raw[key.strip()] = value.strip()
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw):
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ParameterError(f"unknown model config keys: {sorted(unknown)}")
        kw = {}
        for key, value in raw.items():
            if key == "stages":
                kw[key] = parse_stages(value) if isinstance(value, str) else [tuple(s) for s in value]
            elif key == "dropout":
                kw[key] = float(value)
            else:
                kw[key] = int(value)
        return cls(**kw).validate()


def parse_stages(text):
    """Parse ``"24x2s2;32x2s2"`` into ``[(24, 2, 2), (32, 2, 2)]``."""
    stages = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        ch, rest = part.split("x")
        blocks, stride = rest.split("s")
        stages.append((int(ch), int(blocks), int(stride)))
    return stages


class SelfDenseMobileNet(Module):
    def __init__(self, cfg):
        cfg.validate()
        self.cfg = cfg
        rng = stream(cfg.seed, "init")
        self.stem = SelfOnnConv2d(cfg.in_channels, cfg.stem_width, 3, q=cfg.q, stride=2, padding=1, rng=rng)
        self.stem_bn = BatchNorm2d(cfg.stem_width)
        self.blocks = []
        self.stage_ends = []
        ch = cfg.stem_width
        for out_ch, n_blocks, stride in cfg.stages:
            for b in range(n_blocks):
                self.blocks.append(Bottleneck(ch, out_ch, stride if b == 0 else 1, cfg.expansion, cfg.block_q, rng))
                ch = out_ch
            self.stage_ends.append(len(self.blocks) - 1)
        feat = sum(c for c, _, _ in cfg.stages)
        self.hidden = SelfMLP(feat, cfg.head_hidden, q=cfg.q, rng=rng)
        self.head = SelfMLP(cfg.head_hidden, cfg.num_classes, q=cfg.q, rng=rng)
        self._dropout_calls = 0

    def layer_names(self):
        return ["stem"] + [f"stage{i + 1}" for i in range(len(self.stage_ends))]

    def forward(self, x, capture=None, dropout_rng=None):
        """Return logits [N, 2]; optionally record spatial activations in ``capture``."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=T.default_dtype()))
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise DimensionError(f"expected input [N,{cfg.in_channels},H,W], got {x.shape}")
        y = T.tanh_activation(self.stem_bn(self.stem(x)))
        y = T.max_pool2d(y, 2)
        if capture is not None:
            capture["stem"] = y
        taps = []
        stage = 0
        for i, block in enumerate(self.blocks):
            y = block(y)
            if i == self.stage_ends[stage]:
                stage += 1
                if capture is not None:
                    capture[f"stage{stage}"] = y
                pooled = T.adaptive_avg_pool2d(y, 1)
                taps.append(T.reshape(pooled, (pooled.shape[0], pooled.shape[1])))
        # concatenated multi-scale features, squashed into [-1, 1] for the polynomial head
        f = T.tanh_activation(T.concat(taps, axis=1))
        if self.training and cfg.dropout > 0:
            if dropout_rng is None:
                dropout_rng = stream(cfg.seed, "dropout", self._dropout_calls)
                self._dropout_calls += 1
            f = T.dropout(f, cfg.dropout, True, dropout_rng)
        f = T.tanh_activation(self.hidden(f))
        return self.head(f)

    __call__ = forward


def build_model(cfg):
    """Construct a model from a validated config."""
    return SelfDenseMobileNet(cfg)


def predict_proba(model, images, batch_size=32):
    """Nodule (class 1) probability per image, computed in eval mode."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[:, None]
    cfg = model.cfg
    if images.ndim != 4 or images.shape[1] != cfg.in_channels or images.shape[2:] != (cfg.image_size, cfg.image_size):
        raise DimensionError(f"images {images.shape} do not match model input "
                             f"[N,{cfg.in_channels},{cfg.image_size},{cfg.image_size}]")
    was_training = model.training
    model.eval()
    out = []
    try:
        for start in range(0, len(images), batch_size):
            batch = images[start:start + batch_size].astype(T.default_dtype())
            logits = model(Tensor(batch)).data
            out.append(T.softmax(logits)[:, 1])
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0, dtype=T.default_dtype())
