"""Flat ``section.key=value`` run configuration."""

import hashlib
from dataclasses import dataclass
from pathlib import Path

from .enhance import VARIANTS
from .learners import REGISTRY
from .model import ModelConfig, parse_stages
from .train import TrainConfig

LAYOUT = ("images", "folds", "checkpoints", "tables", "reports", "cams")


class ConfigError(ValueError):
    pass


def _bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _tiles(text):
    parts = str(text).lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"tiles must look like 4x4, got {text!r}")
    return int(parts[0]), int(parts[1])


def _variants(text):
    items = [v.strip() for v in str(text).split(",") if v.strip()]
    bad = [v for v in items if v not in VARIANTS]
    if bad or not items:
        raise ValueError(f"variants must be drawn from {','.join(VARIANTS)}, got {text!r}")
    return tuple(items)


def _layer(text):
    return str(text).strip()


# key -> (default, parser)
_model = ModelConfig()
_train = TrainConfig()
SCHEMA = {
    "seed": (0, int),
    "threads": (1, int),
    "paths.workdir": ("work", str),
    "paths.manifest": ("", str),
    "data.image_size": (_model.image_size, int),
    "split.k": (5, int),
    "enhance.variants": (VARIANTS, _variants),
    "enhance.clip_limit": (8.0, float),
    "enhance.tiles": ((4, 4), _tiles),
    "enhance.c": (1.0, float),
    "enhance.gamma": (2.0, float),
    "augment.balance": (True, _bool),
    "model.stem_width": (_model.stem_width, int),
    "model.stages": (_model.stages, parse_stages),
    "model.expansion": (_model.expansion, int),
    "model.q": (_model.q, int),
    "model.block_q": (_model.block_q, int),
    "model.head_hidden": (_model.head_hidden, int),
    "model.dropout": (_model.dropout, float),
    "train.lr": (_train.lr, float),
    "train.batch_size": (_train.batch_size, int),
    "train.max_epochs": (_train.max_epochs, int),
    "train.lr_patience": (_train.lr_patience, int),
    "train.stop_patience": (_train.stop_patience, int),
    "train.lr_factor": (_train.lr_factor, float),
    "stack.inner_k": (5, int),
    "stack.meta_trees": (100, int),
    "stack.meta_depth": (8, int),
    "cam.layer": ("", _layer),
    "cam.target": (1, int),
    "cam.count": (4, int),
    "bench.runs": (100, int),
    "bench.warmup": (10, int),
}


def _learner_key(key):
    """``learner.<KIND>.<param>`` keys are checked against each learner's hyperparameters."""
    parts = key.split(".")
    if len(parts) != 3 or parts[0] != "learner":
        return None
    kind, name = parts[1], parts[2]
    if kind not in REGISTRY or name not in REGISTRY[kind].hyper:
        raise ConfigError(f"unknown learner setting {key!r}")
    default = getattr(REGISTRY[kind](), name)
    parser = _bool if isinstance(default, bool) else type(default)
    return kind, name, parser


def _render(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple) and len(value) == 2 and all(isinstance(v, int) for v in value):
        return f"{value[0]}x{value[1]}"
    if isinstance(value, tuple):
        return ",".join(value)
    if isinstance(value, list):
        return ";".join(f"{c}x{b}s{s}" for c, b, s in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    values: dict
    learners: dict

    @classmethod
    def defaults(cls):
        return cls({k: v for k, (v, _) in SCHEMA.items()}, {})

    def get(self, key):
        return self.values[key]

    def set(self, key, raw):
        if key in SCHEMA:
            parser = SCHEMA[key][1]
            try:
                self.values[key] = parser(raw) if isinstance(raw, str) else raw
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
            return
        found = _learner_key(key)
        if found is None:
            raise ConfigError(f"unknown config key {key!r}")
        kind, name, parser = found
        try:
            self.learners.setdefault(kind, {})[name] = parser(raw) if isinstance(raw, str) else raw
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc

    def to_text(self):
        items = {k: _render(v) for k, v in self.values.items()}
        for kind, params in self.learners.items():
            for name, value in params.items():
                items[f"learner.{kind}.{name}"] = _render(value)
        return "".join(f"{k}={items[k]}\n" for k in sorted(items))

    @property
    def hash(self):
        """Digest of the settings that shape results (paths and thread count excluded)."""
        lines = [ln for ln in self.to_text().splitlines(keepends=True)
                 if not ln.startswith(("paths.", "threads="))]
        return hashlib.sha256("".join(lines).encode("utf-8")).hexdigest()[:16]

    @property
    def seed(self):
        return self.values["seed"]

    @property
    def workdir(self):
        return Path(self.values["paths.workdir"])

    @property
    def manifest_path(self):
        return Path(self.values["paths.manifest"] or self.workdir / "manifest.csv")

    def model_config(self, in_channels):
        cfg = ModelConfig(
            in_channels=in_channels, image_size=self.values["data.image_size"],
            stem_width=self.values["model.stem_width"], stages=list(self.values["model.stages"]),
            expansion=self.values["model.expansion"], q=self.values["model.q"],
            block_q=self.values["model.block_q"], head_hidden=self.values["model.head_hidden"],
            dropout=self.values["model.dropout"], seed=self.seed)
        return cfg.validate()

    def train_config(self):
        v = self.values
        return TrainConfig(lr=v["train.lr"], batch_size=v["train.batch_size"], max_epochs=v["train.max_epochs"],
                           lr_patience=v["train.lr_patience"], stop_patience=v["train.stop_patience"],
                           lr_factor=v["train.lr_factor"], seed=self.seed)

    def enhance_kwargs(self):
        v = self.values
        return {"clip_limit": v["enhance.clip_limit"], "tiles": v["enhance.tiles"],
                "c": v["enhance.c"], "gamma": v["enhance.gamma"]}


def parse_text(text, source="<config>"):
    """``key=value`` lines; ``#`` starts a comment."""
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path=None, overrides=()):
    """Defaults, then the file (if any), then ``overrides`` pairs."""
    cfg = RunConfig.defaults()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for key, value in parse_text(text, str(path)):
            cfg.set(key, value)
    for key, value in overrides:
        cfg.set(key, value)
    return cfg
