"""Sample manifests, stratified fold plans, batching and synthetic data."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imageio import write_pgm
from .rng import stream

# train:val proportions used inside the non-test part of every fold
TRAIN_VAL_RATIO = (795, 113)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    id: str
    path: Path
    label: int


@dataclass
class DatasetManifest:
    records: list

    @property
    def ids(self):
        return [r.id for r in self.records]

    @property
    def labels(self):
        return np.array([r.label for r in self.records], dtype=np.int64)

    @property
    def counts(self):
        labels = self.labels
        return {0: int((labels == 0).sum()), 1: int((labels == 1).sum())}

    def __len__(self):
        return len(self.records)

    @property
    def by_id(self):
        return {r.id: r for r in self.records}


def load_manifest(path, check_files=True):
    """Read an ``id,path,label`` CSV; relative paths resolve against its folder."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    records, seen = [], set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "path", "label"]:
            raise ManifestError(f"{path}: header must be 'id,path,label', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ManifestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            sid, rel, label = row
            if sid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {sid!r}")
            if label not in ("0", "1"):
                raise ManifestError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            img_path = Path(rel) if Path(rel).is_absolute() else path.parent / rel
            if check_files and not img_path.exists():
                raise ManifestError(f"{path}:{lineno}: image file missing for id {sid!r}: {img_path}")
            seen.add(sid)
            records.append(Record(sid, img_path, int(label)))
    return DatasetManifest(records)


def write_manifest(path, records, base=None):
    path = Path(path)
    base = Path(base) if base is not None else path.parent
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "path", "label"])
        for r in records:
            p = Path(r.path)
            try:
                p = p.relative_to(base)
            except ValueError:
                pass
            writer.writerow([r.id, p.as_posix(), r.label])


# -- folds ---------------------------------------------------------------------

@dataclass
class Fold:
    train: list
    val: list
    test: list


@dataclass
class FoldPlan:
    folds: list
    seed: int
    k: int = 5
    meta: dict = field(default_factory=dict)

    def to_json(self):
        payload = {
            "k": self.k,
            "seed": self.seed,
            "meta": self.meta,
            "folds": [{"train": f.train, "val": f.val, "test": f.test} for f in self.folds],
        }
        return json.dumps(payload, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        folds = [Fold(f["train"], f["val"], f["test"]) for f in d["folds"]]
        return cls(folds=folds, seed=d["seed"], k=d["k"], meta=d.get("meta", {}))

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _shard_sizes(n, k):
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def stratified_kfold(ids, labels, k=5, seed=0, ratio=TRAIN_VAL_RATIO):
    """Stratified k-fold plan with a per-class train/val cut.

    Per class: shuffle by seed, cut k test shards (remainder to the earliest
    shards). The non-test samples of a fold, taken cyclically from the shards
    after the test shard, are split ``ratio[1]/sum(ratio)`` to validation
    (floored) and the rest to training.
    """
    ids = list(ids)
    labels = np.asarray(labels)
    if len(ids) != len(labels):
        raise ValueError("ids and labels differ in length")
    folds = [Fold([], [], []) for _ in range(k)]
    for cls in np.unique(labels):
        members = [ids[i] for i in np.flatnonzero(labels == cls)]
        if len(members) < k:
            raise ValueError(f"class {cls} has {len(members)} samples, fewer than k={k}")
        order = stream(seed, "kfold", int(cls)).permutation(len(members))
        shuffled = [members[i] for i in order]
        bounds = np.cumsum([0] + _shard_sizes(len(members), k))
        shards = [shuffled[bounds[i]:bounds[i + 1]] for i in range(k)]
        for i in range(k):
            rest = [sid for j in range(1, k) for sid in shards[(i + j) % k]]
            n_val = len(rest) * ratio[1] // (ratio[0] + ratio[1])
            folds[i].test.extend(shards[i])
            folds[i].val.extend(rest[:n_val])
            folds[i].train.extend(rest[n_val:])
    return FoldPlan(folds=folds, seed=seed, k=k)


def split_manifest(manifest, k=5, seed=0):
    return stratified_kfold(manifest.ids, manifest.labels, k=k, seed=seed)


def batch_iter(ids, batch_size=8, shuffle_seed=0, epoch=0, shuffle=True):
    """Yield batches of ids; the order depends only on (seed, epoch)."""
    ids = list(ids)
    if not ids:
        raise ValueError("cannot batch an empty id list")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if shuffle:
        order = stream(shuffle_seed, "batch", epoch).permutation(len(ids))
        ids = [ids[i] for i in order]
    for start in range(0, len(ids), batch_size):
        yield ids[start:start + batch_size]


# -- synthetic radiographs -----------------------------------------------------

@dataclass
class BlobParams:
    min_blobs: int = 1
    max_blobs: int = 3
    min_radius: float = 0.04
    max_radius: float = 0.12
    # peak contrast in units of background std; the disk mean is ~0.75x peak
    min_peak: float = 6.0
    max_peak: float = 8.0


def synth_background(size, rng):
    noise = ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma=max(size / 24, 1.0), mode="wrap")
    noise = noise / noise.std() * 0.035
    yy, xx = np.mgrid[0:size, 0:size] / size
    bands = np.zeros((size, size))
    for _ in range(int(rng.integers(3, 6))):
        tilt = rng.uniform(-0.4, 0.4)
        freq = rng.uniform(4.0, 8.0)
        bands += rng.uniform(0.02, 0.04) * np.sin(2 * np.pi * (freq * (yy + tilt * xx)) + rng.uniform(0, 2 * np.pi))
    # lung-field vignette
    vignette = -0.08 * ((xx - 0.5) ** 2 + (yy - 0.5) ** 2) * 4
    return 0.42 + noise + bands + vignette


def synth_blobs(size, rng, bg_std, params=None):
    """Blob layer and list of (cy, cx, radius) in pixels."""
    params = params or BlobParams()
    layer = np.zeros((size, size))
    yy, xx = np.mgrid[0:size, 0:size]
    blobs = []
    for _ in range(int(rng.integers(params.min_blobs, params.max_blobs + 1))):
        r = rng.uniform(params.min_radius, params.max_radius) * size
        cy, cx = rng.uniform(0.2 * size, 0.8 * size, size=2)
        peak = rng.uniform(params.min_peak, params.max_peak) * bg_std
        d = np.hypot(yy - cy, xx - cx) / r
        layer += peak * np.exp(-d ** 4)
        blobs.append((cy, cx, r))
    return layer, blobs


def synth_image(index, label, size, seed, params=None, parts=False):
    """One synthetic 8-bit radiograph; ``parts=True`` also returns its layers."""
    rng_bg = stream(seed, "synth-bg", index)
    bg = synth_background(size, rng_bg)
    layer, blobs = (np.zeros_like(bg), [])
    if label == 1:
        layer, blobs = synth_blobs(size, stream(seed, "synth-blob", index), bg.std(), params)
    img = np.floor(np.clip(bg + layer, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    # a thin uniform frame on some images, for the border clipper
    frame = int(rng_bg.integers(0, 4))
    if frame:
        img[:frame] = 0
        img[-frame:] = 0
        img[:, :frame] = 0
        img[:, -frame:] = 0
    if parts:
        return img, {"background": bg, "blobs": layer, "blob_list": blobs, "frame": frame}
    return img


def synth_images(n, size, seed, params=None):
    """Return (ids, labels, uint8 images[n, size, size]); first half nodule."""
    if n % 2 or n < 2:
        raise ValueError(f"n must be a positive even number, got {n}")
    if size < 32:
        raise ValueError(f"image size must be >= 32, got {size}")
    labels = np.array([1 if i % 2 == 0 else 0 for i in range(n)], dtype=np.int64)
    ids = [f"s{i:05d}" for i in range(n)]
    images = np.stack([synth_image(i, int(labels[i]), size, seed, params) for i in range(n)])
    return ids, labels, images


def synth_generate(n, image_size, seed, outdir, params=None):
    """Write synthetic PGM images plus ``manifest.csv`` into ``outdir``."""
    outdir = Path(outdir)
    img_dir = outdir / "images" / "raw"
    img_dir.mkdir(parents=True, exist_ok=True)
    ids, labels, images = synth_images(n, image_size, seed, params)
    records = []
    for sid, label, img in zip(ids, labels, images):
        path = img_dir / f"{sid}.pgm"
        write_pgm(path, img)
        records.append(Record(sid, path, int(label)))
    manifest_path = outdir / "manifest.csv"
    write_manifest(manifest_path, records)
    return load_manifest(manifest_path)
