"""Stage functions behind the command line; each reads and writes the workdir.

Layout::

    workdir/manifest.csv
    workdir/images/{raw,<variant>}/
    workdir/folds/folds.json
    workdir/checkpoints/<variant>_fold<i>.sdmn, stack.sdmn
    workdir/tables/pred_<variant>.csv, probability_table.csv, stack_predictions.csv
    workdir/reports/
    workdir/cams/

Every artifact carries the config hash and seed, either inside the
container config block or in a ``<name>.meta.json`` sidecar.
"""

import csv
import json
import logging
import time
from pathlib import Path

import numpy as np

from .checkpoint import checkpoint_load, checkpoint_save
from .config import LAYOUT
from .container import ContainerError
from .dataset import FoldPlan, load_manifest, split_manifest, synth_generate
from .enhance import balance_training_set, make_variant, preprocess
from .imageio import read_image, read_planar, write_planar
from .learners import KINDS
from .metrics import (aggregate_folds, confusion_matrix, format_aggregate, format_confusion, format_table,
                      report_rows, weighted_report, write_report_csv)
from .model import build_model, predict_proba
from .stacking import (ProbabilityTable, accuracy, build_probability_table, cross_validated_accuracy,
                       predict_stack, save_stack, select_top3, train_meta_rf)
from .train import train_model

log = logging.getLogger(__name__)


class MissingArtifactError(FileNotFoundError):
    pass


def layout(cfg):
    root = cfg.workdir
    for name in LAYOUT:
        (root / name).mkdir(parents=True, exist_ok=True)
    return {name: root / name for name in LAYOUT}


def require(path, hint):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing artifact {path} (run `{hint}` first)")
    return path


def write_sidecar(path, cfg, stage, **extra):
    info = {"config_hash": cfg.hash, "seed": cfg.seed, "stage": stage, **extra}
    Path(f"{path}.meta.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _provenance(cfg, **extra):
    return {"config_hash": cfg.hash, "seed": cfg.seed, **extra}


# -- data stages ------------------------------------------------------------------

def run_synth(cfg, n):
    layout(cfg)
    size = cfg.get("data.image_size")
    manifest = synth_generate(n, size, cfg.seed, cfg.workdir)
    path = cfg.workdir / "manifest.csv"
    write_sidecar(path, cfg, "synth", n=n, size=size)
    log.info("synth: %d images -> %s", len(manifest.ids), path)
    return path


def load_run_manifest(cfg, check_files=True):
    return load_manifest(require(cfg.manifest_path, "synth"), check_files=check_files)


def variant_dir(cfg, variant):
    return cfg.workdir / "images" / variant


def run_enhance(cfg):
    layout(cfg)
    manifest = load_run_manifest(cfg)
    variants = cfg.get("enhance.variants")
    size = cfg.get("data.image_size")
    for v in variants:
        variant_dir(cfg, v).mkdir(parents=True, exist_ok=True)
    kwargs = cfg.enhance_kwargs()
    for rec in manifest.records:
        pre = preprocess(read_image(rec.path), size)
        for v in variants:
            write_planar(variant_dir(cfg, v) / f"{rec.id}.im3f", make_variant(pre, v, **kwargs))
    for v in variants:
        write_sidecar(variant_dir(cfg, v) / "_images", cfg, "enhance", variant=v, count=len(manifest.ids))
    log.info("enhance: %d images x %d variants", len(manifest.ids), len(variants))
    return [variant_dir(cfg, v) for v in variants]


def load_variant_images(cfg, variant, ids):
    folder = require(variant_dir(cfg, variant), "enhance")
    out = []
    for sid in ids:
        path = require(folder / f"{sid}.im3f", "enhance")
        out.append(read_planar(path))
    return np.stack(out)


def run_split(cfg):
    layout(cfg)
    manifest = load_run_manifest(cfg, check_files=False)
    plan = split_manifest(manifest, k=cfg.get("split.k"), seed=cfg.seed)
    plan.meta = _provenance(cfg)
    path = cfg.workdir / "folds" / "folds.json"
    plan.save(path)
    log.info("split: %d folds -> %s", plan.k, path)
    return path


def load_plan(cfg):
    return FoldPlan.load(require(cfg.workdir / "folds" / "folds.json", "split"))


# -- training ---------------------------------------------------------------------

def checkpoint_path(cfg, variant, fold):
    return cfg.workdir / "checkpoints" / f"{variant}_fold{fold}.sdmn"


def _write_history(path, history):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        keys = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr"]
        writer.writerow(keys)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in keys[1:]])


def _checkpoint_current(path, cfg):
    if not path.exists():
        return False
    try:
        _, meta = checkpoint_load(path, return_meta=True)
    except ContainerError:
        return False
    return meta.get("config_hash") == cfg.hash


def train_one(cfg, variant, fold, manifest=None, plan=None, force=False):
    """Train one (variant, fold) model unless an up-to-date checkpoint exists."""
    from .plotting import plot_history

    out = checkpoint_path(cfg, variant, fold)
    if not force and _checkpoint_current(out, cfg):
        log.info("train: %s up to date, skipping", out.name)
        return out
    layout(cfg)
    manifest = manifest or load_run_manifest(cfg, check_files=False)
    plan = plan or load_plan(cfg)
    f = plan.folds[fold]
    labels = manifest.by_id
    train_ids, val_ids = f.train, f.val
    x_train = load_variant_images(cfg, variant, train_ids)
    x_val = load_variant_images(cfg, variant, val_ids)
    y_train = np.array([labels[s].label for s in train_ids])
    y_val = np.array([labels[s].label for s in val_ids])
    items = None
    if cfg.get("augment.balance"):
        row = {sid: i for i, sid in enumerate(train_ids)}
        items = [(row[sid], spec) for sid, spec in balance_training_set(train_ids, y_train, cfg.seed)]
    model = build_model(cfg.model_config(x_train.shape[1]))
    start = time.perf_counter()
    history = train_model(model, x_train, y_train, x_val, y_val, cfg.train_config(), train_items=items)
    best = min(history, key=lambda r: r["val_loss"])
    log.info("train: %s fold %d best epoch %d val_acc %.4f (%.1fs)", variant, fold, best["epoch"],
             best["val_acc"], time.perf_counter() - start)
    checkpoint_save(model, out, meta=_provenance(cfg, variant=variant, fold=fold, best_epoch=best["epoch"]))
    hist_path = cfg.workdir / "reports" / f"history_{variant}_fold{fold}.csv"
    _write_history(hist_path, history)
    write_sidecar(hist_path, cfg, "train", variant=variant, fold=fold)
    png = hist_path.with_suffix(".png")
    plot_history(history, png, title=f"{variant}, fold {fold}")
    write_sidecar(png, cfg, "train", variant=variant, fold=fold)
    return out


def run_train(cfg, variants=None, folds=None, force=False):
    manifest = load_run_manifest(cfg, check_files=False)
    plan = load_plan(cfg)
    variants = variants or cfg.get("enhance.variants")
    folds = range(plan.k) if folds is None else folds
    return [train_one(cfg, v, i, manifest, plan, force) for v in variants for i in folds]


# -- prediction and tables --------------------------------------------------------

def pred_path(cfg, variant):
    return cfg.workdir / "tables" / f"pred_{variant}.csv"


def run_predict(cfg, variants=None):
    """Out-of-fold nodule probabilities: each fold's model scores its test ids."""
    layout(cfg)
    manifest = load_run_manifest(cfg, check_files=False)
    plan = load_plan(cfg)
    labels = {sid: rec.label for sid, rec in manifest.by_id.items()}
    paths = []
    for v in variants or cfg.get("enhance.variants"):
        rows = []
        for i, f in enumerate(plan.folds):
            model = checkpoint_load(require(checkpoint_path(cfg, v, i), "train"))
            probs = predict_proba(model, load_variant_images(cfg, v, f.test))
            rows.extend((sid, i, float(p), labels[sid]) for sid, p in zip(f.test, probs))
        rows.sort(key=lambda r: r[0])
        path = pred_path(cfg, v)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "fold", "prob", "label"])
            for sid, fold, p, label in rows:
                writer.writerow([sid, fold, repr(p), label])
        write_sidecar(path, cfg, "predict", variant=v)
        log.info("predict: %s -> %s", v, path)
        paths.append(path)
    return paths


def read_predictions(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def run_table(cfg):
    layout(cfg)
    variant_probs, labels = {}, {}
    for v in ("gray", "gamma", "invert", "chan3"):
        rows = read_predictions(require(pred_path(cfg, v), f"predict (variant {v})"))
        variant_probs[v] = {r["id"]: float(r["prob"]) for r in rows}
        labels.update({r["id"]: int(r["label"]) for r in rows})
    ids = sorted(labels)
    table = build_probability_table(variant_probs, ids, [labels[s] for s in ids])
    path = cfg.workdir / "tables" / "probability_table.csv"
    table.to_csv(path)
    write_sidecar(path, cfg, "table", rows=len(table))
    log.info("table: %d rows -> %s", len(table), path)
    return path


def load_table(cfg):
    return ProbabilityTable.from_csv(require(cfg.workdir / "tables" / "probability_table.csv", "table"))


def variant_accuracies(table):
    return {col: accuracy(table.probs[:, j] > 0.5, table.labels) for j, col in enumerate(("gray", "gamma", "invert", "chan3"))}


def run_stack(cfg):
    """Rank the learners by outer-fold accuracy, stack the top three, write
    out-of-fold stack predictions and a stack fitted on every row."""
    from .plotting import plot_learner_accuracies

    layout(cfg)
    table = load_table(cfg)
    plan = load_plan(cfg)
    seed, params = cfg.seed, cfg.learners
    stack_kw = {"inner_k": cfg.get("stack.inner_k"), "meta_trees": cfg.get("stack.meta_trees"),
                "meta_depth": cfg.get("stack.meta_depth"), "learner_params": params}
    accs = cross_validated_accuracy(table, plan, KINDS, seed, params)
    top3 = select_top3(accs)
    log.info("stack: top three %s", top3)
    rows = []
    for i, f in enumerate(plan.folds):
        Xtr, ytr = table.rows(f.train + f.val)
        Xte, yte = table.rows(f.test)
        stack = train_meta_rf(top3, Xtr, ytr, seed, **stack_kw)
        pred, prob = predict_stack(stack, Xte)
        rows.extend((sid, i, int(p), float(q), int(y)) for sid, p, q, y in zip(f.test, pred, prob, yte))
    rows.sort(key=lambda r: r[0])
    tables = cfg.workdir / "tables"
    pred_file = tables / "stack_predictions.csv"
    with pred_file.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "pred", "label", "fold", "prob"])
        for sid, fold, p, q, y in rows:
            writer.writerow([sid, p, y, fold, repr(q)])
    write_sidecar(pred_file, cfg, "stack", bases=",".join(top3))
    final = train_meta_rf(top3, table.probs, table.labels, seed, **stack_kw)
    model_file = cfg.workdir / "checkpoints" / "stack.sdmn"
    save_stack(final, model_file, meta=_provenance(cfg, bases=",".join(top3)))
    stack_acc = accuracy([r[2] for r in rows], [r[4] for r in rows])
    report = cfg.workdir / "reports" / "learners.csv"
    with report.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "accuracy", "selected"])
        for name, acc in variant_accuracies(table).items():
            writer.writerow([f"variant:{name}", f"{acc:.6f}", 0])
        for kind in KINDS:
            writer.writerow([kind, f"{accs[kind]:.6f}", int(kind in top3)])
        writer.writerow(["stack:" + "+".join(top3), f"{stack_acc:.6f}", 1])
    write_sidecar(report, cfg, "stack")
    png = report.with_suffix(".png")
    plot_learner_accuracies(accs, png, top3)
    write_sidecar(png, cfg, "stack")
    return {"top3": top3, "learner_accuracy": accs, "stack_accuracy": stack_acc,
            "predictions": pred_file, "model": model_file}


# -- evaluation ---------------------------------------------------------------------

def run_eval(cfg, predictions=None, name=None):
    """Metrics for an ``id,pred,label[,fold]`` CSV; returns the text report."""
    from .plotting import plot_confusion

    layout(cfg)
    path = Path(predictions) if predictions else cfg.workdir / "tables" / "stack_predictions.csv"
    rows = read_predictions(require(path, "stack"))
    if rows and not {"pred", "label"} <= set(rows[0]):
        raise ValueError(f"{path}: needs 'pred' and 'label' columns")
    pred = np.array([int(r["pred"]) for r in rows])
    true = np.array([int(r["label"]) for r in rows])
    cm = confusion_matrix(pred, true)
    overall = weighted_report(cm)
    csv_rows = report_rows(overall, "all")
    parts = [format_confusion(cm), "", format_table(overall, "pooled over all rows")]
    if rows and "fold" in rows[0]:
        folds = sorted({int(r["fold"]) for r in rows})
        fold_col = np.array([int(r["fold"]) for r in rows])
        per_fold = []
        for k in folds:
            sel = fold_col == k
            rep = weighted_report(confusion_matrix(pred[sel], true[sel]))
            per_fold.append(rep)
            csv_rows.extend(report_rows(rep, str(k)))
        agg = aggregate_folds(per_fold)
        parts += ["", f"mean ± std over {len(folds)} folds (%)", format_aggregate(agg)]
    accuracy_line = f"overall accuracy: {100 * overall['weighted']['accuracy']:.2f}%"
    parts += ["", accuracy_line]
    text = "\n".join(parts) + "\n"
    stem = name or "metrics"
    reports = cfg.workdir / "reports"
    write_report_csv(reports / f"{stem}.csv", csv_rows)
    (reports / f"{stem}.txt").write_text(text, encoding="utf-8")
    plot_confusion(cm, reports / f"{stem}_confusion.png")
    for out in (f"{stem}.csv", f"{stem}.txt", f"{stem}_confusion.png"):
        write_sidecar(reports / out, cfg, "eval", source=path.name)
    return text


# -- interpretability and timing ------------------------------------------------------

def run_cam(cfg, variant="gray", fold=0, ids=None):
    from .scorecam import export_raw, overlay_export, score_cam

    layout(cfg)
    manifest = load_run_manifest(cfg, check_files=False)
    plan = load_plan(cfg)
    model = checkpoint_load(require(checkpoint_path(cfg, variant, fold), "train"))
    records = manifest.by_id
    if not ids:
        test = plan.folds[fold].test
        ids = [s for s in test if records[s].label == 1][:cfg.get("cam.count")]
    layer = cfg.get("cam.layer") or None
    written = []
    for sid in ids:
        if sid not in records:
            raise KeyError(f"unknown sample id {sid!r}")
        image = load_variant_images(cfg, variant, [sid])[0]
        result = score_cam(model, image, layer, cfg.get("cam.target"))
        png = cfg.workdir / "cams" / f"{variant}_{sid}.png"
        overlay_export(image, result.cam, png)
        export_raw(result.cam, png.with_suffix(".cam"))
        write_sidecar(png, cfg, "cam", variant=variant, fold=fold, layer=result.layer)
        written.append(png)
    log.info("cam: %d overlays", len(written))
    return written


def run_bench(cfg, variant="gray", fold=0):
    """Per-image inference latency in ms: (mean, std) after warmup."""
    model = checkpoint_load(require(checkpoint_path(cfg, variant, fold), "train"))
    plan = load_plan(cfg)
    image = load_variant_images(cfg, variant, plan.folds[fold].test[:1])
    for _ in range(cfg.get("bench.warmup")):
        predict_proba(model, image)
    times = []
    for _ in range(max(cfg.get("bench.runs"), 100)):
        start = time.perf_counter()
        predict_proba(model, image)
        times.append(1000.0 * (time.perf_counter() - start))
    return float(np.mean(times)), float(np.std(times))
