"""Report figures rendered to PNG with the Agg backend."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so repeated runs write identical bytes
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_confusion(cm, path, title="Confusion matrix"):
    counts = cm.as_array()
    fig, ax = plt.subplots(figsize=(4, 3.6))
    ax.imshow(counts, cmap="Blues")
    labels = ["non-nodule", "nodule"]
    ax.set_xticks([0, 1], labels)
    ax.set_yticks([0, 1], labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    top = counts.max() if counts.max() else 1
    for (r, c), v in np.ndenumerate(counts):
        ax.text(c, r, str(v), ha="center", va="center", color="white" if v > top / 2 else "black")
    fig.tight_layout()
    _save(fig, path)


def plot_history(history, path, title="Training history"):
    epochs = [row["epoch"] for row in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax_loss.plot(epochs, [r["train_loss"] for r in history], label="train")
    ax_loss.plot(epochs, [r["val_loss"] for r in history], label="val")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_acc.plot(epochs, [r["train_acc"] for r in history], label="train")
    ax_acc.plot(epochs, [r["val_acc"] for r in history], label="val")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.legend()
    fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def plot_learner_accuracies(accuracies, path, selected=()):
    kinds = list(accuracies)
    vals = [100 * accuracies[k] for k in kinds]
    colors = ["tab:red" if k in selected else "tab:gray" for k in kinds]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(kinds, vals, color=colors)
    lo = min(vals)
    ax.set_ylim(max(0.0, lo - 2.0), 100.0)
    ax.set_ylabel("accuracy (%)")
    ax.set_title("Base learners on the probability table")
    fig.tight_layout()
    _save(fig, path)
