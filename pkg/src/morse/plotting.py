"""Report figures written next to the tab-delimited outputs."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}
# PNG metadata carries no timestamp but does carry the library version; drop it
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def plot_history(history, path, title="training"):
    """Train loss and dev accuracy per epoch, with the learning rate on a twin axis."""
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3))
        epochs = [r.epoch for r in history]
        ax1.plot(epochs, [r.train_loss for r in history], color="C0")
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("train loss")
        ax2.plot(epochs, [r.dev_acc for r in history], color="C1", label="dev acc")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("dev accuracy (%)")
        lr_ax = ax2.twinx()
        lr_ax.step(epochs, [r.lr for r in history], where="post", color="C2", lw=0.8, label="lr")
        lr_ax.set_ylabel("learning rate")
        ax1.set_title(title)
        _save(fig, path)


def plot_buckets(report, path):
    """One panel per bucket kind: token counts and accuracy by train frequency."""
    kinds = list(report.buckets)
    if not kinds:
        return False
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(kinds), figsize=(4 * len(kinds), 3), squeeze=False)
        for ax, kind in zip(axes[0], kinds):
            table = report.buckets[kind]
            x = range(len(table))
            tag = [b.tag_acc if b.tag_acc is not None else math.nan for b in table]
            lt = [b.lemma_tag_acc if b.lemma_tag_acc is not None else math.nan for b in table]
            ax.bar([i - 0.2 for i in x], tag, width=0.4, label="tag")
            ax.bar([i + 0.2 for i in x], lt, width=0.4, label="lemma+tag")
            ax.set_xticks(list(x))
            ax.set_xticklabels([f"{b.label}\n(n={b.n_tokens})" for b in table])
            ax.set_ylim(0, 100)
            ax.set_ylabel("accuracy (%)")
            ax.set_title(f"{kind} frequency in train")
            ax.legend(loc="lower right")
        _save(fig, path)
    return True


def plot_rare_tags(train_counts, test_tags, path, max_threshold=100):
    """Share of test tokens whose tag was seen fewer than k times in train."""
    ks = list(range(1, max_threshold + 1))
    n = len(test_tags)
    pct = [100.0 * sum(train_counts.get(t, 0) < k for t in test_tags) / n for k in ks]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(ks, pct)
        ax.set_xscale("log")
        ax.set_xlabel("train frequency threshold k")
        ax.set_ylabel("test tokens with tag count < k (%)")
        _save(fig, path)
