"""Static figures for the report subcommand (matplotlib, Agg backend)."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# no software/date stamps, so reruns produce identical files
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata=_META)
    plt.close(fig)


def factor_change_plot(coef_recs, path, title=""):
    """exp(beta) with 95% intervals on a log axis, one panel per model part."""
    parts = []
    for r in coef_recs:
        if r["part"] not in parts and r["predictor"] != "(intercept)":
            parts.append(r["part"])
    if not parts:
        parts = ["count"]
    fig, axes = plt.subplots(1, len(parts), figsize=(5 * len(parts), 0.35 * len(coef_recs) + 2),
                             squeeze=False)
    for ax, part in zip(axes[0], parts):
        rows = [r for r in coef_recs if r["part"] == part and r["predictor"] != "(intercept)"]
        names, mid, lo, hi = [], [], [], []
        for r in rows:
            se = r["clustered_se"] if r["clustered_se"] is not None else r["se"]
            if se is None or not math.isfinite(r["beta"]):
                continue
            names.append(r["predictor"] + r["stars"])
            mid.append(math.exp(r["beta"]))
            lo.append(math.exp(r["beta"]) - math.exp(r["beta"] - 1.96 * se))
            hi.append(math.exp(r["beta"] + 1.96 * se) - math.exp(r["beta"]))
        ys = list(range(len(names)))[::-1]
        ax.errorbar(mid, ys, xerr=[lo, hi], fmt="o", color="black", capsize=3)
        ax.axvline(1.0, color="grey", linestyle="--", linewidth=1)
        ax.set_xscale("log")
        ax.set_yticks(ys)
        ax.set_yticklabels(names, fontsize=8)
        ax.set_xlabel("exp(beta)")
        ax.set_title(f"{title} {part}".strip())
    _save(fig, path)


def lift_plot(collab_recs, path):
    """Lift against co-occurrence count per mined collaboration."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x = [r["collaborations"] for r in collab_recs]
    y = [r["lift"] for r in collab_recs]
    sizes = [20 * len(r["members"]) for r in collab_recs]
    ax.scatter(x, y, s=sizes, alpha=0.7, color="tab:blue", edgecolor="black")
    for r in collab_recs[:15]:
        ax.annotate(r["id"], (r["collaborations"], r["lift"]), fontsize=7,
                    xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("trees with the itemset")
    ax.set_ylabel("lift")
    ax.set_yscale("log")
    ax.set_title("mined collaborations")
    _save(fig, path)


def bins_plot(values_by_feature: dict, binner_recs, path):
    """Strip plot of each profiled feature with its k-means cut points."""
    feats = [b for b in binner_recs if b["feature"] in values_by_feature]
    if not feats:
        fig, ax = plt.subplots(figsize=(5, 2))
        ax.text(0.5, 0.5, "no binned features", ha="center", va="center")
        ax.set_axis_off()
        _save(fig, path)
        return
    fig, axes = plt.subplots(len(feats), 1, figsize=(7, 1.6 * len(feats)), squeeze=False)
    for ax, b in zip(axes[:, 0], feats):
        vals = values_by_feature[b["feature"]]
        ax.scatter(vals, [0] * len(vals), marker="|", s=200, color="tab:orange")
        c = b["centers"]
        for i in range(len(c) - 1):
            ax.axvline((c[i] + c[i + 1]) / 2, color="black", linestyle=":")
        ax.set_yticks([])
        ax.set_title(f"{b['feature']} (k={b['k']})", fontsize=9)
    _save(fig, path)
