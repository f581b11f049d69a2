"""Line-delimited records and plain-text tables for pipeline artifacts."""
from __future__ import annotations

import json
import math

import numpy as np

from .countreg import FittedModel, aic, factor_change

# predictor -> (level, hypothesis); badges and flags match on their prefix
MEASURE_GROUPS = {
    "likes": ("S", "H1"), "bookmarks": ("S", "H1"), "plays": ("S", "H1"),
    "reposts": ("S", "H1"), "comments": ("S", "H1"),
    "upload_time_interval": ("S", "H2"),
    "song_depth": ("S", "H3"),
    "followers": ("A", "H4"), "ranking": ("A", "H4"), "new_songs_badge": ("A", "H4"),
    "overdubs_badge": ("A", "H4"), "overdubs_received_badge": ("A", "H4"),
    "has_avatar": ("A", "H5"),
    "has_tags": ("S", "H6"),
    "invitations": ("S", "H7"),
    "msg_exchange_rate": ("A", "H8"), "sent_messages": ("A", "H8"),
    "received_messages": ("A", "H8"),
}

PART_TITLES = {"count": "Count part", "binary": "Binary part", "inflate": "Inflation part"}


def group_of(predictor: str):
    return MEASURE_GROUPS.get(predictor.split("=", 1)[0], ("", ""))


def clean(value):
    """Make ``value`` JSON-safe: NaN/inf become None, numpy scalars plain."""
    if isinstance(value, dict):
        return {str(k): clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.ndarray):
        return clean(value.tolist())
    return value


def dumps(record) -> str:
    return json.dumps(clean(record), sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_records(records, stream) -> None:
    for r in records:
        stream.write(dumps(r) + "\n")


def read_records(stream) -> list:
    return [json.loads(line) for line in stream if line.strip()]


# ---------------------------------------------------------------------------
# regression artifacts


def model_record(name, m: FittedModel) -> dict:
    return {
        "record": "model", "model": name, "family": m.family,
        "log_likelihood": m.log_likelihood, "aic": aic(m), "n_params": m.n_params,
        "n_obs": m.n_obs, "converged": m.converged, "iterations": m.iterations,
        "dispersion": m.dispersion, "boundary": m.boundary, "degenerate": m.degenerate,
        "gradient_norm": m.gradient_norm, "part_loglik": m.part_loglik,
    }


def coefficient_records(name, m: FittedModel, level="") -> list:
    out = []
    model_se = dict(zip(m.param_names, m.se))
    for row in factor_change(m):
        lvl, hyp = group_of(row.predictor)
        out.append({
            "record": "coef", "model": name, "family": m.family, "level": level,
            "part": row.part, "scope": lvl, "hypothesis": hyp, "predictor": row.predictor,
            "beta": row.beta, "exp_beta": row.exp_beta,
            "se": float(model_se[(row.part, row.predictor)]),
            "clustered_se": row.se if m.clustered_covariance is not None else None,
            "z": row.z, "p_value": row.p_value, "stars": row.stars,
        })
    return out


def _fmt(v, fmt=".3f"):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "-"
    return format(v, fmt)


def render_regression_table(model_rec: dict, coef_recs: list, title="") -> str:
    """Two-column layout: one block of (beta, exp(beta), SE) per model part."""
    parts = []
    for r in coef_recs:
        if r["part"] not in parts:
            parts.append(r["part"])
    preds = []
    for r in coef_recs:
        if r["predictor"] not in preds:
            preds.append(r["predictor"])
    by = {(r["part"], r["predictor"]): r for r in coef_recs}
    head = f"{'L':<2}{'H':<4}{'predictor':<38}"
    for p in parts:
        head += f"{PART_TITLES.get(p, p):>34}"
    sub = " " * 44 + "".join(f"{'beta':>14}{'exp(beta)':>10}{'SE':>10}" for _ in parts)
    lines = []
    if title:
        lines.append(title)
    lines += [head, sub, "-" * len(sub)]
    for pred in preds:
        lvl, hyp = group_of(pred)
        line = f"{lvl:<2}{hyp:<4}{pred:<38}"
        for p in parts:
            r = by.get((p, pred))
            if r is None:
                line += " " * 34
                continue
            se = r["clustered_se"] if r["clustered_se"] is not None else r["se"]
            beta = _fmt(r["beta"]) + (r["stars"] or "")
            eb = r["exp_beta"]
            eb = _fmt(eb, ".2f" if eb is None or eb < 1e5 else ".2e")
            line += f"{beta:>14}{eb:>10}{_fmt(se, '.2f'):>10}"
        lines.append(line)
    lines.append("-" * len(sub))
    lines.append(f"family {model_rec['family']}  n={model_rec['n_obs']}  "
                 f"k={model_rec['n_params']}  log likelihood {_fmt(model_rec['log_likelihood'])}"
                 f"  AIC {_fmt(model_rec['aic'])}")
    if model_rec.get("dispersion") is not None:
        lines.append(f"dispersion alpha {_fmt(model_rec['dispersion'], '.4g')}")
    lines.append("*** p<0.001, ** p<0.01, * p<0.05; SE clustered where available")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# collaboration artifacts


def collab_record(c) -> dict:
    return {
        "record": "collab", "id": c.collab_id, "members": list(c.members),
        "collaborations": c.occurrences, "minsup": c.support, "lift": c.lift,
        "first_upload": c.first_upload, "last_upload": c.last_upload,
        "song_ids": list(c.song_ids), "messages": c.messages, "invites": c.invites,
        "delta_likes": c.delta_likes, "delta_coolness": c.delta_coolness,
        "mean_likes": c.mean_likes, "mean_coolness": c.mean_coolness,
        "bins": dict(sorted(c.bins.items())), "kind": c.kind,
        "established_candidate": c.established_candidate,
    }


def collab_from_record(r):
    from .model import RecurringCollaboration
    return RecurringCollaboration(
        collab_id=r["id"], members=tuple(r["members"]), occurrences=r["collaborations"],
        support=r["minsup"], lift=r["lift"], song_ids=tuple(r.get("song_ids", ())),
        first_upload=r.get("first_upload"), last_upload=r.get("last_upload"),
        messages=r.get("messages", 0), invites=r.get("invites", 0),
        delta_likes=r.get("delta_likes", 0.0), delta_coolness=r.get("delta_coolness", 0.0),
        mean_likes=r.get("mean_likes", 0.0), mean_coolness=r.get("mean_coolness", 0.0),
        bins=r.get("bins", {}), kind=r.get("kind", "online_only"),
        established_candidate=r.get("established_candidate", False),
    )


def render_collab_table(records) -> str:
    cols = ["id", "minsup", "collab.", "members", "lift", "first", "last",
            "msgs", "invites", "d_likes", "d_cool", "kind"]
    widths = [7, 8, 8, 34, 8, 9, 9, 6, 8, 9, 9, 12]
    lines = ["".join(f"{c:<{w}}" for c, w in zip(cols, widths))]
    lines.append("-" * sum(widths))
    for r in records:
        vals = [r["id"], _fmt(r["minsup"], ".4f"), str(r["collaborations"]),
                ",".join(r["members"]), _fmt(r["lift"], ".2f"), str(r["first_upload"]),
                str(r["last_upload"]), str(r.get("messages", 0)), str(r.get("invites", 0)),
                _fmt(float(r.get("delta_likes", 0.0)), ".1f"),
                _fmt(float(r.get("delta_coolness", 0.0)), ".2f"), r.get("kind", "")]
        lines.append("".join(f"{v:<{w}}" for v, w in zip(vals, widths)))
        if r.get("bins"):
            lines.append(" " * 7 + "bins: " + ", ".join(f"{k}={v}" for k, v in r["bins"].items()))
    return "\n".join(lines) + "\n"


def render_binner_table(binner_records) -> str:
    lines = [f"{'feature':<18}{'k':<4}intervals"]
    for b in binner_records:
        iv = "  ".join(f"{lab}=[{_fmt(lo, 'g')}, {_fmt(hi, 'g')}]"
                       for lab, (lo, hi) in zip(b["labels"], b["intervals"]))
        lines.append(f"{b['feature']:<18}{b['k']:<4}{iv}")
    return "\n".join(lines) + "\n"
