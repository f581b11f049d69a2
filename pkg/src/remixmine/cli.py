"""Command-line pipeline: synth, ingest, mine, featurize, profile, fit, report.

Every artifact is line-delimited text written in a fixed order, so rerunning
a subcommand on unchanged inputs reproduces its outputs byte for byte.
"""
from __future__ import annotations

import argparse
import dataclasses
import io
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, RemixMineError

log = logging.getLogger("remixmine")

SECTIONS = {"paths", "filters", "miner", "regression", "profiler", "synth", "threads", "log_level"}
PATH_KEYS = {"events", "forest", "mined", "rows", "fit", "profile", "out_dir", "truth",
             "filter_report"}
REGRESSION_KEYS = {"protocol", "outcome", "cluster", "corr_threshold", "alpha", "level"}
PROFILER_KEYS = {"k", "max_norm_distance", "keywords", "min_run"}
MINER_KEYS = {"min_occurrences", "min_lift", "minsup"}


@dataclasses.dataclass
class PipelineConfig:
    paths: dict = dataclasses.field(default_factory=dict)
    filters: dict = dataclasses.field(default_factory=dict)
    miner: dict = dataclasses.field(default_factory=dict)
    regression: dict = dataclasses.field(default_factory=dict)
    profiler: dict = dataclasses.field(default_factory=dict)
    synth: dict = dataclasses.field(default_factory=dict)
    threads: int = 1
    log_level: str = "WARNING"

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        unknown = set(data) - SECTIONS
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        for name, allowed in (("paths", PATH_KEYS), ("regression", REGRESSION_KEYS),
                              ("profiler", PROFILER_KEYS), ("miner", MINER_KEYS)):
            bad = set(data.get(name, {})) - allowed
            if bad:
                raise ConfigError(f"unknown {name} key(s): {sorted(bad)}")
        cfg = cls(**data)
        # validate nested sections eagerly so typos fail before any work
        from .ingest import FilterConfig
        from .synth import SynthConfig
        FilterConfig.from_dict(cfg.filters)
        if cfg.synth:
            SynthConfig.from_dict(cfg.synth)
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# helpers


def _pick(args, name, cfg_section, key=None, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg_section.get(key or name, default)


def _need(path, what):
    if path is None:
        raise ConfigError(f"missing required path: {what}")
    if not Path(path).exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _out(path, what):
    if path is None:
        raise ConfigError(f"missing output path: {what}")
    parent = Path(path).parent
    if str(parent) and not parent.exists():
        parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _read_jsonl(path):
    from .report import read_records
    with open(path, encoding="utf-8") as fh:
        return read_records(fh)


def _forest_from(path):
    from .ingest import build_forest, read_event_log
    return build_forest(read_event_log(path))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg):
    from .ingest import write_event_log
    from .synth import SynthConfig, generate, write_truth
    data = dict(cfg.synth)
    if args.synth_config:
        with open(_need(args.synth_config, "synth config"), encoding="utf-8") as fh:
            data.update(json.load(fh))
    if args.seed is not None:
        data["seed"] = args.seed
    scfg = SynthConfig.from_dict(data)
    events, truth = generate(scfg)
    out = _out(_pick(args, "out", cfg.paths, "events"), "--out")
    buf = io.StringIO()
    write_event_log(events, buf)
    _write_text(out, buf.getvalue())
    truth_path = _pick(args, "truth", cfg.paths)
    if truth_path:
        buf = io.StringIO()
        write_truth(truth, buf)
        _write_text(_out(truth_path, "--truth"), buf.getvalue())
    log.info("wrote %d events", len(events))
    return 0


def cmd_ingest(args, cfg):
    from .ingest import (FilterConfig, apply_filters, build_forest, forest_to_events,
                         read_event_log, write_event_log)
    from .report import dumps
    src = _need(_pick(args, "input", cfg.paths, "events"), "--input")
    fdata = dict(cfg.filters)
    if args.filters:
        with open(_need(args.filters, "--filters"), encoding="utf-8") as fh:
            fdata.update(json.load(fh))
    fcfg = FilterConfig.from_dict(fdata)
    forest = build_forest(read_event_log(src))
    kept, rep = apply_filters(forest, fcfg)
    buf = io.StringIO()
    write_event_log(forest_to_events(kept), buf)
    _write_text(_out(_pick(args, "out", cfg.paths, "forest"), "--out"), buf.getvalue())
    rep_path = _pick(args, "report_out", cfg.paths, "filter_report")
    if rep_path:
        _write_text(_out(rep_path, "--report-out"), dumps(rep.to_dict()) + "\n")
    log.info("retained %d of %d songs", rep.retained_songs, rep.input_songs)
    return 0


def cmd_mine(args, cfg):
    from .ingest import mining_subset
    from .miner import MinerConfig, count_itemsets, generate_rules, mine_recurring, transactions
    from .report import collab_record, dumps
    src = _need(_pick(args, "input", cfg.paths, "forest"), "--input")
    mcfg = MinerConfig(
        min_occurrences=_pick(args, "min_occ", cfg.miner, "min_occurrences", 3),
        min_lift=_pick(args, "min_lift", cfg.miner, "min_lift", 1.0),
        minsup=_pick(args, "minsup", cfg.miner, "minsup", None),
    )
    forest = mining_subset(_forest_from(src))
    collabs = mine_recurring(forest, mcfg, threads=args.threads)
    lines = [dumps(collab_record(c)) for c in collabs]
    if args.rules:
        stats = count_itemsets(transactions(forest, args.threads), args.threads)
        for r in generate_rules(stats, mcfg):
            lines.append(dumps({
                "record": "rule", "antecedent": list(r.antecedent),
                "consequent": list(r.consequent), "lift": r.lift,
                "occurrences": r.occurrences, "support": r.support,
            }))
    _write_text(_out(_pick(args, "out", cfg.paths, "mined"), "--out"),
                "".join(line + "\n" for line in lines))
    log.info("mined %d collaborations from %d trees", len(collabs), len(forest.trees))
    return 0


def cmd_featurize(args, cfg):
    from .features import EventIndex, build_rows, describe, write_rows
    from .ingest import build_forest, read_event_log
    from .report import collab_from_record, dumps
    forest = _forest_from(_need(_pick(args, "input", cfg.paths, "forest"), "--input"))
    events = read_event_log(_need(_pick(args, "events", cfg.paths), "--events"))
    index = EventIndex(events, build_forest(events))
    level = _pick(args, "level", cfg.regression, "level", "occasional")
    collabs = None
    if level == "recurring":
        mined = _need(_pick(args, "collabs", cfg.paths, "mined"), "--collabs")
        collabs = [collab_from_record(r) for r in _read_jsonl(mined)
                   if r.get("record") == "collab"]
    rows = build_rows(forest, index, level, collabs, threads=args.threads)
    buf = io.StringIO()
    write_rows(rows, buf)
    _write_text(_out(_pick(args, "out", cfg.paths, "rows"), "--out"), buf.getvalue())
    if args.describe_out and rows:
        _write_text(_out(args.describe_out, "--describe-out"), dumps(describe(rows)) + "\n")
    log.info("wrote %d %s rows", len(rows), level)
    return 0


def cmd_profile(args, cfg):
    from .features import EventIndex
    from .ingest import build_forest, read_event_log
    from .profiler import DEFAULT_KEYWORDS, profile_collaborations
    from .report import collab_from_record, collab_record, dumps
    collabs = [collab_from_record(r)
               for r in _read_jsonl(_need(_pick(args, "collabs", cfg.paths, "mined"),
                                          "--collabs"))
               if r.get("record") == "collab"]
    forest = _forest_from(_need(_pick(args, "forest", cfg.paths), "--forest"))
    events_path = _pick(args, "events", cfg.paths)
    if events_path:
        events = read_event_log(_need(events_path, "--events"))
    else:
        from .ingest import forest_to_events
        events = forest_to_events(forest)
    index = EventIndex(events, build_forest(events))
    p = cfg.profiler
    res = profile_collaborations(
        collabs, forest, index, k=_pick(args, "k", p, "k"),
        max_norm_distance=_pick(args, "max_norm_distance", p, default=0.3),
        keywords=tuple(p.get("keywords", DEFAULT_KEYWORDS)),
        min_run=p.get("min_run", 3),
    )
    lines = [dumps(collab_record(c)) for c in res.collabs]
    for feat, b in res.binners.items():
        lines.append(dumps({"record": "binner", "feature": feat, "k": b.k,
                            "intervals": [list(iv) for iv in b.intervals],
                            "centers": list(b.centers), "labels": list(b.labels)}))
    for s in res.similarity:
        lines.append(dumps({"record": "similarity", **dataclasses.asdict(s)}))
    for cd in res.candidates:
        lines.append(dumps({"record": "candidate", "id": cd.collab_id,
                            "authors": list(cd.authors), "evidence": cd.evidence,
                            "detail": cd.detail}))
    for run in res.self_runs:
        lines.append(dumps({"record": "self_overdub_run", "author": run.author,
                            "song_ids": list(run.song_ids), "length": run.length}))
    _write_text(_out(_pick(args, "out", cfg.paths, "profile"), "--out"),
                "".join(line + "\n" for line in lines))
    return 0


FIT_PROTOCOLS = ("select", "poisson", "negbin", "hurdle", "zinb")


def cmd_fit(args, cfg):
    from . import countreg as cr
    from .features import OCCASIONAL_PREDICTORS, RECURRING_PREDICTORS, read_rows, \
        transform_and_screen
    from .report import coefficient_records, dumps, model_record
    reg = cfg.regression
    data = _need(_pick(args, "data", cfg.paths, "rows"), "--data")
    with open(data, encoding="utf-8", newline="") as fh:
        rows = read_rows(fh)
    outcome = _pick(args, "outcome", reg, default="overdubs")
    if outcome != "overdubs":
        raise ConfigError(f"unsupported outcome column {outcome!r}; rows carry 'overdubs'")
    cluster_col = _pick(args, "cluster", reg, default="author_id")
    if cluster_col not in ("author_id", "cluster_id", "song_id", "none"):
        raise ConfigError(f"unknown cluster column {cluster_col!r}")
    level = _pick(args, "level", reg, default="occasional")
    predictors = RECURRING_PREDICTORS if level == "recurring" else OCCASIONAL_PREDICTORS
    design = transform_and_screen(rows, _pick(args, "corr_threshold", reg, default=0.7),
                                  predictors)
    clusters = None if cluster_col == "none" else [getattr(r, cluster_col) for r in rows]
    protocol = _pick(args, "protocol", reg, default="select")
    alpha = reg.get("alpha", 0.05)
    lines = [dumps({"record": "dataset", "rows": len(rows), "level": level,
                    "predictors": design.columns, "cluster": cluster_col})]
    for d in design.dropped:
        lines.append(dumps({"record": "dropped", **d}))
    X, y = design.X, design.y
    names = design.columns
    if protocol == "select":
        winner, trace = cr.select_model(X, y, clusters, names=names, alpha=alpha)
        models = trace.models
        for name, t in trace.tests.items():
            lines.append(dumps({"record": "test", "name": name, "kind": t.kind,
                                "statistic": t.statistic, "p_value": t.p_value,
                                "p_value_plain": t.p_value_plain, "preferred": t.preferred}))
        for i, line in enumerate(trace.lines):
            lines.append(dumps({"record": "trace", "step": i, "text": line}))
        selected = winner.family
    else:
        fit = {"poisson": cr.fit_poisson, "negbin": cr.fit_negbin,
               "hurdle": lambda X, y, names: cr.fit_hurdle(X, None, y, names=names),
               "zinb": lambda X, y, names: cr.fit_zinb(X, None, y, names=names)}[protocol]
        m = fit(X, y, names=names)
        if clusters is not None:
            m = cr.with_clusters(m, clusters)
        models = {m.family: m}
        selected = m.family
    for name in sorted(models):
        m = models[name]
        lines.append(dumps(model_record(name, m)))
        lines.extend(dumps(r) for r in coefficient_records(name, m, level))
    lines.append(dumps({"record": "selected", "model": selected}))
    _write_text(_out(_pick(args, "out", cfg.paths, "fit"), "--out"),
                "".join(line + "\n" for line in lines))
    return 0


def cmd_report(args, cfg):
    from . import plots
    from .report import render_binner_table, render_collab_table, render_regression_table
    out_dir = Path(_out(_pick(args, "out_dir", cfg.paths), "--out-dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    wrote = 0
    fit_path = _pick(args, "fit", cfg.paths)
    if fit_path:
        recs = _read_jsonl(_need(fit_path, "--fit"))
        models = [r for r in recs if r["record"] == "model"]
        selected = next((r["model"] for r in recs if r["record"] == "selected"), None)
        text = []
        for m in models:
            coefs = [r for r in recs if r["record"] == "coef" and r["model"] == m["model"]]
            mark = " (selected)" if m["model"] == selected else ""
            text.append(render_regression_table(m, coefs, f"== {m['model']}{mark} =="))
            plots.factor_change_plot(coefs, out_dir / f"factor_change_{m['model']}.png",
                                     m["model"])
        trace = [r["text"] for r in recs if r["record"] == "trace"]
        if trace:
            text.append("== selection trace ==\n" + "\n".join(trace) + "\n")
        dropped = [r for r in recs if r["record"] == "dropped"]
        if dropped:
            text.append("== screened predictors ==\n"
                        + "\n".join(f"{d['predictor']}: {d['reason']}" for d in dropped) + "\n")
        _write_text(out_dir / "regression.txt", "\n".join(text))
        wrote += 1
    for key in ("profile", "mined"):
        path = _pick(args, key, cfg.paths)
        if not path:
            continue
        recs = _read_jsonl(_need(path, f"--{key}"))
        collabs = [r for r in recs if r["record"] == "collab"]
        binners = [r for r in recs if r["record"] == "binner"]
        text = render_collab_table(collabs)
        if binners:
            text += "\n" + render_binner_table(binners)
        _write_text(out_dir / f"collaborations_{key}.txt", text)
        plots.lift_plot(collabs, out_dir / f"lift_{key}.png")
        if binners:
            vals = {b["feature"]: [float(c[b["feature"]]) for c in collabs] for b in binners}
            plots.bins_plot(vals, binners, out_dir / "bins.png")
        wrote += 1
    if not wrote:
        raise ConfigError("report needs at least one of --fit, --mined, --profile")
    return 0


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "mine": cmd_mine, "featurize": cmd_featurize,
    "profile": cmd_profile, "fit": cmd_fit, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="remixmine",
                                description="Remix-tree mining and reuse regression pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="pipeline config (JSON)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default 1)")
    p.add_argument("--log-level", default=None,
                   choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("synth", help="generate a synthetic event log with planted structure")
    s.add_argument("--config", dest="synth_config", help="synth parameters (JSON)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="event log to write")
    s.add_argument("--truth", help="ground-truth records to write")

    s = sub.add_parser("ingest", help="parse an event log and apply exclusion filters")
    s.add_argument("--input", help="event log (JSONL)")
    s.add_argument("--filters", help="filter options (JSON)")
    s.add_argument("--out", help="filtered forest (JSONL event subset)")
    s.add_argument("--report-out", dest="report_out", help="per-criterion filter report")

    s = sub.add_parser("mine", help="mine recurring collaborations")
    s.add_argument("--input", help="forest from ingest")
    s.add_argument("--min-occ", dest="min_occ", type=int)
    s.add_argument("--min-lift", dest="min_lift", type=float)
    s.add_argument("--minsup", type=float)
    s.add_argument("--rules", action="store_true", help="also emit association rules")
    s.add_argument("--out")

    s = sub.add_parser("featurize", help="build the regression dataset")
    s.add_argument("--input", help="forest from ingest")
    s.add_argument("--events", help="full event log")
    s.add_argument("--level", choices=["occasional", "recurring"])
    s.add_argument("--collabs", help="mined collaborations (recurring level)")
    s.add_argument("--out", help="rows (TSV)")
    s.add_argument("--describe-out", dest="describe_out", help="descriptive statistics (JSON)")

    s = sub.add_parser("profile", help="profile mined collaborations")
    s.add_argument("--collabs")
    s.add_argument("--forest")
    s.add_argument("--events")
    s.add_argument("--k", type=int, help="fixed number of bins per feature")
    s.add_argument("--max-norm-distance", dest="max_norm_distance", type=float)
    s.add_argument("--out")

    s = sub.add_parser("fit", help="fit count models to a regression dataset")
    s.add_argument("--data")
    s.add_argument("--outcome")
    s.add_argument("--cluster", help="author_id, cluster_id, song_id or none")
    s.add_argument("--level", choices=["occasional", "recurring"])
    s.add_argument("--protocol", choices=FIT_PROTOCOLS)
    s.add_argument("--corr-threshold", dest="corr_threshold", type=float)
    s.add_argument("--out")

    s = sub.add_parser("report", help="render tables and figures")
    s.add_argument("--fit")
    s.add_argument("--mined")
    s.add_argument("--profile")
    s.add_argument("--out-dir", dest="out_dir")
    return p


def _origin(exc) -> str:
    tb = exc.__traceback__
    name = "remixmine"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("remixmine"):
            name = mod
        tb = tb.tb_next
    return name


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    except (RemixMineError, OSError) as exc:
        print(f"remixmine: config: {exc}", file=sys.stderr)
        return 2
    level = args.log_level or cfg.log_level
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args.threads = args.threads if args.threads is not None else int(cfg.threads)
    if args.threads < 1:
        print("remixmine: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        with np.errstate(all="ignore"):
            return COMMANDS[args.command](args, cfg)
    except (RemixMineError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        log.debug("".join(traceback.format_exception(type(exc), exc, exc.__traceback__)))
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"remixmine {args.command}: {_origin(exc)}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
