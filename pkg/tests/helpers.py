"""Shared builders, strategies and brute-force oracles for the test suite."""
from __future__ import annotations

import itertools

from hypothesis import strategies as st

from remixmine.model import Author, Event, EventKind, SongForest, SongNode, encode_payload

AUTHORS = tuple(f"A{i}" for i in range(6))


def forest_from_parents(trees, authors=None, start=0):
    """Build a forest from ``[(parents, authors), ...]``.

    ``parents[i]`` is the index of node i's parent inside its tree (None for
    the root, which must be index 0); parents precede children.
    """
    nodes = []
    clock = start
    n = 0
    for parents, who in trees:
        ids = []
        for p, a in zip(parents, who):
            n += 1
            clock += 7
            sid = f"S{n:05d}"
            ids.append(sid)
            nodes.append(SongNode(sid, a, None if p is None else ids[p], clock))
    if authors is None:
        authors = {n.author_id: Author(n.author_id) for n in nodes}
    return SongForest.from_nodes(nodes, authors, log_end=clock + 7)


@st.composite
def tree_specs(draw, max_nodes=8, authors=AUTHORS):
    size = draw(st.integers(1, max_nodes))
    parents = [None] + [draw(st.integers(0, i - 1)) for i in range(1, size)]
    who = [draw(st.sampled_from(authors)) for _ in range(size)]
    return parents, who


@st.composite
def forests(draw, max_trees=30, max_nodes=8, authors=AUTHORS):
    specs = draw(st.lists(tree_specs(max_nodes, authors), min_size=1, max_size=max_trees))
    return forest_from_parents(specs)


class EventLog:
    """Tiny event-log builder with automatic ids."""

    def __init__(self):
        self.events = []

    def add(self, kind, ts, actor, subject=None, target=None, **payload):
        self.events.append(Event(
            f"e{len(self.events):05d}", EventKind(kind), ts, actor, subject, target,
            encode_payload(**payload),
        ))
        return self

    def upload(self, ts, actor, sid, parent=None, flags=None):
        kind = "song_uploaded" if parent is None else "overdub_uploaded"
        return self.add(kind, ts, actor, sid, parent=parent, flags=flags)


def naive_itemsets(forest):
    """Every author set of every contiguous path window, counted once per tree.

    Paths are recovered by walking parent links up from each leaf, which is
    a different route from both the miner and synth.oracle_mine.
    """
    counts = {}
    for tree in forest.trees:
        has_child = {n.parent_id for n in tree.nodes.values() if n.parent_id in tree.nodes}
        found = set()
        for leaf in (s for s in tree.nodes if s not in has_child):
            path = []
            cur = leaf
            while True:
                node = tree.nodes[cur]
                path.append(node.author_id)
                if cur == tree.root:
                    break
                cur = node.parent_id
            path.reverse()
            for i, j in itertools.combinations(range(len(path) + 1), 2):
                found.add(tuple(sorted(set(path[i:j]))))
        for key in found:
            counts[key] = counts.get(key, 0) + 1
    return counts


def naive_runs(seq, min_run=3):
    """Maximal equal-value runs found by testing every (start, stop) slice."""
    out = []
    n = len(seq)
    for i in range(n):
        for j in range(i + min_run, n + 1):
            block = seq[i:j]
            if len(set(block)) != 1:
                continue
            left_ok = i == 0 or seq[i - 1] != block[0]
            right_ok = j == n or seq[j] != block[0]
            if left_ok and right_ok:
                out.append((i, j - i))
    return sorted(out)


SMALL_SYNTH = {"seed": 7, "n_authors": 300, "n_trees": 200, "plays_rate": 10.0,
               "planted_collabs": [[["A", "B"], 8], [["C", "D", "E"], 6]]}


def run_pipeline(root, threads=1, synth=None):
    """Run every subcommand into ``root``; returns the artifact paths."""
    import json
    from pathlib import Path

    from remixmine.cli import main

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    p = {k: str(root / v) for k, v in {
        "synth": "synth.json", "events": "events.jsonl", "truth": "truth.jsonl",
        "forest": "forest.jsonl", "filters": "filters.jsonl", "mined": "mined.jsonl",
        "rows": "rows.tsv", "desc": "describe.json", "rrows": "rrows.tsv",
        "profile": "profile.jsonl", "fit": "fit.jsonl", "rfit": "rfit.jsonl",
        "report": "report",
    }.items()}
    Path(p["synth"]).write_text(json.dumps(synth or SMALL_SYNTH))
    t = ["--threads", str(threads)]
    steps = [
        ["synth", "--config", p["synth"], "--out", p["events"], "--truth", p["truth"]],
        ["ingest", "--input", p["events"], "--out", p["forest"], "--report-out", p["filters"]],
        ["mine", "--input", p["forest"], "--rules", "--out", p["mined"]],
        ["featurize", "--input", p["forest"], "--events", p["events"], "--out", p["rows"],
         "--describe-out", p["desc"]],
        ["featurize", "--input", p["forest"], "--events", p["events"], "--level", "recurring",
         "--collabs", p["mined"], "--out", p["rrows"]],
        ["profile", "--collabs", p["mined"], "--forest", p["forest"], "--events", p["events"],
         "--out", p["profile"]],
        ["fit", "--data", p["rows"], "--out", p["fit"]],
        ["fit", "--data", p["rrows"], "--level", "recurring", "--out", p["rfit"]],
        ["report", "--fit", p["fit"], "--mined", p["mined"], "--profile", p["profile"],
         "--out-dir", p["report"]],
    ]
    for argv in steps:
        code = main(t + argv)
        if code != 0:
            raise AssertionError(f"{argv[0]} exited {code}")
    return p
