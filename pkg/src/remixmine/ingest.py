"""Event-log parsing, forest reconstruction and the exclusion pipeline."""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, fields
from typing import Iterable, Optional

from .errors import ConfigError, DataIntegrityError, InsufficientDataError, ParseError
from .model import (
    Author,
    Event,
    EventKind,
    SongFlag,
    SongForest,
    SongNode,
    SongTree,
    encode_payload,
)

WIRE_FIELDS = ("id", "kind", "ts", "actor", "subject", "target", "payload")
_REQUIRED = ("id", "kind", "ts", "actor")


def event_sort_key(ev: Event):
    return (ev.timestamp, ev.event_id)


def _lines(source):
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    for raw in source:
        if isinstance(raw, (bytes, bytearray)):
            raw = raw.decode("utf-8")
        yield raw


def parse_event_log(source) -> list:
    """Parse a line-delimited JSON event log.

    ``source`` may be raw bytes, a binary or text stream, or any iterable of
    lines. Blank lines are skipped. Events come back sorted by timestamp with
    ties broken by event id.
    """
    events = []
    seen = set()
    for lineno, raw in enumerate(_lines(source), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict):
            raise ParseError("record is not an object", lineno)
        unknown = set(rec) - set(WIRE_FIELDS)
        if unknown:
            raise ParseError(f"unknown field(s) {sorted(unknown)}", lineno)
        missing = [k for k in _REQUIRED if rec.get(k) is None]
        if missing:
            raise ParseError(f"missing field(s) {missing}", lineno)
        try:
            kind = EventKind(rec["kind"])
        except ValueError:
            raise ParseError(f"unknown event kind {rec['kind']!r}", lineno) from None
        ts = rec["ts"]
        if isinstance(ts, bool) or not isinstance(ts, (int, float)):
            raise ParseError("ts must be a number of minutes", lineno)
        eid = str(rec["id"])
        if eid in seen:
            raise ParseError(f"duplicate event id {eid!r}", lineno)
        seen.add(eid)
        try:
            ev = Event(
                event_id=eid,
                kind=kind,
                timestamp=int(math.floor(ts)),
                actor=str(rec["actor"]),
                subject=None if rec.get("subject") is None else str(rec["subject"]),
                target_author=None if rec.get("target") is None else str(rec["target"]),
                payload=rec.get("payload"),
            )
        except DataIntegrityError as exc:
            raise ParseError(str(exc), lineno) from None
        events.append(ev)
    events.sort(key=event_sort_key)
    return events


def event_to_record(ev: Event) -> dict:
    return {
        "id": ev.event_id,
        "kind": ev.kind.value,
        "ts": ev.timestamp,
        "actor": ev.actor,
        "subject": ev.subject,
        "target": ev.target_author,
        "payload": ev.payload,
    }


def write_event_log(events: Iterable[Event], stream) -> None:
    for ev in events:
        stream.write(json.dumps(event_to_record(ev), separators=(",", ":")) + "\n")


def read_event_log(path) -> list:
    with open(path, "rb") as fh:
        return parse_event_log(fh)


def _flags(payload_fields) -> frozenset:
    raw = payload_fields.get("flags", "")
    try:
        return frozenset(SongFlag(f) for f in raw.split(",") if f)
    except ValueError as exc:
        raise DataIntegrityError(str(exc)) from None


def build_forest(events: Iterable[Event]) -> SongForest:
    """Reconstruct remix trees from a (sorted) event list.

    Overdubs whose parent never appears in the log become orphan roots.
    """
    authors = {}
    avatars = set()
    uploads = {}
    tags = {}
    log_end = 0
    for ev in events:
        log_end = max(log_end, ev.timestamp)
        kind = ev.kind
        if kind is EventKind.USER_REGISTERED:
            f = ev.fields
            authors[ev.actor] = Author(
                ev.actor, f.get("username", ""), f.get("bio", ""), False, ev.timestamp
            )
        elif kind is EventKind.AVATAR_SET:
            avatars.add(ev.actor)
        elif kind in (EventKind.SONG_UPLOADED, EventKind.OVERDUB_UPLOADED):
            if ev.subject is None:
                raise DataIntegrityError(f"event {ev.event_id}: upload without song id")
            if ev.subject in uploads:
                raise DataIntegrityError(f"duplicate song id {ev.subject}")
            f = ev.fields
            parent = f.get("parent") if kind is EventKind.OVERDUB_UPLOADED else None
            uploads[ev.subject] = (ev.actor, parent, ev.timestamp, _flags(f))
        elif kind is EventKind.TAG_APPLIED and ev.subject is not None:
            tag = ev.fields.get("tag")
            if tag:
                tags.setdefault(ev.subject, set()).add(tag)

    nodes = []
    for sid, (actor, parent, ts, flags) in uploads.items():
        orphan = parent is not None and parent not in uploads
        if parent is not None and not orphan and uploads[parent][2] >= ts:
            raise DataIntegrityError(
                f"overdub {sid} uploaded at {ts}, not after parent {parent}"
            )
        nodes.append(
            SongNode(sid, actor, parent, ts, frozenset(tags.get(sid, ())), flags, orphan)
        )
        if actor not in authors:
            authors[actor] = Author(actor)
    for aid in avatars:
        a = authors.get(aid, Author(aid))
        authors[aid] = Author(a.author_id, a.username, a.bio, True, a.registered_at)
    return SongForest.from_nodes(nodes, authors, log_end)


def forest_to_events(forest: SongForest) -> list:
    """Serialize a forest as the minimal event log that rebuilds it."""
    events = []
    for aid in sorted(forest.authors):
        a = forest.authors[aid]
        events.append(Event(
            f"reg:{aid}", EventKind.USER_REGISTERED, a.registered_at, aid,
            payload=encode_payload(username=a.username, bio=a.bio),
        ))
        if a.has_avatar:
            events.append(Event(f"avatar:{aid}", EventKind.AVATAR_SET, a.registered_at, aid))
    for node in forest.iter_nodes():
        flags = ",".join(sorted(f.value for f in node.flags)) or None
        if node.parent_id is None:
            events.append(Event(
                f"up:{node.song_id}", EventKind.SONG_UPLOADED, node.uploaded_at,
                node.author_id, subject=node.song_id, payload=encode_payload(flags=flags),
            ))
        else:
            events.append(Event(
                f"up:{node.song_id}", EventKind.OVERDUB_UPLOADED, node.uploaded_at,
                node.author_id, subject=node.song_id,
                payload=encode_payload(parent=node.parent_id, flags=flags),
            ))
        for i, tag in enumerate(sorted(node.tags)):
            events.append(Event(
                f"tag:{node.song_id}:{i}", EventKind.TAG_APPLIED, node.uploaded_at,
                node.author_id, subject=node.song_id, payload=encode_payload(tag=tag),
            ))
    events.sort(key=event_sort_key)
    return events


# ---------------------------------------------------------------------------
# exclusion pipeline

CRITERIA = (
    "admin",
    "before_window",
    "censored",
    "closed_complete",
    "hidden",
    "orphan",
    "self_overdub",
    "remix_only",
    "contest",
)

_ALL_FLAGS = frozenset(SongFlag)


@dataclass(frozen=True)
class FilterConfig:
    admin_ids: frozenset = frozenset()
    window_start: int = 0
    # None disables right-censoring; censor_minutes pins the threshold directly
    censor_percentile: Optional[float] = 0.9
    censor_minutes: Optional[int] = None
    drop_flags: frozenset = _ALL_FLAGS
    drop_self_overdubs: bool = True
    drop_orphans: bool = True

    def __post_init__(self):
        object.__setattr__(self, "admin_ids", frozenset(str(a) for a in self.admin_ids))
        try:
            object.__setattr__(self, "drop_flags", frozenset(SongFlag(f) for f in self.drop_flags))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        p = self.censor_percentile
        if p is not None and not 0 < p < 1:
            raise ConfigError("censor_percentile must lie strictly between 0 and 1")
        if self.censor_minutes is not None and self.censor_minutes < 0:
            raise ConfigError("censor_minutes must be non-negative")

    @classmethod
    def none(cls) -> "FilterConfig":
        """A configuration that removes nothing."""
        return cls(censor_percentile=None, drop_flags=(), drop_self_overdubs=False,
                   drop_orphans=False)

    @classmethod
    def from_dict(cls, data: dict) -> "FilterConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown filter option(s): {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class FilterReport:
    counts: dict
    input_songs: int
    retained_songs: int
    retained_authors: int
    censor_threshold_minutes: int
    removed_authors: int = 0

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "input_songs": self.input_songs,
            "retained_songs": self.retained_songs,
            "retained_authors": self.retained_authors,
            "removed_authors": self.removed_authors,
            "censor_threshold_minutes": self.censor_threshold_minutes,
        }


def nearest_rank(values, percentile: float):
    """Nearest-rank empirical percentile (no interpolation)."""
    ordered = sorted(values)
    if not ordered:
        raise InsufficientDataError("no values to take a percentile of")
    # the epsilon keeps 0.9 * 10 from rounding up to rank 10
    rank = max(1, math.ceil(percentile * len(ordered) - 1e-9))
    return ordered[rank - 1]


def first_overdub_intervals(forest: SongForest) -> list:
    out = []
    for tree in forest.trees:
        for sid, kids in tree.children.items():
            if kids:
                out.append(tree.nodes[kids[0]].uploaded_at - tree.nodes[sid].uploaded_at)
    return out


def censor_threshold(forest: SongForest, percentile: float) -> int:
    intervals = first_overdub_intervals(forest)
    if not intervals:
        raise InsufficientDataError("forest has no overdubs to derive a censor window from")
    return int(nearest_rank(intervals, percentile))


def _prune(forest: SongForest, alive: set, predicate) -> int:
    """Drop every alive node matching ``predicate`` together with its subtree."""
    removed = 0
    for tree in forest.trees:
        if tree.root not in alive:
            continue
        stack = [tree.root]
        while stack:
            sid = stack.pop()
            if sid not in alive:
                continue
            node = tree.nodes[sid]
            if predicate(tree, node):
                sub = [sid]
                while sub:
                    s = sub.pop()
                    if s in alive:
                        alive.discard(s)
                        removed += 1
                        sub.extend(tree.children[s])
            else:
                stack.extend(tree.children[sid])
    return removed


def _restrict(forest: SongForest, alive: set) -> SongForest:
    trees = []
    for tree in forest.trees:
        if tree.root in alive:
            trees.append(SongTree(tree.root, {s: n for s, n in tree.nodes.items() if s in alive}))
    # authors who lost every song go; users who never uploaded are left alone
    had = {n.author_id for n in forest.iter_nodes()}
    used = {n.author_id for t in trees for n in t.nodes.values()}
    authors = {a: v for a, v in forest.authors.items() if a in used or a not in had}
    return SongForest(tuple(trees), authors, forest.log_end)


def apply_filters(forest: SongForest, config: FilterConfig):
    """Run the exclusion criteria in their fixed order.

    Returns the filtered forest and a :class:`FilterReport`. Each removed
    song is attributed to the first criterion that reaches it; removing a
    node removes its whole subtree.
    """
    alive = {n.song_id for n in forest.iter_nodes()}
    counts = dict.fromkeys(CRITERIA, 0)
    flags = config.drop_flags

    counts["admin"] = _prune(forest, alive, lambda t, n: n.author_id in config.admin_ids)
    counts["before_window"] = _prune(
        forest, alive, lambda t, n: n.uploaded_at < config.window_start
    )

    threshold = 0
    if config.censor_minutes is not None:
        threshold = int(config.censor_minutes)
    elif config.censor_percentile is not None:
        try:
            threshold = censor_threshold(_restrict(forest, alive), config.censor_percentile)
        except InsufficientDataError:
            threshold = 0
    cutoff = forest.log_end - threshold
    counts["censored"] = _prune(forest, alive, lambda t, n: n.uploaded_at > cutoff)

    shut = flags & {SongFlag.CLOSED, SongFlag.COMPLETE}
    counts["closed_complete"] = _prune(forest, alive, lambda t, n: bool(n.flags & shut))
    if SongFlag.HIDDEN in flags:
        counts["hidden"] = _prune(forest, alive, lambda t, n: SongFlag.HIDDEN in n.flags)
    if config.drop_orphans:
        counts["orphan"] = _prune(forest, alive, lambda t, n: n.orphan)
    if config.drop_self_overdubs:
        counts["self_overdub"] = _prune(
            forest, alive,
            lambda t, n: n.parent_id in t.nodes and not n.orphan
            and t.nodes[n.parent_id].author_id == n.author_id,
        )
    if SongFlag.REMIX_ONLY in flags:
        counts["remix_only"] = _prune(forest, alive, lambda t, n: SongFlag.REMIX_ONLY in n.flags)
    if SongFlag.CONTEST in flags:
        counts["contest"] = _prune(forest, alive, lambda t, n: SongFlag.CONTEST in n.flags)

    out = _restrict(forest, alive)
    input_authors = {n.author_id for n in forest.iter_nodes()}
    kept_authors = {n.author_id for n in out.iter_nodes()}
    report = FilterReport(
        counts=counts,
        input_songs=forest.n_songs,
        retained_songs=out.n_songs,
        retained_authors=len(kept_authors),
        censor_threshold_minutes=threshold,
        removed_authors=len(input_authors - kept_authors),
    )
    return out, report


def mining_subset(forest: SongForest) -> SongForest:
    """Keep multi-node trees that are neither orphaned nor contest trees."""
    keep = {
        s
        for tree in forest.trees
        if len(tree) > 1
        and not tree.nodes[tree.root].orphan
        and not any(SongFlag.CONTEST in n.flags for n in tree.nodes.values())
        for s in tree.nodes
    }
    return _restrict(forest, keep)
