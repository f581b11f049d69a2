"""Song- and author-level measures, regression rows and design screening.

Time-based measures count only events strictly before the query instant.
Bookmarks, invitations, tags and avatars use end-of-log values.
"""
from __future__ import annotations

import csv
import logging
from bisect import bisect_left, bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .errors import PreconditionError, UndefinedRankingError
from .model import EventKind, SongForest, SongNode

log = logging.getLogger(__name__)

BADGE_LEVELS = {
    "new_songs_badge": ("None", "Rookie", "Songwriter", "Composer"),
    "overdubs_badge": ("None", "Performer", "Top_performer", "Virtuoso"),
    "overdubs_received_badge": ("None", "Songsmith", "Band_leader", "Maestro"),
}

CONTINUOUS = (
    "likes", "bookmarks", "plays", "reposts", "comments", "invitations",
    "upload_time_interval", "song_depth", "followers", "ranking",
    "msg_exchange_rate", "sent_messages", "received_messages",
)
BOOLEAN = ("has_tags", "has_avatar")
ORDINAL = tuple(BADGE_LEVELS)

OCCASIONAL_PREDICTORS = (
    "likes", "bookmarks", "plays", "reposts", "comments", "upload_time_interval",
    "song_depth", "followers", "ranking", "new_songs_badge", "overdubs_badge",
    "overdubs_received_badge", "has_avatar", "has_tags", "invitations",
    "msg_exchange_rate",
)
RECURRING_PREDICTORS = tuple(
    p for p in OCCASIONAL_PREDICTORS if p != "msg_exchange_rate"
) + ("sent_messages", "received_messages")


@dataclass(frozen=True)
class MeasureVector:
    likes: int = 0
    bookmarks: int = 0
    plays: int = 0
    reposts: int = 0
    comments: int = 0
    invitations: int = 0
    upload_time_interval: int = 0
    song_depth: int = 0
    has_tags: bool = False
    followers: int = 0
    ranking: float = 0.0
    msg_exchange_rate: int = 0
    sent_messages: int = 0
    received_messages: int = 0
    new_songs_badge: str = "None"
    overdubs_badge: str = "None"
    overdubs_received_badge: str = "None"
    has_avatar: bool = False


@dataclass(frozen=True)
class RegressionRow:
    song_id: str
    author_id: str
    x: int
    outcome: int
    measures: MeasureVector
    cluster_id: str


def _count_before(times, t):
    return bisect_left(times, t)


class EventIndex:
    """Per-song and per-author timelines for fast point-in-time counts.

    ``forest`` should be the unfiltered forest rebuilt from the same log;
    it defines song authorship and the descendants behind derived plays.
    """

    def __init__(self, events, forest: Optional[SongForest] = None):
        if forest is None:
            from .ingest import build_forest
            events = list(events)
            forest = build_forest(events)
        self.forest = forest
        self.log_end = forest.log_end
        song_times = {k: {} for k in (EventKind.LIKE, EventKind.PLAY, EventKind.REPOST,
                                      EventKind.COMMENT)}
        self.bookmarks = {}
        self.invitations = {}
        self.invite_pairs = {}
        self.tagged = set()
        self.followers = {}
        self.sent = {}
        self.received = {}
        self.pair_messages = {}
        self.badges = {}
        self.avatars = set()
        for ev in events:
            self.log_end = max(self.log_end, ev.timestamp)
            k = ev.kind
            if k in song_times and ev.subject is not None:
                song_times[k].setdefault(ev.subject, []).append(ev.timestamp)
            elif k is EventKind.BOOKMARK and ev.subject is not None:
                self.bookmarks[ev.subject] = self.bookmarks.get(ev.subject, 0) + 1
            elif k is EventKind.INVITATION and ev.subject is not None:
                self.invitations[ev.subject] = self.invitations.get(ev.subject, 0) + 1
                if ev.target_author is not None:
                    pair = (ev.actor, ev.target_author)
                    self.invite_pairs[pair] = self.invite_pairs.get(pair, 0) + 1
            elif k is EventKind.TAG_APPLIED and ev.subject is not None:
                self.tagged.add(ev.subject)
            elif k is EventKind.FOLLOW and ev.target_author is not None:
                self.followers.setdefault(ev.target_author, []).append(ev.timestamp)
            elif k is EventKind.MESSAGE and ev.target_author is not None:
                self.sent.setdefault(ev.actor, []).append(ev.timestamp)
                self.received.setdefault(ev.target_author, []).append(ev.timestamp)
                pair = frozenset((ev.actor, ev.target_author))
                self.pair_messages[pair] = self.pair_messages.get(pair, 0) + 1
            elif k is EventKind.BADGE_AWARDED:
                f = ev.fields
                cat, level = f.get("category"), f.get("level")
                if cat in BADGE_LEVELS and level in BADGE_LEVELS[cat]:
                    rank = BADGE_LEVELS[cat].index(level)
                    self.badges.setdefault((ev.actor, cat), []).append((ev.timestamp, rank))
            elif k is EventKind.AVATAR_SET:
                self.avatars.add(ev.actor)
        self.likes = song_times[EventKind.LIKE]
        self.plays = song_times[EventKind.PLAY]
        self.reposts = song_times[EventKind.REPOST]
        self.comments = song_times[EventKind.COMMENT]
        for table in (self.likes, self.plays, self.reposts, self.comments, self.followers,
                      self.sent, self.received):
            for v in table.values():
                v.sort()
        for v in self.badges.values():
            v.sort()
        for a in forest.authors.values():
            if a.has_avatar:
                self.avatars.add(a.author_id)
        self.songs_by = {}
        for node in forest.iter_nodes():
            self.songs_by.setdefault(node.author_id, []).append(node)
        self._author_cache = {}

    def _author_timelines(self, author):
        cached = self._author_cache.get(author)
        if cached is not None:
            return cached
        own = self.songs_by.get(author, [])
        uploads = sorted(n.uploaded_at for n in own)
        likes = sorted(t for n in own for t in self.likes.get(n.song_id, ()))
        plays = sorted(t for n in own for t in self.plays.get(n.song_id, ()))
        derived = set()
        for n in own:
            tree = self.forest.tree_of(n.song_id)
            stack = list(tree.children[n.song_id])
            while stack:
                s = stack.pop()
                if s not in derived:
                    derived.add(s)
                    stack.extend(tree.children[s])
        dplays = sorted(t for s in derived for t in self.plays.get(s, ()))
        cached = (uploads, likes, plays, dplays)
        self._author_cache[author] = cached
        return cached

    def ranking(self, author, t) -> float:
        uploads, likes, plays, dplays = self._author_timelines(author)
        shared = bisect_right(uploads, t)
        if shared == 0:
            raise UndefinedRankingError(f"author {author} has no shared songs at t={t}")
        followers = _count_before(self.followers.get(author, ()), t)
        return (followers + _count_before(likes, t) + _count_before(plays, t)
                + _count_before(dplays, t)) / shared

    def badge(self, author, category, t) -> str:
        awards = self.badges.get((author, category), ())
        best = 0
        for ts, rank in awards:
            if ts > t:
                break
            best = max(best, rank)
        return BADGE_LEVELS[category][best]

    def messages_between(self, a, b) -> int:
        return self.pair_messages.get(frozenset((a, b)), 0)


def ranking(author, index, t) -> float:
    """Coolness index of ``author`` at time ``t``.

    (followers + likes on own songs + plays of own songs + plays of songs
    derived from them) / songs shared so far.
    """
    if not isinstance(index, EventIndex):
        index = EventIndex(list(index))
    return index.ranking(author, t)


def measures_at(song: SongNode, index, t, partner=None, depth=None) -> MeasureVector:
    """Measures of ``song`` just before instant ``t``.

    ``partner`` is the author of the overdub that defines ``t`` (if any) and
    only feeds ``msg_exchange_rate``.
    """
    if not isinstance(index, EventIndex):
        index = EventIndex(list(index))
    if t < song.uploaded_at:
        raise PreconditionError(
            f"query time {t} precedes upload of {song.song_id} at {song.uploaded_at}"
        )
    sid, author = song.song_id, song.author_id
    if depth is None:
        from .model import song_depth
        depth = song_depth(index.forest, sid)
    try:
        rank = index.ranking(author, t)
    except UndefinedRankingError:
        rank = 0.0
    return MeasureVector(
        likes=_count_before(index.likes.get(sid, ()), t),
        bookmarks=index.bookmarks.get(sid, 0),
        plays=_count_before(index.plays.get(sid, ()), t),
        reposts=_count_before(index.reposts.get(sid, ()), t),
        comments=_count_before(index.comments.get(sid, ()), t),
        invitations=index.invitations.get(sid, 0),
        upload_time_interval=t - song.uploaded_at,
        song_depth=depth,
        has_tags=sid in index.tagged or bool(song.tags),
        followers=_count_before(index.followers.get(author, ()), t),
        ranking=rank,
        msg_exchange_rate=index.messages_between(author, partner) if partner else 0,
        sent_messages=_count_before(index.sent.get(author, ()), t),
        received_messages=_count_before(index.received.get(author, ()), t),
        new_songs_badge=index.badge(author, "new_songs_badge", t),
        overdubs_badge=index.badge(author, "overdubs_badge", t),
        overdubs_received_badge=index.badge(author, "overdubs_received_badge", t),
        has_avatar=author in index.avatars,
    )


def build_rows(forest: SongForest, index, level="occasional", collabs=None,
               exclude=None, threads=1) -> list:
    """Serialize ``forest`` into one row per overdub event or idle song.

    A song overdubbed n times yields rows x = 1..n measured just before
    each overdub; a song never overdubbed yields one x = 0 row measured
    just after the last logged event. Rows are ordered by (song_id, x).
    """
    if level not in ("occasional", "recurring"):
        raise ValueError(f"unknown level {level!r}")
    if not isinstance(index, EventIndex):
        index = EventIndex(list(index))
    cluster_of = {}
    if level == "recurring":
        if collabs is None:
            raise ValueError("recurring level needs the mined collaborations")
        for c in collabs:
            for s in c.song_ids:
                cluster_of.setdefault(s, c.collab_id)
    exclude = set(exclude or ())
    # collection time: one minute past the last event, so nothing is cut off
    end = max(index.log_end, forest.log_end) + 1

    def tree_rows(tree):
        out = []
        depth = {tree.root: 0}
        stack = [tree.root]
        while stack:
            s = stack.pop()
            for c in tree.children[s]:
                depth[c] = depth[s] + 1
                stack.append(c)
        for sid, node in tree.nodes.items():
            if sid in exclude:
                continue
            if level == "recurring":
                if sid not in cluster_of:
                    continue
                cluster = cluster_of[sid]
            else:
                cluster = node.author_id
            kids = tree.children[sid]
            if not kids:
                m = measures_at(node, index, max(end, node.uploaded_at), depth=depth[sid])
                out.append(RegressionRow(sid, node.author_id, 0, 0, m, cluster))
            for x, kid in enumerate(kids, start=1):
                child = tree.nodes[kid]
                m = measures_at(node, index, child.uploaded_at, partner=child.author_id,
                                depth=depth[sid])
                out.append(RegressionRow(sid, node.author_id, x, x, m, cluster))
        return out

    trees = list(forest.trees)
    # warm the per-author cache so worker threads only read shared state
    for node in forest.iter_nodes():
        index._author_timelines(node.author_id)
    if threads and threads > 1 and len(trees) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(tree_rows, trees))
    else:
        chunks = [tree_rows(t) for t in trees]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r.song_id, r.x))
    return rows


# ---------------------------------------------------------------------------
# design matrix


@dataclass
class Design:
    columns: list
    X: np.ndarray
    y: np.ndarray
    clusters: list
    dropped: list

    def with_intercept(self):
        return np.column_stack([np.ones(len(self.y)), self.X]), ["(intercept)"] + self.columns


def _raw_columns(rows, predictors):
    cols = {}
    for name in predictors:
        if name in CONTINUOUS:
            cols[name] = np.log1p(np.array(
                [float(getattr(r.measures, name)) for r in rows]))
        elif name in BOOLEAN:
            cols[f"{name}=True"] = np.array(
                [1.0 if getattr(r.measures, name) else 0.0 for r in rows])
        elif name in ORDINAL:
            values = [getattr(r.measures, name) for r in rows]
            for level in BADGE_LEVELS[name][1:]:
                cols[f"{name}={level}"] = np.array([1.0 if v == level else 0.0 for v in values])
        else:
            raise ValueError(f"unknown predictor {name!r}")
    return cols


def transform_and_screen(rows, corr_threshold=0.7, predictors=None) -> Design:
    """log1p continuous measures, expand badges, drop collinear columns.

    Constant columns go first. Then, while any pair has |r| >= threshold,
    the strongest pair loses the member with the larger mean absolute
    correlation to the remaining predictors (name order breaks ties).
    """
    if len(rows) < 2:
        raise PreconditionError("need at least two rows to screen predictors")
    predictors = tuple(predictors or OCCASIONAL_PREDICTORS)
    cols = _raw_columns(rows, predictors)
    dropped = []
    for name in list(cols):
        if np.ptp(cols[name]) == 0:
            log.warning("dropping constant predictor %s", name)
            dropped.append({"predictor": name, "reason": "constant"})
            del cols[name]
    while len(cols) > 1:
        names = list(cols)
        R = np.corrcoef(np.vstack([cols[n] for n in names]))
        A = np.abs(R)
        np.fill_diagonal(A, 0.0)
        i, j = np.unravel_index(np.argmax(A), A.shape)
        if A[i, j] < corr_threshold:
            break
        mean_corr = A.sum(axis=1) / (len(names) - 1)
        a, b = sorted((names[i], names[j]))
        ia, ib = names.index(a), names.index(b)
        if np.isclose(mean_corr[ia], mean_corr[ib], rtol=0, atol=1e-12):
            victim, keeper = b, a
        elif mean_corr[ia] > mean_corr[ib]:
            victim, keeper = a, b
        else:
            victim, keeper = b, a
        dropped.append({
            "predictor": victim,
            "reason": f"|r|={A[i, j]:.3f} with {keeper}",
        })
        del cols[victim]
    # pairwise screening misses exact dependencies among three or more
    # columns (or with the intercept); drop whatever adds no rank
    basis = [np.ones(len(rows))]
    for name in list(cols):
        trial = np.column_stack(basis + [cols[name]])
        if np.linalg.matrix_rank(trial) < trial.shape[1]:
            log.warning("dropping linearly dependent predictor %s", name)
            dropped.append({"predictor": name, "reason": "linearly dependent"})
            del cols[name]
        else:
            basis.append(cols[name])
    names = list(cols)
    X = np.column_stack([cols[n] for n in names]) if names else np.empty((len(rows), 0))
    y = np.array([r.outcome for r in rows], dtype=np.int64)
    return Design(names, X, y, [r.cluster_id for r in rows], dropped)


# ---------------------------------------------------------------------------
# descriptive statistics


def describe(rows) -> dict:
    """Totals, range, mean, sample SD and variance per measure; level counts
    for booleans and badges."""
    if not rows:
        raise PreconditionError("describe needs at least one row")
    out = {}
    outcome = np.array([r.outcome for r in rows], float)
    series = {"overdubs": outcome}
    for name in CONTINUOUS:
        series[name] = np.array([float(getattr(r.measures, name)) for r in rows])
    for name, v in series.items():
        sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
        out[name] = {
            "total": float(v.sum()), "min": float(v.min()), "max": float(v.max()),
            "mean": float(v.mean()), "sd": sd, "variance": sd * sd,
        }
    for name in BOOLEAN:
        yes = sum(1 for r in rows if getattr(r.measures, name))
        out[name] = {"yes": yes, "no": len(rows) - yes}
    for name in ORDINAL:
        counts = dict.fromkeys(BADGE_LEVELS[name], 0)
        for r in rows:
            counts[getattr(r.measures, name)] += 1
        out[name] = counts
    return out


# ---------------------------------------------------------------------------
# delimited export

_MEASURE_FIELDS = [f.name for f in fields(MeasureVector)]
ROW_HEADER = ["song_id", "author_id", "cluster_id", "x", "overdubs"] + _MEASURE_FIELDS


def write_rows(rows, stream) -> None:
    w = csv.writer(stream, delimiter="\t", lineterminator="\n")
    w.writerow(ROW_HEADER)
    for r in rows:
        m = asdict(r.measures)
        vals = []
        for k in _MEASURE_FIELDS:
            v = m[k]
            if isinstance(v, bool):
                v = int(v)
            elif isinstance(v, float):
                v = repr(v)
            vals.append(v)
        w.writerow([r.song_id, r.author_id, r.cluster_id, r.x, r.outcome] + vals)


def read_rows(stream) -> list:
    reader = csv.DictReader(stream, delimiter="\t")
    missing = set(ROW_HEADER) - set(reader.fieldnames or ())
    if missing:
        raise PreconditionError(f"dataset lacks column(s) {sorted(missing)}")
    types = {f.name: f.type for f in fields(MeasureVector)}
    rows = []
    for rec in reader:
        kw = {}
        for k in _MEASURE_FIELDS:
            t = types[k]
            v = rec[k]
            if t == "bool":
                kw[k] = v in ("1", "True", "true")
            elif t == "int":
                kw[k] = int(v)
            elif t == "float":
                kw[k] = float(v)
            else:
                kw[k] = v
        rows.append(RegressionRow(rec["song_id"], rec["author_id"], int(rec["x"]),
                                  int(rec["overdubs"]), MeasureVector(**kw), rec["cluster_id"]))
    return rows
