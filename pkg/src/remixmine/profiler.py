"""Profiling of mined collaborations.

Covers discretisation of interaction features with 1-D k-means, tag-set
similarity between recurring and occasional work, and heuristics that flag
collaborations which may be established bands.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import InsufficientDataError, UndefinedRankingError
from .model import SongForest

DEFAULT_KEYWORDS = ("trio", "quartet", "band", "collaboration", "together", "we", "us", "our")
BIN_FEATURES = ("messages", "invites", "delta_likes", "delta_coolness")
_SEPARATORS = re.compile(r"[\s_\-‐-―/\\.|,:;+&]+")


# ---------------------------------------------------------------------------
# 1-D k-means


def _labels_for(k):
    if k == 2:
        return ("low", "high")
    if k == 3:
        return ("low", "medium", "high")
    return ("low",) + tuple(f"medium{i}" for i in range(1, k - 1)) + ("high",)


@dataclass(frozen=True)
class Binner:
    feature: str
    k: int
    intervals: tuple  # observed (min, max) per cluster, ascending
    centers: tuple
    labels: tuple
    sse: float = 0.0

    @property
    def cuts(self) -> tuple:
        """Decision points between adjacent clusters (midpoints of centres)."""
        c = self.centers
        return tuple((c[i] + c[i + 1]) / 2.0 for i in range(len(c) - 1))

    def index(self, value) -> int:
        return int(np.searchsorted(np.asarray(self.cuts), value, side="left"))

    def label(self, value) -> str:
        return self.labels[self.index(value)]


def _exact_partition(u, w, k):
    """Optimal contiguous k-partition of sorted unique values ``u`` with
    multiplicities ``w``; returns the group start indices."""
    m = len(u)
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cs = np.concatenate([[0.0], np.cumsum(w * u)])
    cq = np.concatenate([[0.0], np.cumsum(w * u * u)])

    def cost(i, j):  # values u[i:j]
        n = cw[j] - cw[i]
        s = cs[j] - cs[i]
        return max(0.0, (cq[j] - cq[i]) - s * s / n)

    inf = float("inf")
    D = np.full((k + 1, m + 1), inf)
    B = np.zeros((k + 1, m + 1), dtype=int)
    D[0, 0] = 0.0
    for c in range(1, k + 1):
        for j in range(c, m + 1):
            best, arg = inf, c - 1
            for i in range(c - 1, j):
                v = D[c - 1, i] + cost(i, j)
                if v < best - 1e-12:
                    best, arg = v, i
            D[c, j], B[c, j] = best, arg
    starts = []
    j = m
    for c in range(k, 0, -1):
        i = B[c, j]
        starts.append(i)
        j = i
    return starts[::-1]


def _binner_from_groups(feature, groups):
    intervals, centers = [], []
    sse = 0.0
    for g in groups:
        g = np.asarray(g, float)
        intervals.append((float(g.min()), float(g.max())))
        centers.append(float(g.mean()))
        sse += float(np.sum((g - g.mean()) ** 2))
    k = len(groups)
    return Binner(feature, k, tuple(intervals), tuple(centers), _labels_for(k), sse)


def kmeans_1d(values, k, seed=None, feature="value", method="exact") -> Binner:
    """Cluster scalar ``values`` into ``k`` ordered groups.

    The default solves the problem exactly by dynamic programming over the
    sorted distinct values; the result is a fixpoint of Lloyd's iteration
    with the smallest within-cluster sum of squares. ``method="lloyd"``
    runs plain Lloyd iterations from quantile-placed centres instead.
    ``seed`` is accepted for interface stability; both paths are
    deterministic.
    """
    v = np.asarray(values, dtype=float)
    u, w = np.unique(v, return_counts=True)
    if k < 1:
        raise ValueError("k must be positive")
    if len(u) < k:
        raise InsufficientDataError(f"{len(u)} distinct values cannot form {k} clusters")
    if method == "lloyd":
        assign = lloyd_1d(v, k)[0]
        groups = [v[assign == c] for c in range(k)]
        return _binner_from_groups(feature, groups)
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    starts = _exact_partition(u, w.astype(float), k) + [len(u)]
    groups = [np.repeat(u[starts[c]:starts[c + 1]], w[starts[c]:starts[c + 1]])
              for c in range(k)]
    return _binner_from_groups(feature, groups)


def lloyd_1d(values, k, max_iter=1000):
    """Lloyd iterations from quantile centres until the assignment stops
    changing. Returns (assignment, centres, sse history)."""
    v = np.asarray(values, dtype=float)
    u = np.unique(v)
    if len(u) < k:
        raise InsufficientDataError(f"{len(u)} distinct values cannot form {k} clusters")
    centers = np.quantile(v, (np.arange(k) + 0.5) / k)
    # collapse duplicate starting centres onto distinct values
    if len(np.unique(centers)) < k:
        centers = u[np.linspace(0, len(u) - 1, k).round().astype(int)].astype(float)
    assign = None
    history = []
    for _ in range(max_iter):
        new = np.argmin(np.abs(v[:, None] - centers[None, :]), axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for c in range(k):
            if np.any(assign == c):
                centers[c] = v[assign == c].mean()
        history.append(float(sum(np.sum((v[assign == c] - centers[c]) ** 2)
                                  for c in range(k))))
    order = np.argsort(centers, kind="stable")
    remap = np.empty(k, dtype=int)
    remap[order] = np.arange(k)
    return remap[assign], centers[order], history


def silhouette_1d(values, assign) -> float:
    """Mean silhouette width for a 1-D clustering (singletons score 0)."""
    v = np.asarray(values, float)
    a_ = np.asarray(assign)
    labels = np.unique(a_)
    if len(labels) < 2:
        raise InsufficientDataError("silhouette needs at least two clusters")
    D = np.abs(v[:, None] - v[None, :])
    mean_to = np.column_stack([
        D[:, a_ == c].sum(axis=1) / np.maximum(np.sum(a_ == c), 1) for c in labels
    ])
    sizes = np.array([np.sum(a_ == c) for c in labels])
    own = np.searchsorted(labels, a_)
    n_own = sizes[own]
    a = np.array([D[i, a_ == a_[i]].sum() / (n_own[i] - 1) if n_own[i] > 1 else 0.0
                  for i in range(len(v))])
    other = mean_to.copy()
    other[np.arange(len(v)), own] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((n_own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1), 0.0)
    return float(s.mean())


def choose_k(values, k_range=range(2, 7)) -> int:
    """k with the highest mean silhouette; ties go to the smaller k."""
    v = np.asarray(values, float)
    distinct = len(np.unique(v))
    if distinct < 3:
        raise InsufficientDataError("choose_k needs at least three distinct values")
    best_k, best_s = None, -np.inf
    for k in k_range:
        if k < 2 or k > distinct:
            continue
        b = kmeans_1d(v, k)
        s = silhouette_1d(v, [b.index(x) for x in v])
        if s > best_s + 1e-12:
            best_k, best_s = k, s
    if best_k is None:
        raise InsufficientDataError("no admissible k in range")
    return best_k


# ---------------------------------------------------------------------------
# tag similarity


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def _tag_kind(tags, prefix):
    return {t.split(":", 1)[1] for t in tags if t.startswith(prefix + ":")}


@dataclass(frozen=True)
class MemberSimilarity:
    collab_id: str
    author_id: str
    genre_jaccard: Optional[float]
    instrument_jaccard: Optional[float]
    recurring_genres: int
    occasional_genres: int
    recurring_instruments: int
    occasional_instruments: int


def genre_instrument_profile(collabs, forest: SongForest) -> list:
    """Per collaboration member: Jaccard similarity of genre and instrument
    tags between their recurring songs and their occasional ones.

    Occasional songs are the member's songs outside every mined
    collaboration. Members without occasional songs get ``None``.
    """
    recurring_all = set()
    for c in collabs:
        recurring_all.update(c.song_ids)
    by_author = {}
    for node in forest.iter_nodes():
        by_author.setdefault(node.author_id, []).append(node)
    out = []
    for c in sorted(collabs, key=lambda c: c.collab_id):
        ids = set(c.song_ids)
        for member in c.members:
            songs = by_author.get(member, [])
            rec = [n for n in songs if n.song_id in ids]
            occ = [n for n in songs if n.song_id not in recurring_all]
            rg = set().union(*(_tag_kind(n.tags, "genre") for n in rec)) if rec else set()
            ri = set().union(*(_tag_kind(n.tags, "instrument") for n in rec)) if rec else set()
            og = set().union(*(_tag_kind(n.tags, "genre") for n in occ)) if occ else set()
            oi = set().union(*(_tag_kind(n.tags, "instrument") for n in occ)) if occ else set()
            out.append(MemberSimilarity(
                c.collab_id, member,
                jaccard(rg, og) if occ else None,
                jaccard(ri, oi) if occ else None,
                len(rg), len(og), len(ri), len(oi),
            ))
    return out


# ---------------------------------------------------------------------------
# established-band heuristics


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalized_levenshtein(a: str, b: str) -> float:
    """2d / (|a| + |b| + d), a metric in [0, 1]."""
    if not a and not b:
        return 0.0
    d = levenshtein(a, b)
    return 2.0 * d / (len(a) + len(b) + d)


def _name_tokens(name):
    return [t for t in _SEPARATORS.split(name.lower()) if t]


def username_match(a: str, b: str, max_norm_distance=0.3):
    """Reason string if two usernames look related, else None.

    Compares the separator-stripped names by normalised edit distance,
    then looks for a shared name token of three or more characters.
    """
    ta, tb = _name_tokens(a), _name_tokens(b)
    sa, sb = "".join(ta), "".join(tb)
    if sa or sb:
        d = normalized_levenshtein(sa, sb)
        if d <= max_norm_distance:
            return f"username distance {d:.3f}"
    shared = sorted({t for t in ta if len(t) >= 3} & set(tb))
    if shared:
        return "shared username token " + ",".join(shared)
    return None


def bio_keywords(bio: str, keywords=DEFAULT_KEYWORDS) -> list:
    words = set(re.findall(r"\w+", (bio or "").lower()))
    return [k for k in keywords if k.lower() in words]


@dataclass(frozen=True)
class EstablishedCandidate:
    collab_id: str
    authors: tuple
    evidence: str
    detail: str


def detect_established(authors, collabs, max_norm_distance=0.3,
                       keywords=DEFAULT_KEYWORDS) -> list:
    """Candidate established bands among ``collabs`` for manual review."""
    out = []
    for c in sorted(collabs, key=lambda c: c.collab_id):
        members = list(c.members)
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                a, b = authors.get(members[i]), authors.get(members[j])
                if a is None or b is None:
                    continue
                why = username_match(a.username, b.username, max_norm_distance)
                if why:
                    out.append(EstablishedCandidate(
                        c.collab_id, (members[i], members[j]), "username", why))
        for m in members:
            a = authors.get(m)
            hits = bio_keywords(a.bio, keywords) if a else []
            if hits:
                out.append(EstablishedCandidate(c.collab_id, (m,), "bio", ",".join(hits)))
    return out


@dataclass(frozen=True)
class SelfOverdubRun:
    author: str
    song_ids: tuple

    @property
    def length(self) -> int:
        return len(self.song_ids)


def maximal_runs(seq, min_run=3) -> list:
    """(start, length) of every maximal run of equal items with length >= min_run."""
    out = []
    i, n = 0, len(seq)
    while i < n:
        j = i
        while j + 1 < n and seq[j + 1] == seq[i]:
            j += 1
        if j - i + 1 >= min_run:
            out.append((i, j - i + 1))
        i = j + 1
    return out


def detect_self_overdub_runs(forest: SongForest, min_run=3) -> list:
    """Maximal same-author runs along root-to-leaf paths.

    A run shared by several paths (a common prefix) is reported once.
    """
    seen = set()
    out = []
    for tree in forest.trees:
        for path in tree.paths():
            authors = [tree.nodes[s].author_id for s in path]
            for start, length in maximal_runs(authors, min_run):
                ids = tuple(path[start:start + length])
                if ids not in seen:
                    seen.add(ids)
                    out.append(SelfOverdubRun(authors[start], ids))
    return out


# ---------------------------------------------------------------------------
# collaboration profiles


@dataclass
class ProfileResult:
    collabs: list
    binners: dict
    similarity: list
    candidates: list
    self_runs: list = field(default_factory=list)


def profile_collaborations(collabs, forest: SongForest, index, k=None,
                           max_norm_distance=0.3, keywords=DEFAULT_KEYWORDS,
                           min_run=3) -> ProfileResult:
    """Fill in interaction counts, member deltas and bins for ``collabs``.

    ``index`` is a featurizer EventIndex over the full log. Messages and
    invitations count every exchange among members over the whole log.
    Deltas are max minus min over members of end-of-log likes received and
    ranking. ``k`` fixes the number of bins; by default each feature picks
    its own via the silhouette rule, falling back to fewer bins when the
    feature has too few distinct values.
    """
    end = index.log_end
    likes_of = {}
    for node in index.forest.iter_nodes():
        likes_of[node.author_id] = likes_of.get(node.author_id, 0) + len(
            index.likes.get(node.song_id, ()))
    invites = index.invite_pairs
    filled = []
    for c in collabs:
        ms = list(c.members)
        msgs = sum(index.messages_between(ms[i], ms[j])
                   for i in range(len(ms)) for j in range(i + 1, len(ms)))
        inv = sum(invites.get((a, b), 0) for a in ms for b in ms if a != b)
        likes = [likes_of.get(m, 0) for m in ms]
        ranks = []
        for m in ms:
            try:
                ranks.append(index.ranking(m, end + 1))
            except UndefinedRankingError:
                ranks.append(0.0)
        filled.append(replace(
            c, messages=msgs, invites=inv,
            delta_likes=float(max(likes) - min(likes)),
            delta_coolness=float(max(ranks) - min(ranks)),
            mean_likes=float(np.mean(likes)), mean_coolness=float(np.mean(ranks)),
        ))
    binners = {}
    for feat in BIN_FEATURES:
        vals = np.array([getattr(c, feat) for c in filled], float)
        distinct = len(np.unique(vals))
        if distinct < 2:
            continue
        kk = k if k is not None else (choose_k(vals) if distinct >= 3 else 2)
        kk = min(kk, distinct)
        binners[feat] = kmeans_1d(vals, kk, feature=feat)
    cands = detect_established(index.forest.authors, filled, max_norm_distance, keywords)
    flagged = {cd.collab_id for cd in cands}
    out = []
    for c in filled:
        bins = {f: b.label(getattr(c, f)) for f, b in binners.items()}
        out.append(replace(c, bins=bins, established_candidate=c.collab_id in flagged))
    return ProfileResult(out, binners, genre_instrument_profile(out, forest), cands,
                         detect_self_overdub_runs(index.forest, min_run))
