"""Deterministic synthetic communities with planted ground truth.

Randomness comes from numpy's Philox counter-based bit generator keyed by
the configured seed, and all draws happen in one fixed sequential order, so
a seed fully determines the log.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError
from .ingest import event_sort_key
from .model import Event, EventKind, SongForest, encode_payload

GENRES = ("rock", "hip-hop", "acoustic", "alternative", "electronic", "rap", "jazz", "pop")
INSTRUMENTS = ("voice", "guitar-acoustic", "guitar-electric", "drums", "bass", "piano", "flute")
BADGES = {
    "new_songs_badge": ("Rookie", "Songwriter", "Composer"),
    "overdubs_badge": ("Performer", "Top_performer", "Virtuoso"),
    "overdubs_received_badge": ("Songsmith", "Band_leader", "Maestro"),
}


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_authors: int = 2000
    n_trees: int = 500
    # (members, co-tree count); members are chained root -> ... -> last
    planted_collabs: tuple = ()
    noise_overdub_prob: float = 0.3
    max_tree_size: int = 40
    horizon: int = 525_600
    likes_rate: float = 4.0
    plays_rate: float = 60.0
    bookmarks_rate: float = 0.8
    reposts_rate: float = 0.5
    comments_rate: float = 0.8
    invitations_rate: float = 2.0
    follows_rate: float = 3.0
    messages_rate: float = 1.0
    planted_messages_rate: float = 20.0
    tag_prob: float = 0.7
    avatar_prob: float = 0.85
    # root overdub count: log mu = intercept + likes_coef * log1p(#likes)
    beta: tuple = (("intercept", -0.2), ("likes", 0.35))
    zero_inflation: float = 0.3
    dispersion: float = 0.8

    def __post_init__(self):
        for name in ("noise_overdub_prob", "tag_prob", "avatar_prob", "zero_inflation"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must be a probability")
        if self.noise_overdub_prob >= 1:
            raise ConfigError("noise_overdub_prob must be < 1")
        if self.dispersion < 0:
            raise ConfigError("dispersion must be non-negative")
        planted = tuple((tuple(str(m) for m in members), int(c))
                        for members, c in self.planted_collabs)
        object.__setattr__(self, "planted_collabs", planted)
        object.__setattr__(self, "beta", tuple((str(k), float(v)) for k, v in dict(self.beta).items()))
        seen = set()
        for members, count in planted:
            if len(members) < 2:
                raise ConfigError("planted collaborations need at least two members")
            if count < 1:
                raise ConfigError("planted co-tree counts must be positive")
            if seen & set(members):
                raise ConfigError("planted member sets must be disjoint")
            seen |= set(members)
        total = sum(c for _, c in planted)
        if total > self.n_trees:
            raise ConfigError(
                f"planted co-trees ({total}) exceed n_trees ({self.n_trees})"
            )

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synth option(s): {sorted(unknown)}")
        data = dict(data)
        if "beta" in data and isinstance(data["beta"], dict):
            data["beta"] = tuple(data["beta"].items())
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["planted_collabs"] = [[list(m), c] for m, c in self.planted_collabs]
        d["beta"] = dict(self.beta)
        return d


def draw_counts(rng, mu, alpha=0.0, zero_prob=None):
    """Counts from Poisson (alpha == 0) or NB2 with optional structural zeros."""
    mu = np.asarray(mu, dtype=float)
    if alpha > 0:
        theta = 1.0 / alpha
        y = rng.negative_binomial(theta, theta / (theta + mu))
    else:
        y = rng.poisson(mu)
    if zero_prob is not None:
        y = np.where(rng.random(mu.shape) < zero_prob, 0, y)
    return y


def draw_truncated(rng, mu, alpha=0.0):
    """Zero-truncated Poisson/NB2 draws by rejection."""
    mu = np.asarray(mu, dtype=float)
    out = np.zeros(mu.shape, dtype=np.int64)
    todo = np.arange(mu.size)
    while todo.size:
        y = draw_counts(rng, mu.ravel()[todo], alpha)
        ok = y > 0
        out.ravel()[todo[ok]] = y[ok]
        todo = todo[~ok]
    return out


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def simulate_regression(family, n, count_beta, zero_beta=None, alpha=0.0, seed=0,
                        n_covariates=None):
    """Draw (X, Z, y) from a count-model family with known parameters.

    Covariates are standard normal; column 0 of X and Z is the intercept.
    ``family`` is one of poisson, negbin, zip, zinb, hurdle_poisson, hurdle.
    For zero-inflated families ``zero_beta`` drives the probability of a
    structural zero; for hurdle families it drives P(y > 0).
    """
    rng = make_rng(seed)
    count_beta = np.asarray(count_beta, float)
    kx = count_beta.size
    kz = 0 if zero_beta is None else np.asarray(zero_beta).size
    p = max(kx, kz) - 1 if n_covariates is None else n_covariates
    cov = rng.standard_normal((n, p))
    X = np.column_stack([np.ones(n), cov[:, : kx - 1]])
    mu = np.exp(X @ count_beta)
    Z = None
    if zero_beta is not None:
        zero_beta = np.asarray(zero_beta, float)
        # the zero part reuses the leading covariates, then the trailing ones
        Z = np.column_stack([np.ones(n), cov[:, p - (kz - 1):]]) if kz > 1 else np.ones((n, 1))
    a = alpha if family in ("negbin", "zinb", "hurdle") else 0.0
    if family in ("poisson", "negbin"):
        y = draw_counts(rng, mu, a)
    elif family in ("zip", "zinb"):
        y = draw_counts(rng, mu, a, zero_prob=_expit(Z @ zero_beta))
    elif family in ("hurdle_poisson", "hurdle"):
        positive = rng.random(n) < _expit(Z @ zero_beta)
        y = np.where(positive, draw_truncated(rng, mu, a), 0)
    else:
        raise ConfigError(f"unknown family {family!r}")
    return X, Z, np.asarray(y, dtype=np.int64)


class _Log:
    def __init__(self):
        self.events = []

    def add(self, kind, ts, actor, subject=None, target=None, **payload):
        self.events.append(Event(
            f"e{len(self.events):08d}", kind, int(ts), actor, subject, target,
            encode_payload(**payload),
        ))


def generate(config: SynthConfig):
    """Build an event log and the ground-truth record for ``config``."""
    rng = make_rng(config.seed)
    log = _Log()
    noise = [f"U{i:05d}" for i in range(config.n_authors)]
    planted_members = [m for members, _ in config.planted_collabs for m in members]
    everyone = planted_members + noise
    horizon = config.horizon

    for aid in everyone:
        ts = int(rng.integers(0, horizon // 10))
        log.add(EventKind.USER_REGISTERED, ts, aid,
                username=f"user_{aid.lower()}", bio="")
        if rng.random() < config.avatar_prob:
            log.add(EventKind.AVATAR_SET, ts + 1, aid)

    beta = dict(config.beta)
    songs = []  # (song_id, author, parent, ts)
    root_draws = []
    counter = [0]

    def new_song(author, parent, ts, flags=None):
        counter[0] += 1
        sid = f"S{counter[0]:07d}"
        if parent is None:
            log.add(EventKind.SONG_UPLOADED, ts, author, sid, flags=flags)
        else:
            log.add(EventKind.OVERDUB_UPLOADED, ts, author, sid, parent=parent, flags=flags)
        songs.append((sid, author, parent, ts))
        return sid

    def gap():
        return 1 + int(rng.geometric(1 / 720))

    def pick_noise():
        return noise[int(rng.integers(len(noise)))]

    def grow_noise(tree):
        # tree: list of (sid, ts); attach until the coin says stop
        while len(tree) < config.max_tree_size and rng.random() < config.noise_overdub_prob:
            psid, pts = tree[int(rng.integers(len(tree)))]
            ts = pts + gap()
            tree.append((new_song(pick_noise(), psid, ts), ts))

    likes_of = {}
    n_noise_trees = config.n_trees - sum(c for _, c in config.planted_collabs)
    planted_truth = []
    for members, count in config.planted_collabs:
        for _ in range(count):
            ts = int(rng.integers(0, int(horizon * 0.7)))
            tree, parent = [], None
            for m in members:
                sid = new_song(m, parent, ts)
                tree.append((sid, ts))
                parent = sid
                ts += gap()
            grow_noise(tree)
        n = len(members)
        expected = sorted(
            {tuple(sorted(set(members[i:j]))) for i in range(n) for j in range(i + 2, n + 1)},
            key=lambda s: (len(s), s),
        )
        planted_truth.append({
            "members": sorted(members),
            "chain": list(members),
            "co_trees": count,
            "expected_itemsets": [list(s) for s in expected],
        })

    for _ in range(n_noise_trees):
        ts = int(rng.integers(0, int(horizon * 0.7)))
        author = pick_noise()
        root = new_song(author, None, ts)
        likes = int(rng.poisson(config.likes_rate))
        likes_of[root] = likes
        mu = float(np.exp(beta.get("intercept", 0.0) + beta.get("likes", 0.0) * np.log1p(likes)))
        k = int(draw_counts(rng, np.array([mu]), config.dispersion,
                            zero_prob=config.zero_inflation or None)[0])
        k = min(k, config.max_tree_size - 1)
        root_draws.append({"song_id": root, "mu": mu, "overdubs": k})
        tree = [(root, ts)]
        for _ in range(k):
            cts = ts + gap()
            tree.append((new_song(pick_noise(), root, cts), cts))
        grow_noise(tree)

    # reactions, tags and social activity
    for sid, author, parent, ts in songs:
        span = max(1, horizon - ts)

        def times(count):
            return ts + 1 + np.sort(rng.integers(0, span, size=count))

        n_likes = likes_of.get(sid)
        if n_likes is None:
            n_likes = int(rng.poisson(config.likes_rate))
        for t in times(n_likes):
            log.add(EventKind.LIKE, t, pick_noise(), sid)
        for t in times(int(rng.poisson(config.plays_rate))):
            log.add(EventKind.PLAY, t, pick_noise(), sid)
        for kind, rate in ((EventKind.BOOKMARK, config.bookmarks_rate),
                           (EventKind.REPOST, config.reposts_rate),
                           (EventKind.COMMENT, config.comments_rate)):
            for t in times(int(rng.poisson(rate))):
                log.add(kind, t, pick_noise(), sid)
        for t in times(int(rng.poisson(config.invitations_rate))):
            log.add(EventKind.INVITATION, t, author, sid, pick_noise())
        if rng.random() < config.tag_prob:
            log.add(EventKind.TAG_APPLIED, ts, author, sid,
                    tag="genre:" + GENRES[int(rng.integers(len(GENRES)))])
            log.add(EventKind.TAG_APPLIED, ts, author, sid,
                    tag="instrument:" + INSTRUMENTS[int(rng.integers(len(INSTRUMENTS)))])

    for aid in everyone:
        for _ in range(int(rng.poisson(config.follows_rate))):
            log.add(EventKind.FOLLOW, int(rng.integers(0, horizon)), pick_noise(), target=aid)
        for _ in range(int(rng.poisson(config.messages_rate))):
            log.add(EventKind.MESSAGE, int(rng.integers(0, horizon)), aid, target=pick_noise())
        if rng.random() < 0.3:
            cat = sorted(BADGES)[int(rng.integers(3))]
            level = BADGES[cat][int(rng.integers(3))]
            log.add(EventKind.BADGE_AWARDED, int(rng.integers(0, horizon)), aid,
                    category=cat, level=level)
    for members, _ in config.planted_collabs:
        for a in members:
            for b in members:
                if a != b:
                    for _ in range(int(rng.poisson(config.planted_messages_rate))):
                        log.add(EventKind.MESSAGE, int(rng.integers(0, horizon)), a, target=b)

    events = sorted(log.events, key=event_sort_key)
    truth = {
        "seed": config.seed,
        "n_trees": config.n_trees,
        "planted": planted_truth,
        "beta": dict(config.beta),
        "zero_inflation": config.zero_inflation,
        "dispersion": config.dispersion,
        "root_draws": root_draws,
    }
    return events, truth


def write_truth(truth: dict, stream) -> None:
    """One JSON record per planted collaboration, then a summary record."""
    for rec in truth["planted"]:
        stream.write(json.dumps({"record": "planted", **rec}, sort_keys=True) + "\n")
    summary = {k: v for k, v in truth.items() if k not in ("planted", "root_draws")}
    stream.write(json.dumps({"record": "summary", **summary}, sort_keys=True) + "\n")
    for rec in truth["root_draws"]:
        stream.write(json.dumps({"record": "root_draw", **rec}, sort_keys=True) + "\n")


def oracle_mine(forest: SongForest) -> dict:
    """Brute-force itemset occurrence counts, written without the miner's helpers.

    Walks every root-to-leaf path by explicit recursion, slices every window,
    collapses repeated authors and counts each itemset once per tree.
    """
    totals = {}
    for tree in forest.trees:
        kids = {}
        for node in tree.nodes.values():
            if node.song_id != tree.root:
                kids.setdefault(node.parent_id, []).append(node.song_id)

        paths = []

        def walk(sid, acc):
            acc = acc + [tree.nodes[sid].author_id]
            if sid not in kids:
                paths.append(acc)
                return
            for c in kids[sid]:
                walk(c, acc)

        walk(tree.root, [])
        found = set()
        for p in paths:
            for start in range(len(p)):
                for stop in range(start + 1, len(p) + 1):
                    found.add(tuple(sorted(set(p[start:stop]))))
        for key in found:
            totals[key] = totals.get(key, 0) + 1
    return totals
