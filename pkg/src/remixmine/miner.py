"""Recurring-collaboration mining over remix trees.

Every tree is one transaction. Its items are author sets obtained from the
contiguous windows of its root-to-leaf paths, with repeated authors inside
a window collapsed. Because only contiguous windows count, support is not
downward closed ({A,B,C} can be present while {A,C} is not), so there is
no Apriori-style pruning: every itemset that actually occurs is counted.
"""
from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigError, DataIntegrityError
from .model import RecurringCollaboration, SongForest, SongTree


def canonical(authors) -> tuple:
    """Sorted, duplicate-free tuple used as the itemset key everywhere."""
    return tuple(sorted(set(authors)))


@dataclass(frozen=True)
class Transaction:
    tree_id: str
    itemsets: frozenset


@dataclass(frozen=True)
class ItemsetStats:
    itemset: tuple
    occurrences: int
    support: float


@dataclass(frozen=True)
class AssociationRule:
    antecedent: tuple
    consequent: tuple
    lift: float
    occurrences: int
    support: float

    @property
    def itemset(self) -> tuple:
        return canonical(self.antecedent + self.consequent)


@dataclass(frozen=True)
class MinerConfig:
    min_occurrences: int = 3
    min_lift: float = 1.0
    minsup: Optional[float] = None

    def __post_init__(self):
        if self.min_occurrences < 1:
            raise ConfigError("min_occurrences must be at least 1")
        if self.minsup is not None and not 0 <= self.minsup <= 1:
            raise ConfigError("minsup must be a fraction")


def enumerate_paths(tree: SongTree) -> list:
    """Author sequence along every root-to-leaf path."""
    return [tuple(tree.nodes[s].author_id for s in path) for path in tree.paths()]


def contiguous_subsequences(path) -> list:
    """All contiguous windows of ``path``, shortest first, then by offset."""
    path = list(path)
    n = len(path)
    return [path[j:j + i] for i in range(1, n + 1) for j in range(n - i + 1)]


def transaction_of(tree: SongTree) -> Transaction:
    items = set()
    for path in enumerate_paths(tree):
        for window in contiguous_subsequences(path):
            items.add(canonical(window))
    return Transaction(tree.tree_id, frozenset(items))


def _map_trees(fn, trees, threads):
    if threads and threads > 1 and len(trees) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, trees))
    return [fn(t) for t in trees]


def transactions(forest: SongForest, threads: int = 1) -> list:
    return _map_trees(transaction_of, list(forest.trees), threads)


def count_itemsets(txns, threads: int = 1) -> dict:
    """Occurrence count and support of every itemset seen in ``txns``.

    The map is keyed by canonical itemset and ordered by (size, itemset).
    Per-chunk counters are merged with integer addition, so the result does
    not depend on ``threads``.
    """
    txns = list(txns)
    n = len(txns)
    if n == 0:
        return {}
    if threads and threads > 1:
        size = math.ceil(n / threads)
        chunks = [txns[i:i + size] for i in range(0, n, size)]

        def tally(chunk):
            c = Counter()
            for t in chunk:
                c.update(t.itemsets)
            return c

        counts = Counter()
        for c in _map_trees(tally, chunks, threads):
            counts.update(c)
    else:
        counts = Counter()
        for t in txns:
            counts.update(t.itemsets)
    return {
        k: ItemsetStats(k, counts[k], counts[k] / n)
        for k in sorted(counts, key=lambda s: (len(s), s))
    }


def lift(itemset, stats: dict) -> float:
    """Support of the itemset over the product of its members' supports."""
    key = canonical(itemset)
    if len(key) < 2:
        raise ValueError("lift needs an itemset of at least two authors")
    try:
        joint = stats[key].support
        denom = 1.0
        for a in key:
            denom *= stats[(a,)].support
    except KeyError as exc:
        raise DataIntegrityError(f"missing support for {exc.args[0]}") from None
    if denom <= 0:
        raise DataIntegrityError(f"zero singleton support inside {key}")
    return joint / denom


def _passes(st: ItemsetStats, value: float, config: MinerConfig) -> bool:
    if st.occurrences < config.min_occurrences:
        return False
    if config.minsup is not None and st.support < config.minsup:
        return False
    return value > config.min_lift


def frequent_itemsets(stats: dict, config: MinerConfig) -> list:
    """(stats, lift) for every itemset of size >= 2 surviving the filters."""
    out = []
    for key, st in stats.items():
        if len(key) < 2 or st.occurrences < config.min_occurrences:
            continue
        value = lift(key, stats)
        if _passes(st, value, config):
            out.append((st, value))
    out.sort(key=lambda p: (-p[1], -p[0].occurrences, p[0].itemset))
    return out


def generate_rules(stats: dict, config: MinerConfig = MinerConfig(),
                   all_consequents: bool = True) -> list:
    """Association rules for every surviving itemset.

    Every member of a k-itemset takes a turn as the singleton consequent,
    giving k rules. With ``all_consequents=False`` only the rule whose
    consequent is the last member in canonical order is kept. All rules
    drawn from one itemset share its lift, since the denominator is the
    product of every member's singleton support.
    """
    rules = []
    for st, value in frequent_itemsets(stats, config):
        for member in (st.itemset if all_consequents else st.itemset[-1:]):
            ante = tuple(a for a in st.itemset if a != member)
            rules.append(AssociationRule(ante, (member,), value, st.occurrences, st.support))
    return rules


def _itemset_songs(tree: SongTree, wanted: set) -> dict:
    """Song ids of the windows in ``tree`` whose author set is in ``wanted``."""
    found = {}
    for path in tree.paths():
        authors = [tree.nodes[s].author_id for s in path]
        n = len(path)
        for i in range(2, n + 1):
            for j in range(n - i + 1):
                key = canonical(authors[j:j + i])
                if key in wanted:
                    found.setdefault(key, set()).update(path[j:j + i])
    return found


def mine_recurring(forest: SongForest, config: MinerConfig = MinerConfig(),
                   threads: int = 1) -> list:
    """Candidate recurring collaborations in ``forest``.

    ``forest`` is expected to be the mining subset (multi-node, non-contest,
    non-orphan trees). Collaborations are numbered in rule order: lift
    descending, then occurrences descending, then members.
    """
    txns = transactions(forest, threads)
    if not txns:
        return []
    stats = count_itemsets(txns, threads)
    kept = frequent_itemsets(stats, config)
    if not kept:
        return []
    wanted = {st.itemset for st, _ in kept}
    songs = {k: set() for k in wanted}
    for tree, txn in zip(forest.trees, txns):
        if wanted.isdisjoint(txn.itemsets):
            continue
        for key, ids in _itemset_songs(tree, wanted).items():
            songs[key].update(ids)
    out = []
    for i, (st, value) in enumerate(kept, start=1):
        ids = tuple(sorted(songs[st.itemset]))
        times = [forest.node(s).uploaded_at for s in ids]
        out.append(RecurringCollaboration(
            collab_id=f"C{i:04d}",
            members=st.itemset,
            occurrences=st.occurrences,
            support=st.support,
            lift=value,
            song_ids=ids,
            first_upload=min(times) if times else None,
            last_upload=max(times) if times else None,
        ))
    return out
