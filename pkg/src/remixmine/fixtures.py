"""Small hand-built forests used by the tests and the README examples.

``example_tree`` is the five-author tree of height two:

    Author1 -> Author2 -> Author4
                       -> Author5
            -> Author3

``example_corpus`` is a 100-tree corpus whose transaction counts are exactly
the illustrative counts for that tree: Author1..5 in 20/25/50/40/10 trees,
{1,2}: 17, {1,3}: 2, {2,4}: 20, {2,5}: 1, {1,2,4}: 15, {1,2,5}: 1. Extra
singletons are hosted on star trees under single-use noise roots, so they
never form pairs with each other.
"""
from __future__ import annotations

from .model import SongForest, SongNode

EXAMPLE_COUNTS = {
    ("Author1",): 20,
    ("Author2",): 25,
    ("Author3",): 50,
    ("Author4",): 40,
    ("Author5",): 10,
    ("Author1", "Author2"): 17,
    ("Author1", "Author3"): 2,
    ("Author2", "Author4"): 20,
    ("Author2", "Author5"): 1,
    ("Author1", "Author2", "Author4"): 15,
    ("Author1", "Author2", "Author5"): 1,
}


class _Builder:
    def __init__(self):
        self.nodes = []
        self.clock = 0
        self.n = 0

    def add(self, author, parent=None, **kw):
        self.n += 1
        self.clock += 10
        sid = f"S{self.n:04d}"
        self.nodes.append(SongNode(sid, author, parent, self.clock, **kw))
        return sid

    def chain(self, authors, parent=None):
        for a in authors:
            parent = self.add(a, parent)
        return parent

    def forest(self):
        return SongForest.from_nodes(self.nodes, log_end=self.clock + 10)


def _example_tree(b: _Builder):
    r = b.add("Author1")
    a2 = b.add("Author2", r)
    b.add("Author3", r)
    b.add("Author4", a2)
    b.add("Author5", a2)


def example_tree() -> SongForest:
    b = _Builder()
    _example_tree(b)
    return b.forest()


def example_corpus() -> SongForest:
    b = _Builder()
    _example_tree(b)
    for _ in range(14):
        b.chain(["Author1", "Author2", "Author4"])
    for _ in range(2):
        b.chain(["Author1", "Author2"])
    for _ in range(5):
        b.chain(["Author2", "Author4"])
    b.chain(["Author1", "Author3"])
    # 77 noise-rooted stars carry the remaining singleton occurrences
    hosts = {
        "Author3": range(0, 48),
        "Author4": range(0, 20),
        "Author5": range(20, 29),
        "Author1": range(29, 31),
        "Author2": range(31, 34),
    }
    for i in range(77):
        root = b.add(f"Noise{i:03d}")
        hosted = False
        for author, slots in hosts.items():
            if i in slots:
                b.add(author, root)
                hosted = True
        if not hosted:
            # keeps every tree multi-node so mining_subset retains all 100
            b.add(f"Noise{i:03d}x", root)
    return b.forest()
