"""Core domain types: events, authors, songs and remix forests.

All types are frozen dataclasses. Mapping-valued fields are plain dicts
for cheap construction but are never mutated after ``__post_init__``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional
from urllib.parse import parse_qsl, urlencode

from .errors import DataIntegrityError, NotFoundError


class EventKind(str, enum.Enum):
    USER_REGISTERED = "user_registered"
    SONG_UPLOADED = "song_uploaded"
    OVERDUB_UPLOADED = "overdub_uploaded"
    LIKE = "like"
    PLAY = "play"
    BOOKMARK = "bookmark"
    REPOST = "repost"
    COMMENT = "comment"
    FOLLOW = "follow"
    MESSAGE = "message"
    INVITATION = "invitation"
    TAG_APPLIED = "tag_applied"
    AVATAR_SET = "avatar_set"
    BADGE_AWARDED = "badge_awarded"


class SongFlag(str, enum.Enum):
    HIDDEN = "hidden"
    CLOSED = "closed"
    COMPLETE = "complete"
    CONTEST = "contest"
    REMIX_ONLY = "remix_only"


def encode_payload(**fields) -> Optional[str]:
    """Serialize keyword fields as a query string; ``None`` values are skipped."""
    items = [(k, v) for k, v in fields.items() if v is not None]
    if not items:
        return None
    return urlencode(items)


def decode_payload(payload: Optional[str]) -> dict:
    if not payload:
        return {}
    return dict(parse_qsl(payload, keep_blank_values=True))


@dataclass(frozen=True)
class Event:
    event_id: str
    kind: EventKind
    timestamp: int
    actor: str
    subject: Optional[str] = None
    target_author: Optional[str] = None
    payload: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.kind, EventKind):
            object.__setattr__(self, "kind", EventKind(self.kind))
        if self.timestamp < 0:
            raise DataIntegrityError(f"event {self.event_id}: negative timestamp")
        if self.kind is EventKind.OVERDUB_UPLOADED:
            if self.subject is None or "parent" not in self.fields:
                raise DataIntegrityError(
                    f"event {self.event_id}: overdub needs a subject and a parent reference"
                )

    @property
    def fields(self) -> dict:
        return decode_payload(self.payload)


@dataclass(frozen=True)
class Author:
    author_id: str
    username: str = ""
    bio: str = ""
    has_avatar: bool = False
    registered_at: int = 0


@dataclass(frozen=True)
class SongNode:
    song_id: str
    author_id: str
    parent_id: Optional[str]
    uploaded_at: int
    tags: frozenset = frozenset()
    flags: frozenset = frozenset()
    # set when parent_id names a song absent from the log; such a node roots its own tree
    orphan: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tags", frozenset(self.tags))
        object.__setattr__(
            self, "flags", frozenset(SongFlag(f) for f in self.flags)
        )


def _child_order(node: SongNode):
    return (node.uploaded_at, node.song_id)


@dataclass(frozen=True)
class SongTree:
    """One rooted remix tree.

    ``children`` maps every node id to its child ids ordered by upload time.
    """

    root: str
    nodes: Mapping[str, SongNode]
    children: Mapping[str, tuple] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.root not in self.nodes:
            raise DataIntegrityError(f"tree root {self.root} missing from its nodes")
        kids = {sid: [] for sid in self.nodes}
        for sid, node in self.nodes.items():
            if sid == self.root:
                continue
            if node.parent_id not in self.nodes:
                raise DataIntegrityError(
                    f"song {sid}: parent {node.parent_id} not in tree {self.root}"
                )
            kids[node.parent_id].append(node)
        children = {
            sid: tuple(c.song_id for c in sorted(v, key=_child_order))
            for sid, v in kids.items()
        }
        object.__setattr__(self, "children", children)
        # every node must hang off the root; anything else is a cycle
        seen = 0
        stack = [self.root]
        while stack:
            sid = stack.pop()
            seen += 1
            stack.extend(children[sid])
        if seen != len(self.nodes):
            raise DataIntegrityError(f"tree {self.root}: cycle or disconnected nodes")

    def __len__(self):
        return len(self.nodes)

    @property
    def tree_id(self) -> str:
        return self.root

    def paths(self) -> list:
        """Song-id sequences from the root to every leaf, depth first."""
        out = []
        stack = [(self.root,)]
        while stack:
            path = stack.pop()
            kids = self.children[path[-1]]
            if not kids:
                out.append(path)
            else:
                for c in reversed(kids):
                    stack.append(path + (c,))
        return out

    def leaves(self) -> list:
        return [sid for sid, kids in self.children.items() if not kids]


@dataclass(frozen=True)
class SongForest:
    trees: tuple = ()
    authors: Mapping[str, Author] = field(default_factory=dict)
    # derived from the source log; not part of the forest's identity
    log_end: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        where = {}
        for i, tree in enumerate(self.trees):
            for sid in tree.nodes:
                if sid in where:
                    raise DataIntegrityError(f"song {sid} appears in two trees")
                where[sid] = i
        object.__setattr__(self, "_where", where)

    @classmethod
    def from_nodes(cls, nodes, authors=None, log_end=0) -> "SongForest":
        """Group a flat collection of nodes into trees.

        Roots are nodes without a parent plus orphans. Trees are ordered by
        (root upload time, root id).
        """
        by_id = {}
        for n in nodes:
            if n.song_id in by_id:
                raise DataIntegrityError(f"duplicate song id {n.song_id}")
            by_id[n.song_id] = n
        roots = [n for n in by_id.values() if n.parent_id is None or n.orphan]
        members = {r.song_id: {} for r in roots}
        root_of = {}

        def find_root(sid):
            trail = []
            cur = sid
            while cur not in root_of:
                node = by_id[cur]
                if node.parent_id is None or node.orphan:
                    root_of[cur] = cur
                    break
                if node.parent_id not in by_id:
                    raise DataIntegrityError(
                        f"song {cur}: parent {node.parent_id} missing and not flagged orphan"
                    )
                trail.append(cur)
                if len(trail) > len(by_id):
                    raise DataIntegrityError(f"cycle through song {sid}")
                cur = node.parent_id
            r = root_of[cur]
            for t in trail:
                root_of[t] = r
            return r

        for sid, node in by_id.items():
            members[find_root(sid)][sid] = node
        trees = [
            SongTree(root=r.song_id, nodes=members[r.song_id])
            for r in sorted(roots, key=_child_order)
        ]
        return cls(trees=tuple(trees), authors=dict(authors or {}), log_end=log_end)

    def __contains__(self, song_id):
        return song_id in self._where

    def __len__(self):
        return len(self._where)

    def node(self, song_id) -> SongNode:
        try:
            return self.trees[self._where[song_id]].nodes[song_id]
        except KeyError:
            raise NotFoundError(f"unknown song id {song_id!r}") from None

    def tree_of(self, song_id) -> SongTree:
        try:
            return self.trees[self._where[song_id]]
        except KeyError:
            raise NotFoundError(f"unknown song id {song_id!r}") from None

    def children(self, song_id) -> tuple:
        return self.tree_of(song_id).children[song_id]

    def iter_nodes(self) -> Iterator[SongNode]:
        for tree in self.trees:
            yield from tree.nodes.values()

    @property
    def n_songs(self) -> int:
        return len(self._where)


def song_depth(forest: SongForest, song_id) -> int:
    """Number of edges between the song and the root of its tree."""
    tree = forest.tree_of(song_id)
    depth = 0
    node = tree.nodes[song_id]
    while node.song_id != tree.root:
        node = tree.nodes[node.parent_id]
        depth += 1
    return depth


def upload_time_interval(child: SongNode, parent: SongNode) -> int:
    """Minutes between the parent's upload and the child's."""
    if child.parent_id != parent.song_id:
        raise DataIntegrityError(f"{parent.song_id} is not the parent of {child.song_id}")
    delta = child.uploaded_at - parent.uploaded_at
    if delta <= 0:
        raise DataIntegrityError(
            f"overdub {child.song_id} not strictly after parent {parent.song_id}"
        )
    return delta


@dataclass(frozen=True)
class RecurringCollaboration:
    """A mined author set plus the interaction profile computed for it."""

    collab_id: str
    members: tuple
    occurrences: int
    support: float
    lift: float
    song_ids: tuple = ()
    first_upload: Optional[int] = None
    last_upload: Optional[int] = None
    messages: int = 0
    invites: int = 0
    delta_likes: float = 0.0
    delta_coolness: float = 0.0
    mean_likes: float = 0.0
    mean_coolness: float = 0.0
    bins: Mapping[str, str] = field(default_factory=dict)
    kind: str = "online_only"
    established_candidate: bool = False
