from collections import deque

import pytest
from hypothesis import given

from helpers import forest_from_parents, forests
from remixmine.errors import DataIntegrityError, NotFoundError
from remixmine.fixtures import example_tree
from remixmine.ingest import build_forest, forest_to_events, parse_event_log, write_event_log
from remixmine.model import (
    Event, EventKind, SongForest, SongNode, decode_payload, encode_payload, song_depth,
    upload_time_interval,
)


def test_root_depth_is_zero():
    f = example_tree()
    assert song_depth(f, f.trees[0].root) == 0


def test_example_tree_author4_depth():
    f = example_tree()
    a4 = next(n for n in f.iter_nodes() if n.author_id == "Author4")
    assert song_depth(f, a4.song_id) == 2


def test_chain_of_twenty():
    f = forest_from_parents([([None] + list(range(19)), ["x"] * 20)])
    leaf = max(f.iter_nodes(), key=lambda n: n.uploaded_at)
    assert song_depth(f, leaf.song_id) == 19


def test_depth_unknown_song():
    with pytest.raises(NotFoundError):
        song_depth(example_tree(), "nope")


@pytest.mark.parametrize("parent_t,child_t,expected", [(0, 2, 2), (0, 2_391_769, 2_391_769)])
def test_upload_time_interval(parent_t, child_t, expected):
    p = SongNode("p", "a", None, parent_t)
    c = SongNode("c", "b", "p", child_t)
    assert upload_time_interval(c, p) == expected


def test_upload_time_interval_simultaneous():
    p = SongNode("p", "a", None, 100)
    c = SongNode("c", "b", "p", 100)
    with pytest.raises(DataIntegrityError):
        upload_time_interval(c, p)


def test_interval_wrong_parent():
    with pytest.raises(DataIntegrityError):
        upload_time_interval(SongNode("c", "b", "q", 5), SongNode("p", "a", None, 0))


def test_negative_timestamp_rejected():
    with pytest.raises(DataIntegrityError):
        Event("e", EventKind.LIKE, -1, "a", "s")


def test_overdub_event_needs_parent():
    with pytest.raises(DataIntegrityError):
        Event("e", EventKind.OVERDUB_UPLOADED, 3, "a", "s")


def test_song_in_two_trees_rejected():
    a = forest_from_parents([([None], ["x"])])
    tree = a.trees[0]
    with pytest.raises(DataIntegrityError):
        SongForest((tree, tree))


def test_cycle_rejected():
    nodes = [SongNode("a", "x", "b", 1), SongNode("b", "y", "a", 2), SongNode("r", "z", None, 0)]
    with pytest.raises(DataIntegrityError):
        SongForest.from_nodes(nodes)


def test_payload_roundtrip():
    p = encode_payload(parent="S1", flags="hidden,contest", tag="genre:rock & roll")
    assert decode_payload(p) == {"parent": "S1", "flags": "hidden,contest",
                                 "tag": "genre:rock & roll"}
    assert encode_payload(flags=None) is None


@given(forests(max_trees=8, max_nodes=10))
def test_depth_matches_bfs(forest):
    for tree in forest.trees:
        depth = {tree.root: 0}
        queue = deque([tree.root])
        while queue:
            s = queue.popleft()
            for c in tree.children[s]:
                depth[c] = depth[s] + 1
                queue.append(c)
        for sid in tree.nodes:
            assert song_depth(forest, sid) == depth[sid]


@given(forests(max_trees=8, max_nodes=10))
def test_serialization_roundtrip(forest):
    import io
    buf = io.StringIO()
    write_event_log(forest_to_events(forest), buf)
    again = build_forest(parse_event_log(buf.getvalue().encode()))
    assert again == forest
    assert forest_to_events(again) == forest_to_events(forest)
