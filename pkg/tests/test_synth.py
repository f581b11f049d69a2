import io
import json

import numpy as np
import pytest

from remixmine.errors import ConfigError
from remixmine.fixtures import EXAMPLE_COUNTS, example_tree
from remixmine.ingest import build_forest, write_event_log
from remixmine.model import SongForest
from remixmine.synth import (
    SynthConfig, draw_counts, draw_truncated, generate, make_rng, oracle_mine,
    simulate_regression, write_truth,
)

SMALL = dict(n_authors=60, n_trees=40, plays_rate=3.0)


def _bytes(events):
    buf = io.StringIO()
    write_event_log(events, buf)
    return buf.getvalue()


def test_same_seed_same_bytes():
    cfg = SynthConfig(seed=7, planted_collabs=((("P", "Q"), 5),), **SMALL)
    a, ta = generate(cfg)
    b, tb = generate(cfg)
    assert _bytes(a) == _bytes(b)
    assert ta == tb


def test_different_seed_differs():
    a, _ = generate(SynthConfig(seed=1, **SMALL))
    b, _ = generate(SynthConfig(seed=2, **SMALL))
    assert _bytes(a) != _bytes(b)


def test_rng_is_reproducible():
    assert make_rng(3).random(4).tolist() == make_rng(3).random(4).tolist()


@pytest.mark.parametrize("kw", [
    dict(n_trees=5, planted_collabs=((("A", "B"), 6),)),
    dict(planted_collabs=((("A", "B"), 3), (("B", "C"), 3))),
    dict(planted_collabs=((("A",), 3),)),
    dict(planted_collabs=((("A", "B"), 0),)),
    dict(tag_prob=1.5),
    dict(noise_overdub_prob=1.0),
    dict(dispersion=-1.0),
])
def test_infeasible_configs(kw):
    with pytest.raises(ConfigError):
        SynthConfig(**kw)


def test_config_dict_roundtrip():
    cfg = SynthConfig(seed=4, planted_collabs=((("A", "B", "C"), 5),), beta={"intercept": 0.1})
    again = SynthConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({"seed": 1, "colour": "red"})


def test_planted_dyad_count():
    cfg = SynthConfig(seed=11, planted_collabs=((("P", "Q"), 10),), **SMALL)
    events, truth = generate(cfg)
    forest = build_forest(events)
    counts = oracle_mine(forest)
    assert counts[("P", "Q")] == 10
    (rec,) = truth["planted"]
    assert rec["co_trees"] == 10 and rec["expected_itemsets"] == [["P", "Q"]]


def test_planted_triad_truth():
    cfg = SynthConfig(seed=12, planted_collabs=((("A", "B", "C"), 6),), **SMALL)
    events, truth = generate(cfg)
    assert truth["planted"][0]["expected_itemsets"] == [["A", "B"], ["B", "C"], ["A", "B", "C"]]
    counts = oracle_mine(build_forest(events))
    for s in truth["planted"][0]["expected_itemsets"]:
        assert counts[tuple(s)] == 6
    assert ("A", "C") not in counts


def test_generated_log_is_consistent():
    events, truth = generate(SynthConfig(seed=5, **SMALL))
    forest = build_forest(events)
    assert len(forest.trees) == 40
    ts = [e.timestamp for e in events]
    assert ts == sorted(ts)
    for rec in truth["root_draws"]:
        tree = next(t for t in forest.trees if t.root == rec["song_id"])
        kids = [n for n in tree.nodes.values() if n.parent_id == rec["song_id"]]
        assert len(kids) >= rec["overdubs"]


def test_truth_lines():
    _, truth = generate(SynthConfig(seed=6, planted_collabs=((("P", "Q"), 3),), **SMALL))
    buf = io.StringIO()
    write_truth(truth, buf)
    recs = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert recs[0]["record"] == "planted" and recs[1]["record"] == "summary"
    assert sum(r["record"] == "root_draw" for r in recs) == 37


# ---------------------------------------------------------------- count draws

def test_nb_zero_fraction_closed_form():
    rng = make_rng(0)
    n, mu, alpha = 200_000, 1.5, 0.8
    y = draw_counts(rng, np.full(n, mu), alpha)
    theta = 1 / alpha
    p0 = (theta / (theta + mu)) ** theta
    assert abs((y == 0).mean() - p0) < 4 * np.sqrt(p0 * (1 - p0) / n)
    assert abs(y.mean() - mu) < 4 * np.sqrt((mu + alpha * mu ** 2) / n)


def test_zero_inflated_zero_fraction():
    rng = make_rng(1)
    n, mu, pi = 200_000, 2.0, 0.3
    y = draw_counts(rng, np.full(n, mu), 0.0, zero_prob=pi)
    p0 = pi + (1 - pi) * np.exp(-mu)
    assert abs((y == 0).mean() - p0) < 4 * np.sqrt(p0 * (1 - p0) / n)


def test_truncated_draws():
    rng = make_rng(2)
    mu = 0.7
    y = draw_truncated(rng, np.full(100_000, mu))
    assert y.min() >= 1
    assert y.mean() == pytest.approx(mu / (1 - np.exp(-mu)), rel=0.01)


def test_simulate_regression_shapes():
    X, Z, y = simulate_regression("zinb", 50, [0.1, 0.2, 0.3], [0.0, 0.5], alpha=1.0)
    assert X.shape == (50, 3) and Z.shape == (50, 2) and y.shape == (50,)
    assert np.all(X[:, 0] == 1) and np.all(Z[:, 0] == 1)
    with pytest.raises(ConfigError):
        simulate_regression("gamma", 10, [0.0])


def test_hurdle_simulation_zero_share():
    X, Z, y = simulate_regression("hurdle", 50_000, [0.5], [0.4], alpha=0.5, seed=3)
    p_pos = 1 / (1 + np.exp(-0.4))
    assert (y > 0).mean() == pytest.approx(p_pos, abs=0.01)


# ---------------------------------------------------------------- oracle

def test_oracle_example_tree():
    assert oracle_mine(example_tree()) == {k: 1 for k in EXAMPLE_COUNTS}


def test_oracle_empty():
    assert oracle_mine(SongForest.from_nodes([], {}, log_end=0)) == {}
