import pytest

from tieredann.config import IndexConfig, dump_config, load_config, parse_config


def test_defaults():
    c = IndexConfig()
    assert (c.R, c.L_search, c.alpha, c.beta) == (32, 128, 0.6, 0.4)
    assert (c.t_hot, c.t_cold, c.t_transfer) == (1.0, 5.0, 40.0)
    assert (c.repair_threshold, c.repair_fanout, c.consolidation_threshold) == (0.5, 8, 0.2)
    assert (c.version_bound, c.sync_batch) == (2, 256)


def test_dump_parse_roundtrip():
    c = IndexConfig(R=24, policy="lfu", theta_adaptive=True, hot_capacity=77, sync=False)
    assert parse_config(dump_config(c)) == c


def test_parse_keys_and_comments(tmp_path):
    p = tmp_path / "x.conf"
    p.write_text("# comment\ngraph.R = 16\ncache.policy=lru  # trailing\n"
                 "cache.theta_adaptive=yes\nupdate.sync_batch=8\ncache.hot_capacity=none\n")
    c = load_config(p)
    assert (c.R, c.policy, c.theta_adaptive, c.sync_batch, c.hot_capacity) == \
        (16, "lru", True, 8, None)


def test_unknown_key_rejected():
    with pytest.raises(ValueError, match="unknown key"):
        parse_config("graph.degree=4")


def test_bad_boolean_rejected():
    with pytest.raises(ValueError):
        parse_config("update.sync=maybe")


def test_hot_slots():
    assert IndexConfig(capacity_fraction=0.2).hot_slots(1000) == 200
    assert IndexConfig(hot_capacity=5).hot_slots(1000) == 5
