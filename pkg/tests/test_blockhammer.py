import math

import pytest

from disturbsim.blockhammer import (OBSERVE_ONLY, AttackModel, BlockHammer,
                                    HistoryBuffer, derive_config)
from disturbsim.dram import TimingParams
from disturbsim.errors import ConfigError

T = TimingParams()


def test_attack_model_impacts():
    assert AttackModel.double_sided().impact_sum == 1.0
    m = AttackModel.many_sided(6, decay=0.5)
    assert m.impact_sum == pytest.approx(1.96875)
    with pytest.raises(ConfigError):
        AttackModel(3, (1.0,)).impact_sum


def test_derive_config_preset_32k():
    cfg = derive_config(32768)
    assert cfg.n_rh_star == 16384
    assert cfg.n_bl == 8192
    assert cfg.cbf_size == 1024
    assert cfg.t_cbf == T.t_refw
    assert cfg.t_delay == 7_766_250
    assert cfg.hb_capacity == math.ceil(4 * cfg.t_delay / T.t_faw) == 888
    assert cfg.epoch_len == T.t_refw // 2
    assert cfg.counter_width == 14
    assert cfg.n_bl < cfg.n_rh_star <= cfg.n_rh
    assert cfg.t_delay > T.t_rc


def test_derive_config_all_presets_valid():
    for n_rh in (32768, 16384, 8192, 4096, 2048, 1024):
        cfg = derive_config(n_rh)
        assert cfg.n_bl < cfg.n_rh_star <= cfg.n_rh
        assert cfg.t_delay > T.t_rc
        assert cfg.hb_capacity >= math.ceil(4 * cfg.t_delay / T.t_faw)


def test_derive_config_many_sided_ratio():
    cfg = derive_config(10000, AttackModel.many_sided(6, 0.5))
    assert cfg.n_rh_star / cfg.n_rh == pytest.approx(1 / (2 * 1.96875))


def test_derive_config_arbitrary_threshold():
    t = TimingParams(t_refw=640_000_000)
    cfg = derive_config(64, timings=t)
    assert cfg.n_rh_star == 32
    assert cfg.n_bl == 16
    assert cfg.cbf_size == (1 << 23) // 64
    assert cfg.t_delay == (640_000_000 - 16 * T.t_rc) // 16


def test_derive_config_rejects_degenerate():
    # shrink the window until the blacklist threshold exceeds the budget
    with pytest.raises(ConfigError):
        derive_config(32768, timings=TimingParams(t_refw=10_000_000))


def test_history_buffer_expiry_and_lookup():
    hb = HistoryBuffer(capacity=4, t_delay=100)
    hb.push(7, now=0)
    assert hb.recent_activation(7, now=50) == 0
    assert hb.recent_activation(7, now=100) is None
    hb.push(7, now=120)
    assert hb.recent_activation(7, now=150) == 120
    assert hb.recent_activation(8, now=150) is None


def test_history_buffer_overflow_guard():
    hb = HistoryBuffer(capacity=2, t_delay=1000)
    hb.push(1, now=0)
    hb.push(2, now=1)
    with pytest.raises(AssertionError):
        hb.push(3, now=2)


def scaled_engine(seed=0, mode="full"):
    t = TimingParams(t_refw=640_000_000)
    cfg = derive_config(64, timings=t, mode=mode)
    return BlockHammer(cfg, banks=4, rows_per_bank=256, seed=seed), cfg


def test_blacklist_then_delay():
    eng, cfg = scaled_engine()
    now = 0
    for _ in range(cfg.n_bl):
        assert eng.is_act_safe(0, 5, now).ok
        eng.on_act_issued(0, 5, thread=0, now=now)
        now += T.t_rc
    assert eng.is_blacklisted(0, 5)
    verdict = eng.is_act_safe(0, 5, now)
    assert not verdict.ok
    assert verdict.retry_after == (now - T.t_rc) + cfg.t_delay
    # waiting out the delay makes the row safe again
    assert eng.is_act_safe(0, 5, verdict.retry_after).ok


def test_observe_mode_never_blocks():
    eng, cfg = scaled_engine(mode=OBSERVE_ONLY)
    now = 0
    for _ in range(4 * cfg.n_bl):
        assert eng.is_act_safe(0, 5, now).ok
        eng.on_act_issued(0, 5, thread=0, now=now)
        now += T.t_rc
    assert eng.quota(0, 0) == cfg.quota_max


def test_throttler_counts_only_blacklisted_acts():
    eng, cfg = scaled_engine()
    now = 0
    for _ in range(cfg.n_bl):
        eng.on_act_issued(0, 9, thread=1, now=now)
        now += cfg.t_delay  # spaced out, so never Unsafe
    assert eng.rhli(1, 0) == 0.0
    for _ in range(5):
        eng.on_act_issued(0, 9, thread=1, now=now)
        now += cfg.t_delay
    denom = cfg.n_rh_star * (cfg.t_cbf / cfg.t_refw) - cfg.n_bl
    assert eng.rhli(1, 0) == pytest.approx(5 / denom)


def test_quota_formula():
    eng, cfg = scaled_engine()
    assert eng.quota(0, 0) == cfg.quota_max
    denom = cfg.rhli_denominator
    eng.counters[(0, 0)] = [denom / 2, denom / 2]
    assert eng.quota(0, 0) == math.ceil(cfg.quota_max * 0.5)
    eng.counters[(0, 0)] = [denom, denom]
    assert eng.quota(0, 0) == 0


def test_epoch_swap_resets_one_counter_and_filter():
    eng, cfg = scaled_engine()
    for _ in range(cfg.n_bl + 3):
        eng.on_act_issued(0, 5, thread=0, now=0)
    assert eng.rhli(0, 0) > 0
    eng.tick_epoch(cfg.epoch_len)
    # the filter surviving the swap still blacklists the row
    assert eng.is_blacklisted(0, 5)
    # the now-active throttler counter was the untouched twin
    assert eng.rhli(0, 0) > 0
    eng.tick_epoch(2 * cfg.epoch_len)
    assert not eng.is_blacklisted(0, 5)
    assert eng.rhli(0, 0) == 0.0


def test_history_capacity_bounds_max_rate_stream():
    eng, cfg = scaled_engine()
    now = 0
    # full-rate rank stream honoring tFAW (4 ACTs per window), rotating rows
    row = 0
    for _ in range(4 * cfg.hb_capacity):
        if eng.is_act_safe(0, row, now).ok:
            eng.on_act_issued(0, row, thread=0, now=now)
        row = (row + 1) % 200
        now += T.t_faw // 4
    assert eng.history.max_occupancy <= cfg.hb_capacity
