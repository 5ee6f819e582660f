import random

import pytest

from disturbsim.errors import ProfileError
from disturbsim.para import ParaEngine, ParaSolverInput, solve_pth
from disturbsim.svard import (ACTIVATED_ROW, BLAST_RADIUS_MIN, SvardConfig,
                              SvardPara, VulnerabilityProfile,
                              generate_profile, load_profile)

TINY = dict(t_refw=64_000, t_rc=1, target_prh=1e-6)


def test_config_validation():
    with pytest.raises(ProfileError):
        SvardConfig(lookup_scope="Nearest")


def test_profile_validation():
    with pytest.raises(ProfileError):
        VulnerabilityProfile([0], {i: i + 1 for i in range(17)})
    with pytest.raises(ProfileError):
        VulnerabilityProfile([0, 1], {0: 100, 1: 100})  # not ascending
    with pytest.raises(ProfileError):
        VulnerabilityProfile([0, 1], {0: 0, 1: 100})  # non-positive
    with pytest.raises(ProfileError):
        VulnerabilityProfile([0, 2], {0: 100, 1: 200})  # unknown bin


def test_profile_lookup_scopes():
    # row 2 is the lone weak row among strong ones
    profile = VulnerabilityProfile([1, 1, 0, 1, 1], {0: 100, 1: 200})
    assert profile.worst_hcfirst == 100
    assert profile.hcfirst_for_act(2, ACTIVATED_ROW) == 100
    assert profile.hcfirst_for_act(0, ACTIVATED_ROW) == 200
    # neighbors of the weak row inherit its threshold under BlastRadiusMin
    for row, expect in [(0, 200), (1, 100), (2, 100), (3, 100), (4, 200)]:
        assert profile.hcfirst_for_act(row, BLAST_RADIUS_MIN) == expect
    # wider blast radius reaches further
    assert profile.hcfirst_for_act(0, BLAST_RADIUS_MIN, r_blast=2) == 100


def test_profile_scaling():
    profile = VulnerabilityProfile([0, 1], {0: 100, 1: 300})
    scaled = profile.scaled_to(1024)
    assert scaled.worst_hcfirst == 1024
    assert scaled.bin_hcfirst[1] == 3072


def test_profile_save_load_roundtrip(tmp_path):
    profile = generate_profile([(0.25, 512), (0.75, 1024)], rows=64, seed=9)
    path = tmp_path / "profile.csv"
    profile.save(path)
    assert load_profile(path) == profile
    assert load_profile(path, rows=64) == profile


def test_load_profile_missing_rows(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text('{"0": 100}\n0,0\n1,0\n')
    with pytest.raises(ProfileError):
        load_profile(path, rows=4)


def test_load_profile_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("not json\n0,0\n")
    with pytest.raises(ProfileError):
        load_profile(path)


def test_generate_profile_counts_and_determinism():
    profile = generate_profile([(0.05, 64), (0.95, 128)], rows=1000, seed=4)
    weak = sum(1 for b in profile.bins if b == 0)
    assert weak == 50
    assert profile == generate_profile([(0.05, 64), (0.95, 128)], rows=1000,
                                       seed=4)
    assert profile != generate_profile([(0.05, 64), (0.95, 128)], rows=1000,
                                       seed=5)
    with pytest.raises(ProfileError):
        generate_profile([(0.6, 64), (0.6, 128)], rows=10, seed=1)


def test_uniform_profile_matches_plain_para():
    # one bin: the wrapper must replay plain PARA's exact decision stream
    profile = VulnerabilityProfile([0] * 32, {0: 512})
    svard = SvardPara(profile, 32, random.Random(11), **TINY)
    plain = ParaEngine(solve_pth(ParaSolverInput(n_rh=512, **TINY)), 32,
                       random.Random(11))
    assert svard.p_th == plain.p_th
    decisions = [(svard.on_close(r % 32), plain.on_close(r % 32))
                 for r in range(5000)]
    assert all(a == b for a, b in decisions)
    assert svard.preventive_count == plain.preventive_count


def test_weakest_bin_matches_plain_and_strong_bins_relax():
    profile = generate_profile([(0.05, 512), (0.95, 1024)], rows=256, seed=2)
    svard = SvardPara(profile, 256, random.Random(1), **TINY)
    plain_pth = solve_pth(ParaSolverInput(n_rh=512, **TINY))
    assert svard.pth_by_hc[512] == plain_pth
    assert svard.pth_by_hc[1024] < svard.pth_by_hc[512]
    # per-row probability honors the blast-radius minimum
    for row in range(256):
        hc = profile.hcfirst_for_act(row, BLAST_RADIUS_MIN)
        assert svard.row_pth[row] == svard.pth_by_hc[hc]


def test_disabled_adaptation_uses_worst_case_everywhere():
    profile = generate_profile([(0.05, 512), (0.95, 1024)], rows=64, seed=2)
    svard = SvardPara(profile, 64, random.Random(1),
                      config=SvardConfig(enabled=False), **TINY)
    assert svard.row_pth is None
    assert svard._pth_for(0) == svard.p_th


def test_profile_row_count_must_match_bank():
    profile = VulnerabilityProfile([0] * 8, {0: 512})
    with pytest.raises(ProfileError):
        SvardPara(profile, 16, random.Random(1), **TINY)
