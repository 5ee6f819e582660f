import pytest

from disturbsim.dram import BitFieldMap, Geometry, decode_address
from disturbsim.errors import ConfigError, ParseError
from disturbsim.workload import (gen_attack, gen_uniform, parse_trace,
                                 write_trace)

GEOM = Geometry(banks_per_rank=4, subarrays_per_bank=8, rows_per_bank=64,
                columns_per_row=16)
MAP = BitFieldMap.row_major(GEOM)


def test_write_parse_roundtrip(tmp_path):
    records = gen_uniform(GEOM, MAP, rate_ps=1000, count=500, seed=3)
    path = tmp_path / "trace.txt"
    write_trace(path, records)
    assert list(parse_trace(path)) == records


def test_parse_skips_comments_and_blanks(tmp_path):
    path = tmp_path / "trace.txt"
    path.write_text("# header\n\n0 0 R 0x10\n5 1 W 0x20\n")
    assert list(parse_trace(path)) == [(0, 0, "R", 0x10), (5, 1, "W", 0x20)]


@pytest.mark.parametrize("line,reason", [
    ("0 0 R", "field count"),
    ("x 0 R 0x10", "non-integer arrival"),
    ("0 0 Q 0x10", "bad kind"),
    ("-5 0 R 0x10", "negative arrival"),
])
def test_parse_rejects_malformed(tmp_path, line, reason):
    path = tmp_path / "bad.txt"
    path.write_text(line + "\n")
    with pytest.raises(ParseError) as exc:
        list(parse_trace(path))
    assert exc.value.line == 1


def test_parse_rejects_decreasing_arrivals(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("100 0 R 0x10\n50 0 R 0x10\n")
    with pytest.raises(ParseError) as exc:
        list(parse_trace(path))
    assert exc.value.line == 2


def test_double_sided_alternates():
    records = gen_attack("DoubleSided", bank=1, rows=[10, 12], rate_ps=1000,
                         seed=1, geometry=GEOM, mapping=MAP, count=10)
    rows = [decode_address(addr, GEOM, MAP).row for _, _, _, addr in records]
    assert rows == [10, 12] * 5
    assert all(decode_address(a, GEOM, MAP).bank == 1
               for _, _, _, a in records)
    arrivals = [t for t, _, _, _ in records]
    assert arrivals == list(range(0, 10_000, 1000))


def test_many_sided_round_robin():
    records = gen_attack("ManySided", bank=0, rows=[2, 4, 6], rate_ps=500,
                         seed=1, geometry=GEOM, mapping=MAP, count=6)
    rows = [decode_address(addr, GEOM, MAP).row for _, _, _, addr in records]
    assert rows == [2, 4, 6, 2, 4, 6]


def test_burst_idle_inserts_gaps():
    records = gen_attack("BurstIdle", bank=0, rows=[5], rate_ps=100, seed=1,
                         geometry=GEOM, mapping=MAP, count=6, burst=2,
                         idle_ps=10_000)
    arrivals = [t for t, _, _, _ in records]
    assert arrivals[2] - arrivals[1] == 100 + 10_000
    assert arrivals[1] - arrivals[0] == 100


def test_attack_validation():
    with pytest.raises(ConfigError):
        gen_attack("DoubleSided", bank=0, rows=[1], rate_ps=100, seed=1,
                   geometry=GEOM, mapping=MAP)
    with pytest.raises(ConfigError):
        gen_attack("ManySided", bank=0, rows=[1], rate_ps=100, seed=1,
                   geometry=GEOM, mapping=MAP)
    with pytest.raises(ConfigError):
        gen_attack("BurstIdle", bank=0, rows=[1], rate_ps=100, seed=1,
                   geometry=GEOM, mapping=MAP)
    with pytest.raises(ConfigError):
        gen_attack("DoubleSided", bank=0, rows=[1, 999], rate_ps=100, seed=1,
                   geometry=GEOM, mapping=MAP)


def test_generators_deterministic():
    a = gen_uniform(GEOM, MAP, rate_ps=100, count=200, seed=9)
    b = gen_uniform(GEOM, MAP, rate_ps=100, count=200, seed=9)
    c = gen_uniform(GEOM, MAP, rate_ps=100, count=200, seed=10)
    assert a == b
    assert a != c
