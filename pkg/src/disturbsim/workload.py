"""Trace file handling and synthetic workload/attack generation.

Trace lines are `<arrival_ps> <thread_id> <R|W> <hex_address>` with
non-decreasing arrival times; parsing streams line by line so traces of
any length fit in constant memory.
"""

import random

from .dram import BitFieldMap, DecodedAddress, Geometry, encode_address
from .errors import ConfigError, ParseError
from .sketch import derive_seed

DOUBLE_SIDED = "DoubleSided"
MANY_SIDED = "ManySided"
BURST_IDLE = "BurstIdle"


def parse_trace(path):
    """Yield (arrival_ps, thread_id, kind, address) tuples from a trace file."""
    last_arrival = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 4:
                raise ParseError("expected 4 fields", path=path, line=lineno)
            arrival_s, thread_s, kind, addr_s = parts
            try:
                arrival = int(arrival_s)
                thread = int(thread_s)
                address = int(addr_s, 16)
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=lineno)
            if kind not in ("R", "W"):
                raise ParseError(f"kind must be R or W, got {kind!r}",
                                 path=path, line=lineno)
            if arrival < 0:
                raise ParseError("negative arrival time", path=path, line=lineno)
            if last_arrival is not None and arrival < last_arrival:
                raise ParseError(
                    f"arrival {arrival} before previous {last_arrival}",
                    path=path, line=lineno)
            last_arrival = arrival
            yield arrival, thread, kind, address


def write_trace(path, records):
    """Write (arrival_ps, thread_id, kind, address) records as a trace file."""
    with open(path, "w") as fh:
        for arrival, thread, kind, address in records:
            fh.write(f"{arrival} {thread} {kind} {address:#x}\n")


def _row_address(geometry, mapping, bank, row, column=0):
    decoded = DecodedAddress(channel=0, rank=0, bank=bank, row=row,
                             column=column, subarray=geometry.subarray_of(row))
    return encode_address(decoded, geometry, mapping)


def gen_attack(kind, bank, rows, rate_ps, seed, geometry=None, mapping=None,
               count=10000, thread=0, start=0, burst=None, idle_ps=None):
    """Generate an attack request stream as (arrival, thread, kind, addr).

    `rows` lists the aggressor rows; `rate_ps` is the spacing between
    requests (use the row-cycle time for a max-rate hammer). Columns
    rotate per access so every request misses the row buffer.
    """
    geometry = geometry or Geometry()
    mapping = mapping or BitFieldMap.row_major(geometry)
    if not rows:
        raise ConfigError("need at least one aggressor row")
    for row in rows:
        if not 0 <= row < geometry.rows_per_bank:
            raise ConfigError(f"row {row} outside the geometry")
    if kind == DOUBLE_SIDED and len(rows) != 2:
        raise ConfigError("double-sided needs exactly two rows")
    if kind == MANY_SIDED and len(rows) < 2:
        raise ConfigError("many-sided needs at least two rows")
    if kind == BURST_IDLE and (burst is None or idle_ps is None):
        raise ConfigError("burst-idle needs burst length and idle time")
    rng = random.Random(derive_seed(seed, f"attack/{kind}"))
    records = []
    now = start
    in_burst = 0
    for i in range(count):
        row = rows[i % len(rows)]
        # row alternation forces a conflict (PRE+ACT) on every request;
        # the column only varies to spread row-buffer state
        column = rng.randrange(geometry.columns_per_row)
        records.append((now, thread, "R",
                        _row_address(geometry, mapping, bank, row, column)))
        now += rate_ps
        if kind == BURST_IDLE:
            in_burst += 1
            if in_burst >= burst:
                now += idle_ps
                in_burst = 0
    return records


def gen_uniform(geometry, mapping, rate_ps, count, seed, thread=0, start=0,
                write_fraction=0.2, banks=None):
    """Benign uniform-random request stream."""
    rng = random.Random(derive_seed(seed, "uniform"))
    banks = banks if banks is not None else list(range(geometry.banks_per_rank))
    records = []
    now = start
    for _ in range(count):
        bank = rng.choice(banks)
        row = rng.randrange(geometry.rows_per_bank)
        column = rng.randrange(geometry.columns_per_row)
        kind = "W" if rng.random() < write_fraction else "R"
        records.append((now, thread, kind,
                        _row_address(geometry, mapping, bank, row, column)))
        now += rate_ps
    return records
