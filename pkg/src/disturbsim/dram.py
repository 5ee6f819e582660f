"""DRAM geometry, address decoding, bank state machines and timing checks.

All times are integer picoseconds. The command bus is slotted at 2.5 ns
(one command per slot); callers quantize with `ceil_slot`.
"""

from dataclasses import dataclass

from .errors import AddressError, ConfigError, ProtocolError

SLOT_PS = 2500  # command-bus slot

NS = 1000
US = 1000 * NS
MS = 1000 * US


def ceil_slot(t_ps):
    """Round a timestamp up to the next command-bus slot boundary."""
    return -(-t_ps // SLOT_PS) * SLOT_PS


@dataclass(frozen=True)
class Geometry:
    channels: int = 1
    ranks_per_channel: int = 1
    banks_per_rank: int = 16
    subarrays_per_bank: int = 64
    rows_per_bank: int = 65536
    columns_per_row: int = 128

    def __post_init__(self):
        for name in ("channels", "ranks_per_channel", "banks_per_rank",
                     "subarrays_per_bank", "rows_per_bank", "columns_per_row"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.rows_per_bank % self.subarrays_per_bank != 0:
            raise ConfigError("rows_per_bank must be divisible by subarrays_per_bank")

    @property
    def rows_per_subarray(self):
        return self.rows_per_bank // self.subarrays_per_bank

    @property
    def total_columns(self):
        return (self.channels * self.ranks_per_channel * self.banks_per_rank
                * self.rows_per_bank * self.columns_per_row)

    def subarray_of(self, row):
        return row // self.rows_per_subarray


@dataclass(frozen=True)
class TimingParams:
    """DDR4-style timing constraints, integer picoseconds."""

    t_rc: int = 46250
    t_ras: int = 32000
    t_rp: int = 14250
    t_rcd: int = 13500
    t_faw: int = 35000
    t_refw: int = 64 * MS
    t_refi: int = 7812500
    t_rfc: int = 350 * NS
    t_cl: int = 13500

    def __post_init__(self):
        for name in ("t_rc", "t_ras", "t_rp", "t_rcd", "t_faw", "t_refw",
                     "t_refi", "t_rfc", "t_cl"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.t_rc < max(self.t_ras, self.t_rp):
            raise ConfigError("t_rc must be >= max(t_ras, t_rp)")
        if self.t_refi >= self.t_refw:
            raise ConfigError("t_refi must be < t_refw")


@dataclass(frozen=True)
class DecodedAddress:
    channel: int
    rank: int
    bank: int
    row: int
    column: int
    subarray: int

    @property
    def bank_key(self):
        return (self.channel, self.rank, self.bank)


# field name -> attribute used when decoding; 'offset' bits address bytes
# within one column word.
_FIELD_BOUNDS = {
    "offset": None,
    "column": "columns_per_row",
    "row": "rows_per_bank",
    "bank": "banks_per_rank",
    "rank": "ranks_per_channel",
    "channel": "channels",
}

WORD_OFFSET_BITS = 3  # 8-byte column word


class BitFieldMap:
    """Contiguous bit-field address mapping, listed LSB first."""

    def __init__(self, fields):
        self.fields = list(fields)
        names = {n for n, _ in self.fields}
        if names != set(_FIELD_BOUNDS):
            raise ConfigError(f"address map must cover exactly {sorted(_FIELD_BOUNDS)}")
        for _, width in self.fields:
            if width < 0:
                raise ConfigError("field widths must be >= 0")

    @classmethod
    def row_major(cls, geometry):
        """Consecutive addresses walk the columns of one row."""
        return cls([
            ("offset", WORD_OFFSET_BITS),
            ("column", (geometry.columns_per_row - 1).bit_length()),
            ("row", (geometry.rows_per_bank - 1).bit_length()),
            ("bank", (geometry.banks_per_rank - 1).bit_length()),
            ("rank", (geometry.ranks_per_channel - 1).bit_length()),
            ("channel", (geometry.channels - 1).bit_length()),
        ])

    @classmethod
    def mop(cls, geometry, burst_columns=4):
        """MOP-style interleaving: small column bursts rotate over
        channels/ranks/banks before the remaining column bits."""
        col_bits = (geometry.columns_per_row - 1).bit_length()
        low = min(col_bits, (burst_columns - 1).bit_length())
        return cls([
            ("offset", WORD_OFFSET_BITS),
            ("column", low),
            ("channel", (geometry.channels - 1).bit_length()),
            ("rank", (geometry.ranks_per_channel - 1).bit_length()),
            ("bank", (geometry.banks_per_rank - 1).bit_length()),
            ("column", col_bits - low),
            ("row", (geometry.rows_per_bank - 1).bit_length()),
        ])

    def total_bits(self):
        return sum(w for _, w in self.fields)


class _FieldAccumulator:
    """Decodes/encodes possibly-split fields in mapping order."""

    def __init__(self, mapping):
        self.mapping = mapping

    def decode(self, address):
        vals = {name: 0 for name in _FIELD_BOUNDS}
        shifts = {name: 0 for name in _FIELD_BOUNDS}
        pos = 0
        for name, width in self.mapping.fields:
            part = (address >> pos) & ((1 << width) - 1)
            vals[name] |= part << shifts[name]
            shifts[name] += width
            pos += width
        return vals

    def encode(self, vals):
        shifts = {name: 0 for name in _FIELD_BOUNDS}
        address = 0
        pos = 0
        for name, width in self.mapping.fields:
            part = (vals[name] >> shifts[name]) & ((1 << width) - 1)
            address |= part << pos
            shifts[name] += width
            pos += width
        return address


def decode_address(physical_address, geometry, mapping=None):
    """Split a physical byte address into DRAM coordinates."""
    if mapping is None:
        mapping = BitFieldMap.row_major(geometry)
    if physical_address < 0:
        raise AddressError(f"negative address {physical_address:#x}")
    if physical_address >= geometry.total_columns << WORD_OFFSET_BITS:
        raise AddressError(f"address {physical_address:#x} outside capacity")
    vals = _FieldAccumulator(mapping).decode(physical_address)
    for name, bound_attr in _FIELD_BOUNDS.items():
        if bound_attr and vals[name] >= getattr(geometry, bound_attr):
            raise AddressError(
                f"address {physical_address:#x}: {name}={vals[name]} exceeds geometry")
    return DecodedAddress(
        channel=vals["channel"], rank=vals["rank"], bank=vals["bank"],
        row=vals["row"], column=vals["column"],
        subarray=geometry.subarray_of(vals["row"]),
    )


def encode_address(decoded, geometry, mapping=None):
    """Inverse of decode_address for the same mapping."""
    if mapping is None:
        mapping = BitFieldMap.row_major(geometry)
    vals = {
        "offset": 0,
        "channel": decoded.channel, "rank": decoded.rank, "bank": decoded.bank,
        "row": decoded.row, "column": decoded.column,
    }
    return _FieldAccumulator(mapping).encode(vals)


# --- commands -------------------------------------------------------------

ACT = "ACT"
PRE = "PRE"
RD = "RD"
WR = "WR"
REF = "REF"

# hira_role values on a command
HIRA_FIRST = "hira-first"    # opens the row being refreshed
HIRA_PRE = "hira-pre"        # interrupted precharge at t1
HIRA_SECOND = "hira-second"  # second activation at t1+t2


@dataclass
class DramCommand:
    kind: str
    time: int
    bank_key: tuple = (0, 0, 0)
    row: int | None = None
    column: int | None = None
    thread: int | None = None
    hira_role: str | None = None
    note: str = ""


# --- bank state -----------------------------------------------------------

PRECHARGED = "Precharged"
ACTIVATING = "Activating"
ACTIVE = "Active"
PRECHARGING = "Precharging"


@dataclass
class BankState:
    """Per-bank protocol state.

    `hira_row` is a second open row undergoing restoration after a
    hidden-activation sequence; a single PRE closes both rows.
    """

    open_row: int | None = None
    act_time: int = -(1 << 62)
    last_act_time: int = -(1 << 62)
    last_pre_time: int = -(1 << 62)
    pre_issue_time: int = -(1 << 62)
    hira_row: int | None = None
    hira_act_time: int = -(1 << 62)
    hira_pending_second: bool = False

    def phase(self, now, t: TimingParams):
        if self.open_row is not None:
            base = ACTIVATING if now < self.act_time + t.t_rcd else ACTIVE
            if self.hira_row is not None:
                return f"HiraRestoring+{base}"
            return base
        if self.hira_pending_second:
            return "HiraInterrupted"
        if now < self.last_pre_time:
            return PRECHARGING
        return PRECHARGED


class RankState:
    """Rank-level bookkeeping: tFAW window and REF busy period."""

    def __init__(self):
        self.recent_act_times = []  # last 4 ACT timestamps
        self.busy_until = -(1 << 62)

    def faw_earliest(self, t_faw):
        if len(self.recent_act_times) < 4:
            return 0
        return self.recent_act_times[-4] + t_faw

    def note_act(self, now):
        self.recent_act_times.append(now)
        if len(self.recent_act_times) > 4:
            del self.recent_act_times[0]


def earliest_issue(state: BankState, cmd: DramCommand, now: int, t: TimingParams,
                   rank: RankState | None = None):
    """Earliest protocol-legal issue time >= now for `cmd`, or raise ProtocolError."""
    ready = now
    if rank is not None:
        ready = max(ready, rank.busy_until)
    if cmd.kind == ACT:
        if state.open_row is not None and cmd.hira_role is None:
            raise ProtocolError("ACT while a row is open")
        if cmd.hira_role == HIRA_SECOND:
            if not state.hira_pending_second:
                raise ProtocolError("hira-second ACT without interrupted PRE")
            # spacing after the interrupted PRE is controlled by the hira engine
        else:
            ready = max(ready,
                        state.last_pre_time,           # PRE->ACT: t_rp already added
                        state.last_act_time + t.t_rc)  # ACT->ACT same bank
        if rank is not None:
            ready = max(ready, rank.faw_earliest(t.t_faw))
        return ready
    if cmd.kind in (RD, WR):
        if state.open_row is None:
            raise ProtocolError(f"{cmd.kind} with no open row")
        if cmd.row is not None and cmd.row != state.open_row:
            raise ProtocolError(f"{cmd.kind} targets row {cmd.row}, open row is {state.open_row}")
        return max(ready, state.act_time + t.t_rcd)
    if cmd.kind == PRE:
        if state.open_row is None and not state.hira_pending_second:
            raise ProtocolError("PRE with no open row")
        if cmd.hira_role == HIRA_PRE:
            return ready  # deliberately violates t_ras; hira engine controls spacing
        ready = max(ready, state.act_time + t.t_ras)
        if state.hira_row is not None:
            ready = max(ready, state.hira_act_time + t.t_ras)
        return ready
    if cmd.kind == REF:
        if state.open_row is not None:
            raise ProtocolError("REF with an open row")
        return max(ready, state.last_pre_time)
    raise ProtocolError(f"unknown command kind {cmd.kind}")


def apply_command(state: BankState, cmd: DramCommand, now: int, t: TimingParams,
                  rank: RankState | None = None):
    """Record a command's phase transition. `now` must honor earliest_issue."""
    legal = earliest_issue(state, cmd, now, t, rank)
    if now < legal:
        raise ProtocolError(
            f"{cmd.kind} at {now} ps before earliest legal time {legal} ps")
    if cmd.kind == ACT:
        if cmd.hira_role == HIRA_SECOND:
            state.hira_pending_second = False
        state.open_row = cmd.row
        state.act_time = now
        state.last_act_time = now
        if rank is not None:
            rank.note_act(now)
    elif cmd.kind == PRE:
        if cmd.hira_role == HIRA_PRE:
            # interrupted precharge: the open row keeps restoring
            state.hira_row = state.open_row
            state.hira_act_time = state.act_time
            state.open_row = None
            state.hira_pending_second = True
        else:
            state.open_row = None
            state.hira_row = None
            state.pre_issue_time = now
            state.last_pre_time = now + t.t_rp
    elif cmd.kind == REF:
        if rank is not None:
            rank.busy_until = now + t.t_rfc
    # RD/WR do not change phase
    return state


# --- replay validator -----------------------------------------------------

class TimingValidator:
    """Replays a command stream and checks every pairwise timing constraint.

    Independent of the scheduler: only the command list matters.
    """

    def __init__(self, timings: TimingParams, hira_t1=None, hira_t2=None):
        self.t = timings
        self.t1 = hira_t1
        self.t2 = hira_t2
        self.violations = []

    def check(self, commands):
        per_bank = {}
        rank_acts = {}
        rank_ref_until = {}
        last_time = None
        for cmd in commands:
            if last_time is not None and cmd.time < last_time:
                self.violations.append(f"non-monotone timestamp at {cmd.time}")
            last_time = cmd.time
            bk = cmd.bank_key
            rk = bk[:2]
            st = per_bank.setdefault(bk, {"open": None, "act": None, "hira_act": None,
                                          "pre_done": None, "interrupted": False})
            if cmd.kind == ACT:
                self._check_act(cmd, st, rank_acts.setdefault(rk, []),
                                rank_ref_until.get(rk))
                st["open"] = cmd.row
                if cmd.hira_role == HIRA_SECOND:
                    st["interrupted"] = False
                else:
                    st["hira_act"] = None
                if cmd.hira_role == HIRA_FIRST:
                    st["hira_act"] = None
                st["prev_act"] = st.get("act")
                st["act"] = cmd.time
                acts = rank_acts[rk]
                acts.append(cmd.time)
                if len(acts) > 4:
                    del acts[0]
            elif cmd.kind == PRE:
                self._check_pre(cmd, st)
                if cmd.hira_role == HIRA_PRE:
                    st["hira_act"] = st["act"]
                    st["interrupted"] = True
                st["open"] = None
                if cmd.hira_role != HIRA_PRE:
                    st["pre_done"] = cmd.time + self.t.t_rp
            elif cmd.kind in (RD, WR):
                if st["open"] is None:
                    self.violations.append(f"{cmd.kind}@{cmd.time}: no open row")
                elif cmd.row is not None and st["open"] != cmd.row:
                    self.violations.append(f"{cmd.kind}@{cmd.time}: wrong open row")
                elif st["act"] is not None and cmd.time < st["act"] + self.t.t_rcd:
                    self.violations.append(f"{cmd.kind}@{cmd.time}: before ACT+tRCD")
            elif cmd.kind == REF:
                if st["open"] is not None:
                    self.violations.append(f"REF@{cmd.time}: bank has open row")
                rank_ref_until[rk] = cmd.time + self.t.t_rfc
        return self.violations

    def _check_act(self, cmd, st, acts, ref_until):
        t = self.t
        if ref_until is not None and cmd.time < ref_until:
            self.violations.append(f"ACT@{cmd.time}: rank busy with REF until {ref_until}")
        if cmd.hira_role == HIRA_SECOND:
            if not st["interrupted"]:
                self.violations.append(f"ACT@{cmd.time}: hira-second without interrupted PRE")
            elif self.t2 is not None and st.get("hira_pre_time") is not None \
                    and cmd.time != st["hira_pre_time"] + self.t2:
                self.violations.append(f"ACT@{cmd.time}: hira t2 spacing violated")
        else:
            if st["open"] is not None:
                self.violations.append(f"ACT@{cmd.time}: row already open")
            if st.get("pre_done") is not None and cmd.time < st["pre_done"]:
                self.violations.append(f"ACT@{cmd.time}: before PRE+tRP")
            if st.get("act") is not None and cmd.time < st["act"] + t.t_rc:
                self.violations.append(f"ACT@{cmd.time}: before previous ACT+tRC")
        if len(acts) >= 4 and cmd.time < acts[-4] + t.t_faw:
            self.violations.append(f"ACT@{cmd.time}: 5th ACT inside tFAW window")

    def _check_pre(self, cmd, st):
        t = self.t
        if cmd.hira_role == HIRA_PRE:
            if self.t1 is not None and st.get("act") is not None \
                    and cmd.time != st["act"] + self.t1:
                self.violations.append(f"PRE@{cmd.time}: hira t1 spacing violated")
            st["hira_pre_time"] = cmd.time
            return
        if st["open"] is None and not st["interrupted"]:
            self.violations.append(f"PRE@{cmd.time}: nothing open")
        if st.get("act") is not None and cmd.time < st["act"] + t.t_ras:
            self.violations.append(f"PRE@{cmd.time}: open row restore < tRAS")
        if st.get("hira_act") is not None and cmd.time < st["hira_act"] + t.t_ras:
            self.violations.append(f"PRE@{cmd.time}: hidden row restore < tRAS")
