"""Hidden row activation (HiRA) timing model and the HiRA-MC scheduler.

A HiRA operation interrupts one row's activation with an early precharge
and opens a second row in an isolated subarray while the first finishes
restoring, so two rows refresh in t1 + t2 + t_ras instead of
t_ras + t_rp + t_ras. The scheduler keeps periodic and preventive refresh
requests in a deadline-ordered Refresh Table and pairs them with memory
accesses (Case 1) or with each other (Case 2) whenever the Subarray Pairs
Table allows it.
"""

import math
import random
from dataclasses import dataclass, field

from .dram import (ACT, HIRA_FIRST, HIRA_PRE, HIRA_SECOND, PRE, DramCommand,
                   Geometry, TimingParams)
from .errors import ConfigError, PairingError, ProtocolError
from .sketch import derive_seed

PERIODIC = "periodic"
PREVENTIVE = "preventive"


@dataclass(frozen=True)
class HiraTimings:
    t1: int = 3_000  # ps
    t2: int = 3_000

    def __post_init__(self):
        if self.t1 <= 0 or self.t2 <= 0:
            raise ConfigError("t1 and t2 must be positive")

    def check_against(self, timings: TimingParams):
        if self.t1 + self.t2 >= timings.t_rc:
            raise ConfigError("t1 + t2 must stay below t_rc")


class SubarrayPairsTable:
    """Symmetric, irreflexive isolation relation between subarrays."""

    def __init__(self, subarrays, pairs, coverage=None):
        self.subarrays = subarrays
        self._partners = {s: set() for s in range(subarrays)}
        for a, b in pairs:
            if a == b:
                raise ConfigError("a subarray cannot pair with itself")
            self._partners[a].add(b)
            self._partners[b].add(a)
        self.coverage = coverage if coverage is not None else self.measured_coverage()

    def can_pair(self, a, b):
        return b in self._partners[a]

    def partners(self, a):
        return self._partners[a]

    def measured_coverage(self):
        if self.subarrays < 2:
            return 0.0
        return sum(len(p) for p in self._partners.values()) / (
            self.subarrays * (self.subarrays - 1))

    def to_pairs(self):
        return sorted((a, b) for a in self._partners for b in self._partners[a] if a < b)


def build_spt(subarrays, target_coverage, seed):
    """Deterministically generate an SPT whose mean isolated fraction lands
    within 2% of the target.

    Starts from a distance rule (subarrays further apart than a threshold
    are isolated, matching physically-distant subarray groups) and then
    nudges individual pairs with a seeded RNG to close the gap.
    """
    if not 0.0 < target_coverage < 1.0:
        raise ConfigError("coverage target must lie in (0, 1)")
    if subarrays < 2:
        raise ConfigError("need at least two subarrays to pair")
    total_pairs = subarrays * (subarrays - 1) // 2

    def coverage_for(dist):
        iso = max(subarrays - dist, 0)
        return iso * (iso + 1) / (2.0 * total_pairs)

    dist = min(range(1, subarrays + 1), key=lambda d: abs(coverage_for(d) - target_coverage))
    pairs = {(a, b) for a in range(subarrays) for b in range(a + dist, subarrays)}
    rng = random.Random(derive_seed(seed, "spt"))
    near = [(a, b) for a in range(subarrays) for b in range(a + 1, min(a + dist, subarrays))]
    rng.shuffle(near)
    removable = sorted(pairs)
    rng.shuffle(removable)
    while len(pairs) / total_pairs < target_coverage - 0.005 and near:
        pairs.add(near.pop())
    while len(pairs) / total_pairs > target_coverage + 0.005 and removable:
        cand = removable.pop()
        pairs.discard(cand)
    coverage = len(pairs) / total_pairs
    if abs(coverage - target_coverage) > 0.02:
        raise ConfigError(
            f"could not reach coverage {target_coverage:.3f}; got {coverage:.3f}")
    return SubarrayPairsTable(subarrays, pairs)


@dataclass
class RefreshRequest:
    deadline: int
    bank: int
    kind: str  # PERIODIC or PREVENTIVE
    target: int = None  # resolved row for preventive; None until issue for periodic
    generated: int = 0
    performed_at: int = None


class RefPtrTable:
    """Per (bank, subarray) pointer to the next row due for periodic refresh."""

    def __init__(self, geometry: Geometry):
        self.geom = geometry
        self.next_row = {}   # (bank, subarray) -> local row index
        self.counts = {}     # (bank, subarray) -> rows refreshed this window
        for b in range(geometry.banks_per_rank):
            for s in range(geometry.subarrays_per_bank):
                self.next_row[(b, s)] = 0
                self.counts[(b, s)] = 0

    def reset_window(self):
        for key in self.counts:
            self.counts[key] = 0

    def open_subarrays(self, bank, candidates=None):
        """Subarrays still owing refreshes this window, least-refreshed first."""
        subs = candidates if candidates is not None else range(self.geom.subarrays_per_bank)
        pending = [s for s in subs if self.counts[(bank, s)] < self.geom.rows_per_subarray]
        return sorted(pending, key=lambda s: (self.counts[(bank, s)], s))

    def take(self, bank, subarray):
        local = self.next_row[(bank, subarray)]
        self.next_row[(bank, subarray)] = (local + 1) % self.geom.rows_per_subarray
        self.counts[(bank, subarray)] += 1
        return subarray * self.geom.rows_per_subarray + local


class PrFifo:
    """Pending preventive-refresh victim rows for one bank."""

    def __init__(self, capacity):
        self.capacity = max(1, capacity)
        self.rows = []
        self.max_occupancy = 0

    def __len__(self):
        return len(self.rows)

    @property
    def full(self):
        return len(self.rows) >= self.capacity

    def head(self):
        return self.rows[0] if self.rows else None

    def push(self, row):
        if self.full:
            raise AssertionError("PR-FIFO overflow; caller must drain first")
        self.rows.append(row)
        self.max_occupancy = max(self.max_occupancy, len(self.rows))

    def pop(self):
        return self.rows.pop(0)


@dataclass
class HiraReport:
    bank: int
    first_row: int
    second_row: int
    kind: str  # "refresh-access" or "refresh-refresh"
    start: int
    second_act_time: int
    earliest_close: int
    close_time: int = None
    data_ready: int = None

    def restore_times(self, close_time=None):
        close = close_time if close_time is not None else self.close_time
        if close is None:
            raise ValueError("closing time not known yet")
        return close - self.start, close - self.second_act_time


class HiraMc:
    """Refresh Table owner and concurrent-refresh finder.

    The engine emits absolute-time command groups; the caller is expected
    to issue them verbatim (it chooses `now` so the bank is precharged and
    the command bus is free).
    """

    def __init__(self, geometry: Geometry, timings: TimingParams,
                 hira: HiraTimings, spt: SubarrayPairsTable, t_refslack,
                 start_time=0):
        hira.check_against(timings)
        if spt.subarrays != geometry.subarrays_per_bank:
            raise ConfigError("SPT subarray count does not match the geometry")
        if t_refslack < 0:
            raise ConfigError("t_refslack must be non-negative")
        self.geom = geometry
        self.t = timings
        self.hira = hira
        self.spt = spt
        self.t_refslack = t_refslack
        self.period = timings.t_refw // geometry.rows_per_bank
        self.stagger = self.period // geometry.banks_per_rank
        self.capacity = max(1, math.ceil(t_refslack / timings.t_rc)) * (1 + geometry.banks_per_rank)
        self.fifo_capacity = max(1, math.ceil(t_refslack / timings.t_rc))
        self.table = []
        self.next_periodic = {
            b: start_time + b * self.stagger for b in range(geometry.banks_per_rank)
        }
        self.refptr = RefPtrTable(geometry)
        self.pr_fifo = {b: PrFifo(self.fifo_capacity) for b in range(geometry.banks_per_rank)}
        self.window_start = start_time
        self.refresh_log = []      # (bank, row, act_time)
        self.performed = []        # finished RefreshRequests, for auditing
        self.hira_reports = []
        self.stats = {"hira_refresh_access": 0, "hira_refresh_refresh": 0,
                      "plain_refresh": 0, "forced_preventive": 0}

    # --- bookkeeping ------------------------------------------------------

    def maybe_roll_window(self, now):
        while now - self.window_start >= self.t.t_refw:
            self.window_start += self.t.t_refw
            self.refptr.reset_window()

    def _note_refresh(self, bank, row, act_time):
        self.refresh_log.append((bank, row, act_time))

    def _consume(self, request, now):
        request.performed_at = now
        self.table.remove(request)
        self.performed.append(request)

    # --- request generation -----------------------------------------------

    def periodic_tick(self, now):
        """Emit the single most overdue periodic request, if any is due."""
        self.maybe_roll_window(now)
        due = [b for b in self.next_periodic if self.next_periodic[b] <= now]
        if not due:
            return None
        bank = min(due, key=lambda b: (self.next_periodic[b], b))
        gen_time = self.next_periodic[bank]
        self.next_periodic[bank] += self.period
        if len(self.table) >= self.capacity:
            raise AssertionError("Refresh Table overflow; capacity formula violated")
        req = RefreshRequest(deadline=gen_time + self.t_refslack, bank=bank,
                             kind=PERIODIC, generated=gen_time)
        self.table.append(req)
        return req

    def preventive_enqueue(self, victim_row, bank, now, bank_start=None):
        """Queue a PARA victim refresh; returns forced commands on overflow."""
        forced = None
        fifo = self.pr_fifo[bank]
        if fifo.full:
            start = max(now, bank_start(bank)) if bank_start else now
            forced = self._force_oldest_preventive(bank, start)
        fifo.push(victim_row)
        if len(self.table) >= self.capacity:
            raise AssertionError("Refresh Table overflow; capacity formula violated")
        self.table.append(RefreshRequest(deadline=now + self.t_refslack, bank=bank,
                                         kind=PREVENTIVE, target=victim_row,
                                         generated=now))
        return forced

    def _force_oldest_preventive(self, bank, now):
        row = self.pr_fifo[bank].pop()
        entry = next(e for e in self.table if e.bank == bank and e.kind == PREVENTIVE)
        self._consume(entry, now)
        self.stats["forced_preventive"] += 1
        return self._plain_refresh_cmds(bank, row, now)

    # --- HiRA issue -------------------------------------------------------

    def hira_issue(self, bank, refresh_row, access_row=None, now=0,
                   second_refresh_row=None, bank_state=None):
        """Build the ACT-PRE-ACT command triple for one HiRA operation.

        Exactly one of access_row / second_refresh_row names the second
        activation's row. For refresh-refresh the closing precharge is
        included; for refresh-access the caller closes the bank later.
        """
        if (access_row is None) == (second_refresh_row is None):
            raise ValueError("pass exactly one of access_row, second_refresh_row")
        second = access_row if access_row is not None else second_refresh_row
        sub_a = self.geom.subarray_of(refresh_row)
        sub_b = self.geom.subarray_of(second)
        if sub_a == sub_b or not self.spt.can_pair(sub_a, sub_b):
            raise PairingError(
                f"subarrays {sub_a} and {sub_b} are not isolated partners")
        if bank_state is not None and bank_state.open_row is not None:
            raise ProtocolError("HiRA requires a precharged bank")
        t1, t2 = self.hira.t1, self.hira.t2
        bank_key = (0, 0, bank)
        cmds = [
            DramCommand(ACT, now, bank_key, row=refresh_row, hira_role=HIRA_FIRST),
            DramCommand(PRE, now + t1, bank_key, hira_role=HIRA_PRE),
            DramCommand(ACT, now + t1 + t2, bank_key, row=second,
                        hira_role=HIRA_SECOND),
        ]
        report = HiraReport(
            bank=bank, first_row=refresh_row, second_row=second,
            kind="refresh-access" if access_row is not None else "refresh-refresh",
            start=now, second_act_time=now + t1 + t2,
            earliest_close=now + t1 + t2 + self.t.t_ras,
        )
        self._note_refresh(bank, refresh_row, now)
        if access_row is not None:
            report.data_ready = now + t1 + t2 + self.t.t_rcd
            self.stats["hira_refresh_access"] += 1
        else:
            cmds.append(DramCommand(PRE, report.earliest_close, bank_key))
            report.close_time = report.earliest_close
            self._note_refresh(bank, second, now + t1 + t2)
            self.stats["hira_refresh_refresh"] += 1
        self.hira_reports.append(report)
        return cmds, report

    # --- Case 1: pair a queued refresh with a memory access ---------------

    def find_concurrent_on_pre(self, bank, access_row, now):
        """Pick the refresh row to fold into an upcoming ACT, or None.

        Only the earliest-deadline entry of the bank is considered; a
        mismatch leaves it queued and the access proceeds unpaired.
        """
        self.maybe_roll_window(now)
        entries = [e for e in self.table if e.bank == bank]
        if not entries:
            return None
        entry = min(entries, key=lambda e: (e.deadline, e.generated))
        acc_sub = self.geom.subarray_of(access_row)
        partners = self.spt.partners(acc_sub)
        if entry.kind == PERIODIC:
            open_subs = self.refptr.open_subarrays(bank, sorted(partners))
            if not open_subs:
                return None
            row = self.refptr.take(bank, open_subs[0])
            self._consume(entry, now)
            return row
        head = self.pr_fifo[bank].head()
        if head is None or self.geom.subarray_of(head) not in partners:
            return None
        self.pr_fifo[bank].pop()
        self._consume(entry, now)
        return head

    # --- Case 2: deadline-driven refreshes --------------------------------

    def deadline_scan(self, now, bank_start=None, emit=None, horizon=None):
        """Perform every entry whose deadline falls within the horizon
        (default one t_rc; a busy controller can scan earlier to keep
        slack for closing the bank first).

        Returns a list of (commands, report-or-None) groups; HiRA
        refresh-refresh pairing is attempted first, plain ACT+PRE is the
        fallback. `bank_start(bank, n_acts)` may push a group's base time
        past `now` to the bank's earliest protocol-legal instant; `emit`
        is called with each group as soon as it is built, so a caller
        that issues commands eagerly keeps its bank state in sync between
        entries.
        """
        self.maybe_roll_window(now)
        horizon = horizon if horizon is not None else self.t.t_rc
        groups = []
        while True:
            due = [e for e in self.table if e.deadline < now + horizon]
            if not due:
                break
            entry = min(due, key=lambda e: (e.deadline, e.generated))
            row = self._resolve(entry)
            partner_entry, partner_row = self._find_pairing(entry, row)
            n_acts = 1 if partner_entry is None else 2
            start = max(now, bank_start(entry.bank, n_acts)) if bank_start else now
            if partner_entry is not None:
                self._consume(entry, start)
                self._consume(partner_entry, start)
                cmds, report = self.hira_issue(entry.bank, row, now=start,
                                               second_refresh_row=partner_row)
                group = (cmds, report)
            else:
                self._consume(entry, start)
                group = (self._plain_refresh_cmds(entry.bank, row, start), None)
            groups.append(group)
            if emit is not None:
                emit(group)
        return groups

    def _resolve(self, entry):
        if entry.kind == PREVENTIVE:
            return self.pr_fifo[entry.bank].pop()
        open_subs = self.refptr.open_subarrays(entry.bank)
        if not open_subs:
            # every row already refreshed this window; wrap anyway
            return self.refptr.take(entry.bank, 0)
        return self.refptr.take(entry.bank, open_subs[0])

    def _find_pairing(self, entry, row):
        """Another queued entry of the same bank resolvable to an isolated
        subarray, preferring the earliest deadline."""
        sub = self.geom.subarray_of(row)
        partners = self.spt.partners(sub)
        others = sorted((e for e in self.table
                         if e is not entry and e.bank == entry.bank),
                        key=lambda e: (e.deadline, e.generated))
        for cand in others:
            if cand.kind == PREVENTIVE:
                head = self.pr_fifo[cand.bank].head()
                # only the FIFO head is reachable; order must be preserved
                if head is not None and head != row \
                        and self.geom.subarray_of(head) in partners \
                        and cand.target == head:
                    self.pr_fifo[cand.bank].pop()
                    return cand, head
            else:
                open_subs = self.refptr.open_subarrays(cand.bank, sorted(partners))
                if open_subs:
                    return cand, self.refptr.take(cand.bank, open_subs[0])
        return None, None

    def _plain_refresh_cmds(self, bank, row, now):
        bank_key = (0, 0, bank)
        self._note_refresh(bank, row, now)
        self.stats["plain_refresh"] += 1
        return [
            DramCommand(ACT, now, bank_key, row=row),
            DramCommand(PRE, now + self.t.t_ras, bank_key),
        ]

    # --- audits -----------------------------------------------------------

    def audit_deadlines(self):
        """Requests performed after their deadline (should be empty)."""
        return [r for r in self.performed
                if r.performed_at is not None and r.performed_at > r.deadline]

    def coverage_gaps(self, window_start, window_end, banks=None):
        """Rows not refreshed inside [window_start, window_end)."""
        banks = banks if banks is not None else range(self.geom.banks_per_rank)
        seen = {b: set() for b in banks}
        for bank, row, t_act in self.refresh_log:
            if bank in seen and window_start <= t_act < window_end:
                seen[bank].add(row)
        gaps = []
        for b in banks:
            for row in range(self.geom.rows_per_bank):
                if row not in seen[b]:
                    gaps.append((b, row))
        return gaps


def two_row_refresh_latencies(timings: TimingParams, hira: HiraTimings):
    """(HiRA, conventional) back-to-back two-row refresh latencies in ps."""
    hira_lat = hira.t1 + hira.t2 + timings.t_ras
    conventional = timings.t_ras + timings.t_rp + timings.t_ras
    return hira_lat, conventional
