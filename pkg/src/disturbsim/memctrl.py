"""Request queues, FR-FCFS scheduling and the mitigation hook surface.

The controller owns the bank state machines and a slotted command bus.
Mitigation engines plug in through a small hook interface: admission
quotas, per-ACT safety queries, activation notifications, row-closure
events (preventive refresh) and scheduled refresh command groups.
"""

from dataclasses import dataclass

from .dram import (ACT, PRE, RD, REF, SLOT_PS, WR, BankState, DramCommand,
                   Geometry, RankState, TimingParams, apply_command,
                   earliest_issue)
from .errors import ConfigError

OPEN = "Open"
CLOSED = "Closed"

READ = "R"
WRITE = "W"


@dataclass
class MemoryRequest:
    arrival: int
    thread_id: int
    kind: str
    address: object  # DecodedAddress
    completion: int = None

    def __post_init__(self):
        if self.kind not in (READ, WRITE):
            raise ConfigError(f"request kind must be R or W, got {self.kind!r}")


@dataclass(frozen=True)
class SchedulerConfig:
    read_queue_len: int = 64
    write_queue_len: int = 64
    column_cap: int = 16
    row_policy: str = OPEN

    def __post_init__(self):
        if self.read_queue_len < 1 or self.write_queue_len < 1:
            raise ConfigError("queue lengths must be >= 1")
        if self.column_cap < 1:
            raise ConfigError("column cap must be >= 1")
        if self.row_policy not in (OPEN, CLOSED):
            raise ConfigError(f"unknown row policy {self.row_policy!r}")


class BaseMitigation:
    """No-op hook set; concrete mitigations override what they need."""

    def tick(self, ctrl, now):
        """Periodic housekeeping; may return refresh command groups."""
        return []

    def admission_quota(self, thread, bank):
        return None  # unlimited

    def act_safe(self, bank_key, row, now):
        return None  # None means safe; otherwise earliest retry time

    def on_act(self, bank_key, row, thread, now):
        pass

    def on_close(self, ctrl, bank_key, row, now):
        """Row closed; may return preventive-refresh command groups."""
        return []

    def pre_act_pairing(self, ctrl, bank_key, row, now):
        """Chance to replace a plain ACT with a HiRA refresh-access triple."""
        return None


class MemCtrl:
    def __init__(self, geometry: Geometry, timings: TimingParams,
                 sched: SchedulerConfig = None, mitigation: BaseMitigation = None,
                 refresh_mode="baseline", start_time=0):
        if refresh_mode not in ("baseline", "hira", "none"):
            raise ConfigError(f"unknown refresh mode {refresh_mode!r}")
        self.geom = geometry
        self.t = timings
        self.sched = sched or SchedulerConfig()
        self.mitigation = mitigation or BaseMitigation()
        self.refresh_mode = refresh_mode
        self.states = {}
        self.ranks = {}
        self.queue = []
        self.completed = []
        self.bus_free_at = start_time
        self._now = start_time
        self.col_streak = {}
        # per-bank classification of the next serve after an ACT: the
        # opening request counts as a miss (or conflict), later serves as hits
        self._open_reason = {}
        self._conflict_pending = set()
        self._conflict_target = {}
        self._close_pending = set()
        self.command_log = []
        self.refresh_log = []  # (bank_key, row, time) for baseline REF coverage
        self.next_ref = {}
        self.ref_ptr = {}
        if refresh_mode == "baseline":
            for ch in range(geometry.channels):
                for rk in range(geometry.ranks_per_channel):
                    self.next_ref[(ch, rk)] = start_time + timings.t_refi
        self.rows_per_ref = max(1, geometry.rows_per_bank
                                // (timings.t_refw // timings.t_refi))
        self.stats = {
            "enqueued": 0, "rejected_full": 0, "rejected_quota": 0,
            "served": 0, "row_hits": 0, "row_misses": 0, "row_conflicts": 0,
            "acts": 0, "pres": 0, "refs": 0, "reads": 0, "writes": 0,
            "unsafe_skips": 0,
        }

    # --- state access -----------------------------------------------------

    def bank_state(self, bank_key):
        return self.states.setdefault(bank_key, BankState())

    def rank_state(self, rank_key):
        return self.ranks.setdefault(rank_key, RankState())

    def earliest_act_start(self, bank_key, now, hira_role=None):
        """Earliest instant both the bank and the command bus allow an ACT."""
        probe = DramCommand(ACT, now, bank_key, row=0, hira_role=hira_role)
        ready = earliest_issue(self.bank_state(bank_key), probe, now, self.t,
                               self.rank_state(bank_key[:2]))
        return max(ready, self.bus_free_at)

    # --- admission ---------------------------------------------------------

    def enqueue(self, request: MemoryRequest):
        kind_count = sum(1 for r in self.queue if r.kind == request.kind)
        limit = (self.sched.read_queue_len if request.kind == READ
                 else self.sched.write_queue_len)
        if kind_count >= limit:
            self.stats["rejected_full"] += 1
            return False
        quota = self.mitigation.admission_quota(request.thread_id,
                                                request.address.bank)
        if quota is not None:
            in_flight = sum(
                1 for r in self.queue
                if r.thread_id == request.thread_id
                and r.address.bank == request.address.bank)
            if in_flight >= quota:
                self.stats["rejected_quota"] += 1
                return False
        self.queue.append(request)
        self.stats["enqueued"] += 1
        return True

    # --- command issue ------------------------------------------------------

    def _issue(self, cmd: DramCommand):
        rank = self.rank_state(cmd.bank_key[:2]) if cmd.kind in (ACT, REF) else None
        apply_command(self.bank_state(cmd.bank_key), cmd, cmd.time, self.t, rank)
        self.command_log.append(cmd)
        # one bus slot per command, charged at decision time: groups stamped
        # in the future consume bandwidth now instead of serializing banks
        self.bus_free_at = max(self.bus_free_at,
                               min(cmd.time, self._now)) + SLOT_PS
        key = {ACT: "acts", PRE: "pres", REF: "refs", RD: "reads", WR: "writes"}[cmd.kind]
        self.stats[key] += 1

    def issue_group(self, cmds):
        for cmd in cmds:
            self._issue(cmd)

    # --- refresh ------------------------------------------------------------

    def baseline_refresh_tick(self, now):
        """Advance rank REF when due; returns the command issued, if any."""
        for rank_key, due in self.next_ref.items():
            if now < due or now < self.bus_free_at:
                continue
            rank = self.rank_state(rank_key)
            if now < rank.busy_until:
                continue
            open_banks = [
                bk for bk, st in self.states.items()
                if bk[:2] == rank_key and (st.open_row is not None
                                           or st.hira_pending_second)
            ]
            if open_banks:
                bk = open_banks[0]
                st = self.bank_state(bk)
                probe = DramCommand(PRE, now, bk)
                ready = earliest_issue(st, probe, now, self.t)
                if ready > now:
                    continue
                closed = st.open_row
                cmd = DramCommand(PRE, now, bk, note="pre-ref")
                self._issue(cmd)
                self._closed_row(bk, closed, now)
                return cmd
            ready = max((self.bank_state(bk).last_pre_time
                         for bk in self.states if bk[:2] == rank_key),
                        default=0)
            if ready > now:
                continue
            cmd = DramCommand(REF, now, (rank_key[0], rank_key[1], 0))
            self._issue(cmd)
            self._mark_ref_rows(rank_key, now)
            self.next_ref[rank_key] = due + self.t.t_refi
            return cmd
        return None

    def _mark_ref_rows(self, rank_key, now):
        for bank in range(self.geom.banks_per_rank):
            bk = (rank_key[0], rank_key[1], bank)
            ptr = self.ref_ptr.get(bk, 0)
            for i in range(self.rows_per_ref):
                row = (ptr + i) % self.geom.rows_per_bank
                self.refresh_log.append((bk, row, now))
            self.ref_ptr[bk] = (ptr + self.rows_per_ref) % self.geom.rows_per_bank

    # --- scheduling ---------------------------------------------------------

    def _closed_row(self, bank_key, row, now):
        self.col_streak[bank_key] = 0
        if row is not None:
            for group in self.mitigation.on_close(self, bank_key, row, now):
                self.issue_group(group)

    def step(self, now):
        """One scheduler slot: housekeeping, refresh, then FR-FCFS."""
        self._now = now
        for group in self.mitigation.tick(self, now):
            self.issue_group(group)
        if self.refresh_mode == "baseline":
            if self.baseline_refresh_tick(now) is not None:
                return
        if now < self.bus_free_at:
            return
        for bk in sorted(self._close_pending):
            st = self.bank_state(bk)
            if st.open_row is None:
                self._close_pending.discard(bk)
                continue
            if self._has_hit(bk, st.open_row):
                self._close_pending.discard(bk)
                continue
            if self._schedule_close(bk, now):
                self._close_pending.discard(bk)
                return
        if not self.queue:
            return
        if self._try_column(now):
            return
        self._try_row(now)

    def _try_column(self, now):
        for req in self.queue:
            bk = req.address.bank_key
            st = self.bank_state(bk)
            if st.open_row != req.address.row:
                continue
            if self.col_streak.get(bk, 0) >= self.sched.column_cap \
                    and self._has_conflict(bk, st.open_row):
                continue
            kind = RD if req.kind == READ else WR
            cmd = DramCommand(kind, now, bk, row=req.address.row,
                              column=req.address.column, thread=req.thread_id)
            if earliest_issue(st, cmd, now, self.t) > now:
                continue
            self._issue(cmd)
            self.col_streak[bk] = self.col_streak.get(bk, 0) + 1
            req.completion = now + self.t.t_cl
            self.queue.remove(req)
            self.completed.append(req)
            self.stats["served"] += 1
            reason = self._open_reason.pop(bk, "row_hits")
            self.stats[reason] += 1
            if self.sched.row_policy == CLOSED and not self._has_hit(bk, st.open_row):
                if not self._schedule_close(bk, now):
                    self._close_pending.add(bk)
            return True
        return False

    def _has_conflict(self, bank_key, open_row):
        return any(r.address.bank_key == bank_key and r.address.row != open_row
                   for r in self.queue)

    def _has_hit(self, bank_key, open_row):
        return any(r.address.bank_key == bank_key and r.address.row == open_row
                   for r in self.queue)

    def _schedule_close(self, bank_key, now):
        st = self.bank_state(bank_key)
        probe = DramCommand(PRE, now, bank_key)
        ready = earliest_issue(st, probe, now, self.t)
        if ready > now:
            return False
        closed = st.open_row
        self._issue(DramCommand(PRE, now, bank_key))
        self._closed_row(bank_key, closed, now)
        return True

    def _try_row(self, now):
        for req in self.queue:
            bk = req.address.bank_key
            st = self.bank_state(bk)
            if st.open_row is None:
                if st.hira_pending_second:
                    continue  # mid-HiRA; the engine owns this bank briefly
                target = self._conflict_target.get(bk)
                if target is not None:
                    if target in self.queue:
                        # the row whose conflict forced the close goes first,
                        # otherwise the capped streak would reopen and starve it
                        req = target
                    else:
                        del self._conflict_target[bk]
                retry = self.mitigation.act_safe(bk, req.address.row, now)
                if retry is not None:
                    self.stats["unsafe_skips"] += 1
                    continue
                cmd = DramCommand(ACT, now, bk, row=req.address.row,
                                  thread=req.thread_id)
                if earliest_issue(st, cmd, now, self.t, self.rank_state(bk[:2])) > now:
                    continue
                self._conflict_target.pop(bk, None)
                pairing = self.mitigation.pre_act_pairing(self, bk, req.address.row, now)
                if pairing is not None:
                    self.issue_group(pairing[0])
                else:
                    self._issue(cmd)
                self.mitigation.on_act(bk, req.address.row, req.thread_id, now)
                self.col_streak[bk] = 0
                self._open_reason[bk] = ("row_conflicts"
                                         if bk in self._conflict_pending
                                         else "row_misses")
                self._conflict_pending.discard(bk)
                return True
            if st.open_row != req.address.row:
                # conflict: close only when hits are drained or capped
                if self._has_hit(bk, st.open_row) \
                        and self.col_streak.get(bk, 0) < self.sched.column_cap:
                    continue
                if self._schedule_close(bk, now):
                    self._conflict_pending.add(bk)
                    self._conflict_target[bk] = req
                    return True
        return False

    # --- audits -------------------------------------------------------------

    def sorted_commands(self):
        return sorted(self.command_log, key=lambda c: c.time)

    def baseline_coverage_gaps(self, window_start, window_end):
        seen = {}
        for bk, row, t_ref in self.refresh_log:
            if window_start <= t_ref < window_end:
                seen.setdefault(bk, set()).add(row)
        gaps = []
        for ch in range(self.geom.channels):
            for rk in range(self.geom.ranks_per_channel):
                for bank in range(self.geom.banks_per_rank):
                    got = seen.get((ch, rk, bank), set())
                    gaps.extend(((ch, rk, bank), row)
                                for row in range(self.geom.rows_per_bank)
                                if row not in got)
        return gaps
