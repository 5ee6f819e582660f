"""Safety verification: epoch-constraint feasibility, an exact sliding
window oracle, and an adversarial access-pattern harness.

The feasibility checker enumerates every way an attacker could spread row
activations over blacklist epochs; `Infeasible` is an exhaustive-search
proof within the discretized model. The window oracle recomputes per-row
activation maxima from raw timestamps, independent of any engine state.
"""

import math
import random
from dataclasses import dataclass

from .blockhammer import BlockHammer, BlockHammerConfig
from .sketch import derive_seed

# epoch types: 0..4. A fresh/lightly-used epoch (0..2) can only follow
# 0, 1 or 3; a carried-over blacklist epoch (3, 4) can only follow 2 or 4.


@dataclass(frozen=True)
class Feasible:
    witness: tuple  # n_0..n_4
    activations: float


@dataclass(frozen=True)
class Infeasible:
    best: float  # highest activation count any admissible mix reaches


class EpochModel:
    """Per-epoch-type activation bounds for a blacklisting configuration."""

    def __init__(self, cfg: BlockHammerConfig, t_rc=46_250):
        self.cfg = cfg
        self.t_rc = t_rc
        self.t_ep = cfg.epoch_len

    def n_ep_max(self, epoch_type, n_bl_star):
        cfg = self.cfg
        if epoch_type == 0:
            return n_bl_star - 1
        if epoch_type in (1, 3):
            return cfg.n_bl - 1
        ratio = self.t_ep / cfg.t_delay
        if epoch_type == 2:
            return math.floor(ratio - (1 - self.t_rc / cfg.t_delay) * n_bl_star)
        if epoch_type == 4:
            return math.floor(ratio)
        raise ValueError(epoch_type)

    def max_over_blstar(self, epoch_type):
        """Adversarial max over the carried-count variable (linear, so the
        extreme sits at an endpoint)."""
        return max(self.n_ep_max(epoch_type, 1),
                   self.n_ep_max(epoch_type, self.cfg.n_bl))


def feasibility_check(cfg: BlockHammerConfig, t_rc=46_250, t_refw=None):
    """Exhaustively search epoch mixes for one that exceeds the safe
    activation budget inside one refresh window.

    The predecessor constraints get +1 slack each so the initial epoch of
    a window is always admissible (a strictly more permissive check).
    """
    t_refw = t_refw or cfg.t_refw
    t_ep = cfg.epoch_len
    budget = cfg.n_rh_star
    max_epochs = t_refw // t_ep

    def t2_bound(n_bl_star):
        ratio = t_ep / cfg.t_delay
        return math.floor(ratio - (1 - t_rc / cfg.t_delay) * n_bl_star)

    bounds = [
        max(cfg.n_bl - 1, 0),                       # T0 at carried count 0
        cfg.n_bl - 1,                               # T1
        max(t2_bound(1), t2_bound(cfg.n_bl)),       # T2, adversarial carried count
        cfg.n_bl - 1,                               # T3
        math.floor(t_ep / cfg.t_delay),             # T4
    ]
    best = 0.0
    for total in range(int(max_epochs) + 1):
        for n0 in range(total + 1):
            for n1 in range(total - n0 + 1):
                for n2 in range(total - n0 - n1 + 1):
                    for n3 in range(total - n0 - n1 - n2 + 1):
                        n4 = total - n0 - n1 - n2 - n3
                        # predecessor counts, +1 slack for the initial epoch
                        if n0 + n1 + n2 > n0 + n1 + n3 + 1:
                            continue
                        if n3 + n4 > n2 + n4 + 1:
                            continue
                        count = (n0 * bounds[0] + n1 * bounds[1] + n2 * bounds[2]
                                 + n3 * bounds[3] + n4 * bounds[4])
                        best = max(best, count)
                        if count >= budget:
                            return Feasible(witness=(n0, n1, n2, n3, n4),
                                            activations=count)
    return Infeasible(best=best)


class WindowOracle:
    """Exact per-row maximum activation count over any sliding window."""

    def __init__(self, window):
        self.window = window
        self.acts = {}

    def record(self, row_uid, now):
        times = self.acts.setdefault(row_uid, [])
        if times and now < times[-1]:
            raise ValueError("activation times must be non-decreasing per row")
        times.append(now)

    def max_window_count(self, row_uid):
        times = self.acts.get(row_uid, [])
        best = 0
        lo = 0
        for hi, t in enumerate(times):
            while times[lo] <= t - self.window:
                lo += 1
            best = max(best, hi - lo + 1)
        return best

    def worst_row(self):
        best = (0, None)
        for uid in self.acts:
            c = self.max_window_count(uid)
            if c > best[0]:
                best = (c, uid)
        return best

    def naive_max(self, row_uid):
        """O(n^2) recount used to cross-check the two-pointer scan."""
        times = self.acts.get(row_uid, [])
        best = 0
        for i, t0 in enumerate(times):
            best = max(best, sum(1 for t in times if t0 <= t < t0 + self.window))
        return best


# --- adversarial pattern harness -----------------------------------------

FAMILIES = ("single", "double_sided", "many_sided", "burst_idle", "alias_probe")


def _alias_rows(engine: BlockHammer, bank, target, rng, want=8, scan=4096):
    """Rows sharing at least one counter with the target in both filters."""
    dcbf = engine.dcbf[bank]
    t_idx = [set(f.indexes(target)) for f in dcbf.filters]
    found = []
    for _ in range(scan):
        row = rng.randrange(engine.rows_per_bank)
        if row == target:
            continue
        if all(set(f.indexes(row)) & t_idx[i] for i, f in enumerate(dcbf.filters)):
            found.append(row)
            if len(found) >= want:
                break
    return found


def _family_rows(family, engine, rng):
    rows = engine.rows_per_bank
    base = rng.randrange(rows // 2)
    if family == "single":
        return [base]
    if family == "double_sided":
        return [base, base + 2]
    if family == "many_sided":
        return [base + 2 * k for k in range(8)]
    if family in ("burst_idle", "alias_probe"):
        return [base]
    raise ValueError(family)


def adversarial_search(engine: BlockHammer, timings, duration, families=FAMILIES,
                       seeds=range(10), bank=0, engine_factory=None):
    """Drive attack families through a live engine; report the worst
    oracle-measured per-row sliding-window activation count.

    `engine_factory` rebuilds a fresh engine per (family, seed) run; when
    omitted the given engine instance is reused (its state carries over).
    """
    worst = 0
    results = {}
    for family in families:
        for seed in seeds:
            eng = engine_factory(seed) if engine_factory else engine
            count = _run_family(eng, timings, duration, family, seed, bank)
            results[f"{family}/{seed}"] = count
            worst = max(worst, count)
    return worst, results


def _run_family(engine, t, duration, family, seed, bank):
    rng = random.Random(derive_seed(seed, f"adv/{family}"))
    oracle = WindowOracle(engine.cfg.t_refw)
    rows = _family_rows(family, engine, rng)
    aliases = []
    now = 0
    thread = 0
    idx = 0
    burst_left = engine.cfg.n_bl  # for burst_idle
    while now < duration:
        engine.tick_epoch(now)
        if family == "alias_probe" and not aliases:
            aliases = _alias_rows(engine, bank, rows[0], rng) or [rows[0] + 1]
        candidates = rows if family != "alias_probe" else (aliases + rows)
        issued = False
        earliest_retry = None
        for k in range(len(candidates)):
            row = candidates[(idx + k) % len(candidates)]
            verdict = engine.is_act_safe(bank, row, now)
            if verdict.ok:
                engine.on_act_issued(bank, row, thread, now)
                oracle.record(row, now)
                idx = (idx + k + 1) % len(candidates)
                issued = True
                break
            if earliest_retry is None or verdict.retry_after < earliest_retry:
                earliest_retry = verdict.retry_after
        if issued:
            now += t.t_rc
            if family == "burst_idle":
                burst_left -= 1
                if burst_left <= 0:
                    # idle to just before the next filter clear, then burst again
                    now = max(now, engine.next_epoch_boundary()
                              - engine.cfg.n_bl * t.t_rc)
                    burst_left = engine.cfg.n_bl
        else:
            now = max(now + t.t_rc, earliest_retry or now + t.t_rc)
    return max((oracle.max_window_count(r) for r in oracle.acts), default=0)
