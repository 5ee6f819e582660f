"""Configuration, the simulation driver and statistics reporting.

A SimConfig is a JSON document; `run` builds the controller, wires the
selected mitigation into its hook surface, replays the workload and
returns a StatsReport. Everything stochastic draws from seeds derived
from the single master seed, so a fixed config reproduces byte-identical
output.
"""

import json
import os
import random

from .blockhammer import (FULL_FUNCTIONAL, OBSERVE_ONLY, BlockHammer,
                          derive_config)
from .dram import (ACT, SLOT_PS, BitFieldMap, DramCommand, Geometry, PRE,
                   TimingParams, TimingValidator, ceil_slot, decode_address,
                   earliest_issue)
from .errors import ConfigError
from .hira import HiraMc, HiraTimings, SubarrayPairsTable, build_spt
from .memctrl import (BaseMitigation, MemCtrl, MemoryRequest, SchedulerConfig)
from .para import DEFAULT_TARGET_PRH, ParaEngine, ParaSolverInput, solve_pth
from .security import WindowOracle
from .sketch import derive_seed
from .svard import SvardConfig, SvardPara, generate_profile, load_profile
from .workload import gen_attack, gen_uniform, parse_trace


# --- mitigation adapters --------------------------------------------------

class ParaMitigation(BaseMitigation):
    def __init__(self, engine: ParaEngine):
        self.engine = engine

    def on_close(self, ctrl, bank_key, row, now):
        victim = self.engine.on_close(row)
        if victim is None:
            return []
        start = ctrl.earliest_act_start(bank_key, now)
        return [[
            DramCommand(ACT, start, bank_key, row=victim, note="preventive"),
            DramCommand(PRE, start + ctrl.t.t_ras, bank_key),
        ]]


class BlockHammerMitigation(BaseMitigation):
    def __init__(self, engine: BlockHammer):
        self.engine = engine
        self.delay_histogram = {}  # blocked wait, bucketed in us

    def tick(self, ctrl, now):
        self.engine.tick_epoch(now)
        return []

    def admission_quota(self, thread, bank):
        return self.engine.quota(thread, bank)

    def act_safe(self, bank_key, row, now):
        verdict = self.engine.is_act_safe(bank_key[2], row, now)
        if verdict.ok:
            return None
        bucket = (verdict.retry_after - now) // 1_000_000
        self.delay_histogram[bucket] = self.delay_histogram.get(bucket, 0) + 1
        return verdict.retry_after

    def on_act(self, bank_key, row, thread, now):
        self.engine.on_act_issued(bank_key[2], row, thread, now)


class HiraMitigation(BaseMitigation):
    def __init__(self, engine: HiraMc, para_engine: ParaEngine = None):
        self.engine = engine
        self.para = para_engine

    def tick(self, ctrl, now):
        while self.engine.periodic_tick(now) is not None:
            pass
        horizon = 3 * ctrl.t.t_rc
        urgent = {e.bank for e in self.engine.table
                  if e.deadline < now + horizon}
        for bank in sorted(urgent):
            self._close_bank(ctrl, (0, 0, bank), now)
        hira_len = self.engine.hira.t1 + self.engine.hira.t2

        def bank_start(bank, n_acts):
            bk = (0, 0, bank)
            start = ctrl.earliest_act_start(bk, now)
            acts = ctrl.rank_state(bk[:2]).recent_act_times
            if n_acts == 2 and len(acts) >= 3:
                # leave tFAW room for the second (hidden) ACT
                start = max(start, acts[-3] + ctrl.t.t_faw - hira_len)
            return start

        self.engine.deadline_scan(
            now, bank_start=bank_start, horizon=horizon,
            emit=lambda group: ctrl.issue_group(group[0]))
        return []

    def _close_bank(self, ctrl, bank_key, now):
        st = ctrl.bank_state(bank_key)
        if st.open_row is None and not st.hira_pending_second:
            return
        probe = DramCommand(PRE, now, bank_key)
        pre_time = max(earliest_issue(st, probe, now, ctrl.t), ctrl.bus_free_at)
        closed = st.open_row
        ctrl.issue_group([DramCommand(PRE, pre_time, bank_key, note="pre-deadline")])
        ctrl._closed_row(bank_key, closed, pre_time)

    def on_close(self, ctrl, bank_key, row, now):
        if self.para is None:
            return []
        victim = self.para.on_close(row)
        if victim is None:
            return []
        forced = self.engine.preventive_enqueue(
            victim, bank_key[2], now,
            bank_start=lambda b: ctrl.earliest_act_start((0, 0, b), now))
        return [forced] if forced else []

    def act_safe(self, bank_key, row, now):
        # hold accesses off a bank whose refresh deadline is imminent so
        # the close + refresh sequence cannot overrun it
        t_rc = self.engine.t.t_rc
        for e in self.engine.table:
            if e.bank == bank_key[2] and e.deadline < now + 3 * t_rc:
                return e.deadline
        return None

    def pre_act_pairing(self, ctrl, bank_key, row, now):
        rank = ctrl.rank_state(bank_key[:2])
        # the triple adds two rank ACTs; skip pairing if tFAW is tight
        acts = rank.recent_act_times
        if len(acts) >= 3 and now < acts[-3] + ctrl.t.t_faw:
            return None
        refresh_row = self.engine.find_concurrent_on_pre(bank_key[2], row, now)
        if refresh_row is None:
            return None
        return self.engine.hira_issue(bank_key[2], refresh_row, access_row=row,
                                      now=now)


# --- configuration --------------------------------------------------------

def _build_geometry(block):
    return Geometry(**block) if block else Geometry()


def _build_timings(block):
    return TimingParams(**block) if block else TimingParams()


class SimConfig:
    def __init__(self, raw):
        if "sim" not in raw or "seed" not in raw["sim"]:
            raise ConfigError("config requires sim.seed")
        sim = raw["sim"]
        self.seed = int(sim["seed"])
        self.duration = int(sim.get("duration", 0))
        if self.duration <= 0:
            raise ConfigError("sim.duration must be positive")
        self.verify = bool(sim.get("verify", False))
        dram = raw.get("dram", {})
        self.geometry = _build_geometry(dram.get("geometry"))
        self.timings = _build_timings(dram.get("timings"))
        mapping = dram.get("mapping", "row_major")
        if mapping == "row_major":
            self.mapping = BitFieldMap.row_major(self.geometry)
        elif mapping == "mop":
            self.mapping = BitFieldMap.mop(self.geometry)
        else:
            raise ConfigError(f"unknown address mapping {mapping!r}")
        self.sched = SchedulerConfig(**raw.get("controller", {}))
        self.mitigation = raw.get("mitigation", {"mode": "none"})
        self.workload = raw.get("workload", {})
        self.output_dir = raw.get("output", {}).get("dir")
        self.raw = raw

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                return cls(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}")


def build_mitigation(cfg: SimConfig):
    """Returns (adapter, refresh_mode, engines dict)."""
    block = dict(cfg.mitigation)
    mode = block.pop("mode", "none")
    geom, t = cfg.geometry, cfg.timings
    engines = {}
    if mode == "none":
        return BaseMitigation(), "baseline", engines
    if mode == "para":
        if "p_th" in block:
            p_th = float(block["p_th"])
        else:
            p_th = solve_pth(ParaSolverInput(
                n_rh=int(block["n_rh"]), t_refw=t.t_refw, t_rc=t.t_rc,
                hc_deadline=int(block.get("hc_deadline", 0)),
                target_prh=float(block.get("target_prh", DEFAULT_TARGET_PRH))))
        rng = random.Random(derive_seed(cfg.seed, "para"))
        engine = ParaEngine(p_th, geom.rows_per_bank, rng)
        engines["para"] = engine
        return ParaMitigation(engine), "baseline", engines
    if mode == "svard":
        prof_block = block["profile"]
        if isinstance(prof_block, str):
            profile = load_profile(prof_block, rows=geom.rows_per_bank)
        else:
            profile = generate_profile(
                [(float(f), int(hc)) for f, hc in prof_block["bins"]],
                geom.rows_per_bank, derive_seed(cfg.seed, "profile"))
        svard_cfg = SvardConfig(enabled=bool(block.get("enabled", True)),
                                lookup_scope=block.get("scope", "BlastRadiusMin"))
        rng = random.Random(derive_seed(cfg.seed, "para"))
        engine = SvardPara(profile, geom.rows_per_bank, rng, config=svard_cfg,
                           t_refw=t.t_refw, t_rc=t.t_rc,
                           hc_deadline=int(block.get("hc_deadline", 0)))
        engines["svard"] = engine
        return ParaMitigation(engine), "baseline", engines
    if mode == "blockhammer":
        bh_cfg = derive_config(int(block["n_rh"]), timings=t,
                               mode=(OBSERVE_ONLY if block.get("observe")
                                     else FULL_FUNCTIONAL),
                               quota_max=int(block.get("quota_max", 16)))
        engine = BlockHammer(bh_cfg, geom.banks_per_rank, geom.rows_per_bank,
                             derive_seed(cfg.seed, "blockhammer"))
        engines["blockhammer"] = engine
        return BlockHammerMitigation(engine), "baseline", engines
    if mode == "hira":
        hira_t = HiraTimings(t1=int(block.get("t1_ps", 3000)),
                             t2=int(block.get("t2_ps", 3000)))
        slack_mult = int(block.get("t_refslack_rc_multiples", 4))
        spt_block = block.get("spt", {"coverage": 0.32})
        if "file" in spt_block:
            with open(spt_block["file"]) as fh:
                data = json.load(fh)
            spt = SubarrayPairsTable(geom.subarrays_per_bank,
                                     [tuple(p) for p in data["pairs"]])
        else:
            spt = build_spt(geom.subarrays_per_bank,
                            float(spt_block.get("coverage", 0.32)),
                            derive_seed(cfg.seed, "spt"))
        engine = HiraMc(geom, t, hira_t, spt, slack_mult * t.t_rc)
        engines["hira"] = engine
        para_engine = None
        prev = block.get("preventive", {})
        if prev.get("enabled"):
            p_th = solve_pth(ParaSolverInput(
                n_rh=int(prev["n_rh"]), t_refw=t.t_refw, t_rc=t.t_rc,
                hc_deadline=slack_mult))
            para_engine = ParaEngine(p_th, geom.rows_per_bank,
                                     random.Random(derive_seed(cfg.seed, "para")))
            engines["para"] = para_engine
        return HiraMitigation(engine, para_engine), "hira", engines
    raise ConfigError(f"unknown mitigation mode {mode!r}")


def build_requests(cfg: SimConfig):
    """Materialize the workload as a time-sorted request record list."""
    wl = cfg.workload
    records = []
    for path in wl.get("traces", []):
        records.extend(parse_trace(path))
    for gen in wl.get("generators", []):
        gen = dict(gen)
        kind = gen.pop("kind")
        seed = derive_seed(cfg.seed, f"wl/{gen.pop('label', kind)}")
        if kind == "uniform":
            records.extend(gen_uniform(cfg.geometry, cfg.mapping, seed=seed, **gen))
        else:
            records.extend(gen_attack(kind, seed=seed, geometry=cfg.geometry,
                                      mapping=cfg.mapping, **gen))
    records.sort(key=lambda r: (r[0], r[1]))
    return records


# --- driver ---------------------------------------------------------------

class Simulator:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.mitigation, refresh_mode, self.engines = build_mitigation(cfg)
        self.ctrl = MemCtrl(cfg.geometry, cfg.timings, cfg.sched,
                            self.mitigation, refresh_mode=refresh_mode)
        self.records = build_requests(cfg)
        self.oracle = WindowOracle(cfg.timings.t_refw) if cfg.verify else None
        self.rejected_final = 0

    def run(self):
        ctrl = self.ctrl
        duration = self.cfg.duration
        pending = None
        idx = 0
        now = 0
        while now < duration:
            while pending is not None or idx < len(self.records):
                if pending is None:
                    rec = self.records[idx]
                    if rec[0] > now:
                        break
                    idx += 1
                    arrival, thread, kind, addr = rec
                    pending = MemoryRequest(
                        arrival=arrival, thread_id=thread, kind=kind,
                        address=decode_address(addr, self.cfg.geometry,
                                               self.cfg.mapping))
                if not ctrl.enqueue(pending):
                    break  # head-of-line blocked; retried next slot
                pending = None
            before = len(ctrl.command_log)
            ctrl.step(now)
            idle = len(ctrl.command_log) == before
            if idle and not ctrl.queue and pending is None:
                now = self._next_event(now, idx)
            elif idle:
                now = max(now + SLOT_PS, ceil_slot(ctrl.bus_free_at))
            else:
                now += SLOT_PS
        self.rejected_final = (1 if pending is not None else 0) \
            + (len(self.records) - idx)
        if self.oracle is not None:
            # sorted so per-row record times are monotone
            for cmd in ctrl.sorted_commands():
                if cmd.kind == ACT:
                    self.oracle.record((cmd.bank_key, cmd.row), cmd.time)
        return self.report()

    def _next_event(self, now, idx):
        candidates = [now + self.cfg.timings.t_refi]
        if idx < len(self.records):
            candidates.append(self.records[idx][0])
        candidates.extend(self.ctrl.next_ref.values())
        hira = self.engines.get("hira")
        if hira is not None:
            candidates.append(min(hira.next_periodic.values()))
            if hira.table:
                candidates.append(min(e.deadline for e in hira.table)
                                  - 3 * self.cfg.timings.t_rc + SLOT_PS)
        nxt = min(c for c in candidates if c > now)
        return max(now + SLOT_PS, ceil_slot(nxt))

    def report(self):
        ctrl = self.ctrl
        stats = dict(ctrl.stats)
        per_thread = {}
        for req in ctrl.completed:
            lat = req.completion - req.arrival
            per_thread.setdefault(req.thread_id, []).append(lat)
        threads = {}
        for thread, lats in sorted(per_thread.items()):
            lats.sort()
            threads[str(thread)] = {
                "served": len(lats),
                "latency_p50_ps": _pct(lats, 0.50),
                "latency_p95_ps": _pct(lats, 0.95),
                "latency_p99_ps": _pct(lats, 0.99),
                "latency_max_ps": lats[-1],
            }
        report = {
            "requests": {
                "offered": len(self.records),
                "served": stats["served"],
                "in_flight_at_end": len(ctrl.queue),
                "rejected_final": self.rejected_final,
                "rejected_quota": stats["rejected_quota"],
                "rejected_full": stats["rejected_full"],
            },
            "threads": threads,
            "row_buffer": {
                "hits": stats["row_hits"],
                "misses": stats["row_misses"],
                "conflicts": stats["row_conflicts"],
            },
            "commands": {k: stats[k] for k in
                         ("acts", "pres", "refs", "reads", "writes")},
            "unsafe_skips": stats["unsafe_skips"],
        }
        bh = self.engines.get("blockhammer")
        if bh is not None:
            report["blockhammer"] = {
                "blocked_acts": bh.blocked_acts,
                "rhli": bh.rhli_report(),
                "history_max_occupancy": bh.history.max_occupancy,
                "delay_histogram_us": {
                    str(k): v for k, v in
                    sorted(self.mitigation.delay_histogram.items())},
            }
        para = self.engines.get("para") or self.engines.get("svard")
        if para is not None:
            report["preventive_refreshes"] = para.preventive_count
        hira = self.engines.get("hira")
        if hira is not None:
            report["hira"] = dict(hira.stats)
            report["hira"]["deadline_violations"] = len(hira.audit_deadlines())
            report["hira"]["pr_fifo_max"] = max(
                f.max_occupancy for f in hira.pr_fifo.values())
        if self.oracle is not None:
            worst_count, worst_row = self.oracle.worst_row()
            report["verify"] = self._verify(worst_count, worst_row)
        return report

    def _verify(self, worst_count, worst_row):
        hira_t = None
        if "hira" in self.engines:
            hira_t = self.engines["hira"].hira
        validator = TimingValidator(
            self.cfg.timings,
            hira_t.t1 if hira_t else None,
            hira_t.t2 if hira_t else None)
        violations = validator.check(self.ctrl.sorted_commands())
        block = {
            "max_row_window_acts": worst_count,
            "max_row_window_key": repr(worst_row),
            "timing_violations": violations[:20],
            "timing_violation_count": len(violations),
        }
        hira = self.engines.get("hira")
        if hira is not None:
            block["refresh_deadline_violations"] = len(hira.audit_deadlines())
        return block


def _pct(sorted_vals, frac):
    if not sorted_vals:
        return 0
    i = min(len(sorted_vals) - 1, int(frac * len(sorted_vals)))
    return sorted_vals[i]


def violation_count(report):
    v = report.get("verify", {})
    return (v.get("timing_violation_count", 0)
            + v.get("refresh_deadline_violations", 0))


def run(config, out_dir=None):
    """Run one simulation; write stats JSON and CSV series if out_dir given."""
    cfg = config if isinstance(config, SimConfig) else SimConfig(config)
    sim = Simulator(cfg)
    report = sim.run()
    out_dir = out_dir or cfg.output_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "stats.json"), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "latency.csv"), "w") as fh:
            fh.write("thread,metric,value_ps\n")
            for thread, block in sorted(report["threads"].items()):
                for metric in ("latency_p50_ps", "latency_p95_ps",
                               "latency_p99_ps", "latency_max_ps"):
                    fh.write(f"{thread},{metric},{block[metric]}\n")
    return report
