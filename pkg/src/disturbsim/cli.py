"""Command-line entry points.

Subcommands: run, sweep, para-solve, verify, svard-gen, gen-attack.
Exit code is 0 only when no invariant violation was detected.
"""

import argparse
import concurrent.futures
import copy
import json
import os
import sys

from .blockhammer import derive_config
from .dram import TimingParams
from .errors import DisturbSimError
from .para import DEFAULT_TARGET_PRH, ParaSolverInput, k_factor, p_rh, solve_pth
from .security import Feasible, feasibility_check
from .sim import SimConfig, run, violation_count
from .svard import generate_profile
from .workload import gen_attack, write_trace


def _load_config(path, seed=None, verify=None):
    with open(path) as fh:
        raw = json.load(fh)
    if seed is not None:
        raw.setdefault("sim", {})["seed"] = seed
    if verify:
        raw.setdefault("sim", {})["verify"] = True
    return raw


def cmd_run(args):
    raw = _load_config(args.config, args.seed, args.verify)
    report = run(SimConfig(raw), out_dir=args.out)
    print(json.dumps(report, indent=2, sort_keys=True))
    return violation_count(report)


def _merge(base, overrides):
    merged = copy.deepcopy(base)
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], val)
        else:
            merged[key] = val
    return merged


def _sweep_one(item):
    name, raw, out_dir = item
    report = run(SimConfig(raw), out_dir=out_dir)
    return name, report


def cmd_sweep(args):
    with open(args.config) as fh:
        spec = json.load(fh)
    base = spec["base"]
    if args.seed is not None:
        base.setdefault("sim", {})["seed"] = args.seed
    if args.verify:
        base.setdefault("sim", {})["verify"] = True
    jobs = []
    for point in spec["sweep"]:
        point = dict(point)
        name = point.pop("name")
        out_dir = os.path.join(args.out, name) if args.out else None
        jobs.append((name, _merge(base, point), out_dir))
    max_workers = int(os.environ.get("DISTURBSIM_THREADS", "0")) or None
    violations = 0
    results = []
    if max_workers == 1 or len(jobs) == 1:
        results = [_sweep_one(job) for job in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    results.sort(key=lambda r: r[0])
    for name, report in results:
        violations += violation_count(report)
        served = report["requests"]["served"]
        print(f"{name}: served={served} violations={violation_count(report)}")
    if args.out:
        with open(os.path.join(args.out, "sweep.csv"), "w") as fh:
            fh.write("name,served,acts,row_hits,violations\n")
            for name, report in results:
                fh.write("{},{},{},{},{}\n".format(
                    name, report["requests"]["served"],
                    report["commands"]["acts"], report["row_buffer"]["hits"],
                    violation_count(report)))
    return 1 if violations else 0


def cmd_para_solve(args):
    rows = ["n_rh,hc_deadline,p_th,p_rh,k"]
    for n_rh in args.n_rh:
        inp = ParaSolverInput(n_rh=n_rh, hc_deadline=args.hc_deadline,
                              target_prh=args.target)
        p_th = solve_pth(inp)
        rows.append("{},{},{:.9g},{:.6g},{:.6g}".format(
            n_rh, args.hc_deadline, p_th, p_rh(p_th, inp), k_factor(p_th, inp)))
    text = "\n".join(rows) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_verify(args):
    raw = _load_config(args.config, args.seed, verify=True)
    cfg = SimConfig(raw)
    verdicts = {}
    mit = raw.get("mitigation", {})
    if mit.get("mode") == "blockhammer":
        bh_cfg = derive_config(int(mit["n_rh"]), timings=cfg.timings)
        result = feasibility_check(bh_cfg, t_rc=cfg.timings.t_rc)
        verdicts["feasibility"] = {
            "verdict": "Feasible" if isinstance(result, Feasible) else "Infeasible",
            "detail": (list(result.witness) if isinstance(result, Feasible)
                       else result.best),
        }
    report = run(cfg, out_dir=args.out)
    verdicts["simulation"] = report.get("verify", {})
    verdicts["violations"] = violation_count(report)
    if verdicts.get("feasibility", {}).get("verdict") == "Feasible":
        verdicts["violations"] += 1
    print(json.dumps(verdicts, indent=2, sort_keys=True))
    return 1 if verdicts["violations"] else 0


def cmd_svard_gen(args):
    bins = []
    for part in args.bins.split(","):
        frac, hc = part.split(":")
        bins.append((float(frac), int(hc)))
    profile = generate_profile(bins, args.rows, args.seed)
    profile.save(args.out)
    print(f"wrote profile for {args.rows} rows, {len(profile.bin_hcfirst)} bins")
    return 0


def cmd_gen_attack(args):
    rows = [int(r, 0) for r in args.rows.split(",")]
    rate = args.rate_ps or TimingParams().t_rc
    records = gen_attack(args.kind, args.bank, rows, rate, args.seed,
                         count=args.count, burst=args.burst,
                         idle_ps=args.idle_ps)
    write_trace(args.out, records)
    print(f"wrote {len(records)} requests to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="disturbsim",
        description="Trace-driven DRAM read-disturbance mitigation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--verify", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a config sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--verify", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("para-solve", help="solve preventive-refresh thresholds")
    p.add_argument("--n-rh", dest="n_rh", type=int, nargs="+", required=True)
    p.add_argument("--hc-deadline", type=int, default=0)
    p.add_argument("--target", type=float, default=DEFAULT_TARGET_PRH)
    p.add_argument("--out")
    p.set_defaults(func=cmd_para_solve)

    p = sub.add_parser("verify", help="run with all verification oracles on")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("svard-gen", help="generate a vulnerability profile")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--bins", required=True,
                   help="comma list of fraction:hc_first, weakest first")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_svard_gen)

    p = sub.add_parser("gen-attack", help="generate an attack trace")
    p.add_argument("--kind", required=True,
                   choices=["DoubleSided", "ManySided", "BurstIdle"])
    p.add_argument("--rows", required=True, help="comma list of aggressor rows")
    p.add_argument("--bank", type=int, default=0)
    p.add_argument("--rate-ps", type=int)
    p.add_argument("--count", type=int, default=10000)
    p.add_argument("--burst", type=int)
    p.add_argument("--idle-ps", type=int)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_attack)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DisturbSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
