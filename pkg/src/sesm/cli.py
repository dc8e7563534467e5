"""Command-line pipeline: compile, run, attack, and reproduction sweeps.

Exit codes: 0 success, 2 compile/validation failure, 3 runtime security
assertion or deadlock, 4 I/O failure.  The SESAME_LOG environment variable
selects the engine event-log level (admin | debug).  Every command is
deterministic for a fixed --seed: reruns produce byte-identical binaries,
traces, and reports.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import attack as atk
from . import isa
from .compiler import (
    CompileError,
    DramLayout,
    ResourceBOM,
    TileConfig,
    Tuner,
    compile_model,
    generate_dram_data,
    platform_capacity,
)
from .engine import AcceleratorConfig, Deadlock, Engine, EngineError, SecurityAssertion
from .memsys import Cipher
from .workload import (
    CATALOG_NAMES,
    LayerKind,
    PragmaSet,
    Sharing,
    ThreatModel,
    WorkloadError,
    load_model,
)

EXIT_OK = 0
EXIT_COMPILE = 2
EXIT_SECURITY = 3
EXIT_IO = 4

THREATS = ("pp", "sp", "ps", "ss")


def _dump_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _layer_labels(model) -> list[str]:
    return [atk.layer_type_bin(layer.kind.value, layer.out_channels)
            for layer in model.layers]


# ---------------------------------------------------------------------------
# compile


def _config_payload(prog, scale: int, cipher: str) -> dict:
    bom = prog.bom
    return {
        "model": prog.model.name.split("@")[0],
        "scale": scale,
        "threat": prog.threat.code,
        "mode": prog.threat.sharing.value,
        "cipher": cipher,
        "tenant_id": prog.tenant_id,
        "bom": {
            "bandwidth": bom.bandwidth,
            "spad": {k.name: v for k, v in sorted(bom.region_aligned().items())},
            "queue_depth": bom.queue_depth,
            "exec_tiles": bom.exec_tiles,
            "exec_mode": bom.exec_mode.value,
        },
        "dram_window": list(prog.layout.window),
        "layout": {
            "input_addr": prog.layout.input_addr,
            "weight_addr": {str(k): v for k, v in sorted(prog.layout.weight_addr.items())},
            "fm_addr": list(prog.layout.fm_addr),
            "fm_bytes": prog.layout.fm_bytes,
            "tiles": {str(i): [c.tm, c.tk, c.tn] for i, c in sorted(prog.tiles.items())},
        },
        "layer_of_instr": list(prog.layer_of_instr),
        "layer_labels": _layer_labels(prog.model),
        "boundary_counts": list(prog.model.boundary_counts),
        "stats": prog.stats,
    }


def _compile_one(model_name: str, scale: int, threat_code: str, mode: str,
                 bandwidth: int | None, tenant_id: int, dram_base: int,
                 naive_zeroize: bool, tuner: Tuner):
    sharing = Sharing(mode)
    model = load_model(model_name, scale=scale)
    threat = ThreatModel.from_code(threat_code, sharing)
    cap = platform_capacity(sharing)
    pragmas = PragmaSet.from_threat(threat, queue_depth=cap.queue_depth,
                                    bandwidth=bandwidth or cap.bandwidth)
    return compile_model(model, threat, pragmas=pragmas, dram_base=dram_base,
                         tenant_id=tenant_id, naive_zeroize=naive_zeroize, tuner=tuner)


def cmd_compile(args) -> int:
    try:
        tuner = Tuner(sim_finalists=args.tune_sims)
        prog = _compile_one(args.model, args.scale, args.threat, args.mode,
                            args.bandwidth, args.tenant, args.dram_base,
                            args.naive_zeroize, tuner)
    except (CompileError, WorkloadError) as exc:
        print(f"compile error: {exc}", file=sys.stderr)
        return EXIT_COMPILE
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        prog.write(out)
        _dump_json(str(out) + ".json", _config_payload(prog, args.scale, args.cipher))
        if args.report:
            _dump_json(args.report, {
                "model": args.model, "threat": args.threat, "mode": args.mode,
                "mix": prog.stats["mix"],
                "instructions": prog.stats["instructions"],
                "size_bytes": prog.stats["size_bytes"],
            })
        if args.zeroize_report:
            naive = _compile_one(args.model, args.scale, args.threat, args.mode,
                                 args.bandwidth, args.tenant, args.dram_base,
                                 True, tuner)
            opt_stats = {"instructions": prog.stats["zeroize_instructions"],
                         "bytes": prog.stats["zeroized_bytes"]}
            nai_stats = {"instructions": naive.stats["zeroize_instructions"],
                         "bytes": naive.stats["zeroized_bytes"]}
            _dump_json(args.zeroize_report, {
                "model": args.model, "threat": args.threat,
                "optimized": opt_stats, "naive": nai_stats,
                "reduction": {
                    "instructions": _reduction(opt_stats, nai_stats, "instructions"),
                    "bytes": _reduction(opt_stats, nai_stats, "bytes"),
                },
            })
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _reduction(opt: dict, naive: dict, key: str):
    if naive[key] == 0:
        return None
    return 1.0 - opt[key] / naive[key]


# ---------------------------------------------------------------------------
# run


def _layout_from_json(blob: dict) -> DramLayout:
    tiles = {int(i): TileConfig(*vals) for i, vals in blob["layout"]["tiles"].items()}
    return DramLayout(
        window=tuple(blob["dram_window"]),
        input_addr=blob["layout"]["input_addr"],
        weight_addr={int(k): v for k, v in blob["layout"]["weight_addr"].items()},
        fm_addr=tuple(blob["layout"]["fm_addr"]),
        fm_bytes=blob["layout"]["fm_bytes"],
        tiles=tiles,
    )


def _grant_from_json(blob: dict) -> isa.TenantGrant:
    bom = blob["bom"]
    return isa.TenantGrant(
        tenant_id=blob["tenant_id"],
        spad_quota={isa.SpadKind[k]: v for k, v in bom["spad"].items()},
        queue_depth=bom["queue_depth"],
        exec_tiles=bom["exec_tiles"],
        bandwidth=bom["bandwidth"],
        dram_window=tuple(blob["dram_window"]),
    )


def run_programs(program_paths, out_dir, seed=0, cipher=None, checked=False,
                 log_level=None, cycle_limit=None, lease_factor=1.0):
    """Admit every binary, run to completion, tear down, export traces.

    `lease_factor` > 1 holds the lease open after completion; shaped tenants
    keep emitting fake traffic until teardown, so the trace reveals only the
    leased duration.  Returns (exit_code, cycles_payload)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_level = log_level or os.environ.get("SESAME_LOG", "admin")
    engine = Engine(AcceleratorConfig(checked=checked, log_level=log_level))
    spec = []
    for path in program_paths:
        instrs, tenant_id = isa.read_program(path)
        with open(str(path) + ".json") as fh:
            blob = json.load(fh)
        model = load_model(blob["model"], scale=blob["scale"])
        layout = _layout_from_json(blob)
        grant = _grant_from_json(blob)
        run_cipher = Cipher(cipher or blob.get("cipher", "qarma128"))
        data = generate_dram_data(model, layout, seed=seed, tenant=tenant_id)
        engine.admit(instrs, grant, data, blob["layer_of_instr"], run_cipher)
        spec.append((tenant_id, model, blob))

    results = engine.run(cycle_limit=cycle_limit)
    if lease_factor > 1.0:
        engine.idle_until(int(engine.cycle * lease_factor))
    for tenant_id, _model, _blob in spec:
        engine.teardown(tenant_id)

    trace = atk.trace_from_recorder(engine.trace, {"seed": seed})
    atk.write_attacker_csv(out / "attacker.csv", trace)
    for tenant_id, model, blob in spec:
        atk.write_privileged_csv(out / f"privileged.t{tenant_id}.csv",
                                 engine.trace, tenant_id, _layer_labels(model),
                                 countable=model.boundary_relevant)
    payload = {
        "tenants": {
            str(tid): {
                "cycles": res.cycles,
                "start_cycle": res.start_cycle,
                "end_cycle": res.end_cycle,
                "finished": res.finished,
                "traps": len(res.traps),
                "dynamic_zeroize": res.dynamic_zeroize,
                "zeroized_bytes": res.zeroized_bytes,
                "violations": len(res.violations),
            }
            for tid, res in sorted(results.items())
        },
    }
    if log_level == "debug":
        with open(out / "events.ndjson", "w") as fh:
            for entry in engine.event_log:
                fh.write(json.dumps(entry, sort_keys=True, default=str) + "\n")
    return EXIT_OK, payload


def cmd_run(args) -> int:
    try:
        code, payload = run_programs(args.programs, args.out, seed=args.seed,
                                     cipher=args.cipher, checked=args.checked,
                                     log_level=args.log_level,
                                     lease_factor=args.lease_factor)
    except (SecurityAssertion, Deadlock) as exc:
        print(f"security/runtime assertion: {exc}", file=sys.stderr)
        return EXIT_SECURITY
    except (CompileError, isa.IsaError, EngineError) as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_COMPILE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.baseline:
        try:
            with open(args.baseline) as fh:
                base = json.load(fh)
            ours = sum(t["cycles"] for t in payload["tenants"].values())
            theirs = sum(t["cycles"] for t in base["tenants"].values())
            payload["overhead_vs_baseline"] = ours / theirs - 1.0 if theirs else None
        except OSError as exc:
            print(f"io error: {exc}", file=sys.stderr)
            return EXIT_IO
    _dump_json(Path(args.out) / "cycles.json", payload)
    trapped = any(t["traps"] for t in payload["tenants"].values())
    if args.strict and trapped:
        print("traps recorded during run (strict mode)", file=sys.stderr)
        return EXIT_SECURITY
    return EXIT_OK


# ---------------------------------------------------------------------------
# attack


def attack_report(trace_path, truth_path, mode: str, profiles=None,
                  threshold: float = 0.15, span: int = 16, tolerance: int = 2,
                  sweep=None) -> dict:
    trace = atk.read_attacker_csv(trace_path)
    truth_all, truth_countable = atk.read_truth_boundaries(truth_path)
    report: dict = {"mode": mode, "truth_boundaries": len(truth_countable)}
    if mode == "unshaped":
        cands = atk.detect_raw_candidates(trace)
        windows = [c.window for c in cands]
        report["all"] = atk.evaluate_vs_table(windows, truth_all, truth_countable,
                                              tolerance).as_dict()
        easy = atk.filter_candidates(trace, cands, threshold, span)
        report["easy"] = atk.evaluate_vs_table([c.window for c in easy], truth_all,
                                               truth_countable, tolerance).as_dict()
        report["candidate_inflation"] = (
            len(windows) / len(truth_countable)) if truth_countable else None
        if sweep:
            report["threshold_sweep"] = []
            for th in sweep:
                kept = atk.filter_candidates(trace, cands, th, span)
                ev = atk.evaluate_vs_table([c.window for c in kept], truth_all,
                                           truth_countable, tolerance)
                report["threshold_sweep"].append(
                    {"threshold": th, "precision": ev.precision, "recall": ev.recall})
    else:
        raw = atk.detect_raw_candidates(trace)
        report["raw_candidates_on_shaped"] = len(raw)
        durations = atk.load_timing_profiles(profiles) if profiles else []
        cands, expansions = atk.enumerate_timing_candidates(trace, durations, tolerance)
        windows = [c.window for c in cands]
        ev = atk.evaluate_vs_table(windows, truth_all, truth_countable, tolerance)
        ev.enumeration_expansions = expansions
        report["all"] = ev.as_dict()
        report["easy"] = ev.as_dict()
        report["candidate_inflation"] = (
            len(windows) / len(truth_countable)) if truth_countable else None
    return report


def cmd_attack(args) -> int:
    sweep = [round(0.05 * i, 2) for i in range(0, 21)] if args.threshold_sweep else None
    try:
        report = attack_report(args.trace, args.truth, args.mode, args.profiles,
                               args.threshold, args.span, args.tolerance, sweep)
        _dump_json(args.report, report)
        if args.features:
            trace = atk.read_attacker_csv(args.trace)
            segments = atk.read_segments(args.truth)
            name = args.model_name or Path(args.trace).parent.name
            atk.export_features(args.features, trace, segments, name,
                                shaped=args.mode == "shaped")
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO

    models = args.models.split(",")
    threats = args.threats.split(",")
    modes = args.modes.split(",")
    ciphers = args.ciphers.split(",")
    manifest = {"models": models, "threats": threats, "modes": modes,
                "ciphers": ciphers, "scale": args.scale, "seed": args.seed,
                "runs": [], "failures": []}
    tuner = Tuner(sim_finalists=args.tune_sims)
    overhead: dict = {}
    mixes: dict = {}
    zeroize: dict = {}
    table2: dict = {}
    profile_durations: set[int] = set()

    # pass 1: compile and run the whole grid
    for mode in modes:
        for model_name in models:
            baseline_cycles = None
            for threat in threats:
                for cipher in ciphers:
                    if threat == "pp" and cipher != ciphers[0]:
                        continue  # no encrypted traffic: cipher is irrelevant
                    tag = f"{model_name}-{threat}-{mode}-{cipher}"
                    rdir = out / "runs" / tag
                    rdir.mkdir(parents=True, exist_ok=True)
                    try:
                        prog = _compile_one(model_name, args.scale, threat, mode,
                                            None, 0, 16 * 1024 * 1024, False, tuner)
                        prog.write(rdir / "prog.bin")
                        _dump_json(str(rdir / "prog.bin") + ".json",
                                   _config_payload(prog, args.scale, cipher))
                        lease = args.lease_factor if threat in ("ps", "ss") else 1.0
                        _, payload = run_programs([rdir / "prog.bin"], rdir,
                                                  seed=args.seed, cipher=cipher,
                                                  lease_factor=lease)
                        _dump_json(rdir / "cycles.json", payload)
                    except (CompileError, EngineError, isa.IsaError) as exc:
                        manifest["failures"].append({"run": tag, "error": str(exc)})
                        continue
                    manifest["runs"].append(tag)
                    cycles = payload["tenants"]["0"]["cycles"]
                    key = f"{model_name}/{mode}"
                    entry = overhead.setdefault(key, {"baseline_cycles": None, "overhead": {}})
                    if threat == "pp":
                        baseline_cycles = cycles
                        entry["baseline_cycles"] = cycles
                    else:
                        entry["overhead"][f"{threat}-{cipher}"] = (
                            cycles / baseline_cycles - 1.0 if baseline_cycles else None)
                    mixes.setdefault(key, {})[threat] = prog.stats["mix"]
                    if threat in ("sp", "ps", "ss") and cipher == ciphers[0]:
                        naive = _compile_one(model_name, args.scale, threat, mode,
                                             None, 0, 16 * 1024 * 1024, True, tuner)
                        zeroize.setdefault(key, {})[threat] = {
                            "optimized": {"instructions": prog.stats["zeroize_instructions"],
                                          "bytes": prog.stats["zeroized_bytes"],
                                          "dynamic_instructions":
                                              payload["tenants"]["0"]["dynamic_zeroize"]},
                            "naive": {"instructions": naive.stats["zeroize_instructions"],
                                      "bytes": naive.stats["zeroized_bytes"]},
                        }
                    if mode == "temporal" and threat == "ss" and cipher == ciphers[0]:
                        # the attacker's offline corpus: per-layer-config
                        # durations under the published shaper rate
                        profile_durations.update(
                            _layer_durations(rdir / "privileged.t0.csv"))

    # pass 2: boundary-detection study over the pooled profile corpus
    profiles = _write_profiles(out, sorted(profile_durations))
    cipher0 = ciphers[0]
    if "temporal" in modes:
        for model_name in models:
            for threat, study in (("pp", "unshaped"), ("ss", "shaped")):
                tag = f"{model_name}-{threat}-temporal-{cipher0}"
                rdir = out / "runs" / tag
                if tag not in manifest["runs"]:
                    continue
                report = attack_report(
                    rdir / "attacker.csv", rdir / "privileged.t0.csv", study,
                    profiles=profiles if study == "shaped" else None,
                    threshold=args.threshold)
                table2.setdefault(model_name, {})[study] = report

    try:
        _dump_json(out / "overhead.json", overhead)
        _dump_json(out / "mix.json", mixes)
        _dump_json(out / "zeroize.json", zeroize)
        _dump_json(out / "table2.json", table2)
        _dump_json(out / "manifest.json", manifest)
        _write_csv_summaries(out, overhead, mixes)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _layer_durations(priv_path) -> list[int]:
    wins, _countable = atk.read_truth_boundaries(priv_path)
    durations = []
    prev = 0
    for w in wins:
        durations.append(max(1, w - prev))
        prev = w
    return durations


def _write_profiles(out: Path, durations: list[int]):
    path = out / "timing_profiles.json"
    _dump_json(path, {"durations_windows": durations})
    return path


def _write_csv_summaries(out: Path, overhead: dict, mixes: dict) -> None:
    with open(out / "overhead.csv", "w") as fh:
        fh.write("model_mode,config,overhead\n")
        for key in sorted(overhead):
            for config in sorted(overhead[key]["overhead"]):
                val = overhead[key]["overhead"][config]
                fh.write(f"{key},{config},{'' if val is None else f'{val:.6f}'}\n")
    with open(out / "mix.csv", "w") as fh:
        fh.write("model_mode,threat,instruction,count\n")
        for key in sorted(mixes):
            for threat in sorted(mixes[key]):
                for instr, count in sorted(mixes[key][threat].items()):
                    fh.write(f"{key},{threat},{instr},{count}\n")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sesm",
        description="Secure-accelerator simulator: compile, run, attack, bench.")
    sub = parser.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("compile", help="lower a model to an accelerator binary")
    pc.add_argument("--model", required=True,
                    help=f"catalog name ({', '.join(CATALOG_NAMES)}) or description file")
    pc.add_argument("--scale", type=int, default=4, help="channel divisor")
    pc.add_argument("--threat", choices=THREATS, default="pp",
                    help="secrecy of (input, model): p public, s secret")
    pc.add_argument("--mode", choices=["temporal", "spatial"], default="temporal")
    pc.add_argument("--bandwidth", type=int, default=None, help="shaper bytes/sec")
    pc.add_argument("--tenant", type=int, default=0)
    pc.add_argument("--dram-base", type=int, default=16 * 1024 * 1024)
    pc.add_argument("--cipher", choices=[c.value for c in Cipher], default="qarma128")
    pc.add_argument("--naive-zeroize", action="store_true")
    pc.add_argument("--tune-sims", type=int, default=4,
                    help="tile finalists re-ranked by simulation")
    pc.add_argument("--out", required=True)
    pc.add_argument("--report", default=None, help="instruction-mix JSON")
    pc.add_argument("--zeroize-report", default=None)
    pc.set_defaults(func=cmd_compile)

    pr = sub.add_parser("run", help="execute compiled binaries")
    pr.add_argument("programs", nargs="+")
    pr.add_argument("--out", default=".")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--cipher", choices=[c.value for c in Cipher], default=None)
    pr.add_argument("--baseline", default=None, help="cycles.json to compare against")
    pr.add_argument("--checked", action="store_true", help="enable the taint oracle")
    pr.add_argument("--strict", action="store_true", help="nonzero exit on traps")
    pr.add_argument("--log-level", choices=["admin", "debug"], default=None)
    pr.add_argument("--lease-factor", type=float, default=1.0,
                    help="hold the lease open this multiple of the run length")
    pr.set_defaults(func=cmd_run)

    pa = sub.add_parser("attack", help="boundary detection on a bandwidth trace")
    pa.add_argument("--trace", required=True)
    pa.add_argument("--truth", required=True)
    pa.add_argument("--mode", choices=["unshaped", "shaped"], required=True)
    pa.add_argument("--profiles", default=None, help="timing profile JSON")
    pa.add_argument("--threshold", type=float, default=0.15)
    pa.add_argument("--span", type=int, default=16)
    pa.add_argument("--tolerance", type=int, default=2)
    pa.add_argument("--threshold-sweep", action="store_true")
    pa.add_argument("--report", required=True)
    pa.add_argument("--features", default=None,
                    help="append per-layer feature rows to this CSV")
    pa.add_argument("--model-name", default=None)
    pa.set_defaults(func=cmd_attack)

    pb = sub.add_parser("bench", help="reproduction sweep with aggregated reports")
    pb.add_argument("--models", default=",".join(CATALOG_NAMES))
    pb.add_argument("--threats", default="pp,sp,ps,ss")
    pb.add_argument("--modes", default="temporal,spatial")
    pb.add_argument("--ciphers", default="qarma128,aes128")
    pb.add_argument("--scale", type=int, default=4)
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--threshold", type=float, default=0.15)
    pb.add_argument("--lease-factor", type=float, default=2.5)
    pb.add_argument("--tune-sims", type=int, default=4)
    pb.add_argument("--out", required=True)
    pb.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
