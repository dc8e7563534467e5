"""Command-line surface: exit codes, report schemas, determinism, sweeps."""

import json
import subprocess
import sys

import jsonschema
import pytest

from sesm.cli import main
from sesm.schemas import validate_report


@pytest.fixture(scope="module")
def compiled(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    rc = main(["compile", "--model", "alexnet", "--scale", "8", "--threat", "ss",
               "--out", str(out / "prog.bin"), "--report", str(out / "mix.json"),
               "--zeroize-report", str(out / "zeroize.json"), "--tune-sims", "0"])
    assert rc == 0
    return out


def test_compile_reports_validate(compiled):
    validate_report("config", json.loads((compiled / "prog.bin.json").read_text()))
    validate_report("mix", json.loads((compiled / "mix.json").read_text()))
    validate_report("zeroize", json.loads((compiled / "zeroize.json").read_text()))


def test_compile_public_has_no_zeroize(tmp_path):
    rc = main(["compile", "--model", "vgg11", "--scale", "8", "--threat", "pp",
               "--out", str(tmp_path / "pp.bin"), "--report", str(tmp_path / "mix.json"),
               "--tune-sims", "0"])
    assert rc == 0
    mix = json.loads((tmp_path / "mix.json").read_text())["mix"]
    assert mix.get("zeroize", 0) == 0


def test_compile_oversubscription_exit_code(tmp_path, monkeypatch):
    # a spatial-mode bandwidth demand beyond the per-tenant platform share
    rc = main(["compile", "--model", "alexnet", "--scale", "8", "--threat", "ss",
               "--mode", "spatial", "--bandwidth", "400000000",
               "--out", str(tmp_path / "x.bin"), "--tune-sims", "0"])
    assert rc == 2


def test_unknown_model_exit_code(tmp_path):
    rc = main(["compile", "--model", "nonesuch", "--out", str(tmp_path / "x.bin")])
    assert rc == 2


def test_run_and_reports(compiled, tmp_path):
    rc = main(["run", str(compiled / "prog.bin"), "--out", str(tmp_path / "run")])
    assert rc == 0
    payload = json.loads((tmp_path / "run" / "cycles.json").read_text())
    validate_report("cycles", payload)
    assert payload["tenants"]["0"]["finished"]
    assert (tmp_path / "run" / "attacker.csv").exists()
    assert (tmp_path / "run" / "privileged.t0.csv").exists()


def test_run_baseline_overhead(compiled, tmp_path):
    assert main(["run", str(compiled / "prog.bin"), "--out", str(tmp_path / "a")]) == 0
    rc = main(["run", str(compiled / "prog.bin"), "--out", str(tmp_path / "b"),
               "--baseline", str(tmp_path / "a" / "cycles.json")])
    assert rc == 0
    payload = json.loads((tmp_path / "b" / "cycles.json").read_text())
    assert payload["overhead_vs_baseline"] == 0.0


def test_attack_report_schema(compiled, tmp_path):
    assert main(["run", str(compiled / "prog.bin"), "--out", str(tmp_path / "r")]) == 0
    rc = main(["attack", "--trace", str(tmp_path / "r" / "attacker.csv"),
               "--truth", str(tmp_path / "r" / "privileged.t0.csv"),
               "--mode", "unshaped", "--threshold-sweep",
               "--report", str(tmp_path / "attack.json")])
    assert rc == 0
    report = json.loads((tmp_path / "attack.json").read_text())
    validate_report("attack", report)
    assert report["threshold_sweep"]


def test_missing_trace_is_io_error(tmp_path):
    rc = main(["attack", "--trace", str(tmp_path / "none.csv"),
               "--truth", str(tmp_path / "none2.csv"), "--mode", "unshaped",
               "--report", str(tmp_path / "r.json")])
    assert rc == 4


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sesm.cli", "compile",
                           "--model", "alexnet", "--scale", "8", "--threat", "pp",
                           "--out", str(tmp_path / "p.bin"), "--tune-sims", "0"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_bench_small_grid(tmp_path):
    rc = main(["bench", "--models", "alexnet", "--threats", "pp,ss",
               "--modes", "temporal", "--ciphers", "qarma128",
               "--scale", "8", "--out", str(tmp_path / "bench"), "--tune-sims", "0"])
    assert rc == 0
    manifest = json.loads((tmp_path / "bench" / "manifest.json").read_text())
    validate_report("manifest", manifest)
    assert manifest["failures"] == []
    assert len(manifest["runs"]) == 2
    overhead = json.loads((tmp_path / "bench" / "overhead.json").read_text())
    assert overhead["alexnet/temporal"]["overhead"]["ss-qarma128"] > 0
    table2 = json.loads((tmp_path / "bench" / "table2.json").read_text())
    assert table2["alexnet"]["unshaped"]["all"]["precision"] == 1.0
    assert table2["alexnet"]["shaped"]["all"]["recall"] == 1.0
    assert (tmp_path / "bench" / "overhead.csv").exists()
    assert (tmp_path / "bench" / "mix.csv").exists()


def test_rerun_byte_identical(tmp_path):
    blobs = []
    for attempt in range(2):
        out = tmp_path / f"try{attempt}"
        assert main(["compile", "--model", "vgg11", "--scale", "8", "--threat", "ss",
                     "--out", str(out / "p.bin"), "--tune-sims", "0"]) == 0
        assert main(["run", str(out / "p.bin"), "--out", str(out), "--seed", "11"]) == 0
        blobs.append(((out / "p.bin").read_bytes(),
                      (out / "attacker.csv").read_bytes(),
                      (out / "cycles.json").read_bytes()))
    assert blobs[0] == blobs[1]
