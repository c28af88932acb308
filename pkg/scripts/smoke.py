#!/usr/bin/env python3
"""
End-to-end CLI smoke test: synth -> prepare -> train -> eval -> recommend.

Usage:
    python scripts/smoke.py
    python scripts/smoke.py --workdir /tmp/tailnet-smoke --epochs 2 --sessions 800
"""

import argparse
import subprocess
import sys
import tempfile
from pathlib import Path

GREEN = "\033[32m"
RED = "\033[31m"
YELLOW = "\033[33m"
BOLD = "\033[1m"
RESET = "\033[0m"

ROOT = Path(__file__).resolve().parent.parent


def ok(msg: str) -> None:
    print(f"{GREEN}✓{RESET} {msg}")


def fail(msg: str) -> None:
    print(f"{RED}✗{RESET} {msg}")
    sys.exit(1)


def warn(msg: str) -> None:
    print(f"{YELLOW}!{RESET} {msg}")


def section(title: str) -> None:
    print(f"\n{BOLD}── {title} ──{RESET}")


def call(*args: str, expect: int | None = 0) -> subprocess.CompletedProcess:
    r = subprocess.run(
        [sys.executable, str(ROOT / "main.py"), *args],
        capture_output=True,
        text=True,
        cwd=ROOT,
    )
    if expect is not None and r.returncode != expect:
        fail(f"{' '.join(args)} → exit {r.returncode}, expected {expect}\n{r.stdout}\n{r.stderr}")
    return r


def main() -> None:
    parser = argparse.ArgumentParser(description="CLI smoke test")
    parser.add_argument("--workdir", default=None, help="Keep artifacts here (default: temp dir)")
    parser.add_argument("--sessions", default="800")
    parser.add_argument("--items", default="80")
    parser.add_argument("--epochs", default="2")
    args = parser.parse_args()

    work = Path(args.workdir or tempfile.mkdtemp(prefix="tailnet-smoke-"))
    work.mkdir(parents=True, exist_ok=True)
    events, data, model = work / "events.csv", work / "data.tlds", work / "model.tlnt"

    # ── 1. Synthetic log ───────────────────────────────────────────────────────
    section("Synthetic click log")
    call("synth", "--out", str(events), "--sessions", args.sessions, "--items", args.items)
    first = events.read_bytes()
    call("synth", "--out", str(events), "--sessions", args.sessions, "--items", args.items)
    if events.read_bytes() != first:
        fail("synth is not deterministic")
    ok(f"{events.name}: {len(first.splitlines()):,} lines, identical on rerun")

    # ── 2. Prepare ─────────────────────────────────────────────────────────────
    section("Prepare dataset")
    r = call("prepare", "--input", str(events), "--out", str(data))
    for line in r.stdout.splitlines():
        print(f"   {line}")
    if "head items:" not in r.stdout:
        fail("prepare summary lacks the head item count")
    ok(f"{data.name}: {data.stat().st_size:,} bytes")

    # ── 3. Train ───────────────────────────────────────────────────────────────
    section("Train (with and without preference mechanism)")
    common = ["--data", str(data), "--epochs", args.epochs, "--d", "16", "--threads", "1"]
    r = call("train", *common, "--out", str(model))
    lines = r.stdout.strip().splitlines()
    ok(f"{len(lines) - 1} epoch row(s): {lines[-1]}")
    snapshot = model.read_bytes()
    call("train", *common, "--out", str(model))
    if model.read_bytes() != snapshot:
        fail("train is not deterministic")
    ok("checkpoint identical on rerun")
    no_pm = work / "model_nopm.tlnt"
    call("train", *common, "--no-pm", "--out", str(no_pm))
    ok(f"{no_pm.name} written")

    # ── 4. Evaluate ────────────────────────────────────────────────────────────
    section("Evaluate all methods")
    report = work / "report.csv"
    r = call(
        "eval", "--data", str(data), "--model", str(model),
        "--method", "tailnet,tailnet-proportion,pop,spop,itemknn",
        "--out", str(report),
    )
    print(r.stdout)
    rows = [ln for ln in report.read_text().splitlines() if ln and not ln.startswith("#")]
    if len(rows) != 1 + 5 * 5 * 4:
        fail(f"report has {len(rows) - 1} rows, expected 100")
    ok(f"{report.name}: {len(rows) - 1} rows")

    xlsx = work / "report.xlsx"
    call("eval", "--data", str(data), "--model", str(model), "--method", "tailnet,pop",
         "--out", str(xlsx))
    ok(f"{xlsx.name} written")

    single = call("eval", "--data", str(data), "--model", str(model), "--threads", "1")
    multi = call("eval", "--data", str(data), "--model", str(model), "--threads", "4")
    if single.stdout != multi.stdout:
        fail("--threads 1 and --threads 4 disagree")
    ok("eval identical across thread counts")

    # ── 5. Recommend ───────────────────────────────────────────────────────────
    section("Recommend")
    item = next(
        ln.split(",")[2] for ln in events.read_text().splitlines()
        if ln and not ln.startswith("#") and not ln.startswith("session_id")
    )
    r = call("recommend", "--model", str(model), "--session", item, "--k", "5", expect=None)
    if r.returncode == 2:
        warn(f"{item} was filtered out of the catalog; skipping")
    else:
        for line in r.stdout.splitlines():
            print(f"   {line}")
        ok("recommend printed a list")
    call("recommend", "--model", str(model), "--session", "no-such-item", expect=2)
    ok("unknown item → exit 2")

    # ── 6. Error contract ──────────────────────────────────────────────────────
    section("Exit codes")
    empty = work / "empty.csv"
    empty.write_text("")
    r = call("prepare", "--input", str(empty), "--out", str(work / "x.tlds"), expect=2)
    if "no events parsed" not in r.stderr:
        fail(f"unexpected message: {r.stderr}")
    ok("empty CSV → exit 2")
    call("synth", "--out", str(work / "none.csv"), "--sessions", "0", expect=2)
    ok("--sessions 0 → exit 2")
    broken = work / "broken.tlnt"
    broken.write_bytes(snapshot[: len(snapshot) // 2])
    call("recommend", "--model", str(broken), "--session", "x", expect=2)
    ok("truncated checkpoint → exit 2")

    print(f"\n{GREEN}{BOLD}All checks passed.{RESET} Artifacts in {work}\n")


if __name__ == "__main__":
    main()
