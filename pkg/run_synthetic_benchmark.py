"""
Synthetic Benchmark: End-to-End Driver
=======================================

Runs the full pipeline on the shipped synthetic screen:
  1. gen-data   (864-well dataset + ground truth)
  2. train      (micon, paclr_only, simclr, clip x 3 seeds)
  3. evaluate   (none / NSB / NSS retrieval, counterfactual queries)
  4. report     (comparison table)
and then checks the expected ordering on NSB accuracy.

Usage
-----
  python run_synthetic_benchmark.py
  python run_synthetic_benchmark.py --config configs/default.toml --out runs/bench
"""

import argparse
import json
import sys
import time
from pathlib import Path

from micon.main import main as micon_main

# ── Colour helpers (works on Windows 10+ with VirtualTerminal) ──────────────
GREEN  = "\033[92m"
YELLOW = "\033[93m"
RED    = "\033[91m"
CYAN   = "\033[96m"
BOLD   = "\033[1m"
RESET  = "\033[0m"

def ok(msg):    print(f"{GREEN}  ✔ {msg}{RESET}")
def warn(msg):  print(f"{YELLOW}  ⚠ {msg}{RESET}")
def fail(msg):  print(f"{RED}  ✖ {msg}{RESET}")
def info(msg):  print(f"{CYAN}  ℹ {msg}{RESET}")
def bold(msg):  print(f"{BOLD}{msg}{RESET}")


def run_step(title: str, argv: list[str]) -> None:
    bold(title)
    start = time.time()
    code = micon_main(argv)
    if code != 0:
        fail(f"micon {argv[0]} exited with code {code}")
        sys.exit(code)
    ok(f"done in {time.time() - start:.1f}s")
    print()


def check_ordering(run_dir: Path) -> bool:
    comparison = json.loads((run_dir / "comparison.json").read_text(encoding="utf-8"))
    means = {s["method"]: s for s in comparison["summaries"] if s["setting"] == "NSB"}
    tests = {t["baseline"]: t for t in comparison["tests"] if t["setting"] == "NSB"}
    passed = True

    micon = means.get("micon")
    if micon is None:
        fail("No MICON NSB summary found.")
        return False
    info(f"MICON NSB accuracy {micon['mean']:.4f} ± {micon['sd']:.4f} (chance {micon['chance_level']:.4f})")

    reports = sorted((run_dir / "reports").glob("micon-seed*-NSB.json"))
    p_values = [json.loads(p.read_text(encoding="utf-8")).get("permutation_p") for p in reports]
    if micon["mean"] > micon["chance_level"] and all(p is not None and p < 0.05 for p in p_values):
        ok(f"MICON beats chance (permutation p per seed: {p_values})")
    else:
        fail(f"MICON does not clearly beat chance (permutation p per seed: {p_values})")
        passed = False

    baselines = [means[m]["mean"] for m in ("simclr", "clip") if m in means]
    paclr = means.get("paclr_only", {}).get("mean")
    if paclr is not None and micon["mean"] >= paclr >= max(baselines, default=0.0):
        ok("Seed-mean ordering micon >= paclr_only >= max(simclr, clip) holds")
    else:
        fail(f"Ordering violated: micon={micon['mean']:.4f}, paclr_only={paclr}, baselines={baselines}")
        passed = False

    simclr = tests.get("simclr")
    if simclr and simclr["p"] < 0.05:
        ok(f"MICON > SimCLR on NSB (one-tailed p = {simclr['p']:.4g})")
    else:
        fail(f"MICON vs SimCLR not significant: {simclr}")
        passed = False

    generated = sorted((run_dir / "reports").glob("micon-seed*-NSB-generated.json"))
    gen_reports = [json.loads(p.read_text(encoding="utf-8")) for p in generated]
    if gen_reports and all(r["accuracy"] > r["chance_level"] and (r["permutation_p"] or 1.0) < 0.05 for r in gen_reports):
        ok("Counterfactual queries retrieve above chance on NSB")
    else:
        warn("Counterfactual NSB retrieval did not clear chance on every seed.")
        passed = False
    return passed


def run_benchmark(config: str, out: str) -> int:
    sep = "─" * 60
    bold(f"\n{sep}")
    bold(" MICON SYNTHETIC BENCHMARK")
    bold(sep)
    info(f"Config: {config}")
    info(f"Run dir: {out}")
    print()

    flags = ["--config", config, "--out", out, "--deterministic"]
    start = time.time()
    run_step("Step 1: Generate the synthetic screen", ["gen-data", *flags])
    run_step("Step 2: Train all methods", ["train", *flags])
    run_step("Step 3: Evaluate retrieval", ["evaluate", *flags])
    run_step("Step 4: Comparison report", ["report", *flags])

    bold("Step 5: Ordering checks")
    print(sep)
    passed = check_ordering(Path(out))
    info(f"Total time: {(time.time() - start) / 60:.1f} min")
    return 0 if passed else 1


# ── Entry point ──────────────────────────────────────────────────────────────

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Run the synthetic MICON benchmark end to end")
    parser.add_argument("--config", default="configs/default.toml", help="Run configuration (default: configs/default.toml)")
    parser.add_argument("--out", default="runs/benchmark", help="Run directory (default: runs/benchmark)")
    args = parser.parse_args()

    sys.exit(run_benchmark(args.config, args.out))
