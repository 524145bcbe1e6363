"""Run the oracle and gradient suites: ``python -m rsstereo.verification [--out reports.jsonl]``."""
import argparse
import json
import sys

from .suite import run_gradient_suite, run_oracle_suite


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m rsstereo.verification")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--instances", type=int, default=100)
    ap.add_argument("--out", default=None, help="write one JSON report per line")
    ap.add_argument("--skip-gradients", action="store_true")
    args = ap.parse_args(argv)

    records = [dict(r.to_record(), suite="oracle") for r in run_oracle_suite(args.seed, args.instances)]
    if not args.skip_gradients:
        records += [dict(r.to_record(), suite="gradient") for r in run_gradient_suite(args.seed)]
    for r in records:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status} {r['suite']:8s} {r['operation']:28s} rel={r['max_rel_error']:.2e}")
    if args.out:
        with open(args.out, "w") as f:
            for r in records:
                f.write(json.dumps(r) + "\n")
    return 0 if all(r["passed"] for r in records) else 1


if __name__ == "__main__":
    sys.exit(main())
