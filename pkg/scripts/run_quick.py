"""Desk-scale sweep: tune, evaluate and write the result CSVs.

    python scripts/run_quick.py --out results/quick --jobs 2
"""
import argparse
import sys

from fdsic import cli


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/quick")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config", help="optional YAML overrides")
    a = p.parse_args()
    argv = ["run", "--quick", "--out", a.out, "--jobs", str(a.jobs)]
    if a.config:
        argv += ["--config", a.config]
    return cli.main(argv)


if __name__ == "__main__":
    sys.exit(main())
