"""
Render the summary CSVs of one or more run directories to HTML figures.

Usage: python plot_results.py runs/latest [runs/other ...]
"""

import argparse
import os
import sys

PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from src.harness.logs import configure_logging
from src.harness.plots import render_run


def main() -> int:
    parser = argparse.ArgumentParser(description="Plot MPVIC Lab run summaries.")
    parser.add_argument("run_dirs", nargs="+")
    args = parser.parse_args()
    configure_logging("INFO")
    written = []
    for run_dir in args.run_dirs:
        written += render_run(run_dir)
    for path in written:
        print(path)
    return 0 if written else 1


if __name__ == "__main__":
    sys.exit(main())
