"""
MPVIC Lab — Main Entry Point
Model predictive variable impedance control: exploration, training and evaluation runs.

Usage: python app.py {explore,train,eval,sweep,oracle-check,summarize} [flags]
"""

import os
import sys

# Ensure project root is in path
PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from src.harness.cli import main

if __name__ == "__main__":
    sys.exit(main())
