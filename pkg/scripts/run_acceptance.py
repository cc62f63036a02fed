#!/usr/bin/env python3
"""Run the acceptance suite (tests/test_acceptance.py) and show the one-line
verdict per criterion.

Usage:  python scripts/run_acceptance.py [extra pytest args]
The full run takes roughly ten minutes on two cores; most of it is the
10^5-path bias-scaling criterion.
"""

import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    root = Path(__file__).resolve().parent.parent
    sys.exit(pytest.main(
        [str(root / "tests" / "test_acceptance.py"), "-v", "-s"]
        + sys.argv[1:]))
