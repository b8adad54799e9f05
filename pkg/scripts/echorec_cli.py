#!/usr/bin/env python3
"""Simulate echoes, classify reflective surfaces and enhance meshes.

Wrapper script for the echorec package.
"""

import sys
from pathlib import Path

# Add the scripts directory to sys.path so we can import the package
script_dir = Path(__file__).parent
sys.path.insert(0, str(script_dir))

from echorec.main import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
