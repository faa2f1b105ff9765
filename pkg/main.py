#!/usr/bin/env python3
"""
mirrorflow: Mirror-descent flows for stochastic control
Main entry point for running from a source checkout
"""

import sys
from pathlib import Path

# Add the mirrorflow package to the path
sys.path.insert(0, str(Path(__file__).parent))

from mirrorflow.cli import main

if __name__ == "__main__":
    sys.exit(main())
