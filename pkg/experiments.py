#!/usr/bin/env python3
"""
Command-line entry point for the LQR learning experiments
Usage: python experiments.py run --benchmark mo4 --alg both
"""

from src.expcli import cli

if __name__ == "__main__":
    cli()
