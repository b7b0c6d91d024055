#!/usr/bin/env python3
"""
Threshold OU - Main Entry Point
Simulation, estimation and testing for threshold Ornstein-Uhlenbeck processes
"""

import sys

from threshold_ou.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
