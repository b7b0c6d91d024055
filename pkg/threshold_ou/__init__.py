"""
Threshold OU - Core Package
Simulation, estimation and testing for the threshold Ornstein-Uhlenbeck diffusion
"""

__version__ = "1.0.0"
__author__ = "Threshold OU Team"
