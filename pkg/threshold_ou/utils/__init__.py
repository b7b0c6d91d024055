"""
Numerical helpers shared by every service
"""
