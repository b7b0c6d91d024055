"""
Core configuration, exceptions and logging setup
"""
