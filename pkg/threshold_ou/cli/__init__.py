"""
Command-line surface and experiment drivers
"""
