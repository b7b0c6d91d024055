"""
Domain services: stationary theory, simulation, statistics, estimation, inference
"""
