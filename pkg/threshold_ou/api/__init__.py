"""
HTTP surface over the estimation services
"""
