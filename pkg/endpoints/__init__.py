"""
TrendGuard API endpoints
"""

from . import detect, score
