"""
Adaptive cognitive fit lab: synthetic performance data, mixture clustering,
a trading-day experiment simulator, ANOVA battery and an adaptive
representation recommender.
"""

__version__ = "0.1.0"
