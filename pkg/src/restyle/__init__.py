"""Reward-driven unsupervised text style transfer at desk scale, with an
evaluation-and-audit harness for the metric-gaming failure modes."""

__version__ = "0.1.0"
