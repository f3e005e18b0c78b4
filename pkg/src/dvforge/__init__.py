"""Data valuation with a bandit PPO agent over a from-scratch numpy autodiff engine."""

__version__ = "0.1.0"
