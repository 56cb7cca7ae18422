"""Model-based and data-driven policy/value iteration for continuous-time output-feedback LQR."""

__version__ = "0.1.0"
