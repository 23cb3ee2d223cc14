"""kiln: Bayesian optimization and design-of-experiments engine for
iterative experimental campaigns."""

__version__ = "0.1.0"
