"""Open-loop generalized Nash equilibria of dynamic games via sequential QP."""

import jax

# Every derivative oracle and rollout in this package works in float64.
jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
