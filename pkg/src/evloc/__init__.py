"""Multi-year EV charging-station location under stochastic demand growth
with multinomial-logit station choice."""

__version__ = "0.1.0"
