"""Binary-outcome models with heavy-tailed covariates.

Estimation of Pareto-type tail indices, cross-sectional and panel tail
MLEs, elasticities and partial effects, comparison baselines, forecast
scoring, and a deterministic Monte Carlo harness. See the README for the
CLI entry points.
"""

from __future__ import annotations

__version__ = "0.1.0"
