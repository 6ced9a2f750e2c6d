"""MDS-coded caching in mobile device-to-device networks.

The package models devices walking on a sphere that cache coded packets of
popular files, chooses how much of each file to cache, and checks the
analysis against a Monte-Carlo simulator.
"""

__version__ = "0.1.0"

from .contact import ContactModel, MobilityParams, contact_count_distribution, relative_speed
from .model import (
    Allocation,
    Popularity,
    RateBreakdown,
    SystemConfig,
    popular_allocation,
    weighted_rate,
    zipf_popularity,
)
from .optimize import round_to_integer, solve_milp, solve_relaxed, theta_half_optimal

__all__ = [
    "Allocation",
    "ContactModel",
    "MobilityParams",
    "Popularity",
    "RateBreakdown",
    "SystemConfig",
    "contact_count_distribution",
    "popular_allocation",
    "relative_speed",
    "round_to_integer",
    "solve_milp",
    "solve_relaxed",
    "theta_half_optimal",
    "weighted_rate",
    "zipf_popularity",
]
