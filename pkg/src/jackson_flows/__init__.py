"""Customer-flow analytics for open Jackson queueing networks."""

__version__ = "0.1.0"

from .network_model import (  # noqa: E402
    ConstantEffort,
    LinearEffort,
    NetworkSpec,
    RampEffort,
    load_network,
    solve_traffic,
    validate_network,
)
from .route_chains import link_stats  # noqa: E402
from .simulator import SimConfig, replicate_counts, simulate_window  # noqa: E402

__all__ = [
    "ConstantEffort",
    "LinearEffort",
    "NetworkSpec",
    "RampEffort",
    "SimConfig",
    "link_stats",
    "load_network",
    "replicate_counts",
    "simulate_window",
    "solve_traffic",
    "validate_network",
]
