"""Learning to predict traffic equilibria with embedded flow-optimization layers."""
from .equilibrium import LatencyParams, equilibrium_gap, euclidean_projection, solve_we
from .flow_oracles import linear_min_multiflow
from .fyloss import euclidean_fy_loss
from .network import Commodity, Instance, RoadNetwork

__version__ = "0.1.0"

__all__ = ["LatencyParams", "equilibrium_gap", "euclidean_projection", "solve_we",
           "linear_min_multiflow", "euclidean_fy_loss", "Commodity", "Instance", "RoadNetwork"]
