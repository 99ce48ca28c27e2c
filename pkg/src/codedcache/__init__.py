"""Cache placement and coded delivery for users with random activity and nonuniform files."""
from .model import DemandScenario, FileCatalog, Placement, UserPopulation, build_catalog, zipf_popularity
from .rate import Scheme, average_rate

__all__ = ["DemandScenario", "FileCatalog", "Placement", "UserPopulation", "build_catalog",
           "zipf_popularity", "Scheme", "average_rate"]
__version__ = "0.1.0"
