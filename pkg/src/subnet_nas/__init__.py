"""Multi-objective search for pruned sub-networks of a small transformer."""

from .model import MaskPair, ModelDims, SuperNetwork, forward_masked, loss_and_grads, prune
from .pareto import REF_POINT, ObjectiveVector, ParetoArchive, hypervolume, nondominated_sort
from .searchers import Budget, RungSchedule, ehvi_search, local_search, mo_asha, mo_rea, random_search
from .spaces import SearchSpace, SpaceKind, SubNetConfig
from .tasks import SyntheticTask, generate_task
from .training import Strategy, TrainStrategy, evaluate_subnet, train_supernet

__version__ = "0.1.0"

__all__ = [
    "MaskPair", "ModelDims", "SuperNetwork", "forward_masked", "loss_and_grads", "prune",
    "REF_POINT", "ObjectiveVector", "ParetoArchive", "hypervolume", "nondominated_sort",
    "Budget", "RungSchedule", "ehvi_search", "local_search", "mo_asha", "mo_rea", "random_search",
    "SearchSpace", "SpaceKind", "SubNetConfig", "SyntheticTask", "generate_task",
    "Strategy", "TrainStrategy", "evaluate_subnet", "train_supernet",
]
