"""Progressive differentiable architecture search at desk scale."""

from .genotype import Genotype, GenotypeError, load_genotype, save_genotype
from .ops import ALL_KINDS, PARAMETRIC, OperationKind, build_op, forward_op
from .search import (
    BilevelConfig,
    SearchConfig,
    StageSchedule,
    make_space,
    operation_loss_score,
    run_opp_search,
    run_vanilla_darts,
    select_next_operation,
)
from .supernet import Supernet, SupernetConfig, discretize, mixed_edge_forward
from .tensor import Tensor, backward

__version__ = "0.1.0"
