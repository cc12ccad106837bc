from .graph import GraphBlock
from .networks import (ArchSpec, DualNet, PrimalNet, build_nets, dual_forward,
                       primal_forward, recover_solution)
from .trajectory import DualTrajectory, PrimalTrajectory
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "GraphBlock", "ArchSpec", "DualNet", "PrimalNet", "build_nets",
    "dual_forward", "primal_forward", "recover_solution",
    "DualTrajectory", "PrimalTrajectory", "load_checkpoint", "save_checkpoint",
]
