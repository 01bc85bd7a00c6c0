"""Leaky integrate-and-analog-fire networks in numpy.

Cells, baseline RNNs, a tape autodiff for BPTT, cost accounting, DVS event
binning and synthetic temporal tasks.
"""

from .autodiff import Tape, Var
from .cells import CellParams, CellState, run_sequence, step
from .cost_model import LayerCost, instrumented_count, layer_cost_analytical, network_cost
from .network import LayerSpec, NetworkSpec, ShapeRole, forward, init_params, preset

__version__ = "0.1.0"

__all__ = [
    "CellParams", "CellState", "LayerCost", "LayerSpec", "NetworkSpec", "ShapeRole", "Tape", "Var",
    "forward", "init_params", "instrumented_count", "layer_cost_analytical", "network_cost",
    "preset", "run_sequence", "step",
]
