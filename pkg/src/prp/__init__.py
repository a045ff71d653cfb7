"""Simulation and numerical analysis of the patchy restrained process (PRP).

Particles live on sites ``(x, r)`` of ``Z^d x K_N``.  Each dies at rate 1,
breeds inside its patch at rate ``phi`` (accepted with probability ``c(i)`` at
a site holding ``i``) and onto empty sites of neighbouring patches at rate
``lam``.
"""
from .model import ControlSpec, Geometry, Params, eval_control, control_product, preset
from .simulator import LatticeState, Outcome, Status, Stopping, patch_rates, run, run_coupled, step

__all__ = ["ControlSpec", "Geometry", "Params", "eval_control", "control_product", "preset",
           "LatticeState", "Outcome", "Status", "Stopping", "patch_rates", "run", "run_coupled", "step"]
__version__ = "0.1.0"
