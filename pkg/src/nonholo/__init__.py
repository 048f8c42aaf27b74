"""Nonholonomic and constrained variational dynamics of simple mechanical systems."""
from .expr import evaluate, parse_expression, to_text
from .invariance import (
    AffineFiberFunction,
    InvariantVarietySearch,
    fiber_affine_solve,
    invariant_variety_search,
    iterated_lie,
    lie_step,
    sample_states,
)
from .mechanics import MechanicalSystem, build_system, kernel_annihilator_generators
from .models import flat_holonomic, load_model, rolling_disc
from .odesim import compare_nh_rcv, integrate

__version__ = "0.1.0"

__all__ = [
    "AffineFiberFunction",
    "InvariantVarietySearch",
    "MechanicalSystem",
    "build_system",
    "compare_nh_rcv",
    "evaluate",
    "fiber_affine_solve",
    "flat_holonomic",
    "integrate",
    "invariant_variety_search",
    "iterated_lie",
    "kernel_annihilator_generators",
    "lie_step",
    "load_model",
    "parse_expression",
    "rolling_disc",
    "sample_states",
    "to_text",
]
