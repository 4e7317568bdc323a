"""Adaptive oil-spill monitoring: drift model, uncertainty tracer, adjoint
sensor placement, reduced-order assimilation and a twin-experiment harness."""
from . import baseline, domain, flow, oil, placement, rom, uncertainty
from .domain import GridSpec, ScalarField, TimeGrid, VectorField

__version__ = "0.1.0"
__all__ = ["GridSpec", "ScalarField", "TimeGrid", "VectorField", "baseline", "domain", "flow",
           "oil", "placement", "rom", "uncertainty"]
