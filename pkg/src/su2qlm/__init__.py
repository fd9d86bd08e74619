"""Gauge-invariant tensor-network simulator for the (1+1)-d SU(2) quantum link model."""

from .edoracle import enumerate_sector_basis, lowest_eigenpair
from .model import ModelParams, SiteKind, build_two_site_gate, enumerate_site_basis
from .mps import SymmetricMPS, init_product_state
from .tebd import AnnealSchedule, ground_state_search

__all__ = [
    "AnnealSchedule",
    "ModelParams",
    "SiteKind",
    "SymmetricMPS",
    "build_two_site_gate",
    "enumerate_sector_basis",
    "enumerate_site_basis",
    "ground_state_search",
    "init_product_state",
    "lowest_eigenpair",
]

__version__ = "0.1.0"
