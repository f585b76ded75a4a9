"""Numerical protocols measuring selection stability under recoding and refinement.

Modules: :mod:`~dplab.grid` (grids, fields, recodings, refinement policies),
:mod:`~dplab.tv` (TV-regularized inversion), :mod:`~dplab.barrier` (capacity
of thin barriers), :mod:`~dplab.ising` (zero-temperature Ising dynamics),
:mod:`~dplab.pointer` (preferred bases from decoherence),
:mod:`~dplab.horizon` (weighted flux of an interior wave model),
:mod:`~dplab.prefix` (quantifier-prefix classification) and
:mod:`~dplab.harness` (stability indices, reports).
"""

from .exceptions import (
    CalibrationFailure,
    DPLabError,
    EvolutionBlowup,
    InadmissibleDatum,
    InconclusiveVerdict,
    InvalidArgument,
    NoAdmissibleLambda,
    NoTameContinuation,
    ParseError,
    QuorumFailure,
    SolverFailure,
)
from .grid import Field, Grid, PolicyFamily, Recoding, RefinementPolicy, apply_recoding, make_grid, refine
from .harness import ProtocolConfig, StabilityReport, run_protocol, verdict
from .prefix import classify_prefix

__version__ = "0.1.0"

__all__ = [
    "CalibrationFailure",
    "DPLabError",
    "EvolutionBlowup",
    "Field",
    "Grid",
    "InadmissibleDatum",
    "InconclusiveVerdict",
    "InvalidArgument",
    "NoAdmissibleLambda",
    "NoTameContinuation",
    "ParseError",
    "PolicyFamily",
    "ProtocolConfig",
    "QuorumFailure",
    "Recoding",
    "RefinementPolicy",
    "SolverFailure",
    "StabilityReport",
    "apply_recoding",
    "classify_prefix",
    "make_grid",
    "refine",
    "run_protocol",
    "verdict",
]
