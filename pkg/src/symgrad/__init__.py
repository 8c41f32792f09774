"""Differentiable distributions over discrete symbols.

Symbolic programs are written against ``Distribution`` objects; the
probability bookkeeping behind them is delegated to a pluggable
provenance semiring (add-mult probabilities or top-k proof matrices),
with gradients provided by a built-in reverse-mode tape.
"""

from .distribution import (
    UNDEFINED,
    ContextError,
    Distribution,
    ProgramContext,
    SymbolFunctionError,
    apply,
    apply_if,
    encode_symbol,
    get_probs,
    make_distribution,
    sample_symbols,
    stack,
    union,
)
from .kernels import backend_name
from .provenance import (
    Damp,
    DtkpAm,
    InputRegistry,
    ProvenanceError,
    provenance_from_name,
    wmc_exact,
)
from .tensor import GradientTape, Tensor

__version__ = "0.1.0"

__all__ = [
    "UNDEFINED",
    "ContextError",
    "Distribution",
    "ProgramContext",
    "SymbolFunctionError",
    "apply",
    "apply_if",
    "encode_symbol",
    "get_probs",
    "make_distribution",
    "sample_symbols",
    "stack",
    "union",
    "backend_name",
    "Damp",
    "DtkpAm",
    "InputRegistry",
    "ProvenanceError",
    "provenance_from_name",
    "wmc_exact",
    "GradientTape",
    "Tensor",
    "__version__",
]
