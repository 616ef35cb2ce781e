"""Tensor evolution: closed-form analysis and loop removal for single-loop tensor programs."""
from .analysis import AnalysisResult, analyze_loop, exit_value
from .codegen import NotFullyAnalyzable, emit_optimized_program, optimize
from .interpreter import run_program
from .ir import Program, parse_program, serialize_program
from .tensor import Tensor
from .tev import Chain, Invariant, Unknown, Wrap, closed_form_at, eval_step, normalize
from .verify import VerifyReport, verify_program

__all__ = [
    "AnalysisResult",
    "Chain",
    "Invariant",
    "NotFullyAnalyzable",
    "Program",
    "Tensor",
    "Unknown",
    "VerifyReport",
    "Wrap",
    "analyze_loop",
    "closed_form_at",
    "emit_optimized_program",
    "eval_step",
    "exit_value",
    "normalize",
    "optimize",
    "parse_program",
    "run_program",
    "serialize_program",
    "verify_program",
]
