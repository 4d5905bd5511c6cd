"""Rate experiments, envelope studies, concentration and averaging checks, CLI."""

from ..fitting import RateFitResult, fit_rate
from .averaging import AveragingTable, averaging_lemma_check
from .concentration import ConcentrationReport, ZSpec, bdg_constant, concentration_check, z_spec
from .exponents import TheoreticalRates, smoothing_schedule, theoretical_exponents
from .rates import (
    DisplacementReport,
    EnvelopeTable,
    RateExperiment,
    RateTable,
    Reference,
    as_path_study,
    displacement_decay_check,
    geometric_grid,
    rate_experiment,
)


def run_cli(argv=None) -> int:
    from .cli import run_cli as _run

    return _run(argv)


__all__ = [
    "AveragingTable", "ConcentrationReport", "DisplacementReport", "EnvelopeTable", "RateExperiment",
    "RateFitResult", "RateTable", "Reference", "TheoreticalRates", "ZSpec", "as_path_study",
    "averaging_lemma_check", "bdg_constant", "concentration_check", "displacement_decay_check", "fit_rate",
    "geometric_grid", "rate_experiment", "run_cli", "smoothing_schedule", "theoretical_exponents", "z_spec",
]
