"""Simulation and inference for a five-stage annual-plant branching process with seed immigration."""
from .complete import CompleteEstimates, complete_loglik_poisson, estimate_complete
from .dynamics import (
    CompleteDataset,
    DemographicParams,
    ObservedDataset,
    PopulationState,
    init_population,
    observe,
    simulate,
    step,
)
from .errors import CollinearityError, DomainError, InestimableError, ParseError, SeedbankError
from .incomplete import (
    IdentifiableParams,
    fisher_matrix,
    fit_phi_full,
    fit_phi_reduced,
    identifiable_set,
    incomplete_loglik,
    lambda_gradient,
    lambda_sequence,
    simulate_via_intensity,
)
from .stochastic import DistributionSpec, RngHandle

__version__ = "0.1.0"

__all__ = [
    "CompleteEstimates",
    "complete_loglik_poisson",
    "estimate_complete",
    "CompleteDataset",
    "DemographicParams",
    "ObservedDataset",
    "PopulationState",
    "init_population",
    "observe",
    "simulate",
    "step",
    "CollinearityError",
    "DomainError",
    "InestimableError",
    "ParseError",
    "SeedbankError",
    "IdentifiableParams",
    "fisher_matrix",
    "fit_phi_full",
    "fit_phi_reduced",
    "identifiable_set",
    "incomplete_loglik",
    "lambda_gradient",
    "lambda_sequence",
    "simulate_via_intensity",
    "DistributionSpec",
    "RngHandle",
]
