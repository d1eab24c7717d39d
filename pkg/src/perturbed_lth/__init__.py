"""Perturbed subset sum, strong lottery tickets under bounded weight
perturbation, and projected training with score-based pruning."""

from .intervals import IntervalUnion, epsilon_extension, measure
from .kernels import BACKEND
from .subsetsum import CandidateSet, PerturbedSolution, min_n_search, solve_auto, solve_exact, solve_meet_in_middle

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CandidateSet",
    "IntervalUnion",
    "PerturbedSolution",
    "epsilon_extension",
    "measure",
    "min_n_search",
    "solve_auto",
    "solve_exact",
    "solve_meet_in_middle",
]
