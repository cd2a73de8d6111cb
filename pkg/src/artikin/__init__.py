"""Probabilistic kinematic models of articulated objects learned from pose trajectories."""
from .errors import (ArtikinError, DegenerateSampleError, GpTrainingError, NonConvergence, NumericalFailure,
                     ValidationError, VariantNotFittableError)
from .estimation import FitConfig, FitResult, fit_all_candidates, fit_and_select, mlesac_fit, noise_sweep, select_model
from .models import GpModel, LinkModel, PrismaticModel, RevoluteModel, RigidModel, VARIANTS, jacobian
from .obs_model import NoiseSpec, OutlierSpec
from .prior import PriorDatabase, assimilate, merge_beneficial, predict_with_prior
from .se3 import Pose
from .simulator import ObjectTrajectory, ScenarioSpec, generate
from .structure import KinematicGraph, learn_structure, spanning_tree

__version__ = "0.1.0"

__all__ = [
    "ArtikinError", "DegenerateSampleError", "GpTrainingError", "NonConvergence", "NumericalFailure",
    "ValidationError", "VariantNotFittableError", "FitConfig", "FitResult", "fit_all_candidates",
    "fit_and_select", "mlesac_fit", "noise_sweep", "select_model", "GpModel", "LinkModel", "PrismaticModel",
    "RevoluteModel", "RigidModel", "VARIANTS", "jacobian", "NoiseSpec", "OutlierSpec", "PriorDatabase",
    "assimilate", "merge_beneficial", "predict_with_prior", "Pose", "ObjectTrajectory", "ScenarioSpec",
    "generate", "KinematicGraph", "learn_structure", "spanning_tree",
]
