"""Masked discrete diffusion: schedules, forward process, ELBO estimators, training and sampling."""

from .forward import ForwardKernel, Vocabulary
from .losses import (LossEstimate, ScoreView, boundary_terms, loss_continuous_ce, loss_ctmc, loss_discrete,
                     loss_genmd4, loss_maskgit, loss_score_entropy)
from .predictor import MlpPredictor, TabularPredictor
from .sampler import SamplerConfig, sample, sample_genmd4, trajectory
from .schedule import Schedule, VectorSchedule, cosine, geometric, linear, polynomial

__all__ = [
    "ForwardKernel", "Vocabulary", "LossEstimate", "ScoreView", "boundary_terms", "loss_continuous_ce",
    "loss_ctmc", "loss_discrete", "loss_genmd4", "loss_maskgit", "loss_score_entropy", "MlpPredictor",
    "TabularPredictor", "SamplerConfig", "sample", "sample_genmd4", "trajectory", "Schedule",
    "VectorSchedule", "cosine", "geometric", "linear", "polynomial",
]
