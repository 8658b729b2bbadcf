"""Stein-variational actor-critic with closed-form entropy tracking of SVGD particles."""

from .core import RngStream, adaptive_bandwidth, rbf_kernel, rbf_kernel_grad_wrt_first
from .entropy import EntropyEstimate, exact_jacobian_logq, invertibility_margin, svgd_logq_closed_form
from .samplers import ParticleSet, SamplerConfig, svgd_step
from .targets import GaussianTarget, GmmTarget, QBackedTarget

__version__ = "0.1.0"

__all__ = [
    "EntropyEstimate",
    "GaussianTarget",
    "GmmTarget",
    "ParticleSet",
    "QBackedTarget",
    "RngStream",
    "SamplerConfig",
    "adaptive_bandwidth",
    "exact_jacobian_logq",
    "invertibility_margin",
    "rbf_kernel",
    "rbf_kernel_grad_wrt_first",
    "svgd_logq_closed_form",
    "svgd_step",
]
