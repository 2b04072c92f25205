"""Polarimetric image restoration on numpy.

Submodules:

``polar``       Malus forward model, Stokes parameters, DoP/AoP
``degrade``     synthetic scenes, DoFP mosaicing, low light, motion blur
``autograd``    reverse-mode tensor engine; ``optim`` holds AdamW
``network``     the cross-domain restoration network
``objectives``  training losses, PSNR/SSIM evaluation
``pipeline``    configs, datasets, train/eval/infer loops (``cli`` wraps them)
"""
from .polar import (
    PolarDomainError,
    PolarimetricParams,
    PolarQuad,
    StokesMap,
    average_polarized,
    consistency_residual,
    malus_intensity,
    params_from_quad,
    params_from_stokes,
    quad_from_params,
    quad_from_stokes,
    stokes_from_quad,
)

__version__ = "0.1.0"
