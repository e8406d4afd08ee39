"""Reconstruction engines: DIP, temporal-TV CS, backprojection, overlap."""

from tddip.recon.baselines import bp_reconstruct, ov_reconstruct
from tddip.recon.common import ReconResult
from tddip.recon.cs import CsConfig, cs_reconstruct, expand_bins
from tddip.recon.dip import DipConfig, DipModel, dip_infer, dip_reconstruct, dip_train

__all__ = [
    "CsConfig",
    "DipConfig",
    "DipModel",
    "ReconResult",
    "bp_reconstruct",
    "cs_reconstruct",
    "dip_infer",
    "dip_reconstruct",
    "dip_train",
    "expand_bins",
    "ov_reconstruct",
]
