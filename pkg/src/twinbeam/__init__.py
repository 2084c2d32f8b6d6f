"""Simulation and analysis of sub-shot-noise imaging with spatially correlated twin beams."""
from .frames import (FramePairStack, OpticsConstants, PhotonFrame, Region, RegionPair, load_frame,
                     load_stack, read_frame, save_frame, save_stack, write_frame)
from .sim import Geometry, SampleMask, TwinBeamParams, generate_pair_poisson, generate_pair_thermal
from .estimators import fano, nrf_spatial, nrf_tiles, xcorr_map
from .pipeline import (AlphaMap, FlatField, alpha_dc, alpha_direct, alpha_ssn, build_flat_field,
                       qe_filter, snr_stripe)
from .fit import FitResult, NrfCurve, fit_nrf_curve, predict_curve

__version__ = "0.1.0"
