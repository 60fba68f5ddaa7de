"""Off-grid sparse Bayesian delay/Doppler estimation for AFDM sensing."""

from ._kernels import BACKEND
from .afdm import (SPEED_OF_LIGHT, AfdmConfig, TimeFrame, add_cpp, build_config,
                   daft_demodulate, daft_matrix, idaft_modulate, remove_cpp)
from .baselines import run_integer_cs_baseline
from .channel import (Target, add_noise, qam16, random_targets, receive, simulate_echo,
                      target_from_normalized, target_from_physical)
from .dictionary import Dictionary, VirtualGrid, build_dictionary, build_grids
from .errors import (AfdmError, ConditioningError, DimensionError, DivergenceError,
                     DiversityError, GridError, OutOfWindowError, PrefixTooShortError,
                     RangeQuantizationWarning)
from .sbl import EstimateResult, PriorParams, run_offgrid_sbl, run_ongrid_baseline

__version__ = "0.1.0"
