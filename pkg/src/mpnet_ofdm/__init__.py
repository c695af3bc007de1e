"""Sparse-recovery OFDM channel estimation with matching pursuit and its unfolded, learnable variant."""

from .signal_core import (
    AntennaGains,
    ChannelSample,
    Dictionary,
    ImpairmentSpec,
    NoisyObservation,
    SystemConfig,
    add_noise,
    build_delay_grid,
    build_dictionary,
    build_nominal_grid,
    generate_channel,
    impaired_system,
)
from .sparse_mp import HierarchicalSearch, mp_denoise, mp_denoise_hierarchical, optimal_branching
from .unfolded import ConstrainedParams, MPNet, UnconstrainedParams, count_parameters

__all__ = [
    "AntennaGains", "ChannelSample", "ConstrainedParams", "Dictionary", "HierarchicalSearch",
    "ImpairmentSpec", "MPNet", "NoisyObservation", "SystemConfig", "UnconstrainedParams", "add_noise",
    "build_delay_grid", "build_dictionary", "build_nominal_grid", "count_parameters", "generate_channel",
    "impaired_system", "mp_denoise", "mp_denoise_hierarchical", "optimal_branching",
]
