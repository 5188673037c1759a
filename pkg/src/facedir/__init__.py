"""Facing-direction inference from multi-device microphone recordings.

Simulation-backed library and CLI: blind iterative line-of-sight channel
extraction, GCC-PHAT angle of arrival, peer-to-peer device localization,
user triangulation, and radiation-pattern matching.
"""

from .aoa import AoAEstimate, estimate_aoa, estimate_aoa_from_channels, gcc_phat, steering_delays
from .dsp import (
    ImpulseResponse,
    Signal,
    align_correlate,
    convolve,
    cross_correlate,
    deconvolve,
    delay_sum_aoa,
    fractional_delay,
)
from .facing import (
    FacingDecision,
    IterationTrace,
    PipelineParams,
    equalize,
    estimate_channels,
    extract_los_power,
    infer,
    match_pattern,
)
from .locate import (
    DeviceLayout,
    LocalizationError,
    PairwiseAoas,
    UserLocation,
    filter_reliable,
    layout_from_scene,
    p2p_localize,
    triangulate,
)
from .scene import (
    ConfigError,
    DevicePose,
    RadiationPattern,
    Room,
    Scene,
    UserPose,
    builtin_pattern,
    builtin_patterns,
    load_scene,
    mic_positions,
    pattern_gain,
    save_scene,
)
from .simulate import GroundTruth, make_source, record, sparse_channels, synth_channel

__version__ = "0.1.0"
