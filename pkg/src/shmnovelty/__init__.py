"""Streaming unsupervised novelty detection for structural health monitoring.

A GAN on windowed FFT magnitudes and a one-class Gaussian on spectral energy
quartiles feed a three-element limit-state system whose thresholds are tuned to
a target reliability index by Monte Carlo sampling of generator output.
"""
__version__ = "0.1.0"

from .engine import (
    BaselineModel,
    DetectionReport,
    EngineConfig,
    GroundTruth,
    detect_iteration,
    evaluate,
    run,
    run_dynamic,
    run_static,
    train_baseline,
    tune_baseline,
)
from .errors import (
    DegenerateFit,
    DegenerateModel,
    DegenerateSpectrum,
    FormatError,
    InsufficientData,
    InvalidData,
    InvalidParameter,
    InvalidState,
    ShmNoveltyError,
    TrainingDiverged,
)
from .features import (
    RawStream,
    TimeSeriesWindow,
    extract_feature_i,
    extract_feature_ii,
    feature_ii_from_feature_i,
    make_windows,
    periodogram,
    window_array,
)
from .gan import GanModel, GanTrainConfig, s_gan, train_gan
from .gaussian import JointGaussian, fit_1cg, fit_gmm2, negative_log_likelihood, s_1cg
from .reliability import (
    DetectionSystem,
    LoadHistogram,
    clean_histogram,
    element_beta_from_system,
    mchs_sample_loads,
    select_threshold,
    system_reliability,
    tune_system,
)
from .synthetic import SyntheticClass, SyntheticSpec, damage_sequence_spec, generate_synthetic
