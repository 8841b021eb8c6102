"""Train / tune / detect orchestration in static- or dynamic-baseline mode."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InsufficientData, InvalidParameter
from .features import feature_i_batch, feature_ii_batch
from .gan import GanModel, GanTrainConfig, config_dict, train_gan
from .gaussian import JointGaussian, fit_1cg
from .reliability import DetectionSystem, system_from_percentiles, tune_system

log = logging.getLogger(__name__)

MODES = ("static", "dynamic")


@dataclass
class EngineConfig:
    d_l: int = 256
    t_l: int = 100
    v_l: int = 10
    beta: float = 3.0
    mode: str = "dynamic"
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    mchs_iterations: int | None = None
    seed: int = 0
    cap: str = "clip"
    cg_score: str = "excess"
    shrinkage: float = 1e-6
    main_percentiles: tuple = (20.0, 50.0, 50.0)
    analogous_percentiles: tuple = (80.0, 50.0, 50.0)
    shared_threshold: bool = False

    def __post_init__(self):
        if isinstance(self.gan, dict):
            self.gan = GanTrainConfig(**self.gan)
        self.main_percentiles = tuple(float(p) for p in self.main_percentiles)
        self.analogous_percentiles = tuple(float(p) for p in self.analogous_percentiles)
        if self.t_l < 2:
            raise InvalidParameter("t_l must be >= 2")
        if self.v_l < 2:
            raise InvalidParameter("v_l must be >= 2")
        if not self.beta > 0:
            raise InvalidParameter("beta must be positive")
        if self.mode not in MODES:
            raise InvalidParameter(f"mode must be one of {MODES}")
        if self.d_l < 4 or self.d_l % 2:
            raise InvalidParameter("d_l must be even and >= 4")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gan"] = config_dict(self.gan)
        d["main_percentiles"] = list(self.main_percentiles)
        d["analogous_percentiles"] = list(self.analogous_percentiles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        return cls(**d)


@dataclass
class BaselineModel:
    class_index: int
    gan: GanModel
    one_cg: JointGaussian
    system: DetectionSystem | None
    train_range: tuple[int, int]
    n_channels: int
    d_l: int

    @property
    def tuned(self) -> bool:
        return self.system is not None

    def loads(self, f1, f2) -> np.ndarray:
        return self.system.loads(self.gan.scores(f1), self.one_cg.scores(f2))


@dataclass
class AlarmEvent:
    iteration: int
    window_range: tuple[int, int]
    failed: list[str]
    loads: list[float]
    baseline: int = 0
    label: str = ""  # "true" / "false" once evaluated
    class_index: int | None = None


@dataclass
class IterationRecord:
    iteration: int
    start: int
    end: int
    baseline: int
    loads: list[float]
    thresholds: list[float]
    alarm: bool
    failed: list[str]


@dataclass
class GroundTruth:
    boundaries: list[int]

    def __post_init__(self):
        self.boundaries = [int(b) for b in self.boundaries]
        if any(b2 <= b1 for b1, b2 in zip(self.boundaries, self.boundaries[1:])):
            raise InvalidParameter("class boundaries must be strictly increasing")

    def class_of(self, window: int) -> int:
        return int(np.searchsorted(self.boundaries, window, side="right"))


@dataclass
class DetectionReport:
    mode: str
    v_l: int
    t_l: int
    iterations: list[IterationRecord] = field(default_factory=list)
    alarms: list[AlarmEvent] = field(default_factory=list)
    baselines: list[dict] = field(default_factory=list)
    incomplete: bool = False
    outcomes: dict = field(default_factory=dict)
    false_alarms: int | None = None
    false_alarm_ratio: float | None = None

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionReport":
        d = dict(d)
        d["iterations"] = [IterationRecord(**r) for r in d["iterations"]]
        d["alarms"] = [AlarmEvent(**{**a, "window_range": tuple(a["window_range"])}) for a in d["alarms"]]
        d["outcomes"] = {int(k): v for k, v in d.get("outcomes", {}).items()}
        return cls(**d)


# --- phases -------------------------------------------------------------

def _derived_seeds(master: int, class_index: int) -> tuple[int, int]:
    gan_seed, mchs_seed = np.random.SeedSequence([master, class_index]).generate_state(2)
    return int(gan_seed), int(mchs_seed)


def train_baseline(windows, cfg: EngineConfig, class_index: int = 0, start: int = 0,
                   features: tuple | None = None) -> BaselineModel:
    """Fit GAN (feature I) and 1-CG (feature II) on exactly ``t_l`` windows."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.shape[0] != cfg.t_l:
        raise InvalidParameter(f"expected {cfg.t_l} training windows, got {windows.shape[0]}")
    f1, f2 = features if features is not None else (feature_i_batch(windows, cfg.cap), feature_ii_batch(windows))
    gan_seed, _ = _derived_seeds(cfg.seed, class_index)
    log.info("training baseline %d on windows [%d, %d)", class_index, start, start + cfg.t_l)
    gan = train_gan(f1, replace(cfg.gan, seed=gan_seed))
    one_cg = fit_1cg(f2, cfg.shrinkage, cfg.cg_score)
    return BaselineModel(class_index, gan, one_cg, None, (start, start + cfg.t_l), windows.shape[1], windows.shape[2])


def tune_baseline(baseline: BaselineModel, cfg: EngineConfig, v_l: int | None = None) -> BaselineModel:
    _, mchs_seed = _derived_seeds(cfg.seed, baseline.class_index)
    template = system_from_percentiles(cfg.main_percentiles, cfg.analogous_percentiles, cfg.shared_threshold)
    baseline.system = tune_system(
        baseline.gan, baseline.one_cg, baseline.n_channels, baseline.d_l, v_l or cfg.v_l, cfg.beta,
        cfg.mchs_iterations, mchs_seed, template,
    )
    log.info("baseline %d thresholds %s", baseline.class_index, np.round(baseline.system.thresholds, 4))
    return baseline


def detect_iteration(baseline: BaselineModel, windows, iteration: int = 0, start: int = 0,
                     features: tuple | None = None, cap: str = "clip") -> AlarmEvent | None:
    record = _score_batch(baseline, windows, iteration, start, features, cap)
    return _alarm_from(record) if record.alarm else None


def _score_batch(baseline, windows, iteration, start, features=None, cap="clip") -> IterationRecord:
    if features is None:
        windows = np.asarray(windows, dtype=np.float64)
        features = feature_i_batch(windows, cap), feature_ii_batch(windows)
    f1, f2 = features
    if baseline.system is not None and baseline.system.v_l and f1.shape[0] != baseline.system.v_l:
        raise InvalidParameter(f"expected {baseline.system.v_l} windows per iteration, got {f1.shape[0]}")
    loads = baseline.loads(f1, f2)
    failed = baseline.system.failed_elements(loads)
    return IterationRecord(iteration, start, start + f1.shape[0], baseline.class_index,
                           [float(x) for x in loads], [float(x) for x in baseline.system.thresholds],
                           baseline.system.alarm(loads), failed)


def _alarm_from(record: IterationRecord) -> AlarmEvent:
    return AlarmEvent(record.iteration, (record.start, record.end), list(record.failed),
                      list(record.loads), record.baseline)


def _baseline_summary(b: BaselineModel, complete: bool = True) -> dict:
    return {
        "class_index": b.class_index,
        "train_range": list(b.train_range),
        "thresholds": None if b.system is None else [float(x) for x in b.system.thresholds],
        "complete": complete,
    }


class _Features:
    """Feature I / II for the whole stream, computed once."""

    def __init__(self, windows, cap):
        self.f1 = feature_i_batch(windows, cap)
        self.f2 = feature_ii_batch(windows)

    def __call__(self, a, b):
        return self.f1[a:b], self.f2[a:b]


def _check_stream(windows, cfg):
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[2] != cfg.d_l:
        raise InvalidParameter(f"windows must be (W, N, {cfg.d_l})")
    if windows.shape[0] < cfg.t_l + cfg.v_l:
        raise InsufficientData("stream too short for training plus one detection iteration")
    return windows


def run_static(windows, cfg: EngineConfig, baseline: BaselineModel | None = None) -> DetectionReport:
    """Train and tune once on the first ``t_l`` windows, then scan the rest."""
    windows = _check_stream(windows, cfg)
    feats = _Features(windows, cfg.cap)
    if baseline is None:
        baseline = train_baseline(windows[: cfg.t_l], cfg, 0, 0, feats(0, cfg.t_l))
    if not baseline.tuned:
        tune_baseline(baseline, cfg)
    report = DetectionReport("static", cfg.v_l, cfg.t_l, baselines=[_baseline_summary(baseline)])
    for it, start in enumerate(range(cfg.t_l, windows.shape[0] - cfg.v_l + 1, cfg.v_l)):
        rec = _score_batch(baseline, None, it, start, feats(start, start + cfg.v_l))
        report.iterations.append(rec)
        if rec.alarm:
            report.alarms.append(_alarm_from(rec))
    return report


def run_dynamic(windows, cfg: EngineConfig, truth: GroundTruth | None = None,
                baseline: BaselineModel | None = None) -> DetectionReport:
    """Retrain and retune on the ``t_l`` windows following every alarm.

    With ``truth`` given, alarms judged false are logged but do not trigger
    retraining, matching the false-alarm counting protocol.
    """
    windows = _check_stream(windows, cfg)
    feats = _Features(windows, cfg.cap)
    total = windows.shape[0]
    if baseline is None:
        baseline = train_baseline(windows[: cfg.t_l], cfg, 0, 0, feats(0, cfg.t_l))
    if not baseline.tuned:
        tune_baseline(baseline, cfg)
    report = DetectionReport("dynamic", cfg.v_l, cfg.t_l, baselines=[_baseline_summary(baseline)])
    judge = _AlarmJudge(truth, cfg.v_l, "dynamic") if truth is not None else None
    pos, it = baseline.train_range[1], 0
    while pos + cfg.v_l <= total:
        rec = _score_batch(baseline, None, it, pos, feats(pos, pos + cfg.v_l))
        report.iterations.append(rec)
        it += 1
        pos += cfg.v_l
        if not rec.alarm:
            continue
        alarm = _alarm_from(rec)
        report.alarms.append(alarm)
        if judge is not None and judge.judge(alarm) == "false":
            continue
        if pos + cfg.t_l > total:
            report.incomplete = True
            report.baselines.append({"class_index": baseline.class_index + 1,
                                     "train_range": [pos, total], "thresholds": None, "complete": False})
            log.info("stream ended while collecting retraining windows")
            break
        baseline = train_baseline(windows[pos: pos + cfg.t_l], cfg, baseline.class_index + 1, pos,
                                  feats(pos, pos + cfg.t_l))
        tune_baseline(baseline, cfg)
        report.baselines.append(_baseline_summary(baseline))
        pos += cfg.t_l
    return report


def run(windows, cfg: EngineConfig, truth: GroundTruth | None = None) -> DetectionReport:
    if cfg.mode == "static":
        report = run_static(windows, cfg)
    else:
        report = run_dynamic(windows, cfg, truth)
    if truth is not None:
        evaluate(report, truth, cfg.v_l)
    return report


# --- evaluation ---------------------------------------------------------

class _AlarmJudge:
    """Labels alarms true/false against class boundaries.

    An alarm is attributed to the class containing ``start + v_l`` (so an alarm
    up to ``v_l`` windows before a boundary counts for the new class).  In the
    normal class it is always false.  In dynamic mode only the first alarm
    attributed to a damage class is true; in static mode every alarm inside a
    damage class is true, since all damage is novel against the normal baseline.
    """

    def __init__(self, truth: GroundTruth, v_l: int, mode: str):
        self.truth = truth
        self.v_l = v_l
        self.mode = mode
        self.claimed: dict[int, AlarmEvent] = {}

    def judge(self, alarm: AlarmEvent) -> str:
        cls = self.truth.class_of(alarm.window_range[0] + self.v_l)
        if cls == 0:
            label = "false"
        elif cls not in self.claimed:
            self.claimed[cls] = alarm
            label = "true"
        else:
            label = "true" if self.mode == "static" else "false"
        alarm.label = label
        alarm.class_index = cls if label == "true" else None
        return label


def evaluate(report: DetectionReport, truth: GroundTruth, v_l: int | None = None) -> DetectionReport:
    """Fill alarm labels, per-class outcomes and the false-alarm ratio."""
    v_l = v_l or report.v_l
    if truth.boundaries and truth.boundaries[0] < report.t_l:
        raise InvalidParameter("first class boundary must not precede the end of training")
    judge = _AlarmJudge(truth, v_l, report.mode)
    for alarm in report.alarms:
        judge.judge(alarm)
    bounds = truth.boundaries + [math.inf]
    outcomes = {}
    for cls in range(1, len(truth.boundaries) + 1):
        lo, hi = bounds[cls - 1], bounds[cls]
        alarm = judge.claimed.get(cls)
        if alarm is None:
            outcomes[cls] = {"outcome": "undetected", "delay": None}
            continue
        delay = sum(1 for r in report.iterations
                    if r.end > lo and r.start < hi and r.start < alarm.window_range[0])
        outcomes[cls] = {"outcome": "detected-on-time" if delay == 0 else "detected-with-delay", "delay": delay}
    report.outcomes = outcomes
    report.false_alarms = sum(1 for a in report.alarms if a.label == "false")
    report.false_alarm_ratio = report.false_alarms / report.n_iterations if report.n_iterations else 0.0
    return report
