"""Limit-state detection system and its reliability-based threshold tuning.

The system has three elements with limit state ``g = T - S``:

    failure  <=>  I fails  or  (II fails and III fails)

Element I and III load on percentiles of the discriminator score, element II on
a percentile of the Gaussian score.  Thresholds are tuned on the *analogous*
system, whose loads are read at more extreme percentiles of scores computed on
generator samples (Monte Carlo histogram sampling, MCHS).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFit, DegenerateSpectrum, InvalidParameter, InvalidState
from .features import energy_quartiles
from .gaussian import fit_gmm2

ELEMENT_IDS = ("I", "II", "III")
MAX_RESAMPLE = 10

# --- standard normal ------------------------------------------------------

_SQRT2 = math.sqrt(2.0)

# Acklam's rational approximation coefficients
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_sf(x: float) -> float:
    return 0.5 * math.erfc(x / _SQRT2)


def normal_ppf(p: float) -> float:
    """Inverse standard normal CDF: rational start, then two Newton refinements."""
    if not 0.0 < p < 1.0:
        if p == 0.0:
            return -math.inf
        if p == 1.0:
            return math.inf
        raise InvalidParameter(f"probability {p} outside [0, 1]")
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1))
    elif p <= 1 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1))
    else:
        q = math.sqrt(-2 * math.log1p(-p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1))
    for _ in range(2):
        # work in the smaller tail so the residual keeps its relative precision
        if x > 0:
            err = normal_sf(x) - (1.0 - p)
            x += err * math.sqrt(2 * math.pi) * math.exp(0.5 * x * x)
        else:
            err = normal_cdf(x) - p
            x -= err * math.sqrt(2 * math.pi) * math.exp(0.5 * x * x)
    return x


# --- limit states and system algebra -------------------------------------

def limit_state(threshold: float, load: float) -> float:
    return threshold - load


def fails(threshold: float, load: float) -> bool:
    """An element fails only when its load strictly exceeds the threshold."""
    return load > threshold


def system_reliability(r1: float, r2: float, r3: float) -> float:
    for r in (r1, r2, r3):
        if not 0.0 <= r <= 1.0:
            raise InvalidParameter(f"element reliability {r} outside [0, 1]")
    return r1 * (r2 + r3 - r2 * r3)


@dataclass(frozen=True)
class ReliabilityTargets:
    beta_system: float
    r_system: float
    r_element: float
    beta_element: float
    p_fail_element: float


def _solve_equal_elements(r_system: float, tol: float = 1e-14) -> float:
    # 2R^2 - R^3 is increasing on (0, 1], so plain bisection brackets the root
    lo, hi = 0.0, 1.0
    if 2 * hi * hi - hi ** 3 < r_system:
        raise InvalidParameter("no element reliability in (0, 1] reaches the system target")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if 2 * mid * mid - mid ** 3 < r_system:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def element_beta_from_system(beta_system: float | None = None, r_system: float | None = None) -> ReliabilityTargets:
    """Split a system reliability index equally over the three elements.

    Give either ``beta_system`` or the system reliability ``r_system`` directly.
    """
    if r_system is None:
        if beta_system is None or not beta_system > 0:
            raise InvalidParameter("beta_system must be positive")
        r_system = normal_cdf(beta_system)
        p_sys = normal_sf(beta_system)
    else:
        if not 0.0 < r_system < 1.0:
            raise InvalidParameter("r_system must lie in (0, 1)")
        beta_system = normal_ppf(r_system)
        p_sys = 1.0 - r_system
    r_e = _solve_equal_elements(r_system)
    # polish the element failure probability q = 1 - R on the tail form
    # q + q^2 - q^3 = p_sys, which keeps relative precision when R is close to 1
    q = 1.0 - r_e
    for _ in range(3):
        f = q + q * q - q ** 3 - p_sys
        df = 1 + 2 * q - 3 * q * q
        q -= f / df
    if not 0.0 < q < 1.0:
        q = 1.0 - r_e
    return ReliabilityTargets(beta_system, r_system, 1.0 - q, normal_ppf(1.0 - q) if q > 1e-300 else math.inf, q)


def default_mchs_iterations(beta_system: float) -> int:
    if beta_system <= 3.0:
        return 5000
    return 12500


# --- detection system ----------------------------------------------------

@dataclass
class LimitStateElement:
    id: str
    source: str  # "gan" or "1cg"
    main_percentile: float
    analogous_percentile: float
    threshold: float = math.nan

    def __post_init__(self):
        if self.source not in ("gan", "1cg"):
            raise InvalidParameter(f"unknown score source {self.source!r}")
        for p in (self.main_percentile, self.analogous_percentile):
            if not 0.0 < p < 100.0:
                raise InvalidParameter(f"percentile {p} outside (0, 100)")


def default_elements() -> list[LimitStateElement]:
    return [
        LimitStateElement("I", "gan", 20.0, 80.0),
        LimitStateElement("II", "1cg", 50.0, 50.0),
        LimitStateElement("III", "gan", 50.0, 50.0),
    ]


@dataclass
class DetectionSystem:
    elements: list[LimitStateElement] = field(default_factory=default_elements)
    shared_threshold: bool = False  # T3 := T1
    targets: ReliabilityTargets | None = None
    iterations: int = 0
    seed: int = 0
    v_l: int = 0
    histograms: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if [e.id for e in self.elements] != list(ELEMENT_IDS):
            raise InvalidParameter("detection system needs elements I, II, III in order")

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([e.threshold for e in self.elements])

    def loads(self, gan_scores, cg_scores, analogous: bool = False) -> np.ndarray:
        """Percentile loads for one window batch (1-D inputs) or many (rows)."""
        gan_scores = np.asarray(gan_scores, dtype=np.float64)
        cg_scores = np.asarray(cg_scores, dtype=np.float64)
        out = []
        for e in self.elements:
            scores = gan_scores if e.source == "gan" else cg_scores
            q = e.analogous_percentile if analogous else e.main_percentile
            out.append(np.percentile(scores, q, axis=-1))
        return np.stack(out, axis=-1)

    def failed_elements(self, loads) -> list[str]:
        return [e.id for e, s in zip(self.elements, np.asarray(loads)) if fails(e.threshold, s)]

    def alarm(self, loads) -> bool:
        failed = set(self.failed_elements(loads))
        return "I" in failed or {"II", "III"} <= failed

    def to_dict(self) -> dict:
        return {
            "elements": [
                {"id": e.id, "source": e.source, "main_percentile": e.main_percentile,
                 "analogous_percentile": e.analogous_percentile, "threshold": e.threshold}
                for e in self.elements
            ],
            "shared_threshold": self.shared_threshold,
            "targets": None if self.targets is None else vars(self.targets),
            "iterations": self.iterations,
            "seed": self.seed,
            "v_l": self.v_l,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionSystem":
        return cls(
            elements=[LimitStateElement(**e) for e in d["elements"]],
            shared_threshold=d.get("shared_threshold", False),
            targets=None if d.get("targets") is None else ReliabilityTargets(**d["targets"]),
            iterations=d.get("iterations", 0),
            seed=d.get("seed", 0),
            v_l=d.get("v_l", 0),
        )


def system_from_percentiles(main=(20, 50, 50), analogous=(80, 50, 50), shared_threshold=False) -> DetectionSystem:
    sources = ("gan", "1cg", "gan")
    elements = [LimitStateElement(i, s, float(m), float(a))
                for i, s, m, a in zip(ELEMENT_IDS, sources, main, analogous)]
    return DetectionSystem(elements, shared_threshold)


# --- Monte Carlo histogram sampling -------------------------------------

@dataclass
class LoadHistogram:
    element: str
    samples: np.ndarray
    cleaned: bool = False
    removal_log: list = field(default_factory=list)


def generated_scores(gan, one_cg, n_channels: int, d_l: int, rngs) -> tuple[np.ndarray, np.ndarray]:
    """Generate and score one batch per ``(rng, v_l)`` pair in ``rngs``.

    Returns ``(gan_scores, cg_scores)``, each of shape ``(len(rngs), v_l)``.
    """
    zs = [rng.standard_normal((v_l, gan.latent_dim)) for rng, v_l in rngs]
    f1 = gan.generator(np.concatenate(zs))
    mags = f1.reshape(f1.shape[0], n_channels, d_l // 2)
    bad = np.flatnonzero(np.any(np.sum(mags * mags, axis=-1) <= 0, axis=-1))
    if bad.size:
        f1, mags = _resample_degenerate(gan, f1, mags, bad, rngs)
    f2 = energy_quartiles(mags).reshape(f1.shape[0], -1)
    k = len(rngs)
    v = rngs[0][1]
    return gan.scores(f1).reshape(k, v), one_cg.scores(f2).reshape(k, v)


def _resample_degenerate(gan, f1, mags, bad, rngs):
    v = rngs[0][1]
    f1 = f1.copy()
    for row in bad:
        rng = rngs[row // v][0]
        for _ in range(MAX_RESAMPLE):
            cand = gan.generator(rng.standard_normal((1, gan.latent_dim)))[0]
            if np.all(np.sum(cand.reshape(mags.shape[1], -1) ** 2, axis=-1) > 0):
                f1[row] = cand
                break
        else:
            raise DegenerateSpectrum(f"generator kept producing silent channels ({MAX_RESAMPLE} retries)")
    return f1, f1.reshape(mags.shape)


def iteration_rngs(seed: int, iterations: int) -> list[np.random.Generator]:
    """Independent per-iteration streams, so results do not depend on chunking."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(iterations)]


def mchs_sample_loads(gan, one_cg, n_channels: int, d_l: int, v_l: int, iterations: int, seed: int,
                      system: DetectionSystem | None = None, chunk_rows: int = 4096,
                      analogous: bool = True) -> dict[str, LoadHistogram]:
    """One analogous load sample per element per iteration, each from ``v_l`` fresh generations."""
    if v_l < 2:
        raise InvalidParameter("v_l must be >= 2")
    if iterations < 100:
        raise InvalidParameter("MCHS needs at least 100 iterations")
    system = system or DetectionSystem()
    rngs = iteration_rngs(seed, iterations)
    per_chunk = max(1, chunk_rows // v_l)
    loads = []
    for start in range(0, iterations, per_chunk):
        chunk = [(r, v_l) for r in rngs[start:start + per_chunk]]
        g, c = generated_scores(gan, one_cg, n_channels, d_l, chunk)
        loads.append(system.loads(g, c, analogous=analogous))
    loads = np.concatenate(loads)
    return {eid: LoadHistogram(eid, loads[:, i].copy()) for i, eid in enumerate(ELEMENT_IDS)}


def clean_histogram(h: LoadHistogram, seed: int = 0, max_rounds: int | None = None) -> LoadHistogram:
    """Iterative two-component GMM outlier removal on a load histogram.

    Round ``i`` (from 1) deletes the upper component's samples when the ratio of
    component means exceeds ``i + 1``; the bar rises every round.
    """
    samples = np.asarray(h.samples, dtype=np.float64)
    if samples.size < 4:
        raise InvalidParameter("need at least 4 samples")
    log = list(h.removal_log)
    i = 1
    while max_rounds is None or i <= max_rounds:
        if samples.size < 4:
            break
        try:
            gmm = fit_gmm2(samples, seed)
        except DegenerateFit:
            break
        lower, upper = gmm.means
        if lower <= 0:
            # ratio test is meaningless without a positive lower mean
            break
        ratio = upper / lower
        if not ratio > i + 1:
            break
        keep = gmm.assign(samples) == 0
        log.append({"round": i, "ratio": float(ratio), "lower_mean": float(lower),
                    "upper_mean": float(upper), "removed": int((~keep).sum())})
        samples = samples[keep]
        i += 1
    return LoadHistogram(h.element, samples, True, log)


def select_threshold(h: LoadHistogram, p_fail_element: float) -> float:
    if not 0.0 < p_fail_element < 1.0:
        raise InvalidParameter("p_fail_element must lie in (0, 1)")
    samples = np.asarray(h.samples)
    if samples.size == 0:
        raise InvalidState("cannot pick a threshold from an empty histogram")
    return float(np.quantile(samples, 1.0 - p_fail_element))


def tune_system(gan, one_cg, n_channels: int, d_l: int, v_l: int, beta_system: float,
                iterations: int | None = None, seed: int = 0,
                system: DetectionSystem | None = None) -> DetectionSystem:
    """Set T1, T2, T3 so each analogous element fails with the split failure probability."""
    targets = element_beta_from_system(beta_system)
    iterations = iterations or default_mchs_iterations(beta_system)
    base = system or DetectionSystem()
    tuned = DetectionSystem(
        [LimitStateElement(e.id, e.source, e.main_percentile, e.analogous_percentile) for e in base.elements],
        base.shared_threshold, targets, iterations, seed, v_l,
    )
    raw = mchs_sample_loads(gan, one_cg, n_channels, d_l, v_l, iterations, seed, tuned)
    for e in tuned.elements:
        cleaned = clean_histogram(raw[e.id], seed)
        e.threshold = select_threshold(cleaned, targets.p_fail_element)
        tuned.histograms[e.id] = (raw[e.id], cleaned)
    if tuned.shared_threshold:
        tuned.elements[2].threshold = tuned.elements[0].threshold
    return tuned
