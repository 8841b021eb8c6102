"""One-class joint Gaussian (1-CG) over feature-II vectors, and a 1-D two-component GMM."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateFit, DegenerateModel, FormatError, InvalidParameter

LOG_2PI = np.log(2.0 * np.pi)
SHRINKAGE = 1e-6
_ABS_FLOOR = 1e-12
ONE_CG_MAGIC = b"SHM1CG\x00\x01"


@dataclass
class JointGaussian:
    mean: np.ndarray
    covariance: np.ndarray
    shrinkage: float
    training_mean_nl: float = np.nan
    # subtracted from NL before the ratio; 0 gives the plain NL ratio, NL(mean)
    # gives the excess over the density's mode (always >= 0, unit-free)
    score_offset: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        self._chol = cho_factor(self.covariance, lower=True)
        self._logdet = 2.0 * np.sum(np.log(np.diag(self._chol[0])))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def logdet(self) -> float:
        return float(self._logdet)

    def nl(self, x) -> np.ndarray:
        """Negative log-likelihood of each row of ``x`` (or of a single vector)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise InvalidParameter(f"dimension {x.shape[-1]} != model dimension {self.dim}")
        d = (np.atleast_2d(x) - self.mean).T
        maha = np.sum(d * cho_solve(self._chol, d), axis=0)
        out = 0.5 * (maha + self._logdet + self.dim * LOG_2PI)
        return out if x.ndim > 1 else out[0]

    @property
    def score_mode(self) -> str:
        return "literal" if self.score_offset == 0.0 else "excess"

    def scores(self, f2) -> np.ndarray:
        """S_1-CG: NL of each row divided by the training-set average NL.

        In ``excess`` mode both terms are measured above NL(mean).
        """
        denom = self.training_mean_nl - self.score_offset
        if denom == 0 or not np.isfinite(denom):
            raise DegenerateModel("training mean negative log-likelihood is zero or undefined")
        return (np.atleast_1d(self.nl(f2)) - self.score_offset) / denom


def fit_1cg(f2_set, shrinkage: float = SHRINKAGE, score_mode: str = "literal") -> JointGaussian:
    """Maximum-likelihood mean/covariance plus a ridge of ``shrinkage * trace / dim``.

    With a single component, EM converges in one step to this closed form.
    """
    x = np.asarray(f2_set, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidParameter("need at least 2 feature-II vectors")
    if score_mode not in ("literal", "excess"):
        raise InvalidParameter(f"unknown score mode {score_mode!r}")
    mu = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False, bias=True))
    lam = max(shrinkage * np.trace(cov) / x.shape[1], _ABS_FLOOR)
    cov = 0.5 * (cov + cov.T) + lam * np.eye(x.shape[1])
    model = JointGaussian(mu, cov, lam)
    model.training_mean_nl = float(np.mean(model.nl(x)))
    if score_mode == "excess":
        model.score_offset = float(model.nl(mu))
    return model


def negative_log_likelihood(model: JointGaussian, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidParameter("expected a single vector")
    return float(model.nl(x))


def s_1cg(model: JointGaussian, f2) -> float:
    return float(model.scores(np.asarray(f2, dtype=np.float64)[None])[0])


def one_cg_to_bytes(model: JointGaussian) -> bytes:
    d = model.dim
    head = struct.pack("<Qdddd", d, model.shrinkage, model.training_mean_nl, model.score_offset, model.logdet)
    return (ONE_CG_MAGIC + head + model.mean.astype("<f8").tobytes()
            + model.covariance.astype("<f8").tobytes(order="C"))


def one_cg_from_bytes(buf: bytes) -> JointGaussian:
    if bytes(buf[:8]) != ONE_CG_MAGIC:
        raise FormatError("bad 1-CG magic", 0)
    if len(buf) < 48:
        raise FormatError("truncated 1-CG header", 8)
    d, lam, mean_nl, offset, _ = struct.unpack_from("<Qdddd", buf, 8)
    need = 48 + 8 * (d + d * d)
    if len(buf) != need:
        raise FormatError(f"1-CG payload length {len(buf)} != expected {need}", min(len(buf), need))
    mu = np.frombuffer(buf, "<f8", d, 48).astype(np.float64)
    cov = np.frombuffer(buf, "<f8", d * d, 48 + 8 * d).astype(np.float64).reshape(d, d)
    return JointGaussian(mu, cov, lam, mean_nl, offset)


@dataclass
class Gmm2:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    n_iter: int
    ll_trace: list

    def responsibilities(self, x) -> np.ndarray:
        return _responsibilities(np.asarray(x, dtype=np.float64), self.weights, self.means, self.variances)[0]

    def assign(self, x) -> np.ndarray:
        """Index (0 = lower mean, 1 = upper mean) of the more responsible component."""
        r = self.responsibilities(x)
        return (r[:, 1] > r[:, 0]).astype(int)


def _responsibilities(x, w, mu, var):
    logp = (np.log(w)[None, :] - 0.5 * (np.log(2 * np.pi * var)[None, :]
            + (x[:, None] - mu[None, :]) ** 2 / var[None, :]))
    top = logp.max(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(np.exp(logp - top).sum(axis=1))
    return np.exp(logp - lse[:, None]), float(lse.sum())


def fit_gmm2(samples, seed: int = 0, tol: float = 1e-8, max_iter: int = 500) -> Gmm2:
    """EM for a two-component 1-D mixture, initialised by a median split.

    ``seed`` is accepted for interface stability; the median-split start makes
    the fit deterministic without it.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 4:
        raise InvalidParameter("need at least 4 samples")
    span = x.max() - x.min()
    if not span > 0:
        raise DegenerateFit("all samples identical")
    floor = 1e-12 * span ** 2
    xs = np.sort(x)
    lo, hi = xs[: x.size // 2], xs[x.size // 2:]
    w = np.array([0.5, 0.5])
    mu = np.array([lo.mean(), hi.mean()])
    var = np.maximum([lo.var(), hi.var()], floor)

    resp, ll = _responsibilities(x, w, mu, var)
    trace = [ll]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        nk = resp.sum(axis=0)
        if np.any(nk <= 0):
            break
        w = nk / x.size
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = np.maximum((resp * (x[:, None] - mu) ** 2).sum(axis=0) / nk, floor)
        resp, new_ll = _responsibilities(x, w, mu, var)
        trace.append(new_ll)
        improvement = new_ll - ll
        ll = new_ll
        if improvement < tol:
            break
    order = np.argsort(mu, kind="stable")
    return Gmm2(w[order], mu[order], var[order], ll, n_iter, trace)
