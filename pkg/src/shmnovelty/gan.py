"""Fully-connected GAN over feature-I vectors and the discriminator score."""
from __future__ import annotations

import json
import struct
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import FormatError, InvalidParameter, TrainingDiverged
from .features import FEATURE_CAP
from .neural import AdamState, Mlp, adam_step, backward, forward, init_mlp, mlp_from_bytes, mlp_to_bytes

GAN_MAGIC = b"SHMGAN\x00\x01"


@dataclass
class GanTrainConfig:
    epochs: int = 5000
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    latent_dim: int = 200
    generator_hidden: tuple = (512, 1024, 2048)
    discriminator_hidden: tuple = (1024, 512, 256)
    leaky_slope: float = 0.2
    eps: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        self.generator_hidden = tuple(int(h) for h in self.generator_hidden)
        self.discriminator_hidden = tuple(int(h) for h in self.discriminator_hidden)
        if self.epochs < 1:
            raise InvalidParameter("epochs must be >= 1")
        if self.latent_dim < 1:
            raise InvalidParameter("latent_dim must be >= 1")


@dataclass
class GanModel:
    generator: Mlp
    discriminator: Mlp
    latent_dim: int
    eps: float = 1e-12
    # per epoch: (discriminator BCE, generator non-saturating loss)
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    # the discriminator loss in its literal log(OR) + log(OF) form, kept for plots only
    printed_dl_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def feature_length(self) -> int:
        return self.generator.n_out

    def generate(self, count: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((count, self.latent_dim))
        return self.generator(z)

    def discriminate(self, f1) -> np.ndarray:
        f1 = np.asarray(f1, dtype=np.float64)
        if f1.shape[-1] != self.discriminator.n_in:
            raise InvalidParameter(f"feature length {f1.shape[-1]} != discriminator input {self.discriminator.n_in}")
        return self.discriminator(f1)[:, 0]

    def scores(self, f1) -> np.ndarray:
        """S_GAN for a batch of feature-I rows."""
        return -np.log10(np.maximum(self.discriminate(f1), self.eps))


def s_gan(model: GanModel, f1) -> float:
    """-log10 of the discriminator output; 0 for a confident 'real', up to -log10(eps)."""
    f1 = np.asarray(f1, dtype=np.float64)
    if f1.ndim != 1:
        raise InvalidParameter("s_gan scores a single feature vector; use GanModel.scores for batches")
    return float(model.scores(f1[None])[0])


def build_gan(feature_length: int, cfg: GanTrainConfig, rng: np.random.Generator) -> tuple[Mlp, Mlp]:
    hidden = ("leaky_relu", cfg.leaky_slope)
    g_sizes = [cfg.latent_dim, *cfg.generator_hidden, feature_length]
    d_sizes = [feature_length, *cfg.discriminator_hidden, 1]
    gen = init_mlp(g_sizes, [hidden] * len(cfg.generator_hidden) + [("scaled_sigmoid", FEATURE_CAP)], rng)
    disc = init_mlp(d_sizes, [hidden] * len(cfg.discriminator_hidden) + ["sigmoid"], rng)
    return gen, disc


def train_gan(training_features, cfg: GanTrainConfig | None = None, progress=None) -> GanModel:
    """Full-batch alternating training: one discriminator step, then one generator step per epoch."""
    cfg = cfg or GanTrainConfig()
    real = np.asarray(training_features, dtype=np.float64)
    if real.ndim != 2 or real.shape[0] == 0:
        raise InvalidParameter("training set must be a non-empty (T_L, F) matrix")
    if real.shape[0] < 2:
        raise InvalidParameter("need at least 2 training vectors")
    if real.min() < 0 or real.max() > FEATURE_CAP or not np.all(np.isfinite(real)):
        raise InvalidParameter("feature entries must lie in [0, 10]")
    b, flen = real.shape
    if cfg.generator_hidden and flen <= cfg.generator_hidden[-1]:
        warnings.warn(
            f"feature length {flen} does not exceed the generator's penultimate width "
            f"{cfg.generator_hidden[-1]}",
            stacklevel=2,
        )

    init_ss, noise_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    gen, disc = build_gan(flen, cfg, np.random.default_rng(init_ss))
    noise = np.random.default_rng(noise_ss)
    hyper = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    g_opt = AdamState.for_params(gen.params(), **hyper)
    d_opt = AdamState.for_params(disc.params(), **hyper)
    eps = cfg.eps
    history = np.empty((cfg.epochs, 2))
    printed = np.empty(cfg.epochs)

    for epoch in range(cfg.epochs):
        # discriminator: real -> 1, fake -> 0
        fake = gen(noise.standard_normal((b, cfg.latent_dim)))
        o_r, cache_r = forward(disc, real)
        o_f, cache_f = forward(disc, fake)
        dl = -np.mean(np.log(o_r + eps) + np.log(1.0 - o_f + eps))
        printed[epoch] = -np.mean(np.log(o_r + eps) + np.log(o_f + eps))
        grads_r, _ = backward(disc, cache_r, -1.0 / (o_r + eps) / b, input_grad=False)
        grads_f, _ = backward(disc, cache_f, 1.0 / (1.0 - o_f + eps) / b, input_grad=False)
        adam_step(disc.params(), [x + y for x, y in zip(grads_r, grads_f)], d_opt)
        disc.touch()

        # generator: non-saturating loss, gradient flows through the frozen discriminator
        fake, cache_g = forward(gen, noise.standard_normal((b, cfg.latent_dim)))
        o_f, cache_f = forward(disc, fake)
        gl = -np.mean(np.log(o_f + eps))
        _, d_input = backward(disc, cache_f, -1.0 / (o_f + eps) / b)
        grads_g, _ = backward(gen, cache_g, d_input, input_grad=False)
        adam_step(gen.params(), grads_g, g_opt)
        gen.touch()

        if not (np.isfinite(dl) and np.isfinite(gl)):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        history[epoch] = dl, gl
        if progress is not None:
            progress(epoch, dl, gl)

    return GanModel(gen, disc, cfg.latent_dim, eps, history, printed)


def gan_to_bytes(model: GanModel) -> bytes:
    manifest = json.dumps(
        {"latent_dim": model.latent_dim, "feature_length": model.feature_length, "eps": model.eps,
         "epochs": int(model.loss_history.shape[0])},
        sort_keys=True,
    ).encode()
    blobs = [
        manifest,
        mlp_to_bytes(model.generator),
        mlp_to_bytes(model.discriminator),
        np.ascontiguousarray(model.loss_history, "<f8").tobytes(),
        np.ascontiguousarray(model.printed_dl_history, "<f8").tobytes(),
    ]
    return GAN_MAGIC + b"".join(struct.pack("<Q", len(x)) + x for x in blobs)


def gan_from_bytes(buf: bytes) -> GanModel:
    if bytes(buf[:8]) != GAN_MAGIC:
        raise FormatError("bad GAN bundle magic", 0)
    off = 8
    blobs = []
    for _ in range(5):
        if off + 8 > len(buf):
            raise FormatError("truncated GAN bundle", off)
        (n,) = struct.unpack_from("<Q", buf, off)
        off += 8
        if off + n > len(buf):
            raise FormatError("truncated GAN bundle section", off)
        blobs.append(bytes(buf[off:off + n]))
        off += n
    manifest = json.loads(blobs[0])
    gen, disc = mlp_from_bytes(blobs[1]), mlp_from_bytes(blobs[2])
    if gen.n_out != manifest["feature_length"] or disc.n_in != manifest["feature_length"]:
        raise FormatError("GAN manifest does not match network shapes")
    history = np.frombuffer(blobs[3], "<f8").astype(np.float64).reshape(-1, 2)
    printed = np.frombuffer(blobs[4], "<f8").astype(np.float64)
    return GanModel(gen, disc, int(manifest["latent_dim"]), float(manifest["eps"]), history, printed)


def config_dict(cfg: GanTrainConfig) -> dict:
    d = asdict(cfg)
    d["generator_hidden"] = list(cfg.generator_hidden)
    d["discriminator_hidden"] = list(cfg.discriminator_hidden)
    return d
