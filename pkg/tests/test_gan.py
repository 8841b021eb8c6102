import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shmnovelty.errors import FormatError, InvalidParameter
from shmnovelty.gan import GanModel, GanTrainConfig, build_gan, gan_from_bytes, gan_to_bytes, s_gan, train_gan

SMALL = dict(latent_dim=8, generator_hidden=(32,), discriminator_hidden=(32,))


@pytest.fixture(scope="module")
def flat_gan():
    rng = np.random.default_rng(0)
    real = np.clip(2.0 + 0.1 * rng.standard_normal((40, 48)), 0, 10)
    cfg = GanTrainConfig(epochs=300, seed=1, **SMALL)
    return real, cfg, train_gan(real, cfg)


def constant_disc_model(output):
    gen, disc = build_gan(4, GanTrainConfig(epochs=1, **SMALL), np.random.default_rng(0))
    last = disc.layers[-1]
    last.weights[:] = 0
    last.biases[:] = np.log(output / (1 - output)) if 0 < output < 1 else np.sign(output - 0.5) * 1e3
    return GanModel(gen, disc, 8)


def test_loss_history_length(flat_gan):
    _, cfg, model = flat_gan
    assert model.loss_history.shape == (cfg.epochs, 2)
    assert model.printed_dl_history.shape == (cfg.epochs,)
    assert np.all(np.isfinite(model.loss_history))


def test_training_separates_real_from_random(flat_gan):
    real, _, model = flat_gan
    uniform = np.random.default_rng(5).uniform(0, 10, size=(200, real.shape[1]))
    assert model.discriminate(real).mean() > model.discriminate(uniform).mean()
    assert model.scores(real).mean() < model.scores(uniform).mean()


def test_training_deterministic(flat_gan):
    real, cfg, model = flat_gan
    again = train_gan(real, GanTrainConfig(**{**cfg.__dict__, "epochs": 50}))
    np.testing.assert_array_equal(again.loss_history, model.loss_history[:50])


def test_generate_shape_range_and_repeatability(flat_gan):
    _, _, model = flat_gan
    a = model.generate(64, np.random.default_rng(3))
    b = model.generate(64, np.random.default_rng(3))
    assert a.shape == (64, 48)
    np.testing.assert_array_equal(a, b)
    assert np.all((a > 0) & (a < 10))


def test_generator_output_length_for_fifteen_channels():
    gen, disc = build_gan(7500, GanTrainConfig(latent_dim=200, generator_hidden=(16,), discriminator_hidden=(4,)),
                          np.random.default_rng(0))
    model = GanModel(gen, disc, 200)
    assert model.generate(2, np.random.default_rng(0)).shape == (2, 7500)


@pytest.mark.parametrize("o_dis, expected", [(1.0, 0.0), (0.1, 1.0), (1e-6, 6.0)])
def test_s_gan_values(o_dis, expected):
    model = constant_disc_model(o_dis)
    assert s_gan(model, np.zeros(4)) == pytest.approx(expected, abs=1e-9)


def test_s_gan_clamped():
    model = constant_disc_model(0.0)
    assert s_gan(model, np.zeros(4)) == pytest.approx(12.0)


@given(st.floats(1e-15, 1 - 1e-9), st.floats(1e-15, 1 - 1e-9))
def test_s_gan_monotone_and_non_negative(a, b):
    sa = s_gan(constant_disc_model(a), np.zeros(4))
    sb = s_gan(constant_disc_model(b), np.zeros(4))
    assert 0 <= sa <= 12 and 0 <= sb <= 12
    if a < b:
        assert sa >= sb


def test_s_gan_length_mismatch(flat_gan):
    with pytest.raises(InvalidParameter):
        s_gan(flat_gan[2], np.zeros(47))


@pytest.mark.parametrize("bad", [np.zeros((0, 4)), np.zeros((1, 4)), np.full((3, 4), 11.0), -np.ones((3, 4))])
def test_train_rejects_bad_input(bad):
    with pytest.raises(InvalidParameter):
        train_gan(bad, GanTrainConfig(epochs=1, **SMALL))


def test_penultimate_width_warning():
    with pytest.warns(UserWarning):
        train_gan(np.ones((3, 8)), GanTrainConfig(epochs=1, latent_dim=4, generator_hidden=(16,), discriminator_hidden=(4,)))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        train_gan(np.ones((3, 8)), GanTrainConfig(epochs=1, latent_dim=4, generator_hidden=(4,), discriminator_hidden=(4,)))


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(latent_dim=0)])
def test_config_validation(kw):
    with pytest.raises(InvalidParameter):
        GanTrainConfig(**kw)


def test_bundle_round_trip(flat_gan):
    model = flat_gan[2]
    back = gan_from_bytes(gan_to_bytes(model))
    assert back.generator == model.generator and back.discriminator == model.discriminator
    assert back.latent_dim == model.latent_dim and back.eps == model.eps
    np.testing.assert_array_equal(back.loss_history, model.loss_history)
    x = np.random.default_rng(0).uniform(0, 10, (5, 48))
    np.testing.assert_array_equal(back.scores(x), model.scores(x))


def test_bundle_corruption(flat_gan):
    buf = gan_to_bytes(flat_gan[2])
    with pytest.raises(FormatError):
        gan_from_bytes(b"BADMAGIC" + buf[8:])
    with pytest.raises(FormatError):
        gan_from_bytes(buf[: len(buf) // 2])
