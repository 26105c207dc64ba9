"""
Tests for encoding, decoding and translation through DomainModels.
"""

import numpy as np
import pytest

from ucae.domain_model import (LatentCode, build_domain_model, decode, encode, linear_oracle_model,
                               oracle_domain_model, reconstruct, translate, translate_path, with_latent_shift)
from ucae.errors import DimensionError, PreconditionError
from ucae.linalg import Rng
from ucae.nn_core import Mlp
from ucae.sem_world import make_sem, sample_coupled


def test_identity_world_oracle_encodes_to_input(identity_world):
    model = oracle_domain_model(identity_world, 0)
    x = Rng(1).normal(10, 1)
    codes = encode(model, x)
    assert len(codes) == 10
    assert np.array_equal(codes.z, x)
    assert np.array_equal(decode(model, codes), x)


def test_encode_is_deterministic(rng):
    model = build_domain_model("a", 5, 1, 2, rng.split("model"))
    x = rng.split("x").normal(6, 5)
    first, second = encode(model, x), encode(model, x)
    assert np.array_equal(first.z, second.z) and np.array_equal(first.n, second.n)
    assert first.z.shape == (6, 2) and first.n.shape == (6, 1)


def test_zero_weight_decoder_outputs_bias(rng):
    model = build_domain_model("a", 3, 0, 2, rng)
    for w in model.decoder.weights:
        w.fill(0.0)
    model.decoder.biases[-1] = np.array([1.0, -2.0, 0.5])
    out = decode(model, LatentCode(z=np.ones((4, 2)), n=np.zeros((4, 0))))
    assert np.array_equal(out, np.tile([1.0, -2.0, 0.5], (4, 1)))


def test_decode_rejects_wrong_code_dims(rng):
    model = build_domain_model("a", 3, 1, 2, rng)
    with pytest.raises(DimensionError):
        decode(model, LatentCode(z=np.ones((2, 2)), n=np.ones((2, 2))))


def test_self_translation_of_perfect_autoencoder_is_identity():
    spec = make_sem(2, [(4, 0)], 0.0, Rng(3))
    model = linear_oracle_model(spec, 0, Rng(4))
    x = sample_coupled(spec, 100, Rng(5)).xs[0]
    assert np.max(np.abs(translate(model, model, x, Rng(6)) - x)) < 1e-8
    assert np.max(np.abs(reconstruct(model, x) - x)) < 1e-8


def test_oracle_translation_recovers_ground_truth_pairs(noiseless_world):
    samples = sample_coupled(noiseless_world, 300, Rng(2))
    src = oracle_domain_model(noiseless_world, 0)
    dst = oracle_domain_model(noiseless_world, 1)
    assert np.max(np.abs(translate(src, dst, samples.xs[0], Rng(3)) - samples.xs[1])) < 1e-8


def test_translation_with_noise_is_stochastic_but_keeps_z(w4_world):
    samples = sample_coupled(w4_world, 50, Rng(2))
    src = oracle_domain_model(w4_world, 0)
    dst = oracle_domain_model(w4_world, 3)
    a = translate(src, dst, samples.xs[0], Rng(10))
    b = translate(src, dst, samples.xs[0], Rng(11))
    assert not np.allclose(a, b)
    assert np.max(np.abs(encode(dst, a).z - encode(dst, b).z)) < 1e-8


def test_translation_ignores_source_noise(w4_world):
    samples = sample_coupled(w4_world, 40, Rng(2))
    src = oracle_domain_model(w4_world, 3)
    dst = oracle_domain_model(w4_world, 1)
    # regenerate the same z with different source noise
    gen = w4_world.domains[3]
    other = gen.generate(np.hstack([samples.z, Rng(99).normal(40, gen.noise_dim)]))
    assert np.max(np.abs(translate(src, dst, samples.xs[3], Rng(5)) - translate(src, dst, other, Rng(5)))) < 1e-8


def test_translate_rejects_latent_mismatch(rng):
    a = build_domain_model("a", 3, 0, 2, rng.split("a"))
    b = build_domain_model("b", 3, 0, 1, rng.split("b"))
    with pytest.raises(DimensionError):
        translate(a, b, np.ones((2, 3)), rng)


def test_two_hop_path_equals_translate(w4_world):
    # domain 1 has noise, so equality needs the same draws
    models = [oracle_domain_model(w4_world, i) for i in (0, 1)]
    x = sample_coupled(w4_world, 30, Rng(2)).xs[0]
    assert np.array_equal(translate_path(models, x, Rng(4)), translate(models[0], models[1], x, Rng(4)))


def test_later_hops_use_their_own_streams(w4_world):
    models = [oracle_domain_model(w4_world, i) for i in (0, 1, 3)]
    x = sample_coupled(w4_world, 30, Rng(2)).xs[0]
    rng = Rng(4)
    first = translate(models[0], models[1], x, Rng(4))
    expected = translate(models[1], models[2], first, rng.split("hop-1"))
    assert np.array_equal(translate_path(models, x, rng), expected)


def test_noiseless_path_matches_direct(noiseless_world):
    models = [oracle_domain_model(noiseless_world, i) for i in range(3)]
    x = sample_coupled(noiseless_world, 200, Rng(2)).xs[0]
    via = translate_path(models, x, Rng(3))
    direct = translate(models[0], models[2], x, Rng(4))
    assert np.max(np.abs(via - direct)) < 1e-8


def test_translate_path_needs_two_models(noiseless_world):
    with pytest.raises(PreconditionError):
        translate_path([oracle_domain_model(noiseless_world, 0)], np.ones((1, 4)), Rng(0))


def test_latent_shift_moves_only_z(w4_world):
    model = oracle_domain_model(w4_world, 1)
    x = sample_coupled(w4_world, 20, Rng(2)).xs[1]
    shifted = with_latent_shift(model, 2.0)
    base, moved = encode(model, x), encode(shifted, x)
    assert np.allclose(moved.z - base.z, 2.0)
    assert np.array_equal(moved.n, base.n)


def test_build_domain_model_shapes(rng):
    model = build_domain_model("a", 6, 2, 3, rng, encoder_hidden=(16,), decoder_hidden=(16,),
                               disc_hidden=(8,), label_dim=2)
    assert isinstance(model.encoder, Mlp) and model.trainable
    assert model.encoder.out_dim == 5
    assert model.discriminator.in_dim == 7


def test_inference_does_not_touch_backward_cache(rng):
    model = build_domain_model("a", 4, 1, 2, rng.split("model"), encoder_hidden=(8,), decoder_hidden=(8,))
    x = rng.split("x").normal(5, 4)
    reconstruct(model, x)
    translate(model, model, x, rng.split("noise"))
    assert model.encoder._cache is None and model.decoder._cache is None

    # a pending training batch survives an interleaved evaluation
    batch = rng.split("batch").normal(3, 4)
    model.encoder.forward(batch)
    encode(model, x)
    assert model.encoder._cache[0].shape == (3, 4)
    model.encoder.backward(np.ones((3, 3)))
