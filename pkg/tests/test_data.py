import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dianet.data import (DIFFICULTY_PRESETS, augment_batch, load_cifar, nearest_prototype_accuracy, parse_cifar,
                         prototype_accuracy, prototype_basis, resolve_difficulty, serialize_cifar, synth_raw,
                         synth_task)
from dianet.errors import ConfigError


def _records(n, variant, seed=0):
    rng = np.random.default_rng(seed)
    imgs = rng.integers(0, 256, size=(n, 3, 32, 32), dtype=np.uint8)
    labels = rng.integers(0, 10 if variant == "c10" else 100, size=n)
    return imgs, labels


def test_cifar10_byte_layout():
    imgs, labels = _records(2, "c10")
    buf = serialize_cifar(imgs, labels)
    assert len(buf) == 2 * 3073
    assert buf[0] == labels[0] and buf[3073] == labels[1]
    # channel-major planes: red plane first, row by row
    assert buf[1] == imgs[0, 0, 0, 0] and buf[1 + 1024] == imgs[0, 1, 0, 0] and buf[1 + 33] == imgs[0, 0, 1, 1]


@pytest.mark.parametrize("variant", ["c10", "c100"])
def test_cifar_round_trip_bit_exact(variant):
    imgs, labels = _records(5, variant, seed=1)
    coarse = np.arange(5) % 20
    buf = serialize_cifar(imgs, labels, variant, coarse=coarse)
    got_imgs, got_labels = parse_cifar(buf, variant)
    assert np.array_equal(got_imgs, imgs) and np.array_equal(got_labels, labels)
    assert serialize_cifar(got_imgs, got_labels, variant, coarse=coarse) == buf


def test_cifar100_returns_fine_label():
    imgs, _ = _records(1, "c100")
    buf = serialize_cifar(imgs, np.array([77]), "c100", coarse=np.array([3]))
    assert parse_cifar(buf, "c100")[1].tolist() == [77]


@pytest.mark.parametrize("cut", [1, 100, 3072])
def test_truncated_rejected(cut):
    imgs, labels = _records(2, "c10")
    with pytest.raises(ConfigError):
        parse_cifar(serialize_cifar(imgs, labels)[:-cut])


def test_bad_label_and_variant_rejected():
    imgs, _ = _records(1, "c10")
    with pytest.raises(ConfigError):
        parse_cifar(serialize_cifar(imgs, np.array([10])))
    with pytest.raises(ConfigError):
        parse_cifar(b"", "c1000")


def test_load_cifar_normalizes_with_given_stats(tmp_path):
    imgs, labels = _records(6, "c10", seed=2)
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    a.write_bytes(serialize_cifar(imgs[:4], labels[:4]))
    b.write_bytes(serialize_cifar(imgs[4:], labels[4:]))
    ds = load_cifar([str(a), str(b)], limit=5)
    assert len(ds) == 5 and ds.num_classes == 10
    ref = imgs[:5] / 255.0
    np.testing.assert_allclose(ds.mean, ref.mean(axis=(0, 2, 3)), rtol=1e-12)
    np.testing.assert_allclose(ds.images.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
    test = load_cifar(str(b), stats=(ds.mean, ds.std))
    np.testing.assert_array_equal(test.mean, ds.mean)


def test_prototype_accuracy_two_class_closed_form():
    # K = 2: correct iff N(0, 2 sigma^2) > -s, i.e. Phi(1 / (d sqrt 2))
    for d in (0.2, 0.5, 1.0, 3.0):
        ref = 0.5 * (1 + math.erf(1 / (d * math.sqrt(2)) / math.sqrt(2)))
        assert prototype_accuracy(d, 2) == pytest.approx(ref, abs=1e-9)


def test_prototype_accuracy_limits():
    assert prototype_accuracy(0.0, 4) == 1.0
    assert prototype_accuracy(1e4, 4) == pytest.approx(0.25, abs=1e-3)


def test_prototype_accuracy_monte_carlo():
    rng = np.random.default_rng(3)
    d, k, n = 0.45, 4, 200_000
    z = d * rng.standard_normal((n, k))
    z[:, 0] += 1.0
    mc = np.mean(z.argmax(axis=1) == 0)
    assert prototype_accuracy(d, k) == pytest.approx(mc, abs=4 * math.sqrt(mc * (1 - mc) / n))


@pytest.mark.parametrize("preset", sorted(DIFFICULTY_PRESETS))
def test_presets_hit_target_accuracy(preset):
    d = resolve_difficulty(preset, 4)
    assert prototype_accuracy(d, 4) == pytest.approx(DIFFICULTY_PRESETS[preset], abs=1e-9)


def test_empirical_nearest_prototype_accuracy_matches_closed_form():
    d = resolve_difficulty("hard", 4)
    imgs, labels, protos = synth_raw(0, 4000, 4, d)
    acc = nearest_prototype_accuracy(imgs, labels, protos)
    assert acc == pytest.approx(0.85, abs=4 * math.sqrt(0.85 * 0.15 / 4000))


def test_basis_orthonormal():
    b = prototype_basis(7, 8)
    np.testing.assert_allclose(b @ b.T, np.eye(8), atol=1e-12)


def test_synth_deterministic_and_splits_share_prototypes():
    a = synth_task(5, 50, 4, "mid", sample_seed=0)
    b = synth_task(5, 50, 4, "mid", sample_seed=0)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    _, _, pa = synth_raw(5, 10, 4, 0.1, sample_seed=0)
    _, _, pb = synth_raw(5, 10, 4, 0.1, sample_seed=1)
    assert np.array_equal(pa, pb)
    test = synth_task(5, 50, 4, "mid", stats=(a.mean, a.std), sample_seed=1)
    assert not np.array_equal(test.images, a.images)
    assert a.images.shape == (50, 3, 32, 32) and a.images.dtype == np.float32


def test_bad_difficulty_rejected():
    with pytest.raises(ConfigError):
        resolve_difficulty("impossible", 4)
    with pytest.raises(ConfigError):
        resolve_difficulty(-1.0, 4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_augment_preserves_shape_and_content_mass(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(1, 2, size=(3, 2, 8, 8))
    out = augment_batch(x, np.random.default_rng(seed), pad=2)
    assert out.shape == x.shape
    # a crop keeps at least (8-2)^2 original pixels, zeros elsewhere
    assert np.all((out == 0) | (out >= 1))
    assert np.all((out > 0).reshape(3, -1).sum(axis=1) >= 2 * 36)


def test_noise_free_task_is_perfectly_separable():
    imgs, labels, protos = synth_raw(2, 200, 4, 0.0)
    assert nearest_prototype_accuracy(imgs, labels, protos) == 1.0


def test_hard_preset_accuracy_over_five_seeds():
    d = resolve_difficulty("hard", 4)
    accs = [nearest_prototype_accuracy(*synth_raw(s, 1000, 4, d)) for s in range(5)]
    assert abs(np.mean(accs) - 0.85) < 0.03 and all(abs(a - 0.85) < 0.05 for a in accs)
