import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from overlapscore.corruptions import (
    CORRUPTION_IDS,
    IDENTITY_PARAMS,
    CorruptionParamError,
    CorruptionSpec,
    Kernel,
    UnknownCorruptionError,
    apply,
    border,
    contrast,
    disk_kernel,
    gaussian_noise,
    glass_blur,
    jpeg_proxy,
    line_kernel,
    obstruction,
    pixelate,
    resolve_params,
    severity_table,
    zoom_blur,
)
from overlapscore.corruptions.blur import convolve
from overlapscore.corruptions.digital import DCT8, quant_table
from overlapscore.corruptions.noise import poisson_inversion
from overlapscore.corruptions.occlusion import fill_border, scaled_range
from overlapscore.corruptions.photometric import plasma
from overlapscore.imagecore import SeededRng


def rand_image(side=32, seed=0):
    return np.random.default_rng(seed).random((side, side, 3))


@pytest.mark.parametrize("cid", CORRUPTION_IDS)
def test_bit_reproducible(cid):
    img = rand_image()
    spec = CorruptionSpec(cid, 3)
    a = apply(spec, img, SeededRng(11))
    b = apply(spec, img, SeededRng(11))
    assert a.tobytes() == b.tobytes()
    assert a.shape == img.shape
    assert 0.0 <= a.min() and a.max() <= 1.0


@pytest.mark.parametrize("cid", sorted(IDENTITY_PARAMS))
def test_identity_strength_is_exact(cid):
    img = rand_image(seed=3)
    out = apply(CorruptionSpec.identity(cid), img, SeededRng(1))
    assert np.array_equal(out, img)


def test_families_without_identity():
    for cid in ("shot_noise", "jpeg_proxy", "obstruction"):
        with pytest.raises(CorruptionParamError):
            CorruptionSpec.identity(cid)


@pytest.mark.parametrize("cid", CORRUPTION_IDS)
def test_severity_table_rows(cid):
    entry = severity_table()[cid]
    assert len(entry["rows"]) == 5
    for sev in range(1, 6):
        params = resolve_params(CorruptionSpec(cid, sev), (32, 32, 3))
        assert set(params) <= set(entry["rows"][0])


@given(
    cid=st.sampled_from(CORRUPTION_IDS),
    sev=st.integers(1, 5),
    seed=st.integers(0, 2**63),
    side=st.sampled_from([24, 32, 40]),
)
@settings(max_examples=60, deadline=None)
def test_outputs_stay_in_unit_range(cid, sev, seed, side):
    img = rand_image(side, seed % 1000)
    out = apply(CorruptionSpec(cid, sev), img, SeededRng(seed))
    assert out.shape == img.shape
    assert np.isfinite(out).all() and out.min() >= 0.0 and out.max() <= 1.0


# -- spec objects -----------------------------------------------------------

def test_spec_key_and_roundtrip():
    s = CorruptionSpec("border", 2, {"t_max": 4, "t_min": 1})
    assert s.key == "border@2{t_max=4,t_min=1}"
    assert CorruptionSpec.from_dict(s.to_dict()) == s
    assert CorruptionSpec("gaussian_noise").key == "gaussian_noise@3"
    assert CorruptionSpec.from_dict("fog") == CorruptionSpec("fog", 3)


def test_unknown_id_lists_valid_ids():
    with pytest.raises(UnknownCorruptionError) as ei:
        CorruptionSpec("snow")
    for cid in CORRUPTION_IDS:
        assert cid in str(ei.value)


@pytest.mark.parametrize("sev", [0, 6, 2.5])
def test_bad_severity(sev):
    with pytest.raises(CorruptionParamError):
        CorruptionSpec("fog", sev)


def test_bad_param_name():
    with pytest.raises(CorruptionParamError):
        CorruptionSpec("fog", 3, {"sigma": 1.0})


def test_spatial_params_rescale_with_size():
    p224 = resolve_params(CorruptionSpec("border", 3), (224, 224, 3))
    assert (p224["t_min"], p224["t_max"]) == (10, 45)
    p32 = resolve_params(CorruptionSpec("border", 3), (32, 32, 3))
    # 10 * 32/224 = 1.43 -> 1, 45 * 32/224 = 6.43 -> 6
    assert (p32["t_min"], p32["t_max"]) == (1, 6)
    o224 = resolve_params(CorruptionSpec("obstruction", 3), (224, 224, 3))
    assert (o224["e_min"], o224["e_max"]) == (50, 120)
    # explicit overrides are not rescaled
    assert resolve_params(CorruptionSpec("border", 3, {"t_max": 9}), (32, 32, 3))["t_max"] == 9


# -- noise ------------------------------------------------------------------

def test_gaussian_variance_monte_carlo():
    img = np.full((32, 32, 3), 0.5)
    out = gaussian_noise(img, 0.1, SeededRng(2024))
    assert 0.008 <= out.var(ddof=1) <= 0.012


def test_gaussian_negative_sigma():
    with pytest.raises(CorruptionParamError):
        gaussian_noise(rand_image(), -0.1, SeededRng(0))


@pytest.mark.parametrize("lam", [0.5, 5.0, 40.0, 200.0])
def test_poisson_moments(lam):
    x = poisson_inversion(np.full(50_000, lam), SeededRng(8))
    assert np.all(x >= 0) and np.all(x == np.round(x))
    assert abs(x.mean() - lam) < 0.05 * lam + 0.02
    assert abs(x.var() - lam) < 0.1 * lam + 0.05


def test_impulse_fraction():
    img = np.full((64, 64, 3), 0.5)
    out = apply(CorruptionSpec("impulse_noise", 3, {"p": 0.2}), img, SeededRng(4))
    frac = np.mean(out != 0.5)
    assert 0.17 < frac < 0.23
    assert set(np.unique(out)) <= {0.0, 0.5, 1.0}


# -- blur -------------------------------------------------------------------

def test_kernel_validation():
    with pytest.raises(CorruptionParamError):
        Kernel(np.ones((2, 2)) / 4)
    with pytest.raises(CorruptionParamError):
        Kernel(np.ones((3, 3)))
    with pytest.raises(CorruptionParamError):
        convolve(np.zeros((4, 4, 1)), disk_kernel(3.0))


@pytest.mark.parametrize("r", [1.0, 2.0, 3.5])
def test_disk_spreads_single_pixel_preserving_mass(r):
    img = np.zeros((21, 21, 1))
    img[10, 10] = 1.0
    out = convolve(img, disk_kernel(r))
    assert abs(out.sum() - 1.0) <= 1e-6
    yy, xx = np.mgrid[:21, :21]
    inside = (yy - 10) ** 2 + (xx - 10) ** 2 <= r * r + 1e-12
    assert np.all(out[..., 0][~inside] == 0)
    assert np.allclose(out[..., 0][inside], 1.0 / inside.sum())


def test_line_kernel_horizontal():
    k = line_kernel(5, 0.0).weights
    assert k.shape == (5, 5)
    assert np.allclose(k[2], k[2].sum() / 5) and abs(k[2].sum() - 1) < 1e-12


def test_constant_image_unchanged_by_blurs():
    img = np.full((32, 32, 3), 0.3)
    for cid in ("defocus_blur", "motion_blur", "zoom_blur", "glass_blur"):
        out = apply(CorruptionSpec(cid, 5), img, SeededRng(0))
        assert np.allclose(out, 0.3, atol=1e-12), cid


def test_zoom_identity_at_one():
    img = rand_image()
    assert np.array_equal(zoom_blur(img, 1.0, 4), img)


def test_glass_preserves_channel_multisets():
    img = rand_image(seed=5)
    out = glass_blur(img, 3, 3, SeededRng(6))
    for c in range(3):
        assert np.array_equal(np.sort(out[..., c].ravel()), np.sort(img[..., c].ravel()))
    assert not np.array_equal(out, img)


# -- photometric and digital ------------------------------------------------

def test_contrast_zero_gives_flat_channels():
    out = contrast(rand_image(), 0.0)
    assert np.allclose(out.std(axis=(0, 1)), 0.0)


def test_plasma_range_and_determinism():
    a = plasma(32, 2.0, SeededRng(3))
    assert a.shape == (32, 32)
    assert a.min() == 0.0 and a.max() == 1.0
    assert np.array_equal(a, plasma(32, 2.0, SeededRng(3)))


def test_pixelate_blocks_and_partial_edges():
    img = rand_image(10)
    out = pixelate(img, 4)
    assert np.allclose(out[:4, :4], img[:4, :4].mean(axis=(0, 1)))
    assert np.allclose(out[8:, 8:], img[8:, 8:].mean(axis=(0, 1)))
    with pytest.raises(CorruptionParamError):
        pixelate(img, 0)


def test_dct_is_orthonormal():
    assert np.allclose(DCT8 @ DCT8.T, np.eye(8), atol=1e-12)


def test_quant_table_scaling():
    assert np.array_equal(quant_table(50)[0, :3], [16, 11, 10])
    assert quant_table(100).max() == 1
    with pytest.raises(CorruptionParamError):
        quant_table(0)


def test_jpeg_high_quality_close_to_input():
    img = rand_image(seed=9)
    assert np.abs(jpeg_proxy(img, 100) - img).max() <= 0.02


def test_jpeg_low_quality_degrades_more():
    img = rand_image(seed=9)
    e10 = np.abs(jpeg_proxy(img, 10) - img).mean()
    e90 = np.abs(jpeg_proxy(img, 90) - img).mean()
    assert e10 > e90


# -- occlusion --------------------------------------------------------------

def _replay_border(rng_seed, t_min, t_max):
    r = SeededRng(rng_seed)
    value = r.uniform(0.0, 1.0)
    return value, r.integers(t_min, t_max)


@pytest.mark.parametrize("side, sev", [(32, s) for s in range(1, 6)] + [(224, 3), (50, 4)])
def test_border_changed_pixel_count(side, sev):
    img = np.zeros((side, side + 6, 3))
    params = resolve_params(CorruptionSpec("border", sev), img.shape)
    out = apply(CorruptionSpec("border", sev), img, SeededRng(17))
    value, t = _replay_border(17, params["t_min"], params["t_max"])
    h, w = img.shape[:2]
    changed = np.count_nonzero(out[..., 0] != 0)
    assert changed == h * w - (h - 2 * t) * (w - 2 * t)
    assert np.all(out[out != 0] == value)


def test_border_224_thickness_ten():
    out = fill_border(np.zeros((224, 224, 3)), 10, 1.0)
    assert np.count_nonzero(out[..., 0]) == 224**2 - 204**2 == 8560


def test_border_limits():
    img = np.zeros((20, 20, 1))
    assert np.all(border(img, SeededRng(0), 10, 10) > 0)  # thickness side/2 fills everything
    with pytest.raises(CorruptionParamError):
        border(img, SeededRng(0), 5, 11)
    with pytest.raises(CorruptionParamError):
        border(img, SeededRng(0), 6, 5)


@pytest.mark.parametrize("seed", range(8))
def test_obstruction_square_area(seed):
    img = np.zeros((224, 224, 3))
    out = obstruction(img, SeededRng(seed))
    r = SeededRng(seed)
    value = r.uniform(0.0, 1.0)
    e = r.integers(50, 120)
    assert 50 <= e <= 120
    mask = out[..., 0] != 0
    assert mask.sum() == e * e
    ys, xs = np.nonzero(mask)
    assert ys.max() - ys.min() + 1 == e and xs.max() - xs.min() + 1 == e
    assert np.all(out[..., 0][mask] == value)


def test_obstruction_default_range_scales():
    assert scaled_range((50, 120), 224) == (50, 120)
    assert scaled_range((50, 120), 32) == (7, 17)
    with pytest.raises(CorruptionParamError):
        obstruction(np.zeros((10, 10, 1)), SeededRng(0), 5, 11)
