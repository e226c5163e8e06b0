"""Perceptual statistics: normalization, distribution fits, features,
the scorer file format, and relative quality arithmetic."""

import numpy as np
import numpy.testing as npt
import pytest
from scipy import special

from vimagine import quality as qq
from vimagine.errors import ConfigurationError, FormatError


def gaussian_window_oracle():
    half = qq.WINDOW_SIZE // 2
    ys, xs = np.mgrid[-half : half + 1, -half : half + 1]
    w = np.exp(-(xs**2 + ys**2) / (2.0 * qq.WINDOW_SIGMA**2))
    return w / w.sum()


def test_gray_conversion_weights():
    img = np.zeros((4, 4, 3))
    img[..., 0] = 1.0
    npt.assert_allclose(qq.to_gray(img), np.full((4, 4), 0.299), atol=1e-12)
    gray = np.random.default_rng(0).uniform(0, 1, (5, 5, 1))
    npt.assert_array_equal(qq.to_gray(gray), gray[..., 0])


def test_mscn_matches_double_loop_oracle():
    rng = np.random.default_rng(1)
    img = rng.uniform(0.0, 1.0, size=(16, 16))
    got = qq.mscn(img)

    w = gaussian_window_oracle()
    half = qq.WINDOW_SIZE // 2
    scaled = img * 255.0
    padded = np.pad(scaled, half, mode="symmetric")
    expected = np.zeros_like(scaled)
    for y in range(16):
        for x in range(16):
            patch = padded[y : y + 7, x : x + 7]
            mu = (patch * w).sum()
            var = (patch**2 * w).sum() - mu**2
            sigma = np.sqrt(max(var, 0.0))
            expected[y, x] = (scaled[y, x] - mu) / (sigma + 1.0)
    npt.assert_allclose(got, expected, atol=5e-13)


def test_mscn_of_constant_image_is_all_zero():
    for value in (0.0, 0.37, 1.0):
        coeffs = qq.mscn(np.full((24, 24), value))
        npt.assert_array_equal(coeffs, np.zeros((24, 24)))


def test_mscn_rejects_tiny_images():
    with pytest.raises(ConfigurationError):
        qq.mscn(np.zeros((8, 8)))


def test_mscn_white_noise_is_roughly_centered():
    rng = np.random.default_rng(2)
    coeffs = qq.mscn(rng.uniform(0, 1, (128, 128)))
    assert abs(coeffs.mean()) < 0.01
    assert 0.5 < coeffs.std() < 1.5


def test_ggd_fit_recovers_gaussian_and_laplacian_shape():
    rng = np.random.default_rng(3)
    gauss = rng.standard_normal(100_000)
    fit = qq.fit_ggd(gauss)
    assert abs(fit.alpha - 2.0) <= 0.15
    assert not fit.degenerate
    npt.assert_allclose(fit.sigma_sq, 1.0, atol=0.02)

    lap = rng.laplace(0.0, 1.0, 100_000)
    fit = qq.fit_ggd(lap)
    assert abs(fit.alpha - 1.0) <= 0.1


def test_ggd_fit_is_scale_invariant_in_shape():
    rng = np.random.default_rng(4)
    base = rng.standard_normal(100_000)
    a = qq.fit_ggd(base)
    b = qq.fit_ggd(3.0 * base)
    assert a.alpha == b.alpha
    npt.assert_allclose(b.sigma_sq / a.sigma_sq, 9.0, rtol=1e-12)


def test_ggd_fit_degenerate_on_all_zero():
    fit = qq.fit_ggd(np.zeros(200))
    assert fit.degenerate
    assert fit.alpha == 10.0
    assert fit.sigma_sq == 0.0


def test_ggd_moment_ratio_identity():
    # the fitted shape must invert the theoretical moment ratio
    rng = np.random.default_rng(5)
    vec = rng.standard_normal(100_000)
    fit = qq.fit_ggd(vec)
    g = special.gamma
    theoretical = g(1.0 / fit.alpha) * g(3.0 / fit.alpha) / g(2.0 / fit.alpha) ** 2
    empirical = np.mean(vec**2) / np.mean(np.abs(vec)) ** 2
    npt.assert_allclose(theoretical, empirical, rtol=2e-3)


def test_aggd_fit_mirror_swaps_sides_and_keeps_shape():
    rng = np.random.default_rng(6)
    vec = np.concatenate(
        [-np.abs(rng.standard_normal(60_000)) * 2.0,
         np.abs(rng.standard_normal(40_000))]
    )
    f = qq.fit_aggd(vec)
    m = qq.fit_aggd(-vec)
    assert f.nu == m.nu
    npt.assert_allclose(f.sigma_l_sq, m.sigma_r_sq, rtol=1e-12)
    npt.assert_allclose(f.sigma_r_sq, m.sigma_l_sq, rtol=1e-12)
    npt.assert_allclose(f.eta, -m.eta, rtol=1e-9)
    assert f.sigma_l_sq > f.sigma_r_sq  # the wide side is the left one


def test_aggd_fit_on_symmetric_data_is_balanced():
    rng = np.random.default_rng(7)
    vec = rng.standard_normal(100_000)
    f = qq.fit_aggd(vec)
    assert abs(f.nu - 2.0) <= 0.2
    npt.assert_allclose(f.sigma_l_sq, f.sigma_r_sq, rtol=0.05)
    assert abs(f.eta) < 0.02


def test_aggd_fit_degenerate_when_one_side_is_empty():
    vec = np.abs(np.random.default_rng(8).standard_normal(1000)) + 0.1
    f = qq.fit_aggd(vec)
    assert f.degenerate
    assert f.nu == 10.0


def test_feature_vector_length_and_layout():
    rng = np.random.default_rng(9)
    img = rng.uniform(0, 1, (64, 64))
    feats = qq.brisque_features(img)
    assert feats.shape == (qq.N_FEATURES,)
    assert feats.shape == (36,)
    assert np.all(np.isfinite(feats))
    # first pair is the full-scale GGD fit of the MSCN coefficients
    fit = qq.fit_ggd(qq.mscn(img).ravel())
    npt.assert_allclose(feats[0], fit.alpha, rtol=1e-12)
    npt.assert_allclose(feats[1], fit.sigma_sq, rtol=1e-12)


def test_features_need_two_scales_of_room():
    with pytest.raises(ConfigurationError):
        qq.brisque_features(np.zeros((16, 16)))
    qq.brisque_features(np.random.default_rng(0).uniform(0, 1, (32, 32)))


def test_blur_and_noise_separate_in_feature_space():
    from scipy import ndimage

    rng = np.random.default_rng(10)
    noise = rng.uniform(0, 1, (96, 96))
    blurred = ndimage.uniform_filter(noise, size=5, mode="reflect")
    f_noise = qq.brisque_features(noise)
    f_blur = qq.brisque_features(blurred)
    # uniform noise pins the fitted shape at the top of the grid; box
    # blur drags it down toward the Gaussian range
    assert abs(f_noise[0] - f_blur[0]) > 0.1


def test_half_scale_consistency_on_nearest_upscale():
    rng = np.random.default_rng(11)
    small = rng.uniform(0, 1, (32, 32))
    big = np.repeat(np.repeat(small, 2, axis=0), 2, axis=1)
    f_small = qq.brisque_features(small)[:18]
    f_big = qq.brisque_features(big)[18:]
    npt.assert_allclose(f_big, f_small, rtol=1e-10, atol=1e-12)


MODEL_TEXT = """# comment line
kind rbf
gamma 0.05
bias 10.0
ranges {ranges}
sv 2.0 {sv}
sv -1.5 {sv2}
"""


def make_model_text(kind="rbf"):
    ranges = " ".join(f"{-1.0 - i * 0.01} {1.0 + i * 0.01}" for i in range(36))
    sv = " ".join("0.5" for _ in range(36))
    sv2 = " ".join("-0.25" for _ in range(36))
    text = MODEL_TEXT.format(ranges=ranges, sv=sv, sv2=sv2)
    return text.replace("kind rbf", f"kind {kind}")


def test_model_parse_and_rbf_score_oracle():
    model = qq.RegressionModel.parse(make_model_text())
    feats = np.zeros(36)
    # hand evaluation: features scale to scaled[i] in [-1,1], then two
    # kernel terms plus the bias
    lo = np.array([-1.0 - i * 0.01 for i in range(36)])
    hi = np.array([1.0 + i * 0.01 for i in range(36)])
    scaled = -1.0 + 2.0 * (feats - lo) / (hi - lo)
    k1 = np.exp(-0.05 * np.sum((np.full(36, 0.5) - scaled) ** 2))
    k2 = np.exp(-0.05 * np.sum((np.full(36, -0.25) - scaled) ** 2))
    expected = 2.0 * k1 - 1.5 * k2 + 10.0
    npt.assert_allclose(model.score(feats), expected, rtol=1e-12)


def test_model_linear_score_oracle():
    model = qq.RegressionModel.parse(make_model_text("linear"))
    feats = np.linspace(-0.5, 0.5, 36)
    lo = np.array([-1.0 - i * 0.01 for i in range(36)])
    hi = np.array([1.0 + i * 0.01 for i in range(36)])
    scaled = -1.0 + 2.0 * (feats - lo) / (hi - lo)
    expected = (
        2.0 * np.dot(np.full(36, 0.5), scaled)
        - 1.5 * np.dot(np.full(36, -0.25), scaled)
        + 10.0
    )
    npt.assert_allclose(model.score(feats), expected, rtol=1e-12)


def test_model_parse_error_taxonomy():
    with pytest.raises(FormatError, match="kind"):
        qq.RegressionModel.parse(make_model_text("poly"))
    with pytest.raises(FormatError, match="line"):
        qq.RegressionModel.parse(make_model_text() + "\nwhatkey 3\n")
    missing_sv = "\n".join(
        line for line in make_model_text().splitlines() if not line.startswith("sv")
    )
    with pytest.raises(FormatError):
        qq.RegressionModel.parse(missing_sv)
    bad_ranges = make_model_text().replace("ranges", "ranges 0.5", 1)
    with pytest.raises(FormatError):
        qq.RegressionModel.parse(bad_ranges)
    swapped = make_model_text().splitlines()
    swapped = [
        ("ranges " + " ".join("2.0 1.0" for _ in range(36)))
        if line.startswith("ranges")
        else line
        for line in swapped
    ]
    with pytest.raises(FormatError, match="min"):
        qq.RegressionModel.parse("\n".join(swapped))


def test_bundled_smoke_scorer_loads_and_scores():
    model = qq.RegressionModel.load(qq.smoke_scorer_path())
    rng = np.random.default_rng(12)
    score = model.score(qq.brisque_features(rng.uniform(0, 1, (64, 64))))
    assert np.isfinite(score)


def test_score_image_without_model_is_a_configuration_error():
    with pytest.raises(ConfigurationError, match="no scorer configured"):
        qq.score_image(np.zeros((32, 32)), None)


@pytest.mark.parametrize(
    "pre,post,expected",
    [
        (45.2164, 47.0168, 3.98),
        (35.9809, 36.7120, 2.03),
        (45.2164, 50.7681, 12.28),
        (45.2164, 89.2315, 97.34),
    ],
)
def test_relative_quality_reference_values(pre, post, expected):
    assert abs(qq.riqa(pre, post) * 100.0 - expected) <= 0.01


def test_relative_quality_rejects_zero_input():
    with pytest.raises(ConfigurationError):
        qq.riqa(0.0, 5.0)


def test_evaluate_identical_frames_has_near_zero_riqa(tmp_path):
    model = qq.RegressionModel.load(qq.smoke_scorer_path())
    rng = np.random.default_rng(13)
    frame = rng.uniform(0.2, 0.8, (32, 32, 3)).astype(np.float32)
    report = qq.evaluate(frame, [np.stack([frame] * 5)], model)
    assert abs(report.riqa) < 1e-6
    assert report.n_clips == 1
    assert report.frames_per_clip == 4
    assert "riqa" in report.summary()

    csv_path = tmp_path / "report.csv"
    csv_path.write_text(report.to_csv())
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "key,value"
    keys = [line.split(",")[0] for line in lines[1:]]
    assert "input_score" in keys
    assert "output_score" in keys
    assert "riqa" in keys
    assert "frame_score_0_1" in keys
    assert "frame_score_0_4" in keys


def test_evaluate_excludes_the_conditioning_frame():
    model = qq.RegressionModel.load(qq.smoke_scorer_path())
    rng = np.random.default_rng(14)
    base = rng.uniform(0.2, 0.8, (32, 32, 3)).astype(np.float32)
    noisy = np.clip(base + rng.normal(0, 0.2, base.shape), 0, 1).astype(np.float32)
    clip = np.stack([base, noisy, noisy, noisy, noisy])
    report = qq.evaluate(base, [clip], model)
    in_score = qq.score_image(base, model)
    out_score = qq.score_image(noisy, model)
    npt.assert_allclose(report.input_score, in_score, rtol=1e-9)
    npt.assert_allclose(report.output_score, out_score, rtol=1e-9)
    npt.assert_allclose(report.riqa, (out_score - in_score) / in_score, rtol=1e-9)
    with pytest.raises(ConfigurationError, match="frame count"):
        qq.evaluate(base, [clip, clip[:4]], model)
    with pytest.raises(ConfigurationError):
        qq.evaluate(base, [], model)
