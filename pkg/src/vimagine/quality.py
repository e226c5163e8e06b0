"""No-reference image quality scoring and relative improvement metrics.

The scorer follows the classic natural-scene-statistics recipe: images
are locally mean-subtracted and contrast-divisively normalized, the
resulting coefficient distributions (and four orientation products) are
summarized by generalized Gaussian fits at two scales, and the 36-number
summary is mapped to a scalar score by a small regression model loaded
from a text file.  Scores for generated frames are compared against the
score of the source image as a relative change.

Nothing here is differentiable and nothing depends on the tensor core;
plain float64 numpy throughout.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import gamma as _gamma_fn

from .errors import ConfigurationError, FormatError

MIN_SIDE = 16       # local statistics need a few windows per axis
WINDOW_SIZE = 7
WINDOW_SIGMA = 7.0 / 6.0
N_FEATURES = 36
MIN_FIT_SAMPLES = 100

_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

# Shape-parameter search grid shared by both distribution fits.
_SHAPE_GRID = np.arange(0.2, 10.0 + 1e-12, 0.001)
_GGD_RATIO = None   # lazily built: gamma(1/a)*gamma(3/a)/gamma(2/a)^2
_AGGD_RATIO = None  # lazily built: gamma(2/a)^2/(gamma(1/a)*gamma(3/a))


def _ratio_tables():
    global _GGD_RATIO, _AGGD_RATIO
    if _GGD_RATIO is None:
        g1 = _gamma_fn(1.0 / _SHAPE_GRID)
        g2 = _gamma_fn(2.0 / _SHAPE_GRID)
        g3 = _gamma_fn(3.0 / _SHAPE_GRID)
        _GGD_RATIO = g1 * g3 / (g2 * g2)
        _AGGD_RATIO = (g2 * g2) / (g1 * g3)
    return _GGD_RATIO, _AGGD_RATIO


def _gaussian_window(size=WINDOW_SIZE, sigma=WINDOW_SIGMA):
    """2-D Gaussian weighting window normalized to sum 1."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    one_d = np.exp(-(coords * coords) / (2.0 * sigma * sigma))
    window = np.outer(one_d, one_d)
    return window / window.sum()


def to_gray(image):
    """Collapse an [H,W], [H,W,1] or [H,W,3] float image to 2-D luma."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 1:
        return arr[:, :, 0]
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ _LUMA_WEIGHTS
    raise ConfigurationError(
        f"expected [H,W], [H,W,1] or [H,W,3] image, got shape {arr.shape}")


def mscn(image):
    """Locally normalized luminance coefficients of an image in [0,1].

    Each pixel is mapped to (I*255 - mu)/(sigma + 1) where mu and sigma
    are the Gaussian-weighted local mean and standard deviation over a
    7x7 window (sigma_w = 7/6), with symmetric edge padding.  The +1
    stabilizes flat regions; a constant image maps to exactly zero.

    Args:
      image: [H,W] grayscale or [H,W,3] RGB, values in [0,1], H,W >= 16.

    Returns:
      [H,W] float64 array of normalized coefficients.
    """
    gray = to_gray(image)
    h, w = gray.shape
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ConfigurationError(
            f"image {h}x{w} too small for local statistics, need at least "
            f"{MIN_SIDE}x{MIN_SIDE}")
    scaled = gray * 255.0
    window = _gaussian_window()
    # scipy's "reflect" mode repeats edge samples (d c b a | a b c d),
    # i.e. symmetric padding.
    mu = ndimage.correlate(scaled, window, mode="reflect")
    mu_sq = mu * mu
    second = ndimage.correlate(scaled * scaled, window, mode="reflect")
    sigma = np.sqrt(np.maximum(second - mu_sq, 0.0))
    coeffs = (scaled - mu) / (sigma + 1.0)
    # An exactly constant window has numerator 0 in exact arithmetic;
    # enforce that so flat images stay identically zero despite the
    # rounding noise of the weighted sums.
    flat = (ndimage.maximum_filter(scaled, size=WINDOW_SIZE, mode="reflect")
            == ndimage.minimum_filter(scaled, size=WINDOW_SIZE, mode="reflect"))
    coeffs[flat] = 0.0
    return coeffs


@dataclass(frozen=True)
class GgdFit:
    """Symmetric generalized Gaussian fit: shape alpha, power sigma_sq."""
    alpha: float
    sigma_sq: float
    degenerate: bool = False


@dataclass(frozen=True)
class AggdFit:
    """Asymmetric generalized Gaussian fit.

    eta is the mean term, nu the shape, sigma_l_sq/sigma_r_sq the
    second moments of the negative/positive halves.
    """
    eta: float
    nu: float
    sigma_l_sq: float
    sigma_r_sq: float
    degenerate: bool = False


def fit_ggd(samples):
    """Fit a zero-mean generalized Gaussian by moment matching.

    The shape parameter is found by inverting the moment ratio
    E[x^2]/E[|x|]^2 against gamma(1/a)*gamma(3/a)/gamma(2/a)^2 over a
    dense grid a in [0.2, 10] (step 0.001).  For standard Gaussian data
    the fit returns alpha near 2, for Laplacian data near 1.

    All-zero input has no defined shape; the fit falls back to
    (alpha=10, sigma_sq=0) and sets the degenerate flag.

    Args:
      samples: 1-D array, at least 100 values.

    Returns:
      GgdFit(alpha, sigma_sq, degenerate) with sigma_sq = E[x^2].
    """
    vec = np.asarray(samples, dtype=np.float64).ravel()
    if vec.size < MIN_FIT_SAMPLES:
        raise ConfigurationError(
            f"need at least {MIN_FIT_SAMPLES} samples to fit, got {vec.size}")
    mean_abs = float(np.mean(np.abs(vec)))
    mean_sq = float(np.mean(vec * vec))
    if mean_abs == 0.0:
        return GgdFit(alpha=10.0, sigma_sq=0.0, degenerate=True)
    ratio = mean_sq / (mean_abs * mean_abs)
    ggd_table, _ = _ratio_tables()
    idx = int(np.argmin(np.abs(ggd_table - ratio)))
    return GgdFit(alpha=float(_SHAPE_GRID[idx]), sigma_sq=mean_sq)


def fit_aggd(samples):
    """Fit an asymmetric generalized Gaussian by moment matching.

    The two half-distributions get separate second moments (sigma_l_sq
    from strictly negative samples, sigma_r_sq from strictly positive);
    the shared shape nu comes from a grid inversion of the asymmetry-
    corrected moment ratio, and eta is the implied distribution mean:

      eta = (sigma_r - sigma_l) * gamma(2/nu)/gamma(1/nu)
                                * sqrt(gamma(1/nu)/gamma(3/nu))

    Mirroring the sample (x -> -x) swaps the two sigmas and leaves nu
    unchanged.  If either side is empty the ratio is undefined; the fit
    uses nu=10, keeps whatever one-sided moments exist, and sets the
    degenerate flag.

    Args:
      samples: 1-D array, at least 100 values.

    Returns:
      AggdFit(eta, nu, sigma_l_sq, sigma_r_sq, degenerate).
    """
    vec = np.asarray(samples, dtype=np.float64).ravel()
    if vec.size < MIN_FIT_SAMPLES:
        raise ConfigurationError(
            f"need at least {MIN_FIT_SAMPLES} samples to fit, got {vec.size}")
    left = vec[vec < 0.0]
    right = vec[vec > 0.0]
    sigma_l_sq = float(np.mean(left * left)) if left.size else 0.0
    sigma_r_sq = float(np.mean(right * right)) if right.size else 0.0
    if left.size == 0 or right.size == 0:
        nu = 10.0
        eta = _aggd_mean(nu, np.sqrt(sigma_l_sq), np.sqrt(sigma_r_sq))
        return AggdFit(eta, nu, sigma_l_sq, sigma_r_sq, degenerate=True)
    sigma_l = float(np.sqrt(sigma_l_sq))
    sigma_r = float(np.sqrt(sigma_r_sq))
    skew = sigma_l / sigma_r
    mean_abs = float(np.mean(np.abs(vec)))
    mean_sq = float(np.mean(vec * vec))
    ratio = (mean_abs * mean_abs) / mean_sq
    corrected = ratio * (skew ** 3 + 1.0) * (skew + 1.0) / (skew ** 2 + 1.0) ** 2
    _, aggd_table = _ratio_tables()
    idx = int(np.argmin(np.abs(aggd_table - corrected)))
    nu = float(_SHAPE_GRID[idx])
    eta = _aggd_mean(nu, sigma_l, sigma_r)
    return AggdFit(eta, nu, sigma_l_sq, sigma_r_sq)


def _aggd_mean(nu, sigma_l, sigma_r):
    scale = _gamma_fn(2.0 / nu) / _gamma_fn(1.0 / nu)
    scale *= np.sqrt(_gamma_fn(1.0 / nu) / _gamma_fn(3.0 / nu))
    return float((sigma_r - sigma_l) * scale)


def _half_scale(gray):
    """2x2 mean downsample; odd trailing rows/columns are dropped."""
    h, w = gray.shape
    h2, w2 = h - h % 2, w - w % 2
    blocks = gray[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2)
    return blocks.mean(axis=(1, 3))


def _scale_features(coeffs):
    feats = []
    g = fit_ggd(coeffs.ravel())
    feats.extend([g.alpha, g.sigma_sq])
    pairs = (
        coeffs[:, :-1] * coeffs[:, 1:],      # horizontal neighbors
        coeffs[:-1, :] * coeffs[1:, :],      # vertical
        coeffs[:-1, :-1] * coeffs[1:, 1:],   # main diagonal
        coeffs[:-1, 1:] * coeffs[1:, :-1],   # anti-diagonal
    )
    for prod in pairs:
        a = fit_aggd(prod.ravel())
        feats.extend([a.eta, a.nu, a.sigma_l_sq, a.sigma_r_sq])
    return feats


def brisque_features(image):
    """36 natural-scene-statistics features of one image.

    18 numbers per scale: the GGD fit (alpha, sigma_sq) of the mscn
    coefficients plus the AGGD fit (eta, nu, sigma_l_sq, sigma_r_sq) of
    the horizontal, vertical, diagonal, and anti-diagonal neighbor
    products.  The second scale is a 2x2 mean downsample of the image,
    so the input must be at least 32x32.

    Args:
      image: [H,W] grayscale or [H,W,3] RGB in [0,1].

    Returns:
      (36,) float64 vector, full-scale features first.
    """
    gray = to_gray(image)
    if gray.shape[0] < 2 * MIN_SIDE or gray.shape[1] < 2 * MIN_SIDE:
        raise ConfigurationError(
            f"image {gray.shape[0]}x{gray.shape[1]} too small for two-scale "
            f"features, need at least {2 * MIN_SIDE}x{2 * MIN_SIDE}")
    feats = _scale_features(mscn(gray))
    feats += _scale_features(mscn(_half_scale(gray)))
    return np.array(feats, dtype=np.float64)


class RegressionModel:
    """Support-vector regression scorer loaded from a text file.

    File format, one record per line, # comments and blank lines ignored:

      kind    rbf | linear
      gamma   <float>                      (RBF width; ignored for linear)
      bias    <float>
      ranges  <min0> <max0> ... <min35> <max35>
      sv      <coefficient> <v0> ... <v35>   (one line per vector)

    Features are min-max scaled to [-1,1] by `ranges` before evaluation.
    An RBF model scores sum_i c_i * exp(-gamma * ||v_i - x||^2) + bias;
    a linear model scores sum_i c_i * (v_i . x) + bias.
    """

    def __init__(self, kind, gamma, bias, mins, maxs, coefficients, vectors):
        if kind not in ("rbf", "linear"):
            raise FormatError(f"unknown model kind {kind!r}")
        mins = np.asarray(mins, dtype=np.float64)
        maxs = np.asarray(maxs, dtype=np.float64)
        if mins.shape != (N_FEATURES,) or maxs.shape != (N_FEATURES,):
            raise FormatError(
                f"ranges must hold {N_FEATURES} (min,max) pairs")
        if np.any(mins >= maxs):
            bad = int(np.argmax(mins >= maxs))
            raise FormatError(
                f"range {bad} has min {mins[bad]} >= max {maxs[bad]}")
        vectors = np.asarray(vectors, dtype=np.float64)
        coefficients = np.asarray(coefficients, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] != N_FEATURES:
            raise FormatError(
                f"support vectors must have {N_FEATURES} components")
        if coefficients.shape != (vectors.shape[0],):
            raise FormatError("one coefficient per support vector required")
        if vectors.shape[0] == 0:
            raise FormatError("model has no sv lines")
        self.kind = kind
        self.gamma = float(gamma)
        self.bias = float(bias)
        self.mins = mins
        self.maxs = maxs
        self.coefficients = coefficients
        self.vectors = vectors

    @classmethod
    def parse(cls, text):
        kind = None
        gamma = 0.0
        bias = None
        ranges = None
        coefs = []
        vectors = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, *rest = line.split()
            try:
                if key == "kind":
                    (kind,) = rest
                elif key == "gamma":
                    (token,) = rest
                    gamma = float(token)
                elif key == "bias":
                    (token,) = rest
                    bias = float(token)
                elif key == "ranges":
                    values = [float(t) for t in rest]
                    if len(values) != 2 * N_FEATURES:
                        raise FormatError(
                            f"line {lineno}: ranges needs {2 * N_FEATURES} "
                            f"numbers, got {len(values)}")
                    ranges = np.array(values).reshape(N_FEATURES, 2)
                elif key == "sv":
                    values = [float(t) for t in rest]
                    if len(values) != 1 + N_FEATURES:
                        raise FormatError(
                            f"line {lineno}: sv needs a coefficient plus "
                            f"{N_FEATURES} numbers, got {len(values)}")
                    coefs.append(values[0])
                    vectors.append(values[1:])
                else:
                    raise FormatError(f"line {lineno}: unknown key {key!r}")
            except (ValueError, TypeError) as exc:
                if isinstance(exc, FormatError):
                    raise
                raise FormatError(f"line {lineno}: malformed {key} record") from exc
        if kind is None or bias is None or ranges is None:
            missing = [name for name, value in
                       (("kind", kind), ("bias", bias), ("ranges", ranges))
                       if value is None]
            raise FormatError(f"model file missing keys: {', '.join(missing)}")
        if not vectors:
            raise FormatError("model has no sv lines")
        return cls(kind, gamma, bias, ranges[:, 0], ranges[:, 1],
                   coefs, np.array(vectors))

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def scale(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (N_FEATURES,):
            raise ConfigurationError(
                f"expected {N_FEATURES} features, got shape {features.shape}")
        return -1.0 + 2.0 * (features - self.mins) / (self.maxs - self.mins)

    def score(self, features):
        """Scalar quality score for one 36-feature vector."""
        x = self.scale(features)
        if self.kind == "rbf":
            diffs = self.vectors - x[None, :]
            kernel = np.exp(-self.gamma * np.sum(diffs * diffs, axis=1))
        else:
            kernel = self.vectors @ x
        return float(self.coefficients @ kernel + self.bias)


def score_image(image, model):
    """BRISQUE-style score of one image under a regression model."""
    if model is None:
        raise ConfigurationError(
            "no scorer configured: evaluation needs a regression model file")
    return model.score(brisque_features(image))


def riqa(input_score, output_score):
    """Relative change of the output score against the input score.

    Positive values mean the output scored higher than the source image.
    A zero input score leaves the ratio undefined.
    """
    input_score = float(input_score)
    if input_score == 0.0:
        raise ConfigurationError(
            "relative quality is undefined for a zero input score")
    return (float(output_score) - input_score) / input_score


@dataclass(frozen=True)
class QualityReport:
    """Evaluation summary for one input image and its sampled clips."""
    input_score: float
    output_score: float
    riqa: float
    frame_scores: tuple       # one score per generated frame, clip-major
    n_clips: int
    frames_per_clip: int

    def summary(self):
        lines = [
            f"input score   {self.input_score:.6f}",
            f"output score  {self.output_score:.6f} "
            f"(mean of {len(self.frame_scores)} generated frames, "
            f"{self.n_clips} clips x {self.frames_per_clip})",
            f"riqa          {self.riqa:+.6f} ({self.riqa * 100.0:+.2f}%)",
        ]
        return "\n".join(lines)

    def to_csv(self):
        lines = ["key,value"]
        lines.append(f"input_score,{self.input_score!r}")
        lines.append(f"output_score,{self.output_score!r}")
        lines.append(f"riqa,{self.riqa!r}")
        lines.append(f"clips,{self.n_clips}")
        lines.append(f"frames_per_clip,{self.frames_per_clip}")
        for i, value in enumerate(self.frame_scores):
            clip, frame = divmod(i, self.frames_per_clip)
            # frame index is 1-based within the clip: frame 0 is the input
            lines.append(f"frame_score_{clip}_{frame + 1},{value!r}")
        return "\n".join(lines) + "\n"


def evaluate(input_image, clips, model):
    """Score an input image against clips sampled from it.

    Frame 0 of every clip is the input copy and is excluded; the output
    score is the arithmetic mean over all generated frames of all clips.

    Args:
      input_image: [H,W] or [H,W,C] array in [0,1].
      clips: array [m, F, H, W, C] (or list of [F,H,W,C]) with F >= 2.
      model: RegressionModel, required.

    Returns:
      QualityReport.
    """
    if model is None:
        raise ConfigurationError(
            "no scorer configured: evaluation needs a regression model file")
    clips = [np.asarray(c, dtype=np.float64) for c in clips]
    if not clips:
        raise ConfigurationError("no clips to evaluate")
    frames_per_clip = clips[0].shape[0] - 1
    if frames_per_clip < 1:
        raise ConfigurationError("clips must hold the input plus frames")
    input_score = score_image(input_image, model)
    frame_scores = []
    for clip in clips:
        if clip.shape[0] != frames_per_clip + 1:
            raise ConfigurationError("clips disagree on frame count")
        for frame in clip[1:]:
            frame_scores.append(score_image(frame, model))
    output_score = float(np.mean(frame_scores))
    return QualityReport(
        input_score=input_score,
        output_score=output_score,
        riqa=riqa(input_score, output_score),
        frame_scores=tuple(frame_scores),
        n_clips=len(clips),
        frames_per_clip=frames_per_clip,
    )


def smoke_scorer_path():
    """Path of the bundled smoke scorer model.

    The file exists so the evaluation pipeline can run end to end out
    of the box.  It is a hand-assembled toy regression, not a trained
    quality model; its scores are only self-consistent.
    """
    from importlib import resources

    return str(resources.files("vimagine.assets") / "smoke_scorer.txt")
