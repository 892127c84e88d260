# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Sample-quality and convergence metrics.

FID here is the Frechet distance between Gaussians fitted to raw 2D/3D
samples; there is no feature network for synthetic mixtures.
"""

import logging
import math
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, ShapeMismatchError  # type:ignore
from .internal_utils import as_param_vector, stable_sigmoid  # type:ignore
from .linalg import psd_sqrt_small  # type:ignore

FID_REGULARIZATION = 1e-8
JS_SMOOTHING = 1e-10
DEFAULT_JS_BINS = 64
JS_GRID_PADDING_SIGMAS = 4.0
DEFAULT_CAPTURE_RADIUS_SIGMAS = 3.0
DEFAULT_MIN_FRACTION = 0.01
LN2 = math.log(2.0)

_logger = logging.getLogger(__name__)


class MetricReport:
    """A metric value with everything needed to reproduce it.
    Attributes:
        params (dict): grid, thresholds and radii that were used
        sample_sizes (dict): e.g. {'real': 512, 'gen': 512}
        flags (list): non-fatal conditions, e.g. 'regularized'
        details (dict): metric-specific extras (captured modes, precision, ...)
    """

    def __init__(
        self,
        *,
        name: str,
        value: float,
        params: Optional[Dict[str, Any]] = None,
        sample_sizes: Optional[Dict[str, int]] = None,
        flags: Optional[List[str]] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        self.name = name
        self.value = float(value)
        self.params = params if params is not None else {}
        self.sample_sizes = sample_sizes if sample_sizes is not None else {}
        self.flags = flags if flags is not None else []
        self.details = details if details is not None else {}

    def __float__(self):
        return self.value

    def __str__(self):
        flags = f", flags={self.flags}" if self.flags else ""
        return f"MetricReport(name={self.name}, value={self.value!r}{flags})"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "value": self.value,
            "params": dict(self.params),
            "sample_sizes": dict(self.sample_sizes),
            "flags": list(self.flags),
            "details": dict(self.details),
        }


def _as_samples(data: Union[np.ndarray, Sequence[Sequence[float]]], name: str) -> np.ndarray:
    samples = np.asarray(data, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2:
        raise ShapeMismatchError(f"{name} must be an N x d matrix, got shape {samples.shape}")
    return samples


def _is_near_singular(cov: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(cov))))
    return float(np.linalg.eigvalsh(cov).min()) <= 1e-12 * scale


def fid_gaussian(real: np.ndarray, gen: np.ndarray) -> MetricReport:
    """|mu_r - mu_g|^2 + tr(S_r + S_g - 2 (S_r^1/2 S_g S_r^1/2)^1/2) for d <= 3.
    A singular covariance gets 1e-8 I added and the 'regularized' flag.
    Values down to -1e-8 from round-off are clamped to 0."""
    real = _as_samples(real, "real")
    gen = _as_samples(gen, "gen")
    d = real.shape[1]
    if gen.shape[1] != d:
        raise ShapeMismatchError(f"real has dim {d} but gen has dim {gen.shape[1]}")
    if d > 3:
        raise ShapeMismatchError(f"fid_gaussian supports d <= 3, got {d}")
    if real.shape[0] < d + 1 or gen.shape[0] < d + 1:
        raise ShapeMismatchError(f"fid_gaussian needs at least {d + 1} samples per set")

    flags = []
    mu_r, mu_g = real.mean(axis=0), gen.mean(axis=0)
    cov_r = np.atleast_2d(np.cov(real, rowvar=False))
    cov_g = np.atleast_2d(np.cov(gen, rowvar=False))
    if _is_near_singular(cov_r) or _is_near_singular(cov_g):
        offset = FID_REGULARIZATION * np.eye(d)
        cov_r = cov_r + offset
        cov_g = cov_g + offset
        flags.append("regularized")

    root_r = psd_sqrt_small(cov_r)
    inner = root_r @ cov_g @ root_r
    trace_covmean = float(np.trace(psd_sqrt_small(0.5 * (inner + inner.T))))
    diff = mu_r - mu_g
    value = float(diff @ diff) + float(np.trace(cov_r)) + float(np.trace(cov_g)) - 2.0 * trace_covmean
    if value < 0.0:
        if value < -FID_REGULARIZATION:
            _logger.warning(f"fid_gaussian came out at {value!r}; clamping to 0")
            flags.append("clamped")
        value = 0.0
    return MetricReport(
        name="fid",
        value=value,
        params={"regularization": FID_REGULARIZATION if "regularized" in flags else 0.0},
        sample_sizes={"real": real.shape[0], "gen": gen.shape[0]},
        flags=flags,
    )


Grid = Tuple[Union[float, Sequence[float]], Union[float, Sequence[float]], int]


def default_js_grid(centers: np.ndarray, sigma: float, bins: int = DEFAULT_JS_BINS) -> Grid:
    """Bounding box of the mixture centers padded by 4 sigma on every side."""
    centers = _as_samples(centers, "centers")
    pad = JS_GRID_PADDING_SIGMAS * float(sigma)
    return (
        (centers.min(axis=0) - pad).tolist(),
        (centers.max(axis=0) + pad).tolist(),
        int(bins),
    )


def _cell_indices(samples: np.ndarray, lo: np.ndarray, hi: np.ndarray, bins: int) -> np.ndarray:
    # bins regular cells per dim plus one overflow cell (index `bins`)
    scaled = (samples - lo) / (hi - lo) * bins
    inside = (samples >= lo) & (samples <= hi)
    per_dim = np.where(inside, np.minimum(np.floor(scaled), bins - 1), bins).astype(np.int64)
    flat = np.zeros(samples.shape[0], dtype=np.int64)
    for j in range(samples.shape[1]):
        flat = flat * (bins + 1) + per_dim[:, j]
    return flat


def js_histogram(real: np.ndarray, gen: np.ndarray, grid: Optional[Grid] = None) -> MetricReport:
    """Jensen-Shannon divergence (natural log) between histograms of the two sets.
    Args:
        grid: (lo, hi, bins per dim); lo / hi may be scalars or per-dim sequences.
            Samples outside [lo, hi] land in a per-dim overflow bin.
            Defaults to the joint bounding box with 64 bins.
    """
    real = _as_samples(real, "real")
    gen = _as_samples(gen, "gen")
    d = real.shape[1]
    if gen.shape[1] != d:
        raise ShapeMismatchError(f"real has dim {d} but gen has dim {gen.shape[1]}")
    if grid is None:
        both = np.vstack([real, gen])
        grid = (both.min(axis=0).tolist(), both.max(axis=0).tolist(), DEFAULT_JS_BINS)
    lo_raw, hi_raw, bins = grid
    bins = int(bins)
    if bins < 2:
        raise ConfigurationError(f"js_histogram needs at least 2 bins per dim, got {bins}")
    lo = np.broadcast_to(np.asarray(lo_raw, dtype=np.float64), (d,)).copy()
    hi = np.broadcast_to(np.asarray(hi_raw, dtype=np.float64), (d,)).copy()
    degenerate = hi <= lo
    hi[degenerate] = lo[degenerate] + 1.0

    cells = (bins + 1) ** d
    p = np.bincount(_cell_indices(real, lo, hi, bins), minlength=cells) / real.shape[0] + JS_SMOOTHING
    q = np.bincount(_cell_indices(gen, lo, hi, bins), minlength=cells) / gen.shape[0] + JS_SMOOTHING
    p = p / p.sum()
    q = q / q.sum()
    mixture = 0.5 * (p + q)
    value = 0.5 * float(np.sum(p * np.log(p / mixture))) + 0.5 * float(np.sum(q * np.log(q / mixture)))
    value = min(max(value, 0.0), LN2)
    return MetricReport(
        name="js",
        value=value,
        params={"lo": lo.tolist(), "hi": hi.tolist(), "bins": bins, "smoothing": JS_SMOOTHING},
        sample_sizes={"real": real.shape[0], "gen": gen.shape[0]},
    )


def mode_count(
    gen: np.ndarray,
    centers: np.ndarray,
    sigma: float,
    capture_radius_sigmas: float = DEFAULT_CAPTURE_RADIUS_SIGMAS,
    min_fraction: float = DEFAULT_MIN_FRACTION,
) -> MetricReport:
    """Number of centers with at least min_fraction of the samples within
    capture_radius_sigmas * sigma."""
    gen = _as_samples(gen, "gen")
    centers = _as_samples(centers, "centers")
    if centers.shape[1] != gen.shape[1]:
        raise ShapeMismatchError(f"centers have dim {centers.shape[1]} but samples have dim {gen.shape[1]}")
    radius = capture_radius_sigmas * float(sigma)
    distances = np.linalg.norm(gen[:, None, :] - centers[None, :, :], axis=2)
    fractions = np.mean(distances <= radius, axis=0)
    captured = [int(k) for k in np.flatnonzero(fractions >= min_fraction)]
    return MetricReport(
        name="modes",
        value=float(len(captured)),
        params={
            "sigma": float(sigma),
            "capture_radius_sigmas": float(capture_radius_sigmas),
            "min_fraction": float(min_fraction),
        },
        sample_sizes={"gen": gen.shape[0], "modes": centers.shape[0]},
        details={"captured_modes": captured, "fractions": fractions.tolist()},
    )


def f1_corruption(weight_logits: np.ndarray, truth_mask: np.ndarray, threshold: float = 0.5) -> MetricReport:
    """F1 of flagging sample i as corrupted when sigmoid(theta_i) < threshold.
    No predicted and no true positives counts as a perfect score."""
    theta = as_param_vector(weight_logits, name="weight_logits")
    truth = np.asarray(truth_mask, dtype=bool).reshape(-1)
    if truth.shape[0] != theta.shape[0]:
        raise ShapeMismatchError(f"truth_mask has length {truth.shape[0]}, expected {theta.shape[0]}")
    predicted = stable_sigmoid(theta) < threshold
    tp = int(np.sum(predicted & truth))
    fp = int(np.sum(predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    denominator = 2 * tp + fp + fn
    value = 1.0 if denominator == 0 else 2.0 * tp / denominator
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    return MetricReport(
        name="f1",
        value=value,
        params={"threshold": float(threshold)},
        sample_sizes={"samples": theta.shape[0], "corrupted": int(truth.sum())},
        details={"precision": precision, "recall": recall, "tp": tp, "fp": fp, "fn": fn},
    )


class RelErrSeries(NamedTuple):
    theta_rel_err: List[float]
    ol_rel_err: List[Optional[float]]
    flags: List[str]


def rel_err_series(trace, reference) -> RelErrSeries:
    """|theta_k - theta*| / |theta*| and |F_OL(theta_k) - phi*| / |phi*| per recorded iteration.
    Args:
        trace: a SolverTrace run with record_theta enabled
        reference: (theta*, phi*) or an object with theta / phi attributes;
            phi* may be None
    Returns:
        RelErrSeries; a zero |theta*| or phi* falls back to absolute error and
        adds 'theta_absolute' or 'ol_absolute' to flags.
    """
    if trace.theta_history is None:
        raise ConfigurationError("rel_err_series needs a trace recorded with record_theta", key="record_theta")
    if hasattr(reference, "theta") and hasattr(reference, "phi"):
        theta_star, phi_star = reference.theta, reference.phi
    else:
        theta_star, phi_star = reference
    theta_star = as_param_vector(theta_star, name="theta*")
    flags = []
    scale = float(np.linalg.norm(theta_star))
    if scale == 0.0:
        flags.append("theta_absolute")
        scale = 1.0
    theta_series = [float(np.linalg.norm(theta - theta_star)) / scale for theta in trace.theta_history]

    ol_series: List[Optional[float]] = []
    if phi_star is None:
        ol_series = [None] * len(trace.records)
    else:
        phi_star = float(phi_star)
        phi_scale = abs(phi_star)
        if phi_scale == 0.0:
            flags.append("ol_absolute")
            phi_scale = 1.0
        ol_series = [abs(record.ol_value - phi_star) / phi_scale for record in trace.records]
    return RelErrSeries(theta_series, ol_series, flags)
