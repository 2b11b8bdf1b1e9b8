"""Prediction evaluation: weighted channel loss, MSE, SSIM, horizon curves.

Quantitative comparison runs on the dynamic (G) and static (B) channels
inside the common-visibility mask; the unknown channel dominates raw images
and would otherwise drown the interesting content. The weighted loss
combines all three channels as L = alpha * L_R + beta * (L_G + L_B) with
alpha < beta so static/dynamic structure carries most of the weight
(defaults alpha=0.2, beta=0.8).

Metrics are reported at 0.5 s horizon steps. `metrics.csv` holds raw
per-sequence rows (seq_id, predictor, variant, metric, horizon_s, value);
`curves.csv` holds per-bucket means plus line plots with the world-fixed
variant in blue and the ego-fixed variant in orange.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .gridimage import GridImage, R_UNKNOWN, G_DYNAMIC, B_STATIC, quantize_u8
from .predictors import Prediction
from .sequences import GridSequence, VisibilityMask

EVAL_CHANNELS = (G_DYNAMIC, B_STATIC)
METRICS = ("mse", "ssim", "wloss")
VARIANT_COLORS = {"allo": "tab:blue", "ego": "tab:orange"}


@dataclass(frozen=True)
class LossWeights:
    """Channel weights of the training-style loss; alpha must stay below beta."""

    alpha: float = 0.2
    beta: float = 0.8

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.alpha < self.beta:
            raise ValueError("alpha must be smaller than beta")


def combine_channel_losses(l_r: float, l_g: float, l_b: float, weights: LossWeights) -> float:
    return weights.alpha * l_r + weights.beta * (l_g + l_b)


def _masked_channel_mean(diff: np.ndarray, channel: int, mask: np.ndarray | None) -> float:
    if mask is None:
        return float(np.mean(diff[..., channel], dtype=np.float64))
    return float(np.mean(diff[..., channel][mask], dtype=np.float64))


def weighted_loss(
    pred: GridImage,
    target: GridImage,
    weights: LossWeights = LossWeights(),
    base: str = "l2",
    mask: np.ndarray | None = None,
) -> float:
    """alpha-weighted unknown loss plus beta-weighted dynamic+static losses."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"shape mismatch {pred.data.shape} vs {target.data.shape}")
    d = pred.data.astype(np.float64) - target.data.astype(np.float64)
    if base == "l2":
        d = d * d
    elif base == "l1":
        d = np.abs(d)
    else:
        raise ValueError(f"unknown base loss {base!r}")
    return combine_channel_losses(
        _masked_channel_mean(d, R_UNKNOWN, mask),
        _masked_channel_mean(d, G_DYNAMIC, mask),
        _masked_channel_mean(d, B_STATIC, mask),
        weights,
    )


def channel_mse(
    pred: GridImage,
    target: GridImage,
    channels: tuple = EVAL_CHANNELS,
    mask: np.ndarray | None = None,
) -> float:
    """Mean squared pixel difference over the selected channels inside the mask."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"shape mismatch {pred.data.shape} vs {target.data.shape}")
    if mask is not None and not np.any(mask):
        raise ValueError("empty mask: MSE undefined")
    d = pred.data.astype(np.float64) - target.data.astype(np.float64)
    sq = d * d
    vals = [sq[..., ch] if mask is None else sq[..., ch][mask] for ch in channels]
    return float(np.mean(np.stack(vals), dtype=np.float64))


# -- SSIM ---------------------------------------------------------------------


def _gaussian_kernel_1d(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    x = np.arange(window) - half
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _local_mean(arr: np.ndarray, k1d: np.ndarray, norm: np.ndarray) -> np.ndarray:
    out = correlate1d(arr, k1d, axis=0, mode="constant", cval=0.0)
    out = correlate1d(out, k1d, axis=1, mode="constant", cval=0.0)
    return out / norm


def _window_norm(shape: tuple, k1d: np.ndarray) -> np.ndarray:
    ones_r = correlate1d(np.ones(shape[0]), k1d, mode="constant", cval=0.0)
    ones_c = correlate1d(np.ones(shape[1]), k1d, mode="constant", cval=0.0)
    return np.outer(ones_r, ones_c)


def ssim_map(
    x: np.ndarray,
    y: np.ndarray,
    window: int = 11,
    sigma: float = 1.5,
    dynamic_range: float = 1.0,
) -> np.ndarray:
    """Per-pixel structural similarity of two single-channel images.

    Gaussian windows are clipped to the image and renormalized, so borders
    (and images smaller than the window) use exactly the pixels available.
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < window:
        warnings.warn(
            f"image {x.shape} smaller than the {window}x{window} SSIM window; "
            "windows shrink to the image",
            stacklevel=2,
        )
    x = x.astype(np.float64)
    y = y.astype(np.float64)
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    k1d = _gaussian_kernel_1d(window, sigma)
    norm = _window_norm(x.shape, k1d)
    mu_x = _local_mean(x, k1d, norm)
    mu_y = _local_mean(y, k1d, norm)
    var_x = _local_mean(x * x, k1d, norm) - mu_x * mu_x
    var_y = _local_mean(y * y, k1d, norm) - mu_y * mu_y
    cov = _local_mean(x * y, k1d, norm) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return num / den


def ssim(
    pred: GridImage,
    target: GridImage,
    channels: tuple = EVAL_CHANNELS,
    mask: np.ndarray | None = None,
    window: int = 11,
    sigma: float = 1.5,
    dynamic_range: float = 1.0,
) -> float:
    """Mean SSIM over the selected channels inside the mask."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"shape mismatch {pred.data.shape} vs {target.data.shape}")
    if mask is not None and not np.any(mask):
        raise ValueError("empty mask: SSIM undefined")
    vals = []
    for ch in channels:
        m = ssim_map(pred.data[..., ch], target.data[..., ch], window, sigma, dynamic_range)
        vals.append(m if mask is None else m[mask])
    return float(np.mean(np.stack(vals), dtype=np.float64))


# -- per-sequence evaluation ----------------------------------------------------


@dataclass
class MetricRow:
    seq_id: str
    predictor: str
    variant: str
    metric: str
    horizon_s: float
    value: float

    def as_list(self) -> list:
        return [self.seq_id, self.predictor, self.variant, self.metric,
                f"{self.horizon_s:.1f}", repr(self.value)]


@dataclass
class EvalReport:
    """Metric values of one (sequence, predictor, variant) evaluation."""

    seq_id: str
    predictor: str
    variant: str
    rows: list = field(default_factory=list)

    def mean(self, metric: str) -> float:
        vals = [r.value for r in self.rows if r.metric == metric]
        return float(np.mean(vals))


def horizon_buckets(p: int, dt: float = 0.1, step_s: float = 0.5) -> list[int]:
    """Target-frame indices (1-based) at each 0.5 s horizon step."""
    per = max(1, int(round(step_s / dt)))
    buckets = list(range(per, p + 1, per))
    return buckets or [p]


def evaluate_prediction(
    seq: GridSequence,
    pred: Prediction,
    mask: VisibilityMask | None = None,
    weights: LossWeights = LossWeights(),
    base: str = "l2",
) -> EvalReport:
    """Score one prediction against the sequence targets at 0.5 s buckets."""
    pred.validate(seq.p)
    report = EvalReport(seq.seq_id, pred.predictor_id, seq.variant)
    for k in horizon_buckets(seq.p, seq.dt):
        target = seq.targets[k - 1]
        phat = pred.frames[k - 1]
        m = None if mask is None else mask.frames[seq.n + k - 1]
        h = k * seq.dt
        report.rows.append(MetricRow(seq.seq_id, pred.predictor_id, seq.variant,
                                     "mse", h, channel_mse(phat, target, mask=m)))
        report.rows.append(MetricRow(seq.seq_id, pred.predictor_id, seq.variant,
                                     "ssim", h, ssim(phat, target, mask=m)))
        report.rows.append(MetricRow(seq.seq_id, pred.predictor_id, seq.variant,
                                     "wloss", h, weighted_loss(phat, target, weights, base, mask=m)))
    return report


# -- CSV + curves ---------------------------------------------------------------


def write_metrics_csv(rows: list[MetricRow], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["seq_id", "predictor", "variant", "metric", "horizon_s", "value"])
        for r in rows:
            w.writerow(r.as_list())


def read_metrics_csv(path) -> list[MetricRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for rec in reader:
            rows.append(
                MetricRow(rec["seq_id"], rec["predictor"], rec["variant"], rec["metric"],
                          float(rec["horizon_s"]), float(rec["value"]))
            )
    return rows


def horizon_curves(rows: list[MetricRow], out_dir=None) -> list[dict]:
    """Mean metric per (predictor, variant, metric, horizon bucket).

    Optionally writes curves.csv and one line-plot image per metric into
    `out_dir`, world-fixed curves in blue, ego-fixed in orange.
    """
    if not rows:
        raise ValueError("no metric rows to aggregate")
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.predictor, r.variant, r.metric, r.horizon_s), []).append(r.value)
    curves = [
        {
            "predictor": k[0],
            "variant": k[1],
            "metric": k[2],
            "horizon_s": k[3],
            "mean_value": float(np.mean(v)),
            "n": len(v),
        }
        for k, v in sorted(groups.items())
    ]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "curves.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["predictor", "variant", "metric", "horizon_s", "mean_value", "n"])
            for c in curves:
                w.writerow([c["predictor"], c["variant"], c["metric"],
                            f"{c['horizon_s']:.1f}", repr(c["mean_value"]), c["n"]])
        _plot_curves(curves, out_dir)
    return curves


def _plot_curves(curves: list[dict], out_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    metrics = sorted({c["metric"] for c in curves})
    styles = ["-", "--", ":", "-."]
    for metric in metrics:
        fig, ax = plt.subplots(figsize=(5.5, 4.0))
        sel = [c for c in curves if c["metric"] == metric]
        predictors = sorted({c["predictor"] for c in sel})
        for c_pred, style in zip(predictors, styles * 8):
            for variant in ("allo", "ego"):
                pts = sorted(
                    [(c["horizon_s"], c["mean_value"]) for c in sel
                     if c["predictor"] == c_pred and c["variant"] == variant]
                )
                if not pts:
                    continue
                xs, ys = zip(*pts)
                ax.plot(xs, ys, style, color=VARIANT_COLORS.get(variant, "k"),
                        label=f"{c_pred} / {variant}")
        ax.set_xlabel("prediction horizon [s]")
        ax.set_ylabel(metric.upper())
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out_dir / f"curve_{metric}.png", dpi=130)
        plt.close(fig)


def write_eval_meta(path, weights: LossWeights, masked: bool, base: str = "l2") -> None:
    Path(path).write_text(
        json.dumps(
            {
                "channels": "GB",
                "alpha": weights.alpha,
                "beta": weights.beta,
                "base_loss": base,
                "masked": masked,
                "horizon_step_s": 0.5,
            },
            indent=2,
            sort_keys=True,
        )
    )


# -- qualitative strip -----------------------------------------------------------


def render_comparison_strip(
    seq: GridSequence,
    predictions: list[Prediction],
    instants: tuple = (0.5, 1.5, 2.5),
    path=None,
    zoom: tuple | None = None,
    pad: int = 2,
) -> np.ndarray:
    """Tile target and predicted frames at the requested instants.

    Rows: ground-truth targets, then one row per prediction; columns follow
    `instants`. Tiles are copied pixel-exact (optionally cropped to the zoom
    box (row0, col0, row1, col1)); written as 8-bit PNG when `path` given.
    """
    idxs = []
    for s in instants:
        k = int(round(s / seq.dt))
        if k < 1 or k > seq.p:
            raise ValueError(f"instant {s}s outside the {seq.p * seq.dt:.1f}s horizon")
        idxs.append(k - 1)

    def tile(img: GridImage) -> np.ndarray:
        d = img.data
        if zoom is not None:
            r0, c0, r1, c1 = zoom
            d = d[r0:r1, c0:c1]
        return d

    rows_img = [[tile(seq.targets[i]) for i in idxs]]
    for pred in predictions:
        rows_img.append([tile(pred.frames[i]) for i in idxs])

    th, tw = rows_img[0][0].shape[:2]
    n_r, n_c = len(rows_img), len(idxs)
    canvas = np.ones((n_r * th + (n_r + 1) * pad, n_c * tw + (n_c + 1) * pad, 3))
    for r, row in enumerate(rows_img):
        for c, t in enumerate(row):
            y0 = pad + r * (th + pad)
            x0 = pad + c * (tw + pad)
            canvas[y0 : y0 + th, x0 : x0 + tw] = t
    if path is not None:
        from PIL import Image as PILImage

        PILImage.fromarray(quantize_u8(canvas), mode="RGB").save(path)
    return canvas
