"""Segmentation loss kernels (focal, Dice, combined), the concurrent spatial
and channel squeeze-and-excitation recalibration used at U-Net skip
connections, and pixel-level mask metrics.

Feature maps are ``H x W x C`` arrays; masks are ``H x W``.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import _binio
from .errors import ConfigError, DataError

TENSOR_MAGIC = b"DMHT"
PROB_EPS = 1e-7


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class CombinedLossConfig:
    focal: FocalParams = FocalParams()
    dice_smoothing: float = 1e-6
    focal_weight: float = 0.5
    dice_weight: float = 0.5

    def __post_init__(self):
        if self.focal_weight < 0 or self.dice_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.focal_weight + self.dice_weight <= 0:
            raise ConfigError("focal_weight + dice_weight must be positive")
        if self.dice_smoothing <= 0:
            raise ConfigError("dice_smoothing must be positive")


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DataError(f"shape mismatch: pred {pred.shape}, target {target.shape}")
    return pred, target


def focal_loss(pred, target, params: FocalParams = FocalParams()) -> float:
    """Mean over pixels of ``-alpha_t (1 - p_t)^gamma log(p_t)``.

    ``pred`` holds foreground probabilities, clamped to ``[1e-7, 1 - 1e-7]``.
    ``p_t`` is ``pred`` on foreground pixels and ``1 - pred`` elsewhere;
    ``alpha_t`` is ``alpha`` on foreground and ``1 - alpha`` elsewhere.
    """
    pred, target = _pair(pred, target)
    p = np.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    fg = target == 1
    p_t = np.where(fg, p, 1.0 - p)
    alpha_t = np.where(fg, params.alpha, 1.0 - params.alpha)
    return float(np.mean(-alpha_t * (1.0 - p_t) ** params.gamma * np.log(p_t)))


def dice_loss(pred, target, smoothing: float = 1e-6) -> float:
    pred, target = _pair(pred, target)
    inter = float((pred * target).sum())
    return 1.0 - (2.0 * inter + smoothing) / (float(pred.sum()) + float(target.sum()) + smoothing)


def combined_loss(pred, target, cfg: CombinedLossConfig = CombinedLossConfig()):
    """Weighted focal + Dice loss. Returns ``(total, {"focal": ..., "dice": ...})``."""
    focal = focal_loss(pred, target, cfg.focal)
    dice = dice_loss(pred, target, cfg.dice_smoothing)
    return cfg.focal_weight * focal + cfg.dice_weight * dice, {"focal": focal, "dice": dice}


@dataclass(frozen=True, eq=False)
class SCSEParams:
    """Weights for :func:`scse_recalibrate` with ``C`` output channels.

    ``fuse_w`` (2C x C) maps the concatenated skip tensor down to C channels;
    the channel branch is a ``C -> C/r -> C`` bottleneck applied to the
    pooled fused tensor; the spatial branch is a ``2C -> 1`` projection of
    the concatenated tensor.
    """

    fuse_w: np.ndarray
    fuse_b: np.ndarray
    cse_reduce_w: np.ndarray
    cse_reduce_b: np.ndarray
    cse_expand_w: np.ndarray
    cse_expand_b: np.ndarray
    sse_w: np.ndarray
    sse_b: float

    def __post_init__(self):
        for name in ("fuse_w", "fuse_b", "cse_reduce_w", "cse_reduce_b",
                     "cse_expand_w", "cse_expand_b", "sse_w"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.isfinite(arr).all():
                raise DataError(f"SCSEParams.{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "sse_b", float(self.sse_b))
        two_c, c = self.fuse_w.shape
        hidden = self.cse_reduce_w.shape[1]
        expected = {
            "fuse_b": (c,), "cse_reduce_w": (c, hidden), "cse_reduce_b": (hidden,),
            "cse_expand_w": (hidden, c), "cse_expand_b": (c,), "sse_w": (2 * c,),
        }
        if two_c != 2 * c:
            raise DataError(f"fuse_w must be 2C x C, got {self.fuse_w.shape}")
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DataError(f"SCSEParams.{name}: shape {getattr(self, name).shape}, expected {shape}")
        if hidden < 1 or c % hidden:
            raise ConfigError(f"reduction ratio must divide C={c} (bottleneck width {hidden})")

    @property
    def channels(self) -> int:
        return self.fuse_w.shape[1]

    @classmethod
    def zeros(cls, channels: int, reduction: int = 1) -> "SCSEParams":
        if reduction < 1 or channels % reduction:
            raise ConfigError(f"reduction {reduction} must divide C={channels}")
        c, h = channels, channels // reduction
        return cls(np.zeros((2 * c, c)), np.zeros(c), np.zeros((c, h)), np.zeros(h),
                   np.zeros((h, c)), np.zeros(c), np.zeros(2 * c), 0.0)

    @classmethod
    def random(cls, channels: int, reduction: int = 1, seed: int = 0) -> "SCSEParams":
        if reduction < 1 or channels % reduction:
            raise ConfigError(f"reduction {reduction} must divide C={channels}")
        rng = np.random.default_rng(seed)
        c, h = channels, channels // reduction
        return cls(rng.normal(0, 0.5, (2 * c, c)), rng.normal(0, 0.1, c),
                   rng.normal(0, 0.5, (c, h)), rng.normal(0, 0.1, h),
                   rng.normal(0, 0.5, (h, c)), rng.normal(0, 0.1, c),
                   rng.normal(0, 0.5, 2 * c), float(rng.normal(0, 0.1)))


def scse_attention(f_e, f_d, params: SCSEParams):
    """Return ``(fused, channel_attention, spatial_attention)`` for the skip pair."""
    f_e = np.asarray(f_e, dtype=np.float64)
    f_d = np.asarray(f_d, dtype=np.float64)
    if f_e.ndim != 3 or f_e.shape != f_d.shape:
        raise DataError(f"f_e {f_e.shape} and f_d {f_d.shape} must be equal H x W x C maps")
    if f_e.shape[2] != params.channels:
        raise DataError(f"feature maps have {f_e.shape[2]} channels, params expect {params.channels}")
    cat = np.concatenate([f_e, f_d], axis=2)
    fused = cat @ params.fuse_w + params.fuse_b
    pooled = fused.mean(axis=(0, 1))
    hidden = np.maximum(pooled @ params.cse_reduce_w + params.cse_reduce_b, 0.0)
    channel = expit(hidden @ params.cse_expand_w + params.cse_expand_b)
    spatial = expit(cat @ params.sse_w + params.sse_b)
    return fused, channel, spatial


def scse_recalibrate(f_e, f_d, params: SCSEParams) -> np.ndarray:
    """``G * cSE + G * sSE`` where ``G`` is the fused skip tensor."""
    fused, channel, spatial = scse_attention(f_e, f_d, params)
    return fused * channel[None, None, :] + fused * spatial[:, :, None]


def mask_metrics(pred_binary, target):
    """Pixel IoU, accuracy, precision and recall of a binary prediction.

    IoU is 1 when both masks are empty; precision and recall with a zero
    denominator are 0.
    """
    pred, target = _pair(pred_binary, target)
    for name, arr in (("pred", pred), ("target", target)):
        if not np.isin(arr, (0.0, 1.0)).all():
            raise DataError(f"{name} mask is not binary")
    p, g = pred == 1, target == 1
    tp = int((p & g).sum())
    union = int((p | g).sum())
    iou = 1.0 if union == 0 else tp / union
    accuracy = float((p == g).mean())
    precision = tp / int(p.sum()) if p.any() else 0.0
    recall = tp / int(g.sum()) if g.any() else 0.0
    return iou, accuracy, precision, recall


def encode_tensor(T) -> bytes:
    """DMHT payload: header with H, W, C then C row-major H x W planes."""
    T = np.asarray(T, dtype=np.float64)
    if T.ndim == 2:
        T = T[:, :, None]
    if T.ndim != 3:
        raise DataError(f"expected H x W or H x W x C, got shape {T.shape}")
    w = _binio.Writer(TENSOR_MAGIC)
    for s in T.shape:
        w.u32(s)
    w.f64(np.moveaxis(T, 2, 0))
    return w.getvalue()


def decode_tensor(data: bytes, what: str = "tensor") -> np.ndarray:
    r = _binio.Reader(data, TENSOR_MAGIC, what)
    h, w, c = r.u32(), r.u32(), r.u32()
    planes = r.f64(h * w * c).reshape(c, h, w)
    r.finish()
    T = np.moveaxis(planes, 0, 2).copy()
    if not np.isfinite(T).all():
        raise DataError(f"{what}: non-finite values")
    return T


def save_tensor(T, path):
    Path(path).write_bytes(encode_tensor(T))


def load_tensor(path) -> np.ndarray:
    path = Path(path)
    try:
        return decode_tensor(path.read_bytes(), str(path))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def load_mask(path) -> np.ndarray:
    T = load_tensor(path)
    if T.shape[2] != 1:
        raise DataError(f"{path}: mask must have 1 channel, got {T.shape[2]}")
    return T[:, :, 0]
