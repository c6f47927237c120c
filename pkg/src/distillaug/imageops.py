"""Pixel-exact image transforms and the distortion-level parameter mapping.

Images are 8-bit (H, W, C) buffers. Every transform is a pure function: it
returns a fresh image, never mutates its input, and is fully deterministic
given (image, parameter, fill). Geometric transforms use inverse-mapped
nearest-neighbor resampling so results are byte-exact across platforms;
pixels exposed by geometric motion are set to a caller-supplied fill byte.

Two operator spaces are supported:

* ``Full14`` -- the classic AutoAugment set of 14 operators with a
  RandAugment-style 31-level (0..30) linear magnitude scale.
* ``Destruction`` -- the geometric subset {shear-x, shear-y, translate-x,
  translate-y} plus cutout, on an 11-level (0..10) scale where level 0 is
  the identity and translate at level 10 wipes the whole visible field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "Image",
    "TransformKind",
    "TransformParam",
    "AugmentSpace",
    "magnitude_to_param",
    "apply",
    "blank_fraction",
    "tau_magnitude",
    "DEFAULT_FILL",
]

DEFAULT_FILL = 128  # mid-gray for pixels vacated by geometric motion


class TransformKind(Enum):
    """The 15 supported operators.

    The first 14 members (values 0..13) form the classic full operator set,
    in canonical order; the value doubles as the operator's slot in the
    14-dimensional transform vector. Cutout has no slot and belongs only to
    the destruction space.
    """

    INVERT = 0
    AUTO_CONTRAST = 1
    EQUALIZE = 2
    ROTATE = 3
    SOLARIZE = 4
    COLOR = 5
    POSTERIZE = 6
    CONTRAST = 7
    BRIGHTNESS = 8
    SHARPNESS = 9
    SHEAR_X = 10
    SHEAR_Y = 11
    TRANSLATE_X = 12
    TRANSLATE_Y = 13
    CUTOUT = 14

    @property
    def token(self) -> str:
        """Name used in policy files, e.g. ``shear-x`` or ``autoContrast``."""
        return _KIND_TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "TransformKind":
        try:
            return _TOKEN_KINDS[token]
        except KeyError:
            raise ValueError(f"unknown transform kind {token!r}") from None


_KIND_TOKENS = {
    TransformKind.INVERT: "invert",
    TransformKind.AUTO_CONTRAST: "autoContrast",
    TransformKind.EQUALIZE: "equalize",
    TransformKind.ROTATE: "rotate",
    TransformKind.SOLARIZE: "solarize",
    TransformKind.COLOR: "color",
    TransformKind.POSTERIZE: "posterize",
    TransformKind.CONTRAST: "contrast",
    TransformKind.BRIGHTNESS: "brightness",
    TransformKind.SHARPNESS: "sharpness",
    TransformKind.SHEAR_X: "shear-x",
    TransformKind.SHEAR_Y: "shear-y",
    TransformKind.TRANSLATE_X: "translate-x",
    TransformKind.TRANSLATE_Y: "translate-y",
    TransformKind.CUTOUT: "cutout",
}
_TOKEN_KINDS = {v: k for k, v in _KIND_TOKENS.items()}

# Kinds whose parameter is a signed strength; the sampler resolves the sign.
DIRECTIONAL_KINDS = frozenset(
    {
        TransformKind.ROTATE,
        TransformKind.SHEAR_X,
        TransformKind.SHEAR_Y,
        TransformKind.TRANSLATE_X,
        TransformKind.TRANSLATE_Y,
    }
)

# Kinds whose parameter is a blend factor around the identity value 1.0; the
# sampler may reflect the factor to the other side of 1.0.
BLEND_KINDS = frozenset(
    {
        TransformKind.COLOR,
        TransformKind.CONTRAST,
        TransformKind.BRIGHTNESS,
        TransformKind.SHARPNESS,
    }
)

# On/off kinds: parameter 0.0 means identity, 1.0 means apply.
FLAG_KINDS = frozenset(
    {TransformKind.INVERT, TransformKind.AUTO_CONTRAST, TransformKind.EQUALIZE}
)


class AugmentSpace(Enum):
    """Operator space a policy samples from."""

    FULL14 = "full14"
    DESTRUCTION = "destruction"

    @property
    def kinds(self) -> tuple[TransformKind, ...]:
        if self is AugmentSpace.FULL14:
            return tuple(k for k in TransformKind if k is not TransformKind.CUTOUT)
        return (
            TransformKind.SHEAR_X,
            TransformKind.SHEAR_Y,
            TransformKind.TRANSLATE_X,
            TransformKind.TRANSLATE_Y,
            TransformKind.CUTOUT,
        )

    @property
    def max_level(self) -> int:
        return 30 if self is AugmentSpace.FULL14 else 10


@dataclass(frozen=True)
class Image:
    """An 8-bit image: (height, width, channels) uint8 array, row-major.

    The pixel buffer is copied on construction and marked read-only, so an
    Image can be shared freely between workers.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {px.dtype}")
        if px.ndim != 3:
            raise ValueError(f"pixels must be (H, W, C), got shape {px.shape}")
        if px.shape[2] not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {px.shape[2]}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be non-empty")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


@dataclass(frozen=True)
class TransformParam:
    """One concrete transform: operator plus its resolved parameter.

    ``value`` units depend on the kind: degrees for rotate, signed fraction
    of the visible field for translate/shear, threshold 0..256 for solarize,
    bit count 1..8 for posterize, blend factor >= 0 for the four enhancement
    ops, side fraction 0..1 for cutout, and an on/off flag (0 or 1) for
    invert / equalize / autoContrast.

    ``center`` applies to cutout only: the square's center as (x, y)
    fractions of the image extent. None places the square at the image
    center; the policy sampler fills in a random position.
    """

    kind: TransformKind
    value: float = 0.0
    center: tuple[float, float] | None = None

    def __post_init__(self):
        k, v = self.kind, self.value
        if not math.isfinite(v):
            raise ValueError(f"{k.token}: non-finite value {v}")
        if k in FLAG_KINDS:
            if v not in (0.0, 1.0):
                raise ValueError(f"{k.token}: flag value must be 0 or 1, got {v}")
        elif k in BLEND_KINDS:
            if v < 0.0:
                raise ValueError(f"{k.token}: blend factor must be >= 0, got {v}")
        elif k is TransformKind.SOLARIZE:
            if not 0.0 <= v <= 256.0:
                raise ValueError(f"solarize threshold out of range: {v}")
        elif k is TransformKind.POSTERIZE:
            if v != int(v) or not 1 <= v <= 8:
                raise ValueError(f"posterize bits must be an integer in 1..8, got {v}")
        elif k is TransformKind.CUTOUT:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"cutout side fraction out of range: {v}")
        elif k in (
            TransformKind.SHEAR_X,
            TransformKind.SHEAR_Y,
            TransformKind.TRANSLATE_X,
            TransformKind.TRANSLATE_Y,
        ):
            if not -1.0 <= v <= 1.0:
                raise ValueError(f"{k.token}: fraction out of range: {v}")
        if self.center is not None:
            if k is not TransformKind.CUTOUT:
                raise ValueError(f"{k.token}: center only applies to cutout")
            cx, cy = self.center
            if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
                raise ValueError(f"cutout center out of range: {self.center}")


# Full-space maxima at the top magnitude level, per the common RandAugment
# convention: linear interpolation from identity over 31 levels.
_FULL14_MAX_ROTATE_DEG = 30.0
_FULL14_MAX_SHEAR = 0.3
_FULL14_MAX_TRANSLATE = 0.45
_FULL14_MAX_BLEND_DELTA = 0.9
_FULL14_LEVELS = 30
_DESTRUCTION_LEVELS = 10


def magnitude_to_param(
    kind: TransformKind, m: int, space: AugmentSpace
) -> TransformParam:
    """Map a discrete distortion level to the transform's strongest parameter.

    Level 0 is the identity for every kind. The destruction space is linear
    over 10 levels: translate/shear fraction and cutout side fraction are
    m/10, so translate at level 10 pushes the whole image out of view. The
    full space interpolates linearly over 30 levels up to per-kind maxima.

    Directional sign (and cutout placement) is resolved by the sampler, not
    here; the returned strength is unsigned.
    """
    if m != int(m) or not 0 <= m <= space.max_level:
        raise ValueError(f"magnitude {m} out of range 0..{space.max_level} for {space.value}")
    if kind not in space.kinds:
        raise ValueError(f"{kind.token} is not part of the {space.value} space")
    m = int(m)

    if space is AugmentSpace.DESTRUCTION:
        frac = m / _DESTRUCTION_LEVELS
        if kind is TransformKind.CUTOUT:
            return TransformParam(kind, frac)
        return TransformParam(kind, frac)

    t = m / _FULL14_LEVELS
    if kind in FLAG_KINDS:
        return TransformParam(kind, 0.0 if m == 0 else 1.0)
    if kind is TransformKind.ROTATE:
        return TransformParam(kind, _FULL14_MAX_ROTATE_DEG * t)
    if kind in (TransformKind.SHEAR_X, TransformKind.SHEAR_Y):
        return TransformParam(kind, _FULL14_MAX_SHEAR * t)
    if kind in (TransformKind.TRANSLATE_X, TransformKind.TRANSLATE_Y):
        return TransformParam(kind, _FULL14_MAX_TRANSLATE * t)
    if kind is TransformKind.SOLARIZE:
        return TransformParam(kind, 256.0 * (1.0 - t))
    if kind is TransformKind.POSTERIZE:
        return TransformParam(kind, float(8 - int(round(4 * t))))
    # blend kinds: factor drifts from 1.0 toward 1.9 (sampler may reflect)
    return TransformParam(kind, 1.0 + _FULL14_MAX_BLEND_DELTA * t)


def tau_magnitude(param: TransformParam) -> float:
    """Unsigned strength of a transform, with 0 meaning switched off.

    Used to fill transform-vector slots: identity parameters of every kind
    map to 0 (blend factors measure their deviation from 1.0, solarize the
    distance of its threshold from 256, posterize the number of dropped
    bits).
    """
    k, v = param.kind, param.value
    if k in BLEND_KINDS:
        return abs(v - 1.0)
    if k is TransformKind.SOLARIZE:
        return 256.0 - v
    if k is TransformKind.POSTERIZE:
        return 8.0 - v
    return abs(v)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _round_half_down_nonneg(x: np.ndarray) -> np.ndarray:
    # round-half-toward-zero for non-negative values
    return np.ceil(x - 0.5)


def _shift_px(fraction: float, size: int) -> int:
    """Signed pixel shift for a signed fraction of a size-pixel extent."""
    mag = _round_half_up(abs(fraction) * size)
    return mag if fraction >= 0 else -mag


def _gather(px: np.ndarray, ys: np.ndarray, xs: np.ndarray, fill: int) -> np.ndarray:
    """Inverse-map gather: out[y, x] = px[ys, xs] where in bounds, else fill."""
    h, w = px.shape[:2]
    valid = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    out = np.full_like(px, fill)
    yc = np.clip(ys, 0, h - 1)
    xc = np.clip(xs, 0, w - 1)
    out[valid] = px[yc, xc][valid]
    return out


def _translate(px, fraction, axis, fill):
    h, w = px.shape[:2]
    d = _shift_px(fraction, w if axis == 0 else h)
    out = np.full_like(px, fill)
    if abs(d) >= (w if axis == 0 else h):
        return out
    if axis == 0:  # horizontal
        if d >= 0:
            out[:, d:] = px[:, : w - d]
        else:
            out[:, : w + d] = px[:, -d:]
    else:  # vertical
        if d >= 0:
            out[d:, :] = px[: h - d, :]
        else:
            out[: h + d, :] = px[-d:, :]
    return out


def _shear(px, fraction, axis, fill):
    # Row (column) y shifts by fraction * W * y / (H - 1): the far edge moves
    # by the full stated fraction of the visible field, the near edge not at
    # all.
    h, w = px.shape[:2]
    if axis == 0:
        if h == 1:
            return px.copy()
        rows = np.arange(h, dtype=np.float64)
        d = np.sign(fraction) * np.floor(np.abs(fraction) * w * rows / (h - 1) + 0.5)
        ys = np.broadcast_to(np.arange(h)[:, None], (h, w))
        xs = np.arange(w)[None, :] - d[:, None].astype(np.int64)
    else:
        if w == 1:
            return px.copy()
        cols = np.arange(w, dtype=np.float64)
        d = np.sign(fraction) * np.floor(np.abs(fraction) * h * cols / (w - 1) + 0.5)
        xs = np.broadcast_to(np.arange(w)[None, :], (h, w))
        ys = np.arange(h)[:, None] - d[None, :].astype(np.int64)
    return _gather(px, np.asarray(ys, dtype=np.int64), np.asarray(xs, dtype=np.int64), fill)


def _rotate(px, degrees, fill):
    if degrees == 0.0:
        return px.copy()
    h, w = px.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = x - cx, y - cy
    # inverse rotation of the destination grid back into the source
    xs = np.floor(c * dx + s * dy + cx + 0.5).astype(np.int64)
    ys = np.floor(-s * dx + c * dy + cy + 0.5).astype(np.int64)
    return _gather(px, ys, xs, fill)


def _cutout(px, side_fraction, center, fill):
    h, w = px.shape[:2]
    side = _round_half_up(side_fraction * min(h, w))
    if side <= 0:
        return px.copy()
    if center is None:
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    else:
        cx, cy = center[0] * (w - 1), center[1] * (h - 1)
    cx, cy = _round_half_up(cx), _round_half_up(cy)
    x0, y0 = cx - side // 2, cy - side // 2
    out = px.copy()
    out[max(y0, 0) : max(y0 + side, 0), max(x0, 0) : max(x0 + side, 0)] = fill
    return out


def _invert(px):
    return (255 - px.astype(np.int16)).astype(np.uint8)


def _solarize(px, threshold):
    inverted = 255 - px.astype(np.int16)
    return np.where(px >= threshold, inverted, px).astype(np.uint8)


def _posterize(px, bits):
    mask = np.uint8(0xFF << (8 - int(bits)) & 0xFF)
    return px & mask


def _autocontrast(px):
    out = np.empty_like(px)
    for ch in range(px.shape[2]):
        plane = px[:, :, ch]
        lo, hi = int(plane.min()), int(plane.max())
        if hi == lo:
            out[:, :, ch] = plane
            continue
        span = hi - lo
        # integer round-half-toward-zero of 255 * (v - lo) / span
        v = plane.astype(np.int64) - lo
        out[:, :, ch] = ((510 * v + span - 1) // (2 * span)).astype(np.uint8)
    return out


def _equalize(px):
    out = np.empty_like(px)
    n = px.shape[0] * px.shape[1]
    for ch in range(px.shape[2]):
        plane = px[:, :, ch]
        hist = np.bincount(plane.ravel(), minlength=256)
        if np.count_nonzero(hist) <= 1:
            out[:, :, ch] = plane
            continue
        cum = np.cumsum(hist)
        # map each level through round-half-toward-zero of 255 * cum / n;
        # the map depends only on cumulative counts, which a second pass
        # inherits exactly, so equalization is idempotent
        lut = ((510 * cum + n - 1) // (2 * n)).astype(np.uint8)
        out[:, :, ch] = lut[plane]
    return out


def _grayscale(px):
    if px.shape[2] == 1:
        return px[:, :, 0].astype(np.float64)
    r, g, b = (px[:, :, i].astype(np.float64) for i in range(3))
    return 0.299 * r + 0.587 * g + 0.114 * b


def _blend(base: np.ndarray, degenerate: np.ndarray, factor: float) -> np.ndarray:
    mixed = degenerate + factor * (base.astype(np.float64) - degenerate)
    mixed = np.clip(mixed, 0.0, 255.0)
    return _round_half_down_nonneg(mixed).astype(np.uint8)


def _smooth(px):
    # 3x3 kernel [[1,1,1],[1,5,1],[1,1,1]] / 13; border pixels keep their
    # original values
    f = px.astype(np.float64)
    h, w = f.shape[:2]
    out = f.copy()
    if h >= 3 and w >= 3:
        acc = 5.0 * f[1:-1, 1:-1]
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                acc = acc + f[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
        out[1:-1, 1:-1] = acc / 13.0
    return out


def apply(img: Image, param: TransformParam, fill: int = DEFAULT_FILL) -> Image:
    """Apply one transform; returns a new image of the same dimensions."""
    if not 0 <= fill <= 255:
        raise ValueError(f"fill byte out of range: {fill}")
    px = img.pixels
    k, v = param.kind, param.value

    if k is TransformKind.INVERT:
        out = _invert(px) if v else px.copy()
    elif k is TransformKind.AUTO_CONTRAST:
        out = _autocontrast(px) if v else px.copy()
    elif k is TransformKind.EQUALIZE:
        out = _equalize(px) if v else px.copy()
    elif k is TransformKind.ROTATE:
        out = _rotate(px, v, fill)
    elif k is TransformKind.SOLARIZE:
        out = _solarize(px, v)
    elif k is TransformKind.POSTERIZE:
        out = _posterize(px, v)
    elif k is TransformKind.COLOR:
        gray = _round_half_down_nonneg(np.clip(_grayscale(px), 0.0, 255.0))
        degenerate = np.repeat(gray[:, :, None], px.shape[2], axis=2)
        out = _blend(px, degenerate, v)
    elif k is TransformKind.CONTRAST:
        mean = _round_half_down_nonneg(np.clip(np.mean(_grayscale(px)), 0.0, 255.0))
        out = _blend(px, np.full(px.shape, mean, dtype=np.float64), v)
    elif k is TransformKind.BRIGHTNESS:
        out = _blend(px, np.zeros(px.shape, dtype=np.float64), v)
    elif k is TransformKind.SHARPNESS:
        out = _blend(px, _smooth(px), v)
    elif k is TransformKind.SHEAR_X:
        out = _shear(px, v, 0, fill)
    elif k is TransformKind.SHEAR_Y:
        out = _shear(px, v, 1, fill)
    elif k is TransformKind.TRANSLATE_X:
        out = _translate(px, v, 0, fill)
    elif k is TransformKind.TRANSLATE_Y:
        out = _translate(px, v, 1, fill)
    elif k is TransformKind.CUTOUT:
        out = _cutout(px, v, param.center, fill)
    else:  # pragma: no cover
        raise ValueError(f"unhandled kind {k}")
    return Image(out)


def blank_fraction(img: Image, fill: int = DEFAULT_FILL) -> float:
    """Fraction of pixels whose every channel equals the fill byte."""
    flat = np.all(img.pixels == fill, axis=2)
    return float(np.mean(flat))
