"""Grayscale image substrate: loading, derivative fields, circular sampling.

Intensities are float64 in [0, 255] from the moment an image is loaded and
are never re-quantized, so derivative values and interpolated samples keep
full precision through the rest of the pipeline.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

from .errors import DimensionError, ImageFormatError, SamplingBoundsError

#: Circular sampling offsets snap to this grid (2**-20 px).  Dyadic offsets
#: keep position arithmetic exact in float64: lattice-aligned samples are
#: read without interpolation blur, and a 90-degree image rotation permutes
#: the offset table bitwise, which downstream rotation tests rely on.
OFFSET_QUANTUM = 2.0 ** -20

_LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True, eq=False)
class GrayImage:
    """2-D intensity field, row-major float64, values in [0, 255]."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(
                f"expected a 2-D intensity array, got shape {np.shape(self.pixels)}"
            )
        if not np.all(np.isfinite(arr)):
            raise ImageFormatError("intensities must be finite")
        lo, hi = float(arr.min()), float(arr.max())
        if lo < 0.0 or hi > 255.0:
            raise ImageFormatError(
                f"intensities must lie in [0, 255], got [{lo}, {hi}]"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Per-pixel real map aligned with a source image.

    The outer ``valid_margin`` band carries no defined values and is filled
    with NaN so that accidental reads fail loudly instead of acting like
    silent zeros.  Values inside the valid region must be finite.
    """

    pixels: np.ndarray
    valid_margin: int = 0

    def __post_init__(self) -> None:
        arr = np.array(self.pixels, dtype=np.float64)  # private copy
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(
                f"expected a 2-D field array, got shape {np.shape(self.pixels)}"
            )
        margin = int(self.valid_margin)
        if margin < 0:
            raise DimensionError("valid_margin must be >= 0")
        h, w = arr.shape
        if 2 * margin >= h or 2 * margin >= w:
            raise DimensionError(
                f"margin {margin} leaves no valid region in a {h}x{w} field"
            )
        if margin:
            arr[:margin, :] = np.nan
            arr[-margin:, :] = np.nan
            arr[:, :margin] = np.nan
            arr[:, -margin:] = np.nan
        if not np.all(np.isfinite(arr[margin:h - margin, margin:w - margin])):
            raise ValueError("scalar field has non-finite values inside its valid region")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)
        object.__setattr__(self, "valid_margin", margin)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def valid_values(self) -> np.ndarray:
        """View of the interior region that holds defined values."""
        m = self.valid_margin
        return self.pixels[m:self.height - m, m:self.width - m]


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Circular sampling geometry: ``points`` neighbors on a ring of
    ``radius`` pixels.

    Neighbor ``p`` sits at ``(x + R*cos(2*pi*p/P), y - R*sin(2*pi*p/P))``:
    index 0 on the +x axis, indices increasing counterclockwise.
    """

    radius: float
    points: int

    def __post_init__(self) -> None:
        if not (isinstance(self.points, int) and self.points >= 4 and self.points % 2 == 0):
            raise DimensionError(f"points must be an even integer >= 4, got {self.points!r}")
        r = float(self.radius)
        if not math.isfinite(r) or r < 1.0:
            raise DimensionError(f"radius must be >= 1, got {self.radius!r}")
        object.__setattr__(self, "radius", r)

    def offsets(self) -> np.ndarray:
        """(P, 2) array of (dx, dy) ring offsets, snapped to OFFSET_QUANTUM.

        When P is divisible by 4 the table is built from the first quadrant
        by exact sign swaps, so rotating the index by P/4 permutes entries
        bitwise.
        """
        p_count = self.points
        r = self.radius
        if p_count % 4 == 0:
            quarter = p_count // 4
            base = []
            for p in range(quarter):
                ang = 2.0 * math.pi * p / p_count
                base.append((_quantize(r * math.cos(ang)), _quantize(r * math.sin(ang))))
            out = list(base)
            out += [(-dy, dx) for dx, dy in base]
            out += [(-dx, -dy) for dx, dy in base]
            out += [(dy, -dx) for dx, dy in base]
        else:
            out = []
            for p in range(p_count):
                ang = 2.0 * math.pi * p / p_count
                out.append((_quantize(r * math.cos(ang)), _quantize(r * math.sin(ang))))
        return np.asarray(out, dtype=np.float64) + 0.0  # normalize -0.0


def _quantize(value: float) -> float:
    return round(value / OFFSET_QUANTUM) * OFFSET_QUANTUM


def to_grayscale(data: np.ndarray, max_value: int | None = None) -> GrayImage:
    """Collapse a 1- or 3-channel raster to a [0, 255] luminance image.

    Parameters
    ----------
    data : ndarray
        (H, W), (H, W, 1) or (H, W, 3) sample array.
    max_value : int, optional
        Full-scale sample value (255 for 8-bit, 65535 for 16-bit).  Inferred
        from the dtype when omitted; float inputs are assumed to already be
        scaled to [0, 255].

    Three-channel input is reduced with luminance weights
    0.299 R + 0.587 G + 0.114 B after rescaling channels to [0, 255].
    """
    arr = np.asarray(data)
    if max_value is None:
        if arr.dtype == np.uint8:
            max_value = 255
        elif arr.dtype == np.uint16:
            max_value = 65535
        elif np.issubdtype(arr.dtype, np.floating):
            max_value = 255
        else:
            raise ImageFormatError(f"cannot infer sample range for dtype {arr.dtype}")
    if max_value <= 0:
        raise ImageFormatError(f"max_value must be positive, got {max_value}")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    scale = 255.0 / float(max_value)
    if arr.ndim == 2:
        gray = arr.astype(np.float64) * scale
    elif arr.ndim == 3 and arr.shape[2] == 3:
        rgb = arr.astype(np.float64) * scale
        gray = (
            _LUMA_WEIGHTS[0] * rgb[:, :, 0]
            + _LUMA_WEIGHTS[1] * rgb[:, :, 1]
            + _LUMA_WEIGHTS[2] * rgb[:, :, 2]
        )
    else:
        raise ImageFormatError(
            f"unsupported raster layout: shape {arr.shape} (need 1 or 3 channels)"
        )
    # Rescaling and the weight sum can overshoot full scale by a few ulp.
    np.clip(gray, 0.0, 255.0, out=gray)
    return GrayImage(gray)


def load_image(path: str | Path) -> GrayImage:
    """Read an 8/16-bit PGM or PNG file (grayscale or RGB) as a GrayImage."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            magic = fh.read(2)
    except OSError as exc:
        raise ImageFormatError(f"cannot read '{path}': {exc}") from exc
    if magic in (b"P2", b"P5"):
        samples, maxval = _read_pgm(path)
        return to_grayscale(samples, maxval)
    if magic == b"\x89P":
        return _read_png(path)
    raise ImageFormatError(f"'{path}' is neither PGM nor PNG (magic {magic!r})")


def _read_pgm(path: Path) -> tuple[np.ndarray, int]:
    raw = path.read_bytes()
    # Header: magic, width, height, maxval; '#' comments allowed between tokens.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        match = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)").match(raw, pos)
        if match is None:
            raise ImageFormatError(f"'{path}': truncated PGM header")
        token = match.group(1)
        if token.startswith(b"#"):
            end = raw.find(b"\n", match.start(1))
            if end < 0:
                raise ImageFormatError(f"'{path}': truncated PGM header")
            pos = end
            continue
        tokens.append(token)
        pos = match.end()
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise ImageFormatError(f"'{path}': malformed PGM header") from exc
    if width < 1 or height < 1 or not (0 < maxval < 65536):
        raise ImageFormatError(f"'{path}': bad PGM dimensions or maxval")
    count = width * height
    if magic == b"P2":
        try:
            flat = np.array(raw[pos:].split()[:count], dtype="S").astype(np.int64)
        except ValueError as exc:
            raise ImageFormatError(f"'{path}': malformed ASCII PGM data") from exc
        if flat.size != count:
            raise ImageFormatError(f"'{path}': truncated PGM data")
    else:
        pos += 1  # single whitespace byte after maxval
        if maxval > 255:
            data = raw[pos:pos + 2 * count]
            if len(data) != 2 * count:
                raise ImageFormatError(f"'{path}': truncated PGM data")
            flat = np.frombuffer(data, dtype=">u2").astype(np.int64)
        else:
            data = raw[pos:pos + count]
            if len(data) != count:
                raise ImageFormatError(f"'{path}': truncated PGM data")
            flat = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    if int(flat.max()) > maxval or int(flat.min()) < 0:
        raise ImageFormatError(f"'{path}': sample outside declared range")
    return flat.reshape(height, width), maxval


def _read_png(path: Path) -> GrayImage:
    try:
        with _PILImage.open(path) as img:
            img.load()
            mode = img.mode
            if mode == "P":
                img = img.convert("RGB")
                mode = "RGB"
            if mode in ("L", "RGB"):
                return to_grayscale(np.asarray(img), 255)
            if mode in ("I", "I;16"):
                return to_grayscale(np.asarray(img).astype(np.int64), 65535)
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"cannot decode PNG '{path}': {exc}") from exc
    raise ImageFormatError(f"'{path}': unsupported PNG mode '{mode}' (need 1 or 3 channels)")


def write_pgm(path: str | Path, samples: np.ndarray, max_value: int = 255) -> None:
    """Write integer samples as a binary PGM file (8-bit, or 16-bit when
    max_value > 255)."""
    arr = np.asarray(samples)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(f"PGM wants a non-empty 2-D array, got shape {arr.shape}")
    if not (0 < max_value < 65536):
        raise ImageFormatError(f"max_value out of range: {max_value}")
    ints = np.rint(arr).astype(np.int64)
    if int(ints.min()) < 0 or int(ints.max()) > max_value:
        raise ImageFormatError("samples out of range for the declared max_value")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{max_value}\n".encode("ascii")
    body = ints.astype(">u2").tobytes() if max_value > 255 else ints.astype(np.uint8).tobytes()
    Path(path).write_bytes(header + body)


@dataclass(frozen=True, eq=False)
class Derivatives:
    """First- and second-order central-difference fields of an image."""

    ix: ScalarField
    iy: ScalarField
    ixx: ScalarField
    iyy: ScalarField
    ixy: ScalarField

    @property
    def valid_margin(self) -> int:
        return self.ix.valid_margin


def derivatives(img: GrayImage, smooth_sigma: float = 0.0) -> Derivatives:
    """Central-difference derivative fields of an intensity image.

    Ix = (I(x+1,y) - I(x-1,y)) / 2, Ixx = I(x+1,y) - 2 I(x,y) + I(x-1,y),
    Ixy is the four-point cross difference / 4; Iy/Iyy act on rows.  These
    stencils are exact on polynomial surfaces of total degree <= 2.

    ``smooth_sigma`` > 0 applies a Gaussian pre-filter and widens the
    invalid margin by the kernel radius; default is no smoothing.

    Tap pairs are summed symmetrically so that rotating the image by 90
    degrees permutes every output field bitwise; rotation tests depend on
    this exactness.
    """
    if img.height < 3 or img.width < 3:
        raise DimensionError(
            f"need at least 3x3 pixels for derivatives, got {img.height}x{img.width}"
        )
    a = img.pixels
    margin = 1
    if smooth_sigma < 0.0 or not math.isfinite(smooth_sigma):
        raise ValueError(f"smooth_sigma must be finite and >= 0, got {smooth_sigma}")
    if smooth_sigma > 0.0:
        a, extra = _gaussian_smooth(a, smooth_sigma)
        margin += extra
    if 2 * margin >= img.height or 2 * margin >= img.width:
        raise DimensionError(
            f"margin {margin} leaves no valid region in a {img.height}x{img.width} image"
        )
    c = a[1:-1, 1:-1]
    left, right = a[1:-1, :-2], a[1:-1, 2:]
    up, down = a[:-2, 1:-1], a[2:, 1:-1]
    ix = (right - left) * 0.5
    iy = (down - up) * 0.5
    ixx = (left + right) - 2.0 * c
    iyy = (up + down) - 2.0 * c
    ixy = ((a[2:, 2:] + a[:-2, :-2]) - (a[:-2, 2:] + a[2:, :-2])) * 0.25

    def field(interior: np.ndarray) -> ScalarField:
        full = np.full(a.shape, np.nan)
        full[1:-1, 1:-1] = interior
        return ScalarField(full, valid_margin=margin)

    return Derivatives(field(ix), field(iy), field(ixx), field(iyy), field(ixy))


def _gaussian_smooth(arr: np.ndarray, sigma: float) -> tuple[np.ndarray, int]:
    radius = int(math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(t * t) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    padded = np.pad(arr, radius, mode="reflect")
    rows = np.array([np.convolve(row, kernel, mode="valid") for row in padded])
    out = np.array([np.convolve(col, kernel, mode="valid") for col in rows.T]).T
    return out, radius


def sample_circle(
    image: GrayImage | ScalarField,
    center: tuple[float, float],
    spec: NeighborhoodSpec,
) -> np.ndarray:
    """Values of the P ring neighbors around ``center`` = (x, y).

    Off-lattice positions are bilinearly interpolated; positions that land
    exactly on the pixel grid are read directly.  Accepts a GrayImage or a
    ScalarField; a field's invalid margin widens the keep-out band so the
    interpolation never touches undefined values.
    """
    data = image.pixels
    margin = getattr(image, "valid_margin", 0)
    x, y = float(center[0]), float(center[1])
    keep_out = math.ceil(spec.radius) + 1 + margin
    h, w = data.shape
    if not (keep_out <= x <= w - 1 - keep_out and keep_out <= y <= h - 1 - keep_out):
        raise SamplingBoundsError(
            f"center ({x}, {y}) closer than {keep_out} px to the border of a {h}x{w} image"
        )
    offs = spec.offsets()
    out = np.empty(spec.points, dtype=np.float64)
    for p in range(spec.points):
        dx, dy = offs[p, 0], offs[p, 1]
        out[p] = _bilinear_at(data, x + dx, y - dy)
    return out


def _bilinear_at(data: np.ndarray, px: float, py: float) -> float:
    """Bilinear read at (px, py) with exact handling of lattice positions.

    Zero-weight corners are redirected onto the cell's occupied edge so a
    NaN margin next to a lattice-aligned sample cannot leak in, and the
    four weighted corners are summed in diagonal pairs: a 90-degree lattice
    rotation maps diagonals to diagonals, making the result bitwise stable
    under such rotations.
    """
    x0 = math.floor(px)
    y0 = math.floor(py)
    fx = px - x0
    fy = py - y0
    x1 = x0 + 1 if fx != 0.0 else x0
    y1 = y0 + 1 if fy != 0.0 else y0
    v00 = data[y0, x0]
    v01 = data[y0, x1]
    v10 = data[y1, x0]
    v11 = data[y1, x1]
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy
    return float((w00 * v00 + w11 * v11) + (w01 * v01 + w10 * v10))
