"""Synthetic experiment generator with known treatment effects.

Each unit carries a binary treatment t (pen color), binary covariates
w (background color) and u (padding), a digit outcome y in 0..9 and a
3x28x28 image rendering of the digit. The rendering map from
(t, w, u, y, noise_seed) to the image is shared across every
distribution, so a predictor trained on one experiment faces the same
annotation mechanism on any other.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

IMAGE_SHAPE = (3, 28, 28)
GLYPH_NOISE_STD = 0.05

# Pen color by treatment, background color by w covariate.
PEN_COLORS = {0: (0.0, 0.0, 0.0), 1: (1.0, 1.0, 1.0)}
BACKGROUND_COLORS = {0: (1.0, 0.0, 0.0), 1: (0.0, 1.0, 0.0)}

# 5x7 dot-matrix digit font, upscaled at render time.
_FONT = {
    0: ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    1: ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    2: ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    3: ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    4: ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    5: ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    6: ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    7: ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    8: ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    9: ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
}

EFFECTS = ("linear_training", "linear_null", "nonlinear")
RENDERERS = ("glyph", "idx_digits")

# name -> (p_w, p_u, randomized, effect)
_NAMED_SPECS = {
    "A": (0.5, 0.02, True, "linear_training"),
    "B": (0.05, 0.05, False, "linear_null"),
    "C": (0.5, 0.5, False, "linear_null"),
    "D": (0.2, 0.2, False, "nonlinear"),
    "E": (0.5, 0.5, False, "nonlinear"),
}


@dataclass(frozen=True)
class DgpSpec:
    """Parameters of one experiment distribution."""

    name: str = "custom"
    p_w: float = 0.5
    p_u: float = 0.5
    randomized: bool = False
    effect: str = "linear_null"
    renderer: str = "glyph"

    def __post_init__(self):
        if not (0.0 <= self.p_w <= 1.0 and 0.0 <= self.p_u <= 1.0):
            raise ConfigError(
                f"probabilities must lie in [0, 1], got p_w={self.p_w}, p_u={self.p_u}"
            )
        if self.effect not in EFFECTS:
            raise ConfigError(f"unknown effect {self.effect!r}")
        if self.renderer not in RENDERERS:
            raise ConfigError(f"unknown renderer {self.renderer!r}")
        if self.name in _NAMED_SPECS:
            expected = _NAMED_SPECS[self.name]
            got = (self.p_w, self.p_u, self.randomized, self.effect)
            if got != expected:
                raise ConfigError(
                    f"spec {self.name!r} requires (p_w, p_u, randomized, effect)="
                    f"{expected}, got {got}"
                )
        elif self.name != "custom":
            raise ConfigError(f"unknown spec name {self.name!r}")

    @classmethod
    def named(cls, name: str, renderer: str = "glyph") -> "DgpSpec":
        if name not in _NAMED_SPECS:
            raise ConfigError(f"unknown spec name {name!r} (expected A..E)")
        p_w, p_u, randomized, effect = _NAMED_SPECS[name]
        return cls(name=name, p_w=p_w, p_u=p_u, randomized=randomized,
                   effect=effect, renderer=renderer)


def true_ate(spec: DgpSpec) -> float:
    """Analytic average treatment effect of a spec."""
    if spec.effect == "linear_training":
        return 1.5
    if spec.effect == "linear_null":
        return 0.0
    # nonlinear: the effect is only active where u = 0; this grouping keeps
    # (1 - p_u) * 1.5 float-exact for the tabulated p_u values
    return (3.0 - 3.0 * spec.p_u) / 2.0


@dataclass
class Dataset:
    """Columnar store of sampled units.

    ``y`` is None for unlabeled target samples; all units share the
    same label-presence status. ``x`` may be None when images were not
    rendered (estimation-only workloads).
    """

    t: np.ndarray
    w: np.ndarray
    u: np.ndarray
    y: np.ndarray | None = None
    x: np.ndarray | None = None
    schema: tuple = ("t", "w", "u")
    stratum_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.t)
        for name in ("t", "w", "u"):
            col = np.asarray(getattr(self, name), dtype=np.int64)
            if col.shape != (n,) or not np.isin(col, (0, 1)).all():
                raise DataError(f"column {name!r} must be binary of length {n}")
            setattr(self, name, col)
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (n,) or self.y.min() < 0 or self.y.max() > 9:
                raise DataError("labels must be integers in 0..9, one per unit")
        if self.x is not None:
            self.x = np.asarray(self.x, dtype=np.float32)
            if self.x.shape != (n,) + IMAGE_SHAPE:
                raise DataError(f"images must have shape (n,)+{IMAGE_SHAPE}")
            if self.x.min() < 0.0 or self.x.max() > 1.0:
                raise DataError("pixel values must lie in [0, 1]")
        self.stratum_index = self._build_index(self.schema)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def labeled(self) -> bool:
        return self.y is not None

    def column(self, name: str) -> np.ndarray:
        if name not in self.schema:
            raise DataError(f"unknown covariate column {name!r}")
        return getattr(self, name)

    def strata(self, columns) -> np.ndarray:
        """Array of per-unit stratum keys (tuples) over the given columns."""
        cols = [self.column(c) for c in columns]
        return np.array(list(zip(*cols)), dtype=object) if cols else None

    def _build_index(self, columns) -> dict:
        index = {}
        keys = list(zip(*(self.column(c) for c in columns)))
        for i, key in enumerate(keys):
            index.setdefault(tuple(int(v) for v in key), []).append(i)
        return {k: np.array(v, dtype=np.int64) for k, v in index.items()}


def strip_labels(ds: Dataset) -> tuple[Dataset, np.ndarray]:
    """Remove labels, returning the unlabeled dataset and the sealed truth.

    The second element is only for acceptance checks; estimators must
    never see it.
    """
    if not ds.labeled:
        raise DataError("dataset is already unlabeled")
    return Dataset(t=ds.t, w=ds.w, u=ds.u, y=None, x=ds.x), ds.y.copy()


# ---------------------------------------------------------------------------
# Rendering


def _glyph_mask(y: int, size: int) -> np.ndarray:
    """Boolean pen mask of the digit glyph filling a size x size field."""
    font = _FONT[y]
    rows = (np.arange(size) * 7) // size
    cols = (np.arange(size) * 5) // size
    bits = np.array([[c == "1" for c in line] for line in font])
    return bits[np.ix_(rows, cols)]


def glyph_template(t: int, w: int, u: int, y: int) -> np.ndarray:
    """Noise-free rendering, shared by all specs using the glyph renderer."""
    if not 0 <= y <= 9:
        raise DataError(f"digit label out of range: {y}")
    img = np.empty(IMAGE_SHAPE, dtype=np.float32)
    bg = BACKGROUND_COLORS[int(w)]
    pen = PEN_COLORS[int(t)]
    for c in range(3):
        img[c].fill(bg[c])
    if u:
        # padding 8 on each side: glyph shrinks into the central 12x12
        mask = _glyph_mask(y, 12)
        region = (slice(8, 20), slice(8, 20))
    else:
        mask = _glyph_mask(y, 28)
        region = (slice(0, 28), slice(0, 28))
    for c in range(3):
        img[c][region][mask] = pen[c]
    return img


def render_glyph(t: int, w: int, u: int, y: int, noise_seed: int) -> np.ndarray:
    """Deterministic glyph image with additive pixel noise, clipped to [0,1]."""
    img = glyph_template(t, w, u, y)
    rng = np.random.default_rng(noise_seed)
    img = img + rng.normal(0.0, GLYPH_NOISE_STD, IMAGE_SHAPE).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


class IdxRenderer:
    """Renders digits from an IDX archive instead of the built-in glyphs."""

    def __init__(self, images: np.ndarray, labels: np.ndarray):
        if len(images) != len(labels):
            raise DataError("image/label counts differ")
        self.by_class = {d: images[labels == d] for d in range(10)}
        for d, imgs in self.by_class.items():
            if len(imgs) == 0:
                raise DataError(f"no digit images for class {d}")

    def __call__(self, t: int, w: int, u: int, y: int, noise_seed: int) -> np.ndarray:
        pool = self.by_class[int(y)]
        gray = pool[noise_seed % len(pool)]
        if u:
            rows = (np.arange(12) * 28) // 12
            small = gray[np.ix_(rows, rows)]
            gray = np.zeros((28, 28), dtype=np.float32)
            gray[8:20, 8:20] = small
        bg = np.array(BACKGROUND_COLORS[int(w)], dtype=np.float32)
        pen = np.array(PEN_COLORS[int(t)], dtype=np.float32)
        img = bg[:, None, None] * (1.0 - gray) + pen[:, None, None] * gray
        return np.clip(img.astype(np.float32), 0.0, 1.0)


# ---------------------------------------------------------------------------
# Sampling


def sample(spec: DgpSpec, n: int, seed: int, with_images: bool = True,
           idx_renderer: IdxRenderer | None = None) -> Dataset:
    """Draw n i.i.d. units from the spec's distribution.

    with_images=False skips rendering for estimation-only workloads;
    covariate and label draws are identical either way.
    """
    if n < 1:
        raise ConfigError(f"need n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    w = (rng.random(n) < spec.p_w).astype(np.int64)
    u = (rng.random(n) < spec.p_u).astype(np.int64)
    if spec.randomized:
        t = (rng.random(n) < 0.5).astype(np.int64)
    else:
        t = (rng.random(n) < np.where(w == 1, 0.9, 0.1)).astype(np.int64)

    if spec.effect == "linear_training":
        y = (w * rng.integers(0, 4, n) + t * rng.integers(0, 4, n)
             + u * rng.integers(0, 4, n))
    elif spec.effect == "linear_null":
        y = (w * rng.integers(0, 4, n) + rng.integers(0, 4, n)
             + u * rng.integers(0, 4, n))
    else:
        y = (t | u) * rng.integers(0, 4, n) + rng.integers(0, 7, n)

    noise_seeds = rng.integers(0, 2**31 - 1, n)
    x = None
    if with_images:
        if spec.renderer == "idx_digits":
            if idx_renderer is None:
                raise ConfigError("idx_digits renderer requires an IdxRenderer")
            render = idx_renderer
        else:
            render = render_glyph
        x = np.empty((n,) + IMAGE_SHAPE, dtype=np.float32)
        for i in range(n):
            x[i] = render(int(t[i]), int(w[i]), int(u[i]), int(y[i]),
                          int(noise_seeds[i]))
    return Dataset(t=t, w=w, u=u, y=y, x=x)


# ---------------------------------------------------------------------------
# Dataset container file

_CONTAINER_MAGIC = b"PPCI"
_CONTAINER_VERSION = 1


def save_dataset(ds: Dataset, path) -> None:
    """Write the binary container (magic 'PPCI', little-endian header)."""
    if ds.x is None:
        raise DataError("cannot serialize a dataset without images")
    n = len(ds)
    c, h, w_ = IMAGE_SHAPE
    flags = 1 if ds.labeled else 0
    with open(path, "wb") as f:
        f.write(_CONTAINER_MAGIC)
        f.write(struct.pack("<HBIBBB", _CONTAINER_VERSION, flags, n, c, h, w_))
        for i in range(n):
            yi = int(ds.y[i]) if ds.labeled else 0xFF
            f.write(struct.pack("<BBBB", int(ds.t[i]), int(ds.w[i]),
                                int(ds.u[i]), yi))
            f.write(ds.x[i].astype("<f4").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _CONTAINER_MAGIC:
        raise DataError(f"bad container magic in {path}")
    version, flags, n, c, h, w_ = struct.unpack_from("<HBIBBB", blob, 4)
    if version != _CONTAINER_VERSION:
        raise DataError(f"unsupported container version {version}")
    if (c, h, w_) != IMAGE_SHAPE:
        raise DataError(f"unexpected image shape {(c, h, w_)}")
    labeled = bool(flags & 1)
    header = 4 + struct.calcsize("<HBIBBB")
    record = 4 + 4 * c * h * w_
    if len(blob) != header + n * record:
        raise DataError(
            f"truncated container: expected {header + n * record} bytes")
    t = np.empty(n, np.int64)
    wcol = np.empty(n, np.int64)
    u = np.empty(n, np.int64)
    y = np.empty(n, np.int64) if labeled else None
    x = np.empty((n, c, h, w_), np.float32)
    off = header
    for i in range(n):
        ti, wi, ui, yi = struct.unpack_from("<BBBB", blob, off)
        t[i], wcol[i], u[i] = ti, wi, ui
        if labeled:
            if yi == 0xFF:
                raise DataError("labeled container holds an absent label")
            y[i] = yi
        x[i] = np.frombuffer(blob, "<f4", c * h * w_, off + 4).reshape(c, h, w_)
        off += record
    return Dataset(t=t, w=wcol, u=u, y=y, x=x)


# ---------------------------------------------------------------------------
# IDX ingestion

_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801


def _read_idx(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4:
        raise DataError(f"truncated IDX header in {path}")
    magic = struct.unpack_from(">I", blob, 0)[0]
    if magic == _IDX_LABEL_MAGIC:
        ndim = 1
    elif magic == _IDX_IMAGE_MAGIC:
        ndim = 3
    else:
        raise DataError(f"wrong IDX magic 0x{magic:08x} in {path}")
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise DataError(f"truncated IDX header in {path}")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    count = int(np.prod(dims))
    if len(blob) != header + count:
        raise DataError(
            f"truncated IDX payload in {path}: expected {header + count} bytes,"
            f" got {len(blob)}"
        )
    if ndim == 3 and dims[1:] != (28, 28):
        raise DataError(f"expected 28x28 images, got {dims[1]}x{dims[2]}")
    return np.frombuffer(blob, np.uint8, count, header).reshape(dims)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Parse big-endian IDX image and label files.

    Returns images normalized to [0, 1] (float32, n x 28 x 28) and the
    integer labels.
    """
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if images.ndim != 3:
        raise DataError(f"{images_path} is not an IDX image file")
    if labels.ndim != 1:
        raise DataError(f"{labels_path} is not an IDX label file")
    if len(images) != len(labels):
        raise DataError(
            f"image/label count mismatch: {len(images)} images,"
            f" {len(labels)} labels"
        )
    return images.astype(np.float32) / 255.0, labels.astype(np.int64)
