"""Data model for multispectral iris captures.

Covers the five-band sample container, image quality control (Laplacian
sharpness, saturation, invalid pixels), band-wise normalization statistics,
bilinear resizing to model inputs, geometry-only augmentation, identity-
disjoint partitioning, the dataset manifest (CSV on disk), grayscale image
I/O (16-bit PGM natively, PNG via Pillow), and a deterministic synthetic
dataset generator that stands in for a private multispectral corpus.

All pixel data lives in [0, 1] as float64 once loaded.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ProtocolError
from .seeding import substream

#: Canonical spectral bands, ascending wavelength (nm).
BANDS: tuple[int, ...] = (800, 830, 850, 870, 980)

SPLITS = ("train", "dev", "test")

MANIFEST_HEADER = ["path", "band_nm", "label", "artefact_id", "identity_id", "split"]


def validate_band(band: int) -> int:
    if band not in BANDS:
        raise ValueError(f"unknown spectral band {band}; legal bands are {BANDS}")
    return band


# ---------------------------------------------------------------------------
# core containers
# ---------------------------------------------------------------------------


@dataclass
class SpectralSample:
    """One capture event: up to five per-band grayscale images plus metadata."""

    images: dict[int, np.ndarray]
    label: int
    artefact_id: int
    identity_id: str
    band_mask: set[int] = field(default_factory=set)
    sample_key: str = ""

    def __post_init__(self):
        if (self.label == 0) != (self.artefact_id == 0):
            raise ValueError(
                f"label/artefact mismatch: label={self.label} artefact={self.artefact_id}"
            )
        extra = self.band_mask - set(self.images)
        if extra:
            raise ValueError(f"band_mask contains bands without images: {sorted(extra)}")


@dataclass(frozen=True)
class BandStats:
    """Per-band pixel statistics computed from the training split only."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"band std must be positive, got {self.std}")


@dataclass(frozen=True)
class QualityReport:
    laplacian_variance: float
    has_invalid_pixels: bool
    saturation_fraction: float
    passed: bool


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    band: int
    label: int
    artefact_id: int
    identity_id: str
    split: str


@dataclass
class DatasetManifest:
    records: list[ManifestRecord] = field(default_factory=list)

    def validate(self) -> None:
        seen = set()
        for r in self.records:
            key = (r.path, r.band)
            if key in seen:
                raise ProtocolError(f"duplicate (path, band) pair in manifest: {key}")
            seen.add(key)
            if r.split not in SPLITS and r.split != "":
                raise ProtocolError(f"bad split label {r.split!r} for {r.path}")
            validate_band(r.band)

    def to_csv_text(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in self.records:
            w.writerow([r.path, r.band, r.label, r.artefact_id, r.identity_id, r.split])
        return out.getvalue()

    @staticmethod
    def from_csv_text(text: str) -> "DatasetManifest":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != MANIFEST_HEADER:
            raise ProtocolError(f"manifest header must be {','.join(MANIFEST_HEADER)}")
        records = [
            ManifestRecord(p, int(b), int(lab), int(a), ident, split)
            for p, b, lab, a, ident, split in rows[1:]
        ]
        m = DatasetManifest(records)
        m.validate()
        return m

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_csv_text(), encoding="utf-8")

    @staticmethod
    def load(path: Path | str) -> "DatasetManifest":
        return DatasetManifest.from_csv_text(Path(path).read_text(encoding="utf-8"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_csv_text().encode("utf-8")).hexdigest()

    def identities(self, split: str | None = None) -> set[str]:
        return {r.identity_id for r in self.records if split is None or r.split == split}


def sample_key_for_path(path: str) -> str:
    """Group the five band rows of one capture: strip the trailing _<band> token."""
    stem = Path(path).name
    stem = stem[: stem.rfind(".")] if "." in stem else stem
    for band in BANDS:
        suffix = f"_{band}"
        if stem.endswith(suffix):
            return str(Path(path).parent / stem[: -len(suffix)])
    return str(Path(path).parent / stem)


# ---------------------------------------------------------------------------
# quality control
# ---------------------------------------------------------------------------


def laplacian_variance(image: np.ndarray) -> float:
    """Variance of the 4-neighbour discrete Laplacian response.

    Pixels are scaled to [0, 255] before filtering and the convolution is
    evaluated on the valid region only, so the conventional sharpness
    threshold of 100 keeps its usual meaning.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"laplacian_variance needs a >=3x3 image, got {img.shape}")
    scaled = img * 255.0
    resp = (
        scaled[:-2, 1:-1]
        + scaled[2:, 1:-1]
        + scaled[1:-1, :-2]
        + scaled[1:-1, 2:]
        - 4.0 * scaled[1:-1, 1:-1]
    )
    return float(np.var(resp))


def quality_filter(
    image: np.ndarray, threshold: float = 100.0, sat_limit: float = 0.05
) -> QualityReport:
    """Sharpness / saturation / validity gate. Never raises on bad pixels."""
    img = np.asarray(image, dtype=np.float64)
    invalid = bool(~np.isfinite(img).all())
    clean = np.nan_to_num(img, nan=0.0, posinf=1.0, neginf=0.0)
    sat = float((clean >= 0.995).mean())
    lap = laplacian_variance(clean)
    passed = (lap > threshold) and (not invalid) and (sat < sat_limit)
    return QualityReport(lap, invalid, sat, passed)


# ---------------------------------------------------------------------------
# resizing / model input
# ---------------------------------------------------------------------------


def bilinear_resize(image: np.ndarray, side: int) -> np.ndarray:
    """Bilinear resample to side x side, half-pixel centers, edge-clamped.

    Source coordinate for output index i is (i + 0.5) * scale - 0.5; when the
    sizes match this is the identity map.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    if h == side and w == side:
        return img.copy()
    ys = (np.arange(side) + 0.5) * (h / side) - 0.5
    xs = (np.arange(side) + 0.5) * (w / side) - 0.5
    return _bilinear_sample(img, ys[:, None].repeat(side, 1), xs[None, :].repeat(side, 0))


def _bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample img at float coords (edge clamp); ys/xs share the output shape."""
    h, w = img.shape
    yf = np.floor(ys)
    xf = np.floor(xs)
    wy = ys - yf
    wx = xs - xf
    y0 = np.clip(yf.astype(np.int64), 0, h - 1)
    x0 = np.clip(xf.astype(np.int64), 0, w - 1)
    y1 = np.clip(yf.astype(np.int64) + 1, 0, h - 1)
    x1 = np.clip(xf.astype(np.int64) + 1, 0, w - 1)
    top = img[y0, x0] * (1.0 - wx) + img[y0, x1] * wx
    bot = img[y1, x0] * (1.0 - wx) + img[y1, x1] * wx
    return top * (1.0 - wy) + bot * wy


def to_model_input(image: np.ndarray, stats: BandStats, side: int) -> np.ndarray:
    """Resize, repeat to 3 channels, then normalize with the band statistics."""
    if not stats.std > 0:
        raise ValueError("degenerate band statistics: std must be > 0")
    resized = bilinear_resize(np.asarray(image, dtype=np.float64), side)
    normed = (resized - stats.mean) / stats.std
    return np.repeat(normed[None, :, :], 3, axis=0)


def compute_band_stats(train_images: list[np.ndarray], band: int) -> BandStats:
    """Global pixel mean and population std over the training images of one band."""
    validate_band(band)
    if not train_images:
        raise ProtocolError(f"no training images for band {band}")
    pixels = np.concatenate([np.asarray(im, dtype=np.float64).ravel() for im in train_images])
    mu = float(pixels.mean())
    sigma = float(pixels.std())
    return BandStats(mean=mu, std=max(sigma, 1e-8))


# ---------------------------------------------------------------------------
# augmentation (geometry only; spectral semantics untouched)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: float = 0.0
    flip: bool = False
    translate_x: float = 0.0  # pixels
    translate_y: float = 0.0
    scale: float = 1.0


def draw_augment_params(rng: np.random.Generator, side: int) -> AugmentParams:
    """Fixed draw order: rotation, flip, tx, ty, scale."""
    rot = float(rng.uniform(-5.0, 5.0))
    flip = bool(rng.random() < 0.5)
    tx = float(rng.uniform(-0.05, 0.05) * side)
    ty = float(rng.uniform(-0.05, 0.05) * side)
    scale = float(rng.uniform(0.95, 1.05))
    return AugmentParams(rot, flip, tx, ty, scale)


def apply_affine(image: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Warp by flip -> rotate+scale about the image center -> translate.

    Inverse-mapped, edge-clamped bilinear sampling; output clamped to [0, 1].
    Identity parameters reproduce the input exactly.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    theta = math.radians(params.rotation_deg)
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    inv_s = 1.0 / params.scale

    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    px = xx - cx - params.translate_x
    py = yy - cy - params.translate_y
    # inverse rotation+scale
    ux = (cos_t * px + sin_t * py) * inv_s
    uy = (-sin_t * px + cos_t * py) * inv_s
    if params.flip:
        ux = -ux
    src_x = ux + cx
    src_y = uy + cy
    out = _bilinear_sample(img, src_y, src_x)
    return np.clip(out, 0.0, 1.0)


def augment(image: np.ndarray, seed_or_rng) -> np.ndarray:
    """Seeded geometric augmentation of one band image."""
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else substream(int(seed_or_rng), "augment")
    )
    params = draw_augment_params(rng, side=np.asarray(image).shape[0])
    return apply_affine(image, params)


# ---------------------------------------------------------------------------
# identity-disjoint partitioning
# ---------------------------------------------------------------------------


def _largest_remainder(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    targets = [n * f for f in fractions]
    counts = [int(math.floor(t)) for t in targets]
    remainders = [t - c for t, c in zip(targets, counts)]
    # Hand out remaining seats to the largest remainders; ties go to the
    # earlier split in (train, dev, test) order.
    for _ in range(n - sum(counts)):
        idx = max(range(3), key=lambda i: (remainders[i], -i))
        counts[idx] += 1
        remainders[idx] = -1.0
    return tuple(counts)  # type: ignore[return-value]


def partition_identity_disjoint(
    manifest: DatasetManifest,
    fractions: tuple[float, float, float],
    seed: int,
) -> DatasetManifest:
    """Assign every identity to exactly one of train/dev/test.

    Identities are stratified by artefact id (bona fide is stratum 0), so
    each attack instrument keeps train/dev/test coverage; within a stratum
    split sizes follow the fractions by largest-remainder rounding. An
    identity appearing under more than one artefact id would leak across the
    protocol and is rejected.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    strata: dict[int, list[str]] = {}
    ident_stratum: dict[str, int] = {}
    for r in manifest.records:
        prev = ident_stratum.get(r.identity_id)
        if prev is not None and prev != r.artefact_id:
            raise ProtocolError(
                f"identity {r.identity_id!r} spans artefacts {prev} and {r.artefact_id}"
            )
        ident_stratum[r.identity_id] = r.artefact_id
    for ident, stratum in ident_stratum.items():
        strata.setdefault(stratum, []).append(ident)

    assignment: dict[str, str] = {}
    for stratum in sorted(strata):
        idents = sorted(strata[stratum])
        if len(idents) < 3:
            raise ProtocolError(
                f"stratum {stratum} has {len(idents)} identities; need >= 3 to partition"
            )
        rng = substream(seed, f"partition.{stratum}")
        order = [idents[i] for i in rng.permutation(len(idents))]
        n_train, n_dev, n_test = _largest_remainder(len(order), tuple(fractions))
        for i, ident in enumerate(order):
            if i < n_train:
                assignment[ident] = "train"
            elif i < n_train + n_dev:
                assignment[ident] = "dev"
            else:
                assignment[ident] = "test"

    new_records = [replace(r, split=assignment[r.identity_id]) for r in manifest.records]
    out = DatasetManifest(new_records)
    out.validate()
    return out


def assert_identity_disjoint(manifest: DatasetManifest) -> None:
    sets = {s: manifest.identities(s) for s in SPLITS}
    for a in SPLITS:
        for b in SPLITS:
            if a < b and sets[a] & sets[b]:
                raise ProtocolError(
                    f"identity leakage between {a} and {b}: {sorted(sets[a] & sets[b])[:5]}"
                )


# ---------------------------------------------------------------------------
# image I/O
# ---------------------------------------------------------------------------


def quantize16(image: np.ndarray) -> np.ndarray:
    """Round to the 16-bit grid in [0, 1]; makes in-memory == on-disk."""
    levels = np.round(np.clip(image, 0.0, 1.0) * 65535.0)
    return levels / 65535.0


def write_pgm(path: Path | str, image: np.ndarray) -> None:
    """16-bit binary PGM (big-endian payload per the format)."""
    img = np.asarray(image, dtype=np.float64)
    levels = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(">u2")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + levels.tobytes())


def read_image(path: Path | str) -> np.ndarray:
    """Load an 8/16-bit grayscale PGM or PNG, normalized to [0, 1]."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return _read_pgm(path)
    if suffix == ".png":
        from PIL import Image

        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64)
                return arr / 65535.0
            arr = np.asarray(im.convert("L"), dtype=np.float64)
            return arr / 255.0
    raise ValueError(f"unsupported image format {suffix!r} for {path}")


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic != b"P5":
        raise ValueError(f"not a binary PGM: {path}")
    if maxval > 255:
        arr = np.frombuffer(data, dtype=">u2", count=w * h, offset=pos)
    else:
        arr = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return arr.reshape(h, w).astype(np.float64) / float(maxval)


# ---------------------------------------------------------------------------
# synthetic multispectral dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the built-in generator.

    Bona fide irises are radial texture fields whose brightness follows the
    per-wavelength reflectance curve; attack classes render band-flat
    overlays (printed dots for the lens artefacts, pixel grid + speculars for
    the display artefact, halftone for the print artefact).
    """

    image_side: int = 32
    bona_identities: int = 20
    bona_samples_per_identity: int = 12
    artefact_identities: int = 6
    artefact_samples_per_identity: int = 12
    reflectance: tuple[float, ...] = (0.55, 0.62, 0.68, 0.74, 0.85)
    noise_sigma: float = 0.01

    def __post_init__(self):
        if len(self.reflectance) != len(BANDS):
            raise ValueError("reflectance curve needs one value per band")


# flat spectral level per attack instrument (1..8); 5 and 7 sit closest to
# the bona fide mid-band levels and are the hardest transfers
_ATTACK_LEVELS = {1: 0.70, 2: 0.66, 3: 0.74, 4: 0.62, 5: 0.79, 6: 0.68, 7: 0.76, 8: 0.64}
# dot-lattice layout per contact-lens artefact (pitch px, radius px, depth)
_DOT_PARAMS = {
    1: (4, 1.1, 0.42),
    2: (5, 1.3, 0.38),
    3: (6, 1.2, 0.45),
    4: (4, 0.9, 0.35),
    5: (5, 1.0, 0.40),
    6: (6, 1.4, 0.36),
}


def _smooth_noise(rng: np.random.Generator, side: int, cells: int = 8) -> np.ndarray:
    coarse = rng.random((cells, cells))
    return bilinear_resize(coarse, side)


def _identity_base(seed: int, identity_id: str, side: int) -> np.ndarray:
    """Persistent iris-like texture in [0, 1] for one identity."""
    rng = substream(seed, f"synth.identity.{identity_id}")
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    c = (side - 1) / 2.0
    r = np.hypot(yy - c, xx - c) / (side / 2.0)
    theta = np.arctan2(yy - c, xx - c)

    f_rad = rng.uniform(6.0, 11.0)
    f_ang = rng.integers(4, 10)
    ph1 = rng.uniform(0, 2 * np.pi)
    ph2 = rng.uniform(0, 2 * np.pi)
    pupil = rng.uniform(0.18, 0.26)
    iris = rng.uniform(0.80, 0.92)
    crypts = _smooth_noise(rng, side)

    tex = (
        0.52
        + 0.20 * np.sin(2 * np.pi * f_rad * r + ph1)
        + 0.16 * np.sin(f_ang * theta + ph2)
        + 0.22 * (crypts - 0.5)
    )
    base = np.where(r < pupil, 0.06, np.where(r < iris, tex, 0.80))
    return np.clip(base, 0.03, 0.97)


def _dot_overlay(side: int, pitch: int, radius: float, depth: float) -> np.ndarray:
    """Multiplicative printed-dot lattice in (0, 1]; identical for every band."""
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    dy = (yy + pitch / 2) % pitch - pitch / 2
    dx = (xx + pitch / 2) % pitch - pitch / 2
    dots = (np.hypot(dy, dx) <= radius).astype(np.float64)
    return 1.0 - depth * dots


def _display_overlay(side: int, rng: np.random.Generator) -> np.ndarray:
    """Pixel grid plus specular highlights, additive in [~-0.1, ~0.9]."""
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    grid = 0.10 * np.sin(2 * np.pi * xx / 2.5) + 0.10 * np.sin(2 * np.pi * yy / 2.5)
    spots = np.zeros((side, side))
    for _ in range(2):
        sy = rng.uniform(0.2, 0.8) * side
        sx = rng.uniform(0.2, 0.8) * side
        spots += 0.75 * np.exp(-((yy - sy) ** 2 + (xx - sx) ** 2) / (2 * 1.2**2))
    return grid + spots


def _halftone_overlay(base: np.ndarray) -> np.ndarray:
    """Thresholded rotated dot screen; returns a binary-ish texture in [0,1]."""
    side = base.shape[0]
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    u = (xx + yy) / math.sqrt(2.0)
    v = (xx - yy) / math.sqrt(2.0)
    screen = 0.5 + 0.5 * np.sin(2 * np.pi * u / 3.0) * np.sin(2 * np.pi * v / 3.0)
    return np.where(base > screen, 0.85, 0.25)


def _sample_images(
    cfg: SynthConfig, seed: int, identity_id: str, idx: int, artefact_id: int
) -> dict[int, np.ndarray]:
    base = _identity_base(seed, identity_id, cfg.image_side)
    rng = substream(seed, f"synth.sample.{identity_id}.{idx}")
    jitter = AugmentParams(
        rotation_deg=float(rng.uniform(-4.0, 4.0)),
        flip=False,
        translate_x=float(rng.uniform(-0.03, 0.03) * cfg.image_side),
        translate_y=float(rng.uniform(-0.03, 0.03) * cfg.image_side),
        scale=float(rng.uniform(0.97, 1.03)),
    )
    pattern = apply_affine(base, jitter)
    gain = float(rng.uniform(0.94, 1.06))

    if artefact_id == 0:
        # pigmentation-dependent spectral slope: each identity keeps a
        # persistent fraction of the reference reflectance curve, so some
        # subjects look spectrally flatter than others
        mid = float(np.mean(cfg.reflectance))
        u = float(substream(seed, f"synth.slope.{identity_id}").uniform(0.15, 1.0))
        f = float(np.clip(u + rng.normal(0.0, 0.05), 0.05, 1.1))
        levels = [mid + (r - mid) * f for r in cfg.reflectance]
        shaped = pattern
    else:
        # nominally flat spectral response with a small per-sample tilt, so
        # attacks stay far flatter than bona fide but not perfectly so
        tilt = float(rng.normal(0.0, 0.02))
        base_level = _ATTACK_LEVELS[artefact_id]
        levels = [base_level + tilt * (i - 2) / 2.0 for i in range(len(BANDS))]
        if artefact_id <= 6:
            pitch, radius, depth = _DOT_PARAMS[artefact_id]
            shaped = pattern * _dot_overlay(cfg.image_side, pitch, radius, depth)
        elif artefact_id == 7:
            shaped = np.clip(pattern + _display_overlay(cfg.image_side, rng), 0.0, 1.0)
        else:
            shaped = _halftone_overlay(pattern)

    images = {}
    for band, level in zip(BANDS, levels):
        noise = rng.normal(0.0, cfg.noise_sigma, shaped.shape)
        img = gain * level * (0.12 + 0.88 * shaped) + noise
        images[band] = quantize16(img)
    return images


def synth_generate(
    cfg: SynthConfig,
    seed: int,
    fractions: tuple[float, float, float] = (0.55, 0.15, 0.30),
) -> tuple[list[SpectralSample], DatasetManifest]:
    """Deterministic synthetic dataset plus its partitioned manifest.

    Sample images are quantized to the 16-bit grid so the in-memory dataset
    is bit-identical to a write/read round trip through PGM files.
    """
    samples: list[SpectralSample] = []
    records: list[ManifestRecord] = []

    def emit(identity_id: str, idx: int, artefact_id: int) -> None:
        label = 0 if artefact_id == 0 else 1
        images = _sample_images(cfg, seed, identity_id, idx, artefact_id)
        key = f"images/{identity_id}/{identity_id}_s{idx:03d}"
        samples.append(
            SpectralSample(
                images=images,
                label=label,
                artefact_id=artefact_id,
                identity_id=identity_id,
                band_mask=set(BANDS),
                sample_key=key,
            )
        )
        for band in BANDS:
            records.append(
                ManifestRecord(f"{key}_{band}.pgm", band, label, artefact_id, identity_id, "")
            )

    for i in range(cfg.bona_identities):
        ident = f"bona{i:03d}"
        for s in range(cfg.bona_samples_per_identity):
            emit(ident, s, 0)
    for artefact_id in range(1, 9):
        for i in range(cfg.artefact_identities):
            ident = f"a{artefact_id}id{i:03d}"
            for s in range(cfg.artefact_samples_per_identity):
                emit(ident, s, artefact_id)

    manifest = DatasetManifest(records)
    if records:
        manifest = partition_identity_disjoint(manifest, fractions, seed)
    return samples, manifest


def write_dataset(
    samples: list[SpectralSample], manifest: DatasetManifest, out_dir: Path | str
) -> None:
    """Materialize PGM files and the manifest CSV under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_key = {s.sample_key: s for s in samples}
    for r in manifest.records:
        key = sample_key_for_path(r.path)
        img = by_key[key].images[r.band]
        target = out / r.path
        target.parent.mkdir(parents=True, exist_ok=True)
        write_pgm(target, img)
    manifest.save(out / "manifest.csv")


def load_samples_from_manifest(
    manifest: DatasetManifest,
    root: Path | str,
    splits: tuple[str, ...] = SPLITS,
    on_open=None,
) -> list[SpectralSample]:
    """Group manifest rows into SpectralSample objects, reading images from disk.

    `on_open(path, split)` is invoked for every file actually opened, which is
    how the eval access audit observes reads.
    """
    root = Path(root)
    grouped: dict[str, list[ManifestRecord]] = {}
    for r in manifest.records:
        if r.split in splits:
            grouped.setdefault(sample_key_for_path(r.path), []).append(r)
    samples = []
    for key in sorted(grouped):
        rows = grouped[key]
        first = rows[0]
        images = {}
        for r in rows:
            if (r.label, r.artefact_id, r.identity_id, r.split) != (
                first.label,
                first.artefact_id,
                first.identity_id,
                first.split,
            ):
                raise ProtocolError(f"inconsistent metadata for sample {key}")
            if on_open is not None:
                on_open(r.path, r.split)
            images[r.band] = read_image(root / r.path)
        samples.append(
            SpectralSample(
                images=images,
                label=first.label,
                artefact_id=first.artefact_id,
                identity_id=first.identity_id,
                band_mask=set(images),
                sample_key=key,
            )
        )
    return samples


def split_by_sample_key(manifest: DatasetManifest) -> dict[str, str]:
    return {sample_key_for_path(r.path): r.split for r in manifest.records}
