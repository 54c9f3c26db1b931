"""Dataset manifests, netpbm codecs, the synthetic shapes dataset and batching."""

from __future__ import annotations

import colorsys
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor

__all__ = [
    "Manifest",
    "ManifestError",
    "NetpbmError",
    "SampleBatch",
    "Dataset",
    "load_manifest",
    "save_manifest",
    "read_netpbm",
    "write_ppm",
    "write_pgm",
    "decode_image",
    "decode_labels",
    "encode_image",
    "gen_synthetic",
    "batches",
    "export_colorized",
    "colorize",
    "default_palette",
]

SPLITS = ("train", "val", "test")


class ManifestError(ValueError):
    pass


class NetpbmError(ValueError):
    pass


# -- netpbm -----------------------------------------------------------------


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise NetpbmError("truncated header")
        if buf[pos:pos + 1] == b"#":
            end = buf.find(b"\n", pos)
            if end < 0:
                raise NetpbmError("truncated header")
            pos = end + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(buf[start:pos])
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise NetpbmError("missing whitespace after header")
    return tokens, pos + 1


def read_netpbm(path) -> np.ndarray:
    """Decode a binary P5/P6 file with maxval 255 to uint8 (H, W) or (H, W, 3)."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"{path}: unsupported magic {magic!r}")
    tokens, offset = _header_tokens(buf[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise NetpbmError(f"{path}: malformed header {tokens!r}") from None
    if width < 1 or height < 1:
        raise NetpbmError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise NetpbmError(f"{path}: only maxval 255 is supported, got {maxval}")
    depth = 3 if magic == b"P6" else 1
    need = width * height * depth
    payload = buf[2 + offset:]
    if len(payload) < need:
        raise NetpbmError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    arr = np.frombuffer(payload[:need], dtype=np.uint8)
    return arr.reshape(height, width, 3) if depth == 3 else arr.reshape(height, width)


def _write(path, magic: bytes, arr: np.ndarray):
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise TypeError("netpbm payload must be uint8")
    h, w = arr.shape[:2]
    Path(path).write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + arr.tobytes())


def write_ppm(path, rgb: np.ndarray):
    _write(path, b"P6", rgb)


def write_pgm(path, gray: np.ndarray):
    _write(path, b"P5", gray)


def decode_image(path) -> Tensor:
    rgb = read_netpbm(path)
    if rgb.ndim != 3:
        raise NetpbmError(f"{path}: expected a P6 colour image")
    return Tensor(rgb.transpose(2, 0, 1)[None] / 255.0)


def encode_image(path, image):
    """Inverse of :func:`decode_image` for values already on the 1/255 grid."""
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    rgb = np.rint(data[0].transpose(1, 2, 0) * 255.0).astype(np.uint8)
    write_ppm(path, rgb)


def decode_labels(path, num_classes: int, ignore_index: int | None = None) -> np.ndarray:
    """Return an (H, W) int64 class map, validated against ``num_classes``."""
    gray = read_netpbm(path)
    if gray.ndim != 2:
        raise NetpbmError(f"{path}: expected a P5 label image")
    labels = gray.astype(np.int64)
    bad = labels >= num_classes
    if ignore_index is not None:
        bad &= labels != ignore_index
    if bad.any():
        raise NetpbmError(f"{path}: class index {labels[bad].max()} out of range for {num_classes} classes")
    return labels


def colorize(labels: np.ndarray, palette, ignore_index: int | None = None) -> np.ndarray:
    labels = np.asarray(labels)
    lut = np.zeros((256, 3), dtype=np.uint8)
    lut[:len(palette)] = np.asarray(palette, dtype=np.uint8)
    if ignore_index is not None:
        lut[ignore_index] = 0
    elif labels.size and labels.max() >= len(palette):
        raise ValueError("label outside palette")
    return lut[labels]


def export_colorized(path, labels: np.ndarray, palette, ignore_index: int | None = None):
    labels = np.asarray(labels)
    if labels.ndim == 3:
        if labels.shape[0] != 1:
            raise ValueError("export_colorized writes one image at a time")
        labels = labels[0]
    write_ppm(path, colorize(labels, palette, ignore_index))


def default_palette(num_classes: int) -> list[tuple[int, int, int]]:
    """Pascal-VOC style bit-interleaved palette (distinct for up to 256 classes)."""
    out = []
    for c in range(num_classes):
        r = g = b = 0
        cid = c
        for shift in range(7, -1, -1):
            r |= (cid & 1) << shift
            g |= ((cid >> 1) & 1) << shift
            b |= ((cid >> 2) & 1) << shift
            cid >>= 3
        out.append((r, g, b))
    return out


# -- manifest ---------------------------------------------------------------


@dataclass
class Manifest:
    classes: list[str]
    palette: list[tuple[int, int, int]]
    ignore_index: int | None = None
    splits: dict[str, list[tuple[str, str]]] = field(default_factory=dict)
    root: Path = field(default_factory=Path)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def pairs(self, split: str) -> list[tuple[Path, Path]]:
        return [(self.resolve(a), self.resolve(b)) for a, b in self.splits.get(split, [])]

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "palette": [list(c) for c in self.palette],
            "ignore_index": self.ignore_index,
            "splits": {s: [list(p) for p in self.splits.get(s, [])] for s in SPLITS},
        }


def _fail(path, msg):
    raise ManifestError(f"{path}: {msg}")


def load_manifest(path, check_files: bool = True) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        _fail(path, "top level must be an object")
    for key in ("classes", "palette", "splits"):
        if key not in doc:
            _fail(path, f"missing field {key!r}")
    classes = doc["classes"]
    if not isinstance(classes, list) or len(classes) < 2 or not all(isinstance(c, str) for c in classes):
        _fail(path, "field 'classes' must be a list of at least two names")
    palette = doc["palette"]
    if not isinstance(palette, list) or len(palette) != len(classes):
        _fail(path, f"field 'palette' has {len(palette) if isinstance(palette, list) else '?'} entries, "
                    f"expected {len(classes)}")
    for i, rgb in enumerate(palette):
        if (not isinstance(rgb, list) or len(rgb) != 3
                or not all(isinstance(v, int) and 0 <= v <= 255 for v in rgb)):
            _fail(path, f"palette[{i}] must be three integers in [0, 255]")
    ignore = doc.get("ignore_index")
    if ignore is not None and (not isinstance(ignore, int) or not len(classes) <= ignore <= 255):
        _fail(path, "field 'ignore_index' must be null or an integer in [classes, 255]")
    splits_doc = doc["splits"]
    if not isinstance(splits_doc, dict):
        _fail(path, "field 'splits' must be an object")
    unknown = set(splits_doc) - set(SPLITS)
    if unknown:
        _fail(path, f"unknown split(s) {sorted(unknown)}")
    splits = {}
    for name in SPLITS:
        entries = splits_doc.get(name, [])
        if not isinstance(entries, list):
            _fail(path, f"splits.{name} must be a list")
        pairs = []
        for i, pair in enumerate(entries):
            if not isinstance(pair, list) or len(pair) != 2 or not all(isinstance(p, str) for p in pair):
                _fail(path, f"splits.{name}[{i}] must be an [image, label] pair of paths")
            pairs.append((pair[0], pair[1]))
        splits[name] = pairs
    m = Manifest(list(classes), [tuple(c) for c in palette], ignore, splits, path.parent)
    if check_files:
        for name in SPLITS:
            for img, lbl in m.pairs(name):
                for f in (img, lbl):
                    if not f.is_file():
                        _fail(path, f"splits.{name} references missing file {f}")
    return m


def save_manifest(manifest: Manifest, path):
    text = json.dumps(manifest.to_dict(), indent=2) + "\n"
    Path(path).write_text(text, encoding="utf-8")


# -- synthetic shapes -------------------------------------------------------


def _class_colours(num_classes: int) -> np.ndarray:
    """Saturated, well separated RGB in [0, 1] for target classes 1..C-1."""
    cols = np.zeros((num_classes, 3))
    for c in range(1, num_classes):
        cols[c] = colorsys.hsv_to_rgb((c - 1) / (num_classes - 1), 0.9, 0.95)
    return cols


def _shape_mask(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size]
    lo, hi = max(size // 8, 3), max(size // 3, 4)
    if rng.random() < 0.5:
        h, w = rng.integers(lo, hi + 1, size=2)
        y0, x0 = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
        return (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
    r = rng.integers(lo // 2 + 1, hi // 2 + 2)
    cy, cx = rng.integers(r, size - r + 1, size=2)
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def render_sample(rng, size: int, num_classes: int, colours=None):
    """One synthetic (rgb uint8 (H, W, 3), labels uint8 (H, W)) pair.

    Image and label come from the same shape masks, so class regions agree
    pixel for pixel.
    """
    colours = _class_colours(num_classes) if colours is None else colours
    labels = np.zeros((size, size), dtype=np.uint8)
    image = rng.uniform(0.0, 0.35, size=(size, size, 3))
    occupied = np.zeros((size, size), bool)
    for _ in range(int(rng.integers(1, 4))):
        cls = int(rng.integers(1, num_classes))
        for _attempt in range(50):
            mask = _shape_mask(rng, size)
            if not (mask & occupied).any():
                break
        else:
            continue
        occupied |= mask
        labels[mask] = cls
        jitter = rng.uniform(-0.08, 0.08, size=(int(mask.sum()), 3))
        image[mask] = np.clip(colours[cls] + jitter, 0.0, 1.0)
    return np.rint(image * 255).astype(np.uint8), labels


def gen_synthetic(out_dir, count: int, size: int = 64, num_classes: int = 4, seed: int = 0) -> Manifest:
    """Write ``count`` image/label pairs plus ``manifest.json`` under ``out_dir``."""
    if size % 32 or size < 32:
        raise ValueError(f"size {size} must be a positive multiple of 32")
    if num_classes < 2 or num_classes > 255:
        raise ValueError("num_classes must be in [2, 255]")
    if count < 1:
        raise ValueError("count must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"cannot write to {out}")
    rng = np.random.default_rng(seed)
    colours = _class_colours(num_classes)
    pairs = []
    for i in range(count):
        rgb, labels = render_sample(rng, size, num_classes, colours)
        img_rel, lbl_rel = f"images/{i:04d}.ppm", f"labels/{i:04d}.pgm"
        write_ppm(out / img_rel, rgb)
        write_pgm(out / lbl_rel, labels)
        pairs.append((img_rel, lbl_rel))
    n_val = n_test = count // 10
    n_train = count - n_val - n_test
    manifest = Manifest(
        classes=["background"] + [f"class{c}" for c in range(1, num_classes)],
        palette=default_palette(num_classes),
        ignore_index=None,
        splits={"train": pairs[:n_train], "val": pairs[n_train:n_train + n_val], "test": pairs[n_train + n_val:]},
        root=out,
    )
    save_manifest(manifest, out / "manifest.json")
    return manifest


# -- batching ---------------------------------------------------------------


@dataclass
class SampleBatch:
    images: Tensor
    labels: np.ndarray
    indices: tuple[int, ...]


class Dataset:
    """A decoded manifest split held in memory."""

    def __init__(self, manifest: Manifest, split: str = "train"):
        self.manifest = manifest
        self.split = split
        self.paths = manifest.pairs(split)
        self.images, self.labels = [], []
        for img_path, lbl_path in self.paths:
            img = decode_image(img_path).data[0]
            lbl = decode_labels(lbl_path, manifest.num_classes, manifest.ignore_index)
            if img.shape[1:] != lbl.shape:
                raise ManifestError(f"{img_path} and {lbl_path} differ in size")
            if lbl.shape[0] % 32 or lbl.shape[1] % 32:
                raise ManifestError(f"{img_path}: size {lbl.shape[0]}x{lbl.shape[1]} not divisible by 32")
            self.images.append(img)
            self.labels.append(lbl)

    def __len__(self):
        return len(self.paths)

    def batches(self, batch_size: int, seed: int | None = 0, epoch: int = 0):
        if not self.paths:
            raise ValueError(f"split {self.split!r} is empty")
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        order = np.arange(len(self)) if seed is None else np.random.default_rng([seed, epoch]).permutation(len(self))
        for start in range(0, len(order), batch_size):
            idx = tuple(int(i) for i in order[start:start + batch_size])
            shapes = {self.labels[i].shape for i in idx}
            if len(shapes) > 1:
                raise ValueError(f"images of different sizes in one batch: {sorted(shapes)}")
            yield SampleBatch(Tensor(np.stack([self.images[i] for i in idx])),
                              np.stack([self.labels[i] for i in idx]), idx)


def batches(dataset: Dataset, batch_size: int, seed: int | None = 0, epoch: int = 0):
    """Seeded per-epoch shuffle; the last batch may be short."""
    return dataset.batches(batch_size, seed, epoch)
