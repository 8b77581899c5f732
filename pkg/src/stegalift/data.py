"""Synthetic dataset: smooth blob-face secrets, textured covers, manifests.

"Real" secrets are sums of low-frequency sinusoids under a soft elliptic
mask; "fake" ones additionally carry a small high-frequency checkerboard
patch (2-pixel cells, aligned to the even pixel grid so the cue survives
2x downsampling). Covers are mid-frequency sinusoid textures. Images are
written as 8-bit PGM (grayscale) or PPM (3-channel); a manifest lists
``path,label,role`` per line with secrets and their covers interleaved.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

ARTIFACT_CELL = 2
ARTIFACT_SIZE = 20
LABEL_COVER = -1

MANIFEST_TRAIN = "train_manifest.txt"
MANIFEST_TEST = "test_manifest.txt"


# ---------------------------------------------------------------------------
# image synthesis


def _coords(size):
    g = (np.arange(size) + 0.5) / size
    return np.meshgrid(g, g, indexing="ij")


def _sinusoid_mix(rng, size, n_waves, fmin, fmax, amplitude):
    yy, xx = _coords(size)
    out = np.zeros((size, size))
    for _ in range(n_waves):
        freq = rng.uniform(fmin, fmax)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        out += rng.uniform(0.4, 1.0) * np.sin(
            2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    peak = np.abs(out).max()
    if peak > 0:
        out *= amplitude / peak
    return out


def make_cover(rng, size, channels):
    """Natural-texture stand-in: gentle gradient plus mid-frequency gratings."""
    yy, xx = _coords(size)
    gdir = rng.uniform(0, 2 * np.pi)
    base = 0.5 + 0.10 * (np.cos(gdir) * (xx - 0.5) + np.sin(gdir) * (yy - 0.5))
    texture = _sinusoid_mix(rng, size, n_waves=3, fmin=1.5, fmax=3.0, amplitude=0.12)
    img = np.clip(base + texture, 0.08, 0.92)
    out = np.empty((channels, size, size))
    for c in range(channels):
        out[c] = np.clip(img + 0.03 * (c - (channels - 1) / 2.0), 0.0, 1.0)
    return out


def _blob_mask(rng, size):
    yy, xx = _coords(size)
    cy, cx = rng.uniform(0.42, 0.58, size=2)
    ay = rng.uniform(0.22, 0.30)
    ax = rng.uniform(0.18, 0.26)
    d = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2
    return 1.0 / (1.0 + np.exp(3.0 * (d - 1.0)))


def _checker_patch(size, amp):
    u, v = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    sign = np.where(((u // ARTIFACT_CELL) + (v // ARTIFACT_CELL)) % 2 == 0, 1.0, -1.0)
    return amp * sign


def make_secret(rng, size, channels, fake, artifact_amp):
    """Smooth blob face, normalized to mean 0.5 so the payload carries no DC.

    Fakes get a mid-gray checkerboard patch (exactly zero-mean, aligned to
    the even pixel grid so the cue survives 2x downsampling).
    """
    blob = _blob_mask(rng, size)
    waves = _sinusoid_mix(rng, size, n_waves=2, fmin=1.0, fmax=2.0, amplitude=0.05)
    img = np.clip(0.42 + 0.12 * blob + waves, 0.05, 0.95)
    if fake:
        patch = min(ARTIFACT_SIZE, size - 4)
        patch -= patch % 2
        max_off = max(2, (size - patch) // 2)
        py = 2 * rng.integers(1, max_off)
        px = 2 * rng.integers(1, max_off)
        img[py : py + patch, px : px + patch] = 0.5 + _checker_patch(patch, artifact_amp)
    img = np.clip(img + (0.5 - img.mean()), 0.0, 1.0)
    return np.repeat(img[None], channels, axis=0)


# ---------------------------------------------------------------------------
# 8-bit image files (portable pixmap family)


def quantize(img):
    """Float [0,1] -> uint8 exactly as the file writer does."""
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, img):
    """Write (C,H,W) floats in [0,1] as binary PGM (C=1) or PPM (C=3)."""
    img = np.asarray(img)
    c, h, w = img.shape
    q = quantize(img)
    with open(path, "wb") as fh:
        if c == 1:
            fh.write(b"P5\n%d %d\n255\n" % (w, h))
            fh.write(q[0].tobytes())
        elif c == 3:
            fh.write(b"P6\n%d %d\n255\n" % (w, h))
            fh.write(np.moveaxis(q, 0, 2).tobytes())
        else:
            raise ContractError("only 1- or 3-channel images supported, got %d" % c)


def read_image(path):
    """Read a binary PGM/PPM written by :func:`write_image` -> (C,H,W) floats."""
    with open(path, "rb") as fh:
        raw = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    magic, w, h = fields[0], int(fields[1]), int(fields[2])
    if int(fields[3]) != 255:
        raise ContractError("unsupported maxval in %s" % path)
    if magic == b"P5":
        data = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=pos)
        arr = data.reshape(1, h, w)
    elif magic == b"P6":
        data = np.frombuffer(raw, dtype=np.uint8, count=3 * h * w, offset=pos)
        arr = np.moveaxis(data.reshape(h, w, 3), 2, 0)
    else:
        raise ContractError("unsupported image format %r in %s" % (magic, path))
    return arr.astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# manifests and datasets


@dataclass
class ManifestEntry:
    path: str
    label: int
    role: str


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write("%s,%d,%s\n" % (e.path, e.label, e.role))


def read_manifest(path):
    if not os.path.exists(path):
        raise FileNotFoundError("manifest not found: %s" % path)
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rel, label, role = line.split(",")
            entries.append(ManifestEntry(path=rel, label=int(label), role=role))
    return entries


@dataclass
class PairedDataset:
    """Secrets with forgery labels, index-paired with cover images."""

    secrets: np.ndarray
    labels: np.ndarray
    covers: np.ndarray
    secret_paths: list

    def __len__(self):
        return self.secrets.shape[0]


def generate_split(out_dir, subdir, n, image_size, channels, artifact_amp, rng):
    os.makedirs(os.path.join(out_dir, subdir), exist_ok=True)
    entries = []
    for i in range(n):
        label = i % 2
        secret = make_secret(rng, image_size, channels, fake=bool(label),
                             artifact_amp=artifact_amp)
        cover = make_cover(rng, image_size, channels)
        ext = "pgm" if channels == 1 else "ppm"
        spath = "%s/secret_%04d.%s" % (subdir, i, ext)
        cpath = "%s/cover_%04d.%s" % (subdir, i, ext)
        write_image(os.path.join(out_dir, spath), secret)
        write_image(os.path.join(out_dir, cpath), cover)
        entries.append(ManifestEntry(path=spath, label=label, role="secret"))
        entries.append(ManifestEntry(path=cpath, label=LABEL_COVER, role="cover"))
    return entries


def generate_dataset(out_dir, n_train, n_test, image_size, channels, seed,
                     artifact_amp=0.48):
    """Write train/test splits with interleaved secret/cover manifests."""
    if n_train % 2 or n_test % 2:
        raise ConfigError("n_train and n_test must be even for a 50/50 balance")
    if image_size % 2:
        raise ConfigError("image_size must be even")
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    train = generate_split(out_dir, "train", n_train, image_size, channels,
                           artifact_amp, rng)
    test = generate_split(out_dir, "test", n_test, image_size, channels,
                          artifact_amp, rng)
    write_manifest(os.path.join(out_dir, MANIFEST_TRAIN), train)
    write_manifest(os.path.join(out_dir, MANIFEST_TEST), test)


def load_split(data_dir, split):
    """Load one split into memory; secrets pair with covers by manifest order."""
    manifest = os.path.join(
        data_dir, MANIFEST_TRAIN if split == "train" else MANIFEST_TEST)
    entries = read_manifest(manifest)
    secrets, labels, covers, spaths = [], [], [], []
    for e in entries:
        arr = read_image(os.path.join(data_dir, e.path))
        if e.role == "secret":
            secrets.append(arr)
            labels.append(e.label)
            spaths.append(e.path)
        elif e.role == "cover":
            covers.append(arr)
        else:
            raise ContractError("unknown role %r in manifest" % e.role)
    if len(secrets) != len(covers):
        raise ContractError("manifest must pair each secret with one cover")
    return PairedDataset(secrets=np.stack(secrets), labels=np.asarray(labels),
                         covers=np.stack(covers), secret_paths=spaths)
