"""Frame datasets: seeded PRNG, synthetic generator, splicing, FDS1 codec."""

import math
import struct
from dataclasses import dataclass

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MAX_SEGMENT = 50
FDS_MAGIC = b"FDS1"
_HEADER = struct.Struct("<4sIIII")


# --------------------------------------------------------------------------
# PRNG


def splitmix64(state):
    """Advance a splitmix64 state. Returns ``(new_state, output)``."""
    state = (state + GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class Prng:
    """splitmix64 generator.

    Uniforms use the top 53 bits of an output. Gaussians use Box-Muller on a
    pair of consecutive uniforms ``(u1, u2)`` and keep only the cosine branch,
    so every Gaussian consumes exactly two outputs. Array and scalar draws
    advance the same stream and agree bit for bit.
    """

    def __init__(self, seed):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state, z = splitmix64(self.state)
        return z

    def next_array(self, n):
        """The next ``n`` outputs as a uint64 array."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return z ^ (z >> np.uint64(31))

    def randbelow(self, n):
        return self.next_u64() % n

    def uniform(self, lo=0.0, hi=1.0):
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0**-53)

    def uniform_array(self, n, lo=0.0, hi=1.0):
        u = (self.next_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return lo + (hi - lo) * u

    def gaussian(self):
        return float(self.gaussian_array(1)[0])

    def gaussian_array(self, n):
        u = self.uniform_array(2 * n).reshape(n, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        return r * np.cos(2.0 * np.pi * u[:, 1])


def derive_seed(seed, *path):
    """Seed of an independent sub-stream, e.g. ``derive_seed(s, 1, epoch)``."""
    s = int(seed) & MASK64
    for p in path:
        s = Prng(s ^ (int(p) & MASK64)).next_u64()
    return s


# --------------------------------------------------------------------------
# Dataset container


class DataFormatError(ValueError):
    """Malformed dataset or dataset file."""


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class LabelRangeError(DataFormatError):
    pass


class SegmentError(DataFormatError):
    pass


@dataclass(eq=False)
class FrameDataset:
    features: np.ndarray
    labels: np.ndarray
    segments: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.segments = np.asarray(self.segments, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataFormatError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise DataFormatError(f"{self.labels.size} labels for {n} frames")
        if self.num_classes < 1:
            raise DataFormatError("num_classes must be positive")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelRangeError(f"labels must lie in [0, {self.num_classes})")
        if (self.segments <= 0).any():
            raise SegmentError("segment lengths must be positive")
        if int(self.segments.sum()) != n:
            raise SegmentError(f"segment lengths sum to {int(self.segments.sum())}, expected {n}")

    @property
    def num_frames(self):
        return self.features.shape[0]

    @property
    def feat_dim(self):
        return self.features.shape[1]

    def equals(self, other):
        """Bitwise equality of every field."""
        return (
            self.num_classes == other.num_classes
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.segments, other.segments)
        )


# --------------------------------------------------------------------------
# Synthetic task


def _draw_prototypes(prng, num_classes, dim):
    protos = prng.uniform_array(num_classes * dim, -1.0, 1.0)
    return protos.astype(np.float32).astype(np.float64).reshape(num_classes, dim)


def class_prototypes(num_classes, dim, seed):
    """The class means ``generate_synthetic`` uses for this seed."""
    return _draw_prototypes(Prng(seed), num_classes, dim)


def _geometric(prng, mean_dur):
    u = prng.uniform()
    if mean_dur <= 1.0:
        return 1
    p = 1.0 / mean_dur
    return 1 + int(math.floor(math.log1p(-u) / math.log1p(-p)))


def generate_synthetic(num_classes, dim, num_frames, mean_dur=10.0, noise_sigma=0.3, seed=0):
    """Piecewise-constant frame classification task.

    Segments have geometric durations (mean ``mean_dur``, capped at 50, and
    cut short at the end of the set) and a uniformly drawn class; each frame
    is the class prototype plus isotropic Gaussian noise. Features are
    rounded to float32 so the dataset survives the FDS1 codec unchanged.
    """
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if dim < 1 or num_frames < 1:
        raise ValueError("dim and num_frames must be positive")
    if mean_dur < 1.0 or noise_sigma < 0.0:
        raise ValueError("mean_dur must be >= 1 and noise_sigma >= 0")

    prng = Prng(seed)
    protos = _draw_prototypes(prng, num_classes, dim)

    features = np.empty((num_frames, dim), dtype=np.float64)
    labels = np.empty(num_frames, dtype=np.int64)
    segments = []
    t = 0
    while t < num_frames:
        cls = prng.randbelow(num_classes)
        dur = min(_geometric(prng, mean_dur), MAX_SEGMENT, num_frames - t)
        noise = prng.gaussian_array(dur * dim).reshape(dur, dim)
        features[t : t + dur] = protos[cls] + noise_sigma * noise
        labels[t : t + dur] = cls
        segments.append(dur)
        t += dur
    features = features.astype(np.float32).astype(np.float64)
    return FrameDataset(features, labels, np.array(segments, dtype=np.int64), num_classes)


# --------------------------------------------------------------------------
# Splicing


def splice_indices(segments, context):
    """Row indices (N x (2c+1)) of the frames that make up each spliced row."""
    segments = np.asarray(segments, dtype=np.int64)
    n = int(segments.sum())
    ends = np.cumsum(segments)
    starts = ends - segments
    seg_start = np.repeat(starts, segments)
    seg_last = np.repeat(ends - 1, segments)
    offsets = np.arange(-context, context + 1, dtype=np.int64)
    idx = np.arange(n, dtype=np.int64)[:, None] + offsets[None, :]
    return np.clip(idx, seg_start[:, None], seg_last[:, None])


def splice(dataset, context):
    """Concatenate each frame with ``context`` neighbours on each side.

    Neighbours never cross a segment boundary: positions past either edge
    repeat the segment's boundary frame.
    """
    if context < 0:
        raise ValueError("context must be non-negative")
    if context == 0:
        return dataset.features.copy()
    idx = splice_indices(dataset.segments, context)
    return dataset.features[idx].reshape(dataset.num_frames, -1)


def spliced_dim(feat_dim, context):
    return feat_dim * (2 * context + 1)


# --------------------------------------------------------------------------
# FDS1 codec


def encode_dataset(ds):
    parts = [
        _HEADER.pack(FDS_MAGIC, ds.num_frames, ds.feat_dim, ds.num_classes, len(ds.segments)),
        ds.segments.astype("<u4").tobytes(),
        ds.features.astype("<f4").tobytes(),
        ds.labels.astype("<u4").tobytes(),
    ]
    return b"".join(parts)


def decode_dataset(buf):
    if len(buf) < 4 or buf[:4] != FDS_MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {FDS_MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedFileError(f"header needs {_HEADER.size} bytes, file has {len(buf)}")
    _, n, d, k, nseg = _HEADER.unpack_from(buf)
    need = _HEADER.size + 4 * nseg + 4 * n * d + 4 * n
    if len(buf) < need:
        raise TruncatedFileError(f"payload needs {need} bytes, file has {len(buf)}")
    if len(buf) > need:
        raise DataFormatError(f"{len(buf) - need} trailing bytes after payload")
    off = _HEADER.size
    segments = np.frombuffer(buf, dtype="<u4", count=nseg, offset=off).astype(np.int64)
    off += 4 * nseg
    feats = np.frombuffer(buf, dtype="<f4", count=n * d, offset=off).astype(np.float64)
    off += 4 * n * d
    labels = np.frombuffer(buf, dtype="<u4", count=n, offset=off).astype(np.int64)
    if n and labels.max() >= k:
        raise LabelRangeError(f"label {int(labels.max())} out of range for {k} classes")
    if int(segments.sum()) != n:
        raise SegmentError(f"segment lengths sum to {int(segments.sum())}, header says {n} frames")
    return FrameDataset(feats.reshape(n, d), labels, segments, k)


def write_dataset(path, ds):
    """Write an FDS1 file. Features are stored as float32."""
    with open(path, "wb") as fh:
        fh.write(encode_dataset(ds))


def read_dataset(path):
    with open(path, "rb") as fh:
        return decode_dataset(fh.read())


# --------------------------------------------------------------------------
# Minibatches


def shuffle_indices(n, prng):
    """Fisher-Yates permutation of ``range(n)``; draw i picks from [0, i]."""
    perm = np.arange(n, dtype=np.int64)
    if n < 2:
        return perm
    draws = prng.next_array(n - 1)
    for step, i in enumerate(range(n - 1, 0, -1)):
        j = int(draws[step]) % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def minibatches(spliced, labels, batch_size, epoch_seed):
    """Shuffled ``(features, labels)`` batches; the last one may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = shuffle_indices(len(labels), Prng(epoch_seed))
    return [
        (spliced[perm[i : i + batch_size]], labels[perm[i : i + batch_size]])
        for i in range(0, len(labels), batch_size)
    ]


def split_dataset(ds, num_first):
    """Split after ``num_first`` frames; a straddling segment is cut in two."""
    if not 0 < num_first < ds.num_frames:
        raise ValueError(f"split point {num_first} outside (0, {ds.num_frames})")
    ends = np.cumsum(ds.segments)
    k = int(np.searchsorted(ends, num_first, side="left"))
    head = list(ds.segments[:k])
    tail = list(ds.segments[k + 1 :])
    start = int(ends[k] - ds.segments[k])
    if num_first > start:
        head.append(num_first - start)
    if ends[k] > num_first:
        tail.insert(0, int(ends[k]) - num_first)
    return (
        FrameDataset(ds.features[:num_first], ds.labels[:num_first], head, ds.num_classes),
        FrameDataset(ds.features[num_first:], ds.labels[num_first:], tail, ds.num_classes),
    )


def generate_train_valid(num_classes, dim, num_train, num_valid, mean_dur=10.0, noise_sigma=0.3, seed=0):
    """Train and validation sets drawn from one stream, so they share prototypes."""
    full = generate_synthetic(num_classes, dim, num_train + num_valid, mean_dur, noise_sigma, seed)
    return split_dataset(full, num_train)
