"""Dataset loading and domain-pair construction.

Three families: Fashion-MNIST style IDX images with 180-degree flipped
targets and optional label-encoding "cheating" bits, CIFAR-10 binary
batches with a color-channel bias, and a synthetic two-dimensional blob
fixture that exhibits the same hidden-data behavior in seconds.
"""

from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

DATA_DIR_ENV = "DIREP_DATA_DIR"

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CHEAT_SCENARIOS = ("none", "shift", "random")
CHEAT_MODES = ("correct", "shift", "random")

_PAIR_MAGIC = b"DLPAIR1\n"


@dataclass
class LabeledSample:
    """One sample: pixels (plus optional cheating one-hot), label, domain bit."""

    x: np.ndarray
    l: int | None
    d: int


@dataclass
class Split:
    """A batch of samples from one domain; x rows are float32 in [0,1]."""

    x: np.ndarray
    labels: np.ndarray | None
    domain: int

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float32)
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.x.shape[0],):
                raise ValueError("labels do not match x rows")
        if self.domain not in (0, 1):
            raise ValueError("domain bit must be 0 or 1")

    def __len__(self):
        return self.x.shape[0]

    def samples(self):
        for i in range(len(self)):
            l = int(self.labels[i]) if self.labels is not None else None
            yield LabeledSample(x=self.x[i], l=l, d=self.domain)


@dataclass
class DomainPair:
    """Source and target splits plus how the pair was constructed."""

    source_train: Split
    source_test: Split
    target_train: Split
    target_test: Split
    name: str
    n_classes: int
    cheating_mode: str = "none"
    bias: float | None = None
    seed: int | None = None

    def __post_init__(self):
        widths = {s.x.shape[1] for s in self.splits().values()}
        if len(widths) != 1:
            raise ValueError(f"inconsistent input widths: {widths}")
        for key, split in self.splits().items():
            want = 0 if key.startswith("source") else 1
            if split.domain != want:
                raise ValueError(f"{key} carries domain bit {split.domain}")

    @property
    def input_width(self):
        return self.source_train.x.shape[1]

    def splits(self):
        return {
            "source_train": self.source_train,
            "source_test": self.source_test,
            "target_train": self.target_train,
            "target_test": self.target_test,
        }


def data_root(explicit=None):
    root = explicit or os.environ.get(DATA_DIR_ENV)
    if not root:
        raise FileNotFoundError(
            f"no dataset root given; pass a path or set {DATA_DIR_ENV}")
    return root


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, n, path):
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"{path}: truncated, wanted {n} bytes, got {len(buf)}")
    return buf


def load_idx(images_path, labels_path):
    """Read an IDX image/label file pair into ([0,1] floats, int labels)."""
    with _open_maybe_gzip(images_path) as f:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"{images_path}: bad magic 0x{magic:08x}")
        raw = _read_exact(f, n * rows * cols, images_path)
        if f.read(1):
            raise ValueError(f"{images_path}: trailing bytes after {n} images")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)
    x = images.astype(np.float32) / 255.0

    with _open_maybe_gzip(labels_path) as f:
        magic, n_labels = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"{labels_path}: bad magic 0x{magic:08x}")
        raw = _read_exact(f, n_labels, labels_path)
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if n_labels != n:
        raise ValueError(f"image count {n} != label count {n_labels}")
    return x, labels


def write_idx(images_path, labels_path, images_u8, labels_u8):
    """Inverse of load_idx, for fixtures; expects uint8 (n, rows, cols)."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels_u8 = np.asarray(labels_u8, dtype=np.uint8)
    n, rows, cols = images_u8.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images_u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(labels_u8.tobytes())


def flip180(x, side=28):
    """Rotate flattened side*side images by 180 degrees: (r,c) -> (27-r, 27-c)."""
    x = np.asarray(x)
    flat = x.ndim == 1
    if flat:
        x = x[None, :]
    if x.shape[1] != side * side:
        raise ValueError(f"expected rows of {side * side} pixels, got {x.shape[1]}")
    out = x.reshape(-1, side, side)[:, ::-1, ::-1].reshape(-1, side * side)
    out = np.ascontiguousarray(out)
    return out[0] if flat else out


def cheat_bits(labels, mode, rng=None, n_classes=10):
    """One-hot cheating block per sample: the label, the next label, or noise."""
    if mode not in CHEAT_MODES:
        raise ValueError(f"mode must be one of {CHEAT_MODES}, got {mode!r}")
    if mode == "random":
        if rng is None:
            raise ValueError("random mode needs an rng")
        idx = rng.integers(0, n_classes, size=len(labels))
    else:
        labels = np.asarray(labels)
        if labels.ndim != 1:
            raise ValueError("labels must be a vector")
        idx = labels if mode == "correct" else (labels + 1) % n_classes
    out = np.zeros((len(idx), n_classes), dtype=np.float32)
    out[np.arange(len(idx)), idx] = 1.0
    return out


def attach_cheating(x, labels, mode, rng=None, n_classes=10):
    """Append the one-hot cheating block to each row of x."""
    bits = cheat_bits(labels, mode, rng=rng, n_classes=n_classes)
    return np.hstack([np.asarray(x, dtype=np.float32), bits])


def _find_fashion_files(root):
    names = {
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    }
    for base in (os.path.join(root, "fashion-mnist"), root):
        found = {}
        for key, stem in names.items():
            for cand in (os.path.join(base, stem), os.path.join(base, stem + ".gz")):
                if os.path.isfile(cand):
                    found[key] = cand
                    break
        if len(found) == len(names):
            return found
    raise FileNotFoundError(
        f"Fashion-MNIST IDX files not found under {root} (or {root}/fashion-mnist)")


def build_fashion_pair(cheat_scenario, seed, data_dir=None):
    """Flip-180 domain pair with the configured cheating bits.

    Source keeps the original images; target images are rotated 180
    degrees.  Outside scenario "none", source rows always get the correct
    one-hot while target rows get the shifted or random one, so the bit
    marginals match across domains while their meaning differs.
    """
    if cheat_scenario not in CHEAT_SCENARIOS:
        raise ValueError(f"scenario must be one of {CHEAT_SCENARIOS}, got {cheat_scenario!r}")
    files = _find_fashion_files(data_root(data_dir))
    x_train, l_train = load_idx(files["train_images"], files["train_labels"])
    x_test, l_test = load_idx(files["test_images"], files["test_labels"])

    seq = np.random.SeedSequence(seed)
    rng_train, rng_test = (np.random.default_rng(c) for c in seq.spawn(2))

    def build(x, labels, rng):
        xt = flip180(x)
        if cheat_scenario == "none":
            return x, xt
        xs = attach_cheating(x, labels, "correct")
        xt = attach_cheating(xt, labels, cheat_scenario, rng=rng)
        return xs, xt

    src_train, tgt_train = build(x_train, l_train, rng_train)
    src_test, tgt_test = build(x_test, l_test, rng_test)
    return DomainPair(
        source_train=Split(src_train, l_train, 0),
        source_test=Split(src_test, l_test, 0),
        target_train=Split(tgt_train, l_train, 1),
        target_test=Split(tgt_test, l_test, 1),
        name="fashion",
        n_classes=10,
        cheating_mode=cheat_scenario,
        seed=seed,
    )


# CIFAR-10 binary layout: 1 label byte then 3072 pixel bytes (R, G, B planes)
_CIFAR_RECORD = 3073
_CIFAR_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
_CIFAR_TEST = ["test_batch.bin"]


def _load_cifar_files(paths):
    xs, ls = [], []
    for path in paths:
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) % _CIFAR_RECORD:
            raise ValueError(f"{path}: size {len(raw)} is not a whole number of records")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
        ls.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:].astype(np.float32) / 255.0)
    return np.vstack(xs), np.concatenate(ls)


def keep_channel(x, channel):
    """Zero all but one color plane; rows stay 3072 wide (R,G,B planes)."""
    out = np.zeros_like(x)
    plane = {"R": 0, "G": 1, "B": 2}[channel]
    out[:, plane * 1024:(plane + 1) * 1024] = x[:, plane * 1024:(plane + 1) * 1024]
    return out


def bias_channels(x, labels, p, rng):
    """Source-side channel bias: odd labels lean B, even labels lean R.

    With probability p a row keeps only its parity's channel; otherwise the
    kept channel is drawn uniformly from {B, R}.  The G plane is always
    dropped on the source side.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"bias p must be in [0,1], got {p}")
    n = len(labels)
    odd = (np.asarray(labels) % 2).astype(bool)
    forced = rng.random(n) < p
    coin = rng.integers(0, 2, size=n).astype(bool)  # True -> B
    use_b = np.where(forced, odd, coin)
    out = np.zeros_like(x)
    b_rows = np.where(use_b)[0]
    r_rows = np.where(~use_b)[0]
    out[b_rows] = keep_channel(x[b_rows], "B")
    out[r_rows] = keep_channel(x[r_rows], "R")
    return out, use_b


def cifar_bias_pair(p, seed, data_dir=None):
    """CIFAR-10 pair: color-biased source vs green-only target."""
    root = data_root(data_dir)
    base = os.path.join(root, "cifar-10-batches-bin")
    if not os.path.isdir(base):
        base = root
    train_paths = [os.path.join(base, n) for n in _CIFAR_TRAIN]
    test_paths = [os.path.join(base, n) for n in _CIFAR_TEST]
    for path in train_paths + test_paths:
        if not os.path.isfile(path):
            raise FileNotFoundError(f"missing CIFAR batch {path}")
    x_train, l_train = _load_cifar_files(train_paths)
    x_test, l_test = _load_cifar_files(test_paths)

    seq = np.random.SeedSequence(seed)
    rng_train, rng_test = (np.random.default_rng(c) for c in seq.spawn(2))
    src_train, _ = bias_channels(x_train, l_train, p, rng_train)
    src_test, _ = bias_channels(x_test, l_test, p, rng_test)
    return DomainPair(
        source_train=Split(src_train, l_train, 0),
        source_test=Split(src_test, l_test, 0),
        target_train=Split(keep_channel(x_train, "G"), l_train, 1),
        target_test=Split(keep_channel(x_test, "G"), l_test, 1),
        name="cifar",
        n_classes=10,
        cheating_mode="none",
        bias=p,
        seed=seed,
    )


def synthetic_blobs(n_per_class=200, classes=2, cheat_scenario="none", seed=0,
                    radius=2.0, spread=0.45):
    """Fast 2-d fixture: antipodal Gaussian cluster pairs, target = source
    rotated 180 degrees.

    Each class puts 80% of its samples at +radius and 20% at -radius along
    its own axis, so class identity is the unoriented axis direction and
    survives the rotation while the domains still disagree about which end
    is crowded.  A 50/50 split would make source and target identical as
    distributions and leave nothing to adapt.  Outside scenario "none" the
    cheating bits are the only part of a row whose meaning changes across
    domains, which is what isolates the hidden data effect.  Trains in
    seconds with the small blob architecture.
    """
    if cheat_scenario not in CHEAT_SCENARIOS:
        raise ValueError(f"scenario must be one of {CHEAT_SCENARIOS}, got {cheat_scenario!r}")
    if classes < 2:
        raise ValueError("need at least 2 classes")
    seq = np.random.SeedSequence(seed)
    rng_means, rng_train, rng_test, rng_cheat_train, rng_cheat_test = (
        np.random.default_rng(c) for c in seq.spawn(5))

    angles = (np.arange(classes) + rng_means.random()) * np.pi / classes
    axes = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    n_plus = int(round(0.8 * n_per_class))
    signs = np.where(np.arange(n_per_class) < n_plus, 1.0, -1.0)[:, None]

    def draw(rng):
        xs, ls = [], []
        for c in range(classes):
            noise = spread * rng.standard_normal((n_per_class, 2))
            xs.append(signs * (radius * axes[c]) + noise)
            ls.append(np.full(n_per_class, c, dtype=np.int64))
        x = np.vstack(xs).astype(np.float32)
        l = np.concatenate(ls)
        perm = rng.permutation(len(l))
        return x[perm], l[perm]

    src_x, src_l = draw(rng_train)
    tgt_base, tgt_l = draw(rng_train)
    src_x_test, src_l_test = draw(rng_test)
    tgt_base_test, tgt_l_test = draw(rng_test)
    tgt_x, tgt_x_test = -tgt_base, -tgt_base_test

    def cheat(xs, ls, xt, lt, rng):
        if cheat_scenario == "none":
            return xs, xt
        return (attach_cheating(xs, ls, "correct", n_classes=classes),
                attach_cheating(xt, lt, cheat_scenario, rng=rng, n_classes=classes))

    src_x, tgt_x = cheat(src_x, src_l, tgt_x, tgt_l, rng_cheat_train)
    src_x_test, tgt_x_test = cheat(src_x_test, src_l_test, tgt_x_test, tgt_l_test, rng_cheat_test)
    return DomainPair(
        source_train=Split(src_x, src_l, 0),
        source_test=Split(src_x_test, src_l_test, 0),
        target_train=Split(tgt_x, tgt_l, 1),
        target_test=Split(tgt_x_test, tgt_l_test, 1),
        name="blobs",
        n_classes=classes,
        cheating_mode=cheat_scenario,
        seed=seed,
    )


def batcher(split, batch_size, seed):
    """Infinite batch stream: reshuffles each epoch, deterministic per seed.

    Every epoch covers each sample exactly once, so the last batch of an
    epoch may be short when the split size is not a multiple.
    """
    if len(split) == 0:
        raise ValueError("cannot batch an empty split")
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    rng = np.random.default_rng(seed)

    def stream():
        while True:
            perm = rng.permutation(len(split))
            for start in range(0, len(perm), batch_size):
                idx = perm[start:start + batch_size]
                labels = split.labels[idx] if split.labels is not None else None
                yield split.x[idx], labels

    return stream()


def validate_pair(pair):
    """Check the structural invariants of a constructed pair; returns issues."""
    issues = []
    base_classes = None
    for key, split in pair.splits().items():
        if not np.all((split.x >= 0) & (split.x <= 1)) and pair.name != "blobs":
            issues.append(f"{key}: pixel values outside [0,1]")
        if split.labels is not None:
            classes = set(np.unique(split.labels).tolist())
            if base_classes is None:
                base_classes = classes
            elif classes != base_classes:
                issues.append(f"{key}: class set {classes} != {base_classes}")
        if pair.cheating_mode != "none" and pair.name != "cifar":
            bits = split.x[:, -pair.n_classes:]
            if not np.all(np.isin(bits, (0.0, 1.0))):
                issues.append(f"{key}: cheating block not 0/1")
            elif not np.all(bits.sum(axis=1) == 1.0):
                issues.append(f"{key}: cheating block not one-hot")
    return issues


def export_pair(path, pair):
    """Write a pair to one flat binary file (JSON header + raw arrays)."""
    entries = []
    blobs = []
    for key, split in pair.splits().items():
        entries.append({"key": key, "n": len(split), "width": split.x.shape[1],
                        "domain": split.domain,
                        "has_labels": split.labels is not None})
        blobs.append(np.ascontiguousarray(split.x).tobytes())
        if split.labels is not None:
            blobs.append(np.ascontiguousarray(split.labels).tobytes())
    header = json.dumps({
        "name": pair.name, "n_classes": pair.n_classes,
        "cheating_mode": pair.cheating_mode, "bias": pair.bias,
        "seed": pair.seed, "splits": entries,
    }).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PAIR_MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_pair(path):
    """Inverse of export_pair."""
    with open(path, "rb") as f:
        if f.read(len(_PAIR_MAGIC)) != _PAIR_MAGIC:
            raise ValueError(f"{path} is not an exported pair")
        header_len = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(header_len).decode("utf-8"))
        splits = {}
        for entry in header["splits"]:
            n, width = entry["n"], entry["width"]
            x = np.frombuffer(_read_exact(f, 4 * n * width, path),
                              dtype=np.float32).reshape(n, width)
            labels = None
            if entry["has_labels"]:
                labels = np.frombuffer(_read_exact(f, 8 * n, path), dtype=np.int64)
            splits[entry["key"]] = Split(x.copy(), None if labels is None else labels.copy(),
                                         entry["domain"])
    return DomainPair(
        source_train=splits["source_train"], source_test=splits["source_test"],
        target_train=splits["target_train"], target_test=splits["target_test"],
        name=header["name"], n_classes=header["n_classes"],
        cheating_mode=header["cheating_mode"], bias=header["bias"],
        seed=header["seed"],
    )
