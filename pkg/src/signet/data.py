"""Dataset indexing, preprocessing, writer-independent splits, pair generation.

Dataset layout on disk:

    <root>/<writer_id>/genuine/*.png|*.pgm
    <root>/<writer_id>/forged/*.png|*.pgm      (8-bit grayscale)

Preprocessing: bilinear resize to the model input size (half-pixel-center
source coordinates, edge-clamped), invert so background is 0, then divide
by the dataset pixel standard deviation. The std is computed over the
training writers only and frozen for test-time use.
"""

import os
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from PIL import Image

from .seeding import stable_rng
from .tensor import default_dtype

IMAGE_SUFFIXES = (".png", ".pgm")


class DatasetError(Exception):
    """Carries an itemized list of dataset problems."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class SignatureImage:
    pixels: np.ndarray
    writer_id: str = ""
    label: str = ""
    source_path: str = ""


@dataclass
class WriterEntry:
    genuine: list
    forged: list


@dataclass
class DatasetIndex:
    name: str
    root: str
    writers: dict
    std: float = 0.0

    @property
    def writer_ids(self):
        return sorted(self.writers)


def load_image(path):
    """8-bit grayscale pixels; color inputs are luma-converted."""
    with Image.open(path) as img:
        if img.mode != "L":
            img = img.convert("L")
        return np.asarray(img, dtype=np.uint8)


def load_dataset(root, log=None):
    """Index a dataset directory, validating every writer and image."""
    if not os.path.isdir(root):
        raise DatasetError(f"{root}: not a directory")
    writer_ids = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    if not writer_ids:
        raise DatasetError(f"{root}: no writer directories")
    problems = []
    writers = {}
    for wid in writer_ids:
        lists = {}
        for label in ("genuine", "forged"):
            sub = os.path.join(root, wid, label)
            paths = []
            if os.path.isdir(sub):
                for name in sorted(os.listdir(sub)):
                    if not name.lower().endswith(IMAGE_SUFFIXES):
                        continue
                    path = os.path.join(sub, name)
                    try:
                        with Image.open(path) as img:
                            img.verify()
                    except Exception as exc:
                        problems.append(f"{path}: unreadable image ({exc})")
                        continue
                    paths.append(path)
            lists[label] = paths
        if len(lists["genuine"]) < 2:
            problems.append(
                f"{wid}: needs at least 2 genuine images, found {len(lists['genuine'])}"
            )
        writers[wid] = WriterEntry(genuine=lists["genuine"], forged=lists["forged"])
        if log is not None:
            log(f"{wid}: {len(lists['genuine'])} genuine, {len(lists['forged'])} forged")
    if problems:
        raise DatasetError(problems)
    return DatasetIndex(name=os.path.basename(os.path.abspath(root)), root=root,
                        writers=writers)


def bilinear_resize(img, target_h, target_w):
    """Bilinear resample with half-pixel-center mapping and edge clamping.

    Uses the lerp form a + (b-a)*t so constant images stay exactly constant
    and a same-size resize is the identity.
    """
    src = np.asarray(img, dtype=np.float64)
    if src.ndim != 2 or src.shape[0] < 1 or src.shape[1] < 1:
        raise ValueError(f"bilinear_resize: bad source shape {src.shape}")
    if target_h < 1 or target_w < 1:
        raise ValueError(f"bilinear_resize: bad target {target_h}x{target_w}")
    h, w = src.shape
    ys = np.clip((np.arange(target_h) + 0.5) * (h / target_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(target_w) + 0.5) * (w / target_w) - 0.5, 0.0, w - 1.0)
    y0 = ys.astype(np.int64)
    x0 = xs.astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = src[np.ix_(y0, x0)]
    b = src[np.ix_(y0, x1)]
    c = src[np.ix_(y1, x0)]
    d = src[np.ix_(y1, x1)]
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    return top + (bot - top) * fy


def preprocess(image, target_h, target_w, std):
    """Resize -> invert (background becomes 0) -> divide by dataset std.

    Returns a [1, target_h, target_w] array in the active tensor dtype.
    """
    if std <= 0:
        raise ValueError(f"std must be positive, got {std}")
    pixels = image.pixels if isinstance(image, SignatureImage) else image
    resized = bilinear_resize(pixels, target_h, target_w)
    out = (255.0 - resized) / std
    return out.astype(default_dtype())[None]


def dataset_std(index, writers, target_h, target_w):
    """Population std of all pixel values over the writers' resized+inverted
    images (genuine and forged). Computed once on the training writers and
    reused verbatim when preprocessing test images.
    """
    writers = list(writers)
    if not writers:
        raise ValueError("dataset_std: empty writer subset")
    n = 0
    s = 0.0
    s2 = 0.0
    for wid in sorted(writers):
        entry = index.writers[wid]
        for path in entry.genuine + entry.forged:
            v = 255.0 - bilinear_resize(load_image(path), target_h, target_w)
            n += v.size
            s += float(v.sum())
            s2 += float((v * v).sum())
    mean = s / n
    var = s2 / n - mean * mean
    if not var > 1e-12:
        raise ValueError("dataset_std: degenerate dataset (zero pixel variance)")
    return float(np.sqrt(var))


@dataclass
class SplitSpec:
    k: int
    m: int
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.m < self.k:
            raise ValueError(f"need 0 < M < K, got M={self.m} K={self.k}")


def split_writers(index, spec):
    """Seeded draw of M training writers out of K; the rest are test writers."""
    ids = index.writer_ids
    if len(ids) != spec.k:
        raise ValueError(f"index has {len(ids)} writers, split expects K={spec.k}")
    perm = stable_rng(spec.seed, "split").permutation(spec.k)
    chosen = {ids[i] for i in perm[: spec.m]}
    train = sorted(chosen)
    test = sorted(set(ids) - chosen)
    return train, test


@dataclass
class PairSample:
    """One training/evaluation atom: two image references plus the label.

    y=0: similar (genuine, genuine of the same writer).
    y=1 skilled: that writer's genuine vs forged.
    y=1 unskilled: that writer's genuine vs another writer's genuine.
    Image arrays are attached by materialize_pairs.
    """

    path_a: str
    path_b: str
    y: int
    writer_id: str
    pairing_mode: str
    image_a: np.ndarray = field(default=None, repr=False)
    image_b: np.ndarray = field(default=None, repr=False)


def generate_pairs(index, writer_id, mode, seed, partner_pool=None):
    """Balanced pair set for one writer.

    All C(G,2) similar pairs; then a seeded sample of equally many
    dissimilar pairs out of the G*F candidates (skilled) or the cross
    product with other writers' genuine images (unskilled). If the
    candidate pool is smaller than C(G,2), the similar set is down-sampled
    to keep the classes balanced.
    """
    if mode not in ("skilled", "unskilled"):
        raise ValueError(f"mode must be skilled or unskilled, got {mode!r}")
    entry = index.writers[writer_id]
    genuine = sorted(entry.genuine)
    g = len(genuine)
    if g < 2:
        raise ValueError(f"{writer_id}: needs at least 2 genuine images, has {g}")
    similar = list(combinations(genuine, 2))
    rng = stable_rng(seed, "pairs", mode, writer_id)

    if mode == "skilled":
        forged = sorted(entry.forged)
        if not forged:
            raise ValueError(f"{writer_id}: skilled pairing needs forged images")
        pool = forged
    else:
        others = partner_pool if partner_pool is not None else index.writer_ids
        pool = [
            p
            for wid in sorted(others)
            if wid != writer_id
            for p in sorted(index.writers[wid].genuine)
        ]
        if not pool:
            raise ValueError(f"{writer_id}: no partner writers for unskilled pairing")

    n_candidates = g * len(pool)
    n = min(len(similar), n_candidates)
    picked = np.sort(rng.choice(n_candidates, size=n, replace=False))
    dissimilar = [(genuine[i // len(pool)], pool[i % len(pool)]) for i in picked]
    if n < len(similar):
        keep = np.sort(rng.choice(len(similar), size=n, replace=False))
        similar = [similar[i] for i in keep]

    pairs = [
        PairSample(a, b, 0, writer_id, mode) for a, b in similar
    ] + [
        PairSample(a, b, 1, writer_id, mode) for a, b in dissimilar
    ]
    return pairs


def build_protocol(index, spec, mode):
    """Per-writer pair sets over a writer-disjoint split.

    Training pairs follow the requested mode; test pairs always use the
    writer's own forgeries. Unskilled training partners are drawn from the
    training writers only.
    """
    train_writers, test_writers = split_writers(index, spec)
    pool = train_writers if mode == "unskilled" else None
    train_pairs = []
    for wid in train_writers:
        train_pairs.extend(generate_pairs(index, wid, mode, spec.seed, partner_pool=pool))
    test_pairs = []
    for wid in test_writers:
        test_pairs.extend(generate_pairs(index, wid, "skilled", spec.seed))
    return train_pairs, test_pairs


def materialize_pairs(pairs, target_h, target_w, std, cache=None):
    """Attach preprocessed image arrays, sharing one array per unique path."""
    if cache is None:
        cache = {}

    def fetch(path):
        arr = cache.get(path)
        if arr is None:
            arr = preprocess(load_image(path), target_h, target_w, std)
            cache[path] = arr
        return arr

    for pair in pairs:
        pair.image_a = fetch(pair.path_a)
        pair.image_b = fetch(pair.path_b)
    return pairs


def export_manifest(pairs, path):
    """One line per pair: path_a<TAB>path_b<TAB>y<TAB>writer_id."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.path_a}\t{p.path_b}\t{p.y}\t{p.writer_id}\n")
