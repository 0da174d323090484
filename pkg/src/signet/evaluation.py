"""Distance computation, threshold-sweep metrics, cross-corpus matrix.

A pair is accepted as similar when its embedding distance D <= d. Sweeping
d from the smallest to the largest observed distance in fixed steps, the
reported accuracy is the best balanced accuracy (TPR + TNR) / 2; FAR and
FRR are reported at that best threshold.
"""

from dataclasses import dataclass

import numpy as np

from .model import embed, pair_distance
from .tensor import Tensor


@dataclass
class DistanceRecord:
    pair_id: str
    y: int
    distance: float


@dataclass
class EvalReport:
    threshold: float
    accuracy: float
    far: float
    frr: float
    curve: list                 # (d, TPR, TNR) samples over the sweep
    n_similar: int
    n_dissimilar: int


def compute_distances(model, pairs, batch_size=256):
    """Inference-mode embedding distances, one record per pair, in order."""
    records = []
    for lo in range(0, len(pairs), batch_size):
        chunk = pairs[lo : lo + batch_size]
        for p in chunk:
            if p.image_a is None or p.image_b is None:
                raise ValueError("pairs must be materialized before evaluation")
        a = Tensor(np.stack([p.image_a for p in chunk]))
        b = Tensor(np.stack([p.image_b for p in chunk]))
        d = pair_distance(embed(model, a), embed(model, b)).data
        for p, dist in zip(chunk, d):
            records.append(
                DistanceRecord(f"{p.path_a}|{p.path_b}", int(p.y), float(dist))
            )
    return records


def _split_distances(records):
    sim = np.array([r.distance for r in records if r.y == 0], dtype=np.float64)
    dis = np.array([r.distance for r in records if r.y == 1], dtype=np.float64)
    if sim.size == 0 or dis.size == 0:
        raise ValueError(
            f"need both classes, got {sim.size} similar / {dis.size} dissimilar"
        )
    return sim, dis


def threshold_sweep(records, step=0.01):
    """Best balanced accuracy over thresholds from min to max distance.

    Both endpoints are included, and the fixed-step grid is refined with
    the observed distances themselves (accuracy only changes there), so
    the sweep attains the exhaustive midpoint-oracle maximum. Accuracy
    ties resolve to the smallest threshold.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    sim, dis = _split_distances(records)
    dmin = min(sim.min(), dis.min())
    dmax = max(sim.max(), dis.max())
    count = int(np.floor((dmax - dmin) / step + 1e-9)) + 1
    grid = dmin + step * np.arange(count)
    if grid[-1] < dmax - 1e-12:
        grid = np.append(grid, dmax)
    grid = np.union1d(grid, np.concatenate([sim, dis]))

    sim_sorted = np.sort(sim)
    dis_sorted = np.sort(dis)
    tpr = np.searchsorted(sim_sorted, grid, side="right") / sim.size
    tnr = 1.0 - np.searchsorted(dis_sorted, grid, side="right") / dis.size
    acc = 0.5 * (tpr + tnr)
    best = int(np.argmax(acc))  # argmax takes the first (smallest d) maximum
    d_star = float(grid[best])
    far, frr = far_frr(records, d_star)
    return EvalReport(
        threshold=d_star,
        accuracy=float(acc[best]),
        far=far,
        frr=frr,
        curve=[(float(d), float(p), float(n)) for d, p, n in zip(grid, tpr, tnr)],
        n_similar=int(sim.size),
        n_dissimilar=int(dis.size),
    )


def far_frr(records, d):
    """FAR: dissimilar pairs accepted (D <= d); FRR: similar pairs rejected."""
    sim, dis = _split_distances(records)
    far = float((dis <= d).mean())
    frr = float((sim > d).mean())
    return far, frr


def format_report(report):
    lines = [
        f"pairs = {report.n_similar} similar / {report.n_dissimilar} dissimilar",
        f"best_threshold = {report.threshold!r}",
        f"accuracy = {report.accuracy!r}",
        f"far = {report.far!r}",
        f"frr = {report.frr!r}",
    ]
    return "\n".join(lines) + "\n"


def write_report(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_report(report))


def write_curve(report, path):
    """Sweep curve as d<TAB>TPR<TAB>TNR."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("d\tTPR\tTNR\n")
        for d, tpr, tnr in report.curve:
            fh.write(f"{d!r}\t{tpr!r}\t{tnr!r}\n")


def cross_dataset_matrix(models, datasets, splits, step=0.01, log=None):
    """Accuracy of every model (rows) on every dataset's test pairs (columns).

    models: (name, model, preprocess_std) triples; datasets: (name, index)
    pairs; splits: one SplitSpec per dataset. A failing cell is recorded as
    None and the run continues.
    """
    from .data import build_protocol, materialize_pairs

    cells = {}
    for ds_i, ((ds_name, index), split) in enumerate(zip(datasets, splits)):
        try:
            _, test_pairs = build_protocol(index, split, "skilled")
        except Exception as exc:
            for m_name, _, _ in models:
                cells[(m_name, ds_name)] = None
            if log is not None:
                log(f"dataset {ds_name}: {exc}")
            continue
        for m_name, model, std in models:
            try:
                h = model.config.input_height
                w = model.config.input_width
                pairs = materialize_pairs(list(test_pairs), h, w, std, cache={})
                report = threshold_sweep(compute_distances(model, pairs), step)
                cells[(m_name, ds_name)] = report.accuracy
            except Exception as exc:
                cells[(m_name, ds_name)] = None
                if log is not None:
                    log(f"cell ({m_name}, {ds_name}): {exc}")
    return cells


def format_matrix(model_names, dataset_names, cells):
    """Tab-separated grid, rows = models, columns = datasets, 'ERR' on failure."""
    lines = ["\t".join(["train\\test"] + list(dataset_names))]
    for m in model_names:
        row = [m]
        for d in dataset_names:
            v = cells.get((m, d))
            row.append("ERR" if v is None else f"{v:.4f}")
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def write_matrix(model_names, dataset_names, cells, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_matrix(model_names, dataset_names, cells))
