"""Boundary-benchmark evaluation: thinning, tolerance matching, ODS/OIS/AP, PR curves, point-pair recall."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial import cKDTree
from skimage.draw import line as raster_line
from skimage.morphology import thin

DEFAULT_TOLERANCE = 0.0075
THIN_PAD = 8


def default_thresholds() -> np.ndarray:
    return np.arange(1, 100) / 100.0


@dataclass(frozen=True)
class MatchCounts:
    tp_pred: int = 0
    n_pred: int = 0
    tp_gt: int = 0
    n_gt: int = 0

    def __post_init__(self):
        if not (0 <= self.tp_pred <= self.n_pred and 0 <= self.tp_gt <= self.n_gt):
            raise ValueError(f"inconsistent counts {self}")

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(
            self.tp_pred + other.tp_pred, self.n_pred + other.n_pred, self.tp_gt + other.tp_gt, self.n_gt + other.n_gt
        )

    @property
    def precision(self) -> float:
        return 1.0 if self.n_pred == 0 else self.tp_pred / self.n_pred

    @property
    def recall(self) -> float:
        return 0.0 if self.n_gt == 0 else self.tp_gt / self.n_gt

    @property
    def f1(self) -> float:
        return f_measure(self.precision, self.recall)


def f_measure(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def thin_edges(binary: np.ndarray, extend_borders: bool = False) -> np.ndarray:
    """Skeletonize to 1-pixel width, preserving 8-connectivity.

    With ``extend_borders`` the map is edge-replicated before thinning, so bands that run
    off the frame keep their full length instead of eroding back from the border.
    """
    binary = np.asarray(binary, dtype=bool)
    if not binary.any():
        return binary.copy()
    if not extend_borders:
        return thin(binary)
    padded = np.pad(binary, THIN_PAD, mode="edge")
    return thin(padded)[THIN_PAD:-THIN_PAD, THIN_PAD:-THIN_PAD]


def binarize_and_thin(prob: np.ndarray, threshold: float, do_thin: bool = True) -> np.ndarray:
    binary = np.asarray(prob) >= threshold
    return thin_edges(binary) if do_thin else binary


def match_edges(pred: np.ndarray, gt: np.ndarray, tol: float = DEFAULT_TOLERANCE) -> MatchCounts:
    """Maximum-cardinality one-to-one matching of edge pixels within tol * image diagonal."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    p_pts = np.argwhere(pred)
    g_pts = np.argwhere(gt)
    n_pred, n_gt = len(p_pts), len(g_pts)
    if n_pred == 0 or n_gt == 0:
        return MatchCounts(0, n_pred, 0, n_gt)
    radius = tol * float(np.hypot(*pred.shape))
    neighbors = cKDTree(g_pts).query_ball_point(p_pts, r=radius + 1e-9)
    rows = np.repeat(np.arange(n_pred), [len(nb) for nb in neighbors])
    cols = np.fromiter((j for nb in neighbors for j in nb), dtype=np.int64, count=len(rows))
    if len(rows) == 0:
        return MatchCounts(0, n_pred, 0, n_gt)
    graph = csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n_pred, n_gt))
    matched = int((maximum_bipartite_matching(graph, perm_type="column") >= 0).sum())
    return MatchCounts(matched, n_pred, matched, n_gt)


@dataclass
class EvalSummary:
    ods_f: float
    ods_threshold: float
    ois_f: float
    ap: float
    pr_curve: list[tuple[float, float, float]]
    image_best_thresholds: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def image_counts(
    prob: np.ndarray, gt: np.ndarray, thresholds: Sequence[float], tol: float, do_thin: bool = True
) -> list[MatchCounts]:
    prob = np.asarray(prob, dtype=np.float64)
    gt = np.asarray(gt).astype(bool)
    if prob.shape != gt.shape:
        raise ValueError(f"prediction {prob.shape} and ground truth {gt.shape} differ in shape")
    return [match_edges(binarize_and_thin(prob, t, do_thin), gt, tol) for t in thresholds]


def average_precision(points: Iterable[tuple[float, float]], levels: int = 101) -> float:
    """Mean upper-envelope precision at equally spaced recall levels; unattained levels count as 0."""
    pts = np.array(list(points), dtype=np.float64).reshape(-1, 2)
    total = 0.0
    for r in np.linspace(0, 1, levels):
        reach = pts[pts[:, 1] >= r - 1e-12]
        total += reach[:, 0].max() if len(reach) else 0.0
    return total / levels


def per_image_choice(per_image: list[list[MatchCounts]], start: int, mode: str = "joint") -> list[int]:
    """Threshold index per image for OIS.

    ``"independent"`` takes each image's own F-maximizing threshold. ``"joint"`` picks the
    per-image thresholds that maximize the F of the summed counts. With one-to-one matching
    F = 2 tp / (n_pred + n_gt), a ratio of per-image sums, so Dinkelbach's iteration solves
    it exactly; starting from the ODS threshold makes the result dominate ODS.
    """
    if mode == "independent":
        return [int(np.argmax([c.f1 for c in img])) for img in per_image]
    if mode != "joint":
        raise ValueError(f"unknown OIS mode {mode!r}")
    if any(c.tp_pred != c.tp_gt for img in per_image for c in img):
        raise ValueError("joint OIS needs one-to-one match counts")
    num = np.array([[2 * c.tp_pred for c in img] for img in per_image], dtype=np.float64)
    den = np.array([[c.n_pred + c.n_gt for c in img] for img in per_image], dtype=np.float64)
    rows = np.arange(len(per_image))
    choice = np.full(len(per_image), start)

    def ratio(ch):
        d = den[rows, ch].sum()
        return num[rows, ch].sum() / d if d > 0 else 0.0

    lam = ratio(choice)
    for _ in range(1000):
        new = np.argmax(num - lam * den, axis=1)
        new_lam = ratio(new)
        if new_lam <= lam:
            break
        choice, lam = new, new_lam
    return [int(k) for k in choice]


def summarize(per_image: list[list[MatchCounts]], thresholds: Sequence[float], ois_mode: str = "joint") -> EvalSummary:
    thresholds = [float(t) for t in thresholds]
    totals = [sum((img[k] for img in per_image), MatchCounts()) for k in range(len(thresholds))]
    curve = [(t, c.precision, c.recall) for t, c in zip(thresholds, totals)]
    fs = [c.f1 for c in totals]
    best = int(np.argmax(fs))
    choice = per_image_choice(per_image, best, ois_mode)
    ois_total = sum((img[k] for img, k in zip(per_image, choice)), MatchCounts())
    ap = average_precision((c.precision, c.recall) for c in totals if c.n_pred > 0)
    return EvalSummary(fs[best], thresholds[best], ois_total.f1, ap, curve, [thresholds[k] for k in choice])


def evaluate_dataset(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    thresholds: Sequence[float] | None = None,
    tol: float = DEFAULT_TOLERANCE,
    do_thin: bool = True,
    ois_mode: str = "joint",
) -> EvalSummary:
    if len(preds) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions but {len(gts)} ground truths")
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(thresholds) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    per_image = [image_counts(p, g, thresholds, tol, do_thin) for p, g in zip(preds, gts)]
    return summarize(per_image, thresholds, ois_mode)


@dataclass(frozen=True)
class PointPair:
    image: str
    x1: int
    y1: int
    x2: int
    y2: int
    equal_reflectance: bool


def segment_maxima(prob: np.ndarray, pairs: Sequence[PointPair]) -> np.ndarray:
    """Largest probability on the 8-connected raster segment joining each pair."""
    prob = np.asarray(prob, dtype=np.float64)
    h, w = prob.shape
    out = []
    for pp in pairs:
        for x, y in ((pp.x1, pp.y1), (pp.x2, pp.y2)):
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"point ({x}, {y}) outside a {w}x{h} image")
        rr, cc = raster_line(pp.y1, pp.x1, pp.y2, pp.x2)
        out.append(prob[rr, cc].max())
    return np.array(out)


def mean_recall_pairs(prob: np.ndarray, pairs: Sequence[PointPair], thresholds: Sequence[float] | None = None) -> float:
    """Mean over thresholds of the fraction of unequal-reflectance pairs whose segment crosses an edge."""
    unequal = [p for p in pairs if not p.equal_reflectance]
    if not unequal:
        raise ValueError("no unequal-reflectance pairs to evaluate")
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    peaks = segment_maxima(prob, unequal)
    return float(np.mean([(peaks >= t).mean() for t in thresholds]))


def write_pr_csv(summary: EvalSummary, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall"])
        for t, p, r in summary.pr_curve:
            writer.writerow([f"{t:.17g}", f"{p:.17g}", f"{r:.17g}"])
    return path


def read_pr_csv(path: str | Path) -> list[tuple[float, float, float]]:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))[1:]
    return [tuple(float(v) for v in row) for row in rows]


def pr_curve_export(summaries: dict[str, EvalSummary] | EvalSummary, out_dir: str | Path) -> list[Path]:
    """One CSV and one rendered curve image per cause."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if isinstance(summaries, EvalSummary):
        summaries = {"edges": summaries}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, summary in summaries.items():
        written.append(write_pr_csv(summary, out_dir / f"pr_{name}.csv"))
        _, p, r = zip(*summary.pr_curve)
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.plot(r, p, lw=2, label=f"{name} ODS={summary.ods_f:.3f}")
        ax.set_xlim(0, 1.01)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("Recall")
        ax.set_ylabel("Precision")
        ax.grid(True, alpha=0.3)
        ax.legend(loc="lower left")
        fig.tight_layout()
        png = out_dir / f"pr_{name}.png"
        fig.savefig(png, dpi=80)
        plt.close(fig)
        written.append(png)
    return written
