"""Decision-level fusion over streams and views, subject-independent folds,
and accuracy/confusion reporting."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from fer4d.errors import LengthMismatch, MissingCell, MissingSlice, TooFewSubjects
from fer4d.mesh import EXPRESSIONS

STREAMS = ("DI", "LI")
N_LABELS = len(EXPRESSIONS)

# Table layout: collaborator settings, then view combinations in display order.
SETTINGS = (
    ("LI", "Landmark Images", ("LI",)),
    ("DI", "Dynamic Images", ("DI",)),
    ("DI+LI", "Landmark and Dynamic Images", ("DI", "LI")),
)
VIEW_COMBOS = ("LP", "FP", "RP", "RP+FP", "LP+FP", "RP+LP", "RP+FP+LP")

# Reference accuracies (%) reported for this grid on real scans; kept for
# comparison only, the synthetic data cannot reproduce them.
PUBLISHED_ACCURACY = {
    "LI": dict(zip(VIEW_COMBOS, (75.40, 78.70, 77.60, 85.50, 84.20, 83.80, 88.80))),
    "DI": dict(zip(VIEW_COMBOS, (78.30, 80.20, 79.20, 83.20, 82.10, 81.30, 84.70))),
    "DI+LI": dict(zip(VIEW_COMBOS, (83.40, 91.40, 87.70, 93.60, 92.10, 88.80, 96.70))),
}


@dataclass(eq=False)
class ScoreCube:
    """Class probabilities indexed (sample, stream, view, label).

    ``scores`` has shape (N, len(streams), len(views), 6). Missing slices are
    NaN. ``truth`` holds optional 1-based labels.
    """

    scores: np.ndarray
    views: tuple[str, ...]
    streams: tuple[str, ...] = STREAMS
    samples: tuple[str, ...] = ()
    truth: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.views = tuple(self.views)
        self.streams = tuple(self.streams)
        want = (len(self.streams), len(self.views), N_LABELS)
        if self.scores.ndim != 4 or self.scores.shape[1:] != want:
            raise ValueError(f"scores must be (N, {want}), got {self.scores.shape}")
        if not self.samples:
            self.samples = tuple(str(i) for i in range(len(self.scores)))
        if len(self.samples) != len(self.scores):
            raise LengthMismatch("one sample id per score row required")
        present = ~np.isnan(self.scores).any(axis=-1)
        s = self.scores[present]
        if s.size and (np.any(s < 0) or np.any(np.abs(s.sum(axis=-1) - 1.0) > 1e-9)):
            raise ValueError("every score slice must be a probability distribution")

    @classmethod
    def empty(cls, samples, views, truth=None):
        scores = np.full((len(samples), len(STREAMS), len(views), N_LABELS), np.nan)
        return cls(scores, tuple(views), STREAMS, tuple(samples), truth)

    def set(self, sample_index, stream, view, probs):
        self.scores[sample_index, self.streams.index(stream), self.views.index(view)] = probs

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample", "truth", "stream", "view"] + [f"p{l}" for l in range(1, N_LABELS + 1)])
        for n, name in enumerate(self.samples):
            truth = "" if self.truth is None else int(self.truth[n])
            for si, s in enumerate(self.streams):
                for vi, v in enumerate(self.views):
                    row = self.scores[n, si, vi]
                    if np.isnan(row).any():
                        continue
                    w.writerow([name, truth, s, v] + [repr(float(p)) for p in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> ScoreCube:
        rows = list(csv.reader(io.StringIO(text)))[1:]
        samples, views, truth = [], [], {}
        for r in rows:
            if r[0] not in samples:
                samples.append(r[0])
            if r[3] not in views:
                views.append(r[3])
            if r[1]:
                truth[r[0]] = int(r[1])
        cube = cls.empty(samples, views)
        for r in rows:
            cube.set(samples.index(r[0]), r[2], r[3], [float(p) for p in r[4:]])
        if truth:
            cube.truth = np.array([truth[s] for s in samples])
        return cube


def collaborate(cube: ScoreCube, streams, views) -> np.ndarray:
    """C(n, l) = (1/|views|) * sum over views and streams of cube(n, s, view, l)."""
    streams, views = tuple(streams), tuple(views)
    if not streams or not views:
        raise ValueError("streams and views must be non-empty")
    for s in streams:
        for v in views:
            if s not in cube.streams or v not in cube.views:
                raise MissingSlice(f"score cube has no ({s}, {v}) slice")
    si = [cube.streams.index(s) for s in streams]
    vi = [cube.views.index(v) for v in views]
    sub = cube.scores[:, si][:, :, vi]
    if np.isnan(sub).any():
        n, s, v = np.argwhere(np.isnan(sub).any(axis=-1))[0]
        raise MissingSlice(f"sample {cube.samples[n]} lacks ({streams[s]}, {views[v]}) scores")
    return sub.sum(axis=(1, 2)) / len(views)


@dataclass(frozen=True)
class Prediction:
    label: int
    score: float


def predict(C: np.ndarray) -> list[Prediction]:
    """Arg-max label per row (1-based; lowest index wins ties)."""
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    idx = C.argmax(axis=1)
    return [Prediction(int(i) + 1, float(C[n, i])) for n, i in enumerate(idx)]


@dataclass(frozen=True)
class Fold:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[Fold, ...]

    def __len__(self):
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)

    def __getitem__(self, i):
        return self.folds[i]


def split_sizes(n: int) -> tuple[int, int, int]:
    """60/20/20 subject counts; validation and test round half up, train takes the rest."""
    n_test = int(np.floor(0.2 * n + 0.5))
    n_val = int(np.floor(0.2 * n + 0.5))
    return n - n_val - n_test, n_val, n_test


def make_folds(subjects, k: int = 10, seed: int = 0) -> FoldSplit:
    """Subject-independent k-fold rotation with a 60/20/20 split per fold.

    ``subjects`` is a Dataset or an iterable of subject ids. Subjects are
    shuffled once; fold i starts its test block at position floor(i*n/k) of
    the shuffled ring, followed by the validation block, and trains on the
    rest. Test blocks tile the ring exactly once when k * n_test == n.
    """
    ids = sorted(set(getattr(subjects, "subjects", subjects)))
    n = len(ids)
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k or n < 3:
        raise TooFewSubjects(f"{n} subjects cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(n)]
    n_train, n_val, n_test = split_sizes(n)
    folds = []
    for i in range(k):
        start = (i * n) // k
        ring = order[start:] + order[:start]
        test, val, train = ring[:n_test], ring[n_test:n_test + n_val], ring[n_test + n_val:]
        fold = Fold(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)))
        assert not (set(fold.train) & set(fold.val) or set(fold.train) & set(fold.test)
                    or set(fold.val) & set(fold.test)), "fold parts must be subject-disjoint"
        folds.append(fold)
    return FoldSplit(tuple(folds))


@dataclass(eq=False)
class ConfusionMatrix:
    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_LABELS, N_LABELS), dtype=np.int64))

    @property
    def rates(self) -> np.ndarray:
        tot = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, tot, out=np.zeros(self.counts.shape), where=tot > 0)

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["truth\\pred"] + list(EXPRESSIONS))
        for name, row in zip(EXPRESSIONS, self.counts):
            w.writerow([name] + [int(v) for v in row])
        w.writerow([])
        w.writerow(["rate"] + list(EXPRESSIONS))
        for name, row in zip(EXPRESSIONS, self.rates):
            w.writerow([name] + [f"{v:.4f}" for v in row])
        return buf.getvalue()


def evaluate(preds, truth) -> tuple[float, ConfusionMatrix]:
    """Accuracy and confusion counts (rows: truth, columns: prediction)."""
    labels = np.array([p.label if isinstance(p, Prediction) else int(p) for p in preds])
    truth = np.asarray(truth, dtype=np.int64)
    if len(labels) != len(truth):
        raise LengthMismatch(f"{len(labels)} predictions vs {len(truth)} labels")
    cm = ConfusionMatrix()
    np.add.at(cm.counts, (truth - 1, labels - 1), 1)
    acc = float(np.mean(labels == truth)) if len(truth) else float("nan")
    return acc, cm


def combo_views(combo: str) -> tuple[str, ...]:
    return tuple(combo.split("+"))


def all_view_combos(tags) -> list[str]:
    """Every non-empty combination of the given profile tags."""
    out = []
    for r in range(1, len(tags) + 1):
        out.extend("+".join(c) for c in combinations(tags, r))
    return out


@dataclass(eq=False)
class Report:
    """Accuracy grid over collaborator settings and view combinations (fractions)."""

    cells: dict
    best: dict

    def text(self) -> str:
        lines = [
            f"{'Collaborator(s)':<30}{'Multi-view Profile(s)':<24}{'FER Accuracy (%)':>17}",
            "-" * 71,
        ]
        for key, title, _ in SETTINGS:
            for i, combo in enumerate(VIEW_COMBOS):
                mark = " *" if combo == self.best[key] else "  "
                acc = f"{100 * self.cells[(key, combo)]:.2f}{mark}"
                lines.append(f"{title if i == 0 else '':<30}{combo:<24}{acc:>17}")
            lines.append("-" * 71)
        lines.append("* best view combination within each collaborator setting")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["setting", "views", "accuracy", "best"])
        for key, _, _ in SETTINGS:
            for combo in VIEW_COMBOS:
                w.writerow([key, combo, f"{self.cells[(key, combo)]:.6f}", int(combo == self.best[key])])
        return buf.getvalue()


def report_table(results: dict) -> Report:
    """Assemble the 3 x 7 grid; ``results`` maps (setting, combo) to accuracy.

    Settings are 'LI', 'DI', 'DI+LI'; combos as in ``VIEW_COMBOS``. The best
    combination per setting is the highest accuracy, earliest row on ties.
    """
    cells, best = {}, {}
    for key, _, _ in SETTINGS:
        top = None
        for combo in VIEW_COMBOS:
            if (key, combo) not in results:
                raise MissingCell(f"no result for setting {key}, views {combo}")
            acc = float(results[(key, combo)])
            cells[(key, combo)] = acc
            if top is None or acc > cells[(key, top)]:
                top = combo
        best[key] = top
    return Report(cells, best)


def confusion_ppm(cm: ConfusionMatrix, cell: int = 24) -> np.ndarray:
    """RGB heat map of the row-normalized confusion rates (white = 0, dark blue = 1)."""
    r = np.kron(cm.rates, np.ones((cell, cell)))
    return np.stack([1.0 - r, 1.0 - 0.8 * r, 1.0 - 0.4 * r], axis=-1)
