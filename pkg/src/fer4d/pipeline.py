"""Stage-by-stage pipeline over a workspace directory.

Each stage lives in its own subdirectory and records a ``.stamp`` holding a
hash of the configuration fields it reads plus the stamps of the stages it
depends on. A stage whose stamp matches is skipped; a stage whose upstream
stamp is missing or stale fails naming the artifact to rebuild.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fer4d import dataio, fusion
from fer4d.config import PipelineConfig
from fer4d.errors import DegenerateMesh, StageDependencyError, WorkspaceLocked
from fer4d.landmarks import read_features_csv, sequence_features, write_features_csv
from fer4d.mesh import EXPRESSIONS, Frame, MeshSequence, PreprocessConfig, preprocess_sequence
from fer4d.neural import BiLSTM, ConvNet, TrainConfig, fit, load_model, save_model
from fer4d.projection import (
    ViewAngle,
    enhance_depth,
    normalize_depth,
    rasterize,
    rotate_yaw,
    sequence_window,
    shade_texture,
    write_pgm,
    write_ppm,
)
from fer4d.rankpool import PoolingConfig, dynamic_image, normalize_display
from fer4d.synthetic import SyntheticSpec, generate_synthetic

log = logging.getLogger("fer4d")

COMMANDS = (
    "synth",
    "preprocess",
    "render",
    "dynimg",
    "features",
    "train-cnn",
    "train-lstm",
    "eval",
    "report",
)


@dataclass(frozen=True)
class Stage:
    name: str
    fields: tuple[str, ...]
    deps: tuple[str, ...]
    artifact: str


STAGES = {
    "synth": Stage("synth", ("seed", "synth_subjects", "synth_frames", "synth_noise"), (), "synthetic dataset manifest"),
    "preprocess": Stage(
        "preprocess",
        ("manifest", "forehead_fraction", "crop_margin", "outlier_k", "outlier_mult"),
        ("synth",),
        "preprocessed dataset",
    ),
    "render": Stage("render", ("views", "image_size", "clahe_clip", "clahe_tiles"), ("preprocess",), "geometric images"),
    "dynimg": Stage("dynimg", ("pooling", "net_input"), ("render",), "dynamic images"),
    "features": Stage(
        "features",
        ("views", "landmark_image_size", "landmark_radius", "descriptor_grid"),
        ("preprocess",),
        "landmark feature sequences",
    ),
    "train-cnn": Stage(
        "train-cnn",
        ("seed", "folds", "repetitions", "cnn_filters", "cnn_lr", "cnn_epochs", "cnn_batch", "cnn_weight_decay"),
        ("dynimg",),
        "dynamic-image models",
    ),
    "train-lstm": Stage(
        "train-lstm",
        ("seed", "folds", "repetitions", "lstm_input_gain", "lstm_hidden", "lstm_dropout", "lstm_lr", "lstm_epochs",
         "lstm_batch", "lstm_weight_decay"),
        ("features",),
        "landmark-sequence models",
    ),
    "eval": Stage("eval", (), ("train-cnn", "train-lstm"), "score cubes (eval/scores_*.csv)"),
    "report": Stage("report", (), ("eval",), "report"),
}


def stage_deps(name: str, cfg: PipelineConfig) -> tuple[str, ...]:
    if name == "preprocess" and cfg.manifest:
        return ()
    return STAGES[name].deps


def stage_key(name: str, cfg: PipelineConfig) -> str:
    payload = {
        "stage": name,
        "fields": {f: cfg.value_text(f) for f in STAGES[name].fields},
        "deps": {d: stage_key(d, cfg) for d in stage_deps(name, cfg)},
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def views_of(cfg: PipelineConfig) -> list[ViewAngle]:
    return [ViewAngle.from_yaw(v) for v in cfg.views]


class Workspace:
    def __init__(self, root, cfg: PipelineConfig, jobs: int = 1):
        self.root = Path(root)
        self.cfg = cfg
        self.jobs = max(1, int(jobs))

    def dir(self, stage: str) -> Path:
        return self.root / stage

    def stamp(self, stage: str) -> str | None:
        p = self.dir(stage) / ".stamp"
        return p.read_text().strip() if p.is_file() else None

    def require(self, stage: str) -> None:
        for dep in stage_deps(stage, self.cfg):
            have = self.stamp(dep)
            if have is None:
                raise StageDependencyError(
                    f"{stage}: missing {STAGES[dep].artifact} in {self.dir(dep)}; run `{dep}` first"
                )
            if have != stage_key(dep, self.cfg):
                raise StageDependencyError(
                    f"{stage}: {STAGES[dep].artifact} in {self.dir(dep)} is stale for this config; "
                    f"re-run `{dep}`"
                )

    def run(self, stage: str) -> bool:
        """Run one stage; return False when the cache was hit."""
        self.require(stage)
        key = stage_key(stage, self.cfg)
        if self.stamp(stage) == key:
            log.info("%s: cache hit, nothing to do", stage)
            return False
        out = self.dir(stage)
        if out.exists():
            shutil.rmtree(out)
        out.mkdir(parents=True)
        log.info("%s: running", stage)
        RUNNERS[stage](self, out)
        (out / ".stamp").write_text(key + "\n")
        log.info("%s: done", stage)
        return True

    def map(self, fn, items):
        if self.jobs == 1 or len(items) <= 1:
            return [fn(*it) for it in items]
        with ProcessPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(_star, [(fn, it) for it in items]))

    # index of samples written by preprocess: (name, subject, expression)
    def samples(self):
        with open(self.dir("preprocess") / "samples.csv", newline="") as fh:
            return [tuple(r) for r in list(csv.reader(fh))[1:]]


def _star(job):
    fn, args = job
    return fn(*args)


def lock(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    path = root / ".lock"
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise WorkspaceLocked(f"workspace {root} is in use (remove {path} if stale)") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    return path


# ---------------------------------------------------------------- stages


def run_synth(ws: Workspace, out: Path):
    c = ws.cfg
    ds = generate_synthetic(SyntheticSpec(c.synth_subjects, c.synth_frames, c.synth_noise, c.seed))
    dataio.write_dataset(ds, out)


def _preprocess_one(base, schema, record, cfg: PreprocessConfig, out):
    subject, expression, frames = record
    seq = MeshSequence(
        subject,
        expression,
        [Frame(dataio.read_mesh(base / m), dataio.read_landmarks(base / l, schema)) for m, l in frames],
    )
    clean = preprocess_sequence(seq, schema, cfg)
    return dataio.write_sequence(clean, out)


def run_preprocess(ws: Workspace, out: Path):
    c = ws.cfg
    manifest = Path(c.manifest) if c.manifest else ws.dir("synth") / "manifest.txt"
    if not manifest.is_file():
        raise StageDependencyError(f"preprocess: manifest {manifest} not found")
    root, schema, records = dataio.parse_manifest(manifest.read_text(), str(manifest))
    base = (manifest.parent / root).resolve()
    pcfg = PreprocessConfig(c.forehead_fraction, c.crop_margin, c.outlier_k, c.outlier_mult)
    paths = ws.map(_preprocess_one, [(base, schema, r, pcfg, out) for r in records])
    entries = [(s, e, p) for (s, e, _), p in zip(records, paths)]
    (out / "manifest.txt").write_text(dataio.format_manifest(schema, entries))
    with open(out / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "subject", "expression"])
        for s, e, _ in records:
            w.writerow([f"{s}_{e}", s, e])


def _load_clean(ws: Workspace):
    return dataio.load_dataset(ws.dir("preprocess") / "manifest.txt")


def _render_one(seq, views, K, clip, tiles, out):
    meshes = [f.mesh for f in seq.frames]
    for view in views:
        window = sequence_window(meshes, view)
        depth, enh, tex, mask = [], [], [], []
        for mesh in meshes:
            verts = rotate_yaw(mesh.vertices, view.yaw_degrees)
            ras = rasterize(window.to_pixels(verts[:, :2], K), verts[:, 2], mesh.faces, K)
            if not ras.covered.any():
                raise DegenerateMesh(f"{seq.name} {view.profile_tag}: mesh covers no pixel")
            d = normalize_depth(ras)
            depth.append(d.pixels)
            enh.append(enhance_depth(d, clip, tiles).pixels)
            tex.append(shade_texture(ras, mesh).pixels)
            mask.append(d.mask)
        q = lambda a: np.round(np.asarray(a) * 65535).astype(np.uint16)  # noqa: E731
        np.savez_compressed(
            out / f"{seq.name}__{view.profile_tag}.npz",
            depth=q(depth),
            enhanced_depth=q(enh),
            texture=q(tex),
            mask=np.asarray(mask),
        )


def run_render(ws: Workspace, out: Path):
    c = ws.cfg
    ds = _load_clean(ws)
    views = views_of(c)
    ws.map(_render_one, [(s, views, c.image_size, c.clahe_clip, c.clahe_tiles, out) for s in ds.samples])


def _block_mean(img: np.ndarray, size: int) -> np.ndarray:
    f = img.shape[-1] // size
    return img.reshape(img.shape[:-2] + (size, f, size, f)).mean(axis=(-3, -1))


def _dynimg_one(src: Path, out: Path, pooling: PoolingConfig, net_input: int):
    with np.load(src) as z:
        depth = z["depth"] / 65535.0
        enh = z["enhanced_depth"] / 65535.0
        tex = z["texture"] / 65535.0
    channels = [depth, enh] + [tex[..., k] for k in range(3)]
    raw = np.stack([dynamic_image(list(ch), pooling) for ch in channels])
    np.savez_compressed(out / src.name, raw=raw)
    stem = out / src.stem
    write_pgm(f"{stem}_depth.pgm", normalize_display(raw[0]))
    write_pgm(f"{stem}_enhanced.pgm", normalize_display(raw[1]))
    write_ppm(f"{stem}_texture.ppm", normalize_display(np.moveaxis(raw[2:], 0, -1)))
    net = np.stack([normalize_display(_block_mean(ch, net_input)) for ch in raw]) - 0.5
    np.save(out / f"{src.stem}__net.npy", net)


def run_dynimg(ws: Workspace, out: Path):
    c = ws.cfg
    pooling = PoolingConfig(variant=c.pooling)
    srcs = sorted(ws.dir("render").glob("*.npz"))
    ws.map(_dynimg_one, [(s, out, pooling, c.net_input) for s in srcs])


def _features_one(seq, views, B, radius, grid, out):
    for view in views:
        feats = sequence_features(seq, view, B, radius, grid)
        write_features_csv(out / f"{seq.name}__{view.profile_tag}.csv", feats)


def run_features(ws: Workspace, out: Path):
    c = ws.cfg
    ds = _load_clean(ws)
    views = views_of(c)
    ws.map(
        _features_one,
        [(s, views, c.landmark_image_size, c.landmark_radius, c.descriptor_grid, out) for s in ds.samples],
    )


def fold_plan(ws: Workspace):
    """[(rep, fold_index, Fold)] for every repetition of the k-fold rotation."""
    samples = ws.samples()
    subjects = sorted({s for _, s, _ in samples})
    plan = []
    for rep in range(ws.cfg.repetitions):
        for i, fold in enumerate(fusion.make_folds(subjects, ws.cfg.folds, ws.cfg.seed + rep)):
            plan.append((rep, i, fold))
    return plan


def _split(samples, fold):
    part = {}
    for name, subject, expression in samples:
        for key in ("train", "val", "test"):
            if subject in getattr(fold, key):
                part.setdefault(key, []).append((name, EXPRESSIONS.index(expression)))
    return {k: part.get(k, []) for k in ("train", "val", "test")}


def model_name(rep, fold, tag):
    return f"rep{rep}_fold{fold:02d}_{tag}.mdl"


def load_dynamic(ws: Workspace, name: str, tag: str) -> np.ndarray:
    return np.load(ws.dir("dynimg") / f"{name}__{tag}__net.npy")


def load_features(ws: Workspace, name: str, view: ViewAngle) -> np.ndarray:
    return read_features_csv(ws.dir("features") / f"{name}__{view.profile_tag}.csv", view).rows


def sequence_input(rows: np.ndarray, gain: float = 4.0) -> np.ndarray:
    """Descriptor rows relative to the first frame, scaled by ``gain``.

    Subtracting the first frame removes subject identity; the gain lifts the
    small occupancy changes to a range where the LSTM gates respond.
    """
    return gain * (rows - rows[:1])


def _train_one(kind, ws_root, cfg, rep, fold_idx, fold, view, out):
    ws = Workspace(ws_root, cfg)
    parts = _split(ws.samples(), fold)
    seed = cfg.seed * 1000 + rep * 100 + fold_idx
    if kind == "cnn":
        def load(items):
            X = np.array([load_dynamic(ws, n, view.profile_tag) for n, _ in items])
            return X, np.array([y for _, y in items])

        X, y = load(parts["train"])
        model = ConvNet(X.shape[1], X.shape[2], cfg.cnn_filters, seed=seed)
        tcfg = TrainConfig(cfg.cnn_lr, cfg.cnn_epochs, cfg.cnn_batch, cfg.cnn_weight_decay, seed)
    else:
        def load(items):
            X = [sequence_input(load_features(ws, n, view), cfg.lstm_input_gain) for n, _ in items]
            return X, np.array([y for _, y in items])

        X, y = load(parts["train"])
        model = BiLSTM(X[0].shape[1], cfg.lstm_hidden, cfg.lstm_dropout, seed=seed)
        tcfg = TrainConfig(cfg.lstm_lr, cfg.lstm_epochs, cfg.lstm_batch, cfg.lstm_weight_decay, seed)
    val = load(parts["val"]) if parts["val"] else None
    hist = fit(model, X, y, tcfg, val=val)
    name = model_name(rep, fold_idx, view.profile_tag)
    save_model(out / name, model)
    with open(out / (name[:-4] + "_history.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_accuracy", "selected"])
        for e, loss in enumerate(hist.losses):
            va = hist.val_accuracy[e] if e < len(hist.val_accuracy) else ""
            w.writerow([e, repr(float(loss)), va, int(e == hist.best_epoch)])


def _run_training(kind, ws: Workspace, out: Path):
    jobs = [
        (kind, ws.root, ws.cfg, rep, i, fold, view, out)
        for rep, i, fold in fold_plan(ws)
        for view in views_of(ws.cfg)
    ]
    ws.map(_train_one, jobs)


def run_train_cnn(ws, out):
    _run_training("cnn", ws, out)


def run_train_lstm(ws, out):
    _run_training("lstm", ws, out)


def run_eval(ws: Workspace, out: Path):
    samples = ws.samples()
    views = views_of(ws.cfg)
    tags = [v.profile_tag for v in views]
    for rep, i, fold in fold_plan(ws):
        test = _split(samples, fold)["test"]
        cube = fusion.ScoreCube.empty(
            [n for n, _ in test], tags, truth=np.array([y + 1 for _, y in test])
        )
        for view in views:
            name = model_name(rep, i, view.profile_tag)
            cnn = load_model(ws.dir("train-cnn") / name)
            lstm = load_model(ws.dir("train-lstm") / name)
            X = np.array([load_dynamic(ws, n, view.profile_tag) for n, _ in test])
            S = [sequence_input(load_features(ws, n, view), ws.cfg.lstm_input_gain) for n, _ in test]
            for n, (pd, pl) in enumerate(zip(cnn.forward(X), lstm.forward(S))):
                cube.set(n, "DI", view.profile_tag, pd)
                cube.set(n, "LI", view.profile_tag, pl)
        (out / f"scores_rep{rep}_fold{i:02d}.csv").write_text(cube.to_csv())


def load_cubes(ws: Workspace):
    """{rep: [ScoreCube per fold, fold order]}."""
    cubes = {}
    for path in sorted(ws.dir("eval").glob("scores_rep*_fold*.csv")):
        rep = int(path.stem.split("_")[1][3:])
        cubes.setdefault(rep, []).append(fusion.ScoreCube.from_csv(path.read_text()))
    return cubes


def grid_results(cubes_by_rep, tags):
    """Mean (over repetitions) pooled test accuracy for every setting x view combination,
    plus the pooled confusion matrix of the full collaboration."""
    results = {}
    combos = [c for c in fusion.VIEW_COMBOS if set(fusion.combo_views(c)) <= set(tags)]
    full = "+".join(t for t in ("RP", "FP", "LP") if t in tags)
    confusion = fusion.ConfusionMatrix()
    for key, _, streams in fusion.SETTINGS:
        for combo in combos:
            accs = []
            for rep in sorted(cubes_by_rep):
                preds, truth = [], []
                for cube in cubes_by_rep[rep]:
                    C = fusion.collaborate(cube, streams, fusion.combo_views(combo))
                    preds += fusion.predict(C)
                    truth += list(cube.truth)
                acc, cm = fusion.evaluate(preds, truth)
                accs.append(acc)
                if key == "DI+LI" and combo == full:
                    confusion.counts += cm.counts
            results[(key, combo)] = float(np.mean(accs))
    return results, confusion


def run_report(ws: Workspace, out: Path):
    tags = [v.profile_tag for v in views_of(ws.cfg)]
    results, confusion = grid_results(load_cubes(ws), tags)
    report = fusion.report_table(results)
    (out / "table.txt").write_text(report.text())
    (out / "table.csv").write_text(report.to_csv())
    (out / "confusion.csv").write_text(confusion.to_csv())
    write_ppm(out / "confusion.ppm", fusion.confusion_ppm(confusion))


RUNNERS = {
    "synth": run_synth,
    "preprocess": run_preprocess,
    "render": run_render,
    "dynimg": run_dynimg,
    "features": run_features,
    "train-cnn": run_train_cnn,
    "train-lstm": run_train_lstm,
    "eval": run_eval,
    "report": run_report,
}


def run_pipeline(cfg: PipelineConfig, workspace, command: str, jobs: int = 1) -> bool:
    """Run ``command`` in ``workspace`` under a lock file; returns whether work was done."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    root = Path(workspace)
    lock_path = lock(root)
    try:
        return Workspace(root, cfg, jobs).run(command)
    finally:
        lock_path.unlink(missing_ok=True)
