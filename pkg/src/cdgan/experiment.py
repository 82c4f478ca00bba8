"""One configured experiment, end to end: build the dataset, train, and
write every artifact (history.csv, report.json, features.csv, image grids,
config.echo, checkpoints) under the output directory.

All artifacts are pure functions of the config, so a rerun of an echoed
config reproduces them byte for byte on one platform.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .autodiff import Tensor
from .config import ExperimentConfig, IdxDataset, SyntheticDataset
from .data import ImageBatch, gen_shapes, load_idx, split
from .errors import ValidationError
from .evaluation import ClusterReport
from .latent import LatentBatch
from .models import ModelBundle, encoder_forward, generator_forward
from .train import train

# spawn keys 0..3 are claimed by train(); dataset/grid streams sit far away
_DATASET_KEY = 100
_SPLIT_KEY = 101
_GRID_KEY = 102


def _child_rng(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(key,)))


def build_dataset(cfg: ExperimentConfig) -> tuple[ImageBatch, ImageBatch]:
    """Materialize (train, test) batches from the dataset block."""
    seed = cfg.train.seed
    if isinstance(cfg.dataset, SyntheticDataset):
        d = cfg.dataset
        full = gen_shapes(d.n_per_class, d.classes, d.image_size,
                          (d.scale_min, d.scale_max), d.jitter,
                          _child_rng(seed, _DATASET_KEY), seed=seed)
        return split(full, d.test_fraction, _child_rng(seed, _SPLIT_KEY))
    d = cfg.dataset
    train_batch = load_idx(d.images, d.labels)
    if d.test_images:
        return train_batch, load_idx(d.test_images, d.test_labels)
    return split(train_batch, d.test_fraction, _child_rng(seed, _SPLIT_KEY))


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (P5), maxval 255."""
    if image.ndim != 2:
        raise ValidationError(f"PGM wants a 2-d array, got shape {image.shape}")
    data = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def grid_latents(k: int, d_z: int, sigma: float, cols: int,
                 rng: np.random.Generator) -> LatentBatch:
    """k*cols latents laid out row-major: row r holds class r with the same
    cols z vectors reused in every row, so columns are comparable."""
    z_cols = (sigma * rng.standard_normal((cols, d_z))).astype(np.float32)
    z = np.tile(z_cols, (k, 1))
    c_index = np.repeat(np.arange(k), cols)
    onehot = np.eye(k, dtype=np.float32)[c_index]
    return LatentBatch(z=z, c_index=c_index, c_onehot=onehot,
                       sigma=float(sigma), seed=None)


def render_grid(bundle: ModelBundle, latents: LatentBatch, hw: int,
                cols: int) -> np.ndarray:
    """Tile generator outputs: one row per class, one column per z."""
    images = generator_forward(bundle, latents).values
    k = images.shape[0] // cols
    cells = images.reshape(k, cols, hw, hw)
    # [-1, 1] -> [0, 255]
    tiles = (cells.transpose(0, 2, 1, 3).reshape(k * hw, cols * hw) + 1.0) * 127.5
    return tiles


def _features_csv(bundle: ModelBundle, test: ImageBatch) -> str:
    f = encoder_forward(bundle, Tensor(test.images)).f.values
    header = "label," + ",".join(f"f_{j}" for j in range(f.shape[1]))
    lines = [header]
    for label, row in zip(test.labels, f):
        lines.append(str(int(label)) + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def _report_payload(cfg: ExperimentConfig, name: str, report: ClusterReport,
                    n_train: int) -> dict:
    t = cfg.train
    return {
        "name": name,
        "report": report.to_dict(),
        "config": {
            "steps": t.steps, "seed": t.seed, "k": t.k, "d_z": t.d_z,
            "d_f": t.d_f, "beta1": t.weights.beta1, "beta2": t.weights.beta2,
            "tau": t.weights.tau, "label_fraction": t.label_fraction,
            "g_mode": t.g_mode,
        },
        "n_train": n_train,
    }


def run_experiment(cfg: ExperimentConfig,
                   on_step: Optional[Callable[[int, int], None]] = None) -> dict:
    """Train per config and write all artifacts; returns the report payload."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.echo").write_text(cfg.echo())

    train_batch, test_batch = build_dataset(cfg)
    hw = train_batch.height

    g_latents = grid_latents(cfg.train.k, cfg.train.d_z, cfg.train.sigma,
                             cfg.eval.grid_cols, _child_rng(cfg.train.seed, _GRID_KEY))
    (out_dir / "grid_latents.json").write_text(json.dumps({
        "z": [[float(v) for v in row] for row in g_latents.z],
        "c_index": [int(c) for c in g_latents.c_index],
        "cols": cfg.eval.grid_cols,
    }, sort_keys=True, indent=2) + "\n")

    def snapshot(step: int, bundle: ModelBundle, _report: ClusterReport) -> None:
        write_pgm(out_dir / f"grid_{step}.pgm",
                  render_grid(bundle, g_latents, hw, cfg.eval.grid_cols))

    bundle, history = train(train_batch, cfg.train, eval_data=test_batch,
                            checkpoint_dir=out_dir, on_step=on_step,
                            on_snapshot=snapshot)

    (out_dir / "history.csv").write_text(history.to_csv())
    (out_dir / "features.csv").write_text(_features_csv(bundle, test_batch))

    if history.snapshots:
        final_report = history.snapshots[-1][1]
    else:  # steps = 0: still report the untrained encoder
        from .evaluation import evaluate
        final_report = evaluate(bundle, test_batch.images, test_batch.labels,
                                k=cfg.train.k, runs=cfg.eval.runs,
                                rng=_child_rng(cfg.train.seed, _GRID_KEY + 1))
        write_pgm(out_dir / "grid_0.pgm",
                  render_grid(bundle, g_latents, hw, cfg.eval.grid_cols))

    payload = _report_payload(cfg, out_dir.name, final_report, train_batch.n)
    (out_dir / "report.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return payload


def _row_from_payload(payload: dict) -> dict:
    rep = payload["report"]
    return {"name": str(payload["name"]), "acc": float(rep["acc"]),
            "nmi": float(rep["nmi"]), "ari": float(rep["ari"])}


def _load_report(path) -> tuple[Optional[dict], Optional[str]]:
    """Returns (row, warning); exactly one is None."""
    path = Path(path)
    try:
        return _row_from_payload(json.loads(path.read_text())), None
    except FileNotFoundError:
        return None, f"skipping {path}: file not found"
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        return None, f"skipping {path}: malformed report ({exc})"


def compare_payloads(payloads, fmt: str = "markdown") -> tuple[str, list[str]]:
    """Like compare(), but over already-parsed report payloads."""
    rows, warnings = [], []
    for i, payload in enumerate(payloads):
        try:
            rows.append(_row_from_payload(payload))
        except (KeyError, TypeError, ValueError) as exc:
            warnings.append(f"skipping report #{i}: malformed report ({exc})")
    return _tabulate(rows, fmt), warnings


def compare(report_paths, fmt: str = "markdown") -> tuple[str, list[str]]:
    """Tabulate acc/nmi/ari from report.json files, sorted by name."""
    rows, warnings = [], []
    for path in report_paths:
        row, warning = _load_report(path)
        if row is not None:
            rows.append(row)
        else:
            warnings.append(warning)
    return _tabulate(rows, fmt), warnings


def _tabulate(rows: list[dict], fmt: str) -> str:
    if fmt not in ("markdown", "csv"):
        raise ValidationError(f"format must be markdown or csv, got {fmt!r}")
    if not rows:
        raise ValidationError("no valid reports to compare")
    rows = sorted(rows, key=lambda r: r["name"])

    def fmt_val(v: float) -> str:
        # trailing zeros stripped so 0.91 stays 0.91, not 0.9100
        s = f"{v:.4f}".rstrip("0")
        return s + "0" if s.endswith(".") else s

    if fmt == "csv":
        lines = ["name,acc,nmi,ari"]
        lines += [",".join([r["name"], fmt_val(r["acc"]), fmt_val(r["nmi"]),
                            fmt_val(r["ari"])]) for r in rows]
        return "\n".join(lines) + "\n"

    width = max(len(r["name"]) for r in rows + [{"name": "name"}])
    lines = [f"| {'name'.ljust(width)} | acc     | nmi     | ari     |",
             f"| {'-' * width} | ------- | ------- | ------- |"]
    for r in rows:
        cells = [fmt_val(r[c]).ljust(7) for c in ("acc", "nmi", "ari")]
        lines.append(f"| {r['name'].ljust(width)} | {cells[0]} "
                     f"| {cells[1]} | {cells[2]} |")
    return "\n".join(lines) + "\n"
