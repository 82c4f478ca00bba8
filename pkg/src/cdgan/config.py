"""Experiment configuration: a flat `key = value` text format with
[section] headers, hand-parsed so every complaint can point at its line.

Grammar (documented in the README):
  - blank lines and lines starting with '#' are ignored
  - '[name]' opens a section; recognized sections: dataset, train, eval, output
  - 'key = value' assigns within the current section
  - values are plain tokens; lists are comma-separated; booleans are
    true/false
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .errors import ValidationError
from .losses import LossWeights
from .train import TrainConfig


class ConfigError(ValidationError):
    """Config file is missing, malformed, or names an unknown key."""


_SECTIONS = ("dataset", "train", "eval", "output")


@dataclass
class SyntheticDataset:
    classes: tuple[str, ...] = ("square", "disc", "cross")
    n_per_class: int = 300
    image_size: int = 16
    scale_min: float = 0.48
    scale_max: float = 0.56
    jitter: float = 0.10
    test_fraction: float = 0.25


@dataclass
class IdxDataset:
    images: str = ""
    labels: str = ""
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    test_fraction: float = 0.2


@dataclass
class EvalConfig:
    runs: int = 5
    per_metric_best: bool = True
    grid_cols: int = 10


@dataclass
class ExperimentConfig:
    dataset: SyntheticDataset | IdxDataset
    train: TrainConfig
    eval: EvalConfig
    out_dir: str

    def echo(self) -> str:
        """Serialize back to the config grammar; parsing the echo reproduces
        this config exactly."""
        lines = ["# effective configuration (echoed)"]
        lines.append("[dataset]")
        if isinstance(self.dataset, SyntheticDataset):
            d = self.dataset
            lines += [
                "kind = synthetic",
                f"classes = {','.join(d.classes)}",
                f"n_per_class = {d.n_per_class}",
                f"image_size = {d.image_size}",
                f"scale_min = {d.scale_min!r}",
                f"scale_max = {d.scale_max!r}",
                f"jitter = {d.jitter!r}",
                f"test_fraction = {d.test_fraction!r}",
            ]
        else:
            d = self.dataset
            lines += ["kind = idx", f"images = {d.images}", f"labels = {d.labels}"]
            if d.test_images:
                lines += [f"test_images = {d.test_images}",
                          f"test_labels = {d.test_labels}"]
            lines.append(f"test_fraction = {d.test_fraction!r}")
        t = self.train
        lines += [
            "",
            "[train]",
            f"steps = {t.steps}",
            f"seed = {t.seed}",
            f"d_z = {t.d_z}",
            f"d_f = {t.d_f}",
            f"sigma = {t.sigma!r}",
            f"beta1 = {t.weights.beta1!r}",
            f"beta2 = {t.weights.beta2!r}",
            f"tau = {t.weights.tau!r}",
            f"batch_g = {t.batch_g}",
            f"batch_d = {t.batch_d}",
            f"batch_e = {t.batch_e}",
            f"label_fraction = {t.label_fraction!r}",
            f"lr = {t.lr!r}",
            f"adam_beta1 = {t.adam_beta1!r}",
            f"adam_beta2 = {t.adam_beta2!r}",
            f"hidden = {','.join(str(h) for h in t.hidden)}",
            f"g_mode = {t.g_mode}",
            f"normalize_f = {'true' if t.normalize_f else 'false'}",
            f"d_updates = {t.d_updates}",
            f"snapshot_interval = {t.snapshot_interval}",
        ]
        if t.pi is not None:
            lines.append(f"pi = {','.join(repr(float(p)) for p in t.pi)}")
        e = self.eval
        lines += [
            "",
            "[eval]",
            f"runs = {e.runs}",
            f"per_metric_best = {'true' if e.per_metric_best else 'false'}",
            f"grid_cols = {e.grid_cols}",
            "",
            "[output]",
            f"dir = {self.out_dir}",
        ]
        return "\n".join(lines) + "\n"


def _parse_lines(text: str, where: str) -> dict[str, dict[str, tuple[str, int]]]:
    sections: dict[str, dict[str, tuple[str, int]]] = {s: {} for s in _SECTIONS}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigError(
                    f"{where}:{lineno}: unknown section [{name}] "
                    f"(expected one of {', '.join(_SECTIONS)})")
            current = name
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise ConfigError(f"{where}:{lineno}: assignment before any [section]")
        key, _, value = line.partition("=")
        sections[current][key.strip()] = (value.strip(), lineno)
    return sections


class _Section:
    def __init__(self, name: str, entries: dict, where: str):
        self.name = name
        self.entries = dict(entries)
        self.where = where

    def _take(self, key: str):
        return self.entries.pop(key, None)

    def str_(self, key, default=None):
        got = self._take(key)
        return default if got is None else got[0]

    def _convert(self, key, conv, default, kind):
        got = self._take(key)
        if got is None:
            return default
        value, lineno = got
        try:
            return conv(value)
        except (ValueError, TypeError):
            raise ConfigError(
                f"{self.where}:{lineno}: {self.name}.{key} expects {kind}, "
                f"got {value!r}") from None

    def int_(self, key, default=None):
        return self._convert(key, int, default, "an integer")

    def float_(self, key, default=None):
        return self._convert(key, float, default, "a number")

    def bool_(self, key, default=None):
        def conv(v):
            lowered = v.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(v)
        return self._convert(key, conv, default, "true or false")

    def list_(self, key, item_conv, default=None, kind="a comma-separated list"):
        return self._convert(
            key, lambda v: tuple(item_conv(x.strip()) for x in v.split(",") if x.strip()),
            default, kind)

    def finish(self):
        for key, (_, lineno) in self.entries.items():
            raise ConfigError(
                f"{self.where}:{lineno}: unknown key {self.name}.{key}")


def parse_config(text: str, where: str = "<config>") -> ExperimentConfig:
    sections = _parse_lines(text, where)

    ds = _Section("dataset", sections["dataset"], where)
    kind = ds.str_("kind", "synthetic")
    if kind == "synthetic":
        dataset = SyntheticDataset(
            classes=ds.list_("classes", str, SyntheticDataset.classes),
            n_per_class=ds.int_("n_per_class", SyntheticDataset.n_per_class),
            image_size=ds.int_("image_size", SyntheticDataset.image_size),
            scale_min=ds.float_("scale_min", SyntheticDataset.scale_min),
            scale_max=ds.float_("scale_max", SyntheticDataset.scale_max),
            jitter=ds.float_("jitter", SyntheticDataset.jitter),
            test_fraction=ds.float_("test_fraction", SyntheticDataset.test_fraction),
        )
        k = len(dataset.classes)
    elif kind == "idx":
        dataset = IdxDataset(
            images=ds.str_("images", ""),
            labels=ds.str_("labels", ""),
            test_images=ds.str_("test_images"),
            test_labels=ds.str_("test_labels"),
            test_fraction=ds.float_("test_fraction", IdxDataset.test_fraction),
        )
        if not dataset.images or not dataset.labels:
            raise ConfigError(
                f"{where}: dataset.images and dataset.labels are required "
                f"for kind = idx")
        k = None  # inferred from the labels at load time
    else:
        raise ConfigError(f"{where}: dataset.kind must be synthetic or idx, got {kind!r}")
    ds.finish()

    tr = _Section("train", sections["train"], where)
    defaults = TrainConfig()
    weights = LossWeights(
        beta1=tr.float_("beta1", defaults.weights.beta1),
        beta2=tr.float_("beta2", defaults.weights.beta2),
        tau=tr.float_("tau", defaults.weights.tau),
    )
    train = TrainConfig(
        d_z=tr.int_("d_z", defaults.d_z),
        k=k if k is not None else tr.int_("k", defaults.k),
        d_f=tr.int_("d_f", defaults.d_f),
        sigma=tr.float_("sigma", defaults.sigma),
        pi=tr.list_("pi", float, None),
        weights=weights,
        batch_g=tr.int_("batch_g", defaults.batch_g),
        batch_d=tr.int_("batch_d", defaults.batch_d),
        batch_e=tr.int_("batch_e", defaults.batch_e),
        steps=tr.int_("steps", defaults.steps),
        label_fraction=tr.float_("label_fraction", defaults.label_fraction),
        lr=tr.float_("lr", defaults.lr),
        adam_beta1=tr.float_("adam_beta1", defaults.adam_beta1),
        adam_beta2=tr.float_("adam_beta2", defaults.adam_beta2),
        hidden=tr.list_("hidden", int, tuple(defaults.hidden)),
        g_mode=tr.str_("g_mode", defaults.g_mode),
        normalize_f=tr.bool_("normalize_f", defaults.normalize_f),
        d_updates=tr.int_("d_updates", defaults.d_updates),
        snapshot_interval=tr.int_("snapshot_interval", defaults.snapshot_interval),
        eval_runs=defaults.eval_runs,  # set below from [eval]
        seed=tr.int_("seed", defaults.seed),
    )
    tr.finish()

    ev = _Section("eval", sections["eval"], where)
    eval_cfg = EvalConfig(
        runs=ev.int_("runs", EvalConfig.runs),
        per_metric_best=ev.bool_("per_metric_best", EvalConfig.per_metric_best),
        grid_cols=ev.int_("grid_cols", EvalConfig.grid_cols),
    )
    ev.finish()
    train = replace(train, eval_runs=eval_cfg.runs)

    out = _Section("output", sections["output"], where)
    out_dir = out.str_("dir")
    out.finish()
    if not out_dir:
        raise ConfigError(f"{where}: output.dir is required")

    return ExperimentConfig(dataset=dataset, train=train, eval=eval_cfg,
                            out_dir=out_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), where=str(path))


def apply_overrides(cfg: ExperimentConfig, seed: Optional[int] = None,
                    steps: Optional[int] = None, out: Optional[str] = None,
                    out_root: Optional[str] = None) -> ExperimentConfig:
    """Command-line / request overrides; out_root (from the environment)
    re-anchors a relative output directory."""
    train = cfg.train
    if seed is not None:
        train = replace(train, seed=seed)
    if steps is not None:
        if steps < 0:
            raise ConfigError(f"steps override must be >= 0, got {steps}")
        train = replace(train, steps=steps)
    out_dir = out if out is not None else cfg.out_dir
    if out_root and not Path(out_dir).is_absolute():
        out_dir = str(Path(out_root) / out_dir)
    return replace(cfg, train=train, out_dir=out_dir)
