"""Experiment configuration (TOML)."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import NoiseSpec
from .pipeline import METHODS


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    path: Path | None = None
    format: str | None = None
    splits: tuple[int, int, int] | None = None
    split_seed: int = 0
    binarize: int | None = None
    standardize: bool = True
    synthetic: dict | None = None


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    noise: list[NoiseSpec]
    methods: dict[str, dict]
    runs_per_cell: int = 5
    output_dir: Path = Path("dvforge_out")
    master_seed: int = 0
    retries: int = 3
    raw: dict = field(default_factory=dict, repr=False)

    def cells(self):
        """(noise, method, run) triples in a fixed order."""
        for spec in self.noise:
            for method in self.methods:
                for run in range(self.runs_per_cell):
                    yield spec, method, run


def child_seed(*parts) -> int:
    """Stable 31-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    key = "\x1f".join(repr(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little") & 0x7FFFFFFF


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    base_dir = base_dir or Path.cwd()
    ds_raw = dict(raw.get("dataset") or {})
    if not ds_raw:
        raise ConfigError("missing [dataset] table")
    path = ds_raw.get("path")
    synthetic = ds_raw.get("synthetic")
    if path is None and synthetic is None:
        raise ConfigError("[dataset] needs either path or a [dataset.synthetic] table")
    if path is not None:
        path = Path(path)
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"dataset path does not exist: {path}")
    splits = ds_raw.get("splits")
    if splits is not None:
        if len(splits) != 3:
            raise ConfigError("dataset.splits must list train, validation and test sizes")
        splits = tuple(int(s) for s in splits)
    dataset = DatasetSpec(path, ds_raw.get("format"), splits, int(ds_raw.get("split_seed", 0)),
                          ds_raw.get("binarize"), bool(ds_raw.get("standardize", True)), synthetic)

    noise_raw = raw.get("noise") or [{"rate": 0.0}]
    noise = [NoiseSpec(float(n["rate"]), n.get("kind", "binary_flip"), int(n.get("seed", 0)))
             for n in noise_raw]

    methods = raw.get("methods") or {"baseline": {}}
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ConfigError(f"unknown methods {sorted(unknown)}; expected a subset of {METHODS}")

    runs = int(raw.get("runs_per_cell", 5))
    if runs < 1:
        raise ConfigError("runs_per_cell must be >= 1")
    env_out = os.environ.get("DVFORGE_OUT")
    if env_out:
        out = Path(env_out).absolute()
    else:
        out = Path(raw.get("output_dir", "dvforge_out"))
        if not out.is_absolute():
            out = base_dir / out
    return ExperimentConfig(dataset, noise, {k: dict(v or {}) for k, v in methods.items()}, runs, out,
                            int(raw.get("master_seed", 0)), int(raw.get("retries", 3)), raw)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return parse_config(raw, path.parent)
