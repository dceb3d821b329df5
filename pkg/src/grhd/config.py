"""Flat key-value config files and the merged run configuration.

Config files are plain text: one `key = value` per line, `#` comments and
blank lines ignored.  Unknown keys are fatal, never silently absorbed.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InvalidConfig, IoError


def parse_kv_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such config file: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise InvalidConfig(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


@dataclass
class RunConfig:
    """Merged view of config file plus CLI flags for train/eval commands."""

    frame_size: int = 1024
    hop: int = 512
    num_mels: int = 128
    lr: float = 0.001
    epochs: int = 150
    batch_size: int = 64
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    gamma_f: float = 2.0
    lambda_gain: float = 10.0
    eta_min: float = 0.0
    precision: str = "f32"
    scorer: str = "nls"
    p: float = 0.1
    knn_k: int = 1
    seed: int | None = None  # mandatory for train, enforced by the CLI

    _TYPES = {"frame_size": int, "hop": int, "num_mels": int, "epochs": int,
              "batch_size": int, "knn_k": int, "seed": int,
              "lr": float, "alpha": float, "beta": float, "gamma": float,
              "gamma_f": float, "lambda_gain": float, "eta_min": float,
              "p": float, "precision": str, "scorer": str}

    @classmethod
    def from_file(cls, path: str | Path | None) -> "RunConfig":
        cfg = cls()
        if path is None:
            return cfg
        for key, raw in parse_kv_file(path).items():
            if key not in cls._TYPES:
                raise InvalidConfig(f"unknown config key: {key}")
            setattr(cfg, key, cls._TYPES[key](raw))
        return cfg

    def apply_flags(self, args) -> "RunConfig":
        """Overlay non-None CLI flag values onto this config."""
        for f in fields(self):
            value = getattr(args, f.name, None)
            if value is not None:
                setattr(self, f.name, value)
        return self

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def echo_lines(self) -> list[str]:
        return [f"{k}={v}" for k, v in sorted(self.echo().items())]
