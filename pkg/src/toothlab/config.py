"""Key-value configuration with environment overrides.

File format: one ``key=value`` per line, ``#`` comments and blank lines
ignored.  Every key can also be set through the environment as
``TOOTHLAB_<KEY>`` (uppercased), which wins over the file.  Recognized keys:

    data_dir              workspace directory (snapshot, edit log, history)
    port                  HTTP service port
    backend               "mock" or the base URL of a remote backend
    mock_seed             seed for the deterministic mock backend
    mock_iou_start        mock learning curve: baseline IoU fraction
    mock_iou_limit        mock learning curve: asymptotic IoU fraction
    mock_decay            mock learning curve: cumulative-sample decay constant
    template              comma list: per-quadrant class order from the midline
    confidence_threshold  relabeling gate tau in [0, 1]
    z_threshold           deviation-flag band width in standard deviations
    neighbors             default k for the similarity list
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .gateway import DEFAULT_ARRANGEMENT

__all__ = ["Config", "load_config", "ENV_PREFIX"]

ENV_PREFIX = "TOOTHLAB_"


@dataclass
class Config:
    data_dir: Path = Path("toothlab-data")
    port: int = 8321
    backend: str = "mock"
    mock_seed: int = 42
    mock_iou_start: float = 0.75
    mock_iou_limit: float = 0.85
    mock_decay: float = 300.0
    template: tuple[str, ...] = DEFAULT_ARRANGEMENT.sequence
    confidence_threshold: float = DEFAULT_ARRANGEMENT.confidence_threshold
    z_threshold: float = 1.0
    neighbors: int = 5

    def __post_init__(self):
        self.data_dir = Path(self.data_dir)
        if isinstance(self.template, str):
            self.template = tuple(
                part.strip() for part in self.template.split(",") if part.strip()
            )
        self.port = int(self.port)
        self.mock_seed = int(self.mock_seed)
        self.mock_iou_start = float(self.mock_iou_start)
        self.mock_iou_limit = float(self.mock_iou_limit)
        self.mock_decay = float(self.mock_decay)
        self.confidence_threshold = float(self.confidence_threshold)
        self.z_threshold = float(self.z_threshold)
        self.neighbors = int(self.neighbors)


def load_config(path: str | Path | None = None, env: dict | None = None) -> Config:
    """Merge defaults, an optional config file, and environment overrides."""
    env = os.environ if env is None else env
    values: dict[str, object] = {}
    known = {f.name for f in fields(Config)}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip().lower()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value.strip()
    for name in known:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            values[name] = env[env_key]
    return Config(**values)
