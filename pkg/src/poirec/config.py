"""Run configuration: defaults, flat key=value config files, named RNG streams."""

import zlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np


@dataclass
class RunConfig:
    # model
    d: int = 160
    t_max: int = 100
    heads: int = 1
    layers: int = 1
    m_bins: int = 20
    spd_cap: int = 5
    degree_buckets: int = 50
    use_category_bias: bool = True
    freeze_poi_table: bool = False
    # training
    batch_size: int = 32
    lr: float = 0.003
    lam: float = 0.1  # self-supervised loss weight
    gamma: float = 1e-5  # L2 penalty
    tau: float = 1.0  # InfoNCE temperature
    epochs: int = 30
    patience: int = 5
    seed: int = 0
    all_prefix: bool = False
    from_scratch: bool = False
    # augmentation
    beta: float = 0.3  # node dropout probability
    k_insert: int = 0  # 0 = auto: max(1, ceil(0.1 * nodes))
    correlation_top: int = 50
    # graphs / preprocessing
    alpha_km: float = 3.0
    n_neighbors: int = 20
    min_user_visits: int = 10
    min_poi_users: int = 10
    gap_hours: float = 24.0
    # node2vec
    walks_per_node: int = 10
    walk_len: int = 40
    n2v_window: int = 5
    n2v_negatives: int = 5
    n2v_epochs: int = 5
    n2v_lr: float = 0.025
    n2v_p: float = 1.0
    n2v_q: float = 1.0

    def override(self, **kwargs):
        return replace(self, **kwargs)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def config_keys():
    return {f.name: f for f in fields(RunConfig)}


def _parse_value(field, raw):
    if field.type is bool or isinstance(field.default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(field.default, int):
        return int(raw)
    if isinstance(field.default, float):
        return float(raw)
    return raw


def load_config(path=None, overrides=None):
    """Build a RunConfig from an optional key=value file plus overrides.
    Unknown keys are fatal (the error lists the valid ones)."""
    known = config_keys()
    values = {}
    if path is not None:
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line (want key=value): {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ValueError(f"unknown config key {key!r}; valid keys: {sorted(known)}")
            values[key] = _parse_value(known[key], raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in known:
            raise ValueError(f"unknown config key {key!r}; valid keys: {sorted(known)}")
        values[key] = val
    return RunConfig(**values)


def save_config(config, path):
    lines = [f"{k} = {v}" for k, v in sorted(config.to_dict().items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class RngHub:
    """All randomness flows from one root seed through named substreams."""

    def __init__(self, root_seed):
        self.root_seed = int(root_seed)

    def stream(self, name):
        return np.random.default_rng(
            np.random.SeedSequence([self.root_seed, zlib.crc32(name.encode())])
        )
