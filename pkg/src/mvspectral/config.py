"""Run configuration: one flat key = value document driving every command.

Values are parsed as JSON fragments (ints, floats, booleans, strings, lists),
with bare words falling back to strings. Unknown keys are rejected so typos
fail loudly, and the raw text is echoed verbatim into run outputs.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class RunConfig:
    # data source
    data_source: str = "blobs"            # "blobs" | "csv"
    n_samples: int = 2000
    num_clusters: int = 4
    blob_dim: int = 2
    cluster_std: float = 0.6
    view_csvs: list = field(default_factory=list)
    labels_csv: str = ""
    csv_header: bool = False
    # contamination ("none" disables)
    contamination_kind: str = "none"
    contamination_ratio: float = 0.0
    contamination_views: list = field(default_factory=lambda: [1])
    noise_sigma: float = 1.2
    # split
    test_fraction: float = 0.2
    val_fraction_of_train: float = 0.1
    # affinity
    n_neighbors: int = 10
    kernel_sigma: float = None            # overrides calibration when set
    use_siamese: bool = True
    siamese_hidden_dims: list = field(default_factory=lambda: [64])
    siamese_embed_dim: int = 8
    siamese_epochs: int = 10
    siamese_lr: float = 1e-3
    # model
    embed_dim: int = 4
    view_hidden_dims: list = field(default_factory=lambda: [64, 64])
    fusion_hidden_dims: list = field(default_factory=lambda: [32])
    large_backbones: bool = False         # 1024/1024/512 views, 100x3 fusion
    temperature: float = 5.0
    fusion_mode: str = "weighting"
    activation: str = "relu"
    # training
    batch_size: int = 128
    epochs: int = 60
    initial_lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_patience_epochs: int = 10
    lr_floor: float = 1e-8
    weight_decay: float = 0.0
    train_restarts: int = 1       # keep the restart with the best val loss
    track_subspace_distance: bool = False
    # evaluation
    kmeans_restarts: int = 10
    # robustness sweep
    sweep_ratios: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4])
    sweep_fusion_modes: list = field(
        default_factory=lambda: ["weighting", "simple_average", "concat"]
    )
    sweep_repeats: int = 1
    # misc
    seed: int = 0
    output_dir: str = ""

    def __post_init__(self):
        if self.data_source not in ("blobs", "csv"):
            raise ValueError(f"unknown data_source {self.data_source!r}")
        if self.contamination_kind not in ("none", "outlier", "gaussian_noise"):
            raise ValueError(
                f"unknown contamination_kind {self.contamination_kind!r}"
            )
        for name in ("test_fraction", "val_fraction_of_train"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not 0.0 <= self.contamination_ratio <= 1.0:
            raise ValueError("contamination_ratio must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.epochs < 0 or self.n_neighbors < 1 or self.batch_size < 2:
            raise ValueError("epochs, n_neighbors, batch_size out of range")

    def view_dims_for(self, hidden_override=None):
        if self.large_backbones:
            return [1024, 1024, 512]
        return list(hidden_override or self.view_hidden_dims)

    def fusion_dims(self):
        if self.large_backbones:
            return [100, 100, 100]
        return list(self.fusion_hidden_dims)


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_value(raw):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_config_text(text):
    """Parse ``key = value`` lines; '#' starts a comment, unknown keys fail."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(raw)
    return RunConfig(**values)


def load_config(path):
    return parse_config_text(Path(path).read_text())


def config_to_text(cfg):
    """Normalized echo of every field, re-parseable by parse_config_text."""
    lines = []
    for f in dataclasses.fields(RunConfig):
        lines.append(f"{f.name} = {json.dumps(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"
