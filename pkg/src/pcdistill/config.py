"""Pipeline configuration: one dataclass tree, flat key=value on disk.

Config files are line-based ``section.field=value`` pairs with ``#``
comments.  Values are coerced by the type of the default they replace;
tuples are comma-separated, camera rigs are ``x,y,z,yaw,pitch`` groups
joined by semicolons.  The defaults describe the desk-scale pipeline that
the test suite exercises end to end; the ``full-scale`` preset swaps in
production-size dimensions.
"""

from dataclasses import dataclass, field, fields, is_dataclass, replace

import numpy as np

from .augment import AugmentConfig
from .bev import BevGridConfig
from .encoders import DepthHeadConfig, EncoderConfig2D, EncoderConfig3D, VoxelGridConfig
from .geometry import DepthBinning
from .losses import LossConfig
from .synth import CameraRig, SceneConfig


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    steps: int = -1  # -1: derive from epochs; explicit 0 means "no updates"
    batch_size: int = 4
    # The summed-over-bins depth loss diverges under momentum SGD at
    # lr >= 0.1; 0.05 keeps the depth head stable for the full schedule.
    lr0: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    enable_ipv: bool = True
    enable_bev: bool = True
    n_scenes: int = 8
    n_eval_scenes: int = 4
    seed: int = 0
    slic_segments: int = 48
    slic_compactness: float = 10.0
    slic_iterations: int = 10


@dataclass(frozen=True)
class ProbeConfig:
    iters: int = 300
    lr: float = 0.5
    momentum: float = 0.9
    standardize: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    binning: DepthBinning = field(default_factory=lambda: DepthBinning(2.0, 60.0, 24))
    encoder2d: EncoderConfig2D = field(default_factory=EncoderConfig2D)
    encoder3d: EncoderConfig3D = field(default_factory=EncoderConfig3D)
    depth_head: DepthHeadConfig = field(default_factory=DepthHeadConfig)
    bev: BevGridConfig = field(default_factory=BevGridConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def validate(self):
        """Cross-section invariants that single dataclasses cannot see."""
        g3 = self.encoder3d.grid
        if g3.dims[:2] != (self.bev.rows, self.bev.cols):
            raise ConfigError("voxel grid footprint must match the BEV grid")
        if g3.x_range != self.bev.x_range or g3.y_range != self.bev.y_range:
            raise ConfigError("voxel and BEV grids must share x/y extents")
        if self.bev.channels != self.encoder2d.out_channels:
            raise ConfigError("BEV channels must match the 2-D encoder output")
        if self.train.batch_size < 1 or self.train.n_scenes < 1:
            raise ConfigError("need at least one scene and batch slot")
        return self


# Full-size configuration, kept as a preset; the desk-scale defaults above
# are what the bundled tests actually run.
PRESETS = {
    "desk": {},
    "full-scale": {
        "scene.image_height": "224",
        "scene.image_width": "416",
        "binning.t": "118",
        "encoder2d.channels": "64,64,64",
        "bev.rows": "256",
        "bev.cols": "256",
        "bev.channels": "64",
        "bev.x_range": "-51.2,51.2",
        "bev.y_range": "-51.2,51.2",
        "encoder3d.grid.x_range": "-51.2,51.2",
        "encoder3d.grid.y_range": "-51.2,51.2",
        "encoder3d.grid.z_range": "-5.0,3.0",
        "encoder3d.grid.voxel_size": "0.4,0.4,1.0",
        "encoder3d.out_channels": "64",
        "train.lr0": "0.5",
        "train.batch_size": "16",
    },
}


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return v
    if isinstance(v, tuple):
        if v and isinstance(v[0], CameraRig):
            return ";".join(
                ",".join(_format_value(float(x)) for x in (*rig.position, rig.yaw, rig.pitch))
                for rig in v
            )
        return ",".join(_format_value(x) for x in v)
    raise ConfigError(f"cannot format value of type {type(v)}")


def _coerce(default, raw, path):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, (int, np.integer)):
            return int(raw)
        if isinstance(default, (float, np.floating)):
            return float(raw)
        if isinstance(default, str):
            return raw
        if isinstance(default, tuple):
            if default and isinstance(default[0], CameraRig):
                rigs = []
                for chunk in raw.split(";"):
                    x, y, z, yaw, pitch = (float(p) for p in chunk.split(","))
                    rigs.append(CameraRig((x, y, z), yaw, pitch))
                return tuple(rigs)
            parts = [p for p in raw.split(",") if p.strip() != ""]
            if default and all(isinstance(x, (int, np.integer)) and not isinstance(x, bool) for x in default):
                return tuple(int(p) for p in parts)
            return tuple(float(p) for p in parts)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {path}: {raw!r}") from exc
    raise ConfigError(f"unsupported config field type at {path}")


def flatten_config(cfg, prefix=""):
    """Dotted-key view of a config tree, in declaration order."""
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        key = f"{prefix}{f.name}"
        if is_dataclass(v):
            out.update(flatten_config(v, key + "."))
        else:
            out[key] = _format_value(v)
    return out


def _rebuild(cfg, tree, prefix=""):
    names = {f.name for f in fields(cfg)}
    changes = {}
    for name, sub in tree.items():
        if name not in names:
            raise ConfigError(f"unknown config key {prefix}{name}")
        current = getattr(cfg, name)
        if isinstance(sub, dict):
            if not is_dataclass(current):
                raise ConfigError(f"{prefix}{name} has no sub-fields")
            changes[name] = _rebuild(current, sub, f"{prefix}{name}.")
        else:
            if is_dataclass(current):
                raise ConfigError(f"{prefix}{name} needs a dotted sub-field")
            changes[name] = _coerce(current, sub, f"{prefix}{name}")
    try:
        return replace(cfg, **changes)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def build_config(overrides=None, preset="desk"):
    """PipelineConfig from a preset plus dotted-key overrides."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    merged = dict(PRESETS[preset])
    merged.update(overrides or {})
    tree = {}
    for key, value in merged.items():
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"conflicting keys under {key}")
        node[parts[-1]] = value
    return _rebuild(PipelineConfig(), tree).validate()


def parse_config_file(path):
    """Read ``key=value`` lines; '#' starts a comment, blanks are skipped."""
    overrides = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = stripped.split("=", 1)
            overrides[key.strip()] = value.strip()
    return overrides


def dump_config(cfg):
    lines = [f"{k}={v}" for k, v in flatten_config(cfg).items()]
    return "\n".join(lines) + "\n"
