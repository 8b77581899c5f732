"""Line-oriented ``key = value`` run configuration.

Files are UTF-8, ``#`` starts a comment, no nesting. Unknown keys are
rejected by name; every command writes the fully resolved configuration
next to its outputs so runs are reproducible from the artifacts alone.
"""

import dataclasses
import os
from dataclasses import dataclass

from . import align as align_mod
from .detector import VARIANTS, DetectorConfig
from .errors import ConfigError
from .hider import HiderConfig
from .trainer import TrainConfig

RESOLVED_NAME = "resolved_config.txt"


@dataclass
class RunConfig:
    """Every tunable of the pipeline, flat."""

    # dataset
    data_dir: str = "data"
    out_dir: str = "out"
    n_train: int = 400
    n_test: int = 100
    image_size: int = 32
    channels: int = 1
    artifact_amplitude: float = 0.48
    # hider
    alpha: float = 0.2
    bands: str = "lh,hl,hh"
    # model
    encoder_width: int = 16
    heads: int = 2
    head_dim: int = 0
    paper_head_rule: bool = False
    lambda_init: float = 0.8
    lambda_d: float = 2.0
    variant: str = "full"
    # training
    e1: int = 10
    e2: int = 5
    e3: int = 5
    lr1: float = 2e-4
    lr2: float = 1e-4
    lr3: float = 1e-5
    batch: int = 8
    gamma_s: float = 10.0
    sda_gamma: float = 10.0
    sda_preset: str = "default"
    aa_include_wfda: bool = True
    lod_enabled: bool = True
    lod_residual_rank: int = 16
    seed: int = 0
    # evaluation
    checkpoint: str = ""
    eval_split: str = "test"
    # ablation driver
    ablate_variants: str = "direct-lfad,hfad,no-dwt,full"

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError("variant must be one of %s" % (", ".join(VARIANTS)))
        if self.sda_preset not in align_mod.PRESETS:
            raise ConfigError("sda_preset must be one of %s"
                              % ", ".join(sorted(align_mod.PRESETS)))
        if self.eval_split not in ("train", "test"):
            raise ConfigError("eval_split must be train or test")
        if self.image_size % 2 or self.image_size < 8:
            raise ConfigError("image_size must be even and >= 8")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        for key in ("n_train", "n_test", "batch", "e1", "e2", "e3",
                    "encoder_width", "heads", "lod_residual_rank"):
            if getattr(self, key) < 1:
                raise ConfigError("%s must be >= 1" % key)
        return self

    # derived component configs
    def hider_config(self):
        return HiderConfig(alpha=self.alpha,
                           bands=tuple(b.strip() for b in self.bands.split(",") if b.strip()))

    def detector_config(self):
        return DetectorConfig(
            image_channels=self.channels, image_size=self.image_size,
            width=self.encoder_width, heads=self.heads, head_dim=self.head_dim,
            lambda_init=self.lambda_init, lambda_d=self.lambda_d,
            variant=self.variant, paper_head_rule=self.paper_head_rule)

    def train_config(self):
        return TrainConfig(
            e1=self.e1, e2=self.e2, e3=self.e3, lr1=self.lr1, lr2=self.lr2,
            lr3=self.lr3, batch=self.batch, gamma_s=self.gamma_s,
            seed=self.seed, lod_enabled=self.lod_enabled,
            lod_residual_rank=self.lod_residual_rank, sda_preset=self.sda_preset)

    def alignment_config(self):
        base = align_mod.preset(self.sda_preset)
        return dataclasses.replace(base, gamma=self.sda_gamma,
                                   aa_include_wfda=self.aa_include_wfda)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _convert(key, raw):
    ftype = _FIELDS[key].type
    if ftype == "bool" or ftype is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError("config key '%s' expects a boolean, got %r" % (key, raw))
    try:
        if ftype == "int" or ftype is int:
            return int(raw)
        if ftype == "float" or ftype is float:
            return float(raw)
    except ValueError:
        raise ConfigError("config key '%s' expects %s, got %r"
                          % (key, ftype, raw)) from None
    return raw


def parse_config_text(text):
    """Parse ``key = value`` lines into a RunConfig (unknown keys rejected)."""
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line %d is not 'key = value': %r" % (lineno, line))
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _FIELDS:
            raise ConfigError("unknown config key '%s' (line %d)" % (key, lineno))
        setattr(cfg, key, _convert(key, raw))
    return cfg


def load_config(path=None, overrides=None):
    """Config from an optional file plus override pairs, fully validated."""
    if path is not None:
        if not os.path.exists(path):
            raise FileNotFoundError("config file not found: %s" % path)
        with open(path, "r", encoding="utf-8") as fh:
            cfg = parse_config_text(fh.read())
    else:
        cfg = RunConfig()
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError("unknown config key '%s'" % key)
        setattr(cfg, key, value if not isinstance(value, str) else _convert(key, value))
    return cfg.validate()


def resolved_text(cfg):
    lines = []
    for name in sorted(_FIELDS):
        value = getattr(cfg, name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append("%s = %s" % (name, value))
    return "\n".join(lines) + "\n"


def write_resolved(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, RESOLVED_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(resolved_text(cfg))
    return path
