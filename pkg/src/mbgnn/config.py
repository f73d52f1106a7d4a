"""Flat ``key = value`` experiment configuration.

Keys are dotted (``model.k = 16``), ``#`` starts a comment, and every key must
appear in :data:`SCHEMA`. Values are typed by the schema; list values are
comma separated.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ParameterError


class ConfigError(ParameterError):
    """Malformed config text, unknown key or badly typed value."""


# key -> (type, default); "ints"/"floats"/"strs" are comma separated lists.
SCHEMA: dict[str, tuple[str, object]] = {
    "seed": ("int", 0),
    "seeds": ("ints", ()),
    # dataset
    "data.kind": ("str", "blobs"),
    "data.n": ("int", 5000),
    "data.train": ("int", 4000),
    "data.classes": ("int", 8),
    "data.dim": ("int", 16),
    "data.spread": ("float", 0.6),
    "data.center_scale": ("float", 1.0),
    "data.noise": ("float", 0.1),
    "data.modes": ("int", 8),
    "data.radius": ("float", 2.0),
    "data.std": ("float", 0.05),
    "data.path": ("str", ""),
    "data.labels_path": ("str", ""),
    "data.image_shape": ("ints", ()),
    # model
    "encoder.kind": ("str", "mlp"),
    "encoder.widths": ("ints", (64,)),
    "encoder.channels": ("ints", (4, 8)),
    "model.layers": ("int", 1),
    "model.width": ("int", 64),
    "model.combine": ("str", "dropfeat"),
    "model.combine_value": ("float", 0.75),
    "model.k": ("int", 8),
    "model.heads": ("int", 0),
    "model.attention_dim": ("int", 16),
    "model.baseline": ("bool", False),
    # optimisation
    "train.epochs": ("int", 40),
    "train.batch_size": ("int", 64),
    "train.optimizer": ("str", "adam"),
    "train.lr": ("float", 3e-3),
    "train.momentum": ("float", 0.9),
    "train.transductive_eval": ("int", 0),
    "train.evaluate_every": ("int", 1),
    # sweeps and corruptions
    "ablate.k_values": ("ints", (2, 4, 8, 63)),
    "ablate.batch_sizes": ("ints", (16, 32, 64, 128)),
    "robust.kind": ("str", "noise"),
    "robust.severities": ("floats", (0.0, 1.0, 2.0, 3.0)),
    # attack
    "attack.epsilon": ("float", 0.2),
    "attack.budget": ("int", 160),
    "attack.targets": ("int", 200),
    # attenuation check
    "prop.k": ("int", 3),
    "prop.variant": ("str", "gcn_self_loop"),
    "prop.value": ("float", 0.5),
    "prop.batch": ("int", 16),
    "prop.dim": ("int", 8),
    "prop.width": ("int", 8),
    "prop.classes": ("int", 4),
    "prop.delta": ("float", 1e-3),
    # GAN
    "gan.head": ("str", "mc_mbgnn"),
    "gan.iterations": ("int", 10000),
    "gan.batch_size": ("int", 64),
    "gan.lr_d": ("float", 1e-3),
    "gan.lr_g": ("float", 1e-3),
    "gan.beta1": ("float", 0.5),
    "gan.lr_decay": ("str", "linear"),
    "gan.eval_every": ("int", 1250),
    "gan.eval_samples": ("int", 2000),
    "gan.train_samples": ("int", 4000),
    "gan.noise_dim": ("int", 8),
    "gan.gen_hidden": ("int", 32),
    "gan.disc_hidden": ("int", 32),
    "gan.mc.heads": ("int", 2),
    "gan.mc.dim": ("int", 4),
    "gan.mc.psi": ("str", "absdiff"),
    "gan.mc.phi": ("str", "exp_neg_l1"),
    "gan.mc.phi_hidden": ("int", 8),
    "gan.mc.reduce": ("str", "mean"),
    "gan.mbd.kernels": ("int", 2),
    "gan.mbd.kernel_dim": ("int", 4),
    # NDB
    "ndb.bins": ("int", 20),
    "ndb.significance": ("float", 0.05),
    "ndb.train_path": ("str", ""),
    "ndb.generated_path": ("str", ""),
}


def _parse_value(kind: str, text: str):
    text = text.strip()
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "str":
        return text
    if kind == "bool":
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    items = [t.strip() for t in text.split(",") if t.strip()]
    if kind == "ints":
        return tuple(int(t) for t in items)
    if kind == "floats":
        return tuple(float(t) for t in items)
    if kind == "strs":
        return tuple(items)
    raise AssertionError(kind)


def _format_value(kind: str, value) -> str:
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("ints", "floats", "strs"):
        return ",".join(repr(float(v)) if kind == "floats" else str(v) for v in value)
    return str(value)


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, overrides: dict[str, str]) -> "ExperimentConfig":
        values = dict(self.values)
        for key, text in overrides.items():
            values[key] = _coerce(key, text, "override")
        return ExperimentConfig(values)

    def section(self, prefix: str) -> dict:
        """Values under ``prefix.`` with the prefix stripped."""
        cut = len(prefix) + 1
        return {k[cut:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def to_text(self) -> str:
        """Every resolved key in sorted order; parsing this text reproduces the config."""
        lines = [f"{k} = {_format_value(SCHEMA[k][0], self.values[k])}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"


def _coerce(key: str, text: str, where: str):
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    kind = SCHEMA[key][0]
    try:
        return _parse_value(kind, text)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key} ({kind}): {exc}") from None


def defaults() -> ExperimentConfig:
    return ExperimentConfig({k: v for k, (_, v) in SCHEMA.items()})


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values = defaults().values
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        values[key] = _coerce(key, value, f"{source}:{lineno}")
    return ExperimentConfig(values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def parse_overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out
