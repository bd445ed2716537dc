"""INI run configuration with a fixed schema.

Four sections are recognised: ``[data]``, ``[model]``, ``[train]`` and
``[eval]``.  Every key has a type and a default; unknown sections or keys
are rejected.  :meth:`Config.to_ini` writes every key in schema order with
canonical value formatting, so ``parse(to_ini(parse(text)))`` reproduces
the same ``Config``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .training import MODELS, TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text

    parse.__name__ = "choice"
    return parse


# section -> key -> (parser, default, help)
SCHEMA: dict[str, dict[str, tuple]] = {
    "data": {
        "x": (str, "", "source set X (CSV points or PGM strip)"),
        "y": (str, "", "target set Y; required by kgan, mx, perceptual and translators"),
    },
    "model": {
        "model": (_choice(*MODELS), "vanilla", "vanilla | kgan | mx | perceptual"),
        "disc_variant": (_choice("classifier", "autoencoder"), "classifier", "discriminator type"),
        "latent_dim": (int, 0, "latent size d; 0 picks 8 for points and 32 for images"),
        "hidden": (int, 64, "hidden width of G, D and translators"),
        "layers": (int, 2, "number of hidden layers"),
        "comparator": (str, "", "checkpoint holding a pretrained comparator C; empty for random"),
        "comparator_seed": (int, 1234, "seed of the random comparator"),
        "comparator_gain": (float, 5.0, "weight scale of the random comparator"),
        "s_lo": (int, 32, "width of the low-level feature layer"),
        "s_hi": (int, 16, "width of the high-level feature layer"),
    },
    "train": {
        "k": (int, 4, "neighbours per feature layer"),
        "mu_hi": (float, 0.001, "weight of the high-level KNN term"),
        "mu_lo": (float, 0.0001, "weight of the low-level KNN term"),
        "lambda_cyc": (float, 10.0, "cycle-consistency weight"),
        "lr": (float, 1e-3, "Adam step size"),
        "beta1": (float, 0.5, "Adam first-moment decay"),
        "beta2": (float, 0.999, "Adam second-moment decay"),
        "eps": (float, 1e-8, "Adam epsilon"),
        "batch": (int, 64, "batch size"),
        "steps": (int, 3000, "training steps"),
        "seed": (int, 1, "run seed"),
        "ae_margin": (float, 0.5, "energy margin of the autoencoder discriminator"),
        "clip_norm": (float, 10.0, "global gradient-norm clip per network; 0 disables"),
        "leaf_size": (int, 16, "ball-tree leaf size"),
    },
    "eval": {
        "n_samples": (int, 1000, "samples drawn for evaluation"),
        "n_noise": (int, 1000, "noise draws for the baseline J"),
        "class_x": (int, 0, "proxy-classifier class of X"),
        "class_y": (int, 1, "proxy-classifier class of Y"),
        "seed": (int, 0, "evaluation seed"),
    },
}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class Config:
    values: dict[str, dict] = field(default_factory=lambda: {
        sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()})

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def set(self, section: str, key: str, text: str) -> None:
        """Set one key from its textual form, validating against the schema."""
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        parser = SCHEMA[section][key][0]
        try:
            self.values[section][key] = parser(text.strip())
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None

    def to_ini(self) -> str:
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {_format(self.values[sec][k])}" for k in keys]
            lines.append("")
        return "\n".join(lines)

    def train_config(self, data_dim: int | None = None) -> TrainConfig:
        m, t = self.values["model"], self.values["train"]
        latent = m["latent_dim"] or (32 if (data_dim or 2) > 2 else 8)
        kw = dict(t, latent_dim=latent, disc_variant=m["disc_variant"], hidden=m["hidden"],
                  layers=m["layers"], comparator_seed=m["comparator_seed"],
                  comparator_gain=m["comparator_gain"], s_lo=m["s_lo"], s_hi=m["s_hi"])
        try:
            return TrainConfig.for_model(m["model"], **kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def parse_config(text: str) -> Config:
    cp = configparser.ConfigParser(interpolation=None, default_section="\0none")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = Config()
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, value in cp.items(sec):
            cfg.set(sec, key, value)
    return cfg


def load_config(path) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None


def apply_overrides(cfg: Config, assignments: list[str]) -> Config:
    """Apply ``section.key=value`` strings."""
    for item in assignments:
        name, sep, value = item.partition("=")
        sec, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        cfg.set(sec, key, value)
    return cfg
