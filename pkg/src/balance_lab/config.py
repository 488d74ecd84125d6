"""Experiment configuration: flat key=value text files.

One ``key=value`` per line, ``#`` starts a comment, blank lines ignored.
Unknown keys and malformed values are rejected with the offending key
named.  ``config_hash`` fingerprints the fully resolved configuration and
is embedded in every artifact this package emits.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

KINDS = (
    "train",
    "baseline",
    "fixed-stats",
    "theory",
    "classifier-sweep",
    "beta-ablation",
    "cycle-sweep",
)

SWEEP_DEFAULTS = {
    "classifier-sweep": ("1", "10", "100", "500"),
    "beta-ablation": ("1", "alpha"),
    "cycle-sweep": ("50", "100", "200", "400", "800"),
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _parse_bool(raw):
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_beta(raw):
    if raw.strip().lower() == "alpha":
        return None
    return float(raw)


def _parse_floats(raw):
    parts = [p for p in raw.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _parse_strings(raw):
    parts = tuple(p.strip() for p in raw.split(",") if p.strip())
    if not parts:
        raise ValueError("empty list")
    return parts


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs: dataset, classifiers, trainer, outputs."""

    kind: str
    name: str = ""
    seed: int = 0
    out: str = ""
    # dataset
    n_classes: int = 8
    rho: float = 100.0
    n_max: int = 500
    dim: int = 2
    radius: float = 4.0
    std: float = 0.5
    test_per_class: int = 200
    annotator_per_class: int = 250
    save_data: bool = False
    # classifiers
    clf_epochs: int = 60
    clf_lr: float = 2e-3
    clf_batch: int = 64
    clf_rho: float = 0.0  # 0: train on the long-tailed training set itself
    annotator_epochs: int = 60
    # trainer
    noise_dim: int = 8
    batch_size: int = 64
    iterations: int = 4000
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    lam: float = 5.0
    alpha: float = 0.5
    beta: float | None = 1.0  # the literal value "alpha" tracks alpha
    cycle_len: int = 200
    ema_decay: float = 0.999
    ema_start: int = -1
    label_proposal: str = "uniform"
    stat_counting: str = "argmax"
    # evaluation
    eval_samples: int = 2000
    cycle_eval_samples: int = 512
    cas_budget: int = 1000  # 0 disables the classifier-accuracy score
    # fixed-stats runs
    fixed_n_hat: tuple[float, ...] | None = None
    # sweeps
    sweep_values: tuple[str, ...] | None = None
    # theory verification
    trials: int = 1000
    k_min: int = 3
    k_max: int = 50
    probes: int = 1000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(
                f"kind: unknown value {self.kind!r}; expected one of {', '.join(KINDS)}")
        positive_ints = (
            "n_classes", "n_max", "dim", "test_per_class", "annotator_per_class",
            "clf_batch", "noise_dim", "batch_size", "iterations", "cycle_len",
            "eval_samples", "cycle_eval_samples", "trials", "probes",
        )
        for name in positive_ints:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes: must be >= 2, got {self.n_classes}")
        for name in ("clf_epochs", "annotator_epochs", "cas_budget"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0, got {getattr(self, name)}")
        for name in ("rho", "radius", "std", "clf_lr", "lr_g", "lr_d"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")
        if self.clf_rho < 0.0:
            raise ConfigError(f"clf_rho: must be >= 0, got {self.clf_rho}")
        if self.lam < 0.0:
            raise ConfigError(f"lambda: must be >= 0, got {self.lam}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha: must be in (0, 1], got {self.alpha}")
        if self.beta is not None and self.beta <= 0.0:
            raise ConfigError(f"beta: must be positive or 'alpha', got {self.beta}")
        if not 0.0 < self.ema_decay <= 1.0:
            raise ConfigError(f"ema_decay: must be in (0, 1], got {self.ema_decay}")
        if self.kind == "fixed-stats":
            if self.fixed_n_hat is None:
                raise ConfigError("fixed_n_hat: required for kind=fixed-stats")
            if len(self.fixed_n_hat) != self.n_classes:
                raise ConfigError(
                    f"fixed_n_hat: expected {self.n_classes} values, "
                    f"got {len(self.fixed_n_hat)}")
            if any(v <= 0.0 for v in self.fixed_n_hat):
                raise ConfigError("fixed_n_hat: values must be strictly positive")
        if not 3 <= self.k_min <= self.k_max:
            raise ConfigError(
                f"k_min/k_max: need 3 <= k_min <= k_max, got {self.k_min}, {self.k_max}")


# key in the config file -> (attribute, parser)
_FIELD_PARSERS = {
    "kind": ("kind", str),
    "name": ("name", str),
    "seed": ("seed", int),
    "out": ("out", str),
    "K": ("n_classes", int),
    "rho": ("rho", float),
    "n_max": ("n_max", int),
    "dim": ("dim", int),
    "radius": ("radius", float),
    "std": ("std", float),
    "test_per_class": ("test_per_class", int),
    "annotator_per_class": ("annotator_per_class", int),
    "save_data": ("save_data", _parse_bool),
    "clf_epochs": ("clf_epochs", int),
    "clf_lr": ("clf_lr", float),
    "clf_batch": ("clf_batch", int),
    "clf_rho": ("clf_rho", float),
    "annotator_epochs": ("annotator_epochs", int),
    "noise_dim": ("noise_dim", int),
    "batch_size": ("batch_size", int),
    "iterations": ("iterations", int),
    "lr_g": ("lr_g", float),
    "lr_d": ("lr_d", float),
    "adam_beta1": ("adam_beta1", float),
    "adam_beta2": ("adam_beta2", float),
    "lambda": ("lam", float),
    "alpha": ("alpha", float),
    "beta": ("beta", _parse_beta),
    "cycle_len": ("cycle_len", int),
    "ema_decay": ("ema_decay", float),
    "ema_start": ("ema_start", int),
    "label_proposal": ("label_proposal", str),
    "stat_counting": ("stat_counting", str),
    "eval_samples": ("eval_samples", int),
    "cycle_eval_samples": ("cycle_eval_samples", int),
    "cas_budget": ("cas_budget", int),
    "fixed_n_hat": ("fixed_n_hat", _parse_floats),
    "sweep_values": ("sweep_values", _parse_strings),
    "trials": ("trials", int),
    "k_min": ("k_min", int),
    "k_max": ("k_max", int),
    "probes": ("probes", int),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _) in _FIELD_PARSERS.items()}


def parse_kv_text(text):
    """Parse ``key=value`` lines into a string dict (comments stripped)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def config_from_mapping(mapping):
    """Build an ExperimentConfig from string key/value pairs."""
    if "kind" not in mapping:
        raise ConfigError("missing required key: kind")
    kwargs = {}
    for key, raw in mapping.items():
        if key not in _FIELD_PARSERS:
            raise ConfigError(f"unknown key: {key}")
        attr, parser = _FIELD_PARSERS[key]
        try:
            kwargs[attr] = parser(raw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from exc
    return ExperimentConfig(**kwargs)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return config_from_mapping(parse_kv_text(fh.read()))


def _format_value(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))  # builtin repr even for numpy scalars
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def canonical_text(cfg):
    """The fully resolved config as sorted key=value lines.

    Round-trips through :func:`parse_kv_text`: a tracking beta is written
    as the literal ``alpha`` and unset optional fields are omitted.
    """
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            if f.name == "beta":
                lines.append("beta=alpha")
            continue
        lines.append(f"{_ATTR_TO_KEY[f.name]}={_format_value(value)}")
    return "\n".join(sorted(lines)) + "\n"


def config_hash(cfg):
    """Short stable fingerprint of the resolved configuration."""
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()[:16]


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_text(cfg))


def with_overrides(cfg, **overrides):
    """``dataclasses.replace`` that re-runs validation."""
    try:
        return replace(cfg, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
