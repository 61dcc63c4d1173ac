"""Experiment configuration files.

Grammar (one statement per line)::

    file      := { blank | comment | section | entry }
    comment   := ("#" | ";") any text
    section   := "[" name "]"
    entry     := key "=" value          (inside a section)
    value     := scalar | scalar { "," scalar }

Sections and keys are fixed (see ``SCHEMA``); unknown ones are rejected with
the offending line number. In ``[sweep]`` every key names a ``[model]`` key
and takes a comma-separated list; the grid is their Cartesian product.
Alternatively ``points`` lists explicit grid points separated by ``;``, each
a space-separated run of ``key=value`` pairs.
"""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..autodiff.optim import AdamConfig
from ..errors import ConfigError, DomainError
from ..vae import EncoderDecoderSpec, QvaeHyperParams

KINDS = ("mnist_train", "mnist_sweep", "dynamics_train", "dynamics_eval",
         "gen_data", "grad_check", "divergence_check")


def _floats(v):
    return tuple(float(s) for s in v.split(",") if s.strip())


def _ints(v):
    return tuple(int(s) for s in v.split(",") if s.strip())


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _str(v):
    return v.strip()


SCHEMA = {
    "experiment": {
        "kind": _str, "name": _str, "trials": int, "base_seed": int, "parallel": int,
    },
    "model": {
        "q": float, "beta": float, "gamma": float, "latent_dim": int,
        "objective_mode": _str, "decoder_family": _str, "coefficient_clamp": _floats,
        "likelihood_reduction": _str, "network": _str, "encoder_hidden": _ints,
        "decoder_hidden": _ints, "dynamics_hidden": _ints,
    },
    "train": {
        "epochs": int, "batch_size": int, "learning_rate": float, "beta1": float,
        "beta2": float, "epsilon": float, "train_limit": int, "test_limit": int,
        "validation_fraction": float,
    },
    "data": {
        "train_images": _str, "train_labels": _str, "test_images": _str,
        "test_labels": _str, "train_trajectories": _str, "test_trajectories": _str,
        "generator": _str, "n_train_trajectories": int, "n_test_trajectories": int,
        "steps": int, "dt": float, "noise_std": float, "seed": int,
        "n_oscillators": int, "thrust_limit": float,
    },
    "eval": {
        "checkpoint": _str, "divergence_pairs": int, "divergence_samples": int,
        "divergence_q": _floats,
    },
    "sweep": {},
}

SWEEPABLE = ("q", "beta", "gamma", "latent_dim", "objective_mode", "likelihood_reduction")


def parse_config_text(text, source="<string>"):
    """Parse to ``{section: {key: (raw_value, line_number)}}``."""
    sections = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"{source}:{lineno}: malformed section header {stripped!r}")
            current = stripped[1:-1].strip()
            if current not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown section [{current}]")
            if current in sections:
                raise ConfigError(f"{source}:{lineno}: duplicate section [{current}]")
            sections[current] = {}
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        if current is None:
            raise ConfigError(f"{source}:{lineno}: entry outside any section")
        key, value = (s.strip() for s in stripped.split("=", 1))
        allowed = SCHEMA[current]
        if current == "sweep":
            if key != "points" and key not in SWEEPABLE:
                raise ConfigError(f"{source}:{lineno}: key {key!r} cannot be swept")
        elif key not in allowed:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} in [{current}]")
        if key in sections[current]:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        sections[current][key] = (value, lineno)
    return sections


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 20
    batch_size: int = 128
    train_limit: int = 10000
    test_limit: int = 2000
    validation_fraction: float = 0.2


@dataclass(frozen=True)
class DataSettings:
    train_images: str = "data/mnist/train-images-idx3-ubyte.gz"
    train_labels: str = "data/mnist/train-labels-idx1-ubyte.gz"
    test_images: str = "data/mnist/test-images-idx3-ubyte.gz"
    test_labels: str = "data/mnist/test-labels-idx1-ubyte.gz"
    train_trajectories: str = ""
    test_trajectories: str = ""
    generator: str = "pointmass"
    n_train_trajectories: int = 150
    n_test_trajectories: int = 50
    steps: int = 200
    dt: float = 0.05
    noise_std: float = 0.0
    seed: int = 0
    n_oscillators: int = 6
    thrust_limit: float = 2.0


@dataclass(frozen=True)
class EvalSettings:
    checkpoint: str = ""
    divergence_pairs: int = 100
    divergence_samples: int = 1_000_000
    divergence_q: tuple = (0.5, 0.8, 1.2)


@dataclass(frozen=True)
class RunConfig:
    kind: str
    hyper: QvaeHyperParams
    network: str = "mnist"
    encoder_hidden: tuple = ()
    decoder_hidden: tuple = ()
    dynamics_hidden: tuple = ()
    train: TrainSettings = field(default_factory=TrainSettings)
    data: DataSettings = field(default_factory=DataSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    trials: int = 1
    base_seed: int = 0
    parallel: int = 1
    name: str = ""
    sweep: tuple = ()
    source_text: str = ""
    base_dir: str = "."

    @property
    def config_hash(self):
        return hashlib.sha256(canonical_text(self).encode()).hexdigest()[:12]

    def encoder_decoder_spec(self, input_dim):
        if self.network == "mnist":
            spec = EncoderDecoderSpec.mnist()
            enc = self.encoder_hidden or spec.encoder_hidden
            dec = self.decoder_hidden or spec.decoder_hidden
            return EncoderDecoderSpec(input_dim, tuple(enc), tuple(dec))
        from ..dynamics import NETWORK_VERSIONS
        enc = self.encoder_hidden or NETWORK_VERSIONS[self.network][0]
        dec = self.decoder_hidden or tuple(enc)[::-1]
        return EncoderDecoderSpec(input_dim, tuple(enc), tuple(dec))

    def with_overrides(self, **kwargs):
        hyper_keys = {k: kwargs.pop(k) for k in list(kwargs) if k in SWEEPABLE}
        cfg = replace(self, **kwargs) if kwargs else self
        if hyper_keys:
            cfg = replace(cfg, hyper=replace(cfg.hyper, **hyper_keys))
        return cfg

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def grid(self):
        """Grid points as a list of dicts of model overrides."""
        return [dict(p) for p in self.sweep] or [{}]


def canonical_text(cfg):
    h = cfg.hyper
    parts = [
        f"kind={cfg.kind}", f"q={h.q!r}", f"beta={h.beta!r}", f"gamma={h.gamma!r}",
        f"latent_dim={h.latent_dim}", f"mode={h.objective_mode}",
        f"family={h.decoder_family}", f"clamp={tuple(h.coefficient_clamp)!r}",
        f"reduction={h.likelihood_reduction}", f"opt={h.optimizer!r}",
        f"network={cfg.network}", f"enc={cfg.encoder_hidden}", f"dec={cfg.decoder_hidden}",
        f"dyn={cfg.dynamics_hidden}", f"train={cfg.train!r}", f"data={cfg.data!r}",
        f"eval={cfg.eval!r}", f"sweep={cfg.sweep!r}", f"base_seed={cfg.base_seed}",
    ]
    return "\n".join(parts)


def _coerce(section, key, raw, lineno, source):
    conv = SCHEMA[section][key]
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None


def _parse_sweep(entries, source):
    model_schema = SCHEMA["model"]
    if "points" in entries:
        if len(entries) > 1:
            raise ConfigError(f"{source}: [sweep] takes either 'points' or per-key lists")
        raw, lineno = entries["points"]
        points = []
        for chunk in raw.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            point = []
            for pair in chunk.split():
                if "=" not in pair:
                    raise ConfigError(f"{source}:{lineno}: bad grid point {chunk!r}")
                k, v = pair.split("=", 1)
                if k not in SWEEPABLE:
                    raise ConfigError(f"{source}:{lineno}: key {k!r} cannot be swept")
                point.append((k, _coerce("model", k, v, lineno, source)))
            points.append(tuple(point))
        if not points:
            raise ConfigError(f"{source}:{lineno}: empty grid")
        return tuple(points)
    keys = list(entries)
    values = []
    for k in keys:
        raw, lineno = entries[k]
        conv = model_schema[k]
        try:
            vals = [conv(s) for s in raw.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {k!r}: {exc}") from None
        if not vals:
            raise ConfigError(f"{source}:{lineno}: empty list for {k!r}")
        values.append(vals)
    return tuple(tuple(zip(keys, combo)) for combo in itertools.product(*values))


def build_config(sections, source="<string>", text="", base_dir="."):
    def get(section, key, default):
        entry = sections.get(section, {}).get(key)
        if entry is None:
            return default
        return _coerce(section, key, entry[0], entry[1], source)

    kind = get("experiment", "kind", None)
    if kind is None:
        raise ConfigError(f"{source}: [experiment] kind is required")
    if kind not in KINDS:
        line = sections["experiment"]["kind"][1]
        raise ConfigError(f"{source}:{line}: unknown experiment kind {kind!r}")
    dynamics_kind = kind.startswith("dynamics") or kind == "gen_data"
    opt = AdamConfig(
        learning_rate=get("train", "learning_rate", 1e-3),
        beta1=get("train", "beta1", 0.9),
        beta2=get("train", "beta2", 0.999),
        epsilon=get("train", "epsilon", 1e-8),
    )
    model = dict(
        q=get("model", "q", 1.0),
        beta=get("model", "beta", 1.0),
        gamma=get("model", "gamma", 0.1 if dynamics_kind else 0.0),
        latent_dim=get("model", "latent_dim", 3 if dynamics_kind else 10),
        decoder_family=get("model", "decoder_family", "gaussian" if dynamics_kind else "bernoulli"),
        objective_mode=get("model", "objective_mode", "q_vae"),
        coefficient_clamp=get("model", "coefficient_clamp", (1e-2, 1e2)),
        # ln_q of a whole-sample likelihood saturates only for high-dimensional inputs
        likelihood_reduction=get("model", "likelihood_reduction", "sample" if dynamics_kind else "element"),
    )
    try:
        hyper = QvaeHyperParams(optimizer=opt, **model)
    except (ConfigError, DomainError) as exc:
        raise ConfigError(f"{source}: [model] {exc}") from None
    network = get("model", "network", "V3" if dynamics_kind else "mnist")
    if network not in ("mnist", "V1", "V2", "V3"):
        raise ConfigError(f"{source}: unknown network {network!r}")
    train = TrainSettings(
        epochs=get("train", "epochs", 20),
        batch_size=get("train", "batch_size", 128),
        train_limit=get("train", "train_limit", 10000),
        test_limit=get("train", "test_limit", 2000),
        validation_fraction=get("train", "validation_fraction", 0.2),
    )
    if train.epochs < 1 or train.batch_size < 1:
        raise ConfigError(f"{source}: epochs and batch_size must be positive")
    defaults = DataSettings()
    data = DataSettings(**{k: get("data", k, getattr(defaults, k)) for k in SCHEMA["data"]})
    if data.generator not in ("pointmass", "cpg"):
        raise ConfigError(f"{source}: unknown generator {data.generator!r}")
    edef = EvalSettings()
    ev = EvalSettings(**{k: get("eval", k, getattr(edef, k)) for k in SCHEMA["eval"]})
    sweep = _parse_sweep(sections.get("sweep", {}), source)
    cfg = RunConfig(
        kind=kind, hyper=hyper, network=network,
        encoder_hidden=get("model", "encoder_hidden", ()),
        decoder_hidden=get("model", "decoder_hidden", ()),
        dynamics_hidden=get("model", "dynamics_hidden", ()),
        train=train, data=data, eval=ev,
        trials=get("experiment", "trials", 1),
        base_seed=get("experiment", "base_seed", 0),
        parallel=get("experiment", "parallel", 1),
        name=get("experiment", "name", ""),
        sweep=sweep, source_text=text, base_dir=str(base_dir),
    )
    if cfg.trials < 1 or cfg.parallel < 1:
        raise ConfigError(f"{source}: trials and parallel must be positive")
    for point in cfg.grid():
        try:
            replace(cfg.hyper, **point)
        except (ConfigError, DomainError) as exc:
            raise ConfigError(f"{source}: [sweep] {exc}") from None
    return cfg


def load_config(path):
    path = Path(path)
    text = path.read_text()
    return build_config(parse_config_text(text, str(path)), str(path), text, base_dir=Path.cwd())


def config_from_text(text, base_dir="."):
    return build_config(parse_config_text(text), "<string>", text, base_dir=base_dir)
