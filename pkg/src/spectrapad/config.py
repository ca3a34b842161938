"""Global configuration: flat typed key=value text with dotted section names.

One file drives a whole run. Lines look like `train.lr = 0.001`; `#` starts
a comment; lists are comma-separated. Unknown keys are rejected. The
canonical serialization (all keys, sorted, normalized values) is what gets
hashed into checkpoints and snapshots, so two configs agree iff their hashes
do.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .losses import LossConfig
from .spectral_data import BANDS, SynthConfig
from .vit_encoder import ViTConfig

ABLATION_TOGGLES = (
    "spe",
    "token_fusion",
    "balanced_ce",
    "contrastive",
    "band_dropout",
    "feat_norm",
)


@dataclass(frozen=True)
class DataConfig:
    source: str = "synth"
    manifest_path: str = ""
    qc_threshold: float = 100.0
    qc_sat_limit: float = 0.05
    partition: tuple[float, float, float] = (0.55, 0.15, 0.30)
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass(frozen=True)
class TrainConfig:
    artefact: int = 1
    test_artefacts: tuple[int, ...] = ()  # empty means "all others"
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.001
    weight_decay: float = 0.0003
    beta1: float = 0.9
    beta2: float = 0.999
    ablation: tuple[str, ...] = ()


@dataclass(frozen=True)
class EvalConfig:
    threshold_mode: str = "fixed"
    bands: tuple[int, ...] = BANDS
    dump_features: bool = False


@dataclass(frozen=True)
class GlobalConfig:
    seed: int = 7
    output_dir: str = "runs/run"
    data: DataConfig = field(default_factory=DataConfig)
    model: ViTConfig = field(default_factory=ViTConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    loss_raw_inverse_freq: bool = False
    eval: EvalConfig = field(default_factory=EvalConfig)

    def resolved_test_artefacts(self) -> tuple[int, ...]:
        if self.train.test_artefacts:
            return self.train.test_artefacts
        return tuple(a for a in range(1, 9) if a != self.train.artefact)


# -- key table ---------------------------------------------------------------
# key -> (kind, getter path); kinds: int, float, bool, str, ints, floats, strs

_SCHEMA: dict[str, str] = {
    "seed": "int",
    "output_dir": "str",
    "dataset.source": "str",
    "dataset.manifest_path": "str",
    "dataset.qc_threshold": "float",
    "dataset.qc_sat_limit": "float",
    "dataset.partition": "floats",
    "dataset.synth.image_side": "int",
    "dataset.synth.bona_identities": "int",
    "dataset.synth.bona_samples_per_identity": "int",
    "dataset.synth.artefact_identities": "int",
    "dataset.synth.artefact_samples_per_identity": "int",
    "dataset.synth.reflectance": "floats",
    "dataset.synth.noise_sigma": "float",
    "model.image_side": "int",
    "model.patch_size": "int",
    "model.embed_dim": "int",
    "model.depth": "int",
    "model.heads": "int",
    "model.mlp_ratio": "float",
    "model.trainable_last_blocks": "int",
    "train.artefact": "int",
    "train.test_artefacts": "ints",
    "train.epochs": "int",
    "train.batch_size": "int",
    "train.lr": "float",
    "train.weight_decay": "float",
    "train.beta1": "float",
    "train.beta2": "float",
    "train.ablation": "strs",
    "loss.lambda": "float",
    "loss.epsilon": "float",
    "loss.raw_inverse_freq": "bool",
    "eval.threshold_mode": "str",
    "eval.bands": "ints",
    "eval.dump_features": "bool",
}


def _parse_scalar(kind: str, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "false"):
                return raw.lower() == "true"
            raise ValueError(raw)
        if kind == "str":
            return raw
        if kind == "ints":
            return tuple(int(x) for x in raw.split(",") if x.strip()) if raw else ()
        if kind == "floats":
            return tuple(float(x) for x in raw.split(",") if x.strip()) if raw else ()
        if kind == "strs":
            return tuple(x.strip() for x in raw.split(",") if x.strip()) if raw else ()
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r} as {kind}")
    raise ConfigError(f"unknown kind {kind}")


def parse_config_text(text: str) -> GlobalConfig:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown configuration key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_scalar(_SCHEMA[key], raw, key)
    return build_config(values)


def load_config(path: Path | str) -> GlobalConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def build_config(values: dict[str, object]) -> GlobalConfig:
    def get(key, default):
        return values.get(key, default)

    try:
        synth = SynthConfig(
            image_side=get("dataset.synth.image_side", 32),
            bona_identities=get("dataset.synth.bona_identities", 20),
            bona_samples_per_identity=get("dataset.synth.bona_samples_per_identity", 12),
            artefact_identities=get("dataset.synth.artefact_identities", 6),
            artefact_samples_per_identity=get("dataset.synth.artefact_samples_per_identity", 12),
            reflectance=get("dataset.synth.reflectance", SynthConfig().reflectance),
            noise_sigma=get("dataset.synth.noise_sigma", 0.01),
        )
        data = DataConfig(
            source=get("dataset.source", "synth"),
            manifest_path=get("dataset.manifest_path", ""),
            qc_threshold=get("dataset.qc_threshold", 100.0),
            qc_sat_limit=get("dataset.qc_sat_limit", 0.05),
            partition=get("dataset.partition", (0.55, 0.15, 0.30)),
            synth=synth,
        )
        model = ViTConfig(
            image_side=get("model.image_side", 32),
            patch_size=get("model.patch_size", 4),
            embed_dim=get("model.embed_dim", 64),
            depth=get("model.depth", 4),
            heads=get("model.heads", 4),
            mlp_ratio=get("model.mlp_ratio", 4.0),
            trainable_last_blocks=get("model.trainable_last_blocks", 1),
        )
        train = TrainConfig(
            artefact=get("train.artefact", 1),
            test_artefacts=get("train.test_artefacts", ()),
            epochs=get("train.epochs", 10),
            batch_size=get("train.batch_size", 32),
            lr=get("train.lr", 0.001),
            weight_decay=get("train.weight_decay", 0.0003),
            beta1=get("train.beta1", 0.9),
            beta2=get("train.beta2", 0.999),
            ablation=get("train.ablation", ()),
        )
        loss = LossConfig(lam=get("loss.lambda", 0.1), eps=get("loss.epsilon", 1e-6))
        ev = EvalConfig(
            threshold_mode=get("eval.threshold_mode", "fixed"),
            bands=get("eval.bands", BANDS),
            dump_features=get("eval.dump_features", False),
        )
        cfg = GlobalConfig(
            seed=get("seed", 7),
            output_dir=get("output_dir", "runs/run"),
            data=data,
            model=model,
            train=train,
            loss=loss,
            loss_raw_inverse_freq=get("loss.raw_inverse_freq", False),
            eval=ev,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    validate_config(cfg)
    return cfg


def validate_config(cfg: GlobalConfig) -> None:
    if cfg.data.source not in ("synth", "manifest"):
        raise ConfigError(f"dataset.source must be synth or manifest, got {cfg.data.source!r}")
    if cfg.data.source == "manifest" and not cfg.data.manifest_path:
        raise ConfigError("dataset.source=manifest requires dataset.manifest_path")
    if cfg.data.source == "synth" and cfg.data.manifest_path:
        raise ConfigError("dataset.manifest_path is only valid with dataset.source=manifest")
    if len(cfg.data.partition) != 3 or abs(sum(cfg.data.partition) - 1.0) > 1e-9:
        raise ConfigError("dataset.partition must be three fractions summing to 1")
    if not 1 <= cfg.train.artefact <= 8:
        raise ConfigError(f"train.artefact must be in 1..8, got {cfg.train.artefact}")
    for a in cfg.train.test_artefacts:
        if not 1 <= a <= 8:
            raise ConfigError(f"test artefact out of range: {a}")
        if a == cfg.train.artefact:
            raise ConfigError("train.artefact may not appear in train.test_artefacts")
    if not 0 <= cfg.train.epochs <= 40:
        raise ConfigError("train.epochs must be in 0..40")
    if cfg.train.batch_size < 2:
        raise ConfigError("train.batch_size must be >= 2 (contrastive loss needs pairs)")
    for toggle in cfg.train.ablation:
        if toggle not in ABLATION_TOGGLES:
            raise ConfigError(f"unknown ablation toggle {toggle!r}; legal: {ABLATION_TOGGLES}")
    if cfg.eval.threshold_mode not in ("fixed", "dev"):
        raise ConfigError("eval.threshold_mode must be fixed or dev")
    for b in cfg.eval.bands:
        if b not in BANDS:
            raise ConfigError(f"unknown band {b} in eval.bands")
    if not cfg.eval.bands:
        raise ConfigError("eval.bands may not be empty")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def canonical_text(cfg: GlobalConfig) -> str:
    """Every key, sorted, normalized: equal configs hash equal."""
    values = {
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "dataset.source": cfg.data.source,
        "dataset.manifest_path": cfg.data.manifest_path,
        "dataset.qc_threshold": cfg.data.qc_threshold,
        "dataset.qc_sat_limit": cfg.data.qc_sat_limit,
        "dataset.partition": cfg.data.partition,
        "dataset.synth.image_side": cfg.data.synth.image_side,
        "dataset.synth.bona_identities": cfg.data.synth.bona_identities,
        "dataset.synth.bona_samples_per_identity": cfg.data.synth.bona_samples_per_identity,
        "dataset.synth.artefact_identities": cfg.data.synth.artefact_identities,
        "dataset.synth.artefact_samples_per_identity":
            cfg.data.synth.artefact_samples_per_identity,
        "dataset.synth.reflectance": cfg.data.synth.reflectance,
        "dataset.synth.noise_sigma": cfg.data.synth.noise_sigma,
        "model.image_side": cfg.model.image_side,
        "model.patch_size": cfg.model.patch_size,
        "model.embed_dim": cfg.model.embed_dim,
        "model.depth": cfg.model.depth,
        "model.heads": cfg.model.heads,
        "model.mlp_ratio": cfg.model.mlp_ratio,
        "model.trainable_last_blocks": cfg.model.trainable_last_blocks,
        "train.artefact": cfg.train.artefact,
        "train.test_artefacts": cfg.train.test_artefacts,
        "train.epochs": cfg.train.epochs,
        "train.batch_size": cfg.train.batch_size,
        "train.lr": cfg.train.lr,
        "train.weight_decay": cfg.train.weight_decay,
        "train.beta1": cfg.train.beta1,
        "train.beta2": cfg.train.beta2,
        "train.ablation": cfg.train.ablation,
        "loss.lambda": cfg.loss.lam,
        "loss.epsilon": cfg.loss.eps,
        "loss.raw_inverse_freq": cfg.loss_raw_inverse_freq,
        "eval.threshold_mode": cfg.eval.threshold_mode,
        "eval.bands": cfg.eval.bands,
        "eval.dump_features": cfg.eval.dump_features,
    }
    assert set(values) == set(_SCHEMA), "canonical text must cover the schema"
    return "".join(f"{k} = {_fmt(values[k])}\n" for k in sorted(values))


def config_hash(cfg: GlobalConfig) -> str:
    """Hash of the canonical text minus output_dir: where results land does
    not change what was computed, so --out never forks config identity."""
    lines = [
        line for line in canonical_text(cfg).splitlines() if not line.startswith("output_dir ")
    ]
    return hashlib.sha256(("\n".join(lines) + "\n").encode("utf-8")).hexdigest()


def with_overrides(cfg: GlobalConfig, **top_level) -> GlobalConfig:
    """Rebuild the frozen config with top-level fields replaced."""
    kwargs = {f.name: getattr(cfg, f.name) for f in fields(GlobalConfig)}
    kwargs.update(top_level)
    out = GlobalConfig(**kwargs)
    validate_config(out)
    return out
