"""Run configuration: a strict JSON schema over the package defaults.

Every key is optional (an empty object is a valid config), but unknown
keys anywhere are rejected with their dotted path, so a typo like
"t_mx" fails loudly instead of silently training with a default.  The
parsed config round-trips: ``parse_config(cfg.to_dict())`` reproduces
``cfg``, and the serialized form is what a run directory stores as
``effective_config.json``.

Schema (defaults in parentheses):

    run_name ("run"), seed (0), method ("fap"), head ("proto")
    encoder:  in_channels, image_hw, widths     (inherited / see below)
    episode:  way (5), shot (5), query (4)
    train:    episodes_per_epoch (200), epochs (20), alpha (0.001),
              beta (40.0), t_max (5), branch_p (0.5),
              filter_pool ([1,3,5,7,11,15]), val_every (200),
              val_episodes (200), val_query (16), relation_hidden (64)
    eval:     episodes (2000), query (16), noise_sigma (0.1)
    dataset:  kind ("synthetic"), image_hw ([32,32]), channels (1),
              seed (0); synthetic: SyntheticSpec fields with nested
              domain_a / domain_b; image_dir: root (required)

The encoder inherits ``image_hw`` and ``in_channels`` from the dataset
unless given explicitly, in which case they must agree.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import FILTER_POOL
from .episodes import DomainSpec, ImagePool, SyntheticSpec, build_synthetic_pools, load_image_dir
from .model import HEADS, EncoderConfig
from .trainer import METHODS, TrainConfig

DATASET_KINDS = ("synthetic", "image_dir")


class ConfigError(ValueError):
    """Malformed or contradictory run configuration."""


def _expect_mapping(obj, path: str) -> dict:
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError(f"config: {path} must be an object, got {type(obj).__name__}")
    return dict(obj)


def _reject_unknown(d: dict, path: str) -> None:
    if d:
        keys = ", ".join(f"{path}.{k}".lstrip(".") for k in sorted(d))
        raise ConfigError(f"config: unknown key(s) {keys}")


def _num(v, path: str, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"config: {path} must be a number, got {v!r}")
    return kind(v)


def _int(v, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"config: {path} must be an integer, got {v!r}")
    return v


def _pair(v, path: str) -> tuple[int, int]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"config: {path} must be a pair, got {v!r}")
    return (_int(v[0], path), _int(v[1], path))


def _str(v, path: str, allowed: tuple[str, ...] | None = None) -> str:
    if not isinstance(v, str):
        raise ConfigError(f"config: {path} must be a string, got {v!r}")
    if allowed is not None and v not in allowed:
        raise ConfigError(f"config: {path} must be one of {list(allowed)}, got {v!r}")
    return v


def _parse_domain(obj, path: str, default: DomainSpec) -> DomainSpec:
    d = _expect_mapping(obj, path)
    patterns = d.pop("patterns", list(default.patterns))
    if not isinstance(patterns, (list, tuple)) or not patterns:
        raise ConfigError(f"config: {path}.patterns must be a non-empty list")
    spec = dict(
        patterns=tuple(_str(p, f"{path}.patterns") for p in patterns),
        amplitude=_num(d.pop("amplitude", default.amplitude), f"{path}.amplitude"),
        modulated=bool(d.pop("modulated", default.modulated)),
        mod_floor=_num(d.pop("mod_floor", default.mod_floor), f"{path}.mod_floor"),
        period=_int(d.pop("period", default.period), f"{path}.period"),
        mod_source=_str(d.pop("mod_source", default.mod_source), f"{path}.mod_source"),
    )
    _reject_unknown(d, path)
    try:
        return DomainSpec(**spec)
    except ValueError as e:
        raise ConfigError(f"config: {path}: {e}") from e


def _parse_synthetic(obj, path: str) -> SyntheticSpec:
    d = _expect_mapping(obj, path)
    base = SyntheticSpec()
    kw = dict(
        classes=_int(d.pop("classes", base.classes), f"{path}.classes"),
        novel_classes=_int(d.pop("novel_classes", base.novel_classes), f"{path}.novel_classes"),
        samples_per_class=_int(
            d.pop("samples_per_class", base.samples_per_class), f"{path}.samples_per_class"
        ),
        n_blobs=_int(d.pop("n_blobs", base.n_blobs), f"{path}.n_blobs"),
        blob_amplitude=_num(
            d.pop("blob_amplitude", base.blob_amplitude), f"{path}.blob_amplitude"
        ),
        base_range=tuple(
            _num(v, f"{path}.base_range") for v in d.pop("base_range", list(base.base_range))
        ),
        low_jitter=_num(d.pop("low_jitter", base.low_jitter), f"{path}.low_jitter"),
        domain_a=_parse_domain(d.pop("domain_a", None), f"{path}.domain_a", base.domain_a),
        domain_b=_parse_domain(d.pop("domain_b", None), f"{path}.domain_b", base.domain_b),
    )
    _reject_unknown(d, path)
    try:
        return SyntheticSpec(**kw)
    except ValueError as e:
        raise ConfigError(f"config: {path}: {e}") from e


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    image_hw: tuple[int, int] = (32, 32)
    channels: int = 1
    seed: int = 0
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    root: str | None = None

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "image_hw": list(self.image_hw),
            "channels": self.channels,
            "seed": self.seed,
        }
        if self.kind == "synthetic":
            syn = dataclasses.asdict(self.synthetic)
            syn["base_range"] = list(syn["base_range"])
            for dom in ("domain_a", "domain_b"):
                syn[dom]["patterns"] = list(syn[dom]["patterns"])
            out["synthetic"] = syn
        else:
            out["root"] = self.root
        return out


def _parse_dataset(obj, path: str) -> DatasetConfig:
    d = _expect_mapping(obj, path)
    kind = _str(d.pop("kind", "synthetic"), f"{path}.kind", DATASET_KINDS)
    kw = dict(
        kind=kind,
        image_hw=_pair(d.pop("image_hw", [32, 32]), f"{path}.image_hw"),
        channels=_int(d.pop("channels", 1), f"{path}.channels"),
        seed=_int(d.pop("seed", 0), f"{path}.seed"),
    )
    if kind == "synthetic":
        kw["synthetic"] = _parse_synthetic(d.pop("synthetic", None), f"{path}.synthetic")
    else:
        root = d.pop("root", None)
        if root is None:
            raise ConfigError(f"config: {path}.root is required when kind is image_dir")
        kw["root"] = _str(root, f"{path}.root")
    if kw["channels"] not in (1, 3):
        raise ConfigError(f"config: {path}.channels must be 1 or 3, got {kw['channels']}")
    _reject_unknown(d, path)
    return DatasetConfig(**kw)


@dataclass(frozen=True)
class RunConfig:
    run_name: str = "run"
    seed: int = 0
    method: str = "fap"
    head: str = "proto"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    way: int = 5
    shot: int = 5
    query: int = 4
    episodes_per_epoch: int = 200
    epochs: int = 20
    alpha: float = 1e-3
    beta: float = 40.0
    t_max: int = 5
    branch_p: float = 0.5
    filter_pool: tuple[int, ...] = FILTER_POOL
    val_every: int = 200
    val_episodes: int = 200
    val_query: int = 16
    relation_hidden: int = 64
    eval_episodes: int = 2000
    eval_query: int = 16
    noise_sigma: float = 0.1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            way=self.way, shot=self.shot, query=self.query,
            episodes_per_epoch=self.episodes_per_epoch, epochs=self.epochs,
            alpha=self.alpha, beta=self.beta, t_max=self.t_max,
            branch_p=self.branch_p, filter_pool=self.filter_pool,
            head=self.head, method=self.method,
            val_every=self.val_every, val_episodes=self.val_episodes,
            val_query=self.val_query, relation_hidden=self.relation_hidden,
            seed=self.seed, encoder=self.encoder,
        )

    def to_dict(self) -> dict:
        return {
            "run_name": self.run_name,
            "seed": self.seed,
            "method": self.method,
            "head": self.head,
            "encoder": self.encoder.to_dict(),
            "episode": {"way": self.way, "shot": self.shot, "query": self.query},
            "train": {
                "episodes_per_epoch": self.episodes_per_epoch,
                "epochs": self.epochs,
                "alpha": self.alpha,
                "beta": self.beta,
                "t_max": self.t_max,
                "branch_p": self.branch_p,
                "filter_pool": list(self.filter_pool),
                "val_every": self.val_every,
                "val_episodes": self.val_episodes,
                "val_query": self.val_query,
                "relation_hidden": self.relation_hidden,
            },
            "eval": {
                "episodes": self.eval_episodes,
                "query": self.eval_query,
                "noise_sigma": self.noise_sigma,
            },
            "dataset": self.dataset.to_dict(),
        }


def parse_config(obj) -> RunConfig:
    """Validate a decoded JSON object into a :class:`RunConfig`."""
    d = _expect_mapping(obj, "")
    run_name = _str(d.pop("run_name", "run"), "run_name")
    if not run_name or any(c in run_name for c in "/\\\0"):
        raise ConfigError(f"config: run_name must be a plain name, got {run_name!r}")
    seed = _int(d.pop("seed", 0), "seed")
    method = _str(d.pop("method", "fap"), "method", METHODS)
    head = _str(d.pop("head", "proto"), "head", HEADS)

    dataset = _parse_dataset(d.pop("dataset", None), "dataset")

    enc = _expect_mapping(d.pop("encoder", None), "encoder")
    enc_kw = dict(
        in_channels=_int(enc.pop("in_channels", dataset.channels), "encoder.in_channels"),
        image_hw=_pair(enc.pop("image_hw", list(dataset.image_hw)), "encoder.image_hw"),
        widths=tuple(
            _int(w, "encoder.widths") for w in enc.pop("widths", [16, 32, 64])
        ),
    )
    _reject_unknown(enc, "encoder")
    if enc_kw["image_hw"] != dataset.image_hw:
        raise ConfigError(
            f"config: encoder.image_hw {list(enc_kw['image_hw'])} does not match "
            f"dataset.image_hw {list(dataset.image_hw)}"
        )
    if enc_kw["in_channels"] != dataset.channels:
        raise ConfigError(
            f"config: encoder.in_channels {enc_kw['in_channels']} does not match "
            f"dataset.channels {dataset.channels}"
        )
    try:
        encoder = EncoderConfig(**enc_kw)
    except ValueError as e:
        raise ConfigError(f"config: encoder: {e}") from e

    ep = _expect_mapping(d.pop("episode", None), "episode")
    way = _int(ep.pop("way", 5), "episode.way")
    shot = _int(ep.pop("shot", 5), "episode.shot")
    query = _int(ep.pop("query", 4), "episode.query")
    _reject_unknown(ep, "episode")

    tr = _expect_mapping(d.pop("train", None), "train")
    pool = tr.pop("filter_pool", list(FILTER_POOL))
    if not isinstance(pool, (list, tuple)) or not pool:
        raise ConfigError("config: train.filter_pool must be a non-empty list")
    train_kw = dict(
        episodes_per_epoch=_int(tr.pop("episodes_per_epoch", 200), "train.episodes_per_epoch"),
        epochs=_int(tr.pop("epochs", 20), "train.epochs"),
        alpha=_num(tr.pop("alpha", 1e-3), "train.alpha"),
        beta=_num(tr.pop("beta", 40.0), "train.beta"),
        t_max=_int(tr.pop("t_max", 5), "train.t_max"),
        branch_p=_num(tr.pop("branch_p", 0.5), "train.branch_p"),
        filter_pool=tuple(_int(k, "train.filter_pool") for k in pool),
        val_every=_int(tr.pop("val_every", 200), "train.val_every"),
        val_episodes=_int(tr.pop("val_episodes", 200), "train.val_episodes"),
        val_query=_int(tr.pop("val_query", 16), "train.val_query"),
        relation_hidden=_int(tr.pop("relation_hidden", 64), "train.relation_hidden"),
    )
    _reject_unknown(tr, "train")

    ev = _expect_mapping(d.pop("eval", None), "eval")
    eval_kw = dict(
        eval_episodes=_int(ev.pop("episodes", 2000), "eval.episodes"),
        eval_query=_int(ev.pop("query", 16), "eval.query"),
        noise_sigma=_num(ev.pop("noise_sigma", 0.1), "eval.noise_sigma"),
    )
    if eval_kw["eval_episodes"] < 1 or eval_kw["eval_query"] < 1:
        raise ConfigError("config: eval.episodes and eval.query must be >= 1")
    if eval_kw["noise_sigma"] < 0:
        raise ConfigError(f"config: eval.noise_sigma must be >= 0, got {eval_kw['noise_sigma']}")
    _reject_unknown(ev, "eval")

    _reject_unknown(d, "")

    cfg = RunConfig(
        run_name=run_name, seed=seed, method=method, head=head, encoder=encoder,
        way=way, shot=shot, query=query, dataset=dataset, **train_kw, **eval_kw,
    )
    try:
        cfg.train_config()
    except ValueError as e:
        raise ConfigError(f"config: {e}") from e
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"config: cannot read {p}: {e}") from e
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: {p} is not valid JSON: {e}") from e
    return parse_config(obj)


def config_hash(cfg: RunConfig) -> str:
    """Stable short digest of the effective config."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def build_pools(ds: DatasetConfig) -> dict[str, ImagePool]:
    """Materialize the train/val/test (and maybe novel) pools."""
    if ds.kind == "synthetic":
        return build_synthetic_pools(ds.synthetic, ds.image_hw, ds.channels, ds.seed)
    root = Path(ds.root)
    if not root.is_dir():
        raise ConfigError(f"config: dataset.root {root} is not a directory")
    pools = {}
    for split in ("train", "val", "test"):
        split_dir = root / split
        if not split_dir.is_dir():
            raise ConfigError(f"config: dataset.root is missing the {split}/ split")
        pools[split] = load_image_dir(split_dir, ds.image_hw, ds.channels)
    if (root / "novel").is_dir():
        pools["novel"] = load_image_dir(root / "novel", ds.image_hw, ds.channels)
    return pools
