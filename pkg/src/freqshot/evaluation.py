"""Evaluation protocols and report serialization.

Two protocols sit on top of the plain meta-test loop:

* robustness: one model is scored on the same episode stream under a
  set of input corruptions (frequency-band edits and additive noise),
  so per-variant accuracies are paired episode by episode.
* frequency probe: two models (typically a plain-trained baseline and
  the frequency-trained treatment) are scored on one shared episode
  stream under band-limited inputs; the per-model drop from its own
  uncorrupted accuracy says which frequency range the model leans on.

Episode i always comes from ``rng.child("episode", i)``, so results are
a pure function of (seed, pool, protocol); worker processes reproduce
the exact serial stream, and report files are byte-identical across
runs.  Floats are serialized with ``repr``, which round-trips and never
depends on locale.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .augment import (
    high_only_variant,
    low_only_variant,
    noise_variant,
    randn_high_variant,
    zero_high_variant,
)
from .episodes import ImagePool, sample_episode
from .model import EncoderConfig, predict_episode
from .rng import Rng
from .tensor import ParamSet, Tensor
from .trainer import EvalReport

VARIANTS = ("original", "zeros", "randn", "noise", "high_only", "low_only")
PROBE_VARIANTS = ("original", "high_only", "low_only")
DEFAULT_NOISE_SIGMA = 0.1


def make_transform(
    variant: str, sigma: float = DEFAULT_NOISE_SIGMA
) -> Callable[[np.ndarray, Rng], np.ndarray] | None:
    """The image-space corruption applied at meta-test time, by name."""
    if variant == "original":
        return None
    if variant == "zeros":
        return lambda x, rng: zero_high_variant(x)
    if variant == "randn":
        return lambda x, rng: randn_high_variant(x, rng)
    if variant == "noise":
        return lambda x, rng: noise_variant(x, sigma, rng)
    if variant == "high_only":
        return lambda x, rng: high_only_variant(x)
    if variant == "low_only":
        return lambda x, rng: low_only_variant(x)
    raise ValueError(f"unknown eval variant {variant!r}; expected one of {VARIANTS}")


# episode mapping, serial or across worker processes

@dataclass(frozen=True)
class _EvalTask:
    """Self-contained, picklable description of one evaluation stream."""

    state: dict
    encoder: dict
    head: str
    images: np.ndarray
    labels: np.ndarray
    pool_name: str
    way: int
    shot: int
    query: int
    seed: int
    rng_path: tuple[str, ...]
    variant: str
    sigma: float


def _accuracy_for_indices(task: _EvalTask, indices: Sequence[int]) -> np.ndarray:
    params = {name: Tensor(arr) for name, arr in task.state.items()}
    cfg = EncoderConfig.from_dict(task.encoder)
    pool = ImagePool(task.images, task.labels, name=task.pool_name)
    transform = make_transform(task.variant, task.sigma)
    base = Rng(task.seed, *task.rng_path)
    out = np.zeros(len(indices))
    for j, i in enumerate(indices):
        erng = base.child("episode", int(i))
        ep = sample_episode(pool, task.way, task.shot, task.query, erng.child("sample"))
        sx, qx = ep.support_x, ep.query_x
        if transform is not None:
            x = transform(ep.stacked(), erng.child("transform"))
            sx, qx = x[: len(sx)], x[len(sx) :]
        pred = predict_episode(params, cfg, task.head, sx, ep.support_y, qx, ep.n_way)
        out[j] = float(np.mean(pred == ep.query_y))
    return out


def _state_of(params) -> dict:
    if isinstance(params, ParamSet):
        return params.state_dict()
    return {name: np.asarray(t.data, dtype=np.float64).copy() for name, t in params.items()}


def evaluate_variant(
    params,
    enc_cfg: EncoderConfig,
    head: str,
    pool: ImagePool,
    way: int,
    shot: int,
    query: int,
    n_episodes: int,
    rng: Rng,
    variant: str = "original",
    sigma: float = DEFAULT_NOISE_SIGMA,
    workers: int = 1,
) -> EvalReport:
    """Meta-test accuracy under one input variant.

    ``workers > 1`` splits the episode indices over processes; because
    every episode's stream is derived from its index, the result is
    bit-identical to the serial run.
    """
    n_episodes = int(n_episodes)
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    workers = max(1, int(workers))
    task = _EvalTask(
        state=_state_of(params),
        encoder=enc_cfg.to_dict(),
        head=head,
        images=pool.images,
        labels=pool.labels,
        pool_name=pool.name,
        way=int(way),
        shot=int(shot),
        query=int(query),
        seed=rng.seed,
        rng_path=rng.path,
        variant=variant,
        sigma=float(sigma),
    )
    indices = np.arange(n_episodes)
    if workers == 1 or n_episodes < 2 * workers:
        accs = _accuracy_for_indices(task, indices)
    else:
        chunks = np.array_split(indices, workers)
        with ProcessPoolExecutor(max_workers=workers) as pool_exec:
            parts = list(pool_exec.map(_accuracy_for_indices, [task] * len(chunks), chunks))
        accs = np.concatenate(parts)
    return EvalReport.from_episode_accuracy(accs)


# reports

@dataclass
class VariantResult:
    variant: str
    accuracy: float
    ci95: float
    n_episodes: int
    delta_vs_original: float


@dataclass
class RobustnessReport:
    rows: list[VariantResult]

    def row(self, variant: str) -> VariantResult:
        for r in self.rows:
            if r.variant == variant:
                return r
        raise KeyError(variant)

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "variant": r.variant,
                    "accuracy": r.accuracy,
                    "ci95": r.ci95,
                    "n_episodes": r.n_episodes,
                    "delta_vs_original": r.delta_vs_original,
                }
                for r in self.rows
            ]
        }


def robustness_report(
    params,
    enc_cfg: EncoderConfig,
    head: str,
    pool: ImagePool,
    way: int,
    shot: int,
    query: int,
    n_episodes: int,
    rng: Rng,
    variants: Sequence[str] = VARIANTS,
    sigma: float = DEFAULT_NOISE_SIGMA,
    workers: int = 1,
) -> RobustnessReport:
    """Score one model under each variant on a shared episode stream."""
    variants = tuple(variants)
    if "original" not in variants:
        variants = ("original",) + variants
    reports: dict[str, EvalReport] = {}
    for v in variants:
        reports[v] = evaluate_variant(
            params, enc_cfg, head, pool, way, shot, query, n_episodes, rng,
            variant=v, sigma=sigma, workers=workers,
        )
    base = reports["original"].accuracy
    rows = [
        VariantResult(
            variant=v,
            accuracy=reports[v].accuracy,
            ci95=reports[v].ci95,
            n_episodes=reports[v].n_episodes,
            delta_vs_original=reports[v].accuracy - base,
        )
        for v in variants
    ]
    return RobustnessReport(rows)


@dataclass
class ProbeRow:
    model: str
    variant: str
    accuracy: float
    ci95: float
    n_episodes: int
    delta_vs_own_original: float


@dataclass
class ProbeReport:
    rows: list[ProbeRow]

    def row(self, model: str, variant: str) -> ProbeRow:
        for r in self.rows:
            if r.model == model and r.variant == variant:
                return r
        raise KeyError((model, variant))

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "model": r.model,
                    "variant": r.variant,
                    "accuracy": r.accuracy,
                    "ci95": r.ci95,
                    "n_episodes": r.n_episodes,
                    "delta_vs_own_original": r.delta_vs_own_original,
                }
                for r in self.rows
            ]
        }


def probe_report(
    models: Mapping[str, tuple],
    pool: ImagePool,
    way: int,
    shot: int,
    query: int,
    n_episodes: int,
    rng: Rng,
    variants: Sequence[str] = PROBE_VARIANTS,
    workers: int = 1,
) -> ProbeReport:
    """Band-limited comparison of several models on one episode stream.

    ``models`` maps a model name to ``(params, encoder_config, head)``.
    All models and all variants see identical episodes, so every
    contrast in the table is paired.
    """
    rows: list[ProbeRow] = []
    for name in models:
        params, enc_cfg, head = models[name]
        per_variant: dict[str, EvalReport] = {}
        for v in variants:
            per_variant[v] = evaluate_variant(
                params, enc_cfg, head, pool, way, shot, query, n_episodes, rng,
                variant=v, workers=workers,
            )
        own = per_variant["original"].accuracy
        for v in variants:
            rep = per_variant[v]
            rows.append(
                ProbeRow(
                    model=name,
                    variant=v,
                    accuracy=rep.accuracy,
                    ci95=rep.ci95,
                    n_episodes=rep.n_episodes,
                    delta_vs_own_original=rep.accuracy - own,
                )
            )
    return ProbeReport(rows)


# serialization; repr() of a float round-trips, so files are stable bytes

def format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([format_cell(v) for v in row])


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


HISTORY_HEADER = (
    "episode", "branch", "seed",
    "ce_anchor", "ce_zeros", "ce_randn", "kl_zeros", "kl_randn", "total",
)


def history_rows(history) -> list[list]:
    return [
        [
            r.episode, r.branch, r.seed,
            r.parts.ce_anchor, r.parts.ce_zeros, r.parts.ce_randn,
            r.parts.kl_zeros, r.parts.kl_randn, r.parts.total,
        ]
        for r in history
    ]


ROBUSTNESS_HEADER = ("variant", "accuracy", "ci95", "n_episodes", "delta_vs_original")


def robustness_rows(report: RobustnessReport) -> list[list]:
    return [
        [r.variant, r.accuracy, r.ci95, r.n_episodes, r.delta_vs_original]
        for r in report.rows
    ]


PROBE_HEADER = ("model", "variant", "accuracy", "ci95", "n_episodes", "delta_vs_own_original")


def probe_rows(report: ProbeReport) -> list[list]:
    return [
        [r.model, r.variant, r.accuracy, r.ci95, r.n_episodes, r.delta_vs_own_original]
        for r in report.rows
    ]


EVAL_HEADER = ("pool", "variant", "accuracy", "ci95", "n_episodes")
