"""Episodic training with frequency-augmented task triples.

Each training step draws one N-way episode, builds the task triple
(original, zeros-variant, randn-variant sharing labels), and takes one
of two branches:

* serial branch (probability 1 - p): every stream is passed through an
  independently drawn random convolution; both variants are blended with
  the anchor by mutual attention; the loss-ascent loop then perturbs the
  anchor only; finally the variants are blended again with the ascended
  anchor.
* parallel branch (probability p): all three streams are loss-ascended
  independently (no random convolution), and each ascended variant is
  blended with the ascended anchor once.

The training objective is the unit-weighted sum of three cross-entropies
(one per stream) and two KL terms pulling each variant's prediction
distribution toward the original's.  The outer Adam step updates every
parameter: encoder, head, and the attention projections.

The ascent loop maximizes the plain episode cross-entropy with respect
to the images (support and query jointly): x <- x + beta * grad.  The
raw gradient is used (no sign or normalization), parameters are frozen
for its whole duration, and each iterate is detached, so ascent can
never leak gradients into the model.  beta = 0 or t_max = 0 return the
input bit for bit.

Baseline mode trains the same encoder and head on the anchor
cross-entropy alone; no variants, attention, ascent, or random
convolution anywhere.  Both modes consume identical episode streams for
a given seed, so baseline/treatment comparisons are paired.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .attention import attention_params_from, mutual_attention
from .augment import FILTER_POOL, AugmentedEpisode, build_augmented_episode, random_conv
from .episodes import ImagePool, sample_episode
from .model import (
    EncoderConfig,
    cross_entropy,
    episode_logits_stacked,
    init_params,
    kl_divergence,
    predict_episode,
    prediction_distribution,
)
from .rng import Rng
from .tensor import ParamSet, Tensor

METHODS = ("fap", "baseline")


@dataclass(frozen=True)
class TrainConfig:
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
    head: str = "proto"
    method: str = "fap"
    val_every: int = 200
    val_episodes: int = 200
    val_query: int = 16
    relation_hidden: int = 64
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.way < 2 or self.shot < 1 or self.query < 1:
            raise ValueError("way must be >= 2 and shot/query >= 1")
        if self.episodes_per_epoch < 1 or self.epochs < 1:
            raise ValueError("episodes_per_epoch and epochs must be >= 1")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.beta < 0 or self.t_max < 0:
            raise ValueError("beta and t_max must be >= 0")
        if not 0.0 <= self.branch_p <= 1.0:
            raise ValueError(f"branch_p must be in [0, 1], got {self.branch_p}")
        if self.val_every < 1 or self.val_episodes < 0 or self.val_query < 1:
            raise ValueError("bad validation settings")

    @property
    def total_episodes(self) -> int:
        return self.episodes_per_epoch * self.epochs


class Adam:
    """Adam with bias correction; updates parameter data in place."""

    def __init__(
        self,
        params: ParamSet,
        alpha: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.alpha = float(alpha)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                raise ValueError(f"adam: no gradient for parameter {name}")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.alpha * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass(frozen=True)
class EpisodeContext:
    """Everything a stacked episode loss needs besides the images."""

    encoder: EncoderConfig
    head: str
    n_way: int
    n_support: int
    support_y: np.ndarray
    query_y: np.ndarray


def stacked_ce(x: Tensor, params: Mapping[str, Tensor], ctx: EpisodeContext) -> Tensor:
    logits = episode_logits_stacked(
        x, params, ctx.encoder, ctx.head, ctx.support_y, ctx.n_support, ctx.n_way
    )
    return cross_entropy(logits, ctx.query_y)


def _frozen_view(params) -> dict[str, Tensor]:
    if isinstance(params, ParamSet):
        return params.frozen()
    return {name: (t.detach() if t.requires_grad else t) for name, t in params.items()}


def ascend_step(x: Tensor, params, ctx: EpisodeContext, beta: float) -> Tensor:
    """One gradient-ascent step on the episode images.

    Maximizes the plain cross-entropy (no KL terms) with respect to the
    stacked support-and-query tensor; parameters are always treated as
    frozen.  Returns a detached tensor.
    """
    beta = float(beta)
    if beta == 0.0:
        return x.detach()
    frozen = _frozen_view(params)
    leaf = T.tensor(x.data, requires_grad=True)
    stacked_ce(leaf, frozen, ctx).backward()
    return T.tensor(leaf.data + beta * leaf.grad)


def ascend(x: Tensor, params, ctx: EpisodeContext, beta: float, t_max: int) -> Tensor:
    """t_max ascent steps; bit-for-bit identity when beta or t_max is 0."""
    if float(beta) == 0.0 or int(t_max) == 0:
        return x.detach()
    cur = x.detach()
    for _ in range(int(t_max)):
        cur = ascend_step(cur, params, ctx, beta)
    return cur


@dataclass
class LossParts:
    total: float
    ce_anchor: float
    ce_zeros: float
    ce_randn: float
    kl_zeros: float
    kl_randn: float


@dataclass
class EpisodeTrace:
    """What one training step actually did; the stats tests read these."""

    branch: str  # "A" serial, "B" parallel, "-" baseline
    filter_sizes: list[int]
    ascended: list[str]


def fap_episode_loss(
    params: ParamSet, ctx: EpisodeContext, aug: AugmentedEpisode, cfg: TrainConfig, rng: Rng
) -> tuple[Tensor, LossParts, EpisodeTrace]:
    """Loss tensor, logged parts, and trace for one treatment episode."""
    wq, wk, wv = attention_params_from(params)
    branch_b = bool(rng.child("branch").uniform() < cfg.branch_p)

    if not branch_b:  # serial branch
        x0_arr, k0 = random_conv(aug.x, rng.child("rc", 0), cfg.filter_pool)
        xz_arr, kz = random_conv(aug.x_zeros, rng.child("rc", 1), cfg.filter_pool)
        xr_arr, kr = random_conv(aug.x_randn, rng.child("rc", 2), cfg.filter_pool)
        x0 = T.tensor(x0_arr)
        vz = mutual_attention(x0, T.tensor(xz_arr), wq, wk, wv)
        vr = mutual_attention(x0, T.tensor(xr_arr), wq, wk, wv)
        anchor = ascend(x0, params, ctx, cfg.beta, cfg.t_max)
        vz = mutual_attention(anchor, vz, wq, wk, wv)
        vr = mutual_attention(anchor, vr, wq, wk, wv)
        trace = EpisodeTrace(branch="A", filter_sizes=[k0, kz, kr], ascended=["anchor"])
    else:  # parallel branch
        anchor = ascend(T.tensor(aug.x), params, ctx, cfg.beta, cfg.t_max)
        az = ascend(T.tensor(aug.x_zeros), params, ctx, cfg.beta, cfg.t_max)
        ar = ascend(T.tensor(aug.x_randn), params, ctx, cfg.beta, cfg.t_max)
        vz = mutual_attention(anchor, az, wq, wk, wv)
        vr = mutual_attention(anchor, ar, wq, wk, wv)
        trace = EpisodeTrace(
            branch="B", filter_sizes=[], ascended=["anchor", "zeros", "randn"]
        )

    logits0 = episode_logits_stacked(
        anchor, params, ctx.encoder, ctx.head, ctx.support_y, ctx.n_support, ctx.n_way
    )
    logits_z = episode_logits_stacked(
        vz, params, ctx.encoder, ctx.head, ctx.support_y, ctx.n_support, ctx.n_way
    )
    logits_r = episode_logits_stacked(
        vr, params, ctx.encoder, ctx.head, ctx.support_y, ctx.n_support, ctx.n_way
    )
    ce0 = cross_entropy(logits0, ctx.query_y)
    cez = cross_entropy(logits_z, ctx.query_y)
    cer = cross_entropy(logits_r, ctx.query_y)
    p0 = prediction_distribution(logits0)
    klz = kl_divergence(prediction_distribution(logits_z), p0)
    klr = kl_divergence(prediction_distribution(logits_r), p0)
    total = T.add(T.add(T.add(T.add(ce0, cez), cer), klz), klr)
    parts = LossParts(
        total=total.item(),
        ce_anchor=ce0.item(),
        ce_zeros=cez.item(),
        ce_randn=cer.item(),
        kl_zeros=klz.item(),
        kl_randn=klr.item(),
    )
    return total, parts, trace


def baseline_episode_loss(
    params: ParamSet, ctx: EpisodeContext, x: np.ndarray
) -> tuple[Tensor, LossParts, EpisodeTrace]:
    """Plain episodic cross-entropy on the original images."""
    loss = stacked_ce(T.tensor(x), params, ctx)
    parts = LossParts(
        total=loss.item(), ce_anchor=loss.item(),
        ce_zeros=0.0, ce_randn=0.0, kl_zeros=0.0, kl_randn=0.0,
    )
    return loss, parts, EpisodeTrace(branch="-", filter_sizes=[], ascended=[])


@dataclass
class EpisodeRecord:
    episode: int
    branch: str
    seed: int
    parts: LossParts


@dataclass
class ValRecord:
    episode: int
    accuracy: float
    ci95: float


@dataclass
class TrainResult:
    config: TrainConfig
    params: ParamSet
    best_params: ParamSet
    best_val_accuracy: float
    best_val_episode: int
    history: list[EpisodeRecord]
    val_history: list[ValRecord]


@dataclass
class EvalReport:
    """Meta-test accuracy in percent with its 95% normal CI half-width."""

    accuracy: float
    ci95: float
    n_episodes: int
    episode_accuracy: np.ndarray

    @staticmethod
    def from_episode_accuracy(acc: np.ndarray) -> "EvalReport":
        acc = np.asarray(acc, dtype=np.float64)
        n = acc.size
        if n == 0:
            raise ValueError("eval report: no episodes")
        mean = float(acc.mean()) * 100.0
        sd = float(acc.std(ddof=1)) * 100.0 if n > 1 else 0.0
        return EvalReport(
            accuracy=mean, ci95=1.96 * sd / math.sqrt(n), n_episodes=n, episode_accuracy=acc
        )


def evaluate(
    params,
    enc_cfg: EncoderConfig,
    head: str,
    pool: ImagePool,
    way: int,
    shot: int,
    query: int,
    n_episodes: int,
    rng: Rng,
    transform: Callable[[np.ndarray, Rng], np.ndarray] | None = None,
) -> EvalReport:
    """Meta-test protocol: plain encode-and-score over sampled episodes.

    Episode i is drawn from ``rng.child("episode", i)``, so two calls
    with the same stream see identical episodes regardless of model or
    transform; that is what pairs comparisons.  ``transform`` is applied
    to the episode's stacked images (support and query alike) before
    prediction.
    """
    frozen = _frozen_view(params)
    accs = np.zeros(int(n_episodes))
    for i in range(int(n_episodes)):
        erng = rng.child("episode", i)
        ep = sample_episode(pool, way, shot, query, erng.child("sample"))
        sx, qx = ep.support_x, ep.query_x
        if transform is not None:
            x = transform(ep.stacked(), erng.child("transform"))
            sx, qx = x[: len(sx)], x[len(sx) :]
        pred = predict_episode(frozen, enc_cfg, head, sx, ep.support_y, qx, ep.n_way)
        accs[i] = float(np.mean(pred == ep.query_y))
    return EvalReport.from_episode_accuracy(accs)


def train(
    cfg: TrainConfig,
    pools: Mapping[str, ImagePool],
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run the full episodic loop and keep the best-validation parameters."""
    rng = Rng(cfg.seed, "train")
    params = init_params(
        cfg.encoder,
        cfg.head,
        rng.child("init"),
        with_attention=(cfg.method == "fap"),
        relation_hidden=cfg.relation_hidden,
    )
    opt = Adam(params, alpha=cfg.alpha)
    history: list[EpisodeRecord] = []
    val_history: list[ValRecord] = []
    best_state = params.state_dict()
    best_acc = -1.0
    best_episode = 0

    for i in range(cfg.total_episodes):
        erng = rng.child("episode", i)
        ep = sample_episode(pools["train"], cfg.way, cfg.shot, cfg.query, erng.child("sample"))
        ctx = EpisodeContext(
            encoder=cfg.encoder,
            head=cfg.head,
            n_way=ep.n_way,
            n_support=len(ep.support_y),
            support_y=ep.support_y,
            query_y=ep.query_y,
        )
        if cfg.method == "fap":
            aug = build_augmented_episode(
                ep.stacked(), ep.support_y, ep.query_y, ep.n_way, erng.child("aug")
            )
            loss, parts, trace = fap_episode_loss(params, ctx, aug, cfg, erng)
        else:
            loss, parts, trace = baseline_episode_loss(params, ctx, ep.stacked())
        params.zero_grad()
        loss.backward()
        opt.step()
        history.append(
            EpisodeRecord(episode=i, branch=trace.branch, seed=erng.key64(), parts=parts)
        )

        if cfg.val_episodes > 0 and (i + 1) % cfg.val_every == 0:
            rep = evaluate(
                params, cfg.encoder, cfg.head, pools["val"],
                cfg.way, cfg.shot, cfg.val_query, cfg.val_episodes,
                rng.child("val", i),
            )
            val_history.append(ValRecord(episode=i + 1, accuracy=rep.accuracy, ci95=rep.ci95))
            if rep.accuracy > best_acc:
                best_acc = rep.accuracy
                best_episode = i + 1
                best_state = params.state_dict()
            if log is not None:
                log(
                    f"episode {i + 1}/{cfg.total_episodes} "
                    f"val_acc {rep.accuracy:.2f} ci {rep.ci95:.2f} best {best_acc:.2f}"
                )

    best_params = params.copy()
    if best_acc < 0:  # no validation ran; final weights are the best known
        best_acc = float("nan")
        best_episode = cfg.total_episodes
    else:
        best_params.load_state(best_state)
    return TrainResult(
        config=cfg,
        params=params,
        best_params=best_params,
        best_val_accuracy=best_acc,
        best_val_episode=best_episode,
        history=history,
        val_history=val_history,
    )
