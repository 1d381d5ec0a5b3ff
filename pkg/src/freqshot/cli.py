"""Command line entry points.

Subcommands:

    train   run the episodic loop, write history + best checkpoint
    eval    score a checkpoint on one pool (plain meta-test accuracy)
    robust  score a checkpoint under every input variant (paired)
    probe   compare two checkpoints under band-limited inputs (paired)
    dwt     decompose one image into subband pictures, report exactness

Every run writes into a directory named after the config's run_name
(never a timestamp), so rerunning the same command overwrites the same
files with identical bytes.  Exit codes: 0 success, 1 usage or
configuration problems, 2 numeric failure at runtime.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, build_pools, config_hash, load_config
from .evaluation import (
    EVAL_HEADER,
    HISTORY_HEADER,
    PROBE_HEADER,
    ROBUSTNESS_HEADER,
    evaluate_variant,
    history_rows,
    probe_report,
    probe_rows,
    robustness_report,
    robustness_rows,
    write_csv,
    write_json,
)
from .model import EncoderConfig, load_checkpoint, save_checkpoint
from .rng import Rng
from .tensor import NumericError, ParamSet
from .trainer import train
from .wavelet import dwt2, idwt2

VAL_HEADER = ("episode", "accuracy", "ci95")


class _Parser(argparse.ArgumentParser):
    # usage mistakes are exit code 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="freqshot", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"freqshot {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, checkpoint=False):
        sp.add_argument("--config", required=True, help="run config JSON")
        sp.add_argument("--out", required=True, help="parent directory for the run dir")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, help="trained model file")
            sp.add_argument("--episodes", type=int, default=None,
                            help="override eval.episodes")
            sp.add_argument("--workers", type=int, default=1,
                            help="worker processes for episode evaluation")

    sp = sub.add_parser("train", help="train one model")
    common(sp)
    sp.add_argument("--method", choices=("fap", "baseline"), default=None,
                    help="override config method")
    sp.add_argument("--run-name", default=None, help="override config run_name")
    sp.add_argument("--quiet", action="store_true", help="suppress progress lines")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="meta-test accuracy on one pool")
    common(sp, checkpoint=True)
    sp.add_argument("--pool", default="test", choices=("train", "val", "test", "novel"))
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("robust", help="accuracy under each input variant")
    common(sp, checkpoint=True)
    sp.add_argument("--pool", default="test", choices=("train", "val", "test", "novel"))
    sp.set_defaults(func=cmd_robust)

    sp = sub.add_parser("probe", help="band-limited comparison of two models")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--checkpoint-baseline", required=True)
    sp.add_argument("--checkpoint-fap", required=True)
    sp.add_argument("--episodes", type=int, default=None)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--pool", default="novel", choices=("train", "val", "test", "novel"))
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("dwt", help="decompose one image into subbands")
    sp.add_argument("--input", required=True, help="image file with even dimensions")
    sp.add_argument("--out", required=True, help="directory for subband images")
    sp.set_defaults(func=cmd_dwt)
    return p


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _finish_run(out_dir: Path, command: str, cfg_digest: str | None, t0: float) -> None:
    files = sorted(
        f.name for f in out_dir.iterdir() if f.is_file() and f.name != "manifest.json"
    )
    manifest = {
        "command": command,
        "package": "freqshot",
        "version": __version__,
        "config_sha256": cfg_digest,
        "files": {name: _sha256(out_dir / name) for name in files},
        "wall_time_s": time.monotonic() - t0,
    }
    write_json(out_dir / "manifest.json", manifest)


def _make_run_dir(parent: str, name: str) -> Path:
    out = Path(parent) / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "method", None) is not None:
        cfg = dataclasses.replace(cfg, method=args.method)
    if getattr(args, "run_name", None) is not None:
        cfg = dataclasses.replace(cfg, run_name=args.run_name)
    if getattr(args, "episodes", None) is not None:
        if args.episodes < 1:
            raise ConfigError(f"--episodes must be >= 1, got {args.episodes}")
        cfg = dataclasses.replace(cfg, eval_episodes=args.episodes)
    return cfg


def _load_model(path) -> tuple[ParamSet, EncoderConfig, str, dict]:
    params, meta = load_checkpoint(path)
    try:
        enc = EncoderConfig.from_dict(meta["encoder"])
        head = str(meta["head"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"checkpoint {path}: missing or bad model metadata ({e})") from e
    return params, enc, head, meta


def _pool_or_die(pools, name: str):
    if name not in pools:
        raise ConfigError(f"dataset has no {name!r} pool")
    return pools[name]


def cmd_train(args) -> int:
    t0 = time.monotonic()
    cfg = _load_run_config(args)
    pools = build_pools(cfg.dataset)
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))
    res = train(cfg.train_config(), pools, log=log)

    out_dir = _make_run_dir(args.out, cfg.run_name)
    write_json(out_dir / "effective_config.json", cfg.to_dict())
    write_csv(out_dir / "history.csv", HISTORY_HEADER, history_rows(res.history))
    write_csv(out_dir / "report.csv", VAL_HEADER,
              [[v.episode, v.accuracy, v.ci95] for v in res.val_history])
    write_json(out_dir / "report.json", {
        "run_name": cfg.run_name,
        "method": cfg.method,
        "head": cfg.head,
        "seed": cfg.seed,
        "train_episodes": len(res.history),
        "best_val_accuracy": res.best_val_accuracy,
        "best_val_episode": res.best_val_episode,
        "val_curve": [
            {"episode": v.episode, "accuracy": v.accuracy, "ci95": v.ci95}
            for v in res.val_history
        ],
    })
    save_checkpoint(out_dir / "checkpoint.bin", res.best_params, meta={
        "encoder": cfg.encoder.to_dict(),
        "head": cfg.head,
        "method": cfg.method,
        "seed": cfg.seed,
        "run_name": cfg.run_name,
        "best_val_accuracy": res.best_val_accuracy,
        "best_val_episode": res.best_val_episode,
        "version": __version__,
    })
    _finish_run(out_dir, "train", config_hash(cfg), t0)
    print(f"train {cfg.run_name}: {len(res.history)} episodes, "
          f"best val {res.best_val_accuracy:.2f} at episode {res.best_val_episode} "
          f"-> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    t0 = time.monotonic()
    cfg = _load_run_config(args)
    params, enc, head, _ = _load_model(args.checkpoint)
    pools = build_pools(cfg.dataset)
    pool = _pool_or_die(pools, args.pool)
    rep = evaluate_variant(
        params, enc, head, pool, cfg.way, cfg.shot, cfg.eval_query,
        cfg.eval_episodes, Rng(cfg.seed, "eval", args.pool), workers=args.workers,
    )
    out_dir = _make_run_dir(args.out, f"{cfg.run_name}-eval-{args.pool}")
    write_json(out_dir / "effective_config.json", cfg.to_dict())
    write_csv(out_dir / "report.csv", EVAL_HEADER,
              [[args.pool, "original", rep.accuracy, rep.ci95, rep.n_episodes]])
    write_json(out_dir / "report.json", {
        "run_name": cfg.run_name,
        "pool": args.pool,
        "accuracy": rep.accuracy,
        "ci95": rep.ci95,
        "n_episodes": rep.n_episodes,
    })
    _finish_run(out_dir, "eval", config_hash(cfg), t0)
    print(f"eval {cfg.run_name} on {args.pool}: "
          f"{rep.accuracy:.2f} +/- {rep.ci95:.2f} ({rep.n_episodes} episodes) -> {out_dir}")
    return 0


def cmd_robust(args) -> int:
    t0 = time.monotonic()
    cfg = _load_run_config(args)
    params, enc, head, _ = _load_model(args.checkpoint)
    pools = build_pools(cfg.dataset)
    pool = _pool_or_die(pools, args.pool)
    rep = robustness_report(
        params, enc, head, pool, cfg.way, cfg.shot, cfg.eval_query,
        cfg.eval_episodes, Rng(cfg.seed, "robust", args.pool),
        sigma=cfg.noise_sigma, workers=args.workers,
    )
    out_dir = _make_run_dir(args.out, f"{cfg.run_name}-robust-{args.pool}")
    write_json(out_dir / "effective_config.json", cfg.to_dict())
    write_csv(out_dir / "report.csv", ROBUSTNESS_HEADER, robustness_rows(rep))
    write_json(out_dir / "report.json", {
        "run_name": cfg.run_name,
        "pool": args.pool,
        "noise_sigma": cfg.noise_sigma,
        **rep.to_dict(),
    })
    _finish_run(out_dir, "robust", config_hash(cfg), t0)
    base = rep.row("original")
    print(f"robust {cfg.run_name} on {args.pool}: original "
          f"{base.accuracy:.2f} +/- {base.ci95:.2f} over {len(rep.rows)} variants -> {out_dir}")
    return 0


def cmd_probe(args) -> int:
    t0 = time.monotonic()
    cfg = _load_run_config(args)
    base_params, base_enc, base_head, _ = _load_model(args.checkpoint_baseline)
    fap_params, fap_enc, fap_head, _ = _load_model(args.checkpoint_fap)
    pools = build_pools(cfg.dataset)
    pool = _pool_or_die(pools, args.pool)
    rep = probe_report(
        {"baseline": (base_params, base_enc, base_head),
         "fap": (fap_params, fap_enc, fap_head)},
        pool, cfg.way, cfg.shot, cfg.eval_query, cfg.eval_episodes,
        Rng(cfg.seed, "probe", args.pool), workers=args.workers,
    )
    out_dir = _make_run_dir(args.out, f"{cfg.run_name}-probe-{args.pool}")
    write_json(out_dir / "effective_config.json", cfg.to_dict())
    write_csv(out_dir / "report.csv", PROBE_HEADER, probe_rows(rep))
    write_json(out_dir / "report.json", {
        "run_name": cfg.run_name,
        "pool": args.pool,
        **rep.to_dict(),
    })
    _finish_run(out_dir, "probe", config_hash(cfg), t0)
    bh = rep.row("baseline", "high_only").accuracy
    fh = rep.row("fap", "high_only").accuracy
    print(f"probe {cfg.run_name} on {args.pool}: high-only baseline {bh:.2f} "
          f"vs fap {fh:.2f} -> {out_dir}")
    return 0


def _to_png(arr: np.ndarray, path: Path) -> None:
    from PIL import Image

    lo, hi = float(arr.min()), float(arr.max())
    scaled = np.zeros_like(arr) if hi == lo else (arr - lo) / (hi - lo)
    Image.fromarray((scaled * 255.0).round().astype(np.uint8)).save(path)


def cmd_dwt(args) -> int:
    from PIL import Image

    t0 = time.monotonic()
    path = Path(args.input)
    if not path.is_file():
        raise ConfigError(f"dwt: {path} is not a file")
    try:
        img = Image.open(path).convert("L")
    except OSError as e:
        raise ConfigError(f"dwt: cannot read {path}: {e}") from e
    x = np.asarray(img, dtype=np.float64) / 255.0
    if x.shape[0] % 2 or x.shape[1] % 2:
        raise ConfigError(f"dwt: image dimensions must be even, got {x.shape}")
    bands = dwt2(x)
    recon = idwt2(bands)
    err = float(np.max(np.abs(recon - x)))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, band in (("ll", bands.ll), ("lh", bands.lh), ("hl", bands.hl),
                       ("hh", bands.hh), ("recon", recon)):
        _to_png(band, out_dir / f"{name}.png")
    write_json(out_dir / "report.json", {
        "input": str(path),
        "shape": list(x.shape),
        "reconstruction_max_abs_error": err,
        "subband_shape": list(bands.ll.shape),
    })
    _finish_run(out_dir, "dwt", None, t0)
    print(f"dwt {path.name}: reconstruction max abs error {err:.3e} -> {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as e:
        print(f"freqshot: numeric failure: {e}", file=sys.stderr)
        return 2
    except ConfigError as e:
        print(f"freqshot: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"freqshot: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
