"""``omnimvs`` command line: generate, estimate, train, eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .classic import SgmParams, omni_zncc_cost, sgm, stitch_estimate, winner_take_all
from .config import METHODS, PROFILES, RunConfig, resolve
from .evaluation import (
    EvaluationError,
    average_reports,
    evaluate,
    export_error_map,
    format_table,
    index_difference,
    reports_json,
)
from .geometry import GeometryError, SweepGrid
from .io import FormatError, to_uint8, write_blob, write_pfm, write_pgm
from .network import (
    Augmentation,
    ConfigError,
    Frame,
    OmniMVSModel,
    Trainer,
    normalize_image,
    predict,
)
from .sweeping import build_lookup
from .synthdata import SceneError, generate_corpus, load_corpus, read_frame

logger = logging.getLogger("omnimvs")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INVARIANT = 4


class DataError(RuntimeError):
    """Input data is missing, malformed or inconsistent with the configuration."""


class InvariantError(RuntimeError):
    """An internal consistency check failed."""


# ---------------------------------------------------------------- helpers

def _corpus(path):
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise DataError(f"{path}: not a generated corpus (manifest.json missing)")
    return load_corpus(path)


def _check_grid(cfg: RunConfig, grid: SweepGrid) -> SweepGrid:
    """Corpus grid unless the user asked for a different one explicitly."""
    if cfg.grid is None and cfg.dmax is None:
        return grid
    want = cfg.sweep_grid()
    if (want.height, want.width) != (grid.height, grid.width):
        raise DataError(f"grid {cfg.grid} does not match the corpus grid "
                        f"{grid.height}x{grid.width}x{grid.num_spheres}")
    return want


def _network_frame(rig, data) -> Frame:
    images = [normalize_image(img, cam.fov_mask()) for img, cam in zip(data.images, rig)]
    return Frame(images, np.asarray(data.index, dtype=np.float64), data.frame_id)


def _load_model(cfg: RunConfig, grid: SweepGrid, rig) -> OmniMVSModel:
    net_cfg = cfg.network_config(grid)
    model = OmniMVSModel.create(net_cfg)
    if cfg.checkpoint is None:
        raise ConfigError("method omnimvs needs --checkpoint")
    path = Path(cfg.checkpoint)
    if not path.exists():
        raise DataError(f"checkpoint {path} not found")
    ckpt = ad.load_checkpoint(path)
    if ckpt["config_hash"] != net_cfg.hash():
        raise DataError(f"checkpoint {path} was trained for a different rig/grid/network "
                        f"(hash {ckpt['config_hash']} != {net_cfg.hash()})")
    if ckpt["state"].get("rig_hash") not in (None, rig.hash()):
        raise DataError(f"checkpoint {path} was trained with a different rig")
    model.load_arrays(ckpt["param"], ckpt["buffer"])
    return model


def _index_pgm(index, num_spheres: int) -> np.ndarray:
    scaled = np.where(np.isfinite(index), index, 0.0) / max(num_spheres - 1, 1)
    return to_uint8(scaled)


# ---------------------------------------------------------------- generate

def cmd_generate(cfg: RunConfig) -> int:
    rig, grid = cfg.load_rig(), cfg.sweep_grid()
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from exc
    generate_corpus(out, cfg.frames, cfg.seed, rig, grid, cfg.scene_params())
    print(f"generate: {cfg.frames} frames -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- estimate

def estimate_frame(cfg: RunConfig, rig, grid: SweepGrid, data, table=None, model=None):
    """Index map (NaN = no estimate) and the cost volume when the method has one."""
    method = cfg.method
    if method in ("zncc-wta", "zncc-sgm"):
        images = [np.asarray(img, np.float64) / 255.0 for img in data.images]
        cost = omni_zncc_cost(images, table, cfg.patch)
        if method == "zncc-sgm":
            cost = sgm(cost, SgmParams(cfg.p1, cfg.p2))
        index, _ = winner_take_all(cost)
        return index, cost.data
    if method == "stitch":
        images = [np.asarray(img, np.float64) / 255.0 for img in data.images]
        index, _ = stitch_estimate(rig, images, grid, cfg.profile_values.pinhole_size,
                                   patch=cfg.patch)
        return index, None
    frame = _network_frame(rig, data)
    index = predict(model, frame.images, table).astype(np.float64)
    if not np.all((index >= -1e-4) & (index <= grid.num_spheres - 1 + 1e-4)):
        raise InvariantError("softargmin output left the index range")
    return index, None


def cmd_estimate(cfg: RunConfig, data_dir: str, frame_ids=None) -> int:
    rig, grid, _, ids = _corpus(data_dir)
    grid = _check_grid(cfg, grid)
    if frame_ids:
        missing = sorted(set(frame_ids) - set(ids))
        if missing:
            raise DataError(f"frames not in corpus: {missing}")
        ids = [i for i in ids if i in frame_ids]
    table = model = None
    if cfg.method == "omnimvs":
        model = _load_model(cfg, grid, rig)
        table = build_lookup(rig, grid, model.config.source_scale)
    elif cfg.method != "stitch":
        table = build_lookup(rig, grid)
    out = Path(cfg.out)
    for fid in ids:
        data = read_frame(Path(data_dir) / fid)
        t0 = time.perf_counter()
        index, cost = estimate_frame(cfg, rig, grid, data, table, model)
        dest = out / fid
        dest.mkdir(parents=True, exist_ok=True)
        write_pfm(dest / "index.pfm", index.astype(np.float32))
        write_pgm(dest / "index.pgm", _index_pgm(index, grid.num_spheres))
        if cfg.dump_cost and cost is not None:
            write_blob(dest / "cost.bin", {"shape": list(cost.shape), "method": cfg.method},
                       [cost.astype(np.float32)])
        if cfg.plots:
            from .plotting import index_figure
            index_figure(dest / "index.png", index, data.index, grid.num_spheres, grid,
                         f"{fid} ({cfg.method})")
        logger.info("%s: %s in %.2fs", fid, cfg.method, time.perf_counter() - t0)
        print(f"estimate: {fid} method={cfg.method} -> {dest / 'index.pfm'}")
    (out / "estimate.json").write_text(json.dumps(
        {"method": cfg.method, "frames": ids, "config": cfg.to_dict()}, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- train

def _save(path, trainer: Trainer, cfg_hash: str, state: dict):
    model = trainer.model
    ad.save_checkpoint(path, model.state_arrays(), model.config.to_dict(), cfg_hash,
                       model.buffers, trainer.optimizer.velocity, state)


def cmd_train(cfg: RunConfig, data_dir: str) -> int:
    rig, grid, _, ids = _corpus(data_dir)
    grid = _check_grid(cfg, grid)
    if cfg.overfit is not None:
        if not 1 <= cfg.overfit <= len(ids):
            raise ConfigError(f"--overfit {cfg.overfit} but the corpus has {len(ids)} frames")
        ids = ids[:cfg.overfit]
    net_cfg = cfg.network_config(grid)
    model = OmniMVSModel.create(net_cfg)
    augment = Augmentation(permute=cfg.permute and cfg.overfit is None,
                           max_yaw_cols=cfg.yaw_cols)
    trainer = Trainer(model, rig, cfg.base_lr(), cfg.momentum, augment, cfg.seed)
    frames = [_network_frame(rig, read_frame(Path(data_dir) / fid)) for fid in ids]
    for f in frames:
        if f.gt_index.shape != grid.shape:
            raise DataError(f"{f.frame_id}: GT shape {f.gt_index.shape} != grid {grid.shape}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "loss.txt"
    step = 0
    if cfg.resume:
        ckpt = ad.load_checkpoint(cfg.resume)
        if ckpt["config_hash"] != net_cfg.hash():
            raise DataError(f"{cfg.resume}: checkpoint does not match this network config")
        model.load_arrays(ckpt["param"], ckpt["buffer"])
        for k, v in ckpt["velocity"].items():
            trainer.optimizer.velocity[k][...] = v
        step = int(ckpt["state"]["step"])
        trainer.rng.bit_generator.state = ckpt["state"]["rng"]
        logger.info("resumed from %s at step %d", cfg.resume, step)
    elif log_path.exists():
        log_path.unlink()
    total = cfg.steps if cfg.steps is not None else cfg.epochs * len(frames)
    state = lambda: {"step": step, "rig_hash": rig.hash(),  # noqa: E731
                     "rng": trainer.rng.bit_generator.state}
    with log_path.open("a") as log:
        while step < total:
            epoch = step // len(frames)
            trainer.optimizer.lr = cfg.lr_at(epoch)
            frame = frames[step % len(frames)]
            loss = trainer.step(frame)
            if not np.isfinite(loss):
                raise InvariantError(f"loss became {loss} at step {step}")
            log.write(f"{step} {loss:.8g} {trainer.optimizer.lr:.6g}\n")
            log.flush()
            step += 1
            if step % cfg.checkpoint_every == 0:
                _save(out / f"checkpoint_{step:06d}.omv", trainer, net_cfg.hash(), state())
            logger.info("step %d loss %.5f", step, loss)
    _save(out / "checkpoint.omv", trainer, net_cfg.hash(), state())
    steps, losses = read_loss_log(log_path)
    if cfg.plots and steps:
        from .plotting import loss_figure
        loss_figure(out / "loss.png", steps, losses)
    if losses:
        print(f"train: {len(losses)} steps, loss {losses[0]:.4f} -> {losses[-1]:.4f}; "
              f"checkpoint {out / 'checkpoint.omv'}")
    return EXIT_OK


def read_loss_log(path):
    steps, losses = [], []
    for line in Path(path).read_text().splitlines():
        s, loss, _ = line.split()
        steps.append(int(s))
        losses.append(float(loss))
    return steps, losses


# ---------------------------------------------------------------- eval

def cmd_eval(cfg: RunConfig, pred_dir: str, data_dir: str) -> int:
    _, grid, _, ids = _corpus(data_dir)
    pred_dir = Path(pred_dir)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    reports, unmatched = {}, []
    from .io import read_pfm
    for fid in ids:
        path = pred_dir / fid / "index.pfm"
        if not path.exists():
            unmatched.append(fid)
            continue
        pred = read_pfm(path)
        gt = read_frame(Path(data_dir) / fid).index
        diff = index_difference(pred, gt)
        reports[fid] = evaluate(pred, gt, grid.num_spheres)
        export_error_map(out / f"{fid}_error", diff / grid.num_spheres * 100.0, vmax=10.0)
        if cfg.plots:
            from .plotting import error_figure
            error_figure(out / f"{fid}_error.png", diff / grid.num_spheres * 100.0, grid,
                         f"{fid} percent error")
    for fid in unmatched:
        logger.warning("no prediction for frame %s", fid)
    if not reports:
        raise DataError(f"no predictions in {pred_dir} match frames of {data_dir}")
    avg = average_reports(reports.values())
    rows = list(reports.items()) + [("average", avg)]
    table = format_table(rows)
    (out / "report.txt").write_text(table)
    (out / "report.json").write_text(reports_json(
        reports, avg, {"unmatched": unmatched, "num_spheres": grid.num_spheres}))
    if cfg.plots:
        from .plotting import metrics_figure
        metrics_figure(out / "mae.png", list(reports), [r.mae for r in reports.values()])
    print("---- report ----")
    print(table, end="")
    print("---- end report ----")
    if unmatched:
        print(f"warning: {len(unmatched)} unmatched frame(s): {', '.join(unmatched)}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--profile", choices=sorted(PROFILES))
    common.add_argument("--config", help="JSON file with RunConfig fields (flags win)")
    common.add_argument("--rig", help="rig JSON file (default: the profile's square rig)")
    common.add_argument("--grid", help="sweep grid as HxWxN")
    common.add_argument("--dmax", type=float, help="largest inverse depth (1/m)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--no-plots", dest="plots", action="store_const", const=False)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="omnimvs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="render a synthetic corpus")
    gen.add_argument("--frames", type=int)

    est = sub.add_parser("estimate", parents=[common], help="estimate index maps")
    est.add_argument("--data", required=True, help="corpus directory")
    est.add_argument("--frame", action="append", help="frame id (repeatable; default all)")
    est.add_argument("--method", choices=METHODS)
    est.add_argument("--checkpoint")
    est.add_argument("--patch", type=int)
    est.add_argument("--p1", type=float)
    est.add_argument("--p2", type=float)
    est.add_argument("--dump-cost", action="store_const", const=True)

    tr = sub.add_parser("train", parents=[common], help="train the network")
    tr.add_argument("--data", required=True, help="corpus directory")
    tr.add_argument("--lr", type=float, help="learning rate (default: the profile's)")
    tr.add_argument("--lr-drop-epoch", type=int)
    tr.add_argument("--lr-drop-factor", type=float)
    tr.add_argument("--momentum", type=float)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--steps", type=int)
    tr.add_argument("--overfit", type=int, help="train on the first K frames only")
    tr.add_argument("--no-permute", dest="permute", action="store_const", const=False)
    tr.add_argument("--yaw-cols", type=int, help="max random yaw shift in grid columns")
    tr.add_argument("--checkpoint-every", type=int)
    tr.add_argument("--resume")

    ev = sub.add_parser("eval", parents=[common], help="score predictions against GT")
    ev.add_argument("--pred", required=True, help="directory written by estimate")
    ev.add_argument("--data", required=True, help="corpus directory")
    return parser


_NOT_CONFIG = {"command", "config", "verbose", "data", "frame", "pred"}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    try:
        cfg = resolve(flags, args.config)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "estimate":
            return cmd_estimate(cfg, args.data, args.frame)
        if args.command == "train":
            return cmd_train(cfg, args.data)
        return cmd_eval(cfg, args.pred, args.data)
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, SceneError, EvaluationError, FileNotFoundError,
            KeyError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantError, AssertionError, FloatingPointError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
