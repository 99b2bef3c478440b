"""Command-line driver: ``gridtd run <task>`` and ``gridtd synth``.

Configuration comes from an optional INI-style file (``key = value`` lines
under ``[section]`` headers; section names are only for readability) and is
overridden by command-line flags.  Everything is validated before the output
directory is touched, so a bad config leaves nothing behind.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import bench, plotting
from .admm import SolverConfig, admm_run, write_history_csv
from .encoding import EncoderConfig, default_n_max
from .errors import DivergenceError, InvalidArgument, OutOfDomain
from .metrics import psnr, ssim
from .model import GridTDModel, ModelConfig
from .operators import (InpaintingOperator, SpectralSciOperator, VideoSciOperator,
                        make_bernoulli_masks, make_sampling_mask)
from .phantoms import make_scene, moving_square
from .tensor import read_gtd1, write_gtd1

log = logging.getLogger("gridtd")

TASKS = ("inpaint", "video-sci", "spectral-sci", "bench-dim", "bench-efficiency", "lipschitz-check")
EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


class ConfigError(Exception):
    """Field-level configuration problem (exit code 2)."""


@dataclass
class RunConfig:
    task: str = "inpaint"
    seed: int = 0
    out_dir: str = "gridtd-out"
    input: str = ""
    scene: str = ""
    dims: tuple = (32, 32, 8)
    sr: float = 0.1
    mask_p: float = 0.5
    shift_step: int = 2
    # encoder
    mode: str = "decomposed"
    levels: int = 8
    features: int = 2
    n_min: int = 4
    n_max: int = 0  # 0: largest dimension
    table_size: int = 2 ** 19
    hidden: int = 64
    inr_hidden: int = 32
    grid_init: float = 1e-4
    # solver
    affine: bool | None = None  # None: on for video-sci, off otherwise
    outer_iters: int = 100
    inner_steps: int = 50
    rho0: float = 1e-2
    kappa: float = 1.1
    lambda1: float = SolverConfig.lambda1
    lambda2: float = SolverConfig.lambda2
    lr_grid: float = 1e-2
    lr_net: float = 1e-3
    # benches
    bench_n: int = 100
    bench_dim: int = 3
    bench_iters: int = 300
    trials: int = 1000
    extra: dict = field(default_factory=dict)

    def encoder(self, D: int, shape) -> EncoderConfig:
        return EncoderConfig(mode=self.mode, D=D, L=self.levels, F=self.features, N_min=self.n_min,
                             N_max=self.n_max or max(self.n_min, default_n_max(shape)),
                             T=self.table_size)

    def use_affine(self) -> bool:
        return self.task == "video-sci" if self.affine is None else self.affine

    def solver(self) -> SolverConfig:
        return SolverConfig(outer_iters=self.outer_iters, inner_steps=self.inner_steps, rho0=self.rho0,
                            kappa=self.kappa, lambda1=self.lambda1, lambda2=self.lambda2,
                            use_affine=self.use_affine(), seed=self.seed, lr_grid=self.lr_grid,
                            lr_net=self.lr_net)

    def manifest(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "extra":
                continue
            v = getattr(self, f.name)
            if f.name == "dims":
                v = ",".join(map(str, v))
            elif f.name == "affine":
                v = "on" if self.use_affine() else "off"
            out[f.name] = v
        return out


# -- parsing ---------------------------------------------------------------------

_ALIASES = {"L": "levels", "F": "features", "N_min": "n_min", "N_max": "n_max", "T": "table_size",
            "out-dir": "out_dir", "outdir": "out_dir", "inner-steps": "inner_steps",
            "outer-iters": "outer_iters", "shift-step": "shift_step"}


def _convert(name: str, raw):
    kind = {f.name: f.type for f in fields(RunConfig)}.get(name)
    if kind is None:
        raise ConfigError(f"{name}: unknown setting")
    if raw is None:
        return None
    try:
        if name == "dims":
            dims = tuple(int(s) for s in str(raw).replace("x", ",").split(",") if s.strip())
            if not dims or min(dims) < 1:
                raise ValueError
            return dims
        if name == "affine":
            s = str(raw).strip().lower()
            if s in ("on", "true", "yes", "1"):
                return True
            if s in ("off", "false", "no", "0"):
                return False
            if s in ("auto", ""):
                return None
            raise ValueError
        if kind == "int":
            return int(str(raw).strip())
        if kind == "float":
            return float(str(raw).strip())
        return str(raw).strip()
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def read_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config: file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(p.read_text())
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from None
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            name = _ALIASES.get(key, key.replace("-", "_"))
            values[name] = _convert(name, raw)
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    task = args.task_pos or args.task or values.get("task") or "inpaint"
    values["task"] = task
    for name in ("seed", "out_dir", "input", "scene", "dims", "sr", "mode", "levels", "features",
                 "rho0", "kappa", "lambda1", "lambda2", "affine", "inner_steps", "outer_iters",
                 "hidden", "n_min", "n_max", "table_size", "bench_n", "bench_dim", "bench_iters",
                 "trials", "shift_step"):
        raw = getattr(args, name, None)
        if raw is not None:
            values[name] = _convert(name, raw)
    cfg = RunConfig(**{k: v for k, v in values.items() if not (k == "affine" and v is None)})
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Reject every constraint violation up front, naming the field."""
    if cfg.task not in TASKS:
        raise ConfigError(f"task: must be one of {', '.join(TASKS)}, got {cfg.task!r}")
    if cfg.seed < 0:
        raise ConfigError("seed: must be >= 0")
    if not 0.0 < cfg.sr <= 1.0:
        raise ConfigError("sr: must lie in (0, 1]")
    if not 0.0 < cfg.mask_p < 1.0:
        raise ConfigError("mask_p: must lie in (0, 1)")
    if cfg.input and not Path(cfg.input).is_file():
        raise ConfigError(f"input: file not found: {cfg.input}")
    if cfg.task in ("video-sci", "spectral-sci") and len(cfg.dims) != 3:
        raise ConfigError("dims: SCI tasks need three dimensions")
    if cfg.use_affine() and len(cfg.dims) != 3:
        raise ConfigError("affine: needs three-dimensional data")
    if cfg.hidden < 1 or cfg.inr_hidden < 1:
        raise ConfigError("hidden: must be >= 1")
    checks = [
        ("mode/levels/features/n_min/n_max/table_size", lambda: cfg.encoder(len(cfg.dims), cfg.dims)),
        ("solver", cfg.solver),
    ]
    for label, fn in checks:
        try:
            fn()
        except InvalidArgument as exc:
            raise ConfigError(f"{label}: {exc}") from None
    for name in ("bench_n", "bench_dim", "bench_iters", "trials"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name}: must be >= 1")


# -- tasks -----------------------------------------------------------------------

def _load_or_make(cfg: RunConfig, default_scene: str) -> np.ndarray:
    if cfg.input:
        try:
            data = read_gtd1(cfg.input)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"input: {exc}") from None
        if data.shape != tuple(cfg.dims):
            cfg.dims = data.shape
        return data
    scene = cfg.scene or default_scene
    try:
        return make_scene(scene, cfg.dims, seed=cfg.seed)
    except InvalidArgument as exc:
        raise ConfigError(f"scene: {exc}") from None


def build_model(cfg: RunConfig, shape) -> GridTDModel:
    mcfg = ModelConfig(cfg.encoder(len(shape), shape), hidden=cfg.hidden, affine=cfg.use_affine(),
                       inr_hidden=cfg.inr_hidden, grid_init=cfg.grid_init)
    return GridTDModel(mcfg, shape, seed=cfg.seed)


def _solve(cfg: RunConfig, op, Y, truth, out: Path, stem: str) -> dict:
    shape = tuple(truth.shape)
    scfg = cfg.solver()
    if len(shape) != 3 and (scfg.lambda1 or scfg.lambda2):
        # TV/SSTV are defined for (n1, n2, frames) data only
        scfg = SolverConfig(**{**scfg.__dict__, "lambda1": 0.0, "lambda2": 0.0})
    model = build_model(cfg, shape)
    t0 = time.perf_counter()
    X, history = admm_run(scfg, op, Y, model, reference=truth)
    elapsed = time.perf_counter() - t0
    write_gtd1(out / "result.gtd", X)
    write_gtd1(out / "reference.gtd", truth)
    write_history_csv(history, out / "history.csv")
    plotting.plot_history(history, out / "history.png", title=stem)
    metrics = {"task": cfg.task, "psnr": psnr(X, truth), "psnr_v": history[-1].psnr_v,
               "ssim": ssim(X, truth) if X.ndim >= 2 and min(X.shape[:2]) >= 2 else float("nan"),
               "outer_iters": len(history), "time_s": elapsed}
    _write_rows([metrics], out / "metrics.csv")
    if X.ndim in (2, 3):
        frames = plotting.export_frames(X, out, "recon", 0.0, 1.0)
        frames += plotting.export_frames(truth, out, "truth", 0.0, 1.0)
        _write_rows(frames, out / "frames.csv")
    return metrics


def task_inpaint(cfg: RunConfig, out: Path) -> dict:
    truth = _load_or_make(cfg, "smooth")
    mask = make_sampling_mask(truth.shape, cfg.sr, seed=cfg.seed)
    op = InpaintingOperator(mask)
    Y = op.forward(truth)
    write_gtd1(out / "mask.gtd", mask.astype(np.float64))
    return _solve(cfg, op, Y, truth, out, "inpainting")


def task_video_sci(cfg: RunConfig, out: Path) -> dict:
    truth = _load_or_make(cfg, "moving-square")
    masks = make_bernoulli_masks(truth.shape, cfg.mask_p, seed=cfg.seed)
    op = VideoSciOperator(masks)
    Y = op.forward(truth)
    write_gtd1(out / "masks.gtd", masks)
    write_gtd1(out / "measurement.gtd", Y)
    return _solve(cfg, op, Y, truth, out, "video SCI")


def task_spectral_sci(cfg: RunConfig, out: Path) -> dict:
    truth = _load_or_make(cfg, "spectral")
    mask2d = make_bernoulli_masks(truth.shape[:2] + (1,), cfg.mask_p, seed=cfg.seed)
    op = SpectralSciOperator(np.repeat(mask2d, truth.shape[2], axis=2), step=cfg.shift_step)
    Y = op.forward(truth)
    write_gtd1(out / "masks.gtd", op.masks)
    write_gtd1(out / "measurement.gtd", Y)
    return _solve(cfg, op, Y, truth, out, "spectral SCI")


def task_bench_dim(cfg: RunConfig, out: Path) -> dict:
    report = bench.dimension_robustness_experiment(seed=cfg.seed)
    report.write_csv(out / "dimension_robustness.csv")
    report.write_runs_csv(out / "dimension_robustness_runs.csv")
    plotting.plot_dimension_table(report.rows, out / "dimension_robustness.png")
    row = report.lookup(D=3, sr=0.1)
    return {"task": cfg.task, "psnr_dense_d3_sr0.1": row["psnr_dense"],
            "psnr_decomposed_d3_sr0.1": row["psnr_decomposed"]}


def task_bench_efficiency(cfg: RunConfig, out: Path) -> dict:
    report = bench.efficiency_benchmark(cfg.bench_n, cfg.bench_dim, cfg.bench_iters, cfg.seed)
    report.write_csv(out / "efficiency.csv")
    plotting.plot_efficiency(report.rows, out / "efficiency.png")
    dense, dec = report.lookup(mode="dense"), report.lookup(mode="decomposed")
    return {"task": cfg.task, "time_ratio": dense["time_s"] / dec["time_s"],
            "param_ratio": dense["params"] / dec["params"]}


def task_lipschitz(cfg: RunConfig, out: Path) -> dict:
    results = []
    for D in (1, 2, 3):
        for mode in ("dense", "decomposed"):
            model = bench.lipschitz_model(mode, D, cfg.seed)
            results.append(bench.lipschitz_empirical_test(model, cfg.trials, cfg.seed))
    rows = [{"mode": r.mode, "D": r.D, "trials": r.trials, "max_ratio": r.max_ratio,
             "bound": r.bound, "pass": int(r.passed)} for r in results]
    _write_rows(rows, out / "lipschitz.csv")
    plotting.plot_lipschitz(results, out / "lipschitz.png")
    return {"task": cfg.task, "all_pass": int(all(r.passed for r in results))}


TASK_FUNCS = {
    "inpaint": task_inpaint, "video-sci": task_video_sci, "spectral-sci": task_spectral_sci,
    "bench-dim": task_bench_dim, "bench-efficiency": task_bench_efficiency,
    "lipschitz-check": task_lipschitz,
}


# -- output helpers --------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(rows, path: Path) -> None:
    import csv
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})


def write_manifest(path: Path, entries: dict) -> None:
    path.write_text("".join(f"{k}={_fmt(v)}\n" for k, v in sorted(entries.items())))


# -- entry points ----------------------------------------------------------------

def cmd_run(args) -> int:
    try:
        cfg = build_config(args)
    except ConfigError as exc:
        print(f"gridtd: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out_dir)
    # the input file is read before creating anything so a bad file leaves no trace
    if cfg.input:
        try:
            read_gtd1(cfg.input)
        except (OSError, ValueError) as exc:
            print(f"gridtd: invalid configuration: input: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    manifest = {f"config.{k}": v for k, v in cfg.manifest().items()}
    t0 = time.perf_counter()
    try:
        metrics = TASK_FUNCS[cfg.task](cfg, out)
    except DivergenceError as exc:
        manifest.update({"status": "aborted", "error": str(exc).replace("\n", " ")})
        write_manifest(out / "manifest.txt", manifest)
        print(f"gridtd: run aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, InvalidArgument, OutOfDomain) as exc:
        print(f"gridtd: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest["status"] = "ok"
    manifest["wall_time_s"] = time.perf_counter() - t0
    manifest.update({f"result.{k}": v for k, v in metrics.items()})
    write_manifest(out / "manifest.txt", manifest)
    for k, v in metrics.items():
        print(f"{k}: {_fmt(v)}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        dims = _convert("dims", args.dims)
        if args.scene == "mask-bernoulli":
            data = make_bernoulli_masks(dims, args.p, seed=args.seed)
        elif args.scene == "mask-sampling":
            data = make_sampling_mask(dims, args.sr, seed=args.seed).astype(np.float64)
        elif args.scene == "moving-square":
            vel = tuple(int(v) for v in args.velocity.split(","))
            data = moving_square(dims, size=args.size, velocity=vel)
        else:
            data = make_scene(args.scene, dims, seed=args.seed)
    except (ConfigError, InvalidArgument, ValueError) as exc:
        print(f"gridtd: invalid scene spec: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_gtd1(out, data)
    print(f"wrote {out} shape={'x'.join(map(str, data.shape))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridtd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a reconstruction or benchmark task")
    run.add_argument("task_pos", nargs="?", metavar="task", help=" | ".join(TASKS))
    run.add_argument("--task")
    run.add_argument("--config", help="INI-style key = value file")
    run.add_argument("--seed")
    run.add_argument("--out-dir", dest="out_dir")
    run.add_argument("--input", help="GTD1 tensor to reconstruct instead of a synthetic scene")
    run.add_argument("--scene")
    run.add_argument("--mode", choices=("dense", "decomposed"))
    run.add_argument("--sr")
    run.add_argument("--dims", help="comma separated, e.g. 32,32,8")
    run.add_argument("--levels")
    run.add_argument("--features")
    run.add_argument("--n-min", dest="n_min")
    run.add_argument("--n-max", dest="n_max")
    run.add_argument("--table-size", dest="table_size")
    run.add_argument("--hidden")
    run.add_argument("--rho0")
    run.add_argument("--kappa")
    run.add_argument("--lambda1")
    run.add_argument("--lambda2")
    run.add_argument("--affine", choices=("on", "off", "auto"))
    run.add_argument("--inner-steps", dest="inner_steps")
    run.add_argument("--outer-iters", dest="outer_iters")
    run.add_argument("--shift-step", dest="shift_step")
    run.add_argument("--bench-n", dest="bench_n")
    run.add_argument("--bench-dim", dest="bench_dim")
    run.add_argument("--bench-iters", dest="bench_iters")
    run.add_argument("--trials")
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="write a synthetic scene or mask as GTD1")
    synth.add_argument("scene", help="moving-square | moving-scene | smooth | spectral | "
                                     "mask-bernoulli | mask-sampling")
    synth.add_argument("--dims", default="32,32,8")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--velocity", default="1,1")
    synth.add_argument("--size", type=int, default=8)
    synth.add_argument("--p", type=float, default=0.5)
    synth.add_argument("--sr", type=float, default=0.25)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
