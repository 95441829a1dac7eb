"""Command-line experiment runner.

Subcommands::

    qsvrg run --config exp.ini [--out DIR] [--seeds 0,1] [--subsample N]
    qsvrg bench --config exp.ini [...]
    qsvrg bounds [--config exp.ini] [--mu .. --L .. --d .. --alpha ..] [--out DIR]
    qsvrg data prep --source power|mnist|synthetic [--path P] --out FILE
    qsvrg quantizer selftest [--d 4 --bits 3 --radius 1 --seed 0]

Exit codes: 0 success, 1 invalid configuration, 2 divergence during a run.
``QSVRG_OUT`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataFormatError,
    dataset_hash,
    load_power_csv,
    load_snapshot,
    mnist_dataset,
    partition,
    save_snapshot,
    synthesize,
)
from .metrics import solve_reference, traces_to_csv
from .objective import RidgeLogistic
from .optimizers import ALGORITHMS, DivergenceError, OptimizerConfig, run
from .quantizer import GridSpec, selftest
from .theory import ProblemConstants, min_epoch_length, sigma_adaptive

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2

SOURCES = ("synthetic", "power", "mnist", "snapshot")

# keys accepted in [defaults] and [algorithm NAME] sections
_ALG_KEYS = {
    "step_size": float,
    "epoch_length": int,
    "epochs": int,
    "bits_per_dim": int,
    "bits_param_per_dim": int,
    "bits_grad_per_dim": int,
    "grad_center": str,
    "fixed_param_radius": float,
    "fixed_grad_radius": float,
}


class ConfigInvalid(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


@dataclass
class ExperimentConfig:
    source: str = "synthetic"
    path: str | None = None
    subsample: int | None = None
    normalize: str = "none"
    digit: int = 9
    n: int = 1000
    d: int = 10
    data_seed: int = 0
    lam: float = 0.1
    workers: int | None = None
    partition: str = "contiguous"
    algorithms: list[str] = field(default_factory=lambda: ["m-svrg"])
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "results"
    reference: bool = True
    per_algorithm: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        d = dict(self.__dict__)
        d.pop("out")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def _parse_list(text: str, cast=str) -> list:
    return [cast(t.strip()) for t in text.split(",") if t.strip()]


def _alg_settings(section, errors: list[str], where: str) -> dict:
    out = {}
    for key, raw in section.items():
        if key not in _ALG_KEYS:
            errors.append(f"[{where}] unknown key {key!r}")
            continue
        try:
            out[key] = _ALG_KEYS[key](raw)
        except ValueError:
            errors.append(f"[{where}] {key} = {raw!r} is not a valid {_ALG_KEYS[key].__name__}")
    return out


def load_config(path) -> ExperimentConfig:
    """Parse an INI experiment file, collecting every problem before failing."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    errors: list[str] = []
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigInvalid([f"cannot read config {path}: {exc}"]) from exc
    cfg = ExperimentConfig()
    if parser.has_section("experiment"):
        sec = parser["experiment"]
        casts = {
            "source": str, "path": str, "subsample": int, "normalize": str, "digit": int,
            "n": int, "d": int, "data_seed": int, "lam": float, "workers": int,
            "partition": str, "out": str,
        }
        for key, raw in sec.items():
            if key in casts:
                try:
                    setattr(cfg, key, casts[key](raw))
                except ValueError:
                    errors.append(f"[experiment] {key} = {raw!r} is not a valid {casts[key].__name__}")
            elif key == "algorithms":
                cfg.algorithms = [a.lower() for a in _parse_list(raw)]
            elif key == "seeds":
                try:
                    cfg.seeds = _parse_list(raw, int)
                except ValueError:
                    errors.append(f"[experiment] seeds = {raw!r} is not a list of integers")
            elif key == "reference":
                try:
                    cfg.reference = sec.getboolean(key)
                except ValueError:
                    errors.append(f"[experiment] reference = {raw!r} is not a boolean")
            else:
                errors.append(f"[experiment] unknown key {key!r}")
    else:
        errors.append("missing [experiment] section")
    defaults = _alg_settings(parser["defaults"], errors, "defaults") if parser.has_section("defaults") else {}
    for alg in cfg.algorithms:
        merged = dict(defaults)
        name = f"algorithm {alg}"
        if parser.has_section(name):
            merged.update(_alg_settings(parser[name], errors, name))
        cfg.per_algorithm[alg] = merged
    for name in parser.sections():
        if name.startswith("algorithm ") and name[len("algorithm "):] not in cfg.algorithms:
            errors.append(f"[{name}] configures an algorithm not listed in algorithms")
    errors += static_errors(cfg)
    if errors:
        raise ConfigInvalid(errors)
    return cfg


def static_errors(cfg: ExperimentConfig) -> list[str]:
    errs = []
    if cfg.source not in SOURCES:
        errs.append(f"source must be one of {', '.join(SOURCES)}")
    if cfg.source in ("power", "snapshot") and (not cfg.path or not Path(cfg.path).is_file()):
        errs.append(f"data file {cfg.path!r} does not exist")
    if cfg.source == "mnist" and (not cfg.path or not Path(cfg.path).is_dir()):
        errs.append(f"MNIST directory {cfg.path!r} does not exist")
    if cfg.normalize not in ("none", "unit"):
        errs.append("normalize must be 'none' or 'unit'")
    if not cfg.seeds:
        errs.append("seeds must be non-empty")
    if not cfg.algorithms:
        errs.append("algorithms must be non-empty")
    for alg in cfg.algorithms:
        if alg not in ALGORITHMS:
            errs.append(f"unknown algorithm {alg!r}")
            continue
        # dimension-free checks; divisibility by d waits until the data is loaded
        oc = optimizer_config(alg, cfg.per_algorithm.get(alg, {}), 1, 0)
        errs += [f"{alg}: {e}" for e in oc.validate(None)]
    if cfg.lam <= 0:
        errs.append("lam must be positive (strong convexity)")
    if cfg.workers is not None and cfg.workers < 1:
        errs.append("workers must be >= 1")
    if cfg.subsample is not None and cfg.subsample < 1:
        errs.append("subsample must be >= 1")
    return errs


def load_dataset(cfg: ExperimentConfig):
    if cfg.source == "synthetic":
        ds, _ = synthesize(cfg.n, cfg.d, seed=cfg.data_seed)
    elif cfg.source == "power":
        ds = load_power_csv(cfg.path, subsample=cfg.subsample, seed=cfg.data_seed)
    elif cfg.source == "mnist":
        ds = mnist_dataset(cfg.path, "train", cfg.digit, cfg.normalize)
    else:
        ds = load_snapshot(cfg.path)
    if cfg.subsample is not None and cfg.source != "power" and cfg.subsample < ds.n_samples:
        keep = np.sort(np.random.default_rng(cfg.data_seed).choice(ds.n_samples, cfg.subsample, replace=False))
        ds = ds.subset(keep)
    return ds


def optimizer_config(alg: str, settings: dict, dim: int, seed: int) -> OptimizerConfig:
    bpd = settings.get("bits_per_dim")
    bw = settings.get("bits_param_per_dim", bpd)
    bg = settings.get("bits_grad_per_dim", bpd)
    return OptimizerConfig(
        algorithm=alg,
        step_sizes=settings.get("step_size", 0.2),
        epoch_length=settings.get("epoch_length", 8),
        epochs=settings.get("epochs", 10),
        bits_param=None if bw is None else bw * dim,
        bits_grad=None if bg is None else bg * dim,
        fixed_param_radius=settings.get("fixed_param_radius"),
        fixed_grad_radius=settings.get("fixed_grad_radius"),
        grad_center=settings.get("grad_center", "reference"),
        seed=seed,
    )


def write_atomic(path: Path, text: str) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
    return path


def resolve_out(cli_out: str | None, cfg_out: str | None) -> Path:
    out = os.environ.get("QSVRG_OUT") or cli_out or cfg_out or "results"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


@dataclass
class RunOutcome:
    algorithm: str
    seed: int
    trace: list
    diverged: bool
    path: Path


def execute(cfg: ExperimentConfig, out: Path, log=print) -> tuple[list[RunOutcome], dict]:
    """Validate, then run every (algorithm, seed) pair and write one trace CSV each."""
    errs = static_errors(cfg)
    if errs:
        raise ConfigInvalid(errs)
    ds = load_dataset(cfg)
    shards = None
    if cfg.workers is not None:
        if cfg.workers > ds.n_samples:
            raise ConfigInvalid([f"{cfg.workers} workers for {ds.n_samples} samples"])
        shards = partition(ds.n_samples, cfg.workers, cfg.partition, cfg.data_seed)
    obj = RidgeLogistic(ds, cfg.lam, shards=shards)
    opt_cfgs = {
        (alg, seed): optimizer_config(alg, cfg.per_algorithm.get(alg, {}), ds.dim, seed)
        for alg in cfg.algorithms
        for seed in cfg.seeds
    }
    errs = [f"{alg}: {e}" for alg in cfg.algorithms for e in opt_cfgs[(alg, cfg.seeds[0])].validate(ds.dim)]
    if errs:
        raise ConfigInvalid(errs)

    f_star = solve_reference(obj).f if cfg.reference else None
    info = {
        "config_hash": cfg.digest(),
        "code_version": __version__,
        "dataset_hash": dataset_hash(ds),
        "n_samples": ds.n_samples,
        "dim": ds.dim,
        "workers": obj.n_components,
        "L": repr(obj.smoothness_bound()),
        "mu": repr(obj.strong_convexity()),
        "f_star": repr(f_star) if f_star is not None else "none",
    }
    outcomes = []
    for (alg, seed), oc in opt_cfgs.items():
        header = dict(info, algorithm=alg, seed=seed)
        try:
            trace = run(obj, oc, f_star=f_star).trace
            diverged = False
            header["status"] = "ok"
        except DivergenceError as exc:
            trace, diverged = exc.trace, True
            header["status"] = f"diverged ({exc})"
        path = write_atomic(out / f"trace_{_slug(alg)}_seed{seed}.csv", traces_to_csv(trace, header))
        log(f"{alg} seed={seed}: {header['status']}, {len(trace) - 1} outer iterations -> {path}")
        outcomes.append(RunOutcome(alg, seed, trace, diverged, path))
    return outcomes, info


def _slug(alg: str) -> str:
    return alg.replace("+", "plus")


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    out = resolve_out(args.out, cfg.out)
    outcomes, _ = execute(cfg, out)
    return EXIT_DIVERGED if any(o.diverged for o in outcomes) else EXIT_OK


def cmd_bench(args) -> int:
    from .plotting import plot_traces

    cfg = _config_from_args(args)
    out = resolve_out(args.out, cfg.out)
    outcomes, info = execute(cfg, out)
    rows = ["algorithm,seed,status,iterations,final_loss,final_grad_norm,final_delta,bits_up,bits_down"]
    for o in outcomes:
        last = o.trace[-1]
        status = "diverged" if o.diverged else "ok"
        rows.append(
            f"{o.algorithm},{o.seed},{status},{last.k},{last.loss!r},{last.grad_norm!r},"
            f"{last.delta!r},{last.bits_up},{last.bits_down}"
        )
    header = "".join(f"# {k}: {v}\n" for k, v in info.items())
    write_atomic(out / "summary.csv", header + "\n".join(rows) + "\n")
    first_seed = cfg.seeds[0]
    by_alg = {o.algorithm: o.trace for o in outcomes if o.seed == first_seed}
    plot_traces(by_alg, out / "grad_norm_vs_iteration.png", "grad_norm", "k")
    plot_traces(by_alg, out / "grad_norm_vs_bits.png", "grad_norm", "bits")
    if cfg.reference:
        plot_traces(by_alg, out / "suboptimality_vs_iteration.png", "delta", "k")
    print(f"summary -> {out / 'summary.csv'}")
    return EXIT_DIVERGED if any(o.diverged for o in outcomes) else EXIT_OK


def _config_from_args(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigInvalid(["--config is required"])
    cfg = load_config(args.config)
    if args.seeds:
        try:
            cfg.seeds = _parse_list(args.seeds, int)
        except ValueError as exc:
            raise ConfigInvalid([f"--seeds: {exc}"]) from exc
    if args.subsample is not None:
        cfg.subsample = args.subsample
    return cfg


def bound_sweeps(c: ProblemConstants, sigmas, bits, alphas, T_for_sigma: int):
    """Rows for the three bound tables; infeasible points are None."""
    tmin_bits = []
    for s in sigmas:
        for bd in bits:
            b = min_epoch_length(c.with_(b_per_d=bd), s)
            tmin_bits.append((s, bd, b.value if b.applicable else None))
    tmin_alpha = []
    for s in sigmas:
        for a in alphas:
            b = min_epoch_length(c.with_(alpha=a, b_per_d=float("inf")), s)
            tmin_alpha.append((s, a, b.value if b.applicable else None))
    sigma_bits = []
    for bd in bits:
        b = sigma_adaptive(c.with_(b_per_d=bd, T=T_for_sigma))
        sigma_bits.append((bd, b.value, b.applicable))
    return tmin_bits, tmin_alpha, sigma_bits


def _range(text: str, cast=int) -> list:
    if ":" in text:
        lo, hi = (cast(t) for t in text.split(":"))
        return list(range(lo, hi + 1))
    return _parse_list(text, cast)


def cmd_bounds(args) -> int:
    from .plotting import plot_curves

    vals = dict(mu=0.2, L=1.2, d=9, alpha=0.01, T=4000, sigmas="0.2,0.5,0.9,0.99", bits="8:32", alphas=None)
    if args.config:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
        try:
            with open(args.config) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigInvalid([f"cannot read config {args.config}: {exc}"]) from exc
        if parser.has_section("bounds"):
            vals.update(parser["bounds"])
    for key in ("mu", "L", "d", "alpha", "T", "sigmas", "bits", "alphas"):
        v = getattr(args, key, None)
        if v is not None:
            vals[key] = v
    errs = []
    try:
        mu, L, alpha = float(vals["mu"]), float(vals["L"]), float(vals["alpha"])
        d, T = int(vals["d"]), int(vals["T"])
        sigmas = _parse_list(str(vals["sigmas"]), float)
        bits = _range(str(vals["bits"]))
        if vals["alphas"]:
            alphas = _parse_list(str(vals["alphas"]), float)
        else:
            top = 1.0 / (6 * L)
            alphas = [top * f for f in np.linspace(0.02, 0.3, 15)]
        c = ProblemConstants(mu=mu, L=L, d=d, alpha=alpha, T=T)
    except ValueError as exc:
        errs.append(str(exc))
    if errs:
        raise ConfigInvalid(errs)
    out = resolve_out(args.out, None)
    tmin_bits, tmin_alpha, sigma_bits = bound_sweeps(c, sigmas, bits, alphas, T)

    def fmt(v):
        return "infeasible" if v is None else repr(v)

    head = f"# mu: {mu}\n# L: {L}\n# d: {d}\n# alpha: {alpha}\n# code_version: {__version__}\n"
    write_atomic(out / "tmin_vs_bits.csv",
                 head + "sigma_bar,b_per_d,T_min\n" + "".join(f"{s},{bd},{fmt(t)}\n" for s, bd, t in tmin_bits))
    write_atomic(out / "tmin_vs_alpha.csv",
                 head + "sigma_bar,alpha,T_min\n" + "".join(f"{s},{a!r},{fmt(t)}\n" for s, a, t in tmin_alpha))
    write_atomic(out / "sigma_vs_bits.csv",
                 head + f"# T: {T}\nb_per_d,sigma,certified\n"
                 + "".join(f"{bd},{fmt(v)},{int(ok)}\n" for bd, v, ok in sigma_bits))
    plot_curves({f"sigma_bar={s}": ([bd for s2, bd, _ in tmin_bits if s2 == s],
                                    [t for s2, _, t in tmin_bits if s2 == s]) for s in sigmas},
                out / "tmin_vs_bits.png", "bits per dimension", "minimum epoch length T")
    plot_curves({f"sigma_bar={s}": ([a for s2, a, _ in tmin_alpha if s2 == s],
                                    [t for s2, _, t in tmin_alpha if s2 == s]) for s in sigmas},
                out / "tmin_vs_alpha.png", "step size", "minimum epoch length T")
    plot_curves({f"T={T}": ([bd for bd, _, _ in sigma_bits], [v for _, v, _ in sigma_bits])},
                out / "sigma_vs_bits.png", "bits per dimension", "contraction factor")
    print(f"bound tables -> {out}")
    return EXIT_OK


def cmd_data_prep(args) -> int:
    errs = []
    if args.source in ("power", "mnist") and not (args.path and Path(args.path).exists()):
        errs.append(f"input {args.path!r} does not exist")
    if not args.out:
        errs.append("--out FILE is required")
    if errs:
        raise ConfigInvalid(errs)
    if args.source == "power":
        ds = load_power_csv(args.path, subsample=args.subsample, seed=args.seed)
    elif args.source == "mnist":
        ds = mnist_dataset(args.path, args.split, args.digit, args.normalize)
        ds.meta.pop("digits", None)
    else:
        ds, _ = synthesize(args.n, args.d, seed=args.seed)
    out = Path(os.environ.get("QSVRG_OUT", "")) / args.out if os.environ.get("QSVRG_OUT") else Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    digest = save_snapshot(ds, out)
    print(f"{ds.n_samples} samples x {ds.dim} features -> {out} (sha256 {digest})")
    return EXIT_OK


def cmd_quantizer_selftest(args) -> int:
    if args.d < 1 or not 1 <= args.bits <= 62 or not args.radius > 0:
        raise ConfigInvalid(["need d >= 1, 1 <= bits <= 62 and radius > 0"])
    grid = GridSpec(np.zeros(args.d), np.full(args.d, args.radius), np.full(args.d, args.bits))
    report = selftest(grid, seed=args.seed, n_samples=args.samples, n_points=args.points)
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = resolve_out(args.out, None)
        write_atomic(out / "quantizer_selftest.json", text + "\n")
    ok = report["max_bias_std_errors"] <= 4 and report["max_error_in_spacings"] <= 1.0
    return EXIT_OK if ok else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qsvrg", description="Quantized SVRG experiments over a simulated network.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def exp_flags(sp):
        sp.add_argument("--config", help="INI experiment file")
        sp.add_argument("--out", help="output directory (QSVRG_OUT overrides)")
        sp.add_argument("--seeds", help="comma-separated seeds, overriding the config")
        sp.add_argument("--subsample", type=int, help="uniform row subsample size")

    sp = sub.add_parser("run", help="write one trace CSV per algorithm and seed")
    exp_flags(sp)
    sp.set_defaults(func=cmd_run)
    sp = sub.add_parser("bench", help="run, then write a comparison summary and figures")
    exp_flags(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("bounds", help="tabulate and plot the theoretical bounds")
    sp.add_argument("--config", help="INI file with a [bounds] section")
    sp.add_argument("--out")
    sp.add_argument("--mu", type=float)
    sp.add_argument("--L", type=float)
    sp.add_argument("--d", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--T", type=int, help="epoch length for the contraction sweep")
    sp.add_argument("--sigmas", help="target contractions, comma-separated")
    sp.add_argument("--bits", help="b/d values: LO:HI or a comma list")
    sp.add_argument("--alphas", help="step sizes for the T-vs-alpha sweep")
    sp.set_defaults(func=cmd_bounds)

    data = sub.add_parser("data", help="dataset utilities")
    dsub = data.add_subparsers(dest="data_command", required=True)
    sp = dsub.add_parser("prep", help="cache a normalized dataset snapshot")
    sp.add_argument("--source", choices=("power", "mnist", "synthetic"), required=True)
    sp.add_argument("--path", help="power CSV file or MNIST directory")
    sp.add_argument("--out", help="snapshot file")
    sp.add_argument("--subsample", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--split", choices=("train", "test"), default="train")
    sp.add_argument("--digit", type=int, default=9)
    sp.add_argument("--normalize", choices=("none", "unit"), default="none")
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--d", type=int, default=10)
    sp.set_defaults(func=cmd_data_prep)

    quant = sub.add_parser("quantizer", help="quantizer utilities")
    qsub = quant.add_subparsers(dest="quantizer_command", required=True)
    sp = qsub.add_parser("selftest", help="empirical bias and error report")
    sp.add_argument("--d", type=int, default=4)
    sp.add_argument("--bits", type=int, default=3)
    sp.add_argument("--radius", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--points", type=int, default=16)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_quantizer_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print("invalid configuration:", file=sys.stderr)
        for e in exc.errors:
            print(f"  - {e}", file=sys.stderr)
        return EXIT_INVALID
    except DataFormatError as exc:
        print(f"unreadable input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
