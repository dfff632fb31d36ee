"""Command-line pipeline: dataset -> train -> optimize -> analyze -> mitigate.

Every command writes under one ``--out`` directory and records what it wrote
in ``manifest.json`` at that root.  All randomness comes from seeds in the
config file or on the command line, so a rerun with identical flags writes
identical bytes.  Exit codes: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    ErrorSummary,
    convergence_map,
    dataset_summary,
    evaluate_optima,
    summarize_errors,
    trajectory_errors,
    write_csv,
    write_summary_report,
)
from .datagen import DatasetFormatError, generate_dataset, prefix_split, read_dataset, write_dataset
from .experiment import run_grid
from .ga import GaConfig, default_grid, read_log, select_runs, write_log
from .gbt import GbtSpec, gbt_roster_specs, gbt_train
from .microsim import Oracle, SimConfig
from .mitigation import EnsembleModel, active_learning, write_report
from .modelio import load_model, save_model
from .netmodel import NetworkConfig
from .nn import NnSpec, nn_roster_specs, nn_train

log = logging.getLogger("sigsurrogate")

DEFAULT_CONFIG = {
    "format_version": 1,
    "network": NetworkConfig().to_dict(),
    "sim": SimConfig().to_dict(),
    "dataset": {"n": 25000, "train_n": 20000, "seed": 7},
    "train": {"seed": 0, "nn_epochs": 200, "gbt_trees": 400},
    "optimize": {"runs_per_config": 5, "seed": 0, "population": None, "iterations": None},
    "analyze": {"best_k": 10, "random_k": 10, "seed": 0},
    "mitigate": {"rounds": 3, "top_k": 100, "seed": 0, "trim_fraction": 0.0},
    "demo": {"models": ["nn-relu-64x64", "gbt-l2-31"]},
}


class UserError(Exception):
    """Bad flags, missing inputs or invalid files; exits with status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(f"{self.format_usage().strip()}\n{self.prog}: {message}")


# ---------------------------------------------------------------- config

def _merge(base: dict, override: dict, where: str = "config") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise UserError(f"{where}: unknown key {key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise UserError(f"{where}.{key}: expected a section")
            out[key] = _merge(base[key], value, f"{where}.{key}")
        else:
            out[key] = value
    return out


def load_config(path) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    path = Path(path)
    if not path.exists():
        raise UserError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("format_version", 1) != 1:
        raise UserError(f"{path}: unsupported format_version {doc.get('format_version')}")
    return _merge(DEFAULT_CONFIG, doc)


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _network(cfg):
    return NetworkConfig.from_dict(cfg["network"]).build()


def _sim(cfg):
    return SimConfig.from_dict(cfg["sim"])


# ---------------------------------------------------------------- manifest

class Run:
    """Output directory plus the manifest entry of the command being run."""

    def __init__(self, out, command: str, label: str, cfg: dict):
        self.root = Path(out)
        self.root.mkdir(parents=True, exist_ok=True)
        self.key = f"{command}:{label}" if label else command
        self.entry = {"command": command, "config_digest": config_digest(cfg), "seeds": {}, "artifacts": {}}

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, kind: str, path: Path) -> None:
        self.entry["artifacts"].setdefault(kind, []).append(path.relative_to(self.root).as_posix())

    def finish(self) -> None:
        for paths in self.entry["artifacts"].values():
            for p in paths:
                assert (self.root / p).exists(), p
        mpath = self.root / "manifest.json"
        doc = {"tool": "sigsurrogate", "version": __version__, "runs": {}}
        if mpath.exists():
            doc = json.loads(mpath.read_text())
        doc["version"] = __version__
        doc["runs"][self.key] = self.entry
        mpath.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- plots

def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata={"Software": None})
    _plt().close(fig)


def plot_error_hist(signed: dict, path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, err in signed.items():
        ax.hist(100 * np.asarray(err), bins=40, alpha=0.6, label=name)
    ax.axvline(0, color="k", lw=0.8)
    ax.set_xlabel("relative error at GA optima [%]")
    ax.set_ylabel("count")
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_trajectories(curves, path) -> None:
    plt = _plt()
    fig, axes = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    for c in curves:
        axes[0].plot(c.iteration, c.surrogate, color="tab:blue", lw=0.6, alpha=0.6)
        axes[0].plot(c.iteration, c.oracle, color="tab:red", lw=0.6, alpha=0.6)
        axes[1].plot(c.iteration, 100 * c.signed_rel, lw=0.6, alpha=0.7)
    axes[0].set_ylabel("red wait [s]\nblue: surrogate, red: simulation")
    axes[1].set_ylabel("relative error [%]")
    axes[1].set_xlabel("GA iteration")
    _save(fig, path)


def plot_pca(cm, path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 5))
    for name in dict.fromkeys(cm.labels):
        pts = cm.pca.projected[cm.labels == name]
        ax.scatter(pts[:, 0], pts[:, 1], s=4, alpha=0.5, label=str(name))
    r = cm.pca.explained_variance_ratio
    ax.set_xlabel(f"PC1 ({100 * r[0]:.1f}%)")
    ax.set_ylabel(f"PC2 ({100 * r[1]:.1f}%)")
    ax.legend(fontsize=7, markerscale=3)
    _save(fig, path)


# ---------------------------------------------------------------- commands

def _read_dataset(path, C=None):
    if path is None:
        raise UserError("a dataset path is required")
    return read_dataset(path, C)


def cmd_dataset(args, cfg) -> int:
    n = args.n if args.n is not None else cfg["dataset"]["n"]
    train_n = args.train_n if args.train_n is not None else cfg["dataset"]["train_n"]
    seed = args.seed if args.seed is not None else cfg["dataset"]["seed"]
    if n < 2 or not 0 < train_n < n:
        raise UserError(f"--train-n must satisfy 0 < train-n < n (got train-n={train_n}, n={n})")
    run = Run(args.out, "dataset", "", cfg)
    net = _network(cfg)
    log.info("labeling %d settings", n)
    ds = generate_dataset(net, _sim(cfg), n, seed, args.workers)
    split = prefix_split(ds, train_n)
    for name, part in (("train", split.train), ("test", split.test)):
        p = run.path("data", f"{name}.txt")
        write_dataset(part, p)
        run.record(name, p)
    run.entry["seeds"] = {"dataset": seed, "sim": cfg["sim"]["seed"]}
    run.entry["sizes"] = {"n": n, "train_n": train_n}
    run.finish()
    return 0


def _load_spec(path, cls):
    if path is None:
        return cls()
    p = Path(path)
    if not p.exists():
        raise UserError(f"spec file not found: {p}")
    return cls.from_dict(json.loads(p.read_text()))


def train_specs(kind, cfg, spec_path=None, seed=None, name=None):
    """``(kind, name, spec)`` triples; a spec file keeps its own seed unless ``seed`` is given."""
    tc = cfg["train"]
    if kind == "roster":
        seed = tc["seed"] if seed is None else seed
        return (
            [("nn", n, s) for n, s in nn_roster_specs(seed, tc["nn_epochs"])]
            + [("gbt", n, s) for n, s in gbt_roster_specs(seed, tc["gbt_trees"])]
        )
    cls = NnSpec if kind == "nn" else GbtSpec
    spec = _load_spec(spec_path, cls)
    if spec_path is None:
        spec = replace(spec, **({"epochs": tc["nn_epochs"]} if kind == "nn" else {"num_trees": tc["gbt_trees"]}))
        seed = tc["seed"] if seed is None else seed
    if seed is not None:
        spec = replace(spec, seed=seed)
    return [(kind, name or kind, spec)]


def cmd_train(args, cfg) -> int:
    train = _read_dataset(args.train)
    test = read_dataset(args.test, train.n_intersections) if args.test else None
    run = Run(args.out, "train", args.kind, cfg)
    summaries = {}
    for kind, name, spec in train_specs(args.kind, cfg, args.spec, args.seed, args.name):
        log.info("training %s", name)
        model = nn_train(train, spec, name) if kind == "nn" else gbt_train(train, spec, name)
        p = run.path("models", f"{name}.json")
        save_model(model, p)
        run.record("models", p)
        run.entry["seeds"][name] = spec.seed
        if test is not None:
            summaries[name] = dataset_summary(model, test)
    if summaries:
        rp = run.path("reports", f"test_errors_{args.kind}.json")
        write_summary_report(summaries, rp)
        cp = run.path("reports", f"test_errors_{args.kind}.csv")
        write_csv(cp, ["model", "n", "mean_signed_rel", "mean_abs_rel", "max_abs_rel", "frac_under"],
                  [[k, v.n, v.mean_signed_rel, v.mean_abs_rel, v.max_abs_rel, v.frac_under] for k, v in summaries.items()])
        run.record("reports", rp)
        run.record("reports", cp)
    run.finish()
    return 0


def _grid(spec, C, oc) -> list[GaConfig]:
    if spec in (None, "default"):
        grid = default_grid(C)
    else:
        p = Path(spec)
        if not p.exists():
            raise UserError(f"GA grid file not found: {p}")
        grid = [GaConfig.from_dict(d) for d in json.loads(p.read_text())]
        if not grid:
            raise UserError(f"{p}: empty GA grid")
    over = {k: oc[k] for k in ("population", "iterations") if oc.get(k) is not None}
    if over:
        grid = [replace(g, **over, elitism=min(g.elitism, over.get("population", g.population))) for g in grid]
    return grid


def cmd_optimize(args, cfg) -> int:
    oc = cfg["optimize"]
    runs = args.runs_per_config if args.runs_per_config is not None else oc["runs_per_config"]
    if runs < 1:
        raise UserError("--runs-per-config must be >= 1")
    seed = args.seed if args.seed is not None else oc["seed"]
    if args.oracle:
        net = _network(cfg)
        fitness, C, fid = Oracle(net, _sim(cfg), args.workers), net.n_intersections, "oracle"
    else:
        model = load_model(args.model)
        fitness, C, fid = model.predict, model.n_intersections, model.name
    grid = _grid(args.ga_grid, C, oc)
    run = Run(args.out, "optimize", fid, cfg)
    logs = run_grid(fitness, C, grid, runs, seed, fitness_id=fid)
    for lg in logs:
        if lg.config.elitism >= 1 and not lg.is_elitist_monotone():
            raise RuntimeError(f"run {lg.run_id} violates elitist monotonicity")
        p = run.path("logs", fid, f"{lg.run_id}.jsonl.gz")
        write_log(lg, p)
        run.record("logs", p)
    run.entry["seeds"] = {"optimize": seed}
    run.entry["grid"] = [g.label() for g in grid]
    run.finish()
    return 0


def _read_logs(directory):
    d = Path(directory)
    if not d.is_dir():
        raise UserError(f"log directory not found: {d}")
    paths = sorted(d.glob("*.jsonl*"))
    if not paths:
        raise UserError(f"no GA logs in {d}")
    return [read_log(p) for p in paths]


def cmd_analyze(args, cfg) -> int:
    ac = cfg["analyze"]
    best_k = args.best_k if args.best_k is not None else ac["best_k"]
    random_k = args.random_k if args.random_k is not None else ac["random_k"]
    seed = args.seed if args.seed is not None else ac["seed"]
    if args.what == "pca":
        run = Run(args.out, "analyze", "pca", cfg)
        run.entry["seeds"] = {"analyze": seed}
        base = Path("analysis") / "pca"
        if len(args.logs) < 2:
            raise UserError("--what pca needs --logs for at least two models")
        by_model = {}
        for d in args.logs:
            logs = _read_logs(d)
            name = logs[0].fitness_id or Path(d).name
            by_model[name] = select_runs(logs, min(best_k, len(logs)), min(random_k, max(0, len(logs) - best_k)), seed)
        cm = convergence_map(by_model, encoded=args.encoded)
        rp = run.path(base, "report.json")
        rp.write_text(json.dumps({
            "encoded": cm.encoded,
            "explained_variance_ratio": cm.pca.explained_variance_ratio.tolist(),
            "centroids": {k: v.tolist() for k, v in cm.centroids().items()},
            "centroid_distances": {f"{a}|{b}": d for (a, b), d in cm.centroid_distances().items()},
        }, indent=2, sort_keys=True) + "\n")
        cp = run.path(base, "points.csv")
        write_csv(cp, ["model", "pc1", "pc2"], [[m, x, y] for m, (x, y) in zip(cm.labels, cm.pca.projected)])
        ip = run.path(base, "pca.png")
        plot_pca(cm, ip)
        for kind, p in (("reports", rp), ("tables", cp), ("plots", ip)):
            run.record(kind, p)
        run.finish()
        return 0

    if args.model is None or len(args.logs) != 1:
        raise UserError(f"--what {args.what} needs --model and exactly one --logs directory")
    model = load_model(args.model)
    run = Run(args.out, "analyze", f"{args.what}:{model.name}", cfg)
    run.entry["seeds"] = {"analyze": seed}
    base = Path("analysis") / args.what / model.name
    net = _network(cfg)
    if net.n_intersections != model.n_intersections:
        raise UserError(f"model has C={model.n_intersections} but the configured network has C={net.n_intersections}")
    oracle = Oracle(net, _sim(cfg), args.workers)
    chosen = select_runs(_read_logs(args.logs[0]), best_k, random_k, seed)

    if args.what == "errors":
        per_run, rows, all_pairs = {}, [], []
        for lg in chosen:
            s, pairs = evaluate_optima(lg, oracle, model)
            per_run[lg.run_id] = s
            all_pairs.append(pairs)
            for setting, (p, o) in zip(lg.final_settings, pairs):
                rows.append([lg.run_id, " ".join(map(str, setting)), p, o, (p - o) / o])
        pairs = np.vstack(all_pairs)
        summaries: dict[str, ErrorSummary] = {"optima": summarize_errors(pairs)}
        if args.test:
            summaries["test"] = dataset_summary(model, read_dataset(args.test, model.n_intersections))
        summaries.update({f"run:{k}": v for k, v in per_run.items()})
        rp = run.path(base, "report.json")
        write_summary_report(summaries, rp, extra={"model": model.name})
        cp = run.path(base, "optima_pairs.csv")
        write_csv(cp, ["run_id", "setting", "predicted", "simulated", "signed_rel"], rows)
        ip = run.path(base, "errors.png")
        plot_error_hist({model.name: (pairs[:, 0] - pairs[:, 1]) / pairs[:, 1]}, ip)
    else:
        curves, rows, report = [], [], {}
        for lg in chosen:
            c = trajectory_errors(lg, oracle, model)
            curves.append(c)
            head, tail = c.head_tail_abs(10)
            init = float(np.mean(oracle(lg.populations[0].astype(np.int64))))
            report[lg.run_id] = {"head_abs": head, "tail_abs": tail, "initial_oracle_mean": init,
                                 "final_oracle": float(c.oracle[-1])}
            for i in range(len(c)):
                rows.append([lg.run_id, int(c.iteration[i]), c.surrogate[i], c.oracle[i], c.signed_rel[i]])
        rp = run.path(base, "report.json")
        rp.write_text(json.dumps({"model": model.name, "runs": report}, indent=2, sort_keys=True) + "\n")
        cp = run.path(base, "trajectories.csv")
        write_csv(cp, ["run_id", "iteration", "surrogate", "oracle", "signed_rel"], rows)
        ip = run.path(base, "trajectories.png")
        plot_trajectories(curves, ip)
    for kind, p in (("reports", rp), ("tables", cp), ("plots", ip)):
        run.record(kind, p)
    run.finish()
    return 0


def cmd_mitigate(args, cfg) -> int:
    mc = cfg["mitigate"]
    seed = args.seed if args.seed is not None else mc["seed"]
    run = Run(args.out, "mitigate", args.strategy, cfg)
    run.entry["seeds"] = {"mitigate": seed}
    if args.strategy == "ensemble":
        if not args.models:
            raise UserError("--strategy ensemble needs --models")
        members = [load_model(p) for p in args.models]
        trim = args.trim if args.trim is not None else mc["trim_fraction"]
        ens = EnsembleModel(members, "trimmed_mean" if trim > 0 else "mean", trim)
        test = _read_dataset(args.test, ens.n_intersections)
        summaries = {m.name: dataset_summary(m, test) for m in members}
        summaries["ensemble"] = dataset_summary(ens, test)
        member_mean = float(np.mean([summaries[m.name].mean_abs_rel for m in members]))
        rp = run.path("mitigation", "ensemble_report.json")
        write_summary_report(summaries, rp, extra={"members_mean_abs_rel": member_mean, "trim_fraction": trim})
        run.record("reports", rp)
    else:
        train = _read_dataset(args.train)
        test = read_dataset(args.test, train.n_intersections) if args.test else None
        kind = args.kind or "gbt"
        (_, name, spec), = train_specs(kind, cfg, args.spec, None, f"al-{kind}")

        def trainer(ds):
            return nn_train(ds, spec, name) if kind == "nn" else gbt_train(ds, spec, name)

        oc = cfg["optimize"]
        ga = _grid("default", train.n_intersections, oc)[0]
        rounds = args.rounds if args.rounds is not None else mc["rounds"]
        top_k = args.top_k if args.top_k is not None else mc["top_k"]
        oracle = Oracle(_network(cfg), _sim(cfg), args.workers)
        report, final, grown = active_learning(oracle, trainer, train, ga, rounds, top_k, test, seed)
        rp = run.path("mitigation", f"active_{kind}.jsonl")
        write_report(report, rp)
        mp = run.path("mitigation", f"active_{kind}_final.json")
        save_model(final, mp)
        dp = run.path("mitigation", f"active_{kind}_train.txt")
        write_dataset(grown, dp)
        for k, p in (("reports", rp), ("models", mp), ("data", dp)):
            run.record(k, p)
    run.finish()
    return 0


def cmd_demo(args, cfg) -> int:
    """Dataset, full roster, GA grid on two models, and the three analyses."""
    out = Path(args.out)
    common = ["--out", str(out), "--workers", str(args.workers)]
    if args.config:
        common += ["--config", str(args.config)]
    steps = [["dataset"], ["train", "--kind", "roster", "--train", str(out / "data/train.txt"),
                           "--test", str(out / "data/test.txt")]]
    names = cfg["demo"]["models"]
    for name in names:
        steps.append(["optimize", "--model", str(out / "models" / f"{name}.json")])
    for what in ("errors", "trajectories"):
        for name in names:
            steps.append(["analyze", "--what", what, "--model", str(out / "models" / f"{name}.json"),
                          "--logs", str(out / "logs" / name), "--test", str(out / "data/test.txt")])
    pca_step = ["analyze", "--what", "pca"]
    for name in names:
        pca_step += ["--logs", str(out / "logs" / name)]
    steps.append(pca_step)
    for step in steps:
        log.info("demo: %s", " ".join(step[:3]))
        code = _dispatch(build_parser().parse_args(step + common))
        if code:
            return code
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sigsurrogate", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON config file (defaults apply to missing keys)")
        sp.add_argument("--out", type=Path, required=True, help="output directory; manifest.json is written here")
        sp.add_argument("--workers", type=int, default=1, help="oracle worker threads (results do not depend on it)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("dataset", help="label random settings with the simulator and split them")
    common(sp)
    sp.add_argument("--n", type=int)
    sp.add_argument("--train-n", type=int)

    sp = sub.add_parser("train", help="train surrogate models")
    common(sp)
    sp.add_argument("--kind", choices=("nn", "gbt", "roster"), required=True)
    sp.add_argument("--spec", type=Path, help="JSON NnSpec/GbtSpec document (nn/gbt only)")
    sp.add_argument("--name")
    sp.add_argument("--train", type=Path, required=True)
    sp.add_argument("--test", type=Path)

    sp = sub.add_parser("optimize", help="run the GA grid with a surrogate or the simulator as fitness")
    common(sp)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--model", type=Path)
    g.add_argument("--oracle", action="store_true")
    sp.add_argument("--ga-grid", default="default", help="'default' or a JSON list of GaConfig documents")
    sp.add_argument("--runs-per-config", type=int)

    sp = sub.add_parser("analyze", help="error at optima, trajectory errors, or PCA of convergence points")
    common(sp)
    sp.add_argument("--what", choices=("errors", "trajectories", "pca"), required=True)
    sp.add_argument("--logs", type=Path, action="append", default=[], help="GA log directory (repeat for pca)")
    sp.add_argument("--model", type=Path)
    sp.add_argument("--test", type=Path)
    sp.add_argument("--best-k", type=int)
    sp.add_argument("--random-k", type=int)
    sp.add_argument("--encoded", action="store_true", help="pca on the periodic encoding instead of raw offsets")

    sp = sub.add_parser("mitigate", help="ensemble averaging or active-learning retraining")
    common(sp)
    sp.add_argument("--strategy", choices=("ensemble", "active"), required=True)
    sp.add_argument("--models", type=Path, nargs="+")
    sp.add_argument("--trim", type=float)
    sp.add_argument("--train", type=Path)
    sp.add_argument("--test", type=Path)
    sp.add_argument("--kind", choices=("nn", "gbt"))
    sp.add_argument("--spec", type=Path)
    sp.add_argument("--rounds", type=int)
    sp.add_argument("--top-k", type=int)

    sp = sub.add_parser("demo", help="dataset -> roster -> GA grid on two models -> analyses")
    common(sp)
    return p


_COMMANDS = {
    "dataset": cmd_dataset, "train": cmd_train, "optimize": cmd_optimize,
    "analyze": cmd_analyze, "mitigate": cmd_mitigate, "demo": cmd_demo,
}


def _dispatch(args) -> int:
    if args.workers < 1:
        raise UserError("--workers must be >= 1")
    cfg = load_config(args.config)
    try:
        return _COMMANDS[args.command](args, cfg)
    except (FileNotFoundError, DatasetFormatError) as exc:
        raise UserError(str(exc)) from None


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UserError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        log.exception("internal error")
        return 2
