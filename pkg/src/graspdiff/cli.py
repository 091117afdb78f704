"""Command-line entry point.

Every artifact-producing command writes into a fresh ``--out`` directory and
leaves a ``manifest.json`` next to its outputs. Option values resolve as
built-in default < config file < ``GRASPDIFF_*`` environment < flag. A config
file is either TOML (flat keys, optionally under a ``[command]`` table) or the
``manifest.json`` of an earlier run, which replays that run exactly.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import bps
from . import evaluator as ev
from . import refine as rf
from . import sampler as sp
from . import toyworld as tw
from .core import GraspDiffError, array_to_grasps, denormalize_grasp, normalize_grasp
from .io import file_sha256, read_cloud, read_grasps, write_grasps, write_vector
from .models import load_denoiser, load_evaluator, save_denoiser, save_evaluator

log = logging.getLogger("graspdiff")

ENV_PREFIX = "GRASPDIFF_"

# bench rows and the refine pipeline behind each
BENCH_ROWS = {
    "sampler": "sampler",
    "sampler+esr1": "esr1",
    "sampler+esr2": "esr2",
    "sampler+egd": "egd",
    "sampler+egd+esr1": "egd+esr1",
    "sampler+egd+esr2": "egd+esr2",
}


class UsageError(GraspDiffError):
    pass


class MissingManifest(GraspDiffError):
    pass


@dataclass
class Opt:
    name: str
    type: object
    default: object
    help: str = ""


def _floats(s):
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    return [float(x) for x in str(s).split(",") if x.strip()]


def _freqs(s):
    if isinstance(s, (list, tuple)):
        return [ev.FreqConfig.parse(x) if isinstance(x, str) else ev.FreqConfig(*x) for x in s]
    return [ev.FreqConfig.parse(x) for x in str(s).split(";") if x.strip()]


BPS_OPTS = [
    Opt("bps-size", int, bps.DEFAULT_SIZE, "number of basis points"),
    Opt("bps-radius", float, bps.DEFAULT_RADIUS, "basis ball radius (m)"),
    Opt("bps-seed", int, 0, "basis seed; sampler and evaluator must share it"),
]

GEN_OPTS = [
    Opt("objects", int, 240, "number of toy objects"),
    Opt("views", int, 4, "partial views per object"),
    Opt("grasps", int, 25, "labeled grasps per view"),
    Opt("workers", int, 1, "worker processes (capped by --threads)"),
]

SAMPLER_OPTS = BPS_OPTS + [
    Opt("epochs", int, 120, "training epochs"),
    Opt("lr", float, 1e-3, "Adam learning rate"),
    Opt("gamma", float, 0.975, "per-epoch exponential learning-rate decay"),
    Opt("batch", int, 64, "batch size"),
    Opt("width", int, 128, "model width d"),
    Opt("heads", int, 4, "attention heads"),
    Opt("tokens", int, 8, "object tokens M"),
    Opt("p-scale", float, 0.1, "position normalization scale (m)"),
]

EVALUATOR_OPTS = BPS_OPTS + [
    Opt("epochs", int, 20, "training epochs"),
    Opt("lr", float, 1e-3, "Adam learning rate"),
    Opt("batch", int, 256, "batch size"),
    Opt("freq", str, "10,4,0", "frequency counts F_p,F_r,F_q"),
    Opt("val-fraction", float, 0.15, "fraction of training objects held out for validation"),
    Opt("p-scale", float, 0.1, "position normalization scale (m)"),
]

REFINE_OPTS = [
    Opt("method", str, "egd+esr2", "one of " + ", ".join(rf.METHODS)),
    Opt("lambda", float, 0.5, "guidance strength"),
    Opt("sigmas", _floats, "0.01,0.05,0.05", "proposal widths sigma_p,sigma_r,sigma_q"),
    Opt("iters", int, 20, "ESR-1 iterations; ESR-2 splits them evenly between stages"),
]

COMMANDS = {
    "gen-data": GEN_OPTS,
    "train-sampler": [Opt("data", str, None, "dataset directory")] + SAMPLER_OPTS,
    "train-evaluator": [Opt("data", str, None, "dataset directory")] + EVALUATOR_OPTS,
    "sample": [
        Opt("model", str, None, "sampler weights file"),
        Opt("cloud", str, None, "point cloud text file"),
        Opt("n", int, 20, "number of grasps"),
    ],
    "score": [
        Opt("model", str, None, "evaluator weights file"),
        Opt("cloud", str, None, "point cloud text file"),
        Opt("grasps", str, None, "grasp JSON file"),
    ],
    "refine": [
        Opt("sampler", str, None, "sampler weights file"),
        Opt("evaluator", str, None, "evaluator weights file"),
        Opt("cloud", str, None, "point cloud text file"),
        Opt("grasps", str, None, "optional grasp JSON to refine instead of sampling"),
        Opt("object", str, None, "optional object JSON for oracle success"),
        Opt("n", int, 20, "number of grasps"),
    ]
    + REFINE_OPTS,
    "ablate": [
        Opt("data", str, None, "dataset directory"),
        Opt("freqs", _freqs, "0,0,0;10,4,0", "semicolon-separated frequency configs"),
    ]
    + [o for o in EVALUATOR_OPTS if o.name != "freq"],
    "bench": [
        Opt("sampler", str, None, "sampler weights file"),
        Opt("evaluator", str, None, "evaluator weights file"),
        Opt("data", str, None, "dataset directory (held-out views are used)"),
        Opt("test-views", int, 10, "number of held-out views"),
        Opt("n", int, 20, "grasps per view and method"),
        Opt("methods", str, ",".join(BENCH_ROWS), "comma-separated bench rows"),
    ]
    + [o for o in REFINE_OPTS if o.name != "method"],
    "report": [],
    "bps encode": [Opt("cloud", str, None, "point cloud text file"), Opt("model", str, None, "take the basis from this weights file")] + BPS_OPTS,
}

REQUIRED = {
    "train-sampler": ["data"],
    "train-evaluator": ["data"],
    "sample": ["model", "cloud"],
    "score": ["model", "cloud", "grasps"],
    "refine": ["sampler", "evaluator", "cloud"],
    "ablate": ["data"],
    "bench": ["sampler", "evaluator", "data"],
    "bps encode": ["cloud"],
}


def _key(name: str) -> str:
    return name.replace("-", "_")


# --------------------------------------------------------------- config plumbing


def _load_config(path, command: str) -> dict:
    if path is None:
        return {}
    p = Path(path)
    text = p.read_text()
    if p.suffix == ".json":
        data = json.loads(text)
        if "command" in data and "config" in data:
            if data["command"] != command:
                raise UsageError(f"manifest is for {data['command']!r}, not {command!r}")
            return dict(data["config"])
        return data
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    data = tomllib.loads(text)
    flat = {k: v for k, v in data.items() if not isinstance(v, dict)}
    flat.update(data.get(command, {}))
    return flat


def _resolve(command: str, ns: argparse.Namespace) -> dict:
    file_cfg = {_key(k): v for k, v in _load_config(ns.config, command).items()}
    cfg = {}
    for opt in COMMANDS[command] + [Opt("seed", int, 0)]:
        k = _key(opt.name)
        env = os.environ.get(ENV_PREFIX + k.upper())
        flag = getattr(ns, k, None)
        if flag is not None:
            raw = flag
        elif env is not None:
            raw = env
        elif k in file_cfg:
            raw = file_cfg[k]
        else:
            raw = opt.default
        try:
            cfg[k] = opt.type(raw) if raw is not None else None
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for --{opt.name}: {raw!r} ({exc})") from None
    for name in REQUIRED.get(command, []):
        if cfg.get(_key(name)) is None:
            raise UsageError(f"{command}: --{name} is required")
    return cfg


def _snapshot(cfg: dict) -> dict:
    out = {}
    for k, v in cfg.items():
        if isinstance(v, list) and v and isinstance(v[0], ev.FreqConfig):
            v = ";".join(f.label().strip("()") for f in v)
        out[k] = v
    return out


def _fresh_dir(path) -> Path:
    if path is None:
        raise UsageError("--out is required")
    p = Path(path)
    if p.exists() and any(p.iterdir()):
        raise GraspDiffError(f"output directory {p} is not empty; use a fresh run directory")
    p.mkdir(parents=True, exist_ok=True)
    return p


class Run:
    """Collects config, hashes and timings and writes the manifest."""

    def __init__(self, command: str, cfg: dict, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.timings: dict[str, float] = {}
        self.inputs: dict[str, str] = {}
        self.extra: dict = {}
        self._t = time.perf_counter()

    def phase(self, name: str):
        now = time.perf_counter()
        self.timings[name] = now - self._t
        self._t = now

    def input(self, path):
        if path is not None:
            self.inputs[str(path)] = file_sha256(path)

    def write(self):
        outputs = {
            f.name: file_sha256(f) for f in sorted(self.out.iterdir()) if f.is_file() and f.name != "manifest.json"
        }
        manifest = {
            "command": self.command,
            "version": __version__,
            "seed": self.cfg.get("seed"),
            "config": _snapshot(self.cfg),
            "inputs": self.inputs,
            "outputs": outputs,
            "timings": self.timings,
            **self.extra,
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


# ------------------------------------------------------------------ helpers


def _basis(cfg) -> bps.BasisSet:
    return bps.sample_basis(cfg["bps_size"], cfg["bps_radius"], cfg["bps_seed"])


def _load_data(run: Run, cfg):
    root = Path(cfg["data"])
    run.input(root / "dataset.json")
    ds = tw.load_dataset(root)
    run.extra["dataset_hash"] = json.loads((root / "dataset.json").read_text())["content_hash"]
    return ds


def _gripper(ds) -> tw.ToyGripper:
    g = ds.config.get("gripper")
    return tw.ToyGripper(**g) if g else tw.ToyGripper(k=ds.k)


def _oracle(ds) -> tw.OracleConfig:
    o = ds.config.get("oracle")
    return tw.OracleConfig(**o) if o else tw.OracleConfig()


def _centered_cloud(run: Run, path):
    run.input(path)
    cloud = read_cloud(path)
    if len(cloud) == 0:
        raise bps.EmptyCloud(f"{path}: empty cloud")
    center = cloud.mean(axis=0)
    return cloud - center, center


def _shift(G, center):
    G = np.array(G, dtype=np.float64)
    G[:, :3] += center
    return G


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _proposal(cfg) -> rf.ProposalConfig:
    sig = cfg["sigmas"]
    if len(sig) != 3:
        raise UsageError("--sigmas takes three values: sigma_p,sigma_r,sigma_q")
    it = cfg["iters"]
    return rf.ProposalConfig(sig[0], sig[1], sig[2], it, it // 2, it - it // 2)


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg, out: Path, threads: int | None):
    run = Run("gen-data", cfg, out)
    workers = max(1, min(cfg["workers"], threads or cfg["workers"]))
    ds = tw.gen_dataset(cfg["objects"], cfg["views"], cfg["grasps"], cfg["seed"], workers=workers)
    run.phase("generate")
    run.extra["dataset_hash"] = tw.save_dataset(ds, out)
    run.phase("write")
    run.write()
    print(f"dataset {run.extra['dataset_hash'][:16]}: {len(ds.labels)} grasps, {int(ds.labels.sum())} positive")


def cmd_train_sampler(cfg, out: Path, threads):
    run = Run("train-sampler", cfg, out)
    ds = _load_data(run, cfg)
    basis = _basis(cfg)
    feats = bps.encode_many([v.cloud for v in ds.views], basis)
    stats = _gripper(ds).stats(cfg["p_scale"])
    tr = ds.arrays("train", feats, positives_only=True)
    run.phase("encode")
    conf = sp.DenoiserConfig(k=stats.k, n_basis=basis.size, width=cfg["width"], heads=cfg["heads"], obj_tokens=cfg["tokens"])
    hyper = sp.SamplerHyper(lr=cfg["lr"], gamma=cfg["gamma"], batch_size=cfg["batch"], epochs=cfg["epochs"], seed=cfg["seed"])
    model, hist = sp.train_sampler(tr["features"], tr["grasps"], tr["feature_index"], basis, stats, conf, hyper)
    run.phase("train")
    save_denoiser(out / "sampler.gdw", model, {"hyper": hyper.to_dict()})
    _write_json(out / "history.json", {"loss": hist["loss"], "lr": hist["lr"]})
    run.extra["weights_hash"] = file_sha256(out / "sampler.gdw")
    run.extra["hyper"] = hyper.to_dict()
    run.extra["reference_hyper"] = sp.REFERENCE_SAMPLER_HYPER.to_dict()
    run.write()
    print(f"sampler trained: final loss {hist['loss'][-1]:.4f}")


def _eval_setup(cfg, ds):
    basis = _basis(cfg)
    feats = bps.encode_many([v.cloud for v in ds.views], basis)
    stats = _gripper(ds).stats(cfg["p_scale"])
    hyper = ev.EvaluatorHyper(lr=cfg["lr"], batch_size=cfg["batch"], epochs=cfg["epochs"], val_fraction=cfg["val_fraction"], seed=cfg["seed"])
    return basis, feats, stats, hyper


def cmd_train_evaluator(cfg, out: Path, threads):
    run = Run("train-evaluator", cfg, out)
    ds = _load_data(run, cfg)
    basis, feats, stats, hyper = _eval_setup(cfg, ds)
    run.phase("encode")
    conf = ev.EvaluatorConfig(k=stats.k, n_basis=basis.size, freq=ev.FreqConfig.parse(cfg["freq"]))
    tr = ds.arrays("train", feats)
    model, hist = ev.train_evaluator(tr["features"], tr["grasps"], tr["feature_index"], tr["labels"], tr["object_ids"], basis, stats, conf, hyper)
    run.phase("train")
    te = ds.arrays("test", feats)
    X, _ = normalize_grasp(te["grasps"], stats)
    metrics = ev.classification_metrics(te["labels"], ev.predict_indexed(model, X, feats, te["feature_index"]) >= 0.5)
    run.phase("test")
    save_evaluator(out / "evaluator.gdw", model, {"hyper": hyper.to_dict()})
    _write_json(out / "history.json", {k: hist[k] for k in ("loss", "val_loss", "val_metrics", "lr")})
    _write_json(out / "metrics.json", metrics)
    run.extra["weights_hash"] = file_sha256(out / "evaluator.gdw")
    run.extra["hyper"] = hyper.to_dict()
    run.extra["reference_hyper"] = ev.REFERENCE_EVALUATOR_HYPER.to_dict()
    run.extra["test_metrics"] = metrics
    run.write()
    print(f"evaluator {conf.freq.label()}: held-out total accuracy {metrics['total_acc']:.2f}%")


def cmd_sample(cfg, out: Path, threads):
    run = Run("sample", cfg, out)
    run.input(cfg["model"])
    model = load_denoiser(cfg["model"])
    cloud, center = _centered_cloud(run, cfg["cloud"])
    f = bps.encode(cloud, model.basis)
    rng = np.random.default_rng(cfg["seed"])
    G = denormalize_grasp(sp.sample_model_space(model, f, cfg["n"], rng), model.stats) if cfg["n"] else np.zeros((0, model.stats.dim))
    run.phase("sample")
    write_grasps(out / "grasps.json", array_to_grasps(_shift(G, center)) if len(G) else [])
    run.write()
    print(f"wrote {len(G)} grasps")


def cmd_score(cfg, out: Path, threads):
    run = Run("score", cfg, out)
    run.input(cfg["model"])
    run.input(cfg["grasps"])
    model = load_evaluator(cfg["model"])
    cloud, center = _centered_cloud(run, cfg["cloud"])
    f = bps.encode(cloud, model.basis)
    grasps = read_grasps(cfg["grasps"])
    G = np.array([g.flatten() for g in grasps]).reshape(-1, model.stats.dim)
    if len(G):
        G[:, :3] -= center
    scores = ev.score(model, G, f) if len(G) else np.zeros(0)
    run.phase("score")
    _write_json(out / "scores.json", [float(s) for s in scores])
    run.write()
    print(f"scored {len(scores)} grasps" + (f", mean {np.mean(scores):.4f}" if len(scores) else ""))


def _row(method, G, report, n_total, obj=None, gripper=None, oracle=None):
    row = {
        "method": method,
        "n": int(n_total),
        "eval_score": float(np.mean(report["score_after"])) if len(report["score_after"]) else float("nan"),
        "ms_per_grasp": 1000.0 * report["timing"]["total"] / max(n_total, 1),
    }
    if obj is not None and len(G):
        row["success"] = tw.success_rate(G, obj, gripper, oracle)
    if len(G) >= 2:
        row["diversity_mean"], row["diversity_std"] = tw.diversity_entropy(G, gripper)
    return row


def cmd_refine(cfg, out: Path, threads):
    run = Run("refine", cfg, out)
    run.input(cfg["sampler"])
    run.input(cfg["evaluator"])
    den = load_denoiser(cfg["sampler"])
    evm = load_evaluator(cfg["evaluator"])
    cloud, center = _centered_cloud(run, cfg["cloud"])
    f = bps.encode(cloud, den.basis)
    grasps = None
    if cfg["grasps"]:
        run.input(cfg["grasps"])
        grasps = np.array([g.flatten() for g in read_grasps(cfg["grasps"])]).reshape(-1, den.stats.dim)
        grasps[:, :3] -= center
    rng = np.random.default_rng(cfg["seed"])
    G, report = rf.refine_batch(cfg["method"], den, evm, f, cfg["n"], rng, _proposal(cfg), rf.GuidanceConfig(cfg["lambda"]), grasps=grasps)
    run.phase("refine")
    obj = None
    if cfg["object"]:
        run.input(cfg["object"])
        obj = tw.ToyObject.from_dict(json.loads(Path(cfg["object"]).read_text())).translated(-center)
    gripper = tw.ToyGripper(k=den.stats.k)
    name = {v: k for k, v in BENCH_ROWS.items()}[cfg["method"]] if cfg["method"] in rf.METHODS else cfg["method"]
    row = _row(name, G, report, len(G), obj, gripper)
    write_grasps(out / "grasps.json", array_to_grasps(_shift(G, center)) if len(G) else [])
    # wall-clock numbers live only in the manifest so artifacts stay reproducible
    _write_json(out / "report.json", {k: v for k, v in report.items() if k != "timing"})
    (out / "report.md").write_text(_markdown([row], timing=False))
    run.extra["results"] = [row]
    run.write()
    print(_markdown([row]), end="")


def cmd_ablate(cfg, out: Path, threads):
    run = Run("ablate", cfg, out)
    ds = _load_data(run, cfg)
    basis, feats, stats, hyper = _eval_setup(cfg, ds)
    run.phase("encode")
    results = ev.run_ablation(ds.arrays("train", feats), ds.arrays("test", feats), cfg["freqs"], basis, stats, hyper)
    run.phase("train")
    table = ev.ablation_report(results)
    (out / "ablation.md").write_text(table)
    _write_json(out / "ablation.json", results)
    run.write()
    print(table, end="")


def cmd_bench(cfg, out: Path, threads):
    run = Run("bench", cfg, out)
    run.input(cfg["sampler"])
    run.input(cfg["evaluator"])
    den = load_denoiser(cfg["sampler"])
    evm = load_evaluator(cfg["evaluator"])
    ds = _load_data(run, cfg)
    gripper, oracle = _gripper(ds), _oracle(ds)
    rows_wanted = [m.strip() for m in cfg["methods"].split(",") if m.strip()]
    for m in rows_wanted:
        if m not in BENCH_ROWS:
            raise UsageError(f"unknown bench row {m!r}; choose from {', '.join(BENCH_ROWS)}")
    views = ds.views_in("test")[: cfg["test_views"]]
    feats = bps.encode_many([ds.views[v].cloud for v in views], den.basis)
    run.phase("encode")
    prop, guid = _proposal(cfg), rf.GuidanceConfig(cfg["lambda"])
    rows = []
    for mi, name in enumerate(rows_wanted):
        method = BENCH_ROWS[name]
        allG, succ, scores, secs = [], [], [], 0.0
        for j, vi in enumerate(views):
            rng = np.random.default_rng([cfg["seed"], mi, j])
            G, rep = rf.refine_batch(method, den, evm, feats[j], cfg["n"], rng, prop, guid)
            secs += rep["timing"]["total"]
            allG.append(G)
            scores.extend(rep["score_after"])
            succ.append(tw.success_rate(G, ds.views[vi].obj, gripper, oracle))
        G = np.concatenate(allG)
        dm, dsd = tw.diversity_entropy(G, gripper)
        rows.append(
            {
                "method": name,
                "n": int(len(G)),
                "success": float(np.mean(succ)),
                "eval_score": float(np.mean(scores)),
                "diversity_mean": dm,
                "diversity_std": dsd,
                "ms_per_grasp": 1000.0 * secs / len(G),
            }
        )
        run.phase(name)
        log.info("bench %s done", name)
    table = _markdown(rows)
    (out / "bench.md").write_text(_markdown(rows, timing=False))
    _write_json(out / "bench.json", [{k: v for k, v in r.items() if k != "ms_per_grasp"} for r in rows])
    run.extra["results"] = rows
    run.write()
    print(table, end="")


def _fmt(v, nd=2):
    return "n/a" if v is None or (isinstance(v, float) and not np.isfinite(v)) else f"{v:.{nd}f}"


def _markdown(rows, timing: bool = True) -> str:
    head = "| Method | Success (%) | Eval. score | Diversity mean | Diversity std |"
    sep = "|---|---|---|---|---|"
    if timing:
        head += " Time (ms/grasp) |"
        sep += "---|"
    lines = [head, sep]
    for r in rows:
        line = (
            f"| {r['method']} | {_fmt(r.get('success'))} | {_fmt(r.get('eval_score'), 4)} | "
            f"{_fmt(r.get('diversity_mean'), 3)} | {_fmt(r.get('diversity_std'), 3)} |"
        )
        if timing:
            line += f" {_fmt(r.get('ms_per_grasp'), 1)} |"
        lines.append(line)
    return "\n".join(lines) + "\n"


def cmd_report(runs, out: Path | None):
    if not runs:
        raise MissingManifest("report needs at least one run directory")
    rows = []
    for d in runs:
        mf = Path(d) / "manifest.json"
        if not mf.is_file():
            raise MissingManifest(f"{d}: no manifest.json")
        manifest = json.loads(mf.read_text())
        for r in manifest.get("results", []):
            rows.append({**r, "run": str(d)})
    if not rows:
        raise MissingManifest("no method results in the given manifests")
    table = _markdown(rows)
    if out is not None:
        out = _fresh_dir(out)
        run = Run("report", {"runs": [str(d) for d in runs]}, out)
        for d in runs:
            run.input(Path(d) / "manifest.json")
        (out / "report.md").write_text(table)
        _write_json(out / "report.json", rows)
        run.write()
    print(table, end="")


def cmd_bps_encode(cfg, out: Path, threads):
    run = Run("bps encode", cfg, out)
    if cfg["model"]:
        run.input(cfg["model"])
        from .models import read_meta

        kind = read_meta(cfg["model"])["kind"]
        basis = (load_denoiser if kind == "denoiser" else load_evaluator)(cfg["model"]).basis
    else:
        basis = _basis(cfg)
    run.input(cfg["cloud"])
    cloud = read_cloud(cfg["cloud"])
    f = bps.encode(cloud, basis)
    write_vector(out / "encoding.txt", f)
    run.write()
    print(f"encoded {len(cloud)} points against {basis.size} basis points")


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train-sampler": cmd_train_sampler,
    "train-evaluator": cmd_train_evaluator,
    "sample": cmd_sample,
    "score": cmd_score,
    "refine": cmd_refine,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
    "bps encode": cmd_bps_encode,
}


# ------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="single source of randomness (default 0)")
    p.add_argument("--out", default=None, help="fresh output run directory")
    p.add_argument("--config", default=None, help="TOML config or a previous manifest.json")
    p.add_argument("--threads", type=int, default=None, help="cap on worker count")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_opts(p, opts):
    for o in opts:
        p.add_argument(f"--{o.name}", dest=_key(o.name), default=None, help=f"{o.help} (default {o.default})")


HELP = {
    "gen-data": "generate a labeled toy-world dataset",
    "train-sampler": "train the diffusion sampler",
    "train-evaluator": "train the grasp evaluator",
    "sample": "draw grasps for a point cloud",
    "score": "score grasps with an evaluator",
    "refine": "sample and refine grasps with EGD and/or ESR",
    "ablate": "frequency-encoding ablation of the evaluator",
    "bench": "compare sampling and refinement methods on test views",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graspdiff", description="Grasp diffusion toolkit on a synthetic grasp world.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, opts in COMMANDS.items():
        if name == "bps encode" or name == "report":
            continue
        p = sub.add_parser(name, help=HELP.get(name))
        _add_common(p)
        _add_opts(p, opts)
    rp = sub.add_parser("report", help="merge result tables from run directories")
    rp.add_argument("runs", nargs="*")
    rp.add_argument("--out", default=None)
    rp.add_argument("-v", "--verbose", action="store_true")
    bp = sub.add_parser("bps", help="basis point set utilities")
    bsub = bp.add_subparsers(dest="bps_command", parser_class=_Parser)
    enc = bsub.add_parser("encode", help="encode a point cloud")
    _add_common(enc)
    _add_opts(enc, COMMANDS["bps encode"])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        # --help / --version exit 0, parse errors exit 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(ns, "verbose", False) else logging.WARNING, format="%(name)s: %(message)s")
    if ns.command is None:
        parser.print_usage(sys.stderr)
        print("graspdiff: error: a subcommand is required", file=sys.stderr)
        return 2
    command = ns.command
    if command == "bps":
        if ns.bps_command is None:
            print("graspdiff bps: error: a subcommand is required (encode)", file=sys.stderr)
            return 2
        command = "bps encode"
    try:
        if command == "report":
            cmd_report(ns.runs, ns.out)
            return 0
        cfg = _resolve(command, ns)
        out_arg = ns.out if ns.out is not None else os.environ.get(ENV_PREFIX + "OUT")
        if out_arg is None:
            raise UsageError("--out is required")
        out = _fresh_dir(out_arg)
        HANDLERS[command](cfg, out, ns.threads)
    except UsageError as exc:
        print(f"graspdiff: error: {exc}", file=sys.stderr)
        return 2
    except (GraspDiffError, OSError, ValueError, KeyError) as exc:
        print(f"graspdiff: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
