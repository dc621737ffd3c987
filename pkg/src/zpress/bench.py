"""Experiment orchestration: scaling curves, anchor sweeps, ablations and
selection-strategy comparisons, all written as plot-ready CSV.

Training runs are cached on disk by a hash of their configuration and of the
package source, so experiments that share a run (the default model appears in
most grids) train it once.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .numcore import memory
from .pipeline import Checkpoint, EvalResult, PipelineConfig, evaluate, init_checkpoint, train, write_metrics
from .selection import STRATEGIES
from .zpressor import ABLATIONS, MODES

AXES = ("k_views", "n_anchors", "strategy", "fusion_mode", "beta", "ablation")
_NAME_RE = re.compile(r"^[A-Za-z0-9._-]+$")


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj):
    """SHA-256 of the canonical JSON form; equal iff the configs are equal."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    base: PipelineConfig
    axis: str
    values: tuple
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "."
    baselines: tuple = ()  # (label, extent) pairs for the anchor sweep
    eval_overrides: tuple = ()  # (field, value) pairs applied at evaluation
    reference: bool = True  # strategy grid: also train a no_fusion reference

    def __post_init__(self):
        if not _NAME_RE.match(self.name or ""):
            raise ConfigError(f"experiment name {self.name!r} is not filesystem-safe")
        if self.axis not in AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; expected one of {', '.join(AXES)}")
        if not self.values:
            raise ConfigError("sweep values must be non-empty")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        for v in self.values:
            variant_config(self.base, self.axis, v)

    @classmethod
    def from_dict(cls, data, out_dir="."):
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object")
        allowed = {"name", "base", "axis", "values", "seeds", "baselines", "eval", "reference"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown experiment fields: {', '.join(unknown)}")
        for key in ("name", "axis", "values"):
            if key not in data:
                raise ConfigError(f"experiment config is missing {key!r}")
        base = PipelineConfig.from_dict(data.get("base", {}))
        evals = data.get("eval", {})
        if not isinstance(evals, dict):
            raise ConfigError("'eval' must be an object of config overrides")
        base.replace(**_check_fields(evals))
        baselines = data.get("baselines", {})
        if not isinstance(baselines, dict):
            raise ConfigError("'baselines' must map labels to trajectory extents")
        return cls(
            name=data["name"],
            base=base,
            axis=data["axis"],
            values=tuple(_freeze(v) for v in data["values"]),
            seeds=tuple(int(s) for s in data.get("seeds", (0, 1, 2, 3, 4))),
            out_dir=str(out_dir),
            baselines=tuple(sorted((str(k), float(v)) for k, v in baselines.items())),
            eval_overrides=tuple(sorted(evals.items())),
            reference=bool(data.get("reference", True)),
        )

    def to_dict(self):
        return {
            "name": self.name,
            "base": self.base.to_dict(),
            "axis": self.axis,
            "values": [list(v) if isinstance(v, tuple) else v for v in self.values],
            "seeds": list(self.seeds),
            "baselines": dict(self.baselines),
            "eval": dict(self.eval_overrides),
            "reference": self.reference,
        }

    def with_seeds(self, seeds):
        return ExperimentSpec(self.name, self.base, self.axis, self.values, tuple(seeds), self.out_dir, self.baselines,
                              self.eval_overrides, self.reference)


def _freeze(v):
    return tuple(v) if isinstance(v, list) else v


def _check_fields(overrides):
    known = set(PipelineConfig.__dataclass_fields__)
    bad = sorted(set(overrides) - known)
    if bad:
        raise ConfigError(f"unknown config fields: {', '.join(bad)}")
    return overrides


def variant_config(base: PipelineConfig, axis, value):
    """The config for one sweep value; raises ConfigError naming the value."""
    try:
        if axis == "k_views":
            return base.replace(k_views=int(value))
        if axis == "n_anchors":
            return base.replace(n_anchors=int(value))
        if axis == "strategy":
            if value not in STRATEGIES:
                raise ConfigError(f"unknown strategy {value!r}")
            return base.replace(strategy=value)
        if axis == "fusion_mode":
            if value not in MODES:
                raise ConfigError(f"unknown fusion mode {value!r}")
            return base.replace(mode=value)
        if axis == "beta":
            return base.replace(beta=float(value))
        if axis == "ablation":
            flags = () if value in ("full", "", None) else ((value,) if isinstance(value, str) else tuple(value))
            if not set(flags) <= set(ABLATIONS):
                raise ConfigError(f"unknown ablation {value!r}")
            return base.replace(ablation=flags)
    except ConfigError as exc:
        raise ConfigError(f"{axis}={value!r}: {exc}") from exc
    raise ConfigError(f"unknown sweep axis {axis!r}")


def value_label(axis, value):
    if axis == "ablation":
        return "full" if value in ("full", "", None, ()) else (value if isinstance(value, str) else "+".join(value))
    return str(value)


# run cache ----------------------------------------------------------------------


def _source_digest():
    root = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


_SOURCE = None


def cache_root(out_dir):
    """Where trained runs are kept: $ZPRESS_CACHE if set, else under the output
    directory, so nothing is written outside it unless asked."""
    env = os.environ.get("ZPRESS_CACHE")
    return Path(env) if env else Path(out_dir) / "runs"


@dataclass
class TrainedRun:
    config: PipelineConfig
    checkpoint: Checkpoint
    metrics_path: Path
    directory: Path


def trained_run(cfg: PipelineConfig, cache=None):
    """Train ``cfg`` (or load it from the cache) and return the run."""
    global _SOURCE
    if _SOURCE is None:
        _SOURCE = _source_digest()
    cache = Path(cache) if cache is not None else cache_root(".")
    key = config_hash({"config": cfg.to_dict(), "source": _SOURCE})[:24]
    d = cache / key
    ck_path = d / "checkpoint.zptn"
    if not ck_path.exists():
        d.mkdir(parents=True, exist_ok=True)
        ckpt, rows = train(cfg)
        write_metrics(d / "metrics.csv", rows)
        tmp = d / "checkpoint.tmp.zptn"
        ckpt.save(tmp)
        os.replace(str(tmp) + ".json", str(ck_path) + ".json")
        os.replace(tmp, ck_path)
    return TrainedRun(cfg, Checkpoint.load(ck_path), d / "metrics.csv", d)


def cached_eval(run: TrainedRun, eval_cfg: PipelineConfig, tag):
    """Evaluation results are cached beside the run (PSNR only; timing is live)."""
    key = config_hash(eval_cfg.to_dict())[:16]
    path = run.directory / f"eval-{tag}-{key}.json"
    if path.exists():
        data = json.loads(path.read_text())
        return EvalResult(**data)
    res = evaluate(run.checkpoint, eval_cfg)
    path.write_text(json.dumps(res.__dict__))
    return res


# CSV ---------------------------------------------------------------------------------


def _cell(v):
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def write_csv(path, header, rows):
    """Rows are sorted by their leading key columns before writing."""
    rows = sorted(rows, key=lambda r: tuple(_sort_key(r[h]) for h in header))
    lines = [",".join(header)] + [",".join(_cell(r[h]) for h in header) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")
    return rows


def _sort_key(v):
    return (0, v, "") if isinstance(v, (int, float)) else (1, 0, str(v))


def median(xs):
    return float(statistics.median(xs))


# commands ---------------------------------------------------------------------------


def _eval_cfg(spec, cfg):
    return cfg.replace(**dict(spec.eval_overrides)) if spec.eval_overrides else cfg


def cmd_scaling(spec: ExperimentSpec, out_dir=None, repeats=3):
    """Primitive count, forward wall-clock and peak live-tensor bytes versus K,
    for the compressed model (fixed N) and the uncompressed baseline (N = K)."""
    if spec.axis != "k_views":
        raise ConfigError("scaling sweeps the k_views axis")
    out = Path(out_dir or spec.out_dir)
    rows = []
    for k in spec.values:
        k = int(k)
        for seed in spec.seeds:
            variants = {
                "compressed": variant_config(spec.base, "k_views", k).replace(seed=seed),
                "baseline": spec.base.replace(k_views=k, n_anchors=k, mode="no_fusion", seed=seed),
            }
            for name, cfg in variants.items():
                cfg = _eval_cfg(spec, cfg)
                ckpt = init_checkpoint(cfg)
                evaluate(ckpt, cfg.replace(eval_scenes=1))  # warm caches and data
                times = []
                peak = 0
                n_prim = 0
                for _ in range(repeats):
                    memory.reset_peak()
                    base_live = memory.live
                    res = evaluate(ckpt, cfg)
                    peak = max(peak, memory.peak - base_live)
                    times.append(res.wallclock_ms)
                    n_prim = res.n_primitives
                rows.append(dict(k_views=k, variant=name, seed=seed, n_anchors=cfg.n_anchors, n_primitives=n_prim,
                                 wallclock_ms=median(times), peak_bytes=int(peak)))
    header = ("k_views", "variant", "seed", "n_anchors", "n_primitives", "wallclock_ms", "peak_bytes")
    rows = write_csv(out / "scaling.csv", header, rows)
    return out / "scaling.csv", rows


def _train_eval(cfg, spec, tag, cache):
    run = trained_run(cfg, cache)
    res = cached_eval(run, _eval_cfg(spec, cfg), tag)
    return run, res


def cmd_anchor_sweep(spec: ExperimentSpec, out_dir=None, cache=None):
    """Held-out PSNR versus number of anchors, for each trajectory extent."""
    if spec.axis != "n_anchors":
        raise ConfigError("the anchor sweep varies n_anchors")
    if not spec.baselines:
        raise ConfigError("anchor sweep needs 'baselines', e.g. {\"narrow\": 0.6, \"wide\": 1.6}")
    out = Path(out_dir or spec.out_dir)
    cache = cache if cache is not None else cache_root(out)
    rows = []
    for label, extent in spec.baselines:
        for n in spec.values:
            for seed in spec.seeds:
                cfg = variant_config(spec.base.replace(baseline=extent), "n_anchors", n).replace(seed=seed)
                _, res = _train_eval(cfg, spec, "heldout", cache)
                rows.append(dict(baseline=label, extent=extent, n_anchors=int(n), seed=seed, psnr_mean=res.psnr_mean,
                                 psnr_median=res.psnr_median, task=res.task, kl=res.kl))
    header = ("baseline", "extent", "n_anchors", "seed", "psnr_mean", "psnr_median", "task", "kl")
    rows = write_csv(out / "anchor_sweep.csv", header, rows)
    summary = {}
    for label, _ in spec.baselines:
        curve = {int(n): median([r["psnr_mean"] for r in rows if r["baseline"] == label and r["n_anchors"] == int(n)])
                 for n in spec.values}
        best = max(curve, key=lambda n: (curve[n], -n))
        summary[label] = {"median_psnr": {str(n): v for n, v in curve.items()}, "best_n": best}
    (out / "anchor_sweep_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out / "anchor_sweep.csv", rows, summary


def _variant_rows(spec, variants, cache):
    rows = []
    for label, cfg0 in variants:
        for seed in spec.seeds:
            cfg = cfg0.replace(seed=seed)
            run, res = _train_eval(cfg, spec, "heldout", cache)
            curve = training_curve(run.metrics_path)
            rows.append(dict(variant=label, seed=seed, psnr_mean=res.psnr_mean, psnr_median=res.psnr_median, task=res.task,
                             kl=res.kl, total=res.total, task_start=curve["task_start"], task_end=curve["task_end"],
                             final_train_kl=curve["kl_end"]))
    return rows


TAIL_WINDOW = 50  # training steps averaged for the end-of-run loss


def training_curve(metrics_path, window=TAIL_WINDOW):
    """Start and end task loss / KL of a training log. The end values average
    the last ``window`` logged steps since a single step's loss depends on
    which scene and targets it drew."""
    lines = Path(metrics_path).read_text().strip().splitlines()[1:]
    if not lines:
        nan = float("nan")
        return {"task_start": nan, "task_end": nan, "kl_end": nan}
    cols = np.array([[float(x) for x in ln.split(",")[1:3]] for ln in lines])
    tail = cols[-window:]
    return {"task_start": float(cols[0, 0]), "task_end": float(tail[:, 0].mean()), "kl_end": float(tail[:, 1].mean())}


VARIANT_HEADER = ("variant", "seed", "psnr_mean", "psnr_median", "task", "kl", "total", "task_start", "task_end",
                  "final_train_kl")


def _ordering(rows, labels):
    med = {lab: median([r["psnr_mean"] for r in rows if r["variant"] == lab]) for lab in labels}
    order = sorted(labels, key=lambda lab: -med[lab])
    return {"median_psnr": med, "order": order}


def cmd_ablate(spec: ExperimentSpec, out_dir=None, cache=None):
    """Train each variant of a fusion-mode, ablation or beta grid on shared seeds."""
    if spec.axis not in ("fusion_mode", "ablation", "beta"):
        raise ConfigError("ablate sweeps fusion_mode, ablation or beta")
    out = Path(out_dir or spec.out_dir)
    cache = cache if cache is not None else cache_root(out)
    variants = [(value_label(spec.axis, v), variant_config(spec.base, spec.axis, v)) for v in spec.values]
    rows = _variant_rows(spec, variants, cache)
    header = VARIANT_HEADER
    rows = write_csv(out / "ablation.csv", header, rows)
    summary = _ordering(rows, [lab for lab, _ in variants])
    summary["median_kl"] = {lab: median([r["kl"] for r in rows if r["variant"] == lab]) for lab, _ in variants}
    (out / "ablation_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out / "ablation.csv", rows, summary


def cmd_strategies(spec: ExperimentSpec, out_dir=None, cache=None):
    """Train one model per anchor-selection strategy (plus a no_fusion reference)."""
    if spec.axis != "strategy":
        raise ConfigError("strategies sweeps the strategy axis")
    out = Path(out_dir or spec.out_dir)
    cache = cache if cache is not None else cache_root(out)
    variants = [(str(v), variant_config(spec.base, "strategy", v)) for v in spec.values]
    if spec.reference:
        variants.append(("no_fusion", spec.base.replace(mode="no_fusion")))
    rows = _variant_rows(spec, variants, cache)
    header = VARIANT_HEADER
    rows = write_csv(out / "strategies.csv", header, rows)
    summary = _ordering(rows, [lab for lab, _ in variants])
    (out / "strategies_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out / "strategies.csv", rows, summary


def write_manifest(out_dir, command, config_obj, files, seed=None):
    out = Path(out_dir)
    rel = sorted({str(Path(f).resolve().relative_to(out.resolve())) for f in files})
    manifest = {
        "command": command,
        "config_hash": config_hash(config_obj),
        "config": config_obj,
        "files": rel,
        "seed": seed,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
