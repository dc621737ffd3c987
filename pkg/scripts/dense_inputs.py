"""Train at K=12, evaluate at K=36, and compare against the uncompressed model.

Usage: python scripts/dense_inputs.py [--out out/dense] [--seeds 0 1 2 3 4]

Writes dense_inputs.csv (one row per model and seed) and prints the median
PSNR of each model at K=36 along with the K=36 / K=12 wall-clock ratio.
"""

import argparse
import json
import statistics
from pathlib import Path

from zpress import bench
from zpress.pipeline import PipelineConfig, evaluate

HEADER = ("model", "seed", "k_eval", "psnr_mean", "wallclock_ms", "n_primitives")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/dense")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = bench.cache_root(out)
    rows = []
    for seed in args.seeds:
        for model in ("default", "no_fusion"):
            cfg = PipelineConfig(seed=seed, mode=model)
            run = bench.trained_run(cfg, cache)
            for k in (12, 36):
                res = evaluate(run.checkpoint, cfg.replace(k_views=k))
                rows.append(dict(model=model, seed=seed, k_eval=k, psnr_mean=res.psnr_mean,
                                 wallclock_ms=res.wallclock_ms, n_primitives=res.n_primitives))
    bench.write_csv(out / "dense_inputs.csv", HEADER, rows)

    def med(model, k, key):
        return statistics.median(r[key] for r in rows if r["model"] == model and r["k_eval"] == k)

    summary = {
        "psnr_k36": {m: med(m, 36, "psnr_mean") for m in ("default", "no_fusion")},
        "time_ratio_k36_over_k12": med("default", 36, "wallclock_ms") / med("default", 12, "wallclock_ms"),
    }
    (out / "dense_inputs_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
