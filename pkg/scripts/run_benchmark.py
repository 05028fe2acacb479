"""Run the six-model synthetic comparison and write a per-seed AUC table."""
import argparse
import json
import os
import sys

from touchcredit.benchmark import BenchmarkConfig, config_dict, pairwise_wins, run_benchmark


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", default="results/benchmark")
    args = ap.parse_args(argv)
    cfg = BenchmarkConfig(seeds=tuple(range(args.seeds)))
    os.makedirs(args.out, exist_ok=True)
    result = run_benchmark(cfg, log=lambda m: print(m, flush=True))
    result.write_csv(os.path.join(args.out, "benchmark.csv"))
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(config_dict(cfg), fh, indent=2)
    print(result.summary())
    for (hi, lo), n in pairwise_wins(list(result.auc_table().values())).items():
        print(f"{hi} over {lo}: {n}/{len(cfg.seeds)} seeds")


if __name__ == "__main__":
    sys.exit(main())
