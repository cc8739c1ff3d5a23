"""Train every variant on the maze presets and print a results table.

    python scripts/variant_sweep.py --presets hard superhard --out runs/sweep
"""

import argparse
import json
from pathlib import Path

from pessorl.experiment import ExperimentConfig, run_experiment
from pessorl.regularizers import Kind

COLUMNS = ("success_rate", "final_return", "delta_k", "ood_delta_k", "epsilon_final")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--presets", nargs="+", default=["hard", "superhard"])
    p.add_argument("--variants", nargs="+", default=[k.value for k in Kind])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/sweep")
    args = p.parse_args()

    rows = []
    for preset in args.presets:
        for kind in args.variants:
            seeds = {"seed": args.seed}
            cfg = ExperimentConfig.from_dict({
                "maze": {"preset": preset},
                "dataset": seeds, "ensemble": seeds, "eval": seeds,
                "trainer": {"variant": {"kind": kind}, "seed": args.seed},
                "output_dir": str(Path(args.out) / f"{preset}-{kind}"),
            })
            s = run_experiment(cfg)
            rows.append((preset, kind, s))
            print(f"{preset:10s} {kind:15s} " + " ".join(
                f"{c}={s[c]:.3f}" if s[c] is not None else f"{c}=-" for c in COLUMNS
            ), flush=True)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    table = [{"preset": p, "variant": k, **{c: s[c] for c in COLUMNS}} for p, k, s in rows]
    (Path(args.out) / "sweep.json").write_text(json.dumps(table, indent=2) + "\n")


if __name__ == "__main__":
    main()
