"""Synthetic benchmark: every detector under every protocol, 3 train / 2 unseen displays."""

import time

from _common import displays, dump, parser, samples_for, setup, train_config

from mtof.evaluation import MODELS, run_protocols


def main() -> None:
    p = parser(__doc__)
    p.add_argument("--models", nargs="+", default=list(MODELS), choices=MODELS)
    p.add_argument("--train-displays", type=int, default=3)
    args = p.parse_args()
    setup(args)
    rows = []
    for seed in args.seeds:
        samples = samples_for(args, seed)
        chosen = displays(samples)[: args.train_displays]
        for model in args.models:
            t = time.perf_counter()
            reports = run_protocols(model, samples, chosen, train_config(args, seed))
            secs = round(time.perf_counter() - t, 1)
            for mode, r in reports.items():
                rows.append({"seed": seed, "seconds": secs, **r.to_dict()})
                print(f"seed {seed} {model:14s} {mode:7s} " + " ".join(f"{k} {v:.4f}" for k, v in r.metrics.items()))
    dump(args.out / "benchmark.json", rows)


if __name__ == "__main__":
    main()
