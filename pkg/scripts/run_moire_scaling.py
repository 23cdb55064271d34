"""Unseen-display AUROC against the number of training displays (probe-display folds)."""

from _common import dump, parser, samples_for, setup, train_config

from mtof.evaluation import MODELS, curve_csv, moire_scaling


def main() -> None:
    p = parser(__doc__)
    p.set_defaults(samples_per_object=60)
    p.add_argument("--models", nargs="+", default=["naive_cnn", "mtofnet"], choices=MODELS)
    p.add_argument("--counts", type=int, nargs="+", default=[1, 2, 3, 4])
    p.add_argument("--folds", type=int, default=None, help="probe displays (default: all)")
    args = p.parse_args()
    setup(args)
    out = {}
    for seed in args.seeds:
        samples = samples_for(args, seed)
        for model in args.models:
            points = moire_scaling(samples, args.counts, seed, train_config(args, seed), model, args.folds)
            (args.out / f"moire_{model}_seed{seed}.csv").write_text(curve_csv(points))
            out[f"{model}/seed{seed}"] = [pt.to_dict() for pt in points]
            for pt in points:
                print(f"seed {seed} {model:10s} k={pt.k} auroc {pt.metrics['auroc']:.4f}")
    dump(args.out / "moire_scaling.json", out)


if __name__ == "__main__":
    main()
