"""Train-group x test-group AUROC matrices for display and device taxonomies."""

from _common import dump, parser, samples_for, setup, train_config

from mtof.evaluation import MODELS, confusion_by_taxonomy, matrix_csv, taxonomy_reports


def main() -> None:
    p = parser(__doc__)
    p.add_argument("--model", default="mtofnet", choices=MODELS)
    p.add_argument("--group-by", nargs="+", default=["display_type", "device_type"])
    args = p.parse_args()
    setup(args)
    for seed in args.seeds:
        samples = samples_for(args, seed)
        for key in args.group_by:
            reports = taxonomy_reports(samples, key, train_config(args, seed), args.model)
            groups, mat = confusion_by_taxonomy(reports, key)
            text = matrix_csv(groups, mat)
            (args.out / f"taxonomy_{key}_{args.model}_seed{seed}.csv").write_text(text)
            print(text)
            dump(args.out / f"taxonomy_{key}_{args.model}_seed{seed}.json", [r.to_dict() for r in reports])


if __name__ == "__main__":
    main()
