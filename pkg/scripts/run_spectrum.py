"""Class-mean radial power spectra of ToF maps and RGB images."""

import numpy as np
from _common import parser, samples_for, setup

from mtof.evaluation import rows_to_csv
from mtof.spectrum import class_mean_profiles, power_spectrum_1d


def main() -> None:
    args = parser(__doc__).parse_args()
    setup(args)
    for seed in args.seeds:
        samples = samples_for(args, seed)
        labels = np.array([int(s.is_display) for s in samples])
        for modality in ("tof", "image"):
            maps = [s.tof.values if modality == "tof" else s.rgb.values for s in samples]
            real, disp = class_mean_profiles(np.stack([power_spectrum_1d(m) for m in maps]), labels)
            rows = [{"radius": r, "mean_real": f"{a:.10g}", "mean_display": f"{b:.10g}"} for r, (a, b) in enumerate(zip(real, disp))]
            path = args.out / f"spectrum_{modality}_seed{seed}.csv"
            path.write_text(rows_to_csv(rows, ["radius", "mean_real", "mean_display"]))
            hi = len(real) // 4
            print(f"{path}: high-band mean real {real[hi:].mean():.4f} display {disp[hi:].mean():.4f}")


if __name__ == "__main__":
    main()
