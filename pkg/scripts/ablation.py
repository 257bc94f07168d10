"""Target accuracy of baseline, analysis-only, learning-only and combined training."""
import numpy as np
from _common import dump, parser, seeds

from freqrand import experiments


def main():
    args = parser(__doc__, "0,1,2,3,4").parse_args()
    kw = {} if args.epochs is None else {"epochs": args.epochs}
    acc = experiments.ablation(seeds(args.seeds), **kw)
    if args.json:
        return dump(acc)
    for mode, values in acc.items():
        print(f"{mode:<9} mean {np.mean(values):.3f}  per seed " + " ".join(f"{v:.3f}" for v in values))


if __name__ == "__main__":
    main()
