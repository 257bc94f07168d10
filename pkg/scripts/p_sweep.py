"""Target accuracy of learned-mask training across kept fractions p."""
import numpy as np
from _common import dump, parser, seeds

from freqrand import experiments


def main():
    args = parser(__doc__, "0,1,2").parse_args()
    kw = {} if args.epochs is None else {"epochs": args.epochs}
    acc = experiments.p_sweep(seeds(args.seeds), **kw)
    if args.json:
        return dump(acc)
    for p, values in acc.items():
        print(f"p={p:.3f}  mean {np.mean(values):.3f}  per seed " + " ".join(f"{v:.3f}" for v in values))


if __name__ == "__main__":
    main()
