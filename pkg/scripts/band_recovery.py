"""Band-reject analysis on the toy benchmark against the planted layout."""
from _common import dump, parser, seeds

from freqrand import experiments


def main():
    args = parser(__doc__, "0,1,2").parse_args()
    kw = {} if args.epochs is None else {"epochs": args.epochs}
    rows = experiments.band_recovery(seeds(args.seeds), **kw)
    if args.json:
        return dump(rows)
    for r in rows:
        print(f"seed {r['seed']}  style recall {r['style_recall']:.2f}  "
              f"structure recall {r['structure_recall']:.2f}  ({r['seconds']:.0f}s)")
        print(f"  mask {r['mask']}")
        for band_range, src, tgt in r["rows"]:
            label = "full spectrum" if band_range is None else f"reject [{band_range[0]}, {band_range[1]})"
            print(f"  {label:<18} source {src:.3f}  target {tgt:.3f}")


if __name__ == "__main__":
    main()
