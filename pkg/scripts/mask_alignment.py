"""Share of learned-mask selections that land on the toy's structure bands."""
from _common import dump, parser, seeds

from freqrand import experiments


def main():
    p = parser(__doc__, "0,1,2,3,4")
    p.add_argument("--p", type=float, default=0.5, help="fraction of entries kept")
    args = p.parse_args()
    kw = {} if args.epochs is None else {"epochs": args.epochs}
    rows = experiments.learned_mask_alignment(seeds(args.seeds), p=args.p, **kw)
    if args.json:
        return dump(rows)
    for r in rows:
        print(f"seed {r['seed']}  structure share {r['structure_share']:.3f}  kept {r['popcount']}")


if __name__ == "__main__":
    main()
