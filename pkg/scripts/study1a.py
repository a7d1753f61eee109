"""Single-stage household regime accuracy: WPOM(M4) against the interference-unaware baseline."""

from _common import parser, run

from dwpom.simulation import MonteCarloConfig

if __name__ == "__main__":
    args = parser(__doc__, households=500, replicates=100).parse_args()
    cfg = MonteCarloConfig(study="1a", households=args.households, replicates=args.replicates,
                           seed=args.seed, schemes=("m4",), workers=args.workers)
    run(cfg, args.out, ["otr_h", "otr_i", "otr_any", "mrv"])
