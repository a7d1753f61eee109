"""Weighting schemes M0-M4 under one of the four specification scenarios."""

from _common import parser, run

from dwpom.simulation import BLIP_NAMES, MonteCarloConfig

if __name__ == "__main__":
    p = parser(__doc__, households=1000, replicates=50)
    p.add_argument("--scenario", type=int, default=3, choices=[1, 2, 3, 4])
    p.add_argument("--schemes", default="m0,m1,m2,m3,m4")
    args = p.parse_args()
    cfg = MonteCarloConfig(study="1b", scenario=args.scenario, households=args.households,
                           replicates=args.replicates, seed=args.seed, unaware=False,
                           schemes=tuple(args.schemes.split(",")), workers=args.workers)
    run(cfg, args.out, ["otr_h", "otr_i", "mrv", *BLIP_NAMES])
