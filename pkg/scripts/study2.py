"""Two-stage dWPOM against unweighted Q-learning (M0), scored by the odds of the top category."""

from _common import parser, run

from dwpom.simulation import MonteCarloConfig

if __name__ == "__main__":
    p = parser(__doc__, households=1000, replicates=100)
    p.add_argument("--case", type=int, default=1)
    p.add_argument("--draws", type=int, default=25)
    p.add_argument("--value-mode", default="fitted", choices=["fitted", "true"])
    args = p.parse_args()
    cfg = MonteCarloConfig(study="2", case=args.case, households=args.households, replicates=args.replicates,
                           seed=args.seed, draws=args.draws, schemes=("m0", "m4"),
                           value_mode=args.value_mode, workers=args.workers)
    run(cfg, args.out, ["or_u3", "or_u_ge2", "or_u3_true", "s1_otr_h", "s2_otr_h", "brant_fail_rate",
                        "s2_xi0", "s2_xi1", "s2_psi0", "s2_psi1", "s2_phi0", "s2_phi1"])
