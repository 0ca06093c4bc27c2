"""Headline statistics as the number of learning steps per period grows.

Everything else stays at the low-rationality preset, so the sweep isolates how
much of the gap to RE closes with more practice.

    python scripts/learning_frequency_sweep.py --agents 300 --freqs 0 10 50 200
"""
import argparse

import pandas as pd

from nnaiyagari import stats
from nnaiyagari.agent import PRESETS, with_overrides
from nnaiyagari.economy import Preferences, Technology
from nnaiyagari.markov import ArOneSpec, tauchen_discretize
from nnaiyagari.population import SimulationConfig, simulate_population
from nnaiyagari.rational import AssetGrid, find_equilibrium

COLUMNS = ["h2m_frequency", "h2m_persistence_2", "gini", "average_mpc", "elasticity", "cv", "ev"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--agents", type=int, default=300)
    ap.add_argument("--freqs", type=int, nargs="+", default=[0, 10, 50, 200])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", help="optional output path")
    args = ap.parse_args()

    spec = ArOneSpec()
    prefs, chain = Preferences(), tauchen_discretize(spec)
    eq = find_equilibrium(Technology(), prefs, chain, AssetGrid.squared(300, 60.0))
    pol, dist = eq.policy, eq.distribution
    rows = []
    for f in args.freqs:
        hp = with_overrides(PRESETS["low"], learn_freq=f)
        cfg = SimulationConfig(n_agents=args.agents, hp=hp, master_seed=args.seed)
        panel = simulate_population(cfg, chain, pol, dist, pol.prices, prefs)
        v = stats.panel_statistics(panel, prefs, spec.rho)
        rows.append({"learn_freq": f} | {k: v[k] for k in COLUMNS})
        print(rows[-1], flush=True)
    table = pd.DataFrame(rows).set_index("learn_freq")
    print(table.to_string(float_format="%.4f"))
    if args.csv:
        table.to_csv(args.csv, float_format="%.17g")


if __name__ == "__main__":
    main()
