"""Command line entry point: solve-re, simulate, stats, asymptotic.

Configuration is a flat ``key = value`` text file; unknown keys are rejected.
Every output directory gets a manifest with the canonical config, its hash,
the seed and the package version, which is enough to rerun bit-exactly.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from . import stats as st
from .agent import PRESETS, Hyperparameters
from .economy import Preferences, Prices, Technology
from .markov import ArOneSpec, MarkovChain, NumericalError, ParameterError, tauchen_discretize
from .net import CorruptionError, Mlp
from .population import (
    Panel, SimulationConfig, diversion_by_age, run_asymptotic, simulate_population,
    simulate_re_panel, simulate_second_generation,
)
from .rational import AssetGrid, RationalPolicy, WealthDistribution, find_equilibrium

log = logging.getLogger("nnaiyagari")

FLOAT = "%.17g"
RE_PANEL_AGENTS = 10_000

_MODEL_KEYS = {
    "beta": float, "gamma": float, "alpha": float, "delta": float,
    "rho": float, "sigma": float, "n_states": int, "width": float,
    "grid_points": int, "grid_max": float, "r_tol": float,
    "n_agents": int, "seed": int, "generation": int, "preset": str,
    "snapshot_ages": str, "asymptotic_euler_states": int,
}
_HP_KEYS = {f.name: f.type for f in dataclasses.fields(Hyperparameters)}


class ConfigError(ParameterError):
    pass


@dataclasses.dataclass
class RunConfig:
    values: dict

    DEFAULTS = {
        "beta": 0.96, "gamma": 2.0, "alpha": 0.33, "delta": 0.1,
        "rho": 0.6, "sigma": 0.3, "n_states": 20, "width": 3.0,
        "grid_points": 300, "grid_max": 60.0, "r_tol": 1e-7,
        "n_agents": 2000, "generation": 1, "preset": "low", "snapshot_ages": "20,100",
        "asymptotic_euler_states": 50,
    }

    @classmethod
    def load(cls, path=None, overrides=None) -> "RunConfig":
        vals = dict(cls.DEFAULTS)
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            vals.update(parse_config(p.read_text()))
        vals.update({k: v for k, v in (overrides or {}).items() if v is not None})
        if vals["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {vals['preset']!r}; choose from {sorted(PRESETS)}")
        return cls(vals)

    def __getitem__(self, k):
        return self.values[k]

    def get(self, k, default=None):
        return self.values.get(k, default)

    def canonical(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def require_seed(self) -> int:
        if self.get("seed") is None:
            raise ConfigError("a seed is required (config key 'seed' or --seed)")
        return int(self["seed"])

    # model objects
    def prefs(self):
        return Preferences(beta=self["beta"], gamma=self["gamma"])

    def tech(self):
        return Technology(alpha=self["alpha"], delta=self["delta"])

    def chain(self) -> MarkovChain:
        return tauchen_discretize(ArOneSpec(self["rho"], self["sigma"], self["n_states"], self["width"]))

    def grid(self) -> AssetGrid:
        return AssetGrid.squared(self["grid_points"], self["grid_max"])

    def hp(self, preset=None) -> Hyperparameters:
        base = PRESETS[preset or self["preset"]]
        over = {k: self.values[k] for k in _HP_KEYS if k in self.values}
        return dataclasses.replace(base, **over)

    def snapshot_ages(self) -> tuple:
        s = str(self["snapshot_ages"]).strip()
        return tuple(int(x) for x in s.split(",") if x.strip()) if s else ()


def _coerce(key: str, raw: str):
    kind = _MODEL_KEYS.get(key) or _HP_KEYS.get(key)
    if kind is None:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if kind in ("tuple", tuple):
            return tuple(int(x) for x in raw.replace("(", "").replace(")", "").split(",") if x.strip())
        if kind in ("bool", bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = _coerce(k, v)
    return out


# --- serialization ----------------------------------------------------------

def _write_csv(df: pd.DataFrame, path: Path):
    df.to_csv(path, index=False, float_format=FLOAT, lineterminator="\n")


def _write_kv(d: dict, path: Path):
    lines = []
    for k, v in d.items():
        lines.append(f"{k} = {FLOAT % v}" if isinstance(v, float) else f"{k} = {v}")
    path.write_text("\n".join(lines) + "\n")


def _read_kv(path: Path) -> dict:
    out = {}
    for line in path.read_text().splitlines():
        if "=" in line and not line.startswith("#"):
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


def write_manifest(out: Path, cfg: RunConfig, command: str, seed=None, extra=None):
    meta = {"command": command, "version": __version__, "config_sha256": cfg.digest(),
            "seed": "none" if seed is None else seed}
    meta.update(extra or {})
    text = "".join(f"# {k} = {v}\n" for k, v in meta.items()) + cfg.canonical()
    (out / "manifest.txt").write_text(text)


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- rational expectations artifacts ---------------------------------------

def save_re(out: Path, policy: RationalPolicy, dist: WealthDistribution, summary: dict):
    a = policy.grid.points
    nz = policy.chain.n
    A, Z = np.meshgrid(a, np.arange(nz), indexing="ij")
    _write_csv(pd.DataFrame({
        "a": A.ravel(), "z_index": Z.ravel(), "z": policy.chain.states[Z.ravel()],
        "savings": policy.savings.ravel(), "consumption": policy.consumption().ravel(),
        "value": policy.value.ravel(),
    }), out / "re_policy.csv")
    _write_csv(pd.DataFrame({"a": A.ravel(), "z_index": Z.ravel(), "mass": dist.mass.ravel()}),
               out / "re_distribution.csv")
    _write_kv(summary, out / "re_summary.txt")


def load_re(src: Path, chain: MarkovChain):
    pol = pd.read_csv(src / "re_policy.csv")
    dist = pd.read_csv(src / "re_distribution.csv")
    summ = _read_kv(src / "re_summary.txt")
    nz = chain.n
    if int(pol["z_index"].max()) + 1 != nz:
        raise ConfigError(f"RE artifacts in {src} have a different number of productivity states")
    grid = AssetGrid(pol["a"].to_numpy()[::nz].copy())
    prices = Prices(float(summ["r"]), float(summ["w"]))
    policy = RationalPolicy(
        savings=pol["savings"].to_numpy().reshape(-1, nz), value=pol["value"].to_numpy().reshape(-1, nz),
        grid=grid, chain=chain, prices=prices, iterations=int(summ.get("vfi_iterations", 0)),
    )
    return policy, WealthDistribution(dist["mass"].to_numpy().reshape(-1, nz), grid), summ


def solve_re(cfg: RunConfig):
    chain = cfg.chain()
    eq = find_equilibrium(cfg.tech(), cfg.prefs(), chain, cfg.grid(), tol=cfg["r_tol"])
    summary = {"r": eq.prices.r, "w": eq.prices.w, "K": eq.capital, "L": eq.labor,
               "bisection_iterations": eq.iterations, "vfi_iterations": eq.policy.iterations}
    return eq.policy, eq.distribution, summary


def obtain_re(cfg: RunConfig, re_dir, out: Path | None = None):
    """Load RE artifacts from ``re_dir`` when present, otherwise solve (and save into ``out``)."""
    chain = cfg.chain()
    if re_dir is not None:
        src = Path(re_dir)
        if not (src / "re_policy.csv").is_file():
            raise ConfigError(f"no RE artifacts in {src}")
        return load_re(src, chain)
    policy, dist, summary = solve_re(cfg)
    if out is not None:
        save_re(out, policy, dist, summary)
    return policy, dist, summary


# --- commands ---------------------------------------------------------------

def cmd_solve_re(args, cfg: RunConfig):
    out = _outdir(args.out)
    policy, dist, summary = solve_re(cfg)
    save_re(out, policy, dist, summary)
    write_manifest(out, cfg, "solve-re")
    print(f"r = {summary['r']:.6f}  w = {summary['w']:.6f}  K = {summary['K']:.6f}  L = {summary['L']:.6f}")


def _save_snapshots(out: Path, history, ages):
    for age in ages:
        net = history.snapshots.get(age)
        if net is None:
            continue
        header, _ = net.to_flat(0)
        flat = np.stack([net.to_flat(i)[1] for i in range(net.n_agents)])
        df = pd.DataFrame(flat, columns=[f"p{j}" for j in range(flat.shape[1])])
        df.insert(0, "agent_id", history.agent_ids)
        _write_csv(df, out / f"snapshot_age{age}.csv")
        (out / f"snapshot_age{age}.json").write_text(json.dumps(header, sort_keys=True) + "\n")


def load_snapshots(src: Path, age: int):
    csv_path, json_path = src / f"snapshot_age{age}.csv", src / f"snapshot_age{age}.json"
    if not csv_path.is_file():
        return None, None
    header = json.loads(json_path.read_text())
    df = pd.read_csv(csv_path)
    nets = [Mlp.from_flat(header, row) for row in df.drop(columns="agent_id").to_numpy()]
    batch = Mlp([np.concatenate([n.weights[l] for n in nets]) for l in range(len(nets[0].weights))],
                [np.concatenate([n.biases[l] for n in nets]) for l in range(len(nets[0].biases))])
    return batch, df["agent_id"].to_numpy()


def cmd_simulate(args, cfg: RunConfig):
    seed = cfg.require_seed()
    out = _outdir(args.out)
    generation = int(cfg["generation"])
    parent = None
    if generation == 2:
        if not args.parent:
            raise ConfigError("generation 2 requires a parent panel (--parent PATH)")
        ppath = Path(args.parent)
        if not ppath.is_file():
            raise ConfigError(f"parent panel not found: {ppath}")
    policy, dist, summary = obtain_re(cfg, args.re, out)
    prices = policy.prices
    chain = policy.chain
    prefs = cfg.prefs()
    hp = cfg.hp()
    sim = SimulationConfig(int(cfg["n_agents"]), hp, seed, generation, cfg.snapshot_ages(), cfg["preset"])
    if generation == 2:
        parent = Panel.from_frame(pd.read_csv(ppath), prices, chain, hp.childhood, re_policy=policy)
        panel = simulate_second_generation(parent, sim, chain, policy, prices, prefs, threads=args.threads)
    else:
        panel = simulate_population(sim, chain, policy, dist, prices, prefs, threads=args.threads)
    _write_csv(panel.to_frame(), out / "panel.csv")
    _save_snapshots(out, panel.history, sim.snapshot_ages)
    mean, sd = diversion_by_age(panel)
    _write_csv(pd.DataFrame({"age": np.arange(panel.T), "mean": mean, "sd": sd}), out / "diversion.csv")
    write_manifest(out, cfg, "simulate", seed, {"preset": cfg["preset"], "generation": generation})
    print(f"simulated {panel.n_agents} agents x {panel.T} periods -> {out / 'panel.csv'}")


def _panel_label(path: Path) -> str:
    man = path.parent / "manifest.txt"
    if man.is_file():
        meta = {k.lstrip("# ").strip(): v for k, v in _read_kv(man).items()}
        if "preset" in meta:
            return f"{meta['preset']}_gen{meta.get('generation', '1')}"
    return path.stem


def _figure_data(out: Path, label: str, panel: Panel, rho: float, threshold: float):
    mean, sd = diversion_by_age(panel)
    _write_csv(pd.DataFrame({"age": np.arange(panel.T), "mean": mean, "lo": mean - sd, "hi": mean + sd}),
               out / f"fig_diversion_{label}.csv")
    m = st.mpc_by_wealth(panel)
    _write_csv(pd.DataFrame(m, columns=["mean_wealth", "mpc"]), out / f"fig_mpc_by_wealth_{label}.csv")
    _, series = st.sensitivity_elasticity(panel, rho)
    _write_csv(pd.DataFrame(series, columns=["mean_wealth", "elasticity"]), out / f"fig_elasticity_by_wealth_{label}.csv")
    pi, ci = st.parent_child_values(panel, st.INCOME_GAP, "income")
    _write_csv(pd.DataFrame(st.rank_rank_binned(pi, ci), columns=["parent_rank", "child_rank"]),
               out / f"fig_rank_rank_{label}.csv")
    _write_csv(pd.DataFrame(st.extreme_outcomes(panel, threshold),
                            columns=["parent_rank_bin", "p_top1_re", "p_h2m"]), out / f"fig_extreme_{label}.csv")


def _policy_figures(out: Path, label: str, panel: Panel, src: Path, policy, hp, prefs):
    net, ids = load_snapshots(src, panel.childhood)
    if net is None:
        return
    pos = {int(i): k for k, i in enumerate(panel.history.agent_ids)}
    rows = np.array([pos[int(i)] for i in ids])
    a20 = panel.history.a[rows, panel.childhood]
    quart = st.decile_groups(a20, 4)
    grid = st.EvaluationGrid.default(policy.chain, float(np.mean(panel.a_re[:, panel.childhood:])))
    c_min = policy.prices.w * policy.chain.states[0]
    evaluate = st.nn_policy(net, hp.mu, policy.prices, c_min, hp.a_cap)
    dev = st.policy_sq_deviation(evaluate, net.n_agents, quart, policy, grid)
    _write_csv(pd.DataFrame({f"q{q + 1}": d[0] for q, d in dev.items()} | {"a": grid.a_sweep})[
        ["a"] + [f"q{q + 1}" for q in dev]], out / f"fig_sqdev_a_{label}.csv")
    _write_csv(pd.DataFrame({f"q{q + 1}": d[1] for q, d in dev.items()} | {"z": policy.chain.states[grid.z_sweep]})[
        ["z"] + [f"q{q + 1}" for q in dev]], out / f"fig_sqdev_z_{label}.csv")
    prof = st.policy_profile(evaluate, net.n_agents, grid, policy.chain, policy.prices)
    _write_csv(pd.DataFrame({"a": grid.a_sweep, "mean_saving_rate": prof["a_sweep"]["mean_rate"]}),
               out / f"fig_saving_rate_{label}.csv")
    q = prof["z_sweep"]["quantiles"]
    _write_csv(pd.DataFrame({"z": policy.chain.states, **{f"q{k}": q[k] for k in range(q.shape[0])}}),
               out / f"fig_policy_by_z_{label}.csv")


def cmd_stats(args, cfg: RunConfig):
    out = _outdir(args.out)
    seed = int(cfg.get("seed") or 0)
    policy, dist, _ = obtain_re(cfg, args.re, out)
    prefs = cfg.prefs()
    rho = cfg["rho"]
    re_panel = simulate_re_panel(RE_PANEL_AGENTS, 100, seed, policy.chain, policy, dist, policy.prices)
    report = st.StatReport(meta={"seed": seed, "re_panel_agents": RE_PANEL_AGENTS, "filters": "adult records",
                                 "fig8_binning": "20 equal-mass parental wealth rank bins"})
    for k, v in st.re_statistics(policy, dist, re_panel, rho).items():
        report.add("RE", k, v)
    threshold = st.re_wealth_percentile(dist, 0.99)
    hp = cfg.hp()
    for p in args.panel or []:
        path = Path(p)
        if not path.is_file():
            raise ConfigError(f"panel not found: {path}")
        label = _panel_label(path)
        panel = Panel.from_frame(pd.read_csv(path), policy.prices, policy.chain, hp.childhood, re_policy=policy)
        for k, v in st.panel_statistics(panel, prefs, rho).items():
            report.add(label, k, v)
        _figure_data(out, label, panel, rho, threshold)
        _policy_figures(out, label, panel, path.parent, policy, hp, prefs)
    (out / "report.txt").write_text(report.to_text())
    (out / "report.csv").write_text(report.to_csv())
    write_manifest(out, cfg, "stats", seed, {"panels": ",".join(str(p) for p in args.panel or [])})
    sys.stdout.write(report.to_csv())


def cmd_asymptotic(args, cfg: RunConfig):
    seed = cfg.require_seed()
    out = _outdir(args.out)
    if "preset" not in (args.explicit or set()) and cfg["preset"] in ("low", "high"):
        cfg.values["preset"] = "asymptotic"
    policy, dist, _ = obtain_re(cfg, args.re, out)
    hp = cfg.hp()
    res = run_asymptotic(hp, policy.chain, policy, dist, policy.prices, cfg.prefs(), seed,
                         n_euler_states=int(cfg["asymptotic_euler_states"]))
    _write_csv(pd.DataFrame({"period": np.arange(res.gaps.size), "max_gap": res.gaps}), out / "gaps.csv")
    _write_csv(pd.DataFrame({"a": res.euler_states[:, 0], "z_index": res.euler_states[:, 1].astype(int),
                             "abs_euler_residual": res.euler_residuals}), out / "euler.csv")
    summary = {"final_max_gap": float(res.gaps[-1]), "max_euler_residual": float(res.euler_residuals.max()),
               "median_z_index": res.z_index, "steps_per_period": hp.learn_freq}
    _write_kv(summary, out / "summary.txt")
    _save_snapshots(out, res.history, (hp.life_T,))
    write_manifest(out, cfg, "asymptotic", seed)
    print(f"final max gap {summary['final_max_gap']:.4f}; max |Euler residual| {summary['max_euler_residual']:.4f}")


# --- entry ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nnaiyagari", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--agents", type=int)
    common.add_argument("--generation", type=int, choices=(1, 2))
    common.add_argument("--out", default="out")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--re", help="directory with saved RE artifacts (solved on demand otherwise)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("solve-re", parents=[common], help="solve the rational-expectations equilibrium")
    s = sub.add_parser("simulate", parents=[common], help="simulate a cohort of learning agents")
    s.add_argument("--parent", help="parent panel CSV for generation 2")
    s = sub.add_parser("stats", parents=[common], help="statistics and figure data for panels")
    s.add_argument("--panel", action="append", help="panel CSV (repeatable)")
    s = sub.add_parser("asymptotic", parents=[common], help="long-run learning against the RE policy")
    s.add_argument("--steps", type=int, help="learning steps per period")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {"seed": args.seed, "preset": args.preset, "n_agents": args.agents, "generation": args.generation,
                 "learn_freq": getattr(args, "steps", None)}
    args.explicit = {k for k, v in overrides.items() if v is not None}
    try:
        cfg = RunConfig.load(args.config, overrides)
        if args.config:
            args.explicit |= set(parse_config(Path(args.config).read_text()))
        {"solve-re": cmd_solve_re, "simulate": cmd_simulate, "stats": cmd_stats,
         "asymptotic": cmd_asymptotic}[args.command](args, cfg)
    except (NumericalError, CorruptionError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 1
    except (ParameterError, FileNotFoundError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
