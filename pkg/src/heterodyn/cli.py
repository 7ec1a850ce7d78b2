"""Command-line front end.

Subcommands: generate | check | lyapunov | fit | sweep | campaign | windows.
Numerics live in JSON config files; flags carry only paths, seeds, and the
worker count.  Every run writes summary.json next to its outputs with the
config echo, sha256 hashes of the input files, and wall-clock timings.

Exit codes: 0 success, 1 runtime error, 2 configuration or infeasibility.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import dichotomy, dynamics, experiments, graphgen

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _master_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("HETERODYN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"HETERODYN_SEED must be an integer, got {env!r}")
    return 0


class ConfigError(Exception):
    """Bad configuration or infeasible parameters (exit code 2)."""


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}")


def _params_from_config(cfg: dict) -> graphgen.HeterogeneityParams:
    regimes = cfg.get("regimes")
    if regimes is not None:
        regimes = (tuple(regimes[0]), tuple(regimes[1]))
    try:
        return graphgen.HeterogeneityParams(
            ell=cfg["ell"],
            theta=cfg["theta"],
            gamma=cfg["gamma"],
            c0=cfg["c0"],
            Gamma0=cfg.get("Gamma0", 1.0),
            Gamma1=cfg["Gamma1"],
            Gamma2=cfg["Gamma2"],
            beta=cfg.get("beta", 0.1),
            regimes=regimes,
        )
    except KeyError as exc:
        raise ConfigError(f"missing heterogeneity parameter {exc}")


def _drift_from_config(cfg: dict) -> dynamics.DriftFamily:
    try:
        return dynamics.DriftFamily(
            d=cfg.get("d", 1),
            kind=cfg.get("kind", "constant"),
            a=cfg["a"],
            eps=cfg.get("eps", 0.0),
            omega=tuple(cfg["omega"]) if cfg.get("omega") is not None else None,
        )
    except KeyError as exc:
        raise ConfigError(f"missing drift parameter {exc}")


def _coupling_from_config(cfg: dict) -> dynamics.CouplingMatrix:
    if "H" not in cfg:
        raise ConfigError("coupling config needs an 'H' matrix")
    return dynamics.CouplingMatrix(np.asarray(cfg["H"], dtype=float))


def _system_from_paths(cfg: dict, cfg_path: str):
    """Load (system, graph, hashes) from a system config referencing a graph
    file (graph_ref is resolved relative to the config)."""
    ref = cfg.get("graph_ref")
    if ref is None:
        raise ConfigError("system config needs graph_ref")
    gpath = ref if os.path.isabs(ref) else os.path.join(os.path.dirname(cfg_path), ref)
    try:
        with open(gpath) as fh:
            graph = graphgen.Graph.from_json(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"graph file not found: {gpath}")
    system = dynamics.system_from_config(cfg, graph)
    return system, graph, {gpath: _sha256(gpath)}


def _write_summary(outdir: str, config: dict, hashes: dict, timings: dict) -> None:
    payload = {
        "config": config,
        "input_sha256": hashes,
        "timings_seconds": {k: float(format(v, ".6g")) for k, v in timings.items()},
    }
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _ensure_outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    outdir = _ensure_outdir(args.out)
    hashes = {}
    if args.config is not None:
        cfg = _load_json(args.config)
        hashes[args.config] = _sha256(args.config)
    else:
        cfg = {}
    merged = {
        "n": args.n if args.n is not None else cfg.get("n"),
        "w_max": args.w_max if args.w_max is not None else cfg.get("w_max"),
        "tail_hi": cfg.get("tail_hi"),
        "params": cfg.get("params", {}),
    }
    for name in ("ell", "theta", "gamma", "c0", "Gamma1", "Gamma2"):
        flag = getattr(args, name.lower(), None)
        if flag is not None:
            merged["params"][name] = flag
    if merged["n"] is None:
        raise ConfigError("generate needs n (flag or config)")
    if merged["w_max"] is None:
        merged["w_max"] = float(format(merged["n"] ** 0.6, ".6g"))
    defaults = {"ell": 2, "theta": 0.3, "gamma": 0.65, "c0": 0.5,
                "Gamma1": 0.4, "Gamma2": 2.0}
    for key, val in defaults.items():
        merged["params"].setdefault(key, val)
    params = _params_from_config(merged["params"])
    if args.theorem_mode:
        try:
            params.check_theorem_exponents()
        except graphgen.FeasibilityError as exc:
            raise ConfigError(str(exc))
    t0 = time.perf_counter()
    seq = graphgen.build_heterogeneous_sequence(
        params, merged["n"], merged["w_max"], tail_hi=merged["tail_hi"]
    )
    seed = _master_seed(args)
    graph = graphgen.sample_graph(seq, seed)
    t1 = time.perf_counter()
    with open(os.path.join(outdir, "sequence.json"), "w") as fh:
        fh.write(seq.to_json() + "\n")
    with open(os.path.join(outdir, "graph.json"), "w") as fh:
        fh.write(graph.to_json() + "\n")
    merged["seed"] = seed
    _write_summary(outdir, merged, hashes, {"generate": t1 - t0})
    print(f"wrote {outdir}/sequence.json and {outdir}/graph.json "
          f"({graph.edges.shape[0]} edges)")
    return EXIT_OK


def cmd_check(args) -> int:
    outdir = _ensure_outdir(args.out)
    with open(args.graph) as fh:
        graph = graphgen.Graph.from_json(fh.read())
    with open(args.sequence) as fh:
        seq = graphgen.ExpectedDegreeSequence.from_json(fh.read())
    if graph.n != seq.n:
        raise ConfigError(f"graph has n = {graph.n} but sequence has n = {seq.n}")
    params = None
    hashes = {args.graph: _sha256(args.graph), args.sequence: _sha256(args.sequence)}
    cfg_echo = {"graph": args.graph, "sequence": args.sequence}
    if args.config is not None:
        cfg = _load_json(args.config)
        hashes[args.config] = _sha256(args.config)
        params = _params_from_config(cfg.get("params", cfg))
        cfg_echo["config"] = cfg
    t0 = time.perf_counter()
    rep = graphgen.check_concentration(graph, seq, params)
    t1 = time.perf_counter()
    with open(os.path.join(outdir, "concentration.csv"), "w") as fh:
        fh.write(rep.to_csv(graph.degrees.astype(float), seq.w))
    cfg_echo["event"] = rep.event
    cfg_echo["floor"] = rep.floor
    if rep.hub_tail_event is not None:
        cfg_echo["hub_tail_event"] = rep.hub_tail_event
    if rep.regime_event is not None:
        cfg_echo["regime_event"] = rep.regime_event
    _write_summary(outdir, cfg_echo, hashes, {"check": t1 - t0})
    print(f"concentration event: {'holds' if rep.event else 'fails'} "
          f"(floor {rep.floor:.4f})")
    return EXIT_OK


def cmd_lyapunov(args) -> int:
    outdir = _ensure_outdir(args.out)
    cfg = _load_json(args.config)
    system, _, hashes = _system_from_paths(cfg, args.config)
    hashes[args.config] = _sha256(args.config)
    opts = cfg.get("lyapunov", {})
    t0 = time.perf_counter()
    spec = dichotomy.lyapunov_spectrum(
        system,
        k=opts.get("k"),
        horizon=opts.get("horizon", 100.0),
        reorth=opts.get("reorth", 0.5),
        mode=opts.get("mode", "full"),
    )
    t1 = time.perf_counter()
    with open(os.path.join(outdir, "spectrum.csv"), "w") as fh:
        fh.write(spec.to_csv())
    dim = dichotomy.stable_dimension(spec, opts.get("gap_min", 0.05))
    cfg_echo = dict(cfg, stable_dim=dim)
    _write_summary(outdir, cfg_echo, hashes, {"lyapunov": t1 - t0})
    exps = ", ".join(format(x, ".4g") for x in spec.exponents)
    print(f"exponents: [{exps}]  stable_dim: {dim}")
    return EXIT_OK


def cmd_fit(args) -> int:
    outdir = _ensure_outdir(args.out)
    cfg = _load_json(args.config)
    system, _, hashes = _system_from_paths(cfg, args.config)
    hashes[args.config] = _sha256(args.config)
    opts = cfg.get("fit", {})
    t0 = time.perf_counter()
    rep = dichotomy.fit_dichotomy(
        system,
        gap_min=opts.get("gap_min", 0.05),
        align_horizon=opts.get("align_horizon", 10.0),
    )
    t1 = time.perf_counter()
    with open(os.path.join(outdir, "dichotomy.json"), "w") as fh:
        json.dump(rep.to_json_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")
    _write_summary(outdir, cfg, hashes, {"fit": t1 - t0})
    print(f"dichotomy: {rep.dichotomy}  stable_dim: {rep.stable_dim}  "
          f"K: {rep.fitted_K:.4g}  eta: {rep.fitted_eta:.4g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    outdir = _ensure_outdir(args.out)
    cfg = _load_json(args.config)
    hashes = {args.config: _sha256(args.config)}
    params = _params_from_config(cfg["params"])
    drift = _drift_from_config(cfg["drift"])
    coupling = _coupling_from_config(cfg["coupling"])
    master = _master_seed(args)
    n_seeds = cfg.get("seeds", 20)
    seeds = graphgen.seed_stream(master, n_seeds)
    grid = cfg.get("alpha_grid")
    t0 = time.perf_counter()
    try:
        result = experiments.run_theorem3_sweep(
            params,
            cfg["n"],
            cfg["w_max"],
            drift,
            coupling,
            seeds,
            alpha_grid=grid,
            tail_hi=cfg.get("tail_hi"),
            horizon=cfg.get("horizon", 30.0),
            reorth=cfg.get("reorth", 0.5),
            gap_min=cfg.get("gap_min", 0.05),
            resample_per_alpha=cfg.get("resample_per_alpha", False),
            jobs=args.jobs,
        )
    except KeyError as exc:
        raise ConfigError(f"sweep config missing {exc}")
    t1 = time.perf_counter()
    experiments.emit_report(result, os.path.join(outdir, "results.csv"), format="csv")
    experiments.emit_report(result, os.path.join(outdir, "sweep.json"))
    _write_summary(outdir, dict(cfg, master_seed=master), hashes, {"sweep": t1 - t0})
    n_events = sum(len(v) for v in result.events.values())
    print(f"sweep done: {len(result.records)} records, {n_events} dimension jumps")
    return EXIT_OK


def cmd_campaign(args) -> int:
    outdir = _ensure_outdir(args.out)
    cfg = _load_json(args.config)
    hashes = {args.config: _sha256(args.config)}
    kind = cfg.get("kind")
    params = _params_from_config(cfg["params"])
    master = _master_seed(args)
    t0 = time.perf_counter()
    try:
        if kind == "theorem1":
            drift = _drift_from_config(cfg["drift"])
            coupling = _coupling_from_config(cfg["coupling"])
            seeds = graphgen.seed_stream(master, cfg.get("seeds", 20))
            result = experiments.run_theorem1(
                params, cfg["n"], cfg["w_max"], drift, coupling, seeds,
                alpha=cfg.get("alpha"),
                tail_hi=cfg.get("tail_hi"),
                horizon=cfg.get("horizon", 30.0),
                jobs=args.jobs,
            )
            estimates = {"theorem1": result.estimate}
        elif kind == "concentration":
            result = experiments.run_concentration_campaign(
                params, cfg["n"], cfg["w_max"], cfg.get("trials", 200), master,
                tail_hi=cfg.get("tail_hi"), jobs=args.jobs,
            )
            estimates = result.estimates
        elif kind == "lambda_max":
            result = experiments.run_lambda_max_campaign(
                params, cfg["n"], cfg["w_max"], cfg["delta"],
                cfg.get("trials", 200), master,
                tail_hi=cfg.get("tail_hi"), jobs=args.jobs,
            )
            estimates = result.estimates
        else:
            raise ConfigError(
                "campaign kind must be theorem1 | concentration | lambda_max"
            )
    except KeyError as exc:
        raise ConfigError(f"campaign config missing {exc}")
    t1 = time.perf_counter()
    experiments.emit_report(result, os.path.join(outdir, "results.csv"), format="csv")
    experiments.emit_report(result, os.path.join(outdir, "campaign.json"))
    _write_summary(outdir, dict(cfg, master_seed=master), hashes, {"campaign": t1 - t0})
    ok = True
    for name, est in estimates.items():
        flag = est.dominates_floor()
        ok = ok and flag
        print(f"{name}: p_hat = {est.p_hat:.4f}  floor = {est.floor:.4f}  "
              f"{'ok' if flag else 'BELOW FLOOR'}")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_windows(args) -> int:
    cfg = _load_json(args.config)
    params = _params_from_config(cfg["params"])
    drift = _drift_from_config(cfg["drift"])
    coupling = _coupling_from_config(cfg["coupling"])
    wc = dichotomy.theorem_windows(
        drift, coupling, params, cfg["n"],
        alpha=cfg.get("alpha"), w_max=cfg.get("w_max"),
    )
    payload = wc.to_json_dict()
    text = json.dumps(payload, sort_keys=True, indent=1)
    if args.out is not None:
        outdir = _ensure_outdir(args.out)
        with open(os.path.join(outdir, "windows.json"), "w") as fh:
            fh.write(text + "\n")
        _write_summary(outdir, cfg, {args.config: _sha256(args.config)}, {})
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="heterodyn",
        description="Coupled linear systems on heterogeneous random graphs",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--out", required=out_required, default=None,
                        help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="master seed (default: HETERODYN_SEED or 0)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")

    g = sub.add_parser("generate", help="build a degree sequence and sample a graph")
    g.add_argument("--config", default=None, help="JSON with n, w_max, params")
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--w-max", dest="w_max", type=float, default=None)
    g.add_argument("--ell", type=int, default=None)
    g.add_argument("--theta", type=float, default=None)
    g.add_argument("--gamma", type=float, default=None)
    g.add_argument("--c0", type=float, default=None)
    g.add_argument("--gamma1", dest="gamma1", type=float, default=None)
    g.add_argument("--gamma2", dest="gamma2", type=float, default=None)
    g.add_argument("--theorem-mode", action="store_true",
                   help="enforce the dichotomy-theorem exponent region")
    common(g)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("check", help="degree concentration report for a graph")
    c.add_argument("--graph", required=True)
    c.add_argument("--sequence", required=True)
    c.add_argument("--config", default=None, help="optional heterogeneity params")
    common(c)
    c.set_defaults(func=cmd_check)

    for name, fn, hlp in (
        ("lyapunov", cmd_lyapunov, "finite-time Lyapunov spectrum of a system"),
        ("fit", cmd_fit, "fit exponential-dichotomy constants"),
    ):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--config", required=True,
                       help="system JSON (drift, coupling, alpha, graph_ref)")
        common(s)
        s.set_defaults(func=fn)

    s = sub.add_parser("sweep", help="stable dimension along a coupling grid")
    s.add_argument("--config", required=True)
    common(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("campaign", help="Monte Carlo campaign over the ensemble")
    s.add_argument("--config", required=True)
    common(s)
    s.set_defaults(func=cmd_campaign)

    s = sub.add_parser("windows", help="coupling-window constants")
    s.add_argument("--config", required=True)
    common(s, out_required=False)
    s.set_defaults(func=cmd_windows)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, graphgen.FeasibilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError, OSError, dynamics.BlowupError,
            graphgen.PowerIterationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
