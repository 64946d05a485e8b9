"""Command-line front end: solve | analyze | simulate | compare.

Exit codes: 0 success, 2 config error, 3 numeric/validation error,
4 bound violation in --self-check mode.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import JacksonFlowsError, NetworkError
from .flow_stats import (
    empirical_pmf,
    moments,
    overdispersion_test,
    shift_tv,
    shift_tv_mc_error,
    tv_distance,
    tv_noise_floor,
)
from .nb_stein import (
    PoissonFallback,
    asymptotic_moments,
    bound_report,
    check_bound,
    model_pmf,
    nb_params_from_moments,
    poisson_pmf,
)
from .network_model import (
    DEFAULT_TAIL_TOL,
    NetworkSpec,
    make_links,
    stationary_dists,
    validate_network,
)
from .route_chains import link_stats
from .schema import SchemaError, validate_network_document
from .simulator import CountSamples, SimConfig, replicate_counts, simulate_window, write_event_log

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BOUND = 0, 2, 3, 4
CLUSTER_TOL = 0.05


class ConfigError(JacksonFlowsError):
    pass


class BoundViolation(JacksonFlowsError):
    pass


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    network_path: Path
    network_text: str
    links: tuple
    t: float = 400.0
    n_replicates: int = 1000
    base_seed: int = 0
    variance_mode: str = "empirical"
    out: Path = Path("out")
    tail_tol: float = DEFAULT_TAIL_TOL
    sweep: tuple = field(default=())

    @property
    def network_doc(self) -> dict:
        return json.loads(self.network_text)

    def config_hash(self) -> str:
        canon = {
            "network": self.network_doc,
            "links": [list(l) for l in self.links],
            "t": self.t,
            "n_replicates": self.n_replicates,
            "base_seed": self.base_seed,
            "variance_mode": self.variance_mode,
            "tail_tol": self.tail_tol,
            "sweep": list(self.sweep),
        }
        blob = json.dumps(canon, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _locate_item(text: str, key: str, index: int):
    """Line number where element ``index`` of the top-level array ``key`` starts."""
    at = text.find(f'"{key}"')
    if at < 0:
        return None
    start = text.find("[", at)
    depth, item, in_str, i = 0, -1, False, start
    while 0 <= i < len(text):
        ch = text[i]
        if in_str:
            if ch == "\\":
                i += 1
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch in "[{":
            depth += 1
            if depth == 2:
                item += 1
                if item == index:
                    return text.count("\n", 0, i) + 1
        elif ch in "]}":
            depth -= 1
            if depth == 0:
                return None
        i += 1
    return None


def _read_json(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        return text, json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def load_config(args) -> ScenarioConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    cfg_path = Path(args.config)
    _, cfg = _read_json(cfg_path)
    if not isinstance(cfg, dict) or "network" not in cfg:
        raise ConfigError(f"{cfg_path}: expected an object with a 'network' entry")
    net_path = (cfg_path.parent / cfg["network"]).resolve()
    net_text, net_doc = _read_json(net_path)
    try:
        validate_network_document(net_doc)
    except SchemaError as exc:
        raise ConfigError(f"{net_path}: {exc}") from None

    J = len(net_doc["queues"])
    try:
        links = make_links(cfg.get("links", []), J)
        conf = ScenarioConfig(
            network_path=net_path,
            network_text=net_text,
            links=links,
            t=float(cfg.get("t", 400.0)),
            n_replicates=int(cfg.get("n_replicates", 1000)),
            base_seed=int(cfg.get("base_seed", 0)),
            variance_mode=cfg.get("variance_mode", "empirical"),
            out=(cfg_path.parent / cfg.get("out", "out")),
            tail_tol=float(cfg.get("tolerances", {}).get("tail_tol", DEFAULT_TAIL_TOL)),
            sweep=tuple(float(x) for x in cfg.get("sweep", ())),
        )
    except (TypeError, ValueError, NetworkError) as exc:
        raise ConfigError(f"{cfg_path}: {exc}") from None

    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["base_seed"] = args.seed
    if getattr(args, "replicates", None) is not None:
        overrides["n_replicates"] = args.replicates
    if getattr(args, "t", None) is not None:
        overrides["t"] = args.t
    if getattr(args, "variance_mode", None) is not None:
        overrides["variance_mode"] = args.variance_mode
    if getattr(args, "out", None) is not None:
        overrides["out"] = Path(args.out)
    conf = replace(conf, **overrides)
    if not conf.t > 0 or conf.n_replicates < 1 or not 0 <= conf.base_seed < 2**64:
        raise ConfigError(f"{cfg_path}: need t > 0, n_replicates >= 1, 0 <= seed < 2^64")
    if conf.variance_mode not in ("empirical", "asymptotic"):
        raise ConfigError(f"{cfg_path}: variance_mode must be 'empirical' or 'asymptotic'")
    return conf


def _network(conf: ScenarioConfig):
    spec = NetworkSpec.from_dict(conf.network_doc)
    try:
        return validate_network(spec)
    except NetworkError as exc:
        line = None
        if hasattr(exc, "queue"):
            key = "routing" if type(exc).__name__ == "RowSumViolation" else "queues"
            line = _locate_item(conf.network_text, key, exc.queue - 1)
        where = f"{conf.network_path}:{line}" if line else str(conf.network_path)
        raise NetworkError(f"{where}: {exc}") from exc


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _provenance(conf: ScenarioConfig) -> dict:
    return {
        "base_seed": conf.base_seed,
        "config_hash": conf.config_hash(),
        "versions": {"jackson_flows": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "t": conf.t,
        "n_replicates": conf.n_replicates,
        "variance_mode": conf.variance_mode,
    }


def _traffic_dict(net) -> dict:
    tr = net.traffic
    return {"alpha": tr.alpha, "residual": tr.residual, "load": net.load}


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_solve(conf: ScenarioConfig) -> dict:
    net = _network(conf)
    dists = stationary_dists(net, net.traffic, conf.tail_tol)
    conf.out.mkdir(parents=True, exist_ok=True)
    spec = net.spec
    write_csv(conf.out / "traffic.csv", ["queue", "nu", "mu", "alpha", "load"],
              [(j + 1, spec.nu[j], spec.mu[j], net.traffic.alpha[j], net.load[j]) for j in range(spec.J)])
    rho = net.traffic.rho
    write_csv(conf.out / "flows.csv", ["link_from", "link_to", "rho"],
              [(j, k, rho[j, k]) for j in range(spec.J + 1) for k in range(spec.J + 1) if rho[j, k] > 0])
    write_csv(conf.out / "stationary.csv", ["queue", "n", "pmf"],
              [(d.queue, n, p) for d in dists for n, p in enumerate(d.pmf)])
    result = {
        "traffic": _traffic_dict(net),
        "stationary": [
            {"queue": d.queue, "truncation": d.truncation, "tail_bound": d.tail_bound,
             "log_normalizer": d.log_normalizer, "mean": d.mean}
            for d in dists
        ],
    }
    write_json(conf.out / "solve.json", result)
    return result


def _analysis(conf: ScenarioConfig, net):
    stats = link_stats(net, net.traffic, conf.links)
    notes = []
    if stats.no_loop:
        notes.append("Poisson exact (Melamed): no customer can cross C more than once")
    if stats.touches_outside:
        notes.append("boundary_link_convention: arrival links have no past and departure links "
                     "no future within the route")
    return stats, notes


def cmd_analyze(conf: ScenarioConfig) -> dict:
    net = _network(conf)
    stats, notes = _analysis(conf, net)
    summary = asymptotic_moments(stats.eps_C, stats.sigma_C, stats.rho_C, conf.t)
    bounds = bound_report(stats, conf.t, summary, mode="asymptotic")
    result = {"traffic": _traffic_dict(net), "link_stats": stats.to_dict(),
              "bounds": bounds.to_dict(), "notes": notes}
    conf.out.mkdir(parents=True, exist_ok=True)
    write_csv(conf.out / "link_stats.csv", ["link_from", "link_to", "rho", "w", "eps", "sigma"],
              [(*d["link"], d["rho"], d["w"], d["eps"], d["sigma"]) for d in stats.per_link()])
    write_json(conf.out / "analyze.json", result)
    return result


def _sim_config(conf: ScenarioConfig, t=None) -> SimConfig:
    return SimConfig(t=conf.t if t is None else t, n_replicates=conf.n_replicates, base_seed=conf.base_seed)


def cmd_simulate(conf: ScenarioConfig, event_log: bool = False) -> CountSamples:
    net = _network(conf)
    link_stats(net, net.traffic, conf.links)  # rejects zero-flow links before simulating
    samples = replicate_counts(net, net.traffic, conf.links, _sim_config(conf))
    conf.out.mkdir(parents=True, exist_ok=True)
    samples.to_csv(conf.out / "samples.csv")
    write_json(conf.out / "samples.json", {"links": [list(l) for l in conf.links], "provenance": _provenance(conf)})
    if event_log:
        trace = simulate_window(net, net.traffic, conf.links, _sim_config(conf), 0)
        write_event_log(trace, conf.out / "events_replicate0.csv")
    return samples


def _compare_samples(conf: ScenarioConfig, stats, samples: CountSamples, t: float) -> dict:
    """Empirical side of the report for one window length."""
    summary = moments(samples)
    if conf.variance_mode == "asymptotic":
        fit_summary = asymptotic_moments(stats.eps_C, stats.sigma_C, stats.rho_C, t)
    else:
        fit_summary = summary
    params = nb_params_from_moments(fit_summary.mean, fit_summary.variance)
    model = model_pmf(params)
    poisson = poisson_pmf(stats.rho_C * t)
    emp = empirical_pmf(samples)
    tv_nb = tv_distance(emp, model)
    tv_po = tv_distance(emp, poisson)
    return {
        "summary": summary,
        "fit_summary": fit_summary,
        "params": params,
        "model": model,
        "poisson": poisson,
        "empirical": emp,
        "tv_nb": {"point": tv_nb[0], "upper": tv_nb[1], "noise_floor": tv_noise_floor(model, samples.n)},
        "tv_poisson": {"point": tv_po[0], "upper": tv_po[1], "noise_floor": tv_noise_floor(poisson, samples.n)},
        "shift": {"empirical": shift_tv(samples), "mc_error": shift_tv_mc_error(samples)},
    }


def cmd_compare(conf: ScenarioConfig, samples_path=None, self_check: bool = False) -> dict:
    net = _network(conf)
    stats, notes = _analysis(conf, net)
    path = Path(samples_path) if samples_path else conf.out / "samples.csv"
    if not path.is_file():
        raise ConfigError(f"samples file {path} not found (run `simulate` first)")
    samples = CountSamples.from_csv(path, conf.base_seed, conf.t, conf.links)
    if samples.n != conf.n_replicates:
        notes.append(f"samples file has {samples.n} rows; config asks for {conf.n_replicates}")

    c = _compare_samples(conf, stats, samples, conf.t)
    bounds = bound_report(stats, conf.t, c["fit_summary"], mode=conf.variance_mode)
    disp = overdispersion_test(samples, seed=conf.base_seed & 0xFFFFFFFF)
    if isinstance(c["params"], PoissonFallback):
        notes.append("variance within 1e-6 of the mean: negative binomial reduced to Poisson")
    if conf.variance_mode == "asymptotic":
        notes.append("asymptotic variance mode: Var = rho_C t (1 + eps_C), an upper-bound surrogate")
    hit = samples.m_hat > 0
    checks = {
        "tv_nb_vs_bound_simplified": check_bound(c["tv_nb"]["upper"], bounds.bound_simplified, c["tv_nb"]["noise_floor"]),
        "shift_tv_vs_shift_bound": check_bound(c["shift"]["empirical"], bounds.shift_bound, c["shift"]["mc_error"]),
        "cluster_size_vs_bound": check_bound(samples.average_cluster_size(), bounds.cluster_size_bounds[1], CLUSTER_TOL),
        "variance_vs_mean": check_bound(c["summary"].mean, c["summary"].variance, 2 * c["summary"].se_variance),
    }
    report = {
        "traffic": _traffic_dict(net),
        "link_stats": stats.to_dict(),
        "moments": c["summary"].to_dict(),
        "model": c["params"].to_dict(),
        "poisson_baseline": {"mean": stats.rho_C * conf.t},
        "tv": {"negative_binomial": c["tv_nb"], "poisson": c["tv_poisson"]},
        "bounds": bounds.to_dict(),
        "shift": {**c["shift"], "bound": bounds.shift_bound},
        "overdispersion": disp.to_dict(),
        "clusters": {
            "mean_cluster_size": samples.average_cluster_size(),
            "cluster_size_bounds": list(bounds.cluster_size_bounds),
            "mean_m_hat": float(samples.m_hat.mean()),
            "theta_bounds": list(bounds.theta_bounds),
            "replicates_with_crossings": int(hit.sum()),
            "note": "window-truncated approximation: boundary clusters are split by [0, t]",
        },
        "checks": checks,
        "notes": notes,
        "provenance": _provenance(conf),
    }
    conf.out.mkdir(parents=True, exist_ok=True)
    write_json(conf.out / "report.json", report)
    lo = min(c["empirical"].offset, 0)
    hi = max(c["empirical"].support[-1], c["model"].support[-1])
    write_csv(conf.out / "pmf.csv", ["k", "empirical", "model", "poisson"],
              [(k, c["empirical"][k], c["model"][k], c["poisson"][k]) for k in range(lo, hi + 1)])
    if conf.sweep:
        _write_sweep(conf, net, stats)
    if self_check and not all(v["holds"] for v in checks.values()):
        failed = [k for k, v in checks.items() if not v["holds"]]
        raise BoundViolation(f"self-check failed: {', '.join(failed)}")
    return report


def _write_sweep(conf: ScenarioConfig, net, stats) -> None:
    rows = []
    for t in conf.sweep:
        samples = replicate_counts(net, net.traffic, conf.links, _sim_config(conf, t))
        c = _compare_samples(conf, stats, samples, t)
        b = bound_report(stats, t)
        rows.append((t, b.bound_simplified, b.shift_bound, c["tv_nb"]["upper"], c["tv_nb"]["noise_floor"],
                     c["tv_poisson"]["upper"], c["shift"]["empirical"]))
    write_csv(conf.out / "sweep.csv",
              ["t", "bound_simplified", "shift_bound", "tv_nb_upper", "tv_nb_noise_floor",
               "tv_poisson_upper", "shift_tv"], rows)


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jackson-flows", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="scenario JSON file")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--t", type=float, help="window length")
        return sp

    common(sub.add_parser("solve", help="traffic equations and stationary tables"))
    common(sub.add_parser("analyze", help="exact loop statistics and bounds, no simulation"))
    sim = common(sub.add_parser("simulate", help="replicate flow counts"))
    cmp_ = common(sub.add_parser("compare", help="empirical vs negative binomial report"))
    for sp in (sim, cmp_):
        sp.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
        sp.add_argument("--replicates", type=int, help="number of replicates")
        sp.add_argument("--variance-mode", choices=("empirical", "asymptotic"))
    sim.add_argument("--event-log", action="store_true", help="also dump replicate 0 events as CSV")
    cmp_.add_argument("--samples", help="samples CSV (default: OUT/samples.csv)")
    cmp_.add_argument("--self-check", action="store_true", help="exit 4 when a bound check fails")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        conf = load_config(args)
        if args.command == "solve":
            res = cmd_solve(conf)
            for j, a in enumerate(res["traffic"]["alpha"]):
                print(f"queue {j + 1}: alpha = {a:.12g}")
        elif args.command == "analyze":
            res = cmd_analyze(conf)
            ls, b = res["link_stats"], res["bounds"]
            print(f"rho_C = {ls['rho_C']:.12g}  w_C = {ls['w_C']:.12g}  eps_C = {ls['eps_C']:.12g}  "
                  f"sigma_C = {ls['sigma_C']:.12g}")
            print(f"bound_simplified(t={conf.t:g}) = {b['bound_simplified']:.6g}  shift_bound = {b['shift_bound']:.6g}")
            for n in res["notes"]:
                print(f"note: {n}")
        elif args.command == "simulate":
            s = cmd_simulate(conf, event_log=args.event_log)
            print(f"wrote {s.n} replicates to {conf.out / 'samples.csv'}")
        else:
            rep = cmd_compare(conf, args.samples, args.self_check)
            tv = rep["tv"]
            print(f"TV(Xi, model) <= {tv['negative_binomial']['upper']:.4g}  "
                  f"TV(Xi, Poisson) <= {tv['poisson']['upper']:.4g}  "
                  f"bound = {rep['bounds']['bound_simplified']:.4g}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BoundViolation as exc:
        print(f"bound violation: {exc}", file=sys.stderr)
        return EXIT_BOUND
    except JacksonFlowsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
