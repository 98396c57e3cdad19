"""
Command line driver.

Every flag mirrors a key of the JSON run config; flags override the file.
All randomness comes from one root seed, split with
``numpy.random.SeedSequence(root).spawn(4)`` into the graph, label, mask and
chain seeds (in that order). Explicit entries under ``"seeds"`` win. The
resolved config, with every seed filled in, is written to ``<out>/config.json``
and re-running from it reproduces the data outputs byte for byte.

Exit codes: 0 success, 2 usage/config, 3 data/graph, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, graph as gmod, io, model, sampler

log = logging.getLogger("graphlabel")

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

SEED_NAMES = ("graph", "label", "mask", "chain")
GRAPH_SOURCES = ("graph", "gen", "features")

DEFAULTS = {
    "graph": None,
    "gen": None,
    "features": None,
    "knn": 10,
    "header": False,
    "k_ring": 2,
    "labels": None,
    "truth": None,
    "rule": "path",
    "missing": 0.2,
    "prior": "gamma:0:0",
    "q": None,
    "alpha": 1.0,
    "r": None,
    "strategy": "spectral",
    "iters": 5000,
    "burn": None,
    "thin": 1,
    "mh_step": 0.5,
    "init_c": 1.0,
    "seed": None,
    "seeds": {},
    "out": "out",
    "level": 0.95,
    "threshold": 0.5,
    "grid": "log:1:7:25",
    "ks": [1, 2, 3],
    "fit_lo": 0.01,
    "fit_hi": 0.5,
    "jobs": 1,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# -- config -----------------------------------------------------------------

def _parse_list(text, cast):
    if isinstance(text, list):
        return [cast(x) for x in text]
    return [cast(x) for x in str(text).split(",") if x.strip()]


def parse_grid(spec) -> list[float]:
    """``log:LO:HI:N`` for ``N`` log-spaced points ``10^LO .. 10^HI``, or a comma list (sorted)."""
    if isinstance(spec, list):
        return sorted(float(c) for c in spec)
    spec = str(spec)
    if spec.startswith("log:"):
        try:
            lo, hi, num = spec[4:].split(":")
            return np.logspace(float(lo), float(hi), int(num)).tolist()
        except ValueError:
            raise UsageError(f"bad grid {spec!r}; expected log:LO:HI:N") from None
    try:
        return sorted(_parse_list(spec, float))
    except ValueError:
        raise UsageError(f"bad grid {spec!r}") from None


def parse_prior(spec: str, r_default=None):
    kind, *args = str(spec).split(":")
    try:
        vals = [float(a) for a in args]
        if kind == "gamma":
            return model.OrdinaryGamma(*(vals or [0.0, 0.0]))
        if kind == "gengamma":
            r = vals[0] if vals else r_default
            if r is None:
                raise UsageError("gengamma prior needs R (or a geometry fit)")
            return model.GeneralizedGamma(r)
        if kind == "fixed":
            return model.FixedScale(vals[0])
    except (TypeError, IndexError, ValueError) as exc:
        raise UsageError(f"bad prior {spec!r}: {exc}") from None
    raise UsageError(f"unknown prior {spec!r}; use gamma:A:B, gengamma:R or fixed:C")


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(loaded) - set(DEFAULTS) - {"derived"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        loaded.pop("derived", None)
        cfg.update(loaded)
    flags = {k: v for k, v in vars(args).items() if k in DEFAULTS and v is not None}
    if any(k in flags for k in GRAPH_SOURCES):
        for k in GRAPH_SOURCES:
            cfg[k] = None
    cfg.update(flags)
    if "ks" in flags:
        cfg["ks"] = _parse_list(flags["ks"], int)

    sources = [k for k in GRAPH_SOURCES if cfg[k]]
    if len(sources) != 1:
        raise UsageError("give exactly one graph source: --graph, --gen or --features")

    if cfg["seed"] is None:
        cfg["seed"] = int(np.random.SeedSequence().entropy % 2**63)
        log.info("auto-generated root seed %d", cfg["seed"])
    children = np.random.SeedSequence(int(cfg["seed"])).spawn(len(SEED_NAMES))
    seeds = dict(cfg.get("seeds") or {})
    for name, child in zip(SEED_NAMES, children):
        seeds.setdefault(name, int(child.generate_state(1, dtype=np.uint64)[0] % 2**63))
    cfg["seeds"] = seeds
    return cfg


# -- data resolution ----------------------------------------------------------

def build_graph(cfg) -> gmod.Graph:
    if cfg["graph"]:
        try:
            text = Path(cfg["graph"]).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read graph: {exc}") from None
        return gmod.load_edge_list(text)
    if cfg["features"]:
        x = io.read_features(cfg["features"], header=bool(cfg["header"]))
        return gmod.knn_graph(x, int(cfg["knn"]))
    kind, *args = str(cfg["gen"]).split(":")
    try:
        if kind == "path":
            return gmod.path_graph(int(args[0]))
        if kind == "ws":
            return gmod.watts_strogatz(int(args[0]), int(cfg["k_ring"]), float(args[1]),
                                       seed=cfg["seeds"]["graph"])
    except (IndexError, ValueError) as exc:
        raise UsageError(f"bad generator {cfg['gen']!r}: {exc}") from None
    raise UsageError(f"unknown generator {cfg['gen']!r}; use path:N or ws:N:P")


class Context:
    """Lazily resolved graph, spectrum, geometry, labels and truth for one config."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.graph = build_graph(cfg)
        self._spec = None
        self._fit = None
        self._data = None

    @property
    def spectrum(self) -> gmod.Spectrum:
        if self._spec is None:
            t = time.perf_counter()
            self._spec, hit = gmod.cached_spectrum(self.graph)
            if hit:
                log.info("spectrum: cache hit, decomposition skipped")
            else:
                log.info("spectrum: decomposed in %.2fs", time.perf_counter() - t)
        return self._spec

    @property
    def geometry(self) -> gmod.GeometryFit:
        if self._fit is None:
            self._fit = gmod.fit_geometry(self.spectrum, self.cfg["fit_lo"], self.cfg["fit_hi"])
        return self._fit

    @property
    def r(self) -> float:
        return float(self.cfg["r"]) if self.cfg["r"] is not None else self.geometry.r

    @property
    def q(self) -> float:
        return float(self.cfg["q"]) if self.cfg["q"] is not None else self.r / 2 + float(self.cfg["alpha"])

    def data(self):
        """(observations, truth or None, full labels or None)."""
        if self._data is not None:
            return self._data
        cfg = self.cfg
        n = self.graph.n
        if cfg["labels"]:
            obs = io.read_labels(cfg["labels"], n)
            truth = labels = None
            if cfg["truth"]:
                truth, labels = io.read_truth(cfg["truth"])
                if truth.n != n:
                    raise DataError(f"truth covers {truth.n} vertices, graph has {n}")
        else:
            rule = model.CoefficientRule(cfg["rule"])
            r = self.r if rule is model.CoefficientRule.SMOOTH else None
            truth = model.synth_soft_labels(self.spectrum, rule, r)
            labels = model.sample_labels(truth, cfg["seeds"]["label"])
            obs = model.mask_labels(labels, float(cfg["missing"]), cfg["seeds"]["mask"])
        self._data = (obs, truth, labels)
        return self._data

    def prior(self) -> model.PriorConfig:
        spec = str(self.cfg["prior"])
        r_default = self.r if spec.startswith("gengamma") and spec.count(":") == 0 else None
        try:
            return model.PriorConfig(q=self.q, c_prior=parse_prior(spec, r_default))
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def sampler_config(self, prior) -> sampler.SamplerConfig:
        cfg = self.cfg
        if cfg["strategy"] == "sparse" and not prior.integer_q:
            raise UsageError(f"the sparse strategy needs an integer q, got {prior.q}")
        try:
            return sampler.SamplerConfig(
                n_iter=int(cfg["iters"]), burn_in=None if cfg["burn"] is None else int(cfg["burn"]),
                thin=int(cfg["thin"]), seed=cfg["seeds"]["chain"], strategy=cfg["strategy"],
                mh_step=float(cfg["mh_step"]), init_c=float(cfg["init_c"]),
            )
        except sampler.ConfigurationError as exc:
            raise UsageError(str(exc)) from None

    def chain_inputs(self, prior, scfg) -> dict:
        needs_spec = scfg.strategy == "spectral" or (scfg.strategy == "dense" and not prior.integer_q)
        return {"graph": self.graph, "spectrum": self.spectrum if needs_spec else None}


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(ctx: Context, out: Path, derived: dict) -> None:
    cfg = dict(ctx.cfg)
    cfg["derived"] = derived
    io.write_json(out / "config.json", cfg)


# -- commands -----------------------------------------------------------------

def cmd_generate(ctx: Context) -> None:
    """Write a graph, synthetic truth and masked labels."""
    cfg = ctx.cfg
    if cfg["labels"]:
        raise UsageError("generate needs a synthetic label source, not --labels")
    out = _out_dir(cfg)
    obs, truth, labels = ctx.data()
    io.write_text(out / "graph.txt", gmod.save_edge_list(ctx.graph))
    io.write_truth(out / "truth.csv", truth, labels)
    io.write_labels(out / "labels.csv", obs)
    derived = {"n": ctx.graph.n, "n_observed": len(obs)}
    if cfg["rule"] == "smooth":
        derived["r"] = ctx.r
    _finish(ctx, out, derived)
    print(f"n={ctx.graph.n} edges={ctx.graph.n_edges} observed={len(obs)} missing={len(obs.missing)}")


def cmd_spectrum(ctx: Context) -> None:
    """Cache the Laplacian spectrum and report the geometry fit."""
    out = _out_dir(ctx.cfg)
    lam = ctx.spectrum.eigenvalues
    n = len(lam)
    idx = np.arange(1, n)
    lines = ["i,log_i_over_n,log_lambda"]
    lines += [f"{i},{io.format_float(np.log(i / n))},{io.format_float(np.log(lam[i]))}" for i in idx]
    io.write_text(out / "spectrum.csv", "\n".join(lines) + "\n")
    fit = ctx.geometry
    geo = {"n": n, "slope": fit.slope, "intercept": fit.intercept, "r": fit.r,
           "fit_range": list(fit.fit_range)}
    io.write_json(out / "geometry.json", geo)
    _finish(ctx, out, geo)
    print(f"n={n} slope={fit.slope:.4f} r={fit.r:.4f} fit_range={fit.fit_range}")


def cmd_fit(ctx: Context) -> None:
    """Run the Gibbs sampler and write draws and a posterior summary."""
    cfg = ctx.cfg
    prior = ctx.prior()
    scfg = ctx.sampler_config(prior)
    obs, truth, _ = ctx.data()
    out = _out_dir(cfg)
    draws = sampler.run_chain(obs, prior, scfg, **ctx.chain_inputs(prior, scfg))
    derived = {"q": prior.q, "n": obs.n, "n_kept": draws.n_kept,
               "acceptance_rate": draws.acceptance_rate}
    scaled = None
    if cfg["r"] is not None or cfg["q"] is None or isinstance(prior.c_prior, model.GeneralizedGamma):
        derived["r"] = ctx.r
        scaled = analysis.scaled_c_transform(draws.c_draws, ctx.r, prior.q, obs.n)
    io.write_draws(out, draws, scaled)
    io.write_json(out / "draws.json", {**draws.config, "acceptance_rate": draws.acceptance_rate,
                                       "n_kept": draws.n_kept})
    io.write_json(out / "timing.json", {"seconds_per_iter": draws.seconds_per_iter})
    summary = analysis.posterior_summary(draws, float(cfg["level"]))
    io.write_summary(out / "summary.csv", summary, obs, truth)
    _finish(ctx, out, derived)
    msg = f"n={obs.n} q={prior.q:.4g} kept={draws.n_kept} c_mean={summary.c_mean:.4g}"
    if draws.acceptance_rate is not None:
        msg += f" acceptance={draws.acceptance_rate:.3f}"
        log.info("MH acceptance rate %.3f", draws.acceptance_rate)
    print(msg)


def cmd_sweep(ctx: Context) -> None:
    """Fixed-c oracle sweep of the posterior-mean MSE."""
    cfg = ctx.cfg
    obs, truth, _ = ctx.data()
    if truth is None:
        raise UsageError("sweep needs the true soft labels: use a synthetic label source or --truth")
    prior = ctx.prior()
    scfg = ctx.sampler_config(prior)
    grid = parse_grid(cfg["grid"])
    out = _out_dir(cfg)
    try:
        res = analysis.oracle_sweep(grid, obs, prior, scfg, truth, level=float(cfg["level"]),
                                    n_jobs=int(cfg["jobs"]), **ctx.chain_inputs(prior, scfg))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    io.write_sweep(out, res)
    _finish(ctx, out, {"q": prior.q, "c_star": res.c_star})
    print(f"c_star={res.c_star:.4g} points={len(res.curve)} failed={len(res.failed)}")


def cmd_baseline(ctx: Context) -> None:
    """Hop-distance k-NN baseline, with a Bayes row when a summary exists."""
    cfg = ctx.cfg
    obs, _, labels = ctx.data()
    if labels is None:
        raise UsageError("baseline needs the held-out labels: use a synthetic label source or --truth")
    out = _out_dir(cfg)
    missing = obs.missing
    rows = [["method", "k", "rate", "n_eval", "n_unreachable"]]
    best = None
    for k in cfg["ks"]:
        pred = analysis.knn_baseline(ctx.graph, obs, int(k), on_unreachable="mark")
        reach = pred >= 0
        for v in missing[~reach]:
            log.warning("k=%d: vertex %d reaches no observed vertex", k, v)
        rate = float(np.mean(pred[reach] != labels[missing][reach])) if reach.any() else float("nan")
        rows.append(["knn", int(k), repr(rate), int(reach.sum()), int((~reach).sum())])
        best = rate if best is None or rate < best else best
    summary_path = out / "summary.csv"
    if summary_path.exists():
        means = io.read_summary_means(summary_path)
        if len(means) == obs.n:
            pred = analysis.predict_labels(means, float(cfg["threshold"]))
            rate = analysis.misclassification_rate(pred, labels, missing)
            rows.append(["bayes", "", repr(rate), len(missing), 0])
            rows.append(["bayes_minus_best_knn", "", repr(rate - best), len(missing), 0])
    io.write_text(out / "baseline.csv", "\n".join(",".join(map(str, r)) for r in rows) + "\n")
    _finish(ctx, out, {"n": obs.n, "n_missing": len(missing)})
    for r in rows[1:]:
        print(" ".join(map(str, r)))


COMMANDS = {
    "generate": cmd_generate,
    "spectrum": cmd_spectrum,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "baseline": cmd_baseline,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    a = common.add_argument
    a("--config", help="JSON run config; flags override its keys")
    a("--graph", help="edge-list file")
    a("--gen", help="generator: path:N or ws:N:P")
    a("--features", help="CSV feature matrix; builds a k-NN graph")
    a("--knn", type=int, help="neighbours for --features (default 10)")
    a("--header", action="store_const", const=True, help="feature CSV has a header row")
    a("--k-ring", dest="k_ring", type=int, help="ring lattice degree for ws (default 2)")
    a("--labels", help="label CSV vertex,label")
    a("--truth", help="truth CSV vertex,label,f0,ell0")
    a("--rule", choices=["path", "smooth"], help="synthetic coefficient rule")
    a("--missing", type=float, help="fraction of labels hidden (default 0.2)")
    a("--prior", help="gamma:A:B | gengamma[:R] | fixed:C")
    a("--q", type=float, help="Laplacian power")
    a("--alpha", type=float, help="prior smoothness; q = r/2 + alpha when --q is absent")
    a("--r", type=float, help="geometry exponent (default: fitted)")
    a("--strategy", choices=list(sampler.STRATEGIES))
    a("--iters", type=int)
    a("--burn", type=int)
    a("--thin", type=int)
    a("--seed", type=int, help="root seed")
    a("--mh-step", dest="mh_step", type=float)
    a("--init-c", dest="init_c", type=float)
    a("--out", help="output directory")
    a("--level", type=float, help="credible level (default 0.95)")
    a("--threshold", type=float)
    a("--grid", help="sweep grid: log:LO:HI:N or comma list")
    a("--ks", help="comma list of k for the k-NN baseline")
    a("--fit-lo", dest="fit_lo", type=float)
    a("--fit-hi", dest="fit_hi", type=float)
    a("--jobs", type=int, help="parallel sweep workers")
    a("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="graphlabel", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        ctx = Context(cfg)
        COMMANDS[args.command](ctx)
    except UsageError as exc:
        print(f"graphlabel: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (sampler.ChainDivergenceError, sampler.ImproperPosteriorError, np.linalg.LinAlgError) as exc:
        print(f"graphlabel: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, io.DataFileError, gmod.EdgeListError, gmod.DisconnectedGraphError,
            FileNotFoundError) as exc:
        print(f"graphlabel: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (sampler.ConfigurationError, ValueError) as exc:
        print(f"graphlabel: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
