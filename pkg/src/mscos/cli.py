"""Command-line front end: ``mscos {simulate,fit,predict,evaluate}``.

Every command takes a JSON config (``--config``) carrying
``"schema_version": 1``. Relative paths inside a config resolve against the
config file's directory. Exit codes: 0 success, 2 usage or configuration
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, InvalidArgument, NumericalError
from .evaluate import MetricReport, gelman_rubin, rmse, waic
from .files import (read_dataset, read_draws, read_overlaps, read_support,
                    read_truth, write_csv, write_data, write_draws, write_overlaps,
                    write_predictions, write_report, write_support, write_truth)
from .model import Hyperparams, KIND_LABELS, make_spec, normalize_kind
from .predict import cos_predict, predictive_ll_matrix
from .sampler import McmcConfig, PosteriorDraws, run_chains
from .simulate import (ScenarioConfig, build_sim_supports, derive_seed, generate_dataset,
                       run_scenario, sim_spec, _KIND_CODE)
from .supports import build_partition_matrix, rectangle_overlaps

log = logging.getLogger("mscos")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


# -- config helpers -------------------------------------------------------------

class Section:
    """Typed access to one JSON object with dotted-path error messages."""

    def __init__(self, data, path: str = "", base: Path = Path(".")):
        if not isinstance(data, dict):
            raise ConfigError(path or "<root>", "expected an object")
        self.data, self.path, self.base = data, path, base
        self._used = set()

    def _p(self, key):
        return f"{self.path}.{key}" if self.path else key

    def has(self, key) -> bool:
        return key in self.data

    def get(self, key, kind, default=..., check=None, why=""):
        self._used.add(key)
        if key not in self.data:
            if default is ...:
                raise ConfigError(self._p(key), "required field is missing")
            return default
        value = self.data[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is int and isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, kind) or (kind in (int, float) and isinstance(value, bool)):
            name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
            raise ConfigError(self._p(key), f"expected {name}, got {type(value).__name__}")
        if check is not None and not check(value):
            raise ConfigError(self._p(key), why or f"invalid value {value!r}")
        return value

    def path_(self, key, default=..., must_exist=True):
        raw = self.get(key, str, default)
        if raw is None:
            return None
        p = Path(raw)
        p = p if p.is_absolute() else (self.base / p)
        if must_exist and not p.exists():
            raise ConfigError(self._p(key), f"file not found: {p}")
        return p.resolve()

    def section(self, key, default=...):
        self._used.add(key)
        if key not in self.data:
            if default is ...:
                raise ConfigError(self._p(key), "required section is missing")
            return Section(default, self._p(key), self.base)
        return Section(self.data[key], self._p(key), self.base)

    def finish(self):
        extra = sorted(set(self.data) - self._used)
        if extra:
            raise ConfigError(self._p(extra[0]), "unknown field")


def load_config(path) -> Section:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("--config", f"file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON ({exc})") from None
    cfg = Section(data, "", path.parent)
    cfg.get("schema_version", int, check=lambda v: v == SCHEMA_VERSION,
            why=f"unsupported schema version (expected {SCHEMA_VERSION})")
    return cfg


def parse_mcmc(sec: Section, seed=None) -> McmcConfig:
    kw = {}
    for key in ("n_iter", "burn_in", "thin", "seed"):
        if sec.has(key):
            kw[key] = sec.get(key, int)
    if sec.has("adapt"):
        kw["adapt"] = sec.get("adapt", bool)
    if sec.has("step_sizes"):
        kw["step_sizes"] = {k: float(v) for k, v in sec.get("step_sizes", dict).items()}
    sec.finish()
    if seed is not None:
        kw["seed"] = seed
    try:
        return McmcConfig(**kw)
    except InvalidArgument as exc:
        raise ConfigError(sec.path, str(exc)) from None


def parse_hyper(sec: Section) -> Hyperparams:
    try:
        return Hyperparams.from_dict(sec.data)
    except (InvalidArgument, TypeError, ValueError) as exc:
        raise ConfigError(sec.path, str(exc)) from None


def parse_kinds(sec: Section, key, default):
    kinds = sec.get(key, list, default, check=lambda v: len(v) > 0, why="must be non-empty")
    try:
        return tuple(normalize_kind(k) for k in kinds)
    except InvalidArgument as exc:
        raise ConfigError(f"{sec._p(key)}", str(exc)) from None


def _manifest(out: Path, command: str, extra: dict) -> None:
    doc = {"command": command, "version": __version__, "python": platform.python_version(),
           "numpy": np.__version__,
           "created": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# -- simulate -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    """Run the truth x fit scenario grid.

    Writes ``datasets.csv`` (observed data and partition-scale truth of every
    dataset), ``scenario_runs.csv`` (one row per run) and
    ``scenario_table.csv`` (mean and sd of RMSE per cell). With
    ``"export": true`` it also writes supports, overlap tables and per-dataset
    data files under ``export/`` for use with ``fit``.
    """
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.get("seed", int, 0)
    mcmc = parse_mcmc(cfg.section("mcmc", {}))
    scen = ScenarioConfig(
        n_datasets=cfg.get("n_datasets", int, 20, check=lambda v: v >= 1, why="must be >= 1"),
        truths=parse_kinds(cfg, "truths", ["sre", "mcar", "oh"]),
        fits=parse_kinds(cfg, "fits", ["sre", "mcar", "oh"]),
        mcmc=mcmc, seed=seed,
        r=cfg.get("r", int, 50, check=lambda v: v >= 1, why="must be >= 1"),
        latent_prediction=cfg.get("latent_prediction", bool, False),
        threads=args.threads)
    export = cfg.get("export", bool, False)
    cfg.finish()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    supports = build_sim_supports()

    t0 = time.perf_counter()
    rows = []
    for t in scen.truths:
        for d in range(scen.n_datasets):
            sim = generate_dataset(t, None, supports, derive_seed(seed, _KIND_CODE[t], d),
                                   r=scen.r, spec=sim_spec(t, supports, scen.r))
            label = KIND_LABELS[t]
            for k, sup in ((1, supports.D1), (2, supports.D2)):
                rows += [(label, d, f"D{k}", k, u, v) for u, v in zip(sup.ids, sim.data.y(k))]
            for k in (1, 2):
                rows += [(label, d, "DA", k, u, v) for u, v in zip(supports.DA.ids, sim.y_a[k])]
            if export:
                _export_dataset(out / "export", t, d, supports, sim)
    write_csv(out / "datasets.csv", ["truth", "dataset", "support", "variable", "unit_id", "value"],
              rows)
    if export:
        _export_supports(out / "export", supports)

    result = run_scenario(scen)
    seconds = [r.pop("seconds") for r in result.runs]
    run_cols = ["truth", "dataset", "fit", "status"] + [
        f"rmse_{v}_{s}" for v, s in (("y1", "DA"), ("y1", "D1"), ("y2", "DA"), ("y2", "D2"))]
    write_csv(out / "scenario_runs.csv", run_cols,
              ([r.get(c) for c in run_cols] for r in result.runs))
    tab_cols = ["variable", "scale", "truth", "fit", "n", "mean", "sd"]
    write_csv(out / "scenario_table.csv", tab_cols,
              ([r[c] for c in tab_cols] for r in result.table))
    failed = sum(r["status"] != "ok" for r in result.runs)
    _manifest(out, "simulate", {
        "config": str(Path(args.config).resolve()), "seed": seed, "runs": len(result.runs),
        "failed_runs": failed, "run_seconds": seconds,
        "total_seconds": time.perf_counter() - t0})
    print(result.format_table(scen.fits))
    return EXIT_OK


def _export_supports(root: Path, supports) -> None:
    root.mkdir(parents=True, exist_ok=True)
    for name in ("D1", "D2", "DA"):
        write_support(root / f"{name}.json", getattr(supports, name))
    write_overlaps(root / "overlaps_D1.csv", rectangle_overlaps(supports.D1, supports.DA))
    write_overlaps(root / "overlaps_D2.csv", rectangle_overlaps(supports.D2, supports.DA))


def _export_dataset(root: Path, kind, d, supports, sim) -> None:
    ddir = root / f"{kind}_{d:03d}"
    ddir.mkdir(parents=True, exist_ok=True)
    write_data(ddir / "y1.csv", supports.D1, sim.data.y1)
    write_data(ddir / "y2.csv", supports.D2, sim.data.y2)
    write_truth(ddir / "truth_DA.csv", supports.DA.ids, sim.y_a)


# -- fit ------------------------------------------------------------------------

def _model_from_section(model: Section, inputs: Section):
    """Supports, partition matrices and model spec from config sections."""
    kind = model.get("kind", str)
    try:
        kind = normalize_kind(kind)
    except InvalidArgument as exc:
        raise ConfigError(model._p("kind"), str(exc)) from None
    uni = model.get("univariate", (int, type(None)), None,
                    check=lambda v: v in (None, 1, 2), why="must be 1, 2 or null")
    variables = (uni,) if uni else (1, 2)
    r = model.get("r", int, 50, check=lambda v: v >= 1, why="must be >= 1")
    knot_seed = model.get("knot_seed", int, 0)
    hyper = parse_hyper(model.section("hyperparams", {}))
    clip = model.get("clip", bool, False)
    model.finish()

    fine = read_support(inputs.path_("partition_support"))
    Ps, supports, data_paths = {}, {}, {}
    for k in variables:
        supports[k] = read_support(inputs.path_(f"support{k}"))
        overlaps = read_overlaps(inputs.path_(f"overlaps{k}"))
        try:
            Ps[k] = build_partition_matrix(supports[k], fine, overlaps, clip=clip)
        except InvalidArgument as exc:
            raise ConfigError(inputs._p(f"overlaps{k}"), str(exc)) from None
        data_paths[k] = inputs.path_(f"data{k}", None)
    for key in ("support1", "support2", "overlaps1", "overlaps2", "data1", "data2"):
        inputs._used.add(key)  # the unused variable's inputs are dropped
    inputs.finish()
    if r > fine.n - 1 and kind != "mcar":
        raise ConfigError(model._p("r"), f"must be at most {fine.n - 1} for this support")
    spec = make_spec(kind, Ps.get(1), Ps.get(2), fine, r=r, hyper=hyper,
                     variables=variables, knot_seed=knot_seed)
    return spec, fine, supports, data_paths


def cmd_fit(args) -> int:
    """Run MCMC chains and write draws, acceptance rates and R-hat.

    Outputs: ``draws.csv``, ``acceptance.csv``, ``diagnostics.csv``,
    ``fit.json`` (everything ``predict``/``evaluate`` need to rebuild the
    model) and ``manifest.json``.
    """
    cfg = load_config(args.config)
    model_raw = cfg.data.get("model")
    inputs_raw = cfg.data.get("inputs")
    spec, fine, supports, data_paths = _model_from_section(
        cfg.section("model"), cfg.section("inputs"))
    mcmc = parse_mcmc(cfg.section("mcmc", {}), seed=args.seed)
    n_chains = cfg.get("n_chains", int, 2, check=lambda v: v >= 1, why="must be >= 1")
    cfg.finish()
    for k in spec.variables:
        if data_paths[k] is None:
            raise ConfigError(f"inputs.data{k}", "required field is missing")
    data = read_dataset(data_paths.get(1), data_paths.get(2), supports.get(1), supports.get(2))
    try:
        data.validate(spec)
    except InvalidArgument as exc:
        raise ConfigError("inputs", str(exc)) from None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    chains = run_chains(spec, data, mcmc, n_chains=n_chains, threads=args.threads)
    seconds = time.perf_counter() - t0
    write_draws(out / "draws.csv", chains)
    write_csv(out / "acceptance.csv", ["chain", "parameter", "value"],
              ((d.chain, k, v) for d in chains for k, v in sorted(d.acceptance.items())))
    write_csv(out / "diagnostics.csv", ["parameter", "rhat"], rhat_rows(chains))
    base = Path(args.config).resolve().parent
    _write_json(out / "fit.json", {
        "schema_version": SCHEMA_VERSION, "kind": spec.kind, "variables": list(spec.variables),
        "model": model_raw, "inputs": _resolve_paths(inputs_raw, base),
        "mcmc": mcmc.to_dict(), "n_chains": n_chains})
    _manifest(out, "fit", {"config": str(Path(args.config).resolve()), "seconds": seconds})
    return EXIT_OK


def _resolve_paths(inputs: dict, base: Path) -> dict:
    out = {}
    for k, v in inputs.items():
        p = Path(v)
        out[k] = str(p if p.is_absolute() else (base / p).resolve())
    return out


def rhat_rows(chains: list[PosteriorDraws]):
    """Gelman-Rubin per scalar parameter, plus the largest over the process."""
    if len(chains) < 2 or chains[0].n_draws < 10:
        return []
    rows = []
    for name in chains[0].scalars:
        rows.append((name, gelman_rubin(np.vstack([c.scalars[name] for c in chains]))))
    proc = np.stack([c.process for c in chains])
    per = [gelman_rubin(proc[:, :, j]) for j in range(proc.shape[2])]
    rows.append((f"max_{chains[0].process_name}", max(per)))
    return rows


def _load_fit(sec: Section, key="fit"):
    fit_dir = sec.path_(key)
    fit_json = fit_dir / "fit.json"
    if not fit_json.is_file():
        raise ConfigError(sec._p(key), f"{fit_json} not found")
    doc = json.loads(fit_json.read_text())
    spec, fine, supports, data_paths = _model_from_section(
        Section(doc["model"], "fit.model"), Section(doc["inputs"], "fit.inputs", fit_dir))
    draws_path = fit_dir / "draws.csv"
    if not draws_path.is_file():
        raise ConfigError(sec._p(key), f"{draws_path} not found")
    chains = read_draws(draws_path, spec.kind, spec.variables)
    want = spec.scalar_names()
    for c in chains:
        if sorted(c.scalars) != sorted(want) or c.process.shape[1] != spec.process_dim():
            raise ConfigError(sec._p(key), "draws do not match the model specification")
    return spec, fine, supports, data_paths, chains


# -- predict --------------------------------------------------------------------

def cmd_predict(args) -> int:
    """Change-of-support prediction from stored draws, written to ``predictions.csv``.

    The optional ``target`` block names a support and its overlap table with
    the partition support; predictions are then averages over its units.
    """
    cfg = load_config(args.config)
    spec, fine, _, _, chains = _load_fit(cfg)
    seed = args.seed if args.seed is not None else cfg.get("seed", int, 0)
    latent = cfg.get("latent", bool, False)
    target = None
    if cfg.has("target"):
        tsec = cfg.section("target")
        tsup = read_support(tsec.path_("support"))
        tover = read_overlaps(tsec.path_("overlaps"))
        tsec.finish()
        try:
            target = build_partition_matrix(tsup, fine, tover)
        except InvalidArgument as exc:
            raise ConfigError("target.overlaps", str(exc)) from None
    cfg.finish()
    draws = PosteriorDraws.concatenate(chains)
    try:
        res = cos_predict(spec, draws, target=target, seed=seed, latent=latent)
    except InvalidArgument as exc:
        raise ConfigError("fit", str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(out / "predictions.csv", res)
    _manifest(out, "predict", {"config": str(Path(args.config).resolve()), "seed": seed})
    return EXIT_OK


# -- evaluate -------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    """RMSE, WAIC and Gelman-Rubin into ``metrics.json`` and ``metrics.csv``.

    ``metrics`` lists what to compute. RMSE needs ``predictions`` and
    ``truth``; WAIC and Gelman-Rubin need ``fit``.
    """
    cfg = load_config(args.config)
    metrics = cfg.get("metrics", list, ["rmse", "waic", "gelman_rubin"])
    bad = set(metrics) - {"rmse", "waic", "gelman_rubin"}
    if bad:
        raise ConfigError("metrics", f"unknown metric {sorted(bad)[0]!r}")
    report = MetricReport(config={"metrics": ",".join(metrics)})
    if "rmse" in metrics:
        if not cfg.has("truth"):
            raise ConfigError("truth", "required for rmse")
        truth = read_truth(cfg.path_("truth"))
        pred = read_truth(cfg.path_("predictions"))
        for k in sorted(truth):
            if k not in pred:
                raise ConfigError("predictions", f"no predictions for variable {k}")
            ids = list(truth[k])
            missing = [u for u in ids if u not in pred[k]]
            if missing:
                raise ConfigError("predictions", f"unit {missing[0]!r} has no prediction")
            report.rmse[f"y{k}"] = rmse([truth[k][u] for u in ids], [pred[k][u] for u in ids])
    if "waic" in metrics or "gelman_rubin" in metrics:
        spec, _, supports, data_paths, chains = _load_fit(cfg)
        if "waic" in metrics:
            data = read_dataset(data_paths.get(1), data_paths.get(2),
                                supports.get(1), supports.get(2))
            draws = PosteriorDraws.concatenate(chains)
            for k in spec.variables:
                w = waic(predictive_ll_matrix(spec, draws, data, variable=k))
                report.waic[f"y{k}"] = {"waic": w.waic, "lppd": w.lppd, "p_waic": w.p_waic}
            if spec.bivariate:
                w = waic(predictive_ll_matrix(spec, draws, data))
                report.waic["total"] = {"waic": w.waic, "lppd": w.lppd, "p_waic": w.p_waic}
        if "gelman_rubin" in metrics:
            report.gelman_rubin = {name: val for name, val in rhat_rows(chains)}
    else:
        cfg.get("fit", str, None)
    cfg.finish()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "metrics.json", out / "metrics.csv", report)
    _manifest(out, "evaluate", {"config": str(Path(args.config).resolve())})
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "evaluate": cmd_evaluate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mscos", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InvalidArgument, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        where = f" (iteration {exc.iteration})" if exc.iteration is not None else ""
        print(f"numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
