"""Command-line entry point: generate data, run scenarios, compare them.

Subcommands
-----------
``netcoop generate --config cfg.yaml``
    Write synthetic market and alpha CSVs (plus a manifest) for every seed.
``netcoop run --config cfg.yaml --scenario independent``
    Run one scenario per seed on the generated data; writes ``stats.csv``,
    ``series.csv`` and, for coordination scenarios, ``transcript.jsonl``
    under ``<out>/<scenario>/seed_<s>/``.
``netcoop compare --config cfg.yaml --scenarios independent,admm_2_iter``
    Run the listed scenarios on identical inputs and write a combined
    ``comparison.csv`` (seed-mean stats per scenario and entity) plus
    long-format ``comparison_series.csv``.

Exit codes: 0 success, 2 configuration error, 3 missing inputs,
4 numerical failure, 5 comparison mismatch.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ._util import atomic_write_text, fmt12
from .backtest import (
    ScenarioResult,
    SeedBundle,
    build_desk,
    check_common_seeds,
    parse_scenario,
    run_scenario_on_desk,
    stats_rows,
    write_series_csv,
    write_stats_csv,
)
from .config import RunConfig
from .coordination import message_to_json
from .errors import (
    ComparisonMismatchError,
    ConfigError,
    DimensionError,
    InvalidParameterError,
    MissingInputError,
    NetcoopError,
    NumericalError,
    OracleFailureError,
)
from .synthetic_market import (
    forward_window_returns,
    gen_alpha_paths,
    gen_market,
    load_alphas,
    load_market,
    save_alphas,
    save_market,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_INPUTS = 3
EXIT_NUMERICAL = 4
EXIT_COMPARISON = 5

_MANIFEST_NAME = "manifest.json"


def _data_dir(config: RunConfig, seed: int) -> Path:
    return config.output_dir / "data" / f"seed_{seed}"


def _alpha_config(config: RunConfig, bundle: SeedBundle):
    # the desk builder draws the per-PM alpha parameters; reuse it
    from .synthetic_market import AlphaGenConfig

    bt = config.backtest_config()
    rng = np.random.default_rng(bundle.alpha)
    return AlphaGenConfig(
        target_ic=rng.uniform(*bt.target_ic_range, size=bt.n_pms),
        temporal_autocorr=rng.uniform(*bt.autocorr_range, size=bt.n_pms),
        cross_corr=bt.cross_corr,
        horizon=bt.horizon,
        seed=bundle.alpha,
    )


def cmd_generate(config: RunConfig) -> int:
    """Generate market and alpha CSVs plus a manifest for every seed."""
    spec = config.market_spec()
    n_assets = config.tree["market"]["n_assets"]
    horizon = config.tree["alphas"]["horizon"]
    files: dict[str, list[str]] = {}
    for seed in config.seeds:
        bundle = SeedBundle.from_root(seed)
        market = gen_market(
            n_assets, config.n_generated_periods, spec=spec, seed=bundle.market
        )
        fwd = forward_window_returns(market.returns, horizon)
        sigma_asset = np.atleast_2d(np.cov(fwd, rowvar=False, ddof=1))
        alphas = gen_alpha_paths(_alpha_config(config, bundle), fwd, sigma_asset)
        outdir = _data_dir(config, seed)
        written = save_market(market, outdir)
        written += save_alphas(alphas, market.dates[: fwd.shape[0]],
                               market.asset_ids, outdir)
        files[str(seed)] = sorted(p.name for p in written)
    manifest = {
        "config_hash": config.generation_hash(),
        "seeds": config.seeds,
        "n_assets": n_assets,
        "periods": config.tree["market"]["periods"],
        "horizon": horizon,
        "files": files,
    }
    atomic_write_text(
        config.output_dir / "data" / _MANIFEST_NAME,
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
    )
    print(f"generated data for seeds {config.seeds} under "
          f"{config.output_dir / 'data'}")
    return EXIT_OK


def _read_manifest(config: RunConfig) -> dict:
    path = config.output_dir / "data" / _MANIFEST_NAME
    if not path.exists():
        raise MissingInputError(
            f"no generated data manifest at {path}; run `netcoop generate` first"
        )
    return json.loads(path.read_text())


def _check_manifest(config: RunConfig, manifest: dict, strict_hash_exc) -> None:
    missing = [s for s in config.seeds if s not in manifest["seeds"]]
    if missing:
        raise MissingInputError(
            f"generated data does not cover seeds {missing}; re-run generate"
        )
    if manifest["config_hash"] != config.generation_hash():
        raise strict_hash_exc(
            "generated data was produced under a different seed/market/alphas "
            "configuration; re-run generate"
        )


def _load_desk(config: RunConfig, seed: int):
    bundle = SeedBundle.from_root(seed)
    outdir = _data_dir(config, seed)
    market = load_market(outdir)
    bt = config.backtest_config()
    alphas = load_alphas(outdir, bt.n_pms)
    return build_desk(bt, bundle, market=market, alphas=alphas)


def _write_transcripts(result: ScenarioResult, path: Path) -> None:
    buf = io.StringIO()
    for period, transcript in result.transcripts:
        for msg in transcript.messages:
            buf.write(message_to_json(msg, period=period))
            buf.write("\n")
    atomic_write_text(path, buf.getvalue())


def _run_one(config: RunConfig, scenario: str, seed: int) -> ScenarioResult:
    desk = _load_desk(config, seed)
    return run_scenario_on_desk(config.backtest_config(), scenario, desk)


def _pool_map(config: RunConfig, tasks, threads: int):
    """Execute (scenario, seed) tasks, optionally across processes."""
    if threads <= 1 or len(tasks) <= 1:
        return [_run_one(config, sc, seed) for sc, seed in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_run_one, config, sc, seed) for sc, seed in tasks]
        return [f.result() for f in futures]


def cmd_run(config: RunConfig, scenario: str, threads: int = 1) -> int:
    """Run one scenario for every configured seed and write its outputs."""
    parse_scenario(scenario)
    manifest = _read_manifest(config)
    _check_manifest(config, manifest, MissingInputError)
    tasks = [(scenario, seed) for seed in config.seeds]
    results = _pool_map(config, tasks, threads)
    for (sc, seed), result in zip(tasks, results):
        rundir = config.output_dir / sc / f"seed_{seed}"
        write_stats_csv([result], rundir / "stats.csv")
        write_series_csv([result], rundir / "series.csv")
        if result.transcripts:
            _write_transcripts(result, rundir / "transcript.jsonl")
        flagged = len(result.flagged_periods)
        print(f"{sc} seed={seed}: final firm NAV {result.firm_nav[-1]:.2f}, "
              f"cumulative tc {result.firm_tc.sum():.2f}, "
              f"{flagged} flagged period(s) -> {rundir}")
    return EXIT_OK


_COMPARISON_HEADER = (
    "scenario,entity,return,volatility,sharpe,cum_tcost,cum_tcost_frac"
)


def _seed_mean_rows(scenario: str, results: list[ScenarioResult]) -> list[dict]:
    per_entity: dict[str, list[dict]] = {}
    for res in results:
        for row in stats_rows([res]):
            per_entity.setdefault(row["entity"], []).append(row)
    rows = []
    for entity, entity_rows in per_entity.items():
        sharpes = [r["sharpe"] for r in entity_rows if r["sharpe"] is not None]
        rows.append(
            {
                "scenario": scenario,
                "entity": entity,
                "return": float(np.mean([r["return"] for r in entity_rows])),
                "volatility": float(
                    np.mean([r["volatility"] for r in entity_rows])
                ),
                "sharpe": float(np.mean(sharpes)) if sharpes else None,
                "cum_tcost": float(
                    np.mean([r["cum_tcost"] for r in entity_rows])
                ),
                "cum_tcost_frac": float(
                    np.mean([r["cum_tcost_frac"] for r in entity_rows])
                ),
            }
        )
    return rows


def cmd_compare(config: RunConfig, scenarios: list[str], threads: int = 1) -> int:
    """Run scenarios on identical inputs; write comparison tables."""
    for s in scenarios:
        parse_scenario(s)
    manifest = _read_manifest(config)
    _check_manifest(config, manifest, ComparisonMismatchError)

    unique = list(dict.fromkeys(scenarios))
    tasks = [(sc, seed) for seed in config.seeds for sc in unique]
    flat = _pool_map(config, tasks, threads)
    by_key = {key: res for key, res in zip(tasks, flat)}
    for seed in config.seeds:
        check_common_seeds([by_key[(sc, seed)] for sc in unique])

    lines = [_COMPARISON_HEADER]
    for sc in scenarios:
        per_seed = [by_key[(sc, seed)] for seed in config.seeds]
        for row in _seed_mean_rows(sc, per_seed):
            sharpe = "" if row["sharpe"] is None else fmt12(row["sharpe"])
            lines.append(
                f'{row["scenario"]},{row["entity"]},{fmt12(row["return"])},'
                f'{fmt12(row["volatility"])},{sharpe},'
                f'{fmt12(row["cum_tcost"])},{fmt12(row["cum_tcost_frac"])}'
            )
    atomic_write_text(
        config.output_dir / "comparison.csv", "\n".join(lines) + "\n"
    )

    series_lines = [
        "scenario,entity,seed,period,nav,cum_return,cum_tcost,cum_tcost_frac"
    ]
    for sc in unique:
        for seed in config.seeds:
            res = by_key[(sc, seed)]
            for entity in res.entity_names():
                nav = res.nav_series(entity)
                cost = res.cost_series(entity)
                cum_cost = np.concatenate([[0.0], np.cumsum(cost)])
                cum_frac = np.concatenate([[0.0], np.cumsum(cost / nav[:-1])])
                for p in range(nav.shape[0]):
                    series_lines.append(
                        f"{sc},{entity},{seed},{p},{fmt12(nav[p])},"
                        f"{fmt12(nav[p] / nav[0] - 1.0)},{fmt12(cum_cost[p])},"
                        f"{fmt12(cum_frac[p])}"
                    )
    atomic_write_text(
        config.output_dir / "comparison_series.csv",
        "\n".join(series_lines) + "\n",
    )
    print(f"comparison over seeds {config.seeds} written to "
          f"{config.output_dir / 'comparison.csv'}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netcoop",
        description="Cooperative transaction-cost mitigation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="path to the YAML config")
        p.add_argument("--out", help="override the configured output directory")
        p.add_argument("--seeds", help="comma-separated seed list override")

    p_gen = sub.add_parser("generate", help="write synthetic market/alpha CSVs")
    add_common(p_gen)

    p_run = sub.add_parser("run", help="run one scenario on generated data")
    add_common(p_run)
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--threads", type=int, default=None)

    p_cmp = sub.add_parser("compare", help="run and compare scenarios")
    add_common(p_cmp)
    p_cmp.add_argument("--scenarios", required=True,
                       help="comma-separated scenario names")
    p_cmp.add_argument("--threads", type=int, default=None)
    return parser


def _effective_threads(arg_value) -> int:
    if arg_value is not None:
        return max(1, arg_value)
    env = os.environ.get("NETCOOP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"NETCOOP_THREADS must be an integer: {env!r}") from exc
    return 1


def _load_config(args) -> RunConfig:
    config = RunConfig.load(args.config)
    if args.out:
        config.tree["output_dir"] = args.out
    if args.seeds:
        try:
            config.tree["seeds"] = [int(s) for s in args.seeds.split(",") if s]
        except ValueError as exc:
            raise ConfigError(f"--seeds must be integers: {args.seeds!r}") from exc
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "run":
            return cmd_run(config, args.scenario,
                           _effective_threads(args.threads))
        if args.command == "compare":
            scenarios = [s for s in args.scenarios.split(",") if s]
            if not scenarios:
                raise ConfigError("--scenarios must list at least one scenario")
            return cmd_compare(config, scenarios,
                               _effective_threads(args.threads))
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, InvalidParameterError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUTS
    except ComparisonMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPARISON
    except (NumericalError, OracleFailureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NetcoopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
