# decongest/cli.py
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NoReturn, Optional

import numpy as np
import structlog
import typer

from .config import (
    ExperimentConfig,
    LearnerConfig,
    PredictorConfig,
    PriceScheme,
    get_settings,
    load_experiment_config,
)
from .errors import DecongestError, InvalidArgumentError
from .models import Market, Mask, MaskDistribution, PredictorWeights
from .utils import configure_logging, read_json, write_json

app = typer.Typer(no_args_is_help=True, help="decongest: market decongestion via masked item representations")
log = structlog.get_logger()


@dataclass
class _State:
    seed: int = 0
    seed_given: bool = False
    jobs: int = 1


state = _State()


# ---------- helpers ----------

def _out_path(out: Optional[Path], *default: str) -> Path:
    return out if out is not None else get_settings().DECONGEST_OUTPUT_ROOT.joinpath(*default)


def _fail(e: Exception) -> NoReturn:
    log.error("command_failed", error=str(e), kind=type(e).__name__)
    typer.echo(f"[ERR] {e}", err=True)
    raise typer.Exit(code=1)


def _read_markets(path: Path) -> list[Market]:
    from .data import markets_from_dict

    payload = read_json(path)
    if "markets" in payload:
        return markets_from_dict(payload)
    return [Market.from_dict(payload)]


def _parse_mask(bits: str, d: int) -> Mask:
    try:
        mask = Mask.from_bits(bits)
    except InvalidArgumentError as e:
        raise typer.BadParameter(str(e)) from e
    if mask.d != d:
        raise typer.BadParameter(f"mask has {mask.d} bits, markets have d={d}")
    return mask


# ---------- global options ----------

@app.callback(invoke_without_command=True)
def main(
    ctx: typer.Context,
    seed: Optional[int] = typer.Option(None, help="Master seed (default DECONGEST_SEED)"),
    jobs: Optional[int] = typer.Option(None, help="Parallel workers (default DECONGEST_JOBS)"),
    log_level: Optional[str] = typer.Option(None, help="DEBUG|INFO|WARNING|ERROR"),
    print_config_schema: bool = typer.Option(
        False, "--print-config-schema", help="Print the experiment config JSON schema and exit"
    ),
) -> None:
    settings = get_settings()
    configure_logging(log_level)
    state.seed = settings.DECONGEST_SEED if seed is None else seed
    state.seed_given = seed is not None
    state.jobs = settings.DECONGEST_JOBS if jobs is None else jobs
    if print_config_schema:
        typer.echo(json.dumps(ExperimentConfig.model_json_schema(), indent=2))
        raise typer.Exit()
    if ctx.invoked_subcommand is None:
        typer.echo(ctx.get_help())


# ---------- data ----------

@app.command("gen-synthetic")
def gen_synthetic(
    alpha: float = typer.Option(0.0, help="Mixture weight on the homogeneous preference profile"),
    rho: float = typer.Option(1.0, help="Value dispersion exponent in (0, 1]"),
    n: int = typer.Option(8),
    m: int = typer.Option(8),
    d: int = typer.Option(14),
    out: Optional[Path] = typer.Option(None, help="Market JSON (default <output root>/markets/mixture.json)"),
) -> None:
    """Generate one mixture market priced at mid CE prices."""
    from .data import MixtureSpec, make_mixture_market

    try:
        market = make_mixture_market(MixtureSpec(n=n, m=m, d=d, alpha=alpha, rho=rho, seed=state.seed))
    except DecongestError as e:
        _fail(e)
    path = _out_path(out, "markets", "mixture.json")
    write_json(path, market.to_dict())
    typer.echo(f"OK — market {n}×{m} (d={d}) written to {path}")


@app.command("ingest-ratings")
def ingest_ratings_cmd(
    path: Optional[Path] = typer.Argument(None, help="user<TAB>item<TAB>rating<TAB>timestamp file"),
    synthetic: bool = typer.Option(False, help="Generate low-rank synthetic ratings instead"),
    users: int = typer.Option(400),
    items: int = typer.Option(200),
    d: int = typer.Option(12),
    density: float = typer.Option(0.3),
    out: Optional[Path] = typer.Option(None, help="Normalized ratings file to write"),
) -> None:
    """Validate a ratings file (or generate one) and write it back in canonical form."""
    from .data import ingest_ratings, synthetic_ratings, write_ratings

    if path is None and not synthetic:
        raise typer.BadParameter("give a ratings file or --synthetic")
    try:
        triples = synthetic_ratings(users, items, d, density, state.seed) if synthetic else ingest_ratings(path)  # type: ignore[arg-type]
    except DecongestError as e:
        _fail(e)
    target = _out_path(out, "data", "ratings.tsv")
    write_ratings(triples, target)
    n_users, n_items = triples.shape
    typer.echo(f"OK — {len(triples)} ratings, {n_users} users, {n_items} items written to {target}")


@app.command()
def factorize(
    ratings: Path = typer.Argument(..., help="Ratings file"),
    d: int = typer.Option(12, help="Item feature dimension"),
    d_prime: Optional[int] = typer.Option(None, help="User feature dimension (default d // 2)"),
    iters: int = typer.Option(500),
    out: Optional[Path] = typer.Option(None, help="Pool JSON (default <output root>/data/pool.json)"),
) -> None:
    """Factorize ratings into item features, preferences and user features."""
    from .data import factorize as run_factorize
    from .data import ingest_ratings

    try:
        pool = run_factorize(ingest_ratings(ratings), d, iters, d_prime, seed=state.seed)
    except DecongestError as e:
        _fail(e)
    path = _out_path(out, "data", "pool.json")
    write_json(path, pool.to_dict())
    typer.echo(f"OK — pool with {pool.X.shape[0]} items, {pool.B.shape[0]} users, d={pool.d}, d'={pool.d_prime} → {path}")


@app.command("make-markets")
def make_markets(
    pool: Path = typer.Argument(..., help="Pool JSON from `factorize`"),
    m: int = typer.Option(20),
    n: int = typer.Option(20),
    markets: int = typer.Option(240, help="Number of markets L"),
    scheme: str = typer.Option("ce_mid", help="Price scheme kind"),
    gamma: float = typer.Option(0.5),
    epsilon: float = typer.Option(0.0),
    weight: float = typer.Option(0.0),
    out: Optional[Path] = typer.Option(None),
) -> None:
    """Sample priced markets from a factorized pool."""
    from .data import FactorizedPool, markets_to_dict, sample_markets

    try:
        price_scheme = PriceScheme(kind=scheme, gamma=gamma, epsilon=epsilon, weight=weight, seed=state.seed)  # type: ignore[arg-type]
        sampled = sample_markets(FactorizedPool.from_dict(read_json(pool)), m, n, markets, price_scheme, state.seed)
    except (DecongestError, ValueError) as e:
        _fail(e)
    path = _out_path(out, "markets", "markets.json")
    write_json(path, markets_to_dict(sampled))
    typer.echo(f"OK — {len(sampled)} markets written to {path}")


@app.command()
def price(
    market: Path = typer.Argument(..., help="Market JSON"),
    which: str = typer.Option("mid", help="mid|buyer|seller|first_stage"),
    write: bool = typer.Option(False, help="Store the prices back into the market file"),
) -> None:
    """Competitive-equilibrium allocation and prices of a market's true values."""
    from .pricing import ce_prices

    try:
        mk = _read_markets(market)[0]
        solution = ce_prices(mk.values(), which)  # type: ignore[arg-type]
    except DecongestError as e:
        _fail(e)
    typer.echo(json.dumps(solution.to_dict(), indent=2))
    if write:
        write_json(market, mk.with_prices(solution.prices).to_dict())


# ---------- models ----------

@app.command("train-predictor")
def train_predictor(
    markets: Path = typer.Argument(..., help="Market list JSON"),
    k: int = typer.Option(6),
    epochs: int = typer.Option(150),
    ipw: bool = typer.Option(False, help="Propensity-weight the loss toward uniform masks"),
    out: Optional[Path] = typer.Option(None),
) -> None:
    """Collect default-policy choice data and fit the bilinear choice predictor."""
    from .baselines import price_pred_mask
    from .data import default_policy, sample_dataset, uniform_mask_dataset
    from .predictor import accuracy, attach_propensity_weights, train

    try:
        mks = _read_markets(markets)
        d = mks[0].d
        default_mask = price_pred_mask(mks[0].item_features, np.mean([mk.prices for mk in mks], axis=0), k)
        policy = default_policy(default_mask, d, k)
        dataset = sample_dataset(mks, policy, k, seed=state.seed)
        if ipw:
            uniform = MaskDistribution(np.zeros(d), 1.0)
            dataset = attach_propensity_weights(dataset, uniform, policy.distribution, seed=state.seed)
        weights = train(dataset, PredictorConfig(epochs=epochs, ipw=ipw, seed=state.seed))
        counterfactual = uniform_mask_dataset(mks, k, seed=state.seed + 1)
    except DecongestError as e:
        _fail(e)
    path = _out_path(out, "models", "predictor.json")
    write_json(path, weights.to_dict())
    write_json(path.with_name(path.stem + "_dataset.json"), dataset.to_dict())
    typer.echo(
        f"OK — predictor → {path}; accuracy {accuracy(weights, dataset):.3f} in-distribution, "
        f"{accuracy(weights, counterfactual):.3f} on uniform masks"
    )


@app.command("learn-mask")
def learn_mask(
    markets: Path = typer.Argument(..., help="Market list JSON"),
    predictor: Path = typer.Argument(..., help="Predictor weights JSON"),
    k: int = typer.Option(6),
    lam: Optional[float] = typer.Option(None, help="Default 1 - k/(2d)"),
    epochs: int = typer.Option(300),
    out: Optional[Path] = typer.Option(None),
) -> None:
    """Fit the mask distribution on the differentiable proxy objective."""
    from .learner import fit, topk_mask

    try:
        weights = PredictorWeights.from_dict(read_json(predictor))
        result = fit(_read_markets(markets), weights, LearnerConfig(k=k, lam=lam, epochs=epochs, seed=state.seed))
    except DecongestError as e:
        _fail(e)
    path = _out_path(out, "models", "mask_learner.json")
    write_json(path, result.to_dict())
    typer.echo(f"OK — learned θ → {path}; top-k mask {topk_mask(result).to_bits()}")


@app.command()
def evaluate(
    markets: Path = typer.Argument(..., help="Market list JSON to evaluate on"),
    fitted: Optional[Path] = typer.Option(None, "--fit", help="Mask learner JSON"),
    mask: Optional[str] = typer.Option(None, help="Explicit mask as a bit string"),
    mode: str = typer.Option("topk", help="topk|committed_sample|policy"),
    samples: Optional[int] = typer.Option(None),
) -> None:
    """True welfare of a deployed mask (or mask policy) on markets."""
    from .learner import FitResult, deploy, mean_welfare

    try:
        mks = _read_markets(markets)
        if mask is not None:
            chosen = _parse_mask(mask, mks[0].d)
            typer.echo(json.dumps({"mask": chosen.to_bits(), "welfare": mean_welfare(chosen, mks)}))
            return
        if fitted is None:
            raise typer.BadParameter("give --fit or --mask")
        report = deploy(FitResult.from_dict(read_json(fitted)), mode, mks, samples=samples, seed=state.seed)  # type: ignore[arg-type]
    except DecongestError as e:
        _fail(e)
    typer.echo(
        json.dumps(
            {"mode": report.mode, "masks": [m.to_bits() for m in report.masks], "welfare": report.mean_welfare},
            indent=2,
        )
    )


@app.command("sweep-masks")
def sweep_masks(
    market: Path = typer.Argument(..., help="Market JSON"),
    k: int = typer.Option(6),
    lam: Optional[float] = typer.Option(None),
    diagnostics: bool = typer.Option(False, help="Also compute distortion and Kendall's W per mask"),
    out: Optional[Path] = typer.Option(None, help="Per-mask CSV"),
) -> None:
    """Enumerate every k-mask and report each objective's argmax."""
    from .oracle import ALL_KINDS, sweep

    try:
        mk = _read_markets(market)[0]
        extra = ("distortion", "kendalls_w") if diagnostics else ()
        result = sweep(mk, k, ALL_KINDS, lam=lam, diagnostics=extra, jobs=state.jobs)
    except DecongestError as e:
        _fail(e)
    path = _out_path(out, "sweeps", f"sweep_k{k}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    result.to_frame().to_csv(path, index=False, float_format="%.12g")
    for kind in ALL_KINDS:
        mean, lo, hi, ties = result.welfare_at(kind)
        typer.echo(f"{kind.value:<18} welfare {mean:.4f} (min {lo:.4f}, max {hi:.4f}, ties {ties})")
    typer.echo(f"OK — {len(result)} masks → {path}")


# ---------- theory ----------

@app.command("theory-check")
def theory_check(
    kind: str = typer.Argument("conditions", help="conditions|monotone|theorem1"),
    instances: int = typer.Option(500),
    out: Optional[Path] = typer.Option(None, help="Per-instance CSV"),
) -> None:
    """Randomized soundness sweeps; exits non-zero on any counterexample."""
    import pandas as pd

    from .theory import (
        condition_counterexamples,
        condition_sweep,
        monotonicity_sweep,
        random_theorem1_pair,
        theorem1_check,
    )
    from .utils import task_rng

    if kind == "conditions":
        frame = condition_sweep(instances, state.seed, jobs=state.jobs)
        bad = len(condition_counterexamples(frame))
    elif kind == "monotone":
        frame = monotonicity_sweep(instances, state.seed)
        bad = int((frame["prop1"] & ~frame["monotone"]).sum())
    elif kind == "theorem1":
        rows = []
        for i in range(instances):
            a, b, values = random_theorem1_pair(task_rng(state.seed, "theorem1", i))
            rows.append({"instance": i, **theorem1_check(a, b, values).to_dict()})
        frame = pd.DataFrame(rows)
        bad = int((~frame["holds"] | (frame["strict_expected"] & ~frame["strict"])).sum())
    else:
        raise typer.BadParameter("kind must be one of: conditions|monotone|theorem1")

    path = _out_path(out, "theory", f"{kind}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.12g")
    typer.echo(f"{kind}: {len(frame)} instances, {bad} counterexamples → {path}")
    if bad:
        raise typer.Exit(code=1)


# ---------- experiments ----------

@app.command()
def experiment(
    experiment_id: str = typer.Argument(..., metavar="ID", help="fig3|fig4|prices|lambda"),
    config: Optional[Path] = typer.Option(None, help="TOML config; missing keys use the experiment defaults"),
    out: Optional[Path] = typer.Option(None, help="Output directory"),
) -> None:
    """Run one experiment and write its CSV tables plus provenance JSON."""
    from .experiments import RUNNERS, run_experiment

    if experiment_id not in RUNNERS:
        raise typer.BadParameter(f"experiment must be one of: {'|'.join(RUNNERS)}")
    try:
        cfg = load_experiment_config(config) if config else ExperimentConfig.for_experiment(experiment_id)  # type: ignore[arg-type]
        if cfg.experiment != experiment_id:
            raise typer.BadParameter(f"config is for {cfg.experiment}, not {experiment_id}")
        # a config file keeps its own seed unless --seed is given
        if config is None or state.seed_given:
            cfg = cfg.model_copy(update={"seed": state.seed})
        table = run_experiment(cfg, jobs=state.jobs)
    except DecongestError as e:
        _fail(e)
    out_dir = out or cfg.output_dir or get_settings().DECONGEST_OUTPUT_ROOT / experiment_id
    path = table.write(out_dir)
    typer.echo(f"OK — {len(table)} rows → {path}")


@app.command()
def verify(
    table: Path = typer.Argument(..., help="Result CSV written by `experiment`"),
    rows: int = typer.Option(1, help="Rows to re-derive"),
) -> None:
    """Recompute sampled rows from the table's provenance and compare."""
    from .experiments import verify as verify_table

    try:
        checks = verify_table(table, rows, state.seed)
    except DecongestError as e:
        _fail(e)
    for c in checks:
        status = "OK " if c.ok else "BAD"
        typer.echo(f"[{status}] row {c.index} {c.method}: stored {c.stored:.10g}, recomputed {c.recomputed:.10g}")
    if not all(c.ok for c in checks):
        raise typer.Exit(code=1)


if __name__ == "__main__":
    app()
