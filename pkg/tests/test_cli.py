import json

import pandas as pd
from typer.testing import CliRunner

from decongest.cli import app
from decongest.models import Market

runner = CliRunner()


def _invoke(*args: str):
    result = runner.invoke(app, list(args))
    assert result.exit_code == 0, result.output
    return result


def test_print_config_schema():
    result = _invoke("--print-config-schema")
    assert "k_values" in result.output


def test_market_commands(tmp_path):
    market_path = tmp_path / "market.json"
    _invoke("--seed", "3", "gen-synthetic", "--n", "4", "--m", "4", "--d", "6", "--out", str(market_path))
    market = Market.from_dict(json.loads(market_path.read_text()))
    assert (market.n, market.m, market.d) == (4, 4, 6)

    assert '"prices"' in _invoke("price", str(market_path), "--which", "seller").output

    sweep_path = tmp_path / "sweep.csv"
    result = _invoke("sweep-masks", str(market_path), "--k", "2", "--out", str(sweep_path))
    assert "welfare_oracle" in result.output
    assert len(pd.read_csv(sweep_path)) == 15

    assert "welfare" in _invoke("evaluate", str(market_path), "--mask", "110000").output
    bad = runner.invoke(app, ["evaluate", str(market_path), "--mask", "11"])
    assert bad.exit_code == 2
    stray = runner.invoke(app, ["evaluate", str(market_path), "--mask", "1x0000"])
    assert stray.exit_code == 2


def test_gen_synthetic_reports_invalid_arguments(tmp_path):
    result = runner.invoke(app, ["gen-synthetic", "--alpha", "2.0", "--out", str(tmp_path / "m.json")])
    assert result.exit_code == 1
    assert not (tmp_path / "m.json").exists()


def test_learning_pipeline(tmp_path):
    ratings = tmp_path / "ratings.tsv"
    pool = tmp_path / "pool.json"
    markets = tmp_path / "markets.json"
    predictor = tmp_path / "predictor.json"
    fitted = tmp_path / "fit.json"

    _invoke("ingest-ratings", "--synthetic", "--users", "20", "--items", "10", "--d", "3", "--out", str(ratings))
    _invoke("ingest-ratings", str(ratings), "--out", str(tmp_path / "again.tsv"))
    _invoke("factorize", str(ratings), "--d", "3", "--iters", "50", "--out", str(pool))
    _invoke("make-markets", str(pool), "--m", "5", "--n", "5", "--markets", "6", "--out", str(markets))
    _invoke("train-predictor", str(markets), "--k", "2", "--epochs", "2", "--out", str(predictor))
    assert (tmp_path / "predictor_dataset.json").exists()
    result = _invoke("learn-mask", str(markets), str(predictor), "--k", "2", "--epochs", "2", "--out", str(fitted))
    assert "top-k mask" in result.output

    report = _invoke("evaluate", str(markets), "--fit", str(fitted), "--mode", "policy", "--samples", "3")
    assert '"mode": "policy"' in report.output


def test_ingest_ratings_needs_a_source():
    assert runner.invoke(app, ["ingest-ratings"]).exit_code == 2


def test_theory_checks(tmp_path):
    result = _invoke("theory-check", "monotone", "--instances", "50", "--out", str(tmp_path / "mono.csv"))
    assert "0 counterexamples" in result.output
    _invoke("theory-check", "theorem1", "--instances", "30", "--out", str(tmp_path / "t1.csv"))
    assert len(pd.read_csv(tmp_path / "t1.csv")) == 30
    assert runner.invoke(app, ["theory-check", "bogus"]).exit_code == 2


def test_experiment_and_verify(tmp_path):
    config = tmp_path / "fig3.toml"
    config.write_text(
        'experiment = "fig3"\n'
        "n = 4\nm = 4\nd = 6\nk_values = [2]\ninstances = 1\n"
        "alpha_grid = [0.0]\nrho_grid = [1.0]\nseed = 5\n"
    )
    out = tmp_path / "out"
    _invoke("experiment", "fig3", "--config", str(config), "--out", str(out))
    table = out / "fig3.csv"
    frame = pd.read_csv(table)
    assert (frame["master_seed"] == 5).all()
    assert "[OK ]" in _invoke("verify", str(table), "--rows", "3").output

    mismatch = runner.invoke(app, ["experiment", "fig4", "--config", str(config)])
    assert mismatch.exit_code == 2
    assert runner.invoke(app, ["experiment", "fig9"]).exit_code == 2
