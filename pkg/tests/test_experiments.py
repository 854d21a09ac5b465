import numpy as np
import pandas as pd
import pytest

from decongest import RESULT_HEADER
from decongest.config import DataSpec, ExperimentConfig, LearnerConfig, PredictorConfig
from decongest.errors import DataError
from decongest.experiments import run_experiment
from decongest.experiments.learning import run_fig4, run_lambda_sweep, run_price_robustness
from decongest.experiments.results import (
    ResultTable,
    normalize,
    read_provenance,
    read_table,
    summarize,
)
from decongest.experiments.synthetic import oracle_dominates, run_fig3
from decongest.experiments.verify import verify
from decongest.models import ResultRow
from decongest.oracle import ALL_KINDS

LEARNING_METHODS = {"dbr_topk", "dbr_committed", "dbr_policy", "price_pred", "choice_pred", "random", "oracle"}


def _fig3_config(**overrides) -> ExperimentConfig:
    base = dict(
        experiment="fig3",
        n=4,
        m=4,
        d=6,
        k_values=[2],
        instances=2,
        alpha_grid=[0.0, 1.0],
        rho_grid=[1.0, 0.5],
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def _learning_config(experiment: str = "fig4", **overrides) -> ExperimentConfig:
    base = dict(
        experiment=experiment,
        data=DataSpec(kind="synthetic_ratings", synthetic_users=60, synthetic_items=40, synthetic_density=0.5, nmf_iters=50),
        n=5,
        m=5,
        d=4,
        k_values=[2],
        markets=12,
        sample_sets=1,
        folds=3,
        splits=1,
        random_draws=5,
        committed_draws=3,
        policy_draws=3,
        gamma_grid=[0.5],
        epsilon_grid=[0.0],
        lambda_grid=[0.25],
        predictor=PredictorConfig(epochs=3),
        learner=LearnerConfig(k=2, epochs=3, n_masks=4, eval_draws=4),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# --------------------------- Result tables ---------------------------

def test_result_table_stamps_provenance(tmp_path):
    config = _fig3_config()
    table = ResultTable.for_config(config)
    table.add(ResultRow(experiment="fig3", method="welfare_oracle", k=2, welfare=1.0, mask="110000", runtime=3.0))
    row = table.rows[0]
    assert row.master_seed == config.seed and row.config_hash == table.config_hash
    assert row.runtime is None

    path = table.write(tmp_path)
    frame = read_table(path)
    assert list(frame.columns) == RESULT_HEADER
    assert frame.loc[0, "mask"] == "110000"
    provenance = read_provenance(path)
    assert provenance["rows"] == 1 and provenance["config_hash"] == table.config_hash


def test_read_table_rejects_foreign_csv(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        read_table(path)
    with pytest.raises(DataError):
        read_provenance(path)


def test_summarize_and_normalize():
    frame = pd.DataFrame(
        {
            "method": ["random", "random", "oracle", "oracle", "dbr_topk", "dbr_topk"],
            "k": [2] * 6,
            "welfare": [0.9, 1.1, 2.9, 3.1, 1.8, 2.2],
        }
    )
    summary = summarize(frame)
    assert set(summary.columns) >= {"method", "k", "mean", "count", "se95"}
    ours = normalize(summary).set_index("method")
    assert ours.loc["dbr_topk", "mean"] == pytest.approx(2.0)
    assert ours.loc["dbr_topk", "count"] == 2
    assert ours.loc["dbr_topk", "relative_to_random"] == pytest.approx(2.0)
    assert ours.loc["dbr_topk", "normalized"] == pytest.approx(0.5)
    assert ours.loc["random", "normalized"] == pytest.approx(0.0)
    assert ours.loc["oracle", "normalized"] == pytest.approx(1.0)
    assert ours.loc["random", "se95"] == pytest.approx(1.96 * np.std([0.9, 1.1], ddof=1) / np.sqrt(2))


# --------------------------- Enumeration study ---------------------------

def test_fig3_rows_and_extras(tmp_path):
    config = _fig3_config()
    table = run_fig3(config)
    frame = table.to_frame()
    assert len(frame) == 2 * 2 * len(ALL_KINDS)
    assert set(frame["method"]) == {kind.value for kind in ALL_KINDS}
    assert oracle_dominates(frame)
    assert oracle_dominates(table.extras["dispersion"])
    assert len(table.extras["dispersion"]) == 2 * 2 * len(ALL_KINDS)
    assert len(table.extras["per_mask"]) == 2 * 15
    assert set(table.extras["correlations"]["instance"]) == {0, 1}
    assert (frame["welfare_min"] <= frame["welfare"] + 1e-12).all()
    assert (frame["welfare"] <= frame["welfare_max"] + 1e-12).all()


def test_fig3_tables_are_byte_identical_and_verifiable(tmp_path):
    config = _fig3_config()
    first = run_experiment(config).write(tmp_path / "a")
    second = run_experiment(config).write(tmp_path / "b")
    assert first.read_bytes() == second.read_bytes()
    assert (tmp_path / "a" / "fig3_per_mask.csv").read_bytes() == (tmp_path / "b" / "fig3_per_mask.csv").read_bytes()

    checks = verify(first, rows=10, seed=1)
    assert len(checks) == 10
    assert all(c.ok for c in checks)


def test_fig3_oracle_beats_proxy_objectives_on_average():
    frame = run_fig3(_fig3_config(alpha_grid=[0.2], instances=3), per_mask=False).to_frame()
    means = frame.groupby("method")["welfare"].mean()
    for kind in ALL_KINDS:
        assert means["welfare_oracle"] >= means[kind.value] - 1e-12


def test_oracle_dominance_detects_violations():
    frame = pd.DataFrame(
        {
            "k": [2, 2],
            "alpha": [0.0, 0.0],
            "rho": [None, None],
            "seed": [0, 0],
            "method": ["welfare_oracle", "proxy"],
            "welfare": [1.0, 1.5],
        }
    )
    assert not oracle_dominates(frame)


# --------------------------- Learning study ---------------------------

def test_fig4_rows_verify_and_repeat(tmp_path):
    config = _learning_config()
    table = run_fig4(config)
    frame = table.to_frame()
    assert set(frame["method"]) == LEARNING_METHODS
    assert len(frame) == len(LEARNING_METHODS)
    assert {"summary", "predictor"} <= set(table.extras)
    predictor = table.extras["predictor"]
    assert predictor["train_accuracy"].between(0.0, 1.0).all()

    by_method = frame.set_index("method")["welfare"]
    for method in LEARNING_METHODS - {"oracle"}:
        assert by_method["oracle"] >= by_method[method] - 1e-9

    path = table.write(tmp_path / "a")
    checks = verify(path, rows=5)
    assert len(checks) == 5 and all(c.ok for c in checks)

    again = run_fig4(config).write(tmp_path / "b")
    assert path.read_bytes() == again.read_bytes()


def test_noise_free_price_points_match_the_default_run():
    base = run_fig4(_learning_config()).to_frame()
    prices = run_price_robustness(_learning_config("prices")).to_frame()
    assert len(prices) == 2 * len(LEARNING_METHODS)

    for column, value in (("gamma", 0.5), ("epsilon", 0.0)):
        point = prices[prices[column] == value]
        np.testing.assert_allclose(point["welfare"].to_numpy(), base["welfare"].to_numpy(), rtol=0, atol=1e-12)
        assert list(point["mask"].fillna("")) == list(base["mask"].fillna(""))


def test_lambda_sweep_adds_the_default_lambda():
    frame = run_lambda_sweep(_learning_config("lambda")).to_frame()
    learned = frame[frame["method"] == "dbr_topk"]
    assert sorted(learned["lam"]) == pytest.approx([0.25, 1.0 - 2 / (2 * 4)])


def test_verify_needs_provenance(tmp_path):
    table = run_fig3(_fig3_config(instances=1, alpha_grid=[0.0]), per_mask=False)
    path = table.write(tmp_path)
    path.with_suffix(".provenance.json").unlink()
    with pytest.raises(DataError):
        verify(path)


def test_verify_rejects_malformed_mask_cells(tmp_path):
    table = run_fig3(_fig3_config(instances=1, alpha_grid=[0.0]), per_mask=False)
    path = table.write(tmp_path)
    frame = pd.read_csv(path, dtype={"mask": str})
    frame["mask"] = frame["mask"].str.replace("0", "x", n=1)
    frame.to_csv(path, index=False)
    with pytest.raises(DataError, match="malformed mask"):
        verify(path, rows=3)
