import numpy as np
import pytest

from fairsynth.estimation import IndependenceGivenOverlap, IndependentModel, MarginalPreservation
from fairsynth.latent import LatentNaiveBayes
from fairsynth.sampling import sample, sample_to_csv
from fairsynth.schema import DataTable, read_table
from fairsynth.tables import encode

from conftest import make_schema, random_table


def empirical_tvd(model, table):
    joint = model.dense_joint().ravel()
    keys = encode(table.columns(model.attrs_), model.cards_)
    freq = np.bincount(keys, minlength=joint.size) / table.n_rows
    return 0.5 * np.abs(freq - joint).sum()


def four_binary_models(smoothing=True):
    rng = np.random.default_rng(42)
    schema = make_schema([2, 2, 2, 2])
    full = random_table(schema, schema.names, 500, rng)
    internal, external = full.select(["x1", "x2", "x3"]), full.select(["x3", "x4"])
    weights = rng.dirichlet(np.ones(3))
    conds = {a: rng.dirichlet(np.ones(2), size=3) for a in schema.names}
    models = {
        "indep_overlap": IndependenceGivenOverlap(smoothing=smoothing).fit(internal, external),
        "marginal_internal": MarginalPreservation("internal", smoothing).fit(internal, external),
        "marginal_external": MarginalPreservation("external", smoothing).fit(internal, external),
        "latent_nb": LatentNaiveBayes.from_params(schema, schema.names, weights, conds),
        "independent": IndependentModel().fit(internal, external),
    }
    return models


@pytest.mark.parametrize("name", ["indep_overlap", "marginal_internal", "marginal_external",
                                  "latent_nb", "independent"])
def test_sampled_joint_converges(name):
    model = four_binary_models()[name]
    assert empirical_tvd(model, sample(model, 200_000, 0)) < 0.01


def test_tvd_shrinks_with_n():
    model = four_binary_models()["indep_overlap"]
    small = np.mean([empirical_tvd(model, sample(model, 1_000, s)) for s in range(5)])
    large = np.mean([empirical_tvd(model, sample(model, 100_000, s)) for s in range(5)])
    assert large < small


def test_deterministic():
    for model in four_binary_models().values():
        assert sample(model, 1000, 9).equals(sample(model, 1000, 9))
        assert not sample(model, 1000, 9).equals(sample(model, 1000, 10))


def test_degenerate_marginal():
    schema = make_schema([2, 3])
    t = DataTable(schema, ["x1", "x2"], [[0, 1], [0, 2]])
    model = IndependentModel().fit(t.select(["x1"]), t)
    assert (sample(model, 500, 0).column("x1") == 0).all()


def test_no_zero_probability_cells_without_smoothing():
    for name, model in four_binary_models(smoothing=False).items():
        s = sample(model, 20_000, 1)
        probs = model.proba(s.codes, s.attrs)
        assert (probs > 0).all(), name


def test_invalid_n():
    model = four_binary_models()["independent"]
    with pytest.raises(ValueError):
        sample(model, 0, 0)


def test_sample_to_csv(tmp_path):
    model = four_binary_models()["marginal_internal"]
    t = sample_to_csv(model, 100, 3, tmp_path / "s.csv")
    assert read_table(tmp_path / "s.csv", model.schema_).equals(t)
