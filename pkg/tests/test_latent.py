import numpy as np
import pytest

from fairsynth.latent import LatentNaiveBayes, fit_latent_nb
from fairsynth.schema import DataTable
from fairsynth.tables import decode

from conftest import counts, make_schema, random_table


@pytest.fixture(scope="module")
def pair():
    # few attributes and many rows, so rows repeat and the de-duplication
    # weights matter
    rng = np.random.default_rng(3)
    schema = make_schema([3, 2, 3, 2, 2])
    full = random_table(schema, schema.names, 3000, rng, concentration=0.3)
    return schema, full.select(["x1", "x2", "x3"]), full.select(["x3", "x4", "x5"])


def test_trace_is_monotone(pair):
    schema, internal, external = pair
    model = LatentNaiveBayes(n_components=6, n_restarts=3, tol=1e-10).fit(internal, external)
    for trace in model.traces_:
        assert np.all(np.diff(trace) >= -1e-9)
        assert len(trace) >= 2


def test_trace_ends_at_data_log_likelihood(pair):
    schema, internal, external = pair
    model, state = fit_latent_nb(internal, external, k=4, n_restarts=2)
    total = model.log_likelihood(internal) + model.log_likelihood(external)
    assert abs(state.trace[-1] - total) < 1e-6
    assert state.log_likelihood == state.trace[-1]


def test_converged_parameters_are_an_m_step_fixed_point(pair):
    # one hand-written M-step over the raw (not de-duplicated) rows, fed the
    # final responsibilities, must give back the fitted parameters
    schema, internal, external = pair
    model = LatentNaiveBayes(n_components=4, n_restarts=1, tol=1e-13, max_iter=5000).fit(
        internal, external, ["x3"])
    q1, q2 = model.state_.q1, model.state_.q2
    n = internal.n_rows + external.n_rows
    np.testing.assert_allclose(model.weights_, (q1.sum(0) + q2.sum(0)) / n, atol=1e-6)
    for a in schema.names:
        acc = np.zeros((4, schema[a].cardinality))
        for t, q in ((internal, q1), (external, q2)):
            if a in t.attrs:
                col = t.column(a)
                for m in range(schema[a].cardinality):
                    acc[:, m] += q[col == m].sum(axis=0)
        np.testing.assert_allclose(model.conditionals_[a], acc / acc.sum(1, keepdims=True),
                                   atol=1e-5, err_msg=a)


def test_responsibilities(pair):
    schema, internal, external = pair
    model = LatentNaiveBayes(n_components=4, n_restarts=1).fit(internal, external)
    q1, q2 = model.state_.q1, model.state_.q2
    assert q1.shape == (internal.n_rows, 4) and q2.shape == (external.n_rows, 4)
    np.testing.assert_allclose(q1.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(q2.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(model.weights_.sum(), 1.0, atol=1e-12)
    for c in model.conditionals_.values():
        np.testing.assert_allclose(c.sum(axis=1), 1.0, atol=1e-9)


def test_single_component_is_pooled_independence(pair):
    schema, internal, external = pair
    model = LatentNaiveBayes(n_components=1, n_restarts=1).fit(internal, external, ["x3"])
    for a in schema.names:
        c = np.zeros(schema[a].cardinality)
        for t in (internal, external):
            if a in t.attrs:
                for (v,), n in counts(t, [a]).items():
                    c[v] += n
        np.testing.assert_allclose(model.conditionals_[a][0], c / c.sum(), atol=1e-12)
    assert model.weights_.tolist() == [1.0]


def test_recovers_known_mixture():
    rng = np.random.default_rng(0)
    schema = make_schema([3] * 6)
    k = 2
    weights = np.array([0.35, 0.65])
    conds = {a: np.array([[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]]) if i % 2 == 0
             else np.array([[0.15, 0.8, 0.05], [0.5, 0.1, 0.4]])
             for i, a in enumerate(schema.names)}
    truth = LatentNaiveBayes.from_params(schema, schema.names, weights, conds)
    full = truth.sample(50_000, 1)
    internal = full.select(["x1", "x2", "x3", "x4"])
    external = full.select(["x4", "x5", "x6"])
    fitted = LatentNaiveBayes(n_components=k, n_restarts=5, tol=1e-9).fit(internal, external)
    tvd = 0.5 * np.abs(fitted.dense_joint() - truth.dense_joint()).sum()
    assert tvd < 0.02


def test_seeded_and_restart_selection(pair):
    schema, internal, external = pair
    a = LatentNaiveBayes(n_components=3, n_restarts=3, random_state=5).fit(internal, external)
    b = LatentNaiveBayes(n_components=3, n_restarts=3, random_state=5).fit(internal, external)
    assert a.trace_ == b.trace_
    assert a.trace_[-1] == max(t[-1] for t in a.traces_)


def test_too_many_components_warns():
    schema = make_schema([2, 2, 2])
    internal = DataTable(schema, ["x1", "x2"], [[0, 0], [1, 1]])
    external = DataTable(schema, ["x2", "x3"], [[0, 1]])
    with pytest.warns(RuntimeWarning, match="exceeds"):
        LatentNaiveBayes(n_components=5, n_restarts=1).fit(internal, external)


def test_invalid_k():
    schema = make_schema([2, 2])
    t = DataTable(schema, ["x1", "x2"], [[0, 0]])
    with pytest.raises(ValueError):
        LatentNaiveBayes(n_components=0).fit(t, t)


def test_from_params_cells():
    schema = make_schema([2, 3])
    model = LatentNaiveBayes.from_params(
        schema, schema.names, [1.0], {"x1": [[0.25, 0.75]], "x2": [[0.5, 0.25, 0.25]]})
    cells = decode(np.arange(6), [2, 3])
    expected = [0.25 * 0.5, 0.25 * 0.25, 0.25 * 0.25, 0.75 * 0.5, 0.75 * 0.25, 0.75 * 0.25]
    np.testing.assert_allclose(model.proba(cells), expected, atol=1e-15)
    assert model.attrs_ == ("x1", "x2")
