import math

import numpy as np
import pytest

from crowdconsensus.aggregation import (
    EMConfig,
    ModelParams,
    _m_step,
    compute_consensus,
    fit_dawid_skene,
    fit_multinomial,
    hard_labels,
    log_objective,
    majority_vote,
    posterior,
)
from crowdconsensus.core import make_view
from crowdconsensus.errors import DegenerateModel, NoAnnotations, NonFiniteObjective

from conftest import random_view
from oracles import brute_force_log_likelihood, brute_force_posterior, confusion_lookup, random_stochastic

BETA = 0.01


def view_of(labels_by_task, classes=("a", "b"), workers=None):
    """``labels_by_task[i]`` is a list of (worker index, class index)."""
    triples = [(i, w, k) for i, anns in enumerate(labels_by_task) for w, k in anns]
    W = workers or (max((w for _, w, _ in triples), default=0) + 1)
    return make_view("q", classes, [f"t{i}" for i in range(len(labels_by_task))],
                     [f"w{w}" for w in range(W)], triples)


@pytest.mark.parametrize("row, expected", [((0.2, 0.8), 1), ((0.5, 0.5), 0), ((0.3, 0.3, 0.4), 2)])
def test_hard_labels(row, expected):
    assert hard_labels([row])[0] == expected


def test_majority_vote_single():
    res = majority_vote(view_of([[(0, 0)]]))
    assert res.probs.tolist() == [[1.0, 0.0]] and res.hard_labels.tolist() == [0]


def test_majority_vote_counts():
    res = majority_vote(view_of([[(0, 0), (1, 0), (2, 1)]]))
    np.testing.assert_allclose(res.probs[0], [2 / 3, 1 / 3], rtol=0, atol=1e-15)
    assert res.hard_labels[0] == 0


def test_majority_vote_tie_and_unannotated():
    res = majority_vote(view_of([[(0, 0), (1, 1)], []]))
    assert res.probs.tolist() == [[0.5, 0.5], [0.5, 0.5]]
    assert res.hard_labels.tolist() == [0, 0]
    assert res.diagnostics.unannotated_task_count == 1
    assert res.annotated.tolist() == [True, False]


def test_log_objective_empty_tasks():
    v = make_view("q", ("a", "b"), ("t1", "t2"), ("w",), [])
    p = ModelParams(("a", "b"), np.array([0.3, 0.7]), np.array([[0.9, 0.1], [0.2, 0.8]]))
    assert log_objective(v, p, 0.0) == 0.0


def test_log_objective_hand_value():
    v = view_of([[(0, 1)]])
    p = ModelParams(("a", "b"), np.array([0.5, 0.5]), np.eye(2))
    assert log_objective(v, p, 0.0) == pytest.approx(math.log(0.5), abs=1e-12)
    assert log_objective(v, p, 0.0) == pytest.approx(-0.693147, abs=1e-6)


def test_log_objective_rejects_zero_parameter_with_smoothing():
    v = view_of([[(0, 1)]])
    p = ModelParams(("a", "b"), np.array([0.5, 0.5]), np.eye(2))
    with pytest.raises(NonFiniteObjective):
        log_objective(v, p, 0.01)


def test_log_objective_class_relabeling(rng):
    for _ in range(20):
        v = random_view(rng)
        K = v.n_classes
        tau = rng.dirichlet(np.ones(K))
        conf = {w: random_stochastic(rng, K) for w in v.worker_ids}
        perm = rng.permutation(K)
        inv = np.argsort(perm)
        v2 = make_view("q", [v.classes[k] for k in perm], v.task_ids, v.worker_ids,
                       zip(v.task_idx, v.worker_idx, inv[v.label_idx]))
        p1 = ModelParams(v.classes, tau, conf)
        p2 = ModelParams(v2.classes, tau[perm], {w: m[np.ix_(perm, perm)] for w, m in conf.items()})
        assert log_objective(v, p1, BETA) == pytest.approx(log_objective(v2, p2, BETA), abs=1e-10)


def test_log_objective_matches_brute_force(rng):
    for _ in range(50):
        v = random_view(rng)
        K = v.n_classes
        p = ModelParams(v.classes, rng.dirichlet(np.ones(K)), random_stochastic(rng, K))
        prior = BETA * (np.log(p.tau).sum() + np.log(p.confusion).sum())
        expected = brute_force_log_likelihood(v, p.tau, confusion_lookup(p)) + prior
        assert log_objective(v, p, BETA) == pytest.approx(expected, abs=1e-10)


def test_multinomial_unanimous():
    v = view_of([[(0, 0)], [(0, 0)], [(0, 0)]])
    res = fit_multinomial(v)
    assert res.hard_labels.tolist() == [0, 0, 0]


def test_m_step_hand_trace():
    # one M-step from one-hot posteriors on three unanimous tasks
    v = view_of([[(0, 0)], [(0, 0)], [(0, 0)]])
    q = np.array([[1.0, 0.0]] * 3)
    p = _m_step(v, q, BETA, per_worker=False)
    assert p.tau[0] == pytest.approx((3 + BETA) / (3 + 2 * BETA), abs=1e-15)
    assert p.confusion[0, 0] == pytest.approx((3 + BETA) / (3 + 2 * BETA), abs=1e-15)
    assert p.confusion[1].tolist() == [0.5, 0.5]


def test_m_step_empty_class_prevalence():
    v = view_of([[(0, 0)], [(0, 1)], [(0, 0)]], classes=("a", "b", "c"))
    q = np.eye(3)[[0, 1, 0]]
    p = _m_step(v, q, BETA, per_worker=False)
    assert p.tau[2] == pytest.approx(BETA / (3 + 3 * BETA), abs=1e-15)
    res = fit_multinomial(v)
    assert res.params.tau[2] > 0


def test_multinomial_matches_brute_force_posterior():
    v = view_of([[(0, 0), (1, 1)], [(0, 1), (1, 1)]])
    res = fit_multinomial(v)
    expected = brute_force_posterior(v, res.params.tau, confusion_lookup(res.params))
    np.testing.assert_allclose(res.probs, expected, rtol=0, atol=1e-9)


def test_dawid_skene_perfect_agreement():
    truth = [0, 1, 1, 0, 1, 0]
    v = view_of([[(w, z) for w in range(3)] for z in truth])
    res = fit_dawid_skene(v)
    assert res.hard_labels.tolist() == truth
    for m in res.params.confusion.values():
        assert all(m[k, k] > m[k, l] for k in range(2) for l in range(2) if l != k)


def test_dawid_skene_adversarial_instance():
    # every worker contradicts the others somewhere
    v = view_of([[(0, 0), (1, 1), (2, 0)], [(0, 1), (1, 0), (2, 0)], [(0, 0), (1, 1), (2, 1)]])
    res = fit_dawid_skene(v)
    expected = brute_force_posterior(v, res.params.tau, confusion_lookup(res.params))
    np.testing.assert_allclose(res.probs, expected, rtol=0, atol=1e-9)
    assert np.all(np.diff(res.diagnostics.objective_trace) >= -1e-9)


def test_dawid_skene_single_worker_one_iteration():
    v = view_of([[(0, 0)], [(0, 1)], [(0, 0)]])
    res = fit_dawid_skene(v, EMConfig(max_iter=1))
    assert res.hard_labels.tolist() == [0, 1, 0]


def test_errors():
    with pytest.raises(DegenerateModel):
        fit_multinomial(view_of([[(0, 0)]], classes=("a",)))
    with pytest.raises(NoAnnotations):
        fit_dawid_skene(view_of([[], []]))


def test_unannotated_task_gets_prevalence():
    v = view_of([[(0, 0), (1, 0)], [(0, 1), (1, 1)], []])
    for fit in (fit_multinomial, fit_dawid_skene):
        res = fit(v)
        np.testing.assert_allclose(res.probs[2], res.params.tau, rtol=0, atol=1e-15)
        assert res.diagnostics.unannotated_task_count == 1


def test_dawid_skene_omits_idle_workers():
    v = view_of([[(0, 0), (1, 0)], [(0, 1), (1, 1)]], workers=4)
    assert set(fit_dawid_skene(v).params.confusion) == {"w0", "w1"}


@pytest.mark.parametrize("pooled", [True, False])
def test_posterior_oracle_random_params(rng, pooled):
    for _ in range(100):
        v = random_view(rng)
        K = v.n_classes
        tau = rng.dirichlet(np.ones(K))
        conf = random_stochastic(rng, K) if pooled else {w: random_stochastic(rng, K) for w in v.worker_ids}
        p = ModelParams(v.classes, tau, conf)
        q, _ = posterior(v, p)
        np.testing.assert_allclose(q, brute_force_posterior(v, tau, confusion_lookup(p)), rtol=0, atol=1e-9)


@pytest.mark.parametrize("model", ["mm", "ds"])
def test_em_monotone(model):
    for seed in range(30):
        v = random_view(np.random.default_rng(seed), max_tasks=8, max_workers=4, max_classes=4)
        trace = compute_consensus(v, model).diagnostics.objective_trace
        assert np.all(np.diff(trace) >= -1e-9), seed


@pytest.mark.parametrize("model", ["mv", "mm", "ds"])
def test_rows_normalized_and_deterministic(model):
    for seed in range(20):
        v = random_view(np.random.default_rng(seed), max_tasks=6)
        a, b = compute_consensus(v, model), compute_consensus(v, model)
        np.testing.assert_allclose(a.probs.sum(axis=1), 1.0, rtol=0, atol=1e-9)
        assert np.all(a.probs >= 0)
        assert a.probs.tobytes() == b.probs.tobytes()
        assert a.diagnostics == b.diagnostics


@pytest.mark.parametrize("model", ["mv", "mm", "ds"])
def test_label_permutation_equivariance(model):
    for seed in range(20):
        rng = np.random.default_rng(seed)
        v = random_view(rng, max_tasks=6)
        K = v.n_classes
        perm = rng.permutation(K)  # new class j is old class perm[j]
        inv = np.argsort(perm)
        v2 = make_view("q", [v.classes[k] for k in perm], v.task_ids, v.worker_ids,
                       zip(v.task_idx, v.worker_idx, inv[v.label_idx]))
        r1, r2 = compute_consensus(v, model), compute_consensus(v2, model)
        np.testing.assert_allclose(r2.probs, r1.probs[:, perm], rtol=0, atol=1e-9)
        if r1.params is not None:
            np.testing.assert_allclose(r2.params.tau, r1.params.tau[perm], atol=1e-9)
            for m1, m2 in zip(r1.params.matrices(), r2.params.matrices()):
                np.testing.assert_allclose(m2, m1[np.ix_(perm, perm)], atol=1e-9)
        # argmax equivariance, comparing only rows without near-ties
        top = np.sort(r1.probs, axis=1)
        clear = top[:, -1] - top[:, -2] > 1e-6
        assert np.array_equal(perm[r2.hard_labels[clear]], r1.hard_labels[clear])


@pytest.mark.parametrize("model", ["mv", "mm", "ds"])
def test_perfect_crowd_recovery_identifiable_shapes(model):
    # every task answered by at least three workers
    for seed in range(100):
        rng = np.random.default_rng(seed)
        K = int(rng.integers(2, 5))
        t = int(rng.integers(1, 30))
        W = int(rng.integers(3, 7))
        z = rng.integers(0, K, size=t)
        triples = [(i, int(w), int(z[i])) for i in range(t)
                   for w in rng.choice(W, size=int(rng.integers(3, W + 1)), replace=False)]
        v = make_view("q", [f"c{k}" for k in range(K)], [f"t{i}" for i in range(t)],
                      [f"w{w}" for w in range(W)], triples)
        assert compute_consensus(v, model).hard_labels.tolist() == z.tolist(), seed


def test_warm_start_from_params():
    v = view_of([[(0, 0), (1, 0)], [(0, 1), (1, 1)]])
    init = ModelParams(("a", "b"), np.array([0.5, 0.5]), np.array([[0.9, 0.1], [0.1, 0.9]]))
    res = fit_multinomial(v, EMConfig(init=init))
    assert res.hard_labels.tolist() == [0, 1]
    assert res.diagnostics.converged
