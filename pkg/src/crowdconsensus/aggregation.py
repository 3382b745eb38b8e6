"""Consensus models: Majority Vote, pooled Multinomial and Dawid-Skene.

Both probabilistic models are fit by MAP-EM with symmetric Dirichlet
smoothing ``beta`` on the class prevalence and on every confusion row.
All likelihood products are evaluated in the log domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

from .errors import DegenerateModel, InvalidConfig, NoAnnotations, NonFiniteObjective

MODELS = ("mv", "mm", "ds")


@dataclass(frozen=True)
class EMConfig:
    tol: float = 1e-8
    max_iter: int = 500
    beta: float = 0.01
    # "mv" (add-one smoothed vote frequencies) or a ModelParams warm start
    init: Union[str, "ModelParams"] = "mv"

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidConfig(f"tol must be > 0, got {self.tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise InvalidConfig(f"max_iter must be an integer >= 1, got {self.max_iter}")
        if not self.beta >= 0:
            raise InvalidConfig(f"beta must be >= 0, got {self.beta}")
        if isinstance(self.init, str) and self.init != "mv":
            raise InvalidConfig(f"unknown init rule {self.init!r}")


@dataclass(frozen=True)
class ModelParams:
    """Class prevalence ``tau`` and confusion matrices.

    ``confusion`` is a single K x K array (pooled) or a mapping from worker
    id to K x K array (per worker). Row k, column l is the probability of
    answering l when the true class is k.
    """

    classes: tuple
    tau: np.ndarray
    confusion: Union[np.ndarray, Mapping[str, np.ndarray]]

    @property
    def pooled(self):
        return isinstance(self.confusion, np.ndarray)

    def matrices(self):
        if self.pooled:
            return [self.confusion]
        return list(self.confusion.values())


@dataclass(frozen=True)
class Diagnostics:
    iterations: int
    final_objective: Optional[float]
    converged: bool
    annotated_task_count: int
    unannotated_task_count: int
    objective_trace: tuple = ()


@dataclass(frozen=True)
class ConsensusResult:
    question_id: str
    model_name: str
    task_ids: tuple
    classes: tuple
    probs: np.ndarray
    hard_labels: np.ndarray
    params: Optional[ModelParams]
    diagnostics: Diagnostics
    # False for tasks that received no usable annotation
    annotated: np.ndarray = field(default=None)


def hard_labels(probs):
    """Row-wise argmax; ties go to the smallest class index."""
    return np.argmax(np.asarray(probs), axis=1)


def _check_view(view):
    if view.n_classes < 2:
        raise DegenerateModel(f"question {view.question_id!r} has {view.n_classes} class(es); need at least 2")
    if view.n_annotations == 0:
        raise NoAnnotations(f"question {view.question_id!r} has no usable annotations")


def majority_vote(view):
    counts = view.counts().astype(float)
    n = counts.sum(axis=1)
    annotated = n > 0
    K = view.n_classes
    probs = np.full_like(counts, 1.0 / K)
    probs[annotated] = counts[annotated] / n[annotated, None]
    diag = Diagnostics(0, None, True, int(annotated.sum()), int((~annotated).sum()))
    return ConsensusResult(view.question_id, "mv", view.task_ids, view.classes, probs,
                           hard_labels(probs), None, diag, annotated)


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


class _Layout:
    """Index arrays of a view, computed once per fit."""

    def __init__(self, view):
        K = view.n_classes
        self.view = view
        self.annotated = view.annotated()
        self.used = np.unique(view.worker_idx)
        self.counts = view.counts()[self.annotated].astype(float)
        # flat (task, class) slot of every (annotation, class) pair
        self.tk = (view.task_idx[:, None] * K + np.arange(K)).ravel()
        self.wl = view.worker_idx * K + view.label_idx


def _e_step(lay, log_tau, log_conf):
    """Posteriors and data log-likelihood from log parameters.

    ``log_conf`` is K x K (pooled) or W x K x K indexed by view worker index.
    """
    view = lay.view
    t, K = view.n_tasks, view.n_classes
    if log_conf.ndim == 2:
        # gather rather than counts @ log(pi).T: avoids 0 * -inf on zero entries
        ll = log_conf[:, view.label_idx].T
    else:
        ll = log_conf[view.worker_idx, :, view.label_idx]
    log_s = np.bincount(lay.tk, weights=ll.ravel(), minlength=t * K).reshape(t, K) + log_tau
    norm = np.logaddexp.reduce(log_s, axis=1, keepdims=True)
    return np.exp(log_s - norm), float(norm[lay.annotated].sum())


def _conf_array(view, params):
    if params.pooled:
        return np.asarray(params.confusion, dtype=float)
    K = view.n_classes
    stack = np.full((view.n_workers, K, K), 1.0 / K)
    for w in np.unique(view.worker_idx):
        try:
            stack[w] = params.confusion[view.worker_ids[w]]
        except KeyError:
            raise DegenerateModel(f"no confusion matrix for worker {view.worker_ids[w]!r}") from None
    return stack


def posterior(view, params):
    """E-step: per-task class posteriors and the data log-likelihood.

    Tasks without annotations get ``tau`` and contribute zero.
    """
    return _e_step(_Layout(view), _log(params.tau), _log(_conf_array(view, params)))


def _prior(tau, mats, beta):
    if beta == 0:
        return 0.0
    if np.any(tau <= 0) or np.any(mats <= 0):
        raise NonFiniteObjective("a parameter is exactly zero while smoothing requires positivity")
    return beta * (float(np.log(tau).sum()) + float(np.log(mats).sum()))


def log_objective(view, params, beta):
    """Data log-likelihood plus ``beta`` times every log-parameter."""
    _, ll = posterior(view, params)
    J = ll + _prior(params.tau, np.stack(params.matrices()), beta)
    if not np.isfinite(J):
        raise NonFiniteObjective(f"objective is {J}")
    return J


def _normalize_rows(num):
    den = num.sum(axis=-1, keepdims=True)
    K = num.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    # rows with no mass at all (beta == 0) fall back to uniform
    return np.where(den > 0, out, 1.0 / K)


def _m_step_arrays(lay, q, beta, per_worker):
    view = lay.view
    K = view.n_classes
    qa = q[lay.annotated]
    tau = (qa.sum(axis=0) + beta) / (len(qa) + K * beta)
    if not per_worker:
        # (K, K) soft counts: sum over tasks of q_i(k) * n_i(l)
        return tau, _normalize_rows(qa.T @ lay.counts + beta)
    W = view.n_workers
    q_ann = q[view.task_idx]
    soft = np.empty((W, K, K))
    for k in range(K):
        soft[:, k, :] = np.bincount(lay.wl, weights=q_ann[:, k], minlength=W * K).reshape(W, K)
    return tau, _normalize_rows(soft + beta)


def _as_params(lay, tau, conf, per_worker):
    view = lay.view
    if not per_worker:
        return ModelParams(view.classes, tau, conf)
    return ModelParams(view.classes, tau, {view.worker_ids[w]: conf[w] for w in lay.used})


def _m_step(view, q, beta, per_worker):
    lay = _Layout(view)
    return _as_params(lay, *_m_step_arrays(lay, q, beta, per_worker), per_worker)


def _initial_posterior(lay, config):
    view = lay.view
    if isinstance(config.init, ModelParams):
        q, _ = _e_step(lay, _log(config.init.tau), _log(_conf_array(view, config.init)))
        return q
    counts = view.counts()
    return (counts + 1.0) / (counts.sum(axis=1, keepdims=True) + view.n_classes)


def _fit_em(view, config, per_worker, name):
    _check_view(view)
    config = config or EMConfig()
    lay = _Layout(view)
    q = _initial_posterior(lay, config)
    trace = []
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        tau, conf = _m_step_arrays(lay, q, config.beta, per_worker)
        q, ll = _e_step(lay, _log(tau), _log(conf))
        # idle workers carry no parameters, so they stay out of the prior
        J = ll + _prior(tau, conf[lay.used] if per_worker else conf, config.beta)
        if not np.isfinite(J):
            raise NonFiniteObjective(f"objective became {J} at iteration {iterations}")
        trace.append(J)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < config.tol:
            converged = True
            break
    diag = Diagnostics(iterations, trace[-1], converged, int(lay.annotated.sum()),
                       int((~lay.annotated).sum()), tuple(trace))
    return ConsensusResult(view.question_id, name, view.task_ids, view.classes, q,
                           hard_labels(q), _as_params(lay, tau, conf, per_worker), diag, lay.annotated)


def fit_multinomial(view, config=None):
    """Pooled Multinomial model: one confusion matrix shared by all workers."""
    return _fit_em(view, config, per_worker=False, name="mm")


def fit_dawid_skene(view, config=None):
    """Dawid-Skene model: one confusion matrix per worker."""
    return _fit_em(view, config, per_worker=True, name="ds")


def compute_consensus(view, model, config=None):
    if model == "mv":
        return majority_vote(view)
    if model == "mm":
        return fit_multinomial(view, config)
    if model == "ds":
        return fit_dawid_skene(view, config)
    raise InvalidConfig(f"unknown model {model!r}; expected one of {', '.join(MODELS)}")
