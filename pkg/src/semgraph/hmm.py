"""Graph-state tracking with hidden Markov models.

States are enumerated graph configurations; the observation alphabet is the
state set itself (the extractor reports a state, possibly the wrong one).
Decoding recovers the most likely true sequence from the noisy reports.
All probability arithmetic runs in the log domain with -inf for zero, so
sequences tens of thousands of frames long cannot underflow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DecodeFailure, EstimationFailure, InputError

_ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class HmmModel:
    A: np.ndarray                       # state transition matrix, row-stochastic
    B: np.ndarray                       # observation matrix, row-stochastic
    p: np.ndarray                       # initial state distribution
    state_labels: tuple[str, ...] = ()

    def __post_init__(self):
        a = np.asarray(self.A, dtype=float)
        b = np.asarray(self.B, dtype=float)
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "p", p)
        n = len(p)
        if a.shape != (n, n) or b.shape != (n, n):
            raise InputError("A and B must be N x N matching the initial distribution")
        for name, arr in (("A", a), ("B", b)):
            if (arr < 0).any():
                raise InputError(f"{name} entries must be non-negative")
            if np.abs(arr.sum(axis=1) - 1.0).max() > _ROW_SUM_TOL:
                raise InputError(f"{name} rows must sum to 1 within {_ROW_SUM_TOL}")
        if (p < 0).any() or abs(p.sum() - 1.0) > _ROW_SUM_TOL:
            raise InputError("p must be a probability distribution")
        if not self.state_labels:
            object.__setattr__(self, "state_labels", tuple(f"S{i}" for i in range(n)))
        elif len(self.state_labels) != n:
            raise InputError("state_labels length must equal the state count")

    @property
    def n_states(self) -> int:
        return len(self.p)

    def to_obj(self) -> dict:
        return {"labels": list(self.state_labels), "A": self.A.tolist(),
                "B": self.B.tolist(), "p": self.p.tolist()}

    @staticmethod
    def from_obj(obj: dict) -> "HmmModel":
        try:
            return HmmModel(np.array(obj["A"]), np.array(obj["B"]),
                            np.array(obj["p"]), tuple(obj.get("labels", ())))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed model object: {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_obj(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "HmmModel":
        with open(path) as fh:
            return HmmModel.from_obj(json.load(fh))


def _check_obs(obs, n: int) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.int64)
    if obs.ndim != 1 or len(obs) == 0:
        raise InputError("observation sequence must be non-empty and 1-d")
    if (obs < 0).any() or (obs >= n).any():
        raise InputError(f"observation indices must lie in [0, {n})")
    return obs


def _log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(x)


_TIE_TOL = 1e-12  # log-domain values this close count as tied


def _first_within_tol(values: np.ndarray) -> int:
    """Smallest index whose value sits within the tie tolerance of the max.

    Distinct path products can be mathematically identical (same factors in
    a different order), in which case float accumulation order decides the
    plain argmax; a tolerance band keeps tie-breaking deterministic and
    consistent with an exhaustive enumeration.
    """
    m = values.max()
    return int(np.argmax(values >= m - _TIE_TOL))


def viterbi(model: HmmModel, obs) -> tuple[np.ndarray, float]:
    """Most likely state sequence and its joint log probability.

    Ties take the smallest final state and then the smallest predecessor at
    every backward step, so decoding is deterministic. Raises DecodeFailure
    naming the first step at which every path has zero probability.
    """
    obs = _check_obs(obs, model.n_states)
    log_a = _log(model.A)
    log_b = _log(model.B)
    delta = _log(model.p) + log_b[:, obs[0]]
    if np.all(np.isneginf(delta)):
        raise DecodeFailure(0)
    T = len(obs)
    n = model.n_states
    back = np.zeros((T, n), dtype=np.int64)
    cols = np.arange(n)
    for t in range(1, T):
        cand = delta[:, None] + log_a               # cand[i, j]: ending at j via i
        col_max = cand.max(axis=0)
        back[t] = np.argmax(cand >= col_max - _TIE_TOL, axis=0)
        delta = cand[back[t], cols] + log_b[cols, obs[t]]
        if np.all(np.isneginf(delta)):
            raise DecodeFailure(t)
    states = np.zeros(T, dtype=np.int64)
    states[-1] = _first_within_tol(delta)
    log_prob = float(delta[states[-1]])
    for t in range(T - 2, -1, -1):
        states[t] = back[t + 1][states[t + 1]]
    return states, log_prob


def m_viterbi(model: HmmModel, obs, m: int) -> tuple[np.ndarray, float]:
    """Beam-limited Viterbi keeping only the M best states as predecessors.

    M = N reproduces the exact decoder; smaller M costs O(MNT) and returns a
    path whose log probability never exceeds the exact one.
    """
    n = model.n_states
    if not 1 <= m <= n:
        raise InputError(f"beam width must lie in [1, {n}]")
    obs = _check_obs(obs, n)
    log_a = _log(model.A)
    log_b = _log(model.B)
    delta = _log(model.p) + log_b[:, obs[0]]
    if np.all(np.isneginf(delta)):
        raise DecodeFailure(0)
    T = len(obs)
    back = np.zeros((T, n), dtype=np.int64)
    cols = np.arange(n)
    for t in range(1, T):
        beam = np.argsort(-delta, kind="stable")[:m]  # ties keep smaller indices
        cand = delta[beam, None] + log_a[beam]        # restrict predecessors to the beam
        vals = cand.max(axis=0)
        # break predecessor ties by the smallest original state index
        tied = np.where(cand >= vals[None, :] - _TIE_TOL, beam[:, None], n)
        chosen = tied.min(axis=0)
        beam_pos = {int(b): i for i, b in enumerate(beam)}
        picked = np.array([cand[beam_pos[int(j)], k] for k, j in enumerate(chosen)])
        back[t] = chosen
        delta = picked + log_b[cols, obs[t]]
        if np.all(np.isneginf(delta)):
            raise DecodeFailure(t)
    states = np.zeros(T, dtype=np.int64)
    states[-1] = _first_within_tol(delta)
    log_prob = float(delta[states[-1]])
    for t in range(T - 2, -1, -1):
        states[t] = back[t + 1][states[t + 1]]
    return states, log_prob


@dataclass(frozen=True)
class FitResult:
    model: HmmModel
    log_likelihoods: tuple[float, ...]
    converged: bool


def baum_welch(obs, init_model: HmmModel, max_iter: int = 100, tol: float = 1e-6) -> FitResult:
    """Expectation-maximization re-estimation of (A, B, p).

    The observation log-likelihood is non-decreasing across iterations (a
    drop beyond numerical noise raises). Stops when the relative likelihood
    change falls below tol or after max_iter iterations.
    """
    n = init_model.n_states
    obs = _check_obs(obs, n)
    T = len(obs)
    a = init_model.A.copy()
    b = init_model.B.copy()
    p = init_model.p.copy()
    history: list[float] = []
    converged = False

    for _ in range(max_iter):
        # scaled forward-backward
        alpha = np.zeros((T, n))
        scale = np.zeros(T)
        alpha[0] = p * b[:, obs[0]]
        scale[0] = alpha[0].sum()
        if scale[0] == 0.0:
            raise EstimationFailure("observation has zero probability under the model at step 0")
        alpha[0] /= scale[0]
        for t in range(1, T):
            alpha[t] = (alpha[t - 1] @ a) * b[:, obs[t]]
            scale[t] = alpha[t].sum()
            if scale[t] == 0.0:
                raise EstimationFailure(f"observation has zero probability under the model at step {t}")
            alpha[t] /= scale[t]
        beta = np.zeros((T, n))
        beta[-1] = 1.0
        for t in range(T - 2, -1, -1):
            beta[t] = (a @ (b[:, obs[t + 1]] * beta[t + 1])) / scale[t + 1]

        ll = float(np.log(scale).sum())
        if history and ll < history[-1] - 1e-9 * max(1.0, abs(history[-1])):
            raise EstimationFailure(f"likelihood decreased from {history[-1]} to {ll}")
        done = bool(history) and abs(ll - history[-1]) < tol * max(1.0, abs(history[-1]))
        history.append(ll)
        if done:
            converged = True
            break

        gamma = alpha * beta
        gamma /= gamma.sum(axis=1, keepdims=True)
        xi_sum = np.zeros((n, n))
        for t in range(T - 1):
            xi = (alpha[t][:, None] * a) * (b[:, obs[t + 1]] * beta[t + 1])[None, :] / scale[t + 1]
            xi_sum += xi

        p = gamma[0]
        occupancy = gamma[:-1].sum(axis=0)
        new_a = np.where(occupancy[:, None] > 0, xi_sum / np.maximum(occupancy[:, None], 1e-300), a)
        new_b = np.zeros_like(b)
        for j in range(n):
            new_b[:, j] = gamma[obs == j].sum(axis=0)
        total = gamma.sum(axis=0)
        new_b = np.where(total[:, None] > 0, new_b / np.maximum(total[:, None], 1e-300), b)
        a = new_a / new_a.sum(axis=1, keepdims=True)
        b = new_b / new_b.sum(axis=1, keepdims=True)

    return FitResult(HmmModel(a, b, p, init_model.state_labels), tuple(history), converged)


@dataclass(frozen=True)
class FactorizedModel:
    """Independent per-component presence chains; the joint product model
    over 2^N states is implied but never materialized."""

    chains: tuple[HmmModel, ...]

    def __post_init__(self):
        if not self.chains:
            raise InputError("need at least one chain")


def decode_factorized(fm: FactorizedModel, obs_per_chain) -> list[np.ndarray]:
    """Viterbi per chain; equals joint decoding when the truth factorizes."""
    lengths = {len(o) for o in obs_per_chain}
    if len(obs_per_chain) != len(fm.chains):
        raise InputError("one observation sequence per chain required")
    if len(lengths) != 1:
        raise InputError("observation sequences must share a length")
    return [viterbi(chain, obs)[0] for chain, obs in zip(fm.chains, obs_per_chain)]


def product_model(fm: FactorizedModel) -> HmmModel:
    """Materialize the joint model (row-major state order); test-scale only."""
    a = fm.chains[0].A
    b = fm.chains[0].B
    p = fm.chains[0].p
    labels = [(lab,) for lab in fm.chains[0].state_labels]
    for chain in fm.chains[1:]:
        a = np.kron(a, chain.A)
        b = np.kron(b, chain.B)
        p = np.kron(p, chain.p)
        labels = [l + (lab,) for l in labels for lab in chain.state_labels]
    return HmmModel(a, b, p, tuple("*".join(l) for l in labels))


def joint_obs_index(per_chain_obs, sizes) -> np.ndarray:
    """Row-major combined observation indices for a product model."""
    idx = np.zeros(len(per_chain_obs[0]), dtype=np.int64)
    for o, size in zip(per_chain_obs, sizes):
        idx = idx * size + np.asarray(o, dtype=np.int64)
    return idx
