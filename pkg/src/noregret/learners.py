"""Contextual bidding algorithms: one weight vector per support value.

A learner sees rewards already divided by the instance scale (max arm label +
max support value), so every per-round reward lies in [-1, 1]. Its cumulative
table ``sigma`` is kept in those normalized units; multiply by ``scale`` to get
back to the auction's units.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

LEARNER_TYPES = ("mw", "ftl", "ftpl", "intended", "truthful", "worst")
LEARNER_KEYS = {"type", "clever", "gamma", "learning_rate", "recency_eta", "k_switch", "feedback"}


@dataclass
class LearnerConfig:
    """Learner block of a simulation config.

    ``intended`` (FSE oracle buyer), ``truthful`` (bids its value) and ``worst``
    (pulls the lowest-sigma arm; a non-mean-based control) are scripted.
    """

    type: str = "mw"
    clever: bool = False
    gamma: float | None = None
    learning_rate: float | None = None
    recency_eta: float = 1.0
    k_switch: int | None = None
    feedback: str = "experts"

    def __post_init__(self):
        if self.type not in LEARNER_TYPES:
            raise ValueError(f"unknown learner type {self.type!r}; expected one of {LEARNER_TYPES}")
        if self.feedback not in ("experts", "bandit"):
            raise ValueError("feedback must be 'experts' or 'bandit'")
        if self.recency_eta < 1:
            raise ValueError("recency_eta must be >= 1")
        if self.k_switch is not None and self.k_switch < 0:
            raise ValueError("k_switch must be a nonnegative integer")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "LearnerConfig":
        unknown = set(doc) - LEARNER_KEYS
        if unknown:
            raise ValueError(f"unknown learner keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def scripted(self) -> bool:
        return self.type in ("intended", "truthful", "worst")


def default_learning_rate(K: int, T: int) -> float:
    return math.sqrt(math.log(max(K, 2)) / T)


def default_gamma(T: int) -> float:
    return T ** -0.25


class Learner:
    """Per-context learner over K arms for m context values.

    ``select`` and ``observe`` implement the two-phase round: every buyer
    selects first, the auction resolves, then every buyer observes.
    """

    def __init__(self, cfg: LearnerConfig, labels, support, T: int, rng: np.random.Generator,
                 scripted_policy=None):
        self.cfg = cfg
        self.labels = np.asarray(labels, dtype=float)
        self.support = np.asarray([float(v) for v in support])
        self.K = len(self.labels)
        self.m = len(self.support)
        self.T = T
        self.rng = rng
        self.t = 0  # rounds observed so far
        self.sigma = np.zeros((self.m, self.K))
        self.eta = cfg.learning_rate if cfg.learning_rate is not None else default_learning_rate(self.K, T)
        self.gamma = cfg.gamma if cfg.gamma is not None else default_gamma(T)
        self.mask = np.ones((self.m, self.K), dtype=bool)
        if cfg.clever:
            self.mask = self.labels[None, :] <= self.support[:, None] + 1e-12
            self.mask[:, 0] = True
        self._scripted = scripted_policy
        self._last_probs = None
        self._last_top = None
        self.meta = None
        if cfg.k_switch is not None:
            self.meta = MetaArmSet(self.K, T, cfg.k_switch)
            self.meta_sigma = np.zeros((self.m, self.meta.count))

    # selection -------------------------------------------------------------
    def policy(self, v: int) -> np.ndarray:
        """Selection distribution over arms for context v at the next round."""
        typ = self.cfg.type
        if typ in ("intended", "truthful"):
            probs = np.zeros(self.K)
            probs[self._scripted(v, self.t)] = 1.0
            return probs
        if typ == "worst":
            s = np.where(self.mask[v], self.sigma[v], np.inf)
            probs = np.zeros(self.K)
            probs[int(np.argmin(s))] = 1.0
            return probs
        if self.meta is not None:
            w = self._softmax(self.meta_sigma[v], np.ones(self.meta.count, dtype=bool))
            probs = np.zeros(self.K)
            np.add.at(probs, self.meta.plays[:, self.t], w)
            return probs
        if typ == "ftl":
            probs = np.zeros(self.K)
            probs[self._leader(v)] = 1.0
            return probs
        if typ == "mw":
            return self._softmax(self.sigma[v], self.mask[v])
        # ftpl has no closed form; report the leader as its modal choice
        probs = np.zeros(self.K)
        probs[self._leader(v)] = 1.0
        return probs

    def select(self, v: int, u: float | None = None) -> int:
        """Pull an arm for context value index v; ``u`` is an optional uniform draw."""
        typ = self.cfg.type
        if u is None:
            u = float(self.rng.random())
        if typ == "mw" and self.meta is None:
            s = self.sigma[v]
            if self.cfg.clever:
                s = np.where(self.mask[v], s, -np.inf)
            top = s.max()
            p = np.exp(self.eta * (s - top))
            c = np.cumsum(p)
            self._last_probs = p / c[-1]
            self._last_top = top
            return min(int(np.searchsorted(c, u * c[-1], side="right")), self.K - 1)
        self._last_top = None
        if typ in ("intended", "truthful", "worst", "ftl"):
            probs = self.policy(v)
            self._last_probs = probs
            return int(np.argmax(probs))
        if self.meta is not None:
            w = self._softmax(self.meta_sigma[v], np.ones(self.meta.count, dtype=bool))
            idx = _draw(w, u)
            arm = int(self.meta.plays[idx, self.t])
            probs = np.zeros(self.K)
            np.add.at(probs, self.meta.plays[:, self.t], w)
            self._last_probs = probs
            return arm
        # ftpl: fresh uniform perturbation of width 1/eta on every allowed arm
        noise = self.rng.random(self.K) / self.eta
        s = np.where(self.mask[v], self.sigma[v] + noise, -np.inf)
        self._last_probs = None
        return int(np.argmax(s))

    def _leader(self, v: int) -> int:
        """argmax of sigma over allowed arms, ties to the highest index."""
        s = np.where(self.mask[v], self.sigma[v], -np.inf)
        return self.K - 1 - int(np.argmax(s[::-1]))

    def _softmax(self, s, mask) -> np.ndarray:
        z = np.where(mask, self.eta * s, -np.inf)
        z = z - z.max()
        p = np.exp(z)
        return p / p.sum()

    # feedback ----------------------------------------------------------------
    def observe(self, rewards: np.ndarray, pulled: int | None = None, v: int | None = None):
        """Add one round of normalized rewards (shape (m, K)) to sigma.

        Under recency bias the round-t increment is eta^t times the reward
        (t counted from 1). Bandit feedback uses only the pulled column,
        importance-weighted for randomized learners.
        """
        rewards = np.asarray(rewards, dtype=float)
        if rewards.shape != (self.m, self.K):
            raise ValueError(f"rewards must have shape {(self.m, self.K)}, got {rewards.shape}")
        self.t += 1
        scale = self.cfg.recency_eta ** self.t if self.cfg.recency_eta != 1 else 1.0
        self._last_top = None
        if self.cfg.feedback == "bandit":
            if pulled is None:
                raise ValueError("bandit feedback needs the pulled arm")
            col = rewards[:, pulled] * scale
            if self.cfg.type in ("mw", "ftpl") and self._last_probs is not None:
                col = col / max(self._last_probs[pulled], 1e-12)
            self.sigma[:, pulled] += col
        else:
            self.sigma += scale * rewards if scale != 1.0 else rewards
        if self.meta is not None:
            # meta-arm m plays arm plays[m, t-1] in the round just observed
            self.meta_sigma += scale * rewards[:, self.meta.plays[:, self.t - 1]]

    def gap(self, v: int, arm: int) -> float:
        """How far the pulled arm trails the context's best arm (normalized sigma units).

        Call between ``select`` and ``observe``.
        """
        s = self.sigma[v]
        top = self._last_top
        if top is None:
            top = s[self.mask[v]].max() if self.cfg.clever else s.max()
        return float(top - s[arm])


def _draw(probs: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
    return min(idx, len(probs) - 1)


# ---------------------------------------------------------------------------
# k-switching meta-arms


@dataclass(frozen=True)
class MetaArmIndex:
    """Arm-switching strategy: ((arm, first round), ...) with 1-based start rounds.

    A switch "at round s" means the new arm is used from round s + 1 on, so
    switch rounds range over 1..T as in the count formula (a switch at T is
    never exercised).
    """

    segments: tuple

    def arm_at(self, t: int) -> int:
        arm = self.segments[0][0]
        for a, start in self.segments:
            if t >= start:
                arm = a
        return arm


SATURATION = 2 ** 63 - 1


def meta_arm_count(m: int, T: int, k: int) -> tuple[int, bool]:
    """sum_{i=0}^{k} m (m-1)^i C(T, i); returns (count, saturated)."""
    if k < 0 or T < 1 or m < 1:
        raise ValueError("need m >= 1, T >= 1, k >= 0")
    if k > T - 1 and T > 1:
        raise ValueError("k must be at most T - 1")
    total = 0
    for i in range(k + 1):
        total += m * (m - 1) ** i * math.comb(T, i)
        if total > SATURATION:
            return SATURATION, True
    return total, False


def enumerate_meta_arms(m: int, T: int, k: int) -> Iterator[MetaArmIndex]:
    """All strategies with at most k switches (k <= 2)."""
    if k > 2:
        raise ValueError("enumeration is provided for k <= 2")
    for i in range(k + 1):
        for times in itertools.combinations(range(1, T + 1), i):
            for first in range(m):
                for rest in itertools.product(range(m), repeat=i):
                    arms = (first,) + rest
                    if any(a == b for a, b in zip(arms, arms[1:])):
                        continue
                    starts = (1,) + tuple(s + 1 for s in times)
                    yield MetaArmIndex(tuple(zip(arms, starts)))


class MetaArmSet:
    """Play table for every meta-arm: plays[meta, t] (t 0-based)."""

    MAX_ENTRIES = 5_000_000

    def __init__(self, m: int, T: int, k: int):
        count, sat = meta_arm_count(m, T, k)
        if sat or count * T > self.MAX_ENTRIES:
            raise ValueError(f"{count} meta-arms over {T} rounds is too many to enumerate")
        self.m, self.T, self.k = m, T, k
        self.count = count
        self.plays = np.empty((count, T), dtype=np.int64)
        self.index = []
        for row, meta in enumerate(enumerate_meta_arms(m, T, k)):
            self.index.append(meta)
            for a, start in meta.segments:
                self.plays[row, start - 1:] = a
        assert len(self.index) == count


def run_meta_mw(rewards: np.ndarray, k: int, learning_rate: float | None = None,
                seed: int = 0) -> dict:
    """Multiplicative weights over every k-switching meta-arm on a reward
    matrix (T, m) with entries in [0, 1].

    Returns the expected reward of the learner and of the best meta-arm.
    """
    T, m = rewards.shape
    metas = MetaArmSet(m, T, k)
    if learning_rate is not None:
        eta = learning_rate
    elif k:
        eta = math.sqrt(k * math.log(T * m) / T)
    else:
        eta = math.sqrt(math.log(m) / T)
    meta_rewards = rewards[np.arange(T)[None, :], metas.plays]  # [meta, t]
    cum = np.zeros(metas.count)
    learner_total = 0.0
    for t in range(T):
        z = eta * cum
        p = np.exp(z - z.max())
        p /= p.sum()
        learner_total += float(p @ meta_rewards[:, t])
        cum += meta_rewards[:, t]
    best = float(cum.max())
    return {"learner": learner_total, "best_meta": best, "regret": best - learner_total,
            "eta": eta, "meta_arms": metas.count,
            "bound": 2 * math.sqrt(T * max(k, 1) * math.log(T * m))}


# ---------------------------------------------------------------------------
# regret on explicit reward sequences


def regret_from_rewards(rewards: np.ndarray, pulls) -> float:
    """Best fixed arm's total minus the realized total, for a (T, K) reward matrix."""
    rewards = np.asarray(rewards, dtype=float)
    pulls = np.asarray(pulls, dtype=int)
    got = rewards[np.arange(len(pulls)), pulls].sum()
    return float(rewards.sum(axis=0).max() - got)


def adversarial_two_arm_sequence(T: int) -> np.ndarray:
    """Arm a pays 1 for the first T/2 rounds then 0; arm b pays 0 for the
    first 3T/4 rounds then 1. Columns are (a, b)."""
    if T % 4:
        raise ValueError("T must be divisible by 4")
    r = np.zeros((T, 2))
    r[: T // 2, 0] = 1.0
    r[3 * T // 4:, 1] = 1.0
    return r


def recency_scaled(rewards: np.ndarray, eta: float) -> np.ndarray:
    """Rewards multiplied by eta^t for rounds t = 1..T."""
    T = rewards.shape[0]
    factors = eta ** np.arange(1, T + 1)
    return rewards * factors[:, None]


def recency_regret_bound(eta: float, T: int, delta: float = 0.0) -> float:
    """delta + 2 * sum_t (eta^t - 1): unscaled regret of a learner whose regret
    on the eta^t-scaled rewards is at most delta (rewards in [0, 1])."""
    return delta + 2.0 * float((eta ** np.arange(1, T + 1) - 1.0).sum())


def one_switch_advantage(rewards: np.ndarray, stay: int, targets=None) -> dict:
    """Best single-switch meta-arm starting on ``stay`` versus staying put.

    ``rewards`` is (T, K). Returns the switch target, switch round s (the
    target is used from round s + 1) and the advantage over the stay arm.
    """
    rewards = np.asarray(rewards, dtype=float)
    T, K = rewards.shape
    targets = range(K) if targets is None else targets
    stay_suffix = np.concatenate([np.cumsum(rewards[::-1, stay])[::-1], [0.0]])
    best = {"advantage": 0.0, "target": stay, "switch_round": T}
    for b in targets:
        if b == stay:
            continue
        suffix = np.concatenate([np.cumsum(rewards[::-1, b])[::-1], [0.0]])
        gain = suffix - stay_suffix  # gain[s] = switching before round s (0-based)
        s = int(np.argmax(gain))
        if gain[s] > best["advantage"]:
            best = {"advantage": float(gain[s]), "target": int(b), "switch_round": s}
    return best
