"""Round-level single-item mechanisms.

Arms are integer indices into a label array whose entry 0 is the null arm
(label 0, never enters, never pays). Every mechanism exposes two views of one
round:

* ``arm_table(ctx, other_arms)`` -> (alloc, pay_if_win) numpy vectors over the
  focal buyer's arms, given everyone else's pulls. The engine uses this for
  outcomes and for full-information counterfactual rewards.
* ``profile(ctx, arms)`` -> per-buyer (allocation probability, payment if
  winning) computed with plain Python arithmetic, so it is exact when the
  mechanism was built from Fractions. It is the reference the vectorized
  path is tested against and what the verify module replays.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import FLOAT_TOL, ValueDistribution, e_harmonic, is_exact, to_fraction

NO_ENTRY = -1.0


@dataclass(frozen=True)
class RoundContext:
    t: int  # 0-based round
    phase: int = 0  # FSE phase tau (1-based); 0 for non-phase mechanisms
    half: int = 1  # 1 = first R rounds of the phase, 2 = second R rounds
    reserve: object = None


@dataclass
class RoundOutcome:
    winner: int | None
    allocation: list  # realized 0/1 per buyer
    payments: list  # realized per buyer
    submitted_bids: list  # per buyer; None when the arm does not enter
    alloc_prob: list = field(default_factory=list)  # per buyer, before the lottery
    expected_payments: list = field(default_factory=list)
    surcharge_tie: bool = False  # setup-phase tie at w_tau where surcharge was taken as 0


def draw_winner(alloc_prob, u: float):
    """Map one uniform draw to a winner given per-buyer win probabilities (sum <= 1)."""
    acc = 0.0
    for i, p in enumerate(alloc_prob):
        acc += float(p)
        if u < acc:
            return i
    return None


class Mechanism:
    """Common interface; subclasses fill in the round rules."""

    labels: np.ndarray
    n: int
    T: int
    epsilon: float = 0.0
    exact: bool = False

    @property
    def K(self) -> int:
        return len(self.labels)

    def context(self, t: int) -> RoundContext:
        raise NotImplementedError

    def contexts(self):
        """One representative context per distinct round rule."""
        raise NotImplementedError

    def context_key(self, ctx: RoundContext):
        return (ctx.phase, ctx.half, ctx.reserve)

    def arm_table(self, ctx: RoundContext, other_arms) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def profile(self, ctx: RoundContext, arms) -> list[tuple]:
        raise NotImplementedError

    def submitted_bid(self, ctx: RoundContext, arm: int):
        raise NotImplementedError

    def max_charge(self) -> float:
        """Upper bound on any single payment."""
        return float(max(self.labels))

    def resolve(self, ctx: RoundContext, arms, rng: np.random.Generator | float) -> RoundOutcome:
        """Realize a round: per-buyer win probabilities, one lottery, payments."""
        prof = self.profile(ctx, arms)
        probs = [a for a, _ in prof]
        u = rng if isinstance(rng, float) else float(rng.random())
        winner = draw_winner(probs, u)
        alloc = [1 if i == winner else 0 for i in range(len(arms))]
        pays = [prof[i][1] if i == winner else 0 * prof[i][1] for i in range(len(arms))]
        return RoundOutcome(
            winner=winner,
            allocation=alloc,
            payments=pays,
            submitted_bids=[self.submitted_bid(ctx, a) for a in arms],
            alloc_prob=probs,
            expected_payments=[a * p for a, p in prof],
            surcharge_tie=self._surcharge_tie(ctx, arms),
        )

    def _surcharge_tie(self, ctx, arms) -> bool:
        return False

    def _discount(self, pay):
        if not self.epsilon:
            return pay
        zero = 0 * pay
        return max(pay - self.epsilon, zero)


# ---------------------------------------------------------------------------
# Full-surplus-extraction auction


@dataclass(frozen=True)
class ArmStatus:
    kind: str  # "dormant" | "active" | "retired"
    value_index: int | None = None  # j for Active(w_j)
    bid: object = None  # submitted bid, None when dormant


@dataclass(frozen=True)
class FseConfig:
    dist: ValueDistribution
    n: int
    T: int
    P: int
    epsilon_discount: object = None
    welfare_loss_target: float | None = None

    def __post_init__(self):
        m = self.dist.m
        if self.n < 1:
            raise ValueError("FseConfig: n must be >= 1")
        if self.P < m:
            raise ValueError(f"FseConfig: P={self.P} must be >= m={m} so every setup phase exists")
        if self.T <= 0 or self.T % (2 * self.P) != 0:
            raise ValueError(
                f"FseConfig: T={self.T} must be a positive multiple of 2P={2 * self.P} (T = 2RP)")
        if self.welfare_loss_target is not None and self.P < m / self.welfare_loss_target:
            raise ValueError(
                f"FseConfig: P={self.P} < m/delta={m / self.welfare_loss_target:g}")
        if self.epsilon_discount is None:
            wm = self.dist.support[-1]
            eps = Fraction(1, 10 ** 9) * wm if self.dist.exact else 1e-9 * float(wm)
            object.__setattr__(self, "epsilon_discount", eps)
        if self.epsilon_discount < 0:
            raise ValueError("FseConfig: epsilon_discount must be nonnegative")

    @property
    def m(self) -> int:
        return self.dist.m

    @property
    def R(self) -> int:
        return self.T // (2 * self.P)

    @property
    def labels(self) -> list:
        """Null arm 0 followed by b_i = 2 w_m + i for i = 1..P."""
        wm = self.dist.support[-1]
        return [0 * wm] + [2 * wm + i for i in range(1, self.P + 1)]

    def phase_of(self, t: int) -> tuple[int, int]:
        """(tau, half) for a 0-based round index."""
        tau, r = divmod(t, 2 * self.R)
        return tau + 1, (1 if r < self.R else 2)

    def phase_bounds(self, tau: int) -> tuple[int, int]:
        start = (tau - 1) * 2 * self.R
        return start, start + 2 * self.R


def arm_status(cfg: FseConfig, arm: int, tau: int) -> ArmStatus:
    """Lifecycle of arm b_arm (arm 0 is the null arm) in phase tau."""
    P, m = cfg.P, cfg.m
    if not 1 <= tau <= P:
        raise ValueError(f"phase {tau} outside 1..{P}")
    if not 0 <= arm <= P:
        raise ValueError(f"arm {arm} outside 0..{P}")
    if arm == 0:
        return ArmStatus("dormant")
    w = cfg.dist.support
    low = P - tau + 1
    high = P if tau < m else P - tau + m
    if arm < low:
        return ArmStatus("dormant")
    if arm > high:
        return ArmStatus("retired", bid=w[-1] + 1)
    j = arm - P + tau
    return ArmStatus("active", value_index=j, bid=w[j - 1])


def intended_arm(cfg: FseConfig, j: int, tau: int) -> int:
    """b_{P+j-tau} when that arm exists (j <= tau), otherwise b_P."""
    if not 1 <= j <= cfg.m:
        raise ValueError(f"value index {j} outside 1..{cfg.m}")
    if not 1 <= tau <= cfg.P:
        raise ValueError(f"phase {tau} outside 1..{cfg.P}")
    return cfg.P + j - tau if j <= tau else cfg.P


class FseAuction(Mechanism):
    def __init__(self, cfg: FseConfig):
        self.cfg = cfg
        self.n = cfg.n
        self.T = cfg.T
        self.exact = cfg.dist.exact
        self.labels = np.array([float(v) for v in cfg.labels])
        self.epsilon = cfg.epsilon_discount
        P = cfg.P
        self._bids = np.full((P + 1, P + 1), NO_ENTRY)
        self._retired = np.zeros((P + 1, P + 1), dtype=bool)
        self._status = {}
        for tau in range(1, P + 1):
            for arm in range(P + 1):
                st = arm_status(cfg, arm, tau)
                self._status[tau, arm] = st
                if st.bid is not None:
                    self._bids[tau, arm] = float(st.bid)
                self._retired[tau, arm] = st.kind == "retired"
        w = cfg.dist.support
        q = cfg.dist.probs
        # setup-phase lottery base q_tau / Q_tau
        self._lottery = {tau: q[tau - 1] / cfg.dist.tail(tau) for tau in range(1, cfg.m)}
        self._wm = w[-1]

    def context(self, t: int) -> RoundContext:
        tau, half = self.cfg.phase_of(t)
        return RoundContext(t=t, phase=tau, half=half)

    def contexts(self):
        for tau in range(1, self.cfg.P + 1):
            for half in (1, 2):
                start = (tau - 1) * 2 * self.cfg.R + (half - 1) * self.cfg.R
                yield RoundContext(t=start, phase=tau, half=half)

    def context_key(self, ctx):
        return (ctx.phase, ctx.half)

    def max_charge(self) -> float:
        return 2 * float(self._wm)

    def status(self, arm: int, tau: int) -> ArmStatus:
        return self._status[tau, arm]

    def submitted_bid(self, ctx, arm):
        return self._status[ctx.phase, arm].bid

    # vectorized path -------------------------------------------------------
    def arm_table(self, ctx, other_arms):
        tau, half = ctx.phase, ctx.half
        s = self._bids[tau]
        ob = s[np.asarray(other_arms, dtype=int)]
        ob = ob[ob >= 0]
        if ob.size:
            M = ob.max()
            c = int((ob == M).sum())
        else:
            M, c = NO_ENTRY, 0
        enter = s >= 0
        above = enter & (s > M)
        tie = enter & (s == M)
        second = max(M, 0.0)
        alloc = np.zeros(self.K)
        pay = np.zeros(self.K)
        retired = self._retired[tau]
        setup = tau < self.cfg.m
        if setup:
            w_tau = float(self.cfg.dist.support[tau - 1])
            alloc[above] = 1.0
            if c:
                share = 1.0 / (c + 1)
                if M < w_tau:
                    alloc[tie] = share
                else:
                    alloc[tie] = share * float(self._lottery[tau]) ** c
        else:
            alloc[above] = 1.0
            alloc[tie] = 1.0 / (c + 1)
        pay[above] = second
        if half == 2:
            pay[above] += 2.0 * (s[above] - second)
        pay[tie] = M
        pay[retired & (alloc > 0)] = 2.0 * float(self._wm)
        if self.epsilon:
            pay = np.maximum(pay - float(self.epsilon), 0.0)
        pay[alloc == 0] = 0.0
        return alloc, pay

    # exact path ---------------------------------------------------------------
    def profile(self, ctx, arms):
        tau, half = ctx.phase, ctx.half
        zero = 0 * self._wm
        bids = [self._status[tau, a].bid for a in arms]
        entered = [b for b in bids if b is not None]
        out = []
        if not entered:
            return [(zero, zero) for _ in arms]
        top = max(entered)
        S = [i for i, b in enumerate(bids) if b is not None and b == top]
        rest = [b for i, b in enumerate(bids) if b is not None and i not in S]
        # second-highest submitted bid: the top itself on ties, 0 when nobody else entered
        if len(S) > 1:
            second = top
        elif rest:
            second = max(rest)
        else:
            second = zero
        setup = tau < self.cfg.m
        for i, a in enumerate(arms):
            if i not in S:
                out.append((zero, zero))
                continue
            one = Fraction(1) if self.exact else 1.0
            share = one / len(S)
            if setup and top == self.cfg.dist.support[tau - 1]:
                share = share * self._lottery[tau] ** (len(S) - 1)
            if self._status[tau, a].kind == "retired":
                pay = 2 * self._wm
            else:
                pay = second
                if half == 2:
                    pay = pay + 2 * (top - second)
            out.append((share, self._discount(pay)))
        return out

    def _surcharge_tie(self, ctx, arms) -> bool:
        if ctx.phase >= self.cfg.m or ctx.half != 2:
            return False
        bids = [self._status[ctx.phase, a].bid for a in arms]
        w_tau = self.cfg.dist.support[ctx.phase - 1]
        return sum(1 for b in bids if b is not None and b == w_tau) > 1


def fse_round(cfg: FseConfig, phase: int, half: int, pulls, rng) -> RoundOutcome:
    """Resolve one FSE round given every buyer's pulled arm."""
    auction = FseAuction(cfg)
    start = (phase - 1) * 2 * cfg.R + (half - 1) * cfg.R
    return auction.resolve(RoundContext(t=start, phase=phase, half=half), list(pulls), rng)


# ---------------------------------------------------------------------------
# Reserve-price mechanisms over a bid space (support values by default)


class _ReserveMechanism(Mechanism):
    def __init__(self, dist: ValueDistribution, n: int, T: int, bids=None, reserve=None,
                 schedule=None, epsilon_discount=0):
        self.dist = dist
        self.n = n
        self.T = T
        self.exact = dist.exact
        zero = 0 * dist.support[0]
        bid_space = list(bids) if bids is not None else list(dist.support)
        bid_space = [b for b in bid_space if b != 0]
        if any(b2 <= b1 for b1, b2 in zip(bid_space, bid_space[1:])) or any(b < 0 for b in bid_space):
            raise ValueError("bid space must be positive and strictly increasing")
        self.bid_labels = [zero] + bid_space
        self.labels = np.array([float(b) for b in self.bid_labels])
        self.epsilon = epsilon_discount or 0
        if schedule is not None:
            if len(schedule) != T:
                raise ValueError(f"reserve schedule has {len(schedule)} entries, expected T={T}")
            self.schedule = list(schedule)
        else:
            self.schedule = None
            self.reserve = zero if reserve is None else reserve

    def reserve_at(self, t: int):
        return self.schedule[t] if self.schedule is not None else self.reserve

    def context(self, t):
        return RoundContext(t=t, reserve=self.reserve_at(t))

    def contexts(self):
        seen = set()
        for t in range(self.T if self.schedule is not None else 1):
            r = self.reserve_at(t)
            if r not in seen:
                seen.add(r)
                yield RoundContext(t=t, reserve=r)

    def context_key(self, ctx):
        return ctx.reserve

    def submitted_bid(self, ctx, arm):
        return None if arm == 0 else self.bid_labels[arm]

    def _qualifying(self, ctx):
        s = self.labels.copy()
        s[0] = NO_ENTRY
        s[s < float(ctx.reserve)] = NO_ENTRY
        return s


class SecondPriceReserve(_ReserveMechanism):
    """Highest qualifying bid wins (uniform ties) and pays max(second qualifying bid, reserve)."""

    def max_charge(self) -> float:
        return float(self.labels.max())

    def arm_table(self, ctx, other_arms):
        s = self._qualifying(ctx)
        ob = s[np.asarray(other_arms, dtype=int)]
        ob = ob[ob >= 0]
        if ob.size:
            M = ob.max()
            c = int((ob == M).sum())
        else:
            M, c = NO_ENTRY, 0
        enter = s >= 0
        above = enter & (s > M)
        tie = enter & (s == M)
        alloc = np.zeros(self.K)
        pay = np.zeros(self.K)
        alloc[above] = 1.0
        alloc[tie] = 1.0 / (c + 1)
        pay[above] = max(M, float(ctx.reserve))
        pay[tie] = M
        if self.epsilon:
            pay = np.maximum(pay - float(self.epsilon), 0.0)
        pay[alloc == 0] = 0.0
        return alloc, pay

    def profile(self, ctx, arms):
        r = ctx.reserve
        zero = 0 * self.bid_labels[-1]
        bids = [self.bid_labels[a] if a != 0 and self.bid_labels[a] >= r else None for a in arms]
        return spa_profile(bids, r, zero, self.exact, self._discount)


class UniformPayYourBid(_ReserveMechanism):
    """Uniform winner among bids >= reserve; the winner pays their own bid."""

    def arm_table(self, ctx, other_arms):
        s = self._qualifying(ctx)
        ob = s[np.asarray(other_arms, dtype=int)]
        c = int((ob >= 0).sum())
        enter = s >= 0
        alloc = np.where(enter, 1.0 / (c + 1), 0.0)
        pay = np.where(enter, s, 0.0)
        if self.epsilon:
            pay = np.where(enter, np.maximum(pay - float(self.epsilon), 0.0), 0.0)
        return alloc, pay

    def profile(self, ctx, arms):
        r = ctx.reserve
        zero = 0 * self.bid_labels[-1]
        bids = [self.bid_labels[a] if a != 0 and self.bid_labels[a] >= r else None for a in arms]
        return uniform_profile(bids, zero, self.exact, self._discount)


def spa_profile(bids, reserve, zero, exact, discount=lambda p: p):
    entered = [b for b in bids if b is not None]
    if not entered:
        return [(zero, zero) for _ in bids]
    top = max(entered)
    S = [i for i, b in enumerate(bids) if b is not None and b == top]
    rest = [b for i, b in enumerate(bids) if b is not None and i not in S]
    second = top if len(S) > 1 else (max(rest) if rest else zero)
    price = max(second, reserve)
    one = Fraction(1) if exact else 1.0
    return [((one / len(S)), discount(price)) if i in S else (zero, zero) for i in range(len(bids))]


def uniform_profile(bids, zero, exact, discount=lambda p: p):
    entered = [i for i, b in enumerate(bids) if b is not None]
    if not entered:
        return [(zero, zero) for _ in bids]
    one = Fraction(1) if exact else 1.0
    share = one / len(entered)
    return [(share, discount(bids[i])) if i in entered else (zero, zero) for i in range(len(bids))]


def _mixed_outcome(profile, bids, rng, exact):
    probs = [a for a, _ in profile]
    u = rng if isinstance(rng, float) else float(rng.random())
    winner = draw_winner(probs, u)
    zero = Fraction(0) if exact else 0.0
    return RoundOutcome(
        winner=winner,
        allocation=[1 if i == winner else 0 for i in range(len(bids))],
        payments=[profile[i][1] if i == winner else zero for i in range(len(bids))],
        submitted_bids=list(bids),
        alloc_prob=probs,
        expected_payments=[a * p for a, p in profile],
    )


def spa_reserve_round(reserve, bids, rng) -> RoundOutcome:
    """Second-price auction with reserve on raw bids."""
    exact = is_exact(reserve, *bids)
    zero = Fraction(0) if exact else 0.0
    entered = [b if b >= reserve else None for b in bids]
    return _mixed_outcome(spa_profile(entered, reserve, zero, exact), bids, rng, exact)


def uniform_pay_bid_round(reserve, bids, rng) -> RoundOutcome:
    """Pay-your-bid uniform auction with reserve on raw bids."""
    exact = is_exact(reserve, *bids)
    zero = Fraction(0) if exact else 0.0
    entered = [b if b >= reserve else None for b in bids]
    return _mixed_outcome(uniform_profile(entered, zero, exact), bids, rng, exact)


def reserve_schedule_from_lp(x, dist: ValueDistribution, n: int, T: int) -> list:
    """Declining reserve realizing interim allocation x for clever zero-regret buyers.

    Block lengths are lambda_j T with lambda_j = (x_j - x_{j-1}) / E_j. The
    rounds run from the highest reserve to the lowest: first the leftover
    no-sale block (reserve w_m + 1), then w_m, ..., and w_1 in the final block.
    Block boundaries are rounded cumulatively so lengths add up to T.
    """
    m = dist.m
    if len(x) != m:
        raise ValueError("x must have one entry per support point")
    exact = dist.exact and is_exact(*x)
    xs = [to_fraction(v) for v in x] if exact else [float(v) for v in x]
    zero = xs[0] * 0
    lam = []
    prev = zero
    for j in range(1, m + 1):
        step = xs[j - 1] - prev
        if not (step >= 0 or (not exact and step > -FLOAT_TOL)):
            raise ValueError("x must be monotone nondecreasing")
        E = e_harmonic(dist if exact else dist.as_floats(), n, j)
        lam.append(max(step, zero) / E)
        prev = xs[j - 1]
    total = sum(lam, zero)
    if total > 1 and (exact or total > 1 + FLOAT_TOL):
        raise ValueError(f"schedule needs sum lambda = {total} > 1 (uniform LP constraint violated)")
    total = min(total, 1 + zero)
    w = dist.support
    no_sale = w[-1] + 1
    # lengths in round order: no-sale, w_m, ..., w_1
    fractions = [1 - total] + [lam[j] for j in range(m - 1, -1, -1)]
    levels = [no_sale] + [w[j] for j in range(m - 1, -1, -1)]
    schedule = []
    cum = zero
    done = 0
    for frac, level in zip(fractions, levels):
        cum += frac
        end = math.floor(cum * T + Fraction(1, 2)) if exact else int(math.floor(cum * T + 0.5))
        end = min(end, T)
        schedule.extend([level] * (end - done))
        done = end
    schedule.extend([w[0]] * (T - done))
    return schedule


# ---------------------------------------------------------------------------


@dataclass
class AuditResult:
    ok: bool
    witness: dict | None = None


def monotonicity_audit(mechanism: Mechanism, opponents: int | None = None) -> AuditResult:
    """Check allocation and expected payment are nondecreasing in the focal arm
    index, for every distinct round rule and every opponent pull profile."""
    k = mechanism.n - 1 if opponents is None else opponents
    K = mechanism.K
    for ctx in mechanism.contexts():
        for others in itertools.product(range(K), repeat=k):
            alloc, pay = mechanism.arm_table(ctx, list(others))
            exp_pay = alloc * pay
            for b in range(1, K):
                if alloc[b] < alloc[b - 1] - FLOAT_TOL or exp_pay[b] < exp_pay[b - 1] - FLOAT_TOL:
                    return AuditResult(False, {
                        "context": ctx, "others": list(others), "arm": b,
                        "alloc": (float(alloc[b - 1]), float(alloc[b])),
                        "expected_payment": (float(exp_pay[b - 1]), float(exp_pay[b])),
                    })
    return AuditResult(True)


AUCTION_KEYS = {"type", "P", "reserve", "schedule", "epsilon_discount"}


def build_mechanism(auction_cfg: dict, dist: ValueDistribution, n: int, T: int) -> Mechanism:
    """Instantiate a mechanism from the auction config block."""
    unknown = set(auction_cfg) - AUCTION_KEYS
    if unknown:
        raise ValueError(f"unknown auction keys: {sorted(unknown)}")
    kind = auction_cfg.get("type")
    eps = auction_cfg.get("epsilon_discount")
    if kind == "fse":
        P = auction_cfg.get("P")
        if P is None:
            raise ValueError("fse auction needs P")
        return FseAuction(FseConfig(dist, n, T, int(P), epsilon_discount=eps))
    if kind in ("spa_reserve", "uniform_declining"):
        cls = SecondPriceReserve if kind == "spa_reserve" else UniformPayYourBid
        schedule = auction_cfg.get("schedule")
        reserve = auction_cfg.get("reserve")
        conv = to_fraction if dist.exact else (lambda v: float(to_fraction(v)))
        if schedule is not None:
            schedule = [conv(r) for r in schedule]
        if reserve is not None:
            reserve = conv(reserve)
        return cls(dist, n, T, reserve=reserve, schedule=schedule,
                   epsilon_discount=conv(eps) if eps else 0)
    raise ValueError(f"unknown auction type {kind!r}")
