"""Multi-index and multilevel Monte Carlo estimators for the SPDE loss.

Pipeline implemented by `run_mimc` / `run_mlmc`:

1. pilot phase: a fixed number of coupled samples on a cheap set of level
   pairs;
2. rate calibration: least-squares intercepts of log2 |mean|, log2 variance
   and log2 cost against the known decay/growth rates, giving the constants
   (C1, C2, C3) of the rate model;
3. bias-constrained index-set construction (profit-ordered, downward closed)
   and, optionally, a deterministic scan for the error-split alpha;
4. variance-optimal sample allocation;
5. main phase and report assembly.

Planning targets epsilon / safety rather than epsilon itself so that the
realized error stays below the requested RMSE with roughly two-sigma
confidence; `safety=1` recovers the bare textbook split.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from . import analysis, coupling
from ._validation import check_epsilon, check_rho_stable
from .config import ExperimentConfig
from .coupling import BaseMesh, LevelPair
from .errors import BudgetExceeded, MissingPilot
from .spde import Functional, ModelParams, Scheme, expected_loss

__all__ = [
    "LevelStats",
    "IndexSet",
    "RateModel",
    "EstimatorPlan",
    "EstimateReport",
    "merge_stats",
    "build_triangular_index_set",
    "build_union_index_set",
    "choose_l_star",
    "choose_k0_and_caps",
    "allocate_samples",
    "optimize_alpha",
    "run_mimc",
    "run_mlmc",
    "MimcEstimator",
    "MlmcEstimator",
]


# ---------------------------------------------------------------------------
# per-level statistics


@dataclass(frozen=True)
class LevelStats:
    """Sample statistics of the coupled difference at one level pair."""

    pair: LevelPair
    count: int
    mean: float
    variance: float
    avg_cost: float

    @classmethod
    def from_samples(
        cls, pair: LevelPair, values: np.ndarray, cost_per_sample: float
    ) -> "LevelStats":
        values = np.asarray(values, dtype=float)
        n = len(values)
        if n < 1:
            raise ValueError("need at least one sample")
        var = float(values.var(ddof=1)) if n >= 2 else float("nan")
        return cls(pair, n, float(values.mean()), var, float(cost_per_sample))


def merge_stats(a: LevelStats, b: LevelStats) -> LevelStats:
    """Pool two disjoint sample sets; associative up to rounding."""
    if a.pair != b.pair:
        raise ValueError("cannot merge stats of different level pairs")
    na, nb = a.count, b.count
    n = na + nb
    delta = b.mean - a.mean
    mean = a.mean + delta * nb / n
    m2a = 0.0 if na < 2 else a.variance * (na - 1)
    m2b = 0.0 if nb < 2 else b.variance * (nb - 1)
    m2 = m2a + m2b + delta * delta * na * nb / n
    var = m2 / (n - 1) if n >= 2 else float("nan")
    cost = (a.avg_cost * na + b.avg_cost * nb) / n
    return LevelStats(a.pair, n, mean, var, cost)


# ---------------------------------------------------------------------------
# index sets


@dataclass(frozen=True)
class IndexSet:
    """Finite downward-closed set of level pairs with construction metadata."""

    members: frozenset
    shape: str
    caps: tuple
    detail: tuple = ()

    def __contains__(self, pair) -> bool:
        return pair in self.members

    def __len__(self) -> int:
        return len(self.members)

    def sorted_members(self) -> list:
        return sorted(self.members)

    def is_downward_closed(self) -> bool:
        for p in self.members:
            if p.l1 > 0 and LevelPair(p.l1 - 1, p.l2) not in self.members:
                return False
            if p.l2 > 0 and LevelPair(p.l1, p.l2 - 1) not in self.members:
                return False
        return True


def _downward_closure(pairs: set) -> frozenset:
    closed = set()
    stack = list(pairs)
    while stack:
        p = stack.pop()
        if p in closed:
            continue
        closed.add(p)
        if p.l1 > 0:
            stack.append(LevelPair(p.l1 - 1, p.l2))
        if p.l2 > 0:
            stack.append(LevelPair(p.l1, p.l2 - 1))
    return frozenset(closed)


def build_triangular_index_set(
    w1: float, w2: float, l_star: float, caps: tuple
) -> IndexSet:
    """Triangular set {delta1 l1 + delta2 l2 <= l*} clipped to the caps box.

    (w1, w2) are strictly positive profit-decay weights; deltas are their
    normalization.  The set always contains (0, 0).
    """
    if w1 <= 0 or w2 <= 0:
        raise ValueError("weights must be strictly positive")
    d1 = w1 / (w1 + w2)
    d2 = w2 / (w1 + w2)
    cap1, cap2 = caps
    members = {
        LevelPair(l1, l2)
        for l1 in range(cap1 + 1)
        for l2 in range(cap2 + 1)
        if d1 * l1 + d2 * l2 <= l_star + 1e-12
    }
    members.add(LevelPair(0, 0))
    return IndexSet(
        members=frozenset(members),
        shape="triangular",
        caps=(cap1, cap2),
        detail=(d1, d2, float(l_star)),
    )


def build_union_index_set(
    weights_lower: tuple,
    l_star_lower: float,
    weights_upper: tuple,
    l_star_upper: float,
    caps: tuple,
) -> IndexSet:
    """Union of two triangular pieces split across the diagonal, then closed.

    The lower piece lives on {l1 > l2}, the upper piece on {l1 <= l2}; each
    half uses its own effective profit weights, which is how a variance with
    two leading terms of different orders is accommodated.
    """
    lower = build_triangular_index_set(*weights_lower, l_star_lower, caps)
    upper = build_triangular_index_set(*weights_upper, l_star_upper, caps)
    members = {p for p in lower.members if p.l1 > p.l2}
    members |= {p for p in upper.members if p.l1 <= p.l2}
    members.add(LevelPair(0, 0))
    return IndexSet(
        members=_downward_closure(members),
        shape="union",
        caps=tuple(caps),
        detail=(tuple(weights_lower), float(l_star_lower), tuple(weights_upper), float(l_star_upper)),
    )


def choose_l_star(
    c1_star: float, h0: float, k0: float, alpha: float, epsilon: float
) -> float:
    """Closed-form triangle size from the bias constraint: 2^(-3 l*) ~ eps.

    l* = (1/3) log2( 8 C1* h0^2 k0 / (3 alpha) * eps^-1 ), floored at 0.
    """
    check_epsilon(epsilon)
    val = 8.0 * c1_star * h0 * h0 * k0 / (3.0 * alpha) / epsilon
    return max(0.0, math.log2(val) / 3.0)


def choose_k0_and_caps(
    epsilon: float,
    alpha: float,
    r: float,
    theta: float,
    T: float,
    h0: float,
    c_weak: float = 1.0,
) -> tuple:
    """Base timestep and level caps from the weak-error constraints.

    k0 = T log2(1/theta) / (2 (1+r) log2(1/eps)), rounded down so T/k0 is an
    integer; caps are the smallest integers with modeled cap-tail error below
    (alpha eps)^(1+r).
    """
    check_epsilon(epsilon)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not r > 0.0:
        raise ValueError("r must be positive")
    log_eps = math.log2(1.0 / epsilon)
    if theta <= 0.0:
        k0_raw = T
    else:
        k0_raw = T * math.log2(1.0 / theta) / (2.0 * (1.0 + r) * max(log_eps, 1e-12))
    k0 = T / math.ceil(T / min(k0_raw, T))

    base = 0.5 * (1.0 + r) * (log_eps + math.log2(1.0 / alpha))
    l1_star = max(0, math.ceil(base + 0.5 * math.log2(c_weak * h0 * h0)))
    l2_star = max(0, math.ceil(base + 0.5 * math.log2(c_weak * k0)))
    return k0, l1_star, l2_star


# ---------------------------------------------------------------------------
# rate models


@dataclass(frozen=True)
class RateModel:
    """Calibrated decay/growth model of (E_l, V_l, W_l) for one scheme/functional.

    Interior pairs (both levels positive) are mixed differences:

        E_l ~ c1 * 2^-(m1 l1 + m2 l2)
        V_l ~ c2 * 2^-(v1 l1 + v2 l2)             (separable), or
        V_l ~ c2 * 2^-(2 (l1+l2) + 2 min(l1,l2))  (rectangle functional)
        W_l ~ c3 * 2^+(l1 + 2 l2)

    Boundary rows (l2 = 0 or l1 = 0) are first differences; they follow the
    same decay rates restricted to one direction but carry their own
    constants (c1_space / c1_time, c2_space / c2_time), which are typically
    much larger than the mixed ones and dominate the truncation bias.
    """

    scheme: Scheme
    functional: Functional
    c1: float
    c2: float
    c3: float
    mean_exp: tuple
    var_exp: tuple | None  # None => min-structure variance
    c1_space: float = float("nan")
    c1_time: float = float("nan")
    c2_space: float = float("nan")
    c2_time: float = float("nan")

    @classmethod
    def exponents(cls, scheme: Scheme, functional: Functional) -> tuple:
        scheme = Scheme(scheme)
        functional = Functional(functional)
        if functional is Functional.TRAPEZOIDAL:
            mean_exp = (2.0, 2.0)
            var_exp = (4.0, 4.0) if scheme is Scheme.A else (4.0, 2.0)
        else:
            mean_exp = (1.0, 2.0)
            var_exp = None
        return mean_exp, var_exp

    def _family(self, l1: int, l2: int) -> str:
        if l1 > 0 and l2 > 0:
            return "mixed"
        return "space" if l1 > 0 else "time"

    def mean_log2(self, l1: int, l2: int) -> float:
        fam = self._family(l1, l2)
        const = {
            "mixed": self.c1,
            "space": self.c1_space if math.isfinite(self.c1_space) else self.c1,
            "time": self.c1_time if math.isfinite(self.c1_time) else self.c1,
        }[fam]
        return math.log2(const) - self.mean_exp[0] * l1 - self.mean_exp[1] * l2

    def var_log2(self, l1: int, l2: int) -> float:
        fam = self._family(l1, l2)
        const = {
            "mixed": self.c2,
            "space": self.c2_space if math.isfinite(self.c2_space) else self.c2,
            "time": self.c2_time if math.isfinite(self.c2_time) else self.c2,
        }[fam]
        if self.var_exp is None:
            slope = 2.0 * (l1 + l2) + 2.0 * min(l1, l2)
        else:
            slope = self.var_exp[0] * l1 + self.var_exp[1] * l2
        return math.log2(const) - slope

    def work_log2(self, l1: int, l2: int) -> float:
        return math.log2(self.c3) + l1 + 2.0 * l2

    def profit_log2(self, l1: int, l2: int) -> float:
        if l1 == 0 and l2 == 0:
            return float("inf")
        return self.mean_log2(l1, l2) - 0.5 * (
            self.var_log2(l1, l2) + self.work_log2(l1, l2)
        )

    def mean_abs(self, l1: int, l2: int) -> float:
        return 2.0 ** self.mean_log2(l1, l2)

    def var(self, l1: int, l2: int) -> float:
        return 2.0 ** self.var_log2(l1, l2)

    def work(self, l1: int, l2: int) -> float:
        return 2.0 ** self.work_log2(l1, l2)


def calibrate_rate_model(
    stats: dict,
    scheme: Scheme,
    functional: Functional,
) -> RateModel:
    """Least-squares intercepts of the pilot statistics against the fixed rates.

    The decay rates are pinned by theory; only the constants are fitted, so
    each constant is the mean log2 residual, computed separately for the
    mixed, space-boundary and time-boundary families.  The (0,0) pair carries
    the plain value rather than a difference and is skipped.
    """
    mean_exp, var_exp = RateModel.exponents(scheme, functional)
    r_mean = {"mixed": [], "space": [], "time": []}
    r_var = {"mixed": [], "space": [], "time": []}
    r_work = []
    for pair, st in stats.items():
        l1, l2 = pair.l1, pair.l2
        r_work.append(math.log2(st.avg_cost) - (l1 + 2.0 * l2))
        if l1 == 0 and l2 == 0:
            continue
        fam = "mixed" if (l1 > 0 and l2 > 0) else ("space" if l1 > 0 else "time")
        if st.mean != 0.0 and math.isfinite(st.mean):
            r_mean[fam].append(
                math.log2(abs(st.mean)) + mean_exp[0] * l1 + mean_exp[1] * l2
            )
        if st.variance > 0.0 and math.isfinite(st.variance):
            if var_exp is None:
                slope = 2.0 * (l1 + l2) + 2.0 * min(l1, l2)
            else:
                slope = var_exp[0] * l1 + var_exp[1] * l2
            r_var[fam].append(math.log2(st.variance) + slope)
    if not r_mean["mixed"] or not r_var["mixed"]:
        raise MissingPilot("not enough difference pairs to calibrate rates")

    def _const(res: list, fallback: float = float("nan")) -> float:
        return 2.0 ** float(np.mean(res)) if res else fallback

    return RateModel(
        scheme=Scheme(scheme),
        functional=Functional(functional),
        c1=_const(r_mean["mixed"]),
        c2=_const(r_var["mixed"]),
        c3=2.0 ** float(np.mean(r_work)),
        mean_exp=mean_exp,
        var_exp=var_exp,
        c1_space=_const(r_mean["space"]),
        c1_time=_const(r_mean["time"]),
        c2_space=_const(r_var["space"]),
        c2_time=_const(r_var["time"]),
    )


def plan_index_set(
    model: RateModel,
    caps: tuple,
    bias_budget: float,
    measured: dict | None = None,
) -> IndexSet:
    """Smallest profit-ordered downward-closed set with estimated bias in budget.

    Pairs inside the caps box are added in decreasing modeled profit until the
    sum of excluded mean contributions drops below the budget, then the set is
    closed downward (profit is not monotone for the rectangle functional).
    Where pilot statistics exist, the contribution of a pair is the upper
    confidence bound |mean| + 2 sem, so sampling noise enlarges rather than
    shrinks the set; only the far tail is extrapolated by the rate model.
    Equivalent to the triangular rule when profit level sets are straight
    lines.
    """
    cap1, cap2 = caps
    box = [
        LevelPair(l1, l2) for l1 in range(cap1 + 1) for l2 in range(cap2 + 1)
    ]
    contrib = {
        p: _bias_term(model, p, measured) for p in box if p != LevelPair(0, 0)
    }
    order = sorted(
        box, key=lambda p: (-model.profit_log2(p.l1, p.l2), p.sort_key())
    )
    excluded_bias = sum(contrib.values())
    members: set = set()
    for p in order:
        members.add(p)
        excluded_bias -= contrib.get(p, 0.0)
        if excluded_bias <= bias_budget:
            break
    closed = _downward_closure(members)
    shape = "union" if model.var_exp is None else "triangular"
    return IndexSet(members=closed, shape=shape, caps=tuple(caps))


def _bias_term(model: RateModel, pair: LevelPair, measured: dict | None) -> float:
    """Upper-confidence mean contribution of one pair: |mean| + 2 sem if measured."""
    if measured is not None and pair in measured:
        st = measured[pair]
        sem = (
            math.sqrt(st.variance / st.count)
            if st.count >= 2 and math.isfinite(st.variance)
            else 0.0
        )
        return abs(st.mean) + 2.0 * sem
    return model.mean_abs(pair.l1, pair.l2)


def modeled_bias(
    model: RateModel, index_set: IndexSet, measured: dict | None = None
) -> float:
    """Sum of excluded-level mean contributions inside the caps box."""
    cap1, cap2 = index_set.caps
    total = 0.0
    for l1 in range(cap1 + 1):
        for l2 in range(cap2 + 1):
            p = LevelPair(l1, l2)
            if p not in index_set.members and p != LevelPair(0, 0):
                total += _bias_term(model, p, measured)
    return total


# ---------------------------------------------------------------------------
# allocation and alpha optimization


@dataclass(frozen=True)
class EstimatorPlan:
    """Index set plus per-level sample counts for one accuracy target."""

    index_set: IndexSet
    samples: dict
    alpha: float
    epsilon: float
    k0: float
    constants: tuple = (float("nan"),) * 3

    def total_work(self, work: dict) -> float:
        return sum(self.samples[p] * work[p] for p in self.samples)


def allocate_samples(
    index_set: IndexSet,
    stats: dict,
    epsilon: float,
    alpha: float,
    printed_exponent: bool = False,
) -> EstimatorPlan:
    """Variance-optimal sample counts for the variance budget (1-alpha^2) eps^2.

    M_l = ceil( (1-alpha^2)^-1 eps^-2 (sum sqrt(V W)) sqrt(V_l / W_l) ),
    floored at one sample so every member keeps its telescoping contribution.
    `printed_exponent=True` reproduces the (1-alpha^2)^-2 variant that appears
    in print; the default exponent -1 is the one implied by the variance
    constraint (see the README notes).
    """
    check_epsilon(epsilon)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    for p in index_set.members:
        if p not in stats:
            raise MissingPilot(f"no pilot statistics for {p}")
    vw = {}
    for p in index_set.sorted_members():
        st = stats[p]
        v = st.variance if (st.count >= 2 and math.isfinite(st.variance)) else 0.0
        vw[p] = (max(v, 0.0), st.avg_cost)
    s = sum(math.sqrt(v * w) for v, w in vw.values())
    expo = 2 if printed_exponent else 1
    factor = (1.0 - alpha * alpha) ** (-expo) * epsilon**-2 * s
    samples = {}
    for p, (v, w) in vw.items():
        m = factor * math.sqrt(v / w) if v > 0.0 else 0.0
        samples[p] = max(1, math.ceil(m))
    return EstimatorPlan(
        index_set=index_set, samples=samples, alpha=alpha, epsilon=epsilon, k0=float("nan")
    )


def optimize_alpha(cost_model, epsilon: float | None = None) -> float:
    """Deterministic minimizer of a modeled cost over the error split alpha.

    Scans 99 points on (0.01, 0.99), then refines around the best point.
    """
    grid = np.linspace(0.01, 0.99, 99)
    costs = [cost_model(a) for a in grid]
    i = int(np.argmin(costs))
    lo = grid[max(0, i - 1)]
    hi = grid[min(len(grid) - 1, i + 1)]
    fine = np.linspace(lo, hi, 41)
    fcosts = [cost_model(a) for a in fine]
    return float(fine[int(np.argmin(fcosts))])


# ---------------------------------------------------------------------------
# sampling drivers


def _chunked(count: int, n_steps: int) -> list:
    chunk = max(16, min(count, (1 << 23) // max(n_steps, 1)))
    out = []
    done = 0
    while done < count:
        take = min(chunk, count - done)
        out.append((done, take))
        done += take
    return out


class _Sampler:
    """Collects coupled-difference samples per level with index-keyed streams."""

    def __init__(self, cfg: ExperimentConfig, diagonal: bool):
        self.params = ModelParams(mu=cfg.mu, rho=cfg.rho, T=cfg.T, x0=cfg.x0)
        self.base = BaseMesh(cfg.x_min, cfg.x_max, cfg.h0, cfg.k0_value)
        self.scheme = Scheme(cfg.scheme)
        self.functional = Functional(cfg.functional)
        self.seed = cfg.global_seed
        self.diagonal = diagonal
        self.values: dict = {}
        self.cost: dict = {}

    def ensure(self, pair: LevelPair, count: int) -> None:
        have = len(self.values.get(pair, ()))
        if have >= count:
            return
        grid_fine = self.base.grid(self.params, pair.l1, pair.l2)
        new = []
        for start, take in _chunked(count - have, grid_fine.n_steps):
            if self.diagonal:
                deltas, _, cost = coupling.diagonal_difference_batch(
                    pair.l1, self.params, self.base, self.scheme,
                    self.functional, self.seed, have + start, take,
                )
            else:
                deltas, _, cost = coupling.mixed_difference_batch(
                    pair, self.params, self.base, self.scheme,
                    self.functional, self.seed, have + start, take,
                )
            new.append(deltas)
        self.cost[pair] = cost
        old = self.values.get(pair)
        allv = np.concatenate([old] + new) if old is not None else np.concatenate(new)
        self.values[pair] = allv

    def stats(self, pair: LevelPair, count: int | None = None) -> LevelStats:
        v = self.values[pair]
        if count is not None:
            v = v[:count]
        return LevelStats.from_samples(pair, v, self.cost[pair])

    def work_of(self, pair: LevelPair) -> float:
        return self.cost[pair]


# ---------------------------------------------------------------------------
# reports and end-to-end runs


@dataclass(frozen=True)
class EstimateReport:
    """Final estimate with its error accounting and per-level statistics."""

    value: float
    est_variance: float
    est_bias: float
    total_work: float
    calibration_work: float
    wall_seconds: float
    per_level: tuple
    index_set: IndexSet
    plan: EstimatorPlan
    alpha: float
    epsilon: float
    theta: float
    k0: float
    constants: tuple
    method: str
    scheme: str
    functional: str
    seed: int


def _resolve_k0_caps(cfg: ExperimentConfig, alpha: float, theta: float):
    eps_p = cfg.epsilon_value / cfg.safety
    k0_auto, l1_star, l2_star = choose_k0_and_caps(
        eps_p, alpha, cfg.r, theta, cfg.T, cfg.h0
    )
    if cfg.k0 == "auto":
        k0 = min(k0_auto, cfg.k0_reference)
        k0 = cfg.T / math.ceil(cfg.T / k0)
    else:
        k0 = float(cfg.k0)
    cap1 = min(l1_star, cfg.cap_l1)
    cap2 = min(l2_star, cfg.cap_l2)
    return k0, (cap1, cap2)


def _pilot_pairs(caps: tuple, diag: int, diagonal: bool) -> list:
    cap1, cap2 = caps
    if diagonal:
        return [LevelPair(l, l) for l in range(min(diag, cap1, cap2) + 1)]
    return [
        LevelPair(l1, l2)
        for l1 in range(cap1 + 1)
        for l2 in range(cap2 + 1)
        if l1 + l2 <= diag
    ]


def _mlmc_rate_model(stats: dict, scheme, functional) -> RateModel:
    """Diagonal-level rate model: mean ~ 2^-2l, var ~ 2^-4l, work ~ 2^+3l."""
    r_mean, r_var, r_work = [], [], []
    for pair, st in stats.items():
        level = pair.l1
        r_work.append(math.log2(st.avg_cost) - 3.0 * level)
        if level == 0:
            continue
        if st.mean != 0.0:
            r_mean.append(math.log2(abs(st.mean)) + 2.0 * level)
        if st.variance > 0.0:
            r_var.append(math.log2(st.variance) + 4.0 * level)
    if not r_mean or not r_var:
        raise MissingPilot("not enough pilot levels to calibrate MLMC rates")
    return RateModel(
        scheme=Scheme(scheme),
        functional=Functional(functional),
        c1=2.0 ** float(np.mean(r_mean)),
        c2=2.0 ** float(np.mean(r_var)),
        c3=2.0 ** float(np.mean(r_work)),
        mean_exp=(2.0, 0.0),
        var_exp=(4.0, 0.0),
    )


def _mlmc_plan_levels(
    model: RateModel, cap: int, bias_budget: float, measured: dict | None = None
) -> int:
    """Smallest max level whose estimated tail bias fits the budget."""

    def term(level: int) -> float:
        p = LevelPair(level, level)
        if measured is not None and p in measured:
            return _bias_term(model, p, measured)
        return model.c1 * 2.0 ** (-2.0 * level)

    for l_star in range(cap + 1):
        tail = sum(term(l) for l in range(l_star + 1, cap + 2))
        tail += model.c1 * 2.0 ** (-2.0 * (cap + 1)) / 3.0
        if tail <= bias_budget:
            return l_star
    return cap


def _run_common(cfg: ExperimentConfig, diagonal: bool) -> EstimateReport:
    t0 = time.perf_counter()
    check_rho_stable(cfg.rho)
    check_epsilon(cfg.epsilon_value)
    eps_p = cfg.epsilon_value / cfg.safety

    theta = analysis.compute_theta(cfg.rho, cfg.T, k0=cfg.k0_reference).theta

    alpha0 = 0.5 if cfg.alpha == "auto" else float(cfg.alpha)
    k0, caps = _resolve_k0_caps(cfg, alpha0, theta)
    run_cfg = replace(cfg, k0=k0)

    sampler = _Sampler(run_cfg, diagonal)
    pilot_n = cfg.pilot_samples
    pilot = _pilot_pairs(caps, cfg.pilot_diag, diagonal)
    for p in pilot:
        sampler.ensure(p, pilot_n)
    pilot_stats = {p: sampler.stats(p) for p in pilot}

    if diagonal:
        model = _mlmc_rate_model(pilot_stats, cfg.scheme, cfg.functional)
    else:
        model = calibrate_rate_model(pilot_stats, cfg.scheme, cfg.functional)

    cap_for_model = caps if not diagonal else (min(caps), min(caps))

    def members_for(alpha: float) -> IndexSet:
        budget = alpha * eps_p
        if diagonal:
            l_star = _mlmc_plan_levels(model, min(caps), budget, pilot_stats)
            members = frozenset(LevelPair(l, l) for l in range(l_star + 1))
            return IndexSet(members=members, shape="diagonal", caps=cap_for_model)
        return plan_index_set(model, caps, budget, pilot_stats)

    def cost_model(alpha: float) -> float:
        iset = members_for(alpha)
        s = 0.0
        extra = 0.0
        for p in iset.sorted_members():
            v, w = model.var(p.l1, p.l2), model.work(p.l1, p.l2)
            s += math.sqrt(v * w)
            extra += w
        return (1.0 - alpha * alpha) ** -1 * eps_p**-2 * s * s + extra

    alpha = optimize_alpha(cost_model) if cfg.alpha == "auto" else float(cfg.alpha)
    index_set = members_for(alpha)

    for p in index_set.sorted_members():
        sampler.ensure(p, pilot_n)
    stats = {p: sampler.stats(p) for p in index_set.members}

    plan = allocate_samples(index_set, stats, eps_p, alpha)
    plan = replace(plan, k0=k0, constants=(model.c1, model.c2, model.c3))

    projected = plan.total_work({p: sampler.work_of(p) for p in plan.samples})
    if projected > cfg.max_work_units:
        raise BudgetExceeded(
            f"projected work {projected:.3g} exceeds ceiling {cfg.max_work_units:.3g}"
        )

    for p, m in plan.samples.items():
        sampler.ensure(p, m)

    value = 0.0
    est_var = 0.0
    total_work = 0.0
    calib_work = 0.0
    per_level = []
    for p in index_set.sorted_members():
        m = plan.samples[p]
        st = sampler.stats(p, count=m)
        per_level.append(st)
        value += st.mean
        v = st.variance if (m >= 2 and math.isfinite(st.variance)) else stats[p].variance
        est_var += (v if math.isfinite(v) else 0.0) / m
        total_work += m * sampler.work_of(p)
    for p, vals in sampler.values.items():
        used = plan.samples.get(p, 0)
        calib_work += max(0, len(vals) - used) * sampler.work_of(p)

    if diagonal:
        top = max(p.l1 for p in index_set.members)
        bias = sum(
            _bias_term(model, LevelPair(l, l), pilot_stats)
            if LevelPair(l, l) in pilot_stats
            else model.c1 * 2.0 ** (-2.0 * l)
            for l in range(top + 1, min(caps) + 2)
        )
        bias += model.c1 * 2.0 ** (-2.0 * (min(caps) + 1)) / (1 - 0.25)
    else:
        bias = modeled_bias(model, index_set, pilot_stats)
    bias += (alpha * eps_p) ** (1.0 + cfg.r)

    return EstimateReport(
        value=value,
        est_variance=est_var,
        est_bias=bias,
        total_work=total_work,
        calibration_work=calib_work,
        wall_seconds=time.perf_counter() - t0,
        per_level=tuple(per_level),
        index_set=index_set,
        plan=plan,
        alpha=alpha,
        epsilon=cfg.epsilon_value,
        theta=theta,
        k0=k0,
        constants=(model.c1, model.c2, model.c3),
        method="mlmc" if diagonal else "mimc",
        scheme=str(Scheme(cfg.scheme).value),
        functional=str(Functional(cfg.functional).value),
        seed=cfg.global_seed,
    )


def run_mimc(cfg: ExperimentConfig) -> EstimateReport:
    """Full multi-index run: pilot, calibration, planning, main phase, report."""
    return _run_common(cfg, diagonal=False)


def run_mlmc(cfg: ExperimentConfig) -> EstimateReport:
    """Multilevel run over the diagonal levels (l, l) with the same machinery."""
    return _run_common(cfg, diagonal=True)


# ---------------------------------------------------------------------------
# estimator-style wrappers


class _ConfigEstimator(BaseEstimator):
    """Shared scikit-learn style plumbing: parameters in, fitted report out."""

    _method = "mimc"

    def __init__(
        self,
        epsilon=1e-3,
        scheme="a",
        functional="trap",
        alpha="auto",
        global_seed=0,
        mu=0.081,
        rho=0.2,
        T=5.0,
        x0=5.0,
        x_min=-10.0,
        x_max=20.0,
        h0=1.0,
        k0=0.25,
        safety=3.0,
        pilot_samples=200,
        pilot_diag=3,
        r=0.1,
        cap_l1=10,
        cap_l2=8,
        max_work_units=1e12,
    ):
        self.epsilon = epsilon
        self.scheme = scheme
        self.functional = functional
        self.alpha = alpha
        self.global_seed = global_seed
        self.mu = mu
        self.rho = rho
        self.T = T
        self.x0 = x0
        self.x_min = x_min
        self.x_max = x_max
        self.h0 = h0
        self.k0 = k0
        self.safety = safety
        self.pilot_samples = pilot_samples
        self.pilot_diag = pilot_diag
        self.r = r
        self.cap_l1 = cap_l1
        self.cap_l2 = cap_l2
        self.max_work_units = max_work_units

    def _config(self) -> ExperimentConfig:
        return ExperimentConfig(
            mu=self.mu,
            rho=self.rho,
            T=self.T,
            x0=self.x0,
            x_min=self.x_min,
            x_max=self.x_max,
            h0=self.h0,
            k0=self.k0,
            scheme=self.scheme,
            functional=self.functional,
            method=self._method,
            epsilon=self.epsilon,
            alpha=self.alpha,
            global_seed=self.global_seed,
            safety=self.safety,
            pilot_samples=self.pilot_samples,
            pilot_diag=self.pilot_diag,
            r=self.r,
            cap_l1=self.cap_l1,
            cap_l2=self.cap_l2,
            max_work_units=self.max_work_units,
        )

    def fit(self, X=None, y=None):
        """Run the estimator; sampling is internal, X and y are ignored."""
        runner = run_mlmc if self._method == "mlmc" else run_mimc
        report = runner(self._config())
        self.report_ = report
        self.value_ = report.value
        self.index_set_ = report.index_set
        self.constants_ = report.constants
        return self

    def estimate(self) -> float:
        if not hasattr(self, "value_"):
            self.fit()
        return self.value_


class MimcEstimator(_ConfigEstimator):
    """Multi-index Monte Carlo estimator of the expected loss."""

    _method = "mimc"


class MlmcEstimator(_ConfigEstimator):
    """Multilevel (diagonal) Monte Carlo estimator of the expected loss."""

    _method = "mlmc"
