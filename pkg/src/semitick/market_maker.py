"""Risk-neutral market-making layer: per-side quote gain rates, the greedy
optimal policy, the quoting-premium value solve, closed-form portfolio values,
the a-priori utility bound, and policy backtesting.

The marginal gain rate of quoting the side toward successor ``j`` combines the
small-order flow earning the half-spread against the expected terminal price
with the big-order term earning the post-jump edge.  The published form prices
the half-spread as ``delta - cost`` per unit; the portfolio accounting of the
simulator implies ``price*delta - cost`` instead, and both variants are
available behind ``MarketMakingSpec.portfolio_consistent`` (default off, the
published form).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .hazards import STATES, MarkLayout, SemiMarkovKernel, alpha, equivalent, successors
from .lattice import PriceLattice
from .simulate import (
    NO_EVENT,
    AgentState,
    AlwaysQuotePolicy,
    AskOnlyPolicy,
    BidOnlyPolicy,
    BigJump,
    HoldPolicy,
    MarketState,
    RandomQuotePolicy,
    SmallOrder,
    big_order_fill,
    path_rng,
    small_order_fill,
)
from .solver import GridSpec, ProblemSpec, ValueField, extension_slice, solve_fixed_point

__all__ = [
    "MarketMakingSpec",
    "UnsupportedRiskAversion",
    "QuoteGainSource",
    "quote_gain_rate",
    "OptimalQuotePolicy",
    "optimal_policy",
    "solve_quote_value",
    "total_value",
    "holding_value",
    "value_upper_bound",
    "default_baselines",
    "BacktestRow",
    "BacktestReport",
    "backtest",
    "export_policy_csv",
]

_STATE_INDEX = {s: k for k, s in enumerate(STATES)}


class UnsupportedRiskAversion(ValueError):
    """Only the risk-neutral case has a closed policy; positive aversion is refused."""


@dataclass(frozen=True)
class MarketMakingSpec:
    """Agent parameters: big execution size, fixed per-trade cost, aversion.

    ``portfolio_consistent`` switches the quote gain rate from the published
    per-unit edge ``delta - cost`` to the accounting-consistent
    ``price*delta - cost``.
    """

    big_size: int
    transaction_cost: float
    risk_aversion: float = 0.0
    portfolio_consistent: bool = False

    def __post_init__(self):
        if self.big_size < 1 or int(self.big_size) != self.big_size:
            raise ValueError("big order size must be a positive integer")
        if self.transaction_cost < 0:
            raise ValueError("transaction cost must be >= 0")
        if self.risk_aversion < 0:
            raise ValueError("risk aversion must be >= 0")

    def require_risk_neutral(self, what: str) -> None:
        if self.risk_aversion != 0.0:
            raise UnsupportedRiskAversion(
                f"{what} is only available for zero risk aversion; "
                f"got {self.risk_aversion}"
            )


def _field_values(field: ValueField, t, node: int, i: int, s):
    """Field values for broadcast (t, s) at a fixed lattice node and state."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    ii = _STATE_INDEX[i]
    if field.age_invariant or (s.ndim == 0 and float(s) == 0.0):
        out = np.interp(t, field.t_grid, field.core[:, node, ii])
        return out
    t_b, s_b = np.broadcast_arrays(t, s)
    if field.full is not None and np.all(s_b <= field.s_grid[-1] + 1e-12):
        si = np.clip(np.searchsorted(field.s_grid, s_b) - 1, 0, len(field.s_grid) - 2)
        s0 = field.s_grid[si]
        s1 = field.s_grid[si + 1]
        wgt = np.where(s1 > s0, (s_b - s0) / np.where(s1 > s0, s1 - s0, 1.0), 0.0)
        flat_si = si.ravel()
        lo = np.empty(t_b.size)
        hi = np.empty(t_b.size)
        for q, (tv, sv) in enumerate(zip(t_b.ravel(), flat_si)):
            lo[q] = np.interp(tv, field.t_grid, field.full[:, node, ii, sv])
            hi[q] = np.interp(tv, field.t_grid, field.full[:, node, ii, sv + 1])
        out = (1.0 - wgt.ravel()) * lo + wgt.ravel() * hi
        return out.reshape(t_b.shape)
    out = np.array(
        [field.eval_node(tv, node, i, sv) for tv, sv in zip(t_b.ravel(), s_b.ravel())]
    )
    return out.reshape(t_b.shape)


class QuoteGainSource:
    """Per-side quote gain rates and the running source sum(max(rate, 0)).

    Serves two callers: grid slabs for the quoting-premium solve (reusing one
    expected-price extension slice per distinct age) and pointwise evaluation
    along simulated paths.
    """

    def __init__(
        self,
        kernel: SemiMarkovKernel,
        layout: MarkLayout,
        mmspec: MarketMakingSpec,
        price_field: ValueField,
    ):
        if layout.max_units != mmspec.big_size:
            raise ValueError(
                f"layout trades up to {layout.max_units} units but the agent "
                f"spec says big size {mmspec.big_size}"
            )
        self.kernel = kernel
        self.layout = layout
        self.mmspec = mmspec
        self.field = price_field
        self.lattice = price_field.lattice
        self._slice_cache: dict[float, np.ndarray] = {}
        self._locate_cache: dict[float, int] = {}
        self._rate_columns = None
        self._img = {
            +1: self.lattice.image_maps(+1),
            -1: self.lattice.image_maps(-1),
        }
        # age-zero expected price at the jump image, per (direction, target state)
        self._img_core = {}
        for i in STATES:
            for j in successors(i):
                d = alpha(j)
                key = (d, j)
                if key not in self._img_core:
                    idx, scale = self._img[d]
                    self._img_core[key] = price_field.core[:, idx, _STATE_INDEX[j]] * scale[None, :]

    def _price_slice(self, age: float) -> np.ndarray:
        """Expected-price values on the (time, node, state) grid at one age."""
        if self.field.age_invariant or age == 0.0:
            return self.field.core
        key = round(float(age), 12)
        if key not in self._slice_cache:
            self._slice_cache[key] = extension_slice(self.field, age)
        return self._slice_cache[key]

    def _edge(self, prices: np.ndarray):
        if self.mmspec.portfolio_consistent:
            return prices * self.kernel.delta - self.mmspec.transaction_cost
        return self.kernel.delta - self.mmspec.transaction_cost

    def gain_rates_at_age(self, age: float) -> dict:
        """Gain-rate arrays (time, node) for every transition (i, j) at one age."""
        pi_slice = self._price_slice(age)
        prices = self.lattice.prices[None, :]
        edge = self._edge(prices)
        big = self.mmspec.big_size
        out = {}
        for i in STATES:
            ii = _STATE_INDEX[i]
            for j in successors(i):
                d = alpha(j)
                flow = self.layout.side_flow(d).value(age) * self.layout.mean_size(d)
                h_dir = (
                    self.kernel.continuation.value(age)
                    if alpha(i) == d
                    else self.kernel.reversal.value(age)
                )
                small = flow * (d * (prices - pi_slice[:, :, ii]) + edge)
                large = h_dir * big * (d * (prices - self._img_core[(d, j)]) + edge)
                out[(i, j)] = small + large
        return out

    def slab(self, d: int, sigma: float) -> np.ndarray:
        """Source values at every (time node >= d, lattice node, state)."""
        h = self.field.t_grid[1] - self.field.t_grid[0]
        age = sigma + d * h
        rates = self.gain_rates_at_age(age)
        n_t = len(self.field.t_grid) - 1
        out = np.zeros((n_t + 1 - d, self.lattice.n_nodes, len(STATES)))
        for i in STATES:
            ii = _STATE_INDEX[i]
            for j in successors(i):
                out[:, :, ii] += np.maximum(rates[(i, j)][d:], 0.0)
        return out

    def _locate(self, p: float) -> int:
        node = self._locate_cache.get(p)
        if node is None:
            node = self.lattice.locate(p)
            self._locate_cache[p] = node
        return node

    def rate_point(self, t, p: float, i: int, s, j: int):
        """Gain rate of quoting toward ``j``; broadcasts over t and s."""
        if equivalent(i, j):
            raise ValueError(f"invalid transition {i} -> {j}: states are equivalent")
        d = alpha(j)
        node = self._locate(p)
        s_arr = np.asarray(s, dtype=float)
        pi_here = _field_values(self.field, t, node, i, s_arr)
        idx, scale = self._img[d]
        pi_img = (
            np.interp(np.asarray(t, dtype=float), self.field.t_grid,
                      self.field.core[:, idx[node], _STATE_INDEX[j]])
            * scale[node]
        )
        edge = self._edge(np.asarray(p, dtype=float))
        flow = self.layout.side_flow(d).value(s_arr) * self.layout.mean_size(d)
        h_dir = (
            self.kernel.continuation.value(s_arr)
            if alpha(i) == d
            else self.kernel.reversal.value(s_arr)
        )
        small = flow * (d * (p - pi_here) + edge)
        large = h_dir * self.mmspec.big_size * (d * (p - pi_img) + edge)
        return small + large

    def _memoryless_rate_columns(self):
        # with flat hazards and flat flow the gain rates are age free and
        # affine in the core columns, so their grid values interpolate exactly
        if self._rate_columns is None:
            self._rate_columns = self.gain_rates_at_age(0.0)
        return self._rate_columns

    def __call__(self, t, p, i: int, s):
        """Running source: sum over successors of max(gain rate, 0)."""
        p_arr = np.asarray(p, dtype=float)
        if p_arr.ndim > 0:
            cols = [self.__call__(t, pv, i, s) for pv in p_arr]
            return np.stack([np.asarray(c, dtype=float) for c in cols], axis=-1)
        if self.field.age_invariant and self.layout.is_memoryless:
            node = self._locate(float(p_arr))
            t_arr = np.asarray(t, dtype=float)
            cols = self._memoryless_rate_columns()
            total = None
            for j in successors(i):
                r = np.maximum(
                    np.interp(t_arr, self.field.t_grid, cols[(i, j)][:, node]), 0.0
                )
                total = r if total is None else total + r
            return np.broadcast_to(total, np.broadcast_shapes(t_arr.shape, np.shape(s))).copy() if np.ndim(s) else total
        total = None
        for j in successors(i):
            r = np.maximum(self.rate_point(t, float(p_arr), i, s, j), 0.0)
            total = r if total is None else total + r
        return total


def quote_gain_rate(
    kernel: SemiMarkovKernel,
    layout: MarkLayout,
    mmspec: MarketMakingSpec,
    price_field: ValueField,
    t: float,
    p: float,
    i: int,
    s: float,
    j: int,
) -> float:
    """Marginal expected gain rate of quoting the side toward successor ``j``."""
    if price_field is None:
        raise ValueError("expected-price field must be solved first")
    source = QuoteGainSource(kernel, layout, mmspec, price_field)
    return float(source.rate_point(t, p, i, s, j))


@dataclass
class OptimalQuotePolicy:
    """Quote a side exactly when its gain rate is strictly positive.

    The ask bit follows the successor moving the price up, the bid bit the
    one moving it down; a zero rate leaves the side unquoted.
    """

    source: QuoteGainSource
    name: str = "optimal"

    def __call__(self, t: float, p: float, i: int, s: float) -> tuple[int, int]:
        l_ask = l_bid = 0
        for j in successors(i):
            rate = float(self.source.rate_point(t, p, i, s, j))
            if alpha(j) > 0:
                l_ask = int(rate > 0.0)
            else:
                l_bid = int(rate > 0.0)
        return (l_ask, l_bid)


def optimal_policy(
    kernel: SemiMarkovKernel,
    layout: MarkLayout,
    mmspec: MarketMakingSpec,
    price_field: ValueField,
) -> OptimalQuotePolicy:
    mmspec.require_risk_neutral("the optimal quoting policy")
    return OptimalQuotePolicy(QuoteGainSource(kernel, layout, mmspec, price_field))


def solve_quote_value(
    kernel: SemiMarkovKernel,
    layout: MarkLayout,
    mmspec: MarketMakingSpec,
    price_field: ValueField,
    grid: Optional[GridSpec] = None,
) -> ValueField:
    """Expected optimal quoting premium: zero payoff, source sum(max(rate, 0)).

    Shares the expected-price field's time grid and lattice so the source can
    be assembled from cached extension slices.  The result is nonnegative and
    vanishes at the horizon.
    """
    mmspec.require_risk_neutral("the quoting premium")
    n_t = len(price_field.t_grid) - 1
    if grid is None:
        grid = GridSpec(n_t=n_t, n_max=price_field.lattice.n_max)
    if grid.n_t != n_t or (grid.n_max or price_field.lattice.n_max) != price_field.lattice.n_max:
        raise ValueError("quote-value grid must match the expected-price grid")
    if grid.n_max is None:
        grid = GridSpec(
            n_t=grid.n_t,
            n_s=grid.n_s,
            n_max=price_field.lattice.n_max,
            s_max=grid.s_max,
            tol_fp=grid.tol_fp,
            tail_tol=grid.tail_tol,
            max_iter=grid.max_iter,
        )
    source = QuoteGainSource(kernel, layout, mmspec, price_field)
    problem = ProblemSpec(g=lambda p: np.zeros_like(np.asarray(p, dtype=float)), w=source)
    fld = solve_fixed_point(
        kernel, problem, grid, price_field.horizon, price_field.lattice.p0,
        source_slab=source.slab,
        lattice=price_field.lattice,
    )
    fld.age_invariant = layout.is_memoryless
    return fld


def total_value(
    price_field: ValueField,
    quote_field: ValueField,
    t: float,
    p: float,
    i: int,
    s: float,
    x: float,
    y: float,
) -> float:
    """Risk-neutral optimal portfolio value: cash + inventory marked at the
    expected terminal price + the quoting premium."""
    return x + y * price_field.eval(t, p, i, s) + quote_field.eval(t, p, i, s)


def holding_value(
    price_field: ValueField,
    t: float,
    p: float,
    i: int,
    s: float,
    x: float,
    y: float,
    risk_aversion: float = 0.0,
) -> float:
    """Value of never quoting again: cash + marked inventory - aversion * y**2."""
    return x + y * price_field.eval(t, p, i, s) - risk_aversion * y * y


def value_upper_bound(
    mmspec: MarketMakingSpec,
    kernel: SemiMarkovKernel,
    layout: MarkLayout,
    t: float,
    p: float,
    x: float,
    y: float,
    horizon: float,
) -> float:
    """A-priori bound on the achievable expected portfolio value.

    Every fill improves the portfolio by at most K*(p*delta + cost) at the
    then-current price, and fills are dominated by a Poisson stream with rate
    2*(K+1)*max(intensity bounds).  At zero tick size the geometric factor
    degenerates and the bound is reported in its series-limit form.
    """
    tau = horizon - t
    if tau < 0:
        raise ValueError("evaluation time is beyond the horizon")
    big = mmspec.big_size
    c = 2.0 * (big + 1) * max(kernel.intensity_bound, layout.flow_bound)
    delta = kernel.delta
    if delta > 0:
        growth = big * p * (1.0 + delta) / delta * math.expm1(c * tau * delta)
    else:
        growth = big * p * (1.0 + delta) * c * tau
    return x + y * p + growth + big * c * tau * mmspec.transaction_cost


def default_baselines(random_seed: int = 7) -> list:
    """The fixed comparison set: hold, both sides, each single side, a coin flip."""
    return [
        HoldPolicy(),
        AlwaysQuotePolicy(),
        AskOnlyPolicy(),
        BidOnlyPolicy(),
        RandomQuotePolicy(prob=0.5, seed=random_seed),
    ]


@dataclass(frozen=True)
class BacktestRow:
    policy: str
    mean: float
    se: float
    n_paths: int


@dataclass
class BacktestReport:
    rows: list[BacktestRow]
    upper_bound: float
    horizon: float
    seed: int
    risk_aversion: float

    def row(self, name: str) -> BacktestRow:
        for r in self.rows:
            if r.policy == name:
                return r
        raise KeyError(name)

    def to_csv(self, path, header_meta: Optional[dict] = None) -> None:
        with open(path, "w") as fh:
            meta = {"seed": self.seed, "upper_bound": self.upper_bound}
            if header_meta:
                meta.update(header_meta)
            fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
            fh.write("policy,mean,se,n_paths,upper_bound\n")
            for r in self.rows:
                fh.write(
                    f"{r.policy},{float(r.mean)!r},{float(r.se)!r},{r.n_paths},"
                    f"{float(self.upper_bound)!r}\n"
                )

    def to_json(self, path=None):
        payload = {
            "seed": self.seed,
            "horizon": self.horizon,
            "risk_aversion": self.risk_aversion,
            "upper_bound": self.upper_bound,
            "rows": [
                {"policy": r.policy, "mean": r.mean, "se": r.se, "n_paths": r.n_paths}
                for r in self.rows
            ],
        }
        if path is None:
            return payload
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        return payload


def backtest(
    policies: Sequence,
    kernel: SemiMarkovKernel,
    layout: MarkLayout,
    mmspec: MarketMakingSpec,
    initial_market: MarketState,
    initial_agent: AgentState,
    horizon: float,
    n_paths: int,
    seed: int,
) -> BacktestReport:
    """Monte-Carlo comparison of terminal utility across policies.

    All policies are replayed against the same market realisations (the
    market ignores the agent, so the event stream is policy independent);
    this shares the randomness and sharpens the comparison.  Per-path streams
    are derived from (seed, path index) and aggregation is pairwise, so the
    table does not depend on execution order.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    width = layout.mark_domain
    delta = kernel.delta
    cost = mmspec.transaction_cost
    big = layout.max_units
    eta = mmspec.risk_aversion
    values = np.empty((len(policies), n_paths))
    for idx in range(n_paths):
        rng = path_rng(seed, idx)
        t, p, i, s = (
            0.0,
            initial_market.price,
            initial_market.state,
            initial_market.age,
        )
        events = []
        while True:
            gap = rng.exponential(1.0 / width)
            if t + gap > horizon:
                break
            t += gap
            s += gap
            z = rng.uniform(0.0, width)
            tag = layout.classify(i, s, z)
            if tag is NO_EVENT:
                continue
            events.append((t, tag, p, i, s))
            if isinstance(tag, BigJump):
                p = p * (1.0 + delta * alpha(tag.target))
                i, s = tag.target, 0.0
        p_terminal = p
        for pi_idx, policy in enumerate(policies):
            x, y = initial_agent.cash, initial_agent.inventory
            for (tv, tag, p_pre, i_pre, s_pre) in events:
                l_ask, l_bid = policy(tv, p_pre, i_pre, s_pre)
                if isinstance(tag, SmallOrder):
                    quoted = l_ask if tag.side > 0 else l_bid
                    d_cash, d_inv, _ = small_order_fill(
                        tag.side, tag.units, p_pre, delta, cost, quoted
                    )
                else:
                    quoted = l_ask if alpha(tag.target) > 0 else l_bid
                    d_cash, d_inv, _ = big_order_fill(
                        tag.target, big, p_pre, delta, cost, quoted
                    )
                x += d_cash
                y += d_inv
            values[pi_idx, idx] = x + p_terminal * y - eta * y * y
    rows = []
    for pi_idx, policy in enumerate(policies):
        name = getattr(policy, "name", type(policy).__name__)
        mean = float(np.sum(values[pi_idx]) / n_paths)
        if n_paths > 1:
            se = float(np.std(values[pi_idx], ddof=1) / math.sqrt(n_paths))
        else:
            se = 0.0
        rows.append(BacktestRow(policy=name, mean=mean, se=se, n_paths=n_paths))
    bound = value_upper_bound(
        mmspec,
        kernel,
        layout,
        0.0,
        initial_market.price,
        initial_agent.cash,
        initial_agent.inventory,
        horizon,
    )
    return BacktestReport(
        rows=rows,
        upper_bound=bound,
        horizon=horizon,
        seed=seed,
        risk_aversion=eta,
    )


def export_policy_csv(
    path,
    kernel: SemiMarkovKernel,
    layout: MarkLayout,
    mmspec: MarketMakingSpec,
    price_field: ValueField,
    s_values: Optional[Sequence[float]] = None,
    header_meta: Optional[dict] = None,
) -> None:
    """Quote bits on the grid as (t, p, i, s, ask bit, bid bit) rows."""
    mmspec.require_risk_neutral("the optimal quoting policy")
    source = QuoteGainSource(kernel, layout, mmspec, price_field)
    if s_values is None:
        s_values = [0.0] if price_field.s_grid is None else list(
            np.linspace(0.0, price_field.s_grid[-1], 5)
        )
    with open(path, "w") as fh:
        meta = {"p0": price_field.lattice.p0, "delta": kernel.delta}
        if header_meta:
            meta.update(header_meta)
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        fh.write("t,p,i,s,quote_ask,quote_bid\n")
        prices = price_field.lattice.prices
        keep = np.nonzero(price_field.lattice.report_mask)[0]
        for s in s_values:
            rates = source.gain_rates_at_age(float(s))
            for i in STATES:
                bits = {}
                for j in successors(i):
                    bits[alpha(j)] = rates[(i, j)] > 0.0
                for ki, t in enumerate(price_field.t_grid):
                    for n in keep:
                        fh.write(
                            f"{float(t)!r},{float(prices[n])!r},{i},{float(s)!r},"
                            f"{int(bits[1][ki, n])},{int(bits[-1][ki, n])}\n"
                        )
