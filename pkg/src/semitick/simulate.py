"""Exact simulation of the tick-price triple (price, direction state, age)
and of the controlled quintuple including the agent's cash and inventory.

Two independent mechanisms are provided:

* renewal sampling: inverse-CDF holding times plus categorical transitions,
* thinning: a dominating homogeneous Poisson stream on the time axis with
  uniform marks resolved through the mark-interval layout.

Both produce the same law for (price, state, age); the thinning route also
carries the small-order events needed for controlled runs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .hazards import (
    NO_EVENT,
    BigJump,
    MarkLayout,
    SemiMarkovKernel,
    SmallOrder,
    alpha,
    successors,
)

__all__ = [
    "MarketState",
    "AgentState",
    "JumpEvent",
    "Path",
    "path_rng",
    "sample_holding",
    "sample_transition",
    "simulate_price_path",
    "simulate_price_path_thinning",
    "simulate_controlled_path",
    "HoldPolicy",
    "AlwaysQuotePolicy",
    "AskOnlyPolicy",
    "BidOnlyPolicy",
    "RandomQuotePolicy",
]

_BISECTION_STEPS = 100


@dataclass(frozen=True)
class MarketState:
    """Mid-price, direction state, and age (time since the last big jump)."""

    price: float
    state: int
    age: float

    def __post_init__(self):
        if self.price <= 0:
            raise ValueError(f"price must be > 0, got {self.price}")
        if self.state not in (1, 2, 3, 4):
            raise ValueError(f"state must be in {{1,2,3,4}}, got {self.state}")
        if self.age < 0:
            raise ValueError(f"age must be >= 0, got {self.age}")


@dataclass(frozen=True)
class AgentState:
    """Cash and signed integer inventory of the market maker."""

    cash: float = 0.0
    inventory: int = 0


@dataclass(frozen=True)
class JumpEvent:
    """One Poisson event with full provenance.

    ``executed_units`` is zero whenever the agent did not quote the executed
    side (or the run is uncontrolled).  ``price_at_execution`` is the price
    the traded units changed hands at, None when nothing was executed.
    """

    time: float
    kind: object  # BigJump or SmallOrder
    executed_units: int
    price_at_execution: Optional[float]
    market_before: MarketState
    market_after: MarketState
    agent_before: Optional[AgentState] = None
    agent_after: Optional[AgentState] = None
    control: Optional[tuple[int, int]] = None


@dataclass
class Path:
    """Ordered jump events of one simulated run plus terminal bookkeeping."""

    initial_market: MarketState
    horizon: float
    events: list[JumpEvent] = field(default_factory=list)
    terminal_market: Optional[MarketState] = None
    initial_agent: Optional[AgentState] = None
    terminal_agent: Optional[AgentState] = None
    seed: object = None
    method: str = "renewal"
    n_candidates: int = 0

    def big_jumps(self) -> list[JumpEvent]:
        return [e for e in self.events if isinstance(e.kind, BigJump)]

    def small_orders(self) -> list[JumpEvent]:
        return [e for e in self.events if isinstance(e.kind, SmallOrder)]

    @property
    def jump_count(self) -> int:
        return len(self.big_jumps())

    def holding_times(self, complete_only: bool = True) -> list[float]:
        """Durations between consecutive big jumps.

        The stretch before the first jump is included only when the run
        started at age zero (otherwise its law is the conditional one), and
        the censored stretch after the last jump is dropped when
        ``complete_only``.
        """
        jumps = self.big_jumps()
        times = [e.time for e in jumps]
        out = []
        if self.initial_market.age == 0.0 and times:
            out.append(times[0])
        out.extend(np.diff(times).tolist())
        if not complete_only:
            last = times[-1] if times else 0.0
            out.append(self.horizon - last + (0.0 if times else self.initial_market.age))
        return out

    def summary(self) -> dict:
        term = self.terminal_market
        d = {
            "horizon": self.horizon,
            "method": self.method,
            "seed": str(self.seed),
            "n_events": len(self.events),
            "n_big_jumps": self.jump_count,
            "n_small_orders": len(self.small_orders()),
            "terminal_price": term.price if term else None,
            "terminal_state": term.state if term else None,
            "terminal_age": term.age if term else None,
        }
        if self.terminal_agent is not None:
            d["terminal_cash"] = self.terminal_agent.cash
            d["terminal_inventory"] = self.terminal_agent.inventory
        return d

    def to_csv(self, path, header_meta: Optional[dict] = None) -> None:
        """One event per row; lines starting with '#' carry reproducibility metadata."""
        with open(path, "w") as fh:
            meta = {"seed": str(self.seed), "method": self.method}
            if header_meta:
                meta.update(header_meta)
            fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
            fh.write(
                "time,kind,target_or_side,units,price_before,price_after,"
                "age_before,cash_after,inventory_after,quote_ask,quote_bid\n"
            )
            for e in self.events:
                if isinstance(e.kind, BigJump):
                    kind, tag, units = "big", e.kind.target, e.executed_units
                else:
                    kind, tag, units = "small", e.kind.side, e.executed_units
                agent = e.agent_after
                ctrl = e.control if e.control is not None else ("", "")
                fh.write(
                    f"{float(e.time)!r},{kind},{tag},{units},"
                    f"{float(e.market_before.price)!r},{float(e.market_after.price)!r},"
                    f"{float(e.market_before.age)!r},"
                    f"{'' if agent is None else repr(float(agent.cash))},"
                    f"{'' if agent is None else agent.inventory},"
                    f"{ctrl[0]},{ctrl[1]}\n"
                )


def path_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent per-path stream derived from (master seed, path index).

    Seeding by the pair makes ensembles independent of execution order, so
    serial and parallel runs agree path by path.
    """
    return np.random.default_rng([int(master_seed), int(index)])


def _uniform_open(rng: np.random.Generator) -> float:
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return u


def sample_holding(kernel: SemiMarkovKernel, s0: float, u: float) -> float:
    """Waiting time w > 0 with conditional law F given current age ``s0``.

    Solves (F(s0+w) - F(s0)) / (1 - F(s0)) = u.  Flat total intensity gives
    the closed exponential form; otherwise the monotone integrated intensity
    is inverted by bracketed bisection (robust, the target is exact in
    log-survival space).
    """
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie strictly inside (0, 1), got {u}")
    if s0 < 0:
        raise ValueError("current age must be nonnegative")
    target = -math.log1p(-u)  # integrated intensity the increment must accrue
    if kernel.is_memoryless:
        return target / kernel.total_intensity(0.0)
    lam0 = kernel.integrated_intensity(s0)

    def gap(w: float) -> float:
        return kernel.integrated_intensity(s0 + w) - lam0 - target

    hi = 1.0 / max(kernel.total_intensity(s0), 1e-12)
    while gap(hi) < 0.0:
        hi *= 2.0
    lo = 0.0
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sample_transition(kernel: SemiMarkovKernel, i: int, y: float, u: float) -> int:
    """Next state after a holding of length ``y``, drawn with a uniform ``u``.

    Successors are enumerated in increasing order and the draw is resolved
    against their cumulative transition probabilities.
    """
    succ, weights = kernel.transition_weights(i, y)
    return succ[0] if u < weights[0] else succ[1]


def _price_after(p: float, delta: float, j: int) -> float:
    return p * (1.0 + delta * alpha(j))


def simulate_price_path(
    kernel: SemiMarkovKernel,
    initial: MarketState,
    horizon: float,
    seed,
) -> Path:
    """Renewal construction of the uncontrolled path on [0, horizon]."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    path = Path(initial_market=initial, horizon=horizon, seed=seed, method="renewal")
    t, p, i, s = 0.0, initial.price, initial.state, initial.age
    while True:
        w = sample_holding(kernel, s, _uniform_open(rng))
        if t + w > horizon:
            path.terminal_market = MarketState(p, i, s + (horizon - t))
            return path
        t += w
        age_at_jump = s + w
        j = sample_transition(kernel, i, age_at_jump, rng.random())
        before = MarketState(p, i, age_at_jump)
        p = _price_after(p, kernel.delta, j)
        after = MarketState(p, j, 0.0)
        path.events.append(
            JumpEvent(
                time=t,
                kind=BigJump(j),
                executed_units=0,
                price_at_execution=None,
                market_before=before,
                market_after=after,
            )
        )
        i, s = j, 0.0


def simulate_price_path_thinning(
    kernel: SemiMarkovKernel,
    layout: MarkLayout,
    initial: MarketState,
    horizon: float,
    seed,
) -> Path:
    """Thinning construction: dominating Poisson stream plus uniform marks.

    Candidate points arrive at the constant dominating rate; each carries a
    mark uniform on the dominating width and is resolved through the interval
    layout at the current age.  Distributionally equivalent to the renewal
    construction for (price, state, age).
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    width = layout.mark_domain
    path = Path(initial_market=initial, horizon=horizon, seed=seed, method="thinning")
    t, p, i, s = 0.0, initial.price, initial.state, initial.age
    while True:
        gap = rng.exponential(1.0 / width)
        if t + gap > horizon:
            path.terminal_market = MarketState(p, i, s + (horizon - t))
            return path
        t += gap
        s += gap
        path.n_candidates += 1
        z = rng.uniform(0.0, width)
        tag = layout.classify(i, s, z)
        if tag is NO_EVENT:
            continue
        before = MarketState(p, i, s)
        if isinstance(tag, BigJump):
            p = _price_after(p, kernel.delta, tag.target)
            i, s = tag.target, 0.0
        after = MarketState(p, i, s)
        path.events.append(
            JumpEvent(
                time=t,
                kind=tag,
                executed_units=0,
                price_at_execution=None,
                market_before=before,
                market_after=after,
            )
        )


def small_order_fill(
    side: int, units: int, price: float, delta: float, cost: float, quoted: int
) -> tuple[float, int, Optional[float]]:
    """Cash/inventory change when a small order on ``side`` meets the agent.

    With the side quoted, ``units`` trade at price*(1 + side*delta) and the
    fixed cost is paid: cash changes by side*units*(exec_price - side*cost),
    inventory by -side*units.
    """
    if not quoted or units == 0:
        return 0.0, 0, None
    exec_price = price * (1.0 + side * delta)
    d_cash = side * units * (exec_price - side * cost)
    return d_cash, -side * units, exec_price


def big_order_fill(
    j: int, big_units: int, price: float, delta: float, cost: float, quoted: int
) -> tuple[float, int, Optional[float]]:
    """Cash/inventory change when a big order (jump into ``j``) meets the agent.

    The executed side is the direction of the jump; ``big_units`` trade at the
    post-jump price price*(1 + delta*alpha(j)), evaluated at the pre-jump
    mid-price ``price``.
    """
    a = alpha(j)
    if not quoted:
        return 0.0, 0, None
    exec_price = price * (1.0 + delta * a)
    d_cash = a * big_units * (exec_price - a * cost)
    return d_cash, -a * big_units, exec_price


def simulate_controlled_path(
    kernel: SemiMarkovKernel,
    layout: MarkLayout,
    policy: Callable[[float, float, int, float], tuple[int, int]],
    initial_market: MarketState,
    initial_agent: AgentState,
    horizon: float,
    seed,
    transaction_cost: float = 0.0,
) -> Path:
    """Controlled run: the policy is evaluated at left limits for every event.

    Big orders execute the layout's maximal size on the jump side; small
    orders execute their drawn size on their own side, in both cases only
    when the corresponding quote bit is set.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if transaction_cost < 0:
        raise ValueError("transaction cost must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    width = layout.mark_domain
    big_units = layout.max_units
    path = Path(
        initial_market=initial_market,
        horizon=horizon,
        seed=seed,
        method="thinning",
        initial_agent=initial_agent,
    )
    t, p, i, s = 0.0, initial_market.price, initial_market.state, initial_market.age
    x, y = initial_agent.cash, initial_agent.inventory
    while True:
        gap = rng.exponential(1.0 / width)
        if t + gap > horizon:
            path.terminal_market = MarketState(p, i, s + (horizon - t))
            path.terminal_agent = AgentState(x, y)
            return path
        t += gap
        s += gap
        path.n_candidates += 1
        z = rng.uniform(0.0, width)
        tag = layout.classify(i, s, z)
        if tag is NO_EVENT:
            continue
        l_ask, l_bid = policy(t, p, i, s)
        before_m = MarketState(p, i, s)
        before_a = AgentState(x, y)
        if isinstance(tag, SmallOrder):
            quoted = l_ask if tag.side > 0 else l_bid
            d_cash, d_inv, exec_price = small_order_fill(
                tag.side, tag.units, p, kernel.delta, transaction_cost, quoted
            )
            executed = tag.units if (quoted and tag.units) else 0
        else:
            quoted = l_ask if alpha(tag.target) > 0 else l_bid
            d_cash, d_inv, exec_price = big_order_fill(
                tag.target, big_units, p, kernel.delta, transaction_cost, quoted
            )
            executed = big_units if quoted else 0
            p = _price_after(p, kernel.delta, tag.target)
            i, s = tag.target, 0.0
        x += d_cash
        y += d_inv
        path.events.append(
            JumpEvent(
                time=t,
                kind=tag,
                executed_units=executed,
                price_at_execution=exec_price,
                market_before=before_m,
                market_after=MarketState(p, i, s),
                agent_before=before_a,
                agent_after=AgentState(x, y),
                control=(l_ask, l_bid),
            )
        )


# -- built-in policies ----------------------------------------------------


@dataclass(frozen=True)
class HoldPolicy:
    """Never quote."""

    name: str = "hold"

    def __call__(self, t, p, i, s):
        return (0, 0)


@dataclass(frozen=True)
class AlwaysQuotePolicy:
    """Quote both sides at all times."""

    name: str = "always_quote"

    def __call__(self, t, p, i, s):
        return (1, 1)


@dataclass(frozen=True)
class AskOnlyPolicy:
    name: str = "ask_only"

    def __call__(self, t, p, i, s):
        return (1, 0)


@dataclass(frozen=True)
class BidOnlyPolicy:
    name: str = "bid_only"

    def __call__(self, t, p, i, s):
        return (0, 1)


def _mix_bits(*values: int) -> int:
    h = hashlib.blake2b(digest_size=8)
    for v in values:
        h.update((int(v) & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RandomQuotePolicy:
    """Seeded coin flips per side, a pure function of (t, p, i, s, seed).

    Hash based rather than stateful so the rule stays predictable and
    identical across replays of the same path.
    """

    prob: float = 0.5
    seed: int = 0
    name: str = "random"

    def __call__(self, t, p, i, s):
        base = _mix_bits(
            self.seed,
            np.float64(t).view(np.int64),
            np.float64(p).view(np.int64),
            i,
            np.float64(s).view(np.int64),
        )
        u_ask = ((base >> 11) & ((1 << 53) - 1)) / float(1 << 53)
        u_bid = (_mix_bits(base, 1) >> 11 & ((1 << 53) - 1)) / float(1 << 53)
        return (int(u_ask < self.prob), int(u_bid < self.prob))
