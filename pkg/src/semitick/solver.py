"""Fixed-point solver for the terminal value problem of the tick-price model.

The value of a terminal payoff g plus a running source w solves an integral
fixed-point equation whose unknown enters only through its age-zero slices.
Picard iteration therefore runs on a core array indexed by (time node, price
lattice node, direction state); the full age dependence is recovered
afterwards by a single application of the operator at each requested age.

Quadrature along the time axis is composite Simpson on the uniform grid, with
the leading interval of odd-length rows handled by a Simpson step whose
midpoint value is linearly interpolated.  All weights are folded into
triangular kernel matrices built once per solve, so one Picard sweep costs a
handful of matrix products.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .hazards import STATES, SemiMarkovKernel, alpha, successors
from .lattice import PriceLattice, max_jumps_for_tail

__all__ = [
    "GridSpec",
    "ProblemSpec",
    "ValueField",
    "ResidualStats",
    "SolverError",
    "ConvergenceError",
    "apply_age_zero_operator",
    "solve_fixed_point",
    "extension_slice",
    "extend_to_age",
    "solve_expected_price",
    "expected_price_ode_oracle",
    "contraction_bound",
    "pde_residual",
    "save_field_csv",
    "load_field_csv",
]

_STATE_INDEX = {s: k for k, s in enumerate(STATES)}


class SolverError(RuntimeError):
    """Raised when the operator produces non-finite values."""


class ConvergenceError(RuntimeError):
    """Raised when Picard iteration fails to reach tolerance; carries the ratio log."""

    def __init__(self, message: str, diff_norms: list[float], ratios: list[float]):
        super().__init__(message)
        self.diff_norms = diff_norms
        self.ratios = ratios


@dataclass(frozen=True)
class GridSpec:
    """Numerical discretisation parameters.

    ``n_max`` (lattice truncation) defaults to the Poisson-tail budget for
    ``tail_tol``; ``s_max`` defaults to the initial age plus the horizon so
    every reachable age is covered.
    """

    n_t: int
    n_s: int = 8
    n_max: Optional[int] = None
    s_max: Optional[float] = None
    tol_fp: float = 1e-8
    tail_tol: float = 1e-10
    max_iter: int = 400

    def __post_init__(self):
        if self.n_t < 2:
            raise ValueError("n_t must be at least 2")
        if self.n_s < 1:
            raise ValueError("n_s must be at least 1")
        if self.tol_fp <= 0 or self.tail_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class ProblemSpec:
    """Terminal payoff ``g`` and optional running source ``w``.

    ``g`` maps a price array to values of at most linear growth; ``w`` is a
    callable ``w(t, p, i, s)`` broadcasting over ``t``, ``p`` and ``s`` with
    integer state ``i``.
    """

    g: Callable[[np.ndarray], np.ndarray]
    w: Optional[Callable] = None

    def payoff_on(self, prices: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.g(prices), dtype=float)
        if vals.shape != prices.shape:
            vals = np.broadcast_to(vals, prices.shape).astype(float)
        if not np.all(np.isfinite(vals)):
            raise SolverError("terminal payoff produced non-finite values on the lattice")
        return vals


@dataclass
class ValueField:
    """Grid representation of a solved value function.

    ``core`` holds the age-zero values on (time node, lattice node, state);
    ``full``, when present, appends an age axis on ``s_grid``.  Evaluation is
    linear in time and age and exact in price on the lattice.  Fields carry
    their solve context so off-grid ages can be filled exactly on demand.
    """

    t_grid: np.ndarray
    lattice: PriceLattice
    core: np.ndarray
    kernel: Optional[SemiMarkovKernel] = None
    problem: Optional[ProblemSpec] = None
    s_grid: Optional[np.ndarray] = None
    full: Optional[np.ndarray] = None
    age_invariant: bool = False
    diff_norms: list = field(default_factory=list)
    ratios: list = field(default_factory=list)

    @property
    def horizon(self) -> float:
        return float(self.t_grid[-1])

    @property
    def iterations(self) -> int:
        return len(self.diff_norms)

    def vnorm(self, values: np.ndarray) -> float:
        """Grid version of the linear-growth norm: max |value| / (1 + price)."""
        scale = 1.0 + self.lattice.prices
        return float(np.max(np.abs(values) / scale[None, :, None]))

    def eval_core(self, t, node: int, i: int):
        """Age-zero value at arbitrary times by linear interpolation."""
        col = self.core[:, node, _STATE_INDEX[i]]
        return np.interp(t, self.t_grid, col)

    def eval(self, t: float, p: float, i: int, s: float = 0.0) -> float:
        node = self.lattice.locate(p)
        return self.eval_node(t, node, i, s)

    def eval_node(self, t: float, node: int, i: int, s: float = 0.0) -> float:
        if self.age_invariant or s == 0.0:
            return float(self.eval_core(t, node, i))
        if self.full is not None and s <= self.s_grid[-1] + 1e-12:
            ii = _STATE_INDEX[i]
            si = np.clip(np.searchsorted(self.s_grid, s) - 1, 0, len(self.s_grid) - 2)
            s0, s1 = self.s_grid[si], self.s_grid[si + 1]
            wgt = 0.0 if s1 == s0 else (s - s0) / (s1 - s0)
            lo = np.interp(t, self.t_grid, self.full[:, node, ii, si])
            hi = np.interp(t, self.t_grid, self.full[:, node, ii, si + 1])
            return float((1.0 - wgt) * lo + wgt * hi)
        if self.kernel is None:
            raise ValueError(
                "field has no cached values at this age and no solve context "
                "to extend with; call extend_to_age first"
            )
        ti = np.clip(np.searchsorted(self.t_grid, t) - 1, 0, len(self.t_grid) - 2)
        lo = _extension_point(self, int(ti), node, i, s)
        if t == self.t_grid[ti]:
            return lo
        hi = _extension_point(self, int(ti) + 1, node, i, s)
        wgt = (t - self.t_grid[ti]) / (self.t_grid[ti + 1] - self.t_grid[ti])
        return float((1.0 - wgt) * lo + wgt * hi)


@dataclass(frozen=True)
class ResidualStats:
    """Normalised interior residual of the characteristic-form equation."""

    max_abs: float
    mean_abs: float
    n_points: int
    argmax: tuple


# -- quadrature machinery --------------------------------------------------


def _simpson_weights(n_intervals: int, h: float) -> np.ndarray:
    w = np.ones(n_intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def _quad_matrix(nodes: np.ndarray, half0: float, h: float) -> np.ndarray:
    """Triangular matrix Q with Q[k] integrating nodes[m-k]*y[m] over [t_k, T].

    Rows with an even interval count get plain composite Simpson.  Odd rows
    spend a Simpson step on their first interval with the integrand's smooth
    factor evaluated exactly at the midpoint (``half0``) and the grid function
    linearly interpolated there, then composite Simpson on the rest.
    """
    n = len(nodes) - 1
    q = np.zeros((n + 1, n + 1))
    for k in range(n + 1):
        m = n - k
        if m == 0:
            continue
        if m % 2 == 0:
            q[k, k:] = _simpson_weights(m, h) * nodes[: m + 1]
        else:
            q[k, k] = (h / 6.0) * (nodes[0] + 2.0 * half0)
            q[k, k + 1] = (h / 6.0) * (2.0 * half0 + nodes[1])
            if m > 1:
                q[k, k + 1 :] += _simpson_weights(m - 1, h) * nodes[1 : m + 1]
    return q


@dataclass
class _OperatorTables:
    """Age-shifted quadrature tables shared by core sweeps and extensions."""

    survival: np.ndarray  # conditional survival at node ages
    q_cont: np.ndarray  # kernel matrix for the continuation branch
    q_rev: np.ndarray  # reversal branch
    q_source: np.ndarray  # survival-weighted matrix for the running source
    terminal: np.ndarray  # conditional survival to the horizon, per row


def _build_tables(kernel: SemiMarkovKernel, t_grid: np.ndarray, sigma: float) -> _OperatorTables:
    n_t = len(t_grid) - 1
    h = t_grid[1] - t_grid[0]
    ages = sigma + h * np.arange(n_t + 1)
    lam0 = kernel.integrated_intensity(sigma)
    survival = np.exp(lam0 - np.asarray(kernel.integrated_intensity(ages)))
    half_age = sigma + 0.5 * h
    half_surv = math.exp(lam0 - kernel.integrated_intensity(half_age))
    fp_cont = np.asarray(kernel.continuation.value(ages)) * survival
    fp_rev = np.asarray(kernel.reversal.value(ages)) * survival
    half_cont = kernel.continuation.value(half_age) * half_surv
    half_rev = kernel.reversal.value(half_age) * half_surv
    return _OperatorTables(
        survival=survival,
        q_cont=_quad_matrix(fp_cont, half_cont, h),
        q_rev=_quad_matrix(fp_rev, half_rev, h),
        q_source=_quad_matrix(survival, half_surv, h),
        terminal=survival[::-1].copy(),
    )


def _branch_maps(lattice: PriceLattice):
    """Per-state successor bookkeeping: (state idx, image idx, image scale)."""
    up_idx, up_scale = lattice.image_maps(+1)
    down_idx, down_scale = lattice.image_maps(-1)
    per_state = {}
    for i in STATES:
        branches = []
        for j in successors(i):
            idx, scale = (up_idx, up_scale) if alpha(j) > 0 else (down_idx, down_scale)
            kind = "cont" if alpha(j) == alpha(i) else "rev"
            branches.append((kind, _STATE_INDEX[j], idx, scale))
        per_state[i] = branches
    return per_state


def _source_integrals(
    problem: ProblemSpec,
    tables: _OperatorTables,
    t_grid: np.ndarray,
    lattice: PriceLattice,
    sigma: float,
    source_slab: Optional[Callable] = None,
) -> Optional[np.ndarray]:
    """Integrated running-source term on the (time, node, state) grid.

    ``source_slab(d, sigma)``, when given, must return the source values at
    every (time node m >= d, lattice node, state) for the age ``sigma + d*h``;
    otherwise the pointwise callable from the problem is used.
    """
    if problem.w is None:
        return None
    n_t = len(t_grid) - 1
    h = t_grid[1] - t_grid[0]
    out = np.zeros((n_t + 1, lattice.n_nodes, len(STATES)))
    prices = lattice.prices
    for d in range(n_t + 1):
        coeffs = tables.q_source.diagonal(d)
        if not np.any(coeffs):
            continue
        if source_slab is not None:
            slab = source_slab(d, sigma)
        else:
            age = sigma + d * h
            slab = np.empty((n_t + 1 - d, lattice.n_nodes, len(STATES)))
            for m in range(d, n_t + 1):
                for ii, i in enumerate(STATES):
                    slab[m - d, :, ii] = problem.w(t_grid[m], prices, i, age)
        out[: n_t + 1 - d] += coeffs[:, None, None] * slab
    if not np.all(np.isfinite(out)):
        raise SolverError("running source produced non-finite integrals")
    return out


class _AgeOperator:
    """One application of the value operator at a fixed age offset."""

    def __init__(
        self,
        kernel: SemiMarkovKernel,
        problem: ProblemSpec,
        t_grid: np.ndarray,
        lattice: PriceLattice,
        sigma: float = 0.0,
        source_slab: Optional[Callable] = None,
    ):
        self.t_grid = t_grid
        self.lattice = lattice
        self.tables = _build_tables(kernel, t_grid, sigma)
        self.payoff = problem.payoff_on(lattice.prices)
        self.branches = _branch_maps(lattice)
        self.source = _source_integrals(
            problem, self.tables, t_grid, lattice, sigma, source_slab
        )

    def apply(self, core: np.ndarray) -> np.ndarray:
        out = np.empty_like(core)
        g_term = self.tables.terminal[:, None] * self.payoff[None, :]
        for i in STATES:
            acc = g_term.copy()
            for kind, j_idx, img, scale in self.branches[i]:
                q = self.tables.q_cont if kind == "cont" else self.tables.q_rev
                acc += q @ (core[:, img, j_idx] * scale[None, :])
            if self.source is not None:
                acc += self.source[:, :, _STATE_INDEX[i]]
            out[:, :, _STATE_INDEX[i]] = acc
        if not np.all(np.isfinite(out)):
            raise SolverError("operator sweep produced non-finite values")
        return out


# -- public solver surface --------------------------------------------------


def _make_lattice(kernel: SemiMarkovKernel, grid: GridSpec, horizon: float, p0: float):
    n_report = grid.n_max
    if n_report is None:
        n_report = max_jumps_for_tail(kernel.intensity_bound, horizon, grid.tail_tol)
    # guard rings: the boundary envelope extrapolation errs at order delta,
    # attenuated inward by the probability of crossing the guard, so sizing
    # the guard by the fixed-point tolerance keeps reported nodes clean
    guard = max_jumps_for_tail(kernel.intensity_bound, horizon, grid.tol_fp)
    return PriceLattice(
        p0=p0, delta=kernel.delta, n_max=n_report + guard, n_report=n_report
    )


def apply_age_zero_operator(
    kernel: SemiMarkovKernel,
    problem: ProblemSpec,
    t_grid: np.ndarray,
    lattice: PriceLattice,
    core: np.ndarray,
) -> np.ndarray:
    """Single sweep of the age-zero operator over a core array."""
    op = _AgeOperator(kernel, problem, t_grid, lattice, sigma=0.0)
    return op.apply(core)


def solve_fixed_point(
    kernel: SemiMarkovKernel,
    problem: ProblemSpec,
    grid: GridSpec,
    horizon: float,
    p0: float,
    source_slab: Optional[Callable] = None,
    lattice: Optional[PriceLattice] = None,
) -> ValueField:
    """Picard iteration from the terminal payoff until the grid norm settles.

    Returns the age-zero core with its per-step difference norms and
    contraction ratios.  Raises :class:`ConvergenceError` (carrying the ratio
    history) if ``grid.max_iter`` sweeps do not reach ``grid.tol_fp``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    t_grid = np.linspace(0.0, horizon, grid.n_t + 1)
    if lattice is None:
        lattice = _make_lattice(kernel, grid, horizon, p0)
    op = _AgeOperator(kernel, problem, t_grid, lattice, 0.0, source_slab)
    core = np.broadcast_to(
        op.payoff[None, :, None], (grid.n_t + 1, lattice.n_nodes, len(STATES))
    ).copy()
    field_probe = ValueField(t_grid=t_grid, lattice=lattice, core=core)
    diff_norms: list[float] = []
    ratios: list[float] = []
    for _ in range(grid.max_iter):
        new_core = op.apply(core)
        diff = field_probe.vnorm(new_core - core)
        if diff_norms and diff_norms[-1] > 0:
            ratios.append(diff / diff_norms[-1])
        diff_norms.append(diff)
        core = new_core
        if diff < grid.tol_fp:
            return ValueField(
                t_grid=t_grid,
                lattice=lattice,
                core=core,
                kernel=kernel,
                problem=problem,
                age_invariant=kernel.is_memoryless and problem.w is None,
                diff_norms=diff_norms,
                ratios=ratios,
            )
    raise ConvergenceError(
        f"no convergence to {grid.tol_fp:g} within {grid.max_iter} sweeps "
        f"(last difference {diff_norms[-1]:.3e})",
        diff_norms,
        ratios,
    )


def extension_slice(field: ValueField, sigma: float, source_slab=None) -> np.ndarray:
    """Values at age ``sigma`` on the (time, node, state) grid.

    One operator application with the general age offset; the converged core
    supplies every age-zero value the integral needs, so no iteration is
    involved.
    """
    if field.kernel is None or field.problem is None:
        raise ValueError("field carries no solve context")
    op = _AgeOperator(
        field.kernel, field.problem, field.t_grid, field.lattice, float(sigma), source_slab
    )
    return op.apply(field.core)


def _extension_point(field: ValueField, k: int, node: int, i: int, s: float) -> float:
    """Exact single-point extension at grid time index ``k`` and age ``s``."""
    kernel, problem = field.kernel, field.problem
    t_grid, lattice = field.t_grid, field.lattice
    n_t = len(t_grid) - 1
    h = t_grid[1] - t_grid[0]
    ages = s + h * np.arange(n_t - k + 1)
    lam0 = kernel.integrated_intensity(s)
    surv = np.exp(lam0 - np.asarray(kernel.integrated_intensity(ages)))
    acc = surv[-1] * field.problem.payoff_on(lattice.prices[node : node + 1])[0]
    m_int = n_t - k
    if m_int > 0:
        for j in successors(i):
            img, scale = lattice.image_maps(1 if alpha(j) > 0 else -1)
            vals = field.core[k:, img[node], _STATE_INDEX[j]] * scale[node]
            hj = np.asarray(kernel.directed_intensity(i, j, ages)) * surv
            half = (
                kernel.directed_intensity(i, j, s + 0.5 * h)
                * math.exp(lam0 - kernel.integrated_intensity(s + 0.5 * h))
            )
            acc += _row_quadrature(hj, vals, half, h)
        if problem.w is not None:
            wvals = np.array(
                [
                    float(problem.w(t_grid[k + d], lattice.prices[node], i, s + d * h))
                    for d in range(m_int + 1)
                ]
            )
            half_s = math.exp(lam0 - kernel.integrated_intensity(s + 0.5 * h))
            acc += _row_quadrature(surv, wvals, half_s, h)
    return float(acc)


def _row_quadrature(factors: np.ndarray, values: np.ndarray, half0: float, h: float) -> float:
    """Integrate factors*values over one row with the solver's Simpson rule."""
    m = len(factors) - 1
    if m == 0:
        return 0.0
    if m % 2 == 0:
        return float(np.dot(_simpson_weights(m, h) * factors, values))
    head = (h / 6.0) * (
        (factors[0] + 2.0 * half0) * values[0] + (2.0 * half0 + factors[1]) * values[1]
    )
    if m == 1:
        return float(head)
    return float(head + np.dot(_simpson_weights(m - 1, h) * factors[1:], values[1:]))


def extend_to_age(
    field: ValueField,
    s_grid: Optional[np.ndarray] = None,
    grid: Optional[GridSpec] = None,
    source_slab: Optional[Callable] = None,
) -> ValueField:
    """Fill the age axis by one operator application per age node."""
    if s_grid is None:
        if grid is None:
            raise ValueError("provide either s_grid or a GridSpec")
        s_max = grid.s_max if grid.s_max is not None else field.horizon
        s_grid = np.linspace(0.0, s_max, grid.n_s + 1)
    s_grid = np.asarray(s_grid, dtype=float)
    full = np.empty(field.core.shape + (len(s_grid),))
    for si, sigma in enumerate(s_grid):
        full[..., si] = extension_slice(field, sigma, source_slab)
    return replace(field, s_grid=s_grid, full=full)


def solve_expected_price(
    kernel: SemiMarkovKernel,
    grid: GridSpec,
    horizon: float,
    p0: float,
    extend: bool = True,
) -> ValueField:
    """Conditional expectation of the terminal price (identity payoff, no source)."""
    problem = ProblemSpec(g=lambda p: p, w=None)
    field = solve_fixed_point(kernel, problem, grid, horizon, p0)
    if extend:
        field = extend_to_age(field, grid=grid)
    return field


def expected_price_ode_oracle(
    continuation_level: float,
    reversal_level: float,
    delta: float,
    tau,
):
    """Independent closed form for flat hazards.

    With flat intensities the expected terminal price is price times a
    direction-dependent factor solving a 2x2 linear ODE in time to horizon;
    the oracle evaluates it with a matrix exponential.  Returns the pair of
    factors (up-direction, down-direction) for each requested ``tau``.
    """
    from scipy.linalg import expm

    a, b = continuation_level, reversal_level
    gen = np.array(
        [
            [a * delta - b, b * (1.0 - delta)],
            [b * (1.0 + delta), -a * delta - b],
        ]
    )
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.array([expm(gen * t) @ np.ones(2) for t in taus])
    return out if np.ndim(tau) else out[0]


def contraction_bound(
    kernel: SemiMarkovKernel, horizon: float, s_values: np.ndarray
) -> float:
    """Largest conditional probability of a jump within the horizon over the grid.

    Successive Picard differences contract at least this fast (up to grid
    slack); the maximiser over the time axis is always t = 0.
    """
    s_values = np.asarray(s_values, dtype=float)
    lam_s = np.asarray(kernel.integrated_intensity(s_values))
    lam_end = np.asarray(kernel.integrated_intensity(s_values + horizon))
    return float(np.max(-np.expm1(lam_s - lam_end)))


def pde_residual(
    kernel: SemiMarkovKernel,
    problem: ProblemSpec,
    field: ValueField,
) -> ResidualStats:
    """Interior residual of the characteristic-form equation on the full grid.

    The transport derivative is a centred difference along the (t, s)
    diagonal, which requires equal time and age steps; the jump and source
    terms are evaluated exactly at the node.  Residuals are normalised by
    1 + price; boundary lattice nodes (truncated jump images) are excluded.
    """
    if field.full is None or field.s_grid is None:
        raise ValueError("field has no age axis; run extend_to_age first")
    t_grid, s_grid = field.t_grid, field.s_grid
    h_t = t_grid[1] - t_grid[0]
    h_s = s_grid[1] - s_grid[0]
    if abs(h_t - h_s) > 1e-12 * max(h_t, h_s):
        raise ValueError(
            f"diagonal residual needs matching steps (dt={h_t!r}, ds={h_s!r})"
        )
    full = field.full
    lattice = field.lattice
    interior_nodes = (lattice.up_index >= 0) & (lattice.down_index >= 0)
    transport = (full[2:, :, :, 2:] - full[:-2, :, :, :-2]) / (2.0 * h_t)
    n_t = len(t_grid) - 1
    n_s = len(s_grid) - 1
    res = np.zeros_like(transport)
    prices = lattice.prices
    for i in STATES:
        ii = _STATE_INDEX[i]
        jump = np.zeros((n_t - 1, lattice.n_nodes, n_s - 1))
        for j in successors(i):
            img, scale = lattice.image_maps(1 if alpha(j) > 0 else -1)
            target = full[1:-1, img, _STATE_INDEX[j], 0] * scale[None, :]
            hj = np.asarray(kernel.directed_intensity(i, j, s_grid[1:-1]))
            jump += hj[None, None, :] * (
                target[:, :, None] - full[1:-1, :, ii, 1:-1]
            )
        res[:, :, ii, :] = transport[:, :, ii, :] + jump
        if problem.w is not None:
            for di, s in enumerate(s_grid[1:-1]):
                for ki in range(1, n_t):
                    res[ki - 1, :, ii, di] += problem.w(t_grid[ki], prices, i, s)
    res = res[:, interior_nodes, :, :]
    norm = np.abs(res) / (1.0 + prices[interior_nodes])[None, :, None, None]
    arg = np.unravel_index(int(np.argmax(norm)), norm.shape)
    return ResidualStats(
        max_abs=float(np.max(norm)),
        mean_abs=float(np.mean(norm)),
        n_points=int(norm.size),
        argmax=arg,
    )


# -- flat-file round trip ----------------------------------------------------


def save_field_csv(field: ValueField, path, header_meta: Optional[dict] = None) -> None:
    """Dump the field as (t, p, i, s, value) rows with a metadata header line.

    Only nodes inside the requested truncation are written; the guard rings
    are a numerical device, not part of the reported field.
    """
    keep = np.nonzero(field.lattice.report_mask)[0]
    meta = {
        "p0": field.lattice.p0,
        "delta": field.lattice.delta,
        "n_max": field.lattice.n_report,
        "n_report": field.lattice.n_report,
        "horizon": field.horizon,
        "n_t": len(field.t_grid) - 1,
        "s_grid": None if field.s_grid is None else list(map(float, field.s_grid)),
        "age_invariant": field.age_invariant,
    }
    if header_meta:
        meta.update(header_meta)
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        fh.write("t,p,i,s,value\n")
        s_axis = [0.0] if field.s_grid is None else field.s_grid
        for si, s in enumerate(s_axis):
            block = field.core if field.full is None else field.full[..., si]
            for ki, t in enumerate(field.t_grid):
                for n in keep:
                    p = field.lattice.prices[n]
                    for ii, i in enumerate(STATES):
                        fh.write(
                            f"{float(t)!r},{float(p)!r},{i},{float(s)!r},"
                            f"{float(block[ki, n, ii])!r}\n"
                        )


def load_field_csv(path) -> ValueField:
    """Rebuild a field saved by :func:`save_field_csv`.

    The reloaded field supports grid evaluation; exact off-grid extension is
    unavailable because the solve context is not serialised.
    """
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError("missing metadata header line")
        meta = json.loads(header[1:].strip())
        fh.readline()
        lattice = PriceLattice(
            p0=meta["p0"],
            delta=meta["delta"],
            n_max=meta["n_max"],
            n_report=meta.get("n_report"),
        )
        n_t = meta["n_t"]
        t_grid = np.linspace(0.0, meta["horizon"], n_t + 1)
        s_grid = None if meta["s_grid"] is None else np.asarray(meta["s_grid"])
        n_s = 1 if s_grid is None else len(s_grid)
        data = np.full((n_t + 1, lattice.n_nodes, len(STATES), n_s), np.nan)
        s_lookup = {0.0: 0} if s_grid is None else {float(s): k for k, s in enumerate(s_grid)}
        t_step = t_grid[1] - t_grid[0]
        for line in fh:
            t_s, p_s, i_s, s_s, v_s = line.rstrip("\n").split(",")
            ki = int(round(float(t_s) / t_step))
            node = lattice.locate(float(p_s))
            data[ki, node, _STATE_INDEX[int(i_s)], s_lookup[float(s_s)]] = float(v_s)
    if np.any(np.isnan(data)):
        raise ValueError("field file does not cover the full grid")
    field = ValueField(
        t_grid=t_grid,
        lattice=lattice,
        core=data[..., 0].copy(),
        age_invariant=bool(meta["age_invariant"]),
    )
    if s_grid is not None:
        field.s_grid = s_grid
        field.full = data
    return field
