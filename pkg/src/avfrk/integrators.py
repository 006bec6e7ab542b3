"""Time stepping for polynomial Hamiltonian systems.

The chord-averaged step

    y' = y + h * integral_0^1 f((1-xi) y + xi y') dxi

is implemented two ways: exactly, by expanding the averaged field once per
system as a polynomial in (y, y'-y) with rational coefficients and then
evaluating that expansion in float64, and as an implicit Runge-Kutta step
for an arbitrary tableau (the rank-one tableau A = c b^T reproduces the
averaged step whenever the quadrature order covers deg H).

Implicit solves run fixed-point sweeps first and fall back to Newton with
the exact polynomial Jacobian when the residual reduction stalls.  All
stepping is float64; the expansion coefficients are exact until the single
float conversion at compile time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, NamedTuple, Sequence

import numpy as np
from mpmath import mp

from .hamiltonian import HamiltonianSystem, MultiPoly
from .quadrature import QuadRule
from .trees import ButcherTableau

__all__ = [
    "SolverConfig",
    "SolverError",
    "StepStats",
    "IntegrationRun",
    "avf_tableau",
    "midpoint_tableau",
    "avf_step",
    "rk_step",
    "integrate",
    "convergence_errors",
    "convergence_order",
    "write_run_csv",
]

_STRATEGIES = ("fixed-point+newton", "fixed-point", "newton")

# residual must shrink by at least this factor per sweep or we switch to Newton
_STALL_FACTOR = 0.5


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-14
    max_iterations: int = 100
    strategy: str = "fixed-point+newton"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.strategy not in _STRATEGIES:
            raise ValueError(f"strategy must be one of {_STRATEGIES}")


class SolverError(RuntimeError):
    """Implicit solve failed to converge.

    Carries the last iterate and residual; integrate() adds the step index.
    """

    def __init__(self, message, iterate=None, residual=None, step_index=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual
        self.step_index = step_index


class StepStats(NamedTuple):
    iterations: int
    newton_iterations: int
    residual: float


# ---------------------------------------------------------------------------
# compiled float64 evaluation


class _Compiled:
    """Batch evaluator for a fixed tuple of polynomials in the same variables.

    Exponents and coefficients are flattened into arrays once; every call is
    a handful of vectorized operations.  Components are delimited by
    `starts` for np.add.reduceat, so empty polynomials get one zero term.
    """

    __slots__ = ("nv", "ncomp", "E", "coeffs", "starts")

    def __init__(self, polys: Sequence[MultiPoly], nv: int):
        rows: list[tuple] = []
        coeffs: list[float] = []
        starts: list[int] = []
        for p in polys:
            starts.append(len(rows))
            items = sorted(p.terms.items()) or [((0,) * nv, Fraction(0))]
            for exps, c in items:
                rows.append(exps)
                coeffs.append(float(c))
        self.nv = nv
        self.ncomp = len(polys)
        self.E = np.array(rows, dtype=np.float64)
        self.coeffs = np.array(coeffs, dtype=np.float64)
        self.starts = np.array(starts, dtype=np.intp)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        vals = np.prod(x[None, :] ** self.E, axis=1)
        vals *= self.coeffs
        return np.add.reduceat(vals, self.starts)

    def batch(self, X: np.ndarray) -> np.ndarray:
        """Evaluate at many points; X is (npoints, nv), result (npoints, ncomp)."""
        acc = np.ones((X.shape[0], self.E.shape[0]))
        for j in range(self.nv):
            acc *= X[:, j : j + 1] ** self.E[None, :, j]
        acc *= self.coeffs
        return np.add.reduceat(acc, self.starts, axis=1)


def _averaged_field_polys(sys: HamiltonianSystem) -> tuple:
    """The chord average of f as exact polynomials in (u, v) = (y, y'-y).

    Substitutes the segment u_j + xi v_j into each component, expands in the
    auxiliary variable xi, and integrates termwise (xi^k contributes 1/(k+1)).
    Done once per system; the result feeds the float compiler.
    """
    n = sys.dim
    nv = 2 * n + 1  # u_0..u_{n-1}, v_0..v_{n-1}, xi
    xi = MultiPoly.variable(nv, 2 * n)
    seg = [
        MultiPoly.variable(nv, j) + xi * MultiPoly.variable(nv, n + j)
        for j in range(n)
    ]
    pow_cache: dict = {}

    def seg_pow(j, e):
        key = (j, e)
        if key not in pow_cache:
            pow_cache[key] = seg[j] if e == 1 else seg_pow(j, e - 1) * seg[j]
        return pow_cache[key]

    out = []
    for comp in sys.vector_field():
        acc: dict[tuple, Fraction] = {}
        for exps, coeff in comp.terms.items():
            term = MultiPoly.constant(nv, coeff)
            for j, e in enumerate(exps):
                if e:
                    term = term * seg_pow(j, e)
            for texps, tc in term.terms.items():
                acc[texps] = acc.get(texps, Fraction(0)) + tc
        integrated = {
            texps[:-1]: tc / (texps[-1] + 1) for texps, tc in acc.items()
        }
        out.append(MultiPoly(2 * n, integrated))
    return tuple(out)


@lru_cache(maxsize=64)
def _field(sys: HamiltonianSystem) -> _Compiled:
    return _Compiled(sys.vector_field(), sys.dim)


@lru_cache(maxsize=64)
def _field_jac(sys: HamiltonianSystem) -> _Compiled:
    n = sys.dim
    f = sys.vector_field()
    return _Compiled([f[a].partial(b) for a in range(n) for b in range(n)], n)


@lru_cache(maxsize=64)
def _averaged(sys: HamiltonianSystem) -> _Compiled:
    return _Compiled(_averaged_field_polys(sys), 2 * sys.dim)


@lru_cache(maxsize=64)
def _averaged_jac(sys: HamiltonianSystem) -> _Compiled:
    # partials with respect to the v block only: d(step)/dy' at fixed y
    n = sys.dim
    avg = _averaged_field_polys(sys)
    return _Compiled(
        [avg[a].partial(n + b) for a in range(n) for b in range(n)], 2 * n
    )


@lru_cache(maxsize=64)
def _energy(sys: HamiltonianSystem) -> _Compiled:
    return _Compiled((sys.H,), sys.dim)


# ---------------------------------------------------------------------------
# tableaux


def avf_tableau(rule: QuadRule) -> ButcherTableau:
    """Rank-one tableau A = c b^T for the given quadrature rule.

    Row sums equal c_i exactly because the weights sum to one.
    """
    with mp.workdps(rule.precision_digits + 10):
        A = [[ci * bj for bj in rule.b] for ci in rule.c]
        return ButcherTableau(A, rule.b, rule.c, rule.precision_digits)


def midpoint_tableau(precision_digits: int = 50) -> ButcherTableau:
    """Implicit midpoint: the one-stage Gauss tableau, used as a control."""
    half = mp.mpf(1) / 2
    return ButcherTableau([[half]], [mp.mpf(1)], [half], precision_digits)


# ---------------------------------------------------------------------------
# implicit solve driver


def _implicit_solve(x0, phi, phi_jac, cfg: SolverConfig):
    """Solve x = phi(x) to cfg.tolerance in the max norm.

    Fixed-point sweeps while the residual shrinks by _STALL_FACTOR per
    iteration; otherwise Newton on F(x) = phi(x) - x with J_F = Jphi - I.
    Returns (solution, StepStats).
    """
    x = np.array(x0, dtype=np.float64)
    use_newton = cfg.strategy == "newton"
    allow_newton = cfg.strategy != "fixed-point"
    prev_res = np.inf
    newton_iters = 0
    res = np.inf
    eye = np.eye(len(x))
    for it in range(1, cfg.max_iterations + 1):
        fx = phi(x)
        r = fx - x
        res = float(np.max(np.abs(r)))
        if res <= cfg.tolerance:
            return fx, StepStats(it, newton_iters, res)
        if use_newton:
            x = x - np.linalg.solve(phi_jac(x) - eye, r)
            newton_iters += 1
        else:
            x = fx
            if allow_newton and res > _STALL_FACTOR * prev_res:
                use_newton = True
        prev_res = res
    raise SolverError(
        f"no convergence after {cfg.max_iterations} iterations "
        f"(residual {res:.3e}, tolerance {cfg.tolerance:.3e})",
        iterate=x,
        residual=res,
    )


# ---------------------------------------------------------------------------
# steps


def _avf_step_stats(sys, y, h, cfg):
    avg = _averaged(sys)
    n = sys.dim
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (n,):
        raise ValueError(f"state must have length {n}")
    buf = np.empty(2 * n)
    buf[:n] = y

    def phi(x):
        buf[n:] = x - y
        return y + h * avg(buf)

    def phi_jac(x):
        buf[n:] = x - y
        return h * _averaged_jac(sys)(buf).reshape(n, n)

    buf[n:] = 0.0
    x0 = y + h * avg(buf)  # Euler predictor: average over the trivial chord
    return _implicit_solve(x0, phi, phi_jac, cfg)


def avf_step(sys: HamiltonianSystem, y, h: float, cfg: SolverConfig | None = None):
    """One chord-averaged step; exact energy preservation up to solver tolerance.

    For quadratic H the averaged field is f evaluated at the chord midpoint,
    so this coincides with the implicit midpoint step.
    """
    if h == 0:
        raise ValueError("step size must be nonzero")
    state, _ = _avf_step_stats(sys, y, h, cfg or SolverConfig())
    return state


def _tableau_arrays(tab: ButcherTableau):
    A = np.array([[float(x) for x in row] for row in tab.A])
    b = np.array([float(x) for x in tab.b])
    c = np.array([float(x) for x in tab.c])
    return A, b, c


def _rk_step_stats(sys, tab, y, h, cfg):
    n = sys.dim
    s = tab.s
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (n,):
        raise ValueError(f"state must have length {n}")
    A, b, _ = _tableau_arrays(tab)
    field = _field(sys)
    jac = _field_jac(sys)

    def phi(x):
        F = field.batch(x.reshape(s, n))
        return (y[None, :] + h * (A @ F)).ravel()

    def phi_jac(x):
        Jf = jac.batch(x.reshape(s, n)).reshape(s, n, n)
        big = h * A[:, :, None, None] * Jf[None, :, :, :]
        return big.transpose(0, 2, 1, 3).reshape(s * n, s * n)

    fy = field(y)
    x0 = (y[None, :] + h * np.outer(A.sum(axis=1), fy)).ravel()
    sol, stats = _implicit_solve(x0, phi, phi_jac, cfg)
    F = field.batch(sol.reshape(s, n))
    return y + h * (b @ F), stats


def rk_step(
    sys: HamiltonianSystem,
    tab: ButcherTableau,
    y,
    h: float,
    cfg: SolverConfig | None = None,
):
    """One implicit Runge-Kutta step, stages solved simultaneously."""
    if h == 0:
        raise ValueError("step size must be nonzero")
    state, _ = _rk_step_stats(sys, tab, y, h, cfg or SolverConfig())
    return state


# ---------------------------------------------------------------------------
# runs


class IntegrationRun:
    """Trajectory record: times, states, per-step solver stats.

    energies is recomputed from the stored states on access, never carried
    through the solve.
    """

    __slots__ = ("system", "times", "states", "solver_stats")

    def __init__(self, system, times, states, solver_stats):
        if not (len(times) == len(states) == len(solver_stats) + 1):
            raise ValueError("inconsistent run lengths")
        self.system = system
        self.times = tuple(times)
        self.states = tuple(np.array(s, dtype=np.float64) for s in states)
        self.solver_stats = tuple(solver_stats)

    @property
    def energies(self) -> np.ndarray:
        return _energy(self.system).batch(np.stack(self.states))[:, 0]

    def max_energy_drift(self) -> float:
        e = self.energies
        return float(np.max(np.abs(e - e[0])))


def _resolve_stepper(sys, method) -> Callable:
    if isinstance(method, str):
        if method == "avf":
            return lambda y, h, cfg: _avf_step_stats(sys, y, h, cfg)
        if method == "midpoint":
            tab = midpoint_tableau()
            return lambda y, h, cfg: _rk_step_stats(sys, tab, y, h, cfg)
        raise ValueError(f"unknown method {method!r}; use 'avf', 'midpoint', or a tableau")
    if isinstance(method, ButcherTableau):
        return lambda y, h, cfg: _rk_step_stats(sys, method, y, h, cfg)
    if isinstance(method, QuadRule):
        raise TypeError("pass avf_tableau(rule), not the rule itself")
    raise TypeError(f"cannot interpret {type(method).__name__} as a method")


def integrate(
    sys: HamiltonianSystem,
    method,
    y0,
    h: float,
    n_steps: int,
    cfg: SolverConfig | None = None,
) -> IntegrationRun:
    """Repeated stepping from y0; method is 'avf', 'midpoint', or a tableau."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if h == 0:
        raise ValueError("step size must be nonzero")
    cfg = cfg or SolverConfig()
    stepper = _resolve_stepper(sys, method)
    y = np.asarray(y0, dtype=np.float64)
    times = [0.0]
    states = [y.copy()]
    stats = []
    for k in range(n_steps):
        try:
            y, st = stepper(y, h, cfg)
        except SolverError as e:
            raise SolverError(
                f"step {k}: {e}", iterate=e.iterate, residual=e.residual, step_index=k
            ) from e
        times.append((k + 1) * h)
        states.append(y)
        stats.append(st)
    return IntegrationRun(sys, times, states, stats)


def write_run_csv(run: IntegrationRun, fileobj) -> None:
    """Columns t, y_1..y_2d, H, newton_iters; the initial row has no solve."""
    n = run.system.dim
    writer = csv.writer(fileobj)
    writer.writerow(["t"] + [f"y_{i + 1}" for i in range(n)] + ["H", "newton_iters"])
    energies = run.energies
    for k, (t, y) in enumerate(zip(run.times, run.states)):
        iters = run.solver_stats[k - 1].newton_iterations if k else 0
        writer.writerow(
            [repr(t)] + [repr(float(v)) for v in y] + [repr(float(energies[k])), iters]
        )


# ---------------------------------------------------------------------------
# convergence measurement


def convergence_errors(
    sys,
    method,
    y0,
    t_end: float,
    h_list: Sequence[float],
    cfg: SolverConfig | None = None,
    ref_factor: int = 20,
):
    """Final-time max-norm errors against a reference run at much smaller h.

    Step counts are rounded so every run lands exactly on t_end; returns a
    list of (effective h, error) pairs.
    """
    if len(h_list) < 3:
        raise ValueError("need at least 3 step sizes for a slope fit")
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    cfg = cfg or SolverConfig()
    pairs = []
    finals = []
    for h in h_list:
        n = max(1, round(t_end / h))
        h_eff = t_end / n
        run = integrate(sys, method, y0, h_eff, n, cfg)
        pairs.append(h_eff)
        finals.append(run.states[-1])
    n_ref = ref_factor * max(1, round(t_end / min(pairs)))
    ref = integrate(sys, method, y0, t_end / n_ref, n_ref, cfg).states[-1]
    return [
        (h_eff, float(np.max(np.abs(yf - ref))))
        for h_eff, yf in zip(pairs, finals)
    ]


def convergence_order(
    sys,
    method,
    y0,
    t_end: float,
    h_list: Sequence[float],
    cfg: SolverConfig | None = None,
    ref_factor: int = 20,
) -> float:
    """Least-squares slope of log error versus log h."""
    pts = convergence_errors(sys, method, y0, t_end, h_list, cfg, ref_factor)
    xs = np.log([h for h, _ in pts])
    ys = np.log([max(err, 1e-300) for _, err in pts])
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope)
