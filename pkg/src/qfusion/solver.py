"""Bounded nonlinear least squares with seeded multi-start and a grid oracle.

The local solver is a Levenberg-Marquardt iteration with a forward-difference
Jacobian.  It is written over a *batch* of start points so that all restarts
of :func:`solve_multistart` advance together in numpy; each row carries its
own damping and termination state, so a row's trajectory does not depend on
the other rows in the batch.

Bounds are handled by reparameterization (see :class:`ResidualSystem`), so
the descent itself is unconstrained.

Restart ``k`` draws its start point from a Philox (counter-based) generator
keyed by the seed with the counter set to ``k << 64``, so start points are
reproducible on every platform and independent of execution order.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

BatchResiduals = Callable[[np.ndarray], np.ndarray]

FD_STEP = 1e-7
LAMBDA_INIT = 1e-3
LAMBDA_MAX = 1e16
LAMBDA_MIN = 1e-15
_LOGIT_CLIP = 1e-6
_GRID_CHUNK = 1 << 16
MAX_ORACLE_DIM = 4


class SolverFailure(RuntimeError):
    """Every restart produced non-finite residuals."""

    def __init__(self, message: str, report: SolveReport | None = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SolverConfig:
    n_restarts: int = 200
    max_iterations: int = 200
    ssq_tol: float = 1e-12
    step_tol: float = 1e-10
    rng_seed: int = 42

    def __post_init__(self) -> None:
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.ssq_tol < 0 or self.step_tol < 0:
            raise ValueError("tolerances must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SolverConfig:
        return cls(
            n_restarts=int(d["n_restarts"]),
            max_iterations=int(d["max_iterations"]),
            ssq_tol=float(d["ssq_tol"]),
            step_tol=float(d["step_tol"]),
            rng_seed=int(d["rng_seed"]),
        )


@dataclass(frozen=True)
class SolveReport:
    best_residual_ssq: float
    restarts_run: int
    iterations_total: int
    converged: bool
    seed: int
    failed_restarts: int = 0
    best_restart: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SolveReport:
        return cls(
            best_residual_ssq=float(d["best_residual_ssq"]),
            restarts_run=int(d["restarts_run"]),
            iterations_total=int(d["iterations_total"]),
            converged=bool(d["converged"]),
            seed=int(d["seed"]),
            failed_restarts=int(d.get("failed_restarts", 0)),
            best_restart=int(d.get("best_restart", 0)),
        )


TRANSFORMS = ("reflect", "periodic", "logistic")


@dataclass(frozen=True)
class ResidualSystem:
    """A residual map over a box.

    ``evaluate_batch`` takes an ``(n, dimension)`` array and returns the
    ``(n, residual_count)`` residuals; use :meth:`from_function` to wrap a
    single-vector callable.

    ``transforms`` picks how each coordinate is kept in its bounds during the
    descent: ``"periodic"`` (solve freely, wrap into ``[lo, hi)`` on output),
    ``"logistic"`` (``lo + (hi - lo) * sigmoid(u)``) or ``"reflect"`` (fold
    ``u`` back into ``[lo, hi]`` like a mirror; the default).
    """

    evaluate_batch: BatchResiduals
    bounds: tuple[tuple[float, float], ...]
    residual_count: int
    transforms: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        for lo, hi in bounds:
            if not hi > lo:
                raise ValueError(f"empty bound interval ({lo}, {hi})")
        object.__setattr__(self, "bounds", bounds)
        kinds = tuple(self.transforms) if self.transforms else ("reflect",) * len(bounds)
        if len(kinds) != len(bounds):
            raise ValueError("one transform per bounded coordinate is required")
        unknown = set(kinds) - set(TRANSFORMS)
        if unknown:
            raise ValueError(f"unknown transforms {sorted(unknown)}")
        object.__setattr__(self, "transforms", kinds)

    @classmethod
    def from_function(
        cls,
        fn: Callable[[np.ndarray], Sequence[float]],
        bounds: Sequence[tuple[float, float]],
        residual_count: int,
        transforms: Sequence[str] = (),
    ) -> ResidualSystem:
        def batch(x: np.ndarray) -> np.ndarray:
            return np.array([np.asarray(fn(row), dtype=float) for row in x]).reshape(
                len(x), residual_count
            )

        return cls(batch, tuple(bounds), residual_count, tuple(transforms))

    @property
    def dimension(self) -> int:
        return len(self.bounds)

    def evaluate(self, x: Sequence[float]) -> np.ndarray:
        return self.evaluate_batch(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def ssq(self, x: Sequence[float]) -> float:
        r = self.evaluate(x)
        return float(r @ r)

    # -- coordinate maps --------------------------------------------------

    def _arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return lo, hi

    def _masks(self) -> tuple[np.ndarray, np.ndarray]:
        kinds = np.array(self.transforms)
        return kinds == "periodic", kinds == "logistic"

    def to_internal(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self._arrays()
        _, logistic = self._masks()
        frac = np.clip((x - lo) / (hi - lo), _LOGIT_CLIP, 1.0 - _LOGIT_CLIP)
        return np.where(logistic, np.log(frac) - np.log1p(-frac), x)

    def from_internal(self, u: np.ndarray) -> np.ndarray:
        lo, hi = self._arrays()
        periodic, logistic = self._masks()
        width = hi - lo
        sig = 1.0 / (1.0 + np.exp(-np.clip(u, -700.0, 700.0)))
        t = np.mod((u - lo) / width, 2.0)
        mirrored = lo + width * np.where(t > 1.0, 2.0 - t, t)
        return np.where(periodic, u, np.where(logistic, lo + width * sig, mirrored))

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Fold periodic coordinates into ``[lo, hi)``; clip the rest."""
        lo, hi = self._arrays()
        periodic, _ = self._masks()
        folded = lo + np.mod(x - lo, hi - lo)
        folded = np.where(folded >= hi, lo, folded)
        return np.where(periodic, folded, np.clip(x, lo, hi))


def _sum_squares(r: np.ndarray) -> np.ndarray:
    return np.einsum("nm,nm->n", r, r)


def _levenberg_marquardt(
    system: ResidualSystem, x0: np.ndarray, config: SolverConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Run LM from every row of ``x0``.

    Returns ``(x, ssq, iterations, finite_start)``; rows whose start residual
    was non-finite come back with ``ssq = inf``.
    """
    n, d = x0.shape

    def fun(u: np.ndarray) -> np.ndarray:
        return system.evaluate_batch(system.from_internal(u))

    u = system.to_internal(x0)
    r = fun(u)
    ssq = _sum_squares(r)
    finite = np.isfinite(ssq)
    ssq = np.where(finite, ssq, np.inf)

    lam = np.full(n, LAMBDA_INIT)
    iters = np.zeros(n, dtype=np.int64)
    jac = np.zeros((n, system.residual_count, d))
    need_jac = np.ones(n, dtype=bool)
    active = finite & (ssq > config.ssq_tol)
    diag_idx = np.arange(d)

    while active.any():
        rows = np.flatnonzero(active & need_jac)
        if rows.size:
            ur, rr = u[rows], r[rows]
            h = FD_STEP * np.maximum(1.0, np.abs(ur))
            for k in range(d):
                up = ur.copy()
                up[:, k] += h[:, k]
                jac[rows, :, k] = (fun(up) - rr) / h[:, k, None]
            need_jac[rows] = False

        a = np.flatnonzero(active)
        ja, ra = jac[a], r[a]
        normal = np.einsum("nmi,nmj->nij", ja, ja)
        grad = np.einsum("nmi,nm->ni", ja, ra)
        diag = normal[:, diag_idx, diag_idx]
        floor = 1e-12 * (1.0 + diag.max(axis=1, keepdims=True))
        damped = normal.copy()
        damped[:, diag_idx, diag_idx] += lam[a, None] * (diag + floor)
        with np.errstate(all="ignore"):
            try:
                step = np.linalg.solve(damped, -grad[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = np.stack([_safe_solve(m, -g) for m, g in zip(damped, grad)])
            trial = u[a] + step
            r_trial = fun(trial)
            ssq_trial = _sum_squares(r_trial)

        accept = np.isfinite(ssq_trial) & (ssq_trial < ssq[a])
        acc = a[accept]
        u[acc] = trial[accept]
        r[acc] = r_trial[accept]
        ssq[acc] = ssq_trial[accept]
        lam[acc] = np.maximum(lam[acc] / 10.0, LAMBDA_MIN)
        need_jac[acc] = True
        rej = a[~accept]
        lam[rej] *= 10.0
        iters[a] += 1

        step_norm = np.sqrt(np.einsum("ni,ni->n", step, step))
        scale = 1.0 + np.sqrt(np.einsum("ni,ni->n", u[a], u[a]))
        small = ~np.isfinite(step_norm) | (step_norm <= config.step_tol * scale)
        done = (
            (ssq[a] <= config.ssq_tol)
            | small
            | (iters[a] >= config.max_iterations)
            | (lam[a] > LAMBDA_MAX)
        )
        active[a[done]] = False

    x = system.from_internal(u)
    untouched = iters == 0
    x[untouched] = x0[untouched]
    return system.wrap(x), ssq, iters, finite


def _safe_solve(m: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(m, b[:, None])[:, 0]
    except np.linalg.LinAlgError:
        return np.zeros_like(b)


def solve_local(
    system: ResidualSystem, start: Sequence[float], config: SolverConfig | None = None
) -> tuple[np.ndarray, float, int]:
    """Single Levenberg-Marquardt descent from ``start``.

    Returns ``(x, ssq, iterations)``.  Raises :class:`SolverFailure` if the
    residual is non-finite at the start point.
    """
    config = config or SolverConfig()
    x0 = np.asarray(start, dtype=float).reshape(1, system.dimension)
    x, ssq, iters, finite = _levenberg_marquardt(system, x0, config)
    if not finite[0]:
        raise SolverFailure("non-finite residual at start point")
    return x[0], float(ssq[0]), int(iters[0])


def restart_starts(system: ResidualSystem, config: SolverConfig) -> np.ndarray:
    """Uniform in-bounds start points, one row per restart."""
    lo, hi = system._arrays()
    key = config.rng_seed & 0xFFFFFFFFFFFFFFFF
    starts = np.empty((config.n_restarts, system.dimension))
    for k in range(config.n_restarts):
        gen = np.random.Generator(np.random.Philox(key=key, counter=k << 64))
        starts[k] = lo + (hi - lo) * gen.random(system.dimension)
    return starts


def solve_multistart(
    system: ResidualSystem, config: SolverConfig | None = None
) -> tuple[np.ndarray, SolveReport]:
    """Best of ``config.n_restarts`` local solves from seeded random starts.

    Ties on the residual go to the lowest restart index.
    """
    config = config or SolverConfig()
    starts = restart_starts(system, config)
    x, ssq, iters, finite = _levenberg_marquardt(system, starts, config)
    failed = int((~finite).sum())
    if failed:
        log.warning("%d of %d restarts discarded: non-finite residual at start", failed, len(starts))
    if failed == len(starts):
        report = SolveReport(float("inf"), len(starts), int(iters.sum()), False, config.rng_seed, failed, -1)
        raise SolverFailure("all restarts produced non-finite residuals", report)
    best = int(np.argmin(ssq))
    best_ssq = float(ssq[best])
    report = SolveReport(
        best_residual_ssq=best_ssq,
        restarts_run=len(starts),
        iterations_total=int(iters.sum()),
        converged=best_ssq <= config.ssq_tol,
        seed=config.rng_seed,
        failed_restarts=failed,
        best_restart=best,
    )
    return x[best], report


def grid_points(system: ResidualSystem, resolution: int) -> list[np.ndarray]:
    axes = []
    for lo, hi in system.bounds:
        i = np.arange(resolution, dtype=float)
        axes.append((lo * (resolution - 1 - i) + hi * i) / (resolution - 1))
    return axes


def grid_oracle(system: ResidualSystem, resolution: int) -> tuple[np.ndarray, float]:
    """Exhaustive minimizer of the residual SSQ on a regular grid (endpoints included).

    Meant for verification only: cost is ``resolution ** dimension``.
    """
    if system.dimension > MAX_ORACLE_DIM:
        raise ValueError(f"grid oracle refuses dimension {system.dimension} > {MAX_ORACLE_DIM}")
    if resolution < 2:
        raise ValueError("grid resolution must be at least 2")
    axes = grid_points(system, resolution)
    shape = (resolution,) * system.dimension
    total = resolution**system.dimension
    best_x, best_ssq = None, np.inf
    for begin in range(0, total, _GRID_CHUNK):
        idx = np.unravel_index(np.arange(begin, min(begin + _GRID_CHUNK, total)), shape)
        pts = np.column_stack([ax[i] for ax, i in zip(axes, idx)])
        with np.errstate(all="ignore"):
            ssq = _sum_squares(system.evaluate_batch(pts))
        ssq = np.where(np.isfinite(ssq), ssq, np.inf)
        k = int(np.argmin(ssq))
        if ssq[k] < best_ssq:
            best_x, best_ssq = pts[k], float(ssq[k])
    if best_x is None:
        raise SolverFailure("grid oracle found no finite residual")
    return best_x, best_ssq
