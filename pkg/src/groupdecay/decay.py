"""Group error-decay curves and their constrained weighted least-squares fit.

The decay model predicts a group's average error from its mass n in the
training set:

    e(n) = c_j + b_j * (a_half / (a0*n)^0.5 + sum_k a_k / (a0*n)^k),  k = 1..3

All parameters are non-negative; the five a-coefficients are shared across
the groups of a partition while (b_j, c_j) are per group, giving 2J + 5
parameters.  n is evaluated at max(n, 1) so empty groups get a large finite
predicted error instead of a division by zero.

The fit minimizes a doubly weighted squared loss over recorded
(training mass, validation error) checkpoints.  The optimizer alternates an
exact non-negative least-squares refresh of (b_j, c_j) with monotone
projected-gradient steps on the shared coefficients, restarted from several
deterministic initializations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .partition import GroupErrorRecord

__all__ = [
    "A0_MIN",
    "DecayParams",
    "DecayFit",
    "FitConfig",
    "FitError",
    "DecayNumericalError",
    "eval_curve",
    "curve_values",
    "default_weights",
    "objective_value",
    "objective_and_gradient",
    "fit",
    "serialize_fit",
    "parse_fit",
]

A0_MIN = 1e-6


class FitError(ValueError):
    """Fit cannot be attempted (bad history or weights)."""


class DecayNumericalError(ArithmeticError):
    """Objective became non-finite; carries the offending group."""

    def __init__(self, group: int):
        super().__init__(f"non-finite decay objective contribution in group {group}")
        self.group = group


@dataclass
class DecayParams:
    a0: float
    a_half: float
    a1: float
    a2: float
    a3: float
    b: np.ndarray
    c: np.ndarray

    @property
    def n_groups(self) -> int:
        return len(self.b)

    @property
    def n_params(self) -> int:
        return 2 * self.n_groups + 5

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            ([self.a0, self.a_half, self.a1, self.a2, self.a3], self.b, self.c)
        )

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_groups: int) -> "DecayParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (2 * n_groups + 5,):
            raise ValueError(f"expected {2 * n_groups + 5} parameters, got {vec.shape}")
        return cls(
            a0=float(vec[0]),
            a_half=float(vec[1]),
            a1=float(vec[2]),
            a2=float(vec[3]),
            a3=float(vec[4]),
            b=vec[5 : 5 + n_groups].copy(),
            c=vec[5 + n_groups :].copy(),
        )


def _basis(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Shared decay basis: a_half/(a0*n)^0.5 + a1/u + a2/u^2 + a3/u^3."""
    u = np.maximum(a[0], A0_MIN) * np.maximum(n, 1.0)
    inv = 1.0 / u
    return a[1] * np.sqrt(inv) + a[2] * inv + a[3] * inv**2 + a[4] * inv**3


def curve_values(params: DecayParams, n: np.ndarray, clamp: bool = False) -> np.ndarray:
    """Predicted error per group at masses ``n`` (broadcast against b, c)."""
    a = np.array([params.a0, params.a_half, params.a1, params.a2, params.a3])
    e = params.c + params.b * _basis(a, np.asarray(n, dtype=np.float64))
    return np.clip(e, 0.0, 1.0) if clamp else e


def eval_curve(params: DecayParams, group: int, n: float, clamp: bool = False) -> float:
    """Predicted average error of one group at training mass n."""
    a = np.array([params.a0, params.a_half, params.a1, params.a2, params.a3])
    e = params.c[group] + params.b[group] * float(_basis(a, np.asarray(float(n))))
    return float(min(max(e, 0.0), 1.0)) if clamp else float(e)


def default_weights(
    history: Sequence[GroupErrorRecord],
) -> tuple[np.ndarray, np.ndarray]:
    """Per-group weights w_j = min(100, validation mass) and per-point
    weights v_tj = 3 at each group's lowest-error checkpoint (earliest on
    ties), 1 elsewhere."""
    if not history:
        raise FitError("empty history")
    val_mass = history[-1].val_mass
    w = np.minimum(100.0, np.asarray(val_mass, dtype=np.float64))
    errors = np.stack([rec.val_error for rec in history])  # (T, J)
    v = np.ones_like(errors)
    best_t = np.argmin(errors, axis=0)
    v[best_t, np.arange(errors.shape[1])] = 3.0
    return w, v


def _matrices(
    history: Sequence[GroupErrorRecord], weights: tuple[np.ndarray, np.ndarray] | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    N = np.stack([rec.train_mass for rec in history]).astype(np.float64)
    Y = np.stack([rec.val_error for rec in history]).astype(np.float64)
    if weights is None:
        w, v = default_weights(history)
    else:
        w, v = weights
    W = np.asarray(v, dtype=np.float64) * np.asarray(w, dtype=np.float64)[None, :]
    return N, Y, W


def objective_value(
    vec: np.ndarray, N: np.ndarray, Y: np.ndarray, W: np.ndarray
) -> float:
    """Weighted squared loss of the decay model at a raw parameter vector."""
    J = N.shape[1]
    a = vec[:5]
    b = vec[5 : 5 + J]
    c = vec[5 + J :]
    e = c[None, :] + b[None, :] * _basis(a, N)
    r = e - Y
    per_group = np.sum(W * r * r, axis=0)
    if not np.all(np.isfinite(per_group)):
        raise DecayNumericalError(int(np.flatnonzero(~np.isfinite(per_group))[0]))
    return float(per_group.sum())


def objective_and_gradient(
    vec: np.ndarray, N: np.ndarray, Y: np.ndarray, W: np.ndarray
) -> tuple[float, np.ndarray]:
    """Objective and its analytic gradient in the raw parameter layout
    [a0, a_half, a1, a2, a3, b_0..b_{J-1}, c_0..c_{J-1}]."""
    J = N.shape[1]
    a = vec[:5]
    b = vec[5 : 5 + J]
    c = vec[5 + J :]

    u = np.maximum(a[0], A0_MIN) * np.maximum(N, 1.0)
    inv = 1.0 / u
    s = np.sqrt(inv)
    i1 = inv
    i2 = inv**2
    i3 = inv**3
    psi = a[1] * s + a[2] * i1 + a[3] * i2 + a[4] * i3

    e = c[None, :] + b[None, :] * psi
    r = e - Y
    wr = W * r
    per_group = np.sum(wr * r, axis=0)
    if not np.all(np.isfinite(per_group)):
        raise DecayNumericalError(int(np.flatnonzero(~np.isfinite(per_group))[0]))
    obj = float(per_group.sum())

    wrb = wr * b[None, :]
    a0_eff = max(a[0], A0_MIN)
    dpsi_da0 = -(0.5 * a[1] * s + a[2] * i1 + 2.0 * a[3] * i2 + 3.0 * a[4] * i3) / a0_eff
    grad = np.empty_like(vec)
    # below the floor the objective is constant in a0 (u uses max(a0, A0_MIN))
    grad[0] = 2.0 * np.sum(wrb * dpsi_da0) if a[0] >= A0_MIN else 0.0
    grad[1] = 2.0 * np.sum(wrb * s)
    grad[2] = 2.0 * np.sum(wrb * i1)
    grad[3] = 2.0 * np.sum(wrb * i2)
    grad[4] = 2.0 * np.sum(wrb * i3)
    grad[5 : 5 + J] = 2.0 * np.sum(wr * psi, axis=0)
    grad[5 + J :] = 2.0 * np.sum(wr, axis=0)
    return obj, grad


def _solve_bc(
    psi: np.ndarray, Y: np.ndarray, W: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Exact per-group minimization over b, c >= 0 with the basis fixed.

    The problem is a 2-variable weighted least squares per group; the
    non-negativity constraint is handled by case analysis over the active
    set (interior, b = 0, c = 0, both zero).
    """
    sw = W.sum(axis=0)
    sp = (W * psi).sum(axis=0)
    spp = (W * psi * psi).sum(axis=0)
    sy = (W * Y).sum(axis=0)
    spy = (W * psi * Y).sum(axis=0)

    tiny = 1e-300

    def obj(bv, cv):
        return spp * bv**2 + sw * cv**2 + 2 * sp * bv * cv - 2 * spy * bv - 2 * sy * cv

    det = spp * sw - sp * sp
    safe_det = np.where(np.abs(det) > tiny, det, 1.0)
    b_unc = np.where(np.abs(det) > tiny, (spy * sw - sy * sp) / safe_det, -1.0)
    c_unc = np.where(np.abs(det) > tiny, (sy * spp - spy * sp) / safe_det, -1.0)

    c_only = np.where(sw > tiny, np.maximum(0.0, sy / np.where(sw > tiny, sw, 1.0)), 0.0)
    b_only = np.where(spp > tiny, np.maximum(0.0, spy / np.where(spp > tiny, spp, 1.0)), 0.0)

    cand_b = np.stack([b_unc, np.zeros_like(sw), b_only, np.zeros_like(sw)])
    cand_c = np.stack([c_unc, c_only, np.zeros_like(sw), np.zeros_like(sw)])
    cand_obj = obj(cand_b, cand_c)
    cand_obj[0] = np.where((b_unc >= 0) & (c_unc >= 0), cand_obj[0], np.inf)

    pick = np.argmin(cand_obj, axis=0)
    cols = np.arange(sw.size)
    b = cand_b[pick, cols]
    c = cand_c[pick, cols]
    dead = sw <= tiny  # excluded groups (zero total weight)
    b[dead] = 0.0
    c[dead] = 0.0
    return b, c


def _solve_a(
    phi: np.ndarray, Y: np.ndarray, W: np.ndarray, b: np.ndarray, c: np.ndarray,
    current: np.ndarray,
) -> np.ndarray:
    """Exact minimization over the four shared basis coefficients (>= 0)
    with amplitudes and floors fixed.

    The problem is a 4-variable non-negative least squares; the optimum is
    found by enumerating active sets (16 candidate KKT systems) and taking
    the best feasible solution, which can never be worse than ``current``.
    """
    X = phi * b[None, None, :]  # (4, T, J)
    r = Y - c[None, :]
    WX = W[None, :, :] * X
    G = np.einsum("ptj,qtj->pq", WX, X)
    h = np.einsum("ptj,tj->p", WX, r)
    base = float(np.sum(W * r * r))

    def quad(a: np.ndarray) -> float:
        return base - 2.0 * float(a @ h) + float(a @ G @ a)

    best = current.copy()
    best_obj = quad(current)
    for mask in range(16):
        free = [i for i in range(4) if mask >> i & 1]
        a = np.zeros(4)
        if free:
            Gs = G[np.ix_(free, free)]
            hs = h[free]
            try:
                sol = np.linalg.solve(Gs, hs)
            except np.linalg.LinAlgError:
                sol, *_ = np.linalg.lstsq(Gs, hs, rcond=None)
            if np.any(sol < 0) or not np.all(np.isfinite(sol)):
                continue
            a[free] = sol
        obj = quad(a)
        if obj < best_obj:
            best_obj, best = obj, a
    return best


@dataclass
class FitConfig:
    restarts: int = 8
    max_outer: int = 500
    rel_tol: float = 1e-12
    seed: int = 0


@dataclass
class DecayFit:
    params: DecayParams
    history: list[GroupErrorRecord]
    objective_value: float
    converged: bool
    objective_trace: list[float] = field(default_factory=list)
    start_objectives: list[float] = field(default_factory=list)

    def predicted(self, n: np.ndarray, clamp: bool = False) -> np.ndarray:
        return curve_values(self.params, n, clamp=clamp)


def _spec_init(N: np.ndarray, Y: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Default start: 1/sqrt(n) regime with per-group floor/amplitude guesses.

    Returned in the reduced parameterization (mass scale absorbed into the
    four shared coefficients): a_bar = (a_half/a0^0.5, a1/a0, a2/a0^2,
    a3/a0^3) with a0 = 1/mean training mass, a_half = 1 and a_k = 0.01.
    """
    J = N.shape[1]
    active = W > 0
    mean_mass = float(N[active].mean()) if active.any() else 1.0
    a0 = max(1.0 / max(mean_mass, 1.0), A0_MIN)
    a_bar = np.array([1.0 / a0**0.5, 0.01 / a0, 0.01 / a0**2, 0.01 / a0**3])
    big = np.where(active, Y, np.inf)
    c = np.min(big, axis=0)
    c[~np.isfinite(c)] = 0.0
    first_idx = np.argmax(active, axis=0)
    first = Y[first_idx, np.arange(J)]
    first = np.where(active.any(axis=0), first, 0.0)
    b = np.maximum(first - c, 0.01)
    return a_bar, b, c


def fit(
    history: Sequence[GroupErrorRecord],
    weights: tuple[np.ndarray, np.ndarray] | None = None,
    config: FitConfig | None = None,
) -> DecayFit:
    """Fit the decay model to recorded checkpoints.

    Multi-start minimization; every accepted step decreases the objective,
    so the returned objective is no worse than any tried initialization and
    the per-start trace is monotone non-increasing.  Deterministic given
    (history, weights, config).
    """
    if len(history) < 2:
        raise FitError(f"need at least 2 checkpoints, got {len(history)}")
    cfg = config or FitConfig()
    N, Y, W = _matrices(history, weights)
    J = N.shape[1]
    if not np.any(W > 0):
        raise FitError("all groups have zero weight")

    # reduced parameterization: e = c_j + b_j * (a_bar . phi(n)) with
    # phi = (n^-0.5, n^-1, n^-2, n^-3); the redundant mass scale a0 is 1
    nn = np.maximum(N, 1.0)
    inv = 1.0 / nn
    phi = np.stack([np.sqrt(inv), inv, inv**2, inv**3])  # (4, T, J)
    if not np.all(np.isfinite(phi)) or not np.all(np.isfinite(Y)):
        bad = ~np.all(np.isfinite(Y), axis=0) if np.any(~np.isfinite(Y)) else ~np.all(
            np.isfinite(phi), axis=(0, 1)
        )
        raise DecayNumericalError(int(np.flatnonzero(bad)[0]))

    def reduced_objective(a_bar, b, c) -> float:
        e = c[None, :] + b[None, :] * np.tensordot(a_bar, phi, axes=1)
        per_group = np.sum(W * (e - Y) ** 2, axis=0)
        if not np.all(np.isfinite(per_group)):
            raise DecayNumericalError(int(np.flatnonzero(~np.isfinite(per_group))[0]))
        return float(per_group.sum())

    a_init, b_init, c_init = _spec_init(N, Y, W)
    rng = np.random.default_rng(cfg.seed)

    best: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    best_obj = np.inf
    best_trace: list[float] = []
    best_converged = False
    start_objs: list[float] = []

    for start in range(cfg.restarts):
        a_bar, b, c = a_init.copy(), b_init.copy(), c_init.copy()
        if start > 0:
            a_bar *= np.exp(rng.normal(0.0, 1.0, size=4))
            b *= np.exp(rng.normal(0.0, 0.5, size=J))
            c *= np.exp(rng.normal(0.0, 0.5, size=J))
        obj = reduced_objective(a_bar, b, c)
        start_objs.append(obj)
        trace = [obj]
        converged = False
        for _ in range(cfg.max_outer):
            psi = np.tensordot(a_bar, phi, axes=1)
            b, c = _solve_bc(psi, Y, W)
            a_bar = _solve_a(phi, Y, W, b, c, a_bar)
            obj_new = reduced_objective(a_bar, b, c)
            trace.append(obj_new)
            if obj - obj_new <= cfg.rel_tol * max(obj, 1e-12):
                converged = True
                obj = obj_new
                break
            obj = obj_new
        # final amplitude/floor refresh so stored params are block-optimal
        psi = np.tensordot(a_bar, phi, axes=1)
        b, c = _solve_bc(psi, Y, W)
        obj = reduced_objective(a_bar, b, c)
        trace.append(obj)
        if obj < best_obj:
            best_obj = obj
            best = (a_bar.copy(), b.copy(), c.copy())
            best_trace = trace
            best_converged = converged

    a_bar, b, c = best
    params = DecayParams(
        a0=1.0, a_half=float(a_bar[0]), a1=float(a_bar[1]),
        a2=float(a_bar[2]), a3=float(a_bar[3]), b=b, c=c,
    )
    return DecayFit(
        params=params,
        history=list(history),
        objective_value=best_obj,
        converged=best_converged,
        objective_trace=best_trace,
        start_objectives=start_objs,
    )


# -- serialization ----------------------------------------------------------

_FIT_HEADER = "# groupdecay-decayfit/1"


def serialize_fit(params: DecayParams, objective: float | None = None) -> str:
    """Text export: a header row with the shared coefficients, then one row
    per group with its amplitude b and floor c."""
    out = [_FIT_HEADER]
    if objective is not None:
        out.append(f"# objective {objective!r}")
    out.append("a0,a_half,a1,a2,a3")
    out.append(
        ",".join(repr(float(v)) for v in (params.a0, params.a_half, params.a1, params.a2, params.a3))
    )
    out.append("group,b,c")
    for j in range(params.n_groups):
        out.append(f"{j},{float(params.b[j])!r},{float(params.c[j])!r}")
    return "\n".join(out) + "\n"


def parse_fit(text: str) -> DecayParams:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if not lines or lines[0] != "a0,a_half,a1,a2,a3":
        raise FitError("not a decay-fit file")
    a = [float(v) for v in lines[1].split(",")]
    if lines[2] != "group,b,c":
        raise FitError("missing group table header")
    b: list[float] = []
    c: list[float] = []
    for ln in lines[3:]:
        cols = ln.split(",")
        b.append(float(cols[1]))
        c.append(float(cols[2]))
    return DecayParams(
        a0=a[0], a_half=a[1], a1=a[2], a2=a[3], a3=a[4],
        b=np.asarray(b), c=np.asarray(c),
    )
