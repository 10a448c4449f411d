"""Parametrized vector fields, trajectories and the built-in families.

Fields are evaluated component-first: ``flow.rhs(x, lam)`` takes an array of
shape ``(dim, ...)`` and returns an array of the same shape, so one call
advances a whole batch of sample points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .expr import parse_system

__all__ = [
    "NonFiniteState",
    "StepUnderflow",
    "ValidationFailed",
    "ParametrizedFlow",
    "Trajectory",
    "EscapePolicy",
    "integrate",
    "flow_map",
    "builtin_spiral",
    "builtin_lorenz",
    "builtin_saddle",
    "builtin_sink",
    "builtin_frozen_sink",
    "builtin_double_well",
    "builtin_zero",
    "flow_from_text",
    "load_flow",
    "get_builtin",
    "sparrow_V",
    "sparrow_Vdot",
    "sparrow_trapping_radius",
    "sparrow_trapping_level",
    "sparrow_box",
    "sparrow_cell_min",
]


class NonFiniteState(FloatingPointError):
    """The vector field produced NaN or infinity."""


class StepUnderflow(RuntimeError):
    """The adaptive step collapsed below the configured minimum."""


class ValidationFailed(AssertionError):
    pass


@dataclass(frozen=True)
class ParametrizedFlow:
    dim: int
    rhs: Callable[[np.ndarray, float], np.ndarray]
    param_range: tuple[float, float] = (0.0, 1.0)
    lipschitz_hint: Optional[float] = None
    name: str = "custom"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        lo, hi = self.param_range
        if not lo <= hi:
            raise ValueError(f"empty parameter range {self.param_range}")
        if self.lipschitz_hint is not None and self.lipschitz_hint < 0:
            raise ValueError("lipschitz_hint must be nonnegative")

    def eval(self, x: Sequence[float], lam: float) -> np.ndarray:
        """Velocity at a single state."""
        x = np.asarray(x, dtype=float).reshape(self.dim, 1)
        return np.asarray(self.rhs(x, lam), dtype=float).reshape(self.dim)

    def reversed(self) -> "ParametrizedFlow":
        """The same family with time running backwards."""
        rhs = self.rhs

        def neg(x, lam):
            return -rhs(x, lam)

        meta = dict(self.meta)
        meta["reversed"] = not meta.get("reversed", False)
        return replace(self, rhs=neg, name=self.name, meta=meta)


@dataclass(frozen=True)
class EscapePolicy:
    """Leaving the ball of this radius counts as reaching infinity."""

    radius: float = math.inf

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("escape radius must be positive")

    @classmethod
    def for_box(cls, lo, hi, factor: float = 2.0) -> "EscapePolicy":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        circ = float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))
        return cls(factor * circ)

    def check_domain(self, lo, hi) -> None:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        circ = float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))
        if not self.radius > circ:
            raise ValueError(
                f"escape radius {self.radius} must exceed the domain circumradius {circ:.6g}"
            )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Samples in integration order.

    Times are strictly monotone in the direction of integration: increasing
    forward in time, decreasing for backward runs.
    """

    times: np.ndarray
    states: np.ndarray
    escaped: bool = False
    escape_time: Optional[float] = None

    def __post_init__(self):
        self.times.setflags(write=False)
        self.states.setflags(write=False)

    @property
    def samples(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.times.tolist(), self.states))

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.escaped == other.escaped
            and self.escape_time == other.escape_time
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.states, other.states)
        )

    __hash__ = None


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B5 - _B4


def _dp_step(rhs, lam, y, h, k1):
    """One Dormand-Prince step on a batch; y has shape (dim, m), h shape (m,)."""
    ks = [k1]
    for i in range(1, 7):
        acc = y.copy()
        for j, a in enumerate(_A[i]):
            if a != 0.0:
                acc += (h * a) * ks[j]
        ks.append(rhs(acc, lam))
    y_new = y.copy()
    for j in range(6):
        if _B5[j] != 0.0:
            y_new += (h * _B5[j]) * ks[j]
    err = np.zeros_like(y)
    for j in range(7):
        if _E[j] != 0.0:
            err += (h * _E[j]) * ks[j]
    return y_new, err, ks[6]


# single trajectories run long; a tighter local target keeps global drift near tol
LOCAL_SHARE = 16.0


def _error_ratio(err, y, y_new, tol):
    scale = tol * np.maximum(1.0, np.maximum(np.abs(y), np.abs(y_new)))
    return np.max(np.abs(err) / scale, axis=0)


def integrate(
    flow: ParametrizedFlow,
    lam: float,
    x0: Sequence[float],
    t_end: float,
    policy: EscapePolicy = EscapePolicy(),
    tol: float = 1e-8,
    h_min: float = 1e-12,
    h_init: Optional[float] = None,
    max_step: Optional[float] = None,
) -> Trajectory:
    """Adaptive Dormand-Prince integration of one trajectory.

    A negative ``t_end`` integrates the reverse flow. Integration stops early
    when the state leaves the escape ball. Steps are held to a local error
    of ``tol / LOCAL_SHARE`` so that drift accumulated over long runs stays
    on the order of ``tol``.
    """
    x = np.asarray(x0, dtype=float).reshape(flow.dim)
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"non-finite initial state {x}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    direction = 1.0 if t_end >= 0 else -1.0
    span = abs(float(t_end))
    rhs = flow.rhs

    def f(y, lam_):
        return direction * rhs(y, lam_)

    y = x.reshape(flow.dim, 1).copy()
    times = [0.0]
    states = [x.copy()]
    if np.linalg.norm(x) >= policy.radius:
        return Trajectory(np.array(times), np.array(states), True, 0.0)
    t = 0.0
    h = h_init if h_init is not None else min(0.01, span) if span > 0 else 0.0
    hmax = max_step if max_step is not None else max(span, 1e-300)
    k1 = f(y, lam)
    if not np.all(np.isfinite(k1)):
        raise NonFiniteState(f"vector field is not finite at {x}")
    escaped = False
    while t < span:
        h = min(h, span - t, hmax)
        harr = np.array([h])
        y_new, err, k7 = _dp_step(f, lam, y, harr, k1)
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(k7))):
            if h <= h_min:
                raise NonFiniteState(f"vector field is not finite near {y.ravel()}")
            h *= 0.25
            continue
        ratio = float(_error_ratio(err, y, y_new, tol / LOCAL_SHARE)[0])
        if ratio <= 1.0:
            t = t + h if span - t - h > 1e-15 * span else span
            y, k1 = y_new, k7
            times.append(direction * t)
            states.append(y.ravel().copy())
            if np.linalg.norm(y) >= policy.radius:
                escaped = True
                break
        fac = 5.0 if ratio == 0 else min(5.0, max(0.2, 0.9 * ratio ** -0.2))
        h = h * fac
        if h < h_min and t < span:
            raise StepUnderflow(f"step {h:.3g} below minimum at t={direction * t:.6g}")
    return Trajectory(
        np.array(times),
        np.array(states),
        escaped,
        times[-1] if escaped else None,
    )


def flow_map(
    flow: ParametrizedFlow,
    lam: float,
    points: np.ndarray,
    tau: float,
    tol: float = 1e-8,
    escape_radius: float = math.inf,
    h_min: float = 1e-12,
    box: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Time-``tau`` images of a batch of points, shape ``(m, dim)``.

    Every point carries its own adaptive step, so each endpoint is identical
    to what a batch of one would give. Returns ``(endpoints, escaped,
    failed)``; escaped and failed points keep their last computed state.
    If ``box`` is given, a point whose norm exceeds the box circumradius by a
    wide margin is allowed to stop early as escaped from the box.
    """
    pts = np.asarray(points, dtype=float)
    m = pts.shape[0]
    y = pts.T.copy()
    out = y.copy()
    escaped = np.zeros(m, dtype=bool)
    failed = np.zeros(m, dtype=bool)
    if m == 0:
        return out.T, escaped, failed
    direction = 1.0 if tau >= 0 else -1.0
    span = abs(float(tau))
    rhs = flow.rhs

    def f(yy, lam_):
        return direction * rhs(yy, lam_)

    idx = np.arange(m)
    t = np.zeros(m)
    h = np.full(m, min(0.01, span) if span > 0 else 0.0)
    with np.errstate(all="ignore"):
        k1 = f(y, lam)
        bad = ~np.all(np.isfinite(k1), axis=0)
        r0 = np.linalg.norm(y, axis=0)
        esc0 = r0 >= escape_radius
        failed[bad] = True
        escaped[esc0 & ~bad] = True
        keep = ~(bad | esc0) & (span > 0)
        idx, y, k1, t, h = idx[keep], y[:, keep], k1[:, keep], t[keep], h[keep]
        while idx.size:
            h = np.minimum(h, span - t)
            y_new, err, k7 = _dp_step(f, lam, y, h, k1)
            finite = np.all(np.isfinite(y_new), axis=0) & np.all(np.isfinite(k7), axis=0)
            ratio = _error_ratio(err, y, y_new, tol)
            ratio = np.where(finite, ratio, np.inf)
            acc = ratio <= 1.0
            t_new = np.where(span - t - h > 1e-15 * span, t + h, span)
            t = np.where(acc, t_new, t)
            y = np.where(acc, y_new, y)
            k1 = np.where(acc, k7, k1)
            fac = np.where(
                ratio == 0, 5.0, np.clip(0.9 * np.power(ratio, -0.2), 0.2, 5.0)
            )
            fac = np.where(finite, fac, 0.25)
            h = h * fac
            done = t >= span
            esc = acc & (np.linalg.norm(y, axis=0) >= escape_radius)
            under = (h < h_min) & ~done & ~esc
            stop = done | esc | under
            if stop.any():
                sidx = idx[stop]
                out[:, sidx] = y[:, stop]
                escaped[idx[esc]] = True
                failed[idx[under]] = True
                keep = ~stop
                idx, y, k1, t, h = idx[keep], y[:, keep], k1[:, keep], t[keep], h[keep]
    return out.T, escaped, failed


# ---------------------------------------------------------------- built-ins


def _spiral_rhs(x, lam):
    px, py = x[0], x[1]
    r = np.sqrt(px * px + py * py)
    # radial part x * (1 - lam r)^2 is continuous at the origin with value 0
    g = (1.0 - lam * r) ** 2
    return np.stack([-px * g - py, -py * g + px])


def builtin_spiral() -> ParametrizedFlow:
    """Planar family dr/dt = -r^3 (1/r - lam)^2, dtheta/dt = 1 in Cartesian form.

    For lam > 0 the circle of radius 1/lam is a periodic orbit; the origin
    attracts everything inside it.
    """
    return ParametrizedFlow(2, _spiral_rhs, (0.0, 1.0), None, "spiral")


def spiral_radial_velocity(r, lam):
    r = np.asarray(r, dtype=float)
    return -r * (1.0 - lam * r) ** 2


def builtin_lorenz(
    sigma: float = 10.0, b: float = 8.0 / 3.0, r_range: tuple[float, float] = (20.0, 28.0)
) -> ParametrizedFlow:
    """Lorenz equations with the Rayleigh number r = c + lam (d - c)."""
    c, d = map(float, r_range)

    def rhs(x, lam):
        r = c + lam * (d - c)
        X, Y, Z = x[0], x[1], x[2]
        return np.stack([sigma * (Y - X), r * X - Y - X * Z, X * Y - b * Z])

    return ParametrizedFlow(
        3, rhs, (0.0, 1.0), None, "lorenz", {"sigma": sigma, "b": b, "r_range": (c, d)}
    )


def lorenz_r(flow: ParametrizedFlow, lam: float) -> float:
    c, d = flow.meta["r_range"]
    return c + lam * (d - c)


def lorenz_lambda(flow: ParametrizedFlow, r: float) -> float:
    c, d = flow.meta["r_range"]
    return 0.0 if d == c else (r - c) / (d - c)


def builtin_saddle() -> ParametrizedFlow:
    """dx/dt = x, dy/dt = -y (parameter ignored)."""

    def rhs(x, lam):
        return np.stack([x[0], -x[1]])

    return ParametrizedFlow(2, rhs, (0.0, 1.0), 1.0, "saddle")


def builtin_sink(dim: int = 2) -> ParametrizedFlow:
    """dx/dt = -x in any dimension (parameter ignored)."""

    def rhs(x, lam):
        return -np.asarray(x, dtype=float)

    return ParametrizedFlow(dim, rhs, (0.0, 1.0), 1.0, f"sink{dim}")


def builtin_frozen_sink() -> ParametrizedFlow:
    """Planar sink with rotation, identical for every parameter value."""

    def rhs(x, lam):
        return np.stack([-x[0] - x[1], -x[1] + x[0]])

    return ParametrizedFlow(2, rhs, (0.0, 1.0), 2.0, "frozen_sink")


def builtin_double_well() -> ParametrizedFlow:
    """Flow attracted to the figure-eight level set of a double well.

    With H = y^2/2 - x^2/2 + x^4/4 the field is the Hamiltonian rotation of
    H plus a pull ``-(1 + lam) H grad H`` toward the level H = 0, which is
    the figure eight through the saddle at the origin. The figure eight
    attracts from outside and from inside both lobes, so it is a
    non-spherical separator fixture with H_1 of rank two.
    """

    def rhs(x, lam):
        X, Y = x[0], x[1]
        H = 0.5 * Y * Y - 0.5 * X * X + 0.25 * X**4
        mu = 1.0 + lam
        gx = X**3 - X
        return np.stack([Y - mu * H * gx, -gx - mu * H * Y])

    return ParametrizedFlow(2, rhs, (0.0, 1.0), None, "double_well")


def builtin_zero(dim: int = 2) -> ParametrizedFlow:
    def rhs(x, lam):
        return np.zeros_like(np.asarray(x, dtype=float))

    return ParametrizedFlow(dim, rhs, (0.0, 1.0), 0.0, f"zero{dim}")


_BUILTINS = {
    "spiral": builtin_spiral,
    "lorenz": builtin_lorenz,
    "saddle": builtin_saddle,
    "sink": builtin_sink,
    "frozen_sink": builtin_frozen_sink,
    "double_well": builtin_double_well,
}


def get_builtin(name: str) -> ParametrizedFlow:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise KeyError(f"unknown built-in system {name!r}; have {sorted(_BUILTINS)}") from None


def flow_from_text(text: str, name: str = "custom") -> ParametrizedFlow:
    nodes = parse_system(text)
    dim = len(nodes)

    def rhs(x, lam):
        xs = [np.asarray(x[i], dtype=float) for i in range(dim)]
        comps = [np.broadcast_to(n.evaluate(xs, lam), xs[0].shape) for n in nodes]
        return np.stack(comps).astype(float)

    return ParametrizedFlow(dim, rhs, (0.0, 1.0), None, name, {"expressions": text})


def load_flow(source: str) -> ParametrizedFlow:
    """A built-in name, or a path to an expression file."""
    if source in _BUILTINS:
        return get_builtin(source)
    with open(source, encoding="utf-8") as fh:
        return flow_from_text(fh.read(), name=source)


# ---------------------------------------------------------------- Sparrow


def sparrow_V(x, r: float, sigma: float = 10.0):
    """Sparrow's Lyapunov function r x^2 + sigma y^2 + sigma (z - 2r)^2."""
    x = np.asarray(x, dtype=float)
    return r * x[0] ** 2 + sigma * x[1] ** 2 + sigma * (x[2] - 2.0 * r) ** 2


def sparrow_Vdot(x, r: float, sigma: float = 10.0, b: float = 8.0 / 3.0):
    """Derivative of V along the Lorenz field (closed form)."""
    x = np.asarray(x, dtype=float)
    return -2.0 * sigma * (r * x[0] ** 2 + x[1] ** 2 + b * x[2] ** 2 - 2.0 * r * b * x[2])


def _sphere_points(count: int) -> np.ndarray:
    # Fibonacci lattice: deterministic, near-uniform
    i = np.arange(count) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / count)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    return np.stack(
        [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)]
    )


def sparrow_trapping_radius(
    sigma: float, b: float, r: float, samples: int = 20000, validate: bool = True
) -> float:
    """Radius outside of which V decreases along Lorenz orbits.

    dV/dt < 0 off the ellipsoid r x^2 + y^2 + b z (z - 2r) <= 0. On it
    x^2 + y^2 <= b z (2r - z) / min(r, 1) with z in [0, 2r], and the
    returned radius is the maximum of sqrt(z^2 + b z (2r - z) / min(r, 1)).
    """
    if min(sigma, b, r) <= 0:
        raise ValueError("sigma, b, r must be positive")
    m = min(r, 1.0)
    a2 = 1.0 - b / m
    a1 = 2.0 * b * r / m
    cands = [0.0, 2.0 * r]
    if a2 < 0:
        zs = -a1 / (2.0 * a2)
        if 0.0 < zs < 2.0 * r:
            cands.append(zs)
    rho = math.sqrt(max(a2 * z * z + a1 * z for z in cands))
    if validate:
        pts = 1.01 * rho * _sphere_points(samples)
        worst = float(np.max(sparrow_Vdot(pts, r, sigma, b)))
        if worst >= 0:
            raise ValidationFailed(f"dV/dt = {worst} >= 0 on the inflated sphere")
    return rho


def sparrow_trapping_level(
    sigma: float, b: float, r: float, samples: int = 40000, margin: float = 1.01
) -> float:
    """A level c with {V <= c} forward invariant.

    V can only increase on the ellipsoid r x^2 + y^2 + b (z - r)^2 <= b r^2,
    so any c above the maximum of V there works. V is convex, so the
    maximum sits on the ellipsoid's surface, sampled on a Fibonacci lattice.
    """
    if min(sigma, b, r) <= 0:
        raise ValueError("sigma, b, r must be positive")
    u = _sphere_points(samples)
    pts = np.stack([u[0] * r * math.sqrt(b / r), u[1] * r * math.sqrt(b), r + u[2] * r])
    return float(np.max(sparrow_V(pts, r, sigma))) * margin


def sparrow_box(sigma: float, b: float, r: float, level: float) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounding box of {V <= level}."""
    ex = math.sqrt(level / r)
    ey = math.sqrt(level / sigma)
    return np.array([-ex, -ey, 2 * r - ey]), np.array([ex, ey, 2 * r + ey])


def sparrow_cell_min(lo: np.ndarray, hi: np.ndarray, r: float, sigma: float) -> np.ndarray:
    """Minimum of V over boxes given by rows of lo/hi (exact: V is separable)."""
    x = np.clip(0.0, lo[:, 0], hi[:, 0])
    y = np.clip(0.0, lo[:, 1], hi[:, 1])
    z = np.clip(2.0 * r, lo[:, 2], hi[:, 2])
    return r * x**2 + sigma * y**2 + sigma * (z - 2.0 * r) ** 2
