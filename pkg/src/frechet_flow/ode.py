"""Level-coherent flows of graded vector fields with explicit existence certificates.

For a field ``X = lim X_n`` that is ``K_n``-Lipschitz at level ``n`` on a
pseudo-ball ``B(x0, 2r)``, the flow exists on ``[-alpha, alpha]`` whenever
``alpha * exp(2 alpha C1) <= r / (2 C2)`` with ``C1 = max K_n`` and ``C2`` the
sup of the field on ``B(x0, r)``.  :func:`integrate` computes those constants,
then solves every level either by Picard iteration (the fixed point the
existence argument uses) or by fixed-step RK4.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb

from . import sampling
from .errors import DomainExit, DomainViolation, NoConvergence, NonPositiveInput, NotCoherent, ShapeMismatch
from .operators import GradedOperator, level_operator_norm
from .tower import Thread, Tower, coherence_defect, hat_seminorm

LIPSCHITZ_SAFETY = 1.25
FIELD_COHERENCE_TOL = 1e-8
STATE_COHERENCE_TOL = 1e-7
PICARD_TOL = 1e-10
PICARD_MAX_ITER = 200
GROUP_LAW_TOL = 1e-6
FIELD_SAMPLES = 256


@dataclass(frozen=True, eq=False)
class PseudoBall:
    """``{x : nu_n(x - center) < radius for n in indices}``."""

    tower: Tower
    center: Thread
    radius: float
    indices: tuple = None

    def __post_init__(self):
        if self.radius <= 0:
            raise NonPositiveInput("pseudo-ball radius must be positive")
        idx = tuple(range(self.tower.depth + 1)) if self.indices is None else tuple(sorted(set(self.indices)))
        object.__setattr__(self, "indices", idx)

    def distance(self, x):
        """``max_{n in indices} nu_n(x - center)``."""
        coords = x.coords if isinstance(x, Thread) else x
        return max(float(self.tower.levels[n].norm(np.asarray(coords[n]) - self.center[n])) for n in self.indices)

    def contains(self, x):
        return self.distance(x) < self.radius

    def level_points(self, n, count, seed=sampling.DEFAULT_SEED, radius=None):
        """Sample of ``lambda_n(B)``: level-``n`` points respecting every listed index ``<= n``."""
        radius = self.radius if radius is None else radius
        lv = self.tower.levels[n]
        y = sampling.ball_points(count, lv.dim, lv.norm, seed)
        below = [i for i in self.indices if i <= n]
        if below:
            worst = np.max(
                [self.tower.levels[i].norm(self.tower.project(y, i, n)) for i in below], axis=0
            )
            own = lv.norm(y)
            factor = np.divide(own, worst, out=np.ones_like(own), where=worst > own)
            y = y * factor[:, None]
        return self.center[n] + radius * y


@dataclass(frozen=True, eq=False)
class GradedField:
    """Coherent family of level fields ``X_n`` on the pseudo-ball ``domain``.

    ``level_fields[n]`` maps arrays of shape ``(..., dim_n)`` to the same
    shape.  ``affine`` optionally holds ``(A_n, b_n)`` so Lipschitz constants
    and sup bounds are exact; ``lipschitz``/``bound`` let callers that know
    their constants skip sampling.
    """

    tower: Tower
    domain: PseudoBall
    level_fields: tuple
    affine: tuple = None
    lipschitz: tuple = None
    bound: float = None

    def __post_init__(self):
        if len(self.level_fields) != len(self.tower.levels):
            raise ShapeMismatch("one level field per tower level is required")

    @classmethod
    def from_affine(cls, tower, A, b=None, domain=None):
        mats = A.levels if isinstance(A, GradedOperator) else tuple(np.asarray(a, dtype=float) for a in A)
        if b is None:
            b = tower.zero_thread()
        vecs = b.coords if isinstance(b, Thread) else tuple(np.asarray(v, dtype=float) for v in b)
        domain = domain or PseudoBall(tower, tower.zero_thread(), 1.0)
        fields = tuple(_affine_fn(a, v) for a, v in zip(mats, vecs))
        return cls(tower, domain, fields, affine=tuple(zip(mats, vecs)))

    @classmethod
    def from_polynomials(cls, tower, polys, domain=None):
        """Fields given as :class:`~frechet_flow.poly.Polynomial` s of shape ``(dim_n,)``."""
        domain = domain or PseudoBall(tower, tower.zero_thread(), 1.0)
        affine = None
        if all(p.is_affine() for p in polys):
            parts = [p.affine_parts() for p in polys]
            affine = tuple((lin.T, const) for const, lin in parts)
        return cls(tower, domain, tuple(polys), affine=affine)

    @property
    def is_affine(self):
        return self.affine is not None

    def __call__(self, x):
        return Thread(tuple(np.asarray(f(c), dtype=float) for f, c in zip(self.level_fields, x.coords)))

    def coherence_defect(self, count=FIELD_SAMPLES, seed=sampling.DEFAULT_SEED):
        """Max over sampled domain points of ``||lambda_n X_{n+1}(z) - X_n(lambda_n z)||``."""
        worst = 0.0
        for n in range(self.tower.depth):
            z = self.domain.level_points(n + 1, count, seed)
            lhs = self.tower.project(self.level_fields[n + 1](z), n, n + 1)
            rhs = self.level_fields[n](self.tower.project(z, n, n + 1))
            worst = max(worst, float(np.max(self.tower.levels[n].norm(lhs - rhs), initial=0.0)))
        return worst


def _affine_fn(A, b):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    return lambda x: np.asarray(x) @ A.T + b


# -- certificates ---------------------------------------------------------------

def _ball_inside(inner_center, inner_radius, outer):
    return outer.distance(inner_center) + inner_radius <= outer.radius * (1 + 1e-12)


def estimate_lipschitz(X, ball, n, samples=FIELD_SAMPLES, seed=sampling.DEFAULT_SEED):
    """``K_n`` with ``nu_n(X(x) - X(x')) <= K_n nu_n(x - x')`` on ``ball``.

    Exact operator norm of the linear part for affine fields; otherwise the
    largest sampled difference quotient times 1.25.
    """
    if not _ball_inside(ball.center, ball.radius, X.domain):
        raise DomainViolation("ball is not contained in the field's domain")
    if X.lipschitz is not None:
        return float(X.lipschitz[n])
    lv = X.tower.levels[n]
    if X.is_affine:
        return level_operator_norm(X.affine[n][0], lv, lv)
    pts = ball.level_points(n, samples, seed)
    vals = np.asarray(X.level_fields[n](pts))
    dx = lv.norm(pts[:, None, :] - pts[None, :, :])
    dv = lv.norm(vals[:, None, :] - vals[None, :, :])
    q = np.divide(dv, dx, out=np.zeros_like(dv), where=dx > 1e-12)
    return LIPSCHITZ_SAFETY * float(q.max(initial=0.0))


def _sup_bound(X, ball, n, samples, seed):
    lv = X.tower.levels[n]
    if X.is_affine:
        A, b = X.affine[n]
        return float(lv.norm(A @ ball.center[n] + b)) + level_operator_norm(A, lv, lv) * ball.radius
    pts = ball.level_points(n, samples, seed)
    return LIPSCHITZ_SAFETY * float(np.max(lv.norm(np.asarray(X.level_fields[n](pts))), initial=0.0))


def alpha_bound(C1, C2, r, rtol=1e-12):
    """Largest ``alpha`` with ``alpha * exp(2 alpha C1) <= r / (2 C2)`` (bisection)."""
    if C1 < 0 or C2 <= 0 or r <= 0:
        raise NonPositiveInput(f"need C1 >= 0, C2 > 0, r > 0 (got {C1}, {C2}, {r})")
    rhs = r / (2.0 * C2)
    if C1 == 0:
        return rhs
    lo, hi = 0.0, rhs  # alpha * exp(...) >= alpha, so the root lies below rhs
    log_rhs = math.log(rhs)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        # compared in logs so large right-hand sides cannot overflow exp
        if math.log(mid) + 2.0 * mid * C1 <= log_rhs:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class FlowCertificate:
    C1: float
    C2: float
    r: float
    alpha: float
    lipschitz_constants: tuple
    indices: tuple

    def as_dict(self):
        return {
            "C1": self.C1,
            "C2": self.C2,
            "r": self.r,
            "alpha": self.alpha,
            "lipschitz_constants": list(self.lipschitz_constants),
            "indices": list(self.indices),
        }


def flow_certificate(X, x0, samples=FIELD_SAMPLES, seed=sampling.DEFAULT_SEED):
    """Lipschitz, sup and radius constants certifying the flow from ``x0`` inside ``X.domain``."""
    r = 0.5 * (X.domain.radius - X.domain.distance(x0))
    if r <= 0:
        raise DomainViolation("initial point is outside the field's domain")
    idx = X.domain.indices
    big = PseudoBall(X.tower, x0, 2 * r * (1 - 1e-12), idx)
    small = PseudoBall(X.tower, x0, r, idx)
    K = tuple(estimate_lipschitz(X, big, n, samples, seed) for n in range(X.tower.depth + 1))
    C1 = max(K[n] for n in idx)
    C2 = X.bound if X.bound is not None else max(_sup_bound(X, small, n, samples, seed) for n in idx)
    alpha = math.inf if C2 == 0 else alpha_bound(C1, C2, r)
    return FlowCertificate(C1, C2, r, alpha, K, idx)


# -- integrators ------------------------------------------------------------------

def rk4_steps(T, C1):
    return max(64, math.ceil(abs(T) * C1 * 32))


def rk4_path(f, y0, t0, t1, n_steps):
    """Fixed-step classical RK4; returns the ``(n_steps + 1, *y0.shape)`` trajectory."""
    h = (t1 - t0) / n_steps
    y = np.array(y0, dtype=float)
    out = np.empty((n_steps + 1,) + y.shape)
    out[0] = y
    for k in range(n_steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = y
    return out


def chebyshev_nodes(t0, t1, count):
    s = np.cos(np.pi * np.arange(count) / (count - 1))[::-1]
    return t0 + 0.5 * (t1 - t0) * (s + 1.0), s


def chebyshev_integration_matrix(s):
    """``Q`` with ``(Q f)_k = int_{-1}^{s_k} p_f`` for the interpolant ``p_f`` of ``f`` at nodes ``s``."""
    n = len(s)
    V = cheb.chebvander(s, n - 1)
    coeffs = np.linalg.solve(V, np.eye(n))
    integ = cheb.chebint(coeffs, lbnd=-1.0, axis=0)
    return cheb.chebvander(s, n) @ integ


@dataclass
class PicardStats:
    iterations: int
    changes: list
    ratios: list

    @property
    def max_ratio(self):
        return max(self.ratios, default=0.0)


def picard_solve(f, x0, t0, t1, count, norm, tol=PICARD_TOL, max_iter=PICARD_MAX_ITER):
    """Iterate ``x <- x0 + int_{t0}^t f(x)`` on Chebyshev nodes until the sup change is ``<= tol``."""
    times, s = chebyshev_nodes(t0, t1, count)
    Q = 0.5 * (t1 - t0) * chebyshev_integration_matrix(s)
    x0 = np.asarray(x0, dtype=float)
    X = np.broadcast_to(x0, (count,) + x0.shape).copy()
    changes, ratios = [], []
    for it in range(1, max_iter + 1):
        new = x0 + Q @ f(X)
        change = float(np.max(norm(new - X), initial=0.0))
        if changes and changes[-1] > 1e3 * tol:
            ratios.append(change / changes[-1])
        changes.append(change)
        X = new
        if change <= tol:
            return times, X, PicardStats(it, changes, ratios)
    raise NoConvergence(f"Picard iteration did not converge in {max_iter} iterations (last change {changes[-1]:.3g})")


@dataclass
class FlowResult:
    tower: Tower
    times: np.ndarray
    per_level_states: tuple
    certificate: dict = field(default_factory=dict)

    @property
    def states(self):
        return [self.state(k) for k in range(len(self.times))]

    def state(self, k):
        return Thread(tuple(traj[k] for traj in self.per_level_states))

    @property
    def final(self):
        return self.state(len(self.times) - 1)

    def max_coherence_defect(self):
        return max(coherence_defect(self.tower, self.state(k)) for k in range(len(self.times)))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        width = max(self.tower.dims)
        w.writerow(["time", "level"] + [f"x{j}" for j in range(width)])
        for k, t in enumerate(self.times):
            for n, traj in enumerate(self.per_level_states):
                row = [repr(float(t)), n] + [repr(float(v)) for v in traj[k]]
                w.writerow(row + [""] * (width - len(traj[k])))
        return buf.getvalue()

    def to_json(self):
        return {
            "times": [float(t) for t in self.times],
            "levels": [traj.tolist() for traj in self.per_level_states],
            "certificate": self.certificate,
        }


def integrate(
    X,
    x0,
    t_span,
    method="rk4",
    alpha_override=None,
    seed=sampling.DEFAULT_SEED,
    certificate=None,
):
    """Flow of ``X`` from the thread ``x0`` over ``t_span``, one level at a time.

    Picard mode refuses spans longer than the certified ``alpha``; RK4 only
    warns.  Both raise :class:`DomainExit` when a level trajectory leaves
    ``B(x0, 2r)`` and :class:`NotCoherent` when assembled states disagree
    under the bondings by more than 1e-7.
    """
    if method not in ("picard", "rk4"):
        raise ValueError(f"unknown method {method!r}")
    t0, t1 = (float(v) for v in t_span)
    T = t1 - t0
    cert = certificate or flow_certificate(X, x0, seed=seed)
    alpha = cert.alpha
    if alpha_override is not None:
        warnings.warn(
            f"alpha override {alpha_override} replaces the certified alpha {alpha}: "
            "existence and uniqueness are no longer guaranteed",
            stacklevel=2,
        )
        alpha = float(alpha_override)
    if abs(T) > alpha * (1 + 1e-12):
        if method == "picard":
            raise DomainViolation(f"|t| = {abs(T)} exceeds the certified alpha = {alpha}")
        warnings.warn(f"|t| = {abs(T)} exceeds the certified alpha = {alpha}", stacklevel=2)

    info = {"method": method, "t_span": [t0, t1], **cert.as_dict()}
    if alpha_override is not None:
        info["alpha_override"] = float(alpha_override)
    levels = []
    if T == 0:
        times = np.array([t0])
        levels = [np.asarray(c)[None, :].copy() for c in x0.coords]
    elif method == "rk4":
        n_steps = rk4_steps(T, cert.C1)
        times = np.linspace(t0, t1, n_steps + 1)
        for n, fn in enumerate(X.level_fields):
            levels.append(rk4_path(fn, x0[n], t0, t1, n_steps))
        info["steps"] = n_steps
    else:
        count = max(33, math.ceil(abs(T) * cert.C1 * 32) + 1)
        iterations, ratios = [], []
        times = None
        for n, fn in enumerate(X.level_fields):
            times, traj, stats = picard_solve(fn, x0[n], t0, t1, count, X.tower.levels[n].norm)
            levels.append(traj)
            iterations.append(stats.iterations)
            ratios.append(stats.max_ratio)
        info["nodes"] = count
        info["iterations"] = iterations
        info["contraction_ratio"] = max(ratios)
    result = FlowResult(X.tower, times, tuple(levels), info)

    two_r = 2 * cert.r
    for n in cert.indices:
        dist = X.tower.levels[n].norm(result.per_level_states[n] - x0[n])
        if np.any(dist >= two_r):
            k = int(np.argmax(dist >= two_r))
            raise DomainExit(f"level {n} leaves B(x0, 2r={two_r:.4g}) at t = {times[k]:.4g}")
    defect = result.max_coherence_defect()
    info["coherence_defect"] = defect
    if defect > STATE_COHERENCE_TOL:
        raise NotCoherent(f"flow states are not threads (defect {defect:.3g})")
    return result


def flow_group_check(X, x0, s, t, method="rk4", seed=sampling.DEFAULT_SEED):
    """``hat_nu_N(Fl_t(Fl_s(x0)) - Fl_{s+t}(x0))``; a pass is ``<= 1e-6``."""
    cert = flow_certificate(X, x0, seed=seed)
    for tau in (s, t, s + t):
        if abs(tau) > cert.alpha * (1 + 1e-12):
            raise DomainViolation(f"time {tau} is outside the certified interval [-{cert.alpha}, {cert.alpha}]")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mid = integrate(X, x0, (0.0, s), method, certificate=cert).final
        two_step = integrate(X, mid, (0.0, t), method, alpha_override=cert.alpha).final
        one_step = integrate(X, x0, (0.0, s + t), method, certificate=cert).final
    return hat_seminorm(X.tower, two_step - one_step, X.tower.depth)


def field_from_json(doc, where="$"):
    """Affine field document: tower schema plus ``{"field": {"levels": [{"A", "b"}]}, "domain": {...}}``."""
    from .errors import SchemaError
    from .tower import tower_from_json

    if not isinstance(doc, dict) or "field" not in doc:
        raise SchemaError("field document needs a 'field' block", where)
    t = tower_from_json(doc, where)
    body = doc["field"].get("levels") if isinstance(doc["field"], dict) else None
    if not isinstance(body, list) or len(body) != len(t.levels):
        raise SchemaError(f"need one field level per tower level ({len(t.levels)})", f"{where}.field.levels")
    mats, vecs = [], []
    for n, lv in enumerate(body):
        try:
            A = np.array(lv["A"], dtype=float)
            b = np.array(lv.get("b", np.zeros(t.dims[n])), dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad affine level: {exc}", f"{where}.field.levels[{n}]") from exc
        if A.shape != (t.dims[n], t.dims[n]) or b.shape != (t.dims[n],):
            raise SchemaError("affine level has the wrong shape", f"{where}.field.levels[{n}]")
        mats.append(A)
        vecs.append(b)
    dom = doc.get("domain", {})
    try:
        center = dom.get("center")
        center = t.zero_thread() if center is None else Thread(tuple(np.asarray(c, dtype=float) for c in center))
        ball = PseudoBall(t, center, float(dom.get("radius", 1.0)), dom.get("indices"))
    except (TypeError, ValueError, NonPositiveInput) as exc:
        raise SchemaError(f"bad domain: {exc}", f"{where}.domain") from exc
    X = GradedField.from_affine(t, mats, vecs, ball)
    defect = X.coherence_defect()
    if defect > FIELD_COHERENCE_TOL:
        raise SchemaError(f"field levels are not coherent (defect {defect:.3g})", f"{where}.field")
    return X
