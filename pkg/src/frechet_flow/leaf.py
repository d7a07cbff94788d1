"""Integral-leaf charts ``u -> Fl^{X_u}_1(x)`` with ``X_u = rho'(u)`` and their diagnostics.

The fiber is split as ``ker rho_x + F'`` coherently across levels (orthogonal
complement at the top, pushed down by the fiber bondings).  The anchor
restricted to ``F'`` is certified Lipschitz, which yields a radius ``eta``
on which every time-1 flow exists.  The derivative of the chart comes from
the variational equations ``G' = A G`` and ``S' = A S + B``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import sampling
from .algebroid import distance_to_span, kernel_dim
from .errors import CertificateMissing, DomainExit, DomainViolation, IncoherentSplit, KernelDimJump, NotSurjective
from .ode import LIPSCHITZ_SAFETY, GradedField, PseudoBall, alpha_bound, rk4_path, rk4_steps
from .operators import level_operator_norm
from .poly import Polynomial
from .tower import BanachLevel, BondingMap, Thread, make_tower

SPLIT_TOL = 1e-9
RANK_RTOL = 1e-10
TANGENCY_TOL = 1e-6
CHART_COHERENCE_TOL = 1e-7
FD_ORACLE_TOL = 1e-4
MAX_SHRINKS = 8
CERT_SAMPLES = 128


def _span_basis(M, tol=1e-12):
    """Orthonormal basis of ``range(M)``; keeps already orthonormal columns and returns ``I`` for full span."""
    M = np.asarray(M, dtype=float)
    rows = M.shape[0]
    keep = M[:, np.linalg.norm(M, axis=0) > tol]
    if keep.shape[1] and np.allclose(keep.T @ keep, np.eye(keep.shape[1]), atol=tol):
        basis = keep
    else:
        basis = scipy.linalg.orth(M, rcond=RANK_RTOL)
    if basis.shape[1] == rows:
        return np.eye(rows)
    return basis


@dataclass(frozen=True, eq=False)
class KernelSplit:
    """Per-level ``ker r_i`` and complement ``F'_i`` (orthonormal column bases) with ``r'_i = r_i Q_i``."""

    kernels: tuple
    complements: tuple
    restricted: tuple
    param_bondings: tuple
    defects: dict = field(default_factory=dict)

    @property
    def ranks(self):
        return tuple(Q.shape[1] for Q in self.complements)


def kernel_split(T, x):
    """Coherent splitting of the fibers at the base thread ``x`` (list or Thread of base points)."""
    coords = x.coords if isinstance(x, Thread) else [np.asarray(c, dtype=float) for c in x]
    N = T.depth
    R = [np.asarray(lv.rho(coords[n])) for n, lv in enumerate(T.levels)]
    kernels = []
    for n, r in enumerate(R):
        kernels.append(scipy.linalg.null_space(r, rcond=RANK_RTOL) if kernel_dim(r) else np.zeros((r.shape[1], 0)))
        if kernels[-1].shape[1] != kernel_dim(r):
            raise KernelDimJump(f"level {n}: unstable numerical rank")
    complements = [None] * (N + 1)
    K_top = kernels[N]
    complements[N] = _span_basis(np.eye(R[N].shape[1]) - K_top @ K_top.T)
    for i in range(N - 1, -1, -1):
        complements[i] = _span_basis(T.fiber_bond(i, i + 1) @ complements[i + 1])
    complement_defect, kernel_defect = 0.0, 0.0
    for i in range(N + 1):
        Q, K = complements[i], kernels[i]
        rank = R[i].shape[1] - K.shape[1]
        if Q.shape[1] != rank:
            raise IncoherentSplit(f"level {i}: pushed-down complement has dim {Q.shape[1]}, rank is {rank}")
        s = np.linalg.svd(np.hstack([K, Q]), compute_uv=False)
        complement_defect = max(complement_defect, 1.0 - float(s[-1]) if s.size else 0.0)
        if s.size and s[-1] <= 1e-10:
            raise IncoherentSplit(f"level {i}: complement meets the kernel")
        if i < N:
            L = T.fiber_bond(i, i + 1)
            img = L @ kernels[i + 1]
            kernel_defect = max(kernel_defect, float(np.linalg.norm(img - K @ (K.T @ img))) if img.size else 0.0)
    if kernel_defect > SPLIT_TOL:
        raise IncoherentSplit(f"fiber bondings do not map kernels into kernels (defect {kernel_defect:.3g})")
    restricted = tuple(r @ Q for r, Q in zip(R, complements))
    for i, rp in enumerate(restricted):
        if rp.shape[1] and np.linalg.svd(rp, compute_uv=False)[-1] <= RANK_RTOL:
            raise IncoherentSplit(f"level {i}: restricted anchor is not injective")
    params = tuple(
        complements[i].T @ T.fiber_bond(i, i + 1) @ complements[i + 1] for i in range(N)
    )
    return KernelSplit(
        tuple(kernels),
        tuple(complements),
        restricted,
        params,
        {"kernel_image": kernel_defect, "complement": complement_defect},
    )


# -- certificate for rho' ------------------------------------------------------------

@dataclass
class RhoPrimeBounds:
    K: float
    M: float
    r: float
    per_level_K: tuple
    per_level_M: tuple
    exact: bool


def _restricted_anchor(lv, Q):
    return lv.anchor.map_coeffs(lambda c: c @ Q)


def certify_rho_prime(T, x, split, samples=CERT_SAMPLES, seed=sampling.DEFAULT_SEED):
    """Lipschitz constant ``K`` of ``z -> rho'_z`` on ``B(x, 2r)`` and sup bound ``M`` on ``B(x, r)``.

    ``r`` is half the largest radius (uniform over levels) keeping ``B(x, 2r)``
    inside every chart domain.  Affine anchors over euclidean bases get exact
    bounds, anything else is sampled with the 1.25 safety factor.
    """
    coords = x.coords if isinstance(x, Thread) else [np.asarray(c, dtype=float) for c in x]
    gaps = [lv.radius - float(lv.base_level.norm(coords[n] - lv.center)) for n, lv in enumerate(T.levels)]
    if min(gaps) <= 0:
        raise DomainViolation("base point lies outside a chart domain")
    r = 0.5 * min(gaps)
    Ks, Ms = [], []
    exact = True
    for n, lv in enumerate(T.levels):
        Q = split.complements[n]
        rp = _restricted_anchor(lv, Q)
        src = BanachLevel(0, max(Q.shape[1], 1))
        if Q.shape[1] == 0:
            Ks.append(0.0)
            Ms.append(0.0)
            continue
        at_x = level_operator_norm(rp(coords[n]), src, lv.base_level)
        if rp.is_affine() and lv.base_level.norm_kind == "euclidean":
            _, lin = rp.affine_parts()
            K = float(np.linalg.norm(np.vstack(list(lin)), 2)) if lin.size else 0.0
            Ks.append(K)
            Ms.append(at_x + K * r)
            continue
        exact = False
        pts2 = coords[n] + 2 * r * sampling.ball_points(samples, lv.base_dim, lv.base_level.norm, seed)
        pts1 = coords[n] + r * sampling.ball_points(samples, lv.base_dim, lv.base_level.norm, seed + 1)
        vals = rp(pts2)
        best = 0.0
        for a in range(len(pts2)):
            dz = lv.base_level.norm(pts2[a + 1 :] - pts2[a])
            for b, d in enumerate(dz, start=a + 1):
                if d > 1e-12:
                    best = max(best, level_operator_norm(vals[a] - vals[b], src, lv.base_level) / d)
        Ks.append(LIPSCHITZ_SAFETY * best)
        Ms.append(LIPSCHITZ_SAFETY * max(at_x, max(level_operator_norm(v, src, lv.base_level) for v in rp(pts1))))
    return RhoPrimeBounds(max(Ks), max(Ms), r, tuple(Ks), tuple(Ms), exact)


# -- chart -----------------------------------------------------------------------------

@dataclass(eq=False)
class LeafChart:
    tower: object
    x: tuple
    split: KernelSplit
    bounds: RhoPrimeBounds
    eta: float
    alpha: float
    param_tower: object
    steps: int
    _rp: tuple = field(repr=False, default=())
    _jac: tuple = field(repr=False, default=())
    _anchor: tuple = field(repr=False, default=())
    injectivity: dict = None

    @property
    def K(self):
        return self.bounds.K

    @property
    def M(self):
        return self.bounds.M

    @property
    def M1(self):
        return self.bounds.M * math.exp(self.bounds.K)

    @property
    def param_dims(self):
        return self.split.ranks

    def level_params(self, U):
        """Top-level parameters ``(B, r_N)`` pushed to every level."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        out = [None] * (self.tower.depth + 1)
        out[-1] = U
        for i in range(self.tower.depth - 1, -1, -1):
            out[i] = out[i + 1] @ self.split.param_bondings[i].T
        return out

    def param_norm(self, U):
        """``hat nu_N`` of parameters (max of level euclidean norms)."""
        return np.max([np.linalg.norm(u, axis=-1) for u in self.level_params(U)], axis=0)

    def sample_params(self, count, seed=sampling.DEFAULT_SEED, radius=None):
        """Points with ``hat nu(u) < radius`` (default ``eta``)."""
        radius = self.eta if radius is None else radius
        U = sampling.ball_points(count, self.param_dims[-1], lambda v: np.linalg.norm(v, axis=-1), seed)
        top = np.linalg.norm(U, axis=-1)
        hat = self.param_norm(U)
        scale = np.divide(top, hat, out=np.ones_like(top), where=hat > 0)
        return radius * U * scale[:, None]

    def _check_radius(self, U):
        if np.any(self.param_norm(U) > self.eta * (1 + 1e-9)):
            raise DomainViolation(f"parameter outside the certified chart radius {self.eta:.4g}")

    def _run(self, U, n, with_var, times=False):
        lv = self.tower.levels[n]
        Q = self.split.complements[n]
        rp, jac, rho = self._rp[n], self._jac[n], self._anchor[n]
        W = self.level_params(U)[n] @ Q.T
        B = W.shape[0]
        d, r = lv.base_dim, Q.shape[1]

        def rhs(y):
            z = y[:, :d]
            vel = np.einsum("bdf,bf->bd", rho(z), W)
            if not with_var:
                return vel
            A = np.einsum("bdfe,bf->bde", jac(z), W)
            S = y[:, d : d + d * r].reshape(B, d, r)
            G = y[:, d + d * r :].reshape(B, d, d)
            dS = A @ S + rp(z)
            dG = A @ G
            return np.concatenate([vel, dS.reshape(B, -1), dG.reshape(B, -1)], axis=1)

        y0 = np.broadcast_to(self.x[n], (B, d))
        if with_var:
            y0 = np.concatenate(
                [y0, np.zeros((B, d * r)), np.broadcast_to(np.eye(d).ravel(), (B, d * d))], axis=1
            )
        path = rk4_path(rhs, y0, 0.0, 1.0, self.steps)
        dist = lv.base_level.norm(path[:, :, :d] - self.x[n])
        if np.any(dist >= 2 * self.bounds.r):
            raise DomainExit(f"level {n} chart flow leaves B(x, 2r)")
        return path if times else path[-1]

    def phi(self, U, check=True):
        """Level images ``[Phi_i(u_i)]`` for top parameters ``U`` of shape ``(B, r_N)``."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if check:
            self._check_radius(U)
        return [self._run(U, n, False) for n in range(self.tower.depth + 1)]

    def phi_thread(self, u):
        return Thread(tuple(p[0] for p in self.phi(u)))

    def variational(self, U, check=True):
        """``(Phi, S_1, G_1)`` per level for a batch of parameters."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if check:
            self._check_radius(U)
        out = []
        for n, lv in enumerate(self.tower.levels):
            d, r = lv.base_dim, self.param_dims[n]
            y = self._run(U, n, True)
            B = y.shape[0]
            out.append((y[:, :d], y[:, d : d + d * r].reshape(B, d, r), y[:, d + d * r :].reshape(B, d, d)))
        return out

    def variational_path(self, U):
        """Time grid and ``(phi_t, S_t, G_t)`` per level, each with leading axes ``(time, batch)``."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        self._check_radius(U)
        out = []
        for n, lv in enumerate(self.tower.levels):
            d, r = lv.base_dim, self.param_dims[n]
            path = self._run(U, n, True, times=True)
            T, B = path.shape[:2]
            out.append(
                (path[..., :d], path[..., d : d + d * r].reshape(T, B, d, r), path[..., d + d * r :].reshape(T, B, d, d))
            )
        return np.linspace(0.0, 1.0, self.steps + 1), out

    def diagnostics(self):
        return {
            "K": self.bounds.K,
            "M": self.bounds.M,
            "M1": self.M1,
            "r": self.bounds.r,
            "alpha": self.alpha,
            "eta": self.eta,
            "per_level_K": list(self.bounds.per_level_K),
            "per_level_M": list(self.bounds.per_level_M),
            "exact_bounds": self.bounds.exact,
            "ranks": list(self.param_dims),
            "split_defects": dict(self.split.defects),
            "steps": self.steps,
        }


def _param_tower(split):
    levels = [BanachLevel(n, max(r, 1)) for n, r in enumerate(split.ranks)]
    if min(split.ranks) == 0:
        raise CertificateMissing("zero anchor: the leaf through x is a point")
    bonds = [BondingMap(i + 1, i, P) for i, P in enumerate(split.param_bondings)]
    try:
        return make_tower(levels, bonds)
    except NotSurjective as exc:
        raise IncoherentSplit(f"parameter bonding {exc} is not surjective") from exc


def build_chart(T, x=None, eta_request=1.0, seed=sampling.DEFAULT_SEED, certified=True):
    """Certified leaf chart through ``x`` (defaults to the chart-domain centers).

    ``eta = min(eta_request, alpha, 1)`` where ``alpha`` solves the flow
    bound for the constants ``K`` and ``M`` of ``rho'``.  Every ``u`` with
    ``hat nu(u) < eta`` then has a time-1 flow inside ``B(x, 2r)``.  With
    ``certified=False`` the requested radius is used as is; flows are still
    checked against ``B(x, 2r)``.
    """
    x = T.base_point() if x is None else x
    coords = tuple(np.asarray(c, dtype=float) for c in (x.coords if isinstance(x, Thread) else x))
    split = kernel_split(T, coords)
    bounds = certify_rho_prime(T, coords, split, seed=seed)
    if not (np.isfinite(bounds.K) and np.isfinite(bounds.M)):
        raise CertificateMissing("could not bound rho' on the chart ball")
    alpha = math.inf if bounds.M == 0 else alpha_bound(bounds.K, bounds.M, bounds.r)
    if eta_request <= 0:
        raise ValueError("eta must be positive")
    eta = min(float(eta_request), alpha, 1.0) if certified else float(eta_request)
    steps = rk4_steps(1.0, bounds.K * eta)
    rps = tuple(_restricted_anchor(lv, Q).evaluator() for lv, Q in zip(T.levels, split.complements))
    jacs = tuple(lv.anchor.jacobian().evaluator() for lv in T.levels)
    anchors = tuple(lv.anchor.evaluator() for lv in T.levels)
    return LeafChart(T, coords, split, bounds, eta, alpha, _param_tower(split), steps, rps, jacs, anchors)


def shrink(chart, eta):
    """Same chart on a smaller radius."""
    return LeafChart(
        chart.tower, chart.x, chart.split, chart.bounds, eta, chart.alpha, chart.param_tower,
        rk4_steps(1.0, chart.bounds.K * eta), chart._rp, chart._jac, chart._anchor,
    )


def chart_field(chart, u):
    """The graded field ``X_u`` whose time-1 flow from ``x`` is ``Phi(u)``."""
    us = [p[0] for p in chart.level_params(u)]
    polys = []
    for lv, Q, ui in zip(chart.tower.levels, chart.split.complements, us):
        polys.append(lv.anchor.contract(Polynomial.constant(lv.base_dim, Q @ ui), "bf,f->b"))
    domain = PseudoBall(chart.tower.base_tower, Thread(chart.x), 2 * chart.bounds.r)
    return GradedField.from_polynomials(chart.tower.base_tower, polys, domain)


# -- diagnostics -------------------------------------------------------------------------

def variational_dphi(chart, u, v):
    """``T_u Phi(v)`` as a Thread over the base tower (``u``, ``v`` top-level parameters)."""
    sol = chart.variational(u)
    vs = chart.level_params(v)
    return Thread(tuple(S[0] @ vv[0] for (_, S, _), vv in zip(sol, vs)))


def fd_dphi(chart, u, v, h=1e-5):
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    plus = chart.phi(u + h * v, check=False)
    minus = chart.phi(u - h * v, check=False)
    return Thread(tuple((p[0] - m[0]) / (2 * h) for p, m in zip(plus, minus)))


def chart_coherence(chart, U):
    """Max of ``|delta(Phi_{i+1}(u)) - Phi_i(lambda u)|`` over levels and samples."""
    images = chart.phi(U)
    worst = 0.0
    for i in range(chart.tower.depth):
        D = chart.tower.base_bond(i, i + 1)
        d = chart.tower.levels[i].base_level.norm(images[i + 1] @ D.T - images[i])
        worst = max(worst, float(np.max(d, initial=0.0)))
    return worst


def tangency_check(chart, u, sample_v_count=16, seed=sampling.DEFAULT_SEED):
    """Max relative distance of ``T_u Phi(v)`` from the distribution at ``Phi(u)``."""
    sol = chart.variational(u)
    if sample_v_count <= 0:
        return 0.0
    V = sampling.unit_vectors(sample_v_count, chart.param_dims[-1], lambda a: np.linalg.norm(a, axis=-1), seed)
    Vs = chart.level_params(V)
    worst = 0.0
    for k in range(len(V)):
        res, size = 0.0, 0.0
        for n, (phi, S, _) in enumerate(sol):
            w = S[0] @ Vs[n][k]
            res = max(res, distance_to_span(chart.tower.levels[n].rho(phi[0]), w))
            size = max(size, float(np.linalg.norm(w)))
        if size > 0:
            worst = max(worst, res / size)
    return worst


def pushforward_residual(chart, u, times=(0.25, 0.5, 1.0)):
    """Distance of ``T Fl_t (rho(E)_x)`` from ``rho(E)_{Fl_t(x)}``, relative, max over levels and ``times``."""
    grid, path = chart.variational_path(u)
    worst = 0.0
    for t in times:
        k = int(round(t * (len(grid) - 1)))
        for n, (phi, _, G) in enumerate(path):
            R0 = chart.tower.levels[n].rho(chart.x[n])
            Rt = chart.tower.levels[n].rho(phi[k, 0])
            for col in (G[k, 0] @ R0).T:
                nrm = float(np.linalg.norm(col))
                if nrm > 0:
                    worst = max(worst, distance_to_span(Rt, col) / nrm)
    return worst


def _opnorms(mats, src, tgt):
    """Operator norms of a stack of matrices between two levels."""
    mats = np.asarray(mats)
    flat = mats.reshape((-1,) + mats.shape[-2:])
    if src.norm_kind == "euclidean" and tgt.norm_kind == "euclidean":
        vals = np.linalg.norm(flat, 2, axis=(-2, -1))
    else:
        vals = np.array([level_operator_norm(m, src, tgt) for m in flat])
    return vals.reshape(mats.shape[:-2])


@dataclass
class InjectivityReport:
    trials: int
    min_separation_ratio: float
    dphi_min_singular_value: float
    threshold: float

    @property
    def passes(self):
        if self.trials == 0:
            return True
        return self.min_separation_ratio >= self.threshold and self.dphi_min_singular_value >= self.threshold

    def as_dict(self):
        return {
            "trials": self.trials,
            "min_separation_ratio": self.min_separation_ratio,
            "dphi_min_singular_value": self.dphi_min_singular_value,
            "threshold": self.threshold,
            "passes": self.passes,
        }


def _base_hat(chart, images):
    return np.max([lv.base_level.norm(im) for lv, im in zip(chart.tower.levels, images)], axis=0)


def injectivity_probe(chart, trials=256, seed=sampling.DEFAULT_SEED):
    """Separation ratios ``hat nu(Phi(u) - Phi(v)) / hat nu(u - v)`` and the smallest singular value of ``T Phi``."""
    threshold = 1.0 / (2.0 * chart.M1) if chart.M1 > 0 else 0.0
    if trials <= 0:
        return InjectivityReport(0, math.nan, math.nan, threshold)
    pts = chart.sample_params(2 * trials, seed)
    U, V = pts[:trials], pts[trials:]
    # the pair along the weakest direction of T_0 Phi at the top level
    _, _, Vt = np.linalg.svd(chart.split.restricted[-1])
    e = Vt[-1]
    half = 0.5 * chart.eta / max(float(chart.param_norm(e[None])[0]), 1e-300)
    U = np.vstack([U, half * e[None]])
    V = np.vstack([V, -half * e[None]])
    phu, phv = chart.phi(U), chart.phi(V)
    num = _base_hat(chart, [a - b for a, b in zip(phu, phv)])
    den = chart.param_norm(U - V)
    ok = den > 1e-12
    ratio = float(np.min(num[ok] / den[ok]))
    sol = chart.variational(U)
    smin = min(float(np.linalg.svd(S, compute_uv=False)[..., -1].min()) for _, S, _ in sol)
    return InjectivityReport(len(U), ratio, smin, threshold)


def certify_chart(T, x=None, eta_request=1.0, trials=256, seed=sampling.DEFAULT_SEED, certified=True):
    """Build a chart and halve ``eta`` (at most 8 times) until the injectivity probe passes."""
    chart = build_chart(T, x, eta_request, seed, certified)
    history = []
    for attempt in range(MAX_SHRINKS + 1):
        report = injectivity_probe(chart, trials, seed)
        history.append({"eta": chart.eta, **report.as_dict()})
        if report.passes or attempt == MAX_SHRINKS:
            break
        chart = shrink(chart, chart.eta / 2)
    chart.injectivity = {"final": report.as_dict(), "history": history}
    return chart, report


def variational_bounds_check(chart, U):
    """Largest ratios ``||G_t|| / e^K`` and ``||S_t|| / (M e^K)`` along the flows of the samples."""
    _, path = chart.variational_path(U)
    eK = math.exp(chart.K)
    g_ratio, s_ratio = 0.0, 0.0
    for n, (_, S, G) in enumerate(path):
        lv = chart.tower.levels[n]
        s_max = float(np.max(_opnorms(S, BanachLevel(0, S.shape[-1]), lv.base_level)))
        g_max = float(np.max(_opnorms(G, lv.base_level, lv.base_level)))
        g_ratio = max(g_ratio, g_max / eK)
        if chart.M > 0:
            s_ratio = max(s_ratio, s_max / (chart.M * eK))
    return g_ratio, s_ratio


def samples_csv(chart, U):
    images = chart.phi(U)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    r = chart.param_dims[-1]
    width = max(im.shape[1] for im in images)
    w.writerow([f"u{j}" for j in range(r)] + ["level"] + [f"phi{j}" for j in range(width)])
    for k, u in enumerate(np.atleast_2d(U)):
        for n, im in enumerate(images):
            row = [repr(float(v)) for v in u] + [n] + [repr(float(v)) for v in im[k]]
            w.writerow(row + [""] * (width - im.shape[1]))
    return buf.getvalue()


def leaf_diagnostics(chart, U, seed=sampling.DEFAULT_SEED, probe_count=16):
    """Coherence, tangency, finite-difference agreement and variational bounds on the samples ``U``."""
    U = np.atleast_2d(U)
    probe = U[:probe_count]
    rng = np.random.default_rng(seed)
    fd_err = 0.0
    for u in probe:
        v = rng.standard_normal(chart.param_dims[-1])
        v /= np.linalg.norm(v)
        exact = variational_dphi(chart, u, v)
        approx = fd_dphi(chart, u, v)
        num = max(float(np.linalg.norm(a - b)) for a, b in zip(exact.coords, approx.coords))
        den = max(float(np.linalg.norm(a)) for a in exact.coords)
        fd_err = max(fd_err, num / den if den > 0 else num)
    g_ratio, s_ratio = variational_bounds_check(chart, probe[:4])
    return {
        "samples": len(U),
        "chart_coherence_defect": chart_coherence(chart, U) if len(U) else 0.0,
        "tangency_residual": max((tangency_check(chart, u, 8, seed) for u in probe), default=0.0),
        "fd_relative_error": fd_err,
        "G_bound_ratio": g_ratio,
        "S_bound_ratio": s_ratio,
    }
