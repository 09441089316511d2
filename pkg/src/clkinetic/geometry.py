"""Convex level-set domains, backward exit times and the kinetic distance.

A domain is Omega = {xi < 0} with xi a convex polynomial of degree <= 4 in
(x, y, z).  Balls and axis-aligned ellipsoids are polynomials too, but they also
carry their quadric data so exit times can use the quadratic formula.

Matrix conventions: ``jac_x_xb[i, j] = d x_b^i / d x^j`` (Jacobian layout).
"""
from dataclasses import dataclass

import numpy as np

from clkinetic import backend
from clkinetic.errors import (ConfigError, DegenerateGradient, GrazingRay,
                              NoExit, ZeroVelocity, ZeroWeight)

TOL = 1e-10          # level-set residual
TOL_GRAZE = 1e-8     # |n.v|/|v| below this is grazing
TOL_GRAD = 1e-12


class Polynomial3:
    """Polynomial in three variables stored as coefficients and exponent rows."""

    def __init__(self, coef, powers):
        coef = np.asarray(coef, dtype=float).reshape(-1)
        powers = np.asarray(powers, dtype=np.int_).reshape(-1, 3)
        if coef.size != powers.shape[0]:
            raise ValueError("coef and powers length mismatch")
        if np.any(powers < 0):
            raise ValueError("negative exponent")
        merged = {}
        for c, p in zip(coef, map(tuple, powers)):
            merged[p] = merged.get(p, 0.0) + c
        keys = sorted(k for k, c in merged.items() if c != 0.0)
        self.coef = np.array([merged[k] for k in keys], dtype=float)
        self.powers = np.array(keys, dtype=np.int_).reshape(-1, 3)

    @property
    def degree(self):
        return int(self.powers.sum(axis=1).max()) if self.coef.size else 0

    def deriv(self, i):
        keep = self.powers[:, i] > 0
        p = self.powers[keep].copy()
        c = self.coef[keep] * p[:, i]
        p[:, i] -= 1
        return Polynomial3(c, p)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.ascontiguousarray(x.reshape(-1, 3))
        if self.coef.size == 0:
            return np.zeros(x.shape[:-1])
        return backend.poly_eval(self.coef, self.powers, flat).reshape(x.shape[:-1])


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x, x.ndim == 1


class ConvexDomain:
    """Omega = {xi < 0} for a convex polynomial xi.

    Parameters
    ----------
    xi : Polynomial3
    bounding_radius : float
        Omega is contained in a ball of this radius, so every chord is at most
        twice as long.
    convexity_lower_bound : float, optional
        c_xi with zeta^T Hess(xi) zeta >= c_xi |zeta|^2 on Omega-bar.  Estimated
        by sampling when omitted.
    quadric : (center, diag) or None
        Set for xi = (x-c)^T diag(D) (x-c) - 1 to enable closed-form exits.
    """

    def __init__(self, xi, bounding_radius, convexity_lower_bound=None,
                 quadric=None, name="polynomial", center=(0.0, 0.0, 0.0)):
        if xi.degree > 4:
            raise ConfigError("polynomial level sets are limited to degree 4")
        self.xi_poly = xi
        self.grad_polys = [xi.deriv(i) for i in range(3)]
        self.hess_polys = [[self.grad_polys[i].deriv(j) for j in range(3)]
                           for i in range(3)]
        self.bounding_radius = float(bounding_radius)
        self.center = np.asarray(center, dtype=float)
        self.quadric = quadric
        self.name = name
        if convexity_lower_bound is None:
            convexity_lower_bound = 0.999 * self.estimate_convexity()
        if not convexity_lower_bound > 0:
            raise ConfigError("level set is not strictly convex on the sampled domain")
        self.convexity_lower_bound = float(convexity_lower_bound)
        self._c2 = None

    # -- constructors --------------------------------------------------------
    @classmethod
    def ball(cls, radius=1.0, center=(0.0, 0.0, 0.0)):
        return cls.ellipsoid((radius, radius, radius), center, name="ball")

    @classmethod
    def ellipsoid(cls, semi_axes, center=(0.0, 0.0, 0.0), name="ellipsoid"):
        a = np.asarray(semi_axes, dtype=float)
        c = np.asarray(center, dtype=float)
        if a.shape != (3,) or np.any(a <= 0):
            raise ConfigError("semi_axes must be three positive numbers")
        d = 1.0 / a ** 2
        coef, powers = [-1.0], [(0, 0, 0)]
        for i in range(3):
            e = np.zeros(3, dtype=int)
            e[i] = 2
            coef.append(d[i]); powers.append(tuple(e))
            e[i] = 1
            coef.append(-2.0 * d[i] * c[i]); powers.append(tuple(e))
            coef.append(d[i] * c[i] ** 2); powers.append((0, 0, 0))
        xi = Polynomial3(coef, powers)
        return cls(xi, bounding_radius=float(a.max()), convexity_lower_bound=2.0 * d.min(),
                   quadric=(c, d), name=name, center=c)

    @classmethod
    def polynomial(cls, terms, bounding_radius, convexity_lower_bound=None,
                   center=(0.0, 0.0, 0.0)):
        coef = [t[0] for t in terms]
        powers = [t[1] for t in terms]
        return cls(Polynomial3(coef, powers), bounding_radius, convexity_lower_bound,
                   center=center)

    @classmethod
    def from_config(cls, spec):
        kind = spec.get("type")
        p = spec.get("params", {})
        if kind == "ball":
            return cls.ball(p.get("radius", 1.0), p.get("center", (0.0, 0.0, 0.0)))
        if kind == "ellipsoid":
            return cls.ellipsoid(p["semi_axes"], p.get("center", (0.0, 0.0, 0.0)))
        if kind == "polynomial":
            return cls.polynomial(p["terms"], p["bounding_radius"],
                                  p.get("convexity_lower_bound"),
                                  p.get("center", (0.0, 0.0, 0.0)))
        raise ConfigError(f"unknown domain type {kind!r}")

    # -- evaluators ----------------------------------------------------------
    def xi(self, x):
        return self.xi_poly(x)

    def grad_xi(self, x):
        return np.stack([g(x) for g in self.grad_polys], axis=-1)

    def hess_xi(self, x):
        rows = [np.stack([h(x) for h in row], axis=-1) for row in self.hess_polys]
        return np.stack(rows, axis=-2)

    def sample_interior(self, n, rng):
        """Uniform points in Omega by rejection from the bounding cube."""
        out = np.empty((0, 3))
        R = self.bounding_radius
        while out.shape[0] < n:
            m = max(2 * (n - out.shape[0]), 64)
            cand = self.center + rng.uniform(-R, R, size=(m, 3))
            out = np.vstack([out, cand[self.xi(cand) < 0.0]])
        return out[:n]

    def estimate_convexity(self, n=20000, seed=12345):
        rng = np.random.default_rng(seed)
        x = self.sample_interior(n, rng)
        return float(np.linalg.eigvalsh(self.hess_xi(x))[:, 0].min())

    def c2_norm_estimate(self, n=20000, seed=54321):
        """Sampled sup over Omega-bar of max(|xi|, |grad xi|, ||Hess xi||)."""
        if self._c2 is None:
            rng = np.random.default_rng(seed)
            x = self.sample_interior(n, rng)
            xb = boundary_points(self, rng.standard_normal((n, 3)))
            x = np.vstack([x, xb])
            h = np.abs(np.linalg.eigvalsh(self.hess_xi(x))).max(axis=1)
            g = np.linalg.norm(self.grad_xi(x), axis=1)
            self._c2 = float(max(np.abs(self.xi(x)).max(), g.max(), h.max()))
        return self._c2


def boundary_points(domain, directions):
    """Boundary points hit by rays from the domain center along ``directions``."""
    d = np.asarray(directions, dtype=float)
    c = np.broadcast_to(domain.center, d.shape)
    t, xb, _, _ = exit_batch(domain, c, -d)
    return xb


# -- normals and decompositions ----------------------------------------------

def outward_normal(domain, x, tol=TOL):
    x, single = _as_points(x)
    if np.any(np.abs(domain.xi(x)) > max(tol, 1e-8)):
        raise ValueError("outward_normal expects boundary points")
    return normals(domain, x)


def normals(domain, x):
    """grad xi / |grad xi| without the boundary check."""
    g = domain.grad_xi(x)
    nrm = np.linalg.norm(g, axis=-1, keepdims=True)
    if np.any(nrm < TOL_GRAD):
        raise DegenerateGradient("vanishing gradient of xi")
    return g / nrm


def tangent_basis(n):
    """Orthonormal (t1, t2) completing n to a right-handed frame."""
    n = np.asarray(n, dtype=float)
    a = np.zeros_like(n)
    use_x = np.abs(n[..., 0]) < 0.9
    a[..., 0] = np.where(use_x, 1.0, 0.0)
    a[..., 1] = np.where(use_x, 0.0, 1.0)
    t1 = a - np.sum(a * n, axis=-1, keepdims=True) * n
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(n, t1)
    return t1, t2


def decompose(n, v):
    """(v_perp, v_par) with v_perp = v.n and v_par the tangential 3-vector."""
    vp = np.sum(v * n, axis=-1)
    return vp, v - vp[..., None] * n


# -- exit times ----------------------------------------------------------------

@dataclass(frozen=True)
class ExitRecord:
    t_b: float
    x_b: np.ndarray
    n_xb: np.ndarray
    grazing_flag: bool


def _quadric_exit(domain, X, V, tol):
    c, d = domain.quadric
    y = X - c
    A = np.einsum("ij,j,ij->i", V, d, V)
    B = 2.0 * np.einsum("ij,j,ij->i", y, d, V)
    C = np.einsum("ij,j,ij->i", y, d, y) - 1.0
    status = np.zeros(X.shape[0], dtype=np.int64)
    status[C > tol] = 1
    disc = np.maximum(B * B - 4.0 * A * C, 0.0)
    sq = np.sqrt(disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(B >= 0.0, (B + sq) / (2.0 * A), 2.0 * C / (B - sq))
    leaving = (np.abs(C) <= tol) & (B <= 0.0)
    status[leaving] = 2
    t = np.where(status == 0, t, 0.0)
    t = np.where(np.isfinite(t), t, 0.0)
    return t, status


def exit_times(domain, X, V, tol=TOL, method="auto"):
    """Vectorized backward exit times t_b(x, v) = sup{s>0: x - s v in Omega}.

    Returns (t_b, status) with status 0 = ok, 1 = start outside, 2 = start on
    the boundary with -v pointing out (t_b = 0), 3 = root bracketing failed.
    """
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    V = np.ascontiguousarray(np.atleast_2d(V), dtype=float)
    X, V = np.broadcast_arrays(X, V)
    X = np.ascontiguousarray(X)
    V = np.ascontiguousarray(V)
    if np.any(np.einsum("ij,ij->i", V, V) == 0.0):
        raise ZeroVelocity("v = 0 has no exit")
    if method == "auto":
        method = "quadric" if domain.quadric is not None else "bracket"
    if method == "quadric":
        return _quadric_exit(domain, X, V, tol)
    gc = [g.coef for g in domain.grad_polys]
    gp = [g.powers for g in domain.grad_polys]
    return backend.poly_exit(domain.xi_poly.coef, domain.xi_poly.powers, gc, gp,
                             X, V, domain.bounding_radius, tol)


def exit_batch(domain, X, V, tol=TOL, method="auto"):
    """(t_b, x_b, n(x_b), grazing) for arrays of starts.

    Raises NoExit when the root finder fails and ValueError for starts
    outside the domain.
    """
    t, status = exit_times(domain, X, V, tol, method)
    if np.any(status == 1):
        raise ValueError("start point outside the domain")
    if np.any(status == 3):
        raise NoExit("exit root not bracketed within 2R/|v|")
    X, V = np.broadcast_arrays(np.atleast_2d(X), np.atleast_2d(V))
    xb = X - t[:, None] * V
    n = normals(domain, xb)
    speed = np.linalg.norm(V, axis=1)
    grazing = np.abs(np.einsum("ij,ij->i", n, V)) <= TOL_GRAZE * speed
    return t, xb, n, grazing


def backward_exit(domain, x, v, tol=TOL, method="auto"):
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise ZeroVelocity("v = 0 has no exit")
    t, xb, n, g = exit_batch(domain, x[None], v[None], tol, method)
    return ExitRecord(float(t[0]), xb[0], n[0], bool(g[0]))


def exit_derivatives(domain, x, v, tol_graze=TOL_GRAZE):
    """Derivatives of t_b and x_b in x and v at a non-grazing configuration.

    grad_x_tb = n/(n.v), grad_v_tb = -t_b n/(n.v),
    jac_x_xb = I - v n^T/(n.v), jac_v_xb = -t_b I + t_b v n^T/(n.v),
    with n = n(x_b).  In the transposed layout the last two read
    I - n (x) v/(n.v) and -t_b I + t_b n (x) v/(n.v).
    """
    rec = backward_exit(domain, x, v)
    v = np.asarray(v, dtype=float)
    n = rec.n_xb
    nv = float(n @ v)
    if abs(nv) <= tol_graze * np.linalg.norm(v):
        raise GrazingRay("n(x_b).v too small for derivatives")
    tb = rec.t_b
    outer = np.outer(v, n) / nv
    return {
        "t_b": tb,
        "x_b": rec.x_b,
        "grad_x_tb": n / nv,
        "grad_v_tb": -tb * n / nv,
        "jac_x_xb": np.eye(3) - outer,
        "jac_v_xb": -tb * np.eye(3) + tb * outer,
    }


def change_of_variable_jacobian(domain, x1, v1):
    """|det d(x_2, t_b)/d v_1| = t_b^3/|n(x_2).v_1| with x_2 = x_b(x_1, v_1).

    x_2 is measured in an orthonormal tangent chart at the base exit point,
    where the surface metric is the identity.
    """
    rec = backward_exit(domain, x1, v1)
    return rec.t_b ** 3 / abs(float(rec.n_xb @ np.asarray(v1, dtype=float)))


def change_of_variable_jacobian_fd(domain, x1, v1, h=1e-6):
    """Finite-difference oracle for ``change_of_variable_jacobian``."""
    v1 = np.asarray(v1, dtype=float)
    rec = backward_exit(domain, x1, v1)
    t1, t2 = tangent_basis(rec.n_xb)
    scale = h * max(1.0, np.linalg.norm(v1))

    def chart(v):
        r = backward_exit(domain, x1, v)
        return np.array([r.x_b @ t1, r.x_b @ t2, r.t_b])

    J = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = scale
        J[:, j] = (chart(v1 + e) - chart(v1 - e)) / (2 * scale)
    return abs(np.linalg.det(J))


# -- kinetic distance -----------------------------------------------------------

@dataclass(frozen=True)
class KineticWeightParams:
    """Cutoff scale eps for alpha = chi_eps(alpha-tilde)."""

    eps: float

    @classmethod
    def default(cls, domain, factor=0.01):
        return cls(factor * domain.c2_norm_estimate())

    def chi(self, s):
        return chi(s, self.eps)

    def chi_prime(self, s):
        return chi_prime(s, self.eps)


def chi(s, eps):
    """Identity on [0, eps], 2 eps on [4 eps, inf), C2 sextic blend between."""
    s = np.asarray(s, dtype=float)
    w = np.clip(1.0 - (s - eps) / (3.0 * eps), 0.0, 1.0)
    blend = eps * (2.0 - 3.0 * w ** 5 + 2.0 * w ** 6)
    return np.where(s <= eps, s, blend)


def chi_prime(s, eps):
    s = np.asarray(s, dtype=float)
    w = np.clip(1.0 - (s - eps) / (3.0 * eps), 0.0, 1.0)
    d = (5.0 * w ** 4 - 4.0 * w ** 5)  # d chi / ds on the blend
    return np.where(s <= eps, 1.0, d)


def alpha_tilde(domain, x, v):
    """sqrt(|v.grad xi|^2 - 2 xi v.Hess xi.v), clipped at 0 against rounding."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    g = domain.grad_xi(x)
    H = domain.hess_xi(x)
    vg = np.sum(v * g, axis=-1)
    vHv = np.einsum("...i,...ij,...j->...", v, H, v)
    a2 = vg * vg - 2.0 * domain.xi(x) * vHv
    return np.sqrt(np.maximum(a2, 0.0))


def kinetic_distance(domain, params, x, v):
    return params.chi(alpha_tilde(domain, x, v))


def near_boundary_ratio(domain, params, x, v):
    """alpha/(|grad xi| |n.v|) at boundary points; 1 wherever alpha-tilde <= eps.

    On the boundary alpha-tilde = |grad xi||n.v|, so the ratio to |n.v| alone
    is |grad xi| (2 on the unit ball), not 1.
    """
    g = domain.grad_xi(x)
    gn = np.linalg.norm(g, axis=-1)
    nv = np.abs(np.sum(g * np.asarray(v, dtype=float), axis=-1)) / gn
    return kinetic_distance(domain, params, x, v) / (gn * nv)


def velocity_lemma_ratio(domain, params, x, v, s1, s2):
    """log[alpha(x - s2 v, v)/alpha(x - s1 v, v)]."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    s1 = np.asarray(s1, dtype=float)[..., None]
    s2 = np.asarray(s2, dtype=float)[..., None]
    a1 = kinetic_distance(domain, params, x - s1 * v, v)
    a2 = kinetic_distance(domain, params, x - s2 * v, v)
    if np.any(a1 == 0.0) or np.any(a2 == 0.0):
        raise ZeroWeight("alpha vanishes (grazing boundary point)")
    return np.log(a2) - np.log(a1)


def velocity_lemma_samples(domain, params, n, rng, frac_window=1.0):
    """Random free-flight segments (x, v, s1, s2) inside Omega-bar.

    x uniform in Omega, v isotropic with |v| in [0.1, 3]; the segment is a
    random sub-interval of [0, t_b(x, v)] of relative length ``frac_window``.
    """
    x = domain.sample_interior(n, rng)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    v = d * rng.uniform(0.1, 3.0, size=(n, 1))
    tb, _, _, _ = exit_batch(domain, x, v)
    a = rng.uniform(0.0, 1.0, size=n)
    b = rng.uniform(0.0, 1.0, size=n)
    lo = np.minimum(a, b) * frac_window * tb
    hi = np.maximum(a, b) * frac_window * tb
    return x, v, lo, hi


def fit_velocity_lemma_constant(domain, params, x, v, s1, s2):
    """max |log-ratio| / (|v||s2 - s1|) over the given segments."""
    r = np.abs(velocity_lemma_ratio(domain, params, x, v, s1, s2))
    scale = np.linalg.norm(v, axis=-1) * np.abs(s2 - s1)
    ok = scale > 0
    return float(np.max(r[ok] / scale[ok])) if np.any(ok) else 0.0


def velocity_lemma_grazing_samples(domain, params, n, rng, floor=2e-2):
    """Chords starting on the boundary with alpha-tilde in [floor, 1]*4 eps.

    These are the segments where the cutoff does not saturate, so they carry
    the information about C.  The floor keeps alpha-tilde^2 well above the
    rounding in xi(x_b); below ~1e-4 relative the log-ratio is dominated by
    cancellation.
    """
    d = rng.standard_normal((n, 3))
    xb = boundary_points(domain, d)
    nn = normals(domain, xb)
    t1, t2 = tangent_basis(nn)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    tau = np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2
    g = np.linalg.norm(domain.grad_xi(xb), axis=1)
    speed = rng.uniform(0.1, 3.0, n)
    smax = np.minimum(1.0, 4.0 * params.eps / (g * speed))
    sin_t = smax * np.exp(rng.uniform(np.log(floor), 0.0, n))
    v = speed[:, None] * (np.sqrt(1.0 - sin_t ** 2)[:, None] * tau + sin_t[:, None] * nn)
    tb, _ = exit_times(domain, xb, v)
    a = rng.uniform(0.0, 1.0, n)
    b = rng.uniform(0.0, 1.0, n)
    return xb, v, np.minimum(a, b) * tb, np.maximum(a, b) * tb


def velocity_lemma_mixed_samples(domain, params, n, rng):
    """Half uniform free-flight segments, half boundary chords near grazing."""
    m = n // 2
    a = velocity_lemma_samples(domain, params, m, rng)
    b = velocity_lemma_grazing_samples(domain, params, n - m, rng)
    return tuple(np.concatenate([p, q]) for p, q in zip(a, b))


def velocity_lemma_check(domain, params, n, rng, safety=2.0):
    """Fit C on two disjoint sample sets and cross-check with a safety factor.

    Returns C_A, C_B, their relative spread and the number of segments of
    each set that violate |log ratio| <= safety * C_other * |v| |s2 - s1|.
    """
    A = velocity_lemma_mixed_samples(domain, params, n, rng)
    B = velocity_lemma_mixed_samples(domain, params, n, rng)
    cA = fit_velocity_lemma_constant(domain, params, *A)
    cB = fit_velocity_lemma_constant(domain, params, *B)

    def violations(S, C):
        x, v, s1, s2 = S
        r = np.abs(velocity_lemma_ratio(domain, params, x, v, s1, s2))
        return int(np.sum(r > safety * C * np.linalg.norm(v, axis=1) * np.abs(s2 - s1)))

    return {"C_A": cA, "C_B": cB, "spread": abs(cA - cB) / max(cA, cB, 1e-300),
            "violations_B": violations(B, cA), "violations_A": violations(A, cB)}


def quartic_test_domain():
    """xi = x^4+y^4+z^4 + |x|^2 - 1: convex (Hess >= 2 I) and not quadratic.

    On quadrics alpha-tilde is exactly constant along lines, so the velocity
    lemma constant is 0 there; this domain gives a nontrivial constant.
    """
    terms = [[1.0, (4, 0, 0)], [1.0, (0, 4, 0)], [1.0, (0, 0, 4)],
             [1.0, (2, 0, 0)], [1.0, (0, 2, 0)], [1.0, (0, 0, 2)], [-1.0, (0, 0, 0)]]
    return ConvexDomain.polynomial(terms, bounding_radius=1.0, convexity_lower_bound=2.0)
