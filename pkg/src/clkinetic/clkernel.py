"""Cercignani-Lampis scattering kernel.

R(u -> v; x) for incoming u (n.u > 0) and outgoing v (n.v < 0):

    R = |n.v| / (r_perp r_par (2 - r_par) pi/2 (2 T_w)^2)
        * exp(-[(v_perp^2 + (1-r_perp) u_perp^2)/r_perp
                + |v_par - (1-r_par) u_par|^2/(r_par (2-r_par))] / (2 T_w))
        * I0(sqrt(1-r_perp) v_perp u_perp / (T_w r_perp))

Everything is evaluated in log space with the I0 growth folded into the normal
Gaussian, so near-specular walls never overflow.  T_w is static: the kernel's
time argument is not used.
"""
import ast
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from clkinetic import backend
from clkinetic.errors import ConfigError, WrongHalfSpace
from clkinetic.geometry import normals, tangent_basis

LOG_2PI = np.log(2.0 * np.pi)


# -- I0 ---------------------------------------------------------------------

def i0_scaled(y):
    """e^{-|y|} I0(y), stable for |y| up to 1e4 and beyond."""
    y = np.asarray(y, dtype=float)
    out = backend.i0e(y)
    return float(out) if out.ndim == 0 else out


def i0(y):
    """I0(y) = pi^-1 int_0^pi e^{y cos phi} dphi; overflows past |y| ~ 700."""
    y = np.asarray(y, dtype=float)
    with np.errstate(over="ignore"):
        out = np.exp(np.abs(y)) * backend.i0e(y)
    return float(out) if out.ndim == 0 else out


def log_i0(y):
    y = np.abs(np.asarray(y, dtype=float))
    return y + np.log(backend.i0e(y))


# -- wall temperature fields ---------------------------------------------------

_ALLOWED_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt,
                  "tanh": np.tanh, "abs": np.abs, "log": np.log, "arctan": np.arctan}
_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name,
                  ast.Load, ast.Call, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow,
                  ast.USub, ast.UAdd)


class ConstantTemperature:
    def __init__(self, T):
        if not T > 0:
            raise ConfigError("wall temperature must be positive")
        self.T = float(T)
        self.T_max = self.T_min = self.T
        self.n_patches = 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], self.T)

    def patch_id(self, x):
        return np.zeros(np.asarray(x).shape[:-1], dtype=np.int64)


class PatchwiseTemperature:
    """Two patches split by the plane x[axis] = split: values[0] below, values[1] above."""

    def __init__(self, axis, split, values):
        if axis not in (0, 1, 2) or len(values) != 2 or min(values) <= 0:
            raise ConfigError("patchwise temperature needs axis in 0..2 and two positive values")
        self.axis = int(axis)
        self.split = float(split)
        self.values = np.asarray(values, dtype=float)
        self.T_max = float(self.values.max())
        self.T_min = float(self.values.min())
        self.n_patches = 2

    def patch_id(self, x):
        x = np.asarray(x, dtype=float)
        return (x[..., self.axis] >= self.split).astype(np.int64)

    def __call__(self, x):
        return self.values[self.patch_id(x)]


class SmoothTemperature:
    """T_w given as a closed-form expression in x, y, z (numpy functions allowed)."""

    def __init__(self, expr, T_min=None, T_max=None):
        tree = ast.parse(expr, mode="eval")
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED_NODES):
                raise ConfigError(f"disallowed syntax in temperature expression: {expr!r}")
            if isinstance(node, ast.Name) and node.id not in ("x", "y", "z", "pi") \
                    and node.id not in _ALLOWED_FUNCS:
                raise ConfigError(f"unknown name {node.id!r} in temperature expression")
        self.expr = expr
        self._code = compile(tree, "<T_w>", "eval")
        self.T_min = T_min
        self.T_max = T_max
        self.n_patches = 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        env = dict(_ALLOWED_FUNCS, x=x[..., 0], y=x[..., 1], z=x[..., 2], pi=np.pi)
        val = eval(self._code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(val, dtype=float), x.shape[:-1]).copy()

    def patch_id(self, x):
        return np.zeros(np.asarray(x).shape[:-1], dtype=np.int64)

    def bind_bounds(self, domain, n=20000, seed=2024):
        from clkinetic.geometry import boundary_points
        if self.T_min is None or self.T_max is None:
            rng = np.random.default_rng(seed)
            T = self(boundary_points(domain, rng.standard_normal((n, 3))))
            if self.T_min is None:
                self.T_min = float(T.min())
            if self.T_max is None:
                self.T_max = float(T.max())
        if not self.T_min > 0:
            raise ConfigError("wall temperature must stay positive on the boundary")


def temperature_field(spec):
    if isinstance(spec, (int, float)):
        return ConstantTemperature(spec)
    kind = spec.get("type")
    p = spec.get("params", {})
    if kind == "patchwise":
        return PatchwiseTemperature(p.get("axis", 0), p.get("split", 0.0), p["values"])
    if kind == "smooth":
        return SmoothTemperature(p["expr"], p.get("T_min"), p.get("T_max"))
    raise ConfigError(f"unknown temperature field type {kind!r}")


# -- wall model ----------------------------------------------------------------

class WallModel:
    """Wall temperature field and accommodation coefficients.

    ``domain`` is optional; it supplies n(x) when callers pass points only.
    """

    def __init__(self, T_w, r_perp, r_par, domain=None):
        if not 0.0 < r_perp <= 1.0:
            raise ConfigError("r_perp must lie in (0, 1]")
        if not 0.0 < r_par < 2.0:
            raise ConfigError("r_par must lie in (0, 2)")
        field = T_w if callable(T_w) else ConstantTemperature(T_w)
        if isinstance(field, SmoothTemperature) and domain is not None:
            field.bind_bounds(domain)
        self.field = field
        self.r_perp = float(r_perp)
        self.r_par = float(r_par)
        self.domain = domain

    @classmethod
    def from_config(cls, spec, domain=None):
        return cls(temperature_field(spec["T_w"]), spec["r_perp"], spec["r_par"], domain)

    def T_w(self, x):
        return self.field(x)

    @property
    def T_M(self):
        return float(self.field.T_max)

    @property
    def T_m(self):
        return float(self.field.T_min)

    @property
    def r_min(self):
        return min(self.r_par * (2.0 - self.r_par), self.r_perp)

    @property
    def r_max(self):
        return max(self.r_par * (2.0 - self.r_par), self.r_perp)

    def normal(self, x, n=None):
        if n is not None:
            return np.asarray(n, dtype=float)
        if self.domain is None:
            raise ValueError("pass n explicitly or attach a domain to the wall")
        return normals(self.domain, x)


@dataclass(frozen=True)
class VelocityDecomposition:
    v_perp: np.ndarray
    v_par: np.ndarray  # 2-vector in the (t1, t2) basis

    @classmethod
    def at(cls, n, v):
        n = np.asarray(n, dtype=float)
        v = np.asarray(v, dtype=float)
        t1, t2 = tangent_basis(n)
        vp = np.sum(v * n, axis=-1)
        return cls(vp, np.stack([np.sum(v * t1, axis=-1), np.sum(v * t2, axis=-1)], axis=-1))


# -- density ---------------------------------------------------------------

def _log_density(T, r_perp, r_par, u_perp, u_par, v_perp, v_par):
    """log R from decomposed velocities; u_perp > 0 > v_perp, par parts 3-vectors or 2-vectors."""
    a_par = r_par * (2.0 - r_par)
    s_perp = np.sqrt(1.0 - r_perp)
    dpar = v_par - (1.0 - r_par) * u_par
    w = np.abs(v_perp)
    y = s_perp * w * u_perp / (T * r_perp)
    return (-np.log(r_perp * a_par * np.pi / 2.0) + np.log(w) - 2.0 * np.log(2.0 * T)
            - np.sum(dpar * dpar, axis=-1) / (2.0 * T * a_par)
            - (w - s_perp * u_perp) ** 2 / (2.0 * T * r_perp)
            + np.log(backend.i0e(y)))


def cl_log_density(wall, x, u, v, n=None, check=True):
    """log R(u -> v; x).  Requires n.u > 0 and n.v < 0."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = wall.normal(x, n)
    up = np.sum(u * n, axis=-1)
    vp = np.sum(v * n, axis=-1)
    if check and (np.any(up <= 0.0) or np.any(vp >= 0.0)):
        raise WrongHalfSpace("need n.u > 0 (incoming) and n.v < 0 (outgoing)")
    upar = u - up[..., None] * n
    vpar = v - vp[..., None] * n
    T = wall.T_w(x)
    out = _log_density(T, wall.r_perp, wall.r_par, up, upar, vp, vpar)
    return float(out) if np.ndim(out) == 0 else out


def reciprocity_residual(wall, x, u, v, n=None):
    """log R(u->v) - [log R(-v->-u) + (|u|^2-|v|^2)/(2T_w) + log(|n.v|/|n.u|)]."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = wall.normal(x, n)
    T = wall.T_w(x)
    lhs = cl_log_density(wall, x, u, v, n)
    rhs = cl_log_density(wall, x, -v, -u, n)
    nu = np.abs(np.sum(n * u, axis=-1))
    nv = np.abs(np.sum(n * v, axis=-1))
    extra = (np.sum(u * u, axis=-1) - np.sum(v * v, axis=-1)) / (2.0 * T) + np.log(nv / nu)
    return lhs - (rhs + extra)


# -- sampling ----------------------------------------------------------------

def sample_outgoing(wall, x, u, rng, n=None):
    """Exact draw of v ~ R(u -> . ; x); returns v with n.v < 0.

    Tangential: N((1-r_par) u_par, T r_par (2-r_par) I_2).
    Normal: v_perp = -sqrt((sigma G1 + nu)^2 + (sigma G2)^2), sigma^2 = T r_perp,
    nu = sqrt(1-r_perp) u_perp (Rice amplitude).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n = wall.normal(x, n)
    x, u, n = np.broadcast_arrays(x, u, n)
    up = np.sum(u * n, axis=-1)
    if np.any(up <= 0.0):
        raise WrongHalfSpace("incoming velocity must satisfy n.u > 0")
    upar = u - up[..., None] * n
    T = wall.T_w(x)
    shape = up.shape
    g = rng.standard_normal(shape + (4,))
    sig = np.sqrt(T * wall.r_perp)
    nu = np.sqrt(1.0 - wall.r_perp) * up
    vperp = -np.sqrt((sig * g[..., 0] + nu) ** 2 + (sig * g[..., 1]) ** 2)
    t1, t2 = tangent_basis(n)
    tau = np.sqrt(T * wall.r_par * (2.0 - wall.r_par))
    vpar = ((1.0 - wall.r_par) * upar
            + (tau * g[..., 2])[..., None] * t1 + (tau * g[..., 3])[..., None] * t2)
    return vpar + vperp[..., None] * n


def limiting_reflection(kind, n, u):
    n = np.asarray(n, dtype=float)
    u = np.asarray(u, dtype=float)
    if kind == "specular":
        return u - 2.0 * np.sum(n * u, axis=-1, keepdims=True) * n
    if kind == "bounceback":
        return -u
    raise ValueError(f"unknown reflection kind {kind!r}")


# -- Rice law helpers (normal component) ------------------------------------------

def rice_log_pdf(w, sigma, nu):
    """log density of |(sigma G1 + nu, sigma G2)| at w > 0."""
    w = np.asarray(w, dtype=float)
    s2 = sigma * sigma
    return np.log(w / s2) - (w - nu) ** 2 / (2.0 * s2) + np.log(backend.i0e(w * nu / s2))


def _gl(order):
    x, wt = np.polynomial.legendre.leggauss(order)
    return x, wt


def rice_cdf_sorted(ws, sigma, nu, order=6):
    """Rice CDF at ascending points by summing Gauss-Legendre panels between them."""
    ws = np.asarray(ws, dtype=float)
    edges = np.concatenate([[0.0], ws])
    a, b = edges[:-1], edges[1:]
    gx, gw = _gl(order)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * gx[None, :]
    pts = np.maximum(pts, 1e-300)
    vals = np.exp(rice_log_pdf(pts, sigma, nu))
    return np.cumsum(half * (vals @ gw))


def rice_cdf(x, sigma, nu, n_panels=400, order=8):
    """Rice CDF at arbitrary points (composite Gauss-Legendre from 0)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    order_idx = np.argsort(x)
    xs = x[order_idx]
    # refine with a fixed grid so long gaps between points are resolved
    grid = np.linspace(0.0, xs.max(), n_panels + 1)[1:] if xs.max() > 0 else np.zeros(0)
    allp = np.concatenate([grid, xs])
    srt = np.argsort(allp, kind="stable")
    c = rice_cdf_sorted(np.maximum(allp[srt], 0.0), sigma, nu, order)
    out_sorted = np.empty_like(allp)
    out_sorted[srt] = c
    res = np.empty_like(x)
    res[order_idx] = out_sorted[grid.size:]
    return res


def ks_distance(sorted_samples_cdf):
    """Kolmogorov-Smirnov distance given model CDF values at sorted samples."""
    F = np.asarray(sorted_samples_cdf)
    m = F.size
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - F), np.max(F - (i - 1) / m)))


# -- checks --------------------------------------------------------------------

def gauss_legendre_panels(a, b, n_panels, order):
    gx, gw = _gl(order)
    edges = np.linspace(a, b, n_panels + 1)
    h = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + h[:, None] * gx[None, :]).ravel()
    weights = (h[:, None] * gw[None, :]).ravel()
    return nodes, weights


def normalization_check(wall, x, u, n, n_panels=8, order=8):
    """int_{n.v<0} R(u -> v; x) dv by tensor Gauss-Legendre in (v_perp, v_par).

    Boxes: tangential mean +- 10 sigma, normal |v_perp| in
    [max(0, nu - 10 sigma), nu + 10 sigma].  Returns (value, error) where the
    error adds the analytic truncation bound to the difference between two
    quadrature orders.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n = np.asarray(n, dtype=float)
    T = float(wall.T_w(x))
    t1, t2 = tangent_basis(n)
    up = float(u @ n)
    m1 = (1.0 - wall.r_par) * float(u @ t1)
    m2 = (1.0 - wall.r_par) * float(u @ t2)
    s_par = np.sqrt(T * wall.r_par * (2.0 - wall.r_par))
    sig = np.sqrt(T * wall.r_perp)
    nu = np.sqrt(1.0 - wall.r_perp) * up

    def integrate(order_):
        a1, w1 = gauss_legendre_panels(m1 - 10 * s_par, m1 + 10 * s_par, n_panels, order_)
        a2, w2 = gauss_legendre_panels(m2 - 10 * s_par, m2 + 10 * s_par, n_panels, order_)
        lo = max(0.0, nu - 10 * sig)
        a3, w3 = gauss_legendre_panels(lo, nu + 10 * sig, n_panels, order_)
        a3 = np.maximum(a3, 1e-300)
        V1, V2, W = np.meshgrid(a1, a2, a3, indexing="ij")
        vel = (V1[..., None] * t1 + V2[..., None] * t2 - W[..., None] * n)
        uu = np.broadcast_to(u, vel.shape)
        lr = cl_log_density(wall, np.broadcast_to(x, vel.shape), uu, vel,
                            np.broadcast_to(n, vel.shape), check=False)
        return float(np.einsum("ijk,i,j,k->", np.exp(lr), w1, w2, w3))

    val = integrate(order)
    coarse = integrate(order - 2)
    # tangential: 2 * P(|N(0,1)| > 10) per axis; normal: 2D Gaussian radius tail twice
    trunc = 2 * 2 * ndtr(-10.0) + 2 * np.exp(-50.0)
    return val, abs(val - coarse) + trunc


def sampler_check(wall, x, u, n, n_samples, rng):
    """KS distances and moment z-scores of sample_outgoing against the model laws."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n = np.asarray(n, dtype=float)
    T = float(wall.T_w(x))
    v = sample_outgoing(wall, np.broadcast_to(x, (n_samples, 3)),
                        np.broadcast_to(u, (n_samples, 3)), rng,
                        n=np.broadcast_to(n, (n_samples, 3)))
    t1, t2 = tangent_basis(n)
    up = float(u @ n)
    sig = np.sqrt(T * wall.r_perp)
    nu = np.sqrt(1.0 - wall.r_perp) * up
    w = np.sort(-(v @ n))
    ks_perp = ks_distance(rice_cdf_sorted(w, sig, nu))
    s_par = np.sqrt(T * wall.r_par * (2.0 - wall.r_par))
    out = {"ks_perp": ks_perp}
    for name, t in (("1", t1), ("2", t2)):
        comp = v @ t
        mean = (1.0 - wall.r_par) * float(u @ t)
        out["ks_par" + name] = ks_distance(ndtr((np.sort(comp) - mean) / s_par))
        out["z_par" + name] = float((comp.mean() - mean) / (comp.std(ddof=1) / np.sqrt(n_samples)))
    vp2 = w ** 2
    target = 2.0 * T * wall.r_perp + (1.0 - wall.r_perp) * up ** 2
    out["z_perp2"] = float((vp2.mean() - target) / (vp2.std(ddof=1) / np.sqrt(n_samples)))
    return out


# -- steady problem remainder ----------------------------------------------------

def mu0(T0, v):
    """Maxwellian with the wall-flux normalization 1/(2 pi T0^2)."""
    v = np.asarray(v, dtype=float)
    return np.exp(-np.sum(v * v, axis=-1) / (2.0 * T0)) / (2.0 * np.pi * T0 ** 2)


def mu_x_r(wall, T0, x, v, n=None):
    """Outgoing profile of a T0 Maxwellian after one C-L reflection at x."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    n = wall.normal(x, n)
    T = wall.T_w(x)
    vp = np.sum(v * n, axis=-1)
    vpar2 = np.sum(v * v, axis=-1) - vp * vp
    A = T0 * (1.0 - wall.r_par) ** 2 + T * wall.r_par * (2.0 - wall.r_par)
    B = T0 * (1.0 - wall.r_perp) + T * wall.r_perp
    return np.exp(-vpar2 / (2.0 * A)) / (2.0 * np.pi * A) * np.exp(-vp * vp / (2.0 * B)) / B


def steady_remainder(wall, T0, x, v, n=None):
    m0 = mu0(T0, v)
    return (mu_x_r(wall, T0, x, v, n) - m0) / np.sqrt(m0)


def temperature_constraint_rhs(wall):
    a = (1.0 - wall.r_par) / (2.0 - wall.r_par)
    s = np.sqrt(1.0 - wall.r_perp)
    b = (s - (1.0 - wall.r_perp)) / wall.r_perp
    return max(a, b)


def temperature_constraint(wall):
    """T_m/T_M > max((1-r_par)/(2-r_par), (sqrt(1-r_perp) - (1-r_perp))/r_perp)."""
    return wall.T_m / wall.T_M > temperature_constraint_rhs(wall)


def small_perturbation(wall, T0, delta0):
    """sup |T_w - T0| < delta0 (max/min bound the sup over the boundary)."""
    return max(abs(wall.T_M - T0), abs(wall.T_m - T0)) < delta0
