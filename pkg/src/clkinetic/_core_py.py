"""Pure numpy versions of the hot kernels.

Same algorithms and node tables as the compiled ``_core`` module, so the two
backends agree to rounding.  Selected automatically when the extension is not
built (see ``clkinetic.backend``).
"""
import numpy as np

# |y| <= Y_SWITCH uses the defining integral over phi, above it the scaled
# substitution s = sin(phi/2), u = s*sqrt(2y).
Y_SWITCH = 30.0
U_MAX = 6.5


def _gauss_legendre(n, a, b):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


PHI_NODES, PHI_WEIGHTS = _gauss_legendre(32, 0.0, np.pi)
U_NODES, U_WEIGHTS = _gauss_legendre(32, 0.0, U_MAX)
COS_M1 = np.cos(PHI_NODES) - 1.0
EXP_MU2 = np.exp(-U_NODES ** 2)
U2 = U_NODES ** 2


def i0e(y):
    y = np.abs(np.asarray(y, dtype=float))
    out = np.empty_like(y)
    flat_y = y.reshape(-1)
    flat_o = out.reshape(-1)
    small = flat_y <= Y_SWITCH
    ys = flat_y[small]
    if ys.size:
        flat_o[small] = np.exp(np.multiply.outer(ys, COS_M1)) @ PHI_WEIGHTS / np.pi
    yl = flat_y[~small]
    if yl.size:
        g = EXP_MU2 / np.sqrt(1.0 - np.multiply.outer(0.5 / yl, U2))
        flat_o[~small] = (2.0 / np.pi) / np.sqrt(2.0 * yl) * (g @ U_WEIGHTS)
    return out


# --- polynomial level sets -------------------------------------------------

def poly_eval(coef, powers, x):
    """Sum_k coef[k] * prod_i x_i**powers[k, i] for points x of shape (N, 3)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[0])
    for c, p in zip(coef, powers):
        out += c * x[:, 0] ** p[0] * x[:, 1] ** p[1] * x[:, 2] ** p[2]
    return out


def _line_dir_deriv(gcoef, gpowers, x, v):
    # d/ds xi(x - s v) = -v . grad xi(x - s v)
    return -(v[:, 0] * poly_eval(gcoef[0], gpowers[0], x)
             + v[:, 1] * poly_eval(gcoef[1], gpowers[1], x)
             + v[:, 2] * poly_eval(gcoef[2], gpowers[2], x))


def poly_exit(coef, powers, gcoef, gpowers, X, V, radius, tol, n_bisect=60):
    """Backward exit times for a convex polynomial level set.

    For interior starts the sign of p(s) = xi(x - s v) flips once on
    (0, 2R/|v|]; for starts on the boundary the secant slope
    q(s) = (p(s) - p(0))/s is monotone and its root is the exit.  Both are
    bracketed by marching in steps R/(8|v|), refined by bisection and one
    guarded Newton step on p.
    """
    X = np.asarray(X, dtype=float)
    V = np.asarray(V, dtype=float)
    n = X.shape[0]
    speed = np.sqrt(np.einsum("ij,ij->i", V, V))
    p0 = poly_eval(coef, powers, X)
    dp0 = _line_dir_deriv(gcoef, gpowers, X, V)
    on_bd = np.abs(p0) <= tol
    t = np.zeros(n)
    status = np.zeros(n, dtype=np.int64)  # 0 ok, 1 outside, 2 leaves at once, 3 no bracket
    status[p0 > tol] = 1
    status[on_bd & (dp0 >= 0.0)] = 2
    active = status == 0
    if not np.any(active):
        return t, status
    idx = np.nonzero(active)[0]
    x = X[idx]
    v = V[idx]
    base = p0[idx]
    bd = on_bd[idx]
    h = radius / (8.0 * speed[idx])

    def g(s):
        val = poly_eval(coef, powers, x - s[:, None] * v)
        return np.where(bd, (val - base) / np.where(s > 0, s, 1.0), val)

    lo = np.zeros(idx.size)
    hi = np.full(idx.size, np.nan)
    for k in range(1, 17):
        s = k * h
        gs = g(s)
        newly = np.isnan(hi) & (gs > 0.0)
        hi[newly] = s[newly]
        still = np.isnan(hi)
        lo[still] = s[still]
    missing = np.isnan(hi)
    hi[missing] = lo[missing]
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        pos = g(mid) > 0.0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    s = 0.5 * (lo + hi)
    ps = poly_eval(coef, powers, x - s[:, None] * v)
    dps = _line_dir_deriv(gcoef, gpowers, x - s[:, None] * v, v)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_new = s - ps / dps
    ok = np.isfinite(s_new) & (s_new >= lo) & (s_new <= hi)
    s = np.where(ok, s_new, s)
    t[idx] = s
    st = np.zeros(idx.size, dtype=np.int64)
    st[missing] = 3
    status[idx] = st
    return t, status
