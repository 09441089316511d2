"""Hard-sphere binary collisions and the kernel majorant k_rho.

B(v - u, omega) = |v - u| q0(cos) with q0(s) = |s|, so the angular integral
of B over the sphere is 2 pi |v - u|.  The background Maxwellian is
clkernel.mu0 (normalization 1/(2 pi T0^2)).
"""
import math

import numpy as np
from scipy import integrate
from scipy.special import erf

from clkinetic.clkernel import gauss_legendre_panels, mu0
from clkinetic.errors import NonUnitOmega, SingularPoint
from clkinetic.lemma_oracle import LemmaReport


def post_collision(u, v, omega):
    """u' = u - [(u-v).omega] omega, v' = v + [(u-v).omega] omega."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if np.any(np.abs(np.sum(omega * omega, axis=-1) - 1.0) > 2e-12):
        raise NonUnitOmega("omega must be a unit vector")
    p = np.sum((u - v) * omega, axis=-1)[..., None] * omega
    return u - p, v + p


def random_unit_vectors(n, rng):
    g = rng.standard_normal((n, 3))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def hard_sphere_B(rel, omega):
    rel = np.asarray(rel, dtype=float)
    return np.abs(np.sum(rel * omega, axis=-1))


def collision_frequency(v, T0=1.0, n_panels=16, order=16):
    """nu(v) = int int |v-u| |cos| mu0(u) domega du by a radial quadrature about v.

    The angular average of the Gaussian on a sphere of radius r around v is
    e^{-(a^2+r^2)/(2T0)} sinh(a r/T0)/(a r/T0), a = |v|.
    """
    a = float(np.linalg.norm(v)) if np.ndim(v) else abs(float(v))
    sT = math.sqrt(T0)
    r, w = gauss_legendre_panels(max(0.0, a - 14.0 * sT), a + 14.0 * sT, n_panels, order)
    z = a * r / T0
    with np.errstate(invalid="ignore", divide="ignore"):
        # sinh(z)/z e^{-(a^2+r^2)/2T} written without overflow
        shz = np.where(z > 1e-8, -np.expm1(-2.0 * z) / (2.0 * z), 1.0 - z)
    ang = np.exp(-(r - a) ** 2 / (2.0 * T0)) * shz
    radial = 4.0 * math.pi * float(np.sum(w * r ** 3 * ang))
    return 2.0 * math.pi * radial / (2.0 * math.pi * T0 ** 2)


def collision_frequency_closed(v, T0=1.0):
    """Closed form via the mean of a noncentral chi(3) variable."""
    a = float(np.linalg.norm(v)) if np.ndim(v) else abs(float(v))
    s = math.sqrt(T0)
    b = a / s
    if b < 1e-8:
        mean = s * 2.0 * math.sqrt(2.0 / math.pi)
    else:
        mean = s * (math.sqrt(2.0 / math.pi) * math.exp(-0.5 * b * b) + (b + 1.0 / b) * erf(b / math.sqrt(2.0)))
    return 2.0 * math.pi * (2.0 * math.pi * T0) ** 1.5 / (2.0 * math.pi * T0 ** 2) * mean


def nu_comparability(T0=1.0, v_max=100.0, n=400):
    """(c1, c2) with c1 <= nu(v)/(1+|v|) <= c2 on a speed grid up to v_max."""
    speeds = np.linspace(0.0, v_max, n)
    ratio = np.array([collision_frequency(s, T0) for s in speeds]) / (1.0 + speeds)
    return float(ratio.min()), float(ratio.max())


# -- k_rho -----------------------------------------------------------------

def k_rho(v, u, rho):
    """e^{-rho|v-u|^2}/|v-u|."""
    d = np.linalg.norm(np.asarray(v, dtype=float) - np.asarray(u, dtype=float), axis=-1)
    if np.any(d == 0.0):
        raise SingularPoint("k_rho is singular at u = v")
    out = np.exp(-rho * d * d) / d
    return float(out) if np.ndim(out) == 0 else out


def k_rho_l1_check(v, rho, rtol=1e-8):
    """int k_rho(v,u) du = 2 pi/rho and int k_rho/|v-u| du = 2 pi^{3/2}/sqrt(rho).

    Spherical coordinates about v; the r^2 of the Jacobian absorbs the 1/r
    (and 1/r^2) singularity, leaving smooth radial integrands.
    """
    top = 40.0 / math.sqrt(rho)
    tail = math.exp(-rho * top * top)
    out = []
    for name, f, exact in (
            ("k_rho_l1", lambda r: 4.0 * math.pi * r * math.exp(-rho * r * r), 2.0 * math.pi / rho),
            ("k_rho_over_dist_l1", lambda r: 4.0 * math.pi * math.exp(-rho * r * r),
             2.0 * math.pi ** 1.5 / math.sqrt(rho))):
        val, err = integrate.quad(f, 0.0, top, epsabs=0.0, epsrel=1e-13, limit=200)
        err += tail * exact
        params = {"v": np.asarray(v, dtype=float).tolist(), "rho": rho}
        ok = abs(val - exact) <= rtol * exact and err <= rtol * exact
        out.append(LemmaReport(name, params, val, exact, exact - val, err, bool(ok)))
    return out


def k_theta_ratio_sup(v_norm, theta, rho, rho_t):
    """sup_u k_rho(v,u) e^{theta(|v|^2-|u|^2)} / k_rho_t(v,u) = exp(theta^2|v|^2/(rho - rho_t + theta))."""
    return math.exp(theta * theta * v_norm ** 2 / (rho - rho_t + theta))


def k_theta_check(theta, rho, rho_t, v_max=10.0, n_v=21, n_dir=2000, seed=0):
    """Grid scan of k_rho(v,u) e^{theta|v|^2}/e^{theta|u|^2} / k_rho_t(v,u).

    Reported, not asserted: with the majorant alone the ratio is not
    uniformly bounded; its sup grows like exp(theta^2|v|^2/(rho-rho_t+theta)).
    The scan is compared against that closed form.
    """
    if not (0.0 < theta / 4.0 < rho and 0.0 < rho_t < rho - theta / 4.0):
        raise ValueError("need 0 < theta/4 < rho and 0 < rho_t < rho - theta/4")
    rng = np.random.default_rng(seed)
    dirs = random_unit_vectors(n_dir, rng)
    worst_gap = 0.0
    rows = []
    for s in np.linspace(0.0, v_max, n_v):
        v = np.array([s, 0.0, 0.0])
        # the optimal offset z = u - v is along -v with |z| = theta s/(rho - rho_t + theta)
        radii = np.linspace(1e-3, 3.0 + s, 200)
        z = (radii[:, None, None] * dirs[None]).reshape(-1, 3)
        u = v + z
        d2 = np.sum(z * z, axis=1)
        log_ratio = (-(rho - rho_t) * d2 + theta * (s * s - np.sum(u * u, axis=1)))
        scan = float(np.exp(log_ratio.max()))
        exact = k_theta_ratio_sup(s, theta, rho, rho_t)
        worst_gap = max(worst_gap, scan / exact)
        rows.append((s, scan, exact))
    last = rows[-1]
    params = {"theta": theta, "rho": rho, "rho_t": rho_t, "v_max": v_max}
    return LemmaReport("k_theta_exchange", params, last[1], last[2], last[2] - last[1], 0.0,
                       bool(worst_gap <= 1.0 + 1e-9), asserted=False,
                       note="sup over u at |v|=v_max vs closed form; grows with |v|")


# -- gain term --------------------------------------------------------------

def _gain_loss_draws(f1, f2, v, T0, n, rng):
    u = rng.standard_normal((n, 3)) * math.sqrt(T0)
    om = random_unit_vectors(n, rng)
    g = np.exp(-np.sum(u * u, axis=1) / (2.0 * T0)) / (2.0 * math.pi * T0) ** 1.5
    rel = v - u
    dist = np.linalg.norm(rel, axis=1)
    B = dist * hard_sphere_B(rel / np.maximum(dist, 1e-300)[:, None], om)
    return u, om, 4.0 * math.pi * B / g


def q_gain_mc(f1, f2, v, T0, n_samples, rng, paired=False):
    """Q_gain(f1,f2)(v), the loss nu(f1) f2(v) and Q = gain - loss by Monte Carlo.

    u ~ N(0, T0 I), omega uniform on S^2.  By default gain and loss use
    independent draws, so the standard error of Q is a genuine sampling
    error; ``paired=True`` reuses the draws (variance reduction; for
    collision invariants the difference is then zero up to rounding).
    """
    v = np.asarray(v, dtype=float)
    u, om, scale = _gain_loss_draws(f1, f2, v, T0, n_samples, rng)
    up, vp = post_collision(u, np.broadcast_to(v, u.shape), om)
    gain = scale * f1(up) * f2(vp)
    if paired:
        loss = scale * f1(u) * f2(v[None])
        diff = gain - loss
    else:
        u2, _, scale2 = _gain_loss_draws(f1, f2, v, T0, n_samples, rng)
        loss = scale2 * f1(u2) * f2(v[None])
        diff = None
    sq = math.sqrt(n_samples)
    g_se = float(gain.std(ddof=1) / sq)
    l_se = float(loss.std(ddof=1) / sq)
    est = float(gain.mean() - loss.mean())
    se = float(diff.std(ddof=1) / sq) if paired else math.hypot(g_se, l_se)
    return {"gain": float(gain.mean()), "gain_se": g_se, "loss": float(loss.mean()),
            "loss_se": l_se, "estimate": est, "std_error": se}


def gamma_gain_mc(f1, f2, v, T0, n_samples, rng):
    """Gamma_gain(f1,f2)(v) = Q_gain(sqrt(mu) f1, sqrt(mu) f2)(v)/sqrt(mu(v)), mu = mu0(T0)."""
    def sq(f):
        return lambda w: np.sqrt(mu0(T0, w)) * f(w)
    r = q_gain_mc(sq(f1), sq(f2), v, T0, n_samples, rng)
    s = math.sqrt(float(mu0(T0, np.asarray(v, dtype=float))))
    return {"estimate": r["gain"] / s, "std_error": r["gain_se"] / s}
