"""Free-molecular particle simulation in a convex domain with C-L walls.

Particles fly straight to the wall (event driven, no time step), are
re-emitted from the wall kernel, and continue.  The ensemble is cut into
fixed-size chunks; chunk c draws from the counter-based stream
(seed, c, 0), so results are identical for any thread count.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from clkinetic import clkernel, geometry, rng as rngmod
from clkinetic.errors import StuckParticle

log = logging.getLogger(__name__)

CHUNK = 8192
MAX_RESAMPLE = 3


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    velocities: np.ndarray
    weights: np.ndarray
    clock: float = 0.0

    @property
    def n(self):
        return self.positions.shape[0]

    def total_weight(self):
        return float(self.weights.sum())

    def subset(self, lo, hi):
        return ParticleEnsemble(self.positions[lo:hi].copy(), self.velocities[lo:hi].copy(),
                                self.weights[lo:hi].copy(), self.clock)


@dataclass
class WallTally:
    """Per-patch event sums over a window.  Fluxes are totals divided by the window."""
    n_patches: int
    incident: np.ndarray = None
    emitted: np.ndarray = None
    energy_in: np.ndarray = None
    energy_out: np.ndarray = None
    momentum: np.ndarray = None
    net_energy_sq: np.ndarray = None
    window: float = 0.0

    def __post_init__(self):
        for name in ("incident", "emitted", "energy_in", "energy_out", "momentum", "net_energy_sq"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.n_patches))

    def record(self, patch, weight, v_in, v_out, n):
        e_in = 0.5 * np.sum(v_in * v_in, axis=1) * weight
        e_out = 0.5 * np.sum(v_out * v_out, axis=1) * weight
        mom = (np.sum(v_in * n, axis=1) - np.sum(v_out * n, axis=1)) * weight
        k = self.n_patches
        self.incident += np.bincount(patch, weights=weight, minlength=k)
        self.emitted += np.bincount(patch, weights=weight, minlength=k)
        self.energy_in += np.bincount(patch, weights=e_in, minlength=k)
        self.energy_out += np.bincount(patch, weights=e_out, minlength=k)
        self.momentum += np.bincount(patch, weights=mom, minlength=k)
        self.net_energy_sq += np.bincount(patch, weights=(e_out - e_in) ** 2, minlength=k)

    def merge(self, other):
        out = WallTally(self.n_patches)
        for name in ("incident", "emitted", "energy_in", "energy_out", "momentum", "net_energy_sq"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        out.window = max(self.window, other.window)
        return out

    def rows(self):
        w = self.window if self.window > 0 else float("nan")
        out = []
        for p in range(self.n_patches):
            out.append({"patch": p, "incident_flux": self.incident[p] / w,
                        "emitted_flux": self.emitted[p] / w,
                        "energy_in": self.energy_in[p] / w, "energy_out": self.energy_out[p] / w,
                        "net_energy_flux": (self.energy_out[p] - self.energy_in[p]) / w,
                        "net_energy_se": math.sqrt(self.net_energy_sq[p]) / w,
                        "momentum_flux": self.momentum[p] / w})
        return out


def maxwellian_velocities(n, T, rng):
    return rng.standard_normal((n, 3)) * math.sqrt(T)


def initialize_ensemble(domain, n, T_init, rng):
    x = domain.sample_interior(n, rng)
    return ParticleEnsemble(x, maxwellian_velocities(n, T_init, rng), np.ones(n))


def _project_quadric(domain, x):
    # rounding drift along the boundary: rescale onto {xi = 0}
    c, d = domain.quadric
    y = x - c
    s = np.sqrt(np.einsum("ij,j,ij->i", y, d, y))
    return c + y / s[:, None]


def diffuse_flux_velocity(n_vec, T, rng):
    """Fresh draw from the diffuse (Maxwellian flux) law, pointing inward."""
    t1, t2 = geometry.tangent_basis(n_vec)
    m = n_vec.shape[0]
    g = rng.standard_normal((m, 2)) * np.sqrt(T)[:, None]
    vp = np.sqrt(-2.0 * T * np.log1p(-rng.uniform(size=m)))
    return g[:, :1] * t1 + g[:, 1:] * t2 - vp[:, None] * n_vec


def reflect(kind, wall, xb, v_in, n_vec, rng, stats_out=None):
    """Outgoing velocities at wall points; v_in has n.v_in > 0."""
    if kind == "specular":
        return clkernel.limiting_reflection("specular", n_vec, v_in)
    if kind == "bounceback":
        return clkernel.limiting_reflection("bounceback", n_vec, v_in)
    v_out = clkernel.sample_outgoing(wall, xb, v_in, rng, n=n_vec)
    for _ in range(MAX_RESAMPLE):
        speed = np.linalg.norm(v_out, axis=1)
        bad = -np.sum(v_out * n_vec, axis=1) <= geometry.TOL_GRAZE * np.maximum(speed, 1e-300)
        if not np.any(bad):
            return v_out
        v_out[bad] = clkernel.sample_outgoing(wall, xb[bad], v_in[bad], rng, n=n_vec[bad])
    speed = np.linalg.norm(v_out, axis=1)
    bad = -np.sum(v_out * n_vec, axis=1) <= geometry.TOL_GRAZE * np.maximum(speed, 1e-300)
    if np.any(bad):
        log.warning("%s", StuckParticle(f"{int(bad.sum())} grazing re-emissions, resampled fresh"))
        if stats_out is not None:
            stats_out["stuck"] = stats_out.get("stuck", 0) + int(bad.sum())
        v_out[bad] = diffuse_flux_velocity(n_vec[bad], np.asarray(wall.T_w(xb[bad])), rng)
    return v_out


def step_to_wall(domain, wall, ens, horizon, rng, kind="cl", tally=None, info=None):
    """Advance every particle by ``horizon`` with exact wall events.

    Returns the number of wall events per particle.
    """
    n = ens.n
    rem = np.full(n, float(horizon))
    events = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    info = {} if info is None else info
    while active.size:
        x = ens.positions[active]
        v = ens.velocities[active]
        t_hit, _ = geometry.exit_times(domain, x, -v)
        done = t_hit >= rem[active]
        if np.any(done):
            idx = active[done]
            ens.positions[idx] = x[done] + rem[idx, None] * v[done]
            rem[idx] = 0.0
        hit = ~done
        idx = active[hit]
        if idx.size == 0:
            break
        xb = x[hit] + t_hit[hit, None] * v[hit]
        if domain.quadric is not None:
            xb = _project_quadric(domain, xb)
        n_vec = geometry.normals(domain, xb)
        v_in = v[hit]
        v_out = reflect(kind, wall, xb, v_in, n_vec, rng, info)
        if tally is not None:
            tally.record(wall.field.patch_id(xb), ens.weights[idx], v_in, v_out, n_vec)
        ens.positions[idx] = xb
        ens.velocities[idx] = v_out
        rem[idx] -= t_hit[hit]
        events[idx] += 1
        active = idx
    ens.clock += horizon
    if tally is not None:
        tally.window += horizon
    return events


# -- chunked driver -------------------------------------------------------------

def _run_chunk(args):
    domain, wall, ens, schedule, seed, chunk_id, kind, tally_from, n_patches = args
    rng = rngmod.stream(seed, chunk_id, 1)
    tally = WallTally(n_patches)
    events = np.zeros(ens.n, dtype=np.int64)
    snaps = []
    info = {}
    t_prev = ens.clock
    for t_snap in schedule:
        h = t_snap - t_prev
        use = tally if t_snap > tally_from else None
        if use is not None and t_prev < tally_from:
            # split the step so the tally window starts exactly at tally_from
            events += step_to_wall(domain, wall, ens, tally_from - t_prev, rng, kind, None, info)
            h = t_snap - tally_from
        events += step_to_wall(domain, wall, ens, h, rng, kind, use, info)
        t_prev = t_snap
        snaps.append(_moment_sums(ens))
    return ens, tally, events, snaps, info


def _moment_sums(ens):
    w = ens.weights
    v = ens.velocities
    return (float(w.sum()), (w[:, None] * v).sum(axis=0), float((w * np.sum(v * v, axis=1)).sum()))


def simulate(domain, wall, n_particles, horizon, seed, threads=1, T_init=1.0, kind="cl",
             n_snapshots=10, tally_from=None, chunk_size=CHUNK):
    """Run the ensemble to ``horizon``.

    Returns dict with the final ensemble, merged tally (window starting at
    ``tally_from``, default horizon/2), per-particle event counts, moments
    per snapshot and run info.
    """
    tally_from = 0.5 * horizon if tally_from is None else tally_from
    init_rng = rngmod.stream(seed, 0, 0)
    ens = initialize_ensemble(domain, n_particles, T_init, init_rng)
    w0 = ens.total_weight()
    n0 = ens.n
    schedule = [horizon * (i + 1) / n_snapshots for i in range(n_snapshots)]
    n_patches = getattr(wall.field, "n_patches", 1)
    jobs = [(domain, wall, ens.subset(lo, hi), schedule, seed, ci, kind, tally_from, n_patches)
            for ci, (lo, hi) in enumerate(rngmod.chunk_bounds(n_particles, chunk_size))]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]
    pos = np.vstack([r[0].positions for r in results])
    vel = np.vstack([r[0].velocities for r in results])
    wts = np.concatenate([r[0].weights for r in results])
    final = ParticleEnsemble(pos, vel, wts, horizon)
    tally = results[0][1]
    for r in results[1:]:
        tally = tally.merge(r[1])
    tally.window = horizon - tally_from
    events = np.concatenate([r[2] for r in results])
    volume = estimate_volume(domain)
    moments = []
    for i, t in enumerate(schedule):
        W = sum(r[3][i][0] for r in results)
        P = sum(r[3][i][1] for r in results)
        E = sum(r[3][i][2] for r in results)
        u = P / W
        moments.append({"time": t, "density": W / volume, "u_x": u[0], "u_y": u[1], "u_z": u[2],
                        "temperature": (E / W - float(u @ u)) / 3.0})
    stuck = sum(r[4].get("stuck", 0) for r in results)
    return {"ensemble": final, "tally": tally, "events": events, "moments": moments,
            "mass_conserved": bool(final.n == n0 and final.total_weight() == w0),
            "max_xi": float(domain.xi(final.positions).max()), "stuck": stuck}


def estimate_volume(domain, n=200000, seed=7):
    if domain.quadric is not None:
        return 4.0 / 3.0 * math.pi / math.sqrt(float(np.prod(domain.quadric[1])))
    rng = np.random.default_rng(seed)
    R = domain.bounding_radius
    pts = domain.center + rng.uniform(-R, R, size=(n, 3))
    return float(np.mean(domain.xi(pts) < 0.0)) * (2 * R) ** 3


def mean_free_time(domain, wall, seed=0, n=4000, T=None):
    """Pilot estimate of the mean time between wall events at equilibrium."""
    T = wall.T_M if T is None else T
    h = 20.0 * domain.bounding_radius / math.sqrt(T)
    r = simulate(domain, wall, n, h, seed ^ 0x5EED, T_init=T, n_snapshots=1)
    return h * n / max(int(r["events"].sum()), 1)


# -- observables ------------------------------------------------------------

def speed_chi2(speeds, T, n_bins=40):
    """Pearson chi^2 of speeds against the Maxwell speed law at T (equiprobable bins)."""
    edges = stats.chi.ppf(np.linspace(0.0, 1.0, n_bins + 1), df=3, scale=math.sqrt(T))
    counts, _ = np.histogram(speeds, bins=edges)
    expected = speeds.size / n_bins
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    dof = n_bins - 1
    return chi2, dof, float(stats.chi2.sf(chi2, dof))


def equilibrium_test(domain, wall, n_particles, n_bounces, seed, threads=1, T_init=None,
                     n_bins=40):
    """Relax from a T_init Maxwellian for n_bounces mean wall intervals, then test speeds.

    T_init defaults to 1.5 T_w so passing requires actual relaxation.
    """
    T_w = wall.T_M
    T_init = 1.5 * T_w if T_init is None else T_init
    tau = mean_free_time(domain, wall, seed)
    horizon = n_bounces * tau
    res = simulate(domain, wall, n_particles, horizon, seed, threads, T_init)
    speeds = np.linalg.norm(res["ensemble"].velocities, axis=1)
    chi2, dof, p = speed_chi2(speeds, T_w, n_bins)
    rows = res["tally"].rows()
    return {"chi2": chi2, "dof": dof, "p_value": p, "passed": p > 0.01,
            "mass_conserved": res["mass_conserved"], "horizon": horizon, "tau": tau,
            "mean_events": float(res["events"].mean()), "min_events": int(res["events"].min()),
            "max_xi": res["max_xi"], "tally": rows, "moments": res["moments"],
            "null_flux": null_flux_tally(res["tally"]), "result": res}


def null_flux_tally(tally):
    """Per-patch flux balance: particle flux exactly, energy flux within 3 sigma."""
    out = []
    for row in tally.rows():
        z = row["net_energy_flux"] / row["net_energy_se"] if row["net_energy_se"] > 0 else 0.0
        out.append({"patch": row["patch"],
                    "mass_flux_balance": row["incident_flux"] - row["emitted_flux"],
                    "energy_z": z, "momentum_flux": row["momentum_flux"],
                    "mass_ok": row["incident_flux"] == row["emitted_flux"],
                    "energy_ok": abs(z) <= 3.0})
    return out


def energy_flux_test(domain, wall, n_particles, horizon, seed, threads=1):
    """Two-patch wall: net energy flux out of the hotter patch should be positive."""
    res = simulate(domain, wall, n_particles, horizon, seed, threads, T_init=wall.T_M)
    rows = res["tally"].rows()
    vals = wall.field.values
    hot, cold = int(np.argmax(vals)), int(np.argmin(vals))
    h, c = rows[hot], rows[cold]
    return {"hot_net": h["net_energy_flux"], "hot_se": h["net_energy_se"],
            "cold_net": c["net_energy_flux"], "cold_se": c["net_energy_se"],
            "passed": h["net_energy_flux"] > 3 * h["net_energy_se"]
            and c["net_energy_flux"] < -3 * c["net_energy_se"], "tally": rows, "result": res}
