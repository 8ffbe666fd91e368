"""Floquet-Bloch dispersion of the travelling-wave modulated medium.

A TE field in the bulk medium is expanded over space-time harmonics

    E_y(x, z, t) = exp(i k_x x) * sum_n  E_n exp(i[(kappa_0 + n kappa_s) z
                                                  - (omega + n omega_s) t])

and likewise for H_x, H_z.  The single-tone cosine modulation couples
adjacent harmonics only.  Collecting Maxwell's curl equations per harmonic
gives a linear matrix pencil in the Bloch wavenumber kappa_0,

    (G + kappa_0 H) v = 0 ,      v = (E_n, H_x,n, H_z,n)

solved as a generalized eigenproblem.  Two layouts are used:

* k_x = 0: H_z decouples, the pencil reduces to a standard eigenproblem of
  size 2(2N+1) in (E, H_x).
* k_x != 0: the full 3(2N+1) pencil.  Harmonics with omega_n = 0 (they
  appear whenever omega is an integer multiple of omega_s) make two rows
  collapse onto the same column; those rows are replaced by the exact
  static conditions E_n = 0 and div B = 0, which keeps the pencil regular
  and retains the static magnetic degrees of freedom.

The same pencil machinery, with the roles of kappa and k_x exchanged, is
used by the scattering module to find slab eigenmodes at a fixed
tangential ladder (see slab_pencil).

Sign conventions: fields go like exp(-i omega t); time-averaged Poynting
components are S_x = +Re(E_y H_z*)/2 and S_z = -Re(E_y H_x*)/2 per
harmonic.  Negative-frequency harmonics are retained with signed omega_n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .medium import ModulationProfile

# |Im kappa| above tol_evanescent(...) marks a mode evanescent; power flows
# below POWER_TOL make classification fall back to the decay direction.
POWER_TOL = 1e-12
DEGENERACY_TOL = 1e-10
SONIC_GUARD = 0.05
SONIC_N_FLOOR = 20
DEFAULT_N = 10
MAX_AUTO_N = 40
AUTO_CONVERGE_TOL = 1e-8


class EigenSolverError(RuntimeError):
    """Raised when the Floquet eigenproblem cannot be solved reliably."""


def harmonic_indices(N: int) -> np.ndarray:
    """Symmetric harmonic window [-N..N]."""
    if N < 1 or N != int(N):
        raise ValueError(f"harmonic truncation N must be a positive integer, got {N}")
    return np.arange(-N, N + 1)


def tol_evanescent(scale: float) -> float:
    return 1e-9 * max(abs(scale), 1.0)


def material_matrices(profile: ModulationProfile, N: int):
    """Harmonic-space multiplication operators for eps(z,t) and mu(z,t).

    Tridiagonal Toeplitz, Hermitian for a real cosine modulation: the
    (m, m+1) entry carries exp(+i phi) * delta / 2 relative to the mean.
    """
    M = 2 * N + 1
    up = np.eye(M, k=1) * (0.5 * np.exp(1j * profile.phi))
    dn = np.eye(M, k=-1) * (0.5 * np.exp(-1j * profile.phi))
    base = np.eye(M) + 0.0j
    eps = profile.eps_avg * (base + profile.delta_e * (up + dn))
    mu = profile.mu_avg * (base + profile.delta_m * (up + dn))
    return eps, mu


def _static_rows(omegas: np.ndarray, omega_s: float) -> np.ndarray:
    """Indices of harmonics whose frequency is numerically zero."""
    scale = max(abs(omega_s), float(np.max(np.abs(omegas))), 1.0)
    return np.flatnonzero(np.abs(omegas) <= 1e-12 * scale)


def coupling_matrix(profile: ModulationProfile, omega: float, k_x: float,
                    N: int):
    """Matrix pencil (G, H) whose generalized eigenvalues kappa_0 solve
    (G + kappa_0 H) v = 0 for the Bloch wavenumber along z.

    For k_x = 0 the pencil is 2(2N+1) with H = identity (a plain
    eigenproblem); otherwise it is the full 3(2N+1) layout described in
    the module docstring.  Off-diagonal coupling blocks scale linearly
    with delta_e (through eps) and delta_m (through mu).
    """
    n = harmonic_indices(N)
    M = n.size
    omegas = omega + n * profile.omega_s
    K0 = np.diag(n * profile.kappa_s).astype(complex)
    eps, mu = material_matrices(profile, N)
    W = omegas[:, None]
    WMu = W * mu
    WEps = W * eps

    if k_x == 0.0:
        G = np.block([[K0, WMu], [WEps, K0]])
        H = np.eye(2 * M, dtype=complex)
        return G, H

    Z = np.zeros((M, M), dtype=complex)
    I = np.eye(M, dtype=complex)
    G = np.block([
        [K0, WMu, Z],
        [k_x * I, Z, -WMu],
        [WEps, K0, -k_x * I],
    ])
    H = np.block([
        [I, Z, Z],
        [Z, Z, Z],
        [Z, I, Z],
    ])
    for m in _static_rows(omegas, profile.omega_s):
        # Faraday and the x-projection both collapse to E_m = 0 here; keep
        # one copy and restore regularity with the static div B = 0 row.
        G[m, :] = 0.0
        G[m, m] = 1.0
        H[m, :] = 0.0
        r = M + m
        G[r, :] = 0.0
        H[r, :] = 0.0
        G[r, M:2 * M] = k_x * mu[m, :]
        G[r, 2 * M:] = (n[m] * profile.kappa_s) * mu[m, :]
        H[r, 2 * M:] = mu[m, :]
    return G, H


def slab_pencil(profile: ModulationProfile, omega_0: float, k_z0: float,
                N: int):
    """Pencil (G, H) with (G + k_x H) v = 0 for slab eigenmodes.

    Here the tangential ladder k_z,n = k_z0 + n kappa_s and frequencies
    omega_n = omega_0 + n omega_s are fixed by phase matching to the
    exterior, and the normal wavenumber k_x is the eigenvalue.  Static
    harmonics get the same row surgery as in coupling_matrix; their
    eigenmodes are the Laplace solutions k_x = +-i |k_z,n| that carry the
    static magnetic response.
    """
    n = harmonic_indices(N)
    M = n.size
    omegas = omega_0 + n * profile.omega_s
    kz = k_z0 + n * profile.kappa_s
    Kz = np.diag(kz).astype(complex)
    eps, mu = material_matrices(profile, N)
    W = omegas[:, None]
    WMu = W * mu
    WEps = W * eps
    Z = np.zeros((M, M), dtype=complex)
    I = np.eye(M, dtype=complex)
    G = np.block([
        [Kz, WMu, Z],
        [Z, Z, -WMu],
        [WEps, Kz, Z],
    ])
    H = np.block([
        [Z, Z, Z],
        [I, Z, Z],
        [Z, Z, -I],
    ])
    for m in _static_rows(omegas, profile.omega_s):
        if abs(kz[m]) <= 1e-12 * max(abs(k_z0), profile.kappa_s, 1.0):
            raise EigenSolverError(
                "harmonic with omega_n = 0 and k_z,n = 0: the ladder is fully "
                "degenerate; perturb omega_0, theta, or kappa_s")
        G[m, :] = 0.0
        G[m, m] = 1.0
        H[m, :] = 0.0
        r = M + m
        G[r, :] = 0.0
        H[r, :] = 0.0
        G[r, 2 * M:] = kz[m] * mu[m, :]
        H[r, M:2 * M] = mu[m, :]
    return G, H


@dataclass
class BlochSolution:
    """Eigenmode set of the harmonic pencil at one (omega, transverse) point.

    axis is "kappa_z" when the eigenvalue is the Bloch wavenumber along the
    modulation (bulk dispersion) and "k_x" when it is the slab normal
    wavenumber at a fixed tangential ladder.  mode_vectors holds the
    unit-norm tangential field pairs, (E_n, H_x,n) for axis="kappa_z" and
    (E_n, H_z,n) for axis="k_x"; full harmonic field vectors are kept in
    e_harm / hx_harm / hz_harm (rows match eigenvalues).
    """

    axis: str
    omega: float
    transverse: float           # k_x for axis="kappa_z", k_z0 for axis="k_x"
    N: int
    omega_s: float
    harmonics: np.ndarray
    eigenvalues: np.ndarray
    e_harm: np.ndarray
    hx_harm: np.ndarray
    hz_harm: np.ndarray
    mode_vectors: np.ndarray
    classification: list[str]
    power_x: np.ndarray
    power_z: np.ndarray
    residuals: np.ndarray
    warnings: list[str] = field(default_factory=list)

    @property
    def ladder_omegas(self) -> np.ndarray:
        return self.omega + self.omega_s * self.harmonics

    def propagating(self) -> np.ndarray:
        return np.array([c in ("forward", "backward") for c in self.classification])

    def fundamental_index(self) -> int:
        """Mode carrying the most weight in the n = 0 harmonic, preferring
        forward-classified propagating modes."""
        M = self.harmonics.size
        w = np.abs(self.e_harm[:, M // 2]) ** 2 / (
            np.sum(np.abs(self.e_harm) ** 2, axis=1) + 1e-300)
        score = w + np.where([c == "forward" for c in self.classification], 1.0, 0.0)
        return int(np.argmax(score))


def _classify(eigenvalues, power_along, tol_ev):
    out = []
    for lam, p in zip(eigenvalues, power_along):
        if abs(lam.imag) > tol_ev:
            out.append("evanescent_forward" if lam.imag > 0 else "evanescent_backward")
        elif p > POWER_TOL:
            out.append("forward")
        elif p < -POWER_TOL:
            out.append("backward")
        else:
            # degenerate or static content with no net flux
            out.append("evanescent_forward" if lam.imag >= 0 else "evanescent_backward")
    return out


def _orthonormalize_degenerate(eigenvalues, vectors, scale):
    """QR-orthonormalize eigenvector groups with near-identical eigenvalues."""
    order = np.lexsort((eigenvalues.imag, eigenvalues.real))
    i = 0
    while i < len(order):
        j = i + 1
        while (j < len(order)
               and abs(eigenvalues[order[j]] - eigenvalues[order[i]])
               <= DEGENERACY_TOL * scale):
            j += 1
        if j - i > 1:
            idx = order[i:j]
            block = vectors[:, idx]
            q, _ = np.linalg.qr(block)
            vectors[:, idx] = q[:, : len(idx)]
        i = j
    return vectors


def _solve_pencil(G, H, M, k_scale):
    """Generalized eigensolve of (G + lam H) v = 0, filtering the infinite
    spectrum that comes with a singular H.  Returns (eigenvalues, vectors
    as columns, residuals)."""
    if H.shape[0] == 2 * M:
        # k_x = 0 layout has H = identity: plain eigenproblem
        lam, vec = np.linalg.eig(-G)
    else:
        w, vec = scipy.linalg.eig(G, -H, right=True, homogeneous_eigvals=True)
        alpha = np.asarray(w[0]).ravel()
        beta = np.asarray(w[1]).ravel()
        mag = np.abs(alpha) + np.abs(beta)
        finite = np.abs(beta) > 1e-10 * np.maximum(mag, 1e-300)
        lam = np.where(finite, alpha / np.where(finite, beta, 1.0), np.inf)
        keep = finite & (np.abs(lam) < 1e10 * max(k_scale, 1.0))
        lam = lam[keep]
        vec = vec[:, keep]
    order = np.lexsort((lam.imag.round(12), lam.real.round(12)))
    lam = lam[order]
    vec = vec[:, order]
    vec = _orthonormalize_degenerate(lam, vec, k_scale)
    scaleG = np.linalg.norm(G, "fro")
    scaleH = np.linalg.norm(H, "fro")
    res = np.empty(lam.size)
    for i in range(lam.size):
        v = vec[:, i]
        r = G @ v + lam[i] * (H @ v)
        res[i] = np.linalg.norm(r) / ((scaleG + abs(lam[i]) * scaleH)
                                      * np.linalg.norm(v) + 1e-300)
    return lam, vec, res


def _package(axis, profile, omega, transverse, N, lam, vec, res, warnings):
    n = harmonic_indices(N)
    M = n.size
    K = lam.size
    e = np.zeros((K, M), dtype=complex)
    hx = np.zeros((K, M), dtype=complex)
    hz = np.zeros((K, M), dtype=complex)
    if vec.shape[0] == 2 * M:
        e[:] = vec[:M].T
        hx[:] = vec[M:].T
    else:
        e[:] = vec[:M].T
        hx[:] = vec[M:2 * M].T
        hz[:] = vec[2 * M:].T
    tangent = hx if axis == "kappa_z" else hz
    norms = np.linalg.norm(np.concatenate([e, tangent], axis=1), axis=1)
    full = np.sqrt(np.sum(np.abs(e) ** 2 + np.abs(hx) ** 2 + np.abs(hz) ** 2, axis=1))
    norms = np.where(norms > 1e-200, norms, full)
    e /= norms[:, None]
    hx /= norms[:, None]
    hz /= norms[:, None]
    pair = np.concatenate([e, (hx if axis == "kappa_z" else hz)], axis=1)
    power_x = 0.5 * np.sum((e * np.conj(hz)).real, axis=1)
    power_z = -0.5 * np.sum((e * np.conj(hx)).real, axis=1)
    k_scale = max(abs(omega) * math.sqrt(profile.eps_avg * profile.mu_avg),
                  profile.kappa_s, 1.0)
    tol_ev = tol_evanescent(k_scale)
    along = power_z if axis == "kappa_z" else power_x
    cls = _classify(lam, along, tol_ev)
    return BlochSolution(axis=axis, omega=omega, transverse=transverse, N=N,
                         omega_s=profile.omega_s, harmonics=n, eigenvalues=lam,
                         e_harm=e, hx_harm=hx, hz_harm=hz, mode_vectors=pair,
                         classification=cls, power_x=power_x, power_z=power_z,
                         residuals=res, warnings=warnings)


def _sonic_warning(profile: ModulationProfile):
    mism = profile.sonic_mismatch()
    if (profile.delta_e > 0 or profile.delta_m > 0) and mism < SONIC_GUARD:
        return (f"sonic regime: modulation velocity within {100 * mism:.2f}% of the "
                f"medium phase velocity; harmonic convergence is slow")
    return None


def eigen_kappa(profile: ModulationProfile, omega: float, k_x: float = 0.0,
                N: int | None = None) -> BlochSolution:
    """Bloch wavenumbers kappa_0 and mode vectors at fixed (omega, k_x).

    With N=None the truncation starts at DEFAULT_N (or SONIC_N_FLOOR in
    the sonic guard band) and doubles until the fundamental branch moves
    by less than 1e-8, capped at MAX_AUTO_N.
    """
    warnings = []
    sw = _sonic_warning(profile)
    if sw:
        warnings.append(sw)

    def solve(Nuse):
        G, H = coupling_matrix(profile, omega, k_x, Nuse)
        M = 2 * Nuse + 1
        k_scale = max(abs(omega) * math.sqrt(profile.eps_avg * profile.mu_avg),
                      profile.kappa_s, 1.0)
        lam, vec, res = _solve_pencil(G, H, M, k_scale)
        return _package("kappa_z", profile, omega, k_x, Nuse, lam, vec, res,
                        list(warnings))

    if N is not None:
        return solve(int(N))
    Nuse = SONIC_N_FLOOR if sw else DEFAULT_N
    sol = solve(Nuse)
    while Nuse < MAX_AUTO_N:
        Nnext = min(2 * Nuse, MAX_AUTO_N)
        nxt = solve(Nnext)
        # track the coarse fundamental into the finer spectrum by value:
        # branch ordering is not stable across truncations
        ref = sol.eigenvalues[sol.fundamental_index()]
        new = nxt.eigenvalues[np.argmin(np.abs(nxt.eigenvalues - ref))]
        sol = nxt
        Nuse = Nnext
        if abs(new - ref) < AUTO_CONVERGE_TOL:
            return sol
    sol.warnings.append(
        f"truncation cap N={MAX_AUTO_N} reached before the fundamental branch "
        f"converged to {AUTO_CONVERGE_TOL}")
    return sol


def eigen_k_x(profile: ModulationProfile, omega_0: float, k_z0: float,
              N: int) -> BlochSolution:
    """Slab eigenmodes: normal wavenumbers k_x at a fixed tangential ladder."""
    warnings = []
    sw = _sonic_warning(profile)
    if sw:
        warnings.append(sw)
    G, H = slab_pencil(profile, omega_0, k_z0, N)
    M = 2 * N + 1
    k_scale = max(abs(omega_0) * math.sqrt(profile.eps_avg * profile.mu_avg),
                  profile.kappa_s, abs(k_z0), 1.0)
    lam, vec, res = _solve_pencil(G, H, M, k_scale)
    sol = _package("k_x", profile, omega_0, k_z0, N, lam, vec, res, warnings)
    if lam.size != 2 * M:
        sol.warnings.append(
            f"pencil returned {lam.size} finite eigenvalues, expected {2 * M}")
    return sol


# ---------------------------------------------------------------------------
# Band structure, isofrequency contours, group velocity


@dataclass
class BranchTrace:
    branch_id: int
    param: list          # omega values (band) or k_x values (isofrequency)
    kappa: list          # complex Bloch wavenumbers along the branch
    vectors: list        # last-seen mode vector (tracking state)
    vg_x: list
    vg_z: list

    def as_arrays(self):
        return np.asarray(self.param), np.asarray(self.kappa)


@dataclass
class BandDiagram:
    profile: ModulationProfile
    k_x: float
    N: int
    omega_grid: np.ndarray
    branches: list[BranchTrace]
    warnings: list[str]
    failed_points: list[float]


@dataclass
class IsofrequencyContours:
    profile: ModulationProfile
    omega_0: float
    N: int
    k_x_grid: np.ndarray
    branches: list[BranchTrace]
    warnings: list[str]
    failed_points: list[float]


def _match_branches(branches, live, lam, vec, param_value, continuity_tol,
                    next_id, warnings, param_name):
    """Assign the eigenpairs (lam, columns of vec) to existing live branches
    by mode-vector overlap, starting new branches for unmatched modes.
    Returns updated (live, next_id)."""
    K = lam.size
    if not live:
        for i in range(K):
            tr = BranchTrace(next_id, [param_value], [lam[i]], [vec[:, i]], [], [])
            branches.append(tr)
            live = live + [tr]
            next_id += 1
        return live, next_id
    prev_vecs = np.stack([tr.vectors[-1] for tr in live], axis=1)
    overlap = np.abs(prev_vecs.conj().T @ vec)
    prev_lam = np.array([tr.kappa[-1] for tr in live])
    dist = np.abs(prev_lam[:, None] - lam[None, :])
    scale = max(np.max(np.abs(lam)), 1.0)
    cost = (1.0 - overlap) + 0.25 * dist / scale
    from scipy.optimize import linear_sum_assignment
    rows, cols = linear_sum_assignment(cost)
    matched_cols = set()
    new_live = []
    for r, c in zip(rows, cols):
        tr = live[r]
        if dist[r, c] > continuity_tol * scale and overlap[r, c] < 0.5:
            warnings.append(
                f"branch {tr.branch_id} lost continuity at {param_name}="
                f"{param_value:.6g}; starting a new branch")
            continue
        tr.param.append(param_value)
        tr.kappa.append(lam[c])
        tr.vectors.append(vec[:, c])
        new_live.append(tr)
        matched_cols.add(c)
    for c in range(K):
        if c not in matched_cols:
            tr = BranchTrace(next_id, [param_value], [lam[c]], [vec[:, c]], [], [])
            branches.append(tr)
            new_live.append(tr)
            next_id += 1
    return new_live, next_id


def band_structure(profile: ModulationProfile, omega_grid, k_x: float = 0.0,
                   N: int | None = None) -> BandDiagram:
    """Sweep omega and track kappa_0 branches by mode-vector overlap.

    Solver failures at isolated grid points are recorded in failed_points
    and show up as gaps in the branch traces instead of aborting.
    """
    omega_grid = np.asarray(omega_grid, dtype=float)
    if omega_grid.ndim != 1 or omega_grid.size < 2:
        raise ValueError("omega_grid must be a 1-D array with at least 2 points")
    if N is None:
        N = SONIC_N_FLOOR if _sonic_warning(profile) else DEFAULT_N
    warnings = []
    sw = _sonic_warning(profile)
    if sw:
        warnings.append(sw)
    branches: list[BranchTrace] = []
    live: list[BranchTrace] = []
    next_id = 0
    failed = []
    for w in omega_grid:
        try:
            sol = eigen_kappa(profile, float(w), k_x, N)
        except Exception as exc:  # keep sweeping; mark the hole
            failed.append(float(w))
            warnings.append(f"solver failed at omega={w:.6g}: {exc}")
            live = []
            continue
        live, next_id = _match_branches(branches, live, sol.eigenvalues,
                                        sol.mode_vectors.T, float(w), 0.35,
                                        next_id, warnings, "omega")
    diag = BandDiagram(profile, k_x, N, omega_grid, branches, warnings, failed)
    _fill_band_group_velocity(diag)
    return diag


def _fill_band_group_velocity(diag: BandDiagram):
    """Central-difference v_g,z = d omega / d kappa along each real branch.
    At k_x = 0 the diagram is symmetric in k_x, so v_g,x = 0 there."""
    for tr in diag.branches:
        w, k = tr.as_arrays()
        vgz = np.full(w.size, np.nan)
        kr = k.real
        if w.size >= 3:
            dk = np.gradient(kr, w)
            with np.errstate(divide="ignore", invalid="ignore"):
                vgz = np.where(np.abs(dk) > 1e-14, 1.0 / dk, np.nan)
        ev = np.abs(k.imag) > tol_evanescent(max(np.max(np.abs(kr)), 1.0))
        vgz[ev] = np.nan
        tr.vg_z = list(vgz)
        tr.vg_x = [0.0 if diag.k_x == 0.0 else np.nan] * w.size


def group_velocity(diagram: BandDiagram, branch_id: int, omega: float):
    """(v_g,x, v_g,z) on a tracked branch at grid frequency omega, by
    central finite differences.  Needs at least 3 tracked points."""
    for tr in diagram.branches:
        if tr.branch_id == branch_id:
            w, _ = tr.as_arrays()
            if w.size < 3:
                raise ValueError(
                    f"branch {branch_id} has {w.size} points; need >= 3 for a "
                    f"central difference")
            i = int(np.argmin(np.abs(w - omega)))
            i = min(max(i, 1), w.size - 2)
            vgz = tr.vg_z[i]
            vgx = tr.vg_x[i]
            if not np.isfinite(vgz):
                raise ValueError(
                    f"branch {branch_id} is evanescent or discontinuous near "
                    f"omega={omega:.6g}")
            return float(vgx), float(vgz)
    raise KeyError(f"no branch with id {branch_id}")


def isofrequency(profile: ModulationProfile, omega_0: float, k_x_grid,
                 N: int | None = None,
                 domega: float = 1e-4) -> IsofrequencyContours:
    """Contours kappa(k_x) at fixed omega_0, with group-velocity vectors.

    v_g,z comes from re-solving at omega_0 +- domega and matching branches
    by overlap; v_g,x then follows from the contour slope,
    v_g,x = -v_g,z * d kappa / d k_x at constant omega.
    """
    k_x_grid = np.asarray(k_x_grid, dtype=float)
    if k_x_grid.ndim != 1 or k_x_grid.size < 3:
        raise ValueError("k_x_grid must be a 1-D array with at least 3 points")
    if N is None:
        N = SONIC_N_FLOOR if _sonic_warning(profile) else DEFAULT_N
    warnings = []
    sw = _sonic_warning(profile)
    if sw:
        warnings.append(sw)
    branches: list[BranchTrace] = []
    live: list[BranchTrace] = []
    next_id = 0
    failed = []
    vg_rows = {}
    for kx in k_x_grid:
        try:
            sol = eigen_kappa(profile, omega_0, float(kx), N)
            up = eigen_kappa(profile, omega_0 + domega, float(kx), N)
            dn = eigen_kappa(profile, omega_0 - domega, float(kx), N)
        except Exception as exc:
            failed.append(float(kx))
            warnings.append(f"solver failed at k_x={kx:.6g}: {exc}")
            live = []
            continue
        # pair the +-domega spectra to the centre one by vector overlap
        ov_up = np.abs(sol.mode_vectors.conj() @ up.mode_vectors.T)
        ov_dn = np.abs(sol.mode_vectors.conj() @ dn.mode_vectors.T)
        kup = up.eigenvalues[np.argmax(ov_up, axis=1)]
        kdn = dn.eigenvalues[np.argmax(ov_dn, axis=1)]
        with np.errstate(divide="ignore", invalid="ignore"):
            vgz = np.where(np.abs(kup - kdn) > 1e-300,
                           2.0 * domega / (kup.real - kdn.real), np.nan)
        for i, lam in enumerate(sol.eigenvalues):
            vg_rows[(float(kx), complex(lam))] = vgz[i]
        live, next_id = _match_branches(branches, live, sol.eigenvalues,
                                        sol.mode_vectors.T, float(kx), 0.35,
                                        next_id, warnings, "k_x")
    iso = IsofrequencyContours(profile, omega_0, N, k_x_grid, branches,
                               warnings, failed)
    for tr in branches:
        kxs, kap = tr.as_arrays()
        vgz = np.array([vg_rows.get((float(p), complex(k)), np.nan)
                        for p, k in zip(kxs, kap)])
        if kxs.size >= 3:
            slope = np.gradient(kap.real, kxs)
        else:
            slope = np.full(kxs.size, np.nan)
        with np.errstate(invalid="ignore"):
            vgx = -vgz * slope
        ev = np.abs(kap.imag) > tol_evanescent(max(np.max(np.abs(kap.real)), 1.0))
        vgz = np.where(ev, np.nan, vgz)
        vgx = np.where(ev, np.nan, vgx)
        tr.vg_z = list(vgz)
        tr.vg_x = list(vgx)
    return iso


# ---------------------------------------------------------------------------
# Band-gap scan


@dataclass
class GapScan:
    width: float
    omega_lo: float
    omega_hi: float
    omega_center_guess: float
    max_im_kappa: float


def first_band_gap(profile: ModulationProfile, N: int | None = None,
                   k_x: float = 0.0, refine: float = 1e-4) -> GapScan:
    """Width of the first omega-gap on the forward light line.

    The first forward/backward branch crossing of the unmodulated medium
    sits at omega* = (omega_s + kappa_s * v_p) / 2.  A frequency counts
    as inside the gap when the spectrum holds a conjugate eigenvalue
    pair, with Im kappa above a firm floor, whose ladder lands near the
    crossing wavenumber.  Only the flagged interval nearest omega* is
    kept (higher crossings of the ladder open their own gaps), and its
    edges are bisected down to `refine` (in units of omega_s).
    Impedance-matched modulation leaves the crossing gapless and the
    scan returns width 0.
    """
    vp = profile.phase_velocity
    if profile.omega_s <= 0 and profile.kappa_s <= 0:
        return GapScan(0.0, math.nan, math.nan, math.nan, 0.0)
    w_star = 0.5 * (profile.omega_s + profile.kappa_s * vp)
    if N is None:
        N = SONIC_N_FLOOR if _sonic_warning(profile) else DEFAULT_N
    sqeps = math.sqrt(profile.eps_avg * profile.mu_avg)
    kappa_window = 0.45 * max(profile.kappa_s, 1e-12)
    im_floor = 1e-6 * max(profile.kappa_s, 1.0)
    im_ceil = 0.5 * max(profile.kappa_s, 1.0)

    def gap_measure(w):
        sol = eigen_kappa(profile, w, k_x, N)
        lam = sol.eigenvalues
        k_star = w * sqeps
        best = 0.0
        for lv in lam:
            if not (im_floor < abs(lv.imag) < im_ceil):
                continue
            # a genuine spectral gap detaches a conjugate pair together
            if np.min(np.abs(lam - lv.conjugate())) > 1e-6 * max(abs(lv), 1.0):
                continue
            rungs = lv.real + sol.harmonics * profile.kappa_s
            if np.min(np.abs(rungs - k_star)) < kappa_window:
                best = max(best, abs(lv.imag))
        return best

    scale = max(profile.omega_s, w_star)
    lo, hi = 0.55 * w_star, 1.45 * w_star
    grid = np.linspace(lo, hi, 61)
    flags = np.array([gap_measure(w) > 0.0 for w in grid])
    if not flags.any():
        return GapScan(0.0, math.nan, math.nan, w_star, 0.0)
    idx = np.flatnonzero(flags)
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    centre = np.argmin(np.abs(grid - w_star))
    run = min(runs, key=lambda r: abs(0.5 * (r[0] + r[-1]) - centre))

    def bisect(a, b, want_inside_right):
        for _ in range(60):
            mid = 0.5 * (a + b)
            if b - a < refine * scale:
                break
            if (gap_measure(mid) > 0.0) == want_inside_right:
                b = mid
            else:
                a = mid
        return 0.5 * (a + b)

    i0, i1 = run[0], run[-1]
    w_lo = grid[i0] if i0 == 0 else bisect(grid[i0 - 1], grid[i0], True)
    w_hi = grid[i1] if i1 == len(grid) - 1 else bisect(grid[i1], grid[i1 + 1], False)
    max_im = max(gap_measure(w) for w in np.linspace(w_lo, w_hi, 7)[1:-1]) \
        if w_hi > w_lo else 0.0
    return GapScan(float(w_hi - w_lo), float(w_lo), float(w_hi), w_star,
                   float(max_im))
