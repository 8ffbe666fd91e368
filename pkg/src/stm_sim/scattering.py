"""Oblique-incidence scattering from a space-time modulated slab.

Geometry: the slab occupies 0 <= x <= thickness with its normal along x;
the modulation travels along z, tangential to the slab faces.  A TE plane
wave (E_y, H_x, H_z) arrives from x < 0 at angle theta measured from the
+z axis, so theta < 90 deg co-propagates with the modulation and
theta > 90 deg counter-propagates.

Tangential phase matching forces every scattered field component onto the
space-time harmonic lattice (omega_n, k_z,n) = (omega_0 + n omega_s,
k_z0 + n kappa_s).  Interior fields are expanded over the 2(2N+1) slab
eigenmodes at that fixed ladder (normal wavenumbers k_x from the Floquet
pencil); exterior fields are plane waves per harmonic.  Continuity of
E_y and H_z at both faces gives one dense linear system solved in one
shot, no interface cascading.

Harmonics with omega_n = 0 need special treatment mirroring the pencil's
static rows: a time-independent E_y with nonzero k_z cannot satisfy
Faraday's law, so E_y,n = 0 on both sides and the harmonic reduces to a
static magnetic potential field.  Its exterior amplitude parameter (kept
in the R_n/T_n slots) scales H_z = i k_z c, H_x = -+|k_z| c, and the E_y
continuity rows are replaced by B_x continuity, which closes the system.
Static harmonics carry no time-averaged flux and are excluded from power
sums but retained in the matching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .medium import (IncidentWave, ModulationProfile, SlabGeometry,
                     ValidationError)
from .dispersion import BlochSolution, eigen_k_x, material_matrices

EVANESCENT_TOL_FACTOR = 1e-9   # |Im k_x| > 1e-9 * omega_0 marks evanescent
CONDITION_LIMIT = 1e12
RESIDUAL_LIMIT = 1e-10


class BoundaryMatchError(RuntimeError):
    """Raised when the boundary system is singular or ill-conditioned."""


@dataclass
class HarmonicLattice:
    """Exterior space-time harmonic ladder fixed by phase matching."""

    omega_0: float
    k_z0: float
    omega_s: float
    kappa_s: float
    exterior_eps: float
    exterior_mu: float
    n: np.ndarray
    omega_n: np.ndarray
    k_z_n: np.ndarray
    k_x_n: np.ndarray        # principal root sqrt(omega_n^2 eps mu - k_z_n^2)
    propagating: np.ndarray
    static: np.ndarray       # omega_n == 0 within tolerance

    @property
    def size(self) -> int:
        return self.n.size


def harmonic_lattice(profile: ModulationProfile, geometry: SlabGeometry,
                     wave: IncidentWave, N: int) -> HarmonicLattice:
    """Build the exterior harmonic ladder for the scattering problem.

    k_x_n holds the principal root: positive real for propagating
    harmonics, +i|.| for evanescent ones.  Transmitted waves use
    sign(omega_n) * k_x_n (propagating) so that power flows toward +x;
    reflected waves use the negatives.
    """
    n = np.arange(-N, N + 1)
    next_ = math.sqrt(geometry.exterior_eps * geometry.exterior_mu)
    k_z0 = wave.omega_0 * next_ * math.cos(math.radians(wave.theta_deg))
    omega_n = wave.omega_0 + n * profile.omega_s
    k_z_n = k_z0 + n * profile.kappa_s
    arg = (omega_n * next_) ** 2 - k_z_n ** 2
    tol = EVANESCENT_TOL_FACTOR * wave.omega_0
    prop = arg > (tol * wave.omega_0)
    k_x_n = np.where(prop, np.sqrt(np.abs(arg)), 1j * np.sqrt(np.abs(arg)))
    static = np.abs(omega_n) <= 1e-12 * max(wave.omega_0, profile.omega_s, 1.0)
    return HarmonicLattice(wave.omega_0, k_z0, profile.omega_s,
                           profile.kappa_s, geometry.exterior_eps,
                           geometry.exterior_mu, n, omega_n, k_z_n,
                           k_x_n.astype(complex), prop, static)


def slab_eigenmodes(profile: ModulationProfile, omega_0: float, k_z0: float,
                    N: int) -> BlochSolution:
    """Interior eigenmodes at the fixed tangential ladder: the allowed
    normal wavenumbers k_x and their harmonic field vectors."""
    return eigen_k_x(profile, omega_0, k_z0, N)


def mode_impedances(sol: BlochSolution, weight_floor: float = 1e-6):
    """Per-harmonic field impedance |E_n| / |H_n| of each mode, masked to
    harmonics carrying at least weight_floor of the mode's peak |E_n|.

    For matched modulation (delta_e = delta_m) every significant harmonic
    of every mode sits at the unmodulated wave impedance sqrt(mu/eps)."""
    habs = np.sqrt(np.abs(sol.hx_harm) ** 2 + np.abs(sol.hz_harm) ** 2)
    eabs = np.abs(sol.e_harm)
    peak = eabs.max(axis=1, keepdims=True)
    mask = (eabs > weight_floor * np.maximum(peak, 1e-300)) & (habs > 1e-300)
    z = np.full(eabs.shape, np.nan)
    z[mask] = eabs[mask] / habs[mask]
    return z


@dataclass
class ScatteringResult:
    """Per-harmonic reflection/transmission amplitudes and power budget.

    R_n and T_n are E_y amplitudes at x=0 and x=thickness.  For static
    harmonics (omega_n = 0) the stored value is instead the magnetic
    potential amplitude c of the exterior H-field (E_y is identically
    zero there); those entries never carry flux.  absorption is the
    power deficit A = 1 - (sum P_refl + sum P_trans)/P_inc and may be
    negative under parametric gain.
    """

    lattice: HarmonicLattice
    profile: ModulationProfile
    geometry: SlabGeometry
    wave: IncidentWave
    N: int
    R_n: np.ndarray
    T_n: np.ndarray
    internal_coefficients: np.ndarray
    P_inc: float
    P_refl_n: np.ndarray
    P_trans_n: np.ndarray
    absorption: float
    condition_number: float
    residual: float
    warnings: list[str] = field(default_factory=list)

    @property
    def P_refl_total(self) -> float:
        return float(np.sum(self.P_refl_n))

    @property
    def P_trans_total(self) -> float:
        return float(np.sum(self.P_trans_n))


def _transmit_branch(lattice: HarmonicLattice) -> np.ndarray:
    """Exterior k_x per harmonic for waves outgoing toward +x."""
    k = lattice.k_x_n.copy()
    prop = lattice.propagating
    k[prop] = k[prop].real * np.sign(lattice.omega_n[prop])
    return k


def match_boundaries(modes: BlochSolution, lattice: HarmonicLattice,
                     geometry: SlabGeometry, wave: IncidentWave,
                     profile: ModulationProfile) -> ScatteringResult:
    """Solve the two-interface boundary-matching system.

    Interior mode amplitudes are referenced at the face where the mode is
    bounded (x=0 for +x-going or +x-decaying modes, x=thickness
    otherwise), so no matrix entry ever exceeds unit modulus from
    propagation factors.  Raises BoundaryMatchError when the system's
    condition number passes 1e12 or the solve residual is poor.
    """
    M = lattice.size
    if modes.harmonics.size != M:
        raise ValidationError("modes and lattice use different truncations")
    K = modes.eigenvalues.size
    if K != 2 * M:
        raise BoundaryMatchError(
            f"expected {2 * M} interior modes, pencil returned {K}; "
            f"the eigenproblem is degenerate at these parameters")
    L = geometry.thickness
    mu_e = geometry.exterior_mu
    warnings = list(modes.warnings)

    k_T = _transmit_branch(lattice)
    kx_modes = modes.eigenvalues
    # anchor each interior mode at its bounded face; evaluate the off-face
    # phase only for the selected branch so decaying tails cannot overflow
    rightward = np.array([c in ("forward", "evanescent_forward")
                          for c in modes.classification])
    phase0 = np.ones(K, dtype=complex)
    phaseL = np.ones(K, dtype=complex)
    phase0[~rightward] = np.exp(-1j * kx_modes[~rightward] * L)
    phaseL[rightward] = np.exp(1j * kx_modes[rightward] * L)

    _, mu_mat = material_matrices(profile, (M - 1) // 2)
    e_in = modes.e_harm.T        # (M, K): harmonic rows, mode columns
    hz_in = modes.hz_harm.T
    bx_in = mu_mat @ modes.hx_harm.T

    A = np.zeros((4 * M, 4 * M), dtype=complex)
    b = np.zeros(4 * M, dtype=complex)
    iR = np.arange(0, M)
    iC = np.arange(M, M + K)
    iT = np.arange(3 * M, 4 * M)
    rE0, rH0 = np.arange(0, M), np.arange(M, 2 * M)
    rEL, rHL = np.arange(2 * M, 3 * M), np.arange(3 * M, 4 * M)

    # interior columns
    A[np.ix_(rE0, iC)] = e_in * phase0
    A[np.ix_(rH0, iC)] = hz_in * phase0
    A[np.ix_(rEL, iC)] = e_in * phaseL
    A[np.ix_(rHL, iC)] = hz_in * phaseL

    for i in range(M):
        wn = lattice.omega_n[i]
        kz = lattice.k_z_n[i]
        if lattice.static[i]:
            # exterior static magnetic potential: H_z = i kz c, H_x = -+|kz| c
            A[rE0[i], :] = 0.0
            A[rE0[i], iC] = bx_in[i] * phase0
            A[rE0[i], iR[i]] = -mu_e * abs(kz)
            A[rH0[i], iR[i]] = -1j * kz
            A[rEL[i], :] = 0.0
            A[rEL[i], iC] = bx_in[i] * phaseL
            A[rEL[i], iT[i]] = +mu_e * abs(kz)
            A[rHL[i], iT[i]] = -1j * kz
        else:
            # reflected wave: k_x = -k_T, H_z = -k_T/(omega mu) R
            A[rE0[i], iR[i]] = -1.0
            A[rH0[i], iR[i]] = k_T[i] / (wn * mu_e)
            A[rEL[i], iT[i]] = -1.0
            A[rHL[i], iT[i]] = -k_T[i] / (wn * mu_e)

    n0 = M // 2
    k_x0 = wave.normal_wavenumber(geometry.exterior_eps, geometry.exterior_mu)
    b[rE0[n0]] = wave.amplitude
    b[rH0[n0]] = wave.amplitude * k_x0 / (wave.omega_0 * mu_e)

    # row equilibration keeps near-static harmonics from skewing the scale
    row_scale = np.max(np.abs(A), axis=1)
    row_scale[row_scale == 0] = 1.0
    A_eq = A / row_scale[:, None]
    b_eq = b / row_scale

    cond = np.linalg.cond(A_eq)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise BoundaryMatchError(
            f"boundary system condition number {cond:.3e} exceeds "
            f"{CONDITION_LIMIT:.0e}; increase N, move omega_0 off a ladder "
            f"degeneracy, or adjust kappa_s")
    u = np.linalg.solve(A_eq, b_eq)
    res = np.linalg.norm(A_eq @ u - b_eq) / (
        np.linalg.norm(A_eq, "fro") * np.linalg.norm(u) + np.linalg.norm(b_eq))
    if res > RESIDUAL_LIMIT:
        raise BoundaryMatchError(
            f"boundary solve residual {res:.3e} exceeds {RESIDUAL_LIMIT:.0e}")

    R = u[iR]
    c = u[iC]
    T = u[iT]

    # time-averaged normal flux per harmonic; static and evanescent carry none
    P_inc = 0.5 * wave.amplitude ** 2 * k_x0 / (wave.omega_0 * mu_e)
    flux = np.zeros(M)
    live = lattice.propagating & ~lattice.static
    absw = np.abs(lattice.omega_n[live])
    flux[live] = 0.5 * np.abs(k_T[live].real) / (absw * mu_e)
    P_refl = flux * np.abs(R) ** 2
    P_trans = flux * np.abs(T) ** 2
    Aval = 1.0 - (P_refl.sum() + P_trans.sum()) / P_inc

    return ScatteringResult(lattice=lattice, profile=profile,
                            geometry=geometry, wave=wave,
                            N=(M - 1) // 2, R_n=R, T_n=T,
                            internal_coefficients=c, P_inc=P_inc,
                            P_refl_n=P_refl, P_trans_n=P_trans,
                            absorption=float(Aval),
                            condition_number=float(cond),
                            residual=float(res), warnings=warnings)


def solve_slab(profile: ModulationProfile, geometry: SlabGeometry,
               wave: IncidentWave, N: int) -> ScatteringResult:
    """Convenience pipeline: lattice -> eigenmodes -> boundary matching."""
    lattice = harmonic_lattice(profile, geometry, wave, N)
    modes = slab_eigenmodes(profile, wave.omega_0, lattice.k_z0, N)
    return match_boundaries(modes, lattice, geometry, wave, profile)


def power_balance(result: ScatteringResult):
    """(P_refl_total, P_trans_total, A) from propagating harmonics only."""
    return (result.P_refl_total, result.P_trans_total, result.absorption)


@dataclass
class NonreciprocityReport:
    theta: float
    omega_0: float
    N: int
    T_forward: float
    T_backward: float
    R_forward: float
    R_backward: float
    A_forward: float
    A_backward: float
    contrast: float
    forward: ScatteringResult
    backward: ScatteringResult


def nonreciprocity(profile: ModulationProfile, geometry: SlabGeometry,
                   omega_0: float, theta: float, N: int,
                   amplitude: float = 1.0) -> NonreciprocityReport:
    """Compare scattering at theta and its mirror 180 deg - theta.

    theta < 90 co-propagates with the modulation; the mirror angle
    carries opposite tangential momentum.  Both runs share the truncation
    N.  contrast = A_forward - A_backward.
    """
    if not (0.0 < theta < 180.0) or theta == 90.0:
        raise ValidationError(
            f"theta must lie in (0, 90) or (90, 180) degrees, got {theta}")
    results = {}
    for label, th in (("forward", theta), ("backward", 180.0 - theta)):
        wv = IncidentWave(omega_0=omega_0, theta_deg=th, amplitude=amplitude)
        try:
            results[label] = solve_slab(profile, geometry, wv, N)
        except Exception as exc:
            raise BoundaryMatchError(
                f"{label} direction (theta={th:g} deg) failed: {exc}") from exc
    fw, bw = results["forward"], results["backward"]
    Pf, Pb = fw.P_inc, bw.P_inc
    return NonreciprocityReport(
        theta=theta, omega_0=omega_0, N=N,
        T_forward=fw.P_trans_total / Pf, T_backward=bw.P_trans_total / Pb,
        R_forward=fw.P_refl_total / Pf, R_backward=bw.P_refl_total / Pb,
        A_forward=fw.absorption, A_backward=bw.absorption,
        contrast=fw.absorption - bw.absorption,
        forward=fw, backward=bw)
