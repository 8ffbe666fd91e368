"""Closed-form references used across the test suite.

Everything here is implemented directly from textbook formulas, without
touching the package internals, so it can serve as an independent check
of the solvers.
"""

import numpy as np


def static_slab_rt(omega, theta_deg, eps_slab, mu_slab, thickness,
                   eps_out=1.0, mu_out=1.0):
    """TE reflection/transmission amplitudes of a uniform slab.

    Geometry matches the package: slab normal along x, theta measured
    from +z, so the normal wavenumber is omega*n_out*sin(theta).  The
    transmitted amplitude is referenced at the exit face x = thickness.
    Returns (r, t) complex.
    """
    th = np.radians(theta_deg)
    n_out = np.sqrt(eps_out * mu_out)
    kz = omega * n_out * np.cos(th)
    kx1 = omega * n_out * np.sin(th)
    kx2 = np.sqrt(omega ** 2 * eps_slab * mu_slab - kz ** 2 + 0j)
    if kx2.imag < 0.0:
        kx2 = -kx2
    Y1 = kx1 / (omega * mu_out)
    Y2 = kx2 / (omega * mu_slab)
    r01 = (Y1 - Y2) / (Y1 + Y2)
    ph = np.exp(1j * kx2 * thickness)
    den = 1.0 - r01 ** 2 * ph ** 2
    r = r01 * (1.0 - ph ** 2) / den
    t = (1.0 - r01 ** 2) * ph / den
    return complex(r), complex(t)


def folded_light_lines(omega, k_x, eps, mu, omega_s, kappa_s, N):
    """All 2(2N+1) Bloch wavenumbers of the unmodulated medium.

    Without modulation the harmonic blocks decouple, so the spectrum is
    the folded light lines kappa_0 = +-sqrt(eps*mu*omega_n^2 - k_x^2)
    - n*kappa_s, complex for rungs below cutoff.
    """
    n = np.arange(-N, N + 1)
    wn = omega + n * omega_s
    kap = np.sqrt(eps * mu * wn ** 2 - k_x ** 2 + 0j)
    kap = np.where(kap.imag < 0, -kap, kap)
    return np.concatenate([kap - n * kappa_s, -kap - n * kappa_s])


def static_slab_kx(omega_0, k_z0, eps, mu, omega_s, kappa_s, N):
    """Slab-normal wavenumbers of the unmodulated medium at a fixed
    tangential ladder: k_x = +-sqrt(eps*mu*omega_n^2 - k_z_n^2)."""
    n = np.arange(-N, N + 1)
    wn = omega_0 + n * omega_s
    kzn = k_z0 + n * kappa_s
    kx = np.sqrt(eps * mu * wn ** 2 - kzn ** 2 + 0j)
    kx = np.where(kx.imag < 0, -kx, kx)
    return np.concatenate([kx, -kx])


def match_spectra(computed, expected, tol):
    """Greedy one-to-one pairing: every expected value must have a
    distinct computed partner within tol.  Returns the worst distance."""
    comp = list(np.asarray(computed, dtype=complex))
    worst = 0.0
    for ev in np.asarray(expected, dtype=complex):
        d = np.abs(np.asarray(comp) - ev)
        i = int(np.argmin(d))
        worst = max(worst, float(d[i]))
        if d[i] > tol:
            return worst
        comp.pop(i)
    return worst


def offaxis_measure(eigenvalues, harmonics, k_star, kappa_s, window=0.3):
    """Largest |Im kappa| among eigenvalues whose rung ladder lands near
    the light-line crossing wavenumber k_star.  Inside an omega-gap the
    local branch pair leaves the real axis so this is finite; outside it
    the near-crossing spectrum is entirely real.  Deliberately simpler
    than the package's detector (no pair matching, no floor/cap, no
    component selection)."""
    best = 0.0
    for lam in np.asarray(eigenvalues, dtype=complex):
        rungs = lam.real + harmonics * kappa_s
        if np.min(np.abs(rungs - k_star)) < window * kappa_s:
            best = max(best, abs(lam.imag))
    return best
