import math

import numpy as np
import pytest

from stm_sim.medium import (
    IncidentWave,
    SlabGeometry,
    ValidationError,
    derived_config,
    is_derived_config,
    make_geometry,
    make_profile,
    make_wave,
    sample_material,
)


def test_profile_basic_properties():
    p = make_profile(eps_avg=2.0, mu_avg=2.0, delta_e=0.15, delta_m=0.15,
                     omega_s=1.0, kappa_s=2.5)
    assert p.modulation_velocity == pytest.approx(0.4)
    assert p.phase_velocity == pytest.approx(1.0 / 2.0)
    assert not p.is_static()
    assert p.sonic_mismatch() == pytest.approx(abs(0.4 - 0.5) / 0.5)


def test_static_profile_flag():
    p = make_profile(eps_avg=3.0, mu_avg=1.0, delta_e=0.0, delta_m=0.0,
                     omega_s=1.0, kappa_s=2.0)
    assert p.is_static()


@pytest.mark.parametrize("kwargs", [
    dict(eps_avg=0.0, mu_avg=1.0, delta_e=0.1, delta_m=0.1, omega_s=1.0, kappa_s=2.0),
    dict(eps_avg=2.0, mu_avg=-1.0, delta_e=0.1, delta_m=0.1, omega_s=1.0, kappa_s=2.0),
    dict(eps_avg=2.0, mu_avg=1.0, delta_e=1.0, delta_m=0.1, omega_s=1.0, kappa_s=2.0),
    dict(eps_avg=2.0, mu_avg=1.0, delta_e=-0.1, delta_m=0.1, omega_s=1.0, kappa_s=2.0),
    dict(eps_avg=2.0, mu_avg=1.0, delta_e=0.1, delta_m=0.1, omega_s=-1.0, kappa_s=2.0),
    dict(eps_avg=2.0, mu_avg=1.0, delta_e=0.1, delta_m=0.1, omega_s=1.0, kappa_s=-2.0),
])
def test_profile_validation_rejects(kwargs):
    with pytest.raises(ValidationError):
        make_profile(**kwargs)


def test_time_only_and_space_only_modulation_allowed():
    # kappa_s = 0 (time-only) and omega_s = 0 (static grating) are both
    # legitimate degenerate limits of the travelling wave
    make_profile(eps_avg=2.0, mu_avg=1.0, delta_e=0.1, delta_m=0.0,
                 omega_s=1.0, kappa_s=0.0)
    make_profile(eps_avg=2.0, mu_avg=1.0, delta_e=0.1, delta_m=0.0,
                 omega_s=0.0, kappa_s=2.0)


def test_geometry_validation():
    g = make_geometry(thickness=3.0)
    assert g.exterior_eps == 1.0 and g.exterior_mu == 1.0
    with pytest.raises(ValidationError):
        make_geometry(thickness=0.0)
    with pytest.raises(ValidationError):
        make_geometry(thickness=1.0, exterior_eps=0.0)


@pytest.mark.parametrize("theta", [0.0, 180.0, -10.0, 210.0])
def test_wave_angle_rejected(theta):
    with pytest.raises(ValidationError):
        make_wave(omega_0=1.0, theta_deg=theta)


def test_wave_validation():
    with pytest.raises(ValidationError):
        make_wave(omega_0=0.0, theta_deg=55.0)
    with pytest.raises(ValidationError):
        make_wave(omega_0=1.0, theta_deg=55.0, amplitude=0.0)


def test_wavenumber_components():
    w = make_wave(omega_0=1.2, theta_deg=55.0)
    n_ext = math.sqrt(2.0 * 3.0)
    assert w.tangential_wavenumber(2.0, 3.0) == pytest.approx(
        1.2 * n_ext * math.cos(math.radians(55.0)), abs=1e-15)
    assert w.normal_wavenumber(2.0, 3.0) == pytest.approx(
        1.2 * n_ext * math.sin(math.radians(55.0)), abs=1e-15)


def test_mirror_angle_flips_tangential_component_only():
    a = make_wave(omega_0=0.9, theta_deg=55.0)
    b = make_wave(omega_0=0.9, theta_deg=125.0)
    assert a.tangential_wavenumber() == pytest.approx(
        -b.tangential_wavenumber(), abs=1e-15)
    assert a.normal_wavenumber() == pytest.approx(
        b.normal_wavenumber(), abs=1e-15)


def test_sample_material_matches_formula():
    rng = np.random.default_rng(20260815)
    p = make_profile(eps_avg=2.5, mu_avg=1.5, delta_e=0.2, delta_m=0.1,
                     omega_s=1.0, kappa_s=3.0, phi=0.7)
    z = rng.uniform(-5, 5, size=40)
    t = rng.uniform(-5, 5, size=40)
    eps, mu = sample_material(p, z, t)
    phase = p.omega_s * t - p.kappa_s * z + p.phi
    np.testing.assert_allclose(eps, 2.5 * (1 + 0.2 * np.cos(phase)), atol=1e-14)
    np.testing.assert_allclose(mu, 1.5 * (1 + 0.1 * np.cos(phase)), atol=1e-14)


def test_profile_dict_round_trip():
    p = make_profile(eps_avg=2.0, mu_avg=2.0, delta_e=0.15, delta_m=0.15,
                     omega_s=1.0, kappa_s=2.561, phi=0.3)
    d = p.to_dict()
    q = make_profile(**d)
    assert p == q


def test_derived_config_is_frozen_demo():
    profile, geometry, wave = derived_config()
    assert profile.eps_avg == profile.mu_avg == 2.0
    assert profile.delta_e == profile.delta_m == 0.15
    assert profile.kappa_s == pytest.approx(2.5610)
    assert wave.omega_0 == pytest.approx(1.0)
    assert wave.theta_deg == pytest.approx(55.0)
    assert geometry.thickness == pytest.approx(10.58 * 2 * math.pi)
    assert is_derived_config(profile, geometry, wave)
    other = IncidentWave(omega_0=1.1, theta_deg=55.0)
    assert not is_derived_config(profile, geometry, other)


def test_geometry_defaults_are_vacuum():
    g = SlabGeometry(thickness=1.0)
    assert g.exterior_eps == 1.0
    assert g.exterior_mu == 1.0
