import numpy as np
import pytest

import smallscat as ss
from smallscat.core import CloudSpec, _bisection_counts, generate_cloud
from smallscat.fields import ScalarField


class LeftHalfDensity(ScalarField):
    """2 on the left half of the unit cube (x < 0.5), 0 on the right."""

    def sample(self, points):
        p = np.atleast_2d(points)
        return np.where(p[:, 0] < 0.5, 2.0, 0.0)


def test_wave_invariants():
    with pytest.raises(ValueError):
        ss.IncidentWave(k=0.0, alpha=[0, 0, 1])
    with pytest.raises(ValueError):
        ss.IncidentWave(k=1.0, alpha=[0, 0, 1.001])
    wave = ss.IncidentWave(k=2.0, alpha=[1, 0, 0])
    x = np.array([[0.3, 0.0, 0.0]])
    assert wave.field_at(x)[0] == pytest.approx(np.exp(1j * 0.6))
    assert np.allclose(wave.gradient_at(x)[0], [2j * np.exp(1j * 0.6), 0, 0])
    assert wave.laplacian_at(x)[0] == pytest.approx(-4.0 * np.exp(1j * 0.6))


def test_boundary_kind_invariants():
    with pytest.raises(ValueError):
        ss.Impedance(h=1.0, kappa=1.0)
    with pytest.raises(ValueError):
        ss.Impedance(h=1.0, kappa=0.0)
    bc = ss.Impedance(h=0.5 - 0.1j, kappa=0.5)
    assert bc.h == 0.5 - 0.1j


def test_sphere_particle_functionals():
    p = ss.Particle.sphere([0, 0, 0], 0.1, ss.Hard())
    assert p.capacitance == pytest.approx(4 * np.pi * 0.1)
    assert p.surface_factor == pytest.approx(4 * np.pi)
    assert p.volume == pytest.approx(4 / 3 * np.pi * 0.1**3)
    assert np.allclose(p.polarizability, -1.5 * np.eye(3))
    soft = ss.Particle.sphere([0, 0, 0], 0.1, ss.Soft())
    assert soft.polarizability is None
    with pytest.raises(ValueError):
        ss.Particle.sphere([0, 0, 0], -0.1, ss.Soft())


def test_validate_accepts_single_small_sphere(wide_box, wave_z):
    scene = ss.Scene(particles=(ss.Particle.sphere([0, 0, 0], 0.01, ss.Soft()),),
                     domain=wide_box, wave=wave_z)
    report = ss.validate_scene(scene)
    assert report.accepted
    assert report.metrics["k_a_n0"] == pytest.approx(0.01)


def test_validate_flags_close_pair(wide_box, wave_z):
    particles = (ss.Particle.sphere([0, 0, 0], 0.01, ss.Soft()),
                 ss.Particle.sphere([0.05, 0, 0], 0.01, ss.Soft()))
    scene = ss.Scene(particles=particles, domain=wide_box, wave=wave_z)
    report = ss.validate_scene(scene)
    assert not report.accepted
    assert any("d/a = 5" in v for v in report.violations)


def test_validate_flags_positive_im_h(wide_box, wave_z):
    p = ss.Particle.sphere([0, 0, 0], 0.01, ss.Impedance(h=0.1 + 0.2j, kappa=0.5))
    scene = ss.Scene(particles=(p,), domain=wide_box, wave=wave_z)
    report = ss.validate_scene(scene)
    assert any("Im h > 0" in v for v in report.violations)


def test_validate_flags_large_ka_and_outside_center(unit_box):
    wave = ss.IncidentWave(k=30.0, alpha=[0, 0, 1])
    particles = (ss.Particle.sphere([0.5, 0.5, 0.5], 0.01, ss.Soft()),
                 ss.Particle.sphere([1.5, 0.5, 0.5], 0.01, ss.Soft()))
    scene = ss.Scene(particles=particles, domain=unit_box, wave=wave)
    report = ss.validate_scene(scene)
    joined = " ".join(report.violations)
    assert "smallness" in joined and "outside" in joined


def test_validate_accept_implies_separation(unit_box, wave_z):
    spec = CloudSpec(density=ss.ConstantField(1.0), a=0.005, law="dirichlet", rng_seed=4)
    particles = generate_cloud(spec, unit_box)
    scene = ss.Scene(particles=tuple(particles), domain=unit_box, wave=wave_z)
    report = ss.validate_scene(scene)
    assert report.accepted
    centers = scene.centers
    d = np.linalg.norm(centers[:, None] - centers[None, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    assert d.min() >= scene.separation_factor * scene.max_radius


def test_dirichlet_law_count(unit_box):
    spec = CloudSpec(density=ss.ConstantField(1.0), a=1e-2, law="dirichlet", rng_seed=0)
    assert len(generate_cloud(spec, unit_box)) == 100


def test_impedance_law_count(unit_box):
    spec = CloudSpec(density=ss.ConstantField(1.0), a=1e-2, law="impedance", kappa=0.5,
                     bc_kind="impedance", h=ss.ConstantField(1.0), rng_seed=0,
                     separation_factor=3.0)
    cloud = generate_cloud(spec, unit_box)
    assert len(cloud) == 1000
    assert all(isinstance(p.bc, ss.Impedance) for p in cloud)


def test_left_half_density_places_only_left(unit_box):
    spec = CloudSpec(density=LeftHalfDensity(), a=1e-2, law="dirichlet", rng_seed=1)
    cloud = generate_cloud(spec, unit_box)
    assert len(cloud) == 100
    assert all(p.center[0] < 0.5 for p in cloud)


def test_cloud_bit_identical_reruns(unit_box):
    spec = CloudSpec(density=ss.ConstantField(1.0), a=0.01, law="dirichlet", rng_seed=7)
    c1 = generate_cloud(spec, unit_box)
    c2 = generate_cloud(spec, unit_box)
    assert np.array_equal(np.array([p.center for p in c1]),
                          np.array([p.center for p in c2]))


def test_cloud_seeds_differ(unit_box):
    base = dict(density=ss.ConstantField(1.0), a=0.01, law="dirichlet")
    c1 = generate_cloud(CloudSpec(rng_seed=0, **base), unit_box)
    c2 = generate_cloud(CloudSpec(rng_seed=1, **base), unit_box)
    assert not np.array_equal(np.array([p.center for p in c1]),
                              np.array([p.center for p in c2]))


def test_bisection_counts_cellwise_bound():
    rng = np.random.default_rng(5)
    masses = rng.random((6, 6, 6))
    total = 200
    counts = _bisection_counts(masses, total)
    assert counts.sum() == total
    targets = total * masses.ravel() / masses.sum()
    assert np.max(np.abs(counts - targets)) <= 1.0


def test_subbox_counting_law(unit_box):
    # aligned with the stratification grid: count deviates from the law by
    # at most one per stratification cell intersecting the sub-box
    spec = CloudSpec(density=ss.ConstantField(1.0), a=0.01, law="dirichlet",
                     rng_seed=3, strata_n=5)
    cloud = generate_cloud(spec, unit_box)
    centers = np.array([p.center for p in cloud])
    edge = 1.0 / 5
    for (i0, i1, j0, j1, k0, k1) in [(0, 2, 0, 2, 0, 2), (1, 4, 0, 5, 2, 5),
                                     (0, 5, 0, 5, 0, 5)]:
        lo = np.array([i0, j0, k0]) * edge
        hi = np.array([i1, j1, k1]) * edge
        inside = np.all((centers >= lo) & (centers <= hi), axis=1)
        target = 100.0 * np.prod(hi - lo)
        n_cells = (i1 - i0) * (j1 - j0) * (k1 - k0)
        assert abs(int(inside.sum()) - target) <= n_cells


def test_min_distance_enforced(unit_box):
    spec = CloudSpec(density=ss.ConstantField(1.0), a=0.02, law="dirichlet",
                     rng_seed=0, separation_factor=6.0)
    cloud = generate_cloud(spec, unit_box)
    centers = np.array([p.center for p in cloud])
    d = np.linalg.norm(centers[:, None] - centers[None, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    assert d.min() >= 6.0 * 0.02


def test_density_infeasible(unit_box):
    # 1000 particles cannot sit 0.5 apart in the unit cube
    spec = CloudSpec(density=ss.ConstantField(1.0), a=0.05, law="impedance", kappa=0.5,
                     bc_kind="impedance", h=ss.ConstantField(1.0), rng_seed=0,
                     separation_factor=10.0)
    with pytest.raises(ss.DensityInfeasible):
        generate_cloud(spec, unit_box)


def test_empty_law_rejected(unit_box):
    spec = CloudSpec(density=ss.ConstantField(0.0), a=0.01, law="dirichlet", rng_seed=0)
    with pytest.raises(ValueError):
        generate_cloud(spec, unit_box)


def test_hard_volume_law(unit_box):
    rho = 2e-4
    a = 0.01
    spec = CloudSpec(density=ss.ConstantField(rho), a=a, law="hard_volume",
                     bc_kind="hard", rng_seed=0)
    cloud = generate_cloud(spec, unit_box)
    expected = round(rho / (4 / 3 * np.pi * a**3))
    assert len(cloud) == expected
    assert all(isinstance(p.bc, ss.Hard) for p in cloud)


def test_mixed_kind_scene_rejected(wide_box, wave_z):
    particles = (ss.Particle.sphere([0, 0, 0], 0.01, ss.Soft()),
                 ss.Particle.sphere([1, 0, 0], 0.01, ss.Hard()))
    scene = ss.Scene(particles=particles, domain=wide_box, wave=wave_z)
    with pytest.raises(ValueError):
        scene.boundary_kind()
