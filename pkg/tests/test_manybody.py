import numpy as np
import pytest

import smallscat as ss
from smallscat.background import free_space_green
from smallscat.manybody import (assemble_hard_system, dipole_kernel_blocks, eval_field,
                                far_field, fibonacci_directions, pair_kernel_matrix,
                                solve_hard, solve_impedance, solve_soft)
from smallscat.onebody import ShapeFunctionals, amplitude_onebody

FOUR_PI = 4.0 * np.pi


def soft_scene(centers, a, wave, box, sep=0.0):
    particles = tuple(ss.Particle.sphere(c, a, ss.Soft()) for c in centers)
    return ss.Scene(particles=particles, domain=box, wave=wave, separation_factor=sep or 10.0)


def imp_scene(centers, a, h, kappa, wave, box, sep=10.0):
    particles = tuple(ss.Particle.sphere(c, a, ss.Impedance(h=h, kappa=kappa))
                      for c in centers)
    return ss.Scene(particles=particles, domain=box, wave=wave, separation_factor=sep)


def hard_scene(centers, a, wave, box, sep=10.0):
    particles = tuple(ss.Particle.sphere(c, a, ss.Hard()) for c in centers)
    return ss.Scene(particles=particles, domain=box, wave=wave, separation_factor=sep)


# ---------------------------------------------------------------------------
# Single-particle reductions (exact empty-sum structure)
# ---------------------------------------------------------------------------
def test_soft_single_particle(wide_box, wave_z):
    scene = soft_scene([[0.2, -0.1, 0.4]], 0.01, wave_z, wide_box)
    sol = solve_soft(scene)
    u0 = wave_z.field_at(scene.centers)[0]
    assert sol.values[0] == pytest.approx(u0, rel=1e-14)
    assert sol.charges[0] == pytest.approx(-FOUR_PI * 0.01 * u0, rel=1e-14)


def test_impedance_single_particle(wide_box, wave_z):
    h, kappa, a = 0.7 - 0.3j, 0.5, 0.01
    scene = imp_scene([[0.0, 0.0, 0.0]], a, h, kappa, wave_z, wide_box)
    sol = solve_impedance(scene)
    assert sol.values[0] == pytest.approx(1.0, rel=1e-14)
    expected = -h * a ** (2 - kappa) * FOUR_PI
    assert sol.charges[0] == pytest.approx(expected, rel=1e-14)
    # agrees with the one-body closed form through zeta = h / a^kappa
    from smallscat.onebody import charge_impedance
    assert sol.charges[0] == pytest.approx(
        charge_impedance(h / a**kappa, FOUR_PI * a**2, 1.0), rel=1e-14)


def test_hard_single_particle(wide_box, wave_z):
    scene = hard_scene([[0.0, 0.0, 0.0]], 0.05, wave_z, wide_box)
    sol = solve_hard(scene)
    assert sol.values[0] == pytest.approx(1.0, rel=1e-14)
    assert np.allclose(sol.gradients[0], 1j * wave_z.k * wave_z.alpha, atol=1e-14)
    assert sol.laplacians[0] == pytest.approx(-wave_z.k**2, rel=1e-14)
    assert sol.charges[0] == pytest.approx(-wave_z.k**2 * scene.particles[0].volume)


# ---------------------------------------------------------------------------
# Two-particle closed forms and symmetries
# ---------------------------------------------------------------------------
def test_soft_two_particle_hand_elimination(wide_box, wave_z):
    a, k = 0.01, wave_z.k
    centers = np.array([[0.0, 0.0, -0.5], [0.0, 0.0, 0.5]])
    scene = soft_scene(centers, a, wave_z, wide_box)
    sol = solve_soft(scene)
    c1 = c2 = FOUR_PI * a
    g12 = free_space_green(k, 1.0)
    u01, u02 = wave_z.field_at(centers)
    denom = 1.0 - g12**2 * c1 * c2
    u1 = (u01 - g12 * c2 * u02) / denom
    u2 = (u02 - g12 * c1 * u01) / denom
    assert sol.values[0] == pytest.approx(u1, rel=1e-12)
    assert sol.values[1] == pytest.approx(u2, rel=1e-12)


def test_impedance_two_particle_hand_elimination(wide_box, wave_z):
    a, kappa, h = 0.01, 0.5, 0.8 - 0.1j
    centers = np.array([[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]])
    scene = imp_scene(centers, a, h, kappa, wave_z, wide_box)
    sol = solve_impedance(scene)
    c = h * FOUR_PI * a ** (2 - kappa)
    g12 = free_space_green(wave_z.k, 1.0)
    u01, u02 = wave_z.field_at(centers)
    u1 = (u01 - g12 * c * u02) / (1.0 - g12**2 * c * c)
    assert sol.values[0] == pytest.approx(u1, rel=1e-12)
    # the pair is mirror symmetric about a plane containing alpha
    assert sol.values[0] == pytest.approx(sol.values[1], rel=1e-13)


def test_mirror_pair_has_equal_values(wide_box, wave_z):
    # mirror through x = 0 fixes alpha = e_z
    centers = np.array([[-0.4, 0.1, 0.2], [0.4, 0.1, 0.2]])
    sol = solve_soft(soft_scene(centers, 0.01, wave_z, wide_box))
    assert sol.values[0] == pytest.approx(sol.values[1], rel=1e-13)


def test_impedance_zero_h_decouples(wide_box, wave_z):
    centers = np.array([[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.6, 0.0]])
    scene = imp_scene(centers, 0.01, 0.0, 0.5, wave_z, wide_box)
    sol = solve_impedance(scene)
    assert np.allclose(sol.values, wave_z.field_at(centers), rtol=1e-14)
    assert np.all(sol.charges == 0.0)


def test_mixed_kinds_rejected(wide_box, wave_z):
    particles = (ss.Particle.sphere([0, 0, 0], 0.01, ss.Soft()),
                 ss.Particle.sphere([1, 0, 0], 0.01, ss.Hard()))
    scene = ss.Scene(particles=particles, domain=wide_box, wave=wave_z)
    with pytest.raises(ValueError):
        solve_soft(scene)


def test_regime_violation_raised(wide_box, wave_z):
    centers = np.array([[0.0, 0.0, 0.0], [0.03, 0.0, 0.0]])
    scene = soft_scene(centers, 0.01, wave_z, wide_box)
    with pytest.raises(ss.RegimeViolation):
        solve_soft(scene)
    sol = solve_soft(scene, validate=False)
    assert sol.residual < 1e-10


def test_missing_polarizability(wide_box, wave_z):
    p = ss.Particle(center=[0, 0, 0], a=0.05, bc=ss.Hard(), capacitance=1.0,
                    surface_factor=FOUR_PI, volume=1e-3, polarizability=None)
    scene = ss.Scene(particles=(p,), domain=wide_box, wave=wave_z)
    with pytest.raises(ss.MissingFunctional):
        solve_hard(scene)


# ---------------------------------------------------------------------------
# Hard case: analytic kernel derivatives and fixed-point oracle
# ---------------------------------------------------------------------------
def _fd_grad_lap(f, x, h=1e-2):
    """4th-order central differences; the production path never uses these."""
    grad = np.zeros(3, dtype=complex)
    lap = 0.0 + 0.0j
    w1 = np.array([1.0, -8.0, 8.0, -1.0]) / (12.0 * h)
    w2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    for s in range(3):
        e = np.zeros(3)
        e[s] = 1.0
        grad[s] = w1 @ [f(x - 2 * h * e), f(x - h * e), f(x + h * e), f(x + 2 * h * e)]
        lap += w2 @ [f(x - 2 * h * e), f(x - h * e), f(x), f(x + h * e), f(x + 2 * h * e)]
    return grad, lap


def test_kernel_derivatives_match_finite_differences():
    k = 1.3
    rng = np.random.default_rng(3)
    x = rng.random(3)
    y = rng.random(3) + 2.0

    g, gp, dg, dgp, lap_g, lap_gp = dipole_kernel_blocks(x[None], y[None], k)

    def scalar(idx):
        def f(pt):
            r = np.linalg.norm(pt - y)
            val = free_space_green(k, r)
            if idx == 0:
                return val
            return val * (pt - y)[idx - 1] / r
        return f

    for idx in range(4):
        grad_fd, lap_fd = _fd_grad_lap(scalar(idx), x)
        if idx == 0:
            assert np.allclose(dg[0, 0], grad_fd, atol=1e-9)
            assert lap_g[0, 0] == pytest.approx(lap_fd, abs=1e-7)
        else:
            assert np.allclose(dgp[0, 0, :, idx - 1], grad_fd, atol=1e-9)
            assert lap_gp[0, 0, idx - 1] == pytest.approx(lap_fd, abs=1e-7)


def test_hard_system_residual_at_fixed_point_oracle(wide_box, wave_z):
    """Three sweeps of the self-consistent update, derivatives by FD, must
    nearly solve the assembled system at weak coupling."""
    a = 0.01
    centers = np.array([[0.0, 0.0, -0.5], [0.1, 0.0, 0.5]])
    scene = hard_scene(centers, a, wave_z, wide_box)
    vol = scene.particles[0].volume
    beta = scene.particles[0].polarizability
    k = wave_z.k
    m = len(centers)

    state = [(wave_z.field_at(c[None])[0], wave_z.gradient_at(c[None])[0],
              wave_z.laplacian_at(c[None])[0]) for c in centers]

    def field_excluding(j, state):
        def f(x):
            total = wave_z.field_at(x[None])[0]
            for mm, (_, grad, lap) in enumerate(state):
                if mm == j:
                    continue
                r = np.linalg.norm(x - centers[mm])
                rhat = (x - centers[mm]) / r
                g = free_space_green(k, r)
                total += g * (lap + 1j * k * rhat @ beta @ grad) * vol
            return total
        return f

    for _ in range(3):
        new_state = []
        for j, c in enumerate(centers):
            f = field_excluding(j, state)
            grad, lap = _fd_grad_lap(f, c)
            new_state.append((f(c), grad, lap))
        state = new_state

    x_oracle = np.concatenate([
        np.array([s[0] for s in state]),
        np.concatenate([s[1] for s in state]),
        np.array([s[2] for s in state]),
    ])
    system = assemble_hard_system(centers, k, np.full(m, vol),
                                  np.array([beta * vol] * m))
    rhs = np.concatenate([
        wave_z.field_at(centers),
        wave_z.gradient_at(centers).reshape(3 * m),
        wave_z.laplacian_at(centers),
    ])
    residual = np.linalg.norm(system @ x_oracle - rhs) / np.linalg.norm(rhs)
    assert residual < 1e-8


def test_hard_scattered_field_scales_with_volume(wide_box, wave_z):
    centers = np.array([[0.0, 0.0, -0.4], [0.0, 0.1, 0.5]])
    big = solve_hard(hard_scene(centers, 0.02, wave_z, wide_box))
    small = solve_hard(hard_scene(centers, 0.01, wave_z, wide_box))
    u0 = wave_z.field_at(centers)
    ratio = (big.values - u0) / (small.values - u0)
    assert np.allclose(ratio, 8.0, rtol=1e-2)


# ---------------------------------------------------------------------------
# Field evaluation and far field
# ---------------------------------------------------------------------------
def test_eval_field_no_particles(wide_box, wave_z):
    scene = ss.Scene(particles=(), domain=wide_box, wave=wave_z)
    sol = ss.EffectiveFieldSolution(kind="soft", values=np.zeros(0, complex),
                                    charges=np.zeros(0, complex))
    pts = np.array([[0.3, 0.2, 0.1]])
    assert eval_field(sol, scene, pts)[0] == pytest.approx(wave_z.field_at(pts)[0])


def test_eval_field_single_soft_composition(wide_box, wave_z):
    scene = soft_scene([[0.0, 0.0, 0.0]], 0.01, wave_z, wide_box)
    sol = solve_soft(scene)
    x = np.array([[0.0, 0.0, 0.8]])
    r = 0.8
    expected = wave_z.field_at(x)[0] - FOUR_PI * 0.01 * 1.0 \
        * np.exp(1j * wave_z.k * r) / (4 * np.pi * r)
    assert eval_field(sol, scene, x)[0] == pytest.approx(expected, rel=1e-13)


def test_eval_field_far_modulus(wide_box, wave_z):
    scene = soft_scene([[0.0, 0.0, 0.0]], 0.01, wave_z, wide_box)
    sol = solve_soft(scene)
    r = 1e3
    x = np.array([[0.0, r, 0.0]])
    u = eval_field(sol, scene, x)[0]
    u0 = wave_z.field_at(x)[0]
    assert abs(u - u0) == pytest.approx(FOUR_PI * 0.01 / (4 * np.pi * r), rel=1e-9)


def test_eval_field_inside_particle_raises(wide_box, wave_z):
    scene = soft_scene([[0.0, 0.0, 0.0]], 0.05, wave_z, wide_box)
    sol = solve_soft(scene)
    with pytest.raises(ss.PointInsideParticle):
        eval_field(sol, scene, np.array([[0.0, 0.0, 0.01]]))


def test_far_field_single_soft_at_origin_matches_onebody(wide_box, wave_z):
    scene = soft_scene([[0.0, 0.0, 0.0]], 0.1, wave_z, wide_box)
    sol = solve_soft(scene, validate=False)
    dirs = fibonacci_directions(16)
    ff = far_field(sol, scene, dirs)
    fun = ShapeFunctionals.sphere(0.1)
    expected = amplitude_onebody(ss.Soft(), fun, wave_z, dirs[0])
    assert np.allclose(ff.amplitudes, expected, rtol=1e-14)


def test_far_field_translation_phase(wide_box, wave_z):
    x1 = np.array([0.3, -0.2, 0.5])
    scene = soft_scene([x1], 0.05, wave_z, wide_box)
    sol = solve_soft(scene)
    dirs = fibonacci_directions(8)
    ff = far_field(sol, scene, dirs)
    c = FOUR_PI * 0.05
    u0 = wave_z.field_at(x1[None])[0]
    expected = -(c / (4 * np.pi)) * u0 * np.exp(-1j * wave_z.k * dirs @ x1)
    assert np.allclose(ff.amplitudes, expected, rtol=1e-13)
    assert np.allclose(np.abs(ff.amplitudes), c / (4 * np.pi), rtol=1e-13)


def test_far_field_single_hard_matches_closed_form(wide_box, wave_z):
    a = 0.1
    scene = hard_scene([[0.0, 0.0, 0.0]], a, wave_z, wide_box)
    sol = solve_hard(scene, validate=False)
    dirs = fibonacci_directions(12)
    ff = far_field(sol, scene, dirs)
    fun = ShapeFunctionals.sphere(a)
    for d, amp in zip(dirs, ff.amplitudes):
        assert amp == pytest.approx(amplitude_onebody(ss.Hard(), fun, wave_z, d),
                                    abs=1e-10)


def test_radiation_asymptotics_match_far_field(wide_box, wave_z):
    rng = np.random.default_rng(2)
    centers = np.array([[0.0, 0.0, 0.0], [0.4, 0.1, -0.2], [-0.3, 0.5, 0.3]])
    scene = soft_scene(centers, 0.01, wave_z, wide_box)
    sol = solve_soft(scene)
    dirs = rng.normal(size=(50, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    r = 1e4 / wave_z.k
    ff = far_field(sol, scene, dirs)
    pts = r * dirs
    u = eval_field(sol, scene, pts)
    u0 = wave_z.field_at(pts)
    recovered = r * np.exp(-1j * wave_z.k * r) * (u - u0)
    assert np.max(np.abs(recovered - ff.amplitudes)) < 1e-3 * np.max(np.abs(ff.amplitudes))


def test_linearity_in_incident_amplitude(wide_box):
    c = 0.7 - 1.3j
    centers = np.array([[0.0, 0.0, 0.0], [0.5, 0.2, -0.1]])
    base_wave = ss.IncidentWave(k=1.0, alpha=[0, 0, 1])
    scaled_wave = ss.IncidentWave(k=1.0, alpha=[0, 0, 1], amplitude=c)
    box = ss.Box(lo=[-2, -2, -2], hi=[2, 2, 2])
    s1 = solve_soft(soft_scene(centers, 0.01, base_wave, box))
    s2 = solve_soft(soft_scene(centers, 0.01, scaled_wave, box))
    assert np.allclose(s2.values, c * s1.values, rtol=1e-12)
    assert np.allclose(s2.charges, c * s1.charges, rtol=1e-12)
    ff1 = far_field(s1, soft_scene(centers, 0.01, base_wave, box), fibonacci_directions(6))
    ff2 = far_field(s2, soft_scene(centers, 0.01, scaled_wave, box), fibonacci_directions(6))
    assert np.allclose(ff2.amplitudes, c * ff1.amplitudes, rtol=1e-12)


def test_mirror_symmetric_scene_field(wide_box, wave_z):
    centers = np.array([[0.4, 0.1, 0.2], [-0.4, 0.1, 0.2], [0.0, -0.3, 0.6]])
    scene = soft_scene(centers, 0.01, wave_z, wide_box)
    sol = solve_soft(scene)
    rng = np.random.default_rng(9)
    pts = rng.uniform(-1.5, 1.5, size=(20, 3))
    mirrored = pts * np.array([-1.0, 1.0, 1.0])
    u = eval_field(sol, scene, pts)
    um = eval_field(sol, scene, mirrored)
    assert np.max(np.abs(u - um)) < 1e-9


def test_solver_paths_agree_at_m500(unit_box, wave_z):
    spec = ss.CloudSpec(density=ss.ConstantField(1.0), a=0.002, law="dirichlet",
                        rng_seed=6)
    particles = ss.generate_cloud(spec, unit_box)
    assert len(particles) == 500
    scene = ss.Scene(particles=tuple(particles), domain=unit_box, wave=wave_z)
    direct = solve_soft(scene)
    iterative = solve_soft(scene, direct_threshold=0)
    assert direct.method == "direct" and iterative.method == "gmres"
    denom = np.max(np.abs(direct.values))
    assert np.max(np.abs(direct.values - iterative.values)) < 1e-8 * denom


def test_background_kernel_pair_matrix_uniform_is_bitwise_free(unit_box, wave_z):
    centers = np.array([[0.2, 0.2, 0.2], [0.8, 0.7, 0.6], [0.5, 0.4, 0.9]])
    medium = ss.BackgroundMedium(n2=ss.ConstantField(1.0), box=unit_box)
    ev = ss.GreenEvaluator(medium, k=wave_z.k)
    k_free = pair_kernel_matrix(centers, wave_z.k, greens=None)
    k_medium = pair_kernel_matrix(centers, wave_z.k, greens=ev)
    assert np.array_equal(k_free, k_medium)


def test_solve_with_background_bump_perturbs_solution(unit_box, wave_z):
    centers = np.array([[0.3, 0.5, 0.5], [0.7, 0.5, 0.5]])
    particles = tuple(ss.Particle.sphere(c, 0.005, ss.Soft()) for c in centers)
    scene = ss.Scene(particles=particles, domain=unit_box, wave=wave_z)
    free_sol = solve_soft(scene)
    bump = ss.GaussianBumpField(amplitude=0.3, center=[0.5, 0.5, 0.5], width=0.3, base=1.0)
    medium = ss.BackgroundMedium(n2=bump, box=unit_box)
    ev = ss.GreenEvaluator(medium, k=wave_z.k, grid_n=8)
    pert_sol = solve_soft(scene, greens=ev)
    assert not np.allclose(free_sol.values, pert_sol.values)
    assert pert_sol.residual < 1e-10
    # a scene carrying the medium picks the kernel up without an explicit evaluator
    scene_bg = ss.Scene(particles=particles, domain=unit_box, wave=wave_z,
                        background=medium)
    auto_sol = solve_soft(scene_bg)
    assert np.allclose(auto_sol.values, pert_sol.values, rtol=1e-10)
    # hard solves refuse a non-uniform background kernel
    hard_particles = tuple(ss.Particle.sphere(c, 0.005, ss.Hard()) for c in centers)
    hard_bg = ss.Scene(particles=hard_particles, domain=unit_box, wave=wave_z,
                       background=medium)
    with pytest.raises(NotImplementedError):
        solve_hard(hard_bg)
