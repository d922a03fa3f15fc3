//! Dyadic frequency projectors built from a fixed smooth bump, Zygmund and weighted
//! dyadic norms, commutators with low-frequency multiplication, and the cubic
//! resonance function of the Airy propagator.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{Grid, SpectralState};

fn m(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth step from 1 at `t = 0` to 0 at `t = 1`, with all derivatives flat at both ends.
fn transition(t: f64) -> f64 {
    let a = m(1.0 - t);
    let b = m(t);
    a / (a + b)
}

/// Even bump: 1 on `[-1, 1]`, 0 outside `[-2, 2]`, smooth monotone transition between.
pub fn bump_eta(xi: f64) -> f64 {
    let a = xi.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 2.0 {
        0.0
    } else {
        transition(a - 1.0)
    }
}

/// `φ(ξ) = η(ξ) - η(2ξ)`, supported in `1/2 ≤ |ξ| ≤ 2`.
pub fn phi(xi: f64) -> f64 {
    bump_eta(xi) - bump_eta(2.0 * xi)
}

/// Symbol of the band projector `P_N` (`N` dyadic): `η` for `N = 1`, `φ(ξ/N)` otherwise.
pub fn band_symbol(n: u64, xi: f64) -> f64 {
    if n <= 1 {
        bump_eta(xi)
    } else {
        phi(xi / n as f64)
    }
}

/// Japanese bracket `⟨N⟩ = 1 + N` used for dyadic weights.
pub fn bracket(n: u64) -> f64 {
    1.0 + n as f64
}

/// Which member of the projector family to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectorKind {
    /// `P_N`
    Band,
    /// `P_{≤N}`
    AtMost,
    /// `P_{≪N} = P_{≤N/8}`; the zero operator for `N < 8`.
    MuchLess,
    /// `P_{≥N} = 1 - P_{≤N/2}`
    AtLeast,
    /// `P̃_N = Σ_{N/4 ≤ K ≤ 4N} P_K`
    Tilde,
}

/// Gap between `N` and the largest frequency counted as `≪ N`.
pub const MUCH_LESS_RATIO: u64 = 8;

/// Symbol value of a projector at a single frequency.
pub fn symbol(kind: ProjectorKind, n: u64, xi: f64) -> f64 {
    match kind {
        ProjectorKind::Band => band_symbol(n, xi),
        ProjectorKind::AtMost => {
            if n == 0 {
                0.0
            } else {
                bump_eta(xi / n as f64)
            }
        }
        ProjectorKind::MuchLess => symbol(ProjectorKind::AtMost, n / MUCH_LESS_RATIO, xi),
        ProjectorKind::AtLeast => 1.0 - symbol(ProjectorKind::AtMost, n / 2, xi),
        ProjectorKind::Tilde => {
            let lo = (n / 4).max(1);
            let hi = n.saturating_mul(4);
            let mut k = 1u64;
            let mut acc = 0.0;
            while k <= hi {
                if k >= lo {
                    acc += band_symbol(k, xi);
                }
                k *= 2;
            }
            acc
        }
    }
}

/// Dyadic levels `1, 2, 4, …` whose band meets the grid's resolved frequencies.
pub fn dyadic_levels(grid: &Grid) -> Vec<u64> {
    let kmax = grid.k_max();
    let mut out = vec![1u64];
    let mut n = 2u64;
    while n as f64 / 2.0 <= kmax {
        out.push(n);
        n *= 2;
    }
    out
}

/// A Fourier multiplier from the Littlewood-Paley family, sampled on a grid.
#[derive(Debug, Clone)]
pub struct DyadicProjector {
    level: u64,
    kind: ProjectorKind,
    grid: Grid,
    symbol_samples: Vec<f64>,
}

impl DyadicProjector {
    pub fn new(grid: &Grid, level: u64, kind: ProjectorKind) -> Result<Self> {
        if level == 0 || !level.is_power_of_two() {
            return Err(Error::Invalid(format!("dyadic level must be a power of two, got {level}")));
        }
        let symbol_samples = grid.wavenumbers().iter().map(|&k| symbol(kind, level, k)).collect();
        Ok(DyadicProjector { level, kind, grid: grid.clone(), symbol_samples })
    }

    pub fn level(&self) -> u64 {
        self.level
    }

    pub fn kind(&self) -> ProjectorKind {
        self.kind
    }

    pub fn symbol_samples(&self) -> &[f64] {
        &self.symbol_samples
    }

    pub fn apply(&self, field: &SpectralState) -> Result<SpectralState> {
        if !self.grid.same_as(field.grid()) {
            return Err(Error::GridMismatch("projector built for a different grid".into()));
        }
        field.apply_symbol(&self.symbol_samples)
    }
}

/// Apply a projector to a field, building the symbol on the field's grid.
pub fn project(field: &SpectralState, level: u64, kind: ProjectorKind) -> Result<SpectralState> {
    DyadicProjector::new(field.grid(), level, kind)?.apply(field)
}

/// `sup_N N^s max_x |P_N f|` over the dyadic levels resolved by the grid.
pub fn zygmund_norm(field: &SpectralState, s: f64) -> f64 {
    dyadic_levels(field.grid())
        .into_iter()
        .map(|n| {
            let p = project(field, n, ProjectorKind::Band).expect("same grid");
            (n as f64).powf(s) * p.sup_norm()
        })
        .fold(0.0, f64::max)
}

/// Nonnegative weight for [`weighted_b_seminorm`], sampled on the trajectory grid.
#[derive(Debug, Clone)]
pub enum Weight {
    Constant(f64),
    /// Time-independent nodal samples.
    Static(Vec<f64>),
    /// Nodal samples for every stored time.
    Series(Vec<Vec<f64>>),
}

impl Weight {
    fn validate(&self, n: usize, steps: usize) -> Result<()> {
        let check = |v: &[f64], offset: usize| -> Result<()> {
            if v.len() != n {
                return Err(Error::GridMismatch(format!("weight has {} samples, grid has {n}", v.len())));
            }
            match v.iter().position(|&b| !(b >= 0.0)) {
                Some(i) => Err(Error::NegativeWeight { value: v[i], index: offset + i }),
                None => Ok(()),
            }
        };
        match self {
            Weight::Constant(b) => check(&[*b].repeat(n), 0),
            Weight::Static(v) => check(v, 0),
            Weight::Series(vs) => {
                if vs.len() != steps {
                    return Err(Error::Invalid(format!("weight series has {} slices, trajectory {steps}", vs.len())));
                }
                vs.iter().enumerate().try_for_each(|(i, v)| check(v, i * n))
            }
        }
    }

    fn at(&self, slice: usize, j: usize) -> f64 {
        match self {
            Weight::Constant(b) => *b,
            Weight::Static(v) => v[j],
            Weight::Series(vs) => vs[slice][j],
        }
    }
}

/// Per-time dyadic densities `Σ_N ⟨N⟩^{2θ} ∫ b (P_N u_x)² dx`.
pub fn dyadic_dissipation_density(state: &SpectralState, weight: &Weight, slice: usize, theta: f64) -> f64 {
    let grid = state.grid();
    let ux = state.derivative(1);
    let mut total = 0.0;
    for n in dyadic_levels(grid) {
        let p = project(&ux, n, ProjectorKind::Band).expect("same grid").to_real();
        let integral: f64 = p.iter().enumerate().map(|(j, v)| weight.at(slice, j) * v * v).sum::<f64>() * grid.dx();
        total += bracket(n).powf(2.0 * theta) * integral;
    }
    total
}

/// `Σ_N ⟨N⟩^{2θ} ‖√b P_N u_x‖²_{L²_T L²_x}` with trapezoid quadrature in time.
pub fn weighted_b_seminorm(times: &[f64], states: &[SpectralState], weight: &Weight, theta: f64) -> Result<f64> {
    let series = weighted_b_series(times, states, weight, theta)?;
    Ok(series.last().copied().unwrap_or(0.0))
}

/// Cumulative values of [`weighted_b_seminorm`] at every stored time.
pub fn weighted_b_series(times: &[f64], states: &[SpectralState], weight: &Weight, theta: f64) -> Result<Vec<f64>> {
    if times.len() != states.len() {
        return Err(Error::Invalid("times and states differ in length".into()));
    }
    if states.is_empty() {
        return Ok(Vec::new());
    }
    weight.validate(states[0].grid().len(), states.len())?;
    let dens: Vec<f64> =
        states.iter().enumerate().map(|(i, s)| dyadic_dissipation_density(s, weight, i, theta)).collect();
    let mut out = Vec::with_capacity(states.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..states.len() {
        acc += 0.5 * (times[i] - times[i - 1]) * (dens[i] + dens[i - 1]);
        out.push(acc);
    }
    Ok(out)
}

fn pointwise(a: &SpectralState, b: &SpectralState) -> Result<SpectralState> {
    a.product(b)
}

/// `[P_N, P_{≪N} f] g = P_N(P_{≪N}f · g) - P_{≪N}f · P_N g` with collocation products.
pub fn commutator(f: &SpectralState, g: &SpectralState, n: u64) -> Result<SpectralState> {
    f.ensure_same_grid(g)?;
    let low = project(f, n, ProjectorKind::MuchLess)?;
    commutator_with(&low, g, n)
}

/// Commutator of `P_N` with multiplication by an already-projected field.
fn commutator_with(low: &SpectralState, g: &SpectralState, n: u64) -> Result<SpectralState> {
    let pn = DyadicProjector::new(low.grid(), n, ProjectorKind::Band)?;
    let first = pn.apply(&pointwise(low, g)?)?;
    let second = pointwise(low, &pn.apply(g)?)?;
    first.sub(&second)
}

/// `[P_N, [P_N, P_{≪N} f]] g`.
pub fn double_commutator(f: &SpectralState, g: &SpectralState, n: u64) -> Result<SpectralState> {
    f.ensure_same_grid(g)?;
    let pn = DyadicProjector::new(f.grid(), n, ProjectorKind::Band)?;
    let a = pn.apply(&commutator(f, g, n)?)?;
    let b = commutator(f, &pn.apply(g)?, n)?;
    a.sub(&b)
}

fn real_integral(a: &SpectralState, b: &SpectralState) -> f64 {
    a.inner(b).re
}

/// Both sides of the commutator energy identity
/// `∫ [P_N,P_{≪N}f]g · P_N g = ½ ∫ [P_N,[P_N,P_{≪N}f]] P̃_N g · P̃_N g`.
pub fn comcom_sides(f: &SpectralState, g: &SpectralState, n: u64) -> Result<(f64, f64)> {
    let pn_g = project(g, n, ProjectorKind::Band)?;
    let lhs = real_integral(&commutator(f, g, n)?, &pn_g);
    let gt = project(g, n, ProjectorKind::Tilde)?;
    let rhs = 0.5 * real_integral(&double_commutator(f, &gt, n)?, &gt);
    Ok((lhs, rhs))
}

/// Relative residual of the commutator energy identity, normalized by
/// `max(|LHS|, |RHS|, ε)` with `ε = 1e-6 ‖P_{≪N}f‖_∞ ‖P̃_N g‖²` (the natural size of either side).
pub fn comcom_residual(f: &SpectralState, g: &SpectralState, n: u64) -> Result<f64> {
    let (lhs, rhs) = comcom_sides(f, g, n)?;
    let scale = project(f, n, ProjectorKind::MuchLess)?.sup_norm()
        * project(g, n, ProjectorKind::Tilde)?.l2_norm().powi(2);
    let floor = f64::MIN_POSITIVE.max(1e-6 * scale);
    Ok((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(floor))
}

/// `‖[P_N,P_{≪N}f]g‖ · N / (‖∂_x P_{≪N}f‖_∞ ‖P̃_N g‖)`; `None` when the commutator is vacuous.
pub fn commutator_ratio(f: &SpectralState, g: &SpectralState, n: u64) -> Result<Option<f64>> {
    let low = project(f, n, ProjectorKind::MuchLess)?;
    let fx = low.derivative(1).sup_norm();
    let gt = project(g, n, ProjectorKind::Tilde)?.l2_norm();
    if fx == 0.0 || gt == 0.0 {
        return Ok(None);
    }
    let c = commutator(f, g, n)?.l2_norm();
    Ok(Some(c * n as f64 / (fx * gt)))
}

/// `‖[P_N,[P_N,P_{≪N}f]]g‖ · N² / (‖∂²_x P_{≪N}f‖_∞ ‖P̃_N g‖)`.
pub fn double_commutator_ratio(f: &SpectralState, g: &SpectralState, n: u64) -> Result<Option<f64>> {
    let low = project(f, n, ProjectorKind::MuchLess)?;
    let fxx = low.derivative(2).sup_norm();
    let gt = project(g, n, ProjectorKind::Tilde)?.l2_norm();
    if fxx == 0.0 || gt == 0.0 {
        return Ok(None);
    }
    let c = double_commutator(f, g, n)?.l2_norm();
    Ok(Some(c * (n as f64).powi(2) / (fxx * gt)))
}

#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    Dd { hi: s, lo: err }
}

fn dd_add(a: Dd, b: Dd) -> Dd {
    let s = two_sum(a.hi, b.hi);
    let t = two_sum(a.lo, b.lo);
    let s = two_sum(s.hi, s.lo + t.hi);
    two_sum(s.hi, s.lo + t.lo)
}

fn dd_mul(a: Dd, b: Dd) -> Dd {
    let p = a.hi * b.hi;
    let err = a.hi.mul_add(b.hi, -p);
    two_sum(p, err + (a.hi * b.lo + a.lo * b.hi))
}

fn dd_cube(a: Dd) -> Dd {
    dd_mul(dd_mul(a, a), a)
}

fn dd(x: f64) -> Dd {
    Dd { hi: x, lo: 0.0 }
}

fn neg(a: Dd) -> Dd {
    Dd { hi: -a.hi, lo: -a.lo }
}

/// Airy dispersion symbol `σ(τ, ξ) = τ - ξ³`, evaluated in double-double.
fn sigma(tau: Dd, xi: Dd) -> Dd {
    dd_add(tau, neg(dd_cube(xi)))
}

/// Cubic resonance `σ(-Στ,-Σξ) + Σ σ(τ_i, ξ_i)`, which is independent of the `τ_i`
/// and equals `(ξ₁+ξ₂+ξ₃)³ - ξ₁³ - ξ₂³ - ξ₃³`. Evaluated with compensated arithmetic so
/// that the cancellation between the cubes does not destroy relative accuracy.
pub fn resonance_omega3(xi1: f64, xi2: f64, xi3: f64) -> f64 {
    let xs = [dd(xi1), dd(xi2), dd(xi3)];
    // on-shell times τ_i = ξ_i³ make the individual σ terms vanish identically
    let taus: Vec<Dd> = xs.iter().map(|&x| dd_cube(x)).collect();
    let sum_xi = dd_add(dd_add(xs[0], xs[1]), xs[2]);
    let sum_tau = dd_add(dd_add(taus[0], taus[1]), taus[2]);
    let mut acc = sigma(neg(sum_tau), neg(sum_xi));
    for (t, x) in taus.iter().zip(&xs) {
        acc = dd_add(acc, sigma(*t, *x));
    }
    acc.hi + acc.lo
}

/// Closed-form factorization `3(ξ₁+ξ₂)(ξ₂+ξ₃)(ξ₁+ξ₃)` of the resonance function.
pub fn resonance_factored(xi1: f64, xi2: f64, xi3: f64) -> f64 {
    3.0 * (xi1 + xi2) * (xi2 + xi3) * (xi1 + xi3)
}

/// Sign of the resonance relative to the factorization printed with a leading `-3`:
/// returns `+1` when the computed value matches `+3(…)`, `-1` when it matches `-3(…)`.
pub fn resonance_sign_convention(xi1: f64, xi2: f64, xi3: f64) -> i32 {
    let w = resonance_omega3(xi1, xi2, xi3);
    let f = resonance_factored(xi1, xi2, xi3);
    if (w - f).abs() <= (w + f).abs() {
        1
    } else {
        -1
    }
}

/// Complex exponential mode `e^{ikx}` as a (non-real) state.
pub fn exponential_mode(grid: &std::sync::Arc<Grid>, k: f64) -> SpectralState {
    let samples: Vec<Complex64> = grid.nodes().iter().map(|&x| Complex64::from_polar(1.0, k * x)).collect();
    SpectralState::from_complex(grid, &samples).expect("length matches grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::make_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn eta_values() {
        assert_eq!(bump_eta(0.5), 1.0);
        assert_eq!(bump_eta(-0.5), 1.0);
        assert_eq!(bump_eta(3.0), 0.0);
        let mid = bump_eta(1.5);
        // oracle: q(1/2) = m(1/2) / (2 m(1/2)) = 1/2 by symmetry of the profile
        assert!((mid - 0.5).abs() < 1e-15);
        let mut prev = 1.0;
        for i in 0..=1000 {
            let v = bump_eta(1.0 + i as f64 / 1000.0);
            assert!(v <= prev + 1e-15 && (0.0..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn eta_transition_closed_form() {
        let xi = 1.3f64;
        let t = xi - 1.0;
        let expected = (-1.0 / (1.0 - t)).exp() / ((-1.0 / t).exp() + (-1.0 / (1.0 - t)).exp());
        assert!((bump_eta(xi) - expected).abs() < 1e-15);
    }

    #[test]
    fn eta_is_c1_numerically() {
        let h = 1e-5;
        let mut prev: Option<f64> = None;
        for i in 0..=3000 {
            let x = 0.5 + i as f64 * 1e-3;
            let d = (bump_eta(x + h) - bump_eta(x - h)) / (2.0 * h);
            assert!(d.abs() < 3.0);
            if let Some(p) = prev {
                assert!((d - p).abs() < 0.05, "jump at {x}");
            }
            prev = Some(d);
        }
    }

    #[test]
    fn partition_of_unity_on_grid() {
        let g = make_grid(PI, 256).unwrap();
        let levels = dyadic_levels(&g);
        for &k in g.wavenumbers() {
            let s: f64 = levels.iter().map(|&n| band_symbol(n, k)).sum();
            assert!((s - 1.0).abs() < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn band_support() {
        for &n in &[2u64, 4, 16, 64] {
            for i in 0..2000 {
                let xi = i as f64 * 0.1;
                let v = band_symbol(n, xi);
                assert!((0.0..=1.0).contains(&v));
                if xi < n as f64 / 2.0 || xi > 2.0 * n as f64 {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn projector_of_single_mode() {
        let g = make_grid(PI, 64).unwrap();
        let f = exponential_mode(&g, 5.0);
        let p = project(&f, 4, ProjectorKind::Band).unwrap();
        let expected = bump_eta(5.0 / 4.0) - bump_eta(10.0 / 4.0);
        let ratio = p.coefficients()[5] / f.coefficients()[5];
        assert!((ratio - Complex64::new(expected, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn sum_of_band_projections_reconstructs() {
        let g = make_grid(PI, 128).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f64> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = SpectralState::from_real(&g, &s).unwrap();
        let mut acc = SpectralState::zeros(&g);
        for n in dyadic_levels(&g) {
            acc = acc.add(&project(&f, n, ProjectorKind::Band).unwrap()).unwrap();
        }
        for (a, b) in acc.to_real().iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_bands_annihilate() {
        let g = make_grid(PI, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = SpectralState::from_real(&g, &s).unwrap();
        let pm = project(&f, 32, ProjectorKind::Band).unwrap();
        assert!(project(&pm, 8, ProjectorKind::Band).unwrap().sup_norm() < 1e-15);
    }

    #[test]
    fn almost_orthogonality() {
        let g = make_grid(PI, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let s: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = SpectralState::from_real(&g, &s).unwrap();
            let total = f.l2_norm().powi(2);
            let tilde: f64 = dyadic_levels(&g)
                .into_iter()
                .map(|n| project(&f, n, ProjectorKind::Tilde).unwrap().l2_norm().powi(2))
                .sum();
            assert!(total <= tilde * (1.0 + 1e-12));
            // the tilde bands overlap at most five times near any frequency
            assert!(tilde <= 5.0 * total);
        }
    }

    #[test]
    fn much_less_and_at_least() {
        assert_eq!(symbol(ProjectorKind::MuchLess, 4, 0.0), 0.0);
        assert_eq!(symbol(ProjectorKind::MuchLess, 16, 2.0), 1.0);
        assert_eq!(symbol(ProjectorKind::MuchLess, 16, 4.0), 0.0);
        for &xi in &[0.0, 0.7, 3.0, 9.0, 40.0] {
            let direct: f64 = [8u64, 16, 32, 64, 128].iter().map(|&k| band_symbol(k, xi)).sum();
            assert!((symbol(ProjectorKind::AtLeast, 8, xi) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn zygmund_examples() {
        let g = make_grid(PI, 64).unwrap();
        assert_eq!(zygmund_norm(&SpectralState::zeros(&g), 1.0), 0.0);
        let f = exponential_mode(&g, 8.0);
        assert!((zygmund_norm(&f, 1.0) - 8.0).abs() < 1e-12);
        let one = SpectralState::from_fn(&g, |_| 1.0);
        assert!((zygmund_norm(&one, 0.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn weighted_seminorm_examples() {
        let g = make_grid(PI, 64).unwrap();
        let times: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let sine: Vec<SpectralState> = times.iter().map(|_| SpectralState::from_fn(&g, f64::sin)).collect();
        let zero = weighted_b_seminorm(&times, &sine, &Weight::Constant(0.0), 0.0).unwrap();
        assert_eq!(zero, 0.0);
        let v = weighted_b_seminorm(&times, &sine, &Weight::Constant(1.0), 0.0).unwrap();
        assert!((v - PI).abs() < 1e-12);

        // single mode sin(3x) splits between P_2 and P_4 with weights η(1.5) and 1 - η(1.5)
        let s3: Vec<SpectralState> = times.iter().map(|_| SpectralState::from_fn(&g, |x| (3.0 * x).sin())).collect();
        let w = weighted_b_seminorm(&times, &s3, &Weight::Constant(1.0), -1.0).unwrap();
        let e = bump_eta(1.5);
        let expected = 9.0 * PI * (e * e / 9.0 + (1.0 - e) * (1.0 - e) / 25.0);
        assert!((w - expected).abs() < 1e-12);
    }

    #[test]
    fn weighted_seminorm_rejects_negative_weight() {
        let g = make_grid(PI, 16).unwrap();
        let st = vec![SpectralState::from_fn(&g, f64::sin); 2];
        let mut b = vec![1.0; 16];
        b[3] = -0.5;
        let err = weighted_b_seminorm(&[0.0, 1.0], &st, &Weight::Static(b), 0.0).unwrap_err();
        assert_eq!(err, Error::NegativeWeight { value: -0.5, index: 3 });
    }

    fn random_real(g: &std::sync::Arc<Grid>, rng: &mut ChaCha8Rng, kmax: usize) -> SpectralState {
        let n = g.len();
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        c[0] = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
        for m in 1..=kmax {
            let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) / (m as f64);
            c[m] = z;
            c[n - m] = z.conj();
        }
        SpectralState::from_coefficients(g, c, true).unwrap()
    }

    #[test]
    fn commutator_trivial_cases() {
        let g = make_grid(PI, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gg = random_real(&g, &mut rng, 80);
        let c = SpectralState::from_fn(&g, |_| 2.5);
        assert!(commutator(&c, &gg, 16).unwrap().sup_norm() < 1e-13);
        assert!(double_commutator(&c, &gg, 16).unwrap().sup_norm() < 1e-13);
        // g living at frequency 100 is invisible to P̃_8 and to the commutator
        let f = random_real(&g, &mut rng, 6);
        let hi = SpectralState::from_fn(&g, |x| (100.0 * x).cos());
        assert!(project(&hi, 8, ProjectorKind::Tilde).unwrap().sup_norm() < 1e-13);
        assert!(commutator(&f, &hi, 8).unwrap().sup_norm() < 1e-13);
    }

    #[test]
    fn double_commutator_matches_expansion() {
        // oracle: expand [P,[P,F]] g = P²(Fg) - 2P(F·Pg) + F·P²g
        let g = make_grid(PI, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = random_real(&g, &mut rng, 10);
        let gg = random_real(&g, &mut rng, 90);
        let n = 32;
        let low = project(&f, n, ProjectorKind::MuchLess).unwrap();
        let p = |s: &SpectralState| project(s, n, ProjectorKind::Band).unwrap();
        let fg = low.product(&gg).unwrap();
        let t1 = p(&p(&fg));
        let t2 = p(&low.product(&p(&gg)).unwrap()).scale(2.0);
        let t3 = low.product(&p(&p(&gg))).unwrap();
        let expanded = t1.sub(&t2).unwrap().add(&t3).unwrap();
        let direct = double_commutator(&f, &gg, n).unwrap();
        assert!(direct.sub(&expanded).unwrap().l2_norm() < 1e-13 * (1.0 + expanded.l2_norm()));
    }

    #[test]
    fn comcom_identity_random() {
        let g = make_grid(PI, 256).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let f = random_real(&g, &mut rng, 12);
            let gg = random_real(&g, &mut rng, 100);
            assert!(comcom_residual(&f, &gg, 16).unwrap() < 1e-10);
        }
        let c = SpectralState::from_fn(&g, |_| 1.0);
        let gg = random_real(&g, &mut rng, 100);
        let (l, r) = comcom_sides(&c, &gg, 16).unwrap();
        assert!(l.abs() < 1e-13 && r.abs() < 1e-13);
        // single-band g
        let f = random_real(&g, &mut rng, 3);
        let band = SpectralState::from_fn(&g, |x| (20.0 * x).cos() + 0.3 * (21.0 * x).sin());
        let (l, r) = comcom_sides(&f, &band, 16).unwrap();
        assert!(l.abs() > 1e-6 && r.abs() > 1e-6);
        assert!(comcom_residual(&f, &band, 16).unwrap() < 1e-10);
    }

    #[test]
    fn resonance_examples() {
        assert_eq!(resonance_omega3(1.0, 2.0, 3.0), 180.0);
        assert_eq!(resonance_omega3(1.0, 1.0, 1.0), 24.0);
        assert_eq!(resonance_omega3(2.7, -2.7, 11.0), 0.0);
        assert_eq!(resonance_sign_convention(1.0, 2.0, 3.0), 1);
    }

    #[test]
    fn resonance_brute_force_sigma_sum() {
        // oracle: exact rational arithmetic on integer frequencies via i128
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let x: Vec<i128> = (0..3).map(|_| rng.gen_range(-1000..1000)).collect();
            let tau: Vec<i128> = (0..3).map(|_| rng.gen_range(-1000..1000)).collect();
            let s = |t: i128, xi: i128| t - xi * xi * xi;
            let sum_x: i128 = x.iter().sum();
            let sum_t: i128 = tau.iter().sum();
            let exact = s(-sum_t, -sum_x) + (0..3).map(|i| s(tau[i], x[i])).sum::<i128>();
            let w = resonance_omega3(x[0] as f64, x[1] as f64, x[2] as f64);
            assert_eq!(w, exact as f64);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn resonance_factorization(a in -50.0..50.0f64, b in -50.0..50.0f64, c in -50.0..50.0f64) {
                let w = resonance_omega3(a, b, c);
                let f = resonance_factored(a, b, c);
                prop_assert!((w - f).abs() < 1e-12 * w.abs().max(1.0));
            }

            #[test]
            fn symbols_in_unit_interval(xi in -600.0..600.0f64, e in 0u32..8) {
                let n = 1u64 << e;
                for kind in [ProjectorKind::Band, ProjectorKind::AtMost, ProjectorKind::MuchLess, ProjectorKind::AtLeast] {
                    let v = symbol(kind, n, xi);
                    prop_assert!((-1e-15..=1.0 + 1e-15).contains(&v));
                }
            }
        }
    }
}
