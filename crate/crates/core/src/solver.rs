//! Time integration of both equation forms.
//!
//! * original: `u_t + αu_3x + βu_2x + γu_x + δu = εuu_x`, classical RK4.
//! * transformed: `v_t + v_3x - b v_2x + c v_x + d v = e v v_x + f v²`, integrating-factor
//!   RK4 with the exact propagator `e^{ik³dt}` for the dispersive part.
//!
//! Spatial derivatives are spectral; the quadratic terms are optionally filtered with the
//! 2/3 rule. Time-dependent coefficients are re-sampled at the stage times.

use std::sync::Arc;

use num_complex::Complex64;

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::gauge::{GaugeBuilder, TransformedCoefficients};
use crate::littlewood_paley::{dyadic_dissipation_density, Weight};
use crate::spectral::{dealias_in_place, forward_dft, inverse_dft, Grid, SpectralState};

/// Which of the two equations is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquationForm {
    Original,
    Transformed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// Largest step allowed by [`auto_step_limit`], shortened to divide `t_final`.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub form: EquationForm,
    pub dt: StepSize,
    pub t_final: f64,
    /// Sobolev index of the monitored norms.
    pub s: f64,
    pub dealias: bool,
    /// Sup-norm cap; `None` means `1e6` times the initial sup-norm.
    pub blowup_threshold: Option<f64>,
    pub monitor_stride: usize,
}

impl SolverConfig {
    pub fn new(form: EquationForm, dt: StepSize, t_final: f64) -> Self {
        SolverConfig { form, dt, t_final, s: 1.0, dealias: true, blowup_threshold: None, monitor_stride: 10 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Invalid(format!("t_final must be positive, got {}", self.t_final)));
        }
        if let StepSize::Fixed(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Invalid(format!("dt must be positive, got {dt}")));
            }
        }
        if self.monitor_stride == 0 {
            return Err(Error::Invalid("monitor_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where the transformed coefficients come from.
#[derive(Debug, Clone)]
pub enum TransformedProblem {
    Fixed(Arc<TransformedCoefficients>),
    Gauge(Arc<GaugeBuilder>),
}

impl TransformedProblem {
    fn coefficients_at(&self, t: f64) -> Result<Arc<TransformedCoefficients>> {
        match self {
            TransformedProblem::Fixed(c) => Ok(c.clone()),
            TransformedProblem::Gauge(g) => g.coefficients_at(t).map(Arc::new),
        }
    }

    fn is_time_dependent(&self) -> bool {
        match self {
            TransformedProblem::Fixed(_) => false,
            TransformedProblem::Gauge(g) => g.is_time_dependent(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Problem {
    Original(Arc<CoefficientSet>),
    Transformed(TransformedProblem),
}

impl Problem {
    pub fn form(&self) -> EquationForm {
        match self {
            Problem::Original(_) => EquationForm::Original,
            Problem::Transformed(_) => EquationForm::Transformed,
        }
    }

    pub fn fixed(coeffs: TransformedCoefficients) -> Self {
        Problem::Transformed(TransformedProblem::Fixed(Arc::new(coeffs)))
    }
}

/// Nodal samples of the original-form coefficients at one time.
#[derive(Debug, Clone)]
struct OriginalFields {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    delta: Vec<f64>,
    eps: Vec<f64>,
}

impl OriginalFields {
    fn sample(set: &CoefficientSet, grid: &Grid, t: f64) -> Result<Self> {
        let s = |c: &crate::coefficients::CoefficientExpr, name: &str| -> Result<Vec<f64>> {
            grid.nodes()
                .iter()
                .map(|&x| {
                    let v = c.value(t, x);
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::NotFinite { expr: name.to_string(), t, x })
                    }
                })
                .collect()
        };
        Ok(OriginalFields {
            alpha: s(&set.alpha, "alpha")?,
            beta: s(&set.beta, "beta")?,
            gamma: s(&set.gamma, "gamma")?,
            delta: s(&set.delta, "delta")?,
            eps: s(&set.epsilon, "epsilon")?,
        })
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Step limit of the linear stability rule: `1/(max|α| k³)` for the original form and
/// `1/(max|b| k²)` for the transformed form (unbounded when `b ≡ 0`).
pub fn linear_step_limit(problem: &Problem, grid: &Grid, t: f64) -> Result<f64> {
    let k = grid.k_max();
    match problem {
        Problem::Original(set) => {
            let f = OriginalFields::sample(set, grid, t)?;
            Ok(1.0 / (max_abs(&f.alpha) * k.powi(3)))
        }
        Problem::Transformed(p) => {
            let c = p.coefficients_at(t)?;
            let b = max_abs(&c.b);
            Ok(if b > 0.0 { 1.0 / (b * k * k) } else { f64::INFINITY })
        }
    }
}

/// Conservative explicit limit including every term and the size of the data.
pub fn auto_step_limit(problem: &Problem, grid: &Grid, t: f64, sup0: f64) -> Result<f64> {
    let k = grid.k_max();
    let rate = match problem {
        Problem::Original(set) => {
            let f = OriginalFields::sample(set, grid, t)?;
            max_abs(&f.alpha) * k.powi(3)
                + max_abs(&f.beta) * k * k
                + (max_abs(&f.gamma) + max_abs(&f.eps) * sup0) * k
                + max_abs(&f.delta)
        }
        Problem::Transformed(p) => {
            let c = p.coefficients_at(t)?;
            max_abs(&c.b) * k * k + (max_abs(&c.c) + max_abs(&c.e) * sup0) * k + max_abs(&c.d) + max_abs(&c.f) * sup0
        }
    };
    Ok(if rate > 0.0 { 1.0 / rate } else { f64::INFINITY })
}

/// Reusable work state for one trajectory.
struct Stepper {
    grid: Arc<Grid>,
    real: bool,
    dealias: bool,
    /// `(ik)^m` for m = 1, 2, 3 with the Nyquist mode zeroed for real fields.
    ik: [Vec<Complex64>; 3],
    /// `i k³`, the symbol of `-∂³`.
    dispersion: Vec<Complex64>,
    source: Source,
}

enum Source {
    Original { set: Arc<CoefficientSet>, cached: Option<OriginalFields> },
    Transformed { problem: TransformedProblem, recent: Vec<(f64, Arc<TransformedCoefficients>)> },
}

impl Stepper {
    fn new(grid: &Arc<Grid>, real: bool, dealias: bool, problem: &Problem) -> Result<Self> {
        let nyq = grid.nyquist_index();
        let mk = |order: u32| -> Vec<Complex64> {
            grid.wavenumbers()
                .iter()
                .enumerate()
                .map(|(m, &k)| if real && m == nyq { Complex64::new(0.0, 0.0) } else { Complex64::new(0.0, k).powu(order) })
                .collect()
        };
        let ik = [mk(1), mk(2), mk(3)];
        let dispersion = ik[2].iter().map(|c| -c).collect();
        let source = match problem {
            Problem::Original(set) => {
                let cached = if set.is_time_dependent() { None } else { Some(OriginalFields::sample(set, grid, 0.0)?) };
                Source::Original { set: set.clone(), cached }
            }
            Problem::Transformed(p) => {
                let c = p.coefficients_at(0.0)?;
                if !c.grid.same_as(grid) {
                    return Err(Error::GridMismatch("transformed coefficients are not on the state grid".into()));
                }
                Source::Transformed { problem: p.clone(), recent: vec![(0.0, c)] }
            }
        };
        Ok(Stepper { grid: grid.clone(), real, dealias, ik, dispersion, source })
    }

    fn physical(&self, coeffs: &[Complex64], mult: Option<&[Complex64]>) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = match mult {
            Some(m) => coeffs.iter().zip(m).map(|(c, m)| c * m).collect(),
            None => coeffs.to_vec(),
        };
        inverse_dft(&mut buf);
        if self.real {
            buf.iter_mut().for_each(|z| z.im = 0.0);
        }
        buf
    }

    fn spectral(&self, mut phys: Vec<Complex64>, filter: bool) -> Vec<Complex64> {
        if self.real {
            phys.iter_mut().for_each(|z| z.im = 0.0);
        }
        forward_dft(&mut phys);
        if filter {
            dealias_in_place(&mut phys, &self.grid);
        }
        phys
    }

    fn transformed_at(&mut self, t: f64) -> Result<Arc<TransformedCoefficients>> {
        let Source::Transformed { problem, recent } = &mut self.source else { unreachable!() };
        if !problem.is_time_dependent() {
            return Ok(recent[0].1.clone());
        }
        if let Some((_, c)) = recent.iter().find(|(s, _)| *s == t) {
            return Ok(c.clone());
        }
        let c = problem.coefficients_at(t)?;
        if recent.len() >= 3 {
            recent.remove(0);
        }
        recent.push((t, c.clone()));
        Ok(c)
    }

    fn original_at(&self, t: f64) -> Result<std::borrow::Cow<'_, OriginalFields>> {
        let Source::Original { set, cached } = &self.source else { unreachable!() };
        match cached {
            Some(f) => Ok(std::borrow::Cow::Borrowed(f)),
            None => Ok(std::borrow::Cow::Owned(OriginalFields::sample(set, &self.grid, t)?)),
        }
    }

    /// Explicit part of the right-hand side, in spectral space.
    fn rhs(&mut self, t: f64, u: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = u.len();
        let v = self.physical(u, None);
        let vx = self.physical(u, Some(&self.ik[0]));
        let vxx = self.physical(u, Some(&self.ik[1]));
        let (lin, nl): (Vec<Complex64>, Vec<Complex64>) = match &self.source {
            Source::Original { .. } => {
                let v3 = self.physical(u, Some(&self.ik[2]));
                let f = self.original_at(t)?;
                (0..n)
                    .map(|j| {
                        let lin = -f.alpha[j] * v3[j] - f.beta[j] * vxx[j] - f.gamma[j] * vx[j] - f.delta[j] * v[j];
                        (lin, f.eps[j] * v[j] * vx[j])
                    })
                    .unzip()
            }
            Source::Transformed { .. } => {
                let c = self.transformed_at(t)?;
                (0..n)
                    .map(|j| {
                        let lin = c.b[j] * vxx[j] - c.c[j] * vx[j] - c.d[j] * v[j];
                        (lin, c.e[j] * v[j] * vx[j] + c.f[j] * v[j] * v[j])
                    })
                    .unzip()
            }
        };
        if self.dealias {
            let a = self.spectral(lin, false);
            let b = self.spectral(nl, true);
            Ok(a.into_iter().zip(b).map(|(x, y)| x + y).collect())
        } else {
            Ok(self.spectral(lin.into_iter().zip(nl).map(|(x, y)| x + y).collect(), false))
        }
    }

    fn step(&mut self, t: f64, u: &[Complex64], h: f64) -> Result<Vec<Complex64>> {
        match self.source {
            Source::Original { .. } => self.step_rk4(t, u, h),
            Source::Transformed { .. } => self.step_if_rk4(t, u, h),
        }
    }

    fn step_rk4(&mut self, t: f64, u: &[Complex64], h: f64) -> Result<Vec<Complex64>> {
        let axpy = |a: &[Complex64], s: f64, b: &[Complex64]| -> Vec<Complex64> {
            a.iter().zip(b).map(|(x, y)| x + y * s).collect()
        };
        let k1 = self.rhs(t, u)?;
        let k2 = self.rhs(t + 0.5 * h, &axpy(u, 0.5 * h, &k1))?;
        let k3 = self.rhs(t + 0.5 * h, &axpy(u, 0.5 * h, &k2))?;
        let k4 = self.rhs(t + h, &axpy(u, h, &k3))?;
        Ok((0..u.len()).map(|j| u[j] + (k1[j] + 2.0 * (k2[j] + k3[j]) + k4[j]) * (h / 6.0)).collect())
    }

    fn step_if_rk4(&mut self, t: f64, u: &[Complex64], h: f64) -> Result<Vec<Complex64>> {
        let e1: Vec<Complex64> = self.dispersion.iter().map(|l| (l * (0.5 * h)).exp()).collect();
        let e2: Vec<Complex64> = e1.iter().map(|e| e * e).collect();
        let n = u.len();
        let k1 = self.rhs(t, u)?;
        let s2: Vec<Complex64> = (0..n).map(|j| e1[j] * (u[j] + k1[j] * (0.5 * h))).collect();
        let k2 = self.rhs(t + 0.5 * h, &s2)?;
        let s3: Vec<Complex64> = (0..n).map(|j| e1[j] * u[j] + k2[j] * (0.5 * h)).collect();
        let k3 = self.rhs(t + 0.5 * h, &s3)?;
        let s4: Vec<Complex64> = (0..n).map(|j| e2[j] * u[j] + e1[j] * k3[j] * h).collect();
        let k4 = self.rhs(t + h, &s4)?;
        Ok((0..n)
            .map(|j| e2[j] * u[j] + (e2[j] * k1[j] + 2.0 * e1[j] * (k2[j] + k3[j]) + k4[j]) * (h / 6.0))
            .collect())
    }
}

fn sup_of(coeffs: &[Complex64]) -> f64 {
    let mut buf = coeffs.to_vec();
    inverse_dft(&mut buf);
    buf.iter().fold(0.0f64, |a, z| if z.norm().is_nan() { f64::NAN } else { a.max(z.norm()) })
}

/// One integrating-factor RK4 step of the transformed equation.
pub fn step_transformed(v: &SpectralState, coeffs: &TransformedCoefficients, t: f64, dt: f64) -> Result<SpectralState> {
    if !coeffs.grid.same_as(v.grid()) {
        return Err(Error::GridMismatch("coefficients are not on the state grid".into()));
    }
    let problem = Problem::fixed(coeffs.clone());
    let limit = linear_step_limit(&problem, v.grid(), t)?;
    if dt > limit {
        return Err(Error::Stability { dt, limit });
    }
    let mut st = Stepper::new(v.grid(), v.is_real_field(), true, &problem)?;
    finish_step(&mut st, v, t, dt)
}

/// One explicit RK4 step of the original equation.
pub fn step_original(u: &SpectralState, set: &CoefficientSet, t: f64, dt: f64) -> Result<SpectralState> {
    let problem = Problem::Original(Arc::new(set.clone()));
    let limit = linear_step_limit(&problem, u.grid(), t)?;
    if dt > limit {
        return Err(Error::Stability { dt, limit });
    }
    let mut st = Stepper::new(u.grid(), u.is_real_field(), true, &problem)?;
    finish_step(&mut st, u, t, dt)
}

fn finish_step(st: &mut Stepper, u: &SpectralState, t: f64, dt: f64) -> Result<SpectralState> {
    let next = st.step(t, u.coefficients(), dt)?;
    if next.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::BlowUp { t: t + dt });
    }
    SpectralState::from_coefficients(u.grid(), next, u.is_real_field())
}

/// Monitored quantities at the stored times of a trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormReport {
    pub s: f64,
    pub times: Vec<f64>,
    pub hs: Vec<f64>,
    pub l2: Vec<f64>,
    pub mass: Vec<f64>,
    pub sup: Vec<f64>,
    /// `-Σ_N ⟨N⟩^{2s} ∫ b (P_N u_x)²` at each stored time.
    pub dissipation: Vec<f64>,
    /// Trapezoid-in-time accumulation of `-dissipation`.
    pub seminorm: Vec<f64>,
}

impl NormReport {
    /// Largest value of the dissipation term over the samples.
    pub fn max_dissipation(&self) -> f64 {
        self.dissipation.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `‖u(t)‖²_{H^s} + seminorm(t)` divided by `‖u₀‖²_{H^s}`, maximized over time.
    pub fn energy_ratio(&self) -> f64 {
        let h0 = self.hs.first().copied().unwrap_or(0.0).powi(2);
        if h0 == 0.0 {
            return 0.0;
        }
        self.hs.iter().zip(&self.seminorm).map(|(h, s)| (h * h + s) / h0).fold(0.0, f64::max)
    }

    /// True when `‖u(t)‖_{H^s}` never increases by more than `tol` relative.
    pub fn hs_nonincreasing(&self, tol: f64) -> bool {
        self.hs.windows(2).all(|w| w[1] <= w[0] * (1.0 + tol))
    }

    pub fn max_relative_drift(series: &[f64]) -> f64 {
        let first = series.first().copied().unwrap_or(0.0);
        let scale = first.abs().max(f64::MIN_POSITIVE);
        series.iter().map(|v| (v - first).abs() / scale).fold(0.0, f64::max)
    }
}

/// Norm time series of `traj` with the dissipation weight `weight` (constant, static, or
/// one slice per stored state).
pub fn energy_monitor(traj: &Trajectory, s: f64, weight: &Weight) -> NormReport {
    let mut r = NormReport { s, ..Default::default() };
    for (i, (t, st)) in traj.times.iter().zip(&traj.states).enumerate() {
        r.times.push(*t);
        r.hs.push(st.sobolev_norm(s));
        r.l2.push(st.l2_norm());
        r.mass.push(st.mean_integral());
        r.sup.push(st.sup_norm());
        r.dissipation.push(-dyadic_dissipation_density(st, weight, i, s));
    }
    let mut acc = 0.0;
    r.seminorm.push(0.0);
    for i in 1..r.times.len() {
        acc -= 0.5 * (r.times[i] - r.times[i - 1]) * (r.dissipation[i] + r.dissipation[i - 1]);
        r.seminorm.push(acc);
    }
    r
}

/// The dissipation weight attached to `problem` at the stored times: `b` for the
/// transformed form and `-β` for the original form.
pub fn problem_weight(problem: &Problem, grid: &Grid, times: &[f64]) -> Result<Weight> {
    match problem {
        Problem::Original(set) => {
            let at = |t: f64| grid.nodes().iter().map(|&x| -set.beta.value(t, x)).collect::<Vec<_>>();
            if set.beta.is_time_dependent() {
                Ok(Weight::Series(times.iter().map(|&t| at(t)).collect()))
            } else {
                Ok(Weight::Static(at(0.0)))
            }
        }
        Problem::Transformed(p) => {
            if p.is_time_dependent() {
                let v: Result<Vec<Vec<f64>>> = times.iter().map(|&t| p.coefficients_at(t).map(|c| c.b.clone())).collect();
                Ok(Weight::Series(v?))
            } else {
                Ok(Weight::Static(p.coefficients_at(0.0)?.b.clone()))
            }
        }
    }
}

/// Stored states and monitored norms of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralState>,
    pub dt: f64,
    pub steps: usize,
    /// First time at which the sup-norm exceeded the threshold or became non-finite.
    pub blowup_time: Option<f64>,
    pub norms: NormReport,
}

impl Trajectory {
    pub fn final_state(&self) -> &SpectralState {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds the initial time")
    }
}

/// Integrate from `u0` until `t_final` or blow-up.
pub fn solve(u0: &SpectralState, config: &SolverConfig, problem: &Problem) -> Result<Trajectory> {
    config.validate()?;
    if config.form != problem.form() {
        return Err(Error::Invalid("equation form of the config and the problem differ".into()));
    }
    let grid = u0.grid().clone();
    let sup0 = u0.sup_norm();
    let limit = linear_step_limit(problem, &grid, 0.0)?;
    let dt_target = match config.dt {
        StepSize::Fixed(dt) => {
            if dt > limit * (1.0 + 1e-12) {
                return Err(Error::Stability { dt, limit });
            }
            dt
        }
        StepSize::Auto => limit.min(auto_step_limit(problem, &grid, 0.0, sup0)?).min(config.t_final),
    };
    let steps = ((config.t_final / dt_target) - 1e-9).ceil().max(1.0) as usize;
    let dt = config.t_final / steps as f64;
    let threshold = config.blowup_threshold.unwrap_or(1e6 * sup0);

    let mut stepper = Stepper::new(&grid, u0.is_real_field(), config.dealias, problem)?;
    let mut times = vec![0.0];
    let mut states = vec![u0.clone()];
    let mut u = u0.coefficients().to_vec();
    let mut blowup_time = None;
    for i in 0..steps {
        let t = i as f64 * dt;
        let t_next = if i + 1 == steps { config.t_final } else { (i + 1) as f64 * dt };
        u = stepper.step(t, &u, dt)?;
        let sup = sup_of(&u);
        let finite = u.iter().all(|c| c.re.is_finite() && c.im.is_finite());
        if !finite || !(sup <= threshold) {
            blowup_time = Some(t_next);
            if finite {
                times.push(t_next);
                states.push(SpectralState::from_coefficients(&grid, u.clone(), u0.is_real_field())?);
            }
            break;
        }
        if (i + 1) % config.monitor_stride == 0 || i + 1 == steps {
            times.push(t_next);
            states.push(SpectralState::from_coefficients(&grid, u.clone(), u0.is_real_field())?);
        }
    }
    let weight = problem_weight(problem, &grid, &times)?;
    let mut traj = Trajectory { times, states, dt, steps, blowup_time, norms: NormReport::default() };
    traj.norms = energy_monitor(&traj, config.s, &weight);
    Ok(traj)
}

/// Smooth space-time test function `φ(t,x) = χ(t) ψ(x)`, with `χ` supported in
/// `(-τ, τ)` and `ψ` a modulated bump supported in `[center - radius, center + radius]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestField {
    pub tau: f64,
    pub center: f64,
    pub radius: f64,
    /// `(amplitude, wavenumber, phase)` of the modulation `1 + Σ a cos(kx + p)`.
    pub modulation: Vec<(f64, f64, f64)>,
}

fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

impl TestField {
    pub fn chi(&self, t: f64) -> f64 {
        bump(t / self.tau)
    }

    pub fn chi_t(&self, t: f64) -> f64 {
        let s = t / self.tau;
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let d = 1.0 - s * s;
        bump(s) * (-2.0 * s / (d * d)) / self.tau
    }

    pub fn psi(&self, x: f64) -> f64 {
        let m: f64 = self.modulation.iter().map(|(a, k, p)| a * (k * x + p).cos()).sum();
        bump((x - self.center) / self.radius) * (1.0 + m)
    }

    /// Random modulated bump inside the interior of `grid` with time support below `t_final`.
    pub fn random(rng: &mut impl rand::Rng, grid: &Grid, t_final: f64) -> Self {
        let l = grid.half_width();
        let radius = rng.gen_range(0.2..0.4) * l;
        let center = rng.gen_range(-0.3..0.3) * l;
        let modulation = (0..3).map(|_| (rng.gen_range(-0.3..0.3), rng.gen_range(0.2..1.5), rng.gen_range(0.0..6.28))).collect();
        TestField { tau: 0.8 * t_final, center, radius, modulation }
    }

    /// [`TestField::random`] drawn from a ChaCha8 stream seeded with `seed`.
    pub fn seeded(seed: u64, grid: &Grid, t_final: f64) -> Self {
        use rand::SeedableRng;
        Self::random(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed), grid, t_final)
    }

    fn check_support(&self, grid: &Grid, t_final: f64) -> Result<()> {
        let l = grid.half_width();
        if self.center - self.radius <= -0.9 * l || self.center + self.radius >= 0.9 * l || self.tau >= t_final {
            return Err(Error::Support(format!("test function must vanish for t >= {t_final} and near the domain edges")));
        }
        Ok(())
    }
}

/// Space-time residual of the weak formulation and a scale for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakResidual {
    pub value: f64,
    /// `‖u‖_{L²_{t,x}} ‖φ‖_{L²_{t,x}} + ‖u₀‖ ‖φ(0)‖`.
    pub scale: f64,
}

impl WeakResidual {
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            self.value.abs()
        } else {
            self.value.abs() / self.scale
        }
    }
}

/// Time-quadrature weights: composite Simpson for uniformly spaced samples with an even
/// number of intervals, trapezoid otherwise.
fn time_weights(times: &[f64]) -> Vec<f64> {
    let m = times.len();
    let mut w = vec![0.0; m];
    if m < 2 {
        return w;
    }
    let h = times[1] - times[0];
    let uniform = times.windows(2).all(|p| ((p[1] - p[0]) - h).abs() < 1e-9 * h.abs().max(1e-300));
    if uniform && (m - 1) % 2 == 0 {
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = h / 3.0 * if i == 0 || i == m - 1 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        }
    } else {
        for i in 1..m {
            let d = times[i] - times[i - 1];
            w[i - 1] += 0.5 * d;
            w[i] += 0.5 * d;
        }
    }
    w
}

/// Left side of the weak formulation of the equation solved by `traj` against `phi`.
///
/// Original form:
/// `-∫u₀φ(0) - ∫∫u[φ_t + (αφ)_3x - (βφ)_2x + (γφ)_x - δφ] + ∫∫(u²/2)(εφ)_x`.
/// Transformed form:
/// `-∫v₀φ(0) - ∫∫v[φ_t + φ_3x + (bφ)_2x + (cφ)_x - dφ] + ∫∫(v²/2)(eφ)_x - ∫∫f v²φ`.
pub fn weak_residual(traj: &Trajectory, phi: &TestField, problem: &Problem) -> Result<WeakResidual> {
    let grid = traj.states[0].grid().clone();
    let t_end = traj.final_time();
    phi.check_support(&grid, t_end)?;
    let psi: Vec<f64> = grid.nodes().iter().map(|&x| phi.psi(x)).collect();
    let dx = grid.dx();
    let deriv = |f: Vec<f64>, k: u32| -> Result<Vec<f64>> { Ok(SpectralState::from_real(&grid, &f)?.derivative(k).to_real()) };
    let weights = time_weights(&traj.times);
    let mut total = 0.0;
    let mut uu = 0.0;
    let mut pp = 0.0;
    for (i, (&t, st)) in traj.times.iter().zip(&traj.states).enumerate() {
        let chi = phi.chi(t);
        let chi_t = phi.chi_t(t);
        if chi == 0.0 && chi_t == 0.0 {
            continue;
        }
        let u = st.to_real();
        let p: Vec<f64> = psi.iter().map(|v| v * chi).collect();
        let pt: Vec<f64> = psi.iter().map(|v| v * chi_t).collect();
        let mul = |a: &[f64]| -> Vec<f64> { a.iter().zip(&p).map(|(x, y)| x * y).collect() };
        let (lin, quad): (Vec<f64>, Vec<f64>) = match problem {
            Problem::Original(set) => {
                let f = OriginalFields::sample(set, &grid, t)?;
                let a3 = deriv(mul(&f.alpha), 3)?;
                let b2 = deriv(mul(&f.beta), 2)?;
                let g1 = deriv(mul(&f.gamma), 1)?;
                let e1 = deriv(mul(&f.eps), 1)?;
                let lin = (0..u.len()).map(|j| pt[j] + a3[j] - b2[j] + g1[j] - f.delta[j] * p[j]).collect();
                let quad = (0..u.len()).map(|j| 0.5 * u[j] * u[j] * e1[j]).collect();
                (lin, quad)
            }
            Problem::Transformed(tp) => {
                let c = tp.coefficients_at(t)?;
                let p3 = deriv(p.clone(), 3)?;
                let b2 = deriv(mul(&c.b), 2)?;
                let c1 = deriv(mul(&c.c), 1)?;
                let e1 = deriv(mul(&c.e), 1)?;
                let lin = (0..u.len()).map(|j| pt[j] + p3[j] + b2[j] + c1[j] - c.d[j] * p[j]).collect();
                let quad = (0..u.len()).map(|j| 0.5 * u[j] * u[j] * e1[j] - c.f[j] * u[j] * u[j] * p[j]).collect();
                (lin, quad)
            }
        };
        let slice: f64 = (0..u.len()).map(|j| -u[j] * lin[j] + quad[j]).sum::<f64>() * dx;
        total += weights[i] * slice;
        uu += weights[i] * u.iter().map(|v| v * v).sum::<f64>() * dx;
        pp += weights[i] * p.iter().map(|v| v * v).sum::<f64>() * dx;
    }
    let u0 = traj.states[0].to_real();
    let phi0: Vec<f64> = psi.iter().map(|v| v * phi.chi(0.0)).collect();
    let boundary: f64 = u0.iter().zip(&phi0).map(|(a, b)| a * b).sum::<f64>() * dx;
    total -= boundary;
    let n0 = (u0.iter().map(|v| v * v).sum::<f64>() * dx).sqrt();
    let p0 = (phi0.iter().map(|v| v * v).sum::<f64>() * dx).sqrt();
    Ok(WeakResidual { value: total, scale: uu.sqrt() * pp.sqrt() + n0 * p0 })
}

/// `2κ² sech²(κ(x - 4κ²t))`, the soliton of `v_t + v_3x + 6vv_x = 0`.
pub fn soliton(kappa: f64, x: f64, t: f64) -> f64 {
    let s = 1.0 / (kappa * (x - 4.0 * kappa * kappa * t)).cosh();
    2.0 * kappa * kappa * s * s
}
