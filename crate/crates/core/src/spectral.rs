//! Uniform periodic grids and the discrete Fourier representation of fields on them.
//!
//! A [`Grid`] covers `[-L, L)` with `n` equispaced nodes, `n` a power of two. A
//! [`SpectralState`] stores the normalized DFT of the nodal samples,
//! `c_m = (1/n) Σ_j u_j exp(-2πi jm/n)`, so that
//!
//! ```text
//! u(x) = Σ_m c_m exp(i k_m (x - x_0)),   k_m = m π / L,   x_0 = -L.
//! ```
//!
//! Norms include the domain length so that they approximate the continuum
//! `L²(ℝ)`/`Hˢ(ℝ)` norms of fields whose mass stays away from the boundary.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place forward DFT normalized by `1/n`.
pub fn forward_dft(buf: &mut [Complex64]) {
    let n = buf.len();
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    plan.process(buf);
    let scale = 1.0 / n as f64;
    for c in buf.iter_mut() {
        *c *= scale;
    }
}

/// In-place inverse DFT (no normalization), the inverse of [`forward_dft`].
pub fn inverse_dft(buf: &mut [Complex64]) {
    let n = buf.len();
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n));
    plan.process(buf);
}

/// Uniform periodic grid on `[-half_width, half_width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    half_width: f64,
    num_points: usize,
    dx: f64,
    nodes: Vec<f64>,
    wavenumbers: Vec<f64>,
}

/// Smallest admissible number of grid points.
pub const MIN_POINTS: usize = 16;

impl Grid {
    pub fn new(half_width: f64, num_points: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Sizing(format!("half_width must be positive, got {half_width}")));
        }
        if !num_points.is_power_of_two() {
            return Err(Error::Sizing(format!("num_points {num_points} is not a power of two")));
        }
        if num_points < MIN_POINTS {
            return Err(Error::Sizing(format!("num_points {num_points} is below the minimum {MIN_POINTS}")));
        }
        let dx = 2.0 * half_width / num_points as f64;
        let nodes = (0..num_points).map(|j| -half_width + j as f64 * dx).collect();
        let dk = PI / half_width;
        let half = num_points / 2;
        let wavenumbers = (0..num_points)
            .map(|m| {
                let signed = if m < half { m as i64 } else { m as i64 - num_points as i64 };
                signed as f64 * dk
            })
            .collect();
        Ok(Grid { half_width, num_points, dx, nodes, wavenumbers })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn len(&self) -> usize {
        self.num_points
    }

    pub fn is_empty(&self) -> bool {
        self.num_points == 0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Domain length `2L`.
    pub fn length(&self) -> f64 {
        2.0 * self.half_width
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Wavenumbers in DFT order; index `n/2` holds the Nyquist mode `-nπ/(2L)`.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn nyquist_index(&self) -> usize {
        self.num_points / 2
    }

    /// Magnitude of the Nyquist wavenumber, `nπ/(2L)`.
    pub fn k_max(&self) -> f64 {
        PI * self.num_points as f64 / (2.0 * self.half_width)
    }

    /// Index of the node `x = 0`.
    pub fn origin_index(&self) -> usize {
        self.num_points / 2
    }

    /// Fold a point into `[-L, L)`.
    pub fn fold(&self, x: f64) -> f64 {
        let len = self.length();
        let mut y = (x + self.half_width).rem_euclid(len) - self.half_width;
        if y >= self.half_width {
            y -= len;
        }
        y
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.num_points == other.num_points && self.half_width == other.half_width
    }

    /// Trapezoid (equivalently, rectangle) quadrature of nodal samples.
    pub fn integrate(&self, samples: &[f64]) -> f64 {
        samples.iter().sum::<f64>() * self.dx
    }

    /// Fraction of `∫ u²` carried by the outer 10% of the domain.
    pub fn edge_mass_fraction(&self, samples: &[f64]) -> f64 {
        let cut = 0.9 * self.half_width;
        let mut total = 0.0;
        let mut edge = 0.0;
        for (x, u) in self.nodes.iter().zip(samples) {
            let m = u * u;
            total += m;
            if x.abs() >= cut {
                edge += m;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            edge / total
        }
    }
}

/// Build a grid and wrap it for sharing between states.
pub fn make_grid(half_width: f64, num_points: usize) -> Result<Arc<Grid>> {
    Grid::new(half_width, num_points).map(Arc::new)
}

/// Discrete Fourier representation of a field on a [`Grid`].
#[derive(Debug, Clone)]
pub struct SpectralState {
    grid: Arc<Grid>,
    coeffs: Vec<Complex64>,
    real: bool,
}

impl SpectralState {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        SpectralState { grid: grid.clone(), coeffs: vec![Complex64::new(0.0, 0.0); grid.len()], real: true }
    }

    pub fn from_real(grid: &Arc<Grid>, samples: &[f64]) -> Result<Self> {
        check_len(grid, samples.len())?;
        let mut buf: Vec<Complex64> = samples.iter().map(|&u| Complex64::new(u, 0.0)).collect();
        forward_dft(&mut buf);
        Ok(SpectralState { grid: grid.clone(), coeffs: buf, real: true })
    }

    pub fn from_complex(grid: &Arc<Grid>, samples: &[Complex64]) -> Result<Self> {
        check_len(grid, samples.len())?;
        let mut buf = samples.to_vec();
        forward_dft(&mut buf);
        Ok(SpectralState { grid: grid.clone(), coeffs: buf, real: false })
    }

    /// Sample a real function at the grid nodes.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> Self {
        let samples: Vec<f64> = grid.nodes().iter().map(|&x| f(x)).collect();
        Self::from_real(grid, &samples).expect("length matches grid")
    }

    pub fn from_coefficients(grid: &Arc<Grid>, coeffs: Vec<Complex64>, real: bool) -> Result<Self> {
        check_len(grid, coeffs.len())?;
        Ok(SpectralState { grid: grid.clone(), coeffs, real })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coefficients_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coefficients(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn is_real_field(&self) -> bool {
        self.real
    }

    /// Nodal values; imaginary parts are dropped for real fields.
    pub fn to_real(&self) -> Vec<f64> {
        let mut buf = self.coeffs.clone();
        inverse_dft(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        let mut buf = self.coeffs.clone();
        inverse_dft(&mut buf);
        buf
    }

    pub fn ensure_same_grid(&self, other: &SpectralState) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "({}, {}) vs ({}, {})",
                self.grid.half_width(),
                self.grid.num_points(),
                other.grid.half_width(),
                other.grid.num_points()
            )))
        }
    }

    /// Multiply every coefficient by a real symbol sampled on the wavenumbers.
    pub fn apply_symbol(&self, symbol: &[f64]) -> Result<SpectralState> {
        check_len(&self.grid, symbol.len())?;
        let coeffs = self.coeffs.iter().zip(symbol).map(|(c, s)| c * s).collect();
        Ok(SpectralState { grid: self.grid.clone(), coeffs, real: self.real })
    }

    /// Multiply by `(ik)^order`. The Nyquist coefficient of real fields is zeroed.
    pub fn derivative(&self, order: u32) -> SpectralState {
        let mut out = self.clone();
        differentiate_in_place(&mut out.coeffs, self.grid.wavenumbers(), order, self.real);
        out
    }

    /// `(2L Σ_k (1+k²)^s |c_k|²)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let sum: f64 = self
            .coeffs
            .iter()
            .zip(self.grid.wavenumbers())
            .map(|(c, k)| (1.0 + k * k).powf(s) * c.norm_sqr())
            .sum();
        (sum * self.grid.length()).sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sobolev_norm(0.0)
    }

    /// `∫ u conj(v) dx` via Parseval.
    pub fn inner(&self, other: &SpectralState) -> Complex64 {
        let sum: Complex64 = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b.conj()).sum();
        sum * self.grid.length()
    }

    /// `∫ u dx`.
    pub fn mean_integral(&self) -> f64 {
        self.coeffs[0].re * self.grid.length()
    }

    pub fn sup_norm(&self) -> f64 {
        self.to_complex().iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Zero all coefficients with `|k| > (2/3) k_max`.
    pub fn dealias(&self) -> SpectralState {
        let mut out = self.clone();
        dealias_in_place(&mut out.coeffs, &self.grid);
        out
    }

    /// Pseudo-spectral (collocation) product.
    pub fn product(&self, other: &SpectralState) -> Result<SpectralState> {
        self.ensure_same_grid(other)?;
        let a = self.to_complex();
        let b = other.to_complex();
        let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let mut st = SpectralState::from_complex(&self.grid, &prod)?;
        st.real = self.real && other.real;
        Ok(st)
    }

    pub fn add(&self, other: &SpectralState) -> Result<SpectralState> {
        self.ensure_same_grid(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(SpectralState { grid: self.grid.clone(), coeffs, real: self.real && other.real })
    }

    pub fn sub(&self, other: &SpectralState) -> Result<SpectralState> {
        self.ensure_same_grid(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Ok(SpectralState { grid: self.grid.clone(), coeffs, real: self.real && other.real })
    }

    pub fn scale(&self, factor: f64) -> SpectralState {
        let coeffs = self.coeffs.iter().map(|c| c * factor).collect();
        SpectralState { grid: self.grid.clone(), coeffs, real: self.real }
    }

    /// Largest violation of `c(-k) = conj(c(k))`, relative to the largest coefficient.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.coeffs.len();
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for m in 0..n {
            let mirror = (n - m) % n;
            worst = worst.max((self.coeffs[m] - self.coeffs[mirror].conj()).norm());
        }
        worst / scale
    }

    /// Trigonometric interpolation at arbitrary points (folded into the domain).
    /// Real parts are returned; use [`SpectralState::interpolate_complex`] for complex fields.
    pub fn interpolate(&self, query_points: &[f64]) -> Vec<f64> {
        self.interpolate_complex(query_points).into_iter().map(|c| c.re).collect()
    }

    pub fn interpolate_complex(&self, query_points: &[f64]) -> Vec<Complex64> {
        let n = self.coeffs.len();
        let half = n / 2;
        let grid = &self.grid;
        let dk = PI / grid.half_width();
        query_points
            .iter()
            .map(|&q| {
                let xi = grid.fold(q) + grid.half_width();
                let mut acc = self.coeffs[0];
                let step = Complex64::from_polar(1.0, dk * xi);
                let mut w = Complex64::new(1.0, 0.0);
                for m in 1..half {
                    // resynchronise the power recurrence to keep round-off at O(eps)
                    w = if m % 32 == 0 { Complex64::from_polar(1.0, dk * xi * m as f64) } else { w * step };
                    acc += self.coeffs[m] * w + self.coeffs[n - m] * w.conj();
                }
                acc += self.coeffs[half] * (dk * xi * half as f64).cos();
                acc
            })
            .collect()
    }
}

fn check_len(grid: &Grid, len: usize) -> Result<()> {
    if len == grid.len() {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!("expected {} samples, got {len}", grid.len())))
    }
}

/// Multiply raw coefficients by `(ik)^order`; real fields lose their Nyquist coefficient.
pub(crate) fn differentiate_in_place(coeffs: &mut [Complex64], wavenumbers: &[f64], order: u32, real: bool) {
    let nyq = coeffs.len() / 2;
    for (m, (c, &k)) in coeffs.iter_mut().zip(wavenumbers).enumerate() {
        if real && m == nyq {
            *c = Complex64::new(0.0, 0.0);
            continue;
        }
        *c *= Complex64::new(0.0, k).powu(order);
    }
}

pub(crate) fn dealias_in_place(coeffs: &mut [Complex64], grid: &Grid) {
    let cut = 2.0 / 3.0 * grid.k_max();
    for (c, k) in coeffs.iter_mut().zip(grid.wavenumbers()) {
        if k.abs() > cut {
            *c = Complex64::new(0.0, 0.0);
        }
    }
}
