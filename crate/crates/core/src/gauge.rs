//! The change of unknown that normalizes the dispersion coefficient.
//!
//! With `A(t,x) = ∫₀ˣ α^{-1/3}(t,y) dy` and the weight
//!
//! ```text
//! h(t,x) = [α(t,0)/α(t,x)]^{1/3} exp((1/3) ∫₀ˣ β₁/α),
//! ```
//!
//! a solution `u` of `u_t + αu_3x + βu_2x + γu_x + δu = εuu_x` corresponds to
//! `v(t,y) = h(t,A⁻¹(t,y)) u(t,A⁻¹(t,y))`, which solves
//! `v_t + v_3x - b v_2x + c v_x + d v = e v v_x + f v²` with coefficients computed by
//! [`transform_coefficients`].

use std::sync::{Arc, OnceLock};

use crate::coefficients::{sample_times, CoefficientSet};
use crate::error::{Error, Result};
use crate::expr::{self, diff, ExprRef, Var};
use crate::quadrature::CumulativeTable;
use crate::spectral::{make_grid, Grid, SpectralState};

/// Residual tolerance of the inverse map.
pub const INVERSION_TOL: f64 = 1e-11;
/// Padding of the image domain beyond the largest `|A(t, ±L)|`.
pub const IMAGE_PADDING: f64 = 1.05;
/// Largest admissible fraction of `∫u²` in the outer 10% of the domain.
pub const EDGE_MASS_LIMIT: f64 = 1e-6;

/// Pointwise coefficient data needed by the transformation formulas.
#[derive(Debug, Clone, Copy)]
struct Local {
    a: f64,
    ax: f64,
    a2x: f64,
    a3x: f64,
    at: f64,
    b1: f64,
    b1x: f64,
    b1_2x: f64,
    beta: f64,
    beta2: f64,
    gamma: f64,
    delta: f64,
    eps: f64,
}

impl Local {
    fn at(set: &CoefficientSet, t: f64, x: f64) -> Self {
        Local {
            a: set.alpha.value(t, x),
            ax: set.alpha.dx(1, t, x),
            a2x: set.alpha.dx(2, t, x),
            a3x: set.alpha.dx(3, t, x),
            at: set.alpha.dt_dx(0, t, x),
            b1: set.beta1.value(t, x),
            b1x: set.beta1.dx(1, t, x),
            b1_2x: set.beta1.dx(2, t, x),
            beta: set.beta.value(t, x),
            beta2: set.beta2.value(t, x),
            gamma: set.gamma.value(t, x),
            delta: set.delta.value(t, x),
            eps: set.epsilon.value(t, x),
        }
    }

    /// `r = h_x/h` and its first two `x`-derivatives.
    fn ratios(&self) -> (f64, f64, f64) {
        let n0 = self.b1 - self.ax;
        let n1 = self.b1x - self.a2x;
        let n2 = self.b1_2x - self.a3x;
        let three_a = 3.0 * self.a;
        let r = n0 / three_a;
        let rx = (n1 - 3.0 * r * self.ax) / three_a;
        let rxx = (n2 - 6.0 * rx * self.ax - 3.0 * r * self.a2x) / three_a;
        (r, rx, rxx)
    }
}

/// `h_x/h`, `h_2x/h`, `h_3x/h` from the logarithmic derivative `r` and its derivatives.
fn weight_ratios(r: f64, rx: f64, rxx: f64) -> (f64, f64, f64) {
    (r, r * r + rx, r * r * r + 3.0 * r * rx + rxx)
}

fn check_coercive(set: &CoefficientSet, t: f64, x: f64) -> Result<f64> {
    let a = set.alpha.value(t, x);
    if !(a >= set.alpha0 && a <= 1.0 / set.alpha0) {
        return Err(Error::NonCoercive { value: a, t, x });
    }
    Ok(a)
}

/// Integrands of the anchored primitives, as closed-form closures.
fn s_fn(set: &CoefficientSet, t: f64) -> impl Fn(f64) -> f64 + '_ {
    move |x| set.alpha.value(t, x).powf(-1.0 / 3.0)
}

fn st_fn(set: &CoefficientSet, t: f64) -> impl Fn(f64) -> f64 + '_ {
    move |x| {
        let a = set.alpha.value(t, x);
        -set.alpha.dt_dx(0, t, x) * a.powf(-4.0 / 3.0) / 3.0
    }
}

fn q_fn(set: &CoefficientSet, t: f64) -> impl Fn(f64) -> f64 + '_ {
    move |x| set.beta1.value(t, x) / set.alpha.value(t, x)
}

fn qt_fn(set: &CoefficientSet, t: f64) -> impl Fn(f64) -> f64 + '_ {
    move |x| {
        let a = set.alpha.value(t, x);
        set.beta1.dt_dx(0, t, x) / a - set.beta1.value(t, x) * set.alpha.dt_dx(0, t, x) / (a * a)
    }
}

/// `A(t, x_j)` and `A_t(t, x_j)` on the grid nodes.
pub fn compute_a(set: &CoefficientSet, t: f64, grid: &Grid) -> Result<(Vec<f64>, Vec<f64>)> {
    for &x in grid.nodes() {
        check_coercive(set, t, x)?;
    }
    let half = grid.num_points() / 2;
    let a = CumulativeTable::build(&s_fn(set, t), grid.dx(), half, half - 1).values().to_vec();
    let at = if set.alpha.is_time_dependent() {
        CumulativeTable::build(&st_fn(set, t), grid.dx(), half, half - 1).values().to_vec()
    } else {
        vec![0.0; grid.len()]
    };
    if let Some(j) = a.windows(2).position(|w| !(w[1] > w[0])) {
        let x = grid.nodes()[j];
        return Err(Error::NonCoercive { value: set.alpha.value(t, x), t, x });
    }
    Ok((a, at))
}

/// Gauge weight and its first three `x`-derivatives on a node set.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSamples {
    pub h: Vec<f64>,
    pub h_x: Vec<f64>,
    pub h_2x: Vec<f64>,
    pub h_3x: Vec<f64>,
}

/// `h`, `h_x`, `h_2x`, `h_3x` on the grid nodes.
pub fn compute_h(set: &CoefficientSet, t: f64, grid: &Grid) -> Result<WeightSamples> {
    for &x in grid.nodes() {
        check_coercive(set, t, x)?;
    }
    let half = grid.num_points() / 2;
    let q = CumulativeTable::build(&q_fn(set, t), grid.dx(), half, half - 1);
    let a0 = set.alpha.value(t, 0.0);
    let mut out = WeightSamples { h: vec![], h_x: vec![], h_2x: vec![], h_3x: vec![] };
    for (j, &x) in grid.nodes().iter().enumerate() {
        let loc = Local::at(set, t, x);
        let h = (a0 / loc.a).cbrt() * (q.values()[j] / 3.0).exp();
        let (r, rx, rxx) = loc.ratios();
        let (w1, w2, w3) = weight_ratios(r, rx, rxx);
        out.h.push(h);
        out.h_x.push(h * w1);
        out.h_2x.push(h * w2);
        out.h_3x.push(h * w3);
    }
    Ok(out)
}

/// Sampled straightening map, its inverse and the gauge weight at one time.
#[derive(Debug, Clone)]
pub struct GaugeMap {
    t: f64,
    set: Arc<CoefficientSet>,
    source: Arc<Grid>,
    image: Arc<Grid>,
    alpha_origin: f64,
    alpha_t_origin: f64,
    a_table: CumulativeTable,
    at_table: CumulativeTable,
    q_table: CumulativeTable,
    qt_table: CumulativeTable,
    /// `A(t, x_j)` on source nodes.
    pub a: Vec<f64>,
    /// `A_t(t, x_j)` on source nodes.
    pub a_t: Vec<f64>,
    /// Weight and derivatives on source nodes.
    pub weight: WeightSamples,
    /// `A⁻¹(t, y_j)` on image nodes.
    pub a_inverse: Vec<f64>,
}

/// Extend `table` until `A` covers `[-bound, bound]`, giving up after `max_cells` cells per side.
fn extend_to_cover(
    tables: &mut [&mut CumulativeTable; 4],
    fns: [&dyn Fn(f64) -> f64; 4],
    bound: f64,
    max_cells: usize,
) -> Result<()> {
    let mut added = 0;
    while *tables[0].values().last().expect("non-empty") < bound {
        for (tb, f) in tables.iter_mut().zip(fns) {
            tb.push_right(&f);
        }
        added += 1;
        if added > max_cells {
            return Err(Error::OutOfRange { y: bound, lo: tables[0].values()[0], hi: *tables[0].values().last().unwrap() });
        }
    }
    added = 0;
    while tables[0].values()[0] > -bound {
        for (tb, f) in tables.iter_mut().zip(fns) {
            tb.push_left(&f);
        }
        added += 1;
        if added > max_cells {
            return Err(Error::OutOfRange { y: -bound, lo: tables[0].values()[0], hi: *tables[0].values().last().unwrap() });
        }
    }
    Ok(())
}

impl GaugeMap {
    pub fn new(set: Arc<CoefficientSet>, t: f64, source: Arc<Grid>, image: Arc<Grid>) -> Result<Self> {
        let (a, a_t) = compute_a(&set, t, &source)?;
        let weight = compute_h(&set, t, &source)?;
        let (a_table, at_table, q_table, qt_table) = {
            let dx = source.dx();
            let half = source.num_points() / 2;
            let s = s_fn(&set, t);
            let st = st_fn(&set, t);
            let q = q_fn(&set, t);
            let qt = qt_fn(&set, t);
            let mut a_table = CumulativeTable::build(&s, dx, half, half);
            let mut at_table = CumulativeTable::build(&st, dx, half, half);
            let mut q_table = CumulativeTable::build(&q, dx, half, half);
            let mut qt_table = CumulativeTable::build(&qt, dx, half, half);
            let bound = image.half_width() + 2.0 * image.dx();
            // α ≤ 1/α₀ bounds the number of extra cells needed
            let max_cells = ((bound / (set.alpha0.cbrt() * dx)).ceil() as usize).max(4) * 2;
            extend_to_cover(
                &mut [&mut a_table, &mut at_table, &mut q_table, &mut qt_table],
                [&s, &st, &q, &qt],
                bound,
                max_cells,
            )?;
            if let Some(j) = a_table.values().windows(2).position(|w| !(w[1] > w[0])) {
                let x = a_table.node_x(j);
                return Err(Error::NonCoercive { value: set.alpha.value(t, x), t, x });
            }
            (a_table, at_table, q_table, qt_table)
        };
        let alpha_origin = set.alpha.value(t, 0.0);
        let alpha_t_origin = set.alpha.dt_dx(0, t, 0.0);
        let mut map = GaugeMap {
            t,
            set,
            source,
            image,
            alpha_origin,
            alpha_t_origin,
            a_table,
            at_table,
            q_table,
            qt_table,
            a,
            a_t,
            weight,
            a_inverse: Vec::new(),
        };
        let inv: Result<Vec<f64>> = map.image.nodes().iter().map(|&y| map.invert(y)).collect();
        map.a_inverse = inv?;
        Ok(map)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn source_grid(&self) -> &Arc<Grid> {
        &self.source
    }

    pub fn image_grid(&self) -> &Arc<Grid> {
        &self.image
    }

    pub fn coefficients(&self) -> &Arc<CoefficientSet> {
        &self.set
    }

    /// Range of `y` over which the inverse is available.
    pub fn image_range(&self) -> (f64, f64) {
        let v = self.a_table.values();
        (v[0], v[v.len() - 1])
    }

    /// `A(t, x)` at any point of the tabulated range.
    pub fn eval_a(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.a_table.range();
        self.a_table.eval(&s_fn(&self.set, self.t), x).ok_or(Error::OutOfRange { y: x, lo, hi })
    }

    /// `A⁻¹(t, y)` by monotone bracketing and safeguarded Newton iteration.
    pub fn invert(&self, y: f64) -> Result<f64> {
        let vals = self.a_table.values();
        let (lo, hi) = self.image_range();
        if !(y >= lo && y <= hi) {
            return Err(Error::OutOfRange { y, lo, hi });
        }
        let i = match vals.partition_point(|&v| v <= y) {
            0 => 0,
            p if p >= vals.len() => vals.len() - 2,
            p => p - 1,
        };
        let mut left = self.a_table.node_x(i);
        let mut right = self.a_table.node_x(i + 1);
        if vals[i] == y {
            return Ok(left);
        }
        let s = s_fn(&self.set, self.t);
        let f_at = |x: f64| self.a_table.eval(&s, x).expect("inside bracket") - y;
        let mut x = left + (right - left) * (y - vals[i]) / (vals[i + 1] - vals[i]);
        for _ in 0..60 {
            let fx = f_at(x);
            if fx.abs() < INVERSION_TOL * 0.01 {
                return Ok(x);
            }
            if fx > 0.0 {
                right = x;
            } else {
                left = x;
            }
            let newton = x - fx / s(x);
            x = if newton > left && newton < right { newton } else { 0.5 * (left + right) };
            if right - left < 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        let res = f_at(x).abs();
        if res < INVERSION_TOL {
            Ok(x)
        } else {
            Err(Error::Invalid(format!("inverse map did not converge at y = {y} (residual {res:e})")))
        }
    }

    /// Gauge weight and its derivatives at an arbitrary source point.
    pub fn weight_at(&self, x: f64) -> Result<(f64, f64, f64, f64)> {
        let (lo, hi) = self.q_table.range();
        let q = self.q_table.eval(&q_fn(&self.set, self.t), x).ok_or(Error::OutOfRange { y: x, lo, hi })?;
        let loc = Local::at(&self.set, self.t, x);
        let h = (self.alpha_origin / loc.a).cbrt() * (q / 3.0).exp();
        let (r, rx, rxx) = loc.ratios();
        let (w1, w2, w3) = weight_ratios(r, rx, rxx);
        Ok((h, h * w1, h * w2, h * w3))
    }

    /// Transformed coefficients at the image points `ys`.
    pub fn transformed_at(&self, ys: &[f64]) -> Result<TransformedSamples> {
        let xs: Result<Vec<f64>> = ys.iter().map(|&y| self.invert(y)).collect();
        self.transformed_at_preimages(&xs?)
    }

    fn transformed_at_preimages(&self, xs: &[f64]) -> Result<TransformedSamples> {
        let set = &*self.set;
        let t = self.t;
        let q = q_fn(set, t);
        let qt = qt_fn(set, t);
        let st = st_fn(set, t);
        let n = xs.len();
        let mut out = TransformedSamples::with_capacity(n);
        let closed = closed_form_b_derivatives(set);
        let ht_origin = self.alpha_t_origin / self.alpha_origin;
        for &x in xs {
            let loc = Local::at(set, t, x);
            let (r, rx, rxx) = loc.ratios();
            let (_, h2, h3) = weight_ratios(r, rx, rxx);
            let qv = self.q_table.eval(&q, x).ok_or(Error::OutOfRange { y: x, lo: 0.0, hi: 0.0 })?;
            let h = (self.alpha_origin / loc.a).cbrt() * (qv / 3.0).exp();
            let s = loc.a.powf(-1.0 / 3.0);
            let a_t = if set.alpha.is_time_dependent() { self.at_table.eval(&st, x).unwrap_or(f64::NAN) } else { 0.0 };
            let qt_val = if set.alpha.is_time_dependent() || set.beta1.is_time_dependent() {
                self.qt_table.eval(&qt, x).unwrap_or(f64::NAN)
            } else {
                0.0
            };
            let ht_over_h = (ht_origin - loc.at / loc.a + qt_val) / 3.0;
            let a = loc.a;
            let b = a.cbrt() * (-loc.beta / a + loc.ax / a + 3.0 * r);
            let c = a_t
                + s * (6.0 * r * r * a + 4.0 / 9.0 * loc.ax * loc.ax / a + loc.ax * r - 3.0 * h2 * a
                    - loc.a2x / 3.0
                    - 2.0 * r * loc.beta
                    - loc.ax * loc.beta / (3.0 * a)
                    + loc.gamma);
            let d = a * (-6.0 * r * r * r + 6.0 * h2 * r - h3) + loc.beta * (2.0 * r * r - h2) - loc.gamma * r - ht_over_h
                + loc.delta;
            let e = loc.eps * s / h;
            let f = -loc.eps * r / h;
            let b_closed = -loc.beta2 * s * s;
            // chain rule through y = A(x): d/dy = α^{1/3} d/dx
            let inv_s = a.cbrt();
            let bp = closed.0.eval(t, x);
            let bpp = closed.1.eval(t, x);
            let b_y = bp * inv_s;
            let b_yy = (bpp * inv_s + bp * loc.ax / (3.0 * inv_s * inv_s)) * inv_s;
            out.preimage.push(x);
            out.h.push(h);
            out.b.push(b);
            out.b_closed.push(b_closed);
            out.b_x.push(b_y);
            out.b_2x.push(b_yy);
            out.c.push(c);
            out.d.push(d);
            out.e.push(e);
            out.f.push(f);
            out.a_t.push(a_t);
            out.ht_over_h.push(ht_over_h);
        }
        Ok(out)
    }
}

/// Symbolic `x`-derivatives of the closed form `-β₂ α^{-2/3}` (before composition).
fn closed_form_b_derivatives(set: &CoefficientSet) -> (ExprRef, ExprRef) {
    let b = expr::neg(expr::mul(
        set.beta2.tree().clone(),
        expr::pow(set.alpha.tree().clone(), expr::constant(-2.0 / 3.0)),
    ));
    let bx = diff(&b, Var::X);
    let bxx = diff(&bx, Var::X);
    (bx, bxx)
}

/// Pointwise transformed coefficients at a list of image points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransformedSamples {
    pub preimage: Vec<f64>,
    pub h: Vec<f64>,
    pub b: Vec<f64>,
    /// `-β₂ α^{-2/3}` at the preimage, for cross-checking `b`.
    pub b_closed: Vec<f64>,
    pub b_x: Vec<f64>,
    pub b_2x: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub a_t: Vec<f64>,
    pub ht_over_h: Vec<f64>,
}

impl TransformedSamples {
    fn with_capacity(n: usize) -> Self {
        let v = || Vec::with_capacity(n);
        TransformedSamples {
            preimage: v(),
            h: v(),
            b: v(),
            b_closed: v(),
            b_x: v(),
            b_2x: v(),
            c: v(),
            d: v(),
            e: v(),
            f: v(),
            a_t: v(),
            ht_over_h: v(),
        }
    }
}

/// Coefficients of the constant-dispersion equation sampled on the image grid.
#[derive(Debug, Clone)]
pub struct TransformedCoefficients {
    pub t: f64,
    pub grid: Arc<Grid>,
    pub b: Vec<f64>,
    pub b_x: Vec<f64>,
    pub b_2x: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    /// Closed-form `-β₂ α^{-2/3} ∘ A⁻¹`; empty for hand-built coefficient sets.
    pub b_closed: Vec<f64>,
}

impl TransformedCoefficients {
    /// Hand-built coefficients with `b_x`, `b_2x` from spectral differentiation of `b`.
    pub fn from_fields(grid: &Arc<Grid>, b: Vec<f64>, c: Vec<f64>, d: Vec<f64>, e: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        for v in [&b, &c, &d, &e, &f] {
            if v.len() != grid.len() {
                return Err(Error::GridMismatch(format!("field has {} samples, grid has {}", v.len(), grid.len())));
            }
        }
        let bs = SpectralState::from_real(grid, &b)?;
        let b_x = bs.derivative(1).to_real();
        let b_2x = bs.derivative(2).to_real();
        Ok(TransformedCoefficients { t: 0.0, grid: grid.clone(), b, b_x, b_2x, c, d, e, f, b_closed: Vec::new() })
    }

    /// All five fields constant.
    pub fn constant(grid: &Arc<Grid>, b: f64, c: f64, d: f64, e: f64, f: f64) -> Self {
        let n = grid.len();
        TransformedCoefficients {
            t: 0.0,
            grid: grid.clone(),
            b: vec![b; n],
            b_x: vec![0.0; n],
            b_2x: vec![0.0; n],
            c: vec![c; n],
            d: vec![d; n],
            e: vec![e; n],
            f: vec![f; n],
            b_closed: Vec::new(),
        }
    }

    pub fn min_b(&self) -> f64 {
        self.b.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_b(&self) -> f64 {
        self.b.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// `max_j |b_j - b_closed_j| / max(1, max|b_closed|)`.
    pub fn closed_form_mismatch(&self) -> Option<f64> {
        if self.b_closed.is_empty() {
            return None;
        }
        let scale = self.b_closed.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        Some(self.b.iter().zip(&self.b_closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale)
    }
}

/// Sample the transformed coefficients on the image grid of `map`.
pub fn transform_coefficients(map: &GaugeMap) -> Result<TransformedCoefficients> {
    let s = map.transformed_at_preimages(&map.a_inverse)?;
    Ok(TransformedCoefficients {
        t: map.t,
        grid: map.image.clone(),
        b: s.b,
        b_x: s.b_x,
        b_2x: s.b_2x,
        c: s.c,
        d: s.d,
        e: s.e,
        f: s.f,
        b_closed: s.b_closed,
    })
}

fn check_edge_mass(samples: &[f64], grid: &Grid) -> Result<()> {
    let fraction = grid.edge_mass_fraction(samples);
    if fraction > EDGE_MASS_LIMIT {
        Err(Error::SupportOverflow { fraction })
    } else {
        Ok(())
    }
}

/// `v(y_j) = h(A⁻¹(y_j)) u(A⁻¹(y_j))` on the image grid; zero where the preimage lies
/// outside the source domain.
pub fn forward_transform(u: &SpectralState, map: &GaugeMap) -> Result<SpectralState> {
    if !u.grid().same_as(&map.source) {
        return Err(Error::GridMismatch("state is not on the source grid of the gauge map".into()));
    }
    let samples = u.to_real();
    check_edge_mass(&samples, &map.source)?;
    let l = map.source.half_width();
    let inside: Vec<(usize, f64)> =
        map.a_inverse.iter().enumerate().filter(|(_, &x)| x >= -l && x < l).map(|(j, &x)| (j, x)).collect();
    let pts: Vec<f64> = inside.iter().map(|p| p.1).collect();
    let vals = u.interpolate(&pts);
    let mut v = vec![0.0; map.image.len()];
    for ((j, x), uval) in inside.iter().zip(vals) {
        let (h, ..) = map.weight_at(*x)?;
        v[*j] = h * uval;
    }
    SpectralState::from_real(&map.image, &v)
}

/// `u(x_j) = v(A(x_j)) / h(x_j)` on the source grid.
pub fn inverse_transform(v: &SpectralState, map: &GaugeMap) -> Result<SpectralState> {
    if !v.grid().same_as(&map.image) {
        return Err(Error::GridMismatch("state is not on the image grid of the gauge map".into()));
    }
    check_edge_mass(&v.to_real(), &map.image)?;
    let vals = v.interpolate(&map.a);
    let u: Vec<f64> = vals.iter().zip(&map.weight.h).map(|(a, h)| a / h).collect();
    SpectralState::from_real(&map.source, &u)
}

/// Image grid with the source resolution covering `A(t, [-L, L])` for all sampled `t`.
pub fn image_grid_for(set: &CoefficientSet, source: &Grid, t_final: f64, t_samples: usize) -> Result<Arc<Grid>> {
    let l = source.half_width();
    let mut extent: f64 = 0.0;
    for t in sample_times(t_final, t_samples) {
        let s = s_fn(set, t);
        for x in source.nodes() {
            check_coercive(set, t, *x)?;
        }
        let cells = source.num_points() / 2;
        let right = crate::quadrature::composite(&s, 0.0, l, cells);
        let left = crate::quadrature::composite(&s, -l, 0.0, cells);
        extent = extent.max(right).max(left);
    }
    make_grid(IMAGE_PADDING * extent, source.num_points())
}

/// Builds gauge maps and transformed coefficients on demand, caching the result when
/// no coefficient depends on time.
#[derive(Debug)]
pub struct GaugeBuilder {
    set: Arc<CoefficientSet>,
    source: Arc<Grid>,
    image: Arc<Grid>,
    cache: OnceLock<(GaugeMap, TransformedCoefficients)>,
}

impl GaugeBuilder {
    pub fn new(set: CoefficientSet, source: Arc<Grid>, t_final: f64) -> Result<Self> {
        let image = image_grid_for(&set, &source, t_final, 11)?;
        Ok(GaugeBuilder { set: Arc::new(set), source, image, cache: OnceLock::new() })
    }

    pub fn with_image(set: CoefficientSet, source: Arc<Grid>, image: Arc<Grid>) -> Self {
        GaugeBuilder { set: Arc::new(set), source, image, cache: OnceLock::new() }
    }

    pub fn set(&self) -> &Arc<CoefficientSet> {
        &self.set
    }

    pub fn source_grid(&self) -> &Arc<Grid> {
        &self.source
    }

    pub fn image_grid(&self) -> &Arc<Grid> {
        &self.image
    }

    pub fn is_time_dependent(&self) -> bool {
        self.set.is_time_dependent()
    }

    pub fn map_at(&self, t: f64) -> Result<GaugeMap> {
        if !self.is_time_dependent() {
            if let Some((m, _)) = self.cache.get() {
                let mut m = m.clone();
                m.t = t;
                return Ok(m);
            }
        }
        GaugeMap::new(self.set.clone(), t, self.source.clone(), self.image.clone())
    }

    pub fn coefficients_at(&self, t: f64) -> Result<TransformedCoefficients> {
        if self.is_time_dependent() {
            let m = self.map_at(t)?;
            return transform_coefficients(&m);
        }
        if self.cache.get().is_none() {
            let m = GaugeMap::new(self.set.clone(), 0.0, self.source.clone(), self.image.clone())?;
            let c = transform_coefficients(&m)?;
            let _ = self.cache.set((m, c));
        }
        let mut c = self.cache.get().expect("initialized").1.clone();
        c.t = t;
        Ok(c)
    }
}

/// Rows `(x, A, A_inv, h, h_x, h_2x, h_3x, b, c, d, e, f)` evaluated at the source nodes;
/// `A_inv` and the transformed coefficients treat `x` as an image coordinate and are NaN
/// where it falls outside the invertible range.
pub fn dump_rows(map: &GaugeMap) -> Vec<[f64; 12]> {
    let xs = map.source.nodes();
    xs.iter()
        .enumerate()
        .map(|(j, &x)| {
            let w = &map.weight;
            let (inv, tc) = match map.transformed_at(&[x]) {
                Ok(s) => (s.preimage[0], [s.b[0], s.c[0], s.d[0], s.e[0], s.f[0]]),
                Err(_) => (f64::NAN, [f64::NAN; 5]),
            };
            [x, map.a[j], inv, w.h[j], w.h_x[j], w.h_2x[j], w.h_3x[j], tc[0], tc[1], tc[2], tc[3], tc[4]]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientExpr, CoefficientStrings, SplitStrategy};

    fn set_with(strings: CoefficientStrings<'_>, beta1: Option<&str>) -> CoefficientSet {
        let split = beta1.map(|b| SplitStrategy::UserProvided { beta1: CoefficientExpr::parse(b).unwrap(), beta2: None });
        CoefficientSet::parse(&strings, split.as_ref(), 0.1).unwrap()
    }

    fn simple(alpha: &str, beta: &str, beta1: Option<&str>) -> CoefficientSet {
        set_with(CoefficientStrings { alpha, beta, epsilon: "1", ..Default::default() }, beta1)
    }

    #[test]
    fn a_for_constant_alpha() {
        let g = make_grid(10.0, 64).unwrap();
        let (a, at) = compute_a(&simple("1", "0", None), 0.0, &g).unwrap();
        for (x, v) in g.nodes().iter().zip(&a) {
            assert!((v - x).abs() < 1e-13);
        }
        assert!(at.iter().all(|v| *v == 0.0));
        let (a8, _) = compute_a(&simple("8", "0", None), 0.0, &g).unwrap();
        for (x, v) in g.nodes().iter().zip(&a8) {
            assert!((v - x / 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn a_matches_quadrature_oracle() {
        // oracle: composite Simpson with 20000 panels per unit, independent of the GL tables
        let s = simple("2+tanh(x)", "0", None);
        let g = make_grid(8.0, 128).unwrap();
        let (a, _) = compute_a(&s, 0.0, &g).unwrap();
        let f = |x: f64| (2.0 + x.tanh()).powf(-1.0 / 3.0);
        let simpson = |b: f64| {
            let m = 20000 * (b.abs().ceil() as usize).max(1);
            let h = b / (2 * m) as f64;
            let mut acc = f(0.0) + f(b);
            for i in 1..2 * m {
                acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        assert_eq!(a[g.origin_index()], 0.0);
        for j in (0..128).step_by(9) {
            let x = g.nodes()[j];
            assert!((a[j] - simpson(x)).abs() < 1e-9, "x = {x}");
        }
        assert!(a.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn non_coercive_alpha_is_rejected() {
        let g = make_grid(10.0, 64).unwrap();
        let s = simple("tanh(x)", "0", None);
        assert!(matches!(compute_a(&s, 0.0, &g), Err(Error::NonCoercive { .. })));
    }

    #[test]
    fn inversion_examples() {
        let src = make_grid(10.0, 64).unwrap();
        let img = make_grid(6.0, 64).unwrap();
        let m = GaugeMap::new(Arc::new(simple("8", "0", None)), 0.0, src.clone(), img.clone()).unwrap();
        assert!((m.invert(1.0).unwrap() - 2.0).abs() < 1e-12);
        let img1 = make_grid(11.0, 64).unwrap();
        let id = GaugeMap::new(Arc::new(simple("1", "0", None)), 0.0, src.clone(), img1).unwrap();
        for y in [-9.5, -0.3, 0.0, 4.4] {
            assert!((id.invert(y).unwrap() - y).abs() < 1e-12);
        }
        let t = GaugeMap::new(Arc::new(simple("2+tanh(x)", "0", None)), 0.0, src, make_grid(9.0, 64).unwrap()).unwrap();
        let y = t.eval_a(1.37).unwrap();
        assert!((t.invert(y).unwrap() - 1.37).abs() < 1e-9);
        assert!(matches!(t.invert(1e3), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn a_inverse_round_trip_on_nodes() {
        let src = make_grid(12.0, 128).unwrap();
        let s = simple("2+0.5*tanh(x/4)", "0", None);
        let img = image_grid_for(&s, &src, 1.0, 3).unwrap();
        let m = GaugeMap::new(Arc::new(s), 0.0, src.clone(), img).unwrap();
        for (j, &x) in src.nodes().iter().enumerate() {
            assert!((m.invert(m.a[j]).unwrap() - x).abs() < 1e-10);
        }
    }

    #[test]
    fn weight_examples() {
        let g = make_grid(5.0, 64).unwrap();
        let w = compute_h(&simple("1", "0", None), 0.0, &g).unwrap();
        assert!(w.h.iter().all(|h| (h - 1.0).abs() < 1e-15));
        assert!(w.h_x.iter().chain(&w.h_2x).chain(&w.h_3x).all(|v| v.abs() < 1e-15));
        let w = compute_h(&simple("1", "3", Some("3")), 0.0, &g).unwrap();
        for (x, (h, hx)) in g.nodes().iter().zip(w.h.iter().zip(&w.h_x)) {
            assert!((h - x.exp()).abs() < 1e-12 * x.exp());
            assert!((hx / h - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn weight_matches_closed_form_and_spectral_derivatives() {
        // α = 2 + tanh x, β₁ = sech²x / 2 gives ∫₀ˣ β₁/α = (1/2) log((2+tanh x)/2), so h = (2/(2+tanh x))^{1/6}
        let g = make_grid(24.0, 512).unwrap();
        let s = simple("2+tanh(x)", "0.5*sech(x)^2", Some("0.5*sech(x)^2"));
        let w = compute_h(&s, 0.0, &g).unwrap();
        let exact = |x: f64| (2.0 / (2.0 + x.tanh())).powf(1.0 / 6.0);
        for (x, h) in g.nodes().iter().zip(&w.h) {
            assert!((h - exact(*x)).abs() < 1e-8);
        }
        // subtract a tanh ramp that carries the different far-field values, then differentiate spectrally
        let (lo, hi) = (exact(-30.0), exact(30.0));
        let ramp = |x: f64| 0.5 * (hi + lo) + 0.5 * (hi - lo) * x.tanh();
        let ramp_d = |x: f64, k: usize| {
            let th = x.tanh();
            let s2 = 1.0 - th * th;
            let c = 0.5 * (hi - lo);
            match k {
                1 => c * s2,
                2 => -2.0 * c * th * s2,
                _ => c * (-2.0 * s2 * s2 + 4.0 * th * th * s2),
            }
        };
        let residual: Vec<f64> = g.nodes().iter().zip(&w.h).map(|(x, h)| h - ramp(*x)).collect();
        let st = SpectralState::from_real(&g, &residual).unwrap();
        for (k, target) in [(1usize, &w.h_x), (2, &w.h_2x), (3, &w.h_3x)] {
            let d = st.derivative(k as u32).to_real();
            let scale = target.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (j, x) in g.nodes().iter().enumerate() {
                let spectral = d[j] + ramp_d(*x, k);
                assert!((spectral - target[j]).abs() < 1e-6 * scale, "order {k} at x = {x}");
            }
        }
    }

    #[test]
    fn identity_gauge_gives_standard_kdv() {
        let src = make_grid(10.0, 64).unwrap();
        let s = simple("1", "0", None);
        let img = image_grid_for(&s, &src, 1.0, 2).unwrap();
        let m = GaugeMap::new(Arc::new(s), 0.0, src, img).unwrap();
        let tc = transform_coefficients(&m).unwrap();
        for j in 0..tc.grid.len() {
            assert!(tc.b[j].abs() < 1e-15 && tc.c[j].abs() < 1e-15 && tc.d[j].abs() < 1e-15);
            assert!((tc.e[j] - 1.0).abs() < 1e-15 && tc.f[j].abs() < 1e-15);
        }
    }

    #[test]
    fn pure_dissipation_pulls_back() {
        let src = make_grid(10.0, 128).unwrap();
        let s = set_with(CoefficientStrings { alpha: "1", beta: "-sech(x)^2", ..Default::default() }, Some("0"));
        let img = image_grid_for(&s, &src, 1.0, 2).unwrap();
        let m = GaugeMap::new(Arc::new(s), 0.0, src, img.clone()).unwrap();
        let tc = transform_coefficients(&m).unwrap();
        for (j, &y) in img.nodes().iter().enumerate() {
            let sech2 = 1.0 / (y.cosh() * y.cosh());
            assert!((tc.b[j] - sech2).abs() < 1e-12);
            assert!(tc.c[j].abs() < 1e-12 && tc.d[j].abs() < 1e-12 && tc.f[j].abs() < 1e-12);
        }
        assert!(tc.closed_form_mismatch().unwrap() < 1e-12);
        // b_y and b_yy against the closed form
        for (j, &y) in img.nodes().iter().enumerate() {
            let th = y.tanh();
            let s2 = 1.0 - th * th;
            assert!((tc.b_x[j] + 2.0 * s2 * th).abs() < 1e-10);
            assert!((tc.b_2x[j] - (-2.0 * s2 * s2 + 4.0 * th * th * s2)).abs() < 1e-10);
        }
    }

    #[test]
    fn b_derivatives_follow_the_image_coordinate() {
        // oracle: spectral derivative of the sampled b on the image grid
        let src = make_grid(40.0, 512).unwrap();
        let s = set_with(
            CoefficientStrings { alpha: "2+0.5*tanh(x/4)", beta: "-0.3*sech(x/3)^2", epsilon: "-1", ..Default::default() },
            Some("0"),
        );
        let img = image_grid_for(&s, &src, 1.0, 2).unwrap();
        let m = GaugeMap::new(Arc::new(s), 0.0, src, img.clone()).unwrap();
        let tc = transform_coefficients(&m).unwrap();
        let bs = SpectralState::from_real(&img, &tc.b).unwrap();
        let d1 = bs.derivative(1).to_real();
        let d2 = bs.derivative(2).to_real();
        for j in 0..img.len() {
            assert!((d1[j] - tc.b_x[j]).abs() < 1e-8);
            assert!((d2[j] - tc.b_2x[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn dilation_transform_of_gaussian() {
        let src = make_grid(20.0, 256).unwrap();
        let s = simple("8", "0", None);
        let img = image_grid_for(&s, &src, 1.0, 2).unwrap();
        let m = GaugeMap::new(Arc::new(s), 0.0, src.clone(), img.clone()).unwrap();
        let u = SpectralState::from_fn(&src, |x| (-x * x / 4.0).exp());
        let v = forward_transform(&u, &m).unwrap().to_real();
        for (y, val) in img.nodes().iter().zip(&v) {
            let expect = (-(2.0 * y) * (2.0 * y) / 4.0).exp();
            assert!((val - expect).abs() < 1e-10, "y = {y}");
        }
    }

    #[test]
    fn round_trips() {
        let src = make_grid(30.0, 512).unwrap();
        let s = set_with(
            CoefficientStrings {
                alpha: "2+0.5*tanh(x/4)",
                beta: "0.3*sech(x/4)^2-0.2",
                gamma: "0.1*tanh(x)",
                delta: "0.05",
                epsilon: "-1",
            },
            Some("0.3*sech(x/4)^2"),
        );
        let img = image_grid_for(&s, &src, 1.0, 2).unwrap();
        let m = GaugeMap::new(Arc::new(s), 0.0, src.clone(), img.clone()).unwrap();
        let u = SpectralState::from_fn(&src, |x| (-(x - 1.0) * (x - 1.0) / 3.0).exp() * (1.0 + 0.3 * (2.0 * x).sin()));
        let v = forward_transform(&u, &m).unwrap();
        let back = inverse_transform(&v, &m).unwrap();
        assert!(back.sub(&u).unwrap().l2_norm() < 1e-8 * u.l2_norm());
        let w = SpectralState::from_fn(&img, |y| (-(y + 2.0) * (y + 2.0) / 2.0).exp());
        let again = forward_transform(&inverse_transform(&w, &m).unwrap(), &m).unwrap();
        assert!(again.sub(&w).unwrap().l2_norm() < 1e-8 * w.l2_norm());
    }

    #[test]
    fn edge_mass_is_rejected() {
        let src = make_grid(10.0, 64).unwrap();
        let s = simple("1", "0", None);
        let img = image_grid_for(&s, &src, 1.0, 2).unwrap();
        let m = GaugeMap::new(Arc::new(s), 0.0, src.clone(), img).unwrap();
        let u = SpectralState::from_fn(&src, |x| (-(x - 9.5) * (x - 9.5)).exp());
        assert!(matches!(forward_transform(&u, &m), Err(Error::SupportOverflow { .. })));
    }

    #[test]
    fn time_dependent_terms_match_finite_differences() {
        // A_t and h_t/h against centered differences of the tabulated A and log h
        let src = make_grid(16.0, 256).unwrap();
        let s = simple("1.5 + 0.3*tanh(x - t)", "0.2*sech(x+t)^2", Some("0.2*sech(x+t)^2"));
        let img = image_grid_for(&s, &src, 1.0, 5).unwrap();
        let s = Arc::new(s);
        let t = 0.4;
        let dt = 1e-5;
        let m = GaugeMap::new(s.clone(), t, src.clone(), img.clone()).unwrap();
        let mp = GaugeMap::new(s.clone(), t + dt, src.clone(), img.clone()).unwrap();
        let mm = GaugeMap::new(s.clone(), t - dt, src.clone(), img.clone()).unwrap();
        let xs = [-3.0, -0.7, 0.0, 1.1, 5.2];
        let samples = m.transformed_at(&xs.iter().map(|&x| m.eval_a(x).unwrap()).collect::<Vec<_>>()).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            let fd_a = (mp.eval_a(x).unwrap() - mm.eval_a(x).unwrap()) / (2.0 * dt);
            assert!((samples.a_t[i] - fd_a).abs() < 1e-7);
            let lp = mp.weight_at(x).unwrap().0.ln();
            let lm = mm.weight_at(x).unwrap().0.ln();
            assert!((samples.ht_over_h[i] - (lp - lm) / (2.0 * dt)).abs() < 1e-7);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn monotone_bilipschitz_and_nonnegative_b(a in 0.0..0.8f64, w in 1.0..6.0f64, k in 0.0..0.5f64) {
                let alpha = format!("1.5 + {a}*tanh(x/{w})");
                let beta = format!("-{k}*sech(x/{w})^2 - 0.3");
                let s = set_with(CoefficientStrings { alpha: &alpha, beta: &beta, epsilon: "1", ..Default::default() }, None);
                let s = CoefficientSet { alpha0: 0.4, ..s };
                let src = make_grid(20.0, 128).unwrap();
                let img = image_grid_for(&s, &src, 1.0, 2).unwrap();
                let m = GaugeMap::new(Arc::new(s.clone()), 0.0, src.clone(), img).unwrap();
                let lo = s.alpha0.cbrt();
                let hi = 1.0 / lo;
                for j in 1..src.len() {
                    let da = m.a[j] - m.a[j - 1];
                    prop_assert!(da > 0.0);
                    prop_assert!(da >= lo * src.dx() * (1.0 - 1e-12) && da <= hi * src.dx() * (1.0 + 1e-12));
                }
                prop_assert!(m.weight.h.iter().all(|h| *h > 0.0));
                let tc = transform_coefficients(&m).unwrap();
                prop_assert!(tc.min_b() >= -1e-10);
                prop_assert!(tc.closed_form_mismatch().unwrap() < 1e-8);
            }
        }
    }
}
