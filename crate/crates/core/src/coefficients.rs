//! Coefficient fields of the variable-coefficient equation, the anti-diffusion split
//! `β = β₁ + β₂`, and a numerical checker for the structural hypotheses on a
//! truncated domain.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{self, diff, ExprRef, Func, Var};
use crate::quadrature::CumulativeTable;
use crate::spectral::Grid;

/// Highest cached `x`-derivative order.
pub const MAX_DX_ORDER: usize = 4;
/// Highest cached `t`-derivative order.
pub const MAX_DT_ORDER: usize = 1;

/// A closed-form field of `(t, x)` with cached symbolic partial derivatives.
#[derive(Debug, Clone)]
pub struct CoefficientExpr {
    source: String,
    derivs: [[ExprRef; MAX_DX_ORDER + 1]; MAX_DT_ORDER + 1],
    depends_on_t: bool,
}

impl CoefficientExpr {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self::from_expr(expr::parse(text)?, text.trim().to_string()))
    }

    pub fn from_expr(tree: ExprRef, source: String) -> Self {
        let mut row0: Vec<ExprRef> = vec![tree.clone()];
        for k in 1..=MAX_DX_ORDER {
            row0.push(diff(&row0[k - 1], Var::X));
        }
        let row1: Vec<ExprRef> = row0.iter().map(|e| diff(e, Var::T)).collect();
        let depends_on_t = tree.depends_on(Var::T);
        let to_arr = |v: Vec<ExprRef>| -> [ExprRef; MAX_DX_ORDER + 1] { v.try_into().expect("fixed length") };
        CoefficientExpr { source, derivs: [to_arr(row0), to_arr(row1)], depends_on_t }
    }

    pub fn constant(c: f64) -> Self {
        Self::from_expr(expr::constant(c), format!("{c}"))
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn tree(&self) -> &ExprRef {
        &self.derivs[0][0]
    }

    pub fn is_time_dependent(&self) -> bool {
        self.depends_on_t
    }

    pub fn constant_value(&self) -> Option<f64> {
        self.tree().as_constant()
    }

    pub fn needs_pole_screen(&self) -> bool {
        self.tree().needs_pole_screen()
    }

    /// Symbolic derivative `∂_t^{dt} ∂_x^{dx}` of the field.
    pub fn derivative(&self, dt_order: usize, dx_order: usize) -> Result<&ExprRef> {
        if dt_order > MAX_DT_ORDER || dx_order > MAX_DX_ORDER {
            return Err(Error::OrderOutOfRange { dt_order, dx_order });
        }
        Ok(&self.derivs[dt_order][dx_order])
    }

    pub fn eval(&self, t: f64, x: f64, dt_order: usize, dx_order: usize) -> Result<f64> {
        Ok(self.derivative(dt_order, dx_order)?.eval(t, x))
    }

    /// Value of the field itself.
    pub fn value(&self, t: f64, x: f64) -> f64 {
        self.derivs[0][0].eval(t, x)
    }

    /// `∂_x^k` of the field (`k ≤ 4`).
    pub fn dx(&self, k: usize, t: f64, x: f64) -> f64 {
        self.derivs[0][k].eval(t, x)
    }

    /// `∂_t ∂_x^k` of the field (`k ≤ 4`).
    pub fn dt_dx(&self, k: usize, t: f64, x: f64) -> f64 {
        self.derivs[1][k].eval(t, x)
    }

    /// Evaluate every cached derivative at the given points and fail on the first
    /// non-finite value.
    pub fn screen(&self, times: &[f64], xs: &[f64]) -> Result<()> {
        for row in &self.derivs {
            for e in row {
                if e.as_constant().is_some_and(f64::is_finite) {
                    continue;
                }
                for &t in times {
                    for &x in xs {
                        if !e.eval(t, x).is_finite() {
                            return Err(Error::NotFinite { expr: self.source.clone(), t, x });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for CoefficientExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

/// How to split `β` into an anti-diffusive part `β₁` and a dissipative part `β₂ ≤ 0`.
#[derive(Debug, Clone)]
pub enum SplitStrategy {
    /// `β₁` given; `β₂` given or defaulted to `β - β₁`.
    UserProvided { beta1: CoefficientExpr, beta2: Option<CoefficientExpr> },
    /// `β₁ = softplus(κβ)/κ`, `β₂ = β - β₁`.
    Softplus { kappa: f64 },
}

/// Default sharpness of the softplus split.
pub const DEFAULT_SOFTPLUS_KAPPA: f64 = 10.0;

/// Compute `(β₁, β₂)` for a strategy.
pub fn split_beta(beta: &CoefficientExpr, strategy: &SplitStrategy) -> Result<(CoefficientExpr, CoefficientExpr)> {
    match strategy {
        SplitStrategy::UserProvided { beta1, beta2 } => {
            let b2 = match beta2 {
                Some(b) => b.clone(),
                None => CoefficientExpr::from_expr(
                    expr::sub(beta.tree().clone(), beta1.tree().clone()),
                    format!("({}) - ({})", beta.source(), beta1.source()),
                ),
            };
            Ok((beta1.clone(), b2))
        }
        SplitStrategy::Softplus { kappa } => {
            if !(kappa.is_finite() && *kappa > 0.0) {
                return Err(Error::Invalid(format!("softplus kappa must be positive, got {kappa}")));
            }
            let inner = expr::mul(expr::constant(*kappa), beta.tree().clone());
            let b1 = expr::mul(expr::constant(1.0 / kappa), expr::call(Func::Softplus, inner));
            let b2 = expr::sub(beta.tree().clone(), b1.clone());
            Ok((
                CoefficientExpr::from_expr(b1, format!("softplus({kappa}*({}))/{kappa}", beta.source())),
                CoefficientExpr::from_expr(b2, format!("({}) - softplus({kappa}*({}))/{kappa}", beta.source(), beta.source())),
            ))
        }
    }
}

/// The five coefficients, the split of `β`, and the claimed coercivity constant.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub alpha: CoefficientExpr,
    pub beta: CoefficientExpr,
    pub gamma: CoefficientExpr,
    pub delta: CoefficientExpr,
    pub epsilon: CoefficientExpr,
    pub beta1: CoefficientExpr,
    pub beta2: CoefficientExpr,
    pub alpha0: f64,
}

/// Expression strings for a [`CoefficientSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientStrings<'a> {
    pub alpha: &'a str,
    pub beta: &'a str,
    pub gamma: &'a str,
    pub delta: &'a str,
    pub epsilon: &'a str,
}

impl Default for CoefficientStrings<'_> {
    fn default() -> Self {
        CoefficientStrings { alpha: "1", beta: "0", gamma: "0", delta: "0", epsilon: "0" }
    }
}

impl CoefficientSet {
    pub fn new(
        alpha: CoefficientExpr,
        beta: CoefficientExpr,
        gamma: CoefficientExpr,
        delta: CoefficientExpr,
        epsilon: CoefficientExpr,
        split: &SplitStrategy,
        alpha0: f64,
    ) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0 <= 1.0) {
            return Err(Error::Invalid(format!("alpha0 must lie in (0, 1], got {alpha0}")));
        }
        let (beta1, beta2) = split_beta(&beta, split)?;
        Ok(CoefficientSet { alpha, beta, gamma, delta, epsilon, beta1, beta2, alpha0 })
    }

    /// Parse all coefficients; `split` of `None` means `β₁ = 0`.
    pub fn parse(strings: &CoefficientStrings<'_>, split: Option<&SplitStrategy>, alpha0: f64) -> Result<Self> {
        let default_split = SplitStrategy::UserProvided { beta1: CoefficientExpr::constant(0.0), beta2: None };
        Self::new(
            CoefficientExpr::parse(strings.alpha)?,
            CoefficientExpr::parse(strings.beta)?,
            CoefficientExpr::parse(strings.gamma)?,
            CoefficientExpr::parse(strings.delta)?,
            CoefficientExpr::parse(strings.epsilon)?,
            split.unwrap_or(&default_split),
            alpha0,
        )
    }

    /// `α ≡ 1`, all other coefficients zero except `ε`.
    pub fn constant_kdv(epsilon: f64) -> Self {
        let split = SplitStrategy::UserProvided { beta1: CoefficientExpr::constant(0.0), beta2: None };
        Self::new(
            CoefficientExpr::constant(1.0),
            CoefficientExpr::constant(0.0),
            CoefficientExpr::constant(0.0),
            CoefficientExpr::constant(0.0),
            CoefficientExpr::constant(epsilon),
            &split,
            1.0,
        )
        .expect("valid constant set")
    }

    pub fn fields(&self) -> [(&'static str, &CoefficientExpr); 7] {
        [
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("delta", &self.delta),
            ("epsilon", &self.epsilon),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
        ]
    }

    pub fn is_time_dependent(&self) -> bool {
        self.fields().iter().any(|(_, c)| c.is_time_dependent())
    }

    /// Screen every field and derivative for non-finite values on the sample set.
    pub fn screen(&self, times: &[f64], xs: &[f64]) -> Result<()> {
        self.fields().iter().try_for_each(|(_, c)| c.screen(times, xs))
    }
}

/// Side of the truncated domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Result for one hypothesis on the truncated domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisEntry {
    pub id: &'static str,
    pub description: &'static str,
    pub passed: bool,
    /// Extremal value of the monitored quantity.
    pub extremal_value: f64,
    pub at_t: f64,
    pub at_x: f64,
    /// Side at which the monitored quantity is still growing at the domain edge.
    pub boundary_trend: Option<Side>,
    pub integrand_identically_zero: bool,
    pub note: String,
}

/// Per-hypothesis verdicts from [`check_hypotheses`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub half_width: f64,
    pub t_final: f64,
    pub t_samples: usize,
    pub entries: Vec<HypothesisEntry>,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn entry(&self, id: &str) -> Option<&HypothesisEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

impl fmt::Display for HypothesisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "hypothesis check on [-{0}, {0}) x [0, {1}] ({2} time samples)", self.half_width, self.t_final, self.t_samples)?;
        for e in &self.entries {
            let trend = match e.boundary_trend {
                Some(Side::Left) => " unbounded-trend(left)",
                Some(Side::Right) => " unbounded-trend(right)",
                None => "",
            };
            let zero = if e.integrand_identically_zero { " integrand=0" } else { "" };
            writeln!(
                f,
                "  {:<8} {:<4} value={:.6e} at (t={:.4}, x={:.4}){}{}  {}{}",
                e.id,
                if e.passed { "PASS" } else { "FAIL" },
                e.extremal_value,
                e.at_t,
                e.at_x,
                trend,
                zero,
                e.description,
                if e.note.is_empty() { String::new() } else { format!(" [{}]", e.note) }
            )?;
        }
        Ok(())
    }
}

/// Relative size of the edge excess that counts as a boundary trend.
const TREND_TOL: f64 = 1e-6;

/// Sup-type profile `S(x) = max_t q(t, x)` with the time of the maximum.
struct Profile {
    xs: Vec<f64>,
    vals: Vec<f64>,
    times: Vec<f64>,
}

impl Profile {
    fn new(xs: Vec<f64>) -> Self {
        let n = xs.len();
        Profile { xs, vals: vec![f64::NEG_INFINITY; n], times: vec![0.0; n] }
    }

    fn update(&mut self, t: f64, q: &[f64]) {
        for (j, &v) in q.iter().enumerate() {
            if v > self.vals[j] {
                self.vals[j] = v;
                self.times[j] = t;
            }
        }
    }

    fn argmax(&self) -> usize {
        let mut best = 0;
        for j in 1..self.vals.len() {
            if self.vals[j] > self.vals[best] {
                best = j;
            }
        }
        best
    }

    /// Side where the edge value exceeds everything in the inner 90% and is still
    /// increasing outward.
    fn trend(&self) -> Option<Side> {
        let half = self.xs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let cut = 0.9 * half;
        let inner = self
            .xs
            .iter()
            .zip(&self.vals)
            .filter(|(x, _)| x.abs() <= cut)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let n = self.vals.len();
        let check = |edge: usize, next: usize| {
            let e = self.vals[edge];
            e > inner + TREND_TOL * (1.0 + e.abs()) && e > self.vals[next]
        };
        if check(0, 1) {
            Some(Side::Left)
        } else if check(n - 1, n - 2) {
            Some(Side::Right)
        } else {
            None
        }
    }

    fn entry(&self, id: &'static str, description: &'static str, zero: bool, note: String) -> HypothesisEntry {
        let j = self.argmax();
        let trend = if zero { None } else { self.trend() };
        HypothesisEntry {
            id,
            description,
            passed: trend.is_none() && self.vals[j].is_finite(),
            extremal_value: self.vals[j],
            at_t: self.times[j],
            at_x: self.xs[j],
            boundary_trend: trend,
            integrand_identically_zero: zero,
            note,
        }
    }
}

/// Sample times `0, T/(m-1), …, T` (`t = 0` only when `m ≤ 1`).
pub fn sample_times(t_final: f64, t_samples: usize) -> Vec<f64> {
    if t_samples <= 1 {
        vec![0.0]
    } else {
        (0..t_samples).map(|i| t_final * i as f64 / (t_samples - 1) as f64).collect()
    }
}

/// Anchored primitive `∫₀ˣ f` on the grid nodes.
pub fn primitive_on_grid(grid: &Grid, f: &impl Fn(f64) -> f64) -> Vec<f64> {
    let half = grid.num_points() / 2;
    CumulativeTable::build(f, grid.dx(), half, half - 1).values().to_vec()
}

/// Check the coercivity, time-regularity, and split hypotheses on `grid × [0, T]`.
///
/// Sup-type quantities are certified only on the truncated domain; when the monitored
/// quantity is still growing at an edge the hypothesis is reported as failed with a
/// boundary-trend flag.
pub fn check_hypotheses(set: &CoefficientSet, grid: &Grid, t_final: f64, t_samples: usize) -> HypothesisReport {
    let times = sample_times(t_final, t_samples);
    let xs = grid.nodes().to_vec();
    let n = xs.len();

    // coercivity
    let mut lo = (f64::INFINITY, 0.0, 0.0);
    let mut hi = (f64::NEG_INFINITY, 0.0, 0.0);
    for &t in &times {
        for &x in &xs {
            let a = set.alpha.value(t, x);
            if !(a >= lo.0) {
                lo = (a, t, x);
            }
            if !(a <= hi.0) {
                hi = (a, t, x);
            }
        }
    }
    let a0 = set.alpha0;
    let lower_ok = lo.0 >= a0;
    let upper_ok = hi.0 <= 1.0 / a0;
    let worst = if !lower_ok || upper_ok { lo } else { hi };
    let h1 = HypothesisEntry {
        id: "H1",
        description: "alpha0 <= alpha <= 1/alpha0",
        passed: lower_ok && upper_ok,
        extremal_value: worst.0,
        at_t: worst.1,
        at_x: worst.2,
        boundary_trend: None,
        integrand_identically_zero: false,
        note: format!("min alpha {:.6e}, max alpha {:.6e}, alpha0 {a0}", lo.0, hi.0),
    };

    // time regularity of the straightening map
    let alpha_static = !set.alpha.is_time_dependent();
    let mut p2 = Profile::new(xs.clone());
    if !alpha_static {
        for &t in &times {
            let f = |x: f64| -set.alpha.dt_dx(0, t, x) * set.alpha.value(t, x).powf(-4.0 / 3.0) / 3.0;
            let q: Vec<f64> = primitive_on_grid(grid, &f).iter().map(|v| v.abs()).collect();
            p2.update(t, &q);
        }
    } else {
        p2.update(0.0, &vec![0.0; n]);
    }
    let h2 = p2.entry(
        "H2",
        "sup |int_0^x d_t(alpha^(-1/3))|",
        alpha_static,
        if alpha_static {
            String::new()
        } else {
            "evaluated as -(1/3) int_0^x alpha^(-4/3) alpha_t".into()
        },
    );

    // split validity
    let mut split_worst = (f64::NEG_INFINITY, 0.0, 0.0);
    let mut sum_err = (0.0f64, 0.0, 0.0);
    for &t in &times {
        for &x in &xs {
            let b2 = set.beta2.value(t, x);
            if b2 > split_worst.0 {
                split_worst = (b2, t, x);
            }
            let b = set.beta.value(t, x);
            let e = (set.beta1.value(t, x) + b2 - b).abs();
            if e > sum_err.0 {
                sum_err = (e, t, x);
            }
        }
    }
    let scale = xs.iter().map(|&x| set.beta.value(0.0, x).abs()).fold(1.0f64, f64::max);
    let split_ok = split_worst.0 <= 1e-12 * scale && sum_err.0 <= 1e-10 * scale;
    let h3_split = HypothesisEntry {
        id: "H3-split",
        description: "beta = beta1 + beta2 with beta2 <= 0",
        passed: split_ok,
        extremal_value: split_worst.0,
        at_t: split_worst.1,
        at_x: split_worst.2,
        boundary_trend: None,
        integrand_identically_zero: false,
        note: format!("max |beta1 + beta2 - beta| = {:.3e}", sum_err.0),
    };

    let ratio_static = !set.alpha.is_time_dependent() && !set.beta1.is_time_dependent();
    let beta1_zero = set.beta1.constant_value() == Some(0.0);
    let mut p_time = Profile::new(xs.clone());
    let mut p_prim = Profile::new(xs.clone());
    let mut p_abs = Profile::new(xs.clone());
    for &t in &times {
        let r = |x: f64| set.beta1.value(t, x) / set.alpha.value(t, x);
        let prim = primitive_on_grid(grid, &r);
        p_prim.update(t, &prim.iter().map(|v| -v).collect::<Vec<_>>());
        p_abs.update(t, &prim.iter().map(|v| v.abs()).collect::<Vec<_>>());
        if !ratio_static {
            let rt = |x: f64| {
                let a = set.alpha.value(t, x);
                set.beta1.dt_dx(0, t, x) / a - set.beta1.value(t, x) * set.alpha.dt_dx(0, t, x) / (a * a)
            };
            let q: Vec<f64> = primitive_on_grid(grid, &rt).iter().map(|v| v.abs()).collect();
            p_time.update(t, &q);
        }
    }
    if ratio_static {
        p_time.update(0.0, &vec![0.0; n]);
    }
    let h3_time = p_time.entry("H3-time", "sup |int_0^x d_t(beta1/alpha)|", ratio_static, String::new());
    let h3_prim = p_prim.entry("H3", "sup -int_0^x beta1/alpha", beta1_zero, String::new());
    let h4 = p_abs.entry(
        "H4",
        "sup |int_0^x beta1/alpha| (gauge weight bounded above and below)",
        beta1_zero,
        String::new(),
    );

    HypothesisReport {
        half_width: grid.half_width(),
        t_final,
        t_samples: times.len(),
        entries: vec![h1, h2, h3_split, h3_time, h3_prim, h4],
    }
}
