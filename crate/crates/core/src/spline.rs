//! B-spline bases on clamped equispaced knots and the conjugate
//! Gaussian–inverse-gamma posterior of the spline regression model.
//!
//! Given `σ²`, the coefficients have prior `N(0, σ² n² k⁻¹ I)`, so the
//! posterior precision (in units of `σ⁻²`) is `A = XᵀX + (k/n²) I`. All `d`
//! response components share the design matrix and one `σ²`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// B-spline basis of order `m` (degree `m − 1`) with `k − 1` equispaced
/// interior knots `1/k, …, (k−1)/k` and boundary knots repeated `m` times.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    order: usize,
    intervals: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    pub fn new(order: usize, intervals: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::Argument(format!("spline order must be >= 1, got {order}")));
        }
        if intervals < 2 {
            return Err(Error::Argument(format!("knot count k_n must be >= 2, got {intervals}")));
        }
        let mut knots = vec![0.0; order];
        knots.extend((1..intervals).map(|i| i as f64 / intervals as f64));
        knots.extend(std::iter::repeat_n(1.0, order));
        Ok(Self { order, intervals, knots })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `k_n`: number of knot intervals (interior knot count plus one).
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.order..self.order + self.intervals - 1]
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// `J = k_n + m − 1`.
    pub fn dim(&self) -> usize {
        self.intervals + self.order - 1
    }

    fn check_t(t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(Error::Domain { value: t })
        }
    }

    /// Knot span `i` with `knots[i] <= t < knots[i+1]`; `t = 1` maps to the last span.
    fn span(&self, t: f64) -> usize {
        let (lo, hi) = (self.order - 1, self.dim() - 1);
        if t >= self.knots[hi + 1] {
            return hi;
        }
        // partition_point over the knot slice restricted to valid spans
        let idx = self.knots[lo + 1..=hi + 1].partition_point(|&u| u <= t);
        lo + idx
    }

    /// The `m` possibly-nonzero basis values at `t` and the index of the first.
    pub fn eval_nonzero(&self, t: f64) -> Result<(usize, Vec<f64>)> {
        Self::check_t(t)?;
        let p = self.order - 1;
        let i = self.span(t);
        let u = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[i + 1 - j];
            right[j] = u[i + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((i - p, n))
    }

    /// All `J` basis values at `t`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let (start, vals) = self.eval_nonzero(t)?;
        let mut out = vec![0.0; self.dim()];
        out[start..start + vals.len()].copy_from_slice(&vals);
        Ok(out)
    }

    /// `q`-th derivative of every basis function at `t`, for `q <= m − 2`.
    pub fn eval_deriv(&self, t: f64, q: usize) -> Result<Vec<f64>> {
        if q == 0 {
            return self.eval(t);
        }
        if q + 2 > self.order {
            return Err(Error::Argument(format!(
                "derivative order {q} needs spline order >= {}, basis has {}",
                q + 2,
                self.order
            )));
        }
        Self::check_t(t)?;
        let u = &self.knots;
        let total = u.len();
        let base_order = self.order - q;
        // Order-`base_order` functions on the full knot vector, via de Boor on the same span.
        let i = self.span(t);
        let mut lower = vec![0.0; total - base_order];
        {
            let p = base_order - 1;
            let mut n = vec![0.0; p + 1];
            let mut left = vec![0.0; p + 1];
            let mut right = vec![0.0; p + 1];
            n[0] = 1.0;
            for j in 1..=p {
                left[j] = t - u[i + 1 - j];
                right[j] = u[i + j] - t;
                let mut saved = 0.0;
                for r in 0..j {
                    let temp = n[r] / (right[r + 1] + left[j - r]);
                    n[r] = saved + right[r + 1] * temp;
                    saved = left[j - r] * temp;
                }
                n[j] = saved;
            }
            for (r, v) in n.iter().enumerate() {
                lower[i - p + r] = *v;
            }
        }
        // D N_{j,o} = (o−1) [N_{j,o−1}/(u_{j+o−1}−u_j) − N_{j+1,o−1}/(u_{j+o}−u_{j+1})]
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        for o in base_order + 1..=self.order {
            let len = total - o;
            let scale = (o - 1) as f64;
            lower = (0..len)
                .map(|j| scale * (ratio(lower[j], u[j + o - 1] - u[j]) - ratio(lower[j + 1], u[j + o] - u[j + 1])))
                .collect();
        }
        Ok(lower)
    }

    /// `n × J` matrix with rows `N(x_i)ᵀ`.
    pub fn design_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(x.len(), self.dim());
        for (row, &t) in x.iter().enumerate() {
            let (start, vals) = self.eval_nonzero(t)?;
            for (c, v) in vals.into_iter().enumerate() {
                out[(row, start + c)] = v;
            }
        }
        Ok(out)
    }

    /// `n × J` matrix of `q`-th derivatives.
    pub fn derivative_matrix(&self, x: &[f64], q: usize) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(x.len(), self.dim());
        for (row, &t) in x.iter().enumerate() {
            for (c, v) in self.eval_deriv(t, q)?.into_iter().enumerate() {
                out[(row, c)] = v;
            }
        }
        Ok(out)
    }
}

/// Free-function constructor matching the basis rule `(m, k_n)`.
pub fn make_basis(order: usize, intervals: usize) -> Result<SplineBasis> {
    SplineBasis::new(order, intervals)
}

/// `k_n = round(c · n^{exponent})`, never below 2.
pub fn knot_count(constant: f64, exponent: f64, n: usize) -> usize {
    ((constant * (n as f64).powf(exponent)).round() as usize).max(2)
}

/// Multiplier and exponent for the projection spline (`m = 3`, `k_n ∝ n^{1/5}`).
pub const RKTB_KNOT_RULE: (f64, f64) = (5.18, 0.2);
/// Multiplier and exponent for the derivative-matching spline (`m = 5`, `k_n ∝ n^{1/9}`).
pub const TS_KNOT_RULE: (f64, f64) = (10.1, 1.0 / 9.0);

/// Spline prior and knot settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplineConfig {
    pub order: usize,
    /// Fixed `k_n`; when absent it follows `knot_constant · n^{knot_exponent}`.
    pub knots: Option<usize>,
    pub knot_constant: f64,
    pub knot_exponent: f64,
}

impl Default for SplineConfig {
    fn default() -> Self {
        Self::rktb()
    }
}

impl SplineConfig {
    pub fn rktb() -> Self {
        Self { order: 3, knots: None, knot_constant: RKTB_KNOT_RULE.0, knot_exponent: RKTB_KNOT_RULE.1 }
    }

    pub fn ts() -> Self {
        Self { order: 5, knots: None, knot_constant: TS_KNOT_RULE.0, knot_exponent: TS_KNOT_RULE.1 }
    }

    pub fn knots_for(&self, n: usize) -> usize {
        self.knots.unwrap_or_else(|| knot_count(self.knot_constant, self.knot_exponent, n))
    }

    pub fn basis_for(&self, n: usize) -> Result<SplineBasis> {
        SplineBasis::new(self.order, self.knots_for(n))
    }
}

/// One draw `(β, σ²)`; `β` is `J × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveDraw {
    pub beta: DMatrix<f64>,
    pub sigma2: f64,
}

/// Conjugate posterior of `(β, σ²)`.
#[derive(Debug, Clone)]
pub struct CurvePosterior {
    basis: SplineBasis,
    n: usize,
    d: usize,
    design: DMatrix<f64>,
    precision: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `Lᵀ` where `A = L Lᵀ`.
    chol_upper: DMatrix<f64>,
    mean: DMatrix<f64>,
    shape: f64,
    scale: f64,
    jitter: f64,
}

impl CurvePosterior {
    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }
    pub fn sample_size(&self) -> usize {
        self.n
    }
    pub fn response_dim(&self) -> usize {
        self.d
    }
    pub fn design_matrix(&self) -> &DMatrix<f64> {
        &self.design
    }
    /// `A = XᵀX + (k/n²) I` (plus jitter if factorization needed it).
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
    /// Posterior mean coefficients, `J × d`.
    pub fn mean_coef(&self) -> &DMatrix<f64> {
        &self.mean
    }
    pub fn sigma2_shape(&self) -> f64 {
        self.shape
    }
    pub fn sigma2_scale(&self) -> f64 {
        self.scale
    }
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `A⁻¹`.
    pub fn precision_inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Posterior-mean curve with `σ²` at its inverse-gamma mean (or mode when the mean is undefined).
    pub fn mean_draw(&self) -> CurveDraw {
        let sigma2 = if self.shape > 1.0 { self.scale / (self.shape - 1.0) } else { self.scale / (self.shape + 1.0) };
        CurveDraw { beta: self.mean.clone(), sigma2 }
    }

    /// `σ² ~ IG(shape, scale)`, then each column `β_c ~ N(mean_c, σ² A⁻¹)`.
    pub fn sample(&self, stream: &mut RngStream) -> CurveDraw {
        let sigma2 = stream.inverse_gamma(self.shape, self.scale);
        let sd = sigma2.sqrt();
        let j = self.basis.dim();
        let mut beta = self.mean.clone();
        for c in 0..self.d {
            let z = DVector::from_iterator(j, (0..j).map(|_| stream.normal()));
            let w = self.chol_upper.solve_upper_triangular(&z).expect("triangular factor is nonsingular");
            for r in 0..j {
                beta[(r, c)] += sd * w[r];
            }
        }
        CurveDraw { beta, sigma2 }
    }

    /// Log posterior density of `(β, σ²)` from the stored factors.
    pub fn log_density(&self, beta: &DMatrix<f64>, sigma2: f64) -> f64 {
        let j = self.basis.dim() as f64;
        let log_det_a: f64 = 2.0 * self.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut lp = 0.0;
        for c in 0..self.d {
            let diff = beta.column(c) - self.mean.column(c);
            let quad = (diff.transpose() * &self.precision * &diff)[(0, 0)];
            lp += -0.5 * j * (2.0 * std::f64::consts::PI * sigma2).ln() + 0.5 * log_det_a - quad / (2.0 * sigma2);
        }
        let (a, b) = (self.shape, self.scale);
        lp += a * b.ln() - ln_gamma(a) - (a + 1.0) * sigma2.ln() - b / sigma2;
        lp
    }
}

/// Lanczos approximation of `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Fit the conjugate posterior for responses `y` (`n × d`) observed at `x`.
pub fn fit_conjugate(basis: &SplineBasis, x: &[f64], y: &DMatrix<f64>, prior_shape: f64, prior_scale: f64) -> Result<CurvePosterior> {
    let n = x.len();
    if n == 0 || y.nrows() != n || y.ncols() == 0 {
        return Err(Error::Data(format!("need n >= 1 responses matching {n} design points, got {}x{}", y.nrows(), y.ncols())));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in spline data".into()));
    }
    if !(prior_shape > 0.0 && prior_scale > 0.0) {
        return Err(Error::Argument("inverse-gamma prior needs positive shape and scale".into()));
    }
    let d = y.ncols();
    let j = basis.dim();
    if n < j {
        log::warn!("spline fit with n = {n} observations for {j} basis functions");
    }
    let design = basis.design_matrix(x)?;
    let xtx = design.transpose() * &design;
    let ridge = basis.intervals() as f64 / (n as f64 * n as f64);
    let mut precision = xtx + DMatrix::identity(j, j) * ridge;
    let mut jitter = 0.0;
    let chol = match Cholesky::new(precision.clone()) {
        Some(c) => c,
        None => {
            jitter = 1e-10;
            log::warn!("spline precision not positive definite, adding {jitter} jitter");
            precision += DMatrix::identity(j, j) * jitter;
            Cholesky::new(precision.clone()).ok_or_else(|| Error::Singular("spline precision matrix".into()))?
        }
    };
    let xty = design.transpose() * y;
    let mean = chol.solve(&xty);
    let mut scale = prior_scale;
    for c in 0..d {
        let yy = y.column(c).dot(&y.column(c));
        let fitted = xty.column(c).dot(&mean.column(c));
        scale += 0.5 * (yy - fitted);
    }
    let shape = (n * d) as f64 / 2.0 + prior_shape;
    let chol_upper = chol.l().transpose();
    Ok(CurvePosterior { basis: basis.clone(), n, d, design, precision, chol, chol_upper, mean, shape, scale, jitter })
}

/// Free-function form of [`CurvePosterior::sample`].
pub fn sample_curve(posterior: &CurvePosterior, stream: &mut RngStream) -> CurveDraw {
    posterior.sample(stream)
}

/// Evaluate `βᵀ N(t)` (one value per response component).
pub fn eval_curve(basis: &SplineBasis, beta: &DMatrix<f64>, t: f64) -> Result<Vec<f64>> {
    let (start, vals) = basis.eval_nonzero(t)?;
    Ok((0..beta.ncols())
        .map(|c| vals.iter().enumerate().map(|(r, v)| v * beta[(start + r, c)]).sum())
        .collect())
}
