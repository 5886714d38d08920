//! ODE systems on `[0, 1]`, fixed-grid RK4 and Euler solutions, forward
//! parameter sensitivities and cubic Hermite dense output.

use std::fmt::Debug;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

/// States whose magnitude exceeds this are reported as divergent.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// `dy/dt = F(t, y, θ)` with analytic Jacobians.
///
/// Jacobians are written row-major: `jacobian_state` fills `d × d` with
/// `out[i * d + j] = ∂F_i/∂y_j`, `jacobian_param` fills `d × p` with
/// `out[i * p + k] = ∂F_i/∂θ_k`.
pub trait OdeSystem: Send + Sync + Debug {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn vector_field(&self, t: f64, y: &[f64], theta: &[f64], out: &mut [f64]);
    fn jacobian_state(&self, t: f64, y: &[f64], theta: &[f64], out: &mut [f64]);
    fn jacobian_param(&self, t: f64, y: &[f64], theta: &[f64], out: &mut [f64]);
    fn initial_condition(&self, theta: &[f64], out: &mut [f64]);
}

/// Predator–prey system, `θ = (θ1, θ2, θ3, θ4)`:
/// `y1' = θ1 y1 − θ2 y1 y2`, `y2' = −θ3 y2 + θ4 y1 y2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LotkaVolterra {
    pub initial: [f64; 2],
}

impl Default for LotkaVolterra {
    fn default() -> Self {
        Self { initial: [1.0, 0.5] }
    }
}

impl OdeSystem for LotkaVolterra {
    fn name(&self) -> &str {
        "lotka_volterra"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn param_dim(&self) -> usize {
        4
    }
    fn vector_field(&self, _t: f64, y: &[f64], th: &[f64], out: &mut [f64]) {
        out[0] = th[0] * y[0] - th[1] * y[0] * y[1];
        out[1] = -th[2] * y[1] + th[3] * y[0] * y[1];
    }
    fn jacobian_state(&self, _t: f64, y: &[f64], th: &[f64], out: &mut [f64]) {
        out[0] = th[0] - th[1] * y[1];
        out[1] = -th[1] * y[0];
        out[2] = th[3] * y[1];
        out[3] = -th[2] + th[3] * y[0];
    }
    fn jacobian_param(&self, _t: f64, y: &[f64], _th: &[f64], out: &mut [f64]) {
        let yy = y[0] * y[1];
        out[..8].copy_from_slice(&[y[0], -yy, 0.0, 0.0, 0.0, 0.0, -y[1], yy]);
    }
    fn initial_condition(&self, _theta: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.initial);
    }
}

/// `y' = θ y`, `y(0) = 1`; solution `e^{θ t}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Exponential;

impl OdeSystem for Exponential {
    fn name(&self) -> &str {
        "exponential"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn vector_field(&self, _t: f64, y: &[f64], th: &[f64], out: &mut [f64]) {
        out[0] = th[0] * y[0];
    }
    fn jacobian_state(&self, _t: f64, _y: &[f64], th: &[f64], out: &mut [f64]) {
        out[0] = th[0];
    }
    fn jacobian_param(&self, _t: f64, y: &[f64], _th: &[f64], out: &mut [f64]) {
        out[0] = y[0];
    }
    fn initial_condition(&self, _theta: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
}

/// `y' = θ1 y (1 − y/θ2)`, `y(0) = 0.1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    pub initial: f64,
}

impl Default for Logistic {
    fn default() -> Self {
        Self { initial: 0.1 }
    }
}

impl OdeSystem for Logistic {
    fn name(&self) -> &str {
        "logistic"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn vector_field(&self, _t: f64, y: &[f64], th: &[f64], out: &mut [f64]) {
        out[0] = th[0] * y[0] * (1.0 - y[0] / th[1]);
    }
    fn jacobian_state(&self, _t: f64, y: &[f64], th: &[f64], out: &mut [f64]) {
        out[0] = th[0] * (1.0 - 2.0 * y[0] / th[1]);
    }
    fn jacobian_param(&self, _t: f64, y: &[f64], th: &[f64], out: &mut [f64]) {
        out[0] = y[0] * (1.0 - y[0] / th[1]);
        out[1] = th[0] * y[0] * y[0] / (th[1] * th[1]);
    }
    fn initial_condition(&self, _theta: &[f64], out: &mut [f64]) {
        out[0] = self.initial;
    }
}

/// Built-in systems by name.
pub fn system_by_name(name: &str) -> Result<Arc<dyn OdeSystem>> {
    match name {
        "lotka_volterra" => Ok(Arc::new(LotkaVolterra::default())),
        "exponential" => Ok(Arc::new(Exponential)),
        "logistic" => Ok(Arc::new(Logistic::default())),
        other => Err(Error::Config(format!(
            "unknown system '{other}' (expected lotka_volterra, exponential or logistic)"
        ))),
    }
}

static SOLVE_COUNT: AtomicU64 = AtomicU64::new(0);

/// Number of grid solves performed by this process, on any thread.
pub fn solve_count() -> u64 {
    SOLVE_COUNT.load(Ordering::Relaxed)
}

fn bump_solve_count() {
    SOLVE_COUNT.fetch_add(1, Ordering::Relaxed);
}

/// A grid solution on `r` equispaced nodes of `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Rk4Path {
    theta: Vec<f64>,
    r: usize,
    d: usize,
    p: usize,
    h: f64,
    nodes: Vec<f64>,
    /// `r × d`
    values: Vec<f64>,
    /// `F(a_k, y_k, θ)`, `r × d`
    slopes: Vec<f64>,
    /// `∂y_k/∂θ`, `r × d × p`
    sens: Option<Vec<f64>>,
    /// `∂F(a_k, y_k(θ), θ)/∂θ`, `r × d × p`
    slope_sens: Option<Vec<f64>>,
}

fn grid_nodes(r: usize) -> Vec<f64> {
    let last = (r - 1) as f64;
    (0..r).map(|k| k as f64 / last).collect()
}

fn check_state(y: &[f64], node: usize) -> Result<()> {
    if y.iter().all(|v| v.is_finite() && v.abs() <= OVERFLOW_GUARD) {
        Ok(())
    } else {
        Err(Error::Divergence { node })
    }
}

fn validate(system: &dyn OdeSystem, theta: &[f64], r: usize) -> Result<()> {
    if r < 2 {
        return Err(Error::Argument(format!("grid count must be at least 2, got {r}")));
    }
    if theta.len() != system.param_dim() {
        return Err(Error::Argument(format!(
            "θ has length {} but {} expects {}",
            theta.len(),
            system.name(),
            system.param_dim()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("θ must be finite".into()));
    }
    Ok(())
}

/// Classical four-stage Runge–Kutta on `r` grid nodes.
pub fn rk4_solve(system: &dyn OdeSystem, theta: &[f64], r: usize) -> Result<Rk4Path> {
    validate(system, theta, r)?;
    bump_solve_count();
    let d = system.state_dim();
    let h = 1.0 / (r - 1) as f64;
    let nodes = grid_nodes(r);
    let mut values = vec![0.0; r * d];
    let mut slopes = vec![0.0; r * d];
    system.initial_condition(theta, &mut values[..d]);
    check_state(&values[..d], 0)?;

    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for k in 0..r - 1 {
        let a = nodes[k];
        let (done, rest) = values.split_at_mut((k + 1) * d);
        let y = &done[k * d..];
        let k1 = &mut slopes[k * d..(k + 1) * d];
        system.vector_field(a, y, theta, k1);
        for i in 0..d {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        system.vector_field(a + 0.5 * h, &tmp, theta, &mut k2);
        for i in 0..d {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        system.vector_field(a + 0.5 * h, &tmp, theta, &mut k3);
        for i in 0..d {
            tmp[i] = y[i] + h * k3[i];
        }
        system.vector_field(a + h, &tmp, theta, &mut k4);
        let next = &mut rest[..d];
        for i in 0..d {
            next[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_state(next, k + 1)?;
    }
    system.vector_field(1.0, &values[(r - 1) * d..], theta, &mut slopes[(r - 1) * d..]);
    check_state(&slopes[(r - 1) * d..], r - 1)?;

    Ok(Rk4Path { theta: theta.to_vec(), r, d, p: system.param_dim(), h, nodes, values, slopes, sens: None, slope_sens: None })
}

/// Forward Euler on the same grid; slopes are cached so dense output works too.
pub fn euler_solve(system: &dyn OdeSystem, theta: &[f64], r: usize) -> Result<Rk4Path> {
    validate(system, theta, r)?;
    bump_solve_count();
    let d = system.state_dim();
    let h = 1.0 / (r - 1) as f64;
    let nodes = grid_nodes(r);
    let mut values = vec![0.0; r * d];
    let mut slopes = vec![0.0; r * d];
    system.initial_condition(theta, &mut values[..d]);
    check_state(&values[..d], 0)?;
    for k in 0..r {
        let (done, rest) = values.split_at_mut((k + 1) * d);
        let y = &done[k * d..];
        let slope = &mut slopes[k * d..(k + 1) * d];
        system.vector_field(nodes[k], y, theta, slope);
        if k + 1 < r {
            let next = &mut rest[..d];
            for i in 0..d {
                next[i] = y[i] + h * slope[i];
            }
            check_state(next, k + 1)?;
        }
    }
    Ok(Rk4Path { theta: theta.to_vec(), r, d, p: system.param_dim(), h, nodes, values, slopes, sens: None, slope_sens: None })
}

/// `out = J_y · S + J_θ` for row-major `J_y` (d×d), `S` and `J_θ` (d×p).
fn variational(jy: &[f64], s: &[f64], jp: &[f64], d: usize, p: usize, out: &mut [f64]) {
    for i in 0..d {
        for k in 0..p {
            let mut acc = jp[i * p + k];
            for j in 0..d {
                acc += jy[i * d + j] * s[j * p + k];
            }
            out[i * p + k] = acc;
        }
    }
}

/// RK4 on the state augmented with `S = ∂y/∂θ`, `S' = J_y S + J_θ`, using the
/// same four stages. The sensitivities are the exact θ-derivatives of the
/// discrete RK4 map. Initial conditions are assumed independent of θ.
pub fn rk4_solve_with_sensitivities(system: &dyn OdeSystem, theta: &[f64], r: usize) -> Result<Rk4Path> {
    validate(system, theta, r)?;
    bump_solve_count();
    let d = system.state_dim();
    let p = system.param_dim();
    let dp = d * p;
    let h = 1.0 / (r - 1) as f64;
    let nodes = grid_nodes(r);
    let mut values = vec![0.0; r * d];
    let mut slopes = vec![0.0; r * d];
    let mut sens = vec![0.0; r * dp];
    let mut slope_sens = vec![0.0; r * dp];
    system.initial_condition(theta, &mut values[..d]);
    check_state(&values[..d], 0)?;

    let mut jy = vec![0.0; d * d];
    let mut jp = vec![0.0; dp];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut ytmp = vec![0.0; d];
    let mut stmp = vec![0.0; dp];
    let mut s2 = vec![0.0; dp];
    let mut s3 = vec![0.0; dp];
    let mut s4 = vec![0.0; dp];

    for k in 0..r - 1 {
        let a = nodes[k];
        let y: Vec<f64> = values[k * d..(k + 1) * d].to_vec();
        let s: Vec<f64> = sens[k * dp..(k + 1) * dp].to_vec();

        let k1 = &mut slopes[k * d..(k + 1) * d];
        let s1 = &mut slope_sens[k * dp..(k + 1) * dp];
        system.vector_field(a, &y, theta, k1);
        system.jacobian_state(a, &y, theta, &mut jy);
        system.jacobian_param(a, &y, theta, &mut jp);
        variational(&jy, &s, &jp, d, p, s1);

        for i in 0..d {
            ytmp[i] = y[i] + 0.5 * h * k1[i];
        }
        for i in 0..dp {
            stmp[i] = s[i] + 0.5 * h * s1[i];
        }
        let tm = a + 0.5 * h;
        system.vector_field(tm, &ytmp, theta, &mut k2);
        system.jacobian_state(tm, &ytmp, theta, &mut jy);
        system.jacobian_param(tm, &ytmp, theta, &mut jp);
        variational(&jy, &stmp, &jp, d, p, &mut s2);

        for i in 0..d {
            ytmp[i] = y[i] + 0.5 * h * k2[i];
        }
        for i in 0..dp {
            stmp[i] = s[i] + 0.5 * h * s2[i];
        }
        system.vector_field(tm, &ytmp, theta, &mut k3);
        system.jacobian_state(tm, &ytmp, theta, &mut jy);
        system.jacobian_param(tm, &ytmp, theta, &mut jp);
        variational(&jy, &stmp, &jp, d, p, &mut s3);

        for i in 0..d {
            ytmp[i] = y[i] + h * k3[i];
        }
        for i in 0..dp {
            stmp[i] = s[i] + h * s3[i];
        }
        system.vector_field(a + h, &ytmp, theta, &mut k4);
        system.jacobian_state(a + h, &ytmp, theta, &mut jy);
        system.jacobian_param(a + h, &ytmp, theta, &mut jp);
        variational(&jy, &stmp, &jp, d, p, &mut s4);

        for i in 0..d {
            values[(k + 1) * d + i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        for i in 0..dp {
            sens[(k + 1) * dp + i] = s[i] + h / 6.0 * (s1[i] + 2.0 * s2[i] + 2.0 * s3[i] + s4[i]);
        }
        check_state(&values[(k + 1) * d..(k + 2) * d], k + 1)?;
        check_state(&sens[(k + 1) * dp..(k + 2) * dp], k + 1)?;
    }
    let last = r - 1;
    let y = values[last * d..].to_vec();
    let s = sens[last * dp..].to_vec();
    system.vector_field(1.0, &y, theta, &mut slopes[last * d..]);
    system.jacobian_state(1.0, &y, theta, &mut jy);
    system.jacobian_param(1.0, &y, theta, &mut jp);
    variational(&jy, &s, &jp, d, p, &mut slope_sens[last * dp..]);
    check_state(&slopes[last * d..], last)?;
    check_state(&slope_sens[last * dp..], last)?;

    Ok(Rk4Path {
        theta: theta.to_vec(),
        r,
        d,
        p,
        h,
        nodes,
        values,
        slopes,
        sens: Some(sens),
        slope_sens: Some(slope_sens),
    })
}

/// Where a point falls on the grid and its cubic Hermite weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridLocation {
    /// The point is grid node `k`.
    Node(usize),
    /// Interior of interval `[a_k, a_{k+1}]` with weights on
    /// `(y_k, h·m_k, y_{k+1}, h·m_{k+1})`.
    Interval { k: usize, w: [f64; 4] },
}

/// Locate `t` on an `r`-node grid of `[0, 1]`.
pub fn locate(r: usize, t: f64) -> Result<GridLocation> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain { value: t });
    }
    let last = (r - 1) as f64;
    let x = t * last;
    let k = (x.floor() as usize).min(r - 2);
    for node in [k, k + 1] {
        if t == node as f64 / last {
            return Ok(GridLocation::Node(node));
        }
    }
    let s = (x - k as f64).clamp(0.0, 1.0);
    let s2 = s * s;
    let s3 = s2 * s;
    let h = 1.0 / last;
    Ok(GridLocation::Interval {
        k,
        w: [2.0 * s3 - 3.0 * s2 + 1.0, (s3 - 2.0 * s2 + s) * h, -2.0 * s3 + 3.0 * s2, (s3 - s2) * h],
    })
}

/// Precomputed grid locations for a fixed set of evaluation points.
#[derive(Debug, Clone)]
pub struct HermiteStencil {
    r: usize,
    locations: Vec<GridLocation>,
}

impl HermiteStencil {
    pub fn new(r: usize, points: &[f64]) -> Result<Self> {
        if r < 2 {
            return Err(Error::Argument(format!("grid count must be at least 2, got {r}")));
        }
        let locations = points.iter().map(|&t| locate(r, t)).collect::<Result<Vec<_>>>()?;
        Ok(Self { r, locations })
    }

    pub fn grid_count(&self) -> usize {
        self.r
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

impl Rk4Path {
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn grid_count(&self) -> usize {
        self.r
    }
    pub fn step(&self) -> f64 {
        self.h
    }
    pub fn state_dim(&self) -> usize {
        self.d
    }
    pub fn param_dim(&self) -> usize {
        self.p
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    /// Stored value at node `k`.
    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.d..(k + 1) * self.d]
    }
    pub fn slope(&self, k: usize) -> &[f64] {
        &self.slopes[k * self.d..(k + 1) * self.d]
    }
    /// `∂y_k/∂θ` at node `k`, row-major `d × p`.
    pub fn sensitivity(&self, k: usize) -> Option<&[f64]> {
        let dp = self.d * self.p;
        self.sens.as_ref().map(|s| &s[k * dp..(k + 1) * dp])
    }
    pub fn has_sensitivities(&self) -> bool {
        self.sens.is_some()
    }

    fn hermite_into(&self, loc: GridLocation, out: &mut [f64]) {
        let d = self.d;
        match loc {
            GridLocation::Node(k) => out[..d].copy_from_slice(self.value(k)),
            GridLocation::Interval { k, w } => {
                let (y0, y1) = (&self.values[k * d..], &self.values[(k + 1) * d..]);
                let (m0, m1) = (&self.slopes[k * d..], &self.slopes[(k + 1) * d..]);
                for i in 0..d {
                    out[i] = w[0] * y0[i] + w[1] * m0[i] + w[2] * y1[i] + w[3] * m1[i];
                }
            }
        }
    }

    fn hermite_sens_into(&self, loc: GridLocation, out: &mut [f64]) {
        let dp = self.d * self.p;
        let (sens, slope_sens) = match (&self.sens, &self.slope_sens) {
            (Some(s), Some(m)) => (s, m),
            _ => return,
        };
        match loc {
            GridLocation::Node(k) => out[..dp].copy_from_slice(&sens[k * dp..(k + 1) * dp]),
            GridLocation::Interval { k, w } => {
                let (s0, s1) = (&sens[k * dp..], &sens[(k + 1) * dp..]);
                let (m0, m1) = (&slope_sens[k * dp..], &slope_sens[(k + 1) * dp..]);
                for i in 0..dp {
                    out[i] = w[0] * s0[i] + w[1] * m0[i] + w[2] * s1[i] + w[3] * m1[i];
                }
            }
        }
    }

    /// Visit every stencil point with its interpolated state (`d`) and, when
    /// `with_sens` is set, its interpolated sensitivities (`d × p`).
    pub fn for_each_stencil_point<F>(&self, stencil: &HermiteStencil, with_sens: bool, mut f: F) -> Result<()>
    where
        F: FnMut(usize, &[f64], &[f64]),
    {
        if stencil.r != self.r {
            return Err(Error::Argument(format!(
                "stencil built for {} grid nodes, path has {}",
                stencil.r, self.r
            )));
        }
        if with_sens && self.sens.is_none() {
            return Err(Error::Argument("path was solved without sensitivities".into()));
        }
        let mut v = vec![0.0; self.d];
        let mut s = vec![0.0; if with_sens { self.d * self.p } else { 0 }];
        for (i, loc) in stencil.locations.iter().enumerate() {
            self.hermite_into(*loc, &mut v);
            if with_sens {
                self.hermite_sens_into(*loc, &mut s);
            }
            f(i, &v, &s);
        }
        Ok(())
    }

    /// Cubic Hermite interpolation of the grid solution at `t`.
    pub fn dense_eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d];
        self.hermite_into(locate(self.r, t)?, &mut out);
        Ok(out)
    }

    /// Hermite interpolation of the sensitivities at `t`, row-major `d × p`.
    pub fn dense_sensitivity(&self, t: f64) -> Result<Vec<f64>> {
        if self.sens.is_none() {
            return Err(Error::Argument("path was solved without sensitivities".into()));
        }
        let mut out = vec![0.0; self.d * self.p];
        self.hermite_sens_into(locate(self.r, t)?, &mut out);
        Ok(out)
    }

    /// Evaluate at every stencil point; `values` is `len × d`, `sens` (when
    /// requested and available) is `len × d × p`.
    pub fn eval_stencil(&self, stencil: &HermiteStencil, values: &mut [f64], sens: Option<&mut [f64]>) -> Result<()> {
        if stencil.r != self.r {
            return Err(Error::Argument(format!(
                "stencil built for {} grid nodes, path has {}",
                stencil.r, self.r
            )));
        }
        let d = self.d;
        for (i, loc) in stencil.locations.iter().enumerate() {
            self.hermite_into(*loc, &mut values[i * d..(i + 1) * d]);
        }
        if let Some(out) = sens {
            if self.sens.is_none() {
                return Err(Error::Argument("path was solved without sensitivities".into()));
            }
            let dp = d * self.p;
            for (i, loc) in stencil.locations.iter().enumerate() {
                self.hermite_sens_into(*loc, &mut out[i * dp..(i + 1) * dp]);
            }
        }
        Ok(())
    }
}
