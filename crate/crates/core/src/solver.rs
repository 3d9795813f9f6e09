//! Characteristic-grid integrator for u_tt = u_xx + F(u), with F the
//! exponential source, its capped truncations F_n, or zero.
//!
//! The scheme is three-level leapfrog at CFL = 1:
//!   u^{n+1}_i = u^n_{i+1} + u^n_{i-1} - u^{n-1}_i + h^2 F(u^n_i),
//! exact for the linear part in one dimension. The valid region shrinks by
//! one cell per side per level (light-cone truncation), and cells whose
//! value crosses the blow-up threshold stop feeding the stencil, so the
//! invalid region grows along characteristics exactly like the complement
//! of the influence domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavefield::{Grid, InitialData, WaveField};

/// Capped source family: F_n(u) = e^u for u <= n, e^n for u >= n.
///
/// The written form caps at u = n rather than bridging on [n, n+1]: any
/// nondecreasing bridge with F_n(n) = F_n(n+1) = e^n is constant, so the
/// constant bridge is the one choice satisfying both F_n nondecreasing and
/// F_n <= min(e^u, e^{n+1}).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub n: u32,
}

impl Truncation {
    pub fn new(n: u32) -> Self {
        Truncation { n }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        let n = self.n as f64;
        if u <= n {
            u.exp()
        } else {
            n.exp()
        }
    }
}

/// Source term of the equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Source {
    Exp,
    Truncated(Truncation),
    Zero,
}

impl Source {
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Source::Exp => u.exp(),
            Source::Truncated(t) => t.eval(u),
            Source::Zero => 0.0,
        }
    }
}

/// Forward/backward light cone with apex (apex_x, apex_t) and slope in (0,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeSpec {
    pub apex_x: f64,
    pub apex_t: f64,
    pub slope: f64,
    pub orientation: ConeOrientation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeOrientation {
    Forward,
    Backward,
}

impl ConeSpec {
    pub fn backward(apex_x: f64, apex_t: f64, slope: f64) -> Self {
        ConeSpec { apex_x, apex_t, slope, orientation: ConeOrientation::Backward }
    }

    pub fn forward(apex_x: f64, apex_t: f64, slope: f64) -> Self {
        ConeSpec { apex_x, apex_t, slope, orientation: ConeOrientation::Forward }
    }

    pub fn contains(&self, x: f64, t: f64) -> bool {
        if t < 0.0 {
            return false;
        }
        match self.orientation {
            ConeOrientation::Backward => self.slope * (x - self.apex_x).abs() <= self.apex_t - t,
            ConeOrientation::Forward => self.slope * (x - self.apex_x).abs() <= t - self.apex_t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    ReachedTEnd,
    ThresholdExceeded,
    DomainExhausted,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub field: WaveField,
    pub stopped_reason: StopReason,
    pub max_level: usize,
    /// First (level, index) whose value exceeded u_max, if any.
    pub first_crossing: Option<(usize, usize)>,
    pub u_max: f64,
}

/// Level 0 and the second-order Taylor start for level 1:
/// u^1 = (u0(x+h) + u0(x-h))/2 + h u1(x) + (h^2/2) F(u0(x)).
pub fn first_level(data: &InitialData, source: Source, grid: &Grid) -> Result<WaveField> {
    let u0 = data.sample_u0(grid)?;
    let u1 = data.sample_u1(grid)?;
    let h = grid.h;
    let nx = grid.nx;
    let mut field = WaveField::new(grid.clone(), 0.0);
    field.push_level(u0.clone(), vec![true; nx]);
    let mut lvl1 = vec![0.0; nx];
    let mut valid1 = vec![false; nx];
    for i in 1..nx - 1 {
        lvl1[i] = 0.5 * (u0[i + 1] + u0[i - 1]) + h * u1[i] + 0.5 * h * h * source.eval(u0[i]);
        valid1[i] = true;
    }
    field.push_level(lvl1, valid1);
    Ok(field)
}

/// Write level n+1 of `field` from levels n and n-1. Returns the number of
/// valid cells in the new level. A parent cell above `u_max` does not feed
/// the stencil, so its children are invalid.
pub fn step_leapfrog(field: &mut WaveField, source: Source, u_max: f64) -> Result<usize> {
    let n = field.n_levels();
    if n < 2 {
        return Err(Error::Other("need two levels to step".into()));
    }
    let nx = field.grid.nx;
    let h = field.grid.h;
    let h2 = h * h;
    let mut vals = vec![0.0; nx];
    let mut valid = vec![false; nx];
    let mut count = 0usize;
    for i in 1..nx - 1 {
        let ok = field.is_valid(n - 1, i - 1)
            && field.is_valid(n - 1, i + 1)
            && field.is_valid(n - 1, i)
            && field.is_valid(n - 2, i)
            && field.value(n - 1, i - 1) <= u_max
            && field.value(n - 1, i + 1) <= u_max
            && field.value(n - 1, i) <= u_max;
        if !ok {
            continue;
        }
        let v = field.value(n - 1, i + 1) + field.value(n - 1, i - 1) - field.value(n - 2, i)
            + h2 * source.eval(field.value(n - 1, i));
        if !v.is_finite() {
            return Err(Error::NumericalBlowThrough { level: n });
        }
        vals[i] = v;
        valid[i] = true;
        count += 1;
    }
    field.push_level(vals, valid);
    Ok(count)
}

/// Advance until `t_end`, spatial exhaustion, or (when every remaining cell
/// has crossed the threshold) blow-through of the whole domain. Cells that
/// cross `u_max` are recorded but stop feeding the stencil.
pub fn solve(
    data: &InitialData,
    source: Source,
    grid: &Grid,
    u_max: f64,
    t_end: f64,
) -> Result<SolveOutcome> {
    let sup_u0 = data
        .sample_u0(grid)?
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !(u_max > sup_u0 + 1.0) {
        return Err(Error::InvalidConfig(format!(
            "u_max = {u_max} must exceed sup u0 + 1 = {}",
            sup_u0 + 1.0
        )));
    }
    let mut field = first_level(data, source, grid)?;
    let mut first_crossing = None;
    let check_crossing = |field: &WaveField, level: usize, first: &mut Option<(usize, usize)>| {
        if first.is_none() {
            for i in 0..field.grid.nx {
                if field.is_valid(level, i) && field.value(level, i) > u_max {
                    *first = Some((level, i));
                    break;
                }
            }
        }
    };
    check_crossing(&field, 0, &mut first_crossing);
    check_crossing(&field, 1, &mut first_crossing);
    let mut reason = StopReason::ReachedTEnd;
    while field.t(field.n_levels() - 1) < t_end - 1e-12 && field.n_levels() < field.grid.nt_max {
        let count = step_leapfrog(&mut field, source, u_max)?;
        let level = field.n_levels() - 1;
        check_crossing(&field, level, &mut first_crossing);
        if count == 0 {
            reason = if first_crossing.is_some() {
                StopReason::ThresholdExceeded
            } else {
                StopReason::DomainExhausted
            };
            break;
        }
    }
    if reason == StopReason::ReachedTEnd && first_crossing.is_some() {
        reason = StopReason::ThresholdExceeded;
    }
    let max_level = field.n_levels() - 1;
    Ok(SolveOutcome { field, stopped_reason: reason, max_level, first_crossing, u_max })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeMonotonicityReport {
    pub apex_x: f64,
    pub apex_t: f64,
    /// max over backward cone of u(y,s) - u(apex)
    pub c_minus: f64,
    /// max over forward cone (within D_R) of u(apex) - u(y,s)
    pub c_plus: f64,
}

/// Measure the constants of the cone-variation bound at a grid apex:
/// u <= u(apex) + C on the backward cone, u >= u(apex) - C on the forward
/// cone restricted to D_R.
pub fn check_cone_monotonicity(
    outcome: &SolveOutcome,
    apex_x: f64,
    apex_t: f64,
    r: f64,
) -> Result<ConeMonotonicityReport> {
    let field = &outcome.field;
    let grid = &field.grid;
    let i0 = grid.index_of(apex_x).ok_or(Error::InvalidApex(apex_x, apex_t))?;
    let n0 = ((apex_t - field.t0) / grid.h).round() as isize;
    if n0 < 0 || n0 as usize >= field.n_levels() || !field.is_valid(n0 as usize, i0) {
        return Err(Error::InvalidApex(apex_x, apex_t));
    }
    let n0 = n0 as usize;
    let u_apex = field.value(n0, i0);
    let mut c_minus = f64::NEG_INFINITY;
    let mut c_plus = f64::NEG_INFINITY;
    for n in 0..field.n_levels() {
        let t = field.t(n);
        for i in 0..grid.nx {
            if !field.is_valid(n, i) {
                continue;
            }
            let x = grid.x(i);
            let u = field.value(n, i);
            if n <= n0 && (x - apex_x).abs() <= apex_t - t + 1e-12 {
                c_minus = c_minus.max(u - u_apex);
            }
            if n >= n0 && (x - apex_x).abs() <= t - apex_t + 1e-12 && x.abs() <= r - t + 1e-12 {
                c_plus = c_plus.max(u_apex - u);
            }
        }
    }
    Ok(ConeMonotonicityReport { apex_x, apex_t, c_minus, c_plus })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LimitClass {
    /// Point below the estimated blow-up curve: u_n converges to u.
    Converging,
    /// Point above the curve: u_n grows without bound in n.
    Diverging,
    /// Point within one grid cell of the curve.
    IndeterminateBand,
}

#[derive(Debug, Clone, Serialize)]
pub struct TruncationLimitReport {
    pub x: f64,
    pub t: f64,
    pub values: Vec<(u32, f64)>,
    pub class: LimitClass,
    /// Reference value u(x,t) from the uncapped solve, when below the curve.
    pub reference: Option<f64>,
}

/// Evaluate the truncated-family values u_n(x,t) for each requested level n
/// and classify the point against the estimated blow-up time `t_gamma`.
pub fn truncation_limit(
    data: &InitialData,
    grid: &Grid,
    x: f64,
    t: f64,
    levels: &[u32],
    t_gamma: f64,
    u_max_reference: f64,
) -> Result<TruncationLimitReport> {
    if grid.index_of(x).is_none() {
        return Err(Error::OutsideDomain(x, t));
    }
    let h = grid.h;
    let mut values = Vec::with_capacity(levels.len());
    for &n in levels {
        // The capped problem is globally defined, so no threshold applies:
        // past the curve u_n grows like e^n t^2 and must stay valid.
        let out = solve(data, Source::Truncated(Truncation::new(n)), grid, f64::INFINITY, t + 2.0 * h)?;
        let v = out
            .field
            .interp(x, t)
            .ok_or(Error::OutsideDomain(x, t))?;
        values.push((n, v));
    }
    let class = if (t - t_gamma).abs() <= h {
        LimitClass::IndeterminateBand
    } else if t < t_gamma {
        LimitClass::Converging
    } else {
        LimitClass::Diverging
    };
    let reference = if class == LimitClass::Converging {
        let out = solve(data, Source::Exp, grid, u_max_reference, t + 2.0 * h)?;
        out.field.interp(x, t)
    } else {
        None
    };
    Ok(TruncationLimitReport { x, t, values, class, reference })
}
