//! Similarity variables: w(y,s) = u(x,t) + 2 log(T-t) with
//! y = (x-a)/(T-t), s = -log(T-t); the transformed-equation residual, the
//! Lyapunov functional
//!   E(w(s)) = int (1/2 ws^2 + 1/2 (1-y^2) wy^2 - e^w + 2w) dy,
//! and its dissipation identity.
//!
//! Integrals are evaluated on the margin-adjusted interval [-1+m, 1-m]
//! because the grid cannot resolve y = +-1; the flux recorded in the trace
//! is the exact boundary term of the identity on that interval, so the
//! defect measures pure discretization error and vanishes under refinement.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::wavefield::WaveField;

/// Rescaled field w_{a,T} on a uniform (y, s) grid.
#[derive(Debug, Clone)]
pub struct SimilarityFrame {
    pub a: f64,
    pub t_scale: f64,
    pub s_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub y_margin: f64,
    /// Row-major (s level, y index).
    pub w: Vec<f64>,
    pub ws: Vec<f64>,
    pub wy: Vec<f64>,
    /// True when the requested s range was cut at the resolution limit.
    pub truncated: bool,
    /// Grid spacing of the source field.
    pub h_field: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyTrace {
    pub s: Vec<f64>,
    pub e: Vec<f64>,
    pub flux: Vec<f64>,
    /// Centered-difference defect of dE/ds + flux at each interior level.
    pub residual: Vec<f64>,
    pub y_margin: f64,
}

impl SimilarityFrame {
    #[inline]
    pub fn idx(&self, si: usize, yi: usize) -> usize {
        si * self.y_grid.len() + yi
    }

    pub fn n_s(&self) -> usize {
        self.s_grid.len()
    }

    pub fn n_y(&self) -> usize {
        self.y_grid.len()
    }

    pub fn ds(&self) -> f64 {
        self.s_grid[1] - self.s_grid[0]
    }

    pub fn dy(&self) -> f64 {
        self.y_grid[1] - self.y_grid[0]
    }

    /// Nearest s level.
    pub fn s_index(&self, s: f64) -> Option<usize> {
        if self.s_grid.is_empty() {
            return None;
        }
        let ds = self.ds();
        let f = (s - self.s_grid[0]) / ds;
        let i = f.round();
        if i < -0.5 || i > self.n_s() as f64 - 0.5 {
            None
        } else {
            Some(i.max(0.0) as usize)
        }
    }
}

pub struct FrameConfig {
    pub y_margin: f64,
    pub n_y: usize,
    pub levels_per_unit_s: usize,
    /// Largest requested s; the frame is truncated where e^{-s} < 2h.
    pub s_max: Option<f64>,
    /// Smallest t used (must leave room for the time stencil).
    pub t_start: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig { y_margin: 0.02, n_y: 101, levels_per_unit_s: 40, s_max: None, t_start: 0.0 }
    }
}

/// Field derivatives by centered differences, valid where the stencil is.
struct FieldDerivs<'a> {
    field: &'a WaveField,
}

impl FieldDerivs<'_> {
    fn ut(&self, n: usize, i: usize) -> Option<f64> {
        if n == 0 || n + 1 >= self.field.n_levels() {
            return None;
        }
        if !(self.field.is_valid(n - 1, i) && self.field.is_valid(n + 1, i)) {
            return None;
        }
        Some((self.field.value(n + 1, i) - self.field.value(n - 1, i)) / (2.0 * self.field.grid.h))
    }

    fn ux(&self, n: usize, i: usize) -> Option<f64> {
        if i == 0 || i + 1 >= self.field.grid.nx {
            return None;
        }
        if !(self.field.is_valid(n, i - 1) && self.field.is_valid(n, i + 1)) {
            return None;
        }
        Some((self.field.value(n, i + 1) - self.field.value(n, i - 1)) / (2.0 * self.field.grid.h))
    }

    fn interp(&self, get: impl Fn(usize, usize) -> Option<f64>, x: f64, t: f64) -> Option<f64> {
        let grid = &self.field.grid;
        let fx = (x - grid.x_min) / grid.h;
        let ft = (t - self.field.t0) / grid.h;
        if fx < 0.0 || ft < 0.0 {
            return None;
        }
        let i = (fx.floor() as usize).min(grid.nx.checked_sub(2)?);
        let n = (ft.floor() as usize).min(self.field.n_levels().checked_sub(2)?);
        let ax = fx - i as f64;
        let at = ft - n as f64;
        let v00 = get(n, i)?;
        let v01 = get(n, i + 1)?;
        let v10 = get(n + 1, i)?;
        let v11 = get(n + 1, i + 1)?;
        Some(v00 * (1.0 - ax) * (1.0 - at) + v01 * ax * (1.0 - at) + v10 * (1.0 - ax) * at + v11 * ax * at)
    }
}

/// Build the similarity frame for center `a` and scaling time `t_scale`.
/// Derivatives are chain-ruled from interpolated centered differences on
/// the (x,t) grid, not differenced after interpolation.
pub fn to_similarity(field: &WaveField, a: f64, t_scale: f64, cfg: &FrameConfig) -> Result<SimilarityFrame> {
    let h = field.grid.h;
    if cfg.n_y < 3 {
        return Err(Error::InvalidConfig("n_y must be >= 3".into()));
    }
    let t_hi_resolution = t_scale - 2.0 * h;
    let s_resolution_cap = -(t_scale - t_hi_resolution).ln();
    let (s_max, truncated) = match cfg.s_max {
        Some(req) if req > s_resolution_cap => (s_resolution_cap, true),
        Some(req) => (req, false),
        None => (s_resolution_cap, false),
    };
    let t_start = cfg.t_start.max(field.t0 + h);
    if t_scale - t_start <= 0.0 {
        return Err(Error::InvalidConfig(format!("t_start {t_start} must be below T {t_scale}")));
    }
    let s_min = -(t_scale - t_start).ln();
    if s_max <= s_min {
        return Err(Error::InvalidConfig(format!("empty s range [{s_min}, {s_max}]")));
    }
    let n_s = ((s_max - s_min) * cfg.levels_per_unit_s as f64).ceil() as usize + 1;
    let ds = (s_max - s_min) / (n_s - 1) as f64;
    let y_lo = -1.0 + cfg.y_margin;
    let y_hi = 1.0 - cfg.y_margin;
    let y_grid: Vec<f64> = (0..cfg.n_y)
        .map(|j| y_lo + (y_hi - y_lo) * j as f64 / (cfg.n_y - 1) as f64)
        .collect();
    let derivs = FieldDerivs { field };
    let mut rows: Vec<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::with_capacity(n_s);
    for k in 0..n_s {
        let s = s_min + k as f64 * ds;
        let lam = (-s).exp(); // T - t
        let t = t_scale - lam;
        let mut w_row = Vec::with_capacity(cfg.n_y);
        let mut ws_row = Vec::with_capacity(cfg.n_y);
        let mut wy_row = Vec::with_capacity(cfg.n_y);
        let mut ok = true;
        for &y in &y_grid {
            let x = a + y * lam;
            let (u, ut, ux) = match (
                field.interp(x, t),
                derivs.interp(|n, i| derivs.ut(n, i), x, t),
                derivs.interp(|n, i| derivs.ux(n, i), x, t),
            ) {
                (Some(u), Some(ut), Some(ux)) => (u, ut, ux),
                _ => {
                    ok = false;
                    break;
                }
            };
            w_row.push(u - 2.0 * s);
            ws_row.push(lam * (ut - y * ux) - 2.0);
            wy_row.push(lam * ux);
        }
        if ok {
            rows.push((s, w_row, ws_row, wy_row));
        } else if !rows.is_empty() {
            // Keep the contiguous resolved block ending at the cut.
            break;
        }
    }
    if rows.len() < 3 {
        return Err(Error::InvalidConfig("fewer than 3 resolved s levels".into()));
    }
    let mut frame = SimilarityFrame {
        a,
        t_scale,
        s_grid: rows.iter().map(|r| r.0).collect(),
        y_grid,
        y_margin: cfg.y_margin,
        w: Vec::new(),
        ws: Vec::new(),
        wy: Vec::new(),
        truncated,
        h_field: h,
    };
    for (_, w_row, ws_row, wy_row) in rows {
        frame.w.extend(w_row);
        frame.ws.extend(ws_row);
        frame.wy.extend(wy_row);
    }
    Ok(frame)
}

/// Reconstruct u(x,t) at one frame node: u = w + 2s.
pub fn reconstruct_u(frame: &SimilarityFrame, si: usize, yi: usize) -> (f64, f64, f64) {
    let s = frame.s_grid[si];
    let lam = (-s).exp();
    let t = frame.t_scale - lam;
    let x = frame.a + frame.y_grid[yi] * lam;
    (x, t, frame.w[frame.idx(si, yi)] + 2.0 * s)
}

/// Max interior defect of
/// w_ss - d_y((1-y^2) w_y) - e^w + 2 = -w_s - 2 y w_{ys}.
pub fn equation_residual(frame: &SimilarityFrame) -> f64 {
    residual_field(frame)
        .into_iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn residual_field(frame: &SimilarityFrame) -> Vec<f64> {
    let (n_s, n_y) = (frame.n_s(), frame.n_y());
    let (ds, dy) = (frame.ds(), frame.dy());
    let mut out = Vec::new();
    for k in 1..n_s - 1 {
        for j in 1..n_y - 1 {
            let y = frame.y_grid[j];
            let w = frame.w[frame.idx(k, j)];
            let w_ss = (frame.w[frame.idx(k + 1, j)] - 2.0 * w + frame.w[frame.idx(k - 1, j)]) / (ds * ds);
            let g = |jj: usize| (1.0 - frame.y_grid[jj] * frame.y_grid[jj]) * frame.wy[frame.idx(k, jj)];
            let dyg = (g(j + 1) - g(j - 1)) / (2.0 * dy);
            let ws = frame.ws[frame.idx(k, j)];
            let wys = (frame.ws[frame.idx(k, j + 1)] - frame.ws[frame.idx(k, j - 1)]) / (2.0 * dy);
            out.push(w_ss - dyg - w.exp() + 2.0 + ws + 2.0 * y * wys);
        }
    }
    out
}

/// Lyapunov functional at the s level nearest to `s`, by composite
/// trapezoid over the margin-adjusted y interval.
pub fn lyapunov(frame: &SimilarityFrame, s: f64) -> Result<f64> {
    let k = frame.s_index(s).ok_or(Error::InvalidConfig(format!("s = {s} outside frame")))?;
    Ok(lyapunov_at(frame, k))
}

pub fn lyapunov_at(frame: &SimilarityFrame, k: usize) -> f64 {
    let n_y = frame.n_y();
    let dy = frame.dy();
    let integrand = |j: usize| -> f64 {
        let idx = frame.idx(k, j);
        let y = frame.y_grid[j];
        0.5 * frame.ws[idx] * frame.ws[idx] + 0.5 * (1.0 - y * y) * frame.wy[idx] * frame.wy[idx]
            - frame.w[idx].exp()
            + 2.0 * frame.w[idx]
    };
    let mut acc = 0.0;
    for j in 0..n_y - 1 {
        acc += 0.5 * dy * (integrand(j) + integrand(j + 1));
    }
    acc
}

/// Exact boundary term of the dissipation identity on [-b, b], b = 1 - m:
/// -dE/ds = b (ws(b)^2 + ws(-b)^2) - (1-b^2) (ws wy (b) - ws wy (-b)).
fn boundary_flux(frame: &SimilarityFrame, k: usize) -> f64 {
    let n_y = frame.n_y();
    let b = frame.y_grid[n_y - 1];
    let (i_lo, i_hi) = (frame.idx(k, 0), frame.idx(k, n_y - 1));
    let ws_lo = frame.ws[i_lo];
    let ws_hi = frame.ws[i_hi];
    let wy_lo = frame.wy[i_lo];
    let wy_hi = frame.wy[i_hi];
    b * (ws_hi * ws_hi + ws_lo * ws_lo) - (1.0 - b * b) * (ws_hi * wy_hi - ws_lo * wy_lo)
}

/// Energy, flux and local identity residual at every s level of the frame.
pub fn energy_trace(frame: &SimilarityFrame) -> EnergyTrace {
    let n_s = frame.n_s();
    let ds = frame.ds();
    let e: Vec<f64> = (0..n_s).map(|k| lyapunov_at(frame, k)).collect();
    let flux: Vec<f64> = (0..n_s).map(|k| boundary_flux(frame, k)).collect();
    let mut residual = vec![0.0; n_s];
    for k in 1..n_s - 1 {
        let dedt = (e[k + 1] - e[k - 1]) / (2.0 * ds);
        residual[k] = dedt + flux[k];
    }
    EnergyTrace {
        s: frame.s_grid.clone(),
        e,
        flux,
        residual,
        y_margin: frame.y_margin,
    }
}

/// Identity defect |E(s2) - E(s1) + int_{s1}^{s2} flux ds| (trapezoid in s).
pub fn dissipation_identity(trace: &EnergyTrace, s1: f64, s2: f64) -> Result<f64> {
    let (k1, k2) = trace_indices(trace, s1, s2)?;
    let ds = trace.s[1] - trace.s[0];
    let mut integral = 0.0;
    for k in k1..k2 {
        integral += 0.5 * ds * (trace.flux[k] + trace.flux[k + 1]);
    }
    Ok((trace.e[k2] - trace.e[k1] + integral).abs())
}

fn trace_indices(trace: &EnergyTrace, s1: f64, s2: f64) -> Result<(usize, usize)> {
    if trace.s.len() < 3 {
        return Err(Error::InvalidConfig("trace too short".into()));
    }
    let ds = trace.s[1] - trace.s[0];
    let to_idx = |s: f64| -> Result<usize> {
        let f = ((s - trace.s[0]) / ds).round();
        if f < -0.5 || f > trace.s.len() as f64 - 0.5 {
            Err(Error::InvalidConfig(format!("s = {s} outside trace")))
        } else {
            Ok(f.max(0.0) as usize)
        }
    };
    let (k1, k2) = (to_idx(s1)?, to_idx(s2)?);
    if k1 >= k2 {
        return Err(Error::InvalidConfig("need s1 < s2".into()));
    }
    Ok((k1, k2))
}

/// A-posteriori quadrature error estimate for the dissipation identity on
/// [s1, s2]: Richardson differences of the energy (y subsampling) and flux
/// integral (s subsampling), plus a field-resolution term.
pub fn dissipation_error_estimate(frame: &SimilarityFrame, trace: &EnergyTrace, s1: f64, s2: f64) -> Result<f64> {
    let (k1, k2) = trace_indices(trace, s1, s2)?;
    // Energy with every other y node.
    let coarse_e = |k: usize| -> f64 {
        let n_y = frame.n_y();
        let dy2 = 2.0 * frame.dy();
        let integrand = |j: usize| -> f64 {
            let idx = frame.idx(k, j);
            let y = frame.y_grid[j];
            0.5 * frame.ws[idx] * frame.ws[idx] + 0.5 * (1.0 - y * y) * frame.wy[idx] * frame.wy[idx]
                - frame.w[idx].exp()
                + 2.0 * frame.w[idx]
        };
        let mut acc = 0.0;
        let mut j = 0;
        while j + 2 < n_y {
            acc += 0.5 * dy2 * (integrand(j) + integrand(j + 2));
            j += 2;
        }
        if j < n_y - 1 {
            acc += 0.5 * frame.dy() * (integrand(j) + integrand(j + 1));
        }
        acc
    };
    let e_term = (trace.e[k1] - coarse_e(k1)).abs() + (trace.e[k2] - coarse_e(k2)).abs();
    // Flux integral with every other s node.
    let ds = trace.s[1] - trace.s[0];
    let mut fine = 0.0;
    for k in k1..k2 {
        fine += 0.5 * ds * (trace.flux[k] + trace.flux[k + 1]);
    }
    let mut coarse = 0.0;
    let mut k = k1;
    while k + 2 <= k2 {
        coarse += ds * (trace.flux[k] + trace.flux[k + 2]);
        k += 2;
    }
    if k < k2 {
        coarse += 0.5 * ds * (trace.flux[k] + trace.flux[k + 1]);
    }
    let s_term = (fine - coarse).abs();
    // Underlying-field error: interpolated derivatives carry O((h/(T-t))^2)
    // relative error; t at the deepest s level dominates.
    let lam_min = (-trace.s[k2]).exp();
    let scale = trace.e[k1..=k2].iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let field_term = (frame.h_field / lam_min).powi(2) * scale;
    Ok(e_term + s_term + field_term)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic;
    use crate::solver::{solve, Source};
    use crate::wavefield::{Grid, InitialData};
    use approx::assert_relative_eq;

    fn ode_frame(h: f64, margin: f64) -> SimilarityFrame {
        let grid = Grid::covering(1.6, h, 0.999).unwrap();
        let out = solve(&InitialData::ode(), Source::Exp, &grid, 25.0, 0.95).unwrap();
        let cfg = FrameConfig { y_margin: margin, t_start: 0.05, ..Default::default() };
        to_similarity(&out.field, 0.0, 1.0, &cfg).unwrap()
    }

    #[test]
    fn ode_frame_is_constant_log_two() {
        let frame = ode_frame(2e-3, 0.0);
        let target = 2.0_f64.ln();
        for k in 0..frame.n_s() {
            for j in 0..frame.n_y() {
                let idx = frame.idx(k, j);
                assert!((frame.w[idx] - target).abs() < 2e-3, "w {}", frame.w[idx]);
                assert!(frame.ws[idx].abs() < 2e-2, "ws {}", frame.ws[idx]);
                assert!(frame.wy[idx].abs() < 2e-2, "wy {}", frame.wy[idx]);
            }
        }
    }

    #[test]
    fn tilted_frame_matches_stationary_profile() {
        let h = 1e-3;
        let kappa = 0.5;
        let grid = Grid::covering(2.2, h, 1.4).unwrap();
        let out = solve(&InitialData::tilted(kappa).unwrap(), Source::Exp, &grid, 25.0, 1.4).unwrap();
        let cfg = FrameConfig { y_margin: 0.1, t_start: 0.1, s_max: Some(-(10.0 * h).ln()), ..Default::default() };
        let frame = to_similarity(&out.field, 0.0, 1.0, &cfg).unwrap();
        let mut worst = 0.0_f64;
        for k in 0..frame.n_s() {
            for j in 0..frame.n_y() {
                let y = frame.y_grid[j];
                let expected = analytic::tilted_w(kappa, 0.0, y);
                worst = worst.max((frame.w[frame.idx(k, j)] - expected).abs() / expected.abs().max(1.0));
            }
        }
        assert!(worst < 0.02, "profile deviation {worst}");
    }

    #[test]
    fn frame_reconstruction_round_trip() {
        let h = 2e-3;
        let grid = Grid::covering(1.6, h, 0.95).unwrap();
        let out = solve(&InitialData::perturbed_ode(0.3), Source::Exp, &grid, 25.0, 0.9).unwrap();
        let cfg = FrameConfig { t_start: 0.1, s_max: Some(-(20.0 * h).ln()), ..Default::default() };
        let frame = to_similarity(&out.field, 0.0, 0.95, &cfg).unwrap();
        let mut worst = 0.0_f64;
        for k in 0..frame.n_s() {
            for j in 0..frame.n_y() {
                let (x, t, u) = reconstruct_u(&frame, k, j);
                let direct = out.field.interp(x, t).unwrap();
                worst = worst.max((u - direct).abs());
            }
        }
        assert!(worst < 1e-3, "round-trip gap {worst}");
    }

    #[test]
    fn residual_zero_for_constant_stationary_solution() {
        // Synthetic frame w = log 2: the equation is satisfied exactly.
        let n_y = 41;
        let n_s = 11;
        let y_grid: Vec<f64> = (0..n_y).map(|j| -1.0 + 2.0 * j as f64 / (n_y - 1) as f64).collect();
        let s_grid: Vec<f64> = (0..n_s).map(|k| 1.0 + 0.05 * k as f64).collect();
        let total = n_y * n_s;
        let frame = SimilarityFrame {
            a: 0.0,
            t_scale: 1.0,
            s_grid,
            y_grid,
            y_margin: 0.0,
            w: vec![2.0_f64.ln(); total],
            ws: vec![0.0; total],
            wy: vec![0.0; total],
            truncated: false,
            h_field: 1e-3,
        };
        assert!(equation_residual(&frame) < 1e-10);
        let e = lyapunov(&frame, 1.2).unwrap();
        assert_relative_eq!(e, 4.0 * 2.0_f64.ln() - 4.0, epsilon = 1e-6);
    }

    #[test]
    fn residual_large_for_non_solution() {
        let n_y = 41;
        let n_s = 11;
        let y_grid: Vec<f64> = (0..n_y).map(|j| -1.0 + 2.0 * j as f64 / (n_y - 1) as f64).collect();
        let s_grid: Vec<f64> = (0..n_s).map(|k| 1.0 + 0.05 * k as f64).collect();
        let mut w = Vec::new();
        for &s in &s_grid {
            for &y in &y_grid {
                w.push((3.0 * y).sin() + s);
            }
        }
        let total = n_y * n_s;
        let frame = SimilarityFrame {
            a: 0.0,
            t_scale: 1.0,
            s_grid,
            y_grid,
            y_margin: 0.0,
            w,
            ws: vec![1.0; total],
            wy: vec![0.0; total],
            truncated: false,
            h_field: 1e-3,
        };
        assert!(equation_residual(&frame) > 0.1);
    }

    #[test]
    fn tilted_residual_refines_at_order_one() {
        let kappa = 0.5;
        let mut residuals = Vec::new();
        for h in [2e-3, 1e-3] {
            let grid = Grid::covering(2.2, h, 1.4).unwrap();
            let out = solve(&InitialData::tilted(kappa).unwrap(), Source::Exp, &grid, 25.0, 1.4).unwrap();
            // Fixed frame window across resolutions so the comparison
            // isolates the field discretization error.
            let cfg = FrameConfig { y_margin: 0.1, t_start: 0.1, s_max: Some(-(0.08f64).ln()), ..Default::default() };
            let frame = to_similarity(&out.field, 0.0, 1.0, &cfg).unwrap();
            residuals.push(equation_residual(&frame));
        }
        let order = (residuals[0] / residuals[1]).log2();
        assert!(order >= 0.9, "residual order {order} ({residuals:?})");
    }

    #[test]
    fn dissipation_identity_stationary_runs() {
        // ODE frame: ws ~ 0, E constant, flux ~ 0.
        let frame = ode_frame(2e-3, 0.02);
        let trace = energy_trace(&frame);
        let (s1, s2) = (trace.s[1], trace.s[trace.s.len() - 2]);
        let defect = dissipation_identity(&trace, s1, s2).unwrap();
        assert!(defect < 1e-2, "ODE defect {defect}");
        // All E values close to the constant-solution energy over the
        // margin-adjusted interval.
        let b = 1.0 - 0.02;
        let expected = 2.0 * b * (2.0 * 2.0_f64.ln() - 2.0);
        for &e in &trace.e {
            assert!((e - expected).abs() < 0.05, "E {e} vs {expected}");
        }
    }

    #[test]
    fn energy_nonincreasing_perturbed_run() {
        let h = 1e-3;
        let grid = Grid::covering(2.0, h, 1.1).unwrap();
        let out = solve(&InitialData::perturbed_ode(0.3), Source::Exp, &grid, 25.0, 1.1).unwrap();
        let t_est = crate::geometry::estimate_t(&out, 0.0).unwrap().t;
        let cfg = FrameConfig { t_start: 0.1, s_max: Some(-(20.0 * h).ln()), ..Default::default() };
        let frame = to_similarity(&out.field, 0.0, t_est, &cfg).unwrap();
        let trace = energy_trace(&frame);
        let (s1, s2) = (trace.s[1], trace.s[trace.s.len() - 2]);
        let defect = dissipation_identity(&trace, s1, s2).unwrap();
        let est = dissipation_error_estimate(&frame, &trace, s1, s2).unwrap();
        assert!(defect <= 10.0 * est, "defect {defect} vs estimate {est}");
        // Monotone within tolerance proportional to the error estimate.
        let tol = 5.0 * est.max(1e-6);
        for k in 1..trace.e.len() {
            assert!(trace.e[k] <= trace.e[k - 1] + tol, "E rose at level {k}: {} -> {}", trace.e[k - 1], trace.e[k]);
        }
    }

    #[test]
    fn lyapunov_margin_sensitivity_finite() {
        let a = ode_frame(2e-3, 0.01);
        let b = ode_frame(2e-3, 0.02);
        let ea = lyapunov_at(&a, 1);
        let eb = lyapunov_at(&b, 1);
        assert!(ea.is_finite() && eb.is_finite());
        // Boundary-layer contribution only: integrand ~ -2 + 2 log 2 there.
        let gap = (ea - eb).abs();
        assert!(gap < 0.1, "margin gap {gap}");
    }
}
