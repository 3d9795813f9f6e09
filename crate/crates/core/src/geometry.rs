//! Blow-up curve estimation and cone geometry: T(x) extraction by
//! sqrt-extrapolation, 1-Lipschitz certificates, non-characteristic cone
//! tests, and the distance estimates used by the verification harness.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::solver::SolveOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CurveMethod {
    Threshold,
    SqrtExtrapolation,
}

/// Discrete samples of the blow-up curve x -> T(x).
#[derive(Debug, Clone, Serialize)]
pub struct BlowupCurve {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    pub methods: Vec<CurveMethod>,
    pub lipschitz_defect: f64,
    /// Grid spacing of the run the curve was extracted from.
    pub h: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeTestResult {
    pub x0: f64,
    pub delta_min: f64,
    pub is_noncharacteristic: bool,
    pub margin: f64,
}

/// Estimate of T at one abscissa, with the method that produced it.
#[derive(Debug, Clone, Copy)]
pub struct TEstimate {
    pub t: f64,
    pub method: CurveMethod,
    pub fit_residual: f64,
}

/// Levels kept in the extrapolation fit window.
const FIT_WINDOW: usize = 20;
/// Relative fit residual below which the extrapolated root is trusted.
const FIT_RESIDUAL_TOL: f64 = 5e-2;
/// Cells with h^2 e^u above this are under-resolved and excluded from the
/// fit window.
const RESOLVED_SOURCE_CAP: f64 = 0.5;

/// Estimate the blow-up time at `x` from a threshold-crossing run.
///
/// Primary method: least-squares linear fit of t -> e^{-u(x,t)/2} over the
/// last resolved levels before the crossing; T(x) is the fitted root (the
/// model is exact for the ODE family and backed by the two-sided bound
/// e^u d^2 within [1/C, C]). Fallback: first crossing time plus half a step.
pub fn estimate_t(outcome: &SolveOutcome, x: f64) -> Result<TEstimate> {
    let field = &outcome.field;
    let grid = &field.grid;
    let i = grid.index_of(x).ok_or(Error::NoBlowupDetected(x))?;
    let h = grid.h;
    // Last valid level of this column, and whether it ends by threshold.
    let mut last_valid: Option<usize> = None;
    for n in (0..field.n_levels()).rev() {
        if field.is_valid(n, i) {
            last_valid = Some(n);
            break;
        }
    }
    let last = last_valid.ok_or(Error::NoBlowupDetected(x))?;
    let u_last = field.value(last, i);
    let crossed = u_last > outcome.u_max
        || (last + 1 < field.n_levels() && !field.is_valid(last + 1, i) && u_last > outcome.u_max - 10.0);
    if !crossed && u_last < outcome.u_max - 2.0 {
        return Err(Error::NoBlowupDetected(x));
    }
    let t_threshold = field.t(last) + 0.5 * h;
    // Collect the resolved tail of the column for the fit.
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for n in (0..=last).rev() {
        if !field.is_valid(n, i) {
            break;
        }
        let u = field.value(n, i);
        if h * h * u.exp() > RESOLVED_SOURCE_CAP {
            continue;
        }
        pts.push((field.t(n), (-0.5 * u).exp()));
        if pts.len() >= FIT_WINDOW {
            break;
        }
    }
    if pts.len() < 4 {
        return Ok(TEstimate { t: t_threshold, method: CurveMethod::Threshold, fit_residual: f64::INFINITY });
    }
    // Linear least squares z = a t + b; root at T = -b/a.
    let n = pts.len() as f64;
    let (st, sz, stt, stz) = pts.iter().fold((0.0, 0.0, 0.0, 0.0), |(st, sz, stt, stz), &(t, z)| {
        (st + t, sz + z, stt + t * t, stz + t * z)
    });
    let denom = n * stt - st * st;
    if denom.abs() < 1e-300 {
        return Ok(TEstimate { t: t_threshold, method: CurveMethod::Threshold, fit_residual: f64::INFINITY });
    }
    let a = (n * stz - st * sz) / denom;
    let b = (sz - a * st) / n;
    if !(a < 0.0) {
        return Ok(TEstimate { t: t_threshold, method: CurveMethod::Threshold, fit_residual: f64::INFINITY });
    }
    let root = -b / a;
    let scale = sz / n;
    let residual = (pts.iter().map(|&(t, z)| (a * t + b - z).powi(2)).sum::<f64>() / n).sqrt() / scale.abs().max(1e-300);
    if residual <= FIT_RESIDUAL_TOL && root > 0.0 {
        Ok(TEstimate { t: root, method: CurveMethod::SqrtExtrapolation, fit_residual: residual })
    } else {
        Ok(TEstimate { t: t_threshold, method: CurveMethod::Threshold, fit_residual: residual })
    }
}

/// Assemble the blow-up curve over [x_lo, x_hi], skipping columns where no
/// blow-up is detected. Per-column estimates run in parallel; assembly is a
/// deterministic sequential pass.
pub fn build_curve(outcome: &SolveOutcome, x_lo: f64, x_hi: f64) -> Result<BlowupCurve> {
    let grid = &outcome.field.grid;
    let i_lo = grid.index_of(x_lo).ok_or(Error::OutsideDomain(x_lo, 0.0))?;
    let i_hi = grid.index_of(x_hi).ok_or(Error::OutsideDomain(x_hi, 0.0))?;
    let ests: Vec<Option<(f64, f64, CurveMethod)>> = (i_lo..=i_hi)
        .into_par_iter()
        .map(|i| {
            let x = grid.x(i);
            estimate_t(outcome, x).ok().map(|e| (x, e.t, e.method))
        })
        .collect();
    let mut xs = Vec::new();
    let mut ts = Vec::new();
    let mut methods = Vec::new();
    for e in ests.into_iter().flatten() {
        xs.push(e.0);
        ts.push(e.1);
        methods.push(e.2);
    }
    if xs.len() < 2 {
        return Err(Error::NoBlowupDetected(0.5 * (x_lo + x_hi)));
    }
    let mut curve = BlowupCurve { xs, ts, methods, lipschitz_defect: 0.0, h: grid.h };
    curve.lipschitz_defect = lipschitz_defect_multiscale(&curve);
    Ok(curve)
}

impl BlowupCurve {
    /// Synthetic curve from explicit samples (used by tests and probes).
    pub fn from_samples(xs: Vec<f64>, ts: Vec<f64>, h: f64) -> Self {
        let methods = vec![CurveMethod::Threshold; xs.len()];
        let mut curve = BlowupCurve { xs, ts, methods, lipschitz_defect: 0.0, h };
        curve.lipschitz_defect = lipschitz_defect_multiscale(&curve);
        curve
    }

    /// Linear interpolation of T(x) inside the sampled window.
    pub fn t_at(&self, x: f64) -> Option<f64> {
        let n = self.xs.len();
        if x < self.xs[0] - 1e-12 || x > self.xs[n - 1] + 1e-12 {
            return None;
        }
        let j = self.xs.partition_point(|&p| p <= x).clamp(1, n - 1);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let s = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        Some(self.ts[j - 1] * (1.0 - s) + self.ts[j] * s)
    }

    pub fn accepted(&self) -> bool {
        self.lipschitz_defect <= 2.0 * self.h
    }
}

/// Max over adjacent sample pairs of |dT| - |dx|.
pub fn lipschitz_certificate(curve: &BlowupCurve) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for j in 1..curve.xs.len() {
        let d = (curve.ts[j] - curve.ts[j - 1]).abs() - (curve.xs[j] - curve.xs[j - 1]).abs();
        if d > worst {
            worst = d;
        }
    }
    worst
}

/// Lipschitz defect over dyadic pair separations: max over k in
/// {1, 2, 4, ...} and i of |T(i+k) - T(i)| - (x(i+k) - x(i)). Single-cell
/// estimation noise stays O(h) at every scale, while a genuine slope above
/// one grows linearly with the separation, so the 2h acceptance gate in
/// [`BlowupCurve::accepted`] separates the two.
pub fn lipschitz_defect_multiscale(curve: &BlowupCurve) -> f64 {
    let n = curve.xs.len();
    let mut worst = f64::NEG_INFINITY;
    let mut k = 1usize;
    while k < n {
        for i in 0..n - k {
            let d = (curve.ts[i + k] - curve.ts[i]).abs() - (curve.xs[i + k] - curve.xs[i]).abs();
            if d > worst {
                worst = d;
            }
        }
        k *= 2;
    }
    worst
}

/// Certified cone slopes searched by `noncharacteristic_test`.
const DELTA_GRID_STEP: f64 = 0.05;

/// Search the slope grid {0.05, 0.10, ..., 0.95} for the smallest delta
/// whose cone below (x0, T(x0)) stays below the sampled curve (violation
/// tolerance one grid cell). No admissible delta < 1 means x0 is flagged
/// characteristic.
pub fn noncharacteristic_test(curve: &BlowupCurve, x0: f64) -> Result<ConeTestResult> {
    let n = curve.xs.len();
    let t0 = curve.t_at(x0).ok_or(Error::InsufficientConeCoverage(x0))?;
    // Require the sample window to extend at least T(x0)/2 on each side so
    // slope-1 cones have something to be tested against.
    let reach = (x0 - curve.xs[0]).min(curve.xs[n - 1] - x0);
    if reach < 0.25 * t0 {
        return Err(Error::InsufficientConeCoverage(x0));
    }
    let tol = curve.h;
    let mut delta_min = None;
    let mut delta = DELTA_GRID_STEP;
    while delta <= 0.95 + 1e-12 {
        let mut ok = true;
        for j in 0..n {
            let cone = t0 - delta * (curve.xs[j] - x0).abs();
            if curve.ts[j] < cone - tol {
                ok = false;
                break;
            }
        }
        if ok {
            delta_min = Some(delta);
            break;
        }
        delta += DELTA_GRID_STEP;
    }
    let margin = DELTA_GRID_STEP;
    Ok(match delta_min {
        Some(d) => ConeTestResult { x0, delta_min: d, is_noncharacteristic: d < 1.0 - margin, margin },
        None => ConeTestResult { x0, delta_min: 1.0, is_noncharacteristic: false, margin },
    })
}

/// Exact Euclidean distance from a point below the curve to the
/// piecewise-linear interpolant of the curve.
pub fn dist_to_gamma(curve: &BlowupCurve, x: f64, t: f64) -> Result<f64> {
    let tx = curve.t_at(x).ok_or(Error::OutsideDomain(x, t))?;
    if t >= tx {
        return Err(Error::OutsideDomain(x, t));
    }
    // Windowed search: the vertical gap bounds the distance, so segments
    // whose x-range is farther than the current best cannot improve it.
    let mut best = tx - t;
    let n = curve.xs.len();
    let j0 = curve.xs.partition_point(|&p| p <= x).clamp(1, n - 1);
    let seg_dist = |j: usize| -> f64 {
        point_segment_distance(x, t, curve.xs[j - 1], curve.ts[j - 1], curve.xs[j], curve.ts[j])
    };
    best = best.min(seg_dist(j0));
    // Expand left and right until the horizontal offset exceeds best.
    let mut j = j0;
    while j > 1 {
        j -= 1;
        if x - curve.xs[j] > best {
            break;
        }
        best = best.min(seg_dist(j));
    }
    let mut j = j0;
    while j + 1 <= n - 1 {
        j += 1;
        if curve.xs[j - 1] - x > best {
            break;
        }
        best = best.min(seg_dist(j));
    }
    Ok(best)
}

fn point_segment_distance(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 { (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (ax + s * dx, ay + s * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeDistanceReport {
    pub x0: f64,
    pub t: f64,
    pub tau: f64,
    /// d((z_j, w_j), Gamma) for the two boundary points of the backward cone.
    pub d_boundary: [f64; 2],
    pub d_center: f64,
    /// Smallest C such that d((z_j,w_j),Gamma) >= (d((x0,t),Gamma) + |(x0,t)-(z_j,w_j)|)/C.
    pub measured_big_c: f64,
    /// Smallest c bounding (T(x)-t)/(T(x0)-t) within [1/c, c] over the
    /// backward cone slice.
    pub measured_ratio_c: f64,
}

/// Distance coercivity along the backward cone boundary plus the
/// non-characteristic time-ratio bound, both with measured constants.
pub fn cone_distance_bounds(curve: &BlowupCurve, x0: f64, t: f64, tau: f64) -> Result<ConeDistanceReport> {
    if !(0.0 <= tau && tau < t) {
        return Err(Error::InvalidConfig(format!("need 0 <= tau < t, got tau={tau}, t={t}")));
    }
    let cone = noncharacteristic_test(curve, x0)?;
    if !cone.is_noncharacteristic {
        return Err(Error::HypothesesNotMet(format!("x0 = {x0} is characteristic")));
    }
    let t0 = curve.t_at(x0).ok_or(Error::OutsideDomain(x0, t))?;
    if t >= t0 {
        return Err(Error::OutsideDomain(x0, t));
    }
    let d_center = dist_to_gamma(curve, x0, t)?;
    let z = [(x0 + t - tau, tau), (x0 - t + tau, tau)];
    let mut d_boundary = [0.0; 2];
    let mut big_c = 0.0_f64;
    for (j, &(zx, zt)) in z.iter().enumerate() {
        let d = dist_to_gamma(curve, zx, zt)?;
        d_boundary[j] = d;
        let sep = std::f64::consts::SQRT_2 * (t - tau);
        big_c = big_c.max((d_center + sep) / d);
    }
    // Ratio sweep over the backward cone slice at time t.
    let mut ratio_c = 1.0_f64;
    let radius = t0 - t;
    let steps = 64;
    for k in 0..=steps {
        let x = x0 - radius + 2.0 * radius * k as f64 / steps as f64;
        if let Some(tx) = curve.t_at(x) {
            let ratio = (tx - t) / (t0 - t);
            if ratio > 0.0 {
                ratio_c = ratio_c.max(ratio.max(1.0 / ratio));
            }
        }
    }
    Ok(ConeDistanceReport {
        x0,
        t,
        tau,
        d_boundary,
        d_center,
        measured_big_c: big_c,
        measured_ratio_c: ratio_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve, Source};
    use crate::wavefield::{Grid, InitialData};
    use approx::assert_relative_eq;

    #[test]
    fn estimate_t_ode_run() {
        let h = 1e-3;
        let grid = Grid::covering(1.3, h, 1.2).unwrap();
        let out = solve(&InitialData::ode(), Source::Exp, &grid, 25.0, 1.2).unwrap();
        let est = estimate_t(&out, 0.0).unwrap();
        assert_eq!(est.method, CurveMethod::SqrtExtrapolation);
        assert!((est.t - 1.0).abs() < 1e-4, "T estimate {}", est.t);
    }

    #[test]
    fn estimate_t_tilted_run() {
        let h = 1e-3;
        let kappa = 0.5;
        let grid = Grid::covering(2.2, h, 1.5).unwrap();
        let out = solve(&InitialData::tilted(kappa).unwrap(), Source::Exp, &grid, 25.0, 1.5).unwrap();
        let est = estimate_t(&out, 0.4).unwrap();
        assert!((est.t - 1.2).abs() < 5e-3, "T(0.4) estimate {}", est.t);
    }

    #[test]
    fn estimate_t_linear_run_reports_no_blowup() {
        let h = 5e-3;
        let grid = Grid::covering(1.5, h, 1.0).unwrap();
        let out = solve(&InitialData::ode(), Source::Zero, &grid, 25.0, 1.0).unwrap();
        assert!(matches!(estimate_t(&out, 0.0), Err(Error::NoBlowupDetected(_))));
    }

    #[test]
    fn lipschitz_certificate_accepts_flat_and_tilted() {
        let h = 1e-2;
        let xs: Vec<f64> = (0..100).map(|i| -0.5 + i as f64 * h).collect();
        let flat = BlowupCurve::from_samples(xs.clone(), vec![1.0; xs.len()], h);
        assert!(lipschitz_certificate(&flat) < 0.0);
        assert!(flat.accepted());
        let tilted = BlowupCurve::from_samples(xs.clone(), xs.iter().map(|x| 1.0 + 0.5 * x).collect(), h);
        assert_relative_eq!(lipschitz_certificate(&tilted), -h / 2.0, epsilon = 1e-12);
        assert!(tilted.accepted());
    }

    #[test]
    fn lipschitz_certificate_rejects_steep_curve() {
        let h = 1e-2;
        let xs: Vec<f64> = (0..100).map(|i| -0.5 + i as f64 * h).collect();
        let steep = BlowupCurve::from_samples(xs.clone(), xs.iter().map(|x| 1.0 + 1.5 * x).collect(), h);
        assert_relative_eq!(lipschitz_certificate(&steep), 0.5 * h, epsilon = 1e-12);
        assert!(!steep.accepted());
    }

    #[test]
    fn noncharacteristic_flat_curve() {
        let h = 1e-3;
        let xs: Vec<f64> = (0..=1000).map(|i| -0.5 + i as f64 * 1e-3).collect();
        let flat = BlowupCurve::from_samples(xs.clone(), vec![1.0; xs.len()], h);
        let res = noncharacteristic_test(&flat, 0.0).unwrap();
        assert!(res.is_noncharacteristic);
        assert_relative_eq!(res.delta_min, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn noncharacteristic_tilted_curve() {
        let h = 1e-3;
        let xs: Vec<f64> = (0..=1000).map(|i| -0.5 + i as f64 * 1e-3).collect();
        let kappa = 0.5;
        let c = BlowupCurve::from_samples(xs.clone(), xs.iter().map(|x| 1.0 + kappa * x).collect(), h);
        let res = noncharacteristic_test(&c, 0.0).unwrap();
        assert!(res.is_noncharacteristic);
        assert!(res.delta_min >= 0.5 - 1e-12 && res.delta_min <= 0.55 + 1e-12, "delta {}", res.delta_min);
    }

    #[test]
    fn characteristic_corner_detected() {
        let h = 1e-3;
        let xs: Vec<f64> = (0..=1000).map(|i| -0.5 + i as f64 * 1e-3).collect();
        let corner = BlowupCurve::from_samples(xs.clone(), xs.iter().map(|x| 1.0 - x.abs()).collect(), h);
        let res = noncharacteristic_test(&corner, 0.0).unwrap();
        assert!(!res.is_noncharacteristic);
    }

    #[test]
    fn cone_coverage_error_near_window_edge() {
        let h = 1e-3;
        let xs: Vec<f64> = (0..=100).map(|i| -0.05 + i as f64 * 1e-3).collect();
        let flat = BlowupCurve::from_samples(xs.clone(), vec![1.0; xs.len()], h);
        assert!(matches!(
            noncharacteristic_test(&flat, 0.0),
            Err(Error::InsufficientConeCoverage(_))
        ));
    }

    #[test]
    fn dist_to_gamma_flat_and_tilted() {
        let h = 1e-3;
        let xs: Vec<f64> = (0..=2000).map(|i| -1.0 + i as f64 * 1e-3).collect();
        let flat = BlowupCurve::from_samples(xs.clone(), vec![1.0; xs.len()], h);
        assert_relative_eq!(dist_to_gamma(&flat, 0.0, 0.4).unwrap(), 0.6, epsilon = 1e-9);
        let tilted = BlowupCurve::from_samples(xs.clone(), xs.iter().map(|x| 1.0 + 0.5 * x).collect(), h);
        // Distance from the origin to the line t = 1 + x/2.
        let expected = 1.0 / (1.0 + 0.25f64).sqrt();
        let got = dist_to_gamma(&tilted, 0.0, 0.0).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-9);
        // Distance sandwich: (T(x) - t)/sqrt(2) <= d <= T(x) - t.
        assert!(got >= 1.0 / std::f64::consts::SQRT_2 - 1e-9 && got <= 1.0 + 1e-9);
    }

    #[test]
    fn dist_to_gamma_point_on_curve_and_outside() {
        let h = 1e-3;
        let xs: Vec<f64> = (0..=200).map(|i| -0.1 + i as f64 * 1e-3).collect();
        let flat = BlowupCurve::from_samples(xs.clone(), vec![1.0; xs.len()], h);
        assert!(matches!(dist_to_gamma(&flat, 0.0, 1.0), Err(Error::OutsideDomain(_, _))));
        assert!(dist_to_gamma(&flat, 0.0, 1.0 - 1e-9).unwrap() < 1e-8);
    }

    #[test]
    fn cone_distance_bounds_tilted_line() {
        let h = 1e-3;
        let xs: Vec<f64> = (0..=3000).map(|i| -1.5 + i as f64 * 1e-3).collect();
        let tilted = BlowupCurve::from_samples(xs.clone(), xs.iter().map(|x| 1.0 + 0.5 * x).collect(), h);
        let rep = cone_distance_bounds(&tilted, 0.0, 0.5, 0.25).unwrap();
        assert!(rep.measured_big_c <= 4.0, "C = {}", rep.measured_big_c);
        assert!(rep.measured_ratio_c >= 1.0 && rep.measured_ratio_c <= 4.0);
        // tau -> t limit degenerates to d >= d / C, i.e. C >= 1.
        let rep2 = cone_distance_bounds(&tilted, 0.0, 0.5, 0.499).unwrap();
        assert!(rep2.measured_big_c >= 1.0);
    }

    #[test]
    fn cone_distance_bounds_flat_ratio_one() {
        let h = 1e-3;
        let xs: Vec<f64> = (0..=2000).map(|i| -1.0 + i as f64 * 1e-3).collect();
        let flat = BlowupCurve::from_samples(xs.clone(), vec![1.0; xs.len()], h);
        let rep = cone_distance_bounds(&flat, 0.0, 0.5, 0.2).unwrap();
        assert_relative_eq!(rep.measured_ratio_c, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn cone_distance_bounds_rejects_characteristic_apex() {
        let h = 1e-3;
        let xs: Vec<f64> = (0..=1000).map(|i| -0.5 + i as f64 * 1e-3).collect();
        let corner = BlowupCurve::from_samples(xs.clone(), xs.iter().map(|x| 1.0 - x.abs()).collect(), h);
        assert!(matches!(
            cone_distance_bounds(&corner, 0.0, 0.5, 0.2),
            Err(Error::HypothesesNotMet(_))
        ));
    }

    #[test]
    fn curve_refinement_consistency_ode() {
        let mut ests = Vec::new();
        for h in [2e-3, 1e-3] {
            let grid = Grid::covering(1.3, h, 1.2).unwrap();
            let out = solve(&InitialData::ode(), Source::Exp, &grid, 25.0, 1.2).unwrap();
            ests.push((estimate_t(&out, 0.0).unwrap().t - 1.0).abs().max(1e-12));
        }
        // Error at h/2 should not grow; generically it shrinks ~linearly.
        assert!(ests[1] <= ests[0] * 1.2 + 1e-9, "errors {ests:?}");
    }
}
