//! Core field types: grids, initial data, uniform-local norms and the
//! explicit d'Alembert wave group.
//!
//! The working space is the uniform-local product `H^1 x L^2`: the norm of a
//! pair is the sup over unit-length windows of the `H^1 x L^2` norm on that
//! window. All quadrature is composite trapezoid with a fixed left-to-right
//! summation order, so results are bit-reproducible.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform characteristic grid with Δt = Δx = h (the CFL ratio is a
/// structural constant of the scheme, not a parameter).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub x_min: f64,
    pub h: f64,
    pub nx: usize,
    pub nt_max: usize,
}

impl Grid {
    pub fn new(x_min: f64, h: f64, nx: usize, nt_max: usize) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidGrid(format!("h = {h} must be positive")));
        }
        if nx < 3 {
            return Err(Error::InvalidGrid(format!("nx = {nx} must be >= 3")));
        }
        if nt_max < 1 {
            return Err(Error::InvalidGrid(format!("nt_max = {nt_max} must be >= 1")));
        }
        Ok(Grid { x_min, h, nx, nt_max })
    }

    /// Grid covering [-r, r] in space with enough levels to reach `t_end`.
    pub fn covering(r: f64, h: f64, t_end: f64) -> Result<Self> {
        let nx = (2.0 * r / h).round() as usize + 1;
        let nt = (t_end / h).ceil() as usize + 2;
        Grid::new(-r, h, nx, nt)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.h
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    /// Nearest grid index to `x`, or None if outside.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let f = (x - self.x_min) / self.h;
        let i = f.round();
        if i < -0.5 || i > self.nx as f64 - 0.5 {
            None
        } else {
            Some(i.max(0.0) as usize)
        }
    }
}

/// Regularity class of a data pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regularity {
    /// `H^1_{loc,u} x L^2_{loc,u}`
    H1L2,
    /// `W^{1,inf} x L^inf`
    W1infLinf,
}

type Sampler = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Initial data pair (u0, u1) with uniform-local norm bookkeeping.
#[derive(Clone)]
pub struct InitialData {
    u0: Sampler,
    u1: Sampler,
    pub regularity: Regularity,
    /// `norm_h` of the pair on the window the data was built with.
    pub h_norm: f64,
    pub window: (f64, f64),
    pub label: String,
}

impl std::fmt::Debug for InitialData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InitialData")
            .field("label", &self.label)
            .field("regularity", &self.regularity)
            .field("h_norm", &self.h_norm)
            .field("window", &self.window)
            .finish()
    }
}

impl InitialData {
    pub fn new(
        u0: Sampler,
        u1: Sampler,
        regularity: Regularity,
        window: (f64, f64),
        label: impl Into<String>,
    ) -> Result<Self> {
        let h_norm = norm_h_of(u0.as_ref(), u1.as_ref(), window)?;
        Ok(InitialData {
            u0,
            u1,
            regularity,
            h_norm,
            window,
            label: label.into(),
        })
    }

    #[inline]
    pub fn u0(&self, x: f64) -> f64 {
        (self.u0)(x)
    }

    #[inline]
    pub fn u1(&self, x: f64) -> f64 {
        (self.u1)(x)
    }

    pub fn sample_u0(&self, grid: &Grid) -> Result<Vec<f64>> {
        (0..grid.nx)
            .map(|i| {
                let v = self.u0(grid.x(i));
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFiniteInitialData(grid.x(i)))
                }
            })
            .collect()
    }

    pub fn sample_u1(&self, grid: &Grid) -> Result<Vec<f64>> {
        (0..grid.nx)
            .map(|i| {
                let v = self.u1(grid.x(i));
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFiniteInitialData(grid.x(i)))
                }
            })
            .collect()
    }

    /// ODE data u0 = log 2, u1 = 2, blowing up on the flat curve T(x) = 1
    /// with u(x,t) = log(2/(1-t)^2).
    pub fn ode() -> Self {
        InitialData::new(
            Arc::new(|_| 2.0_f64.ln()),
            Arc::new(|_| 2.0),
            Regularity::W1infLinf,
            (-2.0, 2.0),
            "ode",
        )
        .expect("analytic preset")
    }

    /// Tilted family u(x,t) = log(2(1-k^2)/(1 - t + k x)^2), blowing up on
    /// T(x) = 1 + k x. Requires |kappa| < 1.
    pub fn tilted(kappa: f64) -> Result<Self> {
        if !(kappa.abs() < 1.0) {
            return Err(Error::InvalidConfig(format!("|kappa| = {} must be < 1", kappa.abs())));
        }
        // Keep the norm window inside {1 + kappa x > 0}; outside that strip
        // the sampler clamps the denominator so wide grids still get
        // finite (non-analytic) data far from the probed region.
        let half = ((0.9 / kappa.abs()).min(2.0)).max(0.5);
        InitialData::new(
            Arc::new(move |x: f64| {
                let phi = (1.0 + kappa * x).max(0.1);
                (2.0 * (1.0 - kappa * kappa)).ln() - 2.0 * phi.ln()
            }),
            Arc::new(move |x: f64| 2.0 / (1.0 + kappa * x).max(0.1)),
            Regularity::W1infLinf,
            (-half, half),
            format!("tilted(kappa={kappa})"),
        )
    }

    /// ODE data with a cosine perturbation on u0.
    pub fn perturbed_ode(amplitude: f64) -> Self {
        InitialData::new(
            Arc::new(move |x: f64| 2.0_f64.ln() + amplitude * (std::f64::consts::PI * x).cos()),
            Arc::new(|_| 2.0),
            Regularity::W1infLinf,
            (-2.0, 2.0),
            format!("perturbed-ode(amplitude={amplitude})"),
        )
        .expect("analytic preset")
    }

    /// Random band-limited pair on the given window, seeded for
    /// reproducibility.
    pub fn random_band_limited(seed: u64, modes: usize, amplitude: f64, window: (f64, f64)) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let length = window.1 - window.0;
        let mut c0 = Vec::with_capacity(modes);
        let mut c1 = Vec::with_capacity(modes);
        for k in 1..=modes {
            let freq = k as f64 * std::f64::consts::PI / length;
            // Damp higher modes so the pair stays smooth under refinement.
            let scale = amplitude / k as f64;
            c0.push((scale * rng.gen_range(-1.0..1.0), freq, rng.gen_range(0.0..std::f64::consts::TAU)));
            c1.push((scale * rng.gen_range(-1.0..1.0), freq, rng.gen_range(0.0..std::f64::consts::TAU)));
        }
        let c0c = c0.clone();
        let c1c = c1.clone();
        InitialData::new(
            Arc::new(move |x: f64| c0c.iter().map(|&(a, f, p)| a * (f * x + p).cos()).sum()),
            Arc::new(move |x: f64| c1c.iter().map(|&(a, f, p)| a * (f * x + p).cos()).sum()),
            Regularity::W1infLinf,
            window,
            format!("random-band-limited(seed={seed})"),
        )
        .expect("analytic preset")
    }

    /// Data pair from samples (x ascending), linearly interpolated and
    /// clamped outside the sampled range.
    pub fn from_samples(xs: Vec<f64>, u0s: Vec<f64>, u1s: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != u0s.len() || xs.len() != u1s.len() {
            return Err(Error::InvalidConfig("sample columns must share length >= 2".into()));
        }
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidConfig("sample x column must be strictly increasing".into()));
            }
        }
        for (&x, v) in xs.iter().zip(u0s.iter().chain(u1s.iter())) {
            if !v.is_finite() {
                return Err(Error::NonFiniteInitialData(x));
            }
        }
        let window = (xs[0], xs[xs.len() - 1]);
        let xs0 = Arc::new(xs);
        let xs1 = xs0.clone();
        let u0v = Arc::new(u0s);
        let u1v = Arc::new(u1s);
        InitialData::new(
            Arc::new(move |x: f64| interp_linear(&xs0, &u0v, x)),
            Arc::new(move |x: f64| interp_linear(&xs1, &u1v, x)),
            Regularity::H1L2,
            window,
            "csv",
        )
    }

    /// Same pair with u0 scaled cutoff applied: `u0*chi`, `u1*chi`.
    pub fn with_cutoff(&self, chi: Sampler, label: impl Into<String>) -> Result<Self> {
        let u0 = self.u0.clone();
        let u1 = self.u1.clone();
        let chi2 = chi.clone();
        InitialData::new(
            Arc::new(move |x: f64| u0(x) * chi(x)),
            Arc::new(move |x: f64| u1(x) * chi2(x)),
            self.regularity,
            self.window,
            label,
        )
    }
}

fn interp_linear(xs: &[f64], vs: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return vs[0];
    }
    if x >= xs[xs.len() - 1] {
        return vs[vs.len() - 1];
    }
    let j = xs.partition_point(|&p| p <= x).min(xs.len() - 1);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let t = (x - x0) / (x1 - x0);
    vs[j - 1] * (1.0 - t) + vs[j] * t
}

/// A pair (position component, velocity component) sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePair {
    pub x0: f64,
    pub h: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl StatePair {
    pub fn new(x0: f64, h: f64, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != v.len() {
            return Err(Error::InvalidConfig("state components must share length".into()));
        }
        Ok(StatePair { x0, h, u, v })
    }

    pub fn from_data(data: &InitialData, grid: &Grid) -> Result<Self> {
        Ok(StatePair {
            x0: grid.x_min,
            h: grid.h,
            u: data.sample_u0(grid)?,
            v: data.sample_u1(grid)?,
        })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn x_end(&self) -> f64 {
        self.x0 + (self.len() - 1) as f64 * self.h
    }

    fn sample(&self, vals: &[f64], x: f64) -> f64 {
        let f = (x - self.x0) / self.h;
        let j = f.floor().max(0.0) as usize;
        let j = j.min(self.len() - 2);
        let t = (f - j as f64).clamp(0.0, 1.0);
        vals[j] * (1.0 - t) + vals[j + 1] * t
    }
}

/// Space-time sample of u on a characteristic grid. `valid` is downward
/// closed along characteristics: a cell at level n requires (n-1, i-1) and
/// (n-1, i+1) to have been valid.
#[derive(Debug, Clone)]
pub struct WaveField {
    pub grid: Grid,
    pub t0: f64,
    levels: Vec<f64>,
    valid: Vec<bool>,
    n_levels: usize,
}

impl WaveField {
    pub fn new(grid: Grid, t0: f64) -> Self {
        WaveField { grid, t0, levels: Vec::new(), valid: Vec::new(), n_levels: 0 }
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn t(&self, level: usize) -> f64 {
        self.t0 + level as f64 * self.grid.h
    }

    #[inline]
    pub fn value(&self, level: usize, i: usize) -> f64 {
        self.levels[level * self.grid.nx + i]
    }

    #[inline]
    pub fn is_valid(&self, level: usize, i: usize) -> bool {
        level < self.n_levels && self.valid[level * self.grid.nx + i]
    }

    pub fn push_level(&mut self, values: Vec<f64>, valid: Vec<bool>) {
        assert_eq!(values.len(), self.grid.nx);
        assert_eq!(valid.len(), self.grid.nx);
        self.levels.extend_from_slice(&values);
        self.valid.extend_from_slice(&valid);
        self.n_levels += 1;
    }

    pub fn level_values(&self, level: usize) -> &[f64] {
        &self.levels[level * self.grid.nx..(level + 1) * self.grid.nx]
    }

    pub fn level_valid(&self, level: usize) -> &[bool] {
        &self.valid[level * self.grid.nx..(level + 1) * self.grid.nx]
    }

    /// Bilinear interpolation of u at (x, t). None outside the valid region.
    pub fn interp(&self, x: f64, t: f64) -> Option<f64> {
        self.interp_of(|n, i| self.value(n, i), |n, i| self.is_valid(n, i), x, t)
    }

    pub(crate) fn interp_of<F, V>(&self, f: F, valid: V, x: f64, t: f64) -> Option<f64>
    where
        F: Fn(usize, usize) -> f64,
        V: Fn(usize, usize) -> bool,
    {
        let h = self.grid.h;
        let fx = (x - self.grid.x_min) / h;
        let ft = (t - self.t0) / h;
        if fx < 0.0 || ft < 0.0 {
            return None;
        }
        let i = (fx.floor() as usize).min(self.grid.nx.checked_sub(2)?);
        let n = (ft.floor() as usize).min(self.n_levels.checked_sub(2)?);
        let ax = fx - i as f64;
        let at = ft - n as f64;
        if ax > 1.0 + 1e-12 || at > 1.0 + 1e-12 {
            return None;
        }
        for (nn, ii) in [(n, i), (n, i + 1), (n + 1, i), (n + 1, i + 1)] {
            if !valid(nn, ii) {
                return None;
            }
        }
        let v00 = f(n, i);
        let v01 = f(n, i + 1);
        let v10 = f(n + 1, i);
        let v11 = f(n + 1, i + 1);
        Some(v00 * (1.0 - ax) * (1.0 - at) + v01 * ax * (1.0 - at) + v10 * (1.0 - ax) * at + v11 * ax * at)
    }
}

/// Uniform-local norm: sup over unit subintervals J of
/// (||u0||^2_{H1(J)} + ||u1||^2_{L2(J)})^{1/2}.
pub fn norm_h(data: &InitialData, window: (f64, f64)) -> Result<f64> {
    norm_h_of(&|x| data.u0(x), &|x| data.u1(x), window)
}

/// Quadrature resolution for standalone norm evaluation.
const NORM_QUAD_H: f64 = 1.0 / 1024.0;

pub fn norm_h_of(u0: &dyn Fn(f64) -> f64, u1: &dyn Fn(f64) -> f64, window: (f64, f64)) -> Result<f64> {
    let (a, b) = window;
    if !(b - a >= 1.0) {
        return Err(Error::InvalidConfig(format!("window length {} must be >= 1", b - a)));
    }
    let h = NORM_QUAD_H;
    let n = ((b - a) / h).round() as usize;
    let h = (b - a) / n as f64;
    // Sample with one cell of padding for the derivative stencil.
    let mut s0 = Vec::with_capacity(n + 3);
    let mut s1 = Vec::with_capacity(n + 3);
    for i in 0..=(n + 2) {
        let x = a - h + i as f64 * h;
        let (v0, v1) = (u0(x), u1(x));
        if !v0.is_finite() || !v1.is_finite() {
            return Err(Error::NonFiniteInitialData(x));
        }
        s0.push(v0);
        s1.push(v1);
    }
    // Centered derivative of u0 on the window samples (index offset 1).
    let du0: Vec<f64> = (1..=(n + 1)).map(|i| (s0[i + 1] - s0[i - 1]) / (2.0 * h)).collect();
    // Pointwise integrands on the window grid.
    let g_h1: Vec<f64> = (0..=n).map(|i| s0[i + 1] * s0[i + 1] + du0[i] * du0[i]).collect();
    let g_l2: Vec<f64> = (0..=n).map(|i| s1[i + 1] * s1[i + 1]).collect();
    let m = (1.0 / h).round() as usize; // cells per unit window
    let m = m.min(n);
    let mut sup = 0.0_f64;
    let mut k = 0;
    while k + m <= n {
        let mut acc = 0.0;
        for i in k..k + m {
            acc += 0.5 * h * (g_h1[i] + g_h1[i + 1]);
            acc += 0.5 * h * (g_l2[i] + g_l2[i + 1]);
        }
        if acc > sup {
            sup = acc;
        }
        k += 1;
    }
    Ok(sup.sqrt())
}

/// The fixed Sobolev embedding constant: ||v||_inf <= sqrt(2) ||v||_{H1(J)}
/// on a unit interval J.
pub fn sobolev_embedding_constant() -> f64 {
    std::f64::consts::SQRT_2
}

/// Exact d'Alembert wave group applied to a sampled pair. The output grid is
/// the input grid trimmed by ceil(t/h) cells at each end.
pub fn wave_group(state: &StatePair, t: f64) -> Result<StatePair> {
    if t < 0.0 {
        return Err(Error::InvalidConfig(format!("t = {t} must be >= 0")));
    }
    let n = state.len();
    if n < 3 {
        return Err(Error::DomainExhausted);
    }
    let h = state.h;
    let trim = ((t / h) - 1e-12).ceil().max(0.0) as usize;
    if 2 * trim + 2 > n {
        return Err(Error::DomainExhausted);
    }
    // Centered derivative of u0 with second-order one-sided ends.
    let mut du = vec![0.0; n];
    du[0] = (-3.0 * state.u[0] + 4.0 * state.u[1] - state.u[2]) / (2.0 * h);
    du[n - 1] = (3.0 * state.u[n - 1] - 4.0 * state.u[n - 2] + state.u[n - 3]) / (2.0 * h);
    for i in 1..n - 1 {
        du[i] = (state.u[i + 1] - state.u[i - 1]) / (2.0 * h);
    }
    // Cumulative trapezoid of u1 from the left end.
    let mut cum = vec![0.0; n];
    for i in 1..n {
        cum[i] = cum[i - 1] + 0.5 * h * (state.v[i - 1] + state.v[i]);
    }
    let m = n - 2 * trim;
    let x0 = state.x0 + trim as f64 * h;
    let mut out_u = Vec::with_capacity(m);
    let mut out_v = Vec::with_capacity(m);
    for j in 0..m {
        let x = x0 + j as f64 * h;
        let u0p = state.sample(&state.u, x + t);
        let u0m = state.sample(&state.u, x - t);
        let integral = state.sample(&cum, x + t) - state.sample(&cum, x - t);
        out_u.push(0.5 * (u0p + u0m) + 0.5 * integral);
        let dup = state.sample(&du, x + t);
        let dum = state.sample(&du, x - t);
        let v1p = state.sample(&state.v, x + t);
        let v1m = state.sample(&state.v, x - t);
        out_v.push(0.5 * (dup - dum) + 0.5 * (v1p + v1m));
    }
    StatePair::new(x0, h, out_u, out_v)
}

/// Measure the growth constant C0 of the wave group on random band-limited
/// pairs: max over samples of ||S(t)(u0,u1)||_H / ((1+t)||(u0,u1)||_H).
pub fn measure_c0(n_samples: usize, seed: u64) -> f64 {
    let window = (-3.0, 3.0);
    let grid = Grid::new(window.0, 1.0 / 512.0, (6.0 * 512.0) as usize + 1, 1).expect("grid");
    let mut worst = 0.0_f64;
    for k in 0..n_samples {
        let data = InitialData::random_band_limited(seed.wrapping_add(k as u64), 6, 1.0, window);
        let state = StatePair::from_data(&data, &grid).expect("sample");
        let n_in = state_norm(&state);
        if n_in == 0.0 {
            continue;
        }
        for t in [0.25, 0.5, 1.0, 2.0] {
            if let Ok(out) = wave_group(&state, t) {
                if out.x_end() - out.x0 < 1.0 {
                    continue;
                }
                let ratio = state_norm(&out) / ((1.0 + t) * n_in);
                if ratio > worst {
                    worst = ratio;
                }
            }
        }
    }
    worst
}

/// Uniform-local H-norm of a sampled pair over its own range.
pub fn state_norm(state: &StatePair) -> f64 {
    let n = state.len();
    let h = state.h;
    if (n - 1) as f64 * h < 1.0 {
        // Range shorter than a unit window: single-window norm on the range.
        return window_norm(state, 0, n - 1);
    }
    let m = (1.0 / h).round() as usize;
    let mut sup = 0.0_f64;
    let mut k = 0;
    while k + m <= n - 1 {
        let v = window_norm(state, k, k + m);
        if v > sup {
            sup = v;
        }
        k += 1;
    }
    sup
}

fn window_norm(state: &StatePair, lo: usize, hi: usize) -> f64 {
    let h = state.h;
    let n = state.len();
    let du = |i: usize| -> f64 {
        if i == 0 {
            (state.u[1] - state.u[0]) / h
        } else if i == n - 1 {
            (state.u[n - 1] - state.u[n - 2]) / h
        } else {
            (state.u[i + 1] - state.u[i - 1]) / (2.0 * h)
        }
    };
    let g = |i: usize| -> f64 {
        let d = du(i);
        state.u[i] * state.u[i] + d * d + state.v[i] * state.v[i]
    };
    let mut acc = 0.0;
    for i in lo..hi {
        acc += 0.5 * h * (g(i) + g(i + 1));
    }
    acc.sqrt()
}
