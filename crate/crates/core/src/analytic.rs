//! Closed-form blow-up families used as oracles throughout the test and
//! verification harness.
//!
//! ODE family:    u(x,t) = log(2 / (T - t)^2), T = 1.
//! Tilted family: u(x,t) = log(2 (1 - k^2) / (T - t + k x)^2), T(x) = 1 + k x.

/// ODE solution at time t (space-independent), blow-up time T = 1.
pub fn ode_u(t: f64) -> f64 {
    (2.0 / ((1.0 - t) * (1.0 - t))).ln()
}

pub fn ode_ut(t: f64) -> f64 {
    2.0 / (1.0 - t)
}

/// Tilted solution u(x,t) for |kappa| < 1, blow-up curve T(x) = 1 + kappa x.
pub fn tilted_u(kappa: f64, x: f64, t: f64) -> f64 {
    let phi = 1.0 - t + kappa * x;
    (2.0 * (1.0 - kappa * kappa) / (phi * phi)).ln()
}

pub fn tilted_t_of_x(kappa: f64, x: f64) -> f64 {
    1.0 + kappa * x
}

/// Stationary similarity profile of the tilted family at T = T(a):
/// w(y) = log(2 (1 - k^2)) - 2 log(1 + k y).
pub fn tilted_w(kappa: f64, a: f64, y: f64) -> f64 {
    let _ = a;
    (2.0 * (1.0 - kappa * kappa)).ln() - 2.0 * (1.0 + kappa * y).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Finite-difference residual check that the closed forms solve
    /// u_tt = u_xx + e^u.
    fn pde_residual(u: impl Fn(f64, f64) -> f64, x: f64, t: f64) -> f64 {
        let d = 1e-4;
        let utt = (u(x, t + d) - 2.0 * u(x, t) + u(x, t - d)) / (d * d);
        let uxx = (u(x + d, t) - 2.0 * u(x, t) + u(x - d, t)) / (d * d);
        utt - uxx - u(x, t).exp()
    }

    #[test]
    fn ode_family_solves_equation() {
        for t in [0.0, 0.3, 0.6] {
            assert!(pde_residual(|_, t| ode_u(t), 0.0, t).abs() < 1e-4);
        }
        assert_relative_eq!(ode_u(0.5), 8.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn tilted_family_solves_equation() {
        for kappa in [0.25, 0.5, 0.75] {
            for (x, t) in [(0.0, 0.0), (0.2, 0.4), (-0.3, 0.5)] {
                let r = pde_residual(|x, t| tilted_u(kappa, x, t), x, t);
                assert!(r.abs() < 1e-3, "kappa={kappa} ({x},{t}): {r}");
            }
        }
    }

    #[test]
    fn tilted_reduces_to_ode_at_zero_slope() {
        assert_relative_eq!(tilted_u(0.0, 0.7, 0.3), ode_u(0.3), epsilon = 1e-12);
    }
}
