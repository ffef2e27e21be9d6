//! The decaying Whittaker function `W_{β,μ}(y)`.
//!
//! `W'' + (−¼ + β/y + (¼ − μ²)/y²) W = 0` with `W ~ y^β e^{−y/2}` as `y → ∞`.
//! When `½ + μ − β` or `½ − μ − β` is a non-positive integer the asymptotic
//! series terminates and is exact (this covers `μ = β − ½`, where
//! `W = y^β e^{−y/2}`). Otherwise the series seeds the solution at a large
//! height and an adaptive Dormand–Prince integration carries it inward.

use crate::error::{invalid, Result};

/// Largest `|β|`, `|μ|` accepted.
pub const PARAM_LIMIT: f64 = 20.0;

fn terminating_order(a: f64) -> Option<usize> {
    let n = -a;
    if n >= -1e-12 && (n - n.round()).abs() < 1e-12 {
        Some(n.round() as usize)
    } else {
        None
    }
}

/// `(S, S')` for `S(y) = Σ_s (a)_s (c)_s / s! · (−y)^{−s}`, summed up to
/// `max_terms` or until the terms stop decreasing.
fn series(a: f64, c: f64, y: f64, max_terms: usize) -> (f64, f64) {
    let mut term = 1.0;
    let mut s = 1.0;
    let mut ds = 0.0;
    for k in 0..max_terms {
        let next = term * (a + k as f64) * (c + k as f64) / ((k + 1) as f64 * -y);
        if next.abs() >= term.abs() && next != 0.0 {
            break;
        }
        term = next;
        s += term;
        ds += term * -((k + 1) as f64) / y;
        if term.abs() < 1e-18 * s.abs() {
            break;
        }
    }
    (s, ds)
}

fn rhs(beta: f64, mu: f64, y: f64, u: [f64; 2]) -> [f64; 2] {
    [u[1], -(-0.25 + beta / y + (0.25 - mu * mu) / (y * y)) * u[0]]
}

/// Dormand–Prince 5(4) from `y0` to `y1` with relative tolerance `rtol`.
fn integrate(beta: f64, mu: f64, y0: f64, y1: f64, mut u: [f64; 2], rtol: f64) -> [f64; 2] {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];
    let dir = (y1 - y0).signum();
    let mut y = y0;
    let mut h = dir * (0.01 * y0.min((y1 - y0).abs())).max(1e-6);
    while (y1 - y) * dir > 0.0 {
        if (y + h - y1) * dir > 0.0 {
            h = y1 - y;
        }
        let mut k = [[0.0; 2]; 7];
        for s in 0..7 {
            let mut us = u;
            for (j, kj) in k.iter().enumerate().take(s) {
                us[0] += h * A[s][j] * kj[0];
                us[1] += h * A[s][j] * kj[1];
            }
            k[s] = rhs(beta, mu, y + C[s] * h, us);
        }
        let mut u5 = u;
        let mut err = 0.0_f64;
        for c in 0..2 {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for s in 0..7 {
                d5 += B5[s] * k[s][c];
                d4 += B4[s] * k[s][c];
            }
            u5[c] += h * d5;
            let scale = rtol * u[c].abs().max(u5[c].abs()) + 1e-300;
            err = err.max((h * (d5 - d4)).abs() / scale);
        }
        if err <= 1.0 {
            y += h;
            u = u5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        // keep the step within the local scale of the coefficients
        let cap = 0.25 * y.abs().max(1e-3);
        if h.abs() > cap {
            h = dir * cap;
        }
    }
    u
}

/// `W_{β,μ}(y)` for `y > 0`.
pub fn whittaker_w(beta: f64, mu: f64, y: f64) -> Result<f64> {
    if !(y > 0.0) || !y.is_finite() {
        return invalid(format!("Whittaker argument y = {y}: y > 0 required"));
    }
    if !beta.is_finite() || !mu.is_finite() || beta.abs() > PARAM_LIMIT || mu.abs() > PARAM_LIMIT {
        return invalid(format!("Whittaker parameters (β, μ) = ({beta}, {mu}) outside the supported range |β|, |μ| ≤ {PARAM_LIMIT}"));
    }
    let a = 0.5 + mu - beta;
    let c = 0.5 - mu - beta;
    let prefactor = |y: f64| (beta * y.ln() - 0.5 * y).exp();
    if let Some(n) = terminating_order(a).or(terminating_order(c)) {
        let mut term = 1.0;
        let mut exact = 1.0;
        for k in 0..n {
            term *= (a + k as f64) * (c + k as f64) / ((k + 1) as f64 * -y);
            exact += term;
        }
        return Ok(prefactor(y) * exact);
    }
    let y_start = 40.0 + 2.0 * (beta * beta + mu * mu);
    if y >= y_start {
        let (s, _) = series(a, c, y, 200);
        return Ok(prefactor(y) * s);
    }
    let (s, ds) = series(a, c, y_start, 200);
    let p = prefactor(y_start);
    let w0 = p * s;
    let dw0 = w0 * (-0.5 + beta / y_start) + p * ds;
    let u = integrate(beta, mu, y_start, y, [w0, dw0], 1e-13);
    Ok(u[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_value() {
        let w = whittaker_w(1.0, 0.5, 2.0).unwrap();
        assert!((w - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((w - 0.73576).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(whittaker_w(1.0, 0.5, 0.0).is_err());
        assert!(whittaker_w(1.0, 0.5, -1.0).is_err());
        assert!(whittaker_w(50.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn terminating_series_satisfies_ode() {
        // a = ½ + μ − β = −2
        let (beta, mu) = (3.0, 0.5);
        for &y in &[0.5, 1.0, 3.0, 10.0] {
            let h = 1e-3 * y;
            let f = |t: f64| whittaker_w(beta, mu, t).unwrap();
            let d2 = (-f(y + 2.0 * h) + 16.0 * f(y + h) - 30.0 * f(y) + 16.0 * f(y - h) - f(y - 2.0 * h)) / (12.0 * h * h);
            let r = d2 + (-0.25 + beta / y + (0.25 - mu * mu) / (y * y)) * f(y);
            assert!(r.abs() < 1e-7 * f(y).abs().max(1e-300), "{y}: {r}");
        }
    }
}
