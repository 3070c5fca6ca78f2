//! Conversion between zCDP and approximate DP.

use crate::error::{Error, Result};

/// `log` of the conversion bound at order `alpha > 1`:
/// `(a-1)(a rho - eps) - ln(a-1) + a ln(1 - 1/a)`.
fn log_bound(rho: f64, eps: f64, alpha: f64) -> f64 {
    let am1 = alpha - 1.0;
    am1 * (alpha * rho - eps) - am1.ln() + alpha * (-1.0 / alpha).ln_1p()
}

/// Smallest `delta` such that `rho`-zCDP implies `(eps, delta)`-DP, found by
/// minimizing the conversion bound over the Renyi order. The search runs on
/// `ln(alpha - 1)`: a coarse grid brackets the minimum, then golden-section
/// search refines it.
pub fn zcdp_to_eps_delta(rho: f64, eps: f64) -> f64 {
    assert!(rho > 0.0 && eps > 0.0, "rho and eps must be positive");
    let f = |t: f64| log_bound(rho, eps, 1.0 + t.exp());
    // the bound's exponent is minimized near alpha = (eps + rho) / (2 rho)
    let hi = (10.0 * (eps + rho) / rho + 10.0).ln();
    let lo = -30.0_f64;
    const GRID: usize = 400;
    let step = (hi - lo) / GRID as f64;
    let (best, _) =
        (0..=GRID)
            .map(|i| (i, f(lo + step * i as f64)))
            .fold(
                (0, f64::INFINITY),
                |acc, (i, v)| if v < acc.1 { (i, v) } else { acc },
            );
    let mut a = lo + step * best.saturating_sub(1) as f64;
    let mut b = lo + step * (best + 1).min(GRID) as f64;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let m = f(0.5 * (a + b)).min(fc).min(fd);
    m.exp()
}

/// The zCDP level whose conversion gives exactly `delta` at `eps`, by
/// bisection on `ln rho` (`delta` increases with `rho`).
pub fn solve_rho(eps: f64, delta: f64) -> Result<f64> {
    if !(eps > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!(
            "need eps > 0 and 0 < delta < 1, got eps={eps}, delta={delta}"
        )));
    }
    let mut lo = eps * 1e-6;
    let mut hi = eps;
    let mut tries = 0;
    while zcdp_to_eps_delta(lo, eps) >= delta {
        lo *= 1e-3;
        tries += 1;
        if tries > 60 {
            return Err(Error::Numeric("could not bracket rho from below".into()));
        }
    }
    tries = 0;
    while zcdp_to_eps_delta(hi, eps) <= delta {
        hi *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(Error::Numeric("could not bracket rho from above".into()));
        }
    }
    let (mut llo, mut lhi) = (lo.ln(), hi.ln());
    for _ in 0..300 {
        let mid = 0.5 * (llo + lhi);
        let d = zcdp_to_eps_delta(mid.exp(), eps);
        if ((d - delta) / delta).abs() <= 1e-12 {
            return Ok(mid.exp());
        }
        if d < delta {
            llo = mid;
        } else {
            lhi = mid;
        }
        if lhi - llo < 1e-15 {
            break;
        }
    }
    let rho = (0.5 * (llo + lhi)).exp();
    let resid = ((zcdp_to_eps_delta(rho, eps) - delta) / delta).abs();
    if resid > 1e-6 {
        return Err(Error::Numeric(format!(
            "bisection residual {resid:e} too large"
        )));
    }
    Ok(rho)
}
