//! Rényi-DP accounting for the subsampled Gaussian mechanism.
//!
//! One federated round samples a fixed-size cohort without replacement and
//! adds Gaussian noise to the clipped average. Per round we use the general
//! RDP upper bound for a mechanism run on a uniformly subsampled subset:
//!
//! ```text
//! ε'(α) ≤ 1/(α-1) · log(1 + q²·C(α,2)·min{4(e^{ε(2)}-1), 2e^{ε(2)}}
//!                         + Σ_{j=3..α} 2·q^j·C(α,j)·e^{(j-1)ε(j)})
//! ```
//!
//! with `ε(j) = j/(2z²)` the RDP of the Gaussian mechanism, valid at integer
//! `α ≥ 2`. Subsampling never hurts, so the result is also capped by `ε(α)`.
//! Composition over rounds is linear and conversion to (ε, δ) uses
//! `ε = min_α ε'(α) + log(1/δ)/(α-1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RDP values per order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    orders: Vec<f64>,
    values: Vec<f64>,
}

/// An (ε, δ) guarantee and the order that achieved it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpend {
    pub epsilon: f64,
    pub delta: f64,
    pub order: f64,
}

impl RdpCurve {
    pub fn new(orders: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if orders.len() != values.len() {
            return Err(Error::invalid("one RDP value per order"));
        }
        if let Some(a) = orders.iter().find(|&&a| !(a > 1.0)) {
            return Err(Error::invalid(format!("RDP order {a} must exceed 1")));
        }
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::invalid("RDP values must be nonnegative"));
        }
        Ok(RdpCurve { orders, values })
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at an order present in the grid.
    pub fn at(&self, order: f64) -> Option<f64> {
        self.orders
            .iter()
            .position(|&a| a == order)
            .map(|i| self.values[i])
    }
}

/// Coarse order grid; [`privacy_spend`] refines around its minimizer.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75, 2.0, 2.5];
    orders.extend((3..=64).map(f64::from));
    orders.extend([128.0, 256.0, 512.0]);
    orders
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log(e^x - 1)` for `x > 0`.
fn log_expm1(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// `(α-1)·ε'(α)` at an integer order `α ≥ 2`: the log of the moment sum.
fn log_moment(q: f64, z: f64, alpha: u64) -> f64 {
    let gauss = |j: f64| j / (2.0 * z * z);
    let cap = (alpha as f64 - 1.0) * gauss(alpha as f64);
    if q >= 1.0 {
        return cap;
    }
    let log_q = q.ln();
    let ln2 = std::f64::consts::LN_2;
    let e2 = gauss(2.0);
    // running log C(α, j)
    let mut log_binom = (alpha as f64).ln() + (alpha as f64 - 1.0).ln() - ln2;
    let second = (4f64.ln() + log_expm1(e2)).min(e2 + ln2);
    let mut acc = log_add_exp(0.0, 2.0 * log_q + log_binom + second);
    for j in 3..=alpha {
        let jf = j as f64;
        log_binom += (alpha as f64 - jf + 1.0).ln() - jf.ln();
        acc = log_add_exp(acc, jf * log_q + log_binom + (jf - 1.0) * gauss(jf) + ln2);
    }
    acc.min(cap)
}

/// RDP of one round of the subsampled Gaussian mechanism at a single order.
///
/// Fractional orders use the linear interpolation of the log moment between
/// the neighbouring integers, an upper bound since the log moment is convex.
fn rdp_at(q: f64, z: f64, alpha: f64) -> f64 {
    if q >= 1.0 {
        return alpha / (2.0 * z * z);
    }
    let lo = alpha.floor();
    let hi = alpha.ceil();
    let moment = |a: f64| -> f64 {
        if a <= 1.0 {
            0.0
        } else {
            log_moment(q, z, a as u64)
        }
    };
    let m = if lo == hi {
        moment(alpha)
    } else {
        (hi - alpha) * moment(lo) + (alpha - lo) * moment(hi)
    };
    (m / (alpha - 1.0)).max(0.0)
}

/// Per-order RDP of one round with sampling rate `q` and noise multiplier `z`.
pub fn rdp_subsampled_gaussian(q: f64, z: f64, orders: &[f64]) -> Result<RdpCurve> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("sampling rate q = {q} outside (0, 1]")));
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::invalid(format!("noise multiplier z = {z} must be positive")));
    }
    let values = orders.iter().map(|&a| rdp_at(q, z, a)).collect();
    RdpCurve::new(orders.to_vec(), values)
}

/// RDP after `rounds` independent rounds.
pub fn compose_rounds(curve: &RdpCurve, rounds: u64) -> RdpCurve {
    let t = rounds as f64;
    RdpCurve {
        orders: curve.orders.clone(),
        values: curve.values.iter().map(|v| v * t).collect(),
    }
}

/// Converts RDP to (ε, δ) at the best order of the curve.
pub fn rdp_to_eps(curve: &RdpCurve, delta: f64) -> Result<PrivacySpend> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta = {delta} outside (0, 1)")));
    }
    if curve.orders.is_empty() {
        return Err(Error::invalid("empty order grid"));
    }
    let log_inv_delta = -delta.ln();
    let (epsilon, order) = curve
        .orders
        .iter()
        .zip(&curve.values)
        .map(|(&a, &v)| (v + log_inv_delta / (a - 1.0), a))
        .fold((f64::INFINITY, curve.orders[0]), |best, cur| {
            if cur.0 < best.0 {
                cur
            } else {
                best
            }
        });
    Ok(PrivacySpend {
        epsilon,
        delta,
        order,
    })
}

/// Coarse grid plus every integer order between the neighbours of the coarse
/// minimizer.
pub fn refined_orders(q: f64, z: f64, rounds: u64, delta: f64) -> Result<Vec<f64>> {
    let coarse = default_orders();
    let curve = compose_rounds(&rdp_subsampled_gaussian(q, z, &coarse)?, rounds);
    let best = rdp_to_eps(&curve, delta)?.order;
    let i = coarse.iter().position(|&a| a == best).expect("order from grid");
    let lo = coarse[i.saturating_sub(1)].ceil() as u64;
    let hi = coarse[(i + 1).min(coarse.len() - 1)].floor() as u64;
    let mut orders = coarse;
    for a in lo.max(2)..=hi {
        let a = a as f64;
        if !orders.contains(&a) {
            orders.push(a);
        }
    }
    orders.sort_by(f64::total_cmp);
    Ok(orders)
}

/// Full accounting for `rounds` rounds of DP-FedAvg at sampling rate `q`.
pub fn privacy_spend(q: f64, z: f64, rounds: u64, delta: f64) -> Result<PrivacySpend> {
    if rounds == 0 {
        return Err(Error::invalid("rounds must be >= 1"));
    }
    if z == 0.0 {
        return Ok(PrivacySpend {
            epsilon: f64::INFINITY,
            delta,
            order: f64::INFINITY,
        });
    }
    let orders = refined_orders(q, z, rounds, delta)?;
    let curve = compose_rounds(&rdp_subsampled_gaussian(q, z, &orders)?, rounds);
    rdp_to_eps(&curve, delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen from an independent Python/scipy implementation of the same bound
    // (gammaln binomials, scipy logsumexp).
    #[test]
    fn matches_reference_oracle() {
        let cases = [
            (0.004, 1.0, 64.0, 26.40189918154565),
            (0.004, 1.0, 2.0, 8.698123553334019e-05),
            (0.004, 1.0, 10.0, 0.0004870188493527558),
            (0.02, 0.8, 7.0, 1.0258657191722025),
            (0.5, 2.0, 3.0, 0.375),
            (1e-3, 1.0, 512.0, 249.08008306133405),
        ];
        for (q, z, a, want) in cases {
            let got = rdp_subsampled_gaussian(q, z, &[a]).unwrap().values()[0];
            assert!(
                ((got - want) / want).abs() < 1e-9,
                "q={q} z={z} α={a}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn full_sampling_is_plain_gaussian() {
        let c = rdp_subsampled_gaussian(1.0, 1.0, &[2.0]).unwrap();
        assert_eq!(c.values()[0], 1.0);
        for &a in &default_orders() {
            for z in [0.5, 1.0, 3.0] {
                let v = rdp_subsampled_gaussian(1.0, z, &[a]).unwrap().values()[0];
                let want = a / (2.0 * z * z);
                assert!(((v - want) / want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn vanishing_sampling_rate() {
        let c = rdp_subsampled_gaussian(1e-300, 1.0, &default_orders()).unwrap();
        assert!(c.values().iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn rejects_bad_rate() {
        assert!(rdp_subsampled_gaussian(0.0, 1.0, &[2.0]).is_err());
        assert!(rdp_subsampled_gaussian(1.5, 1.0, &[2.0]).is_err());
        assert!(rdp_subsampled_gaussian(0.5, 0.0, &[2.0]).is_err());
    }

    #[test]
    fn composition_is_linear() {
        let c = rdp_subsampled_gaussian(0.01, 1.1, &default_orders()).unwrap();
        assert_eq!(compose_rounds(&c, 1), c);
        let two = compose_rounds(&c, 2);
        for (a, b) in two.values().iter().zip(c.values()) {
            assert_eq!(*a, 2.0 * b);
        }
        let zero = RdpCurve::new(vec![2.0, 3.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(compose_rounds(&zero, 1000).values(), &[0.0, 0.0]);
    }

    #[test]
    fn gaussian_conversion_optimum() {
        // α/2 + ln(1e5)/(α-1) is minimized at α = 1 + sqrt(2 ln 1e5) ≈ 5.80
        let orders: Vec<f64> = (0..=4000).map(|i| 1.5 + i as f64 * 0.0025).collect();
        let c = rdp_subsampled_gaussian(1.0, 1.0, &orders).unwrap();
        let s = rdp_to_eps(&c, 1e-5).unwrap();
        let a_star = 1.0 + (2.0 * 1e5f64.ln()).sqrt();
        let want = a_star / 2.0 + 1e5f64.ln() / (a_star - 1.0);
        assert!((s.epsilon - want).abs() < 1e-4);
        assert!((s.epsilon - 5.30).abs() < 0.01);
        assert!((s.order - 5.80).abs() < 0.01);
    }

    #[test]
    fn conversion_errors() {
        let empty = RdpCurve::new(vec![], vec![]).unwrap();
        assert!(rdp_to_eps(&empty, 1e-5).is_err());
        let c = RdpCurve::new(vec![2.0], vec![1.0]).unwrap();
        assert!(rdp_to_eps(&c, 0.0).is_err());
        assert!(RdpCurve::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn rnn_experiment_epsilon() {
        let s = privacy_spend(5000.0 / 342_477.0, 1.0, 2000, 2.92e-6).unwrap();
        assert!(((s.epsilon - 9.22) / 9.22).abs() < 0.05, "{s:?}");
        assert!(refined_orders(5000.0 / 342_477.0, 1.0, 2000, 2.92e-6)
            .unwrap()
            .contains(&s.order));
    }

    #[test]
    fn simulation_rows_reach_millions() {
        // z = 0.01 simulation rows print ε = 9.99×10⁶
        for (n, delta) in [(425.0, 2.35e-3), (2125.0, 4.71e-4), (850.0, 1.18e-3)] {
            let s = privacy_spend(10.0 / n, 0.01, 1000, delta).unwrap();
            assert!(((s.epsilon - 9.99e6) / 9.99e6).abs() < 0.05, "{s:?}");
        }
    }

    #[test]
    fn curve_nondecreasing_in_order() {
        for (q, z) in [(0.004, 1.0), (0.05, 0.7), (0.3, 2.0), (0.001, 4.0)] {
            let c = rdp_subsampled_gaussian(q, z, &default_orders()).unwrap();
            for w in c.values().windows(2) {
                assert!(w[1] >= w[0] * (1.0 - 1e-12), "q={q} z={z}: {w:?}");
            }
        }
    }

    #[test]
    fn epsilon_monotone_in_parameters() {
        let eps = |q: f64, z: f64, t: u64, d: f64| privacy_spend(q, z, t, d).unwrap().epsilon;
        let base = (0.01, 1.0, 500, 1e-6);
        for z in [0.6, 0.8, 1.0, 1.5, 2.5].windows(2) {
            assert!(eps(base.0, z[1], base.2, base.3) <= eps(base.0, z[0], base.2, base.3));
        }
        for t in [1u64, 10, 100, 1000, 5000].windows(2) {
            assert!(eps(base.0, base.1, t[1], base.3) >= eps(base.0, base.1, t[0], base.3));
        }
        for q in [0.001, 0.004, 0.01, 0.05, 0.2].windows(2) {
            assert!(eps(q[1], base.1, base.2, base.3) >= eps(q[0], base.1, base.2, base.3));
        }
        for d in [1e-9, 1e-7, 1e-5, 1e-3].windows(2) {
            assert!(eps(base.0, base.1, base.2, d[1]) <= eps(base.0, base.1, base.2, d[0]));
        }
    }
}
