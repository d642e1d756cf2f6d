//! Separable link latency functions `t(x) = t0 * f(x / m)` with a polynomial
//! congestion factor `f(u) = sum_i beta_i u^i`, `f(0) = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial congestion factor with `beta[0] == 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CongestionFactorJson", into = "CongestionFactorJson")]
pub struct CongestionFactor {
    beta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CongestionFactorJson {
    degree: usize,
    beta: Vec<f64>,
}

impl TryFrom<CongestionFactorJson> for CongestionFactor {
    type Error = Error;

    fn try_from(raw: CongestionFactorJson) -> Result<Self> {
        if raw.beta.len() != raw.degree + 1 {
            return Err(Error::InvalidArgument(format!(
                "degree {} needs {} coefficients, got {}",
                raw.degree,
                raw.degree + 1,
                raw.beta.len()
            )));
        }
        CongestionFactor::new(raw.beta)
    }
}

impl From<CongestionFactor> for CongestionFactorJson {
    fn from(cf: CongestionFactor) -> Self {
        CongestionFactorJson {
            degree: cf.degree(),
            beta: cf.beta,
        }
    }
}

impl CongestionFactor {
    /// Builds `f` from `(beta_0, ..., beta_n)`. `beta_0` must equal 1.
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidArgument(
                "congestion factor needs at least beta_0".into(),
            ));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument(
                "congestion factor coefficients must be finite".into(),
            ));
        }
        if (beta[0] - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "f(0) must be 1, got beta_0 = {}",
                beta[0]
            )));
        }
        let mut beta = beta;
        beta[0] = 1.0;
        Ok(Self { beta })
    }

    /// `f(u) = 1 + alpha u^power`, the BPR form.
    pub fn bpr(alpha: f64, power: usize) -> Self {
        let mut beta = vec![0.0; power + 1];
        beta[0] = 1.0;
        beta[power] += alpha;
        Self { beta }
    }

    /// `f = 1`: constant link latencies.
    pub fn constant() -> Self {
        Self { beta: vec![1.0] }
    }

    /// `f(u) = 1 + slope u`.
    pub fn linear(slope: f64) -> Self {
        Self {
            beta: vec![1.0, slope],
        }
    }

    pub fn degree(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// `f(u)`.
    pub fn value(&self, u: f64) -> f64 {
        self.beta.iter().rev().fold(0.0, |acc, &b| acc * u + b)
    }

    /// `f'(u)`.
    pub fn derivative(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &b) in self.beta.iter().enumerate().skip(1).rev() {
            acc = acc * u + i as f64 * b;
        }
        acc
    }

    /// `f''(u)`.
    pub fn second_derivative(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &b) in self.beta.iter().enumerate().skip(2).rev() {
            acc = acc * u + (i * (i - 1)) as f64 * b;
        }
        acc
    }

    /// `int_0^u f(s) ds`.
    pub fn integral(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &b) in self.beta.iter().enumerate().rev() {
            acc = acc * u + b / (i + 1) as f64;
        }
        acc * u
    }

    /// Link travel time `t0 f(x/m)`.
    pub fn travel_time(&self, t0: f64, m: f64, x: f64) -> Result<f64> {
        check_flow(x)?;
        Ok(self.time(t0, m, x))
    }

    /// Beckmann term `int_0^x t(s) ds = t0 m F(x/m)`, evaluated in closed form.
    pub fn beckmann_term(&self, t0: f64, m: f64, x: f64) -> Result<f64> {
        check_flow(x)?;
        Ok(self.potential(t0, m, x))
    }

    /// `d/dx [x t(x)] = t0 [f(u) + u f'(u)]`.
    pub fn marginal_cost(&self, t0: f64, m: f64, x: f64) -> Result<f64> {
        check_flow(x)?;
        Ok(self.marginal(t0, m, x))
    }

    #[inline]
    pub(crate) fn time(&self, t0: f64, m: f64, x: f64) -> f64 {
        t0 * self.value(x / m)
    }

    #[inline]
    pub(crate) fn time_derivative(&self, t0: f64, m: f64, x: f64) -> f64 {
        t0 * self.derivative(x / m) / m
    }

    #[inline]
    pub(crate) fn potential(&self, t0: f64, m: f64, x: f64) -> f64 {
        t0 * m * self.integral(x / m)
    }

    #[inline]
    pub(crate) fn marginal(&self, t0: f64, m: f64, x: f64) -> f64 {
        let u = x / m;
        t0 * (self.value(u) + u * self.derivative(u))
    }

    /// `d/dx` of the marginal cost: `t0 [2 f'(u) + u f''(u)] / m`.
    #[inline]
    pub(crate) fn marginal_derivative(&self, t0: f64, m: f64, x: f64) -> f64 {
        let u = x / m;
        t0 * (2.0 * self.derivative(u) + u * self.second_derivative(u)) / m
    }

    /// Checks `f' >= -tol` on a 1000-point grid over `[0, max_u]`; returns the
    /// first grid point where `f` decreases.
    pub fn monotonicity_violation(&self, max_u: f64) -> Option<f64> {
        const SAMPLES: usize = 1000;
        if !(max_u > 0.0) {
            return None;
        }
        let scale = 1.0 + self.beta.iter().map(|b| b.abs()).sum::<f64>();
        (0..SAMPLES)
            .map(|i| max_u * i as f64 / (SAMPLES - 1) as f64)
            .find(|&u| self.derivative(u) < -1e-9 * scale)
    }

    pub fn is_nondecreasing_on(&self, max_u: f64) -> bool {
        self.monotonicity_violation(max_u).is_none()
    }
}

fn check_flow(x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::NegativeArgument(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bpr_travel_times() {
        let f = CongestionFactor::bpr(0.15, 4);
        assert_eq!(f.travel_time(10.0, 100.0, 0.0).unwrap(), 10.0);
        assert_relative_eq!(f.travel_time(10.0, 100.0, 100.0).unwrap(), 11.5, epsilon = 1e-12);
        assert_relative_eq!(f.travel_time(10.0, 100.0, 200.0).unwrap(), 34.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_flow_is_a_domain_error() {
        let f = CongestionFactor::bpr(0.15, 4);
        assert!(matches!(
            f.travel_time(1.0, 1.0, -1.0),
            Err(Error::NegativeArgument(_))
        ));
        assert!(f.beckmann_term(1.0, 1.0, -0.5).is_err());
        assert!(f.marginal_cost(1.0, 1.0, -0.5).is_err());
    }

    #[test]
    fn beckmann_closed_form() {
        let f = CongestionFactor::bpr(0.15, 4);
        assert_eq!(f.beckmann_term(3.0, 7.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(
            CongestionFactor::constant().beckmann_term(2.0, 9.0, 5.0).unwrap(),
            10.0,
            epsilon = 1e-12
        );
        let exact = f.beckmann_term(10.0, 100.0, 100.0).unwrap();
        assert_relative_eq!(exact, 1030.0, epsilon = 1e-9);
        // composite Simpson on t(s) as an independent check
        let n = 2000;
        let h = 100.0 / n as f64;
        let t = |s: f64| 10.0 * (1.0 + 0.15 * (s / 100.0).powi(4));
        let mut simpson = t(0.0) + t(100.0);
        for i in 1..n {
            simpson += if i % 2 == 1 { 4.0 } else { 2.0 } * t(i as f64 * h);
        }
        simpson *= h / 3.0;
        assert_relative_eq!(exact, simpson, max_relative = 1e-10);
    }

    #[test]
    fn marginal_costs() {
        let f = CongestionFactor::bpr(0.15, 4);
        assert_eq!(f.marginal_cost(10.0, 100.0, 0.0).unwrap(), 10.0);
        assert_relative_eq!(f.marginal_cost(10.0, 100.0, 100.0).unwrap(), 17.5, epsilon = 1e-12);
        assert_relative_eq!(
            CongestionFactor::linear(1.0).marginal_cost(4.0, 2.0, 2.0).unwrap(),
            12.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn json_shape() {
        let f = CongestionFactor::bpr(0.15, 2);
        let text = serde_json::to_string(&f).unwrap();
        assert_eq!(text, r#"{"degree":2,"beta":[1.0,0.0,0.15]}"#);
        let back: CongestionFactor = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<CongestionFactor>(r#"{"degree":3,"beta":[1.0]}"#).is_err());
        assert!(serde_json::from_str::<CongestionFactor>(r#"{"degree":0,"beta":[2.0]}"#).is_err());
    }

    #[test]
    fn monotonicity_grid_check() {
        assert!(CongestionFactor::bpr(0.15, 4).is_nondecreasing_on(3.0));
        let dipping = CongestionFactor::new(vec![1.0, -1.0, 1.0]).unwrap();
        let u = dipping.monotonicity_violation(2.0).unwrap();
        assert!(u < 0.5);
        assert!(dipping.is_nondecreasing_on(0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn factor() -> impl Strategy<Value = CongestionFactor> {
            proptest::collection::vec(0.0..2.0f64, 0..6).prop_map(|mut tail| {
                tail.insert(0, 1.0);
                CongestionFactor::new(tail).unwrap()
            })
        }

        proptest! {
            #[test]
            fn beckmann_derivative_is_travel_time(
                f in factor(),
                t0 in 0.1..20.0f64,
                m in 1.0..1000.0f64,
                frac in 0.01..3.0f64,
            ) {
                let x = frac * m;
                let h = 1e-4 * x;
                let fd = (f.potential(t0, m, x + h) - f.potential(t0, m, x - h)) / (2.0 * h);
                let t = f.time(t0, m, x);
                prop_assert!((fd - t).abs() <= 1e-6 * t.abs().max(1.0));
            }

            #[test]
            fn marginal_dominates_time(f in factor(), t0 in 0.1..20.0f64, m in 1.0..100.0f64, x in 0.0..500.0f64) {
                prop_assert!(f.marginal(t0, m, x) >= f.time(t0, m, x));
            }

            #[test]
            fn time_is_nondecreasing(f in factor(), t0 in 0.1..20.0f64, m in 1.0..100.0f64, x in 0.0..500.0f64, dx in 0.0..50.0f64) {
                prop_assert!(f.time(t0, m, x + dx) >= f.time(t0, m, x));
            }
        }
    }
}
