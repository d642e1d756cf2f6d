use crate::latency::CongestionFactor;
use crate::network::Network;

/// Which link cost drives the assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// Travel time `t(x)`; the fixed point is the user equilibrium.
    Travel,
    /// Marginal cost `d/dx [x t(x)]`; the fixed point is the social optimum.
    Marginal,
}

/// Per-link cost evaluation for one network and congestion factor.
#[derive(Clone, Debug)]
pub(crate) struct CostModel<'a> {
    pub t0: Vec<f64>,
    pub m: Vec<f64>,
    pub cf: &'a CongestionFactor,
    pub kind: CostKind,
}

impl<'a> CostModel<'a> {
    pub fn new(network: &Network, cf: &'a CongestionFactor, kind: CostKind) -> Self {
        Self {
            t0: network.free_flow_times(),
            m: network.capacities(),
            cf,
            kind,
        }
    }

    #[inline]
    pub fn cost(&self, a: usize, x: f64) -> f64 {
        match self.kind {
            CostKind::Travel => self.cf.time(self.t0[a], self.m[a], x),
            CostKind::Marginal => self.cf.marginal(self.t0[a], self.m[a], x),
        }
    }

    #[inline]
    pub fn derivative(&self, a: usize, x: f64) -> f64 {
        match self.kind {
            CostKind::Travel => self.cf.time_derivative(self.t0[a], self.m[a], x),
            CostKind::Marginal => self.cf.marginal_derivative(self.t0[a], self.m[a], x),
        }
    }

    /// Antiderivative of [`CostModel::cost`]: the Beckmann term for travel
    /// times, `x t(x)` for marginal costs.
    #[inline]
    pub fn potential(&self, a: usize, x: f64) -> f64 {
        match self.kind {
            CostKind::Travel => self.cf.potential(self.t0[a], self.m[a], x),
            CostKind::Marginal => x * self.cf.time(self.t0[a], self.m[a], x),
        }
    }

    pub fn costs(&self, x: &[f64], out: &mut [f64]) {
        for (a, (o, &xa)) in out.iter_mut().zip(x).enumerate() {
            *o = self.cost(a, xa);
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(a, &xa)| self.potential(a, xa)).sum()
    }

    /// Directional derivative of the objective at `x + alpha d` along `d`.
    pub fn slope(&self, x: &[f64], d: &[f64], alpha: f64) -> f64 {
        x.iter()
            .zip(d)
            .enumerate()
            .filter(|(_, (_, &da))| da != 0.0)
            .map(|(a, (&xa, &da))| da * self.cost(a, (xa + alpha * da).max(0.0)))
            .sum()
    }

    /// Exact minimizer of the objective on `x + alpha d`, `alpha` in
    /// `[0, alpha_max]`, by bisection on the slope to width `1e-12`.
    pub fn line_search(&self, x: &[f64], d: &[f64], alpha_max: f64) -> f64 {
        if alpha_max <= 0.0 || self.slope(x, d, 0.0) >= 0.0 {
            return 0.0;
        }
        if self.slope(x, d, alpha_max) <= 0.0 {
            return alpha_max;
        }
        let (mut lo, mut hi) = (0.0, alpha_max);
        while hi - lo > 1e-12 * alpha_max.max(1e-300) {
            let mid = 0.5 * (lo + hi);
            if self.slope(x, d, mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}
