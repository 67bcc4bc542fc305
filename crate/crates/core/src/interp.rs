//! Monotone piecewise-cubic Hermite interpolation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    /// PCHIP slopes (weighted harmonic mean of neighbouring secants).
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        check_nodes(&x, &y)?;
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
            return Ok(Self { x, y, d });
        }
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                d[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Ok(Self { x, y, d })
    }

    /// Hermite cubic with caller-supplied slopes, limited so that monotone data
    /// stays monotone.
    pub fn with_slopes(x: Vec<f64>, y: Vec<f64>, mut d: Vec<f64>) -> Result<Self> {
        check_nodes(&x, &y)?;
        if d.len() != x.len() {
            return Err(Error::InvalidParameter("slope count differs from node count".into()));
        }
        for i in 0..x.len() - 1 {
            let delta = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
            if delta == 0.0 {
                d[i] = 0.0;
                d[i + 1] = 0.0;
                continue;
            }
            if d[i] * delta < 0.0 {
                d[i] = 0.0;
            }
            if d[i + 1] * delta < 0.0 {
                d[i + 1] = 0.0;
            }
            let a = d[i] / delta;
            let b = d[i + 1] / delta;
            let q = a * a + b * b;
            if q > 9.0 {
                let t = 3.0 / q.sqrt();
                d[i] = t * a * delta;
                d[i + 1] = t * b * delta;
            }
        }
        Ok(Self { x, y, d })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn slopes(&self) -> &[f64] {
        &self.d
    }

    pub fn lower(&self) -> f64 {
        self.x[0]
    }

    pub fn upper(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    fn segment(&self, t: f64) -> usize {
        let i = self.x.partition_point(|&xi| xi <= t);
        i.saturating_sub(1).min(self.x.len() - 2)
    }

    /// Value at `t`; the end cubics are extended outside the node range.
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let dh00 = (6.0 * s2 - 6.0 * s) / h;
        let dh10 = 3.0 * s2 - 4.0 * s + 1.0;
        let dh01 = (-6.0 * s2 + 6.0 * s) / h;
        let dh11 = 3.0 * s2 - 2.0 * s;
        dh00 * self.y[i] + dh10 * self.d[i] + dh01 * self.y[i + 1] + dh11 * self.d[i + 1]
    }
}

fn check_nodes(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter("node and value counts differ".into()));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 1, got: x.len() });
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("nodes must be strictly increasing".into()));
    }
    Ok(())
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reproduces_cubics_with_exact_slopes() {
        let x: Vec<f64> = (0..9).map(|i| i as f64 * 0.5).collect();
        let f = |t: f64| 3.0 - t * t * 0.1 - 0.01 * t * t * t;
        let df = |t: f64| -0.2 * t - 0.03 * t * t;
        let c = MonotoneCubic::with_slopes(
            x.clone(),
            x.iter().map(|&t| f(t)).collect(),
            x.iter().map(|&t| df(t)).collect(),
        )
        .unwrap();
        for t in [0.1, 1.37, 2.5, 3.99] {
            assert!((c.eval(t) - f(t)).abs() < 1e-13);
            assert!((c.derivative(t) - df(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn pchip_interpolates_nodes() {
        let x = vec![0.0, 1.0, 2.5, 3.0, 7.0];
        let y = vec![5.0, 4.0, 1.0, 0.9, 0.1];
        let c = MonotoneCubic::new(x.clone(), y.clone()).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((c.eval(*a) - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_nodes() {
        assert!(MonotoneCubic::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(MonotoneCubic::new(vec![0.0], vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn monotone_data_gives_monotone_interpolant(
            steps in prop::collection::vec(0.01f64..2.0, 3..20),
            drops in prop::collection::vec(0.0f64..3.0, 20),
        ) {
            let mut x = vec![0.0];
            for s in &steps { x.push(x.last().unwrap() + s); }
            let mut y = vec![10.0];
            for i in 0..steps.len() { y.push(y.last().unwrap() - drops[i]); }
            let c = MonotoneCubic::new(x.clone(), y).unwrap();
            let hi = *x.last().unwrap();
            let mut prev = f64::INFINITY;
            for i in 0..=400 {
                let v = c.eval(hi * i as f64 / 400.0);
                prop_assert!(v <= prev + 1e-12);
                prev = v;
            }
        }
    }
}
