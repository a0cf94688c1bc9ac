//! Bjøntegaard delta rate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub label: String,
    pub bpp: f64,
    pub psnr: f64,
}

/// Rate-distortion points ordered by strictly increasing bpp.
#[derive(Clone, Debug, PartialEq)]
pub struct RdCurve {
    pub label: String,
    points: Vec<RdPoint>,
}

impl RdCurve {
    /// Sorts by bpp; rejects duplicate or non-finite rates.
    pub fn new(label: impl Into<String>, mut points: Vec<RdPoint>) -> Result<Self> {
        if points
            .iter()
            .any(|p| !p.bpp.is_finite() || !p.psnr.is_finite() || p.bpp <= 0.0)
        {
            return Err(invalid(
                "curve points need finite psnr and positive finite bpp",
            ));
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        if points.windows(2).any(|w| w[0].bpp >= w[1].bpp) {
            return Err(invalid("curve bpp values must be distinct"));
        }
        Ok(RdCurve {
            label: label.into(),
            points,
        })
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson
/// derivatives with the three-point end rule).
#[derive(Clone, Debug)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(invalid("pchip needs at least two matching samples"));
        }
        if x.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("pchip abscissae must increase strictly"));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let m: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = m[0];
            d[1] = m[0];
        } else {
            for k in 1..n - 1 {
                let (m0, m1) = (m[k - 1], m[k]);
                if m0 == 0.0 || m1 == 0.0 || m0.signum() != m1.signum() {
                    continue;
                }
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / m0 + w2 / m1);
            }
            d[0] = edge(h[0], h[1], m[0], m[1]);
            d[n - 1] = edge(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
        }
        Ok(Pchip { x, y, d })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.interval(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[k]
            + (s3 - 2.0 * s2 + s) * h * self.d[k]
            + (-2.0 * s3 + 3.0 * s2) * self.y[k + 1]
            + (s3 - s2) * h * self.d[k + 1]
    }

    /// Exact integral over `[a, b]`, both inside the sample range.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integrate(b, a);
        }
        let mut total = 0.0;
        for k in 0..self.x.len() - 1 {
            let (x0, x1) = (self.x[k], self.x[k + 1]);
            let (lo, hi) = (a.max(x0), b.min(x1));
            if hi <= lo {
                continue;
            }
            let h = x1 - x0;
            let (s0, s1) = ((lo - x0) / h, (hi - x0) / h);
            let prim = |s: f64| {
                let (s2, s3, s4) = (s * s, s * s * s, s * s * s * s);
                (s4 / 2.0 - s3 + s) * self.y[k]
                    + (s4 / 4.0 - 2.0 * s3 / 3.0 + s2 / 2.0) * h * self.d[k]
                    + (-s4 / 2.0 + s3) * self.y[k + 1]
                    + (s4 / 4.0 - s3 / 3.0) * h * self.d[k + 1]
            };
            total += h * (prim(s1) - prim(s0));
        }
        total
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }
}

fn edge(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || d == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

fn log_rate_vs_psnr(c: &RdCurve) -> Result<Pchip> {
    let mut pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.psnr, p.bpp.log10())).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::Computation(format!(
            "curve '{}' has repeated PSNR values",
            c.label
        )));
    }
    Pchip::new(
        pts.iter().map(|p| p.0).collect(),
        pts.iter().map(|p| p.1).collect(),
    )
}

fn psnr_range(c: &RdCurve) -> (f64, f64) {
    c.points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.psnr), hi.max(p.psnr))
        })
}

/// Average rate difference of `test` against `reference` at equal PSNR, in
/// percent. Negative values mean `test` needs fewer bits.
pub fn bd_rate(reference: &RdCurve, test: &RdCurve) -> Result<f64> {
    for c in [reference, test] {
        if c.len() < 4 {
            return Err(invalid(format!(
                "curve '{}' has {} points; at least 4 are required",
                c.label,
                c.len()
            )));
        }
    }
    let (r_lo, r_hi) = psnr_range(reference);
    let (t_lo, t_hi) = psnr_range(test);
    let (lo, hi) = (r_lo.max(t_lo), r_hi.min(t_hi));
    if hi <= lo {
        return Err(Error::Computation("curves share no PSNR range".into()));
    }
    let ir = log_rate_vs_psnr(reference)?.integrate(lo, hi);
    let it = log_rate_vs_psnr(test)?.integrate(lo, hi);
    Ok((10f64.powf((it - ir) / (hi - lo)) - 1.0) * 100.0)
}
