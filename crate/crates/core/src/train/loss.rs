use crate::entropy::RateEstimate;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::qmap::{LambdaMap, DEFAULT_ALPHA, DEFAULT_BETA};
use crate::tensor::Tensor;

/// Pixel values are multiplied by this before the training distortion is
/// evaluated, so Λ weighs squared errors on the 8-bit scale.
pub const PIXEL_PEAK: f64 = 255.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub rate: f64,
    pub wmse: f64,
    pub total: f64,
}

/// `(1/HW) Σ Λ ⊙ mean_c((x − x̂)²)` for `[1,C,H,W]` frames.
pub fn wmse_loss(x: &Tensor, xhat: &Tensor, lambda: &LambdaMap) -> Result<f64> {
    let [n, c, h, w] = x.dims();
    if xhat.dims() != x.dims() || n != 1 || (lambda.height, lambda.width) != (h, w) {
        return Err(Error::InvalidInput(format!(
            "wmse shapes {:?}, {:?}, {}x{}",
            x.dims(),
            xhat.dims(),
            lambda.height,
            lambda.width
        )));
    }
    let plane = h * w;
    let mut acc = 0.0;
    for (p, &lam) in lambda.values.iter().enumerate() {
        let se: f64 = (0..c)
            .map(|ch| {
                let d = x.data()[ch * plane + p] - xhat.data()[ch * plane + p];
                d * d
            })
            .sum();
        acc += lam * se / c as f64;
    }
    Ok(acc / plane as f64)
}

pub fn total_loss(rate: &RateEstimate, wmse: f64) -> LossBreakdown {
    let r = rate.bpp();
    LossBreakdown {
        rate: r,
        wmse,
        total: r + wmse,
    }
}

/// `α·exp(β·m)` on the graph.
pub(crate) fn lambda_var(g: &mut Graph, m: Var) -> Var {
    let e = g.scale(m, DEFAULT_BETA);
    let e = g.exp(e);
    g.scale(e, DEFAULT_ALPHA)
}

/// Weighted distortion of a `[N,3,H,W]` batch on the 8-bit scale, averaged
/// over batch and pixels.
pub(crate) fn wmse_var(g: &mut Graph, x: Var, xhat: Var, lambda: Var) -> Var {
    let [n, _, h, w] = g.value(x).dims();
    let d = g.sub(x, xhat);
    let sq = g.square(d);
    let mc = g.mean_channels(sq);
    let weighted = g.mul(mc, lambda);
    let s = g.sum(weighted);
    g.scale(s, PIXEL_PEAK * PIXEL_PEAK / (n * h * w) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmap::{lambda_map, uniform_map};

    fn lam(h: usize, w: usize, values: Vec<f64>) -> LambdaMap {
        LambdaMap {
            height: h,
            width: w,
            values,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }

    #[test]
    fn hand_example() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 2.0]);
        let xh = Tensor::zeros([1, 1, 2, 2]);
        let l = lam(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(wmse_loss(&x, &xh, &l).unwrap(), 4.25);
        assert_eq!(wmse_loss(&x, &x, &l).unwrap(), 0.0);
    }

    #[test]
    fn uniform_map_reduces_to_scaled_mse() {
        let x = Tensor::from_vec([1, 3, 2, 3], (0..18).map(|i| i as f64 * 0.05).collect());
        let xh = x.map(|v| v * 0.9 + 0.01);
        let mse = x.zip_map(&xh, |a, b| (a - b).powi(2)).mean();
        let m = uniform_map(2, 3, 0.7).unwrap();
        let l = lambda_map(&m, DEFAULT_ALPHA, DEFAULT_BETA).unwrap();
        let got = wmse_loss(&x, &xh, &l).unwrap();
        let want = l.values[0] * mse;
        assert!((got - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn shape_mismatch() {
        let x = Tensor::zeros([1, 3, 2, 2]);
        let l = lam(2, 3, vec![1.0; 6]);
        assert!(wmse_loss(&x, &x, &l).is_err());
    }

    #[test]
    fn totals() {
        let zero = RateEstimate {
            level_bits: vec![0.0],
            pixels: 4,
        };
        assert_eq!(total_loss(&zero, 0.0).total, 0.0);
        let half = RateEstimate {
            level_bits: vec![1.0, 1.0],
            pixels: 4,
        };
        assert_eq!(total_loss(&half, 1.25).total, 1.75);
    }

    #[test]
    fn beta_only_moves_distortion() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![0.2, 0.9]);
        let xh = Tensor::from_vec([1, 1, 1, 2], vec![0.1, 0.5]);
        let m = uniform_map(1, 2, 0.5).unwrap();
        let rate = RateEstimate {
            level_bits: vec![3.0],
            pixels: 2,
        };
        let a = total_loss(
            &rate,
            wmse_loss(&x, &xh, &lambda_map(&m, 0.001, 6.0).unwrap()).unwrap(),
        );
        let b = total_loss(
            &rate,
            wmse_loss(&x, &xh, &lambda_map(&m, 0.001, 4.0).unwrap()).unwrap(),
        );
        assert_eq!(a.rate, b.rate);
        assert!(a.wmse > b.wmse);
    }

    #[test]
    fn graph_matches_direct() {
        let x = Tensor::from_vec(
            [1, 3, 2, 2],
            (0..12).map(|i| (i as f64 * 0.37).sin().abs()).collect(),
        );
        let xh = x.map(|v| (v * 0.8).min(1.0));
        let m = crate::qmap::QualityMap::new(2, 2, vec![0.0, 0.3, 0.6, 1.0]).unwrap();
        let l = lambda_map(&m, DEFAULT_ALPHA, DEFAULT_BETA).unwrap();
        let direct = wmse_loss(&x.map(|v| v * 255.0), &xh.map(|v| v * 255.0), &l).unwrap();
        let mut g = Graph::new(false);
        let (xv, xhv, mv) = (g.constant(x), g.constant(xh), g.constant(m.to_tensor()));
        let lv = lambda_var(&mut g, mv);
        let w = wmse_var(&mut g, xv, xhv, lv);
        assert!((g.value(w).data()[0] - direct).abs() < 1e-9 * direct);
    }
}
