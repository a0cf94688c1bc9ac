use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// PSNR reported for a zero-error reconstruction.
pub const PSNR_CAP: f64 = 100.0;

const PEAK: f64 = 255.0;

/// Sum of squared errors on the 8-bit scale and the number of samples it
/// covers. `mask` selects pixels (all channels of a selected pixel count).
pub fn squared_error(x: &Tensor, xhat: &Tensor, mask: Option<&[bool]>) -> Result<(f64, usize)> {
    if x.dims() != xhat.dims() {
        return Err(invalid(format!(
            "shape mismatch {:?} vs {:?}",
            x.dims(),
            xhat.dims()
        )));
    }
    let [n, c, h, w] = x.dims();
    if let Some(m) = mask {
        if m.len() != h * w {
            return Err(invalid(format!(
                "mask has {} entries for a {h}x{w} frame",
                m.len()
            )));
        }
        if !m.iter().any(|&b| b) {
            return Err(invalid("empty region mask"));
        }
    }
    let (xd, yd) = (x.data(), xhat.data());
    let mut sse = 0.0;
    let mut count = 0;
    for p in 0..n * c {
        for i in 0..h * w {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let d = PEAK * (xd[p * h * w + i] - yd[p * h * w + i]);
            sse += d * d;
            count += 1;
        }
    }
    Ok((sse, count))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP)
    }
}

/// Peak signal-to-noise ratio in dB for frames with values in `[0, 1]`.
pub fn psnr(x: &Tensor, xhat: &Tensor, mask: Option<&[bool]>) -> Result<f64> {
    let (sse, count) = squared_error(x, xhat, mask)?;
    if count == 0 {
        return Err(invalid("empty frame"));
    }
    Ok(psnr_from_mse(sse / count as f64))
}

pub fn bpp(bits: f64, height: usize, width: usize) -> f64 {
    assert!(height * width > 0, "bpp of an empty frame");
    bits / (height * width) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
        Tensor::from_vec([1, 3, h, w], (0..3 * h * w).map(|_| rng.gen()).collect())
    }

    #[test]
    fn identical_frames_hit_the_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_frame(&mut rng, 8, 8);
        assert_eq!(psnr(&x, &x, None).unwrap(), PSNR_CAP);
    }

    #[test]
    fn unit_mse_value() {
        let x = Tensor::full([1, 3, 4, 4], 0.5);
        let y = x.map(|v| v + 1.0 / 255.0);
        let p = psnr(&x, &y, None).unwrap();
        assert!((p - 48.130_803_608_679_1).abs() < 1e-9, "{p}");
    }

    #[test]
    fn full_mask_equals_unmasked() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, y) = (random_frame(&mut rng, 6, 5), random_frame(&mut rng, 6, 5));
        let all = vec![true; 30];
        assert_eq!(
            psnr(&x, &y, Some(&all)).unwrap(),
            psnr(&x, &y, None).unwrap()
        );
    }

    #[test]
    fn empty_mask_is_rejected() {
        let x = Tensor::zeros([1, 3, 2, 2]);
        assert!(psnr(&x, &x, Some(&[false; 4])).is_err());
        assert!(psnr(&x, &x, Some(&[true; 3])).is_err());
        assert!(psnr(&x, &Tensor::zeros([1, 3, 2, 3]), None).is_err());
    }

    #[test]
    fn complementary_regions_recombine() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (x, y) = (random_frame(&mut rng, 9, 7), random_frame(&mut rng, 9, 7));
            let mut mask: Vec<bool> = (0..63).map(|_| rng.gen_bool(0.3)).collect();
            mask[0] = true;
            mask[1] = false;
            let inv: Vec<bool> = mask.iter().map(|b| !b).collect();
            let (si, ni) = squared_error(&x, &y, Some(&mask)).unwrap();
            let (so, no) = squared_error(&x, &y, Some(&inv)).unwrap();
            let (sa, na) = squared_error(&x, &y, None).unwrap();
            assert_eq!(ni + no, na);
            let mi = si / ni as f64;
            let mo = so / no as f64;
            let combined = (mi * ni as f64 + mo * no as f64) / na as f64;
            assert!((combined - sa / na as f64).abs() <= 1e-9 * (sa / na as f64));
        }
    }

    #[test]
    fn bpp_arithmetic() {
        assert_eq!(bpp(65536.0, 256, 256), 1.0);
        assert_eq!(bpp(0.0, 16, 16), 0.0);
    }
}
