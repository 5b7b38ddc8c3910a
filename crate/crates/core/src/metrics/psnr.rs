use super::{MetricScore, PSNR};
use crate::error::{Error, Result};
use crate::image::Image;

/// Peak signal-to-noise ratio with peak 1.0. RGB inputs are compared on the
/// studio-swing luma channel. Identical inputs give `+inf`.
pub fn psnr(a: &Image, b: &Image) -> Result<MetricScore> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mse = if a.channels() == 3 {
        let (ya, yb) = (a.luma_255(), b.luma_255());
        ya.iter().zip(&yb).map(|(x, y)| ((x - y) / 255.0).powi(2)).sum::<f64>() / ya.len() as f64
    } else {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
            .sum::<f64>()
            / a.data().len() as f64
    };
    let value = if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() };
    Ok(MetricScore::new(PSNR, value, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn gray(v: f32) -> Image {
        Image::filled(8, 8, 1, v).unwrap()
    }

    #[test]
    fn identical_images_are_infinite() {
        let a = gray(0.3);
        let s = psnr(&a, &a).unwrap();
        assert!(s.is_infinite() && s.value > 0.0);
        assert!(!s.lower_is_better);
    }

    #[test]
    fn zeros_vs_ones_is_zero_db() {
        assert_eq!(psnr(&gray(0.0), &gray(1.0)).unwrap().value, 0.0);
    }

    #[test]
    fn uniform_offset_of_a_tenth_is_twenty_db() {
        let b = Image::from_fn(8, 8, 1, |y, x, _| (y * 8 + x) as f32 / 100.0).unwrap();
        let a = Image::from_fn(8, 8, 1, |y, x, _| (y * 8 + x) as f32 / 100.0 + 0.1).unwrap();
        // f32 storage rounds the offset; allow for it.
        assert!((psnr(&a, &b).unwrap().value - 20.0).abs() < 1e-4);
    }

    #[test]
    fn rgb_uses_luma() {
        let a = Image::filled(4, 4, 3, 0.0).unwrap();
        let b = Image::filled(4, 4, 3, 1.0).unwrap();
        let expected = 10.0 * (1.0 / (219.0f64 / 255.0).powi(2)).log10();
        assert!((psnr(&a, &b).unwrap().value - expected).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let a = Image::filled(4, 4, 1, 0.0).unwrap();
        let b = Image::filled(4, 5, 1, 0.0).unwrap();
        assert!(matches!(psnr(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn symmetric_and_decreasing_in_noise() {
        let base = Image::from_fn(32, 32, 3, |y, x, c| ((y * 7 + x * 3 + c) % 17) as f32 / 20.0 + 0.05).unwrap();
        let mut last = f64::INFINITY;
        for sigma in [0.01, 0.05, 0.1] {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
            let noisy = base.add_gaussian_noise(sigma, &mut rng);
            let ab = psnr(&base, &noisy).unwrap().value;
            let ba = psnr(&noisy, &base).unwrap().value;
            assert_eq!(ab, ba);
            assert!(ab < last, "sigma {sigma}: {ab} !< {last}");
            last = ab;
        }
    }
}
