use std::path::Path;

use ranksurge::metrics::{niqe, psnr};
use ranksurge::nn::seeded_rng;
use ranksurge::Image;

fn fixture(name: &str) -> Image {
    Image::load(Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("tests/fixtures/images/{name}.png"))).unwrap()
}

const NAMES: [&str; 5] = ["camera", "chelsea", "coffee", "gravel", "immunohistochemistry"];

#[test]
fn niqe_is_invariant_to_half_turns_on_block_aligned_images() {
    for name in NAMES {
        let img = fixture(name);
        assert_eq!((img.height() % 96, img.width() % 96), (0, 0), "{name} is not block aligned");
        let base = niqe(&img).unwrap().value;
        let turned = niqe(&img.rotate_180()).unwrap().value;
        assert!((turned - base).abs() < 1e-6, "{name}: {base} vs {turned}");
    }
}

#[test]
fn niqe_horizontal_and_vertical_flips_agree() {
    // The two flips differ by a half turn, so they must score alike even
    // though each one swaps the diagonal neighbour features.
    for name in NAMES {
        let img = fixture(name);
        let h = niqe(&img.flip_horizontal()).unwrap().value;
        let v = niqe(&img.flip_vertical()).unwrap().value;
        assert!((h - v).abs() < 1e-6, "{name}: {h} vs {v}");
    }
}

#[test]
fn degradations_raise_niqe() {
    let mut rng = seeded_rng(0, "metrics.noise");
    for name in NAMES {
        let img = fixture(name);
        let base = niqe(&img).unwrap().value;
        assert!(niqe(&img.gaussian_blur(3.0)).unwrap().value > base, "{name} blur");
        assert!(niqe(&img.add_gaussian_noise(0.1, &mut rng)).unwrap().value > base, "{name} noise");
    }
}

#[test]
fn psnr_on_fixtures() {
    let img = fixture("camera");
    assert!(psnr(&img, &img).unwrap().is_infinite());
    let blurred = img.gaussian_blur(1.0);
    let a = psnr(&img, &blurred).unwrap().value;
    assert_eq!(a, psnr(&blurred, &img).unwrap().value);
    assert!(a > psnr(&img, &img.gaussian_blur(3.0)).unwrap().value);
}
