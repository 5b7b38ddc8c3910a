//! Two-level corpora built from clean images and a fixed degradation.

use std::collections::BTreeMap;
use std::path::Path;

use super::MethodCorpus;
use crate::error::{Error, Result};
use crate::image::Image;

pub const ORIGINAL: &str = "original";
pub const BLURRED: &str = "blurred";

/// Writes `<root>/original/<id>.png` and `<root>/blurred/<id>.png` (Gaussian
/// blur of standard deviation `sigma` pixels) and returns both corpora.
pub fn blur_corpora(images: &[(String, Image)], sigma: f64, root: impl AsRef<Path>) -> Result<Vec<MethodCorpus>> {
    let root = root.as_ref();
    let mut original = BTreeMap::new();
    let mut blurred = BTreeMap::new();
    for dir in [ORIGINAL, BLURRED] {
        std::fs::create_dir_all(root.join(dir)).map_err(|e| Error::io(root.join(dir), e))?;
    }
    for (id, img) in images {
        let (a, b) = (root.join(ORIGINAL).join(format!("{id}.png")), root.join(BLURRED).join(format!("{id}.png")));
        img.save(&a)?;
        img.gaussian_blur(sigma).save(&b)?;
        original.insert(id.clone(), a);
        blurred.insert(id.clone(), b);
    }
    Ok(vec![MethodCorpus::new(ORIGINAL, original), MethodCorpus::new(BLURRED, blurred)])
}
