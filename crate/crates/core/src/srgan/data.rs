use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::models::SCALE;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::Tensor;

/// LR/HR image pairs with `HR = 4 × LR` in both dimensions.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub ids: Vec<String>,
    pub lr: Vec<Image>,
    pub hr: Vec<Image>,
}

fn list_pngs(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

impl PairedDataset {
    pub fn new(ids: Vec<String>, lr: Vec<Image>, hr: Vec<Image>) -> Result<Self> {
        if ids.len() != lr.len() || ids.len() != hr.len() {
            return Err(Error::Alignment(format!("{} ids, {} LR, {} HR images", ids.len(), lr.len(), hr.len())));
        }
        for ((id, l), h) in ids.iter().zip(&lr).zip(&hr) {
            let (lh, lw, lc) = l.shape();
            if h.shape() != (lh * SCALE, lw * SCALE, lc) {
                return Err(Error::ShapeMismatch(format!(
                    "{id}: HR {:?} is not {SCALE}x LR {:?}",
                    h.shape(),
                    l.shape()
                )));
            }
        }
        Ok(Self { ids, lr, hr })
    }

    /// Reads `<root>/lr/<id>.png` and `<root>/hr/<id>.png`.
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let lr = list_pngs(&root.join("lr"))?;
        let hr = list_pngs(&root.join("hr"))?;
        if lr.keys().ne(hr.keys()) {
            let only: Vec<&String> = lr.keys().filter(|k| !hr.contains_key(*k)).chain(hr.keys().filter(|k| !lr.contains_key(*k))).collect();
            return Err(Error::Alignment(format!("lr/ and hr/ differ on ids {only:?}")));
        }
        if lr.is_empty() {
            return Err(Error::EmptyDataset(format!("no PNG pairs under {}", root.display())));
        }
        let ids: Vec<String> = lr.keys().cloned().collect();
        let load = |m: &BTreeMap<String, std::path::PathBuf>| ids.iter().map(|id| Image::load(&m[id])).collect::<Result<Vec<_>>>();
        Self::new(ids.clone(), load(&lr)?, load(&hr)?)
    }

    /// Derives LR inputs by bicubic ×1/4 downsampling after cropping each HR
    /// image to a multiple of 4.
    pub fn from_hr(images: &[(String, Image)]) -> Result<Self> {
        let mut ids = Vec::new();
        let mut lr = Vec::new();
        let mut hr = Vec::new();
        for (id, img) in images {
            let (h, w) = (img.height() / SCALE * SCALE, img.width() / SCALE * SCALE);
            let crop = img.crop(0, 0, h, w)?;
            lr.push(crop.resize(1.0 / SCALE as f64)?);
            hr.push(crop);
            ids.push(id.clone());
        }
        Self::new(ids, lr, hr)
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        for (sub, imgs) in [("lr", &self.lr), ("hr", &self.hr)] {
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (id, img) in self.ids.iter().zip(imgs) {
                img.save(dir.join(format!("{id}.png")))?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Fails unless every LR image fits an `lr_patch` crop.
    pub fn check_patch(&self, lr_patch: usize) -> Result<()> {
        match self.lr.iter().find(|l| l.min_side() < lr_patch) {
            Some(l) => Err(Error::PatchTooLarge { patch: lr_patch, height: l.height(), width: l.width() }),
            None if self.is_empty() => Err(Error::EmptyDataset("paired dataset is empty".into())),
            None => Ok(()),
        }
    }

    /// `n` aligned random crops: LR `lr_patch` square and the matching HR region.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, lr_patch: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut lrs = Vec::with_capacity(n);
        let mut hrs = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.random_range(0..self.len());
            let (l, h) = (&self.lr[i], &self.hr[i]);
            let top = rng.random_range(0..=l.height() - lr_patch);
            let left = rng.random_range(0..=l.width() - lr_patch);
            lrs.push(l.crop(top, left, lr_patch, lr_patch)?);
            hrs.push(h.crop(top * SCALE, left * SCALE, lr_patch * SCALE, lr_patch * SCALE)?);
        }
        let refs = |v: &[Image]| -> Result<Tensor<f32>> { Tensor::from_images(&v.iter().collect::<Vec<_>>()) };
        Ok((refs(&lrs)?, refs(&hrs)?))
    }
}
