use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Crop, PatchRecord, RankPair, RankgenConfig, Split};
use crate::error::{Error, Result};
use crate::image::Image;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub config: RankgenConfig,
    pub metric: String,
    pub lower_is_better: bool,
    /// Corpus order; also the stable tie-break order for labels.
    pub methods: Vec<String>,
    pub site_count: usize,
    pub val_site_count: usize,
    pub dropped_sites: usize,
    pub patch_count: usize,
    pub pair_count: usize,
}

/// One line of the JSON-lines manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifestLine {
    Header(ManifestHeader),
    Patch(PatchRecord),
    Pair(RankPair),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankManifest {
    pub header: ManifestHeader,
    pub patches: Vec<PatchRecord>,
    pub pairs: Vec<RankPair>,
}

impl RankManifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut line = |l: &ManifestLine| -> Result<()> {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))
        };
        line(&ManifestLine::Header(self.header.clone()))?;
        for p in &self.patches {
            line(&ManifestLine::Patch(p.clone()))?;
        }
        for p in &self.pairs {
            line(&ManifestLine::Pair(p.clone()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header = None;
        let (mut patches, mut pairs) = (Vec::new(), Vec::new());
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine =
                serde_json::from_str(&line).map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), n + 1)))?;
            match parsed {
                ManifestLine::Header(h) if header.is_none() && n == 0 => header = Some(h),
                ManifestLine::Header(_) => return Err(Error::Manifest(format!("{}:{}: unexpected header", path.display(), n + 1))),
                ManifestLine::Patch(p) => patches.push(p),
                ManifestLine::Pair(p) => pairs.push(p),
            }
        }
        let header = header.ok_or_else(|| Error::Manifest(format!("{}: missing header line", path.display())))?;
        if header.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported manifest version {}", header.version)));
        }
        let m = Self { header, patches, pairs };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        let ids: HashMap<&str, &PatchRecord> = self.patches.iter().map(|p| (p.patch_id.as_str(), p)).collect();
        if ids.len() != self.patches.len() {
            return Err(Error::Manifest("duplicate patch ids".into()));
        }
        for pair in &self.pairs {
            let (a, b) = match (ids.get(pair.first.as_str()), ids.get(pair.second.as_str())) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Manifest(format!("pair references unknown patch ({}, {})", pair.first, pair.second))),
            };
            if a.image_id != b.image_id || a.crop != b.crop || a.method_id == b.method_id {
                return Err(Error::Alignment(format!("pair ({}, {}) does not join two methods at one site", a.patch_id, b.patch_id)));
            }
            if pair.gamma.abs() != 1 {
                return Err(Error::Manifest(format!("pair gamma {} not in {{-1, +1}}", pair.gamma)));
            }
        }
        Ok(())
    }
}

/// Patches and pairs sharing `(image_id, crop)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub image_id: String,
    pub crop: Crop,
    pub split: Split,
    /// Indices into [`RankManifest::patches`], in corpus order.
    pub patches: Vec<usize>,
    /// Indices into [`RankManifest::pairs`].
    pub pairs: Vec<usize>,
}

/// A manifest with its patch images decoded.
#[derive(Debug, Clone)]
pub struct RankDataset {
    pub manifest: RankManifest,
    pub root: PathBuf,
    images: Vec<Image>,
    index: HashMap<String, usize>,
    sites: Vec<Site>,
}

impl RankDataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let manifest = RankManifest::load(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let images = manifest.patches.iter().map(|p| Image::load(root.join(&p.path))).collect::<Result<Vec<_>>>()?;
        Self::from_parts(manifest, root, images)
    }

    pub fn from_parts(manifest: RankManifest, root: PathBuf, images: Vec<Image>) -> Result<Self> {
        if images.len() != manifest.patches.len() {
            return Err(Error::Manifest("image count does not match patch records".into()));
        }
        let index: HashMap<String, usize> =
            manifest.patches.iter().enumerate().map(|(i, p)| (p.patch_id.clone(), i)).collect();
        let mut by_site: BTreeMap<(String, Crop), Site> = BTreeMap::new();
        for (i, p) in manifest.patches.iter().enumerate() {
            by_site
                .entry((p.image_id.clone(), p.crop))
                .or_insert_with(|| Site { image_id: p.image_id.clone(), crop: p.crop, split: p.split, patches: Vec::new(), pairs: Vec::new() })
                .patches
                .push(i);
        }
        for (j, pair) in manifest.pairs.iter().enumerate() {
            let p = &manifest.patches[index[&pair.first]];
            if let Some(site) = by_site.get_mut(&(p.image_id.clone(), p.crop)) {
                site.pairs.push(j);
            }
        }
        let sites = by_site.into_values().collect();
        Ok(Self { manifest, root, images, index, sites })
    }

    pub fn image(&self, patch: usize) -> &Image {
        &self.images[patch]
    }

    pub fn patch_index(&self, patch_id: &str) -> Option<usize> {
        self.index.get(patch_id).copied()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn sites_in(&self, split: Split) -> Vec<&Site> {
        self.sites.iter().filter(|s| s.split == split).collect()
    }

    pub fn metric(&self) -> &str {
        &self.manifest.header.metric
    }

    /// Patches of one method in site order.
    pub fn method_patches(&self, method: &str, split: Split) -> Vec<usize> {
        self.sites_in(split)
            .iter()
            .filter_map(|s| s.patches.iter().copied().find(|&i| self.manifest.patches[i].method_id == method))
            .collect()
    }
}
