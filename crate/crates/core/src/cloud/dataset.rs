//! Tiling clean source scenes into disjoint, cloud-degraded dataset splits.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::Morphology;
use super::noise::derive_seed;
use super::sample::{make_sample, CloudSpec, SamplePair};
use crate::error::{Error, Result};
use crate::raster::{load_raster, save_raster, MultiBandRaster};

pub const MANIFEST_FILE: &str = "dataset.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Split names, largest patches first (allocation order).
pub const SPLITS: [&str; 4] = ["test_full", "test_reduced", "val", "train"];

const FILE_KINDS: [&str; 5] = [
    "cloudy_lrmsi",
    "cloudy_pan",
    "clean_hrmsi",
    "clean_lrmsi",
    "clean_pan",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test_reduced: usize,
    pub test_full: usize,
}

impl SplitCounts {
    pub fn get(&self, split: &str) -> usize {
        match split {
            "train" => self.train,
            "val" => self.val,
            "test_reduced" => self.test_reduced,
            "test_full" => self.test_full,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub scale_ratio: usize,
    /// Target side of train/val patches.
    pub patch_size: usize,
    /// Target side of reduced-resolution test patches.
    pub reduced_size: usize,
    /// Target side of full-resolution test scenes.
    pub full_size: usize,
    /// Side of each procedurally generated source scene.
    pub scene_size: usize,
    pub thickness_min: f64,
    pub thickness_max: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale_ratio: 4,
            patch_size: 64,
            reduced_size: 128,
            full_size: 512,
            scene_size: 512,
            thickness_min: 0.2,
            thickness_max: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn patch_side(&self, split: &str) -> usize {
        match split {
            "test_full" => self.full_size,
            "test_reduced" => self.reduced_size,
            _ => self.patch_size,
        }
    }

    fn validate(&self) -> Result<()> {
        let r = self.scale_ratio;
        if r == 0 {
            return Err(Error::Argument("scale ratio must be positive".into()));
        }
        for side in [self.patch_size, self.reduced_size, self.full_size] {
            if side == 0 || side % r != 0 {
                return Err(Error::Argument(format!(
                    "patch side {side} not a positive multiple of {r}"
                )));
            }
        }
        if !(self.thickness_min >= 0.0 && self.thickness_max >= self.thickness_min) {
            return Err(Error::Argument("invalid thickness range".into()));
        }
        Ok(())
    }
}

/// A clean HR-MSI and PAN from which patches are cut.
#[derive(Debug, Clone)]
pub struct SourceScene {
    pub name: String,
    pub hrmsi: MultiBandRaster,
    pub pan: MultiBandRaster,
}

/// Window of a source scene, in source pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRegion {
    pub scene: usize,
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl SourceRegion {
    pub fn overlaps(&self, other: &SourceRegion) -> bool {
        self.scene == other.scene
            && self.y < other.y + other.h
            && other.y < self.y + self.h
            && self.x < other.x + other.w
            && other.x < self.x + self.w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub files: BTreeMap<String, String>,
    pub cloud: CloudSpec,
    pub source: SourceRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub r: usize,
    pub splits: BTreeMap<String, Vec<ManifestEntry>>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {}",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn split(&self, name: &str) -> &[ManifestEntry] {
        self.splits.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Reads one entry's files relative to the manifest directory.
    pub fn load_sample(&self, root: impl AsRef<Path>, entry: &ManifestEntry) -> Result<SamplePair> {
        let root = root.as_ref();
        let read = |kind: &str| -> Result<Option<MultiBandRaster>> {
            entry
                .files
                .get(kind)
                .map(|rel| load_raster(root.join(rel)))
                .transpose()
        };
        let required = |kind: &str| -> Result<MultiBandRaster> {
            read(kind)?.ok_or_else(|| Error::Format(format!("entry {} lacks `{kind}`", entry.id)))
        };
        let pair = SamplePair {
            id: entry.id.clone(),
            scale_ratio: self.r,
            cloudy_lrmsi: required("cloudy_lrmsi")?,
            cloudy_pan: required("cloudy_pan")?,
            clean_hrmsi: required("clean_hrmsi")?,
            clean_lrmsi: read("clean_lrmsi")?,
            clean_pan: read("clean_pan")?,
        };
        pair.validate()?;
        Ok(pair)
    }
}

struct Job {
    split: &'static str,
    index: usize,
    region: SourceRegion,
}

/// Aligned first-fit placement of square patches on per-scene cell grids.
fn allocate(sources: &[SourceScene], counts: &SplitCounts, cfg: &SynthConfig) -> Result<Vec<Job>> {
    let sides: Vec<usize> = SPLITS
        .iter()
        .filter(|s| counts.get(s) > 0)
        .map(|s| cfg.patch_side(s))
        .collect();
    let Some(cell) = sides.iter().copied().reduce(gcd) else {
        return Ok(Vec::new());
    };
    let mut grids: Vec<(usize, usize, Vec<bool>)> = sources
        .iter()
        .map(|s| {
            let (gh, gw) = (s.hrmsi.height() / cell, s.hrmsi.width() / cell);
            (gh, gw, vec![false; gh * gw])
        })
        .collect();
    let mut jobs = Vec::new();
    for split in SPLITS {
        let n = counts.get(split);
        let k = cfg.patch_side(split) / cell;
        for index in 0..n {
            let mut placed = None;
            'scan: for (scene, (gh, gw, used)) in grids.iter_mut().enumerate() {
                let (gh, gw) = (*gh, *gw);
                let mut gy = 0;
                while gy + k <= gh {
                    let mut gx = 0;
                    while gx + k <= gw {
                        let free = (gy..gy + k).all(|y| (gx..gx + k).all(|x| !used[y * gw + x]));
                        if free {
                            for y in gy..gy + k {
                                for x in gx..gx + k {
                                    used[y * gw + x] = true;
                                }
                            }
                            placed = Some(SourceRegion {
                                scene,
                                y: gy * cell,
                                x: gx * cell,
                                h: k * cell,
                                w: k * cell,
                            });
                            break 'scan;
                        }
                        gx += k;
                    }
                    gy += k;
                }
            }
            let region = placed.ok_or_else(|| {
                Error::Capacity(format!(
                    "no room for {split} patch {index} ({0}x{0}) in {1} source scene(s)",
                    k * cell,
                    sources.len()
                ))
            })?;
            jobs.push(Job {
                split,
                index,
                region,
            });
        }
    }
    Ok(jobs)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn cloud_for(cfg: &SynthConfig, id: &str, index: usize) -> CloudSpec {
    let seed = derive_seed(cfg.seed, id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thickness = if cfg.thickness_max > cfg.thickness_min {
        rng.gen_range(cfg.thickness_min..cfg.thickness_max)
    } else {
        cfg.thickness_min
    };
    CloudSpec {
        seed,
        morphology: Morphology::ALL[index % Morphology::ALL.len()],
        thickness,
    }
}

fn write_sample(
    out_dir: &Path,
    split: &str,
    pair: &SamplePair,
) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    let members: [(&str, Option<&MultiBandRaster>); 5] = [
        ("cloudy_lrmsi", Some(&pair.cloudy_lrmsi)),
        ("cloudy_pan", Some(&pair.cloudy_pan)),
        ("clean_hrmsi", Some(&pair.clean_hrmsi)),
        ("clean_lrmsi", pair.clean_lrmsi.as_ref()),
        ("clean_pan", pair.clean_pan.as_ref()),
    ];
    debug_assert!(members.iter().map(|m| m.0).eq(FILE_KINDS));
    for (kind, raster) in members {
        if let Some(raster) = raster {
            let rel = format!("{split}/{}_{kind}.mbr", pair.id);
            save_raster(raster, out_dir.join(&rel))?;
            files.insert(kind.to_string(), rel);
        }
    }
    Ok(files)
}

/// Cuts, degrades and writes all requested patches, returning the manifest
/// that was saved as `dataset.json` in `out_dir`.
pub fn synth_dataset(
    sources: &[SourceScene],
    counts: &SplitCounts,
    cfg: &SynthConfig,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir: PathBuf = out_dir.as_ref().to_path_buf();
    for s in sources {
        if s.pan.dims() != (s.hrmsi.height(), s.hrmsi.width(), 1) {
            return Err(Error::Validation(format!(
                "source `{}` PAN not aligned",
                s.name
            )));
        }
    }
    let jobs = allocate(sources, counts, cfg)?;
    fs::create_dir_all(&out_dir)?;
    for split in SPLITS {
        if counts.get(split) > 0 {
            fs::create_dir_all(out_dir.join(split))?;
        }
    }
    let entries: Vec<(&str, ManifestEntry)> = jobs
        .par_iter()
        .map(|job| {
            let id = format!("{}_{:04}", job.split, job.index);
            let src = &sources[job.region.scene];
            let SourceRegion { y, x, h, w, .. } = job.region;
            let hr = src.hrmsi.crop(y, x, h, w)?;
            let pan = src.pan.crop(y, x, h, w)?;
            let cloud = cloud_for(cfg, &id, job.index);
            let pair = make_sample(id.clone(), &hr, &pan, &cloud, cfg.scale_ratio)?;
            let files = write_sample(&out_dir, job.split, &pair)?;
            Ok((
                job.split,
                ManifestEntry {
                    id,
                    files,
                    cloud,
                    source: job.region,
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut splits: BTreeMap<String, Vec<ManifestEntry>> = BTreeMap::new();
    for (split, entry) in entries {
        splits.entry(split.to_string()).or_default().push(entry);
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        r: cfg.scale_ratio,
        splits,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
