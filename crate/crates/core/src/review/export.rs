use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ReviewStore;
use crate::annotation::ReviewStatus;
use crate::backbone::TrainSample;
use crate::curation::{curation_stats, split, CurationStats, SplitSpec, Splits};
use crate::error::{Result, ScdError};
use crate::fsutil;
use crate::types::io::{load_change_mask, load_rgb, save_change_mask};

pub const EXPORT_MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportEntry {
    pub id: String,
    pub split: String,
    /// Paths relative to the export directory.
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<String>,
    pub phrases: Vec<String>,
    pub removed_instances: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub num_classes: u8,
    pub pairs: Vec<ExportEntry>,
    pub splits: Splits,
    pub stats: CurationStats,
}

const OWNED_DIRS: [&str; 3] = ["masks", "images", "splits"];

fn prepare_out_dir(out: &Path) -> Result<()> {
    if out.exists() {
        let mut entries = std::fs::read_dir(out).map_err(|e| ScdError::io(format!("list {}", out.display()), e))?;
        let empty = entries.next().is_none();
        if !empty {
            if !out.join(EXPORT_MANIFEST).is_file() {
                return Err(ScdError::InvalidConfig(format!(
                    "{} is not empty and holds no previous export",
                    out.display()
                )));
            }
            for d in OWNED_DIRS {
                let p = out.join(d);
                if p.exists() {
                    std::fs::remove_dir_all(&p).map_err(|e| ScdError::io(format!("clear {}", p.display()), e))?;
                }
            }
        }
    }
    fsutil::create_dir_all(out)
}

fn copy_image(src: &Path, dst: &Path) -> Result<()> {
    let bytes = std::fs::read(src).map_err(|e| ScdError::io(format!("read {}", src.display()), e))?;
    fsutil::write_atomic(dst, &bytes)
}

/// Writes accepted pairs as 4-class mask PNGs with a manifest, split lists
/// and curation stats. Pending pairs are an error unless `allow_partial`.
pub fn export_dataset(
    store: &ReviewStore,
    out: &Path,
    spec: &SplitSpec,
    allow_partial: bool,
) -> Result<ExportManifest> {
    let state = store.state();
    let all: Vec<_> = state.annotations().cloned().collect();
    let stats = curation_stats(&all);
    if stats.pending > 0 && !allow_partial {
        return Err(ScdError::Conflict(format!(
            "{} pairs still pending review; pass allow_partial to export the accepted ones",
            stats.pending
        )));
    }
    let accepted: Vec<_> = all.iter().filter(|a| a.status == ReviewStatus::Accepted).collect();
    let ids: Vec<String> = accepted.iter().map(|a| a.pair_id.clone()).collect();
    let splits = split(&ids, spec)?;
    prepare_out_dir(out)?;

    let mut pairs = Vec::with_capacity(accepted.len());
    for a in accepted {
        let mask = format!("masks/{}.png", a.pair_id);
        save_change_mask(&a.mask, &out.join(&mask))?;
        let (mut t0, mut t1) = (None, None);
        if let Some(dir) = store.run_dir(&a.pair_id) {
            let (p0, p1) = (
                format!("images/{}_t0.png", a.pair_id),
                format!("images/{}_t1.png", a.pair_id),
            );
            copy_image(&dir.join("t0.png"), &out.join(&p0))?;
            copy_image(&dir.join("t1.png"), &out.join(&p1))?;
            t0 = Some(p0);
            t1 = Some(p1);
        }
        pairs.push(ExportEntry {
            id: a.pair_id.clone(),
            split: splits
                .split_of(&a.pair_id)
                .expect("every accepted id is split")
                .to_string(),
            mask,
            t0,
            t1,
            phrases: a.caption.t1_phrases(),
            removed_instances: state.removed(&a.pair_id).to_vec(),
        });
    }
    splits.save(&out.join("splits"))?;
    let manifest = ExportManifest {
        num_classes: 4,
        pairs,
        splits,
        stats,
    };
    fsutil::write_json_atomic(&out.join(EXPORT_MANIFEST), &manifest)?;
    fsutil::write_atomic(&out.join("stats.txt"), stats.to_table().as_bytes())?;
    Ok(manifest)
}

/// Training samples from an export, optionally restricted to one split.
pub fn load_exported(dir: &Path, split: Option<&str>) -> Result<Vec<TrainSample>> {
    let manifest: ExportManifest = fsutil::read_json(&dir.join(EXPORT_MANIFEST))?;
    manifest
        .pairs
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .map(|e| {
            let (Some(t0), Some(t1)) = (&e.t0, &e.t1) else {
                return Err(ScdError::NotFound(format!("images for exported pair {}", e.id)));
            };
            TrainSample::new(
                e.id.clone(),
                load_rgb(&dir.join(t0))?,
                load_rgb(&dir.join(t1))?,
                e.phrases.clone(),
                load_change_mask(&dir.join(&e.mask), manifest.num_classes)?,
            )
        })
        .collect()
}
