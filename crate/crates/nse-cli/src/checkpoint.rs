// SPDX-License-Identifier: MIT OR Apache-2.0

//! Checkpoint directories.
//!
//! A checkpoint is `manifest.json` plus one NSM1 file per weight matrix.
//! Matrices are written first and the manifest last, each atomically, so a
//! directory with a readable manifest always refers to complete files.

use std::path::Path;

use nse_tensor::Matrix;
use nse_toymodel::{PlannerConfig, ToyPlanner};
use serde::{Deserialize, Serialize};

use crate::format::{read_nsm1, write_atomic, write_nsm1};
use crate::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFiles {
    pub layer: usize,
    pub w1: String,
    pub w2: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileInventory {
    pub embed: String,
    pub unembed: String,
    pub blocks: Vec<BlockFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: PlannerConfig,
    pub layers: Vec<usize>,
    pub files: FileInventory,
}

impl Manifest {
    pub fn for_config(config: PlannerConfig) -> Self {
        let blocks = (0..config.layers)
            .map(|l| BlockFiles {
                layer: l,
                w1: format!("layer{l:02}_w1.nsm1"),
                w2: format!("layer{l:02}_w2.nsm1"),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_VERSION,
            config,
            layers: (0..config.layers).collect(),
            files: FileInventory {
                embed: "embed.nsm1".into(),
                unembed: "unembed.nsm1".into(),
                blocks,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Format(format!("manifest: {m}")));
        if self.format_version != CHECKPOINT_VERSION {
            return bad(format!(
                "unsupported format_version {}",
                self.format_version
            ));
        }
        let want: Vec<usize> = (0..self.config.layers).collect();
        if self.layers != want {
            return bad(format!(
                "layer list {:?} does not cover 0..{}",
                self.layers, self.config.layers
            ));
        }
        let block_layers: Vec<usize> = self.files.blocks.iter().map(|b| b.layer).collect();
        if block_layers != want {
            return bad("block files do not match the layer list".into());
        }
        let names = self.files.blocks.iter().flat_map(|b| [&b.w1, &b.w2]);
        for name in [&self.files.embed, &self.files.unembed]
            .into_iter()
            .chain(names)
        {
            if !plain_file_name(name) {
                return bad(format!(
                    "file name {name:?} must be a plain name inside the checkpoint"
                ));
            }
        }
        Ok(())
    }
}

fn plain_file_name(name: &str) -> bool {
    let p = Path::new(name);
    !name.is_empty()
        && p.components().count() == 1
        && matches!(p.components().next(), Some(std::path::Component::Normal(_)))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// # Errors
///
/// [`CliError::Io`] when the directory or a file cannot be written.
pub fn save_checkpoint(dir: &Path, model: &ToyPlanner) -> Result<()> {
    ensure_dir(dir)?;
    let manifest = Manifest::for_config(*model.config());
    write_nsm1(&dir.join(&manifest.files.embed), model.embed())?;
    write_nsm1(&dir.join(&manifest.files.unembed), model.unembed())?;
    for (b, files) in model.blocks().iter().zip(&manifest.files.blocks) {
        write_nsm1(&dir.join(&files.w1), b.w1())?;
        write_nsm1(&dir.join(&files.w2), b.w2())?;
    }
    let mut json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Format(format!("manifest: {e}")))?;
    json.push('\n');
    write_atomic(&dir.join(MANIFEST), json.as_bytes())
}

/// # Errors
///
/// [`CliError::Io`] for missing files, [`CliError::Format`] for a malformed
/// manifest or matrix, model errors for inconsistent shapes.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Format(format!("manifest: {e}")))?;
    m.validate()?;
    Ok(m)
}

/// Load one weight matrix without reading the rest of the checkpoint.
pub fn load_matrix(dir: &Path, file: &str) -> Result<Matrix> {
    read_nsm1(&dir.join(file))
}

pub fn load_checkpoint(dir: &Path) -> Result<ToyPlanner> {
    let m = read_manifest(dir)?;
    let embed = load_matrix(dir, &m.files.embed)?;
    let unembed = load_matrix(dir, &m.files.unembed)?;
    let blocks = m
        .files
        .blocks
        .iter()
        .map(|b| Ok((load_matrix(dir, &b.w1)?, load_matrix(dir, &b.w2)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyPlanner::from_parts(m.config, embed, blocks, unembed)?)
}
