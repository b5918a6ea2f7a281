//! Binary checkpoint container.
//!
//! All integers and floats little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `MNRFCKPT` |
//! | 4     | format version (`u32`, currently 1) |
//! | 20    | hash grid: levels, features_per_level, table_size_log2, base_resolution, max_resolution (`u32` each) |
//! | 24    | mlp: density_hidden_layers, density_hidden_width, geo_feature_dim, color_hidden_layers, color_hidden_width, direction_frequencies (`u32` each) |
//! | 8     | parameter count (`u64`) |
//! | 4·n   | parameters (`f32`) in [`ParamVector`] layout |

use std::fs;
use std::path::Path;

use super::{FieldModel, MlpConfig, ParamVector};
use crate::encoding::HashGridConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MNRFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub grid: HashGridConfig,
    pub mlp: MlpConfig,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn model(&self) -> Result<FieldModel> {
        FieldModel::new(self.grid, self.mlp)
    }
}

fn as_u32(v: usize, what: &str) -> std::result::Result<u32, String> {
    u32::try_from(v).map_err(|_| format!("{what} does not fit in u32"))
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> std::result::Result<Vec<u8>, String> {
    let g = &ckpt.grid;
    let m = &ckpt.mlp;
    let mut out = Vec::with_capacity(64 + 4 * ckpt.params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        as_u32(g.levels, "levels")?,
        as_u32(g.features_per_level, "features_per_level")?,
        g.table_size_log2,
        g.base_resolution,
        g.max_resolution,
        as_u32(m.density_hidden_layers, "density_hidden_layers")?,
        as_u32(m.density_hidden_width, "density_hidden_width")?,
        as_u32(m.geo_feature_dim, "geo_feature_dim")?,
        as_u32(m.color_hidden_layers, "color_hidden_layers")?,
        as_u32(m.color_hidden_width, "color_hidden_width")?,
        as_u32(m.direction_frequencies, "direction_frequencies")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    for v in ckpt.params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut cursor = bytes;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        if cursor.len() < n {
            return Err("truncated checkpoint".into());
        }
        let (head, rest) = cursor.split_at(n);
        cursor = rest;
        Ok(head)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let mut header = [0u32; 11];
    for v in header.iter_mut() {
        *v = u32_at(take(4)?);
    }
    let grid = HashGridConfig {
        levels: header[0] as usize,
        features_per_level: header[1] as usize,
        table_size_log2: header[2],
        base_resolution: header[3],
        max_resolution: header[4],
    };
    let mlp = MlpConfig {
        density_hidden_layers: header[5] as usize,
        density_hidden_width: header[6] as usize,
        geo_feature_dim: header[7] as usize,
        color_hidden_layers: header[8] as usize,
        color_hidden_width: header[9] as usize,
        direction_frequencies: header[10] as usize,
    };
    let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let model = FieldModel::new(grid, mlp).map_err(|e| e.to_string())?;
    if count != model.param_count() {
        return Err(format!("header declares {count} parameters, configuration implies {}", model.param_count()));
    }
    let raw = take(count.checked_mul(4).ok_or("parameter count overflow")?)?;
    if !cursor.is_empty() {
        return Err(format!("{} trailing bytes", cursor.len()));
    }
    let params = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Checkpoint {
        grid,
        mlp,
        params: ParamVector(params),
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = write_checkpoint(ckpt).map_err(|msg| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    })?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes).map_err(|msg| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    })
}
