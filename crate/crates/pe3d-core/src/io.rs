//! File formats: rig/scene/annotation JSON, the DPTH and PE3D flat
//! binaries, similarity CSV and PGM exports.
//!
//! Binary layouts (all integers and floats little-endian):
//! * `DPTH`: magic `DPTH`, u32 height, u32 width, H*W f32 depths
//!   (row-major), H*W validity bytes (0/1).
//! * `PE3D`: magic `PE3D\0`, u32 channels, u32 height, u32 width,
//!   C*H*W f32 values (channel-major), H*W mask bytes (0/1).

use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::analysis::{SimilarityMap, SimilarityView};
use crate::encode::{PeGrid, PeVariant};
use crate::error::{Error, Result};
use crate::geometry::{CameraParams, DepthMap, PerceptionRegion};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigCameraSpec {
    pub name: String,
    pub width: u32,
    pub height: u32,
    /// Row-major 3x3 intrinsics.
    pub k: Vec<f64>,
    /// Row-major 3x3 camera-to-rig rotation.
    pub r: Vec<f64>,
    /// Camera center in the rig frame.
    pub t: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionSpec {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigFile {
    pub cameras: Vec<RigCameraSpec>,
    pub region: RegionSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub names: Vec<String>,
    pub cameras: Vec<CameraParams>,
    pub region: PerceptionRegion,
}

/// Parse and validate a rig configuration document. Violations of the
/// camera invariants are reported with the offending field path.
pub fn parse_rig(json: &str) -> Result<Rig> {
    let file: RigFile = serde_json::from_str(json).map_err(|e| Error::Config {
        path: "rig".into(),
        message: e.to_string(),
    })?;
    let region = PerceptionRegion::new(
        (file.region.x[0], file.region.x[1]),
        (file.region.y[0], file.region.y[1]),
        (file.region.z[0], file.region.z[1]),
    )
    .map_err(|e| prefix_path("region", e))?;
    let mut names = Vec::new();
    let mut cameras = Vec::new();
    for (i, cam) in file.cameras.iter().enumerate() {
        let path = |field: &str| format!("cameras[{i}].{field}");
        if cam.k.len() != 9 {
            return Err(Error::Config {
                path: path("K"),
                message: format!("expected 9 numbers, got {}", cam.k.len()),
            });
        }
        if cam.r.len() != 9 {
            return Err(Error::Config {
                path: path("R"),
                message: format!("expected 9 numbers, got {}", cam.r.len()),
            });
        }
        if cam.t.len() != 3 {
            return Err(Error::Config {
                path: path("T"),
                message: format!("expected 3 numbers, got {}", cam.t.len()),
            });
        }
        let k = Matrix3::from_row_slice(&cam.k);
        let r = Matrix3::from_row_slice(&cam.r);
        let t = Vector3::from_row_slice(&cam.t);
        let parsed = CameraParams::new(k, r, t, cam.width, cam.height)
            .map_err(|e| prefix_path(&format!("cameras[{i}]"), e))?;
        names.push(cam.name.clone());
        cameras.push(parsed);
    }
    if cameras.is_empty() {
        return Err(Error::Config {
            path: "cameras".into(),
            message: "rig needs at least one camera".into(),
        });
    }
    Ok(Rig {
        names,
        cameras,
        region,
    })
}

fn prefix_path(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { path, message } => Error::Config {
            path: format!("{prefix}.{path}"),
            message,
        },
        other => Error::Config {
            path: prefix.to_string(),
            message: other.to_string(),
        },
    }
}

/// Serialize a rig back to the configuration format.
pub fn rig_to_json(rig: &Rig) -> String {
    let file = RigFile {
        cameras: rig
            .names
            .iter()
            .zip(&rig.cameras)
            .map(|(name, cam)| RigCameraSpec {
                name: name.clone(),
                width: cam.width,
                height: cam.height,
                k: cam.intrinsics.transpose().as_slice().to_vec(),
                r: cam.rotation.transpose().as_slice().to_vec(),
                t: cam.translation.as_slice().to_vec(),
            })
            .collect(),
        region: RegionSpec {
            x: [rig.region.x_min, rig.region.x_max],
            y: [rig.region.y_min, rig.region.y_max],
            z: [rig.region.z_min, rig.region.z_max],
        },
    };
    serde_json::to_string_pretty(&file).expect("rig serialization cannot fail")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnnotationObject {
    pub class: u32,
    pub center: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct Annotations {
    pub objects: Vec<AnnotationObject>,
}

const DEPTH_MAGIC: &[u8; 4] = b"DPTH";
const PE_MAGIC: &[u8; 5] = b"PE3D\0";

pub fn write_depth(w: &mut impl Write, map: &DepthMap) -> Result<()> {
    w.write_all(DEPTH_MAGIC)?;
    w.write_all(&(map.height as u32).to_le_bytes())?;
    w.write_all(&(map.width as u32).to_le_bytes())?;
    for d in map.depths() {
        w.write_all(&(*d as f32).to_le_bytes())?;
    }
    for v in map.valid_flags() {
        w.write_all(&[u8::from(*v)])?;
    }
    Ok(())
}

pub fn read_depth(r: &mut impl Read) -> Result<DepthMap> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DEPTH_MAGIC {
        return Err(Error::Config {
            path: "dpth".into(),
            message: "bad magic, not a DPTH file".into(),
        });
    }
    let height = read_u32(r)? as usize;
    let width = read_u32(r)? as usize;
    let n = height * width;
    let mut depths = Vec::with_capacity(n);
    for _ in 0..n {
        depths.push(read_f32(r)? as f64);
    }
    let mut valid = vec![0u8; n];
    r.read_exact(&mut valid)?;
    DepthMap::new(height, width, depths, valid.into_iter().map(|b| b != 0).collect())
}

pub fn write_pe_grid(w: &mut impl Write, pe: &PeGrid) -> Result<()> {
    w.write_all(PE_MAGIC)?;
    w.write_all(&(pe.channels as u32).to_le_bytes())?;
    w.write_all(&(pe.height as u32).to_le_bytes())?;
    w.write_all(&(pe.width as u32).to_le_bytes())?;
    for c in 0..pe.channels {
        for row in 0..pe.height {
            for col in 0..pe.width {
                w.write_all(&(pe.at(c, row, col) as f32).to_le_bytes())?;
            }
        }
    }
    for m in pe.mask() {
        w.write_all(&[u8::from(*m)])?;
    }
    Ok(())
}

pub fn read_pe_grid(r: &mut impl Read, variant: PeVariant) -> Result<PeGrid> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != PE_MAGIC {
        return Err(Error::Config {
            path: "pe3d".into(),
            message: "bad magic, not a PE3D file".into(),
        });
    }
    let channels = read_u32(r)? as usize;
    let height = read_u32(r)? as usize;
    let width = read_u32(r)? as usize;
    let mut pe = PeGrid::zeros(channels, height, width, variant);
    for c in 0..channels {
        for row in 0..height {
            for col in 0..width {
                pe.cell_mut(row, col)[c] = read_f32(r)? as f64;
            }
        }
    }
    let mut mask = vec![0u8; height * width];
    r.read_exact(&mut mask)?;
    for row in 0..height {
        for col in 0..width {
            pe.set_masked(row, col, mask[row * width + col] != 0);
        }
    }
    Ok(pe)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Similarity CSV: a reference comment line, a header, then one row per
/// cell. f32 values print in shortest-round-trip form, so parsing the CSV
/// back reproduces the map exactly.
pub fn similarity_to_csv(map: &SimilarityMap) -> String {
    let mut out = String::new();
    let (view, u, v) = map.reference;
    out.push_str(&format!("# reference,{view},{u},{v}\n"));
    out.push_str("view,row,col,similarity\n");
    for (vi, sim) in map.views.iter().enumerate() {
        for row in 0..sim.height {
            for col in 0..sim.width {
                out.push_str(&format!("{vi},{row},{col},{}\n", sim.value(row, col)));
            }
        }
    }
    out
}

/// Parse the CSV produced by [`similarity_to_csv`].
pub fn similarity_from_csv(text: &str) -> Result<SimilarityMap> {
    let mut lines = text.lines();
    let bad = |message: &str| Error::Config {
        path: "similarity.csv".into(),
        message: message.into(),
    };
    let ref_line = lines.next().ok_or_else(|| bad("empty file"))?;
    let ref_parts: Vec<&str> = ref_line
        .strip_prefix("# reference,")
        .ok_or_else(|| bad("missing reference line"))?
        .split(',')
        .collect();
    if ref_parts.len() != 3 {
        return Err(bad("malformed reference line"));
    }
    let parse_idx = |s: &str| -> Result<usize> {
        s.parse().map_err(|_| bad(&format!("bad index '{s}'")))
    };
    let reference = (
        parse_idx(ref_parts[0])?,
        parse_idx(ref_parts[1])?,
        parse_idx(ref_parts[2])?,
    );
    let header = lines.next().ok_or_else(|| bad("missing header"))?;
    if header != "view,row,col,similarity" {
        return Err(bad("unexpected header"));
    }
    let mut cells: Vec<(usize, usize, usize, f32)> = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(bad(&format!("malformed row '{line}'")));
        }
        let value: f32 = parts[3]
            .parse()
            .map_err(|_| bad(&format!("bad value '{}'", parts[3])))?;
        cells.push((parse_idx(parts[0])?, parse_idx(parts[1])?, parse_idx(parts[2])?, value));
    }
    let n_views = cells.iter().map(|c| c.0).max().map_or(0, |m| m + 1);
    let mut views = Vec::new();
    for vi in 0..n_views {
        let height = cells
            .iter()
            .filter(|c| c.0 == vi)
            .map(|c| c.1 + 1)
            .max()
            .unwrap_or(0);
        let width = cells
            .iter()
            .filter(|c| c.0 == vi)
            .map(|c| c.2 + 1)
            .max()
            .unwrap_or(0);
        let mut values = vec![f32::NAN; height * width];
        for &(_, row, col, value) in cells.iter().filter(|c| c.0 == vi) {
            values[row * width + col] = value;
        }
        views.push(SimilarityView::new(height, width, values));
    }
    Ok(SimilarityMap { reference, views })
}

/// 8-bit binary PGM of one similarity view: [-1, 1] maps linearly onto
/// [0, 255], NaN to 0.
pub fn similarity_to_pgm(view: &SimilarityView) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", view.width, view.height).into_bytes();
    for v in view.values() {
        let byte = if v.is_nan() {
            0u8
        } else {
            (((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0).round()) as u8
        };
        out.push(byte);
    }
    out
}
