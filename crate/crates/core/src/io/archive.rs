//! Model archive directory: `topology.obj`, `model.json` and little-endian
//! f64 blobs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{read_json, read_text, write_bytes, write_json};
use crate::error::{Error, Result};
use crate::model::{AffineLayer, BaseModel, CorrectiveMap, LandmarkAnchor, MeshTopology, MultiLevelModel, Variant};

pub const ARCHIVE_VERSION: u32 = 1;

/// Shape of one corrective map: its variant and the layer widths from the
/// code dimension to the output dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectiveHeader {
    pub variant: Variant,
    pub layer_dims: Vec<usize>,
}

/// Contents of `model.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub version: u32,
    pub vertex_count: usize,
    pub triangle_count: usize,
    pub m_s: usize,
    pub m_e: usize,
    pub m_r: usize,
    pub seed: u64,
    pub geom_corrective: CorrectiveHeader,
    pub refl_corrective: CorrectiveHeader,
    pub landmark_anchors: Vec<LandmarkAnchor>,
    pub skin_mask: Vec<usize>,
    pub contour_candidates: Vec<usize>,
}

fn corrective_header(map: &CorrectiveMap) -> CorrectiveHeader {
    let mut layer_dims = vec![map.input_dim()];
    layer_dims.extend(map.layers.iter().map(|l| l.weights.nrows()));
    CorrectiveHeader {
        variant: map.variant,
        layer_dims,
    }
}

fn layer_blob_names(prefix: &str, layers: usize) -> Vec<(String, String)> {
    (0..layers)
        .map(|i| (format!("{prefix}_layer{i}_M.bin"), format!("{prefix}_layer{i}_b.bin")))
        .collect()
}

fn blob_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Reads a blob of exactly `expected` values.
fn read_blob(dir: &Path, name: &str, expected: usize) -> Result<Vec<f64>> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::format(
            &path,
            format!("truncated blob: {} bytes is not a whole number of f64 values", bytes.len()),
        ));
    }
    let got = bytes.len() / 8;
    if got != expected {
        return Err(Error::format(
            &path,
            format!("blob holds {got} values but model.json dimensions require {expected}"),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn obj_text(model: &MultiLevelModel) -> String {
    let mut s = String::from("# face model template (mean geometry)\n");
    for p in model.base.a_g.as_slice().chunks_exact(3) {
        let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
    }
    for t in model.topology.triangles() {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

/// Parses `v` and `f` records; other records are ignored. Faces must be
/// triangles; `a/b/c` index forms use the position index.
pub fn parse_obj(text: &str, path: &Path) -> Result<(Vec<[f64; 3]>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        let bad = |msg: String| Error::format(path, format!("line {}: {msg}", n + 1));
        match it.next() {
            Some("v") => {
                let xyz: Vec<f64> = it
                    .by_ref()
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad coordinate '{t}'"))))
                    .collect::<Result<_>>()?;
                if xyz.len() != 3 {
                    return Err(bad("vertex needs 3 coordinates".into()));
                }
                vertices.push([xyz[0], xyz[1], xyz[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        match head.parse::<usize>() {
                            Ok(i) if i >= 1 => Ok(i - 1),
                            _ => Err(bad(format!("bad face index '{t}'"))),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(bad(format!("face has {} vertices, expected 3", idx.len())));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

/// Writes the archive into `dir` (created if missing).
pub fn save_model(model: &MultiLevelModel, dir: &Path) -> Result<()> {
    model.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let b = &model.base;
    let header = ModelHeader {
        version: ARCHIVE_VERSION,
        vertex_count: model.vertex_count(),
        triangle_count: model.topology.triangles().len(),
        m_s: b.m_s,
        m_e: b.m_e,
        m_r: b.m_r,
        seed: model.seed,
        geom_corrective: corrective_header(&model.geom_corr),
        refl_corrective: corrective_header(&model.refl_corr),
        landmark_anchors: model.topology.landmark_anchors.clone(),
        skin_mask: model.topology.skin_mask.clone(),
        contour_candidates: model.topology.contour_candidates.clone(),
    };
    write_json(&dir.join("model.json"), &header)?;
    write_bytes(&dir.join("topology.obj"), obj_text(model).as_bytes())?;
    for (name, values) in [
        ("a_g.bin", b.a_g.as_slice()),
        ("a_r.bin", b.a_r.as_slice()),
        ("B_g.bin", b.b_g.as_slice()),
        ("B_r.bin", b.b_r.as_slice()),
        ("sigma_g.bin", b.sigma_g.as_slice()),
        ("sigma_r.bin", b.sigma_r.as_slice()),
    ] {
        write_bytes(&dir.join(name), &blob_bytes(values))?;
    }
    for (prefix, map) in [("theta_g", &model.geom_corr), ("theta_r", &model.refl_corr)] {
        for ((m_name, b_name), layer) in layer_blob_names(prefix, map.layers.len()).iter().zip(&map.layers) {
            write_bytes(&dir.join(m_name), &blob_bytes(layer.weights.as_slice()))?;
            write_bytes(&dir.join(b_name), &blob_bytes(layer.bias.as_slice()))?;
        }
    }
    Ok(())
}

fn load_corrective(dir: &Path, prefix: &str, h: &CorrectiveHeader, output_dim: usize) -> Result<CorrectiveMap> {
    let json = dir.join("model.json");
    let dims = &h.layer_dims;
    if dims.len() != h.variant.layer_count() + 1 {
        return Err(Error::format(
            &json,
            format!(
                "{prefix}: variant {} needs {} layer widths, got {}",
                h.variant.name(),
                h.variant.layer_count() + 1,
                dims.len()
            ),
        ));
    }
    if dims[dims.len() - 1] != output_dim {
        return Err(Error::format(
            &json,
            format!("{prefix}: output width {} != 3 x vertex count {output_dim}", dims[dims.len() - 1]),
        ));
    }
    let layers = layer_blob_names(prefix, h.variant.layer_count())
        .iter()
        .zip(dims.windows(2))
        .map(|((m_name, b_name), d)| {
            let m = read_blob(dir, m_name, d[1] * d[0])?;
            let b = read_blob(dir, b_name, d[1])?;
            Ok(AffineLayer {
                weights: DMatrix::from_vec(d[1], d[0], m),
                bias: DVector::from_vec(b),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CorrectiveMap {
        variant: h.variant,
        layers,
    })
}

/// Reads and validates an archive.
pub fn load_model(dir: &Path) -> Result<MultiLevelModel> {
    let json = dir.join("model.json");
    let h: ModelHeader = read_json(&json)?;
    if h.version != ARCHIVE_VERSION {
        return Err(Error::format(&json, format!("unsupported archive version {}", h.version)));
    }
    let n3 = 3 * h.vertex_count;
    let k_g = h.m_s + h.m_e;
    let base = BaseModel {
        a_g: DVector::from_vec(read_blob(dir, "a_g.bin", n3)?),
        a_r: DVector::from_vec(read_blob(dir, "a_r.bin", n3)?),
        b_g: DMatrix::from_vec(n3, k_g, read_blob(dir, "B_g.bin", n3 * k_g)?),
        b_r: DMatrix::from_vec(n3, h.m_r, read_blob(dir, "B_r.bin", n3 * h.m_r)?),
        sigma_g: DVector::from_vec(read_blob(dir, "sigma_g.bin", k_g)?),
        sigma_r: DVector::from_vec(read_blob(dir, "sigma_r.bin", h.m_r)?),
        m_s: h.m_s,
        m_e: h.m_e,
        m_r: h.m_r,
    };
    let obj = dir.join("topology.obj");
    let (vertices, triangles) = parse_obj(&read_text(&obj)?, &obj)?;
    if vertices.len() != h.vertex_count || triangles.len() != h.triangle_count {
        return Err(Error::format(
            &obj,
            format!(
                "{} vertices / {} triangles, model.json declares {} / {}",
                vertices.len(),
                triangles.len(),
                h.vertex_count,
                h.triangle_count
            ),
        ));
    }
    if vertices.iter().flatten().zip(base.a_g.iter()).any(|(a, b)| a != b) {
        return Err(Error::format(&obj, "vertex positions disagree with a_g.bin"));
    }
    let topology = MeshTopology::new(
        h.vertex_count,
        triangles,
        h.landmark_anchors,
        h.skin_mask,
        h.contour_candidates,
    )?;
    let model = MultiLevelModel {
        topology,
        base,
        geom_corr: load_corrective(dir, "theta_g", &h.geom_corrective, n3)?,
        refl_corr: load_corrective(dir, "theta_r", &h.refl_corrective, n3)?,
        seed: h.seed,
    };
    model.validate()?;
    Ok(model)
}
