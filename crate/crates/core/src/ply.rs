//! Binary little-endian PLY in the layout common 3DGS viewers read.
//!
//! Per vertex, all `float`: `x y z nx ny nz f_dc_0..2 f_rest_* opacity
//! scale_0..2 rot_0..3`. `f_rest` is channel-major (all red coefficients,
//! then green, then blue), `opacity` is the logit, `scale_*` are log-scales
//! and `rot_*` is a `(w, x, y, z)` quaternion.

use std::io::{Read, Write};
use std::path::Path;

use crate::math::{Quaternion, Vec3};
use crate::scene::{GaussianPrimitive, Rgb, Scene};
use crate::sh;

#[derive(Debug, thiserror::Error)]
pub enum PlyError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing header (byte 0)")]
    MissingHeader,
    #[error("malformed header line {line:?} at byte {offset}")]
    BadHeader { line: String, offset: usize },
    #[error("unsupported format {format:?} at byte {offset}")]
    UnsupportedFormat { format: String, offset: usize },
    #[error("element {element:?}: unsupported property {property:?} at byte {offset}")]
    UnknownProperty { element: String, property: String, offset: usize },
    #[error("element {element:?}: missing property {property:?}")]
    MissingProperty { element: String, property: String },
    #[error("element {element:?}: {count} f_rest properties do not match any SH degree")]
    ShLayout { element: String, count: usize },
    #[error("element {element:?}: payload truncated at byte {offset} (need {expected} bytes, have {available})")]
    Truncated { element: String, offset: usize, expected: usize, available: usize },
    #[error("{0} unexpected trailing bytes after payload")]
    TrailingData(usize),
    #[error("scene is empty")]
    EmptyScene,
}

fn property_names(degree: usize) -> Vec<String> {
    let rest = 3 * (sh::coeff_count(degree) - 1);
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// Serializes to an in-memory PLY buffer.
pub fn encode_ply(scene: &Scene) -> Result<Vec<u8>, PlyError> {
    if scene.is_empty() {
        return Err(PlyError::EmptyScene);
    }
    let names = property_names(scene.sh_degree);
    let mut out = Vec::new();
    write!(out, "ply\nformat binary_little_endian 1.0\nelement vertex {}\n", scene.len())?;
    for n in &names {
        writeln!(out, "property float {n}")?;
    }
    out.extend_from_slice(b"end_header\n");
    let n_coeffs = scene.coeffs_per_primitive();
    let mut row = Vec::with_capacity(names.len());
    for p in &scene.primitives {
        row.clear();
        row.extend_from_slice(&[p.position.x, p.position.y, p.position.z, 0.0, 0.0, 0.0]);
        row.extend_from_slice(&[p.sh[0].x, p.sh[0].y, p.sh[0].z]);
        for c in 0..3 {
            row.extend((1..n_coeffs).map(|k| p.sh[k][c]));
        }
        row.push(p.opacity_logit);
        row.extend(p.log_scale.iter());
        row.extend_from_slice(&p.rotation.to_array());
        for v in &row {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_ply(scene: &Scene, path: impl AsRef<Path>) -> Result<(), PlyError> {
    let bytes = encode_ply(scene)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<Scene, PlyError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_ply(&bytes)
}

struct Header {
    vertex_count: usize,
    properties: Vec<String>,
    payload_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let Some(end) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return Err(if offset == 0 {
                PlyError::MissingHeader
            } else {
                PlyError::BadHeader { line: "<eof before end_header>".into(), offset }
            });
        };
        let line = String::from_utf8_lossy(&bytes[offset..offset + end]).trim_end_matches('\r').to_string();
        lines.push((line.clone(), offset));
        offset += end + 1;
        if line == "end_header" {
            break;
        }
        if lines.len() == 1 && line != "ply" {
            return Err(PlyError::MissingHeader);
        }
    }

    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut current: Option<String> = None;
    for (line, at) in &lines[1..lines.len() - 1] {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", fmt, _version] => {
                if *fmt != "binary_little_endian" {
                    return Err(PlyError::UnsupportedFormat { format: fmt.to_string(), offset: *at });
                }
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count: usize =
                    count.parse().map_err(|_| PlyError::BadHeader { line: line.clone(), offset: *at })?;
                if *name == "vertex" {
                    vertex_count = Some(count);
                } else if count > 0 {
                    return Err(PlyError::UnknownProperty {
                        element: name.to_string(),
                        property: "<element>".into(),
                        offset: *at,
                    });
                }
                current = Some(name.to_string());
            }
            ["property", ty, name] => {
                let element = current.clone().ok_or_else(|| PlyError::BadHeader { line: line.clone(), offset: *at })?;
                if *ty != "float" && *ty != "float32" {
                    return Err(PlyError::UnknownProperty {
                        element,
                        property: format!("{ty} {name}"),
                        offset: *at,
                    });
                }
                if element == "vertex" {
                    properties.push(name.to_string());
                }
            }
            _ => return Err(PlyError::BadHeader { line: line.clone(), offset: *at }),
        }
    }
    let vertex_count = vertex_count.ok_or(PlyError::MissingProperty {
        element: "vertex".into(),
        property: "<element vertex>".into(),
    })?;
    Ok(Header { vertex_count, properties, payload_offset: offset })
}

/// Parses an in-memory PLY buffer.
pub fn decode_ply(bytes: &[u8]) -> Result<Scene, PlyError> {
    if bytes.is_empty() {
        return Err(PlyError::MissingHeader);
    }
    let header = parse_header(bytes)?;
    let element = "vertex".to_string();

    let rest_count = header.properties.iter().filter(|p| p.starts_with("f_rest_")).count();
    if rest_count % 3 != 0 {
        return Err(PlyError::ShLayout { element, count: rest_count });
    }
    let degree = sh::degree_from_coeffs(rest_count / 3 + 1)
        .ok_or_else(|| PlyError::ShLayout { element: element.clone(), count: rest_count })?;

    let expected_names = property_names(degree);
    let index_of = |name: &str| header.properties.iter().position(|p| p == name);
    let mut columns = Vec::with_capacity(expected_names.len());
    for name in &expected_names {
        match index_of(name) {
            Some(i) => columns.push(i),
            None => return Err(PlyError::MissingProperty { element, property: name.clone() }),
        }
    }
    if header.properties.len() != expected_names.len() {
        let extra = header
            .properties
            .iter()
            .find(|p| !expected_names.contains(p))
            .cloned()
            .unwrap_or_else(|| "<duplicate>".into());
        return Err(PlyError::UnknownProperty { element, property: extra, offset: 0 });
    }

    let stride = 4 * header.properties.len();
    let expected = stride * header.vertex_count;
    let available = bytes.len() - header.payload_offset;
    if available < expected {
        let complete = available / stride;
        return Err(PlyError::Truncated {
            element,
            offset: header.payload_offset + complete * stride,
            expected,
            available,
        });
    }
    if available > expected {
        return Err(PlyError::TrailingData(available - expected));
    }

    let n_coeffs = sh::coeff_count(degree);
    let mut primitives = Vec::with_capacity(header.vertex_count);
    let mut values = vec![0.0f64; header.properties.len()];
    for v in 0..header.vertex_count {
        let base = header.payload_offset + v * stride;
        for (i, slot) in values.iter_mut().enumerate() {
            let at = base + 4 * i;
            let raw = [bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]];
            *slot = f32::from_le_bytes(raw) as f64;
        }
        let get = |k: usize| values[columns[k]];
        let mut shc = vec![Rgb::zeros(); n_coeffs];
        shc[0] = Rgb::new(get(6), get(7), get(8));
        for c in 0..3 {
            for k in 1..n_coeffs {
                shc[k][c] = get(9 + c * (n_coeffs - 1) + (k - 1));
            }
        }
        let t = 9 + 3 * (n_coeffs - 1);
        primitives.push(GaussianPrimitive {
            position: Vec3::new(get(0), get(1), get(2)),
            sh: shc,
            opacity_logit: get(t),
            log_scale: Vec3::new(get(t + 1), get(t + 2), get(t + 3)),
            rotation: Quaternion::new(get(t + 4), get(t + 5), get(t + 6), get(t + 7)),
        });
    }
    Ok(Scene { primitives, sh_degree: degree })
}
