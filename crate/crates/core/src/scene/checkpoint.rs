//! Gaussian-cloud checkpoints as binary-little-endian PLY, with the property
//! naming third-party splat viewers expect: per vertex `x y z`,
//! `f_dc_0..2`, `f_rest_*` (channel-major), `opacity` (logit),
//! `scale_0..2` (log-scale) and `rot_0..3` (scalar-first quaternion).
//!
//! Properties are written as `double` so an export/import round-trip is
//! bit-exact.

use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt};
use nalgebra::Vector3;

use crate::cloud::GaussianCloud;
use crate::gaussian::GaussianPrimitive;
use crate::{Error, Result};

/// The full property list for a given SH degree, in file order.
pub fn checkpoint_properties(sh_degree: usize) -> Vec<String> {
    let n_coeffs = GaussianPrimitive::sh_coeff_count(sh_degree);
    let mut props: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    for k in 0..3 {
        props.push(format!("f_dc_{k}"));
    }
    for k in 0..3 * (n_coeffs - 1) {
        props.push(format!("f_rest_{k}"));
    }
    props.push("opacity".to_string());
    for k in 0..3 {
        props.push(format!("scale_{k}"));
    }
    for k in 0..4 {
        props.push(format!("rot_{k}"));
    }
    props
}

pub fn export_checkpoint(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let props = checkpoint_properties(cloud.sh_degree);
    let n_coeffs = cloud.sh_coeff_count();

    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    for p in &props {
        header.push_str(&format!("property double {p}\n"));
    }
    header.push_str("end_header\n");

    (|| -> std::io::Result<()> {
        w.write_all(header.as_bytes())?;
        let mut row: Vec<f64> = Vec::with_capacity(props.len());
        for i in 0..cloud.len() {
            row.clear();
            let pos = &cloud.positions[i];
            row.extend_from_slice(&[pos.x, pos.y, pos.z]);
            let sh = cloud.sh_block(i);
            for ch in 0..3 {
                row.push(sh[ch * n_coeffs]);
            }
            for ch in 0..3 {
                for k in 1..n_coeffs {
                    row.push(sh[ch * n_coeffs + k]);
                }
            }
            row.push(cloud.opacity_logits[i]);
            let ls = &cloud.log_scales[i];
            row.extend_from_slice(&[ls.x, ls.y, ls.z]);
            row.extend_from_slice(&cloud.rotations[i]);
            for v in &row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint back into a cloud. Accepts `float` properties too, for
/// interchange with single-precision exporters.
pub fn import_checkpoint(path: &Path) -> Result<GaussianCloud> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (count, props, prop_is_double, data_start) = parse_checkpoint_header(path, &data)?;

    let find = |name: &str| -> Result<usize> {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::parse(path, "-", format!("checkpoint lacks property `{name}`")))
    };
    let n_rest = props.iter().filter(|p| p.starts_with("f_rest_")).count();
    if n_rest % 3 != 0 {
        return Err(Error::parse(
            path,
            "-",
            format!("{n_rest} f_rest properties is not divisible by 3"),
        ));
    }
    let n_coeffs = n_rest / 3 + 1;
    let sh_degree = match n_coeffs {
        1 => 0,
        4 => 1,
        9 => 2,
        16 => 3,
        other => {
            return Err(Error::parse(
                path,
                "-",
                format!("{other} SH coefficients per channel matches no degree in 0..=3"),
            ))
        }
    };

    let ix = find("x")?;
    let iy = find("y")?;
    let iz = find("z")?;
    let idc: [usize; 3] = [find("f_dc_0")?, find("f_dc_1")?, find("f_dc_2")?];
    let irest: Vec<usize> = (0..n_rest)
        .map(|k| find(&format!("f_rest_{k}")))
        .collect::<Result<_>>()?;
    let iop = find("opacity")?;
    let iscale: [usize; 3] = [find("scale_0")?, find("scale_1")?, find("scale_2")?];
    let irot: [usize; 4] = [
        find("rot_0")?,
        find("rot_1")?,
        find("rot_2")?,
        find("rot_3")?,
    ];

    let row_size: usize = prop_is_double.iter().map(|&d| if d { 8 } else { 4 }).sum();
    if data_start + row_size * count > data.len() {
        return Err(Error::parse(
            path,
            format!("byte {data_start}"),
            "truncated vertex data",
        ));
    }
    let offsets: Vec<usize> = prop_is_double
        .iter()
        .scan(0usize, |acc, &d| {
            let o = *acc;
            *acc += if d { 8 } else { 4 };
            Some(o)
        })
        .collect();

    let mut cloud = GaussianCloud::new(sh_degree);
    let mut offset = data_start;
    for _ in 0..count {
        let row = &data[offset..offset + row_size];
        let value = |k: usize| -> f64 {
            let mut slice = &row[offsets[k]..];
            if prop_is_double[k] {
                slice.read_f64::<LittleEndian>().unwrap()
            } else {
                slice.read_f32::<LittleEndian>().unwrap() as f64
            }
        };
        let mut sh = vec![0.0; 3 * n_coeffs];
        for ch in 0..3 {
            sh[ch * n_coeffs] = value(idc[ch]);
            for k in 1..n_coeffs {
                sh[ch * n_coeffs + k] = value(irest[ch * (n_coeffs - 1) + (k - 1)]);
            }
        }
        cloud.push(GaussianPrimitive {
            position: Vector3::new(value(ix), value(iy), value(iz)),
            rotation: [
                value(irot[0]),
                value(irot[1]),
                value(irot[2]),
                value(irot[3]),
            ],
            log_scales: Vector3::new(value(iscale[0]), value(iscale[1]), value(iscale[2])),
            opacity_logit: value(iop),
            sh_coeffs: sh,
        })?;
        offset += row_size;
    }
    Ok(cloud)
}

type CheckpointHeader = (usize, Vec<String>, Vec<bool>, usize);

fn parse_checkpoint_header(path: &Path, data: &[u8]) -> Result<CheckpointHeader> {
    let mut pos = 0usize;
    let mut lineno = 0usize;
    let mut count = None;
    let mut props = Vec::new();
    let mut is_double = Vec::new();
    loop {
        let nl = data[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(path, lineno + 1, "unterminated header"))?;
        let line = std::str::from_utf8(&data[pos..pos + nl])
            .map_err(|_| Error::parse(path, lineno + 1, "header is not valid UTF-8"))?
            .trim()
            .to_string();
        pos += nl + 1;
        lineno += 1;
        if lineno == 1 {
            if line != "ply" {
                return Err(Error::parse(path, 1, "missing `ply` magic"));
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.first().copied() {
            Some("end_header") => break,
            Some("comment") | None => {}
            Some("format") => {
                if fields.get(1) != Some(&"binary_little_endian") {
                    return Err(Error::parse(
                        path,
                        lineno,
                        "checkpoint must be binary_little_endian",
                    ));
                }
            }
            Some("element") => {
                if fields.get(1) != Some(&"vertex") {
                    return Err(Error::parse(
                        path,
                        lineno,
                        "checkpoint must contain only a vertex element",
                    ));
                }
                count = Some(
                    fields
                        .get(2)
                        .and_then(|c| c.parse::<usize>().ok())
                        .ok_or_else(|| Error::parse(path, lineno, "bad vertex count"))?,
                );
            }
            Some("property") => {
                let double = match fields.get(1).copied() {
                    Some("double") | Some("float64") => true,
                    Some("float") | Some("float32") => false,
                    other => {
                        return Err(Error::parse(
                            path,
                            lineno,
                            format!(
                                "unsupported checkpoint property type `{}`",
                                other.unwrap_or("?")
                            ),
                        ))
                    }
                };
                let name = fields
                    .get(2)
                    .ok_or_else(|| Error::parse(path, lineno, "property without a name"))?;
                props.push(name.to_string());
                is_double.push(double);
            }
            Some(other) => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("unknown header keyword `{other}`"),
                ));
            }
        }
    }
    let count = count.ok_or_else(|| Error::parse(path, "-", "missing vertex element"))?;
    Ok((count, props, is_double, pos))
}
