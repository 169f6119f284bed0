//! PLY point-cloud reader (ASCII and binary-little-endian).
//!
//! Reads `x`/`y`/`z` from the vertex element plus optional
//! `red`/`green`/`blue`; missing colors default to mid-gray. Unknown scalar
//! properties are skipped.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use nalgebra::Vector3;

use crate::scene::SparsePoint;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<ScalarType> {
        match s {
            "char" | "int8" => Some(ScalarType::I8),
            "uchar" | "uint8" => Some(ScalarType::U8),
            "short" | "int16" => Some(ScalarType::I16),
            "ushort" | "uint16" => Some(ScalarType::U16),
            "int" | "int32" => Some(ScalarType::I32),
            "uint" | "uint32" => Some(ScalarType::U32),
            "float" | "float32" => Some(ScalarType::F32),
            "double" | "float64" => Some(ScalarType::F64),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read(self, bytes: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I16 => LittleEndian::read_i16(bytes) as f64,
            ScalarType::U16 => LittleEndian::read_u16(bytes) as f64,
            ScalarType::I32 => LittleEndian::read_i32(bytes) as f64,
            ScalarType::U32 => LittleEndian::read_u32(bytes) as f64,
            ScalarType::F32 => LittleEndian::read_f32(bytes) as f64,
            ScalarType::F64 => LittleEndian::read_f64(bytes),
        }
    }
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    ty: ScalarType,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    /// Byte offset of the first data byte.
    data_start: usize,
}

fn parse_header(path: &Path, data: &[u8]) -> Result<Header> {
    let mut pos = 0usize;
    let mut lineno = 0usize;
    let mut lines = Vec::new();
    // The header is ASCII lines terminated by '\n' up to `end_header`.
    loop {
        let line_start = pos;
        let nl = data[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(path, lineno + 1, "unterminated header"))?;
        pos += nl + 1;
        lineno += 1;
        let raw = &data[line_start..line_start + nl];
        let line = std::str::from_utf8(raw)
            .map_err(|_| Error::parse(path, lineno, "header is not valid UTF-8"))?
            .trim_end_matches('\r')
            .to_string();
        let done = line.trim() == "end_header";
        lines.push((lineno, line));
        if done {
            break;
        }
        if pos >= data.len() {
            return Err(Error::parse(path, lineno, "missing end_header"));
        }
    }

    if lines.is_empty() || lines[0].1.trim() != "ply" {
        return Err(Error::parse(path, 1, "missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for (lineno, line) in &lines[1..] {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.first().copied() {
            Some("comment") | Some("obj_info") | None => {}
            Some("end_header") => break,
            Some("format") => {
                format = Some(match fields.get(1).copied() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLittleEndian,
                    other => {
                        return Err(Error::parse(
                            path,
                            *lineno,
                            format!("unsupported format `{}`", other.unwrap_or("?")),
                        ))
                    }
                });
            }
            Some("element") => {
                if fields.len() != 3 {
                    return Err(Error::parse(path, *lineno, "malformed element line"));
                }
                let count: usize = fields[2]
                    .parse()
                    .map_err(|_| Error::parse(path, *lineno, "bad element count"))?;
                elements.push(Element {
                    name: fields[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, *lineno, "property before element"))?;
                if fields.get(1) == Some(&"list") {
                    // List properties have variable row size; we only accept
                    // them on elements we never need to traverse.
                    element.properties.push(Property {
                        name: format!("list:{}", fields.last().unwrap_or(&"?")),
                        ty: ScalarType::U8,
                    });
                    continue;
                }
                if fields.len() != 3 {
                    return Err(Error::parse(path, *lineno, "malformed property line"));
                }
                let ty = ScalarType::parse(fields[1]).ok_or_else(|| {
                    Error::parse(
                        path,
                        *lineno,
                        format!("unknown property type `{}`", fields[1]),
                    )
                })?;
                element.properties.push(Property {
                    name: fields[2].to_string(),
                    ty,
                });
            }
            Some(other) => {
                return Err(Error::parse(
                    path,
                    *lineno,
                    format!("unknown header keyword `{other}`"),
                ));
            }
        }
    }
    let format = format.ok_or_else(|| Error::parse(path, 1, "missing format line"))?;
    Ok(Header {
        format,
        elements,
        data_start: pos,
    })
}

fn has_list(e: &Element) -> bool {
    e.properties.iter().any(|p| p.name.starts_with("list:"))
}

/// Reads sparse points from a PLY file. Colors default to
/// `(0.5, 0.5, 0.5)` when the vertex element has no red/green/blue.
pub fn load_ply_points(path: &Path) -> Result<Vec<SparsePoint>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(path, &data)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(path, "-", "no vertex element"))?;
    let vertex = &header.elements[vertex_pos];
    if has_list(vertex) {
        return Err(Error::parse(
            path,
            "-",
            "list property on vertex element is unsupported",
        ));
    }

    let prop_index = |name: &str| vertex.properties.iter().position(|p| p.name == name);
    let ix = prop_index("x").ok_or_else(|| Error::parse(path, "-", "vertex element lacks x"))?;
    let iy = prop_index("y").ok_or_else(|| Error::parse(path, "-", "vertex element lacks y"))?;
    let iz = prop_index("z").ok_or_else(|| Error::parse(path, "-", "vertex element lacks z"))?;
    let color_idx: Option<[usize; 3]> =
        match (prop_index("red"), prop_index("green"), prop_index("blue")) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
    let color_scale = |p: &Property, v: f64| -> f64 {
        match p.ty {
            ScalarType::F32 | ScalarType::F64 => v,
            _ => v / 255.0,
        }
    };

    let mut points = Vec::with_capacity(vertex.count);
    match header.format {
        Format::Ascii => {
            let text = std::str::from_utf8(&data[header.data_start..])
                .map_err(|_| Error::parse(path, "-", "ascii body is not valid UTF-8"))?;
            let mut lines = text.lines();
            let mut lineno = 0usize;
            for element in &header.elements[..vertex_pos] {
                for _ in 0..element.count {
                    lines.next();
                    lineno += 1;
                }
            }
            for _ in 0..vertex.count {
                lineno += 1;
                let line = lines.next().ok_or_else(|| {
                    Error::parse(path, format!("body line {lineno}"), "missing vertex row")
                })?;
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() < vertex.properties.len() {
                    return Err(Error::parse(
                        path,
                        format!("body line {lineno}"),
                        "vertex row has too few values",
                    ));
                }
                let value = |k: usize| -> Result<f64> {
                    fields[k].parse::<f64>().map_err(|_| {
                        Error::parse(
                            path,
                            format!("body line {lineno}"),
                            format!("bad value `{}`", fields[k]),
                        )
                    })
                };
                let position = Vector3::new(value(ix)?, value(iy)?, value(iz)?);
                let color = match color_idx {
                    Some([r, g, b]) => [
                        color_scale(&vertex.properties[r], value(r)?),
                        color_scale(&vertex.properties[g], value(g)?),
                        color_scale(&vertex.properties[b], value(b)?),
                    ],
                    None => [0.5, 0.5, 0.5],
                };
                points.push(SparsePoint { position, color });
            }
        }
        Format::BinaryLittleEndian => {
            let mut offset = header.data_start;
            for element in &header.elements[..vertex_pos] {
                if has_list(element) {
                    return Err(Error::parse(
                        path,
                        format!("byte {offset}"),
                        "cannot skip list-typed element before vertex data",
                    ));
                }
                let row: usize = element.properties.iter().map(|p| p.ty.size()).sum();
                offset += row * element.count;
            }
            let offsets: Vec<usize> = vertex
                .properties
                .iter()
                .scan(0usize, |acc, p| {
                    let o = *acc;
                    *acc += p.ty.size();
                    Some(o)
                })
                .collect();
            let row_size: usize = vertex.properties.iter().map(|p| p.ty.size()).sum();
            if offset + row_size * vertex.count > data.len() {
                return Err(Error::parse(
                    path,
                    format!("byte {offset}"),
                    "truncated vertex data",
                ));
            }
            for _ in 0..vertex.count {
                let row = &data[offset..offset + row_size];
                let value = |k: usize| vertex.properties[k].ty.read(&row[offsets[k]..]);
                let position = Vector3::new(value(ix), value(iy), value(iz));
                let color = match color_idx {
                    Some([r, g, b]) => [
                        color_scale(&vertex.properties[r], value(r)),
                        color_scale(&vertex.properties[g], value(g)),
                        color_scale(&vertex.properties[b], value(b)),
                    ],
                    None => [0.5, 0.5, 0.5],
                };
                points.push(SparsePoint { position, color });
                offset += row_size;
            }
        }
    }
    Ok(points)
}
