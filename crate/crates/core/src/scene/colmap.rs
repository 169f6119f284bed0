//! COLMAP sparse-model reader: `cameras`, `images` and `points3D` in both
//! the text and binary encodings. Only pinhole camera models are supported;
//! anything else is rejected with the offending model tag.

use std::io::Read;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt};
use nalgebra::Vector3;

use crate::camera::{CameraIntrinsics, CameraModel, CameraPose};
use crate::scene::{SparsePoint, ViewRecord};
use crate::{Error, Result};

/// Number of parameters per COLMAP camera model id; used to skip past
/// cameras we do not support before reporting them.
fn model_from_id(id: i32) -> Option<(&'static str, usize)> {
    match id {
        0 => Some(("SIMPLE_PINHOLE", 3)),
        1 => Some(("PINHOLE", 4)),
        2 => Some(("SIMPLE_RADIAL", 4)),
        3 => Some(("RADIAL", 5)),
        4 => Some(("OPENCV", 8)),
        5 => Some(("OPENCV_FISHEYE", 8)),
        6 => Some(("FULL_OPENCV", 12)),
        7 => Some(("FOV", 5)),
        8 => Some(("SIMPLE_RADIAL_FISHEYE", 4)),
        9 => Some(("RADIAL_FISHEYE", 5)),
        10 => Some(("THIN_PRISM_FISHEYE", 12)),
        _ => None,
    }
}

struct RawCamera {
    id: u32,
    intrinsics: CameraIntrinsics,
}

/// Loads a COLMAP sparse model directory. Binary files are preferred when
/// both encodings are present.
pub fn load_colmap_sparse(dir: &Path) -> Result<(Vec<SparsePoint>, Vec<ViewRecord>)> {
    let cameras_path = pick(dir, "cameras")?;
    let images_path = pick(dir, "images")?;
    let points_path = pick(dir, "points3D")?;

    let cameras = if is_binary(&cameras_path) {
        read_cameras_bin(&cameras_path)?
    } else {
        read_cameras_txt(&cameras_path)?
    };
    let images = if is_binary(&images_path) {
        read_images_bin(&images_path)?
    } else {
        read_images_txt(&images_path)?
    };
    let points = if is_binary(&points_path) {
        read_points_bin(&points_path)?
    } else {
        read_points_txt(&points_path)?
    };

    let mut records = Vec::with_capacity(images.len());
    for (pose, camera_id, name) in images {
        let camera = cameras.iter().find(|c| c.id == camera_id).ok_or_else(|| {
            Error::parse(
                &images_path,
                "-",
                format!("image `{name}` references unknown camera {camera_id}"),
            )
        })?;
        records.push(ViewRecord {
            intrinsics: camera.intrinsics.clone(),
            pose,
            image_name: name,
        });
    }
    Ok((points, records))
}

/// Locates the sparse-model directory under a scene root, trying the
/// conventional `sparse/0` and `sparse` subdirectories before the root.
pub fn find_sparse_dir(scene_root: &Path) -> Option<PathBuf> {
    [
        scene_root.join("sparse").join("0"),
        scene_root.join("sparse"),
        scene_root.to_path_buf(),
    ]
    .into_iter()
    .find(|c| c.join("cameras.bin").exists() || c.join("cameras.txt").exists())
}

fn pick(dir: &Path, stem: &str) -> Result<PathBuf> {
    let bin = dir.join(format!("{stem}.bin"));
    if bin.exists() {
        return Ok(bin);
    }
    let txt = dir.join(format!("{stem}.txt"));
    if txt.exists() {
        return Ok(txt);
    }
    Err(Error::io(
        dir.join(format!("{stem}.(bin|txt)")),
        std::io::Error::new(std::io::ErrorKind::NotFound, "missing COLMAP file"),
    ))
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn intrinsics_from_params(
    model: &str,
    width: u64,
    height: u64,
    params: &[f64],
) -> Result<CameraIntrinsics> {
    let (model_tag, fx, fy, cx, cy) = match model {
        "PINHOLE" => (
            CameraModel::Pinhole,
            params[0],
            params[1],
            params[2],
            params[3],
        ),
        "SIMPLE_PINHOLE" => (
            CameraModel::SimplePinhole,
            params[0],
            params[0],
            params[1],
            params[2],
        ),
        other => return Err(Error::UnsupportedCameraModel(other.to_string())),
    };
    Ok(CameraIntrinsics {
        fx,
        fy,
        cx,
        cy,
        width: width as u32,
        height: height as u32,
        model: model_tag,
    })
}

fn read_cameras_txt(path: &Path) -> Result<Vec<RawCamera>> {
    let text = read_to_string(path)?;
    let mut cameras = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(Error::parse(
                path,
                lineno + 1,
                "camera line has fewer than 4 fields",
            ));
        }
        let id: u32 = parse_field(path, lineno + 1, fields[0])?;
        let model = fields[1];
        let width: u64 = parse_field(path, lineno + 1, fields[2])?;
        let height: u64 = parse_field(path, lineno + 1, fields[3])?;
        let params: Vec<f64> = fields[4..]
            .iter()
            .map(|f| parse_field(path, lineno + 1, f))
            .collect::<Result<_>>()?;
        let expected = match model_from_id_name(model) {
            Some(n) => n,
            None => {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("unknown camera model `{model}`"),
                ))
            }
        };
        if params.len() != expected {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!(
                    "model {model} expects {expected} parameters, got {}",
                    params.len()
                ),
            ));
        }
        cameras.push(RawCamera {
            id,
            intrinsics: intrinsics_from_params(model, width, height, &params)?,
        });
    }
    Ok(cameras)
}

fn model_from_id_name(name: &str) -> Option<usize> {
    (0..=10).find_map(|id| {
        let (tag, n) = model_from_id(id)?;
        (tag == name).then_some(n)
    })
}

fn parse_field<T: std::str::FromStr>(path: &Path, lineno: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(path, lineno, format!("cannot parse field `{s}`")))
}

fn read_cameras_bin(path: &Path) -> Result<Vec<RawCamera>> {
    let data = read_bytes(path)?;
    let mut cur = std::io::Cursor::new(data.as_slice());
    let err = |cur: &std::io::Cursor<&[u8]>, msg: &str| {
        Error::parse(path, format!("byte {}", cur.position()), msg)
    };
    let count = cur
        .read_u64::<LittleEndian>()
        .map_err(|_| err(&cur, "truncated camera count"))?;
    let mut cameras = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| err(&cur, "truncated camera id"))?;
        let model_id = cur
            .read_i32::<LittleEndian>()
            .map_err(|_| err(&cur, "truncated model id"))?;
        let width = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| err(&cur, "truncated width"))?;
        let height = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| err(&cur, "truncated height"))?;
        let (model, n_params) = model_from_id(model_id)
            .ok_or_else(|| err(&cur, &format!("unknown camera model id {model_id}")))?;
        let mut params = vec![0.0; n_params];
        for p in params.iter_mut() {
            *p = cur
                .read_f64::<LittleEndian>()
                .map_err(|_| err(&cur, "truncated camera parameters"))?;
        }
        cameras.push(RawCamera {
            id,
            intrinsics: intrinsics_from_params(model, width, height, &params)?,
        });
    }
    Ok(cameras)
}

type RawImage = (CameraPose, u32, String);

fn read_images_txt(path: &Path) -> Result<Vec<RawImage>> {
    let text = read_to_string(path)?;
    let mut images = Vec::new();
    let mut expecting_points_line = false;
    for (lineno, line) in text.lines().enumerate() {
        if expecting_points_line {
            // 2D observation line; may be empty, always consumed.
            expecting_points_line = false;
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 10 {
            return Err(Error::parse(
                path,
                lineno + 1,
                "image line has fewer than 10 fields",
            ));
        }
        let q: [f64; 4] = [
            parse_field(path, lineno + 1, fields[1])?,
            parse_field(path, lineno + 1, fields[2])?,
            parse_field(path, lineno + 1, fields[3])?,
            parse_field(path, lineno + 1, fields[4])?,
        ];
        let t = Vector3::new(
            parse_field(path, lineno + 1, fields[5])?,
            parse_field(path, lineno + 1, fields[6])?,
            parse_field(path, lineno + 1, fields[7])?,
        );
        let camera_id: u32 = parse_field(path, lineno + 1, fields[8])?;
        let name = fields[9].to_string();
        images.push((
            CameraPose {
                rotation: q,
                translation: t,
            },
            camera_id,
            name,
        ));
        expecting_points_line = true;
    }
    Ok(images)
}

fn read_images_bin(path: &Path) -> Result<Vec<RawImage>> {
    let data = read_bytes(path)?;
    let mut cur = std::io::Cursor::new(data.as_slice());
    let err = |cur: &std::io::Cursor<&[u8]>, msg: &str| {
        Error::parse(path, format!("byte {}", cur.position()), msg)
    };
    let count = cur
        .read_u64::<LittleEndian>()
        .map_err(|_| err(&cur, "truncated image count"))?;
    let mut images = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let _image_id = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| err(&cur, "truncated image id"))?;
        let mut q = [0.0; 4];
        for v in q.iter_mut() {
            *v = cur
                .read_f64::<LittleEndian>()
                .map_err(|_| err(&cur, "truncated quaternion"))?;
        }
        let mut t = [0.0; 3];
        for v in t.iter_mut() {
            *v = cur
                .read_f64::<LittleEndian>()
                .map_err(|_| err(&cur, "truncated translation"))?;
        }
        let camera_id = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| err(&cur, "truncated camera id"))?;
        let mut name = Vec::new();
        loop {
            let mut byte = [0u8; 1];
            cur.read_exact(&mut byte)
                .map_err(|_| err(&cur, "truncated image name"))?;
            if byte[0] == 0 {
                break;
            }
            name.push(byte[0]);
        }
        let name =
            String::from_utf8(name).map_err(|_| err(&cur, "image name is not valid UTF-8"))?;
        let n_points = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| err(&cur, "truncated 2D point count"))?;
        // Each 2D observation is x f64, y f64, point3D id u64: 24 bytes.
        let skip = (n_points as usize)
            .checked_mul(24)
            .ok_or_else(|| err(&cur, "absurd 2D point count"))?;
        let pos = cur.position() as usize;
        if pos + skip > data.len() {
            return Err(err(&cur, "truncated 2D observations"));
        }
        cur.set_position((pos + skip) as u64);
        images.push((
            CameraPose {
                rotation: q,
                translation: Vector3::new(t[0], t[1], t[2]),
            },
            camera_id,
            name,
        ));
    }
    Ok(images)
}

fn read_points_txt(path: &Path) -> Result<Vec<SparsePoint>> {
    let text = read_to_string(path)?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 7 {
            return Err(Error::parse(
                path,
                lineno + 1,
                "point line has fewer than 7 fields",
            ));
        }
        let x: f64 = parse_field(path, lineno + 1, fields[1])?;
        let y: f64 = parse_field(path, lineno + 1, fields[2])?;
        let z: f64 = parse_field(path, lineno + 1, fields[3])?;
        let r: f64 = parse_field::<u8>(path, lineno + 1, fields[4])? as f64 / 255.0;
        let g: f64 = parse_field::<u8>(path, lineno + 1, fields[5])? as f64 / 255.0;
        let b: f64 = parse_field::<u8>(path, lineno + 1, fields[6])? as f64 / 255.0;
        points.push(SparsePoint {
            position: Vector3::new(x, y, z),
            color: [r, g, b],
        });
    }
    Ok(points)
}

fn read_points_bin(path: &Path) -> Result<Vec<SparsePoint>> {
    let data = read_bytes(path)?;
    let mut cur = std::io::Cursor::new(data.as_slice());
    let err = |cur: &std::io::Cursor<&[u8]>, msg: &str| {
        Error::parse(path, format!("byte {}", cur.position()), msg)
    };
    let count = cur
        .read_u64::<LittleEndian>()
        .map_err(|_| err(&cur, "truncated point count"))?;
    let mut points = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let _id = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| err(&cur, "truncated point id"))?;
        let mut xyz = [0.0; 3];
        for v in xyz.iter_mut() {
            *v = cur
                .read_f64::<LittleEndian>()
                .map_err(|_| err(&cur, "truncated point position"))?;
        }
        let mut rgb = [0u8; 3];
        cur.read_exact(&mut rgb)
            .map_err(|_| err(&cur, "truncated point color"))?;
        let _error = cur
            .read_f64::<LittleEndian>()
            .map_err(|_| err(&cur, "truncated point error"))?;
        let track_len = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| err(&cur, "truncated track length"))?;
        // Each track element is image id u32 + 2D point index u32.
        let skip = (track_len as usize)
            .checked_mul(8)
            .ok_or_else(|| err(&cur, "absurd track length"))?;
        let pos = cur.position() as usize;
        if pos + skip > data.len() {
            return Err(err(&cur, "truncated track"));
        }
        cur.set_position((pos + skip) as u64);
        points.push(SparsePoint {
            position: Vector3::new(xyz[0], xyz[1], xyz[2]),
            color: [
                rgb[0] as f64 / 255.0,
                rgb[1] as f64 / 255.0,
                rgb[2] as f64 / 255.0,
            ],
        });
    }
    Ok(points)
}
