//! MetaImage (`.mhd` header + `.raw` payload) reading and writing.
//!
//! Only uncompressed little-endian scalar images with three dimensions are
//! supported. Keys this module does not interpret are kept, in order, on the
//! resulting volume and written back on save.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::volume::{ElementKind, Grid, Volume3D, VoxelData};


/// Parsed header contents.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaHeader {
    pub grid: Grid,
    pub element_kind: ElementKind,
    pub data_file: String,
    pub extra: Vec<(String, String)>,
}

impl MetaHeader {
    pub fn payload_len(&self) -> usize {
        let bytes = match self.element_kind {
            ElementKind::Float32 => 4,
            ElementKind::UInt8 => 1,
        };
        self.grid.len() * bytes
    }
}

fn parse_reals<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != N {
        return Err(Error::Header(format!("{key} expects {N} values, found {}", parts.len())));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse::<f64>()
            .map_err(|_| Error::Header(format!("{key}: cannot parse {p:?}")))?;
    }
    Ok(out)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Header(format!("{key}: expected True/False, found {value:?}"))),
    }
}

/// Parse header text.
pub fn parse_header(text: &str) -> Result<MetaHeader> {
    let mut object_type = None;
    let mut ndims = None;
    let mut dims = None;
    let mut spacing = None;
    let mut offset = None;
    let mut transform = None;
    let mut element_kind = None;
    let mut data_file = None;
    let mut extra = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Header(format!("line {}: missing '='", lineno + 1)))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(Error::Header(format!("line {}: empty key", lineno + 1)));
        }
        match key {
            "ObjectType" => object_type = Some(value.to_string()),
            "NDims" => {
                ndims = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| Error::Header(format!("NDims: cannot parse {value:?}")))?,
                )
            }
            "DimSize" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(Error::Header(format!("DimSize expects 3 values, found {}", parts.len())));
                }
                let mut d = [0usize; 3];
                for (o, p) in d.iter_mut().zip(parts) {
                    *o = p
                        .parse::<usize>()
                        .map_err(|_| Error::Header(format!("DimSize: cannot parse {p:?}")))?;
                }
                dims = Some(d);
            }
            "ElementSpacing" => spacing = Some(parse_reals::<3>(key, value)?),
            "Offset" => offset = Some(parse_reals::<3>(key, value)?),
            "TransformMatrix" => transform = Some(parse_reals::<9>(key, value)?),
            "ElementType" => {
                element_kind = Some(match value {
                    "MET_FLOAT" => ElementKind::Float32,
                    "MET_UCHAR" => ElementKind::UInt8,
                    other => return Err(Error::UnsupportedElementType(other.to_string())),
                })
            }
            "ElementDataFile" => data_file = Some(value.to_string()),
            "BinaryData" => {
                if !parse_bool(key, value)? {
                    return Err(Error::Header("ASCII (BinaryData = False) payloads are not supported".into()));
                }
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => {
                if parse_bool(key, value)? {
                    return Err(Error::Header("big-endian payloads are not supported".into()));
                }
            }
            "CompressedData" => {
                if parse_bool(key, value)? {
                    return Err(Error::Header("compressed payloads are not supported".into()));
                }
            }
            "ElementNumberOfChannels" => {
                if value != "1" {
                    return Err(Error::Header(format!("only single-channel images are supported, found {value}")));
                }
            }
            _ => extra.push((key.to_string(), value.to_string())),
        }
    }

    let require = |name: &str| Error::Header(format!("missing required key {name}"));
    match object_type.as_deref() {
        Some("Image") => {}
        Some(other) => return Err(Error::Header(format!("ObjectType must be Image, found {other:?}"))),
        None => return Err(require("ObjectType")),
    }
    match ndims {
        Some(3) => {}
        Some(n) => return Err(Error::Header(format!("NDims must be 3, found {n}"))),
        None => return Err(require("NDims")),
    }
    let dims = dims.ok_or_else(|| require("DimSize"))?;
    let spacing = spacing.ok_or_else(|| require("ElementSpacing"))?;
    let origin = offset.ok_or_else(|| require("Offset"))?;
    let t = transform.ok_or_else(|| require("TransformMatrix"))?;
    let element_kind = element_kind.ok_or_else(|| require("ElementType"))?;
    let data_file = data_file.ok_or_else(|| require("ElementDataFile"))?;

    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::BadSpacing(spacing));
    }
    let width = match element_kind {
        ElementKind::Float32 => 4,
        ElementKind::UInt8 => 1,
    };
    if dims.iter().try_fold(width, |acc: usize, &d| acc.checked_mul(d)).is_none() {
        return Err(Error::Header(format!("DimSize {dims:?} overflows")));
    }
    let grid = Grid {
        dims,
        spacing,
        origin,
        direction: Matrix3::from_row_slice(&t),
    };
    grid.validate()?;
    Ok(MetaHeader {
        grid,
        element_kind,
        data_file,
        extra,
    })
}

/// Decode a payload against a parsed header.
pub fn decode(header: &MetaHeader, raw: &[u8]) -> Result<Volume3D> {
    let expected = header.payload_len();
    if raw.len() != expected {
        return Err(Error::DataLength {
            expected,
            actual: raw.len(),
        });
    }
    let data = match header.element_kind {
        ElementKind::UInt8 => VoxelData::U8(raw.to_vec()),
        ElementKind::Float32 => VoxelData::F32(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
    };
    let mut vol = Volume3D::new(header.grid.clone(), data)?;
    vol.set_extra(header.extra.clone());
    Ok(vol)
}

fn join(vals: impl IntoIterator<Item = f64>) -> String {
    vals.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Render the header for `vol` pointing at `data_file`.
pub fn format_header(vol: &Volume3D, data_file: &str) -> String {
    let g = vol.grid();
    let d = &g.direction;
    let mut s = String::new();
    s.push_str("ObjectType = Image\n");
    s.push_str("NDims = 3\n");
    s.push_str("BinaryData = True\n");
    s.push_str("BinaryDataByteOrderMSB = False\n");
    s.push_str("CompressedData = False\n");
    s.push_str(&format!(
        "TransformMatrix = {}\n",
        join((0..3).flat_map(|r| (0..3).map(move |c| d[(r, c)])))
    ));
    s.push_str(&format!("Offset = {}\n", join(g.origin)));
    s.push_str(&format!("ElementSpacing = {}\n", join(g.spacing)));
    s.push_str(&format!("DimSize = {} {} {}\n", g.dims[0], g.dims[1], g.dims[2]));
    let ty = match vol.kind() {
        ElementKind::Float32 => "MET_FLOAT",
        ElementKind::UInt8 => "MET_UCHAR",
    };
    s.push_str(&format!("ElementType = {ty}\n"));
    for (k, v) in vol.extra() {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s.push_str(&format!("ElementDataFile = {data_file}\n"));
    s
}

fn raw_path_for(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(&text)?;
    if header.data_file.eq_ignore_ascii_case("LOCAL") || header.data_file.contains('%') {
        return Err(Error::Header(format!(
            "ElementDataFile {:?} is not a single external file",
            header.data_file
        )));
    }
    let raw_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data_file);
    let raw = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    decode(&header, &raw)
}

pub fn save_volume(vol: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw_path = raw_path_for(path);
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("cannot derive raw file name from {}", path.display())))?
        .to_string();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&raw_path, vol.data().to_le_bytes()).map_err(|e| Error::io(&raw_path, e))?;
    fs::write(path, format_header(vol, &raw_name)).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    #[test]
    fn spacing_line_is_plain() {
        let v = Volume3D::zeros_f32(Grid::new([2, 2, 2], [0.3; 3], [0.0; 3])).unwrap();
        let h = format_header(&v, "x.raw");
        assert!(h.lines().any(|l| l == "ElementSpacing = 0.3 0.3 0.3"), "{h}");
        assert!(h.lines().any(|l| l == "ElementType = MET_FLOAT"));
    }

    #[test]
    fn uchar_mapping() {
        let v = Volume3D::zeros_u8(Grid::new([1, 1, 1], [1.0; 3], [0.0; 3])).unwrap();
        assert!(format_header(&v, "x.raw").contains("ElementType = MET_UCHAR\n"));
    }

    #[test]
    fn header_errors() {
        let good = "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\nOffset = 0 0 0\nTransformMatrix = 1 0 0 0 1 0 0 0 1\nElementType = MET_FLOAT\nElementDataFile = a.raw\n";
        assert!(parse_header(good).is_ok());
        let short = good.replace("MET_FLOAT", "MET_SHORT");
        assert!(matches!(parse_header(&short), Err(Error::UnsupportedElementType(_))));
        let nan = good.replace("ElementSpacing = 1 1 1", "ElementSpacing = 1 NaN 1");
        assert!(matches!(parse_header(&nan), Err(Error::BadSpacing(_))));
        let inf = good.replace("ElementSpacing = 1 1 1", "ElementSpacing = 1 inf 1");
        assert!(matches!(parse_header(&inf), Err(Error::BadSpacing(_))));
        let missing = good.replace("Offset = 0 0 0\n", "");
        assert!(matches!(parse_header(&missing), Err(Error::Header(_))));
        let twod = good.replace("NDims = 3", "NDims = 2");
        assert!(parse_header(&twod).is_err());
        let skew = good.replace("1 0 0 0 1 0 0 0 1", "1 1 0 0 1 0 0 0 1");
        assert!(parse_header(&skew).is_err());
    }

    #[test]
    fn unknown_keys_preserved() {
        let text = "ObjectType = Image\nNDims = 3\nAnatomicalOrientation = RAI\nDimSize = 1 1 1\nElementSpacing = 1 1 1\nOffset = 0 0 0\nTransformMatrix = 1 0 0 0 1 0 0 0 1\nElementType = MET_UCHAR\nElementDataFile = a.raw\n";
        let h = parse_header(text).unwrap();
        assert_eq!(h.extra, vec![("AnatomicalOrientation".to_string(), "RAI".to_string())]);
        let v = decode(&h, &[4]).unwrap();
        assert!(format_header(&v, "a.raw").contains("AnatomicalOrientation = RAI\n"));
    }

    #[test]
    fn payload_length_checked() {
        let text = "ObjectType = Image\nNDims = 3\nDimSize = 4 4 4\nElementSpacing = 1 1 1\nOffset = 0 0 0\nTransformMatrix = 1 0 0 0 1 0 0 0 1\nElementType = MET_UCHAR\nElementDataFile = a.raw\n";
        let h = parse_header(text).unwrap();
        let err = decode(&h, &[0u8; 63]).unwrap_err();
        assert!(err.to_string().contains("data-length mismatch"), "{err}");
    }
}
