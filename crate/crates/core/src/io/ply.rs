//! Binary little-endian PLY point clouds: `x y z [nx ny nz] [red green blue]`.
//!
//! Points and normals are written as doubles so clouds round-trip exactly.
//! The reader accepts any numeric property types, skips unknown properties
//! and elements, and requires the payload to match the declared counts.

use std::path::Path;

use nalgebra::Vector3;

use crate::eval::PointCloud;

use super::{read_bytes, write_bytes, IoError};

pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("element vertex {}\n", cloud.len());
    header += "property double x\nproperty double y\nproperty double z\n";
    if cloud.normals.is_some() {
        header += "property double nx\nproperty double ny\nproperty double nz\n";
    }
    if cloud.colors.is_some() {
        header += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    header += "end_header\n";
    let mut out = header.into_bytes();
    for i in 0..cloud.len() {
        for v in cloud.points[i].iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(n) = &cloud.normals {
            for v in n[i].iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(c) = &cloud.colors {
            out.extend_from_slice(&c[i]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Scalar, IoError> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(IoError::Format(format!("unknown PLY type {other:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn parse_header(bytes: &[u8]) -> Result<(Vec<Element>, usize), IoError> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| IoError::Format("missing end_header".into()))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| IoError::Format("header is not ASCII".into()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(IoError::Format("missing ply magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_seen = false;
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", _] => format_seen = true,
            ["format", other, ..] => {
                return Err(IoError::Format(format!("unsupported PLY format {other:?}")));
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| IoError::Format(format!("bad element count {count:?}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, _name] => elements
                .last_mut()
                .ok_or_else(|| IoError::Format("property before element".into()))?
                .properties
                .push(Property::List(Scalar::parse(count)?, Scalar::parse(item)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| IoError::Format("property before element".into()))?
                .properties
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            _ => return Err(IoError::Format(format!("unexpected header line {line:?}"))),
        }
    }
    if !format_seen {
        return Err(IoError::Format("missing format line".into()));
    }
    Ok((elements, end + END.len()))
}

pub fn decode_ply(bytes: &[u8]) -> Result<PointCloud, IoError> {
    let (elements, mut pos) = parse_header(bytes)?;
    let truncated = |name: &str| IoError::Data(format!("payload ends inside element {name:?}"));
    let mut cloud = None;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                for p in &el.properties {
                    match p {
                        Property::Scalar(_, s) => pos += s.size(),
                        Property::List(c, item) => {
                            let b = bytes.get(pos..pos + c.size()).ok_or_else(|| truncated(&el.name))?;
                            let n = c.read(b) as usize;
                            pos += c.size() + n * item.size();
                        }
                    }
                }
                if pos > bytes.len() {
                    return Err(truncated(&el.name));
                }
            }
            continue;
        }
        let mut layout = Vec::new();
        let mut stride = 0;
        for p in &el.properties {
            match p {
                Property::Scalar(name, s) => {
                    layout.push((name.as_str(), *s, stride));
                    stride += s.size();
                }
                Property::List(..) => return Err(IoError::Format("list properties on vertices are not supported".into())),
            }
        }
        let find = |n: &str| layout.iter().find(|(name, _, _)| *name == n).map(|&(_, s, o)| (s, o));
        let xyz = ["x", "y", "z"].map(find);
        let [Some(px), Some(py), Some(pz)] = xyz else {
            return Err(IoError::Format("vertex element lacks x, y or z".into()));
        };
        let normals = match ["nx", "ny", "nz"].map(find) {
            [Some(a), Some(b), Some(c)] => Some([a, b, c]),
            _ => None,
        };
        let colors = match ["red", "green", "blue"].map(find) {
            [Some(a), Some(b), Some(c)] => Some([a, b, c]),
            _ => None,
        };
        let need = el.count * stride;
        let payload = bytes.get(pos..pos + need).ok_or_else(|| {
            IoError::Data(format!(
                "{} vertices declared but only {} bytes of {need} present",
                el.count,
                bytes.len().saturating_sub(pos)
            ))
        })?;
        pos += need;
        let mut out = PointCloud::default();
        let mut ns = Vec::new();
        let mut cs = Vec::new();
        for rec in payload.chunks_exact(stride.max(1)).take(el.count) {
            let get = |(s, o): (Scalar, usize)| s.read(&rec[o..]);
            out.points.push(Vector3::new(get(px), get(py), get(pz)));
            if let Some(n) = normals {
                ns.push(Vector3::new(get(n[0]), get(n[1]), get(n[2])));
            }
            if let Some(c) = colors {
                cs.push(c.map(|c| get(c).round().clamp(0.0, 255.0) as u8));
            }
        }
        out.normals = normals.map(|_| ns);
        out.colors = colors.map(|_| cs);
        cloud = Some(out);
    }
    if pos != bytes.len() {
        return Err(IoError::Data(format!(
            "payload size does not match the header ({} bytes expected, {} present)",
            pos,
            bytes.len()
        )));
    }
    cloud.ok_or_else(|| IoError::Format("no vertex element".into()))
}

pub fn read_ply(path: &Path) -> Result<PointCloud, IoError> {
    decode_ply(&read_bytes(path)?)
}

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<(), IoError> {
    write_bytes(path, &encode_ply(cloud))
}
