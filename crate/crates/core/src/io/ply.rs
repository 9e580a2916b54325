//! Binary little-endian PLY in the layout written by common 3DGS trainers.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::Quaternion;

use crate::error::{Error, Result};
use crate::model::{GaussianSet, Vec3, SH_C0};

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3",
];

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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
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
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Header {
    count: usize,
    stride: usize,
    /// Byte offset and type of each entry of [`REQUIRED`].
    fields: Vec<(usize, Scalar)>,
}

fn parse_header(reader: &mut impl BufRead) -> Result<Header> {
    let mut line = String::new();
    let mut next_line = |line: &mut String| -> Result<()> {
        line.clear();
        if reader.read_line(line)? == 0 {
            return Err(Error::Format("PLY header ends before end_header".into()));
        }
        Ok(())
    };

    next_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::Format("missing `ply` magic line".into()));
    }

    let mut format_seen = false;
    let mut vertex_count = None;
    // Properties of the vertex element; elements after it are never read.
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    let mut vertex_done = false;
    loop {
        next_line(&mut line)?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                if words.next() != Some("binary_little_endian") {
                    return Err(Error::Format("only binary_little_endian PLY is supported".into()));
                }
                format_seen = true;
            }
            Some("element") => {
                let name = words.next().unwrap_or_default();
                let count: usize = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad element line `{}`", line.trim_end())))?;
                if vertex_count.is_some() {
                    in_vertex = false;
                    vertex_done = true;
                } else if name == "vertex" {
                    vertex_count = Some(count);
                    in_vertex = true;
                } else {
                    return Err(Error::Format(format!("element `{name}` precedes the vertex element")));
                }
            }
            Some("property") => {
                if vertex_done || !in_vertex {
                    continue;
                }
                let ty = words.next().unwrap_or_default();
                if ty == "list" {
                    return Err(Error::Format("list properties on vertices are not supported".into()));
                }
                let scalar = Scalar::parse(ty).ok_or_else(|| Error::Format(format!("unknown property type `{ty}`")))?;
                let name = words
                    .next()
                    .ok_or_else(|| Error::Format("property without a name".into()))?;
                props.push((name.to_string(), scalar));
            }
            Some(other) => return Err(Error::Format(format!("unexpected header keyword `{other}`"))),
        }
    }
    if !format_seen {
        return Err(Error::Format("missing format line".into()));
    }
    let count = vertex_count.ok_or_else(|| Error::Format("missing vertex element".into()))?;

    let mut offsets = Vec::with_capacity(props.len());
    let mut stride = 0;
    for (_, ty) in &props {
        offsets.push(stride);
        stride += ty.size();
    }
    let fields = REQUIRED
        .iter()
        .map(|want| {
            props
                .iter()
                .position(|(name, _)| name == want)
                .map(|i| (offsets[i], props[i].1))
                .ok_or_else(|| Error::Format(format!("missing property `{want}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Header { count, stride, fields })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Read a 3DGS PLY and apply the activations: logistic opacity, exponential
/// scale, normalized rotation and `0.5 + C0 * f_dc` color clamped at zero.
pub fn load_ply(path: &Path) -> Result<GaussianSet> {
    let file = std::fs::File::open(path).map_err(Error::at_path(path))?;
    read_ply(&mut BufReader::new(file))
}

pub fn read_ply(reader: &mut impl BufRead) -> Result<GaussianSet> {
    let header = parse_header(reader)?;
    let mut body = vec![0u8; header.count * header.stride];
    reader.read_exact(&mut body)?;

    let mut gs = GaussianSet::with_capacity(header.count);
    let mut raw = [0.0f64; 14];
    for (row, record) in body.chunks_exact(header.stride.max(1)).take(header.count).enumerate() {
        for (v, &(offset, ty)) in raw.iter_mut().zip(&header.fields) {
            *v = ty.read(&record[offset..]);
        }
        let position = Vec3::new(raw[0], raw[1], raw[2]);
        let color = Vec3::new(raw[3], raw[4], raw[5]).map(|f| (0.5 + SH_C0 * f).max(0.0));
        let opacity = sigmoid(raw[6]);
        let scale = Vec3::new(raw[7], raw[8], raw[9]).map(f64::exp);
        let q = Quaternion::new(raw[10], raw[11], raw[12], raw[13]);
        let norm = q.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Data {
                row,
                message: format!("rotation has norm {norm}"),
            });
        }
        let g = crate::model::Gaussian3D {
            position,
            scale,
            rotation: q / norm,
            opacity,
            color,
        };
        // Saturated logits give opacity exactly 0 or 1, which is out of range.
        g.validate().map_err(|message| Error::Data { row, message })?;
        gs.push(g);
    }
    Ok(gs)
}

/// Write `gs` with inverse activations, as 3DGS trainers do (zero normals
/// included for tool compatibility).
pub fn write_ply(gs: &GaussianSet, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    encode_ply(gs, &mut bytes)?;
    let mut file = std::fs::File::create(path).map_err(Error::at_path(path))?;
    file.write_all(&bytes).map_err(Error::at_path(path))?;
    Ok(())
}

pub fn encode_ply(gs: &GaussianSet, out: &mut impl Write) -> Result<()> {
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", gs.len());
    for name in ["x", "y", "z", "nx", "ny", "nz"].iter().chain(&REQUIRED[3..]) {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");
    out.write_all(header.as_bytes())?;

    let mut buf = Vec::with_capacity(gs.len() * 17 * 4);
    for g in gs.iter() {
        let q = g.rotation;
        let values = [
            g.position.x,
            g.position.y,
            g.position.z,
            0.0,
            0.0,
            0.0,
            (g.color.x - 0.5) / SH_C0,
            (g.color.y - 0.5) / SH_C0,
            (g.color.z - 0.5) / SH_C0,
            (g.opacity / (1.0 - g.opacity)).ln(),
            g.scale.x.ln(),
            g.scale.y.ln(),
            g.scale.z.ln(),
            q.w,
            q.i,
            q.j,
            q.k,
        ];
        for v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}
