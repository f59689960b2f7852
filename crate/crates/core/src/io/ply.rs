//! Subset of PLY: a single `vertex` element, ASCII or binary little-endian.
//!
//! Recognized properties are `x y z` (required) and `mass volume label`;
//! anything else on the vertex element is skipped. Labels follow the
//! container convention (one-based, 0 = unassigned).

use std::fs;
use std::path::Path;

use super::cloud::{decode_label, PointCloud};
use crate::{Error, Result, Vec3};

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
    fn parse(name: &str) -> Option<Self> {
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

    fn width(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().expect("4")) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().expect("4")) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().expect("4")) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Header {
    format: Format,
    count: usize,
    props: Vec<(String, Scalar)>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let err = |line: usize, msg: String| Error::parse(path, format!("line {line}: {msg}"));
    let mut offset = 0;
    let mut format = None;
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    for line_no in 1.. {
        let rest = &bytes[offset..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| err(line_no, "header has no end_header".into()))?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| err(line_no, "header is not UTF-8".into()))?.trim_end_matches('\r');
        offset += end + 1;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["ply"] if line_no == 1 => {}
            _ if line_no == 1 => return Err(err(1, "missing 'ply' signature".into())),
            ["format", "ascii", _] => format = Some(Format::Ascii),
            ["format", "binary_little_endian", _] => format = Some(Format::BinaryLe),
            ["format", f, ..] => return Err(err(line_no, format!("unsupported format '{f}'"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(err(line_no, "duplicate vertex element".into()));
                }
                count = Some(n.parse::<usize>().map_err(|_| err(line_no, format!("bad vertex count '{n}'")))?);
                in_vertex = true;
            }
            ["element", name, n] => {
                if *n != "0" {
                    return Err(err(line_no, format!("unsupported element '{name}' with {n} entries")));
                }
                in_vertex = false;
            }
            ["property", "list", ..] => return Err(err(line_no, "list properties are not supported".into())),
            ["property", ty, name] => {
                let s = Scalar::parse(ty).ok_or_else(|| err(line_no, format!("unknown property type '{ty}'")))?;
                if in_vertex {
                    props.push((name.to_string(), s));
                }
            }
            ["end_header"] => {
                let format = format.ok_or_else(|| err(line_no, "no format line before end_header".into()))?;
                let count = count.unwrap_or(0);
                for axis in ["x", "y", "z"] {
                    if count > 0 && !props.iter().any(|(n, _)| n == axis) {
                        return Err(err(line_no, format!("vertex element lacks property '{axis}'")));
                    }
                }
                return Ok(Header { format, count, props, body_offset: offset });
            }
            _ => return Err(err(line_no, format!("unrecognized header line '{line}'"))),
        }
    }
    unreachable!("header loop only exits by return")
}

pub(crate) fn decode(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let h = parse_header(bytes, path)?;
    let body = &bytes[h.body_offset..];
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(h.count);
    match h.format {
        Format::BinaryLe => {
            let stride: usize = h.props.iter().map(|(_, s)| s.width()).sum();
            let need = stride * h.count;
            if body.len() < need {
                return Err(Error::parse(
                    path,
                    format!(
                        "count mismatch: {} vertices need {need} payload bytes, found {} (payload ends at offset {}, inside vertex {})",
                        h.count,
                        body.len(),
                        h.body_offset + body.len(),
                        body.len() / stride.max(1)
                    ),
                ));
            }
            for i in 0..h.count {
                let mut o = i * stride;
                let mut row = Vec::with_capacity(h.props.len());
                for (_, s) in &h.props {
                    row.push(s.read_le(&body[o..]));
                    o += s.width();
                }
                rows.push(row);
            }
        }
        Format::Ascii => {
            let text = std::str::from_utf8(body).map_err(|e| Error::parse(path, format!("body is not UTF-8 near offset {}", h.body_offset + e.valid_up_to())))?;
            let header_lines = bytes[..h.body_offset].iter().filter(|&&b| b == b'\n').count();
            let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
            for i in 0..h.count {
                let (ln, line) = lines.next().ok_or_else(|| {
                    Error::parse(path, format!("count mismatch: header declares {} vertices, body has {i}", h.count))
                })?;
                let line_no = header_lines + ln + 1;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|w| w.parse::<f64>().map_err(|_| Error::parse(path, format!("line {line_no}: bad number '{w}'"))))
                    .collect::<Result<_>>()?;
                if row.len() != h.props.len() {
                    return Err(Error::parse(path, format!("line {line_no}: expected {} values, found {}", h.props.len(), row.len())));
                }
                rows.push(row);
            }
            if let Some((ln, _)) = lines.next() {
                return Err(Error::parse(path, format!("line {}: more vertices than the declared {}", header_lines + ln + 1, h.count)));
            }
        }
    }
    let col = |name: &str| h.props.iter().position(|(n, _)| n == name);
    let (cx, cy, cz) = (col("x"), col("y"), col("z"));
    let mut cloud = PointCloud::default();
    for (i, row) in rows.iter().enumerate() {
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::parse(path, format!("vertex {i}: non-finite '{}'", h.props[j].0)));
        }
        cloud.positions.push(Vec3::new(row[cx.expect("x")], row[cy.expect("y")], row[cz.expect("z")]));
    }
    if let (Some(m), Some(v)) = (col("mass"), col("volume")) {
        cloud.mass = Some(rows.iter().map(|r| r[m]).collect());
        cloud.volume = Some(rows.iter().map(|r| r[v]).collect());
    }
    if let Some(l) = col("label") {
        cloud.labels = Some(
            rows.iter()
                .enumerate()
                .map(|(i, r)| decode_label(r[l]).map_err(|m| Error::parse(path, format!("vertex {i}: {m}"))))
                .collect::<Result<_>>()?,
        );
    }
    Ok(cloud)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?, path)
}

/// Binary little-endian PLY: float positions, double mass/volume, int label.
pub fn encode(cloud: &PointCloud) -> Result<Vec<u8>> {
    cloud.validate()?;
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", cloud.len());
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.mass.is_some() {
        header.push_str("property double mass\nproperty double volume\n");
    }
    if cloud.labels.is_some() {
        header.push_str("property int label\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for (i, p) in cloud.positions.iter().enumerate() {
        for v in p.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        if let (Some(m), Some(v)) = (&cloud.mass, &cloud.volume) {
            out.extend_from_slice(&m[i].to_le_bytes());
            out.extend_from_slice(&v[i].to_le_bytes());
        }
        if let Some(l) = &cloud.labels {
            let code = l[i].map_or(0, |l| l as i32 + 1);
            out.extend_from_slice(&code.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(cloud)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_with_extra_properties() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty float y\n\
                    property float z\nproperty uchar red\nproperty int label\nend_header\n1 2 3 255 1\n-1 0.5 0 0 0\n";
        let c = decode(text.as_bytes(), Path::new("a.ply")).unwrap();
        assert_eq!(c.positions, vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0)]);
        assert_eq!(c.labels, Some(vec![Some(0), None]));
        assert!(c.mass.is_none());
    }

    #[test]
    fn binary_round_trip() {
        let mut c = PointCloud::from_positions(vec![Vec3::new(0.5, -1.25, 3.0), Vec3::new(1.0, 2.0, 4.0)]);
        c.mass = Some(vec![0.1, 0.2]);
        c.volume = Some(vec![1e-3, 2e-3]);
        c.labels = Some(vec![None, Some(3)]);
        assert_eq!(decode(&encode(&c).unwrap(), Path::new("b.ply")).unwrap(), c);
    }

    #[test]
    fn diagnostics_name_location() {
        let bad = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 nope 3\n";
        let e = decode(bad.as_bytes(), Path::new("c.ply")).unwrap_err().to_string();
        assert!(e.contains("line 8") && e.contains("nope"), "{e}");
        let short = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(decode(short.as_bytes(), Path::new("c.ply")).unwrap_err().to_string().contains("count mismatch"));
        let no_z = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n";
        assert!(decode(no_z.as_bytes(), Path::new("c.ply")).unwrap_err().to_string().contains("line 6"));
        let big_endian = "ply\nformat binary_big_endian 1.0\nend_header\n";
        assert!(decode(big_endian.as_bytes(), Path::new("c.ply")).unwrap_err().to_string().contains("line 2"));
    }

    #[test]
    fn truncated_binary_names_offset() {
        let c = PointCloud::from_positions(vec![Vec3::zeros(); 4]);
        let bytes = encode(&c).unwrap();
        let cut = &bytes[..bytes.len() - 14];
        let e = decode(cut, Path::new("d.ply")).unwrap_err().to_string();
        // 48 payload bytes expected, 34 present → ends inside vertex 2
        assert!(e.contains("found 34") && e.contains("inside vertex 2"), "{e}");
    }
}
