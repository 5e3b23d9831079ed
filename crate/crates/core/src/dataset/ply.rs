//! PLY mesh reader and writer.
//!
//! Reads `ascii`, `binary_little_endian` and `binary_big_endian` files.
//! Only vertex positions and face vertex lists are kept; normals, colors and
//! texture coordinates are parsed and dropped. Unknown elements are skipped
//! with a warning.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{GeometryError, Mesh};

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },
    #[error("unsupported PLY format '{0}'")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn parse_err(offset: usize, msg: impl Into<String>) -> PlyError {
    PlyError::Parse {
        offset: offset as u64,
        msg: msg.into(),
    }
}

#[derive(Debug)]
pub struct PlyMesh {
    pub mesh: Mesh,
    /// Non-fatal findings: ignored elements, dropped faces.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    body_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<(usize, String), PlyError> {
        let start = *pos;
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(start, "unexpected end of header"))?;
        *pos = start + rel + 1;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| parse_err(start, "header is not valid UTF-8"))?;
        Ok((start, line.trim_end_matches('\r').trim().to_string()))
    };

    let (_, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(parse_err(0, "missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (at, line) = next_line(&mut pos)?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                let fmt = tok.next().unwrap_or("");
                encoding = Some(match fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLe,
                    "binary_big_endian" => Encoding::BinaryBe,
                    other => return Err(PlyError::UnsupportedFormat(other.to_string())),
                });
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| parse_err(at, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(at, "element without valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(at, "property before any element"))?;
                let words: Vec<&str> = tok.collect();
                let prop = match words.as_slice() {
                    ["list", c, i, name] => Property::List {
                        name: name.to_string(),
                        count: Scalar::parse(c)
                            .filter(|s| s.is_integer())
                            .ok_or_else(|| parse_err(at, format!("bad list count type '{c}'")))?,
                        item: Scalar::parse(i)
                            .ok_or_else(|| parse_err(at, format!("bad list item type '{i}'")))?,
                    },
                    [ty, name] => Property::Scalar {
                        name: name.to_string(),
                        ty: Scalar::parse(ty)
                            .ok_or_else(|| parse_err(at, format!("bad property type '{ty}'")))?,
                    },
                    _ => return Err(parse_err(at, format!("malformed property line '{line}'"))),
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(parse_err(at, format!("unknown header keyword '{other}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| parse_err(0, "missing format line"))?;
    Ok(Header {
        encoding,
        elements,
        body_start: pos,
    })
}

/// Sequential reader over the body, yielding numbers with their byte offset.
trait BodyReader {
    fn offset(&self) -> usize;
    fn read(&mut self, ty: Scalar) -> Result<f64, PlyError>;
}

struct AsciiReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BodyReader for AsciiReader<'_> {
    fn offset(&self) -> usize {
        self.pos
    }

    fn read(&mut self, ty: Scalar) -> Result<f64, PlyError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, "unexpected end of data"));
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| parse_err(start, "invalid UTF-8 in body"))?;
        let v: f64 = tok
            .parse()
            .map_err(|_| parse_err(start, format!("cannot parse '{tok}' as a number")))?;
        if ty.is_integer() && v.fract() != 0.0 {
            return Err(parse_err(start, format!("expected an integer, got '{tok}'")));
        }
        Ok(v)
    }
}

struct BinaryReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    little: bool,
}

impl BinaryReader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], PlyError> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(parse_err(self.pos, "unexpected end of data"));
        }
        let mut buf = [0u8; N];
        buf.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(buf)
    }
}

macro_rules! num {
    ($self:ident, $t:ty) => {{
        let b = $self.take::<{ std::mem::size_of::<$t>() }>()?;
        (if $self.little { <$t>::from_le_bytes(b) } else { <$t>::from_be_bytes(b) }) as f64
    }};
}

impl BodyReader for BinaryReader<'_> {
    fn offset(&self) -> usize {
        self.pos
    }

    fn read(&mut self, ty: Scalar) -> Result<f64, PlyError> {
        Ok(match ty {
            Scalar::I8 => num!(self, i8),
            Scalar::U8 => num!(self, u8),
            Scalar::I16 => num!(self, i16),
            Scalar::U16 => num!(self, u16),
            Scalar::I32 => num!(self, i32),
            Scalar::U32 => num!(self, u32),
            Scalar::F32 => num!(self, f32),
            Scalar::F64 => num!(self, f64),
        })
    }
}

/// Parses PLY bytes into a mesh (coordinates in file units).
pub fn parse_ply(bytes: &[u8]) -> Result<PlyMesh, PlyError> {
    let header = parse_header(bytes)?;
    let body = header.body_start;
    match header.encoding {
        Encoding::Ascii => read_body(&header, &mut AsciiReader { bytes, pos: body }),
        Encoding::BinaryLe | Encoding::BinaryBe => read_body(
            &header,
            &mut BinaryReader {
                bytes,
                pos: body,
                little: header.encoding == Encoding::BinaryLe,
            },
        ),
    }
}

fn read_body(header: &Header, r: &mut dyn BodyReader) -> Result<PlyMesh, PlyError> {
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut faces: Vec<(usize, Vec<i64>)> = Vec::new();
    let mut warnings = Vec::new();
    let mut seen_vertex = false;

    for el in &header.elements {
        match el.name.as_str() {
            "vertex" => {
                seen_vertex = true;
                let idx = |axis: &str| el.props.iter().position(|p| p.name() == axis);
                let (ix, iy, iz) = match (idx("x"), idx("y"), idx("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(parse_err(header.body_start, "vertex element lacks x/y/z")),
                };
                vertices.reserve(el.count);
                let mut xyz = [0.0; 3];
                for _ in 0..el.count {
                    for (pi, prop) in el.props.iter().enumerate() {
                        let v = read_property(r, prop)?;
                        if pi == ix {
                            xyz[0] = v;
                        } else if pi == iy {
                            xyz[1] = v;
                        } else if pi == iz {
                            xyz[2] = v;
                        }
                    }
                    if xyz.iter().any(|c| !c.is_finite()) {
                        return Err(parse_err(r.offset(), "non-finite vertex coordinate"));
                    }
                    vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
                }
            }
            "face" => {
                let list = el.props.iter().position(|p| {
                    matches!(p, Property::List { name, .. } if name == "vertex_indices" || name == "vertex_index")
                });
                let Some(list) = list else {
                    return Err(parse_err(header.body_start, "face element lacks vertex_indices"));
                };
                faces.reserve(el.count);
                for _ in 0..el.count {
                    for (pi, prop) in el.props.iter().enumerate() {
                        if pi == list {
                            let Property::List { count, item, .. } = prop else { unreachable!() };
                            let at = r.offset();
                            let n = r.read(*count)?;
                            if n < 0.0 {
                                return Err(parse_err(at, "negative list length"));
                            }
                            let mut ids = Vec::with_capacity(n as usize);
                            for _ in 0..n as usize {
                                ids.push(r.read(*item)? as i64);
                            }
                            faces.push((at, ids));
                        } else {
                            skip_property(r, prop)?;
                        }
                    }
                }
            }
            other => {
                warnings.push(format!("ignored element '{other}' ({} items)", el.count));
                for _ in 0..el.count {
                    for prop in &el.props {
                        skip_property(r, prop)?;
                    }
                }
            }
        }
    }
    if !seen_vertex {
        return Err(parse_err(header.body_start, "no vertex element"));
    }

    let n = vertices.len() as i64;
    let mut triangles = Vec::with_capacity(faces.len());
    let mut degenerate = 0usize;
    let mut short = 0usize;
    for (at, ids) in faces {
        if let Some(bad) = ids.iter().find(|&&i| i < 0 || i >= n) {
            return Err(parse_err(at, format!("face index {bad} out of range (0..{n})")));
        }
        if ids.len() < 3 {
            short += 1;
            continue;
        }
        for k in 1..ids.len() - 1 {
            let t = [ids[0] as u32, ids[k] as u32, ids[k + 1] as u32];
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                degenerate += 1;
            } else {
                triangles.push(t);
            }
        }
    }
    if degenerate > 0 {
        warnings.push(format!("dropped {degenerate} degenerate triangles"));
    }
    if short > 0 {
        warnings.push(format!("dropped {short} faces with fewer than 3 vertices"));
    }
    Ok(PlyMesh {
        mesh: Mesh::new(vertices, triangles)?,
        warnings,
    })
}

fn read_property(r: &mut dyn BodyReader, prop: &Property) -> Result<f64, PlyError> {
    match prop {
        Property::Scalar { ty, .. } => r.read(*ty),
        Property::List { .. } => {
            skip_property(r, prop)?;
            Ok(0.0)
        }
    }
}

fn skip_property(r: &mut dyn BodyReader, prop: &Property) -> Result<(), PlyError> {
    match prop {
        Property::Scalar { ty, .. } => {
            r.read(*ty)?;
        }
        Property::List { count, item, .. } => {
            let at = r.offset();
            let n = r.read(*count)?;
            if n < 0.0 {
                return Err(parse_err(at, "negative list length"));
            }
            for _ in 0..n as usize {
                r.read(*item)?;
            }
        }
    }
    Ok(())
}

/// Reads a PLY file and scales vertices by `unit_to_mm`.
pub fn load_model(path: &Path, unit_to_mm: f64) -> Result<PlyMesh, PlyError> {
    let bytes = std::fs::read(path).map_err(|source| PlyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut ply = parse_ply(&bytes)?;
    if unit_to_mm != 1.0 {
        ply.mesh = ply.mesh.scaled(unit_to_mm);
    }
    Ok(ply)
}

fn header_text(mesh: &Mesh, format: &str) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "ply\nformat {format} 1.0");
    let _ = writeln!(h, "element vertex {}", mesh.vertices().len());
    h.push_str("property double x\nproperty double y\nproperty double z\n");
    let _ = writeln!(h, "element face {}", mesh.triangles().len());
    h.push_str("property list uchar int vertex_indices\nend_header\n");
    h
}

/// Textual PLY with shortest round-trip float formatting.
pub fn write_ply_ascii(mesh: &Mesh) -> Vec<u8> {
    let mut s = header_text(mesh, "ascii");
    for v in mesh.vertices() {
        let _ = writeln!(s, "{:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s.into_bytes()
}

/// Binary little-endian PLY with double-precision vertices.
pub fn write_ply_binary_le(mesh: &Mesh) -> Vec<u8> {
    let mut out = header_text(mesh, "binary_little_endian").into_bytes();
    for v in mesh.vertices() {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for t in mesh.triangles() {
        out.push(3);
        for i in t {
            out.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    out
}
