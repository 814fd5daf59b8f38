//! OBJ and PLY reading and writing.

use super::TriangleMesh;
use crate::geometry::Vec3;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::Ply),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

/// Read a mesh; the format is taken from the extension when not given.
pub fn load_mesh(path: impl AsRef<Path>, format: Option<MeshFormat>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let format = format
        .or_else(|| MeshFormat::from_path(path))
        .ok_or_else(|| Error::Mesh(format!("cannot infer mesh format of {}", path.display())))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (v, f) = match format {
        MeshFormat::Obj => parse_obj(&String::from_utf8_lossy(&bytes))?,
        MeshFormat::Ply => parse_ply(&bytes)?,
    };
    TriangleMesh::new(v, f)
}

pub fn save_mesh(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match MeshFormat::from_path(path) {
        Some(MeshFormat::Ply) => write_ply(mesh.vertices(), mesh.faces(), PlyEncoding::Ascii),
        _ => write_obj(mesh.vertices(), mesh.faces()).into_bytes(),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

type Soup = (Vec<Vec3>, Vec<[usize; 3]>);

/// Parse `v` and `f` records. Polygons are fan-triangulated; texture and
/// normal indices are ignored; negative indices count from the end.
pub fn parse_obj(text: &str) -> Result<Soup> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse { line: ln + 1, message: e.to_string() })?;
                if c.len() != 3 {
                    return Err(Error::Parse { line: ln + 1, message: "vertex needs 3 coordinates".into() });
                }
                verts.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| Error::Parse { line: ln + 1, message: format!("bad face index {tok:?}") })?;
                    let i = if i < 0 { verts.len() as i64 + i } else { i - 1 };
                    if i < 0 {
                        return Err(Error::Parse { line: ln + 1, message: format!("face index {tok} out of range") });
                    }
                    idx.push(i as usize);
                }
                if idx.len() < 3 {
                    return Err(Error::Parse { line: ln + 1, message: "face needs at least 3 vertices".into() });
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((verts, faces))
}

pub fn write_obj(vertices: &[Vec3], faces: &[[usize; 3]]) -> String {
    let mut s = String::with_capacity(vertices.len() * 40 + faces.len() * 20);
    for v in vertices {
        let _ = writeln!(s, "v {:.17e} {:.17e} {:.17e}", v.x, v.y, v.z);
    }
    for f in faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
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

    fn size(self) -> usize {
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
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Parse an ASCII or binary little-endian PLY with `vertex` (x, y, z) and
/// `face` (vertex_indices list) elements; other elements and properties are skipped.
pub fn parse_ply(bytes: &[u8]) -> Result<Soup> {
    let perr = |line: usize, m: &str| Error::Parse { line, message: m.to_string() };
    let end = find_header_end(bytes).ok_or_else(|| perr(1, "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end.0]).map_err(|_| perr(1, "header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(perr(1, "missing ply magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, line) in lines.enumerate() {
        let ln = i + 2;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                encoding = Some(match toks.get(1).copied() {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::BinaryLittleEndian,
                    other => return Err(perr(ln, &format!("unsupported format {other:?}"))),
                })
            }
            Some("element") => {
                let name = toks.get(1).ok_or_else(|| perr(ln, "element without name"))?.to_string();
                let count = toks
                    .get(2)
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| perr(ln, "element without count"))?;
                elements.push(Element { name, count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| perr(ln, "property before element"))?;
                if toks.get(1) == Some(&"list") {
                    let count = toks.get(2).and_then(|t| Scalar::parse(t)).ok_or_else(|| perr(ln, "bad list type"))?;
                    let item = toks.get(3).and_then(|t| Scalar::parse(t)).ok_or_else(|| perr(ln, "bad list type"))?;
                    let name = toks.get(4).ok_or_else(|| perr(ln, "list without name"))?.to_string();
                    el.props.push(Property::List { name, count, item });
                } else {
                    let ty = toks.get(1).and_then(|t| Scalar::parse(t)).ok_or_else(|| perr(ln, "bad property type"))?;
                    let name = toks.get(2).ok_or_else(|| perr(ln, "property without name"))?.to_string();
                    el.props.push(Property::Scalar { name, ty });
                }
            }
            _ => {}
        }
    }
    let encoding = encoding.ok_or_else(|| perr(1, "missing format line"))?;
    let body = &bytes[end.1..];
    let mut reader: Box<dyn PlyReader> = match encoding {
        PlyEncoding::Ascii => Box::new(AsciiReader::new(body)),
        PlyEncoding::BinaryLittleEndian => Box::new(BinaryReader { data: body, pos: 0 }),
    };

    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            let mut poly: Vec<usize> = Vec::new();
            for p in &el.props {
                match p {
                    Property::Scalar { name, ty } => {
                        let v = reader.scalar(*ty)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            _ => {}
                        }
                    }
                    Property::List { name, count, item } => {
                        let n = reader.scalar(*count)? as usize;
                        let mut vals = Vec::with_capacity(n);
                        for _ in 0..n {
                            vals.push(reader.scalar(*item)?);
                        }
                        if name == "vertex_indices" || name == "vertex_index" {
                            poly = vals.into_iter().map(|v| v as usize).collect();
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => verts.push(Vec3::new(xyz[0], xyz[1], xyz[2])),
                "face" => {
                    if poly.len() < 3 {
                        return Err(perr(0, "face with fewer than 3 vertices"));
                    }
                    for k in 1..poly.len() - 1 {
                        faces.push([poly[0], poly[k], poly[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    Ok((verts, faces))
}

fn find_header_end(bytes: &[u8]) -> Option<(usize, usize)> {
    let key = b"end_header";
    let pos = bytes.windows(key.len()).position(|w| w == key)?;
    let mut body = pos + key.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    Some((pos, body))
}

trait PlyReader {
    fn scalar(&mut self, ty: Scalar) -> Result<f64>;
}

struct AsciiReader<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl<'a> AsciiReader<'a> {
    fn new(body: &'a [u8]) -> Self {
        let text = std::str::from_utf8(body).unwrap_or("");
        AsciiReader { tokens: text.split_ascii_whitespace() }
    }
}

impl PlyReader for AsciiReader<'_> {
    fn scalar(&mut self, _ty: Scalar) -> Result<f64> {
        let t = self.tokens.next().ok_or_else(|| Error::Parse { line: 0, message: "unexpected end of data".into() })?;
        t.parse().map_err(|_| Error::Parse { line: 0, message: format!("bad number {t:?}") })
    }
}

struct BinaryReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl PlyReader for BinaryReader<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        if self.pos + n > self.data.len() {
            return Err(Error::Parse { line: 0, message: "unexpected end of binary data".into() });
        }
        let v = ty.read_le(&self.data[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }
}

pub fn write_ply(vertices: &[Vec3], faces: &[[usize; 3]], encoding: PlyEncoding) -> Vec<u8> {
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        vertices.len(),
        faces.len()
    )
    .into_bytes();
    match encoding {
        PlyEncoding::Ascii => {
            let mut s = String::new();
            for v in vertices {
                let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z);
            }
            for f in faces {
                let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
            }
            out.extend_from_slice(s.as_bytes());
        }
        PlyEncoding::BinaryLittleEndian => {
            for v in vertices {
                for c in v.iter() {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            for f in faces {
                out.push(3);
                for &i in f {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    out
}

/// ASCII PLY of points with optional polyline edges, for visualisation.
pub fn write_ply_points(points: &[Vec3], edges: &[[usize; 2]]) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element edge {}\nproperty int vertex1\nproperty int vertex2\nend_header\n",
        points.len(),
        edges.len()
    );
    for p in points {
        let _ = writeln!(s, "{:.12e} {:.12e} {:.12e}", p.x, p.y, p.z);
    }
    for e in edges {
        let _ = writeln!(s, "{} {}", e[0], e[1]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_ellipsoid;

    #[test]
    fn obj_round_trip_is_bit_exact() {
        let m = make_ellipsoid([2.0, 1.0, 0.5], 2).unwrap();
        let text = write_obj(m.vertices(), m.faces());
        let (v, f) = parse_obj(&text).unwrap();
        assert_eq!(v, m.vertices());
        assert_eq!(f, m.faces());
    }

    #[test]
    fn ply_round_trips() {
        let m = make_ellipsoid([2.0, 1.0, 0.5], 2).unwrap();
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let bytes = write_ply(m.vertices(), m.faces(), enc);
            let (v, f) = parse_ply(&bytes).unwrap();
            assert_eq!(v, m.vertices());
            assert_eq!(f, m.faces());
        }
    }

    #[test]
    fn obj_quads_and_slashes() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3 4/4/4\nf -4 -3 -2\n";
        let (v, f) = parse_obj(text).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(f, vec![[0, 1, 2], [0, 2, 3], [0, 1, 2]]);
    }

    #[test]
    fn bad_obj_reports_line() {
        let err = parse_obj("v 0 0 0\nv 1 x 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_ellipsoid([1.0, 1.0, 1.0], 1).unwrap();
        for name in ["a.obj", "a.ply"] {
            let p = dir.path().join(name);
            save_mesh(&m, &p).unwrap();
            let back = load_mesh(&p, None).unwrap();
            assert_eq!(back.vertices(), m.vertices());
        }
    }
}
