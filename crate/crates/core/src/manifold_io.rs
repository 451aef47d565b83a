//! Manifold containers and file formats.
//!
//! Readers accept ASCII OFF, OBJ, PLY (ASCII and binary) and whitespace
//! separated XYZ point clouds. Polygonal faces are fan-triangulated on load.
//! Writers emit ASCII only, with coordinates printed in Rust's shortest
//! round-trip decimal form so that parse → write → parse is lossless.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertices, optional triangle faces and named per-vertex attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifold {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub per_vertex_scalars: BTreeMap<String, Vec<f64>>,
}

impl Manifold {
    /// Build a triangle mesh, validating every invariant.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let m = Manifold {
            vertices,
            faces,
            per_vertex_scalars: BTreeMap::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn point_cloud(vertices: Vec<Point3<f64>>) -> Result<Self> {
        Self::new(vertices, Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.is_empty() {
            return Err(Error::EmptyVertexSet);
        }
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.coords.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFiniteCoordinate { vertex: i });
            }
        }
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            for &idx in f {
                if idx >= n {
                    return Err(Error::FaceIndexOutOfRange {
                        face: fi,
                        index: idx,
                        vertex_count: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DegenerateFace { face: fi });
            }
        }
        for (name, values) in &self.per_vertex_scalars {
            if values.len() != n {
                return Err(Error::MissingScalar(name.clone()));
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_mesh(&self) -> bool {
        !self.faces.is_empty()
    }

    pub fn set_scalar(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.vertices.len(),
                found: values.len(),
            });
        }
        self.per_vertex_scalars.insert(name.to_string(), values);
        Ok(())
    }

    pub fn scalar(&self, name: &str) -> Result<&[f64]> {
        self.per_vertex_scalars
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingScalar(name.to_string()))
    }

    /// Unique undirected edges derived from the faces, sorted.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut set = HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                set.insert([a.min(b), a.max(b)]);
            }
        }
        let mut edges: Vec<_> = set.into_iter().collect();
        edges.sort_unstable();
        edges
    }
}

/// One shape of a labelled dataset.
#[derive(Debug, Clone)]
pub struct ShapeRecord {
    pub id: String,
    pub class_label: Option<i64>,
    pub manifold: Manifold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Off,
    Obj,
    Ply,
    Xyz,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "off" => Some(MeshFormat::Off),
            "obj" => Some(MeshFormat::Obj),
            "ply" => Some(MeshFormat::Ply),
            "xyz" | "txt" | "pts" => Some(MeshFormat::Xyz),
            _ => None,
        }
    }
}

impl std::str::FromStr for MeshFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(MeshFormat::Off),
            "obj" => Ok(MeshFormat::Obj),
            "ply" => Ok(MeshFormat::Ply),
            "xyz" => Ok(MeshFormat::Xyz),
            other => Err(Error::invalid(format!("unknown mesh format `{other}`"))),
        }
    }
}

/// Load a manifold; the format comes from `format_hint` or the file extension.
pub fn load_manifold(path: impl AsRef<Path>, format_hint: Option<MeshFormat>) -> Result<Manifold> {
    let path = path.as_ref();
    let format = format_hint
        .or_else(|| MeshFormat::from_path(path))
        .ok_or_else(|| Error::UnknownFormat(path.to_path_buf()))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_manifold(&bytes, format, path)
}

/// Parse an in-memory file. `origin` is only used in error messages.
pub fn parse_manifold(bytes: &[u8], format: MeshFormat, origin: &Path) -> Result<Manifold> {
    let m = match format {
        MeshFormat::Ply => parse_ply(bytes, origin)?,
        _ => {
            let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: 0,
                message: format!("not valid UTF-8: {e}"),
            })?;
            match format {
                MeshFormat::Off => parse_off(text, origin)?,
                MeshFormat::Obj => parse_obj(text, origin)?,
                MeshFormat::Xyz => parse_xyz(text, origin)?,
                MeshFormat::Ply => unreachable!(),
            }
        }
    };
    m.validate()?;
    Ok(m)
}

fn parse_err(origin: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, origin: &Path, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(origin, line, format!("expected a number, found `{tok}`")))
}

fn parse_usize(tok: &str, origin: &Path, line: usize) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(origin, line, format!("expected an index, found `{tok}`")))
}

fn check_index(idx: usize, n: usize, origin: &Path, line: usize) -> Result<usize> {
    if idx >= n {
        Err(parse_err(
            origin,
            line,
            format!("vertex index {idx} out of range ({n} vertices)"),
        ))
    } else {
        Ok(idx)
    }
}

fn fan(poly: &[usize], faces: &mut Vec<[usize; 3]>, origin: &Path, line: usize) -> Result<()> {
    if poly.len() < 3 {
        return Err(parse_err(origin, line, "face with fewer than 3 vertices"));
    }
    for k in 1..poly.len() - 1 {
        let f = [poly[0], poly[k], poly[k + 1]];
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(parse_err(origin, line, "degenerate face (repeated vertex)"));
        }
        faces.push(f);
    }
    Ok(())
}

/// Lines with comments stripped, paired with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let l = raw.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_off(text: &str, origin: &Path) -> Result<Manifold> {
    let mut lines = content_lines(text);
    let (first_no, first) = lines
        .next()
        .ok_or_else(|| parse_err(origin, 1, "empty file"))?;
    // The counts may follow the magic on the same line ("OFF 3 1 0").
    let counts_line = if let Some(rest) = first.strip_prefix("OFF") {
        let rest = rest.trim();
        if rest.is_empty() {
            lines
                .next()
                .ok_or_else(|| parse_err(origin, first_no, "missing count line"))?
        } else {
            (first_no, rest)
        }
    } else {
        return Err(parse_err(origin, first_no, "missing OFF header"));
    };
    let counts: Vec<&str> = counts_line.1.split_whitespace().collect();
    if counts.len() < 2 {
        return Err(parse_err(origin, counts_line.0, "expected vertex and face counts"));
    }
    let nv = parse_usize(counts[0], origin, counts_line.0)?;
    let nf = parse_usize(counts[1], origin, counts_line.0)?;
    if nv == 0 {
        return Err(Error::EmptyVertexSet);
    }
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (no, l) = lines
            .next()
            .ok_or_else(|| parse_err(origin, counts_line.0, "unexpected end of file in vertices"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(origin, no, "vertex line needs 3 coordinates"));
        }
        vertices.push(Point3::new(
            parse_f64(toks[0], origin, no)?,
            parse_f64(toks[1], origin, no)?,
            parse_f64(toks[2], origin, no)?,
        ));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (no, l) = lines
            .next()
            .ok_or_else(|| parse_err(origin, counts_line.0, "unexpected end of file in faces"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let k = parse_usize(toks[0], origin, no)?;
        if toks.len() < k + 1 {
            return Err(parse_err(origin, no, "face line shorter than its vertex count"));
        }
        let poly = toks[1..=k]
            .iter()
            .map(|t| parse_usize(t, origin, no).and_then(|i| check_index(i, nv, origin, no)))
            .collect::<Result<Vec<_>>>()?;
        fan(&poly, &mut faces, origin, no)?;
    }
    Ok(Manifold {
        vertices,
        faces,
        per_vertex_scalars: BTreeMap::new(),
    })
}

fn parse_obj(text: &str, origin: &Path) -> Result<Manifold> {
    let mut vertices = Vec::new();
    let mut polys: Vec<(usize, Vec<i64>)> = Vec::new();
    for (no, l) in content_lines(text) {
        let mut toks = l.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<&str> = toks.collect();
                if c.len() < 3 {
                    return Err(parse_err(origin, no, "vertex line needs 3 coordinates"));
                }
                vertices.push(Point3::new(
                    parse_f64(c[0], origin, no)?,
                    parse_f64(c[1], origin, no)?,
                    parse_f64(c[2], origin, no)?,
                ));
            }
            Some("f") => {
                let idx = toks
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        head.parse::<i64>().map_err(|_| {
                            parse_err(origin, no, format!("bad face index `{t}`"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                polys.push((no, idx));
            }
            _ => {}
        }
    }
    if vertices.is_empty() {
        return Err(Error::EmptyVertexSet);
    }
    let n = vertices.len();
    let mut faces = Vec::new();
    for (no, p) in polys {
        let poly = p
            .iter()
            .map(|&i| {
                let resolved = if i > 0 {
                    i - 1
                } else if i < 0 {
                    n as i64 + i
                } else {
                    -1
                };
                if resolved < 0 {
                    Err(parse_err(origin, no, format!("vertex index {i} out of range")))
                } else {
                    check_index(resolved as usize, n, origin, no)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        fan(&poly, &mut faces, origin, no)?;
    }
    Ok(Manifold {
        vertices,
        faces,
        per_vertex_scalars: BTreeMap::new(),
    })
}

fn parse_xyz(text: &str, origin: &Path) -> Result<Manifold> {
    let mut vertices = Vec::new();
    for (no, l) in content_lines(text) {
        let toks: Vec<&str> = l
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if toks.len() < 3 {
            return Err(parse_err(origin, no, "point line needs 3 coordinates"));
        }
        vertices.push(Point3::new(
            parse_f64(toks[0], origin, no)?,
            parse_f64(toks[1], origin, no)?,
            parse_f64(toks[2], origin, no)?,
        ));
    }
    if vertices.is_empty() {
        return Err(Error::EmptyVertexSet);
    }
    Ok(Manifold {
        vertices,
        faces: Vec::new(),
        per_vertex_scalars: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyEncoding {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy)]
enum PlyScalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => PlyScalar::I8,
            "uchar" | "uint8" => PlyScalar::U8,
            "short" | "int16" => PlyScalar::I16,
            "ushort" | "uint16" => PlyScalar::U16,
            "int" | "int32" => PlyScalar::I32,
            "uint" | "uint32" => PlyScalar::U32,
            "float" | "float32" => PlyScalar::F32,
            "double" | "float64" => PlyScalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyScalar::I8 | PlyScalar::U8 => 1,
            PlyScalar::I16 | PlyScalar::U16 => 2,
            PlyScalar::I32 | PlyScalar::U32 | PlyScalar::F32 => 4,
            PlyScalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8], enc: PlyEncoding) -> f64 {
        macro_rules! rd {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                if enc == PlyEncoding::BinaryBe {
                    <$t>::from_be_bytes(a) as f64
                } else {
                    <$t>::from_le_bytes(a) as f64
                }
            }};
        }
        match self {
            PlyScalar::I8 => b[0] as i8 as f64,
            PlyScalar::U8 => b[0] as f64,
            PlyScalar::I16 => rd!(i16, 2),
            PlyScalar::U16 => rd!(u16, 2),
            PlyScalar::I32 => rd!(i32, 4),
            PlyScalar::U32 => rd!(u32, 4),
            PlyScalar::F32 => rd!(f32, 4),
            PlyScalar::F64 => rd!(f64, 8),
        }
    }
}

#[derive(Debug, Clone)]
enum PlyProperty {
    Scalar(String, PlyScalar),
    List(String, PlyScalar, PlyScalar),
}

#[derive(Debug, Clone)]
struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProperty>,
}

/// Cursor over the PLY body that yields values in either encoding.
struct PlyBody<'a> {
    enc: PlyEncoding,
    bytes: &'a [u8],
    pos: usize,
    tokens: Vec<(usize, &'a str)>,
    tok_pos: usize,
    origin: &'a Path,
}

impl<'a> PlyBody<'a> {
    fn next(&mut self, ty: PlyScalar) -> Result<(usize, f64)> {
        if self.enc == PlyEncoding::Ascii {
            let (line, tok) = *self
                .tokens
                .get(self.tok_pos)
                .ok_or_else(|| parse_err(self.origin, 0, "unexpected end of PLY body"))?;
            self.tok_pos += 1;
            Ok((line, parse_f64(tok, self.origin, line)?))
        } else {
            let sz = ty.size();
            if self.pos + sz > self.bytes.len() {
                return Err(parse_err(self.origin, 0, "unexpected end of binary PLY body"));
            }
            let v = ty.read(&self.bytes[self.pos..], self.enc);
            self.pos += sz;
            Ok((0, v))
        }
    }
}

fn parse_ply(bytes: &[u8], origin: &Path) -> Result<Manifold> {
    // Header is ASCII up to and including "end_header\n".
    let marker = b"end_header";
    let hdr_end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| parse_err(origin, 1, "missing end_header"))?;
    let mut body_start = hdr_end + marker.len();
    while body_start < bytes.len() && bytes[body_start] != b'\n' {
        body_start += 1;
    }
    body_start += 1;
    let header = std::str::from_utf8(&bytes[..hdr_end])
        .map_err(|_| parse_err(origin, 1, "PLY header is not ASCII"))?;

    let mut enc = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_lines = 0;
    for (i, line) in header.lines().enumerate() {
        header_lines = i + 1;
        let no = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("ply") if i == 0 => {}
            _ if i == 0 => return Err(parse_err(origin, 1, "missing `ply` magic")),
            Some("format") => {
                enc = Some(match toks.get(1).copied() {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::BinaryLe,
                    Some("binary_big_endian") => PlyEncoding::BinaryBe,
                    _ => return Err(parse_err(origin, no, "unknown PLY format")),
                });
            }
            Some("element") => {
                if toks.len() < 3 {
                    return Err(parse_err(origin, no, "malformed element line"));
                }
                elements.push(PlyElement {
                    name: toks[1].to_string(),
                    count: parse_usize(toks[2], origin, no)?,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(origin, no, "property before element"))?;
                let prop = if toks.get(1) == Some(&"list") {
                    if toks.len() < 5 {
                        return Err(parse_err(origin, no, "malformed list property"));
                    }
                    let c = PlyScalar::parse(toks[2])
                        .ok_or_else(|| parse_err(origin, no, "unknown PLY type"))?;
                    let v = PlyScalar::parse(toks[3])
                        .ok_or_else(|| parse_err(origin, no, "unknown PLY type"))?;
                    PlyProperty::List(toks[4].to_string(), c, v)
                } else {
                    if toks.len() < 3 {
                        return Err(parse_err(origin, no, "malformed property"));
                    }
                    let t = PlyScalar::parse(toks[1])
                        .ok_or_else(|| parse_err(origin, no, "unknown PLY type"))?;
                    PlyProperty::Scalar(toks[2].to_string(), t)
                };
                el.props.push(prop);
            }
            _ => {}
        }
    }
    let enc = enc.ok_or_else(|| parse_err(origin, 1, "missing format line"))?;

    let body_bytes = &bytes[body_start.min(bytes.len())..];
    let mut tokens = Vec::new();
    if enc == PlyEncoding::Ascii {
        let text = std::str::from_utf8(body_bytes)
            .map_err(|_| parse_err(origin, header_lines + 1, "PLY body is not ASCII"))?;
        for (i, l) in text.lines().enumerate() {
            for t in l.split_whitespace() {
                tokens.push((header_lines + 2 + i, t));
            }
        }
    }
    let mut body = PlyBody {
        enc,
        bytes: body_bytes,
        pos: 0,
        tokens,
        tok_pos: 0,
        origin,
    };

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut scalars: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let vertex_count = elements
        .iter()
        .find(|e| e.name == "vertex")
        .map(|e| e.count)
        .unwrap_or(0);
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            for prop in &el.props {
                match prop {
                    PlyProperty::Scalar(name, ty) => {
                        let (_, v) = body.next(*ty)?;
                        if el.name == "vertex" {
                            match name.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                "red" | "green" | "blue" | "alpha" => {}
                                other => scalars.entry(other.to_string()).or_default().push(v),
                            }
                        }
                    }
                    PlyProperty::List(name, cty, vty) => {
                        let (line, len) = body.next(*cty)?;
                        let mut poly = Vec::with_capacity(len as usize);
                        for _ in 0..len as usize {
                            let (_, v) = body.next(*vty)?;
                            poly.push(v);
                        }
                        if el.name == "face"
                            && (name == "vertex_indices" || name == "vertex_index")
                        {
                            let poly = poly
                                .into_iter()
                                .map(|v| {
                                    if v < 0.0 || v.fract() != 0.0 {
                                        Err(parse_err(origin, line, format!("bad vertex index {v}")))
                                    } else {
                                        check_index(v as usize, vertex_count, origin, line)
                                    }
                                })
                                .collect::<Result<Vec<_>>>()?;
                            fan(&poly, &mut faces, origin, line)?;
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            }
        }
    }
    if vertices.is_empty() {
        return Err(Error::EmptyVertexSet);
    }
    Ok(Manifold {
        vertices,
        faces,
        per_vertex_scalars: scalars,
    })
}

/// Serialize to an ASCII format.
pub fn to_ascii(m: &Manifold, format: MeshFormat) -> String {
    let mut s = String::new();
    match format {
        MeshFormat::Off => {
            let _ = writeln!(s, "OFF\n{} {} 0", m.vertices.len(), m.faces.len());
            for v in &m.vertices {
                let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
            }
            for f in &m.faces {
                let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
            }
        }
        MeshFormat::Obj => {
            for v in &m.vertices {
                let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
            }
            for f in &m.faces {
                let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
            }
        }
        MeshFormat::Ply => {
            s.push_str(&ply_header(m, false, &[]));
            for v in &m.vertices {
                let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
            }
            for f in &m.faces {
                let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
            }
        }
        MeshFormat::Xyz => {
            for v in &m.vertices {
                let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
            }
        }
    }
    s
}

pub fn save_manifold(m: &Manifold, path: impl AsRef<Path>, format: MeshFormat) -> Result<()> {
    write_atomic(path.as_ref(), to_ascii(m, format).as_bytes())
}

fn ply_header(m: &Manifold, color: bool, extra: &[&str]) -> String {
    let mut s = String::from("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", m.vertices.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if color {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    for name in extra {
        let _ = writeln!(s, "property double {name}");
    }
    if !m.faces.is_empty() {
        let _ = writeln!(s, "element face {}", m.faces.len());
        s.push_str("property list uchar int vertex_indices\n");
    }
    s.push_str("end_header\n");
    s
}

/// Blue → yellow → red, `t` clamped to [0, 1].
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let ch = |x: f64| (x * 255.0).round() as u8;
    if t <= 0.5 {
        let s = t / 0.5;
        [ch(s), ch(s), ch(1.0 - s)]
    } else {
        let s = (t - 0.5) / 0.5;
        [255, ch(1.0 - s), 0]
    }
}

/// Min-max normalize to [0, 1]; a constant field maps to 0.5 everywhere.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / span).collect()
}

/// ASCII PLY with per-vertex RGB taken from the normalized named scalar.
pub fn colored_ply_string(m: &Manifold, scalar_name: &str) -> Result<String> {
    let values = m.scalar(scalar_name)?;
    let t = min_max_normalize(values);
    let mut s = ply_header(m, true, &[]);
    for (v, &ti) in m.vertices.iter().zip(&t) {
        let [r, g, b] = colormap(ti);
        let _ = writeln!(s, "{} {} {} {} {} {}", v.x, v.y, v.z, r, g, b);
    }
    for f in &m.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    Ok(s)
}

pub fn save_colored_ply(m: &Manifold, scalar_name: &str, path: impl AsRef<Path>) -> Result<()> {
    let s = colored_ply_string(m, scalar_name)?;
    write_atomic(path.as_ref(), s.as_bytes())
}

/// Write via a sibling temp file and rename, so readers never see partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = dir.join(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// One entry of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    #[serde(default)]
    pub label: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

/// `{shapes: [{id, path, label}], seed, split: {train, val, test}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub shapes: Vec<ManifestEntry>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub split: Option<SplitFractions>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.shapes {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("duplicate shape id `{}`", s.id)));
            }
        }
        Ok(())
    }

    /// Load a manifest; relative shape paths resolve against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        m.validate()?;
        if let Some(dir) = path.parent() {
            for s in &mut m.shapes {
                if s.path.is_relative() {
                    s.path = dir.join(&s.path);
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        write_atomic(path.as_ref(), s.as_bytes())
    }

    pub fn load_shapes(&self) -> Result<Vec<ShapeRecord>> {
        self.shapes
            .iter()
            .map(|e| {
                Ok(ShapeRecord {
                    id: e.id.clone(),
                    class_label: e.label,
                    manifold: load_manifold(&e.path, None)?,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test")
    }

    #[test]
    fn minimal_off() {
        let m = parse_manifold(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n", MeshFormat::Off, p())
            .unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn off_counts_on_magic_line_and_quads() {
        let m = parse_manifold(
            b"OFF 4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n",
            MeshFormat::Off,
            p(),
        )
        .unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn off_index_out_of_range_reports_line() {
        let err = parse_manifold(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 99\n", MeshFormat::Off, p())
            .unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 6);
                assert!(message.contains("99"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn malformed_vertex_line() {
        let err = parse_manifold(b"OFF\n2 0 0\n0 0 0\n1 x 0\n", MeshFormat::Off, p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }));
    }

    #[test]
    fn xyz_point_cloud() {
        let mut text = String::new();
        for i in 0..100 {
            text.push_str(&format!("{} {} {}\n", i, i as f64 * 0.5, -(i as f64)));
        }
        let m = parse_manifold(text.as_bytes(), MeshFormat::Xyz, p()).unwrap();
        assert_eq!(m.vertex_count(), 100);
        assert!(m.faces.is_empty());
    }

    #[test]
    fn empty_vertex_set_is_error() {
        assert!(matches!(
            parse_manifold(b"# nothing\n", MeshFormat::Xyz, p()),
            Err(Error::EmptyVertexSet)
        ));
        assert!(matches!(
            parse_manifold(b"OFF\n0 0 0\n", MeshFormat::Off, p()),
            Err(Error::EmptyVertexSet)
        ));
    }

    #[test]
    fn obj_with_slashes_and_negative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2//1 -1\n";
        let m = parse_manifold(text.as_bytes(), MeshFormat::Obj, p()).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn obj_degenerate_face_rejected() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 2\n";
        assert!(matches!(
            parse_manifold(text.as_bytes(), MeshFormat::Obj, p()),
            Err(Error::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn binary_ply_little_endian() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for v in [[0f32, 0., 0.], [1., 0., 0.], [0., 1., 0.]] {
            for c in v {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
        }
        bytes.push(3);
        for i in [0i32, 1, 2] {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
        let m = parse_manifold(&bytes, MeshFormat::Ply, p()).unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.vertices[1], Point3::new(1.0, 0.0, 0.0));
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), [0, 0, 255]);
        assert_eq!(colormap(0.5), [255, 255, 0]);
        assert_eq!(colormap(1.0), [255, 0, 0]);
    }

    #[test]
    fn constant_field_maps_to_midpoint() {
        let mut m = Manifold::point_cloud(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]).unwrap();
        m.set_scalar("s", vec![3.0, 3.0]).unwrap();
        let s = colored_ply_string(&m, "s").unwrap();
        let body: Vec<&str> = s.split("end_header\n").nth(1).unwrap().lines().collect();
        assert!(body.iter().all(|l| l.ends_with("255 255 0")));
    }

    #[test]
    fn index_scalar_hits_endpoints_and_midpoint() {
        let mut m = Manifold::point_cloud(vec![
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ])
        .unwrap();
        m.set_scalar("idx", vec![0.0, 1.0, 2.0]).unwrap();
        let s = colored_ply_string(&m, "idx").unwrap();
        let body: Vec<&str> = s.split("end_header\n").nth(1).unwrap().lines().collect();
        assert!(body[0].ends_with("0 0 255"));
        assert!(body[1].ends_with("255 255 0"));
        assert!(body[2].ends_with("255 0 0"));
    }

    #[test]
    fn missing_scalar_is_error() {
        let m = Manifold::point_cloud(vec![Point3::origin()]).unwrap();
        assert!(matches!(colored_ply_string(&m, "nope"), Err(Error::MissingScalar(_))));
    }

    #[test]
    fn manifest_rejects_duplicate_ids() {
        let m = Manifest {
            shapes: vec![
                ManifestEntry { id: "a".into(), path: "a.off".into(), label: Some(0) },
                ManifestEntry { id: "a".into(), path: "b.off".into(), label: Some(1) },
            ],
            seed: None,
            split: None,
        };
        assert!(m.validate().is_err());
    }
}
