//! PLY, OBJ and XYZ readers and writers.
//!
//! PLY input may be ASCII, binary little-endian or binary big-endian. Output
//! is binary little-endian unless ASCII is requested.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Point3, PointCloud, TriangleMesh, Vector3};
use crate::{Error, Result};

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
    fn parse(s: &str) -> Option<Scalar> {
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

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
enum PropertyKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Default)]
struct Row {
    scalars: Vec<f64>,
    lists: Vec<Vec<f64>>,
}

struct PlyData {
    elements: Vec<(Element, Vec<Row>)>,
}

impl PlyData {
    fn element(&self, name: &str) -> Option<&(Element, Vec<Row>)> {
        self.elements.iter().find(|(e, _)| e.name == name)
    }
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(Encoding, Vec<Element>, usize)> {
    let err = |line: usize, msg: &str| Error::parse(path, format!("header line {line}"), msg);
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|e| pos + e)
            .ok_or_else(|| err(lines.len() + 1, "unterminated header"))?;
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| err(lines.len() + 1, "header is not UTF-8"))?
            .trim_end_matches('\r')
            .to_string();
        pos = end + 1;
        let done = line.trim() == "end_header";
        lines.push(line);
        if done {
            break;
        }
    }
    if lines.first().map(|l| l.trim()) != Some("ply") {
        return Err(err(1, "missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let lineno = idx + 1;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] | ["end_header"] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLe,
                    "binary_big_endian" => Encoding::BinaryBe,
                    _ => return Err(err(lineno, "unknown format")),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| err(lineno, "bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let e = elements.last_mut().ok_or_else(|| err(lineno, "property before element"))?;
                e.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::List {
                        count: Scalar::parse(count).ok_or_else(|| err(lineno, "bad list count type"))?,
                        item: Scalar::parse(item).ok_or_else(|| err(lineno, "bad list item type"))?,
                    },
                });
            }
            ["property", ty, name] => {
                let e = elements.last_mut().ok_or_else(|| err(lineno, "property before element"))?;
                e.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::Scalar(Scalar::parse(ty).ok_or_else(|| err(lineno, "bad property type"))?),
                });
            }
            _ => return Err(err(lineno, &format!("unrecognized header line '{line}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| err(2, "missing format line"))?;
    Ok((encoding, elements, pos))
}

struct BinReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    big_endian: bool,
}

impl BinReader<'_> {
    fn read(&mut self, s: Scalar) -> Option<f64> {
        let n = s.size();
        let b = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        let mut buf = [0u8; 8];
        buf[..n].copy_from_slice(b);
        if self.big_endian {
            buf[..n].reverse();
        }
        Some(match s {
            Scalar::I8 => buf[0] as i8 as f64,
            Scalar::U8 => buf[0] as f64,
            Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(buf),
        })
    }
}

fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (encoding, elements, body) = parse_header(path, &bytes)?;
    let mut out = Vec::new();
    match encoding {
        Encoding::Ascii => {
            let text = std::str::from_utf8(&bytes[body..])
                .map_err(|_| Error::parse(path, "body", "ASCII body is not UTF-8"))?;
            let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
            for e in elements {
                let mut rows = Vec::with_capacity(e.count);
                for r in 0..e.count {
                    let (lineno, line) = lines.next().ok_or_else(|| {
                        Error::parse(path, format!("element '{}' row {r}", e.name), format!("expected {} rows, file ended", e.count))
                    })?;
                    let loc = || format!("body line {} (element '{}' row {r})", lineno + 1, e.name);
                    let mut tok = line.split_whitespace();
                    let mut next = || -> Result<f64> {
                        tok.next()
                            .ok_or_else(|| Error::parse(path, loc(), "too few values"))?
                            .parse::<f64>()
                            .map_err(|_| Error::parse(path, loc(), "not a number"))
                    };
                    let mut row = Row::default();
                    for p in &e.properties {
                        match p.kind {
                            PropertyKind::Scalar(_) => row.scalars.push(next()?),
                            PropertyKind::List { .. } => {
                                let c = next()? as usize;
                                let items = (0..c).map(|_| next()).collect::<Result<Vec<f64>>>()?;
                                row.lists.push(items);
                                row.scalars.push(f64::NAN);
                            }
                        }
                    }
                    rows.push(row);
                }
                out.push((e, rows));
            }
        }
        Encoding::BinaryLe | Encoding::BinaryBe => {
            let mut rd = BinReader {
                bytes: &bytes[body..],
                pos: 0,
                big_endian: encoding == Encoding::BinaryBe,
            };
            for e in elements {
                let mut rows = Vec::with_capacity(e.count.min(1 << 24));
                for r in 0..e.count {
                    let eof = || {
                        Error::parse(path, format!("element '{}' row {r}", e.name), format!("expected {} rows, file ended", e.count))
                    };
                    let mut row = Row::default();
                    for p in &e.properties {
                        match p.kind {
                            PropertyKind::Scalar(s) => row.scalars.push(rd.read(s).ok_or_else(eof)?),
                            PropertyKind::List { count, item } => {
                                let c = rd.read(count).ok_or_else(eof)? as usize;
                                let items = (0..c).map(|_| rd.read(item).ok_or_else(eof)).collect::<Result<Vec<f64>>>()?;
                                row.lists.push(items);
                                row.scalars.push(f64::NAN);
                            }
                        }
                    }
                    rows.push(row);
                }
                out.push((e, rows));
            }
        }
    }
    Ok(PlyData { elements: out })
}

fn prop_index(e: &Element, name: &str) -> Option<usize> {
    e.properties.iter().position(|p| p.name == name)
}

fn list_index(e: &Element, names: &[&str]) -> Option<usize> {
    let mut li = 0;
    for p in &e.properties {
        if let PropertyKind::List { .. } = p.kind {
            if names.contains(&p.name.as_str()) {
                return Some(li);
            }
            li += 1;
        }
    }
    None
}

fn vertices_from_ply(path: &Path, data: &PlyData) -> Result<(Vec<Point3>, Option<Vec<Vector3>>, Option<Vec<i32>>)> {
    let (e, rows) = data
        .element("vertex")
        .ok_or_else(|| Error::parse(path, "header", "no 'vertex' element"))?;
    let [x, y, z] = ["x", "y", "z"].map(|n| prop_index(e, n));
    let (Some(x), Some(y), Some(z)) = (x, y, z) else {
        return Err(Error::parse(path, "header", "vertex element lacks x/y/z"));
    };
    let mut points = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let p = Point3::new(row.scalars[x], row.scalars[y], row.scalars[z]);
        if !p.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::parse(path, format!("element 'vertex' row {r}"), "non-finite coordinate"));
        }
        points.push(p);
    }
    let normals = match ["nx", "ny", "nz"].map(|n| prop_index(e, n)) {
        [Some(a), Some(b), Some(c)] => Some(
            rows.iter()
                .map(|row| Vector3::new(row.scalars[a], row.scalars[b], row.scalars[c]))
                .collect(),
        ),
        _ => None,
    };
    let labels = prop_index(e, "label").map(|l| rows.iter().map(|row| row.scalars[l] as i32).collect());
    Ok((points, normals, labels))
}

pub fn load_ply_cloud(path: &Path) -> Result<PointCloud> {
    let data = read_ply(path)?;
    let (points, normals, labels) = vertices_from_ply(path, &data)?;
    if points.is_empty() {
        return Err(Error::parse(path, "element 'vertex'", "cloud has no points"));
    }
    let mut cloud = PointCloud::new(points)?;
    if let Some(n) = normals {
        cloud = cloud.with_normals_normalized(n)?;
    }
    if let Some(l) = labels {
        cloud = cloud.with_labels(l)?;
    }
    Ok(cloud)
}

pub fn load_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut with_normals = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("line {}", i + 1);
        let vals = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| Error::parse(path, loc(), format!("'{s}' is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() < 3 {
            return Err(Error::parse(path, loc(), "expected at least 3 values"));
        }
        if vals[..3].iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, loc(), "non-finite coordinate"));
        }
        let has_n = vals.len() >= 6;
        if *with_normals.get_or_insert(has_n) != has_n {
            return Err(Error::parse(path, loc(), "inconsistent column count"));
        }
        points.push(Point3::new(vals[0], vals[1], vals[2]));
        if has_n {
            normals.push(Vector3::new(vals[3], vals[4], vals[5]));
        }
    }
    if points.is_empty() {
        return Err(Error::parse(path, "body", "cloud has no points"));
    }
    let cloud = PointCloud::new(points)?;
    if with_normals == Some(true) {
        cloud.with_normals_normalized(normals)
    } else {
        Ok(cloud)
    }
}

/// Loads a PLY or XYZ point cloud, chosen by file extension.
pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "ply" => load_ply_cloud(path),
        _ => load_xyz(path),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn fan(path: &Path, loc: &str, face: &[usize], out: &mut Vec<[u32; 3]>) -> Result<()> {
    if face.len() < 3 {
        return Err(Error::parse(path, loc, "face with fewer than 3 vertices"));
    }
    for k in 1..face.len() - 1 {
        out.push([face[0] as u32, face[k] as u32, face[k + 1] as u32]);
    }
    Ok(())
}

pub fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut tris = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let loc = format!("line {}", i + 1);
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let v = tok
                    .take(3)
                    .map(|s| s.parse::<f64>().map_err(|_| Error::parse(path, &loc, "bad vertex coordinate")))
                    .collect::<Result<Vec<f64>>>()?;
                if v.len() != 3 || v.iter().any(|c| !c.is_finite()) {
                    return Err(Error::parse(path, &loc, "vertex needs 3 finite coordinates"));
                }
                vertices.push(Point3::new(v[0], v[1], v[2]));
            }
            Some("f") => {
                let face = tok
                    .map(|s| {
                        let idx: i64 = s
                            .split('/')
                            .next()
                            .unwrap_or("")
                            .parse()
                            .map_err(|_| Error::parse(path, &loc, "bad face index"))?;
                        let n = vertices.len() as i64;
                        let resolved = if idx < 0 { n + idx } else { idx - 1 };
                        if resolved < 0 || resolved >= n {
                            return Err(Error::parse(path, &loc, "face index out of range"));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<Vec<usize>>>()?;
                fan(path, &loc, &face, &mut tris)?;
            }
            _ => {}
        }
    }
    if tris.is_empty() {
        return Err(Error::EmptyMesh);
    }
    TriangleMesh::new(vertices, tris)
}

pub fn load_ply_mesh(path: &Path) -> Result<TriangleMesh> {
    let data = read_ply(path)?;
    let (vertices, _, _) = vertices_from_ply(path, &data)?;
    let Some((e, rows)) = data.element("face") else {
        return Err(Error::EmptyMesh);
    };
    let li = list_index(e, &["vertex_indices", "vertex_index"])
        .ok_or_else(|| Error::parse(path, "header", "face element lacks vertex_indices"))?;
    let mut tris = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        let face: Vec<usize> = row.lists[li].iter().map(|&v| v as usize).collect();
        if face.iter().any(|&v| v >= vertices.len()) {
            return Err(Error::parse(path, format!("element 'face' row {r}"), "vertex index out of range"));
        }
        fan(path, &format!("element 'face' row {r}"), &face, &mut tris)?;
    }
    if tris.is_empty() {
        return Err(Error::EmptyMesh);
    }
    TriangleMesh::new(vertices, tris)
}

/// Loads an OBJ or PLY triangle mesh; polygons are fan-triangulated.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "ply" => load_ply_mesh(path),
        _ => load_obj(path),
    }
}

/// Optional per-vertex channels for PLY output.
#[derive(Debug, Default, Clone, Copy)]
pub struct PlyChannels<'a> {
    pub normals: Option<&'a [Vector3]>,
    pub colors: Option<&'a [[u8; 3]]>,
    pub labels: Option<&'a [i32]>,
}

enum Value {
    F64(f64),
    U8(u8),
    I32(i32),
    U32(u32),
}

struct PlyWriter<W: Write> {
    out: W,
    ascii: bool,
}

impl<W: Write> PlyWriter<W> {
    fn row(&mut self, values: &[Value]) -> std::io::Result<()> {
        if self.ascii {
            let strs: Vec<String> = values
                .iter()
                .map(|v| match v {
                    Value::F64(x) => format!("{x}"),
                    Value::U8(x) => x.to_string(),
                    Value::I32(x) => x.to_string(),
                    Value::U32(x) => x.to_string(),
                })
                .collect();
            writeln!(self.out, "{}", strs.join(" "))
        } else {
            for v in values {
                match v {
                    Value::F64(x) => self.out.write_all(&x.to_le_bytes())?,
                    Value::U8(x) => self.out.write_all(&[*x])?,
                    Value::I32(x) => self.out.write_all(&x.to_le_bytes())?,
                    Value::U32(x) => self.out.write_all(&x.to_le_bytes())?,
                }
            }
            Ok(())
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn header(out: &mut impl Write, ascii: bool, body: &str) -> std::io::Result<()> {
    let fmt = if ascii { "ascii" } else { "binary_little_endian" };
    write!(out, "ply\nformat {fmt} 1.0\ncomment cadinspect\n{body}end_header\n")
}

fn vertex_header(n: usize, ch: &PlyChannels) -> String {
    let mut h = format!("element vertex {n}\nproperty double x\nproperty double y\nproperty double z\n");
    if ch.normals.is_some() {
        h += "property double nx\nproperty double ny\nproperty double nz\n";
    }
    if ch.colors.is_some() {
        h += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    if ch.labels.is_some() {
        h += "property int label\n";
    }
    h
}

fn vertex_row(p: &Point3, i: usize, ch: &PlyChannels) -> Vec<Value> {
    let mut row = vec![Value::F64(p.x), Value::F64(p.y), Value::F64(p.z)];
    if let Some(n) = ch.normals {
        row.extend([Value::F64(n[i].x), Value::F64(n[i].y), Value::F64(n[i].z)]);
    }
    if let Some(c) = ch.colors {
        row.extend(c[i].map(Value::U8));
    }
    if let Some(l) = ch.labels {
        row.push(Value::I32(l[i]));
    }
    row
}

/// Writes points with optional channels.
pub fn write_ply_points(path: impl AsRef<Path>, points: &[Point3], channels: PlyChannels, ascii: bool) -> Result<()> {
    let path = path.as_ref();
    let mut w = PlyWriter { out: create(path)?, ascii };
    let res = (|| -> std::io::Result<()> {
        header(&mut w.out, ascii, &vertex_header(points.len(), &channels))?;
        for (i, p) in points.iter().enumerate() {
            w.row(&vertex_row(p, i, &channels))?;
        }
        w.out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Writes a cloud with whichever of normals and labels it carries.
pub fn write_ply_cloud(path: impl AsRef<Path>, cloud: &PointCloud, ascii: bool) -> Result<()> {
    write_ply_points(
        path,
        cloud.points(),
        PlyChannels {
            normals: cloud.normals(),
            colors: None,
            labels: cloud.labels(),
        },
        ascii,
    )
}

pub fn write_ply_mesh(path: impl AsRef<Path>, mesh: &TriangleMesh, ascii: bool) -> Result<()> {
    let path = path.as_ref();
    let mut w = PlyWriter { out: create(path)?, ascii };
    let res = (|| -> std::io::Result<()> {
        let ch = PlyChannels::default();
        let body = format!(
            "{}element face {}\nproperty list uchar uint vertex_indices\n",
            vertex_header(mesh.vertices().len(), &ch),
            mesh.triangles().len()
        );
        header(&mut w.out, ascii, &body)?;
        for (i, p) in mesh.vertices().iter().enumerate() {
            w.row(&vertex_row(p, i, &ch))?;
        }
        for t in mesh.triangles() {
            w.row(&[Value::U8(3), Value::U32(t[0]), Value::U32(t[1]), Value::U32(t[2])])?;
        }
        w.out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Writes polylines as a PLY with `vertex` and `edge` elements.
pub fn write_ply_polylines(path: impl AsRef<Path>, lines: &[Vec<Point3>], closed: bool, ascii: bool) -> Result<()> {
    let path = path.as_ref();
    let mut w = PlyWriter { out: create(path)?, ascii };
    let nv: usize = lines.iter().map(|l| l.len()).sum();
    let ne: usize = lines
        .iter()
        .map(|l| if closed { l.len() } else { l.len().saturating_sub(1) })
        .sum();
    let res = (|| -> std::io::Result<()> {
        let body = format!(
            "{}element edge {ne}\nproperty int vertex1\nproperty int vertex2\n",
            vertex_header(nv, &PlyChannels::default())
        );
        header(&mut w.out, ascii, &body)?;
        for p in lines.iter().flatten() {
            w.row(&[Value::F64(p.x), Value::F64(p.y), Value::F64(p.z)])?;
        }
        let mut base = 0i32;
        for l in lines {
            let n = l.len() as i32;
            let edges = if closed { n } else { n - 1 };
            for k in 0..edges.max(0) {
                w.row(&[Value::I32(base + k), Value::I32(base + (k + 1) % n)])?;
            }
            base += n;
        }
        w.out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn write_obj(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let res = (|| -> std::io::Result<()> {
        for v in mesh.vertices() {
            writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for t in mesh.triangles() {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn ascii_ply_three_vertices() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.ply",
            b"ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n",
        );
        let c = load_point_cloud(&p).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.points()[1], Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn truncated_ply_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.ply",
            b"ply\nformat ascii 1.0\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1 0\n1 1 1\n",
        );
        assert!(matches!(load_point_cloud(&p), Err(Error::Parse { .. })));
        let mut bin = b"ply\nformat binary_little_endian 1.0\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
        for _ in 0..4 {
            for c in [1.0f32, 2.0, 3.0] {
                bin.extend(c.to_le_bytes());
            }
        }
        let p = write(dir.path(), "b.ply", &bin);
        assert!(matches!(load_point_cloud(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn non_finite_coordinate_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.xyz", b"1 2 3\nnan 0 0\n");
        let err = load_point_cloud(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn xyz_single_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.xyz", b"1 2 3\n");
        let c = load_point_cloud(&p).unwrap();
        assert_eq!(c.points(), &[Point3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn obj_cube_and_quads() {
        let dir = tempfile::tempdir().unwrap();
        let mut cube = String::new();
        for i in 0..8 {
            cube += &format!("v {} {} {}\n", i & 1, (i >> 1) & 1, (i >> 2) & 1);
        }
        for f in [[1, 3, 4, 2], [5, 6, 8, 7], [1, 2, 6, 5], [3, 7, 8, 4], [1, 5, 7, 3], [2, 4, 8, 6]] {
            cube += &format!("f {} {} {} {}\n", f[0], f[1], f[2], f[3]);
        }
        let p = write(dir.path(), "cube.obj", cube.as_bytes());
        assert_eq!(load_mesh(&p).unwrap().triangles().len(), 12);

        let p = write(dir.path(), "quad.obj", b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3 4/4/4\n");
        assert_eq!(load_mesh(&p).unwrap().triangles().len(), 2);

        let p = write(dir.path(), "empty.obj", b"v 0 0 0\nv 1 0 0\n");
        assert!(matches!(load_mesh(&p), Err(Error::EmptyMesh)));
    }

    #[test]
    fn binary_round_trip_with_channels() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = PointCloud::new(vec![Point3::new(0.1, 0.2, 0.3), Point3::new(-1.0, 1e-9, 7.0)])
            .unwrap()
            .with_normals(vec![Vector3::z(), Vector3::x()])
            .unwrap()
            .with_labels(vec![3, -1])
            .unwrap();
        for ascii in [false, true] {
            let p = dir.path().join(format!("rt{ascii}.ply"));
            write_ply_cloud(&p, &cloud, ascii).unwrap();
            assert_eq!(load_point_cloud(&p).unwrap(), cloud);
        }
    }

    #[test]
    fn ply_mesh_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = TriangleMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let p = dir.path().join("m.ply");
        write_ply_mesh(&p, &mesh, false).unwrap();
        assert_eq!(load_mesh(&p).unwrap(), mesh);
        let p = dir.path().join("m.obj");
        write_obj(&p, &mesh).unwrap();
        assert_eq!(load_mesh(&p).unwrap(), mesh);
    }
}
