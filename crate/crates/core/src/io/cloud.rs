use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{vec3, PointCloud, Vec3};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn is_ply(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

/// Reads an ASCII PLY (`x y z [nx ny nz]` vertex properties) or an XYZ file
/// (3 or 6 numbers per line). Normals are renormalized.
pub fn load_point_cloud(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)?;
    let (points, normals) = if is_ply(path) { parse_ply(path, &text)? } else { parse_xyz(path, &text)? };
    let normals = normals.map(|ns| ns.into_iter().map(vec3::normalize).collect::<Vec<_>>());
    if let Some(ns) = &normals {
        if let Some(i) = ns.iter().position(|n| vec3::norm(*n) == 0.0) {
            return Err(parse_err(path, 0, format!("zero normal at point {i}")));
        }
    }
    PointCloud::new(points, normals)
}

fn numbers(path: &Path, line: usize, tokens: &[&str]) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line, format!("expected a finite number, found `{t}`")))
        })
        .collect()
}

type Parsed = (Vec<Vec3>, Option<Vec<Vec3>>);

fn parse_xyz(path: &Path, text: &str) -> Result<Parsed> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut width = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 && tokens.len() != 6 {
            return Err(parse_err(path, i + 1, format!("expected 3 or 6 numbers, found {}", tokens.len())));
        }
        if *width.get_or_insert(tokens.len()) != tokens.len() {
            return Err(parse_err(path, i + 1, "every line must have the same number of columns"));
        }
        let v = numbers(path, i + 1, &tokens)?;
        points.push([v[0], v[1], v[2]]);
        if v.len() == 6 {
            normals.push([v[3], v[4], v[5]]);
        }
    }
    Ok((points, (width == Some(6)).then_some(normals)))
}

fn parse_ply(path: &Path, text: &str) -> Result<Parsed> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "expected `ply`")),
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut header_end = None;
    for (i, raw) in lines.by_ref() {
        let t: Vec<&str> = raw.split_whitespace().collect();
        match t.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(parse_err(path, i + 1, format!("only ascii PLY is supported, found `{fmt}`")))
            }
            ["format", ..] | ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|_| parse_err(path, i + 1, "bad vertex count"))?);
                } else if count.is_none() {
                    return Err(parse_err(path, i + 1, "the vertex element must come first"));
                }
            }
            ["property", "list", ..] if in_vertex => return Err(parse_err(path, i + 1, "list properties on vertices")),
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => {
                header_end = Some(i);
                break;
            }
            _ => return Err(parse_err(path, i + 1, format!("unexpected header line `{}`", raw.trim()))),
        }
    }
    if header_end.is_none() {
        return Err(parse_err(path, 0, "missing end_header"));
    }
    let count = count.ok_or_else(|| parse_err(path, 0, "missing vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let xyz = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => return Err(parse_err(path, 0, "vertex element needs x, y and z")),
    };
    let nrm = match (col("nx"), col("ny"), col("nz")) {
        (Some(x), Some(y), Some(z)) => Some([x, y, z]),
        (None, None, None) => None,
        _ => return Err(parse_err(path, 0, "normals need all of nx, ny and nz")),
    };
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(if nrm.is_some() { count } else { 0 });
    while points.len() < count {
        let (i, raw) = lines
            .next()
            .ok_or_else(|| parse_err(path, 0, format!("expected {count} vertices, found {}", points.len())))?;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != props.len() {
            return Err(parse_err(path, i + 1, format!("expected {} values, found {}", props.len(), tokens.len())));
        }
        let v = numbers(path, i + 1, &tokens)?;
        points.push(xyz.map(|c| v[c]));
        if let Some(n) = nrm {
            normals.push(n.map(|c| v[c]));
        }
    }
    Ok((points, nrm.map(|_| normals)))
}

/// Writes PLY (by extension) or XYZ, with normals when present. Numbers use
/// the shortest representation that reads back to the same value.
pub fn save_point_cloud(pc: &PointCloud, path: &Path) -> Result<()> {
    let mut s = String::new();
    if is_ply(path) {
        s.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(s, "element vertex {}", pc.len());
        s.push_str("property double x\nproperty double y\nproperty double z\n");
        if pc.normals.is_some() {
            s.push_str("property double nx\nproperty double ny\nproperty double nz\n");
        }
        s.push_str("end_header\n");
    }
    for (i, p) in pc.points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p[0], p[1], p[2]);
        if let Some(n) = &pc.normals {
            let _ = write!(s, " {} {} {}", n[i][0], n[i][1], n[i][2]);
        }
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}
