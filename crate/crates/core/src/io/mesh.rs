use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::meshing::TriMesh;

/// Writes `v x y z` lines then `f i j k` lines with 1-based indices.
pub fn save_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut s = format!("# {} vertices, {} faces\n", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Reads the `v` and `f` records of an OBJ file; polygons are fanned into
/// triangles, texture/normal references after `/` are ignored.
pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path)?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let mut t = raw.split_whitespace();
        match t.next() {
            Some("v") => {
                let c: Vec<f64> = t
                    .take(3)
                    .map(|x| x.parse::<f64>().map_err(|_| err(i + 1, format!("bad coordinate `{x}`"))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(err(i + 1, "vertex needs 3 coordinates".into()));
                }
                vertices.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = t
                    .map(|x| {
                        let head = x.split('/').next().unwrap_or("");
                        match head.parse::<i64>() {
                            Ok(k) if k > 0 => Ok(k as usize - 1),
                            Ok(k) if k < 0 && (-k) as usize <= vertices.len() => Ok(vertices.len() - (-k) as usize),
                            _ => Err(err(i + 1, format!("bad face index `{x}`"))),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err(i + 1, "face needs at least 3 vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}
