//! ASCII OBJ reader/writer. One mesh per `o`/`g` group; vertex indices are
//! remapped per group.

use super::TriangleMesh;
use crate::geom::Vec3;
use crate::{Error, Result};
use std::io::{BufRead, Write};
use std::path::Path;

/// Load every group of an OBJ file as its own mesh.
///
/// Supports `v`, `f` (with `v`, `v/t`, `v//n`, `v/t/n` forms, fans for
/// polygons, negative relative indices), and `o`/`g` group starts. Other
/// record types are skipped.
pub fn load_obj(path: &Path) -> Result<Vec<TriangleMesh>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let file_name = path.display().to_string();

    let mut vertices: Vec<Vec3> = Vec::new();
    // (name, faces with global indices)
    let mut groups: Vec<(String, Vec<[usize; 3]>)> = Vec::new();

    let parse_err = |line: usize, msg: String| Error::Parse {
        file: file_name.clone(),
        line,
        msg,
    };

    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| parse_err(line_no, "vertex needs 3 coordinates".into()))?;
                    *c = tok
                        .parse()
                        .map_err(|e| parse_err(line_no, format!("bad coordinate {tok:?}: {e}")))?;
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("o") | Some("g") => {
                let name = tokens.next().unwrap_or("unnamed").to_string();
                groups.push((name, Vec::new()));
            }
            Some("f") => {
                if groups.is_empty() {
                    groups.push((format!("mesh_{}", groups.len()), Vec::new()));
                }
                let mut idx = Vec::new();
                for tok in tokens {
                    let first = tok.split('/').next().unwrap_or("");
                    let raw: i64 = first
                        .parse()
                        .map_err(|e| parse_err(line_no, format!("bad face index {tok:?}: {e}")))?;
                    let resolved = if raw > 0 {
                        (raw - 1) as usize
                    } else if raw < 0 {
                        let back = (-raw) as usize;
                        if back > vertices.len() {
                            return Err(parse_err(
                                line_no,
                                format!("relative index {raw} before first vertex"),
                            ));
                        }
                        vertices.len() - back
                    } else {
                        return Err(parse_err(line_no, "face index 0 is invalid".into()));
                    };
                    if resolved >= vertices.len() {
                        return Err(parse_err(
                            line_no,
                            format!(
                                "face index {raw} out of range ({} vertices so far)",
                                vertices.len()
                            ),
                        ));
                    }
                    idx.push(resolved);
                }
                if idx.len() < 3 {
                    return Err(parse_err(line_no, "face needs at least 3 vertices".into()));
                }
                let faces = &mut groups.last_mut().unwrap().1;
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }

    let mut meshes = Vec::new();
    for (name, faces) in groups {
        if faces.is_empty() {
            continue;
        }
        // Remap global vertex indices to a compact per-mesh buffer.
        let mut remap: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
        let mut local_vertices = Vec::new();
        let mut local_faces = Vec::with_capacity(faces.len());
        for f in faces {
            let mut lf = [0usize; 3];
            for (k, &g) in f.iter().enumerate() {
                lf[k] = *remap.entry(g).or_insert_with(|| {
                    local_vertices.push(vertices[g]);
                    local_vertices.len() - 1
                });
            }
            local_faces.push(lf);
        }
        meshes.push(TriangleMesh::new(name, local_vertices, local_faces)?);
    }
    if meshes.is_empty() {
        return Err(Error::Parse {
            file: file_name,
            line: 0,
            msg: "no faces found".into(),
        });
    }
    Ok(meshes)
}

/// Write meshes as one OBJ, one `o` group each.
pub fn save_obj(meshes: &[TriangleMesh], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut offset = 1usize;
    for mesh in meshes {
        writeln!(f, "o {}", mesh.name)?;
        for v in &mesh.vertices {
            writeln!(f, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for face in &mesh.faces {
            writeln!(
                f,
                "f {} {} {}",
                face[0] + offset,
                face[1] + offset,
                face[2] + offset
            )?;
        }
        offset += mesh.vertices.len();
    }
    Ok(())
}
