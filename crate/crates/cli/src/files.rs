//! Map directories, pose tables and query manifests.

use std::fs;
use std::path::{Path, PathBuf};

use texloc::{Error, Pose2, Result};

pub const MAP_TABLE: &str = "map.tsv";
pub const TRUTH_TABLE: &str = "truth.tsv";

pub fn image_name(id: u32) -> String {
    format!("{id:05}.png")
}

pub fn feature_name(id: u32) -> String {
    format!("{id:05}.feat")
}

/// PNG and PGM files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "pgm")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// One row of a pose table: a name (image id or file) and a pose with θ in
/// degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRow {
    pub name: String,
    pub pose: Option<Pose2>,
}

fn parse_error(what: &'static str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { what, line, msg: msg.into() }
}

/// Tab-separated `name tx ty theta_deg`; the pose columns may be omitted.
/// `#` starts a comment line; a first line starting with a non-numeric
/// `tx` header is skipped.
pub fn parse_pose_table(text: &str, what: &'static str) -> Result<Vec<PoseRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if i == 0 && cols.get(1) == Some(&"tx") {
            continue;
        }
        let pose = match cols.len() {
            1 => None,
            4 => {
                let v: Vec<f64> = cols[1..]
                    .iter()
                    .map(|c| c.parse::<f64>().map_err(|e| parse_error(what, i + 1, format!("{c:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(parse_error(what, i + 1, "non-finite pose"));
                }
                Some(Pose2::new(v[2].to_radians(), v[0], v[1]))
            }
            n => return Err(parse_error(what, i + 1, format!("expected 1 or 4 columns, found {n}"))),
        };
        rows.push(PoseRow { name: cols[0].to_string(), pose });
    }
    Ok(rows)
}

pub fn format_pose_table(rows: &[PoseRow]) -> String {
    let mut out = String::from("name\ttx\tty\ttheta_deg\n");
    for r in rows {
        match r.pose {
            Some(p) => out.push_str(&format!("{}\t{}\t{}\t{}\n", r.name, p.tx, p.ty, p.theta.to_degrees())),
            None => out.push_str(&format!("{}\n", r.name)),
        }
    }
    out
}

pub fn read_pose_table(path: &Path, what: &'static str) -> Result<Vec<PoseRow>> {
    parse_pose_table(&fs::read_to_string(path)?, what)
}

/// A map directory's image ids and poses.
pub fn read_map_table(dir: &Path) -> Result<Vec<(u32, Pose2)>> {
    read_pose_table(&dir.join(MAP_TABLE), "map table")?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let id = r.name.parse::<u32>().map_err(|e| parse_error("map table", i + 1, format!("image id: {e}")))?;
            let pose = r.pose.ok_or_else(|| parse_error("map table", i + 1, "missing pose"))?;
            Ok((id, pose))
        })
        .collect()
}

/// Query images with optional truth. A directory is read through its
/// `truth.tsv` when present, otherwise every image in it is a query without
/// truth. A file is a manifest whose names are paths relative to it.
pub fn read_queries(path: &Path) -> Result<Vec<(PathBuf, Option<Pose2>)>> {
    let (base, rows) = if path.is_dir() {
        let table = path.join(TRUTH_TABLE);
        if table.is_file() {
            (path.to_path_buf(), read_pose_table(&table, "query manifest")?)
        } else {
            let rows = list_images(path)?
                .into_iter()
                .map(|p| PoseRow { name: p.file_name().unwrap().to_string_lossy().into_owned(), pose: None })
                .collect();
            (path.to_path_buf(), rows)
        }
    } else {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (base, read_pose_table(path, "query manifest")?)
    };
    Ok(rows.into_iter().map(|r| (base.join(&r.name), r.pose)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_table_round_trip() {
        let rows = vec![
            PoseRow { name: "00000.png".into(), pose: Some(Pose2::new(0.25, 10.5, -3.0)) },
            PoseRow { name: "00001.png".into(), pose: None },
        ];
        let back = parse_pose_table(&format_pose_table(&rows), "t").unwrap();
        assert_eq!(back.len(), 2);
        let p = back[0].pose.unwrap();
        assert!((p.theta - 0.25).abs() < 1e-12 && p.tx == 10.5 && p.ty == -3.0);
        assert_eq!(back[1], rows[1]);
    }

    #[test]
    fn pose_table_rejects_bad_rows() {
        assert!(matches!(parse_pose_table("a\t1\t2\n", "t"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_pose_table("# c\na\t1\tx\t3\n", "t").is_err());
        assert!(parse_pose_table("a\t1\tNaN\t3\n", "t").is_err());
    }
}
