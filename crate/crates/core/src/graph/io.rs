//! Edge-list files and dataset manifests.
//!
//! An edge-list file holds one graph: the first line is the node count,
//! every following line is `u v [w]` with 1-based endpoints and an optional
//! weight (default 1). `#` starts a comment. A dataset directory holds such
//! files plus `manifest.txt`, one `split file` pair per line.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::instance::GraphInstance;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

pub fn parse_edge_list(text: &str, path: &Path) -> Result<GraphInstance> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut n: Option<usize> = None;
    let mut weights: HashMap<(usize, usize), f64> = HashMap::new();
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let Some(count) = n else {
            if fields.len() != 1 {
                return Err(err(line_no, format!("expected node count, got `{line}`")));
            }
            n = Some(
                fields[0]
                    .parse()
                    .map_err(|_| err(line_no, format!("bad node count `{}`", fields[0])))?,
            );
            continue;
        };
        if !(2..=3).contains(&fields.len()) {
            return Err(err(line_no, format!("expected `u v [w]`, got `{line}`")));
        }
        let node = |s: &str| -> Result<usize> {
            let v: usize = s.parse().map_err(|_| err(line_no, format!("bad node index `{s}`")))?;
            if v == 0 || v > count {
                return Err(err(line_no, format!("node {v} outside 1..={count}")));
            }
            Ok(v - 1)
        };
        let (u, v) = (node(fields[0])?, node(fields[1])?);
        if u == v {
            return Err(err(line_no, format!("self-loop on node {}", u + 1)));
        }
        let w: f64 = match fields.get(2) {
            Some(s) => s.parse().map_err(|_| err(line_no, format!("bad weight `{s}`")))?,
            None => 1.0,
        };
        if !w.is_finite() {
            return Err(err(line_no, format!("non-finite weight `{w}`")));
        }
        let key = (u.min(v), u.max(v));
        match weights.get(&key) {
            Some(&prev) if prev != w => {
                return Err(err(
                    line_no,
                    format!("edge {} {} repeated with weight {w} (was {prev})", key.0 + 1, key.1 + 1),
                ))
            }
            Some(_) => {}
            None => {
                weights.insert(key, w);
                edges.push((key.0, key.1, w));
            }
        }
    }
    let n = n.ok_or_else(|| err(0, "missing node count".into()))?;
    GraphInstance::from_edges(n, &edges)
}

pub fn format_edge_list(g: &GraphInstance) -> String {
    let mut out = format!("{}\n", g.n());
    for (i, j, w) in g.edges() {
        if w == 1.0 {
            let _ = writeln!(out, "{} {}", i + 1, j + 1);
        } else {
            let _ = writeln!(out, "{} {} {w:?}", i + 1, j + 1);
        }
    }
    out
}

pub fn read_edge_list(path: impl AsRef<Path>) -> Result<GraphInstance> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, path)
}

pub fn write_edge_list(g: &GraphInstance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_edge_list(g)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: String,
    pub file: String,
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        match (fields.next(), fields.next(), fields.next()) {
            (Some(split), Some(file), None) => entries.push(ManifestEntry {
                split: split.to_string(),
                file: file.to_string(),
            }),
            _ => {
                return Err(Error::Parse {
                    path,
                    line: idx + 1,
                    msg: format!("expected `split file`, got `{line}`"),
                })
            }
        }
    }
    Ok(entries)
}

pub fn write_manifest(dir: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = dir.as_ref().join(MANIFEST);
    let mut out = String::from("# split file\n");
    for e in entries {
        let _ = writeln!(out, "{} {}", e.split, e.file);
    }
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

/// Writes every group of graphs as `<split>_<index>.txt` plus the manifest.
pub fn write_graph_dir(dir: impl AsRef<Path>, groups: &[(&str, &[GraphInstance])]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    let mut written = Vec::new();
    for (split, graphs) in groups {
        for (k, g) in graphs.iter().enumerate() {
            let file = format!("{split}_{k:05}.txt");
            let path = dir.join(&file);
            write_edge_list(g, &path)?;
            written.push(path);
            entries.push(ManifestEntry {
                split: split.to_string(),
                file,
            });
        }
    }
    write_manifest(dir, &entries)?;
    Ok(written)
}

/// Reads the graphs of a directory, restricted to `split` when given.
///
/// Without a manifest every `*.txt` file except the manifest is read, in
/// file-name order, and `split` is ignored.
pub fn read_graph_dir(dir: impl AsRef<Path>, split: Option<&str>) -> Result<Vec<GraphInstance>> {
    let dir = dir.as_ref();
    let files: Vec<PathBuf> = if dir.join(MANIFEST).exists() {
        read_manifest(dir)?
            .into_iter()
            .filter(|e| split.map_or(true, |s| e.split == s))
            .map(|e| dir.join(e.file))
            .collect()
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "txt")
                    && p.file_name().is_some_and(|f| f != MANIFEST)
            })
            .collect();
        files.sort();
        files
    };
    files.iter().map(read_edge_list).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<GraphInstance> {
        parse_edge_list(s, Path::new("test.txt"))
    }

    #[test]
    fn path_plus_isolated_node() {
        let g = parse("3\n1 2 1.0\n").unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.degrees(), vec![1, 1, 0]);
        assert!(g.is_binary());
    }

    #[test]
    fn empty_edge_section() {
        let g = parse("# header\n5 # nodes\n").unwrap();
        assert_eq!(g, GraphInstance::empty(5));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let e = parse("3\n1 2\nfoo bar baz qux\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse("3\n1 4\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
    }

    #[test]
    fn conflicting_duplicate_rejected() {
        assert!(parse("3\n1 2 0.5\n2 1 0.5\n").is_ok());
        let e = parse("3\n1 2 0.5\n2 1 0.7\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
    }

    #[test]
    fn weighted_round_trip_is_exact() {
        let g = GraphInstance::from_edges(4, &[(0, 1, 0.1), (1, 3, 1.0 / 3.0), (2, 3, 1.0)]).unwrap();
        let back = parse(&format_edge_list(&g)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = vec![GraphInstance::from_edges(3, &[(0, 2, 1.0)]).unwrap()];
        let b = vec![GraphInstance::empty(2), GraphInstance::empty(4)];
        write_graph_dir(dir.path(), &[("train", &a), ("test", &b)]).unwrap();
        assert_eq!(read_graph_dir(dir.path(), Some("train")).unwrap(), a);
        assert_eq!(read_graph_dir(dir.path(), Some("test")).unwrap(), b);
        assert_eq!(read_graph_dir(dir.path(), None).unwrap().len(), 3);
    }
}
