//! Dataset directory format.
//!
//! A dataset is a directory holding `manifest.json`, one
//! `features_<T>.tsv` per node type, one edge list per declared relation,
//! `labels_<TARGET>.tsv` and `splits.tsv`. Edge multiplicities are summed on
//! load; the reverse direction of every relation is derived.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dense::DenseMatrix;
use crate::graph::{fnv1a64, GraphError, GraphParts, HeteroGraph, Manifest, Split, UNLABELED};
use crate::sparse::SparseMatrix;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLITS_FILE: &str = "splits.tsv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no manifest.json in {0}")]
    MissingManifest(PathBuf),
    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}: shape mismatch, manifest declares {expected} but file has {found}")]
    ShapeMismatch {
        file: String,
        expected: String,
        found: String,
    },
    #[error("{file}:{line}: unknown split tag `{tag}` (expected train, val or test)")]
    UnknownSplitTag {
        file: String,
        line: usize,
        tag: String,
    },
    #[error("{file}:{line}: label {label} outside [0, {num_classes})")]
    LabelOutOfRange {
        file: String,
        line: usize,
        label: i64,
        num_classes: usize,
    },
    #[error("{file}:{line}: node id {id} out of range for {count} nodes")]
    NodeOutOfRange {
        file: String,
        line: usize,
        id: usize,
        count: usize,
    },
    #[error("{file}: node {node} has {found} split tags, expected exactly one")]
    SplitCount {
        file: String,
        node: usize,
        found: usize,
    },
    #[error("relation {src}->{dst} has non-integer weight {value}; edge lists hold counts")]
    NonIntegerWeight {
        src: String,
        dst: String,
        value: f64,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &[u8]) -> Result<(), DatasetError> {
    fs::write(path, contents).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn parse_field<T: std::str::FromStr>(
    file: &str,
    line: usize,
    field: &str,
) -> Result<T, DatasetError>
where
    T::Err: std::fmt::Display,
{
    field
        .trim()
        .parse()
        .map_err(|e: T::Err| DatasetError::Parse {
            file: file.to_string(),
            line,
            message: format!("cannot parse `{field}`: {e}"),
        })
}

fn two_columns<'a>(
    file: &str,
    line: usize,
    l: &'a str,
) -> Result<(&'a str, &'a str), DatasetError> {
    let mut it = l.split('\t');
    match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), None) => Ok((a, b)),
        _ => Err(DatasetError::Parse {
            file: file.to_string(),
            line,
            message: "expected two tab-separated columns".into(),
        }),
    }
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<HeteroGraph, DatasetError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(DatasetError::MissingManifest(dir.to_path_buf()));
    }
    let manifest_bytes = fs::read(&manifest_path).map_err(|source| DatasetError::Io {
        path: manifest_path.clone(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;
    let count_of = |t: &str| -> Result<usize, DatasetError> {
        manifest
            .counts
            .get(t)
            .copied()
            .ok_or_else(|| GraphError::UnknownType(t.to_string()).into())
    };

    let mut features = BTreeMap::new();
    for t in &manifest.node_types {
        let rows = count_of(t)?;
        let cols = *manifest
            .feature_dims
            .get(t)
            .ok_or_else(|| GraphError::MissingFeatures(t.clone()))?;
        let name = format!("features_{t}.tsv");
        let text = read(&dir.join(&name))?;
        let mut data = Vec::with_capacity(rows * cols);
        let mut n_rows = 0;
        for (line, l) in data_lines(&text) {
            let fields: Vec<&str> = if cols == 0 && l.trim().is_empty() {
                Vec::new()
            } else {
                l.split('\t').collect()
            };
            if fields.len() != cols {
                return Err(DatasetError::ShapeMismatch {
                    file: name,
                    expected: format!("{cols} columns"),
                    found: format!("{} columns on line {line}", fields.len()),
                });
            }
            for f in fields {
                data.push(parse_field::<f64>(&name, line, f)?);
            }
            n_rows += 1;
        }
        if n_rows != rows && cols > 0 {
            return Err(DatasetError::ShapeMismatch {
                file: name,
                expected: format!("{rows} rows"),
                found: format!("{n_rows} rows"),
            });
        }
        if cols == 0 {
            data.clear();
        }
        features.insert(t.clone(), DenseMatrix::from_vec(rows, cols, data)?);
    }

    let mut relations = Vec::new();
    for rel in &manifest.relations {
        let (rows, cols) = (count_of(&rel.src)?, count_of(&rel.dst)?);
        let text = read(&dir.join(&rel.file))?;
        let mut triplets = Vec::new();
        for (line, l) in data_lines(&text) {
            let (a, b) = two_columns(&rel.file, line, l)?;
            let (r, c): (usize, usize) = (
                parse_field(&rel.file, line, a)?,
                parse_field(&rel.file, line, b)?,
            );
            for (id, count) in [(r, rows), (c, cols)] {
                if id >= count {
                    return Err(DatasetError::NodeOutOfRange {
                        file: rel.file.clone(),
                        line,
                        id,
                        count,
                    });
                }
            }
            triplets.push((r, c, 1.0));
        }
        relations.push((
            rel.src.clone(),
            rel.dst.clone(),
            SparseMatrix::from_triplets(rows, cols, &triplets)?,
        ));
    }

    let target = &manifest.target_type;
    let n_target = count_of(target)?;
    let labels_name = format!("labels_{target}.tsv");
    let mut labels = vec![UNLABELED; n_target];
    for (line, l) in data_lines(&read(&dir.join(&labels_name))?) {
        let (a, b) = two_columns(&labels_name, line, l)?;
        let node: usize = parse_field(&labels_name, line, a)?;
        let label: i64 = parse_field(&labels_name, line, b)?;
        if node >= n_target {
            return Err(DatasetError::NodeOutOfRange {
                file: labels_name,
                line,
                id: node,
                count: n_target,
            });
        }
        if label < 0 || label >= manifest.num_classes as i64 {
            return Err(DatasetError::LabelOutOfRange {
                file: labels_name,
                line,
                label,
                num_classes: manifest.num_classes,
            });
        }
        labels[node] = label;
    }

    let mut tags: Vec<Vec<Split>> = vec![Vec::new(); n_target];
    for (line, l) in data_lines(&read(&dir.join(SPLITS_FILE))?) {
        let (a, b) = two_columns(SPLITS_FILE, line, l)?;
        let node: usize = parse_field(SPLITS_FILE, line, a)?;
        let tag = b.trim();
        let split = Split::parse(tag).ok_or_else(|| DatasetError::UnknownSplitTag {
            file: SPLITS_FILE.into(),
            line,
            tag: tag.to_string(),
        })?;
        if node >= n_target {
            return Err(DatasetError::NodeOutOfRange {
                file: SPLITS_FILE.into(),
                line,
                id: node,
                count: n_target,
            });
        }
        tags[node].push(split);
    }
    let mut splits = Vec::with_capacity(n_target);
    for (node, t) in tags.into_iter().enumerate() {
        if t.len() != 1 {
            return Err(DatasetError::SplitCount {
                file: SPLITS_FILE.into(),
                node,
                found: t.len(),
            });
        }
        splits.push(t[0]);
    }

    let parts = GraphParts {
        node_types: manifest.node_types.clone(),
        counts: manifest.counts.clone(),
        features,
        relations,
        target_type: target.clone(),
        labels,
        num_classes: manifest.num_classes,
        splits,
        origin: manifest.origin.clone(),
    };
    Ok(HeteroGraph::with_fingerprint(
        parts,
        fnv1a64(&manifest_bytes),
    )?)
}

/// Writes `graph` in the dataset directory format, creating `dir` if needed.
/// Reals are written in shortest round-trip form so a reload is bit-exact.
pub fn save_dataset(graph: &HeteroGraph, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write(&dir.join(MANIFEST_FILE), &graph.manifest_bytes())?;

    for t in graph.node_types() {
        let f = graph.features(t).expect("every type has features");
        let mut out = String::new();
        for r in 0..f.rows() {
            for (c, v) in f.row(r).iter().enumerate() {
                if c > 0 {
                    out.push('\t');
                }
                write!(out, "{v:?}").expect("write to string");
            }
            out.push('\n');
        }
        write(&dir.join(format!("features_{t}.tsv")), out.as_bytes())?;
    }

    for rel in graph.manifest().relations {
        let m = graph
            .relation(&rel.src, &rel.dst)
            .expect("declared relation stored");
        let mut out = String::new();
        for (r, c, v) in m.iter() {
            if v.fract() != 0.0 || v < 1.0 {
                return Err(DatasetError::NonIntegerWeight {
                    src: rel.src,
                    dst: rel.dst,
                    value: v,
                });
            }
            for _ in 0..v as u64 {
                writeln!(out, "{r}\t{c}").expect("write to string");
            }
        }
        write(&dir.join(&rel.file), out.as_bytes())?;
    }

    let mut labels = String::new();
    for (i, &l) in graph.labels().iter().enumerate() {
        if l != UNLABELED {
            writeln!(labels, "{i}\t{l}").expect("write to string");
        }
    }
    write(
        &dir.join(format!("labels_{}.tsv", graph.target_type())),
        labels.as_bytes(),
    )?;

    let mut splits = String::new();
    for (i, s) in graph.splits().iter().enumerate() {
        writeln!(splits, "{i}\t{s}").expect("write to string");
    }
    write(&dir.join(SPLITS_FILE), splits.as_bytes())
}
