use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ops::{cosine_similarity_matrix, similarity_shift};
use crate::numerics::Matrix;

/// Similarity shift `Δ` between adapted and static prototypes and the
/// adapted-prototype cosine similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub names: Vec<String>,
    pub delta: Matrix,
    pub similarity: Matrix,
}

impl Heatmap {
    pub fn new(names: Vec<String>, static_protos: &Matrix, adapted: &Matrix) -> Result<Self> {
        if names.len() != static_protos.rows() {
            return Err(Error::Config(format!(
                "{} predicate names for {} prototypes",
                names.len(),
                static_protos.rows()
            )));
        }
        Ok(Self {
            names,
            delta: similarity_shift(static_protos, adapted)?,
            similarity: cosine_similarity_matrix(adapted),
        })
    }

    /// Writes `delta.csv` and `similarity.csv` into `dir` and returns their paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let delta = dir.join("delta.csv");
        let similarity = dir.join("similarity.csv");
        fs::write(&delta, grid_csv(&self.names, &self.delta))?;
        fs::write(&similarity, grid_csv(&self.names, &self.similarity))?;
        Ok((delta, similarity))
    }
}

/// A square grid as CSV: a header row of names, then one row per name
/// led by that name.
pub fn grid_csv(names: &[String], m: &Matrix) -> String {
    let mut out = String::from("predicate");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (i, n) in names.iter().enumerate() {
        out.push_str(n);
        for v in m.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parses a grid written by [`grid_csv`].
pub fn parse_grid_csv(text: &str) -> Result<(Vec<String>, Matrix)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty grid".into(),
    })?;
    let names: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    let mut data = Vec::with_capacity(names.len() * names.len());
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() + 1 {
            return Err(Error::Parse {
                line: i + 2,
                msg: format!("expected {} cells, found {}", names.len() + 1, cells.len()),
            });
        }
        for c in &cells[1..] {
            data.push(c.parse::<f64>().map_err(|e| Error::Parse {
                line: i + 2,
                msg: e.to_string(),
            })?);
        }
    }
    let n = names.len();
    Ok((names, Matrix::new(data.len() / n.max(1), n, data)?))
}
