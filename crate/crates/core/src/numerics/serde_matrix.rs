//! Serialize matrices as nested row arrays (`[[r0c0, r0c1], [r1c0, r1c1]]`).
//!
//! Use with `#[serde(with = "serde_matrix")]`, or `serde_matrix::many` for a
//! `Vec<Matrix>`.

use crate::Matrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Builds a matrix from rows; `cols` is used when there are no rows.
pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Matrix, String> {
    let width = rows.first().map_or(cols, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != width) {
        return Err(format!("ragged matrix: row {bad} has {} entries, expected {width}", rows[bad].len()));
    }
    Ok(Matrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
    to_rows(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
    let rows = Vec::<Vec<f64>>::deserialize(d)?;
    from_rows(&rows, 0).map_err(D::Error::custom)
}

pub mod many {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
        let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        all.iter().map(|rows| from_rows(rows, 0).map_err(D::Error::custom)).collect()
    }
}
