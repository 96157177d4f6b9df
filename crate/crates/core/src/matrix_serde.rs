//! Row-major nested-array (de)serialization for `DMatrix<f64>`.
//!
//! `nalgebra`'s own serde support writes a flat column-major buffer; exported
//! JSON uses `[[row0...], [row1...], ...]` instead.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], ncols_if_empty: usize) -> Option<DMatrix<f64>> {
    let ncols = rows.first().map_or(ncols_if_empty, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    to_rows(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let rows = Vec::<Vec<f64>>::deserialize(d)?;
    from_rows(&rows, 0).ok_or_else(|| D::Error::custom("ragged matrix rows"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Wrap {
        #[serde(with = "super")]
        m: DMatrix<f64>,
    }

    #[test]
    fn writes_row_major() {
        let w = Wrap { m: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]) };
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, r#"{"m":[[1.0,2.0,3.0],[4.0,5.0,6.0]]}"#);
        let back: Wrap = serde_json::from_str(&s).unwrap();
        assert_eq!(back.m, w.m);
    }

    #[test]
    fn rejects_ragged() {
        assert!(serde_json::from_str::<Wrap>(r#"{"m":[[1.0],[2.0,3.0]]}"#).is_err());
    }
}
