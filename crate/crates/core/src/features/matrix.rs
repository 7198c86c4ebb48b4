use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Labelled samples by features. An empty label means "unknown".
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub ids: Vec<String>,
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            ids: Vec::new(),
            labels: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, label: impl Into<String>, row: Vec<f64>) -> Result<()> {
        if row.len() != self.names.len() {
            return Err(Error::DimensionMismatch {
                expected: self.names.len(),
                found: row.len(),
            });
        }
        self.ids.push(id.into());
        self.labels.push(label.into());
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    /// Sorted distinct non-empty labels.
    pub fn categories(&self) -> Vec<String> {
        self.labels
            .iter()
            .filter(|l| !l.is_empty())
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn select_columns(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: indices.iter().map(|&j| self.names[j].clone()).collect(),
            ids: self.ids.clone(),
            labels: self.labels.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| indices.iter().map(|&j| r[j]).collect())
                .collect(),
        }
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Columns reordered to match `names`; fails if any is missing.
    pub fn align_to(&self, names: &[String]) -> Result<FeatureMatrix> {
        let idx = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|m| m == n)
                    .ok_or_else(|| Error::SchemaMismatch(format!("missing feature column {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_columns(&idx))
    }

    pub fn append(&mut self, other: &FeatureMatrix) -> Result<()> {
        if other.names != self.names {
            return Err(Error::SchemaMismatch("feature columns differ".into()));
        }
        self.ids.extend(other.ids.iter().cloned());
        self.labels.extend(other.labels.iter().cloned());
        self.rows.extend(other.rows.iter().cloned());
        Ok(())
    }

    /// Header `source_id,label,<feature names>`, one row per sample. Values use
    /// the shortest representation that parses back to the same `f64`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["source_id".to_string(), "label".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for ((id, label), row) in self.ids.iter().zip(&self.labels).zip(&self.rows) {
            let mut rec = vec![id.clone(), label.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.len() < 2 || &header[0] != "source_id" || &header[1] != "label" {
            return Err(Error::SchemaMismatch(
                "feature CSV must start with source_id,label columns".into(),
            ));
        }
        let mut m = FeatureMatrix::new(header.iter().skip(2).map(String::from).collect());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .skip(2)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::CorruptData(format!("row {}: bad number {s:?}", line + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            m.push(&rec[0], &rec[1], row)?;
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureMatrix {
        let mut m = FeatureMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
        m.push("s1", "x", vec![0.1, 1.0 / 3.0, -2.5e-17]).unwrap();
        m.push("s2", "y", vec![4.0, 5.0, 6.0]).unwrap();
        m.push("s3", "", vec![7.0, 8.0, 9.0]).unwrap();
        m
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let m = sample();
        m.write_csv(&p).unwrap();
        assert_eq!(FeatureMatrix::read_csv(&p).unwrap(), m);
    }

    #[test]
    fn push_checks_width() {
        let mut m = sample();
        assert!(matches!(m.push("z", "x", vec![1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn selection_and_alignment() {
        let m = sample();
        assert_eq!(m.categories(), vec!["x".to_string(), "y".to_string()]);
        let s = m.select_columns(&[2, 0]);
        assert_eq!(s.rows[1], vec![6.0, 4.0]);
        let back = s.align_to(&["a".to_string()]).unwrap();
        assert_eq!(back.column(0), vec![0.1, 4.0, 7.0]);
        assert!(s.align_to(&["b".to_string()]).is_err());
        assert_eq!(m.select_rows(&[1]).ids, vec!["s2".to_string()]);
    }
}
