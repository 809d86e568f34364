use super::encode::{encode_row, FeatureVector};
use super::flatten::FlatRow;
use super::schema::SchemaManifest;
use crate::error::{Error, Result};

/// Place items on the 1 s grid `[start, end]`. Absent seconds are `None`;
/// for duplicated timestamps the first item in input order wins; items
/// outside the span are discarded.
pub fn reindex_by<T, F: Fn(&T) -> i64>(mut items: Vec<T>, start: i64, end: i64, ts: F) -> Result<Vec<Option<T>>> {
    if end < start {
        return Err(Error::EmptySpan { start, end });
    }
    items.sort_by_key(|r| ts(r));
    let mut grid: Vec<Option<T>> = (start..=end).map(|_| None).collect();
    for item in items {
        let t = ts(&item);
        if t < start || t > end {
            continue;
        }
        let slot = &mut grid[(t - start) as usize];
        if slot.is_none() {
            *slot = Some(item);
        }
    }
    Ok(grid)
}

pub fn reindex_rows(rows: Vec<FlatRow>, start: i64, end: i64) -> Result<Vec<Option<FlatRow>>> {
    reindex_by(rows, start, end, |r| r.timestamp)
}

pub fn encode_grid(grid: &[Option<FlatRow>], start: i64, manifest: &SchemaManifest) -> Vec<FeatureVector> {
    grid.iter()
        .enumerate()
        .map(|(i, r)| match r {
            Some(row) => encode_row(row, manifest),
            None => FeatureVector::all_missing(start + i as i64, manifest.feature_count),
        })
        .collect()
}

pub fn reindex_day(rows: Vec<FlatRow>, start: i64, end: i64, manifest: &SchemaManifest) -> Result<Vec<FeatureVector>> {
    let grid = reindex_rows(rows, start, end)?;
    Ok(encode_grid(&grid, start, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::flatten::flatten_record;
    use crate::ingest::schema::{Variable, VariableKind};

    fn m() -> SchemaManifest {
        SchemaManifest::new(vec![Variable {
            name: "v".into(),
            kind: VariableKind::Numeric { min: 0.0, max: 10.0 },
        }])
    }

    fn row(t: i64, v: f64) -> FlatRow {
        flatten_record(&format!(r#"{{"timestamp":{t},"v":{v}}}"#)).unwrap()
    }

    #[test]
    fn gap_becomes_missing() {
        let out = reindex_day(vec![row(102, 5.0), row(100, 1.0)], 100, 102, &m()).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].features, vec![-1.0]);
        assert!(out[1].missing);
        assert_eq!(out[2].features, vec![0.5]);
    }

    #[test]
    fn duplicate_keeps_first() {
        let out = reindex_day(vec![row(100, 1.0), row(100, 9.0)], 100, 100, &m()).unwrap();
        assert_eq!(out[0].features, vec![0.1]);
    }

    #[test]
    fn empty_input_gives_missing_span() {
        let out = reindex_day(vec![], 0, 9, &m()).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|f| f.missing && f.features == vec![-1.0]));
        assert!(matches!(reindex_day(vec![], 5, 4, &m()), Err(Error::EmptySpan { .. })));
    }
}
