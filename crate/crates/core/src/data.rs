//! Triplet judgement records and datasets.
//!
//! A record holds the two model distances `d0 = d(ref, x0)` and
//! `d1 = d(ref, x1)` of one 2AFC trial together with `n`, the number of
//! observers (out of `m`) who judged `x1` to be closer to the reference.
//!
//! The interchange format is CSV with header `id,d0,d1,n,m[,group]`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Label used for records that carry no group.
pub const DEFAULT_GROUP: &str = "default";

const REQUIRED_COLUMNS: [&str; 5] = ["id", "d0", "d1", "n", "m"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    pub d0: f64,
    pub d1: f64,
    /// Observers choosing `x1`.
    pub n: u32,
    /// Total observers.
    pub m: u32,
    pub group: Option<String>,
}

impl TripletRecord {
    pub fn new(id: impl Into<String>, d0: f64, d1: f64, n: u32, m: u32) -> Self {
        Self {
            id: id.into(),
            d0,
            d1,
            n,
            m,
            group: None,
        }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        let g = group.into();
        self.group = if g.is_empty() { None } else { Some(g) };
        self
    }

    /// The same trial seen with `x0` and `x1` exchanged: `(d1, d0, m - n)`.
    pub fn mirrored(&self) -> Self {
        Self {
            id: self.id.clone(),
            d0: self.d1,
            d1: self.d0,
            n: self.m - self.n,
            m: self.m,
            group: self.group.clone(),
        }
    }

    pub fn group_label(&self) -> &str {
        self.group.as_deref().unwrap_or(DEFAULT_GROUP)
    }

    /// Checks the record invariants. `row` is only used for error reporting.
    pub fn validate(&self, row: usize) -> Result<()> {
        for (field, v) in [("d0", self.d0), ("d1", self.d1)] {
            if !v.is_finite() {
                return Err(Error::Validation {
                    row,
                    field,
                    message: format!("distance must be finite, got {v}"),
                });
            }
            if v < 0.0 {
                return Err(Error::Validation {
                    row,
                    field,
                    message: format!("distance must be nonnegative, got {v}"),
                });
            }
        }
        if self.m < 1 {
            return Err(Error::Validation {
                row,
                field: "m",
                message: "need at least one judgement".into(),
            });
        }
        if self.n > self.m {
            return Err(Error::Validation {
                row,
                field: "n",
                message: format!("n = {} exceeds m = {}", self.n, self.m),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgementDataset {
    records: Vec<TripletRecord>,
    distance_name: String,
    fixed_m: Option<u32>,
}

impl JudgementDataset {
    /// Validates `records` and detects whether all share one `m`.
    pub fn new(records: Vec<TripletRecord>, distance_name: impl Into<String>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, r) in records.iter().enumerate() {
            r.validate(i + 1)?;
        }
        let first = records[0].m;
        let fixed_m = records.iter().all(|r| r.m == first).then_some(first);
        Ok(Self {
            records,
            distance_name: distance_name.into(),
            fixed_m,
        })
    }

    pub fn records(&self) -> &[TripletRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TripletRecord> {
        self.records
    }

    pub fn distance_name(&self) -> &str {
        &self.distance_name
    }

    pub fn fixed_m(&self) -> Option<u32> {
        self.fixed_m
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn max_m(&self) -> u32 {
        self.records.iter().map(|r| r.m).max().unwrap_or(0)
    }

    pub fn has_groups(&self) -> bool {
        self.records.iter().any(|r| r.group.is_some())
    }

    /// Builds a dataset with the same name from a transformed record list.
    pub fn with_records(&self, records: Vec<TripletRecord>) -> Result<Self> {
        Self::new(records, self.distance_name.clone())
    }

    /// Sum of `n` and sum of `m` over all records.
    pub fn judgement_totals(&self) -> (u64, u64) {
        self.records
            .iter()
            .fold((0, 0), |(n, m), r| (n + r.n as u64, m + r.m as u64))
    }
}

/// Options for reading the CSV interchange format.
#[derive(Clone, Debug)]
pub struct LoadOptions {
    /// Name of the optional group column.
    pub group_column: String,
    /// Dataset name; defaults to the file stem.
    pub distance_name: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            group_column: "group".into(),
            distance_name: None,
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<JudgementDataset> {
    load_dataset_with(path, &LoadOptions::default())
}

pub fn load_dataset_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<JudgementDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = opts.distance_name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    read_dataset(file, name, &opts.group_column)
}

/// Reads the CSV interchange format. Row numbers in errors are file line
/// numbers (the header is line 1).
pub fn read_dataset<R: Read>(
    reader: R,
    distance_name: impl Into<String>,
    group_column: &str,
) -> Result<JudgementDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                row: 1,
                message: format!("header is missing column `{name}`"),
            })?;
    }
    let group_col = headers.iter().position(|h| h == group_column);

    let mut records = Vec::new();
    for (i, result) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = result.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let field = |k: usize| -> Result<&str> {
            rec.get(cols[k]).ok_or_else(|| Error::Parse {
                row,
                message: format!("missing field `{}`", REQUIRED_COLUMNS[k]),
            })
        };
        let real = |k: usize| -> Result<f64> {
            let s = field(k)?;
            s.parse::<f64>().map_err(|_| Error::Parse {
                row,
                message: format!("field `{}`: cannot parse `{s}` as a number", REQUIRED_COLUMNS[k]),
            })
        };
        let count = |k: usize| -> Result<u32> {
            let s = field(k)?;
            s.parse::<u32>().map_err(|_| Error::Parse {
                row,
                message: format!(
                    "field `{}`: cannot parse `{s}` as a nonnegative integer",
                    REQUIRED_COLUMNS[k]
                ),
            })
        };
        let group = group_col
            .and_then(|c| rec.get(c))
            .filter(|g| !g.is_empty())
            .map(str::to_owned);
        let record = TripletRecord {
            id: field(0)?.to_owned(),
            d0: real(1)?,
            d1: real(2)?,
            n: count(3)?,
            m: count(4)?,
            group,
        };
        record.validate(row)?;
        records.push(record);
    }
    JudgementDataset::new(records, distance_name)
}

pub fn save_dataset(ds: &JudgementDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, file).map_err(|e| match e {
        Error::Input(msg) => Error::io(path, std::io::Error::other(msg)),
        other => other,
    })
}

/// Writes the CSV interchange format. The group column is emitted only when
/// at least one record carries a group.
pub fn write_dataset<W: Write>(ds: &JudgementDataset, writer: W) -> Result<()> {
    let with_group = ds.has_groups();
    let mut wtr = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::Input(e.to_string());
    if with_group {
        wtr.write_record(["id", "d0", "d1", "n", "m", "group"])
            .map_err(io_err)?;
    } else {
        wtr.write_record(REQUIRED_COLUMNS).map_err(io_err)?;
    }
    for r in ds.records() {
        let mut row = vec![
            r.id.clone(),
            r.d0.to_string(),
            r.d1.to_string(),
            r.n.to_string(),
            r.m.to_string(),
        ];
        if with_group {
            row.push(r.group.clone().unwrap_or_default());
        }
        wtr.write_record(&row).map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::Input(e.to_string()))?;
    Ok(())
}

/// Partitions records by group label, preserving order within each part.
/// Records without a group go under [`DEFAULT_GROUP`].
pub fn split_by_group(ds: &JudgementDataset) -> BTreeMap<String, JudgementDataset> {
    let mut parts: BTreeMap<String, Vec<TripletRecord>> = BTreeMap::new();
    for r in ds.records() {
        parts
            .entry(r.group_label().to_owned())
            .or_default()
            .push(r.clone());
    }
    parts
        .into_iter()
        .map(|(label, records)| {
            let part = ds
                .with_records(records)
                .expect("parts of a valid dataset are valid and nonempty");
            (label, part)
        })
        .collect()
}

/// Replaces every record with `m` single-judgement records: `n` of them with
/// `n = 1` followed by `m - n` with `n = 0`.
pub fn expand_binary(ds: &JudgementDataset) -> JudgementDataset {
    let mut out = Vec::with_capacity(ds.judgement_totals().1 as usize);
    for r in ds.records() {
        for k in 0..r.m {
            out.push(TripletRecord {
                id: r.id.clone(),
                d0: r.d0,
                d1: r.d1,
                n: u32::from(k < r.n),
                m: 1,
                group: r.group.clone(),
            });
        }
    }
    ds.with_records(out)
        .expect("binary expansion of a valid dataset is valid")
}

/// Seeded random split into `(train, test)` with `round(test_fraction * T)`
/// test records. Both parts keep the input order.
pub fn split_train_test(
    ds: &JudgementDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(JudgementDataset, JudgementDataset)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let t = ds.len();
    if t < 2 {
        return Err(Error::Config("need at least two records to split".into()));
    }
    let n_test = ((test_fraction * t as f64).round() as usize).clamp(1, t - 1);
    let mut idx: Vec<usize> = (0..t).collect();
    idx.shuffle(&mut rng::stream(rng::DOMAIN_SPLIT, seed, 0));
    let mut is_test = vec![false; t];
    for &i in &idx[..n_test] {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = ds
        .records()
        .iter()
        .cloned()
        .zip(is_test)
        .partition(|(_, t)| *t);
    let strip = |v: Vec<(TripletRecord, bool)>| v.into_iter().map(|(r, _)| r).collect();
    Ok((ds.with_records(strip(train))?, ds.with_records(strip(test))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<JudgementDataset> {
        read_dataset(text.as_bytes(), "test", "group")
    }

    #[test]
    fn parses_fixed_m() {
        let ds = parse("id,d0,d1,n,m\na,0.1,0.9,0,2\nb,0.5,0.5,1,2\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.fixed_m(), Some(2));
        assert_eq!(ds.records()[0].id, "a");
        assert_eq!(ds.records()[1].d0, 0.5);
    }

    #[test]
    fn mixed_m_is_variable() {
        let ds = parse("id,d0,d1,n,m\na,0.1,0.9,0,1\nb,0.5,0.5,1,2\n").unwrap();
        assert_eq!(ds.fixed_m(), None);
        assert_eq!(ds.max_m(), 2);
    }

    #[test]
    fn n_above_m_names_row_and_field() {
        let err = parse("id,d0,d1,n,m\na,0.1,0.9,0,2\nb,0.5,0.5,3,2\n").unwrap_err();
        match err {
            Error::Validation { row, field, .. } => {
                assert_eq!(row, 3);
                assert_eq!(field, "n");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_distance_rejected() {
        let err = parse("id,d0,d1,n,m\na,-0.1,0.9,0,2\n").unwrap_err();
        assert!(matches!(err, Error::Validation { row: 2, field: "d0", .. }));
    }

    #[test]
    fn malformed_row_names_row() {
        let err = parse("id,d0,d1,n,m\na,0.1,0.9,0,2\nb,zero,0.5,1,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err:?}");
        let err = parse("id,d0,d1,n,m\na,0.1,0.9,0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err:?}");
    }

    #[test]
    fn missing_header_column() {
        assert!(matches!(
            parse("id,d0,d1,n\na,0.1,0.9,0\n").unwrap_err(),
            Error::Parse { row: 1, .. }
        ));
    }

    #[test]
    fn empty_file_is_error() {
        assert!(matches!(parse("id,d0,d1,n,m\n").unwrap_err(), Error::EmptyDataset));
    }

    #[test]
    fn custom_group_column() {
        let ds = read_dataset("id,d0,d1,n,m,dist\na,0.1,0.9,0,2,blur\n".as_bytes(), "x", "dist").unwrap();
        assert_eq!(ds.records()[0].group.as_deref(), Some("blur"));
    }

    #[test]
    fn split_by_group_counts() {
        let ds = JudgementDataset::new(
            vec![
                TripletRecord::new("1", 0.1, 0.2, 0, 1).with_group("a"),
                TripletRecord::new("2", 0.3, 0.2, 1, 1).with_group("a"),
                TripletRecord::new("3", 0.5, 0.2, 1, 1).with_group("b"),
            ],
            "x",
        )
        .unwrap();
        let parts = split_by_group(&ds);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts["a"].len(), 2);
        assert_eq!(parts["b"].len(), 1);
        assert_eq!(parts["a"].records()[1].id, "2");
    }

    #[test]
    fn ungrouped_and_empty_group_go_to_default() {
        let ds = parse("id,d0,d1,n,m,group\na,0.1,0.9,0,2,\nb,0.5,0.5,1,2,\n").unwrap();
        assert!(!ds.has_groups());
        let parts = split_by_group(&ds);
        assert_eq!(parts.keys().collect::<Vec<_>>(), vec![DEFAULT_GROUP]);
        assert_eq!(parts[DEFAULT_GROUP].len(), 2);

        // Round trip: an empty group string is not distinguishable from no group.
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(split_by_group(&back)[DEFAULT_GROUP].len(), 2);
    }

    #[test]
    fn expand_binary_examples() {
        let ds = JudgementDataset::new(vec![TripletRecord::new("a", 0.3, 0.7, 2, 2)], "x").unwrap();
        let ex = expand_binary(&ds);
        assert_eq!(ex.len(), 2);
        assert!(ex.records().iter().all(|r| r.n == 1 && r.m == 1 && r.d0 == 0.3 && r.d1 == 0.7));

        let ds = JudgementDataset::new(vec![TripletRecord::new("a", 0.3, 0.7, 0, 1)], "x").unwrap();
        assert_eq!(expand_binary(&ds), ds);

        let ds = JudgementDataset::new(vec![TripletRecord::new("a", 0.3, 0.7, 1, 3)], "x").unwrap();
        let ex = expand_binary(&ds);
        let ns: Vec<u32> = ex.records().iter().map(|r| r.n).collect();
        assert_eq!(ns, vec![1, 0, 0]);
        assert_eq!(ex.judgement_totals(), ds.judgement_totals());
        assert_eq!(ex.fixed_m(), Some(1));
    }

    #[test]
    fn train_test_split_is_partition() {
        let records: Vec<_> = (0..100)
            .map(|i| TripletRecord::new(i.to_string(), i as f64, 0.0, 0, 1))
            .collect();
        let ds = JudgementDataset::new(records, "x").unwrap();
        let (train, test) = split_train_test(&ds, 0.2, 5).unwrap();
        assert_eq!(test.len(), 20);
        assert_eq!(train.len(), 80);
        let mut ids: Vec<f64> = train.records().iter().chain(test.records()).map(|r| r.d0).collect();
        ids.sort_by(f64::total_cmp);
        assert_eq!(ids, (0..100).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(split_train_test(&ds, 0.2, 5).unwrap().1, test);
        assert!(split_train_test(&ds, 1.5, 5).is_err());
    }

    fn arb_record() -> impl Strategy<Value = TripletRecord> {
        (
            "[a-z0-9]{1,6}",
            0.0f64..1e6,
            0.0f64..1e6,
            1u32..10,
            prop::option::of("[a-z]{1,4}"),
        )
            .prop_flat_map(|(id, d0, d1, m, g)| {
                (0..=m).prop_map(move |n| TripletRecord {
                    id: id.clone(),
                    d0,
                    d1,
                    n,
                    m,
                    group: g.clone(),
                })
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(records in prop::collection::vec(arb_record(), 1..40)) {
            let ds = JudgementDataset::new(records, "rt").unwrap();
            let mut buf = Vec::new();
            write_dataset(&ds, &mut buf).unwrap();
            let back = read_dataset(buf.as_slice(), "rt", "group").unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn expand_binary_preserves_totals(records in prop::collection::vec(arb_record(), 1..40)) {
            let ds = JudgementDataset::new(records, "x").unwrap();
            let ex = expand_binary(&ds);
            prop_assert_eq!(ex.judgement_totals(), ds.judgement_totals());
            prop_assert_eq!(ex.len() as u64, ds.judgement_totals().1);
        }

        #[test]
        fn split_by_group_is_exhaustive(records in prop::collection::vec(arb_record(), 1..40)) {
            let ds = JudgementDataset::new(records, "x").unwrap();
            let parts = split_by_group(&ds);
            let total: usize = parts.values().map(|p| p.len()).sum();
            prop_assert_eq!(total, ds.len());
            for (label, part) in &parts {
                prop_assert!(part.records().iter().all(|r| r.group_label() == label));
            }
        }
    }
}
