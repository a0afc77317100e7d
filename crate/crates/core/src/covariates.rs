//! WorldClim bioclimatic covariates (bio1..bio19).
//!
//! The registry is a compiled-in table. Rows hold whatever subset of the 19
//! variables a location has; missing cells stay absent rather than imputed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CovariateError {
    #[error("unknown covariate column {0:?}")]
    UnknownColumn(String),
    #[error("missing id column")]
    MissingId,
    #[error("row {row}, column {column}: {value:?} is not a finite number")]
    NotNumeric { row: usize, column: String, value: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One of the nineteen bioclimatic variables, identified by its number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CovariateCode(u8);

impl CovariateCode {
    pub fn new(n: u8) -> Option<Self> {
        (1..=19).contains(&n).then_some(Self(n))
    }

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = CovariateCode> {
        (1..=19).map(CovariateCode)
    }

    pub fn entry(self) -> &'static CovariateEntry {
        &REGISTRY[(self.0 - 1) as usize]
    }
}

impl fmt::Display for CovariateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bio{}", self.0)
    }
}

impl FromStr for CovariateCode {
    type Err = ();

    /// Accepts `bio1`..`bio19`, case-insensitively.
    fn from_str(s: &str) -> Result<Self, ()> {
        let lower = s.trim().to_ascii_lowercase();
        let digits = lower.strip_prefix("bio").ok_or(())?;
        if digits.is_empty() || digits.len() > 2 || digits.starts_with('0') {
            return Err(());
        }
        digits.parse::<u8>().ok().and_then(CovariateCode::new).ok_or(())
    }
}

impl Serialize for CovariateCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CovariateCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(|_| serde::de::Error::custom(format!("unknown covariate code {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateGroup {
    Temperature,
    Precipitation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CovariateEntry {
    pub code: &'static str,
    pub name: &'static str,
    pub relevance: &'static str,
    pub unit: &'static str,
    pub group: CovariateGroup,
}

const fn t(code: &'static str, name: &'static str, relevance: &'static str, unit: &'static str) -> CovariateEntry {
    CovariateEntry { code, name, relevance, unit, group: CovariateGroup::Temperature }
}

const fn p(code: &'static str, name: &'static str, relevance: &'static str, unit: &'static str) -> CovariateEntry {
    CovariateEntry { code, name, relevance, unit, group: CovariateGroup::Precipitation }
}

static REGISTRY: [CovariateEntry; 19] = [
    t("bio1", "Annual Mean Temperature", "Baseline thermal energy", "°C"),
    t("bio2", "Mean Diurnal Range", "Daily temperature stability", "°C"),
    t("bio3", "Isothermality", "Shape of thermal variability", "%"),
    t("bio4", "Temperature Seasonality", "Intensity of thermal pulses", "°C sd x100"),
    t("bio5", "Max Temperature of Warmest Month", "Acute heat stress", "°C"),
    t("bio6", "Min Temperature of Coldest Month", "Acute cold stress", "°C"),
    t("bio7", "Temperature Annual Range", "Climatic buffering capacity", "°C"),
    t("bio8", "Mean Temp. of Wettest Quarter", "Thermal conditions under high moisture", "°C"),
    t("bio9", "Mean Temp. of Driest Quarter", "Thermal conditions under low moisture", "°C"),
    t("bio10", "Mean Temp. of Warmest Quarter", "Prolonged heat exposure", "°C"),
    t("bio11", "Mean Temp. of Coldest Quarter", "Prolonged cold exposure", "°C"),
    p("bio12", "Annual Precipitation", "Total water input", "mm"),
    p("bio13", "Precipitation of Wettest Month", "Moisture extremes", "mm"),
    p("bio14", "Precipitation of Driest Month", "Moisture extremes", "mm"),
    p("bio15", "Precipitation Seasonality", "Drought risk", "CV %"),
    p("bio16", "Precipitation of Wettest Quarter", "Seasonal water allocation", "mm"),
    p("bio17", "Precipitation of Driest Quarter", "Seasonal water allocation", "mm"),
    p("bio18", "Precipitation of Warmest Quarter", "Temperature–precipitation coupling", "mm"),
    p("bio19", "Precipitation of Coldest Quarter", "Temperature–precipitation coupling", "mm"),
];

/// The built-in table of bioclimatic variables offered to the variable-selection agent.
#[derive(Debug, Clone, Copy, Default)]
pub struct CovariateRegistry;

impl CovariateRegistry {
    pub fn entries(&self) -> &'static [CovariateEntry] {
        &REGISTRY
    }

    pub fn len(&self) -> usize {
        REGISTRY.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, code: CovariateCode) -> &'static CovariateEntry {
        code.entry()
    }

    /// Registry as CSV (`code,name,relevance,unit`).
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["code", "name", "relevance", "unit"]).expect("in-memory write");
        for e in &REGISTRY {
            w.write_record([e.code, e.name, e.relevance, e.unit]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Registry as a markdown table, grouped like the source table.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| ID | Variable | Ecological relevance | Unit |\n|---|---|---|---|\n");
        for e in &REGISTRY {
            out.push_str(&format!("| {} | {} | {} | {} |\n", e.code, e.name, e.relevance, e.unit));
        }
        out
    }
}

/// Covariate values at one location.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    values: BTreeMap<CovariateCode, f64>,
}

impl CovariateRow {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a value; non-finite values are ignored and reported as `false`.
    pub fn insert(&mut self, code: CovariateCode, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        self.values.insert(code, value);
        true
    }

    pub fn get(&self, code: CovariateCode) -> Option<f64> {
        self.values.get(&code).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Entries in registry order.
    pub fn iter(&self) -> impl Iterator<Item = (CovariateCode, f64)> + '_ {
        self.values.iter().map(|(c, v)| (*c, *v))
    }

    pub fn codes(&self) -> BTreeSet<CovariateCode> {
        self.values.keys().copied().collect()
    }
}

impl FromIterator<(CovariateCode, f64)> for CovariateRow {
    fn from_iter<I: IntoIterator<Item = (CovariateCode, f64)>>(iter: I) -> Self {
        let mut row = CovariateRow::new();
        for (c, v) in iter {
            row.insert(c, v);
        }
        row
    }
}

/// Restricts a row to the selected codes. Codes absent from the row are skipped.
pub fn project(row: &CovariateRow, selection: &BTreeSet<CovariateCode>) -> CovariateRow {
    let mut out = CovariateRow::new();
    for code in selection {
        match row.get(*code) {
            Some(v) => {
                out.values.insert(*code, v);
            }
            None => log::debug!("covariate {code} not present in row; omitted"),
        }
    }
    out
}

/// Parses an `id,bio..` table into rows keyed by id, preserving file order.
pub fn load_covariates<R: Read>(reader: R) -> Result<Vec<(String, CovariateRow)>, CovariateError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut id_col = None;
    let mut columns = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if h == "id" {
            id_col = Some(i);
        } else {
            let code = h.parse::<CovariateCode>().map_err(|_| CovariateError::UnknownColumn(h.to_string()))?;
            columns.push((i, code));
        }
    }
    let id_col = id_col.ok_or(CovariateError::MissingId)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (n, record) in rdr.records().enumerate() {
        let record = record?;
        let id = record.get(id_col).unwrap_or_default().to_string();
        if !seen.insert(id.clone()) {
            return Err(CovariateError::DuplicateId(id));
        }
        let row = parse_row(&record, &columns, n + 1)?;
        out.push((id, row));
    }
    Ok(out)
}

/// Parses covariate cells from a record. `row` is the 1-based data row for error messages.
pub(crate) fn parse_row(
    record: &csv::StringRecord,
    columns: &[(usize, CovariateCode)],
    row: usize,
) -> Result<CovariateRow, CovariateError> {
    let mut out = CovariateRow::new();
    for &(i, code) in columns {
        let cell = record.get(i).unwrap_or_default();
        if cell.is_empty() {
            continue;
        }
        let value = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| CovariateError::NotNumeric {
            row,
            column: code.to_string(),
            value: cell.to_string(),
        })?;
        out.insert(code, value);
    }
    Ok(out)
}

/// Writes rows as `id,bio1..bio19`, leaving missing cells empty.
pub fn save_covariates<W: Write>(writer: W, rows: &[(String, CovariateRow)]) -> Result<(), CovariateError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend(CovariateCode::all().map(|c| c.to_string()));
    w.write_record(&header)?;
    for (id, row) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(CovariateCode::all().map(|c| row.get(c).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn code(s: &str) -> CovariateCode {
        s.parse().unwrap()
    }

    fn full_row() -> CovariateRow {
        CovariateCode::all().map(|c| (c, c.number() as f64 * 1.5)).collect()
    }

    #[test]
    fn registry_shape() {
        let reg = CovariateRegistry;
        assert_eq!(reg.len(), 19);
        for (i, e) in reg.entries().iter().enumerate() {
            assert_eq!(e.code, format!("bio{}", i + 1));
            assert_eq!(e.code.parse::<CovariateCode>().unwrap().number() as usize, i + 1);
        }
        let groups: Vec<_> = reg.entries().iter().map(|e| e.group).collect();
        assert!(groups[..11].iter().all(|g| *g == CovariateGroup::Temperature));
        assert!(groups[11..].iter().all(|g| *g == CovariateGroup::Precipitation));
    }

    #[test]
    fn code_parsing() {
        assert_eq!(code("BIO7").number(), 7);
        assert!("bio0".parse::<CovariateCode>().is_err());
        assert!("bio20".parse::<CovariateCode>().is_err());
        assert!("bio01".parse::<CovariateCode>().is_err());
        assert!("bio99".parse::<CovariateCode>().is_err());
        assert!("temp".parse::<CovariateCode>().is_err());
    }

    #[test]
    fn load_single_column() {
        let rows = load_covariates("id,bio1\na,1.5\nb,\n".as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].1.codes(), [code("bio1")].into_iter().collect());
        assert_eq!(rows[0].1.get(code("bio1")), Some(1.5));
        assert!(rows[1].1.is_empty(), "empty cell is absent, not zero");
    }

    #[test]
    fn nan_cell_names_row_and_column() {
        let err = load_covariates("id,bio1,bio12\na,1,2\nb,3,NaN\n".as_bytes()).unwrap_err();
        match err {
            CovariateError::NotNumeric { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "bio12");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_msg("id,bio1\na,abc\n").contains("bio1"));
    }

    fn err_msg(s: &str) -> String {
        load_covariates(s.as_bytes()).unwrap_err().to_string()
    }

    #[test]
    fn unknown_column_rejected() {
        assert!(matches!(
            load_covariates("id,bio1,elevation\n".as_bytes()),
            Err(CovariateError::UnknownColumn(c)) if c == "elevation"
        ));
        assert!(matches!(load_covariates("bio1\n1\n".as_bytes()), Err(CovariateError::MissingId)));
    }

    #[test]
    fn nineteen_columns_round_trip_bit_identically() {
        let rows: Vec<(String, CovariateRow)> = (0..5)
            .map(|i| {
                let row = CovariateCode::all()
                    .map(|c| (c, (i as f64 + 0.1) * (c.number() as f64).sqrt() / 3.0 - 7.25))
                    .collect();
                (format!("p{i}"), row)
            })
            .collect();
        let mut buf = Vec::new();
        save_covariates(&mut buf, &rows).unwrap();
        let back = load_covariates(buf.as_slice()).unwrap();
        assert_eq!(back.len(), rows.len());
        for ((ia, ra), (ib, rb)) in rows.iter().zip(&back) {
            assert_eq!(ia, ib);
            for c in CovariateCode::all() {
                assert_eq!(ra.get(c).unwrap().to_bits(), rb.get(c).unwrap().to_bits());
            }
        }
        let mut again = Vec::new();
        save_covariates(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn project_examples() {
        let row = full_row();
        assert!(project(&row, &BTreeSet::new()).is_empty());
        let all: BTreeSet<_> = CovariateCode::all().collect();
        assert_eq!(project(&row, &all), row);
        let sel: BTreeSet<_> = [code("bio1"), code("bio12")].into_iter().collect();
        let out = project(&row, &sel);
        assert_eq!(out.len(), 2);
        assert_eq!(out.get(code("bio12")), row.get(code("bio12")));
        let partial: CovariateRow = [(code("bio1"), 3.0)].into_iter().collect();
        assert_eq!(project(&partial, &sel).codes(), [code("bio1")].into_iter().collect());
    }

    #[test]
    fn markdown_and_csv_dumps_list_every_code() {
        let reg = CovariateRegistry;
        let md = reg.to_markdown();
        let csv = reg.to_csv();
        for e in reg.entries() {
            assert!(md.contains(&format!("| {} | {} |", e.code, e.name)));
            assert!(csv.contains(e.name));
        }
    }

    proptest! {
        #[test]
        fn project_is_idempotent(mask in prop::collection::vec(any::<bool>(), 19),
                                 present in prop::collection::vec(any::<bool>(), 19)) {
            let row: CovariateRow = CovariateCode::all()
                .filter(|c| present[(c.number() - 1) as usize])
                .map(|c| (c, c.number() as f64))
                .collect();
            let sel: BTreeSet<_> = CovariateCode::all().filter(|c| mask[(c.number() - 1) as usize]).collect();
            let once = project(&row, &sel);
            prop_assert_eq!(project(&once, &sel), once.clone());
            let expected: BTreeSet<_> = sel.intersection(&row.codes()).copied().collect();
            prop_assert_eq!(once.codes(), expected);
        }
    }
}
