//! Locations with ground truth, anchor values and optional covariates.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::covariates::{self, CovariateCode, CovariateError, CovariateRow};
use crate::geo::{GeoError, GeoPoint};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("missing required column {0:?}")]
    MissingColumn(&'static str),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("duplicate point id {0:?}")]
    DuplicateId(String),
    #[error(
        "column lengths differ: {points} points, {targets} targets, {anchor} anchors, {covariates} covariate rows"
    )]
    Misaligned { points: usize, targets: usize, anchor: usize, covariates: usize },
    #[error("covariate file references unknown point id {0:?}")]
    UnknownCovariateId(String),
    #[error("point: {0}")]
    Point(#[from] GeoError),
    #[error("covariates: {0}")]
    Covariates(#[from] CovariateError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Index-aligned points, targets, anchors and covariate rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<GeoPoint>,
    targets: Vec<f64>,
    anchor: Vec<f64>,
    covariates: Vec<CovariateRow>,
    by_id: HashMap<String, usize>,
}

impl Dataset {
    /// `covariates` may be empty, meaning no location has covariates.
    pub fn new(
        points: Vec<GeoPoint>,
        targets: Vec<f64>,
        anchor: Vec<f64>,
        covariates: Vec<CovariateRow>,
    ) -> Result<Self, DatasetError> {
        let covariates = if covariates.is_empty() { vec![CovariateRow::new(); points.len()] } else { covariates };
        if points.len() != targets.len() || points.len() != anchor.len() || points.len() != covariates.len() {
            return Err(DatasetError::Misaligned {
                points: points.len(),
                targets: targets.len(),
                anchor: anchor.len(),
                covariates: covariates.len(),
            });
        }
        let mut by_id = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if by_id.insert(p.id().to_string(), i).is_some() {
                return Err(DatasetError::DuplicateId(p.id().to_string()));
            }
        }
        Ok(Self { points, targets, anchor, covariates, by_id })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &GeoPoint {
        &self.points[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn covariates(&self, i: usize) -> &CovariateRow {
        &self.covariates[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn has_covariates(&self) -> bool {
        self.covariates.iter().any(|r| !r.is_empty())
    }

    /// Replaces covariate rows by id. Ids without a row keep an empty row.
    pub fn with_covariates(mut self, rows: Vec<(String, CovariateRow)>) -> Result<Self, DatasetError> {
        for (id, row) in rows {
            let i = self.index_of(&id).ok_or(DatasetError::UnknownCovariateId(id))?;
            self.covariates[i] = row;
        }
        Ok(self)
    }

    /// SHA-256 over a canonical rendering of every field, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for i in 0..self.len() {
            let p = &self.points[i];
            h.update(p.id().as_bytes());
            h.update([0]);
            for v in [p.lat(), p.lon(), self.targets[i], self.anchor[i]] {
                h.update(v.to_bits().to_le_bytes());
            }
            for (c, v) in self.covariates[i].iter() {
                h.update([c.number()]);
                h.update(v.to_bits().to_le_bytes());
            }
            h.update([0xff]);
        }
        hex::encode(h.finalize())
    }

    /// Reads `id,lat,lon,target,anchor[,bio1..bio19]`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &'static str| headers.iter().position(|h| h == name).ok_or(DatasetError::MissingColumn(name));
        let (id_c, lat_c, lon_c, target_c, anchor_c) =
            (col("id")?, col("lat")?, col("lon")?, col("target")?, col("anchor")?);
        let mut bio_cols = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            if ["id", "lat", "lon", "target", "anchor"].contains(&h) {
                continue;
            }
            let code = h.parse::<CovariateCode>().map_err(|_| DatasetError::UnknownColumn(h.to_string()))?;
            bio_cols.push((i, code));
        }

        let (mut points, mut targets, mut anchor, mut covs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = n + 1;
            let num = |c: usize, name: &str| -> Result<f64, DatasetError> {
                let cell = rec.get(c).unwrap_or_default();
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DatasetError::Row {
                    row,
                    message: format!("column {name}: {cell:?} is not a finite number"),
                })
            };
            let id = rec.get(id_c).unwrap_or_default();
            let point = GeoPoint::new(id, num(lat_c, "lat")?, num(lon_c, "lon")?)
                .map_err(|e| DatasetError::Row { row, message: e.to_string() })?;
            points.push(point);
            targets.push(num(target_c, "target")?);
            anchor.push(num(anchor_c, "anchor")?);
            covs.push(covariates::parse_row(&rec, &bio_cols, row)?);
        }
        if points.is_empty() {
            return Err(DatasetError::Empty);
        }
        Dataset::new(points, targets, anchor, covs)
    }

    /// Loads a dataset file and, optionally, a separate covariate file merged by id.
    pub fn load(path: &Path, covariates: Option<&Path>) -> Result<Self, DatasetError> {
        let ds = Self::from_csv(File::open(path)?)?;
        match covariates {
            Some(cp) => {
                let rows = covariates::load_covariates(File::open(cp)?)?;
                ds.with_covariates(rows)
            }
            None => Ok(ds),
        }
    }

    /// Writes the `id,lat,lon,target,anchor` columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "lat", "lon", "target", "anchor"])?;
        for (i, p) in self.points.iter().enumerate() {
            w.write_record([
                p.id().to_string(),
                p.lat().to_string(),
                p.lon().to_string(),
                self.targets[i].to_string(),
                self.anchor[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn covariate_rows(&self) -> Vec<(String, CovariateRow)> {
        self.points.iter().zip(&self.covariates).map(|(p, r)| (p.id().to_string(), r.clone())).collect()
    }
}
