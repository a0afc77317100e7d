//! Synthetic datasets for desk runs: uniform random locations, targets from
//! an analytic field, a population-density-like anchor, and bioclimatic
//! columns that are simple functions of latitude.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::covariates::{CovariateCode, CovariateRow};
use crate::dataset::{Dataset, DatasetError};
use crate::field::FieldSpec;
use crate::geo::GeoPoint;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need at least 2 points, got {0}")]
    TooFew(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// The field used for the anchor column.
pub const ANCHOR_FIELD: FieldSpec = FieldSpec::Density;

fn round_to(v: f64, decimals: i32) -> f64 {
    let m = 10f64.powi(decimals);
    (v * m).round() / m
}

/// Nineteen bioclimatic values at a latitude, in registry units.
pub fn synthetic_bioclim(lat: f64) -> CovariateRow {
    let a = lat.abs() / 90.0;
    let c = lat.to_radians().cos();
    let t = 30.0 * c - 5.0;
    let p = 2500.0 * c.powi(4) + 200.0;
    let values = [
        t,
        8.0 + 6.0 * a,
        80.0 - 50.0 * a,
        100.0 + 1200.0 * a,
        t + 8.0 + 10.0 * a,
        t - 6.0 - 25.0 * a,
        14.0 + 35.0 * a,
        t + 3.0 - 6.0 * a,
        t - 2.0 + 4.0 * a,
        t + 3.0 + 12.0 * a,
        t - 3.0 - 12.0 * a,
        p,
        p * (0.12 + 0.1 * a),
        p * (0.05 - 0.04 * a),
        30.0 + 60.0 * a,
        p * (0.3 + 0.15 * a),
        p * (0.15 - 0.1 * a),
        p * (0.28 - 0.05 * a),
        p * (0.2 - 0.08 * a),
    ];
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| (CovariateCode::new(i as u8 + 1).expect("1..=19"), round_to(v, 2)))
        .collect()
}

/// `n` points drawn uniformly in latitude and longitude, coordinates rounded
/// to four decimals. Targets are `field.raw` at the rounded coordinates.
pub fn synth_data(n: usize, seed: u64, field: &FieldSpec) -> Result<Dataset, SynthError> {
    if n < 2 {
        return Err(SynthError::TooFew(n));
    }
    let width = (n - 1).to_string().len().max(4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut anchor = Vec::with_capacity(n);
    let mut covs = Vec::with_capacity(n);
    for i in 0..n {
        let lat = round_to(rng.random_range(-90.0..=90.0), 4);
        let lon = round_to(rng.random_range(-180.0..=180.0), 4);
        points.push(GeoPoint::new(format!("p{i:0width$}"), lat, lon).expect("coordinates in range"));
        targets.push(field.raw(lat, lon));
        anchor.push(ANCHOR_FIELD.raw(lat, lon));
        covs.push(synthetic_bioclim(lat));
    }
    Ok(Dataset::new(points, targets, anchor, covs)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_data(50, 9, &FieldSpec::Wave).unwrap();
        let b = synth_data(50, 9, &FieldSpec::Wave).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.fingerprint(), synth_data(50, 10, &FieldSpec::Wave).unwrap().fingerprint());
    }

    #[test]
    fn targets_follow_the_field() {
        let d = synth_data(100, 1, &FieldSpec::LatLinear).unwrap();
        for (p, t) in d.points().iter().zip(d.targets()) {
            assert_eq!(*t, p.lat());
        }
        for (p, a) in d.points().iter().zip(d.anchor()) {
            assert_eq!(*a, FieldSpec::Density.raw(p.lat(), p.lon()));
        }
    }

    #[test]
    fn ids_sort_in_index_order() {
        let d = synth_data(12_345, 0, &FieldSpec::Wave).unwrap();
        assert!(d.points().windows(2).all(|w| w[0].id() < w[1].id()));
        assert_eq!(d.point(0).id(), "p00000");
    }

    #[test]
    fn rejects_tiny_n() {
        assert!(matches!(synth_data(1, 0, &FieldSpec::Wave), Err(SynthError::TooFew(1))));
    }

    #[test]
    fn bioclim_is_complete_and_finite() {
        for lat in [-90.0, -45.5, 0.0, 12.3, 90.0] {
            let row = synthetic_bioclim(lat);
            assert_eq!(row.len(), 19);
            assert!(row.iter().all(|(_, v)| v.is_finite()));
        }
    }
}
