//! Nearest-neighbour queries over a dataset's points.
//!
//! A linear scan per query. At a few thousand points that is fast enough, and
//! the ordering is exactly that of a brute-force haversine sort with ties
//! broken by insertion order.

use std::cmp::Ordering;
use std::collections::HashMap;

use thiserror::Error;

use crate::dataset::Dataset;
use crate::geo::haversine_deg;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("cannot index an empty dataset")]
    Empty,
    #[error("unknown point id {0:?}")]
    UnknownId(String),
}

/// A neighbour returned by a query.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub id: String,
    pub distance_km: f64,
}

#[derive(Debug, Clone)]
pub struct SpatialIndex {
    ids: Vec<String>,
    coords: Vec<(f64, f64)>,
    by_id: HashMap<String, usize>,
}

impl SpatialIndex {
    pub fn build(dataset: &Dataset) -> Result<Self, IndexError> {
        if dataset.is_empty() {
            return Err(IndexError::Empty);
        }
        let ids: Vec<String> = dataset.points().iter().map(|p| p.id().to_string()).collect();
        let coords = dataset.points().iter().map(|p| (p.lat(), p.lon())).collect();
        let by_id = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Self { ids, coords, by_id })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn coords(&self, i: usize) -> (f64, f64) {
        self.coords[i]
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn distance_km(&self, a: usize, b: usize) -> f64 {
        let (la, oa) = self.coords[a];
        let (lb, ob) = self.coords[b];
        haversine_deg(la, oa, lb, ob)
    }

    /// The `k` closest other points, nearest first.
    pub fn nearest_k(&self, target: &str, k: usize) -> Result<Vec<Neighbor>, IndexError> {
        let t = self.position(target).ok_or_else(|| IndexError::UnknownId(target.to_string()))?;
        Ok(self.nearest_k_at(t, k))
    }

    pub fn nearest_k_at(&self, target: usize, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.len() - 1);
        if k == 0 {
            return Vec::new();
        }
        let (tl, to) = self.coords[target];
        let mut scored: Vec<(f64, usize)> = self
            .coords
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target)
            .map(|(i, &(la, lo))| (haversine_deg(tl, to, la, lo), i))
            .collect();
        let cmp =
            |a: &(f64, usize), b: &(f64, usize)| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        scored.into_iter().map(|(d, i)| Neighbor { index: i, id: self.ids[i].clone(), distance_km: d }).collect()
    }
}
