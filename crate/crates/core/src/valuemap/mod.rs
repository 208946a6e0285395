//! Value maps: per-value-id centroids, Euclidean distances between them,
//! 2D projections for plotting and value-transfer trajectories.
//!
//! Distances are always taken between full-dimensional centroids. Projection
//! only feeds the exported map.

mod export;
mod pca;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use export::{convex_hull, render_svg, write_map, MapSidecar};
pub use pca::Pca;

use crate::corpus::ValueId;
use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::evalharness::EvalItem;

/// Mean embedding of each value id. Centroids are not re-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable {
    dim: usize,
    centroids: BTreeMap<ValueId, Vec<f64>>,
    counts: BTreeMap<ValueId, usize>,
}

impl CentroidTable {
    /// Centroids of arbitrary labelled vectors, summed in input order.
    pub fn from_points<'a, I>(points: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a ValueId, &'a [f64])>,
    {
        let mut sums: BTreeMap<ValueId, (Vec<f64>, usize)> = BTreeMap::new();
        let mut dim = None;
        for (label, v) in points {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::Dimension(format!(
                        "centroid inputs have dimensions {d} and {}",
                        v.len()
                    )))
                }
                _ => {}
            }
            let entry = sums
                .entry(label.clone())
                .or_insert_with(|| (vec![0.0; v.len()], 0));
            entry.0.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            entry.1 += 1;
        }
        let mut centroids = BTreeMap::new();
        let mut counts = BTreeMap::new();
        for (label, (sum, n)) in sums {
            centroids.insert(
                label.clone(),
                sum.into_iter().map(|s| s / n as f64).collect(),
            );
            counts.insert(label, n);
        }
        Ok(CentroidTable {
            dim: dim.unwrap_or(0),
            centroids,
            counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn value_ids(&self) -> impl Iterator<Item = &ValueId> {
        self.centroids.keys()
    }

    pub fn count(&self, id: &ValueId) -> usize {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<ValueId, usize> {
        &self.counts
    }

    /// The centroid of `id`; `EmptyGroup` when no item carried that id.
    pub fn centroid(&self, id: &ValueId) -> Result<&[f64]> {
        self.centroids
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::EmptyGroup(id.to_string()))
    }
}

pub fn compute_centroids(items: &[EvalItem]) -> Result<CentroidTable> {
    CentroidTable::from_points(
        items
            .iter()
            .map(|it| (&it.label, it.embedding.values.as_slice())),
    )
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn lookup<'t>(table: &'t CentroidTable, id: &ValueId) -> Result<&'t [f64]> {
    table
        .centroids
        .get(id)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::UnknownValueId(id.to_string()))
}

/// Euclidean distance between two centroids.
pub fn value_distance(table: &CentroidTable, a: &ValueId, b: &ValueId) -> Result<f64> {
    let (ca, cb) = (lookup(table, a)?, lookup(table, b)?);
    // Summing over (a, b) in a fixed order keeps d(a, b) == d(b, a) exactly.
    Ok(if a <= b {
        euclidean(ca, cb)
    } else {
        euclidean(cb, ca)
    })
}

/// Fits on N×d data and returns N 2D coordinates.
pub trait Projector {
    fn name(&self) -> &str;
    fn fit_transform(&self, data: &[&[f64]], seed: u64) -> Result<Vec<[f64; 2]>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub qa_id: String,
    pub value_id: ValueId,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub qa_id: String,
    pub value_id: ValueId,
    pub x: f64,
    pub y: f64,
}

pub fn project_2d(
    points: &[MapPoint],
    projector: &dyn Projector,
    seed: u64,
) -> Result<Vec<ProjectedPoint>> {
    let data: Vec<&[f64]> = points
        .iter()
        .map(|p| p.embedding.values.as_slice())
        .collect();
    let xy = projector.fit_transform(&data, seed)?;
    if xy.len() != points.len() {
        return Err(Error::Dimension(format!(
            "projector returned {} points for {}",
            xy.len(),
            points.len()
        )));
    }
    points
        .iter()
        .zip(xy)
        .map(|(p, [x, y])| {
            if !(x.is_finite() && y.is_finite()) {
                return Err(Error::DegenerateData(format!(
                    "non-finite projection for {}",
                    p.qa_id
                )));
            }
            Ok(ProjectedPoint {
                qa_id: p.qa_id.clone(),
                value_id: p.value_id.clone(),
                x,
                y,
            })
        })
        .collect()
}

/// Embeddings of one training checkpoint of the subject model.
#[derive(Debug, Clone)]
pub struct CheckpointEmbeddings {
    pub step: usize,
    pub items: Vec<EvalItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub d_source: f64,
    pub d_target: f64,
}

/// Distance of the subject's centroid to fixed source and target centroids
/// at every checkpoint. The reference table must not be computed from the
/// moving subject.
pub fn transfer_trajectory(
    checkpoints: &[CheckpointEmbeddings],
    subject: &ValueId,
    reference: &CentroidTable,
    source_ref: &ValueId,
    target_ref: &ValueId,
) -> Result<Vec<TrajectoryPoint>> {
    let source = lookup(reference, source_ref)?;
    let target = lookup(reference, target_ref)?;
    checkpoints
        .iter()
        .map(|ck| {
            let members = ck
                .items
                .iter()
                .filter(|it| &it.label == subject)
                .map(|it| (&it.label, it.embedding.values.as_slice()));
            let table = CentroidTable::from_points(members)?;
            let c = lookup(&table, subject)?;
            if c.len() != source.len() {
                return Err(Error::Dimension(format!(
                    "checkpoint {} has dimension {} but references have {}",
                    ck.step,
                    c.len(),
                    source.len()
                )));
            }
            Ok(TrajectoryPoint {
                step: ck.step,
                d_source: euclidean(c, source),
                d_target: euclidean(c, target),
            })
        })
        .collect()
}
