//! Foreground scoring of non-empty voxels.
//!
//! A voxel is foreground when its centroid lies in a ground-truth box. The
//! head scores each voxel with `sigmoid(MLP(f))`, is supervised with focal
//! loss, and scales each voxel feature by its score.

use std::fmt::Write as _;

use crate::dataset::Box3D;
use crate::error::{Error, Result};
use crate::nn::{focal_loss, sigmoid, FocalParams, Mlp, Parameterized, WeightStore};
use crate::par;
use crate::rng::SeededRng;
use crate::voxel::{CentroidMap, Coord, SparseTensor};

/// Label 1 iff the centroid is inside any box (faces included).
pub fn assign_foreground_labels(centroids: &CentroidMap, gt_boxes: &[Box3D]) -> Vec<bool> {
    centroids
        .0
        .iter()
        .map(|c| gt_boxes.iter().any(|b| b.contains(c.position)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticHead {
    pub mlp: Mlp,
}

impl SemanticHead {
    /// Two hidden layers of width `c`, then a single logit.
    pub fn seeded(c: usize, seed: u64, prefix: &str) -> Result<Self> {
        let mut rng = SeededRng::for_param(seed, prefix);
        Ok(Self {
            mlp: Mlp::seeded(&[c, c, c, 1], &mut rng)?,
        })
    }

    pub fn forward(&self, x: &SparseTensor) -> Result<SegOutput> {
        let scores = score_voxels(x, &self.mlp)?;
        let reweighted = reweight(x.features(), x.channels(), &scores)?;
        Ok(SegOutput {
            scores,
            reweighted: x.with_features(reweighted, x.channels())?,
        })
    }
}

impl Parameterized for SemanticHead {
    fn export(&self, prefix: &str, store: &mut WeightStore) {
        self.mlp.export(&format!("{prefix}.mlp"), store);
    }

    fn import(&mut self, prefix: &str, store: &WeightStore) -> Result<()> {
        self.mlp.import(&format!("{prefix}.mlp"), store)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegOutput {
    pub scores: Vec<f64>,
    pub reweighted: SparseTensor,
}

pub fn score_voxels(x: &SparseTensor, mlp: &Mlp) -> Result<Vec<f64>> {
    if mlp.c_out() != 1 {
        return Err(Error::dim("segmentation mlp output", 1, mlp.c_out()));
    }
    if mlp.c_in() != x.channels() {
        return Err(Error::dim(
            "segmentation mlp input",
            x.channels(),
            mlp.c_in(),
        ));
    }
    par::map_range(x.len(), |k| {
        mlp.forward(x.feature(k)).map(|l| sigmoid(l[0]))
    })
    .into_iter()
    .collect()
}

/// Row `k` of `features` scaled by `scores[k]`.
pub fn reweight(features: &[f64], channels: usize, scores: &[f64]) -> Result<Vec<f64>> {
    if features.len() != scores.len() * channels {
        return Err(Error::dim(
            "reweight rows",
            scores.len() * channels,
            features.len(),
        ));
    }
    Ok(features
        .chunks_exact(channels.max(1))
        .zip(scores)
        .flat_map(|(row, &s)| row.iter().map(move |v| v * s))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegLoss {
    pub value: f64,
    /// Set when there were no voxels to average over.
    pub empty: bool,
}

/// Mean focal loss. Terms are summed in ascending order so the result does
/// not depend on voxel order.
pub fn segmentation_loss(scores: &[f64], labels: &[bool], params: FocalParams) -> Result<SegLoss> {
    if scores.len() != labels.len() {
        return Err(Error::dim(
            "segmentation labels",
            scores.len(),
            labels.len(),
        ));
    }
    if scores.is_empty() {
        log::warn!("segmentation loss over zero voxels is defined as 0");
        return Ok(SegLoss {
            value: 0.0,
            empty: true,
        });
    }
    let mut terms: Vec<f64> = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| focal_loss(p, y, params))
        .collect();
    terms.sort_by(f64::total_cmp);
    Ok(SegLoss {
        value: terms.iter().sum::<f64>() / terms.len() as f64,
        empty: false,
    })
}

/// `z,y,x,score,label` rows; label is empty when unknown.
pub fn scores_csv(coords: &[Coord], scores: &[f64], labels: Option<&[bool]>) -> String {
    let mut out = String::from("z,y,x,score,label\n");
    for (i, (c, s)) in coords.iter().zip(scores).enumerate() {
        let label = labels.map(|l| if l[i] { "1" } else { "0" }).unwrap_or("");
        let _ = writeln!(out, "{},{},{},{},{}", c[0], c[1], c[2], s, label);
    }
    out
}
