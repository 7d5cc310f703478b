use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::net::forward::{ForwardOptions, Network};
use crate::net::spec::Unit;
use crate::tensor::Tensor;

/// How a unit's feature map is reduced to one score per image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    /// Maximum over spatial positions.
    #[default]
    Max,
    /// Sum over spatial positions.
    Sum,
}

impl RankMode {
    pub fn reduce(self, plane: &[f32]) -> f32 {
        match self {
            RankMode::Max => plane.iter().cloned().fold(f32::NEG_INFINITY, f32::max),
            RankMode::Sum => plane.iter().sum(),
        }
    }
}

impl std::str::FromStr for RankMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(RankMode::Max),
            "sum" => Ok(RankMode::Sum),
            _ => Err(crate::error::Error::InvalidArgument(format!(
                "rank mode `{s}` (expected max or sum)"
            ))),
        }
    }
}

/// Descending by score, then ascending by id.
pub fn sort_ranking(scores: &mut [(usize, f32)]) {
    scores.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
}

const BATCH: usize = 16;

/// Score every image for `unit` and return the top `k` as `(id, score)`.
pub fn rank_images(
    net: &Network,
    unit: &Unit,
    dataset: &[(usize, Tensor)],
    mode: RankMode,
    k: usize,
) -> Result<Vec<(usize, f32)>> {
    let mut scores = unit_scores(net, unit, dataset, mode)?;
    sort_ranking(&mut scores);
    scores.truncate(k.max(1));
    Ok(scores)
}

/// Unsorted `(id, score)` for every image.
pub fn unit_scores(
    net: &Network,
    unit: &Unit,
    dataset: &[(usize, Tensor)],
    mode: RankMode,
) -> Result<Vec<(usize, f32)>> {
    net.spec().check_unit(unit)?;
    let opts = ForwardOptions {
        keep_pre_activations: false,
        stop_after: Some(unit.layer.clone()),
    };
    let mut scores = Vec::with_capacity(dataset.len());
    for chunk in dataset.chunks(BATCH) {
        let tensors: Vec<Tensor> = chunk.iter().map(|(_, t)| t.clone()).collect();
        let trace = net.forward_with(&Tensor::stack(&tensors)?, &opts)?;
        for (i, (id, _)) in chunk.iter().enumerate() {
            scores.push((*id, mode.reduce(&trace.feature_map(unit, i)?)));
        }
    }
    Ok(scores)
}
