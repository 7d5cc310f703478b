//! Empirical receptive fields by dense occlusion.
//!
//! For each top-ranked image, a small occluder is slid over a dense grid and
//! the drop of the unit's activation at its original argmax position is
//! recorded. The per-image discrepancy maps are splatted back to pixels,
//! recentred on the argmax's projected centre and averaged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::forward::{ForwardOptions, Network};
use crate::net::rank::{rank_images, RankMode};
use crate::net::rf::theoretical_rf;
use crate::net::spec::{NetworkSpec, Unit};
use crate::net::weights::WeightStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_PATCH: usize = 11;
pub const DEFAULT_STRIDE: usize = 3;
pub const DEFAULT_K: usize = 25;

/// Dense grid of occluder top-left corners, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccluderGrid {
    pub side: usize,
    pub patch: usize,
    pub stride: usize,
    /// Number of positions along each axis.
    pub cells: usize,
    pub positions: Vec<(usize, usize)>,
}

impl OccluderGrid {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn occluder_grid(side: usize, patch: usize, stride: usize) -> Result<OccluderGrid> {
    if patch == 0 || patch > side {
        return Err(Error::InvalidArgument(format!(
            "occluder patch {patch} must be in 1..={side}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("occluder stride must be >= 1".into()));
    }
    let cells = (side - patch) / stride + 1;
    let positions = (0..cells)
        .flat_map(|gy| (0..cells).map(move |gx| (gx * stride, gy * stride)))
        .collect();
    Ok(OccluderGrid {
        side,
        patch,
        stride,
        cells,
        positions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FillMode {
    /// Independent uniform bytes per occluded pixel from the seeded stream.
    #[default]
    UniformRandom,
    /// The preprocessing mean, i.e. zero input.
    MeanGray,
}

impl std::str::FromStr for FillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-random" | "random" => Ok(FillMode::UniformRandom),
            "mean-gray" | "gray" => Ok(FillMode::MeanGray),
            _ => Err(Error::InvalidArgument(format!("fill mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancyMap {
    pub image_id: usize,
    pub unit: Unit,
    pub side: usize,
    pub patch: usize,
    pub stride: usize,
    pub cells: usize,
    /// One value per occluder position, row-major; all `>= 0`.
    pub values: Vec<f32>,
    /// Original spatial argmax of the unit, feature coordinates `(x, y)`.
    pub argmax_pos: (usize, usize),
    /// Unoccluded activation at `argmax_pos`.
    pub peak: f32,
}

impl DiscrepancyMap {
    pub fn to_pgm(&self) -> Vec<u8> {
        crate::image::float_map_to_pgm(self.cells, self.cells, &self.values)
    }
}

fn argmax(plane: &[f32], width: usize) -> ((usize, usize), f32) {
    let mut best = 0;
    for (i, &v) in plane.iter().enumerate() {
        if v > plane[best] {
            best = i;
        }
    }
    ((best % width, best / width), plane[best])
}

const OCCLUSION_BATCH: usize = 64;

/// Activation drop at the unit's original argmax for every occluder.
///
/// `image` is a preprocessed `3 x side x side` tensor.
pub fn discrepancy_map(
    net: &Network,
    image: &Tensor,
    image_id: usize,
    unit: &Unit,
    grid: &OccluderGrid,
    rng: &mut Rng,
    fill: FillMode,
) -> Result<DiscrepancyMap> {
    let spec = net.spec();
    spec.check_unit(unit)?;
    if !spec.is_spatial(&unit.layer)? {
        return Err(Error::UnsupportedLayer(unit.layer.clone()));
    }
    let side = spec.input.side;
    let channels = spec.input.channels;
    if image.shape() != [channels, side, side] {
        return Err(Error::Shape(format!(
            "image tensor {:?}, expected [{channels}, {side}, {side}]",
            image.shape()
        )));
    }
    if grid.side != side {
        return Err(Error::InvalidArgument(format!(
            "grid side {} does not match network input {side}",
            grid.side
        )));
    }
    let opts = ForwardOptions {
        keep_pre_activations: false,
        stop_after: Some(unit.layer.clone()),
    };
    let fmap_w = spec.output_shape(&unit.layer)?.width;
    let base = net.forward_with(&image.clone().reshape(vec![1, channels, side, side])?, &opts)?;
    let (argmax_pos, peak) = argmax(&base.feature_map(unit, 0)?, fmap_w);
    let target = argmax_pos.1 * fmap_w + argmax_pos.0;

    let plane = side * side;
    let mut values = Vec::with_capacity(grid.len());
    for chunk in grid.positions.chunks(OCCLUSION_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * channels * plane);
        for &(ox, oy) in chunk {
            let start = data.len();
            data.extend_from_slice(image.data());
            let occluded = &mut data[start..];
            for c in 0..channels {
                let mean = spec.mean.get(c).copied().unwrap_or(0.0);
                for y in oy..oy + grid.patch {
                    for x in ox..ox + grid.patch {
                        occluded[c * plane + y * side + x] = match fill {
                            FillMode::UniformRandom => rng.next_u8() as f32 - mean,
                            FillMode::MeanGray => 0.0,
                        };
                    }
                }
            }
        }
        let batch = Tensor::new(vec![chunk.len(), channels, side, side], data)?;
        let trace = net.forward_with(&batch, &opts)?;
        for i in 0..chunk.len() {
            let a = trace.feature_map(unit, i)?[target];
            values.push((peak - a).max(0.0));
        }
    }
    Ok(DiscrepancyMap {
        image_id,
        unit: unit.clone(),
        side,
        patch: grid.patch,
        stride: grid.stride,
        cells: grid.cells,
        values,
        argmax_pos,
        peak,
    })
}

/// Average of recentred, pixel-splatted discrepancy maps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalRF {
    pub unit: Unit,
    /// Canvas side, `2 * input_side - 1`; the centre is at `input_side - 1`.
    pub side: usize,
    pub canvas: Vec<f32>,
    pub k_used: usize,
}

impl EmpiricalRF {
    pub fn center(&self) -> usize {
        self.side / 2
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.canvas[y * self.side + x]
    }

    /// Position of the canvas maximum (first in row-major order).
    pub fn peak(&self) -> (usize, usize) {
        let ((x, y), _) = argmax(&self.canvas, self.side);
        (x, y)
    }

    pub fn blob_name(unit: &Unit) -> String {
        format!("rf/{}/{}", unit.layer, unit.channel)
    }

    pub fn insert_into(&self, store: &mut WeightStore) {
        store.insert(
            Self::blob_name(&self.unit),
            Tensor::from_raw(vec![self.side, self.side], self.canvas.clone()),
        );
    }

    pub fn from_store(store: &WeightStore, unit: &Unit) -> Result<Self> {
        let name = Self::blob_name(unit);
        let t = store
            .get(&name)
            .ok_or_else(|| Error::blob(&name, "missing"))?;
        match t.shape() {
            [a, b] if a == b => Ok(EmpiricalRF {
                unit: unit.clone(),
                side: *a,
                canvas: t.data().to_vec(),
                k_used: 1,
            }),
            other => Err(Error::blob(&name, format!("expected square canvas, got {other:?}"))),
        }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        crate::image::float_map_to_pgm(self.side, self.side, &self.canvas)
    }
}

/// Spread occluder values over their footprints, normalised by the number
/// of occluders covering each pixel.
pub fn splat(map: &DiscrepancyMap) -> Vec<f32> {
    let side = map.side;
    let mut acc = vec![0f64; side * side];
    let mut cover = vec![0u32; side * side];
    for (i, &v) in map.values.iter().enumerate() {
        let (ox, oy) = ((i % map.cells) * map.stride, (i / map.cells) * map.stride);
        for y in oy..oy + map.patch {
            for x in ox..ox + map.patch {
                acc[y * side + x] += v as f64;
                cover[y * side + x] += 1;
            }
        }
    }
    acc.iter()
        .zip(&cover)
        .map(|(&a, &c)| if c == 0 { 0.0 } else { (a / c as f64) as f32 })
        .collect()
}

pub fn empirical_rf(maps: &[DiscrepancyMap], spec: &NetworkSpec, layer: &str) -> Result<EmpiricalRF> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("no discrepancy maps to average".into()))?;
    if let Some(m) = maps
        .iter()
        .find(|m| m.unit.layer != layer || m.side != first.side)
    {
        return Err(Error::InvalidArgument(format!(
            "map for image {} is from {} at side {}, expected layer {layer} at side {}",
            m.image_id, m.unit, m.side, first.side
        )));
    }
    let geom = theoretical_rf(spec, layer)?;
    let side = first.side;
    let canvas_side = 2 * side - 1;
    let mid = side as i64 - 1;
    let mut canvas = vec![0f64; canvas_side * canvas_side];
    for map in maps {
        let pixels = splat(map);
        let (ax, ay) = map.argmax_pos;
        let cx = geom.center(ax).floor() as i64;
        let cy = geom.center(ay).floor() as i64;
        for y in 0..side {
            let ty = y as i64 - cy + mid;
            if !(0..canvas_side as i64).contains(&ty) {
                continue;
            }
            for x in 0..side {
                let tx = x as i64 - cx + mid;
                if !(0..canvas_side as i64).contains(&tx) {
                    continue;
                }
                canvas[ty as usize * canvas_side + tx as usize] += pixels[y * side + x] as f64;
            }
        }
    }
    let k = maps.len();
    Ok(EmpiricalRF {
        unit: first.unit.clone(),
        side: canvas_side,
        canvas: canvas.iter().map(|&v| (v / k as f64) as f32).collect(),
        k_used: k,
    })
}

/// Side of the square with the same area as the set of canvas pixels at or
/// above `theta * max`.
pub fn rf_size(canvas: &[f32], theta: f64) -> Result<f64> {
    let max = canvas.iter().cloned().fold(0f32, f32::max);
    if !(max > 0.0) {
        return Err(Error::Undefined(
            "receptive-field size undefined for an all-zero canvas".into(),
        ));
    }
    let cut = theta * max as f64;
    let count = canvas.iter().filter(|&&v| v as f64 >= cut).count();
    Ok((count as f64).sqrt())
}

/// Population mean and standard deviation of per-unit sizes in a layer.
pub fn size_stats(sizes: &[f64]) -> Option<(f64, f64)> {
    if sizes.is_empty() {
        return None;
    }
    let n = sizes.len() as f64;
    let mean = sizes.iter().sum::<f64>() / n;
    let var = sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RFEstimationConfig {
    /// Top images per unit.
    pub k: usize,
    pub patch: usize,
    pub stride: usize,
    pub rank_mode: RankMode,
    pub fill: FillMode,
    pub seed: u64,
}

impl Default for RFEstimationConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            patch: DEFAULT_PATCH,
            stride: DEFAULT_STRIDE,
            rank_mode: RankMode::Max,
            fill: FillMode::UniformRandom,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct UnitEstimate {
    pub rf: EmpiricalRF,
    pub maps: Vec<DiscrepancyMap>,
    pub ranking: Vec<(usize, f32)>,
}

/// Rank the dataset, build discrepancy maps for the top K and average them.
/// The seed stream is forked once per ranked image, in rank order.
pub fn estimate_unit(
    net: &Network,
    unit: &Unit,
    dataset: &[(usize, Tensor)],
    config: &RFEstimationConfig,
) -> Result<UnitEstimate> {
    if config.k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    let grid = occluder_grid(net.side(), config.patch, config.stride)?;
    let ranking = rank_images(net, unit, dataset, config.rank_mode, config.k)?;
    let mut rng = Rng::new(config.seed);
    let mut maps = Vec::with_capacity(ranking.len());
    for &(id, _) in &ranking {
        let tensor = &dataset
            .iter()
            .find(|(i, _)| *i == id)
            .expect("ranked id comes from the dataset")
            .1;
        let mut local = rng.fork();
        maps.push(discrepancy_map(net, tensor, id, unit, &grid, &mut local, config.fill)?);
    }
    let rf = empirical_rf(&maps, net.spec(), &unit.layer)?;
    Ok(UnitEstimate { rf, maps, ranking })
}
