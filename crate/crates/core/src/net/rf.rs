use serde::Serialize;

use crate::error::{Error, Result};
use crate::net::spec::NetworkSpec;

/// Input-space footprint of a layer's output positions along one axis.
///
/// Output index `i` depends on input pixels
/// `[i * stride + offset, i * stride + offset + size - 1]`; the interval is
/// not clamped to the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RFGeometry {
    pub size: usize,
    pub stride: usize,
    pub offset: i64,
}

impl RFGeometry {
    pub const IDENTITY: RFGeometry = RFGeometry {
        size: 1,
        stride: 1,
        offset: 0,
    };

    pub fn interval(&self, i: usize) -> (i64, i64) {
        let start = i as i64 * self.stride as i64 + self.offset;
        (start, start + self.size as i64 - 1)
    }

    /// Interval clamped to `[0, side - 1]`.
    pub fn clamped(&self, i: usize, side: usize) -> (usize, usize) {
        let (a, b) = self.interval(i);
        let hi = side as i64 - 1;
        (a.clamp(0, hi) as usize, b.clamp(0, hi) as usize)
    }

    /// Centre of the (unclamped) interval, in input pixels.
    pub fn center(&self, i: usize) -> f64 {
        let (a, b) = self.interval(i);
        (a + b) as f64 / 2.0
    }

    /// Compose with a layer mapping its output index `j` to its input
    /// interval `[j*stride - padding, j*stride - padding + kernel - 1]`.
    pub fn then(self, kernel: usize, stride: usize, padding: usize) -> RFGeometry {
        RFGeometry {
            size: (kernel - 1) * self.stride + self.size,
            stride: self.stride * stride,
            offset: self.offset - padding as i64 * self.stride as i64,
        }
    }
}

/// Theoretical receptive field of `layer`'s output positions.
pub fn theoretical_rf(spec: &NetworkSpec, layer: &str) -> Result<RFGeometry> {
    let idx = spec.layer_index(layer)?;
    let mut geom = RFGeometry::IDENTITY;
    for l in &spec.layers()[..=idx] {
        let (k, s, p) = l
            .op
            .window()
            .ok_or_else(|| Error::UnsupportedLayer(l.name.clone()))?;
        geom = geom.then(k, s, p);
    }
    Ok(geom)
}
