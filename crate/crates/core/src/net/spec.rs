use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PLACES_ALEXNET: &str = include_str!("../../assets/places-alexnet.json");

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerOp {
    Conv {
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        channels_out: usize,
        #[serde(default = "one")]
        groups: usize,
        /// Fused rectification; the pre-activation can be kept on request.
        #[serde(default)]
        relu: bool,
    },
    #[serde(alias = "pool")]
    Maxpool {
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    Lrn {
        n: usize,
        alpha: f32,
        beta: f32,
        k: f32,
    },
    Fc {
        channels_out: usize,
        #[serde(default)]
        relu: bool,
    },
    Softmax,
}

impl LayerOp {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerOp::Conv { .. } => "conv",
            LayerOp::Maxpool { .. } => "maxpool",
            LayerOp::Relu => "relu",
            LayerOp::Lrn { .. } => "lrn",
            LayerOp::Fc { .. } => "fc",
            LayerOp::Softmax => "softmax",
        }
    }

    /// Kernel, stride and padding of the spatial interval map; `None` for
    /// layers that mix every position.
    pub fn window(&self) -> Option<(usize, usize, usize)> {
        match *self {
            LayerOp::Conv {
                kernel,
                stride,
                padding,
                ..
            }
            | LayerOp::Maxpool {
                kernel,
                stride,
                padding,
            } => Some((kernel, stride, padding)),
            LayerOp::Relu | LayerOp::Lrn { .. } => Some((1, 1, 0)),
            LayerOp::Fc { .. } | LayerOp::Softmax => None,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerOp::Conv { .. } | LayerOp::Fc { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub op: LayerOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub channels: usize,
    pub side: usize,
}

/// Feature-map geometry of one layer's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpecDocument {
    #[serde(default)]
    name: Option<String>,
    input: InputSpec,
    #[serde(default)]
    mean: Option<[f32; 3]>,
    #[serde(default)]
    labels: Vec<String>,
    layers: Vec<LayerSpec>,
}

/// Validated feedforward architecture with computed output shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub input: InputSpec,
    /// Per-channel mean subtracted during preprocessing.
    pub mean: [f32; 3],
    /// Class names for the final layer; may be empty.
    pub labels: Vec<String>,
    layers: Vec<LayerSpec>,
    shapes: Vec<FeatureShape>,
}

fn window_output(
    layer: &str,
    size: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if kernel == 0 {
        return Err(Error::validation(layer, "kernel must be >= 1"));
    }
    if stride == 0 {
        return Err(Error::validation(layer, "stride must be >= 1"));
    }
    let padded = size + 2 * padding;
    if padded < kernel {
        return Err(Error::validation(
            layer,
            format!("kernel {kernel} exceeds padded input {padded}"),
        ));
    }
    if (padded - kernel) % stride != 0 {
        return Err(Error::validation(
            layer,
            format!(
                "non-integer output size ({padded} - {kernel}) / {stride} + 1 for input {size}"
            ),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

impl NetworkSpec {
    pub fn new(
        name: impl Into<String>,
        input: InputSpec,
        layers: Vec<LayerSpec>,
    ) -> Result<Self> {
        Self::build(name.into(), input, [0.0; 3], Vec::new(), layers)
    }

    fn build(
        name: String,
        input: InputSpec,
        mean: [f32; 3],
        labels: Vec<String>,
        layers: Vec<LayerSpec>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::validation("<none>", "layer list is empty"));
        }
        if input.channels == 0 || input.side == 0 {
            return Err(Error::validation("<input>", "input channels and side must be >= 1"));
        }
        let mut seen = HashSet::new();
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = FeatureShape {
            channels: input.channels,
            height: input.side,
            width: input.side,
        };
        for layer in &layers {
            let name = layer.name.as_str();
            if name.is_empty() {
                return Err(Error::validation("<unnamed>", "layer name is empty"));
            }
            if !seen.insert(name) {
                return Err(Error::validation(name, "duplicate layer name"));
            }
            cur = match layer.op {
                LayerOp::Conv {
                    kernel,
                    stride,
                    padding,
                    channels_out,
                    groups,
                    ..
                } => {
                    if channels_out == 0 {
                        return Err(Error::validation(name, "channels_out must be >= 1"));
                    }
                    if groups == 0 || cur.channels % groups != 0 || channels_out % groups != 0 {
                        return Err(Error::validation(
                            name,
                            format!(
                                "groups {groups} must divide input channels {} and output channels {channels_out}",
                                cur.channels
                            ),
                        ));
                    }
                    FeatureShape {
                        channels: channels_out,
                        height: window_output(name, cur.height, kernel, stride, padding)?,
                        width: window_output(name, cur.width, kernel, stride, padding)?,
                    }
                }
                LayerOp::Maxpool {
                    kernel,
                    stride,
                    padding,
                } => {
                    if padding >= kernel {
                        return Err(Error::validation(name, "pool padding must be < kernel"));
                    }
                    FeatureShape {
                        channels: cur.channels,
                        height: window_output(name, cur.height, kernel, stride, padding)?,
                        width: window_output(name, cur.width, kernel, stride, padding)?,
                    }
                }
                LayerOp::Relu | LayerOp::Softmax => cur,
                LayerOp::Lrn { n, alpha, beta, k } => {
                    if n == 0 || !alpha.is_finite() || !beta.is_finite() || !(k > 0.0) {
                        return Err(Error::validation(name, "lrn needs n >= 1 and k > 0"));
                    }
                    cur
                }
                LayerOp::Fc { channels_out, .. } => {
                    if channels_out == 0 {
                        return Err(Error::validation(name, "channels_out must be >= 1"));
                    }
                    FeatureShape {
                        channels: channels_out,
                        height: 1,
                        width: 1,
                    }
                }
            };
            shapes.push(cur);
        }
        Ok(Self {
            name,
            input,
            mean,
            labels,
            layers,
            shapes,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: SpecDocument = serde_json::from_str(text)?;
        Self::build(
            doc.name.unwrap_or_else(|| "unnamed".into()),
            doc.input,
            doc.mean.unwrap_or([0.0; 3]),
            doc.labels,
            doc.layers,
        )
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        let doc = SpecDocument {
            name: Some(self.name.clone()),
            input: self.input,
            mean: Some(self.mean),
            labels: self.labels.clone(),
            layers: self.layers.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("spec serializes")
    }

    /// The bundled AlexNet-style scene network. `classes` sets the width of
    /// the final classifier (205 for the scene variant, 1000 for objects).
    pub fn places_alexnet(classes: usize) -> Self {
        let mut doc: SpecDocument =
            serde_json::from_str(PLACES_ALEXNET).expect("bundled spec parses");
        for layer in &mut doc.layers {
            if layer.name == "fc8" {
                layer.op = LayerOp::Fc {
                    channels_out: classes,
                    relu: false,
                };
            }
        }
        Self::build(
            doc.name.unwrap_or_default(),
            doc.input,
            doc.mean.unwrap_or([0.0; 3]),
            doc.labels,
            doc.layers,
        )
        .expect("bundled spec validates")
    }

    pub fn bundled_json() -> &'static str {
        PLACES_ALEXNET
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn shapes(&self) -> &[FeatureShape] {
        &self.shapes
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn layer(&self, name: &str) -> Result<&LayerSpec> {
        Ok(&self.layers[self.layer_index(name)?])
    }

    pub fn output_shape(&self, name: &str) -> Result<FeatureShape> {
        Ok(self.shapes[self.layer_index(name)?])
    }

    /// Shape of the tensor feeding layer `index`.
    pub fn input_shape(&self, index: usize) -> FeatureShape {
        if index == 0 {
            FeatureShape {
                channels: self.input.channels,
                height: self.input.side,
                width: self.input.side,
            }
        } else {
            self.shapes[index - 1]
        }
    }

    pub fn final_shape(&self) -> FeatureShape {
        *self.shapes.last().expect("nonempty")
    }

    /// True when every layer up to and including `name` maps positions
    /// locally.
    pub fn is_spatial(&self, name: &str) -> Result<bool> {
        let idx = self.layer_index(name)?;
        Ok(self.layers[..=idx].iter().all(|l| l.op.window().is_some()))
    }

    pub fn check_unit(&self, unit: &Unit) -> Result<()> {
        let shape = self.output_shape(&unit.layer)?;
        if unit.channel >= shape.channels {
            return Err(Error::InvalidArgument(format!(
                "unit {unit}: layer has {} channels",
                shape.channels
            )));
        }
        Ok(())
    }

    pub fn label(&self, class: usize) -> String {
        self.labels
            .get(class)
            .cloned()
            .unwrap_or_else(|| format!("class{class}"))
    }
}

/// One channel of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Unit {
    pub layer: String,
    pub channel: usize,
}

impl Unit {
    pub fn new(layer: impl Into<String>, channel: usize) -> Self {
        Self {
            layer: layer.into(),
            channel,
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.channel)
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (layer, channel) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("unit `{s}` is not LAYER:CHANNEL")))?;
        let channel = channel
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("unit `{s}`: bad channel")))?;
        if layer.is_empty() {
            return Err(Error::InvalidArgument(format!("unit `{s}`: empty layer")));
        }
        Ok(Unit::new(layer, channel))
    }
}
