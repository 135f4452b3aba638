//! Layer and architecture descriptions plus shape inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Maxpool1d {
        window: usize,
        stride: usize,
    },
    Dense {
        in_width: usize,
        out_width: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Flatten,
    /// Parallel stacks over the same input, joined along the channel axis.
    /// Longer outputs are truncated to the shortest branch length.
    ConcatBranches {
        branches: Vec<Vec<LayerSpec>>,
    },
    /// Stacked tanh recurrence consuming a sequence and emitting the last
    /// hidden state of the top layer.
    Rnn {
        input_size: usize,
        hidden_size: usize,
        layers: usize,
    },
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
        }
    }

    pub fn pool(window: usize) -> Self {
        LayerSpec::Maxpool1d { window, stride: window }
    }

    pub fn dense(in_width: usize, out_width: usize) -> Self {
        LayerSpec::Dense { in_width, out_width }
    }

    /// Shapes of this layer's parameter tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => vec![vec![*out_channels, *in_channels, *kernel_size], vec![*out_channels]],
            LayerSpec::Dense { in_width, out_width } => vec![vec![*in_width, *out_width], vec![*out_width]],
            LayerSpec::Rnn {
                input_size,
                hidden_size,
                layers,
            } => (0..*layers)
                .flat_map(|l| {
                    let input = if l == 0 { *input_size } else { *hidden_size };
                    [
                        vec![input, *hidden_size],
                        vec![*hidden_size, *hidden_size],
                        vec![*hidden_size],
                    ]
                })
                .collect(),
            LayerSpec::ConcatBranches { branches } => branches
                .iter()
                .flat_map(|b| b.iter().flat_map(LayerSpec::param_shapes))
                .collect(),
            LayerSpec::Maxpool1d { .. } | LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::Flatten => {
                Vec::new()
            }
        }
    }

    pub fn param_tensor_count(&self) -> usize {
        self.param_shapes().len()
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Maxpool1d { .. } => "maxpool1d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::ConcatBranches { .. } => "concat_branches",
            LayerSpec::Rnn { .. } => "rnn",
        }
    }

    /// Output shape for one sample, or an error naming the problem.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match (self, input) {
            (
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel_size,
                    stride,
                },
                Shape::Seq { channels, len },
            ) => {
                if *in_channels != channels {
                    return Err(Error::shape(format!(
                        "conv1d expects {in_channels} channels, got {channels}"
                    )));
                }
                if *kernel_size == 0 || *stride == 0 {
                    return Err(Error::shape("conv1d kernel and stride must be positive"));
                }
                if *kernel_size > len {
                    return Err(Error::shape(format!(
                        "conv1d kernel {kernel_size} exceeds input length {len}"
                    )));
                }
                Ok(Shape::Seq {
                    channels: *out_channels,
                    len: (len - kernel_size) / stride + 1,
                })
            }
            (LayerSpec::Maxpool1d { window, stride }, Shape::Seq { channels, len }) => {
                if *window == 0 || *stride == 0 {
                    return Err(Error::shape("maxpool window and stride must be positive"));
                }
                if *window > len {
                    return Err(Error::shape(format!(
                        "maxpool window {window} exceeds input length {len}"
                    )));
                }
                Ok(Shape::Seq {
                    channels,
                    len: (len - window) / stride + 1,
                })
            }
            (LayerSpec::Dense { in_width, out_width }, Shape::Flat { width }) => {
                if *in_width != width {
                    return Err(Error::shape(format!("dense expects width {in_width}, got {width}")));
                }
                Ok(Shape::Flat { width: *out_width })
            }
            (LayerSpec::Relu, s) => Ok(s),
            (LayerSpec::Dropout { rate }, s) => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::shape(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok(s)
            }
            (LayerSpec::Flatten, Shape::Seq { channels, len }) => Ok(Shape::Flat { width: channels * len }),
            (LayerSpec::Flatten, s @ Shape::Flat { .. }) => Ok(s),
            (LayerSpec::ConcatBranches { branches }, s @ Shape::Seq { .. }) => {
                if branches.is_empty() {
                    return Err(Error::shape("concat_branches needs at least one branch"));
                }
                let mut channels = 0;
                let mut min_len = usize::MAX;
                for branch in branches {
                    match infer_shapes(branch, s)?.last().copied().unwrap_or(s) {
                        Shape::Seq { channels: c, len } => {
                            channels += c;
                            min_len = min_len.min(len);
                        }
                        Shape::Flat { .. } => return Err(Error::shape("branch output must be a sequence")),
                    }
                }
                Ok(Shape::Seq { channels, len: min_len })
            }
            (
                LayerSpec::Rnn {
                    input_size,
                    hidden_size,
                    layers,
                },
                Shape::Seq { channels, .. },
            ) => {
                if *input_size != channels {
                    return Err(Error::shape(format!(
                        "rnn expects input size {input_size}, got {channels}"
                    )));
                }
                if *layers == 0 || *hidden_size == 0 {
                    return Err(Error::shape("rnn needs at least one layer and one hidden unit"));
                }
                Ok(Shape::Flat { width: *hidden_size })
            }
            (layer, s) => Err(Error::shape(format!("{} cannot take input {s:?}", layer.kind_name()))),
        }
    }
}

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Seq { channels: usize, len: usize },
    Flat { width: usize },
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Seq { channels, len } => channels * len,
            Shape::Flat { width } => width,
        }
    }
}

/// Output shape after each layer.
pub fn infer_shapes(layers: &[LayerSpec], input: Shape) -> Result<Vec<Shape>> {
    let mut shapes = Vec::with_capacity(layers.len());
    let mut current = input;
    for layer in layers {
        current = layer.output_shape(current)?;
        shapes.push(current);
    }
    Ok(shapes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Vanilla,
    Cnn2,
    Cnn2Wide,
    Cnn2Multibranch,
    RnnSimple,
    RnnDeep,
    /// Hand-assembled layer list.
    Custom,
}

impl Architecture {
    pub const BUILT_IN: [Architecture; 6] = [
        Architecture::Vanilla,
        Architecture::Cnn2,
        Architecture::Cnn2Wide,
        Architecture::Cnn2Multibranch,
        Architecture::RnnSimple,
        Architecture::RnnDeep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Vanilla => "vanilla",
            Architecture::Cnn2 => "cnn2",
            Architecture::Cnn2Wide => "cnn2_wide",
            Architecture::Cnn2Multibranch => "cnn2_multibranch",
            Architecture::RnnSimple => "rnn_simple",
            Architecture::RnnDeep => "rnn_deep",
            Architecture::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::BUILT_IN
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown architecture `{s}`")))
    }
}

fn default_cnn2_kernel() -> usize {
    4
}

fn default_dropout() -> f64 {
    0.2
}

fn default_rnn_hidden() -> usize {
    32
}

/// Knobs for the built-in architectures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchOptions {
    /// Kernel size of every convolution in `cnn2` and `cnn2_wide`.
    #[serde(default = "default_cnn2_kernel")]
    pub kernel_size: usize,
    /// Dropout after each hidden dense layer of the `cnn2` family.
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_rnn_hidden")]
    pub rnn_hidden: usize,
}

impl Default for ArchOptions {
    fn default() -> Self {
        ArchOptions {
            kernel_size: default_cnn2_kernel(),
            dropout: default_dropout(),
            rnn_hidden: default_rnn_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub input_features: usize,
    pub class_count: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Validates a layer list: shapes compose and the output is `class_count` wide.
    pub fn custom(layers: Vec<LayerSpec>, input_features: usize, class_count: usize) -> Result<Self> {
        let spec = NetworkSpec {
            architecture: Architecture::Custom,
            input_features,
            class_count,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn input_shape(&self) -> Shape {
        Shape::Seq {
            channels: 1,
            len: self.input_features,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = infer_shapes(&self.layers, self.input_shape())?;
        match shapes.last() {
            Some(Shape::Flat { width }) if *width == self.class_count => Ok(()),
            other => Err(Error::shape(format!(
                "network must end in {} logits, ends in {other:?}",
                self.class_count
            ))),
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().flat_map(LayerSpec::param_shapes).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn has_dropout(&self) -> bool {
        fn any(layers: &[LayerSpec]) -> bool {
            layers.iter().any(|l| match l {
                LayerSpec::Dropout { .. } => true,
                LayerSpec::ConcatBranches { branches } => branches.iter().any(|b| any(b)),
                _ => false,
            })
        }
        any(&self.layers)
    }
}

fn conv_stack(kernel: usize, channels: &[usize]) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for pair in channels.windows(2) {
        layers.push(LayerSpec::conv(pair[0], pair[1], kernel));
        layers.push(LayerSpec::Relu);
    }
    layers
}

/// Flatten plus a ReLU dense head; `dropout` follows each hidden layer when set.
fn dense_head(flat_width: usize, hidden: &[usize], classes: usize, dropout: Option<f64>) -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::Flatten];
    let mut width = flat_width;
    for &h in hidden {
        layers.push(LayerSpec::dense(width, h));
        layers.push(LayerSpec::Relu);
        if let Some(rate) = dropout {
            layers.push(LayerSpec::Dropout { rate });
        }
        width = h;
    }
    layers.push(LayerSpec::dense(width, classes));
    layers
}

fn too_short(architecture: Architecture, input_features: usize, err: Error) -> Error {
    Error::shape(format!(
        "{input_features} input features are too short for {}: {err}",
        architecture.name()
    ))
}

/// Layer list for a built-in architecture.
pub fn architecture_spec(
    architecture: Architecture,
    input_features: usize,
    class_count: usize,
    options: &ArchOptions,
) -> Result<NetworkSpec> {
    let input = Shape::Seq {
        channels: 1,
        len: input_features,
    };
    let seq_len = |layers: &[LayerSpec]| -> Result<usize> {
        match infer_shapes(layers, input)
            .map_err(|e| too_short(architecture, input_features, e))?
            .last()
        {
            Some(s) => Ok(s.size()),
            None => Ok(input_features),
        }
    };
    let cnn2_dropout = Some(options.dropout).filter(|&r| r > 0.0);
    let layers = match architecture {
        Architecture::Vanilla => {
            let mut trunk = conv_stack(2, &[1, 8, 16]);
            trunk.push(LayerSpec::pool(2));
            let flat = seq_len(&trunk)?;
            trunk.extend(dense_head(flat, &[128, 64], class_count, None));
            trunk
        }
        Architecture::Cnn2 | Architecture::Cnn2Wide => {
            let mut trunk = conv_stack(options.kernel_size, &[1, 8, 16, 32]);
            trunk.push(LayerSpec::pool(2));
            let flat = seq_len(&trunk)?;
            let hidden: &[usize] = if architecture == Architecture::Cnn2 {
                &[128, 64]
            } else {
                &[2560, 1280]
            };
            trunk.extend(dense_head(flat, hidden, class_count, cnn2_dropout));
            trunk
        }
        Architecture::Cnn2Multibranch => {
            let mut trunk = vec![
                LayerSpec::ConcatBranches {
                    branches: vec![conv_stack(3, &[1, 8, 16, 32]), conv_stack(5, &[1, 8, 16, 32])],
                },
                LayerSpec::pool(2),
            ];
            let flat = seq_len(&trunk)?;
            trunk.extend(dense_head(flat, &[128, 64], class_count, cnn2_dropout));
            trunk
        }
        Architecture::RnnSimple | Architecture::RnnDeep => {
            let layers = if architecture == Architecture::RnnSimple { 1 } else { 4 };
            vec![
                LayerSpec::Rnn {
                    input_size: 1,
                    hidden_size: options.rnn_hidden,
                    layers,
                },
                LayerSpec::dense(options.rnn_hidden, class_count),
            ]
        }
        Architecture::Custom => return Err(Error::config("custom networks are built with NetworkSpec::custom")),
    };
    let spec = NetworkSpec {
        architecture,
        input_features,
        class_count,
        layers,
    };
    spec.validate()
        .map_err(|e| too_short(architecture, input_features, e))?;
    Ok(spec)
}
