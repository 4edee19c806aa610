use super::layer::LayerSpec;
use super::network::Network;
use crate::error::{Error, Result};

/// The classifier pairs used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// conv(5x5, 10) → pool → conv(5x5, 20) → pool → dense(320, 50) → dropout → dense(50, 10)
    MnistCnn,
    /// dense(784, 320) → dropout → dense(320, 50) → dropout → dense(50, 10)
    MnistMlp,
    /// Two conv/pool stages, wide 5x5 kernels, one hidden dense layer.
    CifarSmallA,
    /// Three 3x3 conv stages with two pools, narrow hidden dense layer.
    CifarSmallB,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::MnistCnn,
        Architecture::MnistMlp,
        Architecture::CifarSmallA,
        Architecture::CifarSmallB,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Architecture::MnistCnn => "mnist-cnn",
            Architecture::MnistMlp => "mnist-mlp",
            Architecture::CifarSmallA => "cifar-small-a",
            Architecture::CifarSmallB => "cifar-small-b",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.id() == id)
            .ok_or_else(|| Error::Parameter(format!("unknown architecture '{id}'")))
    }

    pub fn input_shape(self) -> Vec<usize> {
        match self {
            Architecture::MnistCnn | Architecture::MnistMlp => vec![1, 28, 28],
            Architecture::CifarSmallA | Architecture::CifarSmallB => vec![3, 32, 32],
        }
    }

    /// Layer stack, optionally preceded by a frozen standardization layer.
    pub fn layers(self, normalize: Option<(Vec<f32>, Vec<f32>)>) -> Vec<LayerSpec> {
        use LayerSpec::*;
        let conv = |i, o, k| Conv {
            in_channels: i,
            out_channels: o,
            kernel_h: k,
            kernel_w: k,
        };
        let dense = |i, o| Dense { in_dim: i, out_dim: o };
        let mut layers: Vec<LayerSpec> = normalize
            .map(|(mean, std)| Normalize { mean, std })
            .into_iter()
            .collect();
        layers.extend(match self {
            Architecture::MnistCnn => vec![
                conv(1, 10, 5),
                MaxPool { window: 2 },
                ReLU,
                conv(10, 20, 5),
                MaxPool { window: 2 },
                ReLU,
                Flatten,
                dense(320, 50),
                ReLU,
                Dropout { p: 0.5 },
                dense(50, 10),
            ],
            Architecture::MnistMlp => vec![
                Flatten,
                dense(784, 320),
                ReLU,
                Dropout { p: 0.5 },
                dense(320, 50),
                ReLU,
                Dropout { p: 0.5 },
                dense(50, 10),
            ],
            Architecture::CifarSmallA => vec![
                conv(3, 16, 5),
                MaxPool { window: 2 },
                ReLU,
                conv(16, 32, 5),
                MaxPool { window: 2 },
                ReLU,
                Flatten,
                dense(800, 128),
                ReLU,
                Dropout { p: 0.5 },
                dense(128, 10),
            ],
            Architecture::CifarSmallB => vec![
                conv(3, 24, 3),
                ReLU,
                conv(24, 24, 3),
                MaxPool { window: 2 },
                ReLU,
                conv(24, 48, 3),
                MaxPool { window: 2 },
                ReLU,
                Flatten,
                dense(48 * 6 * 6, 64),
                ReLU,
                Dropout { p: 0.3 },
                dense(64, 10),
            ],
        });
        layers
    }

    pub fn build(self, normalize: Option<(Vec<f32>, Vec<f32>)>, seed: u64) -> Result<Network> {
        Network::new(self.input_shape(), self.layers(normalize), seed)
    }
}
