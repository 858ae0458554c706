use std::fmt;

use crate::data::ImageShape;
use crate::grammar::{Activation, Gene, Genotype, OptimizerGene, PoolKind};

/// One network layer with resolved shapes.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
        use_bias: bool,
        input: ImageShape,
        output: ImageShape,
    },
    Pool {
        kind: PoolKind,
        size: usize,
        stride: usize,
        input: ImageShape,
        output: ImageShape,
    },
    Flatten {
        input: ImageShape,
        units: usize,
    },
    Dense {
        units: usize,
        activation: Activation,
        use_bias: bool,
        inputs: usize,
    },
    Dropout {
        rate: f64,
        units: usize,
    },
    /// Dense softmax classifier.
    Output {
        units: usize,
        use_bias: bool,
        inputs: usize,
    },
}

impl LayerSpec {
    pub fn output_len(&self) -> usize {
        match self {
            LayerSpec::Conv { output, .. } | LayerSpec::Pool { output, .. } => output.len(),
            LayerSpec::Flatten { units, .. }
            | LayerSpec::Dense { units, .. }
            | LayerSpec::Dropout { units, .. }
            | LayerSpec::Output { units, .. } => *units,
        }
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        match self {
            LayerSpec::Conv {
                filters,
                kernel,
                use_bias,
                input,
                ..
            } => kernel * kernel * input.channels * filters + if *use_bias { *filters } else { 0 },
            LayerSpec::Dense {
                units,
                use_bias,
                inputs,
                ..
            }
            | LayerSpec::Output {
                units,
                use_bias,
                inputs,
            } => inputs * units + if *use_bias { *units } else { 0 },
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phenotype {
    pub input: ImageShape,
    pub class_count: usize,
    pub layers: Vec<LayerSpec>,
    pub optimizer: OptimizerGene,
}

impl Phenotype {
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::parameter_count).sum()
    }
}

/// Why a genotype has no phenotype for the given input.
#[derive(Clone, Debug, PartialEq)]
pub struct Infeasible {
    /// Index of the offending gene in phenotype order.
    pub layer: usize,
    pub reason: String,
}

impl fmt::Display for Infeasible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {}: {}", self.layer, self.reason)
    }
}

/// Valid (unpadded) window arithmetic: `floor((n - k) / stride) + 1`.
fn window_out(n: usize, k: usize, stride: usize) -> Option<usize> {
    if k > n || stride == 0 {
        None
    } else {
        Some((n - k) / stride + 1)
    }
}

/// Propagates shapes through `s1 ++ [Flatten] ++ s2 ++ [Output]`.
pub fn decode(
    g: &Genotype,
    input: ImageShape,
    class_count: usize,
) -> Result<Phenotype, Infeasible> {
    if input.is_empty() {
        return Err(Infeasible {
            layer: 0,
            reason: "empty input shape".into(),
        });
    }
    let mut layers = Vec::new();
    let mut shape = input;
    let mut units = 0;
    for (i, gene) in g.layers().into_iter().enumerate() {
        let infeasible = |what: &str, n: usize, k: usize| Infeasible {
            layer: i,
            reason: format!("{what} window {k} does not fit spatial size {n}"),
        };
        match gene {
            Gene::Conv(c) => {
                let h = window_out(shape.height, c.kernel_size, c.stride)
                    .ok_or_else(|| infeasible("conv", shape.height, c.kernel_size))?;
                let w = window_out(shape.width, c.kernel_size, c.stride)
                    .ok_or_else(|| infeasible("conv", shape.width, c.kernel_size))?;
                let output = ImageShape::new(h, w, c.filters);
                layers.push(LayerSpec::Conv {
                    filters: c.filters,
                    kernel: c.kernel_size,
                    stride: c.stride,
                    activation: c.activation,
                    use_bias: c.use_bias,
                    input: shape,
                    output,
                });
                shape = output;
            }
            Gene::Pool(p) => {
                let h = window_out(shape.height, p.pool_size, p.stride)
                    .ok_or_else(|| infeasible("pool", shape.height, p.pool_size))?;
                let w = window_out(shape.width, p.pool_size, p.stride)
                    .ok_or_else(|| infeasible("pool", shape.width, p.pool_size))?;
                let output = ImageShape::new(h, w, shape.channels);
                layers.push(LayerSpec::Pool {
                    kind: p.kind,
                    size: p.pool_size,
                    stride: p.stride,
                    input: shape,
                    output,
                });
                shape = output;
            }
            Gene::Flatten => {
                units = shape.len();
                layers.push(LayerSpec::Flatten {
                    input: shape,
                    units,
                });
            }
            Gene::Dense(d) => {
                layers.push(LayerSpec::Dense {
                    units: d.units,
                    activation: d.activation,
                    use_bias: d.use_bias,
                    inputs: units,
                });
                units = d.units;
            }
            Gene::Dropout(d) => layers.push(LayerSpec::Dropout {
                rate: d.rate,
                units,
            }),
            Gene::Output(o) => {
                if o.units != class_count {
                    return Err(Infeasible {
                        layer: i,
                        reason: format!(
                            "output has {} units but the data has {class_count} classes",
                            o.units
                        ),
                    });
                }
                layers.push(LayerSpec::Output {
                    units: o.units,
                    use_bias: o.use_bias,
                    inputs: units,
                });
            }
            Gene::Optimizer(_) => unreachable!("optimizer is not a layer"),
        }
    }
    Ok(Phenotype {
        input,
        class_count,
        layers,
        optimizer: g.optimizer.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{ConvGene, GenotypeId, OutputGene, PoolGene};

    fn genotype(s1: Vec<Gene>) -> Genotype {
        Genotype {
            id: GenotypeId(0),
            parent: None,
            s1,
            s2: vec![],
            output: OutputGene {
                units: 10,
                activation: Activation::Softmax,
                use_bias: true,
            },
            optimizer: OptimizerGene {
                learning_rate: 0.01,
                decay: 0.0001,
                momentum: 0.9,
                nesterov: false,
            },
        }
    }

    fn conv(kernel_size: usize, stride: usize) -> Gene {
        Gene::Conv(ConvGene {
            filters: 32,
            kernel_size,
            stride,
            activation: Activation::Relu,
            use_bias: true,
        })
    }

    #[test]
    fn conv_shape_arithmetic() {
        let p = decode(&genotype(vec![conv(3, 1)]), ImageShape::new(8, 8, 1), 10).unwrap();
        let LayerSpec::Conv { output, .. } = &p.layers[0] else {
            panic!()
        };
        assert_eq!((output.height, output.width), (6, 6));

        let p = decode(&genotype(vec![conv(5, 3)]), ImageShape::new(8, 8, 1), 10).unwrap();
        let LayerSpec::Conv { output, .. } = &p.layers[0] else {
            panic!()
        };
        assert_eq!((output.height, output.width), (2, 2));
    }

    #[test]
    fn pool_larger_than_map_is_infeasible() {
        let pool = Gene::Pool(PoolGene {
            kind: PoolKind::Max,
            pool_size: 3,
            stride: 1,
        });
        let r = decode(
            &genotype(vec![conv(5, 3), pool]),
            ImageShape::new(8, 8, 1),
            10,
        );
        let e = r.unwrap_err();
        assert_eq!(e.layer, 1);
    }

    #[test]
    fn minimal_mnist_phenotype_ends_in_softmax_of_ten() {
        let p = decode(&genotype(vec![conv(3, 1)]), ImageShape::new(28, 28, 1), 10).unwrap();
        assert_eq!(p.layers.len(), 3);
        assert_eq!(
            p.layers[2],
            LayerSpec::Output {
                units: 10,
                use_bias: true,
                inputs: 26 * 26 * 32
            }
        );
    }

    #[test]
    fn class_count_mismatch_is_infeasible() {
        assert!(decode(&genotype(vec![conv(3, 1)]), ImageShape::new(8, 8, 1), 3).is_err());
    }
}
