//! Gene grammar, genotype structure, random generation and validation.
//!
//! A genotype is two ordered sections joined by an implicit Flatten gene:
//! `s1` holds feature-extraction genes (Conv, Pool) and `s2` holds
//! classifier genes (Dense, Dropout). The phenotype layer order is
//! `s1 ++ [Flatten] ++ s2 ++ [Output]`; the Optimizer gene configures
//! training and is not a layer.

mod text;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use text::{parse_genotype, parse_genotype_log, TextError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Elu,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        }
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            "elu" => Ok(Activation::Elu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softmax" => Ok(Activation::Softmax),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Max,
    Avg,
}

impl PoolKind {
    pub fn name(self) -> &'static str {
        match self {
            PoolKind::Max => "max",
            PoolKind::Avg => "avg",
        }
    }
}

impl FromStr for PoolKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "max" => Ok(PoolKind::Max),
            "avg" => Ok(PoolKind::Avg),
            other => Err(format!("unknown pool type `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGene {
    pub filters: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub activation: Activation,
    pub use_bias: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolGene {
    pub kind: PoolKind,
    pub pool_size: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGene {
    pub units: usize,
    pub activation: Activation,
    pub use_bias: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropoutGene {
    pub rate: f64,
}

/// Fixed softmax classification layer. Only `use_bias` may change after creation.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGene {
    pub units: usize,
    pub activation: Activation,
    pub use_bias: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerGene {
    pub learning_rate: f64,
    pub decay: f64,
    pub momentum: f64,
    pub nesterov: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gene {
    Conv(ConvGene),
    Pool(PoolGene),
    Dense(DenseGene),
    Dropout(DropoutGene),
    Flatten,
    Output(OutputGene),
    Optimizer(OptimizerGene),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GeneKind {
    Conv,
    Pool,
    Dense,
    Dropout,
    Flatten,
    Output,
    Optimizer,
}

impl GeneKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneKind::Conv => "conv",
            GeneKind::Pool => "pool",
            GeneKind::Dense => "dense",
            GeneKind::Dropout => "dropout",
            GeneKind::Flatten => "flatten",
            GeneKind::Output => "output",
            GeneKind::Optimizer => "optimizer",
        }
    }
}

impl Gene {
    pub fn kind(&self) -> GeneKind {
        match self {
            Gene::Conv(_) => GeneKind::Conv,
            Gene::Pool(_) => GeneKind::Pool,
            Gene::Dense(_) => GeneKind::Dense,
            Gene::Dropout(_) => GeneKind::Dropout,
            Gene::Flatten => GeneKind::Flatten,
            Gene::Output(_) => GeneKind::Output,
            Gene::Optimizer(_) => GeneKind::Optimizer,
        }
    }

    /// Whether `self` and `other` hold the same value for `p`. Genes of
    /// different kinds, or a parameter neither carries, compare unequal.
    pub fn same_param(&self, other: &Gene, p: Param) -> bool {
        use Param::*;
        match (self, other, p) {
            (Gene::Conv(a), Gene::Conv(b), ConvFilters) => a.filters == b.filters,
            (Gene::Conv(a), Gene::Conv(b), ConvKernelSize) => a.kernel_size == b.kernel_size,
            (Gene::Conv(a), Gene::Conv(b), ConvStride) => a.stride == b.stride,
            (Gene::Conv(a), Gene::Conv(b), ConvActivation) => a.activation == b.activation,
            (Gene::Conv(a), Gene::Conv(b), ConvUseBias) => a.use_bias == b.use_bias,
            (Gene::Pool(a), Gene::Pool(b), PoolKind) => a.kind == b.kind,
            (Gene::Pool(a), Gene::Pool(b), PoolSize) => a.pool_size == b.pool_size,
            (Gene::Pool(a), Gene::Pool(b), PoolStride) => a.stride == b.stride,
            (Gene::Dense(a), Gene::Dense(b), DenseUnits) => a.units == b.units,
            (Gene::Dense(a), Gene::Dense(b), DenseActivation) => a.activation == b.activation,
            (Gene::Dense(a), Gene::Dense(b), DenseUseBias) => a.use_bias == b.use_bias,
            (Gene::Dropout(a), Gene::Dropout(b), DropoutRate) => {
                a.rate.to_bits() == b.rate.to_bits()
            }
            (Gene::Output(a), Gene::Output(b), OutputUseBias) => a.use_bias == b.use_bias,
            (Gene::Optimizer(a), Gene::Optimizer(b), LearningRate) => {
                a.learning_rate == b.learning_rate
            }
            (Gene::Optimizer(a), Gene::Optimizer(b), Decay) => a.decay == b.decay,
            (Gene::Optimizer(a), Gene::Optimizer(b), Momentum) => a.momentum == b.momentum,
            (Gene::Optimizer(a), Gene::Optimizer(b), Nesterov) => a.nesterov == b.nesterov,
            _ => false,
        }
    }

    /// Parameters carried by this gene, in serialization order.
    pub fn params(&self) -> &'static [Param] {
        Param::of_kind(self.kind())
    }
}

/// A single tunable parameter of some gene kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Param {
    ConvFilters,
    ConvKernelSize,
    ConvStride,
    ConvActivation,
    ConvUseBias,
    PoolKind,
    PoolSize,
    PoolStride,
    DenseUnits,
    DenseActivation,
    DenseUseBias,
    DropoutRate,
    OutputUseBias,
    LearningRate,
    Decay,
    Momentum,
    Nesterov,
}

impl Param {
    pub const OPTIMIZER: [Param; 4] = [
        Param::LearningRate,
        Param::Decay,
        Param::Momentum,
        Param::Nesterov,
    ];

    pub fn of_kind(kind: GeneKind) -> &'static [Param] {
        use Param::*;
        match kind {
            GeneKind::Conv => &[
                ConvFilters,
                ConvKernelSize,
                ConvStride,
                ConvActivation,
                ConvUseBias,
            ],
            GeneKind::Pool => &[PoolKind, PoolSize, PoolStride],
            GeneKind::Dense => &[DenseUnits, DenseActivation, DenseUseBias],
            GeneKind::Dropout => &[DropoutRate],
            GeneKind::Flatten => &[],
            // units and activation are frozen; only the bias is a parameter
            GeneKind::Output => &[OutputUseBias],
            GeneKind::Optimizer => &Self::OPTIMIZER,
        }
    }

    pub fn name(self) -> &'static str {
        use Param::*;
        match self {
            ConvFilters => "filters",
            ConvKernelSize => "kernel_size",
            ConvStride | PoolStride => "stride",
            ConvActivation | DenseActivation => "activation",
            ConvUseBias | DenseUseBias | OutputUseBias => "use_bias",
            PoolKind => "type",
            PoolSize => "pool_size",
            DenseUnits => "units",
            DropoutRate => "rate",
            LearningRate => "learning_rate",
            Decay => "decay",
            Momentum => "momentum",
            Nesterov => "nesterov",
        }
    }
}

/// Inclusive real interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RealRange {
    pub min: f64,
    pub max: f64,
}

impl RealRange {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Admissible values for every gene parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Grammar {
    pub conv_filters: Vec<usize>,
    pub conv_kernel_size: Vec<usize>,
    pub conv_stride: Vec<usize>,
    pub conv_activation: Vec<Activation>,
    pub conv_use_bias: Vec<bool>,
    pub pool_kind: Vec<PoolKind>,
    pub pool_size: Vec<usize>,
    pub pool_stride: Vec<usize>,
    pub dense_units: Vec<usize>,
    pub dense_activation: Vec<Activation>,
    pub dense_use_bias: Vec<bool>,
    pub dropout_rate: RealRange,
    pub output_use_bias: Vec<bool>,
    pub learning_rate: Vec<f64>,
    pub decay: Vec<f64>,
    pub momentum: Vec<f64>,
    pub nesterov: Vec<bool>,
}

impl Default for Grammar {
    fn default() -> Self {
        use Activation::*;
        Grammar {
            conv_filters: vec![32, 64, 128, 256],
            conv_kernel_size: vec![2, 3, 4, 5],
            conv_stride: vec![1, 2, 3],
            conv_activation: vec![Relu, Elu, Sigmoid],
            conv_use_bias: vec![true, false],
            pool_kind: vec![PoolKind::Max, PoolKind::Avg],
            pool_size: vec![2, 3, 4, 5],
            pool_stride: vec![1, 2, 3],
            dense_units: vec![8, 16, 32, 64, 128, 256, 512],
            dense_activation: vec![Relu, Elu, Sigmoid],
            dense_use_bias: vec![true, false],
            dropout_rate: RealRange { min: 0.0, max: 0.7 },
            output_use_bias: vec![true, false],
            learning_rate: vec![1e-2, 1e-3, 1e-4, 1e-5],
            decay: vec![1e-2, 1e-3, 1e-4, 1e-5],
            momentum: vec![0.99, 0.9, 0.5, 0.1],
            nesterov: vec![true, false],
        }
    }
}

fn check_domain<T: PartialEq>(name: &str, values: &[T]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::config(format!("grammar domain `{name}` is empty")));
    }
    for (i, v) in values.iter().enumerate() {
        if values[..i].contains(v) {
            return Err(Error::config(format!(
                "grammar domain `{name}` has a duplicate value"
            )));
        }
    }
    Ok(())
}

impl Grammar {
    /// Checks that every discrete domain is non-empty and duplicate-free and
    /// that the dropout interval is well formed.
    pub fn check(&self) -> Result<()> {
        check_domain("conv.filters", &self.conv_filters)?;
        check_domain("conv.kernel_size", &self.conv_kernel_size)?;
        check_domain("conv.stride", &self.conv_stride)?;
        check_domain("conv.activation", &self.conv_activation)?;
        check_domain("conv.use_bias", &self.conv_use_bias)?;
        check_domain("pool.type", &self.pool_kind)?;
        check_domain("pool.pool_size", &self.pool_size)?;
        check_domain("pool.stride", &self.pool_stride)?;
        check_domain("dense.units", &self.dense_units)?;
        check_domain("dense.activation", &self.dense_activation)?;
        check_domain("dense.use_bias", &self.dense_use_bias)?;
        check_domain("output.use_bias", &self.output_use_bias)?;
        check_domain("optimizer.learning_rate", &self.learning_rate)?;
        check_domain("optimizer.decay", &self.decay)?;
        check_domain("optimizer.momentum", &self.momentum)?;
        check_domain("optimizer.nesterov", &self.nesterov)?;
        let r = self.dropout_rate;
        if !(r.min.is_finite() && r.max.is_finite() && r.min <= r.max) {
            return Err(Error::config("grammar dropout interval is malformed"));
        }
        Ok(())
    }

    /// Number of admissible values, or `None` for the continuous dropout rate.
    pub fn domain_len(&self, p: Param) -> Option<usize> {
        use Param::*;
        Some(match p {
            ConvFilters => self.conv_filters.len(),
            ConvKernelSize => self.conv_kernel_size.len(),
            ConvStride => self.conv_stride.len(),
            ConvActivation => self.conv_activation.len(),
            ConvUseBias => self.conv_use_bias.len(),
            PoolKind => self.pool_kind.len(),
            PoolSize => self.pool_size.len(),
            PoolStride => self.pool_stride.len(),
            DenseUnits => self.dense_units.len(),
            DenseActivation => self.dense_activation.len(),
            DenseUseBias => self.dense_use_bias.len(),
            OutputUseBias => self.output_use_bias.len(),
            LearningRate => self.learning_rate.len(),
            Decay => self.decay.len(),
            Momentum => self.momentum.len(),
            Nesterov => self.nesterov.len(),
            DropoutRate => return None,
        })
    }

    /// A parameter can be mutated when it has at least two admissible values.
    pub fn is_mutable(&self, p: Param) -> bool {
        match self.domain_len(p) {
            Some(n) => n > 1,
            None => self.dropout_rate.max > self.dropout_rate.min,
        }
    }

    fn random_conv<R: Rng + ?Sized>(&self, rng: &mut R) -> ConvGene {
        ConvGene {
            filters: pick(&self.conv_filters, rng),
            kernel_size: pick(&self.conv_kernel_size, rng),
            stride: pick(&self.conv_stride, rng),
            activation: pick(&self.conv_activation, rng),
            use_bias: pick(&self.conv_use_bias, rng),
        }
    }

    fn random_pool<R: Rng + ?Sized>(&self, rng: &mut R) -> PoolGene {
        PoolGene {
            kind: pick(&self.pool_kind, rng),
            pool_size: pick(&self.pool_size, rng),
            stride: pick(&self.pool_stride, rng),
        }
    }

    fn random_dense<R: Rng + ?Sized>(&self, rng: &mut R) -> DenseGene {
        DenseGene {
            units: pick(&self.dense_units, rng),
            activation: pick(&self.dense_activation, rng),
            use_bias: pick(&self.dense_use_bias, rng),
        }
    }

    pub fn random_dropout_rate<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let r = self.dropout_rate;
        if r.max > r.min {
            rng.gen_range(r.min..=r.max)
        } else {
            r.min
        }
    }

    /// Draws a gene of `kind` with uniformly chosen parameters.
    /// Only the four section kinds can be drawn.
    pub fn random_gene<R: Rng + ?Sized>(&self, kind: GeneKind, rng: &mut R) -> Gene {
        match kind {
            GeneKind::Conv => Gene::Conv(self.random_conv(rng)),
            GeneKind::Pool => Gene::Pool(self.random_pool(rng)),
            GeneKind::Dense => Gene::Dense(self.random_dense(rng)),
            GeneKind::Dropout => Gene::Dropout(DropoutGene {
                rate: self.random_dropout_rate(rng),
            }),
            other => panic!("{} genes are not drawn from the grammar", other.name()),
        }
    }

    pub fn random_optimizer<R: Rng + ?Sized>(&self, rng: &mut R) -> OptimizerGene {
        OptimizerGene {
            learning_rate: pick(&self.learning_rate, rng),
            decay: pick(&self.decay, rng),
            momentum: pick(&self.momentum, rng),
            nesterov: pick(&self.nesterov, rng),
        }
    }
}

fn index_of<T: PartialEq>(values: &[T], v: &T) -> Option<usize> {
    values.iter().position(|x| x == v)
}

impl Grammar {
    /// Position of the gene's current value for `p` within its domain.
    /// `None` for the continuous dropout rate, for parameters the gene does
    /// not carry, and for values outside the domain.
    pub fn value_index(&self, gene: &Gene, p: Param) -> Option<usize> {
        use Param::*;
        match (gene, p) {
            (Gene::Conv(c), ConvFilters) => index_of(&self.conv_filters, &c.filters),
            (Gene::Conv(c), ConvKernelSize) => index_of(&self.conv_kernel_size, &c.kernel_size),
            (Gene::Conv(c), ConvStride) => index_of(&self.conv_stride, &c.stride),
            (Gene::Conv(c), ConvActivation) => index_of(&self.conv_activation, &c.activation),
            (Gene::Conv(c), ConvUseBias) => index_of(&self.conv_use_bias, &c.use_bias),
            (Gene::Pool(x), PoolKind) => index_of(&self.pool_kind, &x.kind),
            (Gene::Pool(x), PoolSize) => index_of(&self.pool_size, &x.pool_size),
            (Gene::Pool(x), PoolStride) => index_of(&self.pool_stride, &x.stride),
            (Gene::Dense(d), DenseUnits) => index_of(&self.dense_units, &d.units),
            (Gene::Dense(d), DenseActivation) => index_of(&self.dense_activation, &d.activation),
            (Gene::Dense(d), DenseUseBias) => index_of(&self.dense_use_bias, &d.use_bias),
            (Gene::Output(o), OutputUseBias) => index_of(&self.output_use_bias, &o.use_bias),
            (Gene::Optimizer(o), LearningRate) => index_of(&self.learning_rate, &o.learning_rate),
            (Gene::Optimizer(o), Decay) => index_of(&self.decay, &o.decay),
            (Gene::Optimizer(o), Momentum) => index_of(&self.momentum, &o.momentum),
            (Gene::Optimizer(o), Nesterov) => index_of(&self.nesterov, &o.nesterov),
            _ => None,
        }
    }

    /// Sets parameter `p` of `gene` to the domain value at `idx`.
    ///
    /// Panics if the gene does not carry `p`, if `p` is continuous, or if
    /// `idx` is out of range.
    pub fn set_value_index(&self, gene: &mut Gene, p: Param, idx: usize) {
        use Param::*;
        match (gene, p) {
            (Gene::Conv(c), ConvFilters) => c.filters = self.conv_filters[idx],
            (Gene::Conv(c), ConvKernelSize) => c.kernel_size = self.conv_kernel_size[idx],
            (Gene::Conv(c), ConvStride) => c.stride = self.conv_stride[idx],
            (Gene::Conv(c), ConvActivation) => c.activation = self.conv_activation[idx],
            (Gene::Conv(c), ConvUseBias) => c.use_bias = self.conv_use_bias[idx],
            (Gene::Pool(x), PoolKind) => x.kind = self.pool_kind[idx],
            (Gene::Pool(x), PoolSize) => x.pool_size = self.pool_size[idx],
            (Gene::Pool(x), PoolStride) => x.stride = self.pool_stride[idx],
            (Gene::Dense(d), DenseUnits) => d.units = self.dense_units[idx],
            (Gene::Dense(d), DenseActivation) => d.activation = self.dense_activation[idx],
            (Gene::Dense(d), DenseUseBias) => d.use_bias = self.dense_use_bias[idx],
            (Gene::Output(o), OutputUseBias) => o.use_bias = self.output_use_bias[idx],
            (Gene::Optimizer(o), LearningRate) => o.learning_rate = self.learning_rate[idx],
            (Gene::Optimizer(o), Decay) => o.decay = self.decay[idx],
            (Gene::Optimizer(o), Momentum) => o.momentum = self.momentum[idx],
            (Gene::Optimizer(o), Nesterov) => o.nesterov = self.nesterov[idx],
            (gene, p) => panic!(
                "parameter {} cannot be set by index on a {} gene",
                p.name(),
                gene.kind().name()
            ),
        }
    }
}

fn pick<T: Clone, R: Rng + ?Sized>(values: &[T], rng: &mut R) -> T {
    values[rng.gen_range(0..values.len())].clone()
}

/// Bounds on the number of genes in each section.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionLimits {
    pub min_s1: usize,
    pub max_s1: usize,
    pub min_s2: usize,
    pub max_s2: usize,
}

impl Default for SectionLimits {
    fn default() -> Self {
        SectionLimits {
            min_s1: 1,
            max_s1: 4,
            min_s2: 0,
            max_s2: 3,
        }
    }
}

impl SectionLimits {
    pub fn check(&self) -> Result<()> {
        if self.min_s1 == 0 {
            return Err(Error::config("limits.min_s1: must be at least 1"));
        }
        if self.min_s1 > self.max_s1 {
            return Err(Error::config("limits.min_s1: exceeds limits.max_s1"));
        }
        if self.min_s2 > self.max_s2 {
            return Err(Error::config("limits.min_s2: exceeds limits.max_s2"));
        }
        Ok(())
    }
}

/// Lineage identifier of a genotype.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GenotypeId(pub u64);

impl GenotypeId {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        GenotypeId(rng.gen())
    }
}

impl fmt::Display for GenotypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for GenotypeId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        u64::from_str_radix(s, 16)
            .map(GenotypeId)
            .map_err(|_| format!("invalid genotype id `{s}`"))
    }
}

impl Serialize for GenotypeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GenotypeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Genotype {
    pub id: GenotypeId,
    pub parent: Option<GenotypeId>,
    /// Feature-extraction section: Conv and Pool genes.
    pub s1: Vec<Gene>,
    /// Classifier section: Dense and Dropout genes.
    pub s2: Vec<Gene>,
    pub output: OutputGene,
    pub optimizer: OptimizerGene,
}

impl Genotype {
    /// Layer genes in phenotype order, including Flatten and Output.
    pub fn layers(&self) -> Vec<Gene> {
        let mut out = Vec::with_capacity(self.s1.len() + self.s2.len() + 2);
        out.extend(self.s1.iter().cloned());
        out.push(Gene::Flatten);
        out.extend(self.s2.iter().cloned());
        out.push(Gene::Output(self.output.clone()));
        out
    }

    /// Genes equal, ignoring lineage identifiers.
    pub fn same_genes(&self, other: &Genotype) -> bool {
        self.s1 == other.s1
            && self.s2 == other.s2
            && self.output == other.output
            && self.optimizer == other.optimizer
    }

    pub fn gene_count(&self) -> usize {
        self.s1.len() + self.s2.len()
    }

    pub fn class_count(&self) -> usize {
        self.output.units
    }

    /// Copy with a fresh id whose parent is `self`.
    pub fn child<R: Rng + ?Sized>(&self, rng: &mut R) -> Genotype {
        let mut g = self.clone();
        g.parent = Some(self.id);
        g.id = GenotypeId::random(rng);
        g
    }
}

/// Draws a random genotype: section sizes uniform in the limits, gene kinds and
/// discrete values uniform over their domains, dropout rate uniform on its interval.
pub fn random_genotype<R: Rng + ?Sized>(
    grammar: &Grammar,
    class_count: usize,
    rng: &mut R,
    limits: &SectionLimits,
) -> Result<Genotype> {
    if class_count < 2 {
        return Err(Error::config(format!(
            "class_count: must be at least 2, got {class_count}"
        )));
    }
    limits.check()?;

    let s1_len = rng.gen_range(limits.min_s1..=limits.max_s1);
    // Rejection over the kind sequence keeps the kinds uniform conditional on
    // the section holding at least one Conv gene.
    let kinds = loop {
        let kinds: Vec<GeneKind> = (0..s1_len)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    GeneKind::Conv
                } else {
                    GeneKind::Pool
                }
            })
            .collect();
        if kinds.contains(&GeneKind::Conv) {
            break kinds;
        }
    };
    let s1 = kinds
        .into_iter()
        .map(|k| grammar.random_gene(k, rng))
        .collect();

    let s2_len = rng.gen_range(limits.min_s2..=limits.max_s2);
    let s2 = (0..s2_len)
        .map(|_| {
            let kind = if rng.gen_bool(0.5) {
                GeneKind::Dense
            } else {
                GeneKind::Dropout
            };
            grammar.random_gene(kind, rng)
        })
        .collect();

    let output = OutputGene {
        units: class_count,
        activation: Activation::Softmax,
        use_bias: pick(&grammar.output_use_bias, rng),
    };
    let optimizer = grammar.random_optimizer(rng);

    Ok(Genotype {
        id: GenotypeId::random(rng),
        parent: None,
        s1,
        s2,
        output,
        optimizer,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    S1LacksConv,
    WrongSection {
        section: &'static str,
        position: usize,
        kind: GeneKind,
    },
    OutsideDomain {
        gene: GeneKind,
        param: Param,
        value: String,
    },
    OutputActivation(Activation),
    OutputUnits(usize),
    SectionTooShort {
        section: &'static str,
        len: usize,
        min: usize,
    },
    SectionTooLong {
        section: &'static str,
        len: usize,
        max: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::S1LacksConv => write!(f, "s1 lacks Conv gene"),
            Violation::WrongSection {
                section,
                position,
                kind,
            } => write!(
                f,
                "{} gene not allowed in {section} (position {position})",
                kind.name()
            ),
            Violation::OutsideDomain { gene, param, value } => write!(
                f,
                "value outside grammar domain: {}.{}={value}",
                gene.name(),
                param.name()
            ),
            Violation::OutputActivation(a) => {
                write!(f, "output activation must be softmax, got {}", a.name())
            }
            Violation::OutputUnits(u) => write!(f, "output units must be at least 2, got {u}"),
            Violation::SectionTooShort { section, len, min } => {
                write!(f, "{section} has {len} genes, fewer than {min}")
            }
            Violation::SectionTooLong { section, len, max } => {
                write!(f, "{section} has {len} genes, more than {max}")
            }
        }
    }
}

fn check_member<T: PartialEq + fmt::Debug>(
    out: &mut Vec<Violation>,
    gene: GeneKind,
    param: Param,
    value: &T,
    domain: &[T],
) {
    if !domain.contains(value) {
        out.push(Violation::OutsideDomain {
            gene,
            param,
            value: format!("{value:?}"),
        });
    }
}

fn check_gene(out: &mut Vec<Violation>, gene: &Gene, grammar: &Grammar) {
    use Param::*;
    let kind = gene.kind();
    match gene {
        Gene::Conv(c) => {
            check_member(out, kind, ConvFilters, &c.filters, &grammar.conv_filters);
            check_member(
                out,
                kind,
                ConvKernelSize,
                &c.kernel_size,
                &grammar.conv_kernel_size,
            );
            check_member(out, kind, ConvStride, &c.stride, &grammar.conv_stride);
            check_member(
                out,
                kind,
                ConvActivation,
                &c.activation,
                &grammar.conv_activation,
            );
            check_member(out, kind, ConvUseBias, &c.use_bias, &grammar.conv_use_bias);
        }
        Gene::Pool(p) => {
            check_member(out, kind, PoolKind, &p.kind, &grammar.pool_kind);
            check_member(out, kind, PoolSize, &p.pool_size, &grammar.pool_size);
            check_member(out, kind, PoolStride, &p.stride, &grammar.pool_stride);
        }
        Gene::Dense(d) => {
            check_member(out, kind, DenseUnits, &d.units, &grammar.dense_units);
            check_member(
                out,
                kind,
                DenseActivation,
                &d.activation,
                &grammar.dense_activation,
            );
            check_member(
                out,
                kind,
                DenseUseBias,
                &d.use_bias,
                &grammar.dense_use_bias,
            );
        }
        Gene::Dropout(d) => {
            if !grammar.dropout_rate.contains(d.rate) {
                out.push(Violation::OutsideDomain {
                    gene: kind,
                    param: DropoutRate,
                    value: d.rate.to_string(),
                });
            }
        }
        Gene::Output(o) => {
            if o.activation != Activation::Softmax {
                out.push(Violation::OutputActivation(o.activation));
            }
            if o.units < 2 {
                out.push(Violation::OutputUnits(o.units));
            }
            check_member(
                out,
                kind,
                OutputUseBias,
                &o.use_bias,
                &grammar.output_use_bias,
            );
        }
        Gene::Optimizer(o) => {
            check_member(
                out,
                kind,
                LearningRate,
                &o.learning_rate,
                &grammar.learning_rate,
            );
            check_member(out, kind, Decay, &o.decay, &grammar.decay);
            check_member(out, kind, Momentum, &o.momentum, &grammar.momentum);
            check_member(out, kind, Nesterov, &o.nesterov, &grammar.nesterov);
        }
        Gene::Flatten => {}
    }
}

/// Returns `Ok(())` when every structural and domain invariant holds,
/// otherwise every violated invariant.
pub fn validate(g: &Genotype, grammar: &Grammar) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    for (i, gene) in g.s1.iter().enumerate() {
        if !matches!(gene.kind(), GeneKind::Conv | GeneKind::Pool) {
            out.push(Violation::WrongSection {
                section: "s1",
                position: i,
                kind: gene.kind(),
            });
        }
        check_gene(&mut out, gene, grammar);
    }
    if !g.s1.iter().any(|x| x.kind() == GeneKind::Conv) {
        out.push(Violation::S1LacksConv);
    }
    for (i, gene) in g.s2.iter().enumerate() {
        if !matches!(gene.kind(), GeneKind::Dense | GeneKind::Dropout) {
            out.push(Violation::WrongSection {
                section: "s2",
                position: i,
                kind: gene.kind(),
            });
        }
        check_gene(&mut out, gene, grammar);
    }
    check_gene(&mut out, &Gene::Output(g.output.clone()), grammar);
    check_gene(&mut out, &Gene::Optimizer(g.optimizer.clone()), grammar);
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Section-size checks against configured limits.
pub fn check_limits(g: &Genotype, limits: &SectionLimits) -> Vec<Violation> {
    let mut out = Vec::new();
    for (section, len, min, max) in [
        ("s1", g.s1.len(), limits.min_s1, limits.max_s1),
        ("s2", g.s2.len(), limits.min_s2, limits.max_s2),
    ] {
        if len < min {
            out.push(Violation::SectionTooShort { section, len, min });
        }
        if len > max {
            out.push(Violation::SectionTooLong { section, len, max });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn default_grammar_is_well_formed() {
        let g = Grammar::default();
        g.check().unwrap();
        assert_eq!(g.dropout_rate, RealRange { min: 0.0, max: 0.7 });
    }

    #[test]
    fn duplicate_domain_rejected() {
        let mut g = Grammar::default();
        g.conv_stride = vec![1, 2, 2];
        assert!(g.check().is_err());
        g.conv_stride = vec![];
        assert!(g.check().is_err());
    }

    #[test]
    fn minimal_limits_give_minimal_genotype() {
        let limits = SectionLimits {
            min_s1: 1,
            max_s1: 1,
            min_s2: 0,
            max_s2: 0,
        };
        let g = random_genotype(&Grammar::default(), 10, &mut rng(3), &limits).unwrap();
        assert_eq!(g.s1.len(), 1);
        assert_eq!(g.s1[0].kind(), GeneKind::Conv);
        assert!(g.s2.is_empty());
        let layers = g.layers();
        assert_eq!(layers.len(), 3);
        assert_eq!(layers[1], Gene::Flatten);
        assert_eq!(g.output.units, 10);
        assert_eq!(g.output.activation, Activation::Softmax);
    }

    #[test]
    fn degenerate_class_count_rejected() {
        let r = random_genotype(
            &Grammar::default(),
            1,
            &mut rng(0),
            &SectionLimits::default(),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn invalid_limits_rejected() {
        let grammar = Grammar::default();
        let bad = [
            SectionLimits {
                min_s1: 0,
                ..Default::default()
            },
            SectionLimits {
                min_s1: 3,
                max_s1: 2,
                ..Default::default()
            },
            SectionLimits {
                min_s2: 4,
                max_s2: 3,
                ..Default::default()
            },
        ];
        for limits in bad {
            assert!(random_genotype(&grammar, 10, &mut rng(0), &limits).is_err());
        }
    }

    #[test]
    fn same_seed_same_genotype() {
        let grammar = Grammar::default();
        let limits = SectionLimits::default();
        let a = random_genotype(&grammar, 10, &mut rng(42), &limits).unwrap();
        let b = random_genotype(&grammar, 10, &mut rng(42), &limits).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_s1_is_reported() {
        let mut g = random_genotype(
            &Grammar::default(),
            10,
            &mut rng(1),
            &SectionLimits::default(),
        )
        .unwrap();
        g.s1.clear();
        let v = validate(&g, &Grammar::default()).unwrap_err();
        assert!(v.contains(&Violation::S1LacksConv));
        assert!(v.iter().any(|x| x.to_string() == "s1 lacks Conv gene"));
    }

    #[test]
    fn kernel_outside_domain_is_reported() {
        let mut g = random_genotype(
            &Grammar::default(),
            10,
            &mut rng(1),
            &SectionLimits::default(),
        )
        .unwrap();
        g.s1.insert(
            0,
            Gene::Conv(ConvGene {
                filters: 32,
                kernel_size: 7,
                stride: 1,
                activation: Activation::Relu,
                use_bias: true,
            }),
        );
        let v = validate(&g, &Grammar::default()).unwrap_err();
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("value outside grammar domain"));
    }

    #[test]
    fn misplaced_and_frozen_genes_are_reported() {
        let mut g = random_genotype(
            &Grammar::default(),
            10,
            &mut rng(2),
            &SectionLimits::default(),
        )
        .unwrap();
        g.s2.push(Gene::Pool(PoolGene {
            kind: PoolKind::Max,
            pool_size: 2,
            stride: 1,
        }));
        g.output.activation = Activation::Relu;
        g.optimizer.momentum = 0.3;
        let v = validate(&g, &Grammar::default()).unwrap_err();
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn limits_check() {
        let g = random_genotype(
            &Grammar::default(),
            10,
            &mut rng(5),
            &SectionLimits::default(),
        )
        .unwrap();
        assert!(check_limits(&g, &SectionLimits::default()).is_empty());
        let tight = SectionLimits {
            min_s1: 1,
            max_s1: 1,
            min_s2: 0,
            max_s2: 0,
        };
        if g.s1.len() > 1 || !g.s2.is_empty() {
            assert!(!check_limits(&g, &tight).is_empty());
        }
    }
}
