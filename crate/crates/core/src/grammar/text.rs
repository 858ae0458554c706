//! Line-oriented genotype records.
//!
//! ```text
//! genotype id=3f2a9c0d11e4b7a0 parent=-
//! conv filters=32 kernel_size=3 stride=1 activation=relu use_bias=true
//! pool type=max pool_size=2 stride=2
//! flatten
//! dense units=64 activation=elu use_bias=false
//! dropout rate=0.2718281828
//! output units=10 activation=softmax use_bias=true
//! optimizer learning_rate=0.01 decay=0.0001 momentum=0.9 nesterov=false
//! end
//! ```
//!
//! Genes before `flatten` belong to `s1`, genes after it to `s2`. Reals are
//! written in shortest round-trip form, so parsing restores them bit-exactly.
//! A genotype log is a concatenation of records; blank lines and lines
//! starting with `#` are ignored.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::{
    ConvGene, DenseGene, DropoutGene, Gene, Genotype, GenotypeId, OptimizerGene, OutputGene,
    PoolGene,
};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct TextError {
    /// 1-based line number where the problem was detected.
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, TextError> {
    Err(TextError {
        line,
        message: message.into(),
    })
}

fn write_gene(f: &mut fmt::Formatter<'_>, gene: &Gene) -> fmt::Result {
    match gene {
        Gene::Conv(c) => writeln!(
            f,
            "conv filters={} kernel_size={} stride={} activation={} use_bias={}",
            c.filters,
            c.kernel_size,
            c.stride,
            c.activation.name(),
            c.use_bias
        ),
        Gene::Pool(p) => writeln!(
            f,
            "pool type={} pool_size={} stride={}",
            p.kind.name(),
            p.pool_size,
            p.stride
        ),
        Gene::Dense(d) => writeln!(
            f,
            "dense units={} activation={} use_bias={}",
            d.units,
            d.activation.name(),
            d.use_bias
        ),
        Gene::Dropout(d) => writeln!(f, "dropout rate={}", d.rate),
        Gene::Flatten => writeln!(f, "flatten"),
        Gene::Output(o) => writeln!(
            f,
            "output units={} activation={} use_bias={}",
            o.units,
            o.activation.name(),
            o.use_bias
        ),
        Gene::Optimizer(o) => writeln!(
            f,
            "optimizer learning_rate={} decay={} momentum={} nesterov={}",
            o.learning_rate, o.decay, o.momentum, o.nesterov
        ),
    }
}

struct Genes<'a>(&'a Genotype);

impl fmt::Display for Genes<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for gene in self.0.layers() {
            write_gene(f, &gene)?;
        }
        write_gene(f, &Gene::Optimizer(self.0.optimizer.clone()))
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.parent {
            Some(p) => writeln!(f, "genotype id={} parent={p}", self.id)?,
            None => writeln!(f, "genotype id={} parent=-", self.id)?,
        }
        Genes(self).fmt(f)?;
        writeln!(f, "end")
    }
}

impl Genotype {
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    /// Gene lines only, without lineage header. Two genotypes with equal genes
    /// have equal canonical text.
    pub fn canonical_text(&self) -> String {
        Genes(self).to_string()
    }
}

impl FromStr for Genotype {
    type Err = TextError;

    fn from_str(s: &str) -> Result<Self, TextError> {
        parse_genotype(s)
    }
}

/// Parses exactly one genotype record.
pub fn parse_genotype(text: &str) -> Result<Genotype, TextError> {
    let mut all = parse_genotype_log(text)?;
    match all.len() {
        0 => err(1, "empty input: expected a genotype record"),
        1 => Ok(all.remove(0)),
        n => err(1, format!("expected one genotype record, found {n}")),
    }
}

/// Parses a sequence of genotype records.
pub fn parse_genotype_log(text: &str) -> Result<Vec<Genotype>, TextError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .peekable();
    let mut out = Vec::new();
    while lines.peek().is_some() {
        out.push(parse_record(&mut lines, text.lines().count())?);
    }
    Ok(out)
}

struct Fields<'a> {
    line: usize,
    kind: &'a str,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn split(line: usize, raw: &'a str) -> Result<Self, TextError> {
        let mut tokens = raw.split_whitespace();
        let kind = tokens.next().unwrap_or_default();
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for tok in tokens {
            let Some((k, v)) = tok.split_once('=') else {
                return err(line, format!("expected key=value, found `{tok}`"));
            };
            if pairs.iter().any(|(pk, _)| *pk == k) {
                return err(line, format!("duplicate field `{k}` in {kind} line"));
            }
            pairs.push((k, v));
        }
        Ok(Fields { line, kind, pairs })
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<T, TextError>
    where
        T::Err: fmt::Display,
    {
        let Some(pos) = self.pairs.iter().position(|(k, _)| *k == key) else {
            return err(
                self.line,
                format!("missing field `{key}` in {} line", self.kind),
            );
        };
        let (_, v) = self.pairs.remove(pos);
        v.parse::<T>().map_err(|e| TextError {
            line: self.line,
            message: format!("invalid value for `{key}`: `{v}` ({e})"),
        })
    }

    fn finish(self) -> Result<(), TextError> {
        match self.pairs.first() {
            Some((k, _)) => err(
                self.line,
                format!("unknown field `{k}` in {} line", self.kind),
            ),
            None => Ok(()),
        }
    }
}

fn parse_parent(v: &str) -> Result<Option<GenotypeId>, String> {
    if v == "-" {
        Ok(None)
    } else {
        v.parse().map(Some)
    }
}

struct ParentField(Option<GenotypeId>);

impl FromStr for ParentField {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        parse_parent(s).map(ParentField)
    }
}

fn parse_gene(mut f: Fields<'_>) -> Result<Gene, TextError> {
    let gene = match f.kind {
        "conv" => Gene::Conv(ConvGene {
            filters: f.take("filters")?,
            kernel_size: f.take("kernel_size")?,
            stride: f.take("stride")?,
            activation: f.take("activation")?,
            use_bias: f.take("use_bias")?,
        }),
        "pool" => Gene::Pool(PoolGene {
            kind: f.take("type")?,
            pool_size: f.take("pool_size")?,
            stride: f.take("stride")?,
        }),
        "dense" => Gene::Dense(DenseGene {
            units: f.take("units")?,
            activation: f.take("activation")?,
            use_bias: f.take("use_bias")?,
        }),
        "dropout" => Gene::Dropout(DropoutGene {
            rate: f.take("rate")?,
        }),
        "flatten" => Gene::Flatten,
        "output" => Gene::Output(OutputGene {
            units: f.take("units")?,
            activation: f.take("activation")?,
            use_bias: f.take("use_bias")?,
        }),
        "optimizer" => Gene::Optimizer(OptimizerGene {
            learning_rate: f.take("learning_rate")?,
            decay: f.take("decay")?,
            momentum: f.take("momentum")?,
            nesterov: f.take("nesterov")?,
        }),
        other => return err(f.line, format!("unknown gene kind `{other}`")),
    };
    f.finish()?;
    Ok(gene)
}

fn parse_record<'a, I>(
    lines: &mut std::iter::Peekable<I>,
    last_line: usize,
) -> Result<Genotype, TextError>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    let (hline, header) = lines.next().expect("caller checked for a line");
    let mut h = Fields::split(hline, header)?;
    if h.kind != "genotype" {
        return err(
            hline,
            format!("expected `genotype` header, found `{}`", h.kind),
        );
    }
    let id: GenotypeId = h.take("id")?;
    let parent: ParentField = h.take("parent")?;
    h.finish()?;

    let mut s1 = Vec::new();
    let mut s2 = Vec::new();
    let mut seen_flatten = false;
    let mut output = None;
    let mut optimizer = None;

    loop {
        let Some((line, raw)) = lines.next() else {
            let missing = if !seen_flatten {
                "flatten gene"
            } else if output.is_none() {
                "output gene"
            } else if optimizer.is_none() {
                "optimizer gene"
            } else {
                "`end` line"
            };
            return err(
                last_line.max(1),
                format!("truncated record for genotype {id}: missing {missing}"),
            );
        };
        if raw == "end" {
            break;
        }
        let fields = Fields::split(line, raw)?;
        if fields.kind == "genotype" {
            return err(
                line,
                format!("record for genotype {id} not terminated by `end`"),
            );
        }
        let gene = parse_gene(fields)?;
        match gene {
            Gene::Flatten if seen_flatten => return err(line, "second flatten gene"),
            Gene::Flatten => seen_flatten = true,
            Gene::Output(_) | Gene::Optimizer(_) if !seen_flatten => {
                return err(line, "output and optimizer genes must follow flatten")
            }
            Gene::Output(o) => {
                if output.is_some() {
                    return err(line, "second output gene");
                }
                output = Some(o);
            }
            Gene::Optimizer(o) => {
                if output.is_none() {
                    return err(line, "optimizer gene must follow the output gene");
                }
                if optimizer.is_some() {
                    return err(line, "second optimizer gene");
                }
                optimizer = Some(o);
            }
            g if output.is_some() => {
                return err(line, format!("{} gene after output gene", g.kind().name()))
            }
            g if seen_flatten => s2.push(g),
            g => s1.push(g),
        }
    }

    let (Some(output), Some(optimizer)) = (output, optimizer) else {
        let missing = if !seen_flatten {
            "flatten gene"
        } else {
            "output or optimizer gene"
        };
        return err(
            last_line.max(1),
            format!("record for genotype {id} is missing its {missing}"),
        );
    };
    Ok(Genotype {
        id,
        parent: parent.0,
        s1,
        s2,
        output,
        optimizer,
    })
}
