//! The three mutation operator families. Each application yields a child
//! genotype (fresh id, parent set) that differs from its parent by one
//! structural or parametric step; together they define the neighbourhood
//! of the fitness landscape.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{validate, Gene, GeneKind, Genotype, Grammar, Param, SectionLimits};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MutationKind {
    Learning,
    Parameters,
    Topology,
}

impl MutationKind {
    pub const ALL: [MutationKind; 3] = [
        MutationKind::Learning,
        MutationKind::Parameters,
        MutationKind::Topology,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MutationKind::Learning => "learning",
            MutationKind::Parameters => "parameters",
            MutationKind::Topology => "topology",
        }
    }
}

impl fmt::Display for MutationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MutationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "learning" => Ok(MutationKind::Learning),
            "parameters" => Ok(MutationKind::Parameters),
            "topology" => Ok(MutationKind::Topology),
            other => Err(format!("unknown mutation kind `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    S1,
    S2,
}

impl Section {
    fn other(self) -> Section {
        match self {
            Section::S1 => Section::S2,
            Section::S2 => Section::S1,
        }
    }

    fn kinds(self) -> [GeneKind; 2] {
        match self {
            Section::S1 => [GeneKind::Conv, GeneKind::Pool],
            Section::S2 => [GeneKind::Dense, GeneKind::Dropout],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TopologyAction {
    Add,
    Delete,
}

impl TopologyAction {
    fn other(self) -> TopologyAction {
        match self {
            TopologyAction::Add => TopologyAction::Delete,
            TopologyAction::Delete => TopologyAction::Add,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TopologyMove {
    pub action: TopologyAction,
    pub section: Section,
}

/// Gene positions a deletion may remove. Removing the last Conv of s1 is not allowed.
fn deletable(g: &Genotype, section: Section) -> Vec<usize> {
    match section {
        Section::S1 => {
            let convs = g.s1.iter().filter(|x| x.kind() == GeneKind::Conv).count();
            (0..g.s1.len())
                .filter(|&i| g.s1[i].kind() != GeneKind::Conv || convs > 1)
                .collect()
        }
        Section::S2 => (0..g.s2.len()).collect(),
    }
}

fn is_legal(g: &Genotype, mv: TopologyMove, limits: &SectionLimits) -> bool {
    let (len, min, max) = match mv.section {
        Section::S1 => (g.s1.len(), limits.min_s1, limits.max_s1),
        Section::S2 => (g.s2.len(), limits.min_s2, limits.max_s2),
    };
    match mv.action {
        TopologyAction::Add => len < max,
        TopologyAction::Delete => len > min && !deletable(g, mv.section).is_empty(),
    }
}

/// Applies `requested` if legal, otherwise the first legal move among: the other
/// action on the same section, the same action on the other section, the other
/// action on the other section. Returns the child and the move actually applied.
pub fn apply_topology_move<R: Rng + ?Sized>(
    g: &Genotype,
    requested: TopologyMove,
    grammar: &Grammar,
    rng: &mut R,
    limits: &SectionLimits,
) -> Result<(Genotype, TopologyMove)> {
    let candidates = [
        requested,
        TopologyMove {
            action: requested.action.other(),
            section: requested.section,
        },
        TopologyMove {
            action: requested.action,
            section: requested.section.other(),
        },
        TopologyMove {
            action: requested.action.other(),
            section: requested.section.other(),
        },
    ];
    let Some(mv) = candidates.into_iter().find(|m| is_legal(g, *m, limits)) else {
        return Err(Error::Mutation(format!(
            "no legal topology move for genotype {} (s1={}, s2={})",
            g.id,
            g.s1.len(),
            g.s2.len()
        )));
    };

    let mut child = g.child(rng);
    match mv.action {
        TopologyAction::Add => {
            let kind = *mv.section.kinds().choose(rng).expect("two kinds");
            let gene = grammar.random_gene(kind, rng);
            let genes = match mv.section {
                Section::S1 => &mut child.s1,
                Section::S2 => &mut child.s2,
            };
            let at = rng.gen_range(0..=genes.len());
            genes.insert(at, gene);
        }
        TopologyAction::Delete => {
            let at = *deletable(g, mv.section).choose(rng).expect("legal delete");
            match mv.section {
                Section::S1 => child.s1.remove(at),
                Section::S2 => child.s2.remove(at),
            };
        }
    }
    Ok((child, mv))
}

/// Inserts or removes one gene of s1 or s2. Add and delete are equally likely
/// and so are the two sections; a move blocked by the limits is re-routed.
pub fn mutate_topology<R: Rng + ?Sized>(
    g: &Genotype,
    grammar: &Grammar,
    rng: &mut R,
    limits: &SectionLimits,
) -> Result<Genotype> {
    let action = if rng.gen_bool(0.5) {
        TopologyAction::Add
    } else {
        TopologyAction::Delete
    };
    let section = if rng.gen_bool(0.5) {
        Section::S1
    } else {
        Section::S2
    };
    apply_topology_move(g, TopologyMove { action, section }, grammar, rng, limits).map(|(c, _)| c)
}

/// Location of a gene that parameter mutation may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneSlot {
    S1(usize),
    S2(usize),
    Output,
}

fn resample<R: Rng + ?Sized>(gene: &mut Gene, p: Param, grammar: &Grammar, rng: &mut R) {
    if let Gene::Dropout(d) = gene {
        let old = d.rate;
        loop {
            let new = grammar.random_dropout_rate(rng);
            if (new - old).abs() > 1e-9 {
                d.rate = new;
                return;
            }
        }
    }
    let len = grammar
        .domain_len(p)
        .expect("only the dropout rate is continuous");
    let current = grammar.value_index(gene, p);
    let choices: Vec<usize> = (0..len).filter(|&i| Some(i) != current).collect();
    let idx = *choices
        .choose(rng)
        .expect("mutable parameter has another value");
    grammar.set_value_index(gene, p, idx);
}

fn mutable_params(gene: &Gene, grammar: &Grammar) -> Vec<Param> {
    gene.params()
        .iter()
        .copied()
        .filter(|p| grammar.is_mutable(*p))
        .collect()
}

/// Resamples parameter `param` of the gene at `slot` to a different domain value.
pub fn mutate_parameter_at<R: Rng + ?Sized>(
    g: &Genotype,
    slot: GeneSlot,
    param: Param,
    grammar: &Grammar,
    rng: &mut R,
) -> Genotype {
    let mut child = g.child(rng);
    match slot {
        GeneSlot::S1(i) => resample(&mut child.s1[i], param, grammar, rng),
        GeneSlot::S2(i) => resample(&mut child.s2[i], param, grammar, rng),
        GeneSlot::Output => {
            let mut gene = Gene::Output(child.output.clone());
            resample(&mut gene, param, grammar, rng);
            if let Gene::Output(o) = gene {
                child.output = o;
            }
        }
    }
    child
}

/// Resamples exactly one parameter of one uniformly chosen s1, s2 or Output gene.
/// The Output gene only exposes `use_bias`; the Optimizer gene is left to
/// learning mutation.
pub fn mutate_parameters<R: Rng + ?Sized>(
    g: &Genotype,
    grammar: &Grammar,
    rng: &mut R,
) -> Genotype {
    let output = Gene::Output(g.output.clone());
    let slots: Vec<(GeneSlot, Vec<Param>)> =
        g.s1.iter()
            .enumerate()
            .map(|(i, x)| (GeneSlot::S1(i), mutable_params(x, grammar)))
            .chain(
                g.s2.iter()
                    .enumerate()
                    .map(|(i, x)| (GeneSlot::S2(i), mutable_params(x, grammar))),
            )
            .chain(std::iter::once((
                GeneSlot::Output,
                mutable_params(&output, grammar),
            )))
            .filter(|(_, ps)| !ps.is_empty())
            .collect();
    let (slot, params) = slots
        .choose(rng)
        .expect("output bias is always mutable under a two-valued domain");
    let param = *params.choose(rng).expect("non-empty");
    mutate_parameter_at(g, *slot, param, grammar, rng)
}

/// Resamples one optimizer parameter.
pub fn mutate_optimizer_param<R: Rng + ?Sized>(
    g: &Genotype,
    param: Param,
    grammar: &Grammar,
    rng: &mut R,
) -> Genotype {
    let mut child = g.child(rng);
    let mut gene = Gene::Optimizer(child.optimizer.clone());
    resample(&mut gene, param, grammar, rng);
    if let Gene::Optimizer(o) = gene {
        child.optimizer = o;
    }
    child
}

/// Resamples one uniformly chosen field of the Optimizer gene.
pub fn mutate_learning<R: Rng + ?Sized>(g: &Genotype, grammar: &Grammar, rng: &mut R) -> Genotype {
    let params: Vec<Param> = Param::OPTIMIZER
        .into_iter()
        .filter(|p| grammar.is_mutable(*p))
        .collect();
    let param = *params
        .choose(rng)
        .expect("grammar leaves no mutable optimizer parameter");
    mutate_optimizer_param(g, param, grammar, rng)
}

/// Applies the operator for `kind`. Every call mutates.
pub fn mutate<R: Rng + ?Sized>(
    g: &Genotype,
    kind: MutationKind,
    grammar: &Grammar,
    rng: &mut R,
    limits: &SectionLimits,
) -> Result<Genotype> {
    match kind {
        MutationKind::Topology => mutate_topology(g, grammar, rng, limits),
        MutationKind::Parameters => Ok(mutate_parameters(g, grammar, rng)),
        MutationKind::Learning => Ok(mutate_learning(g, grammar, rng)),
    }
}

/// What separates a child from its parent, as seen by the neighbourhood
/// definitions of the three operators.
#[derive(Clone, Debug, PartialEq)]
pub enum Delta {
    /// Exactly one optimizer field changed.
    Optimizer(Param),
    /// Exactly one field of one s1/s2/Output gene changed.
    Parameter(GeneSlot, Param),
    /// One gene inserted into or removed from a section.
    Topology(Section, TopologyAction),
    /// Anything else, including no change at all.
    Other,
}

fn changed_params(a: &Gene, b: &Gene) -> Option<Vec<Param>> {
    if a.kind() != b.kind() {
        return None;
    }
    Some(
        a.params()
            .iter()
            .copied()
            .filter(|&p| !a.same_param(b, p))
            .collect(),
    )
}

/// `true` when `longer` equals `shorter` with one element inserted.
fn one_insertion(shorter: &[Gene], longer: &[Gene]) -> bool {
    if longer.len() != shorter.len() + 1 {
        return false;
    }
    let prefix = shorter
        .iter()
        .zip(longer)
        .take_while(|(a, b)| a == b)
        .count();
    shorter[prefix..] == longer[prefix + 1..]
}

/// Classifies the difference between `parent` and `child`.
pub fn classify_delta(parent: &Genotype, child: &Genotype) -> Delta {
    let s1_same = parent.s1 == child.s1;
    let s2_same = parent.s2 == child.s2;
    let out_same = parent.output == child.output;
    let opt_same = parent.optimizer == child.optimizer;

    if s1_same && s2_same && out_same && !opt_same {
        let a = Gene::Optimizer(parent.optimizer.clone());
        let b = Gene::Optimizer(child.optimizer.clone());
        return match changed_params(&a, &b).as_deref() {
            Some([p]) => Delta::Optimizer(*p),
            _ => Delta::Other,
        };
    }
    if !opt_same || !out_same && !(s1_same && s2_same) {
        return Delta::Other;
    }
    if !out_same {
        let a = Gene::Output(parent.output.clone());
        let b = Gene::Output(child.output.clone());
        return match changed_params(&a, &b).as_deref() {
            Some([p])
                if parent.output.units == child.output.units
                    && parent.output.activation == child.output.activation =>
            {
                Delta::Parameter(GeneSlot::Output, *p)
            }
            _ => Delta::Other,
        };
    }
    let topo = |section, a: &[Gene], b: &[Gene]| {
        if one_insertion(a, b) {
            Some(Delta::Topology(section, TopologyAction::Add))
        } else if one_insertion(b, a) {
            Some(Delta::Topology(section, TopologyAction::Delete))
        } else {
            None
        }
    };
    let param = |a: &[Gene], b: &[Gene], slot: fn(usize) -> GeneSlot| {
        if a.len() != b.len() {
            return None;
        }
        let diffs: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        let [i] = diffs[..] else { return None };
        match changed_params(&a[i], &b[i]).as_deref() {
            Some([p]) => Some(Delta::Parameter(slot(i), *p)),
            _ => None,
        }
    };
    match (s1_same, s2_same) {
        (true, true) => Delta::Other,
        (false, true) => topo(Section::S1, &parent.s1, &child.s1)
            .or_else(|| param(&parent.s1, &child.s1, GeneSlot::S1))
            .unwrap_or(Delta::Other),
        (true, false) => topo(Section::S2, &parent.s2, &child.s2)
            .or_else(|| param(&parent.s2, &child.s2, GeneSlot::S2))
            .unwrap_or(Delta::Other),
        (false, false) => Delta::Other,
    }
}

/// `true` when `child` is valid and one application of `kind` away from `parent`.
pub fn is_neighbor(
    parent: &Genotype,
    child: &Genotype,
    kind: MutationKind,
    grammar: &Grammar,
) -> bool {
    validate(child, grammar).is_ok()
        && matches!(
            (kind, classify_delta(parent, child)),
            (MutationKind::Learning, Delta::Optimizer(_))
                | (MutationKind::Parameters, Delta::Parameter(..))
                | (MutationKind::Topology, Delta::Topology(..))
        )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{
        random_genotype, validate, Activation, ConvGene, GenotypeId, OptimizerGene, OutputGene,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn minimal() -> Genotype {
        Genotype {
            id: GenotypeId(1),
            parent: None,
            s1: vec![Gene::Conv(ConvGene {
                filters: 32,
                kernel_size: 3,
                stride: 1,
                activation: Activation::Relu,
                use_bias: true,
            })],
            s2: vec![],
            output: OutputGene {
                units: 10,
                activation: Activation::Softmax,
                use_bias: true,
            },
            optimizer: OptimizerGene {
                learning_rate: 0.01,
                decay: 0.001,
                momentum: 0.9,
                nesterov: false,
            },
        }
    }

    #[test]
    fn blocked_s1_delete_reroutes_to_add() {
        let g = minimal();
        let req = TopologyMove {
            action: TopologyAction::Delete,
            section: Section::S1,
        };
        let (child, applied) = apply_topology_move(
            &g,
            req,
            &Grammar::default(),
            &mut rng(0),
            &SectionLimits::default(),
        )
        .unwrap();
        assert_eq!(applied.action, TopologyAction::Add);
        assert_eq!(applied.section, Section::S1);
        assert_eq!(child.s1.len(), 2);
    }

    #[test]
    fn no_legal_move_is_an_error() {
        let limits = SectionLimits {
            min_s1: 1,
            max_s1: 1,
            min_s2: 0,
            max_s2: 0,
        };
        let r = mutate_topology(&minimal(), &Grammar::default(), &mut rng(0), &limits);
        assert!(matches!(r, Err(Error::Mutation(_))));
    }

    #[test]
    fn topology_changes_gene_count_by_one() {
        let grammar = Grammar::default();
        let limits = SectionLimits::default();
        let mut r = rng(11);
        for _ in 0..500 {
            let g = random_genotype(&grammar, 10, &mut r, &limits).unwrap();
            let c = mutate_topology(&g, &grammar, &mut r, &limits).unwrap();
            assert_eq!(g.gene_count().abs_diff(c.gene_count()), 1);
            assert!(matches!(classify_delta(&g, &c), Delta::Topology(..)));
        }
    }

    #[test]
    fn seeded_mutation_is_deterministic() {
        let grammar = Grammar::default();
        let limits = SectionLimits::default();
        let g = random_genotype(&grammar, 10, &mut rng(1), &limits).unwrap();
        for kind in MutationKind::ALL {
            let a = mutate(&g, kind, &grammar, &mut rng(7), &limits).unwrap();
            let b = mutate(&g, kind, &grammar, &mut rng(7), &limits).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn forced_stride_change_is_uniform_over_other_values() {
        let grammar = Grammar::default();
        let g = minimal();
        let mut r = rng(5);
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            let c = mutate_parameter_at(&g, GeneSlot::S1(0), Param::ConvStride, &grammar, &mut r);
            let Gene::Conv(conv) = &c.s1[0] else { panic!() };
            counts[conv.stride] += 1;
            assert_eq!(c.optimizer, g.optimizer);
        }
        assert_eq!(counts[1], 0);
        let frac = counts[2] as f64 / 4000.0;
        assert!((frac - 0.5).abs() < 0.03, "{counts:?}");
    }

    #[test]
    fn output_mutation_only_flips_bias() {
        let grammar = Grammar::default();
        let g = minimal();
        let c = mutate_parameter_at(
            &g,
            GeneSlot::Output,
            Param::OutputUseBias,
            &grammar,
            &mut rng(0),
        );
        assert_eq!(c.output.units, 10);
        assert_eq!(c.output.activation, Activation::Softmax);
        assert!(!c.output.use_bias);
    }

    #[test]
    fn forced_learning_rate_change_stays_in_domain() {
        let grammar = Grammar::default();
        let g = minimal();
        let mut r = rng(9);
        for _ in 0..200 {
            let c = mutate_optimizer_param(&g, Param::LearningRate, &grammar, &mut r);
            assert!([0.001, 0.0001, 0.00001].contains(&c.optimizer.learning_rate));
            assert_eq!(c.s1, g.s1);
            assert_eq!(c.s2, g.s2);
            assert_eq!(c.output, g.output);
        }
    }

    #[test]
    fn dropout_resample_moves() {
        let grammar = Grammar::default();
        let mut g = minimal();
        g.s2.push(Gene::Dropout(crate::grammar::DropoutGene { rate: 0.3 }));
        let mut r = rng(2);
        for _ in 0..100 {
            let c = mutate_parameter_at(&g, GeneSlot::S2(0), Param::DropoutRate, &grammar, &mut r);
            let Gene::Dropout(d) = &c.s2[0] else { panic!() };
            assert!((d.rate - 0.3).abs() > 1e-9);
            assert!((0.0..=0.7).contains(&d.rate));
        }
    }

    #[test]
    fn children_are_valid_and_local() {
        let grammar = Grammar::default();
        let limits = SectionLimits::default();
        let mut r = rng(77);
        for kind in MutationKind::ALL {
            for _ in 0..300 {
                let g = random_genotype(&grammar, 10, &mut r, &limits).unwrap();
                let c = mutate(&g, kind, &grammar, &mut r, &limits).unwrap();
                assert!(validate(&c, &grammar).is_ok());
                assert!(is_neighbor(&g, &c, kind, &grammar), "{kind}: {g}\n{c}");
                assert_eq!(c.parent, Some(g.id));
            }
        }
    }

    #[test]
    fn delta_detects_non_neighbors() {
        let g = minimal();
        assert_eq!(classify_delta(&g, &g), Delta::Other);
        let mut two = g.clone();
        two.optimizer.momentum = 0.5;
        two.optimizer.decay = 0.01;
        assert_eq!(classify_delta(&g, &two), Delta::Other);
        let mut cross = g.clone();
        cross.optimizer.momentum = 0.5;
        cross.output.use_bias = false;
        assert_eq!(classify_delta(&g, &cross), Delta::Other);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MutationKind::ALL {
            assert_eq!(k.name().parse::<MutationKind>().unwrap(), k);
        }
    }
}
