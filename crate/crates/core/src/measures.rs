//! Landscape measures over walk fitness series: autocorrelation with the
//! 0.15 ruggedness threshold, and the entropic measure of ruggedness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("autocorrelation is undefined for a constant series")]
    ZeroVariance,
    #[error("step k={k} must satisfy 1 <= k < {len} (series length)")]
    Step { k: usize, len: usize },
    #[error("series needs at least 2 values, got {0}")]
    TooShort(usize),
    #[error("series value at index {0} is not finite")]
    NonFinite(usize),
}

/// Default ruggedness threshold on autocorrelation.
pub const THRESHOLD: f64 = 0.15;
/// Autocorrelation steps reported by default.
pub const STEPS: [usize; 4] = [1, 2, 3, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

/// Fitness values along one walk. Penalty sentinels count as large finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct FitnessSeries {
    values: Vec<f64>,
    pub walk: usize,
    pub split: Split,
}

impl FitnessSeries {
    pub fn new(values: Vec<f64>, walk: usize, split: Split) -> Result<Self, MeasureError> {
        if values.len() < 2 {
            return Err(MeasureError::TooShort(values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MeasureError::NonFinite(i));
        }
        Ok(FitnessSeries {
            values,
            walk,
            split,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Sample autocorrelation at lag `k` with the one-sigma estimator
/// `Σ_{t<len-k} (f_t - m)(f_{t+k} - m) / Σ_t (f_t - m)²`.
pub fn autocorrelation(f: &[f64], k: usize) -> Result<f64, MeasureError> {
    if k == 0 || k >= f.len() {
        return Err(MeasureError::Step { k, len: f.len() });
    }
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    let den: f64 = f.iter().map(|v| (v - mean).powi(2)).sum();
    if den == 0.0 || f.iter().all(|&v| v == f[0]) {
        return Err(MeasureError::ZeroVariance);
    }
    let num: f64 = f
        .windows(k + 1)
        .map(|w| (w[0] - mean) * (w[k] - mean))
        .sum();
    Ok(num / den)
}

/// Five-number summary; quartiles by linear interpolation between order statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boxplot {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile at position `q·(n−1)` of the sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Boxplot {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Boxplot> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Boxplot {
            min: s[0],
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Smooth,
    Uncertain,
    Hard,
}

impl Classification {
    pub fn name(self) -> &'static str {
        match self {
            Classification::Smooth => "smooth",
            Classification::Uncertain => "uncertain",
            Classification::Hard => "hard",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Smooth if the whole box lies above `threshold`, hard if it lies below,
/// uncertain otherwise. An empty list is uncertain.
pub fn classify(rho: &[f64], threshold: f64) -> Classification {
    match Boxplot::of(rho) {
        Some(b) if b.q1 > threshold => Classification::Smooth,
        Some(b) if b.q3 < threshold => Classification::Hard,
        _ => Classification::Uncertain,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Step {
    Down,
    Flat,
    Up,
}

impl Step {
    pub fn value(self) -> i8 {
        match self {
            Step::Down => -1,
            Step::Flat => 0,
            Step::Up => 1,
        }
    }

    fn index(self) -> usize {
        (self.value() + 1) as usize
    }
}

/// Encodes each consecutive difference as down (`< −ε`), flat (`|d| ≤ ε`) or up (`> ε`).
pub fn encode_steps(f: &[f64], epsilon: f64) -> Vec<Step> {
    f.windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            if d < -epsilon {
                Step::Down
            } else if d > epsilon {
                Step::Up
            } else {
                Step::Flat
            }
        })
        .collect()
}

/// Base-6 entropy of the unequal consecutive symbol pairs. Strings shorter
/// than two symbols have no pairs and entropy 0.
pub fn entropy(symbols: &[Step]) -> f64 {
    if symbols.len() < 2 {
        return 0.0;
    }
    let mut counts = [[0usize; 3]; 3];
    for w in symbols.windows(2) {
        counts[w[0].index()][w[1].index()] += 1;
    }
    let n = (symbols.len() - 1) as f64;
    let mut h = 0.0;
    for (p, row) in counts.iter().enumerate() {
        for (q, &c) in row.iter().enumerate() {
            if p != q && c > 0 {
                let pr = c as f64 / n;
                h -= pr * pr.log(6.0);
            }
        }
    }
    h
}

/// Largest absolute consecutive difference: the smallest ε that encodes the
/// series as all-flat.
pub fn information_stability(f: &[f64]) -> f64 {
    f.windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max)
}

/// Fractions of ε* at which H(ε) is sampled.
pub const SCHEDULE: [f64; 9] = [
    0.0,
    1.0 / 128.0,
    1.0 / 64.0,
    1.0 / 32.0,
    1.0 / 16.0,
    1.0 / 8.0,
    1.0 / 4.0,
    1.0 / 2.0,
    1.0,
];

pub fn epsilon_schedule(epsilon_star: f64) -> [f64; 9] {
    SCHEDULE.map(|s| s * epsilon_star)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// ε* of each walk.
    pub epsilon_star: Vec<f64>,
    /// H(ε) per walk, one value per schedule point.
    pub h_curve: Vec<[f64; 9]>,
    /// Mean of `h_curve` across walks at each schedule point.
    pub h_bar: [f64; 9],
    /// Maximum of `h_bar`.
    pub r_f: f64,
}

/// Entropy curves over the ε schedule; each walk uses its own ε*.
/// An empty walk list yields R_f = 0.
pub fn emr_report<S: AsRef<[f64]>>(walks: &[S]) -> EntropyReport {
    let mut epsilon_star = Vec::with_capacity(walks.len());
    let mut h_curve = Vec::with_capacity(walks.len());
    for w in walks {
        let f = w.as_ref();
        let es = information_stability(f);
        epsilon_star.push(es);
        h_curve.push(epsilon_schedule(es).map(|e| entropy(&encode_steps(f, e))));
    }
    let mut h_bar = [0.0; 9];
    if !h_curve.is_empty() {
        for (i, slot) in h_bar.iter_mut().enumerate() {
            *slot = h_curve.iter().map(|h| h[i]).sum::<f64>() / h_curve.len() as f64;
        }
    }
    let r_f = h_bar.iter().copied().fold(0.0, f64::max);
    EntropyReport {
        epsilon_star,
        h_curve,
        h_bar,
        r_f,
    }
}

/// Autocorrelation values of one step size across walks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub k: usize,
    /// `(walk index, ρ̂(k))` for every walk where it is defined.
    pub values: Vec<(usize, f64)>,
    /// Walks skipped because ρ̂ is undefined for them.
    pub undefined: Vec<usize>,
    pub boxplot: Option<Boxplot>,
    pub classification: Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutocorrelationReport {
    pub threshold: f64,
    pub steps: Vec<StepReport>,
}

impl AutocorrelationReport {
    pub fn step(&self, k: usize) -> Option<&StepReport> {
        self.steps.iter().find(|s| s.k == k)
    }
}

/// ρ̂(k) per walk for each `k`, with boxplot and classification. Walks with
/// constant fitness or fewer than `k + 1` values are listed as undefined.
pub fn autocorrelation_report<S: AsRef<[f64]>>(
    walks: &[S],
    steps: &[usize],
    threshold: f64,
) -> AutocorrelationReport {
    let steps = steps
        .iter()
        .map(|&k| {
            let mut values = Vec::new();
            let mut undefined = Vec::new();
            for (i, w) in walks.iter().enumerate() {
                match autocorrelation(w.as_ref(), k) {
                    Ok(r) => values.push((i, r)),
                    Err(_) => undefined.push(i),
                }
            }
            let rho: Vec<f64> = values.iter().map(|v| v.1).collect();
            StepReport {
                k,
                boxplot: Boxplot::of(&rho),
                classification: classify(&rho, threshold),
                values,
                undefined,
            }
        })
        .collect();
    AutocorrelationReport { threshold, steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_series_autocorrelation() {
        let f: Vec<f64> = (1..=31).map(f64::from).collect();
        // numerator Σ_{t=0}^{29} (t-15)(t-14) = 2240, denominator Σ (t-15)² = 2480
        let r = autocorrelation(&f, 1).unwrap();
        assert!((r - 2240.0 / 2480.0).abs() < 1e-12);
        assert!((r - 0.9032).abs() < 5e-5);
    }

    #[test]
    fn alternating_series_signs() {
        let f: Vec<f64> = (0..31).map(|i| (i % 2) as f64).collect();
        assert!(autocorrelation(&f, 1).unwrap() < 0.0);
        assert!(autocorrelation(&f, 2).unwrap() > 0.0);
    }

    #[test]
    fn undefined_inputs() {
        assert_eq!(
            autocorrelation(&[3.0; 5], 1),
            Err(MeasureError::ZeroVariance)
        );
        assert_eq!(
            autocorrelation(&[1.0, 2.0], 2),
            Err(MeasureError::Step { k: 2, len: 2 })
        );
        assert!(autocorrelation(&[1.0, 2.0], 0).is_err());
        assert!(FitnessSeries::new(vec![1.0], 0, Split::Train).is_err());
        assert_eq!(
            FitnessSeries::new(vec![1.0, f64::NAN], 0, Split::Train),
            Err(MeasureError::NonFinite(1))
        );
    }

    #[test]
    fn classification_rule() {
        assert_eq!(classify(&[0.5; 10], THRESHOLD), Classification::Smooth);
        assert_eq!(classify(&[-0.2; 10], THRESHOLD), Classification::Hard);
        // q1 = 0.05, q3 = 0.30
        let v = [-0.1, 0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.9];
        let b = Boxplot::of(&v).unwrap();
        assert!((b.q1 - 0.05).abs() < 1e-12 && (b.q3 - 0.4).abs() < 1e-12);
        assert_eq!(
            classify(&[0.05, 0.05, 0.30, 0.30], THRESHOLD),
            Classification::Uncertain
        );
        assert_eq!(classify(&[], THRESHOLD), Classification::Uncertain);
    }

    #[test]
    fn quartiles_interpolate() {
        let b = Boxplot::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(
            (b.min, b.q1, b.median, b.q3, b.max),
            (1.0, 1.75, 2.5, 3.25, 4.0)
        );
        let one = Boxplot::of(&[0.7]).unwrap();
        assert_eq!((one.q1, one.q3), (0.7, 0.7));
    }

    #[test]
    fn encoding_examples() {
        use Step::*;
        assert_eq!(encode_steps(&[1.0; 4], 0.0), vec![Flat; 3]);
        assert_eq!(encode_steps(&[0.0, 2.0, 1.0], 0.5), vec![Up, Down]);
        assert_eq!(encode_steps(&[0.0, 2.0, 1.0], 1.5), vec![Up, Flat]);
        assert_eq!(information_stability(&[0.0, 2.0, 1.0]), 2.0);
        assert_eq!(information_stability(&[5.0; 3]), 0.0);
    }

    #[test]
    fn entropy_anchors() {
        use Step::*;
        assert_eq!(entropy(&[Flat; 20]), 0.0);
        let alt: Vec<Step> = (0..31)
            .map(|i| if i % 2 == 0 { Up } else { Down })
            .collect();
        assert!((entropy(&alt) - 2f64.log(6.0)).abs() < 1e-12);
    }

    #[test]
    fn random_symbols_entropy() {
        use rand::{Rng, SeedableRng};
        // six unequal pairs at probability 1/9 each: (2/3)·log6(9) = 0.81749…
        let expected = 2.0 / 3.0 * 9f64.log(6.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let s: Vec<Step> = (0..10_000)
                .map(|_| [Step::Down, Step::Flat, Step::Up][rng.gen_range(0..3)])
                .collect();
            assert!((entropy(&s) - expected).abs() < 0.02, "{}", entropy(&s));
        }
    }

    #[test]
    fn emr_flat_and_alternating() {
        let flat = vec![vec![1.0; 31]];
        let r = emr_report(&flat);
        assert_eq!(r.r_f, 0.0);
        assert_eq!(r.epsilon_star, vec![0.0]);
        let alt: Vec<f64> = (0..32).map(|i| (i % 2) as f64).collect();
        let r = emr_report(&[alt]);
        assert!((r.h_bar[0] - 2f64.log(6.0)).abs() < 1e-12);
        assert!((r.r_f - 2f64.log(6.0)).abs() < 1e-12);
        assert_eq!(r.h_bar[8], 0.0);
    }

    #[test]
    fn report_skips_constant_walks() {
        let walks = vec![vec![1.0; 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]];
        let r = autocorrelation_report(&walks, &STEPS, THRESHOLD);
        assert_eq!(r.steps.len(), 4);
        assert_eq!(r.step(1).unwrap().undefined, vec![0]);
        assert_eq!(r.step(1).unwrap().values.len(), 1);
    }

    /// Independent re-statement: counts pair types with a map over symbol values.
    fn oracle_entropy(f: &[f64], eps: f64) -> f64 {
        let sym: Vec<i32> = f
            .windows(2)
            .map(|w| {
                let d = w[1] - w[0];
                if d.abs() <= eps {
                    0
                } else if d > 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        if sym.len() < 2 {
            return 0.0;
        }
        let mut m = std::collections::HashMap::new();
        for w in sym.windows(2) {
            *m.entry((w[0], w[1])).or_insert(0usize) += 1;
        }
        let n = (sym.len() - 1) as f64;
        m.iter()
            .filter(|((p, q), _)| p != q)
            .map(|(_, &c)| {
                let p = c as f64 / n;
                -p * p.ln() / 6f64.ln()
            })
            .sum()
    }

    #[test]
    fn exhaustive_small_series_match_oracle() {
        for len in 2..=8u32 {
            for code in 0..3u32.pow(len) {
                let f: Vec<f64> = (0..len)
                    .map(|i| ((code / 3u32.pow(i)) % 3) as f64)
                    .collect();
                for eps in [0.0, 0.5, 1.0, 1.5, 2.0] {
                    let got = entropy(&encode_steps(&f, eps));
                    let want = oracle_entropy(&f, eps);
                    assert!(
                        (got - want).abs() < 1e-12,
                        "{f:?} eps={eps}: {got} vs {want}"
                    );
                }
                let es = f
                    .windows(2)
                    .map(|w| (w[0] - w[1]).abs())
                    .fold(0.0, f64::max);
                assert_eq!(information_stability(&f), es);
            }
        }
    }

    proptest! {
        #[test]
        fn rho_in_unit_interval(f in prop::collection::vec(-1e3f64..1e3, 3..60), k in 1usize..10) {
            prop_assume!(k < f.len());
            if let Ok(r) = autocorrelation(&f, k) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            }
        }

        #[test]
        fn rho_affine_invariant(f in prop::collection::vec(-10f64..10.0, 5..40), a in 0.1f64..10.0, b in -5f64..5.0) {
            let Ok(r) = autocorrelation(&f, 1) else { return Ok(()) };
            let g: Vec<f64> = f.iter().map(|v| a * v + b).collect();
            let n: Vec<f64> = f.iter().map(|v| -a * v + b).collect();
            prop_assert!((autocorrelation(&g, 1).unwrap() - r).abs() < 1e-9);
            prop_assert!((autocorrelation(&n, 1).unwrap() - r).abs() < 1e-9);
        }

        #[test]
        fn entropy_bounds_and_flat_at_stability(f in prop::collection::vec(-5f64..5.0, 2..50), frac in 0f64..1.5) {
            let es = information_stability(&f);
            prop_assert_eq!(entropy(&encode_steps(&f, es)), 0.0);
            let h = entropy(&encode_steps(&f, es * frac));
            prop_assert!((0.0..=1.0).contains(&h));
        }

        #[test]
        fn classify_order_invariant(mut v in prop::collection::vec(-1f64..1.0, 2..20)) {
            let c = classify(&v, THRESHOLD);
            v.reverse();
            prop_assert_eq!(classify(&v, THRESHOLD), c);
            v.sort_by(f64::total_cmp);
            prop_assert_eq!(classify(&v, THRESHOLD), c);
        }
    }
}
