//! Planted-signal genotype benchmarks.
//!
//! Genotypes are Binomial(2, f) draws with a per-variant minor-allele
//! frequency `f`. A handful of variants carry additive effects and a few
//! disjoint pairs interact multiplicatively; everything else is noise. The
//! generator also returns relevance scores that an oracle provider can use as
//! its "prior knowledge".

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dataset::GenotypeDataset;
use crate::seeding::rng_for;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Quantiles of a noisy liability score built from the planted additive
    /// and interaction terms, giving balanced classes.
    #[default]
    Liability,
    /// Binary: "case" exactly when both variants of the first planted pair
    /// carry at least one minor allele (`x_a · x_b > 0`).
    Carrier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_variants: usize,
    pub n_additive: usize,
    pub n_interactions: usize,
    pub additive_effect: f64,
    pub interaction_effect: f64,
    pub noise_sd: f64,
    pub maf_min: f64,
    pub maf_max: f64,
    pub n_classes: usize,
    pub label_rule: LabelRule,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            n_variants: 500,
            n_additive: 13,
            n_interactions: 1,
            additive_effect: 1.0,
            interaction_effect: 1.0,
            noise_sd: 1.0,
            maf_min: 0.2,
            maf_max: 0.5,
            n_classes: 2,
            label_rule: LabelRule::Liability,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub additive: Vec<String>,
    pub interactions: Vec<(String, String)>,
    /// Every planted variant, additive first, then interaction members.
    pub planted: Vec<String>,
    /// Planted variants score in [8, 10]; the rest in [0, 4).
    pub scores: BTreeMap<String, f64>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(format!("synthetic spec: {m}")));
        let planted = self.n_additive + 2 * self.n_interactions;
        if planted > self.n_variants {
            return bad(format!(
                "{planted} planted variants exceed {} variants",
                self.n_variants
            ));
        }
        if self.n_samples < 2 * self.n_classes.max(2) {
            return bad(format!("{} samples are too few", self.n_samples));
        }
        if !(0.0 < self.maf_min && self.maf_min <= self.maf_max && self.maf_max <= 0.5) {
            return bad(format!(
                "need 0 < maf_min <= maf_max <= 0.5, got {}..{}",
                self.maf_min, self.maf_max
            ));
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2".into());
        }
        if self.noise_sd < 0.0 || !self.noise_sd.is_finite() {
            return bad("noise_sd must be finite and non-negative".into());
        }
        if self.label_rule == LabelRule::Carrier && (self.n_interactions == 0 || self.n_classes != 2) {
            return bad("the carrier rule needs a planted pair and two classes".into());
        }
        Ok(())
    }
}

pub fn variant_name(j: usize) -> String {
    format!("rs{}", 10_001 + j)
}

fn class_names(n: usize) -> Vec<String> {
    if n == 2 {
        vec!["control".into(), "case".into()]
    } else {
        (1..=n).map(|c| format!("group_{c}")).collect()
    }
}

/// Draws a dataset and its ground truth from `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(GenotypeDataset, SyntheticTruth), HarnessError> {
    spec.validate()?;
    let (n, d) = (spec.n_samples, spec.n_variants);
    let mut rng = rng_for(spec.seed, &[0x5A17]);

    let mafs: Vec<f64> = (0..d).map(|_| rng.gen_range(spec.maf_min..=spec.maf_max)).collect();
    let mut values = Array2::<u8>::zeros((n, d));
    for (j, &f) in mafs.iter().enumerate() {
        let dist = Binomial::new(2, f).expect("valid frequency");
        for i in 0..n {
            values[[i, j]] = dist.sample(&mut rng) as u8;
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng);
    let additive: Vec<usize> = order[..spec.n_additive].to_vec();
    let pairs: Vec<(usize, usize)> = (0..spec.n_interactions)
        .map(|p| {
            let base = spec.n_additive + 2 * p;
            (order[base], order[base + 1])
        })
        .collect();
    let signs: Vec<f64> = additive
        .iter()
        .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();

    let classes = class_names(spec.n_classes);
    let labels: Vec<String> = match spec.label_rule {
        LabelRule::Carrier => {
            let (a, b) = pairs[0];
            (0..n)
                .map(|i| classes[(values[[i, a]] as u32 * values[[i, b]] as u32 > 0) as usize].clone())
                .collect()
        }
        LabelRule::Liability => {
            let noise = Normal::new(0.0, spec.noise_sd.max(f64::MIN_POSITIVE)).expect("valid sd");
            let liability: Vec<f64> = (0..n)
                .map(|i| {
                    let mut z = 0.0;
                    for (&j, s) in additive.iter().zip(&signs) {
                        z += s * spec.additive_effect * (values[[i, j]] as f64 - 2.0 * mafs[j]);
                    }
                    for &(a, b) in &pairs {
                        let centred = values[[i, a]] as f64 * values[[i, b]] as f64 - 4.0 * mafs[a] * mafs[b];
                        z += spec.interaction_effect * centred;
                    }
                    if spec.noise_sd > 0.0 {
                        z += noise.sample(&mut rng);
                    }
                    z
                })
                .collect();
            let mut ranked: Vec<usize> = (0..n).collect();
            ranked.sort_by(|&p, &q| liability[p].total_cmp(&liability[q]).then(p.cmp(&q)));
            let mut labels = vec![String::new(); n];
            for (r, &i) in ranked.iter().enumerate() {
                labels[i] = classes[r * spec.n_classes / n].clone();
            }
            labels
        }
    };

    let names: Vec<String> = (0..d).map(variant_name).collect();
    let ids: Vec<String> = (0..n).map(|i| format!("s{:05}", i + 1)).collect();
    let ds = GenotypeDataset::with_classes(ids, names.clone(), values, labels, classes)?;

    let mut planted: Vec<String> = additive.iter().map(|&j| names[j].clone()).collect();
    let interactions: Vec<(String, String)> = pairs
        .iter()
        .map(|&(a, b)| (names[a].clone(), names[b].clone()))
        .collect();
    for (a, b) in &interactions {
        planted.push(a.clone());
        planted.push(b.clone());
    }
    let planted_idx: std::collections::HashSet<usize> = additive
        .iter()
        .copied()
        .chain(pairs.iter().flat_map(|&(a, b)| [a, b]))
        .collect();
    let mut score_rng = rng_for(spec.seed, &[0x5C0E]);
    let scores = (0..d)
        .map(|j| {
            let s = if planted_idx.contains(&j) {
                score_rng.gen_range(8.0..=10.0)
            } else {
                score_rng.gen_range(0.0..4.0)
            };
            (names[j].clone(), s)
        })
        .collect();
    Ok((
        ds,
        SyntheticTruth {
            additive: additive.iter().map(|&j| names[j].clone()).collect(),
            interactions,
            planted,
            scores,
        },
    ))
}
