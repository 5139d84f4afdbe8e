//! Shared generators for the integration tests.
#![allow(dead_code)]

pub mod http;

use std::collections::BTreeMap;

use normforge::corpus::{read_corpus, Dimension, InstructionSet, ItemRef, LikertScale, StudyCorpus, STIMULUS_COLUMNS};
use normforge::elicitation::{MockRater, MockRaterConfig};
use normforge::aggregation::weighted_rating_from_candidates;
use normforge::lmm::{MeasureKind, ResponseDataset, ResponseObservation, Transform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).unwrap().sample(rng)
}

/// Balanced one-way layout: `g` groups × `m` replicates.
pub fn one_way(seed: u64, g: usize, m: usize, sd_group: f64, sd_resid: f64) -> (Vec<f64>, Vec<String>) {
    let mut r = rng(seed);
    let mut y = Vec::new();
    let mut labels = Vec::new();
    for j in 0..g {
        let b = normal(&mut r, sd_group);
        for _ in 0..m {
            y.push(10.0 + b + normal(&mut r, sd_resid));
            labels.push(format!("g{j:02}"));
        }
    }
    (y, labels)
}

/// Familiarity-like item norms on a 7-point scale.
pub fn item_norms(seed: u64, n_items: usize) -> BTreeMap<String, f64> {
    let mut r = rng(seed ^ 0x5eed);
    (0..n_items)
        .map(|i| (format!("it{i:03}"), (r.random_range(1.5..6.5f64) * 100.0).round() / 100.0))
        .collect()
}

/// Log-RT style data: subject and item intercepts plus a slope on the
/// item's human rating.
pub fn simulate_rt(seed: u64, n_subjects: usize, human: &BTreeMap<String, f64>, slope: f64) -> ResponseDataset {
    let mut r = rng(seed);
    let subj: Vec<f64> = (0..n_subjects).map(|_| normal(&mut r, 0.10)).collect();
    let item: BTreeMap<&String, f64> = human.keys().map(|k| (k, normal(&mut r, 0.03))).collect();
    let mut obs = Vec::new();
    for (s, us) in subj.iter().enumerate() {
        for (id, h) in human {
            let y = 6.5 + slope * h + us + item[id] + normal(&mut r, 0.20);
            obs.push(ResponseObservation {
                subject_id: format!("s{s:02}"),
                item_id: id.clone(),
                measure: y,
                covariates: BTreeMap::new(),
            });
        }
    }
    ResponseDataset::new(obs, MeasureKind::ResponseTime, Transform::Identity).unwrap()
}

/// Machine ratings whose Spearman correlation with `human` is calibrated to
/// `rho`, produced through the mock rater and weighted aggregation.
pub fn machine_ratings(seed: u64, human: &BTreeMap<String, f64>, rho: f64) -> BTreeMap<String, f64> {
    let truth: BTreeMap<ItemRef, f64> = human.iter().map(|(k, v)| (ItemRef::new("sim", k), *v)).collect();
    let rater = MockRater::new(&MockRaterConfig::new(rho, seed, truth, LikertScale::SEVEN)).unwrap();
    human
        .keys()
        .map(|k| {
            let c = rater.rate(&ItemRef::new("sim", k), LikertScale::SEVEN, 3).unwrap();
            (k.clone(), weighted_rating_from_candidates(&c, LikertScale::SEVEN).unwrap())
        })
        .collect()
}

/// Ratings unrelated to `human`.
pub fn noise_ratings(seed: u64, human: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let mut r = rng(seed ^ 0xabcdef);
    human.keys().map(|k| (k.clone(), r.random_range(1.0..7.0f64))).collect()
}

/// Two-study corpus: `it` is Italian on a 7-point scale with all three
/// dimensions and mental/physical subsets; `en` is English on a 5-point
/// scale, familiarity and comprehensibility only, metaphors plus literals.
pub fn two_study_corpus(seed: u64, per_study: usize) -> StudyCorpus {
    let mut r = rng(seed ^ 0xc0);
    let mut csv = STIMULUS_COLUMNS.join(",");
    csv.push('\n');
    for i in 0..per_study {
        let subset = if i % 2 == 0 { "mental" } else { "physical" };
        for dim in Dimension::ALL {
            let mean = r.random_range(1.3..6.7f64);
            csv.push_str(&format!(
                "it,m{i:03},\"Quel pensiero {i} e una nuvola\",it,metaphor,{subset},{dim},{mean:.3},30,1,7\n"
            ));
        }
        let class = if i % 3 == 0 { "literal" } else { "metaphor" };
        for dim in [Dimension::Familiarity, Dimension::Comprehensibility] {
            let mean = r.random_range(1.2..4.8f64);
            csv.push_str(&format!("en,e{i:03},\"Lawyers {i} are sharks\",en,{class},,{dim},{mean:.3},25,1,5\n"));
        }
    }
    let mut inst = InstructionSet::default();
    for study in ["it", "en"] {
        for dim in Dimension::ALL {
            inst.insert(study, dim, format!("Rate the {dim} of each sentence."));
        }
    }
    read_corpus(csv.as_bytes(), &inst).unwrap()
}
