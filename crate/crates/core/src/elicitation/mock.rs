//! Deterministic offline raters.
//!
//! [`MockRater`] places every item on a latent normal score
//! `z = cos θ · u + sin θ · ε`, where `u` is the normal score of the item's
//! ground-truth rank and `ε` is per-item noise seeded from the item key.
//! θ is chosen by bisection so that the Spearman correlation between `z`
//! and the ground truth hits the target. Candidate tokens come from a
//! Gaussian-shaped softmax over the scale points centred on `z` mapped to
//! the rating scale; the probability-weighted rating is monotone in `z`,
//! so the target correlation carries over to aggregated ratings.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::corpus::{Dimension, ItemRef, LikertScale, StudyCorpus};
use crate::stats::{ranks, spearman};

use super::backend::{Backend, BackendError, BackendResponse, QueryRequest};
use super::record::{sort_candidates, Candidate};
use super::ElicitError;

/// Width (in scale points) of the mock's rating distribution.
pub const DEFAULT_MOCK_SOFTNESS: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRaterConfig {
    pub target_rho: f64,
    pub noise_seed: u64,
    pub ground_truth: BTreeMap<ItemRef, f64>,
    /// Scale of the ground-truth values.
    pub scale: LikertScale,
    pub softness: f64,
}

impl MockRaterConfig {
    pub fn new(target_rho: f64, noise_seed: u64, ground_truth: BTreeMap<ItemRef, f64>, scale: LikertScale) -> Self {
        Self {
            target_rho,
            noise_seed,
            ground_truth,
            scale,
            softness: DEFAULT_MOCK_SOFTNESS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockRater {
    seed: u64,
    theta: f64,
    latent: HashMap<ItemRef, f64>,
    /// ground-truth mean and sd, on `scale`
    center: f64,
    spread: f64,
    scale: LikertScale,
    softness: f64,
}

fn item_noise(seed: u64, item: &ItemRef) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(item.study_id.as_bytes());
    h.update([0u8]);
    h.update(item.item_id.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(digest);
    StandardNormal.sample(&mut rng)
}

impl MockRater {
    pub fn new(config: &MockRaterConfig) -> Result<Self, ElicitError> {
        let rho = config.target_rho;
        if !(rho.is_finite() && (-1.0..=1.0).contains(&rho)) {
            return Err(ElicitError::Mock(format!("target_rho {rho} outside [-1, 1]")));
        }
        if !(config.softness.is_finite() && config.softness > 0.0) {
            return Err(ElicitError::Mock(format!("softness must be > 0, got {}", config.softness)));
        }
        if config.ground_truth.is_empty() {
            return Err(ElicitError::Mock("empty ground truth".into()));
        }
        if config.ground_truth.values().any(|v| !v.is_finite()) {
            return Err(ElicitError::Mock("non-finite ground truth".into()));
        }
        let items: Vec<&ItemRef> = config.ground_truth.keys().collect();
        let truth: Vec<f64> = config.ground_truth.values().copied().collect();
        let n = truth.len() as f64;

        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let u: Vec<f64> = ranks(&truth)
            .map_err(|e| ElicitError::Mock(e.to_string()))?
            .iter()
            .map(|r| std_normal.inverse_cdf((r - 0.5) / n))
            .collect();
        let eps: Vec<f64> = items.iter().map(|i| item_noise(config.noise_seed, i)).collect();
        let mix = |theta: f64| -> Vec<f64> {
            let (s, c) = theta.sin_cos();
            u.iter().zip(&eps).map(|(a, b)| c * a + s * b).collect()
        };

        let theta = if rho >= 1.0 {
            0.0
        } else if rho <= -1.0 {
            std::f64::consts::PI
        } else {
            match spearman(&truth, &truth) {
                // too few or constant values: fall back to the population relation
                Err(_) => rho.acos(),
                Ok(_) => {
                    let f = |theta: f64| spearman(&mix(theta), &truth).map(|r| r.rho - rho).unwrap_or(0.0);
                    let (mut lo, mut hi) = (0.0, std::f64::consts::PI);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if f(mid) > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                }
            }
        };

        let z = mix(theta);
        let center = truth.iter().sum::<f64>() / n;
        let sd = (truth.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n).sqrt();
        let spread = if sd > 0.0 {
            sd
        } else {
            (config.scale.max_point() - config.scale.min_point()) as f64 / 4.0
        };
        Ok(Self {
            seed: config.noise_seed,
            theta,
            latent: items.into_iter().cloned().zip(z).collect(),
            center,
            spread,
            scale: config.scale,
            softness: config.softness,
        })
    }

    pub fn mixing_angle(&self) -> f64 {
        self.theta
    }

    pub fn latent(&self, item: &ItemRef) -> Option<f64> {
        self.latent.get(item).copied()
    }

    /// Latent score for items outside the ground truth: noise only.
    fn latent_or_noise(&self, item: &ItemRef) -> f64 {
        self.latent(item).unwrap_or_else(|| item_noise(self.seed, item))
    }

    fn candidates_at(&self, z: f64, out: LikertScale, k: usize) -> Vec<Candidate> {
        let m_native = self.center + self.spread * z;
        // same relative position on the output scale, unclamped
        let from_span = (self.scale.max_point() - self.scale.min_point()) as f64;
        let to_span = (out.max_point() - out.min_point()) as f64;
        let m = (m_native - self.scale.min_point() as f64) * to_span / from_span + out.min_point() as f64;
        let tau = self.softness * to_span / from_span;
        let logits: Vec<(i64, f64)> = (out.min_point()..=out.max_point())
            .map(|v| (v, -((v as f64 - m).powi(2)) / (2.0 * tau * tau)))
            .collect();
        let max = logits.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l.1 - max).exp()).sum::<f64>().ln();
        let mut c: Vec<Candidate> = logits
            .into_iter()
            .map(|(v, l)| Candidate::new(v.to_string(), (l - lse).min(0.0)))
            .collect();
        sort_candidates(&mut c);
        c.truncate(k.max(1));
        c
    }

    /// Top-`k` candidates for a ground-truth item on the output scale.
    pub fn rate(&self, item: &ItemRef, out: LikertScale, k: usize) -> Result<Vec<Candidate>, ElicitError> {
        let z = self
            .latent(item)
            .ok_or_else(|| ElicitError::Mock(format!("{item} has no ground truth")))?;
        Ok(self.candidates_at(z, out, k))
    }
}

/// Top-3 candidates for `item` on the configuration's scale.
pub fn mock_rate(config: &MockRaterConfig, item: &ItemRef) -> Result<Vec<Candidate>, ElicitError> {
    MockRater::new(config)?.rate(item, config.scale, 3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockModel {
    pub name: String,
    pub target_rho: f64,
}

/// Mock endpoint serving one calibrated rater per (model, dimension), with
/// ground truth taken from the corpus means on a common scale.
#[derive(Debug)]
pub struct MockBackend {
    raters: BTreeMap<(String, Dimension), MockRater>,
    calls: AtomicUsize,
}

fn derive_seed(seed: u64, model: &str, dimension: Dimension) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(model.as_bytes());
    h.update([0u8]);
    h.update(dimension.as_str().as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

impl MockBackend {
    pub fn from_corpus(
        corpus: &StudyCorpus,
        models: &[MockModel],
        seed: u64,
        common_scale: LikertScale,
        softness: f64,
    ) -> Result<Self, ElicitError> {
        let mut raters = BTreeMap::new();
        for model in models {
            for dimension in corpus.dimensions() {
                let truth: BTreeMap<ItemRef, f64> = corpus
                    .stimuli()
                    .iter()
                    .filter_map(|s| s.standardized_mean(dimension, common_scale).map(|m| (s.item_ref(), m)))
                    .collect();
                if truth.is_empty() {
                    continue;
                }
                let config = MockRaterConfig {
                    target_rho: model.target_rho,
                    noise_seed: derive_seed(seed, &model.name, dimension),
                    ground_truth: truth,
                    scale: common_scale,
                    softness,
                };
                raters.insert((model.name.clone(), dimension), MockRater::new(&config)?);
            }
        }
        Ok(Self {
            raters,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn rater(&self, model: &str, dimension: Dimension) -> Option<&MockRater> {
        self.raters.get(&(model.to_string(), dimension))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Chat-completions-shaped body carrying `candidates` as the first token's
/// alternatives.
pub fn render_completion(model: &str, candidates: &[Candidate]) -> String {
    let top: Vec<serde_json::Value> = candidates
        .iter()
        .map(|c| serde_json::json!({"token": c.token, "logprob": c.logprob}))
        .collect();
    let first = candidates.first().map(|c| c.token.clone()).unwrap_or_default();
    serde_json::json!({
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": first},
            "logprobs": {"content": [{
                "token": first,
                "logprob": candidates.first().map_or(0.0, |c| c.logprob),
                "top_logprobs": top
            }]},
            "finish_reason": "length"
        }]
    })
    .to_string()
}

impl Backend for MockBackend {
    fn query(&self, request: &QueryRequest<'_>) -> Result<BackendResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let rater = self.rater(&request.params.model_name, request.dimension).ok_or_else(|| {
            BackendError::Protocol(format!(
                "mock has no rater for model {} and {}",
                request.params.model_name, request.dimension
            ))
        })?;
        let z = rater.latent_or_noise(&request.item);
        let candidates = rater.candidates_at(z, request.prompt.scale, request.params.top_logprob_count as usize);
        let raw = render_completion(&request.params.model_name, &candidates);
        Ok(BackendResponse { candidates, raw })
    }

    fn timestamp(&self) -> u64 {
        0
    }
}

#[derive(Debug, Default)]
struct Script {
    failures: VecDeque<BackendError>,
    answer: Option<Result<Vec<Candidate>, BackendError>>,
}

/// Backend answering from a fixed per-item script; for tests and fixtures.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    scripts: Mutex<HashMap<ItemRef, Script>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Always answer `item` with `candidates`.
    pub fn respond(self, item: ItemRef, candidates: Vec<Candidate>) -> Self {
        self.scripts.lock().expect("script lock").entry(item).or_default().answer = Some(Ok(candidates));
        self
    }

    /// Always fail `item` with `error`.
    pub fn fail(self, item: ItemRef, error: BackendError) -> Self {
        self.scripts.lock().expect("script lock").entry(item).or_default().answer = Some(Err(error));
        self
    }

    /// Fail the next `times` queries for `item` before the scripted answer.
    pub fn fail_first(self, item: ItemRef, times: usize, error: BackendError) -> Self {
        {
            let mut s = self.scripts.lock().expect("script lock");
            let e = s.entry(item).or_default();
            e.failures.extend(std::iter::repeat_n(error, times));
        }
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn query(&self, request: &QueryRequest<'_>) -> Result<BackendResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut scripts = self.scripts.lock().expect("script lock");
        let script = scripts
            .get_mut(&request.item)
            .ok_or_else(|| BackendError::Protocol(format!("no script for {}", request.item)))?;
        if let Some(e) = script.failures.pop_front() {
            return Err(e);
        }
        match &script.answer {
            Some(Ok(c)) => Ok(BackendResponse {
                candidates: c.clone(),
                raw: render_completion(&request.params.model_name, c),
            }),
            Some(Err(e)) => Err(e.clone()),
            None => Err(BackendError::Protocol(format!("no answer scripted for {}", request.item))),
        }
    }

    fn timestamp(&self) -> u64 {
        0
    }
}
