//! Planted dual-community datasets with known labels.
//!
//! Uploaders come from well-separated Gaussian groups and events from two
//! event types; a video's label is a function of its uploader's group and/or
//! its event's type. Video features carry only a `1 - graph_signal_strength`
//! share of the class signal, so the rest must be recovered through the graph.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EventRecord, RawProfile, UploaderRecord, VerificationStatus, VideoRecord};
use crate::rng::{seeded, stream};

/// Day number of the earliest possible event start.
const BASE_DAY: f64 = 19_000.0;
const BURST_MEAN_DAYS: f64 = 2.0;
const CLASS_MEAN_NORM: f64 = 4.0;
const MIN_CENTER_SPACING: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    UploaderGroupParity,
    EventType,
    XorOfBoth,
}

impl LabelRule {
    pub fn label(self, group: usize, event_type: usize) -> u8 {
        let parity = (group % 2) as u8;
        let ty = (event_type % 2) as u8;
        match self {
            LabelRule::UploaderGroupParity => parity,
            LabelRule::EventType => ty,
            LabelRule::XorOfBoth => parity ^ ty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_events: usize,
    pub n_uploaders: usize,
    pub n_uploader_groups: usize,
    /// Inclusive range of videos per event.
    pub videos_per_event: (usize, usize),
    pub d_v: usize,
    pub d_u: usize,
    pub d_e: usize,
    pub feature_noise_sigma: f64,
    pub label_rule: LabelRule,
    pub graph_signal_strength: f64,
    pub time_span_days: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_events: 60,
            n_uploaders: 240,
            n_uploader_groups: 24,
            videos_per_event: (15, 25),
            d_v: 32,
            d_u: 32,
            d_e: 32,
            feature_noise_sigma: 1.0,
            label_rule: LabelRule::XorOfBoth,
            graph_signal_strength: 0.9,
            time_span_days: 365.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        let (lo, hi) = self.videos_per_event;
        if self.n_events == 0 || hi == 0 || lo > hi {
            return Err(format!("no videos can be generated (events {}, range {lo}..={hi})", self.n_events));
        }
        if self.n_uploader_groups == 0 || self.n_uploader_groups > self.n_uploaders {
            return Err(format!(
                "need 1 <= uploader groups ({}) <= uploaders ({})",
                self.n_uploader_groups, self.n_uploaders
            ));
        }
        if self.d_v == 0 || self.d_u == 0 || self.d_e == 0 {
            return Err("feature dimensions must be positive".into());
        }
        if !(self.feature_noise_sigma >= 0.0 && self.feature_noise_sigma.is_finite()) {
            return Err("feature_noise_sigma must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.graph_signal_strength) {
            return Err("graph_signal_strength must lie in [0, 1]".into());
        }
        if !(self.time_span_days > 0.0 && self.time_span_days.is_finite()) {
            return Err("time_span_days must be positive".into());
        }
        Ok(())
    }
}

/// What was planted, for checking recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub uploader_groups: BTreeMap<String, usize>,
    pub event_types: BTreeMap<String, usize>,
    pub event_starts: BTreeMap<String, f64>,
    /// Fake-class mean direction; the real class uses its negation.
    pub class_mean: Vec<f64>,
}

fn gaussian(rng: &mut impl Rng, d: usize, sigma: f64) -> Vec<f64> {
    (0..d).map(|_| sigma * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Centers at least `spacing` apart, drawn by rejection from a wide Gaussian.
fn separated_centers(rng: &mut impl Rng, k: usize, d: usize, spacing: f64) -> Vec<Vec<f64>> {
    let mut scale = spacing / 3.0;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut misses = 0;
    while centers.len() < k {
        let c = gaussian(rng, d, scale);
        if centers.iter().all(|o| distance(o, &c) >= spacing) {
            centers.push(c);
        } else {
            misses += 1;
            if misses % 1000 == 0 {
                scale *= 1.5;
            }
        }
    }
    centers
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, GroundTruth), String> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed, stream::SYNTH);
    let sigma = cfg.feature_noise_sigma;
    // keep centers distinct even without noise
    let unit = sigma.max(0.5);

    let group_centers = separated_centers(&mut rng, cfg.n_uploader_groups, cfg.d_u, MIN_CENTER_SPACING * unit);
    let mut uploader_groups = BTreeMap::new();
    let mut uploaders = Vec::with_capacity(cfg.n_uploaders);
    let mut groups = Vec::with_capacity(cfg.n_uploaders);
    for i in 0..cfg.n_uploaders {
        let g = i % cfg.n_uploader_groups;
        let id = format!("u{i:04}");
        let status = match g % 3 {
            0 => VerificationStatus::Institutional,
            1 => VerificationStatus::Individual,
            _ => VerificationStatus::Unverified,
        };
        uploaders.push(UploaderRecord {
            uploader_id: id.clone(),
            profile_embedding: add(&group_centers[g], &gaussian(&mut rng, cfg.d_u, sigma)),
            raw_profile: Some(RawProfile {
                verification_status: Some(status),
                introduction: Some(format!("channel {i} of community {g}")),
                followers: Some(rng.random_range(10..100_000)),
                videos: Some(rng.random_range(1..2_000)),
                ..Default::default()
            }),
        });
        uploader_groups.insert(id, g);
        groups.push(g);
    }

    let direction = gaussian(&mut rng, cfg.d_e, 1.0);
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let half = MIN_CENTER_SPACING * unit / 2.0;
    let type_centers: [Vec<f64>; 2] =
        [direction.iter().map(|x| x / norm * half).collect(), direction.iter().map(|x| -x / norm * half).collect()];

    let class_dir = gaussian(&mut rng, cfg.d_v, 1.0);
    let cnorm = class_dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let class_mean: Vec<f64> = class_dir.iter().map(|x| x / cnorm * CLASS_MEAN_NORM).collect();
    let keep = 1.0 - cfg.graph_signal_strength;

    let burst = Exp::new(1.0 / BURST_MEAN_DAYS).expect("positive rate");
    let noise = Normal::new(0.0, sigma).expect("sigma validated");
    let mut events = Vec::with_capacity(cfg.n_events);
    let mut event_types = BTreeMap::new();
    let mut event_starts = BTreeMap::new();
    let mut videos = Vec::new();
    for e in 0..cfg.n_events {
        let id = format!("e{e:03}");
        let ty = e % 2;
        let start = BASE_DAY + rng.random_range(0.0..cfg.time_span_days);
        events.push(EventRecord {
            event_id: id.clone(),
            event_embedding: add(&type_centers[ty], &gaussian(&mut rng, cfg.d_e, sigma)),
            description: Some(format!("event {e} of type {ty}")),
        });
        event_types.insert(id.clone(), ty);
        event_starts.insert(id.clone(), start);

        let count = rng.random_range(cfg.videos_per_event.0..=cfg.videos_per_event.1);
        for _ in 0..count {
            let u = rng.random_range(0..cfg.n_uploaders);
            let label = cfg.label_rule.label(groups[u], ty);
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let features = class_mean.iter().map(|m| sign * m * keep + noise.sample(&mut rng)).collect();
            let offset: f64 = burst.sample(&mut rng);
            videos.push(VideoRecord {
                video_id: format!("v{:05}", videos.len()),
                uploader_id: uploaders[u].uploader_id.clone(),
                event_id: id.clone(),
                timestamp_days: start + offset,
                label: Some(label),
                features,
            });
        }
    }

    let dataset = Dataset { videos, uploaders, events };
    dataset.validate().map_err(|e| e.to_string())?;
    let truth = GroundTruth { config: cfg.clone(), uploader_groups, event_types, event_starts, class_mean };
    Ok((dataset, truth))
}
