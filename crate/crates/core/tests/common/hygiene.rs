//! Randomized datasets and the split hygiene rules checked on them.

use std::collections::{HashMap, HashSet};

use dugraph::dataset::{event_level_folds, temporal_split, Dataset, EventRecord, UploaderRecord, VideoRecord};
use proptest::prelude::*;

#[derive(Debug, Clone)]
pub struct Shape {
    pub n_events: usize,
    pub n_uploaders: usize,
    /// (event, uploader, day, label) per video.
    pub videos: Vec<(usize, usize, u8, Option<u8>)>,
}

pub fn shape() -> impl Strategy<Value = Shape> {
    (1usize..9, 1usize..5).prop_flat_map(|(n_events, n_uploaders)| {
        let video = (0..n_events, 0..n_uploaders, 0u8..12, prop_oneof![3 => (0u8..2).prop_map(Some), 1 => Just(None)]);
        proptest::collection::vec(video, 1..40).prop_map(move |videos| Shape { n_events, n_uploaders, videos })
    })
}

pub fn build(s: &Shape) -> Dataset {
    Dataset {
        videos: s
            .videos
            .iter()
            .enumerate()
            .map(|(i, &(e, u, day, label))| VideoRecord {
                // ids deliberately not in timestamp order
                video_id: format!("v{:03}", (i * 7919) % 1000),
                uploader_id: format!("u{u}"),
                event_id: format!("e{e}"),
                timestamp_days: 18_000.0 + f64::from(day) * 0.5,
                label,
                features: vec![i as f64, 1.0],
            })
            .collect(),
        uploaders: (0..s.n_uploaders)
            .map(|u| UploaderRecord {
                uploader_id: format!("u{u}"),
                profile_embedding: vec![u as f64],
                raw_profile: None,
            })
            .collect(),
        events: (0..s.n_events)
            .map(|e| EventRecord { event_id: format!("e{e}"), event_embedding: vec![1.0, e as f64], description: None })
            .collect(),
    }
}

pub fn labeled(ds: &Dataset) -> HashSet<&str> {
    ds.videos.iter().filter(|v| v.label.is_some()).map(|v| v.video_id.as_str()).collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Event folds: no event on both sides, test sets partition the labeled
/// videos, and the folds are reproducible.
pub fn check_event_folds(ds: &Dataset, k: usize, seed: u64) -> Result<(), String> {
    let event_of: HashMap<&str, &str> = ds.videos.iter().map(|v| (v.video_id.as_str(), v.event_id.as_str())).collect();
    let n_labeled_events =
        ds.videos.iter().filter(|v| v.label.is_some()).map(|v| &v.event_id).collect::<HashSet<_>>().len();
    let folds = match event_level_folds(ds, k, seed) {
        Ok(f) => f,
        Err(e) => return ensure(n_labeled_events < k, || format!("unexpected error: {e}")),
    };
    ensure(folds.len() == k, || format!("{} folds, wanted {k}", folds.len()))?;
    let mut tested = Vec::new();
    for (i, f) in folds.iter().enumerate() {
        let train: HashSet<&str> = f.train_ids.iter().map(|id| event_of[id.as_str()]).collect();
        let test: HashSet<&str> = f.test_ids.iter().map(|id| event_of[id.as_str()]).collect();
        ensure(train.is_disjoint(&test), || {
            format!("fold {i} shares events {:?}", train.intersection(&test).collect::<Vec<_>>())
        })?;
        ensure(!f.test_ids.is_empty(), || format!("fold {i} has no test videos"))?;
        ensure(f.val_ids.is_empty(), || format!("fold {i} has validation videos"))?;
        ensure(f.train_ids.len() + f.test_ids.len() == labeled(ds).len(), || format!("fold {i} drops labeled videos"))?;
        tested.extend(f.test_ids.iter().map(String::as_str));
    }
    let unique: HashSet<&str> = tested.iter().copied().collect();
    ensure(unique.len() == tested.len(), || "a video is tested twice".into())?;
    ensure(unique == labeled(ds), || "test sets do not cover the labeled videos".into())?;
    ensure(event_level_folds(ds, k, seed).ok().as_ref() == Some(&folds), || "folds are not reproducible".into())
}

/// Temporal split: no later video before an earlier one across the
/// train/val/test boundaries, sizes follow the floor rule, and the three
/// sets partition the labeled videos.
pub fn check_temporal_split(ds: &Dataset, train: f64, val: f64) -> Result<(), String> {
    let time: HashMap<&str, f64> = ds.videos.iter().map(|v| (v.video_id.as_str(), v.timestamp_days)).collect();
    let split = match temporal_split(ds, train, val) {
        Ok(s) => s,
        Err(e) => return ensure(labeled(ds).is_empty(), || format!("unexpected error: {e}")),
    };
    let latest = |ids: &[String]| ids.iter().map(|id| time[id.as_str()]).fold(f64::NEG_INFINITY, f64::max);
    let earliest = |ids: &[String]| ids.iter().map(|id| time[id.as_str()]).fold(f64::INFINITY, f64::min);
    // equality only arises inside a tie group
    ensure(latest(&split.train_ids) <= earliest(&split.val_ids), || "train after val".into())?;
    ensure(latest(&split.train_ids) <= earliest(&split.test_ids), || "train after test".into())?;
    ensure(latest(&split.val_ids) <= earliest(&split.test_ids), || "val after test".into())?;

    let n = labeled(ds).len();
    let want_train = (train * n as f64 + 1e-9).floor() as usize;
    let want_val = (val * n as f64 + 1e-9).floor() as usize;
    ensure(split.train_ids.len() == want_train, || format!("{} train, wanted {want_train}", split.train_ids.len()))?;
    ensure(split.val_ids.len() == want_val, || format!("{} val, wanted {want_val}", split.val_ids.len()))?;
    let all: HashSet<&str> =
        split.train_ids.iter().chain(&split.val_ids).chain(&split.test_ids).map(String::as_str).collect();
    ensure(all.len() == n && all == labeled(ds), || "sets do not partition the labeled videos".into())?;
    ensure(temporal_split(ds, train, val).ok().as_ref() == Some(&split), || "split is not reproducible".into())
}
