//! Video, uploader and event records, the JSONL manifest, and split protocols.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::seeded;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("video {video} references unknown {kind} \"{id}\"")]
    Dangling { video: String, kind: &'static str, id: String },
    #[error("duplicate {kind} id \"{id}\"")]
    Duplicate { kind: &'static str, id: String },
    #[error("{kind} \"{id}\" has dimension {found}, expected {expected}")]
    Dimension { kind: &'static str, id: String, expected: usize, found: usize },
    #[error("{kind} \"{id}\" contains a non-finite value")]
    NonFinite { kind: &'static str, id: String },
    #[error("video \"{0}\" has a label other than 0 or 1")]
    Label(String),
    #[error("invalid split request: {0}")]
    Split(String),
}

/// Label value for misinformation.
pub const FAKE: u8 = 1;
/// Label value for genuine content.
pub const REAL: u8 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub video_id: String,
    pub uploader_id: String,
    pub event_id: String,
    /// Days since 1970-01-01 UTC.
    pub timestamp_days: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    /// Output of the upstream per-video classifier, taken before its head.
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationStatus {
    Institutional,
    Individual,
    Unverified,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawProfile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_status: Option<VerificationStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub introduction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followers: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub videos: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subscriptions: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UploaderRecord {
    pub uploader_id: String,
    /// Language-model embedding of the structured profile text.
    pub profile_embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_profile: Option<RawProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub event_id: String,
    pub event_embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ManifestRecord {
    Video(VideoRecord),
    Uploader(UploaderRecord),
    Event(EventRecord),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub videos: Vec<VideoRecord>,
    pub uploaders: Vec<UploaderRecord>,
    pub events: Vec<EventRecord>,
}

/// Train/validation/test partition of video ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    #[serde(rename = "train")]
    pub train_ids: Vec<String>,
    #[serde(rename = "val")]
    pub val_ids: Vec<String>,
    #[serde(rename = "test")]
    pub test_ids: Vec<String>,
}

fn check_vector(kind: &'static str, id: &str, v: &[f64], dim: &mut Option<usize>) -> Result<(), DataError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DataError::NonFinite { kind, id: id.to_string() });
    }
    match *dim {
        Some(expected) if expected != v.len() => {
            Err(DataError::Dimension { kind, id: id.to_string(), expected, found: v.len() })
        }
        Some(_) => Ok(()),
        None => {
            *dim = Some(v.len());
            Ok(())
        }
    }
}

impl Dataset {
    /// Checks every record-level and cross-reference invariant.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut uploaders = HashSet::new();
        let mut dim = None;
        for u in &self.uploaders {
            if !uploaders.insert(u.uploader_id.as_str()) {
                return Err(DataError::Duplicate { kind: "uploader", id: u.uploader_id.clone() });
            }
            check_vector("uploader", &u.uploader_id, &u.profile_embedding, &mut dim)?;
        }
        let mut events = HashSet::new();
        let mut dim = None;
        for e in &self.events {
            if !events.insert(e.event_id.as_str()) {
                return Err(DataError::Duplicate { kind: "event", id: e.event_id.clone() });
            }
            check_vector("event", &e.event_id, &e.event_embedding, &mut dim)?;
        }
        let mut videos = HashSet::new();
        let mut dim = None;
        for v in &self.videos {
            if !videos.insert(v.video_id.as_str()) {
                return Err(DataError::Duplicate { kind: "video", id: v.video_id.clone() });
            }
            check_vector("video", &v.video_id, &v.features, &mut dim)?;
            if !v.timestamp_days.is_finite() {
                return Err(DataError::NonFinite { kind: "video", id: v.video_id.clone() });
            }
            if matches!(v.label, Some(l) if l > 1) {
                return Err(DataError::Label(v.video_id.clone()));
            }
            if !uploaders.contains(v.uploader_id.as_str()) {
                return Err(DataError::Dangling {
                    video: v.video_id.clone(),
                    kind: "uploader",
                    id: v.uploader_id.clone(),
                });
            }
            if !events.contains(v.event_id.as_str()) {
                return Err(DataError::Dangling { video: v.video_id.clone(), kind: "event", id: v.event_id.clone() });
            }
        }
        Ok(())
    }

    pub fn video_dim(&self) -> usize {
        self.videos.first().map_or(0, |v| v.features.len())
    }

    pub fn uploader_dim(&self) -> usize {
        self.uploaders.first().map_or(0, |u| u.profile_embedding.len())
    }

    pub fn event_dim(&self) -> usize {
        self.events.first().map_or(0, |e| e.event_embedding.len())
    }

    pub fn labels(&self) -> HashMap<String, u8> {
        self.videos.iter().filter_map(|v| v.label.map(|l| (v.video_id.clone(), l))).collect()
    }

    /// A copy with the labels of `ids` removed.
    pub fn without_labels(&self, ids: &[String]) -> Dataset {
        let hide: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let mut out = self.clone();
        for v in &mut out.videos {
            if hide.contains(v.video_id.as_str()) {
                v.label = None;
            }
        }
        out
    }

    pub fn records(&self) -> impl Iterator<Item = ManifestRecord> + '_ {
        self.videos
            .iter()
            .cloned()
            .map(ManifestRecord::Video)
            .chain(self.uploaders.iter().cloned().map(ManifestRecord::Uploader))
            .chain(self.events.iter().cloned().map(ManifestRecord::Event))
    }

    /// JSONL serialization: videos, then uploaders, then events.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in self.records() {
            out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let io = |source| DataError::Io { path: path.to_path_buf(), source };
        let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
        w.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
        w.flush().map_err(io)
    }
}

/// Parses manifest text; record order within each kind is preserved.
pub fn parse_manifest(text: &str) -> Result<Dataset, DataError> {
    parse_lines(text.lines().map(|l| Ok(l.to_string())))
}

fn parse_lines<I>(lines: I) -> Result<Dataset, DataError>
where
    I: Iterator<Item = Result<String, DataError>>,
{
    let mut ds = Dataset::default();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| DataError::Malformed { line: i + 1, message: e.to_string() })?;
        match rec {
            ManifestRecord::Video(v) => ds.videos.push(v),
            ManifestRecord::Uploader(u) => ds.uploaders.push(u),
            ManifestRecord::Event(e) => ds.events.push(e),
        }
    }
    ds.validate()?;
    Ok(ds)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let io = |source| DataError::Io { path: path.to_path_buf(), source };
    let file = fs::File::open(path).map_err(io)?;
    parse_lines(BufReader::new(file).lines().map(|l| l.map_err(io)))
}

fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Structures a raw uploader profile into prioritized text: verification first,
/// then the self-introduction, then counts and location.
pub fn format_uploader_profile(profile: &RawProfile) -> String {
    let kind = match profile.verification_status {
        Some(VerificationStatus::Institutional) => "institutional ",
        Some(VerificationStatus::Individual) => "individual ",
        _ => "",
    };
    let status = profile.verification_status.map(|s| match s {
        VerificationStatus::Institutional => "The author is a verified institutional uploader",
        VerificationStatus::Individual => "The author is a verified individual uploader",
        VerificationStatus::Unverified => "The author is not a verified uploader",
    });
    let primary = match (status, &profile.verification_text) {
        (None, None) => "unknown".to_string(),
        (Some(s), None) => format!("{s}."),
        (status, Some(text)) => format!(
            "{}, and the introduction of the {kind}verification is \"{text}\".",
            status.unwrap_or("The verification status is unknown"),
        ),
    };
    let secondary = match &profile.introduction {
        Some(intro) => format!("The author introduction is: \"{intro}\""),
        None => "unknown".to_string(),
    };
    let mut items = Vec::new();
    for (count, noun) in [
        (profile.likes, "likes"),
        (profile.followers, "followers"),
        (profile.videos, "videos"),
        (profile.subscriptions, "subscriptions"),
    ] {
        if let Some(n) = count {
            items.push(format!("{} {noun}", group_thousands(n)));
        }
    }
    if let Some(loc) = &profile.location {
        items.push(format!("location: {loc}"));
    }
    let supplementary = if items.is_empty() { "unknown".to_string() } else { format!("{}.", items.join("; ")) };

    let mut out = String::new();
    let _ = writeln!(out, "Primary information: {primary}");
    let _ = writeln!(out, "Secondary information: {secondary}");
    let _ = write!(out, "Supplementary information: {supplementary}");
    out
}

/// Distinct events among labeled videos, in first-appearance order.
fn labeled_events(dataset: &Dataset) -> Vec<&str> {
    let mut seen = HashSet::new();
    dataset
        .videos
        .iter()
        .filter(|v| v.label.is_some())
        .filter_map(|v| seen.insert(v.event_id.as_str()).then_some(v.event_id.as_str()))
        .collect()
}

/// Cross-validation folds grouped by event so that no event spans train and test.
/// Only labeled videos are placed in either side.
pub fn event_level_folds(dataset: &Dataset, n_folds: usize, seed: u64) -> Result<Vec<Split>, DataError> {
    if n_folds == 0 {
        return Err(DataError::Split("n_folds must be positive".into()));
    }
    let mut events = labeled_events(dataset);
    if events.len() < n_folds {
        return Err(DataError::Split(format!("{} labeled events cannot fill {n_folds} folds", events.len())));
    }
    events.shuffle(&mut seeded(seed, crate::rng::stream::FOLDS));

    let base = events.len() / n_folds;
    let extra = events.len() % n_folds;
    let mut fold_of = HashMap::new();
    let mut start = 0;
    for k in 0..n_folds {
        let size = base + usize::from(k < extra);
        for e in &events[start..start + size] {
            fold_of.insert(*e, k);
        }
        start += size;
    }

    Ok((0..n_folds)
        .map(|k| {
            let mut split = Split::default();
            for v in dataset.videos.iter().filter(|v| v.label.is_some()) {
                if fold_of[v.event_id.as_str()] == k {
                    split.test_ids.push(v.video_id.clone());
                } else {
                    split.train_ids.push(v.video_id.clone());
                }
            }
            split
        })
        .collect())
}

/// `floor(frac * n)` robust to representation error such as `0.15 * 20`.
pub(crate) fn floor_count(frac: f64, n: usize) -> usize {
    (frac * n as f64 + 1e-9).floor() as usize
}

/// Chronological split of the labeled videos; ties broken by video id.
pub fn temporal_split(dataset: &Dataset, train_frac: f64, val_frac: f64) -> Result<Split, DataError> {
    if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0) {
        return Err(DataError::Split(format!(
            "fractions train={train_frac} val={val_frac} must satisfy 0 < train, 0 <= val, train + val < 1"
        )));
    }
    let mut videos: Vec<&VideoRecord> = dataset.videos.iter().filter(|v| v.label.is_some()).collect();
    if videos.is_empty() {
        return Err(DataError::Split("no labeled videos".into()));
    }
    videos.sort_by(|a, b| a.timestamp_days.total_cmp(&b.timestamp_days).then_with(|| a.video_id.cmp(&b.video_id)));
    let n = videos.len();
    let n_train = floor_count(train_frac, n);
    let n_val = floor_count(val_frac, n);
    let ids = |r: &[&VideoRecord]| r.iter().map(|v| v.video_id.clone()).collect::<Vec<_>>();
    Ok(Split {
        train_ids: ids(&videos[..n_train]),
        val_ids: ids(&videos[n_train..n_train + n_val]),
        test_ids: ids(&videos[n_train + n_val..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(id: &str, event: &str, t: f64) -> VideoRecord {
        VideoRecord {
            video_id: id.into(),
            uploader_id: "U1".into(),
            event_id: event.into(),
            timestamp_days: t,
            label: Some(0),
            features: vec![0.0; 2],
        }
    }

    fn dataset(videos: Vec<VideoRecord>) -> Dataset {
        let mut events: Vec<String> = videos.iter().map(|v| v.event_id.clone()).collect();
        events.sort();
        events.dedup();
        Dataset {
            videos,
            uploaders: vec![UploaderRecord {
                uploader_id: "U1".into(),
                profile_embedding: vec![1.0],
                raw_profile: None,
            }],
            events: events
                .into_iter()
                .map(|e| EventRecord { event_id: e, event_embedding: vec![1.0], description: None })
                .collect(),
        }
    }

    const SMALL: &str = r#"{"kind":"uploader","uploader_id":"U1","profile_embedding":[0.5,1.0]}
{"kind":"event","event_id":"E1","event_embedding":[1.0,0.0,2.0]}
{"kind":"video","video_id":"V1","uploader_id":"U1","event_id":"E1","timestamp_days":19000.5,"label":1,"features":[1,2,3,4]}
{"kind":"video","video_id":"V2","uploader_id":"U1","event_id":"E1","timestamp_days":19001,"features":[0,0,0,0]}
"#;

    #[test]
    fn parses_small_manifest() {
        let ds = parse_manifest(SMALL).unwrap();
        assert_eq!((ds.videos.len(), ds.uploaders.len(), ds.events.len()), (2, 1, 1));
        assert_eq!(ds.videos[0].label, Some(FAKE));
        assert_eq!(ds.videos[1].label, None);
    }

    #[test]
    fn dangling_event_named() {
        let text =
            SMALL.replace(r#""event_id":"E1","timestamp_days":19001"#, r#""event_id":"E9","timestamp_days":19001"#);
        let err = parse_manifest(&text).unwrap_err();
        assert!(matches!(&err, DataError::Dangling { id, .. } if id == "E9"), "{err}");
        assert!(err.to_string().contains("E9"));
    }

    #[test]
    fn dimension_mismatch() {
        let text = SMALL.replace("[0,0,0,0]", "[0,0,0,0,0]");
        assert!(matches!(parse_manifest(&text).unwrap_err(), DataError::Dimension { expected: 4, found: 5, .. }));
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = SMALL.replace(r#""kind":"event","#, r#""kind":"event","colour":"red","#);
        match parse_manifest(&text).unwrap_err() {
            DataError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_and_label_errors() {
        let dup = format!("{SMALL}{}", SMALL.lines().nth(2).unwrap());
        assert!(matches!(parse_manifest(&dup).unwrap_err(), DataError::Duplicate { kind: "video", .. }));
        let bad = SMALL.replace(r#""label":1"#, r#""label":2"#);
        assert!(matches!(parse_manifest(&bad).unwrap_err(), DataError::Label(_)));
    }

    #[test]
    fn missing_file() {
        let err = load_dataset(Path::new("/nonexistent/data.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/data.jsonl"));
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = parse_manifest(SMALL).unwrap();
        assert_eq!(parse_manifest(&ds.to_jsonl()).unwrap(), ds);
    }

    #[test]
    fn boxed_profile_example() {
        let p = RawProfile {
            verification_status: Some(VerificationStatus::Institutional),
            verification_text: Some("the official account of the Junior Reporter Department of Handan Daily".into()),
            introduction: Some("I am a Junior Reporter of Handan Daily!".into()),
            likes: Some(432_469),
            followers: Some(7_280),
            videos: Some(1_475),
            subscriptions: Some(90),
            location: Some("Hebei".into()),
        };
        let text = format_uploader_profile(&p);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[0],
            "Primary information: The author is a verified institutional uploader, and the introduction of the \
             institutional verification is \"the official account of the Junior Reporter Department of Handan Daily\"."
        );
        assert_eq!(
            lines[1],
            "Secondary information: The author introduction is: \"I am a Junior Reporter of Handan Daily!\""
        );
        assert_eq!(
            lines[2],
            "Supplementary information: 432,469 likes; 7,280 followers; 1,475 videos; 90 subscriptions; location: Hebei."
        );
    }

    #[test]
    fn empty_profile_is_unknown() {
        assert_eq!(
            format_uploader_profile(&RawProfile::default()),
            "Primary information: unknown\nSecondary information: unknown\nSupplementary information: unknown"
        );
    }

    #[test]
    fn counts_only_profile() {
        let p = RawProfile { subscriptions: Some(3), likes: Some(1_000_000), videos: Some(12), ..Default::default() };
        let text = format_uploader_profile(&p);
        assert_eq!(
            text,
            "Primary information: unknown\nSecondary information: unknown\n\
             Supplementary information: 1,000,000 likes; 12 videos; 3 subscriptions."
        );
    }

    #[test]
    fn five_events_five_folds() {
        let ds = dataset((0..5).map(|i| video(&format!("V{i}"), &format!("E{i}"), i as f64)).collect());
        let folds = event_level_folds(&ds, 5, 3).unwrap();
        for f in &folds {
            assert_eq!(f.test_ids.len(), 1);
            assert_eq!(f.train_ids.len(), 4);
            assert!(f.val_ids.is_empty());
        }
    }

    #[test]
    fn ten_events_cover_two_each() {
        let ds = dataset((0..30).map(|i| video(&format!("V{i}"), &format!("E{}", i % 10), i as f64)).collect());
        let folds = event_level_folds(&ds, 5, 42).unwrap();
        let ev: HashMap<&str, &str> = ds.videos.iter().map(|v| (v.video_id.as_str(), v.event_id.as_str())).collect();
        let mut all_test = Vec::new();
        for f in &folds {
            let test_events: HashSet<&str> = f.test_ids.iter().map(|id| ev[id.as_str()]).collect();
            let train_events: HashSet<&str> = f.train_ids.iter().map(|id| ev[id.as_str()]).collect();
            assert_eq!(test_events.len(), 2);
            assert!(test_events.is_disjoint(&train_events));
            all_test.extend(f.test_ids.iter().cloned());
        }
        all_test.sort();
        let mut all: Vec<String> = ds.videos.iter().map(|v| v.video_id.clone()).collect();
        all.sort();
        assert_eq!(all_test, all);
        assert_eq!(folds, event_level_folds(&ds, 5, 42).unwrap());
    }

    #[test]
    fn too_few_events() {
        let ds = dataset(vec![video("V0", "E0", 0.0)]);
        assert!(matches!(event_level_folds(&ds, 2, 0), Err(DataError::Split(_))));
    }

    #[test]
    fn temporal_sizes() {
        for (n, expect) in [(20, (14, 3, 3)), (10, (7, 1, 2))] {
            let ds = dataset((0..n).map(|i| video(&format!("V{i:02}"), "E", (n - i) as f64)).collect());
            let s = temporal_split(&ds, 0.7, 0.15).unwrap();
            assert_eq!((s.train_ids.len(), s.val_ids.len(), s.test_ids.len()), expect);
        }
    }

    #[test]
    fn temporal_ties_use_id_order() {
        let ds = dataset(["c", "a", "d", "b"].iter().map(|id| video(id, "E", 5.0)).collect());
        let s = temporal_split(&ds, 0.5, 0.25).unwrap();
        assert_eq!(s.train_ids, vec!["a", "b"]);
        assert_eq!(s.val_ids, vec!["c"]);
        assert_eq!(s.test_ids, vec!["d"]);
    }

    #[test]
    fn temporal_bad_fractions() {
        let ds = dataset(vec![video("V0", "E0", 0.0)]);
        for (t, v) in [(0.0, 0.1), (0.9, 0.1), (0.5, -0.1)] {
            assert!(temporal_split(&ds, t, v).is_err());
        }
    }
}
