//! Episodes, raw-session ingestion and the on-disk dataset layout.
//!
//! ```text
//! <root>/index.json
//! <root>/episodes/<id>/meta.json
//! <root>/episodes/<id>/frames.bin
//! <root>/episodes/<id>/<image_ref>        (copied when a source is given)
//! ```
//!
//! `frames.bin` starts with a 20-byte header — magic `MTEP1`, a flags byte
//! (bit 0: keypoints present), two zero bytes, the row width as `u32` and
//! the row count as `u64`, both little-endian — followed by rows of
//! little-endian `f64`: timestamp, position (3), quaternion `w x y z` (4),
//! hand joints (6) and, when flagged, 21 keypoints (63). `meta.json` holds
//! the episode metadata and the SHA-256 of `frames.bin`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::CalibrationResult;
use crate::error::{Error, Result};
use crate::geometry::{compose, FrameId, Pose, Vec3};
use crate::kinematics::{HandModel, JointState};
use crate::retarget::{retarget_episode, HumanHand, RetargetConfig, N_KEYPOINTS};
use crate::HAND_DOF;

pub const FRAMES_MAGIC: &[u8; 5] = b"MTEP1";
pub const FRAMES_HEADER_LEN: usize = 20;
const BASE_STRIDE: usize = 1 + 3 + 4 + HAND_DOF;
const KEYPOINT_STRIDE: usize = BASE_STRIDE + 3 * N_KEYPOINTS;
pub const DATASET_FORMAT: &str = "mt-dataset";
pub const EPISODE_FORMAT: &str = "mt-episode";
pub const FORMAT_VERSION: u32 = 1;
/// Human episodes losing more than this fraction of frames are rejected.
pub const MAX_DROP_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Human,
    Robot,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Human => "human",
            Domain::Robot => "robot",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub image_ref: String,
    pub wrist_pose: Pose,
    pub hand_joints: JointState,
    pub raw_keypoints: Option<Vec<Vec3>>,
}

/// Processing-step log carried with every episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub calibration_id: Option<String>,
    pub dropped_frames: usize,
    pub slowdown: Option<f64>,
    pub retarget_config: Option<String>,
    /// Ordered processing steps, e.g. `["calibrate", "retarget", "slowdown"]`.
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub domain: Domain,
    pub task_id: String,
    pub instruction: String,
    pub scene_tag: String,
    pub fps: f64,
    pub image_size: Option<[u32; 2]>,
    pub frames: Vec<Frame>,
    pub provenance: Provenance,
}

impl Episode {
    fn invalid(&self, message: impl Into<String>) -> Error {
        Error::InvalidEpisode {
            episode: self.id.clone(),
            message: message.into(),
        }
    }

    /// Structural checks; with a model, joints must also respect its limits.
    pub fn validate(&self, model: Option<&HandModel>) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) || self.id.starts_with('.') {
            return Err(self.invalid("id must be a plain, non-empty name"));
        }
        if self.frames.len() < 2 {
            return Err(self.invalid(format!("{} frames, need at least 2", self.frames.len())));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(self.invalid(format!("fps {} must be positive", self.fps)));
        }
        let with_kp = self.frames[0].raw_keypoints.is_some();
        for (i, f) in self.frames.iter().enumerate() {
            let at = |e| Error::at_frame(&self.id, i, e);
            if !f.timestamp.is_finite() {
                return Err(at(Error::NonFinite("timestamp".into())));
            }
            if i > 0 && !(f.timestamp > self.frames[i - 1].timestamp) {
                return Err(Error::NonMonotonicTime {
                    episode: self.id.clone(),
                    index: i,
                });
            }
            f.wrist_pose.expect_frame(FrameId::Camera).map_err(at)?;
            if !f.wrist_pose.is_finite() {
                return Err(at(Error::NonFinite("wrist pose".into())));
            }
            if !f.hand_joints.is_finite() {
                return Err(at(Error::NonFinite("hand joints".into())));
            }
            if let Some(m) = model {
                if !m.within_limits(&f.hand_joints) {
                    return Err(at(Error::InvalidArgument(format!(
                        "hand joints {:?} outside model limits",
                        f.hand_joints.0
                    ))));
                }
            }
            match &f.raw_keypoints {
                Some(kp) if with_kp => {
                    if kp.len() != N_KEYPOINTS {
                        return Err(at(Error::Dimension {
                            expected: N_KEYPOINTS,
                            actual: kp.len(),
                        }));
                    }
                    if !kp.iter().all(|k| k.iter().all(|v| v.is_finite())) {
                        return Err(at(Error::NonFinite("keypoints".into())));
                    }
                }
                None if !with_kp => {}
                _ => return Err(at(Error::InvalidArgument("keypoints present on only some frames".into()))),
            }
            if f.image_ref.is_empty() || Path::new(&f.image_ref).is_absolute() || f.image_ref.contains("..") {
                return Err(at(Error::InvalidArgument(format!(
                    "image reference {:?} must be a relative path",
                    f.image_ref
                ))));
            }
        }
        Ok(())
    }

    pub fn has_keypoints(&self) -> bool {
        self.frames.first().is_some_and(|f| f.raw_keypoints.is_some())
    }

    pub fn duration(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// raw sessions

/// One VR-tracked human frame. `keypoints` is `null` when tracking was lost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHumanFrame {
    pub timestamp: f64,
    pub image: String,
    pub wrist_pose: Pose,
    pub keypoints: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHumanEpisode {
    pub id: String,
    pub task_id: String,
    pub instruction: String,
    #[serde(default)]
    pub scene_tag: String,
    pub frames: Vec<RawHumanFrame>,
}

/// `session.json` of a human recording directory. Poses and keypoints are
/// in the VR frame; image paths are relative to the session directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawHumanSession {
    pub fps: f64,
    #[serde(default)]
    pub image_size: Option<[u32; 2]>,
    pub episodes: Vec<RawHumanEpisode>,
}

/// One teleoperation frame: wrist pose in the robot base frame plus joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRobotFrame {
    pub timestamp: f64,
    pub image: String,
    pub wrist_pose: Pose,
    pub joints: [f64; HAND_DOF],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRobotEpisode {
    pub id: String,
    pub task_id: String,
    pub instruction: String,
    #[serde(default)]
    pub scene_tag: String,
    pub frames: Vec<RawRobotFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRobotSession {
    pub fps: f64,
    #[serde(default)]
    pub image_size: Option<[u32; 2]>,
    pub episodes: Vec<RawRobotEpisode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub episode: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub episodes: Vec<Episode>,
    pub rejected: Vec<Rejection>,
}

pub struct HumanIngest<'a> {
    pub calibration: Option<&'a CalibrationResult>,
    pub model: &'a HandModel,
    pub retarget: &'a RetargetConfig,
}

fn session_path(dir: &Path) -> PathBuf {
    dir.join("session.json")
}

pub fn ingest_human_raw(dir: &Path, opts: &HumanIngest<'_>) -> Result<IngestReport> {
    let session: RawHumanSession = crate::read_json(&session_path(dir))?;
    ingest_human_session(&session, opts)
}

fn check_raw_times(id: &str, times: impl Iterator<Item = f64>) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for (i, t) in times.enumerate() {
        if !t.is_finite() {
            return Err(Error::at_frame(id, i, Error::NonFinite("timestamp".into())));
        }
        if !(t > prev) {
            return Err(Error::NonMonotonicTime {
                episode: id.to_string(),
                index: i,
            });
        }
        prev = t;
    }
    Ok(())
}

fn ingest_human_episode(
    raw: &RawHumanEpisode,
    fps: f64,
    image_size: Option<[u32; 2]>,
    cal: &CalibrationResult,
    opts: &HumanIngest<'_>,
) -> Result<std::result::Result<Episode, Rejection>> {
    check_raw_times(&raw.id, raw.frames.iter().map(|f| f.timestamp))?;
    let mut kept = Vec::with_capacity(raw.frames.len());
    for (i, f) in raw.frames.iter().enumerate() {
        f.wrist_pose
            .expect_frame(FrameId::Vr)
            .map_err(|e| Error::at_frame(&raw.id, i, e))?;
        let Some(kp) = &f.keypoints else { continue };
        let hand = HumanHand {
            keypoints: kp.iter().map(|p| Vec3::from(*p)).collect(),
            wrist_pose: f.wrist_pose,
        };
        if hand.validate().is_err() {
            continue;
        }
        kept.push((f, cal.apply(&hand)?));
    }
    let dropped = raw.frames.len() - kept.len();
    if raw.frames.is_empty() || dropped as f64 > MAX_DROP_FRACTION * raw.frames.len() as f64 {
        return Ok(Err(Rejection {
            episode: raw.id.clone(),
            reason: format!(
                "{dropped} of {} frames lack valid hand tracking (limit {:.0}%)",
                raw.frames.len(),
                MAX_DROP_FRACTION * 100.0
            ),
        }));
    }
    let hands: Vec<HumanHand> = kept.iter().map(|(_, h)| h.clone()).collect();
    let joints = retarget_episode(opts.model, &hands, opts.retarget)
        .map_err(|e| relabel(e, &raw.id))?;
    let frames = kept
        .into_iter()
        .zip(joints)
        .map(|((f, hand), out)| Frame {
            timestamp: f.timestamp,
            image_ref: f.image.clone(),
            wrist_pose: hand.wrist_pose,
            hand_joints: out.joints,
            raw_keypoints: Some(hand.keypoints),
        })
        .collect();
    let episode = Episode {
        id: raw.id.clone(),
        domain: Domain::Human,
        task_id: raw.task_id.clone(),
        instruction: raw.instruction.clone(),
        scene_tag: raw.scene_tag.clone(),
        fps,
        image_size,
        frames,
        provenance: Provenance {
            calibration_id: Some(cal.id.clone()),
            dropped_frames: dropped,
            slowdown: None,
            retarget_config: Some(opts.retarget.digest()),
            steps: vec!["calibrate".into(), "retarget".into()],
        },
    };
    if let Err(e) = episode.validate(Some(opts.model)) {
        return Ok(Err(Rejection {
            episode: raw.id.clone(),
            reason: e.to_string(),
        }));
    }
    Ok(Ok(episode))
}

/// Retarget errors are tagged with a placeholder episode name; swap in the real one.
fn relabel(e: Error, id: &str) -> Error {
    match e {
        Error::AtFrame { frame, source, .. } => Error::AtFrame {
            episode: id.to_string(),
            frame,
            source,
        },
        other => other,
    }
}

fn split(results: Vec<std::result::Result<Episode, Rejection>>) -> IngestReport {
    let mut report = IngestReport {
        episodes: Vec::new(),
        rejected: Vec::new(),
    };
    for r in results {
        match r {
            Ok(e) => report.episodes.push(e),
            Err(rej) => {
                log::warn!("episode {} rejected: {}", rej.episode, rej.reason);
                report.rejected.push(rej);
            }
        }
    }
    report
}

/// Moves VR-frame recordings into the camera frame, drops frames without
/// valid tracking and retargets the remaining keypoints to hand joints.
pub fn ingest_human_session(session: &RawHumanSession, opts: &HumanIngest<'_>) -> Result<IngestReport> {
    let cal = opts
        .calibration
        .ok_or_else(|| Error::InvalidArgument("human ingestion requires a calibration".into()))?;
    cal.validate()?;
    opts.retarget.validate(opts.model)?;
    if !(session.fps > 0.0) {
        return Err(Error::InvalidArgument(format!("session fps {} must be positive", session.fps)));
    }
    let results = session
        .episodes
        .par_iter()
        .map(|raw| ingest_human_episode(raw, session.fps, session.image_size, cal, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(split(results))
}

pub fn ingest_robot_raw(dir: &Path, extrinsic: Option<&Pose>, model: &HandModel) -> Result<IngestReport> {
    let session: RawRobotSession = crate::read_json(&session_path(dir))?;
    ingest_robot_session(&session, extrinsic, model)
}

/// Re-expresses robot wrist poses in the camera frame. `extrinsic` is the
/// robot base pose in the camera frame.
pub fn ingest_robot_session(
    session: &RawRobotSession,
    extrinsic: Option<&Pose>,
    model: &HandModel,
) -> Result<IngestReport> {
    let extrinsic =
        extrinsic.ok_or_else(|| Error::InvalidArgument("robot ingestion requires a base-to-camera extrinsic".into()))?;
    extrinsic.expect_frame(FrameId::Camera)?;
    if !(session.fps > 0.0) {
        return Err(Error::InvalidArgument(format!("session fps {} must be positive", session.fps)));
    }
    let results = session
        .episodes
        .par_iter()
        .map(|raw| -> Result<std::result::Result<Episode, Rejection>> {
            check_raw_times(&raw.id, raw.frames.iter().map(|f| f.timestamp))?;
            let mut frames = Vec::with_capacity(raw.frames.len());
            for (i, f) in raw.frames.iter().enumerate() {
                f.wrist_pose
                    .expect_frame(FrameId::RobotBase)
                    .map_err(|e| Error::at_frame(&raw.id, i, e))?;
                frames.push(Frame {
                    timestamp: f.timestamp,
                    image_ref: f.image.clone(),
                    wrist_pose: compose(extrinsic, &f.wrist_pose).with_frame(FrameId::Camera),
                    hand_joints: JointState(f.joints),
                    raw_keypoints: None,
                });
            }
            let episode = Episode {
                id: raw.id.clone(),
                domain: Domain::Robot,
                task_id: raw.task_id.clone(),
                instruction: raw.instruction.clone(),
                scene_tag: raw.scene_tag.clone(),
                fps: session.fps,
                image_size: session.image_size,
                frames,
                provenance: Provenance {
                    steps: vec!["extrinsic".into()],
                    ..Provenance::default()
                },
            };
            episode.validate(Some(model))?;
            Ok(Ok(episode))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(split(results))
}

// ---------------------------------------------------------------------------
// on-disk format

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub id: String,
    pub domain: Domain,
    pub task_id: String,
    pub n_frames: usize,
    /// Episode directory relative to the dataset root.
    pub path: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCounts {
    pub human: usize,
    pub robot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format: String,
    pub version: u32,
    pub episodes: Vec<EpisodeEntry>,
    pub tasks: BTreeMap<String, Vec<String>>,
    pub counts: DomainCounts,
}

impl DatasetIndex {
    pub fn from_episodes(episodes: &[Episode]) -> Self {
        let mut tasks: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut counts = DomainCounts::default();
        let entries = episodes
            .iter()
            .map(|e| {
                let list = tasks.entry(e.task_id.clone()).or_default();
                if !list.contains(&e.instruction) {
                    list.push(e.instruction.clone());
                }
                match e.domain {
                    Domain::Human => counts.human += 1,
                    Domain::Robot => counts.robot += 1,
                }
                EpisodeEntry {
                    id: e.id.clone(),
                    domain: e.domain,
                    task_id: e.task_id.clone(),
                    n_frames: e.frames.len(),
                    path: format!("episodes/{}", e.id),
                }
            })
            .collect();
        DatasetIndex {
            format: DATASET_FORMAT.into(),
            version: FORMAT_VERSION,
            episodes: entries,
            tasks,
            counts,
        }
    }

    pub fn count_frames(&self, domain: Domain) -> usize {
        self.episodes
            .iter()
            .filter(|e| e.domain == domain)
            .map(|e| e.n_frames)
            .sum()
    }

    /// Reads an `index.json` on its own, checking format, version and counts.
    pub fn load(path: &Path) -> Result<Self> {
        let index: DatasetIndex = crate::read_json(path)?;
        if index.format != DATASET_FORMAT || index.version != FORMAT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: format!("{} v{}", index.format, index.version),
            });
        }
        index.check_counts(path)?;
        Ok(index)
    }

    fn check_counts(&self, path: &Path) -> Result<()> {
        let human = self.episodes.iter().filter(|e| e.domain == Domain::Human).count();
        let robot = self.episodes.len() - human;
        if (human, robot) != (self.counts.human, self.counts.robot) {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                message: format!(
                    "counts ({}, {}) disagree with episode list ({human}, {robot})",
                    self.counts.human, self.counts.robot
                ),
            });
        }
        let mut ids: Vec<&str> = self.episodes.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                message: "duplicate episode ids".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EpisodeMeta {
    format: String,
    version: u32,
    id: String,
    domain: Domain,
    task_id: String,
    instruction: String,
    scene_tag: String,
    fps: f64,
    image_size: Option<[u32; 2]>,
    n_frames: usize,
    frames_sha256: String,
    image_refs: Vec<String>,
    provenance: Provenance,
}

/// Serializes frames to the `MTEP1` binary layout.
pub fn encode_frames(frames: &[Frame]) -> Vec<u8> {
    let with_kp = frames.first().is_some_and(|f| f.raw_keypoints.is_some());
    let stride = if with_kp { KEYPOINT_STRIDE } else { BASE_STRIDE };
    let mut out = Vec::with_capacity(FRAMES_HEADER_LEN + 8 * stride * frames.len());
    out.extend_from_slice(FRAMES_MAGIC);
    out.push(u8::from(with_kp));
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(stride as u32).to_le_bytes());
    out.extend_from_slice(&(frames.len() as u64).to_le_bytes());
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    for f in frames {
        put(f.timestamp);
        f.wrist_pose.position.iter().for_each(|&v| put(v));
        f.wrist_pose.quat_wxyz().into_iter().for_each(&mut put);
        f.hand_joints.0.iter().for_each(|&v| put(v));
        if with_kp {
            for k in f.raw_keypoints.as_deref().unwrap_or_default() {
                k.iter().for_each(|&v| put(v));
            }
        }
    }
    out
}

/// Parses `MTEP1` bytes; `image_refs` supplies each frame's image reference.
pub fn decode_frames(bytes: &[u8], image_refs: &[String], path: &Path) -> Result<Vec<Frame>> {
    let corrupt = |message: String| Error::Corrupt {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < FRAMES_HEADER_LEN {
        return Err(corrupt(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..5] != FRAMES_MAGIC {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: String::from_utf8_lossy(&bytes[..5]).into_owned(),
        });
    }
    let flags = bytes[5];
    if flags > 1 || bytes[6] != 0 || bytes[7] != 0 {
        return Err(corrupt(format!("unknown header flags {flags:#04x}")));
    }
    let with_kp = flags & 1 == 1;
    let stride = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected_stride = if with_kp { KEYPOINT_STRIDE } else { BASE_STRIDE };
    if stride != expected_stride {
        return Err(corrupt(format!("row width {stride}, expected {expected_stride}")));
    }
    let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let body = &bytes[FRAMES_HEADER_LEN..];
    let expected_len = (n as u128) * (stride as u128) * 8;
    if body.len() as u128 != expected_len {
        return Err(corrupt(format!(
            "{} body bytes for {n} rows of {stride} values",
            body.len()
        )));
    }
    let n = n as usize;
    if image_refs.len() != n {
        return Err(corrupt(format!("{} image refs for {n} frames", image_refs.len())));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(values
        .chunks_exact(stride)
        .zip(image_refs)
        .map(|(r, image)| Frame {
            timestamp: r[0],
            image_ref: image.clone(),
            wrist_pose: Pose::from_parts([r[1], r[2], r[3]], [r[4], r[5], r[6], r[7]], FrameId::Camera),
            hand_joints: JointState(std::array::from_fn(|k| r[8 + k])),
            raw_keypoints: with_kp.then(|| {
                r[BASE_STRIDE..]
                    .chunks_exact(3)
                    .map(|c| Vec3::new(c[0], c[1], c[2]))
                    .collect()
            }),
        })
        .collect())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_episode(root: &Path, entry: &EpisodeEntry, ep: &Episode, images_from: &[&Path]) -> Result<()> {
    let dir = root.join(&entry.path);
    ensure_dir(&dir)?;
    let bytes = encode_frames(&ep.frames);
    let frames_path = dir.join("frames.bin");
    std::fs::write(&frames_path, &bytes).map_err(|e| Error::io(&frames_path, e))?;
    let meta = EpisodeMeta {
        format: EPISODE_FORMAT.into(),
        version: FORMAT_VERSION,
        id: ep.id.clone(),
        domain: ep.domain,
        task_id: ep.task_id.clone(),
        instruction: ep.instruction.clone(),
        scene_tag: ep.scene_tag.clone(),
        fps: ep.fps,
        image_size: ep.image_size,
        n_frames: ep.frames.len(),
        frames_sha256: hex::encode(Sha256::digest(&bytes)),
        image_refs: ep.frames.iter().map(|f| f.image_ref.clone()).collect(),
        provenance: ep.provenance.clone(),
    };
    crate::write_json(&dir.join("meta.json"), &meta)?;
    if !images_from.is_empty() {
        let mut done = std::collections::BTreeSet::new();
        for f in &ep.frames {
            if !done.insert(f.image_ref.as_str()) {
                continue;
            }
            let Some(src) = images_from.iter().map(|r| r.join(&f.image_ref)).find(|p| p.is_file()) else {
                continue;
            };
            let dst = dir.join(&f.image_ref);
            if let Some(parent) = dst.parent() {
                ensure_dir(parent)?;
            }
            std::fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
        }
    }
    Ok(())
}

/// Writes validated episodes and returns the index. Each referenced image is
/// copied from the first directory in `images_from` that holds it.
pub fn write_dataset(episodes: &[Episode], out: &Path, images_from: &[&Path]) -> Result<DatasetIndex> {
    for e in episodes {
        e.validate(None)?;
    }
    let index = DatasetIndex::from_episodes(episodes);
    index.check_counts(&out.join("index.json"))?;
    ensure_dir(out)?;
    index
        .episodes
        .par_iter()
        .zip(episodes)
        .try_for_each(|(entry, ep)| write_episode(out, entry, ep, images_from))?;
    crate::write_json(&out.join("index.json"), &index)?;
    Ok(index)
}

/// An opened dataset; episodes are loaded on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub index: DatasetIndex,
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("index.json");
    let index = DatasetIndex::load(&path)?;
    for e in &index.episodes {
        for file in ["meta.json", "frames.bin"] {
            let p = dir.join(&e.path).join(file);
            if !p.is_file() {
                return Err(Error::Corrupt {
                    path: path.clone(),
                    message: format!("missing {}", p.display()),
                });
            }
        }
    }
    Ok(Dataset {
        root: dir.to_path_buf(),
        index,
    })
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        read_dataset(dir)
    }

    pub fn len(&self) -> usize {
        self.index.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.episodes.is_empty()
    }

    pub fn load(&self, i: usize) -> Result<Episode> {
        let entry = self
            .index
            .episodes
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("episode index {i} out of range")))?;
        let dir = self.root.join(&entry.path);
        let meta_path = dir.join("meta.json");
        let meta: EpisodeMeta = crate::read_json(&meta_path)?;
        if meta.format != EPISODE_FORMAT || meta.version != FORMAT_VERSION {
            return Err(Error::Version {
                path: meta_path,
                found: format!("{} v{}", meta.format, meta.version),
            });
        }
        if meta.id != entry.id || meta.domain != entry.domain || meta.n_frames != entry.n_frames {
            return Err(Error::Corrupt {
                path: meta_path,
                message: format!("metadata disagrees with index entry {}", entry.id),
            });
        }
        let frames_path = dir.join("frames.bin");
        let bytes = std::fs::read(&frames_path).map_err(|e| Error::io(&frames_path, e))?;
        if hex::encode(Sha256::digest(&bytes)) != meta.frames_sha256 {
            return Err(Error::Corrupt {
                path: frames_path,
                message: "checksum mismatch".into(),
            });
        }
        let frames = decode_frames(&bytes, &meta.image_refs, &frames_path)?;
        if frames.len() != meta.n_frames {
            return Err(Error::Corrupt {
                path: frames_path,
                message: format!("{} frames, metadata says {}", frames.len(), meta.n_frames),
            });
        }
        Ok(Episode {
            id: meta.id,
            domain: meta.domain,
            task_id: meta.task_id,
            instruction: meta.instruction,
            scene_tag: meta.scene_tag,
            fps: meta.fps,
            image_size: meta.image_size,
            frames,
            provenance: meta.provenance,
        })
    }

    pub fn load_all(&self) -> Result<Vec<Episode>> {
        (0..self.len()).into_par_iter().map(|i| self.load(i)).collect()
    }
}
