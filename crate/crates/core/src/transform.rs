//! Human-to-robot data transformation: temporal slowdown, image crop/resize
//! bookkeeping, proprioception history and action-chunk construction, and
//! the `MTSMP1` sample shard format.
//!
//! Rows are `[position(3), rot6d(6), joints(6)]`. In relative mode the wrist
//! part of action row `k` is `pose_t⁻¹ ∘ pose_{t+k}`, i.e. the future pose in
//! the current wrist's local frame; hand joints are always absolute.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Domain, Episode, Frame};
use crate::error::{Error, Result};
use crate::geometry::{decode_rot6d, encode_rot6d, relative, slerp_quat, FrameId, Pose, Rot6D, Vec3};
use crate::kinematics::JointState;
use crate::ROW_DIM;

pub type Row = [f64; ROW_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseMode {
    Relative,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkSpec {
    pub t_p: usize,
    pub t_a: usize,
    pub fps: f64,
    pub pose_mode: PoseMode,
    /// Applied to human episodes only.
    pub slowdown: f64,
}

impl Default for ChunkSpec {
    fn default() -> Self {
        ChunkSpec {
            t_p: 2,
            t_a: 16,
            fps: 10.0,
            pose_mode: PoseMode::Relative,
            slowdown: 2.25,
        }
    }
}

impl ChunkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_p < 1 || self.t_a < 1 {
            return Err(Error::InvalidArgument("t_p and t_a must be at least 1".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidArgument(format!("fps {} must be positive", self.fps)));
        }
        if !(self.slowdown >= 1.0 && self.slowdown.is_finite()) {
            return Err(Error::InvalidArgument(format!("slowdown {} must be >= 1", self.slowdown)));
        }
        Ok(())
    }
}

pub fn pose_row(pose: &Pose, joints: &JointState) -> Row {
    let r = encode_rot6d(&pose.orientation).0;
    let p = pose.position;
    let j = joints.0;
    [
        p.x, p.y, p.z, r[0], r[1], r[2], r[3], r[4], r[5], j[0], j[1], j[2], j[3], j[4], j[5],
    ]
}

/// Decodes the wrist part of a row back into a pose tagged `frame`.
pub fn row_pose(row: &Row, frame: FrameId) -> Result<Pose> {
    let q = decode_rot6d(&Rot6D(std::array::from_fn(|i| row[3 + i])))?;
    Ok(Pose::new(Vec3::new(row[0], row[1], row[2]), q, frame))
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn interpolate(a: &Frame, b: &Frame, t: f64, timestamp: f64) -> Frame {
    Frame {
        timestamp,
        image_ref: if t < 0.5 { a.image_ref.clone() } else { b.image_ref.clone() },
        wrist_pose: Pose {
            position: a.wrist_pose.position.lerp(&b.wrist_pose.position, t),
            orientation: slerp_quat(&a.wrist_pose.orientation, &b.wrist_pose.orientation, t),
            frame: a.wrist_pose.frame,
        },
        hand_joints: JointState(std::array::from_fn(|i| lerp(a.hand_joints.0[i], b.hand_joints.0[i], t))),
        raw_keypoints: match (&a.raw_keypoints, &b.raw_keypoints) {
            (Some(ka), Some(kb)) => Some(ka.iter().zip(kb).map(|(x, y)| x.lerp(y, t)).collect()),
            _ => None,
        },
    }
}

/// Number of frames after stretching `n` frames by `factor`.
pub fn slowed_len(n: usize, factor: f64) -> usize {
    ((n - 1) as f64 * factor).round() as usize + 1
}

/// Stretches a human episode in time by `factor` while keeping its fps:
/// output frame `j` samples the source path at the time fraction
/// `j / (N' − 1)` of its span, with linear interpolation of positions,
/// joints and keypoints and slerp of orientations. `N'` is
/// [`slowed_len`] of the episode's length on its nominal frame grid, which
/// is the stored frame count unless dropped frames left gaps.
pub fn slow_down(episode: &Episode, factor: f64) -> Result<Episode> {
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!("slowdown factor {factor} must be >= 1")));
    }
    if episode.domain != Domain::Human {
        return Err(Error::InvalidEpisode {
            episode: episode.id.clone(),
            message: "slowdown applies to human episodes only".into(),
        });
    }
    let src = &episode.frames;
    if src.len() < 2 {
        return Err(Error::InvalidEpisode {
            episode: episode.id.clone(),
            message: format!("{} frames, need at least 2", src.len()),
        });
    }
    let mut out = episode.clone();
    out.provenance.slowdown = Some(factor);
    out.provenance.steps.push("slowdown".into());
    if factor == 1.0 {
        return Ok(out);
    }

    let t0 = src[0].timestamp;
    let t_end = src[src.len() - 1].timestamp;
    let span = t_end - t0;
    // length of the nominal frame grid; differs from the stored count only
    // when tracking dropouts left gaps in the timestamps
    let grid = (span * episode.fps).round() as usize + 1;
    let n_out = slowed_len(grid.max(2), factor);
    let mut frames = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let stamp = t0 + j as f64 / episode.fps;
        if j == n_out - 1 {
            frames.push(Frame {
                timestamp: stamp,
                ..src[src.len() - 1].clone()
            });
            continue;
        }
        let u = t0 + span * (j as f64 / (n_out - 1) as f64);
        // last source frame with timestamp <= u
        let k = (src.partition_point(|f| f.timestamp <= u) - 1).min(src.len() - 2);
        let (a, b) = (&src[k], &src[k + 1]);
        let t = ((u - a.timestamp) / (b.timestamp - a.timestamp)).clamp(0.0, 1.0);
        frames.push(if t == 0.0 {
            Frame {
                timestamp: stamp,
                ..a.clone()
            }
        } else {
            interpolate(a, b, t, stamp)
        });
    }
    out.frames = frames;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub episode_id: String,
    pub frame_index: usize,
    pub image_ref: String,
    pub task_id: String,
    pub domain: Domain,
    pub instruction: String,
    /// `t_p` rows, oldest first, ending at the current frame.
    pub proprio: Vec<Row>,
    /// `t_a` rows for frames `t+1 … t+t_a`.
    pub action: Vec<Row>,
    /// `false` for tail rows that repeat the final frame.
    pub action_mask: Vec<bool>,
}

/// One sample per frame. History before the first frame replicates frame 0;
/// chunk rows past the last frame repeat it and are masked out.
pub fn make_samples(episode: &Episode, spec: &ChunkSpec) -> Result<Vec<TrainingSample>> {
    spec.validate()?;
    let frames = &episode.frames;
    if frames.is_empty() {
        return Err(Error::InvalidEpisode {
            episode: episode.id.clone(),
            message: "no frames".into(),
        });
    }
    if (episode.fps - spec.fps).abs() > 1e-9 * spec.fps {
        return Err(Error::InvalidEpisode {
            episode: episode.id.clone(),
            message: format!("episode runs at {} fps, chunks expect {}", episode.fps, spec.fps),
        });
    }
    for (i, f) in frames.iter().enumerate() {
        f.wrist_pose
            .expect_frame(FrameId::Camera)
            .map_err(|e| Error::at_frame(&episode.id, i, e))?;
    }
    let n = frames.len();
    let abs_rows: Vec<Row> = frames.iter().map(|f| pose_row(&f.wrist_pose, &f.hand_joints)).collect();
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let proprio = (0..spec.t_p)
            .map(|h| abs_rows[(t + h + 1).saturating_sub(spec.t_p)])
            .collect();
        let mut action = Vec::with_capacity(spec.t_a);
        let mut mask = Vec::with_capacity(spec.t_a);
        for k in 1..=spec.t_a {
            let idx = (t + k).min(n - 1);
            mask.push(t + k < n);
            action.push(match spec.pose_mode {
                PoseMode::Absolute => abs_rows[idx],
                PoseMode::Relative => {
                    let rel = relative(&frames[t].wrist_pose, &frames[idx].wrist_pose)?;
                    pose_row(&rel, &frames[idx].hand_joints)
                }
            });
        }
        out.push(TrainingSample {
            episode_id: episode.id.clone(),
            frame_index: t,
            image_ref: frames[t].image_ref.clone(),
            task_id: episode.task_id.clone(),
            domain: episode.domain,
            instruction: episode.instruction.clone(),
            proprio,
            action,
            action_mask: mask,
        });
    }
    Ok(out)
}

/// Slows human episodes by `spec.slowdown` (robot episodes pass through).
pub fn process_episode(episode: &Episode, spec: &ChunkSpec) -> Result<Episode> {
    match episode.domain {
        Domain::Human => slow_down(episode, spec.slowdown),
        Domain::Robot => Ok(episode.clone()),
    }
}

/// Processes and chunks every episode; output order follows input order.
pub fn build_samples(episodes: &[Episode], spec: &ChunkSpec) -> Result<Vec<TrainingSample>> {
    spec.validate()?;
    let per: Vec<Vec<TrainingSample>> = episodes
        .par_iter()
        .map(|e| make_samples(&process_episode(e, spec)?, spec))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

// ---------------------------------------------------------------------------
// images

pub const CROP_SIZE: [u32; 2] = [640, 480];
pub const OUTPUT_SIZE: [u32; 2] = [224, 224];

/// Centre crop followed by a bilinear resize, recorded for lazy application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTransform {
    pub source_size: [u32; 2],
    pub crop_origin: [u32; 2],
    pub crop_size: [u32; 2],
    pub output_size: [u32; 2],
}

pub fn crop_resize_spec(width: u32, height: u32) -> Result<ImageTransform> {
    if width < CROP_SIZE[0] || height < CROP_SIZE[1] {
        return Err(Error::InvalidArgument(format!(
            "image {width}x{height} is smaller than the {}x{} crop",
            CROP_SIZE[0], CROP_SIZE[1]
        )));
    }
    Ok(ImageTransform {
        source_size: [width, height],
        crop_origin: [(width - CROP_SIZE[0]) / 2, (height - CROP_SIZE[1]) / 2],
        crop_size: CROP_SIZE,
        output_size: OUTPUT_SIZE,
    })
}

/// Row-major interleaved image with `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels || width == 0 || height == 0 || channels == 0 {
            return Err(Error::Dimension {
                expected: width * height * channels,
                actual: data.len(),
            });
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Raster> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument("crop exceeds image bounds".into()));
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Raster::new(w, h, self.channels, data)
    }
}

/// Source coordinate sampled by output index `dst` under the half-pixel
/// (align-corners = false) convention, clamped to the valid range.
pub fn source_coordinate(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    let scale = src_len as f64 / dst_len as f64;
    ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64)
}

pub fn resize_bilinear(src: &Raster, width: usize, height: usize) -> Result<Raster> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("output size must be positive".into()));
    }
    let mut data = Vec::with_capacity(width * height * src.channels);
    for y in 0..height {
        let sy = source_coordinate(y, src.height, height);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(src.height - 1);
        let fy = sy - y0 as f64;
        for x in 0..width {
            let sx = source_coordinate(x, src.width, width);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(src.width - 1);
            let fx = sx - x0 as f64;
            for c in 0..src.channels {
                let top = src.at(x0, y0, c) * (1.0 - fx) + src.at(x1, y0, c) * fx;
                let bottom = src.at(x0, y1, c) * (1.0 - fx) + src.at(x1, y1, c) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Raster::new(width, height, src.channels, data)
}

impl ImageTransform {
    pub fn apply(&self, image: &Raster) -> Result<Raster> {
        if [image.width as u32, image.height as u32] != self.source_size {
            return Err(Error::InvalidArgument(format!(
                "image is {}x{}, transform expects {}x{}",
                image.width, image.height, self.source_size[0], self.source_size[1]
            )));
        }
        let cropped = image.crop(
            self.crop_origin[0] as usize,
            self.crop_origin[1] as usize,
            self.crop_size[0] as usize,
            self.crop_size[1] as usize,
        )?;
        resize_bilinear(&cropped, self.output_size[0] as usize, self.output_size[1] as usize)
    }
}

// ---------------------------------------------------------------------------
// MTSMP1 shards
//
// samples.bin: magic "MTSMP1", pose-mode byte (0 relative, 1 absolute), one
// zero byte, u32 t_p, u32 t_a, u32 row width, u64 record count (all LE),
// then fixed-size records: u32 episode-table index, u32 frame index,
// t_p proprio rows and t_a action rows of LE f64, t_a mask bytes, zero
// padding to a multiple of 8 bytes. samples.json carries the episode table.

pub const SAMPLES_MAGIC: &[u8; 6] = b"MTSMP1";
pub const SAMPLES_HEADER_LEN: usize = 28;
pub const SAMPLES_FORMAT: &str = "mt-samples";
pub const RELATIVE_POSE_CONVENTION: &str = "current wrist frame: pose_t^-1 * pose_t+k";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEpisode {
    pub id: String,
    pub domain: Domain,
    pub task_id: String,
    pub instruction: String,
    pub first_record: usize,
    pub n_records: usize,
    /// Image reference per frame index.
    pub image_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleIndex {
    pub format: String,
    pub version: u32,
    pub spec: ChunkSpec,
    pub relative_pose_convention: String,
    pub row_layout: String,
    pub record_bytes: usize,
    pub count: usize,
    pub bin_sha256: String,
    pub image_transform: Option<ImageTransform>,
    /// SHA-256 of the source dataset index, when known.
    pub source_index_sha256: Option<String>,
    pub episodes: Vec<ShardEpisode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub spec: ChunkSpec,
    pub image_transform: Option<ImageTransform>,
    pub source_index_sha256: Option<String>,
    pub samples: Vec<TrainingSample>,
}

fn record_bytes(t_p: usize, t_a: usize) -> usize {
    (8 + 8 * ROW_DIM * (t_p + t_a) + t_a).div_ceil(8) * 8
}

pub fn samples_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("samples.bin"), dir.join("samples.json"))
}

pub fn write_samples(dir: &Path, set: &SampleSet) -> Result<SampleIndex> {
    let spec = &set.spec;
    spec.validate()?;
    let rb = record_bytes(spec.t_p, spec.t_a);
    let mut episodes: Vec<ShardEpisode> = Vec::new();
    let mut bin = Vec::with_capacity(SAMPLES_HEADER_LEN + rb * set.samples.len());
    bin.extend_from_slice(SAMPLES_MAGIC);
    bin.push(match spec.pose_mode {
        PoseMode::Relative => 0,
        PoseMode::Absolute => 1,
    });
    bin.push(0);
    bin.extend_from_slice(&(spec.t_p as u32).to_le_bytes());
    bin.extend_from_slice(&(spec.t_a as u32).to_le_bytes());
    bin.extend_from_slice(&(ROW_DIM as u32).to_le_bytes());
    bin.extend_from_slice(&(set.samples.len() as u64).to_le_bytes());
    for (r, s) in set.samples.iter().enumerate() {
        if s.proprio.len() != spec.t_p || s.action.len() != spec.t_a || s.action_mask.len() != spec.t_a {
            return Err(Error::Dimension {
                expected: spec.t_a,
                actual: s.action.len(),
            });
        }
        let same = episodes.last().is_some_and(|e| e.id == s.episode_id);
        if !same {
            episodes.push(ShardEpisode {
                id: s.episode_id.clone(),
                domain: s.domain,
                task_id: s.task_id.clone(),
                instruction: s.instruction.clone(),
                first_record: r,
                n_records: 0,
                image_refs: Vec::new(),
            });
        }
        let ep = episodes.last_mut().unwrap();
        ep.n_records += 1;
        if ep.image_refs.len() <= s.frame_index {
            ep.image_refs.resize(s.frame_index + 1, String::new());
        }
        ep.image_refs[s.frame_index] = s.image_ref.clone();
        let start = bin.len();
        bin.extend_from_slice(&((episodes.len() - 1) as u32).to_le_bytes());
        bin.extend_from_slice(&(s.frame_index as u32).to_le_bytes());
        for row in s.proprio.iter().chain(&s.action) {
            for v in row {
                bin.extend_from_slice(&v.to_le_bytes());
            }
        }
        bin.extend(s.action_mask.iter().map(|&m| u8::from(m)));
        bin.resize(start + rb, 0);
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (bin_path, index_path) = samples_paths(dir);
    std::fs::write(&bin_path, &bin).map_err(|e| Error::io(&bin_path, e))?;
    let index = SampleIndex {
        format: SAMPLES_FORMAT.into(),
        version: 1,
        spec: *spec,
        relative_pose_convention: RELATIVE_POSE_CONVENTION.into(),
        row_layout: "position(3) rot6d(6) joints(6)".into(),
        record_bytes: rb,
        count: set.samples.len(),
        bin_sha256: hex::encode(Sha256::digest(&bin)),
        image_transform: set.image_transform,
        source_index_sha256: set.source_index_sha256.clone(),
        episodes,
    };
    crate::write_json(&index_path, &index)?;
    Ok(index)
}

pub fn read_samples(dir: &Path) -> Result<SampleSet> {
    let (bin_path, index_path) = samples_paths(dir);
    let index: SampleIndex = crate::read_json(&index_path)?;
    if index.format != SAMPLES_FORMAT || index.version != 1 {
        return Err(Error::Version {
            path: index_path,
            found: format!("{} v{}", index.format, index.version),
        });
    }
    let bin = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let corrupt = |message: String| Error::Corrupt {
        path: bin_path.clone(),
        message,
    };
    if bin.len() < SAMPLES_HEADER_LEN || &bin[..6] != SAMPLES_MAGIC {
        return Err(Error::Version {
            path: bin_path.clone(),
            found: String::from_utf8_lossy(&bin[..bin.len().min(6)]).into_owned(),
        });
    }
    if hex::encode(Sha256::digest(&bin)) != index.bin_sha256 {
        return Err(corrupt("checksum mismatch".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bin[o..o + 4].try_into().unwrap()) as usize;
    let spec = index.spec;
    let mode = match bin[6] {
        0 => PoseMode::Relative,
        1 => PoseMode::Absolute,
        m => return Err(corrupt(format!("unknown pose mode {m}"))),
    };
    let count = u64::from_le_bytes(bin[20..28].try_into().unwrap()) as usize;
    if mode != spec.pose_mode
        || u32_at(8) != spec.t_p
        || u32_at(12) != spec.t_a
        || u32_at(16) != ROW_DIM
        || count != index.count
    {
        return Err(corrupt("header disagrees with samples.json".into()));
    }
    let rb = record_bytes(spec.t_p, spec.t_a);
    if rb != index.record_bytes || bin.len() != SAMPLES_HEADER_LEN + rb * count {
        return Err(corrupt(format!("{} bytes for {count} records", bin.len())));
    }
    let mut samples = Vec::with_capacity(count);
    for rec in bin[SAMPLES_HEADER_LEN..].chunks_exact(rb) {
        let ep_idx = u32::from_le_bytes(rec[0..4].try_into().unwrap()) as usize;
        let frame_index = u32::from_le_bytes(rec[4..8].try_into().unwrap()) as usize;
        let ep = index
            .episodes
            .get(ep_idx)
            .ok_or_else(|| corrupt(format!("episode table index {ep_idx} out of range")))?;
        let mut vals = rec[8..8 + 8 * ROW_DIM * (spec.t_p + spec.t_a)]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut rows = |n: usize| -> Vec<Row> {
            (0..n)
                .map(|_| std::array::from_fn(|_| vals.next().unwrap()))
                .collect()
        };
        let proprio = rows(spec.t_p);
        let action = rows(spec.t_a);
        let mask_start = 8 + 8 * ROW_DIM * (spec.t_p + spec.t_a);
        let action_mask = rec[mask_start..mask_start + spec.t_a].iter().map(|&b| b != 0).collect();
        samples.push(TrainingSample {
            episode_id: ep.id.clone(),
            frame_index,
            image_ref: ep.image_refs.get(frame_index).cloned().unwrap_or_default(),
            task_id: ep.task_id.clone(),
            domain: ep.domain,
            instruction: ep.instruction.clone(),
            proprio,
            action,
            action_mask,
        });
    }
    Ok(SampleSet {
        spec,
        image_transform: index.image_transform,
        source_index_sha256: index.source_index_sha256,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use approx::assert_abs_diff_eq;
    use nalgebra::UnitQuaternion;

    use super::*;
    use crate::dataset::Provenance;
    use crate::geometry::{compose, rotation_angle};

    fn episode(domain: Domain, poses: Vec<Pose>) -> Episode {
        Episode {
            id: "e".into(),
            domain,
            task_id: "t".into(),
            instruction: "i".into(),
            scene_tag: String::new(),
            fps: 10.0,
            image_size: None,
            frames: poses
                .into_iter()
                .enumerate()
                .map(|(i, p)| Frame {
                    timestamp: i as f64 * 0.1,
                    image_ref: format!("{i}.png"),
                    wrist_pose: p,
                    hand_joints: JointState([0.01 * i as f64; 6]),
                    raw_keypoints: None,
                })
                .collect(),
            provenance: Provenance::default(),
        }
    }

    fn line(n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| Pose::from_translation(Vec3::new(0.01 * i as f64, 0.2, 0.5), FrameId::Camera))
            .collect()
    }

    #[test]
    fn slowdown_examples() {
        let ep = episode(Domain::Human, line(9));
        let same = slow_down(&ep, 1.0).unwrap();
        assert_eq!(same.frames, ep.frames);
        assert_eq!(same.provenance.slowdown, Some(1.0));

        let slow = slow_down(&ep, 2.25).unwrap();
        assert_eq!(slow.frames.len(), 19);
        assert_eq!(slow.frames[0], ep.frames[0]);
        let (a, b) = (slow.frames.last().unwrap(), ep.frames.last().unwrap());
        assert_eq!(a.wrist_pose, b.wrist_pose);
        assert_eq!(a.hand_joints, b.hand_joints);
        assert_abs_diff_eq!(a.timestamp, 1.8, epsilon = 1e-12);

        let turn = vec![
            Pose::identity(FrameId::Camera),
            Pose::from_axis_angle(Vec3::z(), FRAC_PI_2, FrameId::Camera),
        ];
        let slow = slow_down(&episode(Domain::Human, turn), 2.0).unwrap();
        assert_eq!(slow.frames.len(), 3);
        let mid = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2 / 2.0);
        assert!(rotation_angle(&slow.frames[1].wrist_pose.orientation, &mid) < 1e-12);

        assert!(slow_down(&episode(Domain::Robot, line(4)), 2.0).is_err());
        assert!(slow_down(&ep, 0.5).is_err());
    }

    #[test]
    fn slowdown_spans_gaps_from_dropped_frames() {
        // frame 4 of a constant-speed line was dropped during ingest
        let mut ep = episode(Domain::Human, line(10));
        ep.frames.remove(4);
        let out = slow_down(&ep, 2.25).unwrap();
        assert_eq!(out.frames.len(), slowed_len(10, 2.25));
        let steps: Vec<f64> = out
            .frames
            .windows(2)
            .map(|w| (w[1].wrist_pose.position - w[0].wrist_pose.position).norm())
            .collect();
        for s in &steps {
            assert_abs_diff_eq!(*s, 0.01 * 9.0 / 20.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn slowdown_keeps_piecewise_linear_path_length() {
        let mut poses = line(6);
        poses[3].position.y += 0.05;
        let ep = episode(Domain::Human, poses);
        let len = |e: &Episode| {
            e.frames
                .windows(2)
                .map(|w| (w[1].wrist_pose.position - w[0].wrist_pose.position).norm())
                .sum::<f64>()
        };
        // every source vertex lands on the output grid when (N − 1)·f is a multiple of N − 1
        let slow = slow_down(&ep, 3.0).unwrap();
        assert_abs_diff_eq!(len(&slow), len(&ep), epsilon = 1e-12);
    }

    #[test]
    fn static_relative_chunks_are_identity() {
        let pose = Pose::new(
            Vec3::new(0.1, 0.2, 0.3),
            UnitQuaternion::from_euler_angles(0.3, -0.2, 1.0),
            FrameId::Camera,
        );
        let mut ep = episode(Domain::Robot, vec![pose; 5]);
        for f in &mut ep.frames {
            f.hand_joints = JointState([0.4; 6]);
        }
        let samples = make_samples(&ep, &ChunkSpec::default()).unwrap();
        assert_eq!(samples.len(), 5);
        for s in &samples {
            for row in &s.action {
                for i in 0..3 {
                    assert_abs_diff_eq!(row[i], 0.0, epsilon = 1e-15);
                }
                let id6 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
                for i in 0..6 {
                    assert_abs_diff_eq!(row[3 + i], id6[i], epsilon = 1e-15);
                }
                assert_eq!(&row[9..], &[0.4; 6]);
            }
        }
    }

    #[test]
    fn constant_velocity_chunks() {
        let ep = episode(Domain::Robot, line(30));
        let samples = make_samples(&ep, &ChunkSpec::default()).unwrap();
        let s = &samples[3];
        assert_eq!(s.proprio.len(), 2);
        assert_abs_diff_eq!(s.proprio[0][0], 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(s.proprio[1][0], 0.03, epsilon = 1e-15);
        for (k, row) in s.action.iter().enumerate() {
            assert_abs_diff_eq!(row[0], 0.01 * (k + 1) as f64, epsilon = 1e-12);
            assert_abs_diff_eq!(row[1], 0.0, epsilon = 1e-15);
            assert_eq!(&row[3..9], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        }
        let abs = ChunkSpec {
            pose_mode: PoseMode::Absolute,
            ..ChunkSpec::default()
        };
        let samples = make_samples(&ep, &abs).unwrap();
        for (k, row) in samples[3].action.iter().enumerate() {
            assert_eq!(row[0], ep.frames[3 + k + 1].wrist_pose.position.x);
        }
    }

    #[test]
    fn history_and_tail_padding() {
        let ep = episode(Domain::Robot, line(5));
        let samples = make_samples(&ep, &ChunkSpec::default()).unwrap();
        assert_eq!(samples[0].proprio[0], samples[0].proprio[1]);
        let last = &samples[4];
        assert!(last.action_mask.iter().all(|m| !m));
        let s2 = &samples[2];
        assert_eq!(s2.action_mask.iter().filter(|&&m| m).count(), 2);
        assert_eq!(s2.action[2], s2.action[15]);
    }

    #[test]
    fn unprocessed_or_wrong_rate_rejected() {
        let mut ep = episode(Domain::Robot, line(5));
        ep.frames[2].wrist_pose.frame = FrameId::Vr;
        assert!(make_samples(&ep, &ChunkSpec::default()).is_err());
        let mut ep = episode(Domain::Robot, line(5));
        ep.fps = 30.0;
        assert!(make_samples(&ep, &ChunkSpec::default()).is_err());
    }

    #[test]
    fn relative_rows_reconstruct_future_poses() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        let poses: Vec<Pose> = (0..25).map(|_| crate::synth::random_pose(&mut rng, FrameId::Camera)).collect();
        let ep = episode(Domain::Robot, poses);
        for s in make_samples(&ep, &ChunkSpec::default()).unwrap() {
            let cur = row_pose(s.proprio.last().unwrap(), FrameId::Camera).unwrap();
            for (k, row) in s.action.iter().enumerate() {
                let idx = (s.frame_index + k + 1).min(24);
                let rec = compose(&cur, &row_pose(row, FrameId::Camera).unwrap());
                let truth = ep.frames[idx].wrist_pose;
                assert!((rec.position - truth.position).norm() < 1e-9);
                assert!(rotation_angle(&rec.orientation, &truth.orientation) < 1e-9);
            }
        }
    }

    #[test]
    fn crop_arithmetic() {
        let t = crop_resize_spec(1280, 720).unwrap();
        assert_eq!(t.crop_origin, [320, 120]);
        assert_eq!(t.crop_size, [640, 480]);
        assert_eq!(crop_resize_spec(640, 480).unwrap().crop_origin, [0, 0]);
        assert!(crop_resize_spec(639, 480).is_err());
    }

    #[test]
    fn checkerboard_bilinear() {
        let src = Raster::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = resize_bilinear(&src, 4, 4).unwrap();
        // source coordinates: -0.25→0, 0.25, 0.75, 1.25→1
        let bil = |x: f64, y: f64| (1.0 - y) * x + y * (1.0 - x);
        let coords = [0.0, 0.25, 0.75, 1.0];
        for (yi, &y) in coords.iter().enumerate() {
            for (xi, &x) in coords.iter().enumerate() {
                assert_abs_diff_eq!(out.at(xi, yi, 0), bil(x, y), epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(out.at(1, 1, 0), 0.375, epsilon = 1e-15);
    }

    #[test]
    fn transform_applies_crop_then_resize() {
        let (w, h) = (660, 490);
        let data: Vec<f64> = (0..w * h).map(|i| ((i % w) + (i / w)) as f64).collect();
        let img = Raster::new(w, h, 1, data).unwrap();
        let t = crop_resize_spec(w as u32, h as u32).unwrap();
        let out = t.apply(&img).unwrap();
        assert_eq!((out.width, out.height), (224, 224));
        // a linear ramp is reproduced exactly away from the clamped border
        let sx = source_coordinate(100, 640, 224) + 10.0;
        let sy = source_coordinate(50, 480, 224) + 5.0;
        assert_abs_diff_eq!(out.at(100, 50, 0), sx + sy, epsilon = 1e-9);
    }

    #[test]
    fn shards_round_trip() {
        let ep = episode(Domain::Robot, line(7));
        let spec = ChunkSpec::default();
        let set = SampleSet {
            spec,
            image_transform: Some(crop_resize_spec(1280, 720).unwrap()),
            source_index_sha256: Some("abc".into()),
            samples: make_samples(&ep, &spec).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        let index = write_samples(dir.path(), &set).unwrap();
        assert_eq!(index.count, 7);
        assert_eq!(read_samples(dir.path()).unwrap(), set);

        let (bin, _) = samples_paths(dir.path());
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes[40] ^= 0x10;
        std::fs::write(&bin, &bytes).unwrap();
        assert!(matches!(read_samples(dir.path()), Err(Error::Corrupt { .. })));
    }
}
