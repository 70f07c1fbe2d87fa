//! Kinematic replay verification: workspace, speed and joint-limit checks on
//! processed episodes, and reconstruction of future wrist poses from action
//! chunks.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Episode;
use crate::error::{Error, Result};
use crate::geometry::{compose, rotation_angle, FrameId, Pose};
use crate::kinematics::HandModel;
use crate::transform::{row_pose, PoseMode, TrainingSample};
use crate::HAND_DOF;

/// Bundled default limits (non-normative placeholders).
pub const DEFAULT_LIMITS: &str = include_str!("../assets/replay_limits.toml");

/// Maximum accepted reconstruction error on unmasked rows.
pub const RECONSTRUCTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayLimits {
    /// Camera-frame workspace box corners, meters.
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    /// Wrist linear speed, m/s.
    pub vmax: f64,
    /// Wrist angular speed, rad/s.
    pub wmax: f64,
    /// Hand joint speed, rad/s.
    pub jmax: f64,
}

impl Default for ReplayLimits {
    fn default() -> Self {
        toml::from_str(DEFAULT_LIMITS).expect("bundled replay limits parse")
    }
}

impl ReplayLimits {
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.workspace_min[i] < self.workspace_max[i]) {
                return Err(Error::InvalidArgument(format!("workspace axis {i} is empty")));
            }
        }
        for (name, v) in [("vmax", self.vmax), ("wmax", self.wmax), ("jmax", self.jmax)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let l: ReplayLimits = crate::read_toml(path)?;
        l.validate()?;
        Ok(l)
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.workspace_min[i] && p[i] <= self.workspace_max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Workspace,
    LinearSpeed,
    AngularSpeed,
    JointSpeed,
    JointLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub frame: usize,
    pub kind: ViolationKind,
    /// Offending value: speed, or distance outside the box / joint range.
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub episode_id: String,
    pub n_frames: usize,
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
    pub max_joint_speed: f64,
    pub violations: Vec<Violation>,
    pub passed: bool,
}

/// Per-frame finite-difference speeds over the frame timestamps: central
/// differences in the interior, one-sided at the two ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Speeds {
    pub linear: Vec<f64>,
    pub angular: Vec<f64>,
    /// Largest joint speed over all hand DoFs.
    pub joint: Vec<f64>,
}

pub fn frame_speeds(episode: &Episode) -> Result<Speeds> {
    if !(episode.fps > 0.0 && episode.fps.is_finite()) {
        return Err(Error::InvalidEpisode {
            episode: episode.id.clone(),
            message: format!("fps {} must be positive", episode.fps),
        });
    }
    let f = &episode.frames;
    let n = f.len();
    let mut s = Speeds {
        linear: vec![0.0; n],
        angular: vec![0.0; n],
        joint: vec![0.0; n],
    };
    if n < 2 {
        return Ok(s);
    }
    for i in 0..n {
        let (a, b) = match i {
            0 => (0, 1),
            _ if i == n - 1 => (n - 2, n - 1),
            _ => (i - 1, i + 1),
        };
        let h = f[b].timestamp - f[a].timestamp;
        if !(h > 0.0) {
            return Err(Error::NonMonotonicTime {
                episode: episode.id.clone(),
                index: b,
            });
        }
        let (pa, pb) = (&f[a].wrist_pose, &f[b].wrist_pose);
        s.linear[i] = (pb.position - pa.position).norm() / h;
        s.angular[i] = rotation_angle(&pa.orientation, &pb.orientation) / h;
        s.joint[i] = (0..HAND_DOF)
            .map(|k| (f[b].hand_joints.0[k] - f[a].hand_joints.0[k]).abs() / h)
            .fold(0.0, f64::max);
    }
    Ok(s)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Checks one processed episode against `limits` and the hand model's joint
/// ranges. Pure: the report depends only on the arguments.
pub fn check_episode(episode: &Episode, limits: &ReplayLimits, model: &HandModel) -> Result<ReplayReport> {
    limits.validate()?;
    let speeds = frame_speeds(episode)?;
    let mut violations = Vec::new();
    for (i, f) in episode.frames.iter().enumerate() {
        f.wrist_pose
            .expect_frame(FrameId::Camera)
            .map_err(|e| Error::at_frame(&episode.id, i, e))?;
        let p = f.wrist_pose.position;
        let outside = (0..3)
            .map(|k| (limits.workspace_min[k] - p[k]).max(p[k] - limits.workspace_max[k]))
            .fold(f64::NEG_INFINITY, f64::max);
        if outside > 0.0 {
            violations.push(Violation {
                frame: i,
                kind: ViolationKind::Workspace,
                value: outside,
                limit: 0.0,
            });
        }
        for (kind, value, limit) in [
            (ViolationKind::LinearSpeed, speeds.linear[i], limits.vmax),
            (ViolationKind::AngularSpeed, speeds.angular[i], limits.wmax),
            (ViolationKind::JointSpeed, speeds.joint[i], limits.jmax),
        ] {
            if value > limit {
                violations.push(Violation {
                    frame: i,
                    kind,
                    value,
                    limit,
                });
            }
        }
        let beyond = f
            .hand_joints
            .0
            .iter()
            .zip(&model.dofs)
            .map(|(q, d)| (d.lower - q).max(q - d.upper))
            .fold(f64::NEG_INFINITY, f64::max);
        if beyond > 0.0 {
            violations.push(Violation {
                frame: i,
                kind: ViolationKind::JointLimit,
                value: beyond,
                limit: 0.0,
            });
        }
    }
    Ok(ReplayReport {
        episode_id: episode.id.clone(),
        n_frames: episode.frames.len(),
        max_linear_speed: max_of(&speeds.linear),
        max_angular_speed: max_of(&speeds.angular),
        max_joint_speed: max_of(&speeds.joint),
        passed: violations.is_empty(),
        violations,
    })
}

/// Checks every episode in parallel; reports keep input order.
pub fn check_episodes(episodes: &[Episode], limits: &ReplayLimits, model: &HandModel) -> Result<Vec<ReplayReport>> {
    episodes.par_iter().map(|e| check_episode(e, limits, model)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub episodes: usize,
    pub failed: usize,
    pub violations: usize,
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
    pub max_joint_speed: f64,
    pub passed: bool,
}

pub fn summarize(reports: &[ReplayReport]) -> ReplaySummary {
    let failed = reports.iter().filter(|r| !r.passed).count();
    ReplaySummary {
        episodes: reports.len(),
        failed,
        violations: reports.iter().map(|r| r.violations.len()).sum(),
        max_linear_speed: reports.iter().map(|r| r.max_linear_speed).fold(0.0, f64::max),
        max_angular_speed: reports.iter().map(|r| r.max_angular_speed).fold(0.0, f64::max),
        max_joint_speed: reports.iter().map(|r| r.max_joint_speed).fold(0.0, f64::max),
        passed: failed == 0,
    }
}

/// Human-readable report: one line per episode, then each violation.
pub fn report_text(reports: &[ReplayReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(
            out,
            "{} {} frames={} v={:.4} w={:.4} j={:.4} violations={}",
            if r.passed { "PASS" } else { "FAIL" },
            r.episode_id,
            r.n_frames,
            r.max_linear_speed,
            r.max_angular_speed,
            r.max_joint_speed,
            r.violations.len()
        );
        for v in &r.violations {
            let _ = writeln!(
                out,
                "  frame {} {:?}: {:.6} (limit {})",
                v.frame, v.kind, v.value, v.limit
            );
        }
    }
    let s = summarize(reports);
    let _ = writeln!(
        out,
        "{}: {} episodes, {} failed, {} violations",
        if s.passed { "PASS" } else { "FAIL" },
        s.episodes,
        s.failed,
        s.violations
    );
    out
}

// ---------------------------------------------------------------------------
// chunk reconstruction

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// Position of the sample within the checked slice.
    pub sample: usize,
    pub frame_index: usize,
    /// Action row; row `k` predicts frame `frame_index + k + 1`.
    pub row: usize,
    pub position_error: f64,
    pub rotation_error: f64,
    pub joint_error: f64,
}

impl RowError {
    pub fn max(&self) -> f64 {
        self.position_error.max(self.rotation_error).max(self.joint_error)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkReport {
    pub episode_id: String,
    pub mode: PoseMode,
    pub samples: usize,
    pub rows_checked: usize,
    pub masked_rows: usize,
    /// Over unmasked rows, meters / radians / radians.
    pub max_position_error: f64,
    pub max_rotation_error: f64,
    pub max_joint_error: f64,
    /// Largest deviation of a masked row from the episode's final frame.
    pub masked_max_error: f64,
    /// Unmasked rows whose error exceeds [`RECONSTRUCTION_TOL`].
    pub faults: Vec<RowError>,
}

impl ChunkReport {
    pub fn max_error(&self) -> f64 {
        self.max_position_error.max(self.max_rotation_error).max(self.max_joint_error)
    }

    pub fn passed(&self) -> bool {
        self.faults.is_empty()
    }
}

fn row_error(sample: usize, frame_index: usize, row: usize, pred: &Pose, pred_q: &[f64], truth: &crate::dataset::Frame) -> RowError {
    RowError {
        sample,
        frame_index,
        row,
        position_error: (pred.position - truth.wrist_pose.position).norm(),
        rotation_error: rotation_angle(&pred.orientation, &truth.wrist_pose.orientation),
        joint_error: pred_q
            .iter()
            .zip(&truth.hand_joints.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
    }
}

/// Rebuilds the absolute wrist pose and joints of every action row and
/// compares them with the (processed) source episode. In relative mode the
/// current pose comes from the last proprio row and each action row is
/// composed onto it; in absolute mode rows are compared directly.
pub fn chunk_reconstruction_check(samples: &[TrainingSample], mode: PoseMode, episode: &Episode) -> Result<ChunkReport> {
    let frames = &episode.frames;
    let last = frames.last().ok_or_else(|| Error::InvalidEpisode {
        episode: episode.id.clone(),
        message: "no frames".into(),
    })?;
    let mut report = ChunkReport {
        episode_id: episode.id.clone(),
        mode,
        samples: samples.len(),
        rows_checked: 0,
        masked_rows: 0,
        max_position_error: 0.0,
        max_rotation_error: 0.0,
        max_joint_error: 0.0,
        masked_max_error: 0.0,
        faults: Vec::new(),
    };
    for (si, s) in samples.iter().enumerate() {
        if s.episode_id != episode.id {
            return Err(Error::InvalidArgument(format!(
                "sample {si} belongs to {}, not {}",
                s.episode_id, episode.id
            )));
        }
        let t = s.frame_index;
        if t >= frames.len() || s.action.len() != s.action_mask.len() {
            return Err(Error::InvalidArgument(format!("sample {si} does not fit episode {}", episode.id)));
        }
        let current = s
            .proprio
            .last()
            .ok_or_else(|| Error::InvalidArgument(format!("sample {si} has no proprio rows")))?;
        let base = row_pose(current, FrameId::Camera)?;
        for (k, (row, &valid)) in s.action.iter().zip(&s.action_mask).enumerate() {
            let pred = match mode {
                PoseMode::Relative => compose(&base, &row_pose(row, FrameId::Wrist)?),
                PoseMode::Absolute => row_pose(row, FrameId::Camera)?,
            };
            let q = &row[9..];
            if valid {
                let idx = t + k + 1;
                let truth = frames.get(idx).ok_or_else(|| {
                    Error::InvalidArgument(format!("sample {si} row {k} is unmasked past the episode end"))
                })?;
                let e = row_error(si, t, k, &pred, q, truth);
                report.rows_checked += 1;
                report.max_position_error = report.max_position_error.max(e.position_error);
                report.max_rotation_error = report.max_rotation_error.max(e.rotation_error);
                report.max_joint_error = report.max_joint_error.max(e.joint_error);
                if !(e.max() < RECONSTRUCTION_TOL) {
                    report.faults.push(e);
                }
            } else {
                report.masked_rows += 1;
                let e = row_error(si, t, k, &pred, q, last);
                report.masked_max_error = report.masked_max_error.max(e.max());
            }
        }
    }
    Ok(report)
}

/// Like [`chunk_reconstruction_check`] but refuses to compare when the
/// caller's expected mode differs from the mode the samples were built with.
pub fn check_chunks_expecting(
    samples: &[TrainingSample],
    samples_mode: PoseMode,
    expected: PoseMode,
    episode: &Episode,
) -> Result<ChunkReport> {
    if samples_mode != expected {
        return Err(Error::InvalidArgument(format!(
            "pose mode mismatch: samples are {samples_mode:?}, check expects {expected:?}"
        )));
    }
    chunk_reconstruction_check(samples, samples_mode, episode)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dataset::Domain;
    use crate::geometry::Vec3;
    use crate::synth::{motion_episode, Motion};
    use crate::transform::{make_samples, slow_down, ChunkSpec};

    fn model() -> HandModel {
        HandModel::bundled()
    }

    fn reach(seed: u64, n: usize) -> Episode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Motion::random(&mut rng, &model(), FrameId::Camera);
        motion_episode(&format!("ep{seed}"), Domain::Human, &m, n, 10.0)
    }

    fn static_episode(n: usize) -> Episode {
        let mut e = reach(1, n);
        let f0 = e.frames[0].clone();
        for (i, f) in e.frames.iter_mut().enumerate() {
            *f = crate::dataset::Frame {
                timestamp: i as f64 * 0.1,
                ..f0.clone()
            };
        }
        e
    }

    #[test]
    fn default_limits_are_valid() {
        ReplayLimits::default().validate().unwrap();
    }

    #[test]
    fn static_episode_passes_with_zero_speed() {
        let r = check_episode(&static_episode(10), &ReplayLimits::default(), &model()).unwrap();
        assert!(r.passed, "{:?}", r.violations);
        assert_eq!(r.max_linear_speed, 0.0);
        assert_eq!(r.max_angular_speed, 0.0);
        assert_eq!(r.max_joint_speed, 0.0);
    }

    #[test]
    fn fast_segment_flags_velocity() {
        // frames 5 and 6 each advance 0.5 m at 10 fps: 5 m/s centred on frame 5
        let mut e = static_episode(10);
        let mut x = 0.0;
        for i in 0..10 {
            if (5..=6).contains(&i) {
                x += 0.5;
            }
            e.frames[i].wrist_pose.position.x += x;
        }
        let limits = ReplayLimits {
            vmax: 1.0,
            workspace_min: [-10.0; 3],
            workspace_max: [10.0; 3],
            ..ReplayLimits::default()
        };
        let r = check_episode(&e, &limits, &model()).unwrap();
        let v: Vec<_> = r.violations.iter().filter(|v| v.kind == ViolationKind::LinearSpeed).collect();
        let at5 = v.iter().find(|v| v.frame == 5).expect("violation at frame 5");
        assert_abs_diff_eq!(at5.value, 5.0, epsilon = 1e-12);
        // frame 4 only sees the first 0.5 m step: half of it per central step
        assert_abs_diff_eq!(v.iter().find(|v| v.frame == 4).unwrap().value, 2.5, epsilon = 1e-12);
        assert!(!r.passed);
    }

    #[test]
    fn endpoint_uses_one_sided_difference() {
        let mut e = static_episode(5);
        e.frames[4].wrist_pose.position.y += 0.5;
        let s = frame_speeds(&e).unwrap();
        assert_abs_diff_eq!(s.linear[4], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.linear[3], 2.5, epsilon = 1e-12);
        assert_eq!(s.linear[2], 0.0);
    }

    #[test]
    fn speeds_follow_timestamps_across_gaps() {
        let mut e = static_episode(6);
        for (i, f) in e.frames.iter_mut().enumerate() {
            f.wrist_pose.position.x += 0.01 * i as f64;
        }
        e.frames.remove(3);
        let s = frame_speeds(&e).unwrap();
        for v in &s.linear {
            assert_abs_diff_eq!(*v, 0.1, epsilon = 1e-9);
        }
    }

    #[test]
    fn workspace_and_joint_limits() {
        let mut e = static_episode(4);
        e.frames[2].wrist_pose.position = Vec3::new(0.0, 0.0, 5.0);
        e.frames[3].hand_joints.0[0] = model().dofs[0].upper + 0.1;
        let r = check_episode(&e, &ReplayLimits::default(), &model()).unwrap();
        assert!(r.violations.iter().any(|v| v.kind == ViolationKind::Workspace && v.frame == 2));
        let j = r.violations.iter().find(|v| v.kind == ViolationKind::JointLimit).unwrap();
        assert_eq!(j.frame, 3);
        assert_abs_diff_eq!(j.value, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn nonpositive_fps_rejected() {
        let mut e = static_episode(4);
        e.fps = 0.0;
        assert!(check_episode(&e, &ReplayLimits::default(), &model()).is_err());
    }

    #[test]
    fn slowdown_divides_peak_speeds() {
        for seed in 0..10 {
            let e = reach(seed, 40 + seed as usize * 3);
            let pre = check_episode(&e, &ReplayLimits::default(), &model()).unwrap();
            let post = check_episode(&slow_down(&e, 2.25).unwrap(), &ReplayLimits::default(), &model()).unwrap();
            for (a, b) in [
                (pre.max_linear_speed, post.max_linear_speed),
                (pre.max_angular_speed, post.max_angular_speed),
                (pre.max_joint_speed, post.max_joint_speed),
            ] {
                let ratio = a / b;
                assert!((ratio / 2.25 - 1.0).abs() < 0.01, "seed {seed}: ratio {ratio}");
            }
        }
    }

    #[test]
    fn check_is_order_independent() {
        let eps: Vec<_> = (0..6).map(|s| reach(s, 30)).collect();
        let limits = ReplayLimits::default();
        let fwd = check_episodes(&eps, &limits, &model()).unwrap();
        let rev_in: Vec<_> = eps.iter().rev().cloned().collect();
        let mut rev = check_episodes(&rev_in, &limits, &model()).unwrap();
        rev.reverse();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn reconstruction_is_exact_in_both_modes() {
        let e = slow_down(&reach(3, 50), 2.25).unwrap();
        for mode in [PoseMode::Relative, PoseMode::Absolute] {
            let spec = ChunkSpec {
                pose_mode: mode,
                ..ChunkSpec::default()
            };
            let samples = make_samples(&e, &spec).unwrap();
            let r = chunk_reconstruction_check(&samples, mode, &e).unwrap();
            assert!(r.passed(), "{mode:?}: {:?}", r.faults.first());
            assert!(r.max_error() < RECONSTRUCTION_TOL);
            assert_eq!(r.rows_checked + r.masked_rows, samples.len() * spec.t_a);
            // tail rows repeat the final frame exactly
            assert!(r.masked_max_error < RECONSTRUCTION_TOL);
        }
    }

    #[test]
    fn masked_rows_counted_separately() {
        let e = reach(4, 20);
        let samples = make_samples(&e, &ChunkSpec::default()).unwrap();
        let r = chunk_reconstruction_check(&samples, PoseMode::Relative, &e).unwrap();
        // sample t has min(16, n-1-t) valid rows
        let valid: usize = (0..20).map(|t| 16.min(19 - t)).sum();
        assert_eq!(r.rows_checked, valid);
        assert_eq!(r.masked_rows, 20 * 16 - valid);
    }

    #[test]
    fn corrupted_row_is_localized() {
        let e = reach(5, 30);
        let mut samples = make_samples(&e, &ChunkSpec::default()).unwrap();
        samples[7].action[3][1] += 0.01;
        let r = chunk_reconstruction_check(&samples, PoseMode::Relative, &e).unwrap();
        assert_eq!(r.faults.len(), 1);
        let f = r.faults[0];
        assert_eq!((f.sample, f.frame_index, f.row), (7, 7, 3));
        assert_abs_diff_eq!(f.position_error, 0.01, epsilon = 1e-9);
    }

    #[test]
    fn wrong_mode_is_detected() {
        let e = reach(6, 30);
        let samples = make_samples(&e, &ChunkSpec::default()).unwrap();
        assert!(check_chunks_expecting(&samples, PoseMode::Relative, PoseMode::Absolute, &e).is_err());
        // reading relative rows as absolute ones does not reconstruct
        let r = chunk_reconstruction_check(&samples, PoseMode::Absolute, &e).unwrap();
        assert!(!r.passed());
    }
}
