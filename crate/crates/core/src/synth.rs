//! Seeded synthetic data: calibration sessions with known ground truth,
//! smooth human and robot recordings, and a small on-disk corpus that
//! exercises the whole pipeline.

use std::f64::consts::{PI, TAU};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{
    project, CalibrationResult, CalibrationSession, Detection, Intrinsics, PlanarTarget,
    PlaneFitMethod,
};
use crate::dataset::{
    DatasetIndex, Domain, DomainCounts, Episode, EpisodeEntry, Frame, Provenance, DATASET_FORMAT,
    FORMAT_VERSION,
    RawHumanEpisode, RawHumanFrame, RawHumanSession, RawRobotEpisode, RawRobotFrame,
    RawRobotSession,
};
use crate::error::{Error, Result};
use crate::geometry::{compose, inverse, slerp_quat, FrameId, Pose, Vec3};
use crate::kinematics::{chain_points, HandModel, JointState};
use crate::retarget::{HumanHand, N_KEYPOINTS};

/// The 21 wrist-local landmarks a tracker would report for joint state `q`:
/// the wrist at the origin, then four points per finger spread evenly by arc
/// length from the first joint to the fingertip (the last one exact).
pub fn keypoints_from_fk(model: &HandModel, q: &JointState) -> Result<Vec<Vec3>> {
    if model.fingers.len() != 5 {
        return Err(Error::InvalidModel(format!(
            "landmark layout needs 5 fingers, model has {}",
            model.fingers.len()
        )));
    }
    let chains = chain_points(model, q)?;
    let mut out = Vec::with_capacity(N_KEYPOINTS);
    out.push(Vec3::zeros());
    for pts in &chains {
        let seg: Vec<f64> = pts.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        let total: f64 = seg.iter().sum();
        for k in 0..3 {
            let target = total * k as f64 / 3.0;
            let mut acc = 0.0;
            let mut p = *pts.last().unwrap();
            for (i, &len) in seg.iter().enumerate() {
                if acc + len >= target && len > 0.0 {
                    p = pts[i] + (pts[i + 1] - pts[i]) * ((target - acc) / len);
                    break;
                }
                acc += len;
            }
            out.push(p);
        }
        out.push(*pts.last().unwrap());
    }
    Ok(out)
}

pub fn random_rotation<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    loop {
        let q = Quaternion::new(n.sample(rng), n.sample(rng), n.sample(rng), n.sample(rng));
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

/// Uniform rotation, position uniform in the unit cube.
pub fn random_pose<R: Rng>(rng: &mut R, frame: FrameId) -> Pose {
    let p = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    Pose::new(p, random_rotation(rng), frame)
}

pub fn random_joints<R: Rng>(model: &HandModel, rng: &mut R) -> JointState {
    JointState(std::array::from_fn(|i| {
        let d = &model.dofs[i];
        rng.random_range(d.lower..=d.upper)
    }))
}

/// Joint state at least `margin` (fraction of range) away from every limit.
pub fn interior_joints<R: Rng>(model: &HandModel, rng: &mut R, margin: f64) -> JointState {
    JointState(std::array::from_fn(|i| {
        let d = &model.dofs[i];
        let w = d.upper - d.lower;
        rng.random_range(d.lower + margin * w..=d.upper - margin * w)
    }))
}

/// A hand in VR coordinates with FK-consistent keypoints.
pub fn random_vr_hand<R: Rng>(rng: &mut R) -> HumanHand {
    let model = HandModel::bundled();
    let wrist = random_pose(rng, FrameId::Vr);
    let q = random_joints(&model, rng);
    let local = keypoints_from_fk(&model, &q).expect("bundled model has 5 fingers");
    HumanHand {
        keypoints: local.iter().map(|k| wrist.transform_point(k)).collect(),
        wrist_pose: wrist,
    }
}

/// 9 × 6 inner-corner board with 4 cm pitch seen by a 1280 × 720 camera.
pub fn board_target() -> PlanarTarget {
    let mut points = Vec::with_capacity(54);
    for row in 0..6 {
        for col in 0..9 {
            points.push([0.04 * col as f64, 0.04 * row as f64, 0.0]);
        }
    }
    PlanarTarget {
        points,
        intrinsics: Intrinsics {
            fx: 900.0,
            fy: 900.0,
            cx: 640.0,
            cy: 360.0,
        },
    }
}

/// Orientation whose optical (`z`) axis points along `forward`, with the
/// image `x` axis as close to `right` as possible.
fn look_rotation(forward: Vec3, right: Vec3) -> UnitQuaternion<f64> {
    let z = forward.normalize();
    let x = (right - z * right.dot(&z)).normalize();
    let y = z.cross(&x);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
        Matrix3::from_columns(&[x, y, z]),
    ))
}

/// Camera 0.45–0.6 m from the board centre, viewing it obliquely from the
/// near side (30–45° off the board normal), aimed near the centre and
/// rolled ±10°.
pub fn random_camera_pose<R: Rng>(rng: &mut R) -> Pose {
    let centre = Vec3::new(0.16, 0.10, 0.0);
    let dist = rng.random_range(0.45..0.6);
    let tilt = rng.random_range(30f64..45.0).to_radians();
    let azimuth = rng.random_range(-120f64..-60.0).to_radians();
    let eye = centre
        + Vec3::new(
            dist * tilt.sin() * azimuth.cos(),
            dist * tilt.sin() * azimuth.sin(),
            dist * tilt.cos(),
        );
    let aim = centre + Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), 0.0);
    let roll = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), rng.random_range(-0.17..0.17));
    Pose::new(eye, look_rotation(aim - eye, Vec3::x()) * roll, FrameId::Chessboard)
}

/// Ground truth behind a synthetic calibration session.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCalibration {
    pub session: CalibrationSession,
    pub t_cam: Pose,
    pub t_vr: Pose,
}

impl SyntheticCalibration {
    pub fn truth(&self) -> CalibrationResult {
        CalibrationResult::new(self.session.id.clone(), self.t_cam, self.t_vr, 0.0)
    }
}

/// A calibration session with `noise_px` Gaussian pixel noise. Depth points
/// carry 1 mm noise and 10 % clutter above the desk whenever noise is on.
pub fn calibration_session(seed: u64, noise_px: f64) -> SyntheticCalibration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = board_target();
    let t_cam = random_camera_pose(&mut rng);

    // headset behind and above the board's near edge, looking at it
    let vr_eye = Vec3::new(
        0.1 + rng.random_range(-0.1..0.1),
        -0.35 + rng.random_range(-0.05..0.05),
        0.45 + rng.random_range(-0.05..0.05),
    );
    let vr_aim = Vec3::new(0.1, 0.1, 0.0);
    let t_vr = Pose::new(vr_eye, look_rotation(vr_aim - vr_eye, Vec3::x()), FrameId::Chessboard);

    let pix_noise = Normal::new(0.0, noise_px.max(0.0)).unwrap();
    let detections = target
        .points
        .iter()
        .enumerate()
        .map(|(id, p)| {
            let mut px = project(&target.intrinsics, &t_cam, &Vec3::from(*p))
                .expect("synthetic board is in front of the camera");
            if noise_px > 0.0 {
                px[0] += pix_noise.sample(&mut rng);
                px[1] += pix_noise.sample(&mut rng);
            }
            Detection { id, pixel: px }
        })
        .collect();

    let board_to_vr = inverse(&t_vr);
    let depth_noise = Normal::new(0.0, 0.001).unwrap();
    let noisy = noise_px > 0.0;
    let depth_points = (0..300)
        .map(|i| {
            let mut p = Vec3::new(rng.random_range(-0.3..0.6), rng.random_range(-0.3..0.5), 0.0);
            if noisy {
                p.z = if i % 10 == 0 {
                    rng.random_range(0.05..0.3)
                } else {
                    depth_noise.sample(&mut rng)
                };
            }
            let q = board_to_vr.transform_point(&p);
            [q.x, q.y, q.z]
        })
        .collect();

    // the anchor block sits at the board origin; the headset reads it a few
    // millimetres off the desk, which the plane projection removes
    let normal_vr = board_to_vr.orientation * Vec3::z();
    let mut anchor = board_to_vr.with_frame(FrameId::Vr);
    anchor.position += normal_vr * 0.003;

    SyntheticCalibration {
        session: CalibrationSession {
            id: format!("cal-{seed}"),
            target,
            detections,
            anchor_in_vr: anchor,
            depth_points,
            plane_fit: PlaneFitMethod::ransac(seed),
        },
        t_cam,
        t_vr,
    }
}

/// Smooth rest-to-rest progress profile on `[0, 1]`; speed peaks at `s = 0.5`.
pub fn ease(s: f64) -> f64 {
    s - (TAU * s).sin() / TAU
}

/// Waypoints of one synthetic reach: wrist pose and joints at both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub start: Pose,
    pub end: Pose,
    pub q_start: JointState,
    pub q_end: JointState,
}

impl Motion {
    pub fn random<R: Rng>(rng: &mut R, model: &HandModel, frame: FrameId) -> Self {
        // a reach in front of the egocentric camera (z forward, y down)
        let p0 = Vec3::new(
            rng.random_range(-0.15..0.15),
            rng.random_range(0.0..0.15),
            rng.random_range(0.35..0.55),
        );
        let dir = random_rotation(rng) * Vec3::x();
        let p1 = p0 + dir * rng.random_range(0.1..0.25);
        let r0 = random_rotation(rng);
        let turn = UnitQuaternion::from_scaled_axis(
            random_rotation(rng) * Vec3::x() * rng.random_range(0.2..0.8),
        );
        Motion {
            start: Pose::new(p0, r0, frame),
            end: Pose::new(p1, turn * r0, frame),
            q_start: interior_joints(model, rng, 0.1),
            q_end: interior_joints(model, rng, 0.1),
        }
    }

    /// Pose and joints at progress `s ∈ [0, 1]` of the eased profile.
    pub fn at(&self, s: f64) -> (Pose, JointState) {
        let e = ease(s);
        let pos = self.start.position + (self.end.position - self.start.position) * e;
        let rot = slerp_quat(&self.start.orientation, &self.end.orientation, e);
        let q = JointState(std::array::from_fn(|i| {
            self.q_start.0[i] + (self.q_end.0[i] - self.q_start.0[i]) * e
        }));
        (Pose::new(pos, rot, self.start.frame), q)
    }
}

/// Wrist poses and joints along a motion sampled at `n` uniform steps.
pub fn motion_samples(motion: &Motion, n: usize) -> Vec<(Pose, JointState)> {
    (0..n)
        .map(|i| motion.at(i as f64 / (n - 1).max(1) as f64))
        .collect()
}

/// An in-memory camera-frame episode following `motion` over `n` frames.
pub fn motion_episode(id: &str, domain: Domain, motion: &Motion, n: usize, fps: f64) -> Episode {
    let frames = motion_samples(motion, n)
        .into_iter()
        .enumerate()
        .map(|(i, (pose, q))| Frame {
            timestamp: i as f64 / fps,
            image_ref: format!("images/{id}/{i:05}.pgm"),
            wrist_pose: pose.with_frame(FrameId::Camera),
            hand_joints: q,
            raw_keypoints: None,
        })
        .collect();
    Episode {
        id: id.to_string(),
        domain,
        task_id: "synthetic".into(),
        instruction: "synthetic reach".into(),
        scene_tag: String::new(),
        fps,
        image_size: Some(IMAGE_SIZE),
        frames,
        provenance: Provenance::default(),
    }
}

/// Layout of a synthetic corpus written by [`write_corpus`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub human_episodes: usize,
    pub robot_episodes: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub fps: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 0,
            human_episodes: 54,
            robot_episodes: 24,
            min_frames: 40,
            max_frames: 72,
            fps: 10.0,
        }
    }
}

pub const HUMAN_TASKS: [(&str, &str); 3] = [
    ("pour_bottle", "pour the bottle into the cup"),
    ("close_laptop", "close the laptop"),
    ("wipe_towel", "wipe the table with the towel"),
];

pub const ROBOT_TASKS: [(&str, &str); 2] = [
    ("pick_cube", "put the cube into the box"),
    ("push_block", "push the block to the left"),
];

/// Placeholder image written for every frame; the pipeline stores image
/// references but never decodes pixels outside the crop/resize transform.
fn placeholder_image(seed: u64, episode: usize, frame: usize) -> Vec<u8> {
    format!("P2\n2 2\n255\n{} {} {} {}\n", seed % 256, episode % 256, frame % 256, 128).into_bytes()
}

pub const IMAGE_SIZE: [u32; 2] = [1280, 720];

/// Human recording in VR coordinates. `drop_frame` blanks one frame's
/// tracking to exercise the dropped-frame path.
pub fn human_session(
    rng: &mut ChaCha8Rng,
    model: &HandModel,
    vr_to_cam: &Pose,
    spec: &CorpusSpec,
    n_episodes: usize,
) -> Result<RawHumanSession> {
    let cam_to_vr = inverse(vr_to_cam);
    let mut episodes = Vec::with_capacity(n_episodes);
    for e in 0..n_episodes {
        let (task, instruction) = HUMAN_TASKS[e % HUMAN_TASKS.len()];
        let n = rng.random_range(spec.min_frames..=spec.max_frames);
        let motion = Motion::random(rng, model, FrameId::Camera);
        let drop_at = (e % 9 == 4).then(|| rng.random_range(1..n - 1));
        let mut frames = Vec::with_capacity(n);
        for (i, (wrist_cam, q)) in motion_samples(&motion, n).into_iter().enumerate() {
            let wrist = compose(&cam_to_vr, &wrist_cam).with_frame(FrameId::Vr);
            let keypoints = if drop_at == Some(i) {
                None
            } else {
                let local = keypoints_from_fk(model, &q)?;
                Some(
                    local
                        .iter()
                        .map(|k| {
                            let p = wrist.transform_point(k);
                            [p.x, p.y, p.z]
                        })
                        .collect(),
                )
            };
            frames.push(RawHumanFrame {
                timestamp: i as f64 / spec.fps,
                image: format!("images/h{e:03}/{i:04}.pgm"),
                wrist_pose: wrist,
                keypoints,
            });
        }
        episodes.push(RawHumanEpisode {
            id: format!("human-{e:03}"),
            task_id: task.to_string(),
            instruction: instruction.to_string(),
            scene_tag: format!("desk-{}", e % 4),
            frames,
        });
    }
    Ok(RawHumanSession {
        fps: spec.fps,
        image_size: Some(IMAGE_SIZE),
        episodes,
    })
}

/// Teleoperated robot recording in the robot base frame.
pub fn robot_session(
    rng: &mut ChaCha8Rng,
    model: &HandModel,
    base_in_cam: &Pose,
    spec: &CorpusSpec,
    n_episodes: usize,
) -> RawRobotSession {
    let cam_to_base = inverse(base_in_cam);
    let mut episodes = Vec::with_capacity(n_episodes);
    for e in 0..n_episodes {
        let (task, instruction) = ROBOT_TASKS[e % ROBOT_TASKS.len()];
        let n = rng.random_range(spec.min_frames..=spec.max_frames);
        let motion = Motion::random(rng, model, FrameId::Camera);
        let frames = motion_samples(&motion, n)
            .into_iter()
            .enumerate()
            .map(|(i, (wrist_cam, q))| RawRobotFrame {
                timestamp: i as f64 / spec.fps,
                image: format!("images/r{e:03}/{i:04}.pgm"),
                wrist_pose: compose(&cam_to_base, &wrist_cam).with_frame(FrameId::RobotBase),
                joints: q.0,
            })
            .collect();
        episodes.push(RawRobotEpisode {
            id: format!("robot-{e:03}"),
            task_id: task.to_string(),
            instruction: instruction.to_string(),
            scene_tag: format!("lab-{}", e % 2),
            frames,
        });
    }
    RawRobotSession {
        fps: spec.fps,
        image_size: Some(IMAGE_SIZE),
        episodes,
    }
}

/// Paths inside a corpus directory.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusLayout {
    pub root: PathBuf,
    pub calibration_session: PathBuf,
    pub human_dir: PathBuf,
    pub robot_dir: PathBuf,
    pub extrinsic: PathBuf,
}

impl CorpusLayout {
    pub fn new(root: &Path) -> Self {
        CorpusLayout {
            root: root.to_path_buf(),
            calibration_session: root.join("calibration").join("session.json"),
            human_dir: root.join("human"),
            robot_dir: root.join("robot"),
            extrinsic: root.join("robot").join("extrinsic.json"),
        }
    }
}

fn write_images(dir: &Path, refs: impl Iterator<Item = (usize, usize, String)>, seed: u64) -> Result<()> {
    for (e, i, rel) in refs {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
        }
        std::fs::write(&path, placeholder_image(seed, e, i)).map_err(|err| Error::io(&path, err))?;
    }
    Ok(())
}

/// Writes a calibration session, a human session and a robot session (with
/// its extrinsic) under `root`. Output bytes depend only on `spec`.
pub fn write_corpus(root: &Path, spec: &CorpusSpec) -> Result<CorpusLayout> {
    if spec.min_frames < 2 || spec.max_frames < spec.min_frames || !(spec.fps > 0.0) {
        return Err(Error::InvalidArgument("invalid corpus frame range or fps".into()));
    }
    let layout = CorpusLayout::new(root);
    for dir in [
        layout.calibration_session.parent().unwrap(),
        &layout.human_dir,
        &layout.robot_dir,
    ] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let model = HandModel::bundled();
    let cal = calibration_session(spec.seed, 0.0);
    cal.session.save(&layout.calibration_session)?;
    let vr_to_cam = cal.truth().vr_to_cam;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_c0de);
    let human = human_session(&mut rng, &model, &vr_to_cam, spec, spec.human_episodes)?;
    crate::write_json(&layout.human_dir.join("session.json"), &human)?;
    write_images(
        &layout.human_dir,
        human.episodes.iter().enumerate().flat_map(|(e, ep)| {
            ep.frames.iter().enumerate().map(move |(i, f)| (e, i, f.image.clone()))
        }),
        spec.seed,
    )?;

    let base_in_cam = Pose::new(
        Vec3::new(0.05, 0.35, 0.6),
        UnitQuaternion::from_axis_angle(&Vec3::x_axis(), -PI / 2.0),
        FrameId::Camera,
    );
    crate::write_json(&layout.extrinsic, &base_in_cam)?;
    let robot = robot_session(&mut rng, &model, &base_in_cam, spec, spec.robot_episodes);
    crate::write_json(&layout.robot_dir.join("session.json"), &robot)?;
    write_images(
        &layout.robot_dir,
        robot.episodes.iter().enumerate().flat_map(|(e, ep)| {
            ep.frames.iter().enumerate().map(move |(i, f)| (e, i, f.image.clone()))
        }),
        spec.seed,
    )?;
    Ok(layout)
}

/// A metadata-only dataset index with the given per-domain episode counts,
/// for exercising tools that only read `index.json`.
pub fn count_index(human: usize, robot: usize) -> DatasetIndex {
    let entry = |domain: Domain, i: usize| {
        let (prefix, task) = match domain {
            Domain::Human => ("human", HUMAN_TASKS[i % HUMAN_TASKS.len()].0),
            Domain::Robot => ("robot", ROBOT_TASKS[i % ROBOT_TASKS.len()].0),
        };
        EpisodeEntry {
            id: format!("{prefix}-{i:05}"),
            domain,
            task_id: task.to_string(),
            n_frames: 0,
            path: format!("episodes/{prefix}-{i:05}"),
        }
    };
    let mut tasks: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (t, instr) in HUMAN_TASKS.iter().take(human).chain(ROBOT_TASKS.iter().take(robot)) {
        tasks.entry(t.to_string()).or_default().push(instr.to_string());
    }
    DatasetIndex {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        episodes: (0..human)
            .map(|i| entry(Domain::Human, i))
            .chain((0..robot).map(|i| entry(Domain::Robot, i)))
            .collect(),
        tasks,
        counts: DomainCounts { human, robot },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward_kinematics;

    #[test]
    fn landmarks_end_at_fingertips() {
        let model = HandModel::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_joints(&model, &mut rng);
        let kp = keypoints_from_fk(&model, &q).unwrap();
        assert_eq!(kp.len(), N_KEYPOINTS);
        let tips = forward_kinematics(&model, &q).unwrap();
        for (i, tip) in tips.iter().enumerate() {
            assert_eq!(kp[4 * i + 4], *tip);
        }
    }

    #[test]
    fn ease_is_rest_to_rest() {
        assert_eq!(ease(0.0), 0.0);
        assert!((ease(1.0) - 1.0).abs() < 1e-15);
        let d = |s: f64| (ease(s + 1e-6) - ease(s - 1e-6)) / 2e-6;
        assert!(d(0.5) > d(0.25) && d(0.5) > d(0.75));
        assert!((d(0.5) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn calibration_sessions_are_seeded() {
        assert_eq!(calibration_session(4, 0.5), calibration_session(4, 0.5));
        assert_ne!(calibration_session(4, 0.5), calibration_session(5, 0.5));
    }
}
