//! Optimization-based retargeting of human hand keypoints onto the robot
//! hand's six actuated joints.
//!
//! Each frame minimizes
//!
//! ```text
//! Σᵢ wᵢ ‖s·vᵢ(human) − vᵢ(FK(q))‖² + β ‖q − q_prev‖²
//! ```
//!
//! over the joint box with a projected Levenberg–Marquardt iteration. The
//! task vectors default to wrist→fingertip for all five fingers.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{inverse, Pose, Vec3};
use crate::kinematics::{fingertip_jacobian, forward_kinematics, HandModel, JointState};
use crate::HAND_DOF;

pub const N_KEYPOINTS: usize = 21;
pub const WRIST: usize = 0;
/// Fingertip landmark indices, thumb to pinky.
pub const FINGERTIPS: [usize; 5] = [4, 8, 12, 16, 20];
/// Sanity bound on the wrist-to-fingertip distance in meters.
pub const MAX_FINGER_REACH: f64 = 0.30;

const DAMPING_MIN: f64 = 1e-7;
const DAMPING_MAX: f64 = 1e3;

/// Human hand observation: 21 landmarks (wrist, then four per finger from
/// thumb to pinky) and the wrist pose, both in the same frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanHand {
    pub keypoints: Vec<Vec3>,
    pub wrist_pose: Pose,
}

impl HumanHand {
    pub fn validate(&self) -> Result<()> {
        if self.keypoints.len() != N_KEYPOINTS {
            return Err(Error::Dimension {
                expected: N_KEYPOINTS,
                actual: self.keypoints.len(),
            });
        }
        if !self.keypoints.iter().all(|k| k.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("hand keypoints".into()));
        }
        if !self.wrist_pose.is_finite() {
            return Err(Error::NonFinite("wrist pose".into()));
        }
        for &tip in &FINGERTIPS {
            let reach = (self.keypoints[tip] - self.keypoints[WRIST]).norm();
            if reach >= MAX_FINGER_REACH {
                return Err(Error::InvalidArgument(format!(
                    "fingertip {tip} is {reach:.3} m from the wrist"
                )));
            }
        }
        Ok(())
    }

    /// Keypoints expressed in the wrist's local frame.
    pub fn local_keypoints(&self) -> Vec<Vec3> {
        let inv = inverse(&self.wrist_pose);
        self.keypoints.iter().map(|k| inv.transform_point(k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskVector {
    pub human_from: usize,
    pub human_to: usize,
    pub robot_tip: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetConfig {
    pub task_vectors: Vec<TaskVector>,
    pub scale: f64,
    pub smoothness: f64,
    pub max_iters: usize,
    pub step_tol: f64,
    pub initial_damping: f64,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        RetargetConfig {
            task_vectors: FINGERTIPS
                .iter()
                .enumerate()
                .map(|(i, &tip)| TaskVector {
                    human_from: WRIST,
                    human_to: tip,
                    robot_tip: i,
                    weight: 1.0,
                })
                .collect(),
            scale: 1.0,
            smoothness: 0.05,
            max_iters: 100,
            step_tol: 1e-8,
            initial_damping: 1e-3,
        }
    }
}

impl RetargetConfig {
    pub fn validate(&self, model: &HandModel) -> Result<()> {
        if !(self.scale > 0.0) {
            return Err(Error::InvalidArgument("scale must be positive".into()));
        }
        if !(self.smoothness >= 0.0) {
            return Err(Error::InvalidArgument("smoothness must be >= 0".into()));
        }
        if self.task_vectors.is_empty() {
            return Err(Error::InvalidArgument("no task vectors".into()));
        }
        for tv in &self.task_vectors {
            if !(tv.weight >= 0.0) {
                return Err(Error::InvalidArgument("negative task weight".into()));
            }
            if tv.human_from >= N_KEYPOINTS || tv.human_to >= N_KEYPOINTS {
                return Err(Error::InvalidArgument("keypoint index out of range".into()));
            }
            if tv.robot_tip >= model.n_fingertips() {
                return Err(Error::InvalidArgument("fingertip index out of range".into()));
            }
        }
        Ok(())
    }

    /// Short stable digest recorded in episode provenance.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetargetOutcome {
    pub joints: JointState,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective at the start and after every accepted step.
    pub accepted_objectives: Vec<f64>,
}

fn human_targets(keypoints: &[Vec3], cfg: &RetargetConfig) -> Result<Vec<Vec3>> {
    if keypoints.len() != N_KEYPOINTS {
        return Err(Error::Dimension {
            expected: N_KEYPOINTS,
            actual: keypoints.len(),
        });
    }
    if !keypoints.iter().all(|k| k.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("hand keypoints".into()));
    }
    Ok(cfg
        .task_vectors
        .iter()
        .map(|tv| (keypoints[tv.human_to] - keypoints[tv.human_from]) * cfg.scale)
        .collect())
}

struct Problem<'a> {
    model: &'a HandModel,
    cfg: &'a RetargetConfig,
    targets: Vec<Vec3>,
    q_prev: JointState,
}

impl Problem<'_> {
    fn residuals(&self, q: &JointState) -> Result<DVector<f64>> {
        let tips = forward_kinematics(self.model, q)?;
        let m = self.cfg.task_vectors.len();
        let mut r = DVector::zeros(3 * m + HAND_DOF);
        for (i, (tv, target)) in self.cfg.task_vectors.iter().zip(&self.targets).enumerate() {
            let sw = tv.weight.sqrt();
            let d = (tips[tv.robot_tip] - target) * sw;
            r.fixed_rows_mut::<3>(3 * i).copy_from(&d);
        }
        let sb = self.cfg.smoothness.sqrt();
        for k in 0..HAND_DOF {
            r[3 * m + k] = sb * (q.0[k] - self.q_prev.0[k]);
        }
        Ok(r)
    }

    fn jacobian(&self, q: &JointState) -> Result<DMatrix<f64>> {
        let tip_jac = fingertip_jacobian(self.model, q)?;
        let m = self.cfg.task_vectors.len();
        let mut jac = DMatrix::zeros(3 * m + HAND_DOF, HAND_DOF);
        for (i, tv) in self.cfg.task_vectors.iter().enumerate() {
            let sw = tv.weight.sqrt();
            let rows = tip_jac.rows(3 * tv.robot_tip, 3) * sw;
            jac.rows_mut(3 * i, 3).copy_from(&rows);
        }
        let sb = self.cfg.smoothness.sqrt();
        for k in 0..HAND_DOF {
            jac[(3 * m + k, k)] = sb;
        }
        Ok(jac)
    }

    fn objective(&self, q: &JointState) -> Result<f64> {
        Ok(self.residuals(q)?.norm_squared())
    }
}

/// Evaluates the retargeting objective at `q` for wrist-local keypoints.
pub fn retarget_objective(
    model: &HandModel,
    keypoints_local: &[Vec3],
    q: &JointState,
    q_prev: &JointState,
    cfg: &RetargetConfig,
) -> Result<f64> {
    let problem = Problem {
        model,
        cfg,
        targets: human_targets(keypoints_local, cfg)?,
        q_prev: *q_prev,
    };
    problem.objective(q)
}

/// Solves one frame, warm-started at `q_prev` projected into the joint box.
pub fn retarget_frame(
    model: &HandModel,
    keypoints_local: &[Vec3],
    q_prev: &JointState,
    cfg: &RetargetConfig,
) -> Result<RetargetOutcome> {
    cfg.validate(model)?;
    if !q_prev.is_finite() {
        return Err(Error::NonFinite("previous joint state".into()));
    }
    let problem = Problem {
        model,
        cfg,
        targets: human_targets(keypoints_local, cfg)?,
        q_prev: *q_prev,
    };

    let mut q = model.clamp(q_prev);
    let mut f = problem.objective(&q)?;
    let mut lambda = cfg.initial_damping.clamp(DAMPING_MIN, DAMPING_MAX);
    let mut accepted = vec![f];
    let mut converged = f == 0.0;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        let r = problem.residuals(&q)?;
        let jac = problem.jacobian(&q)?;
        let jt = jac.transpose();
        let grad: SVector<f64, HAND_DOF> = SVector::from_iterator((&jt * &r).iter().copied());
        let mut normal: SMatrix<f64, HAND_DOF, HAND_DOF> =
            SMatrix::from_iterator((&jt * &jac).iter().copied());
        for k in 0..HAND_DOF {
            normal[(k, k)] += lambda;
        }
        let step = match normal.cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => {
                lambda = (lambda * 2.0).min(DAMPING_MAX);
                continue;
            }
        };
        let candidate = model.clamp(&JointState(std::array::from_fn(|k| q.0[k] + step[k])));
        let moved = candidate
            .0
            .iter()
            .zip(q.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let f_new = problem.objective(&candidate)?;
        if f_new < f {
            q = candidate;
            f = f_new;
            accepted.push(f);
            lambda = (lambda * 0.5).max(DAMPING_MIN);
            if moved < cfg.step_tol || f == 0.0 {
                converged = true;
            }
        } else {
            lambda = (lambda * 2.0).min(DAMPING_MAX);
            if moved < cfg.step_tol {
                converged = true;
            }
        }
    }

    Ok(RetargetOutcome {
        joints: q,
        objective: f,
        converged,
        iterations,
        accepted_objectives: accepted,
    })
}

/// Retargets a sequence; each frame is warm-started and smoothness-anchored
/// at the previous solution, the first one at mid-range.
pub fn retarget_episode(
    model: &HandModel,
    hands: &[HumanHand],
    cfg: &RetargetConfig,
) -> Result<Vec<RetargetOutcome>> {
    if hands.is_empty() {
        return Err(Error::InvalidArgument("empty hand sequence".into()));
    }
    let mut q_prev = model.mid_range();
    let mut out = Vec::with_capacity(hands.len());
    for (i, hand) in hands.iter().enumerate() {
        let local = hand.local_keypoints();
        let outcome = retarget_frame(model, &local, &q_prev, cfg).map_err(|e| {
            Error::at_frame("retarget", i, e)
        })?;
        q_prev = outcome.joints;
        out.push(outcome);
    }
    Ok(out)
}
