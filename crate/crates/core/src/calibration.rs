//! Chain calibration between the VR headset and the egocentric RGB camera.
//!
//! A planar board bridges the two devices: the camera pose in the board
//! frame (`t_cam`) comes from a homography initialization refined by damped
//! Gauss–Newton on reprojection error, and the VR pose in the board frame
//! (`t_vr`) comes from inverting an anchor-block reading whose height is
//! snapped onto a plane fitted to the headset's depth points. Hand data then
//! moves from VR to camera coordinates through `t_cam⁻¹ ∘ t_vr`.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, UnitQuaternion, Vector2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose, inverse, rotation_angle, FrameId, Pose, Vec3};
use crate::retarget::HumanHand;

const REFINE_MAX_ITERS: usize = 100;
const REFINE_STEP_TOL: f64 = 1e-10;
/// Anchor readings farther than this from the fitted plane are flagged.
pub const ANCHOR_PLANE_WARN_M: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Board geometry in its own frame (all points on `z = 0`) plus the pinhole
/// intrinsics of the rectified camera observing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarTarget {
    pub points: Vec<[f64; 3]>,
    pub intrinsics: Intrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: usize,
    pub pixel: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarPoseEstimate {
    /// Camera pose in the board frame.
    pub t_cam: Pose,
    pub residual_px: f64,
    pub initial_residual_px: f64,
    pub iterations: usize,
}

/// Projects a board point through a camera at `t_cam` (camera in board frame).
pub fn project(intrinsics: &Intrinsics, t_cam: &Pose, point: &Vec3) -> Result<[f64; 2]> {
    let pc = inverse(t_cam).transform_point(point);
    if !(pc.z > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "point at depth {} is not in front of the camera",
            pc.z
        )));
    }
    Ok([
        intrinsics.fx * pc.x / pc.z + intrinsics.cx,
        intrinsics.fy * pc.y / pc.z + intrinsics.cy,
    ])
}

/// Ratio of the smaller to the larger principal spread of 2D points.
fn planar_spread_ratio(pts: &[Vector2<f64>]) -> f64 {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vector2<f64>>() / n;
    let mut cov = nalgebra::Matrix2::zeros();
    for p in pts {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if hi <= 0.0 {
        0.0
    } else {
        lo.max(0.0) / hi
    }
}

/// Normalizing similarity (Hartley): zero mean, mean distance √2.
fn normalizer(pts: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vector2<f64>>() / n;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// DLT homography mapping `src` to `dst` (both inhomogeneous 2D).
fn homography(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Result<Matrix3<f64>> {
    let ts = normalizer(src);
    let td = normalizer(dst);
    let rows = (2 * src.len()).max(9);
    let mut a = DMatrix::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = ts * s.push(1.0);
        let d = td * d.push(1.0);
        let (x, y) = (s.x / s.z, s.y / s.z);
        let (u, v) = (d.x / d.z, d.y / d.z);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for k in 0..9 {
            a[(2 * i, k)] = r0[k];
            a[(2 * i + 1, k)] = r1[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateGeometry("homography SVD failed".into()))?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let h = v_t.row(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::DegenerateGeometry("singular normalizer".into()))?;
    Ok(td_inv * hn * ts)
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fix = u;
        u_fix.column_mut(2).neg_mut();
        r = u_fix * v_t;
    }
    r
}

struct Reprojection<'a> {
    intrinsics: &'a Intrinsics,
    board: Vec<Vec3>,
    pixels: Vec<Vector2<f64>>,
}

impl Reprojection<'_> {
    /// Sum of squared pixel errors for a board-to-camera transform, or
    /// `None` when any point falls behind the camera.
    fn cost(&self, rot: &Matrix3<f64>, t: &Vec3) -> Option<f64> {
        let mut sum = 0.0;
        for (x, px) in self.board.iter().zip(&self.pixels) {
            let pc = rot * x + t;
            if !(pc.z > 0.0) {
                return None;
            }
            let u = self.intrinsics.fx * pc.x / pc.z + self.intrinsics.cx;
            let v = self.intrinsics.fy * pc.y / pc.z + self.intrinsics.cy;
            sum += (u - px.x).powi(2) + (v - px.y).powi(2);
        }
        Some(sum)
    }

    fn normal_equations(
        &self,
        rot: &Matrix3<f64>,
        t: &Vec3,
    ) -> (SMatrix<f64, 6, 6>, SVector<f64, 6>) {
        let k = self.intrinsics;
        let mut jtj = SMatrix::<f64, 6, 6>::zeros();
        let mut jtr = SVector::<f64, 6>::zeros();
        for (x, px) in self.board.iter().zip(&self.pixels) {
            let rx = rot * x;
            let pc = rx + t;
            let iz = 1.0 / pc.z;
            let r = Vector2::new(
                k.fx * pc.x * iz + k.cx - px.x,
                k.fy * pc.y * iz + k.cy - px.y,
            );
            let dproj = SMatrix::<f64, 2, 3>::new(
                k.fx * iz,
                0.0,
                -k.fx * pc.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * pc.y * iz * iz,
            );
            // left perturbation: d(exp(ω)·R·x)/dω = -[R·x]×
            let skew = Matrix3::new(0.0, -rx.z, rx.y, rx.z, 0.0, -rx.x, -rx.y, rx.x, 0.0);
            let mut dpc = SMatrix::<f64, 3, 6>::zeros();
            dpc.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew));
            dpc.fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&Matrix3::identity());
            let j = dproj * dpc;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        (jtj, jtr)
    }
}

/// Estimates the camera pose in the board frame from pixel correspondences.
pub fn estimate_planar_pose(
    target: &PlanarTarget,
    detections: &[Detection],
) -> Result<PlanarPoseEstimate> {
    if target.points.iter().any(|p| p[2] != 0.0) {
        return Err(Error::InvalidArgument(
            "board points must lie on z = 0".into(),
        ));
    }
    if detections.len() < 4 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 4 detections, got {}",
            detections.len()
        )));
    }
    let k = &target.intrinsics;
    if !(k.fx > 0.0 && k.fy > 0.0) {
        return Err(Error::InvalidArgument("focal lengths must be positive".into()));
    }
    let mut seen = vec![false; target.points.len()];
    let mut board = Vec::with_capacity(detections.len());
    let mut pixels = Vec::with_capacity(detections.len());
    for d in detections {
        let p = target.points.get(d.id).ok_or_else(|| {
            Error::InvalidArgument(format!("detection refers to unknown point {}", d.id))
        })?;
        if std::mem::replace(&mut seen[d.id], true) {
            return Err(Error::InvalidArgument(format!("point {} detected twice", d.id)));
        }
        if !d.pixel.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("pixel of point {}", d.id)));
        }
        board.push(Vec3::new(p[0], p[1], 0.0));
        pixels.push(Vector2::new(d.pixel[0], d.pixel[1]));
    }

    let board_2d: Vec<Vector2<f64>> = board.iter().map(|p| p.xy()).collect();
    if planar_spread_ratio(&board_2d) < 1e-10 {
        return Err(Error::DegenerateGeometry("board points are collinear".into()));
    }
    let normalized: Vec<Vector2<f64>> = pixels
        .iter()
        .map(|p| Vector2::new((p.x - k.cx) / k.fx, (p.y - k.cy) / k.fy))
        .collect();
    if planar_spread_ratio(&normalized) < 1e-10 {
        return Err(Error::DegenerateGeometry(
            "image points are collinear (camera centre lies in the board plane)".into(),
        ));
    }

    let h = homography(&board_2d, &normalized)?;
    let (h1, h2, h3) = (
        h.column(0).into_owned(),
        h.column(1).into_owned(),
        h.column(2).into_owned(),
    );
    let mut scale = 2.0 / (h1.norm() + h2.norm());
    if h3.z * scale < 0.0 {
        scale = -scale;
    }
    let r1 = h1 * scale;
    let r2 = h2 * scale;
    let mut rot = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]));
    let mut t = h3 * scale;

    let problem = Reprojection {
        intrinsics: k,
        board,
        pixels,
    };
    let n = problem.board.len() as f64;
    let mut cost = problem.cost(&rot, &t).ok_or_else(|| {
        Error::DegenerateGeometry("initial pose puts points behind the camera".into())
    })?;
    let initial_cost = cost;

    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < REFINE_MAX_ITERS {
        iterations += 1;
        let (jtj, jtr) = problem.normal_equations(&rot, &t);
        let mut a = jtj;
        for i in 0..6 {
            a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(ch) = a.cholesky() else {
            lambda *= 10.0;
            continue;
        };
        let step = -ch.solve(&jtr);
        let omega = Vec3::new(step[0], step[1], step[2]);
        let new_rot = UnitQuaternion::from_scaled_axis(omega).to_rotation_matrix().into_inner() * rot;
        let new_t = t + Vec3::new(step[3], step[4], step[5]);
        match problem.cost(&new_rot, &new_t) {
            Some(c) if c <= cost => {
                rot = new_rot;
                t = new_t;
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
            }
            _ => {
                lambda = (lambda * 10.0).min(1e12);
            }
        }
        if step.norm() < REFINE_STEP_TOL {
            break;
        }
    }

    let board_to_cam = Pose::new(
        t,
        UnitQuaternion::from_matrix(&rot),
        FrameId::Camera,
    );
    Ok(PlanarPoseEstimate {
        t_cam: inverse(&board_to_cam).with_frame(FrameId::Chessboard),
        residual_px: (cost / n).sqrt(),
        initial_residual_px: (initial_cost / n).sqrt(),
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    /// Unit normal, oriented into the `+z` hemisphere.
    pub normal: [f64; 3],
    /// Signed distance along `normal`: points satisfy `normal · p = offset`.
    pub offset: f64,
    pub inlier_rms: f64,
    pub inliers: usize,
}

impl Plane {
    pub fn normal(&self) -> Vec3 {
        Vec3::from(self.normal)
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal().dot(p) - self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PlaneFitMethod {
    LeastSquares,
    Ransac {
        threshold: f64,
        iterations: usize,
        seed: u64,
    },
}

impl PlaneFitMethod {
    pub fn ransac(seed: u64) -> Self {
        PlaneFitMethod::Ransac {
            threshold: 0.005,
            iterations: 200,
            seed,
        }
    }
}

fn least_squares_plane(points: &[Vec3]) -> Result<Plane> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lo, mid, hi) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if !(hi > 0.0) || mid <= 1e-12 * hi {
        return Err(Error::DegenerateGeometry(
            "points are collinear or coincident".into(),
        ));
    }
    let _ = lo;
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let flip = if normal.z != 0.0 {
        normal.z < 0.0
    } else if normal.y != 0.0 {
        normal.y < 0.0
    } else {
        normal.x < 0.0
    };
    if flip {
        normal = -normal;
    }
    let offset = normal.dot(&c);
    let rms = (points
        .iter()
        .map(|p| (normal.dot(p) - offset).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(Plane {
        normal: [normal.x, normal.y, normal.z],
        offset,
        inlier_rms: rms,
        inliers: points.len(),
    })
}

/// Fits a plane by total least squares, optionally inside a seeded RANSAC loop.
pub fn fit_plane(points: &[Vec3], method: PlaneFitMethod) -> Result<Plane> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if !points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("plane points".into()));
    }
    match method {
        PlaneFitMethod::LeastSquares => least_squares_plane(points),
        PlaneFitMethod::Ransac {
            threshold,
            iterations,
            seed,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut best: Option<Vec<usize>> = None;
            for _ in 0..iterations {
                let idx = sample(&mut rng, points.len(), 3);
                let (a, b, c) = (points[idx.index(0)], points[idx.index(1)], points[idx.index(2)]);
                let n = (b - a).cross(&(c - a));
                let norm = n.norm();
                if norm < 1e-12 {
                    continue;
                }
                let n = n / norm;
                let d = n.dot(&a);
                let inliers: Vec<usize> = (0..points.len())
                    .filter(|&i| (n.dot(&points[i]) - d).abs() < threshold)
                    .collect();
                if best.as_ref().is_none_or(|b| inliers.len() > b.len()) {
                    best = Some(inliers);
                }
            }
            let best = best.ok_or_else(|| {
                Error::DegenerateGeometry("no non-degenerate RANSAC sample".into())
            })?;
            let inlier_pts: Vec<Vec3> = best.iter().map(|&i| points[i]).collect();
            if inlier_pts.len() < 3 {
                return Err(Error::DegenerateGeometry("too few RANSAC inliers".into()));
            }
            least_squares_plane(&inlier_pts)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSolution {
    /// VR camera pose in the board frame.
    pub t_vr: Pose,
    pub plane_distance: f64,
    pub warning: Option<String>,
}

/// Snaps the anchor reading onto the fitted desk plane and inverts it.
pub fn solve_vr_anchor(anchor_in_vr: &Pose, plane: &Plane) -> Result<AnchorSolution> {
    anchor_in_vr.expect_frame(FrameId::Vr)?;
    let n = plane.normal();
    let distance = plane.signed_distance(&anchor_in_vr.position);
    let projected = Pose {
        position: anchor_in_vr.position - n * distance,
        ..*anchor_in_vr
    };
    let warning = (distance.abs() > ANCHOR_PLANE_WARN_M).then(|| {
        format!(
            "anchor reading is {:.3} m from the fitted desk plane",
            distance.abs()
        )
    });
    Ok(AnchorSolution {
        t_vr: inverse(&projected).with_frame(FrameId::Chessboard),
        plane_distance: distance,
        warning,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub id: String,
    pub t_cam: Pose,
    pub t_vr: Pose,
    pub vr_to_cam: Pose,
    pub residual_px: f64,
    pub anchor_plane_distance: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl CalibrationResult {
    pub fn new(id: impl Into<String>, t_cam: Pose, t_vr: Pose, residual_px: f64) -> Self {
        CalibrationResult {
            id: id.into(),
            t_cam,
            t_vr,
            vr_to_cam: compose(&inverse(&t_cam), &t_vr).with_frame(FrameId::Camera),
            residual_px,
            anchor_plane_distance: 0.0,
            warnings: Vec::new(),
        }
    }

    /// A calibration that maps VR coordinates onto camera coordinates unchanged.
    pub fn identity(id: impl Into<String>) -> Self {
        Self::new(
            id,
            Pose::identity(FrameId::Chessboard),
            Pose::identity(FrameId::Chessboard),
            0.0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let expected = compose(&inverse(&self.t_cam), &self.t_vr);
        let dp = (expected.position - self.vr_to_cam.position).norm();
        let dr = rotation_angle(&expected.orientation, &self.vr_to_cam.orientation);
        if dp > 1e-12 || dr > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "calibration {}: vr_to_cam disagrees with t_cam⁻¹·t_vr ({dp:e} m, {dr:e} rad)",
                self.id
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cal: CalibrationResult = crate::read_json(path)?;
        cal.validate()?;
        Ok(cal)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_json(path, self)
    }

    pub fn apply_pose(&self, p: &Pose) -> Result<Pose> {
        p.expect_frame(FrameId::Vr)?;
        Ok(compose(&self.vr_to_cam, p).with_frame(FrameId::Camera))
    }

    pub fn apply_point(&self, k: &Vec3) -> Vec3 {
        self.vr_to_cam.transform_point(k)
    }

    /// Moves a VR-frame hand observation into the camera frame.
    pub fn apply(&self, hand: &HumanHand) -> Result<HumanHand> {
        Ok(HumanHand {
            wrist_pose: self.apply_pose(&hand.wrist_pose)?,
            keypoints: hand.keypoints.iter().map(|k| self.apply_point(k)).collect(),
        })
    }
}

/// Everything captured during one calibration session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSession {
    pub id: String,
    pub target: PlanarTarget,
    pub detections: Vec<Detection>,
    pub anchor_in_vr: Pose,
    pub depth_points: Vec<[f64; 3]>,
    pub plane_fit: PlaneFitMethod,
}

impl CalibrationSession {
    pub fn load(path: &Path) -> Result<Self> {
        crate::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::write_json(path, self)
    }
}

pub fn calibrate(session: &CalibrationSession) -> Result<CalibrationResult> {
    let cam = estimate_planar_pose(&session.target, &session.detections)?;
    let pts: Vec<Vec3> = session.depth_points.iter().map(|p| Vec3::from(*p)).collect();
    let plane = fit_plane(&pts, session.plane_fit)?;
    let anchor = solve_vr_anchor(&session.anchor_in_vr, &plane)?;
    let mut result = CalibrationResult::new(
        session.id.clone(),
        cam.t_cam,
        anchor.t_vr,
        cam.residual_px,
    );
    result.anchor_plane_distance = anchor.plane_distance;
    if let Some(w) = anchor.warning {
        log::warn!("calibration {}: {w}", session.id);
        result.warnings.push(w);
    }
    Ok(result)
}
