//! Serial-chain forward kinematics and fingertip Jacobians for a
//! six-actuator dexterous hand.
//!
//! Each finger is a chain of revolute joints hanging off the wrist frame.
//! Every joint angle is a fixed linear function (`ratio * q[dof]`) of one of
//! the six actuated values, which is how underactuated hands couple their
//! distal joints.
//!
//! # Model file
//!
//! ```text
//! mt-hand v1
//! # comment
//! dof <name> <lower> <upper>
//! finger <name>
//! base <x> <y> <z> <qw> <qx> <qy> <qz>
//! joint axis <ax> <ay> <az> limits <lower> <upper> drive <dof-name> <ratio> link <x> <y> <z> <qw> <qx> <qy> <qz>
//! tip <x> <y> <z> <qw> <qx> <qy> <qz>
//! end
//! ```
//!
//! Exactly six `dof` lines must precede the fingers; their order defines the
//! layout of [`JointState`]. Lengths are meters, angles radians. At each
//! joint the chain first rotates about `axis` and then applies `link`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Unit, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose, FrameId, Pose, Vec3};
use crate::HAND_DOF;

pub const MODEL_HEADER: &str = "mt-hand v1";

/// The bundled approximation of a six-actuator, five-finger hand.
pub const BUNDLED_MODEL: &str = include_str!("../assets/hand_model.mthand");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState(pub [f64; HAND_DOF]);

impl JointState {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &JointState) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DofSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub axis: Vec3,
    pub lower: f64,
    pub upper: f64,
    pub dof: usize,
    pub ratio: f64,
    pub link: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerChain {
    pub name: String,
    pub base: Pose,
    pub joints: Vec<Joint>,
    pub tip: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub dofs: Vec<DofSpec>,
    pub fingers: Vec<FingerChain>,
}

impl HandModel {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_MODEL).expect("bundled hand model is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_model(text)
    }

    /// Checks axis norms, limit ordering and that every coupled joint stays
    /// inside its own limits across the full actuated range.
    pub fn validate(&self) -> Result<()> {
        if self.dofs.len() != HAND_DOF {
            return Err(Error::InvalidModel(format!(
                "expected {HAND_DOF} actuated values, found {}",
                self.dofs.len()
            )));
        }
        for d in &self.dofs {
            if !(d.lower < d.upper) {
                return Err(Error::InvalidModel(format!(
                    "dof {}: lower limit {} not below upper {}",
                    d.name, d.lower, d.upper
                )));
            }
        }
        if self.fingers.is_empty() {
            return Err(Error::InvalidModel("model has no fingers".into()));
        }
        for f in &self.fingers {
            for (i, j) in f.joints.iter().enumerate() {
                let ctx = format!("finger {} joint {i}", f.name);
                if (j.axis.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidModel(format!("{ctx}: axis not unit norm")));
                }
                if !(j.lower < j.upper) {
                    return Err(Error::InvalidModel(format!("{ctx}: lower >= upper")));
                }
                let dof = self.dofs.get(j.dof).ok_or_else(|| {
                    Error::InvalidModel(format!("{ctx}: drives unknown dof {}", j.dof))
                })?;
                let a = j.ratio * dof.lower;
                let b = j.ratio * dof.upper;
                let (lo, hi) = (a.min(b), a.max(b));
                if lo < j.lower - 1e-12 || hi > j.upper + 1e-12 {
                    return Err(Error::InvalidModel(format!(
                        "{ctx}: driven range [{lo}, {hi}] exceeds joint limits [{}, {}]",
                        j.lower, j.upper
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_fingertips(&self) -> usize {
        self.fingers.len()
    }

    pub fn lower(&self) -> [f64; HAND_DOF] {
        std::array::from_fn(|i| self.dofs[i].lower)
    }

    pub fn upper(&self) -> [f64; HAND_DOF] {
        std::array::from_fn(|i| self.dofs[i].upper)
    }

    pub fn mid_range(&self) -> JointState {
        JointState(std::array::from_fn(|i| {
            0.5 * (self.dofs[i].lower + self.dofs[i].upper)
        }))
    }

    pub fn clamp(&self, q: &JointState) -> JointState {
        JointState(std::array::from_fn(|i| {
            q.0[i].clamp(self.dofs[i].lower, self.dofs[i].upper)
        }))
    }

    pub fn within_limits(&self, q: &JointState) -> bool {
        q.0.iter()
            .zip(&self.dofs)
            .all(|(v, d)| *v >= d.lower && *v <= d.upper)
    }

    /// Returns a copy with every length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> HandModel {
        let scale = |p: &Pose| Pose {
            position: p.position * factor,
            ..*p
        };
        HandModel {
            dofs: self.dofs.clone(),
            fingers: self
                .fingers
                .iter()
                .map(|f| FingerChain {
                    name: f.name.clone(),
                    base: scale(&f.base),
                    joints: f
                        .joints
                        .iter()
                        .map(|j| Joint {
                            link: scale(&j.link),
                            ..j.clone()
                        })
                        .collect(),
                    tip: scale(&f.tip),
                })
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        fn pose(p: &Pose) -> String {
            let q = p.quat_wxyz();
            format!(
                "{:?} {:?} {:?} {:?} {:?} {:?} {:?}",
                p.position.x, p.position.y, p.position.z, q[0], q[1], q[2], q[3]
            )
        }
        let mut out = format!("{MODEL_HEADER}\n");
        for d in &self.dofs {
            let _ = writeln!(out, "dof {} {:?} {:?}", d.name, d.lower, d.upper);
        }
        for f in &self.fingers {
            let _ = writeln!(out, "finger {}", f.name);
            let _ = writeln!(out, "base {}", pose(&f.base));
            for j in &f.joints {
                let _ = writeln!(
                    out,
                    "joint axis {:?} {:?} {:?} limits {:?} {:?} drive {} {:?} link {}",
                    j.axis.x,
                    j.axis.y,
                    j.axis.z,
                    j.lower,
                    j.upper,
                    self.dofs[j.dof].name,
                    j.ratio,
                    pose(&j.link)
                );
            }
            let _ = writeln!(out, "tip {}", pose(&f.tip));
            out.push_str("end\n");
        }
        out
    }
}

/// Joint frames of one chain evaluated at a configuration.
struct ChainFrames {
    /// World origin and world axis of each joint, before its rotation.
    joints: Vec<(Vec3, Vec3)>,
    tip: Vec3,
}

fn check_state(q: &JointState) -> Result<()> {
    if q.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("joint state".into()))
    }
}

fn chain_frames(chain: &FingerChain, q: &JointState) -> ChainFrames {
    let mut t = chain.base;
    let mut joints = Vec::with_capacity(chain.joints.len());
    for j in &chain.joints {
        let world_axis = t.orientation * j.axis;
        joints.push((t.position, world_axis));
        let angle = j.ratio * q.0[j.dof];
        let rot = Pose::new(
            Vec3::zeros(),
            UnitQuaternion::from_axis_angle(&Unit::new_unchecked(j.axis), angle),
            FrameId::Wrist,
        );
        t = compose(&compose(&t, &rot), &j.link);
    }
    let tip = compose(&t, &chain.tip).position;
    ChainFrames { joints, tip }
}

/// Fingertip positions in the wrist frame, one per finger in model order.
pub fn forward_kinematics(model: &HandModel, q: &JointState) -> Result<Vec<Vec3>> {
    check_state(q)?;
    Ok(model
        .fingers
        .iter()
        .map(|f| chain_frames(f, q).tip)
        .collect())
}

/// Joint origins followed by the fingertip, per finger.
pub fn chain_points(model: &HandModel, q: &JointState) -> Result<Vec<Vec<Vec3>>> {
    check_state(q)?;
    Ok(model
        .fingers
        .iter()
        .map(|f| {
            let frames = chain_frames(f, q);
            let mut pts: Vec<Vec3> = frames.joints.iter().map(|(o, _)| *o).collect();
            if pts.is_empty() {
                pts.push(f.base.position);
            }
            pts.push(frames.tip);
            pts
        })
        .collect())
}

/// Analytic Jacobian of the stacked fingertip positions with respect to the
/// six actuated values, `3·n_fingertips × 6`.
pub fn fingertip_jacobian(model: &HandModel, q: &JointState) -> Result<DMatrix<f64>> {
    check_state(q)?;
    let mut jac = DMatrix::zeros(3 * model.fingers.len(), HAND_DOF);
    for (fi, f) in model.fingers.iter().enumerate() {
        let frames = chain_frames(f, q);
        for (j, (origin, axis)) in f.joints.iter().zip(&frames.joints) {
            let col = axis.cross(&(frames.tip - origin)) * j.ratio;
            for r in 0..3 {
                jac[(3 * fi + r, j.dof)] += col[r];
            }
        }
    }
    Ok(jac)
}

fn parse_model(text: &str) -> Result<HandModel> {
    let err = |line: usize, message: String| Error::HandModelParse { line, message };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    match lines.next() {
        Some((_, header)) if header == MODEL_HEADER => {}
        Some((n, header)) => {
            return Err(err(n, format!("unsupported header {header:?}, expected {MODEL_HEADER:?}")))
        }
        None => return Err(err(0, "empty model file".into())),
    }

    let mut dofs: Vec<DofSpec> = Vec::new();
    let mut fingers: Vec<FingerChain> = Vec::new();
    let mut current: Option<(FingerChain, bool, bool)> = None;

    for (n, line) in lines {
        let mut tok = Tokens::new(line, n);
        let keyword = tok.word()?;
        match (keyword, current.as_mut()) {
            ("dof", None) => {
                if !fingers.is_empty() {
                    return Err(err(n, "dof lines must precede fingers".into()));
                }
                let name = tok.word()?.to_string();
                if dofs.iter().any(|d| d.name == name) {
                    return Err(err(n, format!("duplicate dof {name}")));
                }
                let lower = tok.number()?;
                let upper = tok.number()?;
                tok.finish()?;
                dofs.push(DofSpec { name, lower, upper });
            }
            ("finger", None) => {
                let name = tok.word()?.to_string();
                tok.finish()?;
                let chain = FingerChain {
                    name,
                    base: Pose::identity(FrameId::Wrist),
                    joints: Vec::new(),
                    tip: Pose::identity(FrameId::Wrist),
                };
                current = Some((chain, false, false));
            }
            ("base", Some((chain, has_base, _))) => {
                chain.base = tok.pose()?;
                tok.finish()?;
                *has_base = true;
            }
            ("joint", Some((chain, _, _))) => {
                tok.expect("axis")?;
                let axis = Vec3::new(tok.number()?, tok.number()?, tok.number()?);
                tok.expect("limits")?;
                let lower = tok.number()?;
                let upper = tok.number()?;
                tok.expect("drive")?;
                let dof_name = tok.word()?;
                let dof = dofs
                    .iter()
                    .position(|d| d.name == dof_name)
                    .ok_or_else(|| err(n, format!("unknown dof {dof_name}")))?;
                let ratio = tok.number()?;
                tok.expect("link")?;
                let link = tok.pose()?;
                tok.finish()?;
                let norm = axis.norm();
                if !(norm > 0.0) {
                    return Err(err(n, "zero joint axis".into()));
                }
                chain.joints.push(Joint {
                    axis: axis / norm,
                    lower,
                    upper,
                    dof,
                    ratio,
                    link,
                });
            }
            ("tip", Some((chain, _, has_tip))) => {
                chain.tip = tok.pose()?;
                tok.finish()?;
                *has_tip = true;
            }
            ("end", Some(_)) => {
                tok.finish()?;
                let (chain, has_base, has_tip) = current.take().expect("inside finger");
                if !has_base || !has_tip {
                    return Err(err(n, format!("finger {} lacks base or tip", chain.name)));
                }
                fingers.push(chain);
            }
            (kw, _) => return Err(err(n, format!("unexpected keyword {kw:?}"))),
        }
    }
    if current.is_some() {
        return Err(err(0, "unterminated finger block".into()));
    }
    let model = HandModel { dofs, fingers };
    model.validate()?;
    Ok(model)
}

struct Tokens<'a> {
    iter: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn new(line: &'a str, n: usize) -> Self {
        Tokens {
            iter: line.split_whitespace(),
            line: n,
        }
    }

    fn fail(&self, message: String) -> Error {
        Error::HandModelParse {
            line: self.line,
            message,
        }
    }

    fn word(&mut self) -> Result<&'a str> {
        self.iter
            .next()
            .ok_or_else(|| self.fail("unexpected end of line".into()))
    }

    fn expect(&mut self, kw: &str) -> Result<()> {
        let w = self.word()?;
        if w == kw {
            Ok(())
        } else {
            Err(self.fail(format!("expected {kw:?}, found {w:?}")))
        }
    }

    fn number(&mut self) -> Result<f64> {
        let w = self.word()?;
        let v: f64 = w
            .parse()
            .map_err(|_| self.fail(format!("invalid number {w:?}")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.fail(format!("non-finite number {w:?}")))
        }
    }

    fn pose(&mut self) -> Result<Pose> {
        let p = [self.number()?, self.number()?, self.number()?];
        let q = [self.number()?, self.number()?, self.number()?, self.number()?];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(self.fail("zero quaternion".into()));
        }
        Ok(Pose::from_parts(p, q, FrameId::Wrist))
    }

    fn finish(&mut self) -> Result<()> {
        match self.iter.next() {
            None => Ok(()),
            Some(extra) => Err(self.fail(format!("trailing token {extra:?}"))),
        }
    }
}
