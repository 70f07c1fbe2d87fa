//! Motion progress scoring: per-task stage rubrics, rollout annotations,
//! normalized scores and success-rate aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw points available on every bundled rubric.
pub const BUNDLED_MAX_POINTS: u32 = 8;

const BUNDLED: [(&str, &str); 13] = [
    ("mango_bowl_bypass", include_str!("../assets/rubrics/mango_bowl_bypass.toml")),
    ("mango_bowl_lifting", include_str!("../assets/rubrics/mango_bowl_lifting.toml")),
    ("pour_bottle", include_str!("../assets/rubrics/pour_bottle.toml")),
    ("toy_bear_box", include_str!("../assets/rubrics/toy_bear_box.toml")),
    ("bread_bucket", include_str!("../assets/rubrics/bread_bucket.toml")),
    ("close_laptop", include_str!("../assets/rubrics/close_laptop.toml")),
    ("press_stapler", include_str!("../assets/rubrics/press_stapler.toml")),
    ("unplug_charger", include_str!("../assets/rubrics/unplug_charger.toml")),
    ("open_box_panda_box", include_str!("../assets/rubrics/open_box_panda_box.toml")),
    ("wipe_towel", include_str!("../assets/rubrics/wipe_towel.toml")),
    ("banana_plate", include_str!("../assets/rubrics/banana_plate.toml")),
    ("orange_bucket", include_str!("../assets/rubrics/orange_bucket.toml")),
    ("press_dice", include_str!("../assets/rubrics/press_dice.toml")),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub points: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricSpec {
    pub task_id: String,
    #[serde(default)]
    pub name: String,
    pub max_points: u32,
    pub stages: Vec<Stage>,
}

impl RubricSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Rubric(format!("{}: no stages", self.task_id)));
        }
        let mut names = BTreeSet::new();
        for s in &self.stages {
            if s.points == 0 {
                return Err(Error::Rubric(format!("{}: stage {:?} has zero points", self.task_id, s.name)));
            }
            if !names.insert(s.name.as_str()) {
                return Err(Error::Rubric(format!("{}: duplicate stage {:?}", self.task_id, s.name)));
            }
        }
        let total: u32 = self.stages.iter().map(|s| s.points).sum();
        if total != self.max_points {
            return Err(Error::Rubric(format!(
                "{}: stage points sum to {total}, max_points is {}",
                self.task_id, self.max_points
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let r: RubricSpec = toml::from_str(text).map_err(|e| Error::Rubric(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r: RubricSpec = crate::read_toml(path)?;
        r.validate()?;
        Ok(r)
    }
}

/// The 13 bundled evaluation rubrics, each worth exactly 8 points.
pub fn bundled_rubrics() -> Result<Vec<RubricSpec>> {
    BUNDLED
        .iter()
        .map(|(id, text)| {
            let r = RubricSpec::parse(text)?;
            if r.task_id != *id || r.max_points != BUNDLED_MAX_POINTS {
                return Err(Error::Rubric(format!("bundled rubric {id} is malformed")));
            }
            Ok(r)
        })
        .collect()
}

/// Loads every `*.toml` rubric in `dir`, keyed by task id.
pub fn load_rubrics(dir: &Path) -> Result<BTreeMap<String, RubricSpec>> {
    let mut out = BTreeMap::new();
    for path in toml_files(dir)? {
        let r = RubricSpec::load(&path)?;
        if out.insert(r.task_id.clone(), r).is_some() {
            return Err(Error::Rubric(format!("duplicate rubric in {}", path.display())));
        }
    }
    Ok(out)
}

fn toml_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rollout {
    pub success: bool,
    /// Names of the stages reached.
    #[serde(default)]
    pub achieved: Vec<String>,
}

/// All annotated rollouts of one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAnnotations {
    pub task_id: String,
    pub rollouts: Vec<Rollout>,
}

pub fn load_annotations(dir: &Path) -> Result<Vec<TaskAnnotations>> {
    toml_files(dir)?.iter().map(|p| crate::read_toml(p)).collect()
}

pub fn score_rollout(rubric: &RubricSpec, task_id: &str, rollout: &Rollout) -> Result<f64> {
    if task_id != rubric.task_id {
        return Err(Error::Rubric(format!(
            "annotation for {task_id} scored against rubric {}",
            rubric.task_id
        )));
    }
    let mut seen = BTreeSet::new();
    let mut points = 0;
    for name in &rollout.achieved {
        let stage = rubric
            .stages
            .iter()
            .find(|s| &s.name == name)
            .ok_or_else(|| Error::Rubric(format!("{task_id}: unknown stage {name:?}")))?;
        if seen.insert(name.as_str()) {
            points += stage.points;
        }
    }
    Ok(points as f64 / rubric.max_points as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    pub rollouts: usize,
    pub mean_score: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub tasks: Vec<TaskScore>,
    /// Unweighted means over tasks.
    pub overall_score: f64,
    pub overall_success_rate: f64,
}

pub fn aggregate(rubrics: &BTreeMap<String, RubricSpec>, annotations: &[TaskAnnotations]) -> Result<ScoreSummary> {
    if annotations.is_empty() {
        return Err(Error::Rubric("no annotated tasks".into()));
    }
    let mut tasks = Vec::with_capacity(annotations.len());
    for a in annotations {
        if a.rollouts.is_empty() {
            return Err(Error::Rubric(format!("{}: no rollouts", a.task_id)));
        }
        let rubric = rubrics
            .get(&a.task_id)
            .ok_or_else(|| Error::UnknownTask(a.task_id.clone()))?;
        let n = a.rollouts.len() as f64;
        let mut score = 0.0;
        for r in &a.rollouts {
            score += score_rollout(rubric, &a.task_id, r)?;
        }
        let successes = a.rollouts.iter().filter(|r| r.success).count() as f64;
        tasks.push(TaskScore {
            task_id: a.task_id.clone(),
            rollouts: a.rollouts.len(),
            mean_score: score / n,
            success_rate: successes / n,
        });
    }
    let k = tasks.len() as f64;
    Ok(ScoreSummary {
        overall_score: tasks.iter().map(|t| t.mean_score).sum::<f64>() / k,
        overall_success_rate: tasks.iter().map(|t| t.success_rate).sum::<f64>() / k,
        tasks,
    })
}

impl ScoreSummary {
    /// One row per task plus an average row: success rate in percent and
    /// mean score in `[0, 1]`.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<24} {:>8} {:>8} {:>6}\n", "task", "SR (%)", "Score", "n");
        for t in &self.tasks {
            let _ = writeln!(
                out,
                "{:<24} {:>8.1} {:>8.3} {:>6}",
                t.task_id,
                100.0 * t.success_rate,
                t.mean_score,
                t.rollouts
            );
        }
        let _ = writeln!(
            out,
            "{:<24} {:>8.1} {:>8.3}",
            "average",
            100.0 * self.overall_success_rate,
            self.overall_score
        );
        out
    }
}
