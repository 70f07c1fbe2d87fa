//! End-to-end runs: calibrate → ingest → dataset → samples → statistics →
//! checks. Every output depends only on the inputs and the configuration,
//! never on paths, timing or thread count.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{calibrate, CalibrationResult, CalibrationSession};
use crate::cotrain::{compute_weights, CotrainWeights};
use crate::dataset::{
    ingest_human_raw, ingest_robot_raw, read_dataset, write_dataset, Dataset, DomainCounts, Episode,
    HumanIngest, Rejection,
};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::kinematics::HandModel;
use crate::normalize::{fit_stats, NormMode, NormStats};
use crate::replay::{
    check_episodes, chunk_reconstruction_check, summarize, ChunkReport, ReplayLimits, ReplayReport,
    ReplaySummary,
};
use crate::retarget::RetargetConfig;
use crate::synth::{write_corpus, CorpusLayout, CorpusSpec};
use crate::transform::{
    build_samples, crop_resize_spec, process_episode, write_samples, ChunkSpec, SampleSet, TrainingSample,
};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Loads every episode of a dataset and turns it into training samples.
/// The image transform comes from the first episode that declares a size.
pub fn transform_dataset(dataset: &Dataset, spec: &ChunkSpec) -> Result<(Vec<Episode>, SampleSet)> {
    let episodes = dataset.load_all()?;
    let samples = build_samples(&episodes, spec)?;
    let image_transform = match episodes.iter().find_map(|e| e.image_size) {
        Some([w, h]) => Some(crop_resize_spec(w, h)?),
        None => None,
    };
    let set = SampleSet {
        spec: *spec,
        image_transform,
        source_index_sha256: Some(sha256_file(&dataset.root.join("index.json"))?),
        samples,
    };
    Ok((episodes, set))
}

/// Reconstruction check for every episode whose samples are in `set`.
/// `episodes` are the unprocessed source episodes; the set's spec is
/// re-applied to line their frames up with the samples.
pub fn check_sample_set(set: &SampleSet, episodes: &[Episode]) -> Result<Vec<ChunkReport>> {
    let mut reports = Vec::new();
    for group in set.samples.chunk_by(|a, b| a.episode_id == b.episode_id) {
        let id = &group[0].episode_id;
        let source = episodes
            .iter()
            .find(|e| &e.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("samples reference unknown episode {id}")))?;
        let processed = process_episode(source, &set.spec)?;
        reports.push(chunk_reconstruction_check(group, set.spec.pose_mode, &processed)?);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkSummary {
    pub episodes: usize,
    pub rows_checked: usize,
    pub masked_rows: usize,
    pub max_error: f64,
    pub faults: usize,
}

pub fn summarize_chunks(reports: &[ChunkReport]) -> ChunkSummary {
    ChunkSummary {
        episodes: reports.len(),
        rows_checked: reports.iter().map(|r| r.rows_checked).sum(),
        masked_rows: reports.iter().map(|r| r.masked_rows).sum(),
        max_error: reports.iter().map(|r| r.max_error()).fold(0.0, f64::max),
        faults: reports.iter().map(|r| r.faults.len()).sum(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub chunk: ChunkSpec,
    pub retarget: RetargetConfig,
    pub norm_mode: NormMode,
    pub limits: ReplayLimits,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            chunk: ChunkSpec::default(),
            retarget: RetargetConfig::default(),
            norm_mode: NormMode::Unified,
            limits: ReplayLimits::default(),
        }
    }
}

/// Output locations under a pipeline directory.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineLayout {
    pub calibration: PathBuf,
    pub dataset: PathBuf,
    pub samples: PathBuf,
    pub stats: PathBuf,
    pub replay: PathBuf,
    pub report: PathBuf,
}

impl PipelineLayout {
    pub fn new(out: &Path) -> Self {
        PipelineLayout {
            calibration: out.join("calibration.json"),
            dataset: out.join("dataset"),
            samples: out.join("samples"),
            stats: out.join("stats.json"),
            replay: out.join("replay.json"),
            report: out.join("report.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub calibration_id: String,
    pub calibration_residual_px: f64,
    pub calibration_warnings: Vec<String>,
    pub rejected: Vec<Rejection>,
    pub episode_counts: DomainCounts,
    pub frame_counts: DomainCounts,
    pub samples: usize,
    pub dataset_index_sha256: String,
    pub samples_sha256: String,
    pub weights: CotrainWeights,
    pub replay: ReplaySummary,
    pub chunks: ChunkSummary,
}

/// Runs the whole pipeline on a corpus laid out like [`write_corpus`]'s.
pub fn run_pipeline(corpus: &CorpusLayout, out: &Path, cfg: &PipelineConfig) -> Result<PipelineReport> {
    let layout = PipelineLayout::new(out);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let model = HandModel::bundled();

    let session = CalibrationSession::load(&corpus.calibration_session)?;
    let cal: CalibrationResult = calibrate(&session)?;
    cal.save(&layout.calibration)?;

    let human = ingest_human_raw(
        &corpus.human_dir,
        &HumanIngest {
            calibration: Some(&cal),
            model: &model,
            retarget: &cfg.retarget,
        },
    )?;
    let extrinsic: Pose = crate::read_json(&corpus.extrinsic)?;
    let robot = ingest_robot_raw(&corpus.robot_dir, Some(&extrinsic), &model)?;
    let mut rejected = human.rejected;
    rejected.extend(robot.rejected);
    let mut episodes = human.episodes;
    episodes.extend(robot.episodes);
    let index = write_dataset(&episodes, &layout.dataset, &[&corpus.human_dir, &corpus.robot_dir])?;

    let dataset = read_dataset(&layout.dataset)?;
    let (episodes, set) = transform_dataset(&dataset, &cfg.chunk)?;
    let sample_index = write_samples(&layout.samples, &set)?;

    let mut stats: NormStats = fit_stats(&set.samples, cfg.norm_mode)?;
    stats.source_sha256 = Some(sample_index.bin_sha256.clone());
    crate::write_json(&layout.stats, &stats)?;

    let processed: Vec<Episode> = episodes
        .iter()
        .map(|e| process_episode(e, &cfg.chunk))
        .collect::<Result<_>>()?;
    let replay: Vec<ReplayReport> = check_episodes(&processed, &cfg.limits, &model)?;
    crate::write_json(&layout.replay, &replay)?;
    let chunks = check_sample_set(&set, &episodes)?;

    let report = PipelineReport {
        calibration_id: cal.id.clone(),
        calibration_residual_px: cal.residual_px,
        calibration_warnings: cal.warnings.clone(),
        rejected,
        episode_counts: index.counts,
        frame_counts: domain_frame_counts(&set.samples),
        samples: set.samples.len(),
        dataset_index_sha256: sha256_file(&layout.dataset.join("index.json"))?,
        samples_sha256: sample_index.bin_sha256,
        weights: compute_weights(index.counts)?,
        replay: summarize(&replay),
        chunks: summarize_chunks(&chunks),
    };
    crate::write_json(&layout.report, &report)?;
    Ok(report)
}

/// Samples per domain.
pub fn domain_frame_counts(samples: &[TrainingSample]) -> DomainCounts {
    let human = samples.iter().filter(|s| s.domain == crate::dataset::Domain::Human).count();
    DomainCounts {
        human,
        robot: samples.len() - human,
    }
}

/// Generates the synthetic corpus under `out/corpus` and runs the pipeline
/// into `out/run`.
pub fn run_synthetic(out: &Path, spec: &CorpusSpec, cfg: &PipelineConfig) -> Result<PipelineReport> {
    let corpus = write_corpus(&out.join("corpus"), spec)?;
    run_pipeline(&corpus, &out.join("run"), cfg)
}
