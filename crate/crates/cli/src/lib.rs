//! Argument definitions and command implementations behind the `mt` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use mt_core::calibration::{calibrate, CalibrationResult, CalibrationSession};
use mt_core::cotrain::{compute_weights, run_mechanism_report, standard_subsets, HeightTaskSpec};
use mt_core::dataset::{
    ingest_human_raw, ingest_robot_raw, read_dataset, write_dataset, DatasetIndex, Domain, DomainCounts, Episode,
    HumanIngest, IngestReport,
};
use mt_core::evalscore::{aggregate, bundled_rubrics, load_annotations, load_rubrics, RubricSpec};
use mt_core::geometry::Pose;
use mt_core::kinematics::HandModel;
use mt_core::normalize::{fit_stats, NormMode};
use mt_core::pipeline::{check_sample_set, run_pipeline, summarize_chunks, transform_dataset, PipelineConfig};
use mt_core::replay::{check_episodes, report_text, summarize, ReplayLimits};
use mt_core::retarget::RetargetConfig;
use mt_core::synth::{count_index, write_corpus, CorpusLayout, CorpusSpec};
use mt_core::transform::{process_episode, read_samples, samples_paths, write_samples, ChunkSpec, PoseMode};

pub const CONFIG_ENV: &str = "MT_CONFIG_DIR";

#[derive(Debug, Parser)]
#[command(name = "mt", version, about = "Human-to-robot manipulation data pipeline")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for episode-level parallelism (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Directory holding replay_limits.toml, hand_model.mthand and rubrics/ overrides.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the VR-to-camera calibration from a session file.
    Calibrate {
        /// Calibration session (JSON).
        session: PathBuf,
        /// Where to write the calibration result (JSON).
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Ingest a raw human VR session into a robot-format dataset.
    IngestHuman {
        /// Directory with session.json and the referenced images.
        dir: PathBuf,
        /// Calibration result from `calibrate`.
        #[arg(long)]
        cal: PathBuf,
        /// Output dataset directory.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Ingest a raw robot teleoperation session into a dataset.
    IngestRobot {
        /// Directory with session.json and the referenced images.
        dir: PathBuf,
        /// Robot-base pose in the camera frame (JSON).
        #[arg(long)]
        extrinsic: PathBuf,
        /// Output dataset directory.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Combine datasets into one; episode ids must be unique.
    Merge {
        /// Input dataset directories.
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        /// Output dataset directory.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Load and validate every episode of a dataset.
    Validate {
        /// Dataset directory.
        dataset: PathBuf,
    },
    /// Print per-domain task, episode and frame counts.
    Stat {
        /// Dataset directory.
        dataset: PathBuf,
    },
    /// Slow human episodes down and cut proprioception/action chunks.
    Transform {
        /// Dataset directory.
        dataset: PathBuf,
        #[command(flatten)]
        chunk: ChunkArgs,
        /// Output samples directory.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fit Z-score statistics over a sample set.
    Normalize {
        /// Samples directory from `transform`.
        samples: PathBuf,
        /// Fit separate statistics per domain instead of unified ones.
        #[arg(long)]
        per_domain: bool,
        /// Output statistics file (JSON).
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check that replayed trajectories stay within workspace and speed limits.
    ReplayCheck {
        /// Dataset directory.
        dataset: PathBuf,
        /// Limits file (TOML); defaults to the config dir's replay_limits.toml or the built-in limits.
        #[arg(long)]
        limits: Option<PathBuf>,
        /// Also verify that the samples' action chunks reconstruct the episode poses, in the samples' pose mode.
        #[arg(long, value_name = "SAMPLES")]
        chunk: Option<PathBuf>,
        /// Slowdown applied to human episodes before checking.
        #[arg(long, default_value_t = 2.25)]
        slowdown: f64,
        /// Print machine-readable JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Print the cotraining alpha and per-sample domain weights.
    CotrainWeights {
        /// Dataset directory or index.json.
        #[arg(required_unless_present_any = ["counts", "bundled"])]
        source: Option<PathBuf>,
        /// Explicit counts as HUMAN,ROBOT instead of a dataset.
        #[arg(long, value_name = "HUMAN,ROBOT", conflicts_with_all = ["source", "bundled"])]
        counts: Option<String>,
        /// Use the bundled synthetic index (1705 human / 1508 robot episodes).
        #[arg(long, conflicts_with = "source")]
        bundled: bool,
    },
    /// Run the toy placement-height cotraining experiment.
    ToyMechanism {
        /// Comma-separated task ids to train on; repeat for several subsets. Defaults to the four standard subsets.
        #[arg(long)]
        subset: Vec<String>,
        /// Number of consecutive seeds, starting at --seed.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Also write the full report (JSON).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Aggregate rollout annotations into progress scores and success rates.
    Score {
        /// Rubric directory; defaults to the config dir's rubrics/ or the bundled rubrics.
        #[arg(long)]
        rubrics: Option<PathBuf>,
        /// Annotation directory (one TOML file per task).
        #[arg(long)]
        annotations: PathBuf,
        /// Print machine-readable JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Generate synthetic inputs.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Run calibrate, ingest, transform, normalize and checks on a corpus directory.
    Pipeline {
        /// Corpus directory laid out like `synth corpus` output.
        corpus: PathBuf,
        #[command(flatten)]
        chunk: ChunkArgs,
        /// Fit separate statistics per domain instead of unified ones.
        #[arg(long)]
        per_domain: bool,
        /// Limits file (TOML); defaults as for replay-check.
        #[arg(long)]
        limits: Option<PathBuf>,
        /// Output directory.
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Write a synthetic calibration, human and robot corpus.
    Corpus {
        /// Human episodes.
        #[arg(long, default_value_t = 54)]
        human: usize,
        /// Robot episodes.
        #[arg(long, default_value_t = 24)]
        robot: usize,
        /// Output corpus directory.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write a metadata-only dataset index with the given episode counts.
    Index {
        /// Human episodes.
        #[arg(long, default_value_t = 1705)]
        human: usize,
        /// Robot episodes.
        #[arg(long, default_value_t = 1508)]
        robot: usize,
        /// Output index file (JSON).
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ChunkArgs {
    /// Time-stretch factor for human episodes.
    #[arg(long, default_value_t = 2.25)]
    slowdown: f64,
    /// Proprioception history length.
    #[arg(long, default_value_t = 2)]
    tp: usize,
    /// Action chunk length.
    #[arg(long, default_value_t = 16)]
    ta: usize,
    /// Frame rate of the samples.
    #[arg(long, default_value_t = 10.0)]
    fps: f64,
    /// Express action chunks as absolute camera-frame poses instead of relative to the current wrist.
    #[arg(long)]
    abs_pose: bool,
}

impl ChunkArgs {
    fn spec(&self) -> Result<ChunkSpec> {
        let spec = ChunkSpec {
            t_p: self.tp,
            t_a: self.ta,
            fps: self.fps,
            pose_mode: if self.abs_pose { PoseMode::Absolute } else { PoseMode::Relative },
            slowdown: self.slowdown,
        };
        spec.validate()?;
        Ok(spec)
    }
}

struct Config {
    dir: Option<PathBuf>,
}

impl Config {
    fn file(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name)).filter(|p| p.exists())
    }

    fn hand_model(&self) -> Result<HandModel> {
        match self.file("hand_model.mthand") {
            Some(p) => Ok(HandModel::load(&p)?),
            None => Ok(HandModel::bundled()),
        }
    }

    fn limits(&self, explicit: Option<&Path>) -> Result<ReplayLimits> {
        match explicit.map(Path::to_path_buf).or_else(|| self.file("replay_limits.toml")) {
            Some(p) => Ok(ReplayLimits::load(&p)?),
            None => Ok(ReplayLimits::default()),
        }
    }

    fn rubrics(&self, explicit: Option<&Path>) -> Result<BTreeMap<String, RubricSpec>> {
        match explicit.map(Path::to_path_buf).or_else(|| self.file("rubrics")) {
            Some(dir) => Ok(load_rubrics(&dir)?),
            None => Ok(bundled_rubrics()?.into_iter().map(|r| (r.task_id.clone(), r)).collect()),
        }
    }
}

/// The error chain joined by ": ", skipping causes already spelled out by
/// the message above them.
pub fn diagnostic(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out += ": ";
            }
            out += &text;
        }
    }
    out
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = Config { dir: cli.config_dir };
    let seed = cli.seed;
    match cli.command {
        Command::Calibrate { session, output } => {
            let s = CalibrationSession::load(&session)?;
            let cal = calibrate(&s)?;
            cal.save(&output)?;
            println!("calibration {}: residual {:.6} px", cal.id, cal.residual_px);
            for w in &cal.warnings {
                println!("warning: {w}");
            }
        }
        Command::IngestHuman { dir, cal, output } => {
            let cal = CalibrationResult::load(&cal)?;
            let model = cfg.hand_model()?;
            let retarget = RetargetConfig::default();
            let report = ingest_human_raw(
                &dir,
                &HumanIngest {
                    calibration: Some(&cal),
                    model: &model,
                    retarget: &retarget,
                },
            )?;
            write_ingested(report, &output, &dir)?;
        }
        Command::IngestRobot { dir, extrinsic, output } => {
            let extrinsic: Pose = mt_core::read_json(&extrinsic)?;
            let report = ingest_robot_raw(&dir, Some(&extrinsic), &cfg.hand_model()?)?;
            write_ingested(report, &output, &dir)?;
        }
        Command::Merge { datasets, output } => {
            let mut episodes = Vec::new();
            let mut roots = Vec::new();
            for d in &datasets {
                let ds = read_dataset(d)?;
                roots.extend(ds.index.episodes.iter().map(|e| d.join(&e.path)));
                episodes.extend(ds.load_all()?);
            }
            let roots: Vec<&Path> = roots.iter().map(PathBuf::as_path).collect();
            let index = write_dataset(&episodes, &output, &roots)?;
            println!("{} human / {} robot episodes", index.counts.human, index.counts.robot);
        }
        Command::Validate { dataset } => {
            let ds = read_dataset(&dataset)?;
            let model = cfg.hand_model()?;
            for ep in ds.load_all()? {
                ep.validate(Some(&model)).with_context(|| format!("episode {}", ep.id))?;
            }
            println!("ok: {} episodes", ds.len());
        }
        Command::Stat { dataset } => {
            let ds = read_dataset(&dataset)?;
            print!("{}", stat_table(&ds.index));
        }
        Command::Transform { dataset, chunk, output } => {
            let spec = chunk.spec()?;
            let ds = read_dataset(&dataset)?;
            let (_, set) = transform_dataset(&ds, &spec)?;
            let index = write_samples(&output, &set)?;
            println!("{} samples ({:?} poses), sha256 {}", index.count, spec.pose_mode, index.bin_sha256);
        }
        Command::Normalize { samples, per_domain, output } => {
            let set = read_samples(&samples)?;
            let mode = if per_domain { NormMode::PerDomain } else { NormMode::Unified };
            let mut stats = fit_stats(&set.samples, mode)?;
            stats.source_sha256 = Some(mt_core::pipeline::sha256_file(&samples_paths(&samples).0)?);
            mt_core::write_json(&output, &stats)?;
            println!("{:?} statistics over {} samples", mode, set.samples.len());
        }
        Command::ReplayCheck {
            dataset,
            limits,
            chunk,
            slowdown,
            json,
        } => replay_check(&cfg, &dataset, limits.as_deref(), chunk.as_deref(), slowdown, json)?,
        Command::CotrainWeights { source, counts, bundled } => {
            let counts = match (source, counts) {
                (_, Some(c)) => parse_counts(&c)?,
                (Some(p), None) => {
                    let path = if p.is_dir() { p.join("index.json") } else { p };
                    DatasetIndex::load(&path)?.counts
                }
                (None, None) if bundled => count_index(1705, 1508).counts,
                (None, None) => bail!("give a dataset, --counts or --bundled"),
            };
            let w = compute_weights(counts)?;
            println!("human episodes: {}", w.counts.human);
            println!("robot episodes: {}", w.counts.robot);
            println!("alpha: {:.5}", w.alpha);
            println!("robot loss weight (alpha): {:.5}", w.alpha);
            println!("human loss weight (1 - alpha): {:.5}", 1.0 - w.alpha);
            println!("per-sample weight robot: {:.6}", w.per_sample.robot);
            println!("per-sample weight human: {:.6}", w.per_sample.human);
        }
        Command::ToyMechanism { subset, seeds, json } => {
            if seeds == 0 {
                bail!("--seeds must be at least 1");
            }
            let spec = HeightTaskSpec::default();
            let subsets: Vec<Vec<String>> = if subset.is_empty() {
                standard_subsets(&spec)
            } else {
                subset
                    .iter()
                    .map(|s| s.split(',').map(|t| t.trim().to_string()).collect())
                    .collect()
            };
            let seed_list: Vec<u64> = (0..seeds).map(|k| seed.wrapping_add(k)).collect();
            let report = run_mechanism_report(&spec, &subsets, &seed_list)?;
            print!("{}", report.to_table());
            if let Some(path) = json {
                mt_core::write_json(&path, &report)?;
            }
        }
        Command::Score {
            rubrics,
            annotations,
            json,
        } => {
            let rubrics = cfg.rubrics(rubrics.as_deref())?;
            let summary = aggregate(&rubrics, &load_annotations(&annotations)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                print!("{}", summary.to_table());
            }
        }
        Command::Synth(SynthCommand::Corpus { human, robot, output }) => {
            let spec = CorpusSpec {
                seed,
                human_episodes: human,
                robot_episodes: robot,
                ..CorpusSpec::default()
            };
            write_corpus(&output, &spec)?;
            println!("corpus with {human} human / {robot} robot episodes in {}", output.display());
        }
        Command::Synth(SynthCommand::Index { human, robot, output }) => {
            let index = count_index(human, robot);
            mt_core::write_json(&output, &index)?;
            println!("index with {human} human / {robot} robot episodes");
        }
        Command::Pipeline {
            corpus,
            chunk,
            per_domain,
            limits,
            output,
        } => {
            let pc = PipelineConfig {
                chunk: chunk.spec()?,
                retarget: RetargetConfig::default(),
                norm_mode: if per_domain { NormMode::PerDomain } else { NormMode::Unified },
                limits: cfg.limits(limits.as_deref())?,
            };
            let report = run_pipeline(&CorpusLayout::new(&corpus), &output, &pc)?;
            println!(
                "{} human / {} robot episodes, {} rejected, {} samples",
                report.episode_counts.human,
                report.episode_counts.robot,
                report.rejected.len(),
                report.samples
            );
            println!("alpha: {:.5}", report.weights.alpha);
            println!(
                "replay: {} ({} failed), chunks: max error {:.3e}, {} faults",
                if report.replay.passed { "PASS" } else { "FAIL" },
                report.replay.failed,
                report.chunks.max_error,
                report.chunks.faults
            );
            if !report.replay.passed || report.chunks.faults > 0 {
                bail!("pipeline checks failed; see {}", output.join("report.json").display());
            }
        }
    }
    Ok(())
}

fn write_ingested(report: IngestReport, output: &Path, images: &Path) -> Result<()> {
    let index = write_dataset(&report.episodes, output, &[images])?;
    let frames: usize = index.episodes.iter().map(|e| e.n_frames).sum();
    info!("wrote {}", output.display());
    println!(
        "{} episodes ({} frames), {} rejected",
        index.episodes.len(),
        frames,
        report.rejected.len()
    );
    Ok(())
}

fn parse_counts(text: &str) -> Result<DomainCounts> {
    let (h, r) = text
        .split_once(',')
        .ok_or_else(|| anyhow!("--counts expects HUMAN,ROBOT, got {text:?}"))?;
    Ok(DomainCounts {
        human: h.trim().parse().with_context(|| format!("bad human count {h:?}"))?,
        robot: r.trim().parse().with_context(|| format!("bad robot count {r:?}"))?,
    })
}

fn stat_table(index: &DatasetIndex) -> String {
    let mut out = format!("{:<8} {:>6} {:>9} {:>9}\n", "domain", "tasks", "episodes", "frames");
    for d in [Domain::Human, Domain::Robot] {
        let eps: Vec<_> = index.episodes.iter().filter(|e| e.domain == d).collect();
        let mut tasks: Vec<&str> = eps.iter().map(|e| e.task_id.as_str()).collect();
        tasks.sort_unstable();
        tasks.dedup();
        out += &format!("{:<8} {:>6} {:>9} {:>9}\n", d.to_string(), tasks.len(), eps.len(), index.count_frames(d));
    }
    out += &format!(
        "{:<8} {:>6} {:>9} {:>9}\n",
        "total",
        index.tasks.len(),
        index.episodes.len(),
        index.episodes.iter().map(|e| e.n_frames).sum::<usize>()
    );
    out
}

fn replay_check(
    cfg: &Config,
    dataset: &Path,
    limits: Option<&Path>,
    chunk: Option<&Path>,
    slowdown: f64,
    json: bool,
) -> Result<()> {
    let limits = cfg.limits(limits)?;
    let model = cfg.hand_model()?;
    let ds = read_dataset(dataset)?;
    let episodes = ds.load_all()?;
    let spec = ChunkSpec {
        slowdown,
        ..ChunkSpec::default()
    };
    let processed: Vec<Episode> = episodes
        .iter()
        .map(|e| process_episode(e, &spec))
        .collect::<mt_core::Result<_>>()?;
    let reports = check_episodes(&processed, &limits, &model)?;
    let summary = summarize(&reports);
    let chunks = match chunk {
        Some(dir) => {
            let set = read_samples(dir)?;
            let r = check_sample_set(&set, &episodes)?;
            Some((set.spec.pose_mode, summarize_chunks(&r), r))
        }
        None => None,
    };
    if json {
        let value = serde_json::json!({
            "replay": reports,
            "summary": summary,
            "chunks": chunks.as_ref().map(|(mode, s, r)| serde_json::json!({
                "mode": mode, "summary": s, "episodes": r,
            })),
        });
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        print!("{}", report_text(&reports));
        if let Some((mode, s, _)) = &chunks {
            println!(
                "{}: chunk reconstruction ({}) over {} episodes, {} rows, {} masked, max error {:.3e}, {} faults",
                if s.faults == 0 { "PASS" } else { "FAIL" },
                match mode {
                    PoseMode::Relative => "relative",
                    PoseMode::Absolute => "absolute",
                },
                s.episodes,
                s.rows_checked,
                s.masked_rows,
                s.max_error,
                s.faults
            );
        }
    }
    let chunk_ok = chunks.as_ref().is_none_or(|(_, s, _)| s.faults == 0);
    if !summary.passed || !chunk_ok {
        bail!("replay check failed");
    }
    Ok(())
}
