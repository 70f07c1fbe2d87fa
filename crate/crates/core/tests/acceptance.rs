//! Acceptance suite: one PASS/FAIL line per criterion. Exit status is
//! nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Matrix4, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mt_core::calibration::calibrate;
use mt_core::cotrain::{
    compute_weights, run_mechanism_report, standard_subsets, DomainSampler, HeightTaskSpec,
};
use mt_core::dataset::{read_dataset, Domain, DomainCounts, Episode};
use mt_core::evalscore::{aggregate, bundled_rubrics, Rollout, TaskAnnotations};
use mt_core::geometry::{compose, decode_rot6d, encode_rot6d, inverse, relative, FrameId, Pose, Vec3};
use mt_core::kinematics::{fingertip_jacobian, forward_kinematics, HandModel};
use mt_core::normalize::{fit_stats, NormMode, Stream};
use mt_core::pipeline::{run_synthetic, PipelineConfig};
use mt_core::replay::{chunk_reconstruction_check, frame_speeds};
use mt_core::retarget::{retarget_objective, retarget_frame, RetargetConfig};
use mt_core::synth::{calibration_session, interior_joints, keypoints_from_fk, random_pose, CorpusSpec};
use mt_core::transform::{make_samples, slow_down, ChunkSpec, PoseMode, TrainingSample};
use mt_core::ROW_DIM;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Shared inputs: one full synthetic pipeline run.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    episodes: Vec<Episode>,
    samples: Vec<TrainingSample>,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path().join("a");
    run_synthetic(&root, &CorpusSpec::default(), &PipelineConfig::default()).expect("pipeline run");
    let ds = read_dataset(&root.join("run/dataset")).expect("dataset");
    let episodes = ds.load_all().expect("episodes");
    let samples = mt_core::transform::read_samples(&root.join("run/samples"))
        .expect("samples")
        .samples;
    Fixture {
        _dir: dir,
        root,
        episodes,
        samples,
    }
}

fn human(f: &Fixture) -> Vec<&Episode> {
    f.episodes.iter().filter(|e| e.domain == Domain::Human).collect()
}

// 1 ---------------------------------------------------------------------------

fn cotrain_weight() -> Outcome {
    let w = compute_weights(DomainCounts { human: 1705, robot: 1508 }).map_err(|e| e.to_string())?;
    // 1705 / 3213 to 17 significant digits
    let expected = 0.530_656_707_127_295_4;
    ensure((w.alpha - expected).abs() < 1e-12, || format!("alpha {}", w.alpha))?;

    // route 1: closed-form per-domain coefficient totals
    let sums = w.coefficient_sums();
    ensure((sums.robot - sums.human).abs() < 1e-12, || format!("{sums:?}"))?;
    // route 2: accumulate the loss coefficient sample by sample
    let (mut h, mut r) = (0.0, 0.0);
    for i in 0..3213 {
        if i < 1705 {
            h += 1.0 - w.alpha;
        } else {
            r += w.alpha;
        }
    }
    ensure((h - r).abs() / 3213.0 < 1e-12, || format!("accumulated {h} vs {r}"))?;
    Ok(format!("alpha = {:.12}, per-domain sums {:.12} / {:.12}", w.alpha, sums.human, sums.robot))
}

// 2 ---------------------------------------------------------------------------

fn replayability(f: &Fixture) -> Outcome {
    let spec = ChunkSpec::default();
    let humans = human(f);
    ensure(humans.len() >= 50, || format!("only {} human episodes", humans.len()))?;
    let mut max_err: f64 = 0.0;
    let mut rows = 0;
    for e in &humans {
        let slowed = slow_down(e, spec.slowdown).map_err(|e| e.to_string())?;
        let ours: Vec<TrainingSample> = f.samples.iter().filter(|s| s.episode_id == e.id).cloned().collect();
        // the shard samples must be exactly what a fresh chunking produces
        let fresh = make_samples(&slowed, &spec).map_err(|e| e.to_string())?;
        ensure(ours == fresh, || format!("{}: stored samples differ from fresh chunking", e.id))?;
        let r = chunk_reconstruction_check(&ours, PoseMode::Relative, &slowed).map_err(|e| e.to_string())?;
        ensure(r.passed(), || format!("{}: {:?}", e.id, r.faults.first()))?;
        max_err = max_err.max(r.max_error());
        rows += r.rows_checked;
    }
    ensure(max_err < 1e-9, || format!("max error {max_err:e}"))?;
    Ok(format!("{} episodes, {rows} unpadded rows, max error {max_err:.2e}", humans.len()))
}

// 3 ---------------------------------------------------------------------------

fn max_speed(e: &Episode) -> Result<f64, String> {
    let s = frame_speeds(e).map_err(|e| e.to_string())?;
    Ok(s.linear.iter().copied().fold(0.0, f64::max))
}

fn slowdown(f: &Fixture) -> Outcome {
    let humans = human(f);
    let mut worst: f64 = 0.0;
    let mut gapped = 0;
    for e in &humans {
        // frames on the nominal 10 fps grid; a dropped frame leaves a slot
        let grid = (e.duration() * e.fps).round() as usize + 1;
        if grid != e.frames.len() {
            gapped += 1;
        }
        let slowed = slow_down(e, 2.25).map_err(|e| e.to_string())?;
        let expected = ((grid - 1) as f64 * 2.25).round() as usize + 1;
        ensure(slowed.frames.len() == expected, || {
            format!("{}: {} frames, expected {expected}", e.id, slowed.frames.len())
        })?;
        let ratio = max_speed(e)? / max_speed(&slowed)?;
        worst = worst.max((ratio / 2.25 - 1.0).abs());
    }
    ensure(worst < 0.01, || format!("speed ratio off by {:.3}%", 100.0 * worst))?;
    Ok(format!(
        "{} episodes ({gapped} with a dropped frame, counted on the nominal grid), worst speed-ratio deviation {:.4}%",
        humans.len(),
        100.0 * worst
    ))
}

// 4 ---------------------------------------------------------------------------

/// Angle between two rotations from their matrices.
fn matrix_angle(a: &Pose, b: &Pose) -> f64 {
    let ra: Matrix3<f64> = a.orientation.to_rotation_matrix().into_inner();
    let rb: Matrix3<f64> = b.orientation.to_rotation_matrix().into_inner();
    (((ra.transpose() * rb).trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Hand poses over the desk area, expressed in VR coordinates.
fn desk_hands(t_vr: &Pose, rng: &mut ChaCha8Rng, n: usize) -> Vec<Pose> {
    let board_to_vr = inverse(t_vr);
    (0..n)
        .map(|_| {
            let mut p = random_pose(rng, FrameId::Chessboard);
            p.position = Vec3::new(
                rng.random_range(-0.1..0.3),
                rng.random_range(-0.1..0.25),
                rng.random_range(0.05..0.3),
            );
            compose(&board_to_vr, &p).with_frame(FrameId::Vr)
        })
        .collect()
}

fn calibration_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut clean: (f64, f64) = (0.0, 0.0);
    for seed in 0..20 {
        let syn = calibration_session(seed, 0.0);
        let est = calibrate(&syn.session).map_err(|e| e.to_string())?;
        let truth = syn.truth();
        for h in desk_hands(&syn.t_vr, &mut rng, 10) {
            let a = est.apply_pose(&h).map_err(|e| e.to_string())?;
            let b = truth.apply_pose(&h).map_err(|e| e.to_string())?;
            clean.0 = clean.0.max((a.position - b.position).norm());
            clean.1 = clean.1.max(matrix_angle(&a, &b));
        }
    }
    ensure(clean.0 < 1e-6 && clean.1 < 1e-6, || format!("noiseless error {clean:?}"))?;

    let mut noisy: (f64, f64) = (0.0, 0.0);
    for trial in 0..100 {
        let syn = calibration_session(1000 + trial, 0.5);
        let est = calibrate(&syn.session).map_err(|e| e.to_string())?;
        let truth = syn.truth();
        for h in desk_hands(&syn.t_vr, &mut rng, 10) {
            let a = est.apply_pose(&h).map_err(|e| e.to_string())?;
            let b = truth.apply_pose(&h).map_err(|e| e.to_string())?;
            noisy.0 = noisy.0.max((a.position - b.position).norm());
            noisy.1 = noisy.1.max(matrix_angle(&a, &b));
        }
    }
    ensure(noisy.0 < 2e-3 && noisy.1.to_degrees() < 0.2, || {
        format!("0.5 px: {:.3} mm / {:.3} deg", 1e3 * noisy.0, noisy.1.to_degrees())
    })?;
    Ok(format!(
        "noiseless {:.1e} m / {:.1e} rad; 0.5 px over 100 trials: {:.3} mm / {:.4} deg",
        clean.0,
        clean.1,
        1e3 * noisy.0,
        noisy.1.to_degrees()
    ))
}

// 5 ---------------------------------------------------------------------------

fn retargeting() -> Outcome {
    let model = HandModel::bundled();
    let cfg = RetargetConfig {
        smoothness: 0.0,
        ..RetargetConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_obj, mut worst_q): (f64, f64) = (0.0, 0.0);
    for i in 0..100 {
        let truth = interior_joints(&model, &mut rng, 0.1);
        let kp = keypoints_from_fk(&model, &truth).map_err(|e| e.to_string())?;
        let out = retarget_frame(&model, &kp, &model.mid_range(), &cfg).map_err(|e| e.to_string())?;
        ensure(model.within_limits(&out.joints), || format!("frame {i} outside limits"))?;
        ensure(out.accepted_objectives.windows(2).all(|w| w[1] <= w[0]), || {
            format!("frame {i}: objective increased on an accepted step")
        })?;
        // recompute the objective independently of the solver's bookkeeping
        let obj = retarget_objective(&model, &kp, &out.joints, &model.mid_range(), &cfg).map_err(|e| e.to_string())?;
        worst_obj = worst_obj.max(obj).max(out.objective);
        let dq = out.joints.0.iter().zip(&truth.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst_q = worst_q.max(dq);
    }
    ensure(worst_obj < 1e-10, || format!("objective {worst_obj:e}"))?;
    ensure(worst_q < 1e-4, || format!("joint error {worst_q:e}"))?;
    Ok(format!("100 frames, max objective {worst_obj:.2e}, max joint error {worst_q:.2e} rad"))
}

// 6 ---------------------------------------------------------------------------

fn normalization(f: &Fixture) -> Outcome {
    let stats = fit_stats(&f.samples, NormMode::Unified).map_err(|e| e.to_string())?;
    let mut worst_mean: f64 = 0.0;
    let mut worst_std: f64 = 0.0;
    let mut worst_rt: f64 = 0.0;
    for stream in [Stream::Proprio, Stream::Action] {
        let rows: Vec<&[f64; ROW_DIM]> = f
            .samples
            .iter()
            .flat_map(|s| -> Vec<&[f64; ROW_DIM]> {
                match stream {
                    Stream::Proprio => s.proprio.iter().collect(),
                    Stream::Action => s.action.iter().zip(&s.action_mask).filter(|(_, m)| **m).map(|(r, _)| r).collect(),
                }
            })
            .collect();
        let mut normed = Vec::with_capacity(rows.len());
        for r in &rows {
            let z = stats.normalize(&r[..], stream, Domain::Human).map_err(|e| e.to_string())?;
            let back = stats.denormalize(&z, stream, Domain::Human).map_err(|e| e.to_string())?;
            for (a, b) in back.iter().zip(r.iter()) {
                worst_rt = worst_rt.max((a - b).abs());
            }
            normed.push(z);
        }
        // two-pass moments over the normalized rows
        let n = normed.len() as f64;
        for d in 0..ROW_DIM {
            let mean = normed.iter().map(|z| z[d]).sum::<f64>() / n;
            let var = normed.iter().map(|z| (z[d] - mean).powi(2)).sum::<f64>() / n;
            worst_mean = worst_mean.max(mean.abs());
            worst_std = worst_std.max((var.sqrt() - 1.0).abs());
        }
    }
    ensure(worst_mean < 1e-6, || format!("mean {worst_mean:e}"))?;
    ensure(worst_std < 1e-6, || format!("std deviation from 1: {worst_std:e}"))?;
    ensure(worst_rt < 1e-12, || format!("round trip {worst_rt:e}"))?;

    // the same raw sample, labelled with either domain
    let per = fit_stats(&f.samples, NormMode::PerDomain).map_err(|e| e.to_string())?;
    let raw = f.samples.iter().find(|s| s.domain == Domain::Robot).ok_or("no robot sample")?;
    let mut as_human = raw.clone();
    as_human.domain = Domain::Human;
    let a = per.normalize_sample(raw).map_err(|e| e.to_string())?;
    let b = per.normalize_sample(&as_human).map_err(|e| e.to_string())?;
    let gap = a.proprio[0].iter().zip(&b.proprio[0]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ensure(gap > 1e-3, || format!("per-domain gap only {gap:e}"))?;
    let ua = stats.normalize_sample(raw).map_err(|e| e.to_string())?;
    let ub = stats.normalize_sample(&as_human).map_err(|e| e.to_string())?;
    ensure(ua.proprio == ub.proprio && ua.action == ub.action, || "unified stats depend on the label".into())?;
    Ok(format!(
        "|mean| {worst_mean:.1e}, |std-1| {worst_std:.1e}, round trip {worst_rt:.1e}; per-domain gap {gap:.3} for identical raw input"
    ))
}

// 7 ---------------------------------------------------------------------------

fn sampler() -> Outcome {
    let w = compute_weights(DomainCounts { human: 1705, robot: 1508 }).map_err(|e| e.to_string())?;
    let domains: Vec<Domain> = (0..3213).map(|i| if i < 1705 { Domain::Human } else { Domain::Robot }).collect();
    let s = DomainSampler::from_domains(&domains, w.alpha).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 1_000_000;
    let robot = (0..n).filter(|_| domains[s.draw(&mut rng)] == Domain::Robot).count();
    let frac = robot as f64 / n as f64;
    let sigma = (w.alpha * (1.0 - w.alpha) / n as f64).sqrt();
    let z = (frac - w.alpha) / sigma;
    ensure(z.abs() <= 3.0, || format!("robot fraction {frac} is {z:.2} sigma from {}", w.alpha))?;
    Ok(format!("robot fraction {frac:.5} vs alpha {:.5} ({z:+.2} sigma)", w.alpha))
}

// 8 ---------------------------------------------------------------------------

fn mechanism() -> Outcome {
    let spec = HeightTaskSpec::default();
    let subsets = standard_subsets(&spec);
    let seeds: Vec<u64> = (0..10).collect();
    let report = run_mechanism_report(&spec, &subsets, &seeds).map_err(|e| e.to_string())?;
    let err: BTreeMap<String, f64> = report
        .subsets
        .iter()
        .map(|s| (s.subset.join("+"), s.mean_abs_error_cm))
        .collect();
    let only = err["h_bucket"];
    let pad = err["h_bucket+r_pad"];
    let platform = err["h_bucket+r_platform"];
    let full_summary = report.subsets.last().ok_or("no subsets")?;
    let full = full_summary.mean_abs_error_cm;
    let detail = format!(
        "|err| cm: H {only:.2} -> H+pad {pad:.2} / H+platform {platform:.2} -> H+both {full:.2}; full predicts {:.2} cm",
        full_summary.mean_prediction_cm
    );
    ensure(pad <= only && platform <= only, || format!("single robot task worse than H-only: {detail}"))?;
    ensure(full <= pad && full <= platform, || format!("full subset not best: {detail}"))?;
    ensure((full_summary.mean_prediction_cm - 15.3).abs() < 2.0, || detail.clone())?;
    Ok(detail)
}

// 9 ---------------------------------------------------------------------------

fn matrix_of(p: &Pose) -> Matrix4<f64> {
    let r = p.orientation.to_rotation_matrix().into_inner();
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.position);
    m
}

fn pose_gap(p: &Pose, m: &Matrix4<f64>) -> f64 {
    (matrix_of(p) - m).abs().max()
}

fn geometry_kinematics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let a = random_pose(&mut rng, FrameId::Camera);
        let b = random_pose(&mut rng, FrameId::Camera);
        let (ma, mb) = (matrix_of(&a), matrix_of(&b));
        worst = worst.max(pose_gap(&compose(&a, &b), &(ma * mb)));
        let ia = ma.try_inverse().ok_or("singular")?;
        worst = worst.max(pose_gap(&inverse(&a), &ia));
        let rel = relative(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max(pose_gap(&rel, &(ia * mb)));
        worst = worst.max(pose_gap(&compose(&a, &rel), &mb));
        worst = worst.max(pose_gap(&compose(&a, &inverse(&a)), &Matrix4::identity()));

        let r6 = encode_rot6d(&a.orientation);
        let m = a.orientation.to_rotation_matrix().into_inner();
        for k in 0..3 {
            worst = worst.max((r6.0[k] - m[(0, k)]).abs()).max((r6.0[3 + k] - m[(1, k)]).abs());
        }
        let back: UnitQuaternion<f64> = decode_rot6d(&r6).map_err(|e| e.to_string())?;
        worst = worst.max((back.to_rotation_matrix().into_inner() - m).abs().max());
    }
    ensure(worst < 1e-9, || format!("round-trip error {worst:e}"))?;

    let model = HandModel::bundled();
    let h = 1e-6;
    let mut jac_err: f64 = 0.0;
    for _ in 0..1000 {
        let q = interior_joints(&model, &mut rng, 0.0);
        let j = fingertip_jacobian(&model, &q).map_err(|e| e.to_string())?;
        for k in 0..6 {
            let mut qp = q;
            let mut qm = q;
            qp.0[k] += h;
            qm.0[k] -= h;
            let fp = forward_kinematics(&model, &qp).map_err(|e| e.to_string())?;
            let fm = forward_kinematics(&model, &qm).map_err(|e| e.to_string())?;
            for (tip, (p, m)) in fp.iter().zip(&fm).enumerate() {
                let fd = (p - m) / (2.0 * h);
                for c in 0..3 {
                    jac_err = jac_err.max((fd[c] - j[(3 * tip + c, k)]).abs());
                }
            }
        }
    }
    ensure(jac_err < 1e-5, || format!("Jacobian vs finite differences {jac_err:e}"))?;
    Ok(format!("1e5 pose/rot6d trials max error {worst:.1e}; Jacobian max gap {jac_err:.1e} over 1000 trials"))
}

// 10 --------------------------------------------------------------------------

fn score_aggregator() -> Outcome {
    // route 1: sum the stage points straight from the TOML files
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/rubrics");
    let mut files = 0;
    for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let value: toml::Value = toml::from_str(&std::fs::read_to_string(&path).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let total: i64 = value["stages"]
            .as_array()
            .ok_or("no stages")?
            .iter()
            .map(|s| s["points"].as_integer().unwrap_or(0))
            .sum();
        ensure(total == 8, || format!("{}: {total} points", path.display()))?;
        files += 1;
    }
    ensure(files == 13, || format!("{files} rubric files"))?;
    // route 2: the library's parsed rubrics
    let rubrics = bundled_rubrics().map_err(|e| e.to_string())?;
    ensure(rubrics.len() == 13, || format!("{} bundled rubrics", rubrics.len()))?;
    ensure(rubrics.iter().all(|r| r.max_points == 8 && r.stages.iter().map(|s| s.points).sum::<u32>() == 8), || {
        "bundled rubric totals differ from 8".into()
    })?;

    let by_id: BTreeMap<_, _> = rubrics.into_iter().map(|r| (r.task_id.clone(), r)).collect();
    let all_stages: Vec<String> = by_id["orange_bucket"].stages.iter().map(|s| s.name.clone()).collect();
    let task = TaskAnnotations {
        task_id: "orange_bucket".into(),
        rollouts: (0..10)
            .map(|i| Rollout {
                success: i < 8,
                achieved: if i < 8 { all_stages.clone() } else { vec![] },
            })
            .collect(),
    };
    let summary = aggregate(&by_id, &[task]).map_err(|e| e.to_string())?;
    let table = summary.to_table();
    ensure(summary.tasks[0].success_rate == 0.8, || format!("SR {}", summary.tasks[0].success_rate))?;
    ensure(table.lines().any(|l| l.starts_with("orange_bucket") && l.contains(" 80.0 ")), || table.clone())?;
    Ok(format!("13 rubrics x 8 points; 8/10 successes -> SR 80.0%, score {:.3}", summary.tasks[0].mean_score))
}

// 11 --------------------------------------------------------------------------

fn collect_files(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn determinism(f: &Fixture) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let second = dir.path().join("b");
    run_synthetic(&second, &CorpusSpec::default(), &PipelineConfig::default()).map_err(|e| e.to_string())?;
    let a = collect_files(&f.root)?;
    let b = collect_files(&second)?;
    ensure(a.keys().eq(b.keys()), || "different file sets".into())?;
    for (path, bytes) in &a {
        ensure(&b[path] == bytes, || format!("{} differs", path.display()))?;
    }
    let bytes: usize = a.values().map(Vec::len).sum();
    Ok(format!("{} files ({bytes} bytes) identical across two runs", a.len()))
}

// ---------------------------------------------------------------------------

fn run(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into()))
    });
    let elapsed = start.elapsed();
    let (ok, detail) = match result {
        Ok(d) if elapsed <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over the {:.0?} budget", budget)),
        Err(e) => (false, e),
    };
    println!(
        "{} [{id:>2}] {name}: {detail} ({:.2}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    ok
}

fn main() {
    let start = Instant::now();
    let fx = fixture();
    println!("setup: synthetic pipeline run in {:.2}s", start.elapsed().as_secs_f64());
    let s = Duration::from_secs;
    let results = [
        run(1, "cotraining weight", s(1), cotrain_weight),
        run(2, "replayability", s(10), || replayability(&fx)),
        run(3, "slowdown", s(5), || slowdown(&fx)),
        run(4, "calibration chain", s(30), calibration_chain),
        run(5, "retargeting", s(60), retargeting),
        run(6, "normalization", s(60), || normalization(&fx)),
        run(7, "sampler", s(60), sampler),
        run(8, "mechanism experiment", s(300), mechanism),
        run(9, "geometry/kinematics", s(120), geometry_kinematics),
        run(10, "score aggregator", s(5), score_aggregator),
        run(11, "determinism", s(300), || determinism(&fx)),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
