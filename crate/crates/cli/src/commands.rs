use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use idvo_core::dataset::{load_sequence, pfm_read, pfm_write, read_poses, synth_generate, write_poses, write_sequence};
use idvo_core::evaluation::{ate_sequence, ate_snippet, depth_metrics, format_mean_std, mean_std, smoothness, DepthReport};
use idvo_core::geometry::CameraIntrinsics;
use idvo_core::masking::{build_dhem, write_mask_png};
use idvo_core::objective::grad_check_all;
use idvo_core::pipeline::run_sequence;
use idvo_core::synthesis::DepthMap;
use idvo_core::Error;

use crate::config::RunConfig;
use crate::EvalMode;

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Verification = 1,
    Usage = 2,
    Io = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub code: Exit,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: Exit::Usage, message: message.into() }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        Self { code: Exit::Verification, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Load(_) | Error::Parse { .. } | Error::Format { .. } => Exit::Io,
            Error::NonFinite { .. } | Error::BehindCamera { .. } => Exit::Verification,
            _ => Exit::Usage,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, contents).map_err(|e| CliError {
        code: Exit::Io,
        message: format!("{}: {e}", path.display()),
    })
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| CliError {
        code: Exit::Io,
        message: format!("{}: {e}", path.display()),
    })
}

/// Creates the output directory and writes `config.resolved`.
fn prepare_out(cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = PathBuf::from(&cfg.out);
    create_dir(&out)?;
    write(&out.join("config.resolved"), cfg.echo())?;
    Ok(out)
}

fn manifest(cfg: &RunConfig, command: &str, extra: &[(&str, String)]) -> String {
    let mut s = format!(
        "command = {command}\nseed = {}\njitter_translation = {}\njitter_rotation = {}\nconfig_sha256 = {}\n",
        cfg.seed,
        cfg.jitter_translation,
        cfg.jitter_rotation,
        cfg.hash()
    );
    for (k, v) in extra {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

pub fn synth(cfg: &RunConfig) -> CliResult {
    let out = prepare_out(cfg)?;
    let seq = synth_generate(&cfg.synth())?;
    write_sequence(&seq, &out)?;
    let m = manifest(
        cfg,
        "synth",
        &[
            ("frames", seq.len().to_string()),
            ("resolution", format!("{}x{}", seq.intrinsics.width, seq.intrinsics.height)),
        ],
    );
    write(&out.join("manifest.txt"), &m)?;
    println!("wrote {} frames to {}", seq.len(), out.display());
    print!("{m}");
    Ok(())
}

fn path_length(poses: &[idvo_core::geometry::Pose6DoF]) -> f64 {
    poses
        .windows(2)
        .map(|w| (w[1].translation() - w[0].translation()).norm())
        .sum()
}

pub fn optimize(cfg: &RunConfig) -> CliResult {
    if cfg.dataset.is_empty() {
        return Err(CliError::usage("optimize needs --dataset or a dataset key"));
    }
    let pipeline = cfg.pipeline();
    pipeline.validate()?;
    let out = prepare_out(cfg)?;
    let res = (cfg.resolution.width, cfg.resolution.height);
    let seq = load_sequence(Path::new(&cfg.dataset), Some(res))?;
    let start = Instant::now();
    let run = run_sequence(&seq, &pipeline)?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut filter_csv = String::from("frame,score,kept\n");
    for (i, s) in run.filter.scores.iter().enumerate() {
        filter_csv.push_str(&format!("{i},{s:e},{}\n", run.filter.kept.contains(&i)));
    }
    write(&out.join("static_filter.csv"), filter_csv)?;

    let snippets_dir = out.join("snippets");
    let mut failures = Vec::new();
    let mut summary = String::new();
    for (n, s) in run.snippets.iter().enumerate() {
        let dir = snippets_dir.join(format!("{n:04}"));
        let depth_dir = dir.join("depth");
        create_dir(&depth_dir)?;
        write_poses(&dir.join("poses.txt"), &s.state.poses)?;
        for (j, &frame) in s.frames.iter().enumerate() {
            pfm_write(&DepthMap::new(s.state.depth(j))?, &depth_dir.join(format!("{frame:06}.pfm")))?;
        }
        write(&dir.join("trace.csv"), s.trace.to_csv())?;
        let frames: Vec<String> = s.frames.iter().map(|f| f.to_string()).collect();
        write(&dir.join("frames.txt"), frames.join("\n") + "\n")?;
        let widths: String = s
            .mask_widths
            .iter()
            .map(|w| format!("{} {} {} {}\n", w.top, w.bottom, w.left, w.right))
            .collect();
        write(&dir.join("mask_widths.txt"), widths)?;
        let first = s.trace.records.first().map_or(f64::NAN, |r| r.total);
        let last = s.trace.final_record.map_or(f64::NAN, |r| r.total);
        summary.push_str(&format!(
            "snippet_{n:04} = frames {}..={} total {first:.6e} -> {last:.6e} converged {}\n",
            s.frames[0],
            s.frames[s.frames.len() - 1],
            s.trace.converged
        ));
        if let Some(f) = &s.trace.failure {
            failures.push(format!("snippet {n}: {f}"));
        }
    }
    write_poses(&out.join("trajectory.txt"), &run.trajectory)?;
    let frames: Vec<String> = run.frames.iter().map(|f| f.to_string()).collect();
    write(&out.join("trajectory_frames.txt"), frames.join("\n") + "\n")?;

    summary.push_str(&format!(
        "snippets = {}\ndropped_frames = {:?}\nseconds = {elapsed:.2}\n",
        run.snippets.len(),
        run.filter.dropped
    ));
    if let Some(gt) = &seq.gt_poses {
        let gt = run.aligned_gt(gt);
        let ate = ate_snippet(&run.trajectory, &gt)?;
        let path = path_length(&gt);
        summary.push_str(&format!("trajectory_ate = {ate:.6}\npath_length = {path:.6}\n"));
        if path > 0.0 {
            summary.push_str(&format!("trajectory_ate_percent = {:.4}\n", 100.0 * ate / path));
        }
        if run.trajectory.len() >= cfg.ate_window {
            let r = ate_sequence(&run.trajectory, &gt, cfg.ate_window)?;
            summary.push_str(&format!("ate_{}_snippets = {}\n", cfg.ate_window, r.summary()));
        }
    }
    if let Some(depths) = &seq.gt_depths {
        let mut abs_rel = Vec::new();
        for s in &run.snippets {
            let mid = s.frames.len() / 2;
            let pred = DepthMap::new(s.state.depth(mid))?;
            abs_rel.push(depth_metrics(&pred, &depths[s.frames[mid]], cfg.depth_cap)?.abs_rel);
        }
        let (m, sd) = mean_std(&abs_rel);
        summary.push_str(&format!("mid_frame_abs_rel = {}\n", format_mean_std(m, sd)));
    }
    write(&out.join("summary.txt"), &summary)?;
    write(
        &out.join("manifest.txt"),
        manifest(cfg, "optimize", &[("dataset", cfg.dataset.clone())]),
    )?;
    print!("{summary}");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::verification(failures.join("; ")))
    }
}

fn depth_files(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| CliError {
        code: Exit::Io,
        message: format!("{}: {e}", path.display()),
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("pfm"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn eval(cfg: &RunConfig, mode: EvalMode, est: &Path, gt: Option<&Path>, write_out: bool) -> CliResult {
    let out = if write_out { Some(prepare_out(cfg)?) } else { None };
    let need_gt = || gt.ok_or_else(|| CliError::usage("this mode needs --gt"));
    match mode {
        EvalMode::Ate => {
            let gt = need_gt()?;
            let est = read_poses(est)?;
            let gt = read_poses(gt)?;
            if est.len() != gt.len() {
                return Err(CliError::usage(format!("{} estimated poses but {} ground-truth poses", est.len(), gt.len())));
            }
            let r = ate_sequence(&est, &gt, cfg.ate_window)?;
            if let Some(o) = &out {
                write(&o.join("ate.csv"), r.to_csv())?;
            }
            println!("ate {} ({} windows of {})", r.summary(), r.count, cfg.ate_window);
        }
        EvalMode::Depth => {
            let gt = need_gt()?;
            let (pred, truth) = (depth_files(est)?, depth_files(gt)?);
            let mut pairs = Vec::new();
            for p in &pred {
                let name = p.file_name();
                let g = if truth.len() == 1 && pred.len() == 1 {
                    truth[0].clone()
                } else {
                    truth
                        .iter()
                        .find(|g| g.file_name() == name)
                        .cloned()
                        .ok_or_else(|| CliError::usage(format!("no ground truth for {}", p.display())))?
                };
                pairs.push((p.clone(), g));
            }
            if pairs.is_empty() {
                return Err(CliError::usage(format!("no PFM files in {}", est.display())));
            }
            let mut csv = format!("file,{}\n", DepthReport::CSV_HEADER);
            let mut reports = Vec::new();
            for (p, g) in &pairs {
                let r = depth_metrics(&pfm_read(p)?, &pfm_read(g)?, cfg.depth_cap)?;
                csv.push_str(&format!("{},{}\n", p.display(), r.csv_row()));
                reports.push(r);
            }
            if let Some(o) = &out {
                write(&o.join("depth.csv"), csv)?;
            }
            let stat = |f: fn(&DepthReport) -> f64| {
                let v: Vec<f64> = reports.iter().map(f).collect();
                let (m, s) = mean_std(&v);
                format_mean_std(m, s)
            };
            println!("abs_rel {}", stat(|r| r.abs_rel));
            println!("sq_rel {}", stat(|r| r.sq_rel));
            println!("rmse {}", stat(|r| r.rmse));
            println!("rmse_log {}", stat(|r| r.rmse_log));
        }
        EvalMode::Smoothness => {
            let traj = read_poses(est)?;
            let r = smoothness(&traj, cfg.chi)?;
            if let Some(o) = &out {
                write(&o.join("velocity.csv"), r.velocity_csv())?;
            }
            println!("mean_abs_a {:.6}", r.mean_abs_a);
            println!("mean_abs_j {:.6}", r.mean_abs_j);
            println!("max_abs_j {:.6}", r.max_abs_j);
            println!("sawtooth {:.6}", r.sawtooth);
        }
    }
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, corrupt: bool, write_out: bool) -> CliResult {
    let start = Instant::now();
    let reports = grad_check_all(cfg.seed, &cfg.gradcheck(corrupt))?;
    let mut text = String::new();
    for r in &reports {
        text.push_str(&format!("{r}\n"));
    }
    print!("{text}");
    println!("seconds {:.1}", start.elapsed().as_secs_f64());
    if write_out {
        let out = prepare_out(cfg)?;
        write(&out.join("gradcheck.txt"), &text)?;
    }
    let failing: Vec<String> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{}/{}", r.term.name(), r.block.name()))
        .collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::verification(format!("gradient check failed: {}", failing.join(", "))))
    }
}

pub fn mask_preview(cfg: &RunConfig, speed: f64, yaw: f64) -> CliResult {
    let out = prepare_out(cfg)?;
    let (w, h) = (cfg.resolution.width, cfg.resolution.height);
    let f = cfg.synth_focal * w as f64;
    let k = CameraIntrinsics::new(f, f, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h)?;
    let params = if cfg.dhem {
        cfg.dhem_params()
    } else {
        idvo_core::masking::DhemParams { k_v: 0.0, k_s: 0.0, w_max: 0.0 }
    };
    let mask = build_dhem(speed, yaw, &k, &params)?;
    let path = out.join("mask_preview.png");
    write_mask_png(mask.grid(), &path)?;
    let wd = mask.widths();
    println!(
        "widths top {} bottom {} left {} right {}; masked {} of {} pixels; wrote {}",
        wd.top,
        wd.bottom,
        wd.left,
        wd.right,
        mask.masked_count(),
        w * h,
        path.display()
    );
    Ok(())
}
