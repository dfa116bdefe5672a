use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conditioning::{interleave_for_interpolation, stitch_interpolated_halves};
use crate::curation::{run_curation, CurationOptions, HqThresholds, RawVideoDecoder};
use crate::denoiser::{synthetic_static_videos, toy_train_step, Denoiser, GaussianOracle, ToyConfig, ToyFactorizedNet};
use crate::error::Error;
use crate::guidance::{GuidanceSpec, Strategy};
use crate::juice::{load_votes, simulate_kappa_curve, summarize, AgreementClass, Kappa, ReasonTag, SIMULATED_ITEMS};
use crate::latent::{LatentVideo, Shape};
use crate::sampler::{extend_video, generate_factorized, SamplerConfig, TimestepSelection};
use crate::schedule::{NoiseSchedule, PredictionKind, Snr};

use super::manifest::RunManifest;
use super::{
    load_config, CliError, CliResult, CurateArgs, EvalArgs, GenerateArgs, InterpArgs, ScheduleArgs, TrainArgs,
};

const DEFAULT_BETA_START: f64 = 8.5e-4;
const DEFAULT_BETA_END: f64 = 1.2e-2;
const DEFAULT_TRAIN_STEPS: usize = 1000;

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    v.as_deref().ok_or_else(|| CliError::usage(format!("{flag} is required")))
}

/// `<path>.run.json`
fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

fn build_schedule(steps: usize, beta_start: f64, beta_end: f64, zero_terminal: bool) -> CliResult<NoiseSchedule> {
    if steps < 2 {
        return Err(CliError::usage("schedule needs at least 2 steps"));
    }
    let s = NoiseSchedule::quad(steps, beta_start, beta_end).map_err(CliError::usage)?;
    if zero_terminal {
        s.rescale_zero_terminal_snr().map_err(CliError::usage)
    } else {
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub zero_terminal: bool,
    pub every: usize,
    pub json: Option<PathBuf>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_TRAIN_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            zero_terminal: false,
            every: 1,
            json: None,
        }
    }
}

pub(super) fn cmd_schedule(a: ScheduleArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg: ScheduleConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.steps, a.steps);
    set(&mut cfg.beta_start, a.beta_start);
    set(&mut cfg.beta_end, a.beta_end);
    set(&mut cfg.zero_terminal, a.zero_terminal);
    set(&mut cfg.every, a.every);
    set_opt(&mut cfg.json, a.json);
    if cfg.every == 0 {
        return Err(CliError::usage("--every must be positive"));
    }
    let sched = build_schedule(cfg.steps, cfg.beta_start, cfg.beta_end, cfg.zero_terminal)?;

    writeln!(out, "t,signal,noise,snr")?;
    let n = sched.num_steps();
    for t in (1..=n).filter(|&t| t == 1 || t == n || (t - 1) % cfg.every == 0) {
        let (s, e) = sched.coefs(t)?;
        match sched.snr(t)? {
            Snr::Finite(v) => writeln!(out, "{t},{s},{e},{v}")?,
            Snr::Infinite => writeln!(out, "{t},{s},{e},inf")?,
        }
    }
    if let Some(path) = &cfg.json {
        std::fs::write(path, sched.to_json()?)?;
        RunManifest::new("schedule", None, &cfg)?.output(path)?.write(&manifest_path(path))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserChoice {
    Oracle,
    Toy,
}

impl FromStr for DenoiserChoice {
    type Err = Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "toy" => Ok(Self::Toy),
            other => Err(Error::InvalidSampler(format!("unknown denoiser {other:?}; expected oracle or toy"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub denoiser: DenoiserChoice,
    pub checkpoint: Option<PathBuf>,
    pub mu: f64,
    pub sigma2: f64,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub seed: u64,
    pub prediction: PredictionKind,
    pub timesteps: TimestepSelection,
    pub w_image: f64,
    pub w_text: f64,
    pub strategy: Strategy,
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub zero_terminal: bool,
    pub extend: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let sampler = SamplerConfig::default();
        let guidance = crate::guidance::default_video_spec();
        Self {
            denoiser: DenoiserChoice::Oracle,
            checkpoint: None,
            mu: 0.0,
            sigma2: 1.0,
            frames: 16,
            channels: 8,
            height: 8,
            width: 8,
            steps: sampler.num_inference_steps,
            seed: 0,
            prediction: sampler.prediction_kind,
            timesteps: sampler.timestep_selection,
            w_image: guidance.w_image,
            w_text: guidance.w_text,
            strategy: guidance.strategy,
            train_steps: DEFAULT_TRAIN_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            zero_terminal: true,
            extend: None,
            out_dir: None,
        }
    }
}

fn describe(v: &LatentVideo) -> String {
    let s = v.shape();
    format!("{}x{}x{}x{}", s.frames, s.channels, s.height, s.width)
}

pub(super) fn cmd_generate(a: GenerateArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg: GenerateConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.steps, a.sampler.steps);
    set(&mut cfg.seed, a.sampler.seed);
    set(&mut cfg.prediction, a.sampler.pred);
    set(&mut cfg.timesteps, a.sampler.timesteps);
    set(&mut cfg.w_image, a.sampler.w_image);
    set(&mut cfg.w_text, a.sampler.w_text);
    set(&mut cfg.strategy, a.sampler.strategy);
    set(&mut cfg.denoiser, a.denoiser);
    set_opt(&mut cfg.checkpoint, a.checkpoint);
    set(&mut cfg.mu, a.mu);
    set(&mut cfg.sigma2, a.sigma2);
    set(&mut cfg.frames, a.frames);
    set(&mut cfg.channels, a.channels);
    set(&mut cfg.height, a.height);
    set(&mut cfg.width, a.width);
    set_opt(&mut cfg.extend, a.extend);
    set_opt(&mut cfg.out_dir, a.out_dir);

    let out_dir = required(&cfg.out_dir, "--out-dir")?;
    let sched = build_schedule(cfg.train_steps, cfg.beta_start, cfg.beta_end, cfg.zero_terminal)?;
    let sampler = SamplerConfig {
        num_inference_steps: cfg.steps,
        prediction_kind: cfg.prediction,
        timestep_selection: cfg.timesteps,
        seed: cfg.seed,
    };
    let video_spec = GuidanceSpec::new(cfg.w_image, cfg.w_text, cfg.strategy).map_err(CliError::usage)?;
    let image_spec = GuidanceSpec::new(0.0, cfg.w_text, Strategy::TextOnly).map_err(CliError::usage)?;
    let mut manifest = RunManifest::new("generate", Some(cfg.seed), &cfg)?;

    let denoiser: Box<dyn Denoiser> = match cfg.denoiser {
        DenoiserChoice::Oracle => Box::new(GaussianOracle::isotropic(cfg.mu, cfg.sigma2).map_err(CliError::usage)?),
        DenoiserChoice::Toy => {
            let path = required(&cfg.checkpoint, "--checkpoint (with --denoiser toy)")?;
            let net = ToyFactorizedNet::load(path)?;
            if net.config().channels != cfg.channels {
                return Err(CliError::usage(format!(
                    "checkpoint has {} channels but --channels is {}",
                    net.config().channels,
                    cfg.channels
                )));
            }
            manifest = manifest.input(path)?;
            Box::new(net)
        }
    };

    std::fs::create_dir_all(out_dir)?;
    let video_path = out_dir.join("video.lat");
    if let Some(past_path) = &cfg.extend {
        let past = LatentVideo::load(past_path)?;
        manifest = manifest.input(past_path)?;
        let (pack, video) = extend_video(&sampler, &sched, denoiser.as_ref(), &past, &video_spec, cfg.frames)?;
        video.save(&video_path)?;
        writeln!(out, "extended {} -> {}", describe(&past), describe(&video))?;
        writeln!(out, "conditioned frames: {}", pack.conditioned_indices().len())?;
    } else {
        let shape = Shape::new(cfg.frames, cfg.channels, cfg.height, cfg.width).map_err(CliError::usage)?;
        // The video stage draws its own starting noise from the next seed.
        let video_sampler = sampler.with_seed(cfg.seed.wrapping_add(1));
        let res =
            generate_factorized(&sampler, &video_sampler, &sched, denoiser.as_ref(), &image_spec, &video_spec, shape)?;
        let image_path = out_dir.join("image.lat");
        res.image.save(&image_path)?;
        res.video.save(&video_path)?;
        manifest = manifest.output(&image_path)?;
        writeln!(out, "image {}", describe(&res.image))?;
        writeln!(out, "video {}", describe(&res.video))?;
    }
    manifest.output(&video_path)?.write(&out_dir.join("run.json"))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpMode {
    Interleave,
    Stitch,
}

impl FromStr for InterpMode {
    type Err = Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "interleave" => Ok(Self::Interleave),
            "stitch" => Ok(Self::Stitch),
            other => Err(Error::InvalidConditioning(format!("unknown mode {other:?}; expected interleave or stitch"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpConfig {
    pub mode: InterpMode,
    pub input: Option<PathBuf>,
    pub second: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mask_out: Option<PathBuf>,
}

impl Default for InterpConfig {
    fn default() -> Self {
        Self { mode: InterpMode::Interleave, input: None, second: None, out: None, mask_out: None }
    }
}

pub(super) fn cmd_interp_mask(a: InterpArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg: InterpConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.mode, a.mode);
    set_opt(&mut cfg.input, a.input);
    set_opt(&mut cfg.second, a.second);
    set_opt(&mut cfg.out, a.out);
    set_opt(&mut cfg.mask_out, a.mask_out);

    let input = required(&cfg.input, "--input")?;
    let out_path = required(&cfg.out, "--out")?;
    let mut manifest = RunManifest::new("interp-mask", None, &cfg)?.input(input)?;
    match cfg.mode {
        InterpMode::Interleave => {
            let pack = interleave_for_interpolation(&LatentVideo::load(input)?)?;
            pack.cond_latent().save(out_path)?;
            manifest = manifest.output(out_path)?;
            if let Some(mask_path) = &cfg.mask_out {
                pack.frame_mask().save(mask_path)?;
                manifest = manifest.output(mask_path)?;
            }
            let idx: Vec<String> = pack.conditioned_indices().iter().map(usize::to_string).collect();
            writeln!(out, "frames: {}", pack.shape().frames)?;
            writeln!(out, "conditioned: {}", idx.join(","))?;
        }
        InterpMode::Stitch => {
            let second = required(&cfg.second, "--second")?;
            manifest = manifest.input(second)?;
            let joined = stitch_interpolated_halves(&LatentVideo::load(input)?, &LatentVideo::load(second)?)?;
            joined.save(out_path)?;
            manifest = manifest.output(out_path)?;
            writeln!(out, "frames: {}", joined.shape().frames)?;
        }
    }
    manifest.write(&manifest_path(out_path))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub votes: Option<PathBuf>,
    pub simulate: bool,
    pub replacement: AgreementClass,
    pub items: usize,
    pub points: usize,
    pub out: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            votes: None,
            simulate: false,
            replacement: AgreementClass::Split,
            items: SIMULATED_ITEMS,
            points: 11,
            out: None,
        }
    }
}

fn format_reasons(map: &std::collections::BTreeMap<ReasonTag, f64>) -> String {
    if map.is_empty() {
        return "-".into();
    }
    map.iter().map(|(t, p)| format!("{t}={p}%")).collect::<Vec<_>>().join(", ")
}

pub(super) fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg: EvalConfig = load_config(a.config.as_deref())?;
    set_opt(&mut cfg.votes, a.votes);
    set(&mut cfg.simulate, a.simulate);
    set(&mut cfg.replacement, a.replacement);
    set(&mut cfg.items, a.items);
    set(&mut cfg.points, a.points);
    set_opt(&mut cfg.out, a.out);

    if cfg.simulate {
        if cfg.points < 2 {
            return Err(CliError::usage("--points must be at least 2"));
        }
        let fractions: Vec<f64> = (0..cfg.points).map(|k| k as f64 / (cfg.points - 1) as f64).collect();
        let curve = simulate_kappa_curve(cfg.items, cfg.replacement, &fractions).map_err(CliError::usage)?;
        let mut text = String::from("fraction_complete,kappa\n");
        for (f, k) in curve {
            text.push_str(&format!("{f},{k}\n"));
        }
        out.write_all(text.as_bytes())?;
        if let Some(path) = &cfg.out {
            std::fs::write(path, &text)?;
            RunManifest::new("eval", None, &cfg)?.output(path)?.write(&manifest_path(path))?;
        }
        return Ok(());
    }

    let votes = required(&cfg.votes, "--votes (or --simulate)")?;
    let records = load_votes(votes)?;
    if records.is_empty() {
        return Err(Error::InvalidVotes("no records".into()).into());
    }
    let s = summarize(&records)?;
    writeln!(out, "items: {}", s.items)?;
    writeln!(out, "win_rate_a: {}", s.win_rate_a)?;
    writeln!(out, "win_rate_b: {}", s.win_rate_b)?;
    writeln!(out, "agreement: split={} partial={} complete={}", s.split, s.partial, s.complete)?;
    match s.kappa {
        Kappa::Value(k) => writeln!(out, "kappa: {k}")?,
        Kappa::Degenerate => writeln!(out, "kappa: undefined (every vote in one category)")?,
    }
    writeln!(out, "reasons_a: {}", format_reasons(&s.reasons_a))?;
    writeln!(out, "reasons_b: {}", format_reasons(&s.reasons_b))?;
    if let Some(path) = &cfg.out {
        let mut text = serde_json::to_string_pretty(&s).map_err(Error::from)?;
        text.push('\n');
        std::fs::write(path, text)?;
        RunManifest::new("eval", None, &cfg)?.input(votes)?.output(path)?.write(&manifest_path(path))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub block: usize,
    pub radius: usize,
    pub clip_min: f64,
    pub aesthetic_min: f64,
    pub motion_min: f64,
    pub window: usize,
}

impl Default for CurateConfig {
    fn default() -> Self {
        let o = CurationOptions::default();
        Self {
            input: None,
            out: None,
            block: o.block,
            radius: o.radius,
            clip_min: o.thresholds.clip_min,
            aesthetic_min: o.thresholds.aesthetic_min,
            motion_min: o.thresholds.motion_min,
            window: o.thresholds.window,
        }
    }
}

pub(super) fn cmd_curate(a: CurateArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg: CurateConfig = load_config(a.config.as_deref())?;
    set_opt(&mut cfg.input, a.input);
    set_opt(&mut cfg.out, a.out);
    set(&mut cfg.block, a.block);
    set(&mut cfg.radius, a.radius);
    set(&mut cfg.clip_min, a.clip_min);
    set(&mut cfg.aesthetic_min, a.aesthetic_min);
    set(&mut cfg.motion_min, a.motion_min);
    set(&mut cfg.window, a.window);

    let input = required(&cfg.input, "--in")?;
    let out_path = required(&cfg.out, "--out")?;
    if cfg.block == 0 || cfg.radius == 0 || cfg.window == 0 {
        return Err(CliError::usage("--block, --radius and --window must be positive"));
    }
    let opts = CurationOptions {
        block: cfg.block,
        radius: cfg.radius,
        thresholds: HqThresholds {
            clip_min: cfg.clip_min,
            aesthetic_min: cfg.aesthetic_min,
            motion_min: cfg.motion_min,
            window: cfg.window,
        },
    };
    let summary = run_curation(input, out_path, &opts, &RawVideoDecoder)?;
    writeln!(out, "{}", serde_json::to_string(&summary).map_err(Error::from)?)?;
    RunManifest::new("curate", None, &cfg)?.input(input)?.output(out_path)?.write(&manifest_path(out_path))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub seed: u64,
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub init: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let net = ToyConfig::default();
        Self {
            steps: 500,
            lr: 0.05,
            batch: 4,
            frames: 4,
            channels: net.channels,
            height: 4,
            width: 4,
            hidden: net.hidden,
            seed: net.seed,
            train_steps: DEFAULT_TRAIN_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            init: None,
            out: None,
        }
    }
}

pub(super) fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg: TrainConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.steps, a.steps);
    set(&mut cfg.lr, a.lr);
    set(&mut cfg.batch, a.batch);
    set(&mut cfg.frames, a.frames);
    set(&mut cfg.channels, a.channels);
    set(&mut cfg.height, a.height);
    set(&mut cfg.width, a.width);
    set(&mut cfg.hidden, a.hidden);
    set(&mut cfg.seed, a.seed);
    set_opt(&mut cfg.init, a.init);
    set_opt(&mut cfg.out, a.out);

    let out_path = required(&cfg.out, "--out")?;
    if cfg.steps == 0 || cfg.batch == 0 {
        return Err(CliError::usage("--steps and --batch must be positive"));
    }
    if !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(CliError::usage("--lr must be finite and non-negative"));
    }
    let sched = build_schedule(cfg.train_steps, cfg.beta_start, cfg.beta_end, true)?;
    let shape = Shape::new(cfg.frames, cfg.channels, cfg.height, cfg.width).map_err(CliError::usage)?;
    let mut manifest = RunManifest::new("train", Some(cfg.seed), &cfg)?;
    let mut net = match &cfg.init {
        Some(p) => {
            let net = ToyFactorizedNet::load(p)?;
            if net.config().channels != cfg.channels {
                return Err(CliError::usage(format!("checkpoint has {} channels", net.config().channels)));
            }
            manifest = manifest.input(p)?;
            net
        }
        None => ToyFactorizedNet::new(ToyConfig { channels: cfg.channels, hidden: cfg.hidden, seed: cfg.seed })
            .map_err(CliError::usage)?,
    };
    let data = synthetic_static_videos(shape, cfg.batch, cfg.seed);

    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let step_seed = cfg.seed.wrapping_add(1).wrapping_add(net.steps());
        let (next, loss) = toy_train_step(&net, &data, &sched, step_seed, cfg.lr)?;
        net = next;
        losses.push(loss);
    }

    net.save(out_path)?;
    let loss_path = {
        let mut s = out_path.as_os_str().to_owned();
        s.push(".loss.csv");
        PathBuf::from(s)
    };
    let mut text = String::from("step,loss\n");
    let first_step = net.steps() - cfg.steps as u64;
    for (i, l) in losses.iter().enumerate() {
        text.push_str(&format!("{},{l}\n", first_step + i as u64 + 1));
    }
    std::fs::write(&loss_path, text)?;

    let k = losses.len().min(10);
    let head = losses[..k].iter().sum::<f64>() / k as f64;
    let tail = losses[losses.len() - k..].iter().sum::<f64>() / k as f64;
    writeln!(out, "steps: {}", net.steps())?;
    writeln!(out, "loss_first{k}: {head}")?;
    writeln!(out, "loss_last{k}: {tail}")?;
    manifest.output(out_path)?.output(&loss_path)?.write(&manifest_path(out_path))?;
    Ok(())
}
