//! `facefit` command line: synthetic models and corpora, rendering, fitting,
//! corrective training, gradient checks and reports.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use facefit::fitter::{
    fit_image, synth_corpus, train_correctives, CorpusConfig, FitResult, Schedule, Stage, TrainLogEntry,
};
use facefit::gradients::{gradcheck, GradCheckConfig, ParamVector};
use facefit::io::{
    load_corpus, load_model, read_json, save_model, write_corpus, write_fit_report, write_json, write_train_report,
    RunConfig,
};
use facefit::landmarks::LandmarkSet;
use facefit::model::{synth_model, SynthConfig, Variant};
use facefit::render::{rasterize_preview, CameraIntrinsics, Image, Level};

#[derive(Parser)]
#[command(name = "facefit", version, about = "Multi-level face model fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Linear,
    Onenl,
    Twonl,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Linear => Variant::Linear,
            VariantArg::Onenl => Variant::OneNl,
            VariantArg::Twonl => Variant::TwoNl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    All,
    Pretrain,
    Finetune,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Base,
    Final,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-level model archive.
    SynthModel {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        n_vertices: usize,
        /// m_s,m_e,m_r,C
        #[arg(long, default_value = "8,4,8,6")]
        dims: String,
        #[arg(long, value_enum, default_value_t = VariantArg::Linear)]
        variant: VariantArg,
    },
    /// Render a synthetic corpus (images, landmarks, ground truth) from a model.
    SynthCorpus {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        /// Leave out the geometry bump outside the base span.
        #[arg(long)]
        no_bump: bool,
        /// Leave out the reflectance patch outside the base span.
        #[arg(long)]
        no_patch: bool,
    },
    /// Rasterize a model instance to an image.
    Render {
        #[arg(long)]
        model: PathBuf,
        /// Parameter JSON, or a fit result holding `params`.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, value_enum, default_value_t = LevelArg::Final)]
        level: LevelArg,
        /// Image drawn behind the face (flat gray otherwise); sets the size.
        #[arg(long)]
        background: Option<PathBuf>,
    },
    /// Fit the model to one image.
    Fit {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        landmarks: Option<PathBuf>,
        /// Result JSON path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = StageArg::All)]
        stage: StageArg,
        /// JSON run configuration (schedule, weights, intrinsics).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Learn the corrective maps over a corpus.
    Train {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = VariantArg::Linear)]
        variant: VariantArg,
        /// Corrective code dimension (0 disables the correctives).
        #[arg(long = "C", alias = "c")]
        c: Option<usize>,
        /// Hidden width of the non-linear variants (default: C).
        #[arg(long, default_value_t = 0)]
        hidden: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pretrain_epochs: Option<usize>,
        #[arg(long)]
        finetune_epochs: Option<usize>,
    },
    /// Compare analytic and finite-difference gradients on a random instance.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        n_vertices: usize,
        /// m_s,m_e,m_r,C
        #[arg(long, default_value = "8,4,8,6")]
        dims: String,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Relative finite-difference step.
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, value_enum, default_value_t = VariantArg::Linear)]
        variant: VariantArg,
        /// Also write the JSON report here (it always goes to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plots and tables for a fit result or a training run.
    Report {
        /// A fit result JSON.
        #[arg(long, conflicts_with = "train")]
        result: Option<PathBuf>,
        /// A training output directory.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// With --image, adds the preview strip to a fit report.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

/// Training summary stored next to the trained archive.
#[derive(serde::Serialize, serde::Deserialize)]
struct TrainSummary {
    variant: String,
    c: usize,
    mean_error_base: f64,
    mean_error_final: f64,
    errors_base: Vec<Option<f64>>,
    errors_final: Vec<Option<f64>>,
    skipped: Vec<usize>,
    log: Vec<TrainLogEntry>,
}

fn parse_dims(text: &str) -> Result<[usize; 4]> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("--dims '{text}': expected four integers m_s,m_e,m_r,C"))?;
    match parts.as_slice() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        _ => bail!("--dims '{text}': expected four integers m_s,m_e,m_r,C"),
    }
}

fn synth_config(seed: u64, n_vertices: usize, dims: &str, variant: VariantArg) -> Result<SynthConfig> {
    let [m_s, m_e, m_r, c] = parse_dims(dims)?;
    Ok(SynthConfig {
        seed,
        n_vertices,
        m_s,
        m_e,
        m_r,
        c,
        variant: variant.into(),
        hidden_dim: 0,
    })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn pick(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| config.clone())
        .with_context(|| format!("--{name} is required (or set `{name}` in the config)"))
}

fn load_params(path: &Path) -> Result<ParamVector> {
    let value: serde_json::Value = read_json(path)?;
    let value = match value.get("params") {
        Some(p) => p.clone(),
        None => value,
    };
    serde_json::from_value(value).with_context(|| format!("{}: not a parameter vector", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::SynthModel {
            out,
            seed,
            n_vertices,
            dims,
            variant,
        } => {
            let model = synth_model(&synth_config(seed, n_vertices, &dims, variant)?)?;
            save_model(&model, &out)?;
            info!("wrote model with {} vertices to {}", model.vertex_count(), out.display());
        }
        Command::SynthCorpus {
            model,
            out,
            count,
            seed,
            width,
            height,
            no_bump,
            no_patch,
        } => {
            let m = load_model(&model)?;
            let mut cfg = CorpusConfig {
                seed,
                count,
                width,
                height,
                ..CorpusConfig::default()
            };
            if no_bump {
                cfg.bump = None;
            }
            if no_patch {
                cfg.patch = None;
            }
            let samples = synth_corpus(&m, &cfg)?;
            write_corpus(&out, &cfg, m.seed, &samples)?;
            info!("wrote {count} images to {}", out.display());
        }
        Command::Render {
            model,
            params,
            out,
            width,
            height,
            level,
            background,
        } => {
            let m = load_model(&model)?;
            let p = load_params(&params)?;
            let bg = background.map(|b| Image::load(&b)).transpose()?;
            let (w, h) = bg.as_ref().map_or((width, height), |b| (b.width(), b.height()));
            let k = CameraIntrinsics::default_for(w, h);
            let level = match level {
                LevelArg::Base => Level::Base,
                LevelArg::Final => Level::Final,
            };
            rasterize_preview(&m, &p, &k, level, bg.as_ref())?.save(&out)?;
        }
        Command::Fit {
            model,
            image,
            landmarks,
            out,
            stage,
            config,
            seed,
        } => {
            let rc = load_config(config.as_deref())?;
            let m = load_model(&pick(model, &rc.model, "model")?)?;
            let img = Image::load(&image)?;
            let k = rc.intrinsics(img.width(), img.height())?;
            let lms = match landmarks {
                Some(p) => Some(LandmarkSet::load(&p, Some(&m.topology.landmark_anchors))?),
                None => {
                    warn!("no landmarks given: fitting without the sparse landmark term");
                    None
                }
            };
            let mut schedule = Schedule::default();
            rc.apply(&mut schedule)?;
            if let Some(s) = seed {
                schedule.seed = s;
            }
            let schedule = match stage {
                StageArg::All => schedule,
                StageArg::Pretrain => schedule.only(Stage::Pretrain),
                StageArg::Finetune => schedule.only(Stage::Finetune),
            };
            let result = fit_image(&m, &img, lms.as_ref(), &k, &schedule)?;
            write_json(
                &out,
                &serde_json::json!({
                    "params": &result.params,
                    "energy": result.trajectory.last(),
                    "photometric_error_base": result.photometric_error_base,
                    "photometric_error_final": result.photometric_error_final,
                    "intrinsics": k,
                    "result": &result,
                }),
            )?;
            info!(
                "photometric error base {:.4} final {:.4}",
                result.photometric_error_base, result.photometric_error_final
            );
        }
        Command::Train {
            model,
            corpus,
            out,
            variant,
            c,
            hidden,
            config,
            seed,
            pretrain_epochs,
            finetune_epochs,
        } => {
            let rc = load_config(config.as_deref())?;
            let m = load_model(&pick(model, &rc.model, "model")?)?;
            let corpus = load_corpus(
                &pick(corpus, &rc.corpus, "corpus")?,
                Some(&m.topology.landmark_anchors),
            )?;
            let mut schedule = Schedule::default();
            rc.apply(&mut schedule)?;
            if let Some(s) = seed {
                schedule.seed = s;
            }
            if let Some(n) = pretrain_epochs {
                schedule.pretrain.iterations = n;
            }
            if let Some(n) = finetune_epochs {
                schedule.finetune.iterations = n;
            }
            let c = c.unwrap_or_else(|| m.corrective_dim());
            let m = m.with_correctives(variant.into(), c, hidden, schedule.seed)?;
            let k = rc.intrinsics(corpus.manifest.intrinsics.width, corpus.manifest.intrinsics.height)?;
            let k = if rc.intrinsics.focal.is_none() && rc.intrinsics.cx.is_none() && rc.intrinsics.cy.is_none() {
                corpus.manifest.intrinsics
            } else {
                k
            };
            let result = train_correctives(&m, &corpus.items, &k, &schedule)?;
            save_model(&result.model, &out.join("model"))?;
            for (i, p) in result.params.iter().enumerate() {
                write_json(&out.join("params").join(format!("{i:05}.json")), p)?;
            }
            let summary = TrainSummary {
                variant: Variant::from(variant).name().into(),
                c,
                mean_error_base: result.mean_error_base(),
                mean_error_final: result.mean_error_final(),
                errors_base: result.errors_base.clone(),
                errors_final: result.errors_final.clone(),
                skipped: result.skipped.clone(),
                log: result.log.clone(),
            };
            write_json(&out.join("train.json"), &summary)?;
            write_train_report(&out, &result.log, &result.errors_base, &result.errors_final, 20)?;
            println!(
                "mean photometric error: base {:.5} final {:.5} (ratio {:.3})",
                summary.mean_error_base,
                summary.mean_error_final,
                summary.mean_error_final / summary.mean_error_base
            );
        }
        Command::Gradcheck {
            seed,
            n_vertices,
            dims,
            tol,
            h,
            variant,
            out,
        } => {
            let mut cfg = GradCheckConfig {
                seed,
                model: synth_config(seed, n_vertices, &dims, variant)?,
                tol,
                ..GradCheckConfig::default()
            };
            if let Some(h) = h {
                cfg.step_relative = h;
                cfg.step_absolute = h;
            }
            let report = gradcheck(&cfg)?;
            // a closed stdout (e.g. piped into `head`) is not an error
            let mut stdout = std::io::stdout().lock();
            let _ = write!(stdout, "{}", report.table());
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?);
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
            if !report.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report {
            result,
            train,
            out,
            model,
            image,
            bins,
        } => match (result, train) {
            (Some(path), None) => {
                let value: serde_json::Value = read_json(&path)?;
                let inner = value.get("result").cloned().unwrap_or(value.clone());
                let fit: FitResult = serde_json::from_value(inner)
                    .with_context(|| format!("{}: not a fit result", path.display()))?;
                let preview = match (model, image) {
                    (Some(m), Some(i)) => {
                        let m = load_model(&m)?;
                        let img = Image::load(&i)?;
                        let k = match value.get("intrinsics") {
                            Some(k) => serde_json::from_value(k.clone())?,
                            None => CameraIntrinsics::default_for(img.width(), img.height()),
                        };
                        Some((m, img, k))
                    }
                    (None, None) => None,
                    _ => bail!("--model and --image go together"),
                };
                write_fit_report(&out, &fit, preview.as_ref().map(|(m, i, k)| (m, i, k)))?;
            }
            (None, Some(dir)) => {
                let s: TrainSummary = read_json(&dir.join("train.json"))?;
                write_train_report(&out, &s.log, &s.errors_base, &s.errors_final, bins)?;
            }
            _ => bail!("give exactly one of --result or --train"),
        },
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            // library errors already embed their source in the message
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
