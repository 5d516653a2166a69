use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fishcount_core::toy::{run_ablation, AblationSetting};
use fishcount_core::{evaluate, read_predictions, Config, GroundTruthFile, MatchThreshold, MetricsReport, CONFIG_ENV};
use serde::Serialize;

use crate::output::{ensure_dir, write_json, write_jsonl, write_table};
use crate::score::{read_inputs, score_all, OutputLine};
use crate::serve::{serve_stdio, serve_tcp};

#[derive(Debug, Parser)]
#[command(
    name = "fishcount",
    version,
    about = "Detect-then-count rewards, metrics and toy GRPO training"
)]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Keypoint match radius: pixels ("12px") or a fraction of the image diagonal ("0.05", "5%").
    #[arg(long, global = true)]
    pub threshold: Option<MatchThreshold>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score JSONL responses ({id, image_id?, response_text}) against ground truth.
    Score {
        input: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Compute detection, segmentation and counting metrics.
    Eval {
        predictions: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Train the toy policy and run the reward ablation.
    TrainToy {
        /// Ablation settings to compare, by preset name.
        #[arg(long, value_delimiter = ',', default_value = "count_only,detect_only,combined")]
        ablation: Vec<String>,
        /// Only write the training curve.
        #[arg(long)]
        skip_ablation: bool,
    },
    /// Serve line-delimited JSON scoring requests on stdio or TCP.
    Serve {
        /// Listen address such as 127.0.0.1:7878; stdio when absent.
        #[arg(long)]
        listen: Option<String>,
    },
}

/// Exit status a command asks for once it has finished without a hard error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// Some records failed; output was still written.
    PartialFailure,
}

impl Cli {
    pub fn config(&self) -> Result<Config> {
        let mut cfg = Config::load(self.config.as_deref())?;
        if let Some(t) = self.threshold {
            cfg.reward.match_threshold = t;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = cli.config()?;
    match &cli.command {
        Command::Score { input, gt } => cmd_score(input, gt, &cfg, &cli.out),
        Command::Eval { predictions, gt } => cmd_eval(predictions, gt, &cli.out).map(|_| Outcome::Ok),
        Command::TrainToy {
            ablation,
            skip_ablation,
        } => {
            let settings = if *skip_ablation { Vec::new() } else { presets(ablation)? };
            cmd_train_toy(&cfg, &settings, &cli.out).map(|_| Outcome::Ok)
        }
        Command::Serve { listen } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                match listen {
                    Some(addr) => {
                        let listener = tokio::net::TcpListener::bind(addr)
                            .await
                            .with_context(|| format!("binding {addr}"))?;
                        eprintln!("listening on {}", listener.local_addr()?);
                        serve_tcp(listener, cfg.reward).await?;
                    }
                    None => {
                        serve_stdio(cfg.reward).await?;
                    }
                }
                Ok(Outcome::Ok)
            })
        }
    }
}

fn presets(names: &[String]) -> Result<Vec<AblationSetting>> {
    names
        .iter()
        .map(|n| match n.as_str() {
            "count_only" => Ok(AblationSetting::count_only()),
            "detect_only" => Ok(AblationSetting::detect_only()),
            "combined" => Ok(AblationSetting::combined()),
            other => bail!("unknown ablation setting {other:?} (expected count_only, detect_only or combined)"),
        })
        .collect()
}

pub fn cmd_score(input: &Path, gt: &Path, cfg: &Config, out: &Path) -> Result<Outcome> {
    let gt = GroundTruthFile::read(gt)?;
    let inputs = read_inputs(input)?;
    let (lines, summary) = score_all(&inputs, &gt, &cfg.reward);
    ensure_dir(out)?;
    write_jsonl(&out.join("scores.jsonl"), &lines)?;
    write_json(&out.join("score_summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    for line in &lines {
        if let OutputLine::Error(e) = line {
            eprintln!("{}: {}", e.id.as_deref().unwrap_or("?"), e.error);
        }
    }
    Ok(if summary.n_errors > 0 {
        Outcome::PartialFailure
    } else {
        Outcome::Ok
    })
}

/// Flat view of a report for CSV; absent metrics become empty cells.
#[derive(Debug, Serialize)]
struct MetricsRow {
    ap_50_95: Option<f64>,
    ar_50_95: Option<f64>,
    fg_iou: Option<f64>,
    bg_iou: Option<f64>,
    miou: Option<f64>,
    mae: f64,
    match_rate: f64,
    game: f64,
    game_l1: f64,
    game_l2: f64,
    game_l3: f64,
    game_l4: f64,
    alignment_rate: Option<f64>,
    n_images: usize,
    n_unparseable: usize,
    n_missing: usize,
}

impl From<&MetricsReport> for MetricsRow {
    fn from(r: &MetricsReport) -> Self {
        let [game_l1, game_l2, game_l3, game_l4] = r.game_per_level;
        Self {
            ap_50_95: r.ap_50_95,
            ar_50_95: r.ar_50_95,
            fg_iou: r.fg_iou,
            bg_iou: r.bg_iou,
            miou: r.miou,
            mae: r.mae,
            match_rate: r.match_rate,
            game: r.game,
            game_l1,
            game_l2,
            game_l3,
            game_l4,
            alignment_rate: r.alignment_rate,
            n_images: r.n_images,
            n_unparseable: r.n_unparseable,
            n_missing: r.n_missing,
        }
    }
}

pub fn cmd_eval(predictions: &Path, gt_path: &Path, out: &Path) -> Result<MetricsReport> {
    let gt = GroundTruthFile::read(gt_path)?;
    let preds = read_predictions(predictions)?;
    let gt_dir = gt_path.parent().unwrap_or(Path::new("."));
    let report = evaluate(&gt, gt_dir, &preds)?;
    ensure_dir(out)?;
    write_json(&out.join("metrics.json"), &report)?;
    crate::output::write_csv(&out.join("metrics.csv"), &[MetricsRow::from(&report)])?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(report)
}

pub fn cmd_train_toy(cfg: &Config, settings: &[AblationSetting], out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let outcome = cfg.train_toy()?;
    write_table(out, "train_curve", &outcome.records)?;
    write_json(&out.join("final_eval.json"), &outcome.final_eval)?;
    if outcome.projection_saturated() {
        eprintln!("warning: the logit clamp was active on every update; lower learning_rate");
    }
    eprintln!(
        "trained {} epochs: alignment {:.3}, GAME {:.3}, match rate {:.3}",
        cfg.train.epochs, outcome.final_eval.alignment_rate, outcome.final_eval.game, outcome.final_eval.match_rate
    );
    if !settings.is_empty() {
        let rows = run_ablation(settings, cfg.train.seed, cfg)?;
        write_table(out, "ablation", &rows)?;
        for r in &rows {
            eprintln!(
                "{:<12} GAME {:.3}  MAE {:.3}  match {:.3}  alignment {:.3}  matched {:.3}",
                r.setting, r.game, r.mae, r.match_rate, r.alignment_rate, r.matched_fraction
            );
        }
    }
    Ok(())
}
