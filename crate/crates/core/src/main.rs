use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use memscope::attacks::AttackKind;
use memscope::geometry::{class_centroids, Grouping};
use memscope::harness::{
    compare_defenses, exclude_and_retrain, export_report, export_run, parse_reweight, prepare, read_report,
    run_experiment, run_with_model, write_invalid_marker, DatasetSource, DefenseVariant, ExperimentConfig,
    ReportDocument,
};
use memscope::nn::{evaluate, holdout_validation, read_checkpoint, train, write_checkpoint};
use memscope::{Error, Result};

#[derive(Parser)]
#[command(name = "memscope", version, about = "Membership-inference leakage experiments on small MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its checkpoint, history and centroids.
    Train(Common),
    /// Run the attacks (training first unless --model is given) and write a report.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Attack this checkpoint instead of training.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare training-time defenses; each --defense is one variant.
    Compare(Common),
    /// Drop the vulnerable members, retrain, and report before/after.
    ExcludeRetrain {
        #[command(flatten)]
        common: Common,
        /// FPR level defining the vulnerable set (default: first --fpr level).
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Validate a report and print its summary tables.
    Report {
        /// report.json, or a directory containing one.
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for data generation, split and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `synthetic` or `csv:<path>`.
    #[arg(long)]
    dataset: Option<String>,
    /// Comma-separated attack kinds.
    #[arg(long, value_delimiter = ',')]
    attacks: Option<Vec<String>>,
    /// Comma-separated FPR levels.
    #[arg(long, value_delimiter = ',')]
    fpr: Option<Vec<f64>>,
    /// l2=<λ> | dropout=<r> | label-smooth=<ε> | early-stop=<patience> | dp=<C>,<σ>; join with `+`.
    #[arg(long)]
    defense: Vec<String>,
    /// Enable logit reweighting: [floor=<f>][,no-preserve-argmax].
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    reweight: Option<String>,
    /// Disable logit reweighting.
    #[arg(long, conflicts_with = "reweight")]
    no_reweight: bool,
    /// Override the number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

impl Common {
    fn build(&self, apply_defenses: bool) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = parse_dataset(d, &cfg.dataset)?;
        }
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(kinds) = &self.attacks {
            cfg.attacks = kinds.iter().map(|k| k.parse()).collect::<Result<Vec<AttackKind>>>()?;
        }
        if let Some(fpr) = &self.fpr {
            cfg.fpr_levels = fpr.clone();
        }
        if let Some(epochs) = self.epochs {
            cfg.train.epochs = epochs;
            cfg.snapshot_epochs.retain(|&e| e <= epochs);
        }
        if apply_defenses {
            for d in &self.defense {
                cfg.train = DefenseVariant::parse(d)?.apply(&cfg.train);
            }
        }
        if let Some(rw) = &self.reweight {
            cfg.reweight = Some(parse_reweight(rw)?);
        }
        if self.no_reweight {
            cfg.reweight = None;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("memscope-out"))
    }
}

fn parse_dataset(arg: &str, current: &DatasetSource) -> Result<DatasetSource> {
    if arg == "synthetic" {
        return Ok(match current {
            DatasetSource::Synthetic(_) => current.clone(),
            DatasetSource::Csv { .. } => ExperimentConfig::default().dataset,
        });
    }
    match arg.strip_prefix("csv:") {
        Some(path) => Ok(DatasetSource::Csv {
            path: PathBuf::from(path),
            label_noise_fraction: 0.0,
            noise_seed: 0,
        }),
        None => Err(Error::Config(format!("--dataset must be `synthetic` or `csv:<path>`, got `{arg}`"))),
    }
}

fn print_summary(report: &ReportDocument) {
    println!(
        "train acc {:.2}%  test acc {:.2}%  train time {:.2}s",
        100.0 * report.train_acc,
        100.0 * report.test_acc,
        report.timing.train_seconds
    );
    println!("{:<14} {:>9} {:>9}  TPR@FPR", "attack", "AUC(%)", "Adv(%)");
    for a in &report.attacks {
        let tprs: Vec<String> = a
            .tpr_at_fpr
            .iter()
            .map(|(k, v)| format!("{k}:{:.2}%", 100.0 * v))
            .collect();
        println!(
            "{:<14} {:>9.2} {:>9.2}  {}",
            a.kind.as_str(),
            100.0 * a.auc,
            100.0 * a.advantage,
            tprs.join(" ")
        );
    }
    println!(
        "yeom fixed threshold: tpr {:.2}% fpr {:.2}% adv {:.2}%",
        100.0 * report.yeom.tpr,
        100.0 * report.yeom.fpr,
        100.0 * report.yeom.advantage
    );
    for o in &report.outliers {
        println!(
            "vulnerable[{} @ {}]: {} members ({} planted-noisy), outlier mean {} vs members {:.4}, welch p {}",
            o.kind,
            o.fpr,
            o.vulnerable,
            o.vulnerable_noisy,
            o.mean_outlier_vulnerable.map_or("-".into(), |v| format!("{v:.4}")),
            o.mean_outlier_members,
            o.welch_p.map_or("-".into(), |p| format!("{p:.3e}"))
        );
    }
    if let Some(d) = &report.defense {
        println!("logit reweighting (floor {}, preserve argmax {}):", d.weight_floor, d.preserve_argmax);
        for (label, row) in [("before", &d.before), ("after", &d.after)] {
            let attacks: Vec<String> = row
                .attacks
                .iter()
                .map(|a| format!("{} {:.2}/{:.2}", a.kind, 100.0 * a.auc, 100.0 * a.advantage))
                .collect();
            println!(
                "  {label:<6} train {:.2}% test {:.2}%  {}",
                100.0 * row.train_acc,
                100.0 * row.test_acc,
                attacks.join("  ")
            );
        }
        if let Some(s) = report.timing.defense_overhead_seconds {
            println!("  inference overhead {s:.4}s");
        }
    }
}

fn with_marker<T>(dir: &Path, result: Result<T>) -> Result<T> {
    if let Err(e) = &result {
        let _ = write_invalid_marker(dir, e);
    }
    result
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.build(true)?;
            let dir = common.out_dir(&cfg);
            let prepared = prepare(&cfg)?;
            let (model, history) = with_marker(&dir, train(&prepared.dataset, &prepared.split, &cfg.train))?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            write_checkpoint(&model, &dir.join("model.ckpt"))?;
            let write = |name: &str, body: String| {
                let p = dir.join(name);
                std::fs::write(&p, body).map_err(|e| Error::Io { path: p, source: e })
            };
            write("history.csv", history.to_csv())?;
            write("split.json", serde_json::to_string_pretty(&prepared.split)?)?;
            write("config.json", serde_json::to_string_pretty(&cfg)?)?;
            let (members, _) = holdout_validation(&prepared.split.member_indices, &cfg.train)?;
            let records = evaluate(&model, &prepared.dataset, &members, true)?.records;
            let tables: Vec<_> = [Grouping::TrueLabel, Grouping::Predicted]
                .into_iter()
                .filter_map(|g| class_centroids(&records, &model, g).ok())
                .collect();
            write("centroids.json", serde_json::to_string_pretty(&tables)?)?;
            if let Some(last) = history.epochs.last() {
                println!(
                    "epoch {}: train acc {:.2}%  test acc {}",
                    last.epoch,
                    100.0 * last.train_acc,
                    last.test_acc.map_or("-".into(), |a| format!("{:.2}%", 100.0 * a))
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Attack { common, model } => {
            let cfg = common.build(true)?;
            let dir = common.out_dir(&cfg);
            let result = match model {
                Some(path) => run_with_model(&cfg, read_checkpoint(&path)?),
                None => run_experiment(&cfg),
            };
            let run = with_marker(&dir, result)?;
            let files = export_run(&run, &dir)?;
            print_summary(&run.report);
            println!("wrote {} files to {}", files.len(), dir.display());
        }
        Command::Compare(common) => {
            let cfg = common.build(false)?;
            let dir = common.out_dir(&cfg);
            let mut variants = vec![DefenseVariant::original()];
            for d in &common.defense {
                variants.push(DefenseVariant::parse(d)?);
            }
            let table = with_marker(&dir, compare_defenses(&cfg, &variants))?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            let p = dir.join("compare.csv");
            std::fs::write(&p, table.to_csv()).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            let p = dir.join("compare.json");
            std::fs::write(&p, serde_json::to_string_pretty(&table)?).map_err(|e| Error::Io { path: p, source: e })?;
            println!("attack: {}", table.attack);
            print!("{}", table.to_text());
        }
        Command::ExcludeRetrain { common, alpha } => {
            let cfg = common.build(true)?;
            let dir = common.out_dir(&cfg);
            let alpha = alpha.or_else(|| cfg.fpr_levels.first().copied()).unwrap_or(0.01);
            let outcome = with_marker(&dir, exclude_and_retrain(&cfg, alpha))?;
            export_report(&outcome.before, &dir.join("before"))?;
            println!("== before");
            print_summary(&outcome.before);
            export_report(&outcome.after, &dir.join("after"))?;
            println!("== after");
            print_summary(&outcome.after);
            let s = &outcome.summary;
            if let Some(n) = &s.notice {
                println!("{n}");
            }
            println!(
                "excluded {} members ({} planted-noisy); {} newly vulnerable after retraining",
                s.excluded.len(),
                s.excluded_noisy,
                s.new_vulnerable.len()
            );
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            let p = dir.join("exclusion.json");
            std::fs::write(&p, serde_json::to_string_pretty(s)?).map_err(|e| Error::Io { path: p, source: e })?;
        }
        Command::Report { input } => {
            let path = if input.is_dir() { input.join("report.json") } else { input };
            let report = read_report(&path)?;
            print_summary(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
