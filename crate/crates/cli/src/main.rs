use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use anyway_meta::assignment::EnsembleMethod;
use anyway_meta::harness::{self, ExperimentConfig, GradcheckOptions, SWEEP_REPEATS};

/// Any-way meta-learning experiments on synthetic or file-backed features.
#[derive(Parser)]
#[command(name = "anyway", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set width=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct OutArgs {
    /// Run directory. Defaults to `$ANYWAY_OUT_DIR/<command>` or `runs/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train a model and write best/final checkpoints and the validation curve.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluate a checkpoint on the test classes.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Evaluate a checkpoint over assignment-set repeats × ensemble methods.
    SweepEnsemble {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_REPEATS.to_vec())]
        repeats: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = EnsembleMethod::ALL.to_vec())]
        methods: Vec<EnsembleMethod>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train one model per head width and seed, then evaluate each.
    AblateO {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![10, 20, 30])]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compare every analytic gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Encoder layer widths, input first.
        #[arg(long, value_delimiter = ',', default_values_t = GradcheckOptions::default().dims)]
        dims: Vec<usize>,
        #[arg(long, default_value_t = GradcheckOptions::default().width)]
        width: usize,
        #[arg(long, default_value_t = GradcheckOptions::default().cardinality)]
        cardinality: usize,
        #[arg(long, default_value_t = GradcheckOptions::default().nets)]
        nets: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train two configs over several seeds and report paired accuracy deltas (B − A).
    Compare {
        #[arg(long)]
        config_a: Option<PathBuf>,
        #[arg(long = "set-a", value_name = "KEY=VALUE")]
        set_a: Vec<String>,
        #[arg(long)]
        config_b: Option<PathBuf>,
        #[arg(long = "set-b", value_name = "KEY=VALUE")]
        set_b: Vec<String>,
        /// Override applied to both configs.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        shared: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write the configured synthetic dataset as a feature file.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        output: PathBuf,
    },
}

fn load_config(path: Option<&Path>, overrides: &[&[String]]) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("in config {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    for set in overrides {
        cfg.apply_overrides(set)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(out: OutArgs, command: &str) -> PathBuf {
    harness::resolve_out_dir(out.out, command)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = load_config(config.config.as_deref(), &[&config.overrides])?;
            let dir = out_dir(out, "train");
            let summary = harness::cmd_train(&cfg, &dir)?;
            let run = &summary.run;
            println!("best step {} (validation sum {:.4})", run.best.step, run.best_val_sum);
            if let Some(p) = run.curve.iter().find(|p| p.step == run.best.step) {
                for (n, acc) in &p.val_acc {
                    println!("  N={n}: {acc:.4}");
                }
            }
            if let Some(step) = run.stall_step {
                eprintln!("warning: validation accuracy sat at chance through step {step}");
            }
            println!("wrote {}", dir.display());
        }
        Command::Eval { config, checkpoint, out } => {
            let cfg = load_config(config.config.as_deref(), &[&config.overrides])?;
            let dir = out_dir(out, "eval");
            let rows = harness::cmd_eval(&cfg, &checkpoint, &dir)?;
            for r in &rows {
                println!(
                    "N={} {} J={}: {:.4} ± {:.4} (95% ±{:.4})",
                    r.n, r.method, r.j_repeats, r.acc_mean, r.acc_std, r.ci95
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::SweepEnsemble { config, checkpoint, repeats, methods, out } => {
            let cfg = load_config(config.config.as_deref(), &[&config.overrides])?;
            let dir = out_dir(out, "sweep-ensemble");
            let rows = harness::cmd_sweep_ensemble(&cfg, &checkpoint, &repeats, &methods, &dir)?;
            for r in &rows {
                println!("N={} {} J={}: {:.4}", r.n, r.method, r.j_repeats, r.acc_mean);
            }
            println!("wrote {}", dir.display());
        }
        Command::AblateO { config, widths, seeds, out } => {
            let cfg = load_config(config.config.as_deref(), &[&config.overrides])?;
            let dir = out_dir(out, "ablate-o");
            let rows = harness::cmd_ablate_o(&cfg, &widths, seeds, &dir)?;
            for r in &rows {
                println!("O={} seed={} N={}: {:.4}", r.width, r.seed, r.n, r.acc_mean);
            }
            println!("wrote {}", dir.display());
        }
        Command::Gradcheck { seed, dims, width, cardinality, nets, out } => {
            let opts = GradcheckOptions {
                seed,
                dims,
                width,
                cardinality,
                nets,
                corrupt: false,
            };
            let dir = out_dir(out, "gradcheck");
            let report = harness::cmd_gradcheck(&opts, &dir)?;
            for r in &report.rows {
                println!(
                    "{} {:<16} {:<18} {:.3e}",
                    if r.passed { "ok  " } else { "FAIL" },
                    r.check,
                    r.block,
                    r.max_rel_error
                );
            }
            println!("wrote {}", dir.display());
            return Ok(report.passed());
        }
        Command::Compare { config_a, set_a, config_b, set_b, shared, seeds, out } => {
            let a = load_config(config_a.as_deref(), &[&shared, &set_a])?;
            let b = load_config(config_b.as_deref(), &[&shared, &set_b])?;
            if seeds < 3 {
                log::warn!("paired comparisons are usually reported over at least 3 seeds");
            }
            let dir = out_dir(out, "compare");
            let rows = harness::cmd_compare(&a, &b, seeds, &dir)?;
            for r in &rows {
                println!(
                    "N={}: A {:.4} ± {:.4}, B {:.4} ± {:.4}, delta {:+.4} ± {:.4}",
                    r.n, r.acc_a_mean, r.acc_a_std, r.acc_b_mean, r.acc_b_std, r.delta_mean, r.delta_std
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::GenData { config, output } => {
            let cfg = load_config(config.config.as_deref(), &[&config.overrides])?;
            if cfg.dataset != harness::DataSource::Synth {
                bail!("gen-data writes synthetic data; set dataset = synth");
            }
            let ds = harness::cmd_gen_data(&cfg, &output)?;
            println!(
                "wrote {} classes × {} dims to {}",
                ds.class_count(),
                ds.feature_dim(),
                output.display()
            );
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
