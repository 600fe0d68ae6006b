use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use icot_core::cotrain::Executor;
use icot_core::oodgate::OodMethod;
use icot_core::report::{
    load_summary, run_experiment, EvalResult, GzslSetting, Pipeline, RunConfig,
};
use icot_core::synthbench::{generate, reference_benchmark, SynthSpec};

#[derive(Parser, Debug)]
#[command(
    name = "icot",
    version,
    about = "Iterative co-training for zero-shot learning"
)]
struct Cli {
    /// Worker threads for training learners in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset. `--spec reference` uses the frozen benchmark.
    GenData {
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transductive zero-shot co-training.
    Zsl {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generalized zero-shot classification.
    Gzsl {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ["1", "2", "plain"])]
        setting: Option<String>,
    },
    /// Seen/unseen detection with TNR@FNR evaluation.
    Ood {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Ablation configured in the file.
    Ablation {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pretty-print a run's summary.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Gradient checks and metric oracles.
    Selftest,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Semantic,
    Iter,
    MaxSoftmax,
}

impl From<MethodArg> for OodMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Semantic => OodMethod::Semantic,
            MethodArg::Iter => OodMethod::Iter,
            MethodArg::MaxSoftmax => OodMethod::MaxSoftmax,
        }
    }
}

/// Failure classes that map to distinct exit codes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn classify(e: icot_core::Error) -> Failure {
    if e.is_config() {
        Failure::Config(e.into())
    } else {
        Failure::Runtime(e.into())
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(|e| Failure::Config(e.into()))
}

fn run_config(cfg: RunConfig, threads: usize) -> Result<(), Failure> {
    cfg.validate().map_err(classify)?;
    let exec = Executor::with_threads(threads).map_err(classify)?;
    let result = run_experiment(&cfg, &exec).map_err(classify)?;
    print_summary(&result);
    println!("artifacts: {}", cfg.output_dir().display());
    Ok(())
}

fn print_summary(r: &EvalResult) {
    println!(
        "{} [{}] seed {} ({})",
        r.name, r.pipeline, r.seed, r.version
    );
    println!("config {}", r.config_fingerprint);
    if let Some(a) = r.acc {
        println!("fused unseen ACC  {a:.1}");
    }
    for l in &r.learners {
        println!(
            "  {:<12} inductive {:>5.1}  last iteration {:>5.1}",
            l.name, l.inductive, l.last_iteration
        );
    }
    if let Some(a) = r.apr {
        println!("APR after seen-only training {a:.3}");
    }
    if let Some(g) = &r.gzsl {
        println!("U {:.1}  S {:.1}  H {:.1}", g.unseen, g.seen, g.h);
    }
    if let Some(o) = &r.ood {
        if let Some(n) = o.simulated {
            println!("simulated unseen set: {n} rows");
        }
        println!("average TNR {:.3}", o.average_tnr);
        for p in &o.points {
            println!("  FNR {:.2}  TNR {:.3}", p.fnr_target, p.tnr);
        }
    }
    for row in &r.ablation {
        let param = row.param.map(|p| format!(" {p}")).unwrap_or_default();
        let apr = row.apr.map(|a| format!("  APR {a:.3}")).unwrap_or_default();
        println!("  {}{param}: ACC {:.1}{apr}", row.label, row.acc);
    }
}

fn gen_data(spec: &str, out: &Path) -> Result<(), Failure> {
    let spec: SynthSpec = if spec == "reference" {
        reference_benchmark()
    } else {
        let text = std::fs::read_to_string(spec)
            .with_context(|| format!("reading {spec}"))
            .map_err(Failure::Config)?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing {spec}"))
            .map_err(Failure::Config)?
    };
    spec.validate().map_err(classify)?;
    let data = generate(&spec).map_err(classify)?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(Failure::Runtime)?;
    data.save(out).map_err(classify)?;
    println!(
        "wrote {} rows ({} seen + {} unseen classes) to {}",
        data.labels.len(),
        data.space.seen().len(),
        data.space.unseen().len(),
        out.display()
    );
    Ok(())
}

fn selftest() -> Result<(), Failure> {
    let checks = icot_core::selftest::run_all();
    let mut failed = 0;
    for c in &checks {
        println!(
            "{} {:<36} {}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.detail
        );
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "{failed} of {} checks failed",
            checks.len()
        )));
    }
    println!("{} checks passed", checks.len());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { spec, out } => gen_data(&spec, &out),
        Command::Zsl { config } => {
            let mut cfg = load_config(&config)?;
            cfg.pipeline = Pipeline::Zsl;
            run_config(cfg, cli.threads)
        }
        Command::Gzsl { config, setting } => {
            let mut cfg = load_config(&config)?;
            cfg.pipeline = Pipeline::Gzsl;
            if let Some(s) = setting {
                cfg.gzsl_setting = s.parse::<GzslSetting>().map_err(classify)?;
            }
            run_config(cfg, cli.threads)
        }
        Command::Ood { config, method } => {
            let mut cfg = load_config(&config)?;
            cfg.pipeline = Pipeline::Ood;
            if let Some(m) = method {
                cfg.ood_method = m.into();
            }
            run_config(cfg, cli.threads)
        }
        Command::Ablation { config } => {
            let mut cfg = load_config(&config)?;
            cfg.pipeline = Pipeline::Ablation;
            run_config(cfg, cli.threads)
        }
        Command::Report { input } => {
            let r = load_summary(&input).map_err(classify)?;
            print_summary(&r);
            Ok(())
        }
        Command::Selftest => selftest(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
