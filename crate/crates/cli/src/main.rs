use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use otcil::experiment::{compare_styles, run_experiment, style_label, RunConfig};
use otcil::report::{emit_comparison, emit_report};
use otcil::stream::{write_csv_features, CsvSchema, SyntheticSpec};
use otcil::Error;

#[derive(Parser)]
#[command(name = "otcil", version, about = "One-pass class-incremental learning with ensemble deep RVFL networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config (all of its repeats).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run configs that differ only in style and summarise them side by side.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic Gaussian-cluster dataset as train.csv and test.csv.
    BakeSynthetic {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) => 2,
        Error::Numerical { .. } => 3,
        Error::Format { .. } | Error::Io { .. } => 1,
    }
}

fn out_dir(flag: Option<PathBuf>, config: Option<&RunConfig>) -> PathBuf {
    flag.or_else(|| config.and_then(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(config: &Path, out: Option<PathBuf>) -> Result<(), Error> {
    let cfg = RunConfig::load(config)?;
    let root = out_dir(out, Some(&cfg));
    for r in 0..cfg.repeats {
        let dir = if cfg.repeats == 1 { root.clone() } else { root.join(format!("repeat_{r}")) };
        match run_experiment(&cfg.for_repeat(r)) {
            Ok(report) => {
                emit_report(&report, &dir)?;
                let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{} repeat {r}: ACC {} BWT {} FWT {} cum_regret {:.6} -> {}",
                    report.style,
                    fmt(report.acc),
                    fmt(report.bwt),
                    fmt(report.fwt),
                    report.cumulative_regret,
                    dir.display()
                );
            }
            Err(failure) => {
                if let Some(partial) = &failure.partial {
                    emit_report(partial, &dir)?;
                    eprintln!("partial report written to {}", dir.display());
                }
                eprintln!("run failed for style {}", style_label(&cfg.style));
                return Err(failure.error);
            }
        }
    }
    Ok(())
}

fn compare(configs: &[PathBuf], repeats: usize, out: Option<PathBuf>) -> Result<(), Error> {
    let cfgs = configs.iter().map(RunConfig::load).collect::<Result<Vec<_>, _>>()?;
    let cmp = compare_styles(&cfgs, repeats)?;
    let dir = out_dir(out, None);
    emit_comparison(&cmp, &dir)?;
    println!("{:<40} {:>10} {:>10} {:>14}", "style", "ACC", "acc_full", "cum_regret");
    for row in &cmp.rows {
        let med = |s: Option<otcil::experiment::Spread>| s.map_or(f64::NAN, |s| s.median);
        println!(
            "{:<40} {:>10.4} {:>10.4} {:>14.6}",
            row.style,
            med(row.acc),
            med(row.final_acc_full),
            med(row.cumulative_regret)
        );
    }
    println!("written to {}", dir.display());
    Ok(())
}

fn bake(spec: &Path, out: Option<PathBuf>) -> Result<(), Error> {
    let spec = SyntheticSpec::load(spec)?;
    let (train, test) = spec.generate()?;
    let dir = out_dir(out, None);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let schema = CsvSchema {
        label_column: 0,
        delimiter: ',',
        has_header: true,
        classes: Some(spec.classes),
    };
    write_csv_features(&train, dir.join("train.csv"), &schema)?;
    write_csv_features(&test, dir.join("test.csv"), &schema)?;
    println!("wrote {} train and {} test rows to {}", train.len(), test.len(), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => run(&config, out),
        Command::Compare { configs, repeats, out } => compare(&configs, repeats, out),
        Command::BakeSynthetic { spec, out } => bake(&spec, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
