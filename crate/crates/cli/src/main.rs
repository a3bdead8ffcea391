use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cachebench::catalog::{build_catalog, expand_catalog, CaseOptions, Catalog, Classifier};
use cachebench::harness::{run_suite, SuiteOptions, SuiteResult, DEFAULT_TRIALS};
use cachebench::machine::MachineConfig;
use cachebench::report::{
    emit_catalog, matrix_rows, read_summary_csv, render_dot_matrix, write_results_csv,
    write_sensitivity_csv, write_summary_csv, MatrixRow,
};
use cachebench::sensitivity::{sweep_parameter, Parameter};
use cachebench::stats::DEFAULT_P_THRESHOLD;
use cachebench::{Error, Result};

#[derive(Parser)]
#[command(name = "cachebench", version, about = "Three-step cache timing-channel benchmark suite")]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Machine configuration (JSON); the built-in two-cluster machine when omitted.
    #[arg(long, global = true)]
    machine: Option<PathBuf>,
    /// Catalog file (JSON); rebuilt from the reference machine when omitted.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    /// Overrides the machine file's seed as well.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, global = true, default_value_t = DEFAULT_P_THRESHOLD)]
    pvalue: f64,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Also render the dot-matrix SVG.
    #[arg(long, global = true)]
    plot: bool,
    /// Instantiate every case on the four local/remote cluster pairs.
    #[arg(long, global = true)]
    big_little: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build (or check) the pattern catalog and print its counts.
    Catalog,
    /// Run every case of the catalog on one machine.
    Suite {
        /// Row label in the matrices.
        #[arg(long, default_value = "default")]
        name: String,
    },
    /// Sweep the benchmark's assumed L1 geometry against the device.
    Sweep {
        /// associativity, line_size or total_size; all three when omitted.
        #[arg(long)]
        parameter: Option<String>,
    },
    /// Compare the plain machine with its PL and RF variants.
    SecureEval {
        #[arg(long, default_value_t = 0)]
        rf_start: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [5u64, 128])]
        rf_sizes: Vec<u64>,
    },
    /// Write one C source file per case.
    EmitNative,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Schema { .. } => 3,
        Error::Config(_) | Error::Geometry(_) | Error::Io { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let a = &cli.run;
    let mut machine = match &a.machine {
        Some(p) => MachineConfig::from_json_file(p)?,
        None => MachineConfig::default(),
    };
    if let Some(s) = a.seed {
        machine.seed = s;
    }
    let seed = a.seed.unwrap_or(machine.seed);
    let opts = SuiteOptions {
        n_trials: a.trials,
        p_threshold: a.pvalue,
        seed,
        big_little: a.big_little,
        ..SuiteOptions::default()
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    match &cli.cmd {
        Cmd::Catalog => cmd_catalog(a, seed),
        Cmd::Suite { name } => {
            let catalog = load_catalog(a, seed)?;
            let opts = SuiteOptions { config_name: name.clone(), ..opts };
            let r = run_suite(&machine, &catalog, &opts)?;
            print_suite(&r);
            write_matrix(a, &[&r])
        }
        Cmd::Sweep { parameter } => {
            let catalog = load_catalog(a, seed)?;
            let params = match parameter {
                Some(s) => vec![Parameter::parse(s)
                    .ok_or_else(|| Error::Config(format!("unknown sweep parameter {s:?}")))?],
                None => Parameter::ALL.to_vec(),
            };
            let mut tables = Vec::new();
            for p in params {
                let t = sweep_parameter(&machine, &catalog, p, &p.grid(), &opts)?;
                for pt in &t.points {
                    println!(
                        "{}={:<6} total {:>2} (AO {}, SO {}, SA {}) situations {}",
                        p,
                        pt.value,
                        pt.total_effective,
                        pt.ao_effective,
                        pt.so_effective,
                        pt.sa_effective,
                        if pt.diagnosis.situations.is_empty() { "-".into() } else { pt.diagnosis.symbols() },
                    );
                }
                tables.push(t);
            }
            let path = a.out.join("sensitivity.csv");
            write_sensitivity_csv(create(&path)?, &tables.iter().collect::<Vec<_>>())?;
            println!("wrote {}", path.display());
            let rows: Vec<MatrixRow> = tables
                .iter()
                .flat_map(|t| t.points.iter().map(|p| p.row.clone()))
                .collect();
            let summary = a.out.join("sweep_summary.csv");
            write_summary_csv(create(&summary)?, &rows)?;
            println!("wrote {}", summary.display());
            if a.plot {
                plot(&summary, &a.out.join("sweep.svg"), "Sensitivity sweep")?;
            }
            Ok(())
        }
        Cmd::SecureEval { rf_start, rf_sizes } => {
            let catalog = load_catalog(a, seed)?;
            let mut configs = vec![("normal".to_string(), machine.clone()), ("pl".into(), machine.with_pl())];
            for &n in rf_sizes {
                configs.push((format!("rf_{rf_start}_{n}"), machine.with_rf(*rf_start, n)));
            }
            let mut results = Vec::new();
            for (name, cfg) in configs {
                let o = SuiteOptions { config_name: name, ..opts.clone() };
                let r = run_suite(&cfg, &catalog, &o)?;
                print_suite(&r);
                results.push(r);
            }
            write_matrix(a, &results.iter().collect::<Vec<_>>())
        }
        Cmd::EmitNative => {
            let catalog = load_catalog(a, seed)?;
            let dir = a.out.join("native");
            let case_opts = CaseOptions { big_little: a.big_little, lock_prelude: false };
            let n = emit_catalog(&machine, &catalog, case_opts, &dir)?;
            println!("wrote {n} source files to {}", dir.display());
            Ok(())
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn load_catalog(a: &RunArgs, seed: u64) -> Result<Catalog> {
    match &a.catalog {
        Some(p) => Catalog::read(p),
        None => Ok(build_catalog(seed)?.catalog),
    }
}

fn cmd_catalog(a: &RunArgs, seed: u64) -> Result<()> {
    let catalog = match &a.catalog {
        Some(p) => {
            let c = Catalog::read(p)?;
            let mut classifier = Classifier::reference(seed)?;
            let mut mismatches = 0;
            for pat in &c.patterns {
                let got = classifier.classify(&pat.steps)?.map(|(t, _)| t);
                if got != Some(pat.vuln_type) {
                    mismatches += 1;
                    eprintln!("pattern {} {}: stored {}, oracle {:?}", pat.id, pat.notation(), pat.vuln_type, got);
                }
            }
            if mismatches > 0 {
                return Err(Error::Oracle(format!("{mismatches} labels disagree with the reference machine")));
            }
            c
        }
        None => {
            let b = build_catalog(seed)?;
            let report = a.out.join("catalog_report.txt");
            std::fs::write(&report, &b.report).map_err(|e| Error::io(&report, e))?;
            let path = a.out.join("catalog.json");
            b.catalog.write(&path)?;
            println!("wrote {}", path.display());
            b.catalog
        }
    };
    let single = expand_catalog(&catalog, CaseOptions::default()).len();
    println!("{} patterns, {} single-core cases", catalog.patterns.len(), single);
    if a.big_little {
        let bl = expand_catalog(&catalog, CaseOptions { big_little: true, lock_prelude: false }).len();
        println!("{bl} big.LITTLE cases");
    }
    for (block, n) in catalog.block_counts() {
        println!("  {block}: {n}");
    }
    Ok(())
}

fn print_suite(r: &SuiteResult) {
    use cachebench::catalog::VulnType;
    println!(
        "{}: {} effective patterns (AO {}, SO {}, SA {}), {} effective cases of {}",
        r.config_name,
        r.effective_count(),
        r.effective_of_type(VulnType::AO),
        r.effective_of_type(VulnType::SO),
        r.effective_of_type(VulnType::SA),
        r.effective_case_count(),
        r.cases.len()
    );
}

/// CSVs first; the plot is rendered from the written summary.
fn write_matrix(a: &RunArgs, results: &[&SuiteResult]) -> Result<()> {
    let path = a.out.join("results.csv");
    write_results_csv(create(&path)?, results)?;
    println!("wrote {}", path.display());
    let summary = a.out.join("summary.csv");
    write_summary_csv(create(&summary)?, &matrix_rows(results))?;
    println!("wrote {}", summary.display());
    if a.plot {
        plot(&summary, &a.out.join("summary.svg"), "Effective vulnerabilities")?;
    }
    Ok(())
}

fn plot(summary: &Path, svg: &Path, title: &str) -> Result<()> {
    let rows = read_summary_csv(File::open(summary).map_err(|e| Error::io(summary, e))?)?;
    std::fs::write(svg, render_dot_matrix(&rows, title)).map_err(|e| Error::io(svg, e))?;
    println!("wrote {}", svg.display());
    Ok(())
}
