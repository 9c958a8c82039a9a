use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use statefuzz::campaign::{self, CampaignConfig};
use statefuzz::corpus::SeedFile;
use statefuzz::frontend;
use statefuzz::oracles::OracleOptions;
use statefuzz::package::ContractPackage;
use statefuzz::vm::{self, VmConfig};

#[derive(Parser)]
#[command(name = "statefuzz", version, about = "Greybox fuzzer for CLite contracts")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fuzz a contract (CLite source or compiled package JSON).
    Fuzz {
        file: PathBuf,
        /// Wall-clock budget in seconds.
        #[arg(long, default_value_t = 600)]
        time: u64,
        /// Execution budget.
        #[arg(long, default_value_t = 50_000)]
        energy: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Write the JSON report here and the coverage series next to it as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        no_seq_mutation: bool,
        #[arg(long)]
        no_mask: bool,
        #[arg(long)]
        no_energy: bool,
        /// Keep bytecode constants out of the replacement dictionary.
        #[arg(long)]
        no_harvest: bool,
        /// Let SE report `<` and `>` on balances too.
        #[arg(long)]
        se_include_ordering: bool,
        #[arg(long)]
        dump_depgraph: bool,
        #[arg(long)]
        dump_weights: bool,
        #[arg(long)]
        dump_mask: bool,
        /// Dump the trace of the best-covering seed.
        #[arg(long)]
        dump_trace: bool,
        #[arg(long, value_enum, default_value = "text")]
        trace_format: TraceFormat,
    },
    /// Compile CLite source and print the package JSON.
    Compile {
        file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Re-execute a recorded seed and print its trace and findings.
    Replay {
        seedfile: PathBuf,
        /// CLite source or package JSON the seed was recorded against.
        pkg: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        trace_format: TraceFormat,
        #[arg(long)]
        se_include_ordering: bool,
    },
}

fn load_package(path: &Path) -> Result<ContractPackage> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        return ContractPackage::from_json(&text).with_context(|| format!("loading package {}", path.display()));
    }
    match frontend::compile_source(&text) {
        Ok(p) => Ok(p),
        Err(e) => bail!("{}: {e}", path.display()),
    }
}

fn dump_traces(traces: &[vm::TxTrace], format: TraceFormat) -> String {
    match format {
        TraceFormat::Text => vm::dump_text(traces),
        TraceFormat::Json => vm::dump_json(traces),
    }
}

fn run() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Compile { file, output } => {
            let pkg = load_package(&file)?;
            let json = pkg.to_json();
            match output {
                Some(o) => fs::write(&o, json).with_context(|| format!("writing {}", o.display()))?,
                None => println!("{json}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Fuzz {
            file,
            time,
            energy,
            seed,
            workers,
            report,
            no_seq_mutation,
            no_mask,
            no_energy,
            no_harvest,
            se_include_ordering,
            dump_depgraph,
            dump_weights,
            dump_mask,
            dump_trace,
            trace_format,
        } => {
            let pkg = load_package(&file)?;
            let cfg = CampaignConfig {
                time_budget: Duration::from_secs(time),
                energy_budget: energy,
                rng_seed: seed,
                workers,
                seq_mutation: !no_seq_mutation,
                use_mask: !no_mask,
                use_energy: !no_energy,
                harvest_constants: !no_harvest,
                se_include_ordering,
                ..CampaignConfig::default()
            };
            let out = campaign::run_campaign(&pkg, &cfg);
            if dump_depgraph {
                eprintln!("{}", out.graph.to_json());
                eprintln!("template: {}", out.template.calls.join(" -> "));
            }
            if dump_weights {
                eprintln!("{}", out.weights.to_json());
            }
            if dump_mask {
                match &out.first_mask {
                    Some((stream, mask)) => eprint!("stream {}\n{mask}", hex::encode(stream)),
                    None => eprintln!("no mask was computed"),
                }
            }
            if dump_trace {
                if let Some(best) = &out.best_seed {
                    let vm = VmConfig {
                        record_steps: true,
                        ..cfg.vm.clone()
                    };
                    let (traces, _) = campaign::replay(best, &pkg, &vm, &OracleOptions::default())?;
                    eprintln!("{}", dump_traces(&traces, trace_format));
                }
            }
            if let Some(path) = report {
                fs::write(&path, out.report.to_json()).with_context(|| format!("writing {}", path.display()))?;
                let csv = path.with_extension("csv");
                fs::write(&csv, out.report.coverage_csv()).with_context(|| format!("writing {}", csv.display()))?;
            }
            eprintln!(
                "{}: {:.1}% branch coverage, {} executions, {} findings",
                out.report.contract,
                out.report.branch_coverage_percent,
                out.report.executions,
                out.report.findings.len()
            );
            println!("{}", serde_json::to_string_pretty(&out.report.findings)?);
            Ok(if out.report.findings.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Cmd::Replay {
            seedfile,
            pkg,
            trace_format,
            se_include_ordering,
        } => {
            let pkg = load_package(&pkg)?;
            let text = fs::read_to_string(&seedfile).with_context(|| format!("reading {}", seedfile.display()))?;
            let seed = SeedFile::from_json(&text)?;
            let vm = VmConfig::default();
            let opts = OracleOptions {
                attacker: vm.attacker,
                se_include_ordering,
            };
            let (traces, hits) = campaign::replay(&seed, &pkg, &vm, &opts)?;
            match trace_format {
                TraceFormat::Text => {
                    print!("{}", vm::dump_text(&traces));
                    println!("findings: {}", serde_json::to_string(&hits)?);
                }
                TraceFormat::Json => {
                    let trace: serde_json::Value = serde_json::from_str(&vm::dump_json(&traces))?;
                    let v = serde_json::json!({ "trace": trace, "findings": hits });
                    println!("{}", serde_json::to_string_pretty(&v)?);
                }
            }
            Ok(if hits.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
