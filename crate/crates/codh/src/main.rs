//! Command-line harness: run check suites, print parameter tables, gradcheck
//! individual modules, and write/verify golden tensor files.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 usage or config error.

use clap::{Parser, Subcommand};
use codh::golden::{read_tensor, write_tensor};
use codh::harness::{gradcheck_module, run_suite, RunConfig};
use codh::head::{build_head, head_forward_features, HeadConfig};
use codh::modules::{afe_forward, AfeConfig};
use codh::params::{
    published_modified_millions, table10_deltas, table7_report, table8_report, ParamReport,
    ALL_BACKBONES, ALL_DETECTORS,
};
use codh::rng::normal_tensor;
use codh::synth::{gen_synthetic, Sizes};
use codh::tape::Tape;
use codh::tensor::Tensor;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "codh", about = "Compact detector-head verification harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured check suites and print a line-oriented report.
    Run {
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report to this path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print parameter-count tables with per-row tolerance checks.
    Params {
        /// Restrict to one table: 7, 8, or 10.
        #[arg(long)]
        table: Option<u8>,
    },
    /// Finite-difference gradient check for one named module.
    Gradcheck {
        /// leca|eca|sr|cr|afe|afe-inverted|ccr|egca|head:<arrangement>
        #[arg(long)]
        module: String,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write or verify the golden tensor set in a directory.
    Golden {
        #[arg(long, conflicts_with = "verify")]
        write: Option<PathBuf>,
        #[arg(long)]
        verify: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run {
            config,
            seed,
            report,
        } => cmd_run(config, seed, report),
        Cmd::Params { table } => cmd_params(table),
        Cmd::Gradcheck {
            module,
            eps,
            tol,
            seed,
        } => cmd_gradcheck(&module, eps, tol, seed),
        Cmd::Golden { write, verify } => cmd_golden(write, verify),
    }
}

fn cmd_run(config: Option<PathBuf>, seed: Option<u64>, report_path: Option<PathBuf>) -> ExitCode {
    let mut cfg = match config {
        Some(path) => {
            let text = match std::fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            };
            match RunConfig::from_toml(&text) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            }
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = match run_suite(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let rendered = report.render();
    print!("{rendered}");
    if let Some(path) = report_path {
        if let Err(e) = std::fs::write(&path, &rendered) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn print_table(title: &str, rows: &[(ParamReport, f64, f64)]) -> bool {
    println!("table={title}");
    let mut all = true;
    for (row, expect, tol) in rows {
        let pass = (row.projected_millions - expect).abs() <= *tol;
        all &= pass;
        println!(
            "check={title}/{} pass={pass} value={:.2} expected={:.2} tol={:.2}",
            row.label, row.projected_millions, expect, tol
        );
    }
    all
}

fn cmd_params(table: Option<u8>) -> ExitCode {
    let mut ok = true;
    if matches!(table, None | Some(7)) {
        let published = [
            41.53, 35.14, 31.91, 35.56, 33.20, 31.37, 30.06, 32.32, 31.14, 30.22,
        ];
        let rows: Vec<_> = table7_report()
            .into_iter()
            .zip(published)
            .map(|(r, e)| (r, e, 0.02))
            .collect();
        ok &= print_table("7", &rows);
    }
    if matches!(table, None | Some(8)) {
        let published = [35.56, 35.83, 35.24, 35.24];
        let rows: Vec<_> = table8_report()
            .into_iter()
            .zip(published)
            .map(|(r, e)| (r, e, 0.02))
            .collect();
        ok &= print_table("8", &rows);
    }
    if matches!(table, None | Some(10)) {
        let mut rows = Vec::new();
        for detector in ALL_DETECTORS {
            for backbone in ALL_BACKBONES {
                let row = match table10_deltas(detector, backbone) {
                    Ok(r) => r,
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(2);
                    }
                };
                let expect = published_modified_millions(detector, backbone);
                rows.push((row, expect, 0.03));
            }
        }
        ok &= print_table("10", &rows);
    }
    if table.map_or(false, |t| !matches!(t, 7 | 8 | 10)) {
        eprintln!("error: unknown table (expected 7, 8, or 10)");
        return ExitCode::from(2);
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_gradcheck(module: &str, eps: f64, tol: f64, seed: u64) -> ExitCode {
    match gradcheck_module(module, seed, eps, tol) {
        Ok(check) => {
            println!(
                "check=gradcheck/{module} pass={} value={:.9e} tol={:.9e}",
                check.pass, check.max_rel_err, check.tol
            );
            if check.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Deterministic golden set: small synthetic inputs plus module outputs.
fn golden_set() -> Result<Vec<(String, Tensor)>, Box<dyn std::error::Error>> {
    let sizes = Sizes {
        levels: [8, 4, 2, 1],
        n: 16,
        d: 16,
    };
    let synthetic = gen_synthetic(7, &sizes)?;
    let mut set: Vec<(String, Tensor)> = Vec::new();
    for (i, t) in synthetic.pyramid.iter().enumerate() {
        set.push((format!("p{}", i + 2), t.clone()));
    }
    set.push(("rois".into(), synthetic.rois));

    let afe = AfeConfig::seeded(7, "golden.afe");
    let x = normal_tensor(7, "golden.afe.x", vec![4, 16]);
    let mut tape = Tape::new();
    let id = tape.leaf(x.clone());
    let out = afe_forward(&mut tape, id, &afe)?;
    set.push(("afe_in".into(), x));
    set.push(("afe_out".into(), tape.value(out).clone()));

    let head = build_head(&HeadConfig::tiny("AFE-FC2-CCR", 16, 16)?, 7)?;
    let hx = normal_tensor(7, "golden.head.x", vec![16, 16]);
    let mut tape = Tape::new();
    let id = tape.leaf(hx.clone());
    let outs = head_forward_features(&mut tape, &head, id)?;
    set.push(("head_in".into(), hx));
    set.push(("head_cls".into(), tape.value(outs.cls).clone()));
    set.push(("head_reg".into(), tape.value(outs.reg).clone()));
    Ok(set)
}

fn cmd_golden(write: Option<PathBuf>, verify: Option<PathBuf>) -> ExitCode {
    let set = match golden_set() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match (write, verify) {
        (Some(dir), None) => {
            if let Err(e) = std::fs::create_dir_all(&dir) {
                eprintln!("error: cannot create {}: {e}", dir.display());
                return ExitCode::from(2);
            }
            for (name, tensor) in &set {
                let path = dir.join(format!("{name}.codh"));
                if let Err(e) = write_tensor(&path, tensor) {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        (None, Some(dir)) => {
            let mut all = true;
            for (name, tensor) in &set {
                let path = dir.join(format!("{name}.codh"));
                let pass = match read_tensor(&path) {
                    Ok(stored) => tensor_matches_at_f32(tensor, &stored),
                    Err(e) => {
                        eprintln!("error reading {}: {e}", path.display());
                        false
                    }
                };
                all &= pass;
                println!("check=golden/{name} pass={pass}");
            }
            if all {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        _ => {
            eprintln!("error: pass exactly one of --write or --verify");
            ExitCode::from(2)
        }
    }
}

fn tensor_matches_at_f32(current: &Tensor, stored: &Tensor) -> bool {
    current.shape() == stored.shape()
        && current
            .data()
            .iter()
            .zip(stored.data())
            .all(|(a, b)| (*a as f32).to_bits() == (*b as f32).to_bits())
}
