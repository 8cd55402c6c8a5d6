use std::path::PathBuf;

use clap::{Parser, Subcommand};

use chash::{load_factor_experiment, run_workload, AddedRatio, BenchConfig, Workload};

#[derive(Parser)]
#[command(name = "chash", version, about = "Benchmark and experiment driver for the chash store")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a workload against an in-process server and print a report.
    Bench {
        /// A, B, C, D, F, neg, update-only, insert-only, delete-only
        #[arg(long, default_value = "C")]
        workload: Workload,
        /// Keys loaded before the measured phase.
        #[arg(long, default_value_t = 100_000)]
        keys: u64,
        /// Operations in the measured phase.
        #[arg(long, default_value_t = 1_000_000)]
        ops: u64,
        #[arg(long, default_value_t = 4)]
        clients: usize,
        #[arg(long, default_value_t = 4)]
        server_threads: usize,
        /// Added-group quota as a fraction of pairs: 0, 1/20, or 1/10.
        #[arg(long, default_value = "1/10")]
        added_ratio: AddedRatio,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        region_mib: usize,
        #[arg(long, default_value_t = 2048)]
        initial_buckets: usize,
        /// Append the report as one JSON line.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fill the table through doublings and report load factor at each
    /// resize trigger.
    LoadFactor {
        #[arg(long, default_value_t = 20)]
        initial_buckets: usize,
        /// How many resize triggers to drive.
        #[arg(long, default_value_t = 5)]
        resizes: usize,
        #[arg(long, default_value = "1/10")]
        added_ratio: AddedRatio,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        region_mib: usize,
        /// Append one JSON line per trigger point.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> chash::Result<()> {
    match Cli::parse().cmd {
        Cmd::Bench {
            workload,
            keys,
            ops,
            clients,
            server_threads,
            added_ratio,
            seed,
            region_mib,
            initial_buckets,
            report,
        } => {
            let cfg = BenchConfig {
                workload,
                keys,
                ops,
                clients,
                server_threads,
                added_ratio,
                seed,
                region_mib,
                initial_buckets,
            };
            let r = run_workload(&cfg)?;
            print!("{r}");
            if let Some(path) = report {
                r.append_jsonl(&path)?;
            }
        }
        Cmd::LoadFactor {
            initial_buckets,
            resizes,
            added_ratio,
            seed,
            region_mib,
            report,
        } => {
            let scheme = format!("{}/{}", added_ratio.num, added_ratio.den);
            let points = load_factor_experiment(initial_buckets, resizes, added_ratio, seed, region_mib)?;
            println!("scheme {scheme}  initial buckets {initial_buckets}  seed {seed}");
            for p in &points {
                println!(
                    "  resize {}: {} buckets at load factor {:.4}",
                    p.resize_index, p.buckets_before, p.load_factor
                );
            }
            if let Some(path) = report {
                use std::io::Write as _;
                let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
                for p in &points {
                    let mut v = serde_json::to_value(p).expect("point serializes");
                    let obj = v.as_object_mut().unwrap();
                    obj.insert("scheme".into(), scheme.clone().into());
                    obj.insert("seed".into(), seed.into());
                    writeln!(f, "{v}")?;
                }
            }
        }
    }
    Ok(())
}
