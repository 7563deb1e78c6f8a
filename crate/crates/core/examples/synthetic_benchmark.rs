//! Trains the reduced model on the synthetic benchmark and prints test AUC.
//!
//! cargo run --release --example synthetic_benchmark -- <condition> <seed> <epochs> <steps_per_epoch> [clip_length] [frame_size] [data_dir]

use std::path::PathBuf;
use std::time::Instant;

use fingerdiff::evaluation::SyntheticBenchmark;

fn main() -> fingerdiff::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let parse = |i: usize, d: &str| -> u64 { arg(i, d).parse().expect("numeric argument") };
    let bench = SyntheticBenchmark {
        condition: arg(0, "feat_diff").parse()?,
        seed: parse(1, "0"),
        epochs: parse(2, "16") as usize,
        steps_per_epoch: parse(3, "75") as usize,
        clip_length: parse(4, "16") as usize,
        frame_size: parse(5, "32") as usize,
    };
    let data = PathBuf::from(arg(6, &format!("/tmp/fd_bench_data_{}", bench.frame_size)));
    let manifest = bench.dataset(&data)?;

    let t = Instant::now();
    let out = std::env::temp_dir().join(format!(
        "fd_bench_run_{}_{}_{}_{}",
        bench.condition, bench.seed, bench.clip_length, bench.frame_size
    ));
    let report = bench.run(&manifest, &out)?;
    println!(
        "{} seed {} T={}: mean AUC {:.4} {:?} ({:?})",
        bench.condition,
        bench.seed,
        bench.clip_length,
        report.mean_auc,
        report.per_target_auc,
        t.elapsed()
    );
    Ok(())
}
