//! spikegrad: train, verify, and benchmark spiking-network gradient
//! computation with dense or event-driven backward passes.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 I/O error.

mod args;
mod cmd_bench;
mod cmd_encode;
mod cmd_gradcheck;
mod cmd_train;
mod dataset;
mod runconfig;

use args::Args;

#[derive(Debug)]
pub enum CliError {
    Check(String),
    Usage(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Check(m) | CliError::Usage(m) | CliError::Io(m) => m,
        }
    }
}

const USAGE: &str = "\
spikegrad <command> [flags]

commands:
  train      train a network; flags: --config FILE --dataset NAME --backward
             dense|dense-truncated|sparse --epochs N --hidden N --batch N
             --steps N --seed N --bth X|inf --lr X --threads N
             --precision f32|f64 --subset N --test-subset N --data-root DIR
             --out DIR
  gradcheck  run the gradient oracle suites; flags: --trials N --seed N
             --inject-fault delta-alpha-exponent
  bench      sweep hidden sizes / window widths and write the benchmark CSV;
             flags as train plus --hidden-sweep 100,200,400 --bth-sweep
             0.05,0.2,inf --reps N --checkpoint FILE
  encode     latency-encode an IDX dataset into a raster container; flags:
             --input DIR --out FILE --split train|test --theta X --tau-eff X
             --steps N --dt X --limit N

datasets: fmnist (IDX files under --data-root or $SPIKEGRAD_DATA_DIR),
          fmnist-synth, event-visual, event-audio, raster:PATH
";

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(run(&argv));
}

fn run(argv: &[String]) -> i32 {
    let Some(command) = argv.first() else {
        eprintln!("{USAGE}");
        return 2;
    };
    let rest = &argv[1..];
    let parsed = match command.as_str() {
        "train" | "bench" | "gradcheck" | "encode" => Args::parse(rest, &[]),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            return 0;
        }
        other => {
            eprintln!("unknown command '{other}'\n{USAGE}");
            return 2;
        }
    };
    let args = match parsed {
        Ok(a) => a,
        Err(e) => {
            eprintln!("usage error: {e}");
            return 2;
        }
    };

    let result = match command.as_str() {
        "train" => cmd_train::run(&args),
        "gradcheck" => cmd_gradcheck::run(&args),
        "bench" => cmd_bench::run(&args),
        "encode" => cmd_encode::run(&args),
        _ => unreachable!(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
