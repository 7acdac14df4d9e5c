//! `spikegrad gradcheck`: randomized oracle suites — exact equivalence of
//! the two backward passes, the delta recurrence against the literal
//! evaluator, readout finite differences, and membrane reconstruction.
//! Nonzero exit on any failure. `--inject-fault delta-alpha-exponent` runs
//! the delta suite against a deliberately broken sweep to prove the suite
//! detects that fault class.

use spikegrad_core::rng::Rng;
use spikegrad_core::verify::{
    membrane_reconstruction_trial, random_instance, run_delta_suite, run_equivalence_suite,
    run_readout_fd_suite, FaultInjection, InstanceBounds,
};

use crate::args::Args;
use crate::CliError;

pub fn run(args: &Args) -> Result<(), CliError> {
    let trials: usize = args
        .get_parsed("trials")
        .map_err(|e| CliError::Usage(e.to_string()))?
        .unwrap_or(1000);
    let seed: u64 = args
        .get_parsed("seed")
        .map_err(|e| CliError::Usage(e.to_string()))?
        .unwrap_or(1);
    let fault = match args.get("inject-fault") {
        None => FaultInjection::None,
        Some("delta-alpha-exponent") => FaultInjection::DeltaAlphaExponent,
        Some(other) => return Err(CliError::Usage(format!("unknown fault '{other}'"))),
    };
    args.reject_unknown()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }

    let mut failed = false;

    if fault == FaultInjection::None {
        let failures = run_equivalence_suite(trials, seed);
        report(
            "equivalence (event-driven == dense truncated, exact)",
            trials,
            &failures,
        );
        failed |= !failures.is_empty();
    }

    let delta_trials = (trials / 4).clamp(1, 250);
    let failures = run_delta_suite(delta_trials, seed, fault);
    report(
        "delta recurrence vs naive O(T^2) (<= 1e-10)",
        delta_trials,
        &failures,
    );
    failed |= !failures.is_empty();

    if fault == FaultInjection::None {
        let fd_trials = 100.min(trials);
        match run_readout_fd_suite(fd_trials, seed) {
            Ok(ran) => report(
                "readout gradient vs central differences (<= 1e-4)",
                ran,
                &[],
            ),
            Err(failures) => {
                report(
                    "readout gradient vs central differences (<= 1e-4)",
                    fd_trials,
                    &failures,
                );
                failed = true;
            }
        }

        let recon_trials = (trials / 10).clamp(1, 100);
        let mut failures = Vec::new();
        for k in 0..recon_trials {
            let mut rng = Rng::derive(seed ^ 0xec0, k as u64);
            let inst = random_instance::<f64>(&InstanceBounds::default(), &mut rng);
            if let Err(e) = membrane_reconstruction_trial(&inst, 1e-10) {
                failures.push(format!("trial {k}: {e}"));
            }
        }
        report(
            "membrane reconstruction (closed form vs recurrence)",
            recon_trials,
            &failures,
        );
        failed |= !failures.is_empty();
    }

    if failed {
        Err(CliError::Check("gradcheck found failures".into()))
    } else {
        println!("gradcheck: all suites passed");
        Ok(())
    }
}

fn report(name: &str, trials: usize, failures: &[String]) {
    if failures.is_empty() {
        println!("PASS  {name}  [{trials} trials]");
    } else {
        println!(
            "FAIL  {name}  [{} of {trials} trials failed]",
            failures.len()
        );
        for f in failures.iter().take(5) {
            println!("      {f}");
        }
        if failures.len() > 5 {
            println!("      ... {} more", failures.len() - 5);
        }
    }
}
