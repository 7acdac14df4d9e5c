//! Cross-module oracle tests that need whole-pipeline instances: membrane
//! reconstruction at both precisions, the loss-report identity, and the
//! naive-delta route through the full dense backward.

use spikegrad_core::forward::network_forward;
use spikegrad_core::grad_dense::{dense_backward, DeltaMode};
use spikegrad_core::loss::loss_and_grads;
use spikegrad_core::rng::Rng;
use spikegrad_core::surrogate::Window;
use spikegrad_core::verify::{
    forward_and_loss, membrane_reconstruction_trial, random_instance, InstanceBounds,
};

#[test]
fn membrane_reconstruction_f64_within_1e10() {
    let bounds = InstanceBounds::default();
    for k in 0..30u64 {
        let mut rng = Rng::derive(0xAB, k);
        let inst = random_instance::<f64>(&bounds, &mut rng);
        membrane_reconstruction_trial(&inst, 1e-10).unwrap();
    }
}

#[test]
fn membrane_reconstruction_f32_within_1e5() {
    let bounds = InstanceBounds::default();
    for k in 0..30u64 {
        let mut rng = Rng::derive(0xAB, k);
        let inst = random_instance::<f32>(&bounds, &mut rng);
        membrane_reconstruction_trial(&inst, 1e-5).unwrap();
    }
}

#[test]
fn loss_report_total_is_sum_of_parts() {
    let bounds = InstanceBounds::default();
    for k in 0..20u64 {
        let mut rng = Rng::derive(0xCD, k);
        let inst = random_instance::<f64>(&bounds, &mut rng);
        let pass = network_forward(&inst.input, &inst.net, &inst.cfg, 1).unwrap();
        let (report, _, _) = loss_and_grads(&pass, &inst.labels, &inst.loss_cfg).unwrap();
        let total = report.cross_entropy + report.reg_low + report.reg_up;
        assert!(
            (report.total - total).abs() <= 1e-12 * total.abs().max(1.0),
            "total {} vs parts {}",
            report.total,
            total
        );
        assert!(report.reg_low >= 0.0 && report.reg_up >= 0.0);
    }
}

#[test]
fn naive_delta_route_agrees_with_chained_route() {
    // Full dense backward through both delta evaluators; weight gradients
    // agree to rounding even though the accumulation orders differ.
    let bounds = InstanceBounds {
        min_hidden_layers: 2,
        ..InstanceBounds::default()
    };
    for k in 0..20u64 {
        let mut rng = Rng::derive(0xEF, k);
        let inst = random_instance::<f64>(&bounds, &mut rng);
        let (pass, lg) = forward_and_loss(&inst).unwrap();
        let naive = dense_backward(
            &inst.net,
            &pass,
            &lg,
            &inst.cfg,
            Window::Truncated,
            DeltaMode::Naive,
            None,
        )
        .unwrap();
        let chained = dense_backward(
            &inst.net,
            &pass,
            &lg,
            &inst.cfg,
            Window::Truncated,
            DeltaMode::Chained,
            None,
        )
        .unwrap();
        for (a, b) in naive.bundles.iter().zip(chained.bundles.iter()) {
            for (x, y) in a.grad_w.as_slice().iter().zip(b.grad_w.as_slice()) {
                let scale = x.abs().max(y.abs()).max(1.0);
                assert!((x - y).abs() <= 1e-10 * scale, "{x} vs {y}");
            }
        }
    }
}
