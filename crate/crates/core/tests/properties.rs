//! Property tests over randomized tensors: the trace recurrence, the
//! gate/active-set agreement, activity bounds, softmax row identities, and
//! container round-trips.

use proptest::prelude::*;

use spikegrad_core::active::{activity_percentage, build_active_set, is_active};
use spikegrad_core::config::NetConfig;
use spikegrad_core::data::LabeledRasterSet;
use spikegrad_core::forward::{layer_forward, LayerState};
use spikegrad_core::loss::{one_hot, softmax_xent};
use spikegrad_core::surrogate::{g_truncated, SurrogateParams};
use spikegrad_core::tensor::{Grid3, Matrix, SpikeRaster};

fn raster_strategy(
    batch: usize,
    steps: usize,
    neurons: usize,
) -> impl Strategy<Value = SpikeRaster> {
    proptest::collection::vec(proptest::bool::weighted(0.3), batch * steps * neurons).prop_map(
        move |bits| {
            let mut r = SpikeRaster::zeros(batch, steps, neurons);
            let mut k = 0;
            for b in 0..batch {
                for t in 0..steps {
                    for n in 0..neurons {
                        r.set(b, t, n, bits[k]);
                        k += 1;
                    }
                }
            }
            r
        },
    )
}

fn grid_strategy(batch: usize, steps: usize, neurons: usize) -> impl Strategy<Value = Grid3<f64>> {
    proptest::collection::vec(-2.0_f64..2.5, batch * steps * neurons).prop_map(move |vals| {
        let mut g = Grid3::zeros(batch, steps, neurons);
        g.as_mut_slice().copy_from_slice(&vals);
        g
    })
}

proptest! {
    #[test]
    fn trace_recurrence_holds_exactly(input in raster_strategy(2, 12, 5)) {
        let cfg = NetConfig { layer_sizes: vec![5, 3], steps: 12, batch: 2, ..NetConfig::default() };
        let layer = LayerState {
            weights: Matrix::from_fn(5, 3, |i, j| 0.2 * i as f64 - 0.1 * j as f64),
            alpha: cfg.alpha_hidden(),
            is_readout: false,
        };
        let rec = layer_forward(&input, &layer, &cfg, 0, 1).unwrap();
        let alpha = cfg.alpha_hidden();
        for b in 0..2 {
            for i in 0..5 {
                prop_assert_eq!(rec.trace.at(b, 0, i), 0.0);
                for t in 0..11 {
                    let expect = alpha * rec.trace.at(b, t, i) + input.get(b, t, i) as u8 as f64;
                    // Same floating ops on both sides: exact equality.
                    prop_assert_eq!(rec.trace.at(b, t + 1, i), expect);
                }
            }
        }
    }

    #[test]
    fn gate_and_active_set_agree_everywhere(v in grid_strategy(2, 9, 4), b_th in 0.01_f64..0.5) {
        let p = SurrogateParams::new(100.0, 1.0, b_th);
        let set = build_active_set(&v, p.v_th, p.b_th);
        for b in 0..2 {
            for t in 0..9 {
                for n in 0..4 {
                    let in_set = set.entries().binary_search(&(b as u32, n as u32, t as u32)).is_ok();
                    let gated = g_truncated(v.at(b, t, n), &p) != 0.0;
                    prop_assert_eq!(in_set, gated);
                    prop_assert_eq!(in_set, is_active(v.at(b, t, n), p.v_th, p.b_th));
                }
            }
        }
    }

    #[test]
    fn activity_is_a_percentage(v in grid_strategy(2, 7, 3), b_th in 0.0_f64..1.5) {
        let set = build_active_set(&v, 1.0, b_th);
        let pct = activity_percentage(set.len(), 2, 7, 3).unwrap();
        prop_assert!((0.0..=100.0).contains(&pct));
        // Rebuilding from the same record is idempotent.
        let again = build_active_set(&v, 1.0, b_th);
        prop_assert_eq!(set.entries(), again.entries());
    }

    #[test]
    fn softmax_rows_are_normalized(vals in proptest::collection::vec(-6.0_f64..6.0, 12), labels in proptest::collection::vec(0usize..4, 3)) {
        let a = Matrix::from_vec(3, 4, vals);
        let y = one_hot::<f64>(&labels, 4).unwrap();
        let (_, grad) = softmax_xent(&a, &y).unwrap();
        for b in 0..3 {
            let row_sum: f64 = grad.row(b).iter().sum();
            // Rows of (p - y)/B sum to zero.
            prop_assert!(row_sum.abs() < 1e-9, "row {} sums to {}", b, row_sum);
        }
    }

    #[test]
    fn raster_container_roundtrips(input in raster_strategy(3, 8, 7), labels in proptest::collection::vec(0u8..5, 3)) {
        let dir = std::env::temp_dir().join(format!("spk-prop-{}-{:?}", std::process::id(), std::thread::current().id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("set.spkr");
        let mut set = LabeledRasterSet::new(8, 7, "train");
        for (b, &label) in labels.iter().enumerate() {
            set.push_sample(&input, b, label);
        }
        set.write(&path).unwrap();
        let back = LabeledRasterSet::read(&path).unwrap();
        prop_assert_eq!(&back, &set);
        let batch = back.batch(&[0, 1, 2]);
        prop_assert_eq!(batch.as_slice(), input.as_slice());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn shrinking_window_shrinks_the_active_set(v in grid_strategy(1, 10, 4)) {
        let wide = build_active_set(&v, 1.0, 0.4);
        let narrow = build_active_set(&v, 1.0, 0.1);
        prop_assert!(narrow.len() <= wide.len());
        for e in narrow.entries() {
            prop_assert!(wide.entries().binary_search(e).is_ok(), "narrow set must be a subset");
        }
    }
}
