//! Randomized property tests for the memory bank and action normalization.

use memact::expert::NormStats;
use memact::memory::{
    gate_fuse, init_memory_params, timestep_encoding, Consolidation, Fusion, MemoryBank,
    MemoryConfig, Stream,
};
use memact::params::{Binding, ParamStore};
use memact::tape::Tape;
use memact::{Precision, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mem_cfg(capacity: usize) -> MemoryConfig {
    MemoryConfig {
        n_p: 2,
        d_p: 4,
        d_c: 4,
        capacity,
        heads_perceptual: 2,
        heads_cognitive: 1,
        use_timestep_pe: true,
        use_perceptual: true,
        use_cognitive: true,
        fusion: Fusion::Gate,
        consolidation: Consolidation::Merge,
    }
}

proptest! {
    /// The gate output is an elementwise convex blend: it never leaves
    /// [min(x, h), max(x, h)], whatever the gate parameters are.
    #[test]
    fn gate_output_stays_between_inputs(
        seed in 0u64..500,
        x in prop::collection::vec(-5.0f64..5.0, 4),
        h in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let cfg = mem_cfg(4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_memory_params(&mut store, &cfg, &mut rng).unwrap();
        // perturb the zero-initialized gate head so g varies across seeds
        *store.get_mut("mem.cog.gate.fc2.w").unwrap() = Tensor::randn(&[4, 4], 2.0, &mut rng);
        *store.get_mut("mem.cog.gate.fc2.b").unwrap() = Tensor::randn(&[1, 4], 2.0, &mut rng);

        let mut tape = Tape::new(Precision::F64);
        let binding = Binding::bind_all(&mut tape, &store).unwrap();
        let xv = tape.leaf(Tensor::new(vec![1, 4], x.clone()).unwrap()).unwrap();
        let hv = tape.leaf(Tensor::new(vec![1, 4], h.clone()).unwrap()).unwrap();
        let out = gate_fuse(&mut tape, &binding, Stream::Cognitive, xv, hv).unwrap();
        for (o, (a, b)) in tape.value(out).data.iter().zip(x.iter().zip(&h)) {
            let (lo, hi) = (a.min(*b), a.max(*b));
            prop_assert!(*o >= lo - 1e-12 && *o <= hi + 1e-12, "{o} outside [{lo}, {hi}]");
        }
    }

    /// Any step sequence keeps both streams within capacity, equal in
    /// length, and in nondecreasing timestep order.
    #[test]
    fn bank_capacity_and_order_hold(
        seed in 0u64..500,
        capacity in 1usize..6,
        steps in 1usize..40,
        policy_fifo in any::<bool>(),
    ) {
        let mut cfg = mem_cfg(capacity);
        cfg.consolidation = if policy_fifo { Consolidation::Fifo } else { Consolidation::Merge };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_memory_params(&mut store, &cfg, &mut rng).unwrap();
        let mut bank = MemoryBank::new(capacity);
        for t in 0..steps as u64 {
            let mut tape = Tape::new(Precision::F64);
            let binding = Binding::bind_all(&mut tape, &store).unwrap();
            let p = tape.leaf(Tensor::randn(&[2, 4], 1.0, &mut rng)).unwrap();
            let c = tape.leaf(Tensor::randn(&[1, 4], 1.0, &mut rng)).unwrap();
            memact::memory::step(&mut tape, &binding, &cfg, p, c, t, &mut bank).unwrap();
            prop_assert!(bank.perceptual.len() <= capacity);
            prop_assert!(bank.cognitive.len() <= capacity);
            prop_assert_eq!(bank.perceptual.len(), bank.cognitive.len());
            for stream in [&bank.perceptual, &bank.cognitive] {
                for pair in stream.windows(2) {
                    prop_assert!(pair[0].timestep <= pair[1].timestep);
                }
            }
        }
    }

    /// Timestep encodings stay in [-1, 1] for any nonnegative time.
    #[test]
    fn timestep_encoding_bounded(t in 0.0f64..1e7, half in 1usize..8) {
        let te = timestep_encoding(t, 2 * half).unwrap();
        for v in &te.data {
            prop_assert!((-1.0..=1.0).contains(v));
        }
    }

    /// normalize then denormalize is the identity within fp tolerance,
    /// including constant (zero-variance) action channels.
    #[test]
    fn normalization_round_trips(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 2..30),
        constant in -2.0f64..2.0,
    ) {
        let mut rows = rows;
        for r in &mut rows {
            r[2] = constant; // exercise the degenerate-std floor
        }
        let stats = NormStats::from_actions(3, rows.iter().map(|r| r.as_slice()));
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let chunk = Tensor::new(vec![rows.len(), 3], flat.clone()).unwrap();
        let back = stats.denormalize(&stats.normalize(&chunk));
        for (a, b) in back.data.iter().zip(&flat) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
