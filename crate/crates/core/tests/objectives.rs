mod common;

use proptest::prelude::*;
use rand::Rng;

use common::oracle;
use stablept::objectives::{mlm_loss, supcon_loss, total_loss};
use stablept::Tensor;

fn batch(seed: u64) -> (Tensor, Vec<usize>) {
    let mut r = common::rng(seed);
    let b = r.random_range(2..=8);
    let d = r.random_range(1..=8);
    let classes = r.random_range(1..=3);
    let labels = (0..b).map(|_| r.random_range(0..classes)).collect();
    (Tensor::randn(&[b, d], 1.0, &mut r), labels)
}

#[test]
fn supcon_matches_double_loop() {
    for seed in 0..100 {
        let (z, labels) = batch(seed);
        for tau in [0.05, 0.1, 1.0] {
            let got = supcon_loss(&z, &labels, tau).unwrap();
            let want = oracle::supcon(&z, &labels, tau);
            assert!((got - want).abs() < 1e-10, "seed {seed} tau {tau}: {got} vs {want}");
        }
    }
}

#[test]
fn mlm_matches_log_sum_exp() {
    for seed in 0..100 {
        let mut r = common::rng(seed);
        let b = r.random_range(1..=8);
        let v = r.random_range(4..=40);
        let logits = Tensor::randn(&[b, v], 5.0, &mut r);
        let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..2)).collect();
        let words = [r.random_range(0..v / 2), r.random_range(v / 2..v)];
        let got = mlm_loss(&logits, &labels, &words).unwrap();
        let want = oracle::mlm(&logits, &labels, &words);
        assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn total_is_exact_sum() {
    for seed in 0..20 {
        let (z, labels) = batch(seed);
        let cl = supcon_loss(&z, &labels, 0.1).unwrap();
        let mlm = 0.37 * seed as f64 + 0.1;
        assert_eq!(total_loss(mlm, cl).l_total, mlm + cl);
    }
}

proptest! {
    #[test]
    fn supcon_is_nonnegative_and_scale_invariant(seed in any::<u64>(), c in 0.01f64..100.0) {
        let (z, labels) = batch(seed);
        let scaled = Tensor::new(z.shape().to_vec(), z.data().iter().map(|v| v * c).collect()).unwrap();
        let a = supcon_loss(&z, &labels, 0.1).unwrap();
        let b = supcon_loss(&scaled, &labels, 0.1).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }

    #[test]
    fn supcon_is_permutation_invariant(seed in any::<u64>()) {
        let (z, labels) = batch(seed);
        let b = labels.len();
        let d = z.shape()[1];
        let perm: Vec<usize> = (0..b).rev().collect();
        let zp: Vec<f64> = perm.iter().flat_map(|&i| z.row(i).to_vec()).collect();
        let lp: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let a = supcon_loss(&z, &labels, 0.1).unwrap();
        let p = supcon_loss(&Tensor::new(vec![b, d], zp).unwrap(), &lp, 0.1).unwrap();
        prop_assert!((a - p).abs() < 1e-10);
    }

    #[test]
    fn mlm_is_shift_invariant(seed in any::<u64>(), shift in -100.0f64..100.0) {
        let mut r = common::rng(seed);
        let logits = Tensor::randn(&[3, 10], 2.0, &mut r);
        let shifted = Tensor::new(vec![3, 10], logits.data().iter().map(|v| v + shift).collect()).unwrap();
        let labels = [0, 1, 1];
        let a = mlm_loss(&logits, &labels, &[2, 3]).unwrap();
        let b = mlm_loss(&shifted, &labels, &[2, 3]).unwrap();
        prop_assert!(a > 0.0);
        prop_assert!((a - b).abs() < 1e-10);
    }
}
