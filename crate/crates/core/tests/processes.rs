mod common;

use common::{bayes_posterior, max_abs_diff};
use difflab::processes::{
    masked_reverse_posterior, uniform_reverse_posterior, ForwardKernel, PosteriorParams,
};
use difflab::rng::RngStream;
use difflab::schedule::NoiseSchedule;
use difflab::vocab::{TokenSequence, Vocab};
use difflab::Error;
use proptest::prelude::*;

fn masked(k: usize) -> ForwardKernel {
    ForwardKernel::masked(NoiseSchedule::Linear, Vocab::with_mask(k).unwrap()).unwrap()
}

fn uniform(k: usize) -> ForwardKernel {
    ForwardKernel::uniform(NoiseSchedule::Linear, Vocab::without_mask(k).unwrap()).unwrap()
}

#[test]
fn masked_marginal_splits_mass_between_token_and_mask() {
    assert_eq!(masked(3).marginal_at_alpha(1, 0.7).unwrap(), vec![0.0, 0.7, 0.0, 0.30000000000000004]);
    let p = masked(3).forward_marginal(1, 0.3).unwrap();
    assert!(max_abs_diff(&p, &[0.0, 0.7, 0.0, 0.3]) < 1e-15);
}

#[test]
fn marginal_endpoints() {
    assert_eq!(masked(3).marginal_at_alpha(2, 1.0).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    assert_eq!(uniform(4).marginal_at_alpha(2, 1.0).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    assert_eq!(uniform(4).marginal_at_alpha(2, 0.0).unwrap(), vec![0.25; 4]);
}

#[test]
fn corruption_endpoints() {
    let v = Vocab::with_mask(3).unwrap();
    let x = TokenSequence::clean(vec![0, 1, 2, 1], v).unwrap();
    let mut rng = RngStream::new(1);
    assert_eq!(masked(3).corrupt_sequence(&x, 0.0, &mut rng).unwrap(), x);
    let z = masked(3).corrupt_sequence(&x, 1.0, &mut rng).unwrap();
    assert!(z.tokens().iter().all(|&t| t == 3));
}

#[test]
fn masked_fraction_at_half_noise() {
    let v = Vocab::with_mask(2).unwrap();
    let x = TokenSequence::clean(vec![0; 100_000], v).unwrap();
    let z = masked(2).corrupt_at_alpha(&x, 0.5, &mut RngStream::new(7)).unwrap();
    let frac = z.mask_positions().len() as f64 / 1e5;
    assert!((frac - 0.5).abs() <= 0.01);
    assert!(z.tokens().iter().all(|&t| t == 0 || t == 2));
}

#[test]
fn masked_posterior_examples() {
    let v = Vocab::with_mask(3).unwrap();
    let p = PosteriorParams::new(0.8, 0.4, 4).unwrap();
    assert_eq!(masked_reverse_posterior(1, 0, &p, v).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    let clean = PosteriorParams::new(1.0, 0.4, 4).unwrap();
    assert_eq!(masked_reverse_posterior(3, 2, &clean, v).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    let q = masked_reverse_posterior(3, 0, &p, v).unwrap();
    let oracle = bayes_posterior(3, 0, 0.8, 0.4, 4, Some(3)).unwrap();
    assert!(max_abs_diff(&q, &oracle) < 1e-12);
    assert!(max_abs_diff(&q, &[2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0]) < 1e-12);
}

#[test]
fn masked_posterior_rejects_the_unreachable_boundary() {
    let v = Vocab::with_mask(2).unwrap();
    let p = PosteriorParams::new(1.0, 1.0, 3).unwrap();
    assert!(matches!(masked_reverse_posterior(2, 0, &p, v), Err(Error::Degenerate(_))));
}

#[test]
fn uniform_posterior_examples() {
    let same = PosteriorParams::new(0.6, 0.6, 3).unwrap();
    assert!(max_abs_diff(&uniform_reverse_posterior(2, 0, &same, 3).unwrap(), &[0.0, 0.0, 1.0]) < 1e-12);
    let clean = PosteriorParams::new(1.0, 0.3, 3).unwrap();
    assert!(max_abs_diff(&uniform_reverse_posterior(2, 0, &clean, 3).unwrap(), &[1.0, 0.0, 0.0]) < 1e-12);
    let p = PosteriorParams::new(0.6, 0.3, 2).unwrap();
    let got = uniform_reverse_posterior(1, 0, &p, 2).unwrap();
    let want = bayes_posterior(1, 0, 0.6, 0.3, 2, None).unwrap();
    assert!(max_abs_diff(&got, &want) < 1e-12);
}

#[test]
fn kappa_and_conditional_alpha() {
    let p = PosteriorParams::new(0.8, 0.4, 4).unwrap();
    assert!((p.alpha_t_given_s - 0.5).abs() < 1e-15);
    assert!((p.kappa_t - 0.6 / 2.2).abs() < 1e-15);
    assert!(PosteriorParams::new(0.3, 0.6, 4).is_err());
}

#[test]
fn posteriors_match_bayes_on_random_cases() {
    let mut rng = RngStream::new(99);
    for _ in 0..10_000 {
        let k = 2 + rng.below(4) as usize;
        let (u, v) = (rng.uniform(), rng.uniform());
        let (a_t, a_s) = (u.min(v), u.max(v));
        let x = rng.below(k as u64) as usize;
        let z = rng.below(k as u64) as usize;
        let p = PosteriorParams::new(a_s, a_t, k).unwrap();
        let got = uniform_reverse_posterior(z, x, &p, k).unwrap();
        assert!(max_abs_diff(&got, &bayes_posterior(z, x, a_s, a_t, k, None).unwrap()) < 1e-9);
        let vm = Vocab::with_mask(k).unwrap();
        let zm = if rng.uniform() < 0.5 { x } else { k };
        let pm = PosteriorParams::new(a_s, a_t, k + 1).unwrap();
        let got = masked_reverse_posterior(zm, x, &pm, vm).unwrap();
        assert!(max_abs_diff(&got, &bayes_posterior(zm, x, a_s, a_t, k + 1, Some(k)).unwrap()) < 1e-9);
    }
}

#[test]
fn masks_are_absorbing_as_noise_grows() {
    // With the draws shared, a later time (smaller α) masks a superset of the
    // positions masked earlier and never changes a surviving token.
    let v = Vocab::with_mask(3).unwrap();
    let kernel = masked(3);
    let mut rng = RngStream::new(5);
    for i in 0..2000u64 {
        let x = TokenSequence::clean((0..6).map(|_| rng.below(3) as usize).collect(), v).unwrap();
        let s = rng.uniform();
        let t = s + (1.0 - s) * rng.uniform();
        let z_s = kernel.corrupt_sequence(&x, s, &mut RngStream::new(i)).unwrap();
        let z_t = kernel.corrupt_sequence(&x, t, &mut RngStream::new(i)).unwrap();
        for ((a, b), c) in z_s.tokens().iter().zip(z_t.tokens()).zip(x.tokens()) {
            if *a == 3 {
                assert_eq!(*b, 3);
            }
            assert!(*b == 3 || b == c);
        }
    }
}

#[test]
fn two_stage_corruption_reproduces_the_marginal() {
    // z_s ~ q_s(·|x), then z_t ~ Cat(α_{t|s} z_s + (1 − α_{t|s}) π).
    let (a_s, a_t, k, x) = (0.7, 0.35, 3usize, 1usize);
    let ats = a_t / a_s;
    let mut rng = RngStream::new(11);
    let n = 1_000_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let z_s = if rng.uniform() < a_s { x } else { rng.below(3) as usize };
        let z_t = if rng.uniform() < ats { z_s } else { rng.below(3) as usize };
        counts[z_t] += 1;
    }
    let expect = uniform(k).marginal_at_alpha(x, a_t).unwrap();
    let chi2: f64 = counts
        .iter()
        .zip(&expect)
        .map(|(&c, &p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
        .sum();
    // χ²(2) at p = 0.001 is 13.8.
    assert!(chi2 < 13.8, "chi2 = {chi2}");
}

proptest! {
    #[test]
    fn posteriors_are_normalized(k in 2usize..6, a in 0.0f64..1.0, b in 0.0f64..1.0, x in 0usize..6, z in 0usize..6) {
        let (x, z) = (x % k, z % k);
        let (a_t, a_s) = (a.min(b), a.max(b));
        prop_assume!(a_t > 1e-9);
        let p = PosteriorParams::new(a_s, a_t, k).unwrap();
        let u = uniform_reverse_posterior(z, x, &p, k).unwrap();
        prop_assert!((u.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        prop_assert!(u.iter().all(|&v| v >= 0.0));
        let pm = PosteriorParams::new(a_s, a_t, k + 1).unwrap();
        prop_assume!(a_t < 1.0);
        let m = masked_reverse_posterior(k, x, &pm, Vocab::with_mask(k).unwrap()).unwrap();
        prop_assert!((m.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    }
}
