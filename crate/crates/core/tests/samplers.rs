mod common;

use std::collections::BTreeMap;

use common::{normals, total_variation};
use difflab::denoisers::{optimal_tabular_denoiser, Denoiser, TabularDenoiser, VisibilitySpec};
use difflab::processes::ForwardKernel;
use difflab::rng::RngStream;
use difflab::samplers::{
    eso_block_schedule, generate, generate_many, modeled_cost, sample_ancestral, sample_ar, sample_eso_block,
    SamplerConfig, SamplerFamily,
};
use difflab::schedule::NoiseSchedule;
use difflab::training::SyntheticLanguage;
use difflab::vocab::{TokenSequence, Vocab};
use difflab::Error;

fn masked_optimum(lang: &SyntheticLanguage) -> TabularDenoiser {
    let vocab = Vocab::with_mask(lang.data_tokens()).unwrap();
    optimal_tabular_denoiser(lang, &ForwardKernel::masked(NoiseSchedule::Linear, vocab).unwrap(), 1).unwrap()
}

fn empirical(samples: impl Iterator<Item = Vec<usize>>) -> BTreeMap<Vec<usize>, f64> {
    let mut counts = BTreeMap::new();
    let mut n = 0.0;
    for s in samples {
        *counts.entry(s).or_insert(0.0) += 1.0;
        n += 1.0;
    }
    counts.values_mut().for_each(|c| *c /= n);
    counts
}

#[test]
fn greedy_ar_on_a_deterministic_language() {
    let lang = SyntheticLanguage::deterministic(vec![1, 0, 2, 2, 1], 3).unwrap();
    let model = masked_optimum(&lang);
    let tr = sample_ar(&model, true, &mut RngStream::new(0)).unwrap();
    assert_eq!(tr.sample.tokens(), &[1, 0, 2, 2, 1]);
    assert_eq!(tr.nfe, 5);
    let tr = sample_ar(&model, false, &mut RngStream::new(9)).unwrap();
    assert_eq!(tr.nfe, 5);
}

#[test]
fn ar_samples_reproduce_chain_bigrams() {
    let (stay0, stay1) = (0.8, 0.6);
    let lang = SyntheticLanguage::markov(vec![vec![stay0, 1.0 - stay0], vec![1.0 - stay1, stay1]], 4).unwrap();
    let model = masked_optimum(&lang);
    let cfg = SamplerConfig::new(SamplerFamily::Ar);
    let traces = generate_many(&model, &cfg, 100_000, 4).unwrap();
    let mut counts = [[0.0f64; 2]; 2];
    for tr in &traces {
        for w in tr.sample.tokens().windows(2) {
            counts[w[0]][w[1]] += 1.0;
        }
    }
    // Chi-square of transitions given the previous token (2 dof).
    let probs = [[stay0, 1.0 - stay0], [1.0 - stay1, stay1]];
    let mut chi2 = 0.0;
    for a in 0..2 {
        let n: f64 = counts[a].iter().sum();
        for b in 0..2 {
            let e = n * probs[a][b];
            chi2 += (counts[a][b] - e).powi(2) / e;
        }
    }
    assert!(chi2 < 13.8, "chi2 = {chi2}");
}

/// Exact output law of the masked ancestral sampler on the grid `i/T`: at a
/// step from `t` to `s`, every masked position independently reveals with
/// probability `(α_s − α_t)/(1 − α_t)`, drawing from the prediction made for
/// the current state; leftover masks decode from the last prediction.
fn exact_masked_sampler(model: &dyn Denoiser, steps: usize) -> BTreeMap<Vec<usize>, f64> {
    let vocab = model.vocab();
    let (k, mask) = (vocab.data_size(), vocab.mask().unwrap());
    let len = model.seq_len();
    let vis = VisibilitySpec::bidirectional();
    let mut states: BTreeMap<Vec<usize>, f64> = BTreeMap::from([(vec![mask; len], 1.0)]);
    for i in (1..=steps).rev() {
        let (t, s) = (i as f64 / steps as f64, (i - 1) as f64 / steps as f64);
        let (a_t, a_s) = (1.0 - t, 1.0 - s);
        let reveal = (a_s - a_t) / (1.0 - a_t);
        let mut next = BTreeMap::new();
        for (z, p) in states {
            let pred = model.predict(&TokenSequence::new(z.clone(), vocab).unwrap(), t, &vis).unwrap();
            // Each masked position: stay masked, or become token v.
            let mut partial: Vec<(Vec<usize>, f64)> = vec![(z.clone(), p)];
            for l in (0..len).filter(|&l| z[l] == mask) {
                partial = partial
                    .into_iter()
                    .flat_map(|(w, q)| {
                        let mut out = vec![(w.clone(), q * (1.0 - reveal))];
                        for v in 0..k {
                            let mut w2 = w.clone();
                            w2[l] = v;
                            out.push((w2, q * reveal * pred.row(l)[v]));
                        }
                        out
                    })
                    .collect();
            }
            for (w, q) in partial {
                *next.entry(w).or_insert(0.0) += q;
            }
        }
        states = next;
    }
    states.retain(|_, p| *p > 0.0);
    states
}

#[test]
fn masked_ancestral_law_matches_enumeration() {
    let vocab = Vocab::with_mask(2).unwrap();
    let n = TabularDenoiser::entry_count(vocab, 2, 1).unwrap() * 3;
    let model = TabularDenoiser::from_logits(vocab, 2, 1, normals(n, 5)).unwrap();
    for steps in [1, 2, 5] {
        let exact = exact_masked_sampler(&model, steps);
        let cfg = SamplerConfig::new(SamplerFamily::AncestralMasked).with_steps(steps);
        let emp = empirical(generate_many(&model, &cfg, 200_000, steps as u64).unwrap().into_iter().map(|t| t.sample.into_tokens()));
        let tv = total_variation(&emp, &exact);
        assert!(tv < 0.005, "T = {steps}: TV {tv}");
    }
}

#[test]
fn single_step_decodes_every_position_from_the_all_mask_prediction() {
    let vocab = Vocab::with_mask(3).unwrap();
    let n = TabularDenoiser::entry_count(vocab, 2, 1).unwrap() * 4;
    let model = TabularDenoiser::from_logits(vocab, 2, 1, normals(n, 6)).unwrap();
    let pred = model.predict(&TokenSequence::all_masked(2, vocab).unwrap(), 1.0, &VisibilitySpec::bidirectional()).unwrap();
    let mut exact = BTreeMap::new();
    for a in 0..3 {
        for b in 0..3 {
            exact.insert(vec![a, b], pred.row(0)[a] * pred.row(1)[b]);
        }
    }
    let cfg = SamplerConfig::new(SamplerFamily::AncestralMasked).with_steps(1);
    let traces = generate_many(&model, &cfg, 200_000, 1).unwrap();
    assert!(traces.iter().all(|t| t.nfe == 1 && t.per_step_unmask_sets.len() == 1));
    let emp = empirical(traces.into_iter().map(|t| t.sample.into_tokens()));
    assert!(total_variation(&emp, &exact) < 0.005);
}

#[test]
fn masked_traces_decode_each_position_once() {
    let lang = SyntheticLanguage::markov(vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.8, 0.1], vec![0.3, 0.3, 0.4]], 6).unwrap();
    let model = masked_optimum(&lang);
    for steps in [1, 3, 6, 20, 100] {
        for seed in 0..50 {
            let tr = sample_ancestral(&model, NoiseSchedule::Cosine, steps, false, seed % 2 == 0, &mut RngStream::new(seed)).unwrap();
            let mut seen: Vec<usize> = tr.per_step_unmask_sets.iter().flatten().copied().collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..6).collect::<Vec<_>>());
            assert!(tr.nfe <= steps);
            assert!(tr.sample.is_clean());
        }
    }
}

#[test]
fn uniform_ancestral_samples_stay_in_vocabulary() {
    let lang = SyntheticLanguage::two_state(0.9, 3).unwrap();
    let vocab = Vocab::without_mask(2).unwrap();
    let model = optimal_tabular_denoiser(&lang, &ForwardKernel::uniform(NoiseSchedule::Linear, vocab).unwrap(), 16).unwrap();
    let tr = sample_ancestral(&model, NoiseSchedule::Linear, 16, true, false, &mut RngStream::new(2)).unwrap();
    assert_eq!(tr.nfe, 16);
    assert!(tr.sample.tokens().iter().all(|&t| t < 2));
}

#[test]
fn eso_block_schedules() {
    assert_eq!(eso_block_schedule(8, 4).unwrap(), vec![vec![0, 4], vec![1, 5], vec![2, 6], vec![3, 7]]);
    assert_eq!(eso_block_schedule(5, 5).unwrap(), (0..5).map(|i| vec![i]).collect::<Vec<_>>());
    assert_eq!(eso_block_schedule(6, 1).unwrap(), vec![vec![0, 1, 2, 3, 4, 5]]);
    assert!(matches!(eso_block_schedule(8, 3), Err(Error::Config(_))));
    for (len, lp) in [(12, 3), (12, 4), (16, 8)] {
        let sets = eso_block_schedule(len, lp).unwrap();
        assert_eq!(sets.len(), lp);
        let mut all: Vec<usize> = sets.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..len).collect::<Vec<_>>());
        for s in &sets {
            assert!(s.windows(2).all(|w| w[1] - w[0] >= lp));
        }
    }
}

#[test]
fn eso_block_trace_and_costs() {
    let lang = SyntheticLanguage::markov(vec![vec![0.6, 0.4], vec![0.3, 0.7]], 8).unwrap();
    let model = masked_optimum(&lang);
    let n = model.param_count() as f64;
    let tr = sample_eso_block(&model, 4, false, &mut RngStream::new(1)).unwrap();
    assert_eq!(tr.nfe, 4);
    assert_eq!(tr.per_step_unmask_sets, vec![vec![0, 4], vec![1, 5], vec![2, 6], vec![3, 7]]);
    // Cached block decoding costs one full-sequence pass whatever L' is.
    let full = 2.0 * n * 8.0;
    for lp in [1, 2, 4, 8] {
        let tr = sample_eso_block(&model, lp, false, &mut RngStream::new(1)).unwrap();
        assert_eq!(modeled_cost(&tr, n, SamplerFamily::EsoBlock, true), full);
        assert_eq!(tr.modeled_cost, full);
        assert_eq!(modeled_cost(&tr, n, SamplerFamily::EsoBlock, false), lp as f64 * full);
    }
    // Masked ancestral sampling with T = L and no cache: T × 2NL, which is L×
    // the cached block cost.
    let cfg = SamplerConfig::new(SamplerFamily::AncestralMasked).with_steps(8);
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let tr = generate(&model, &cfg, &mut RngStream::new(seed)).unwrap();
        let c = modeled_cost(&tr, n, SamplerFamily::AncestralMasked, false);
        assert_eq!(c, tr.nfe as f64 * full);
        worst = worst.max(c);
    }
    assert!(worst <= 8.0 * full);
    let no_reuse = difflab::samplers::GenerationTrace { nfe: 8, ..generate(&model, &cfg, &mut RngStream::new(0)).unwrap() };
    assert_eq!(modeled_cost(&no_reuse, n, SamplerFamily::AncestralMasked, false), 8.0 * full);
}

#[test]
fn traces_are_seed_reproducible() {
    let lang = SyntheticLanguage::markov(vec![vec![0.6, 0.4], vec![0.3, 0.7]], 4).unwrap();
    let model = masked_optimum(&lang);
    for family in [SamplerFamily::Ar, SamplerFamily::AncestralMasked, SamplerFamily::EsoBlock] {
        let mut cfg = SamplerConfig::new(family).with_steps(7);
        if family == SamplerFamily::EsoBlock {
            cfg = cfg.with_block_spacing(2);
        }
        assert_eq!(generate_many(&model, &cfg, 64, 3).unwrap(), generate_many(&model, &cfg, 64, 3).unwrap());
    }
}

#[test]
fn block_spacing_must_divide_the_length() {
    let lang = SyntheticLanguage::two_state(0.7, 6).unwrap();
    let model = masked_optimum(&lang);
    let cfg = SamplerConfig::new(SamplerFamily::EsoBlock).with_block_spacing(4);
    assert!(matches!(generate(&model, &cfg, &mut RngStream::new(0)), Err(Error::Config(_))));
}
