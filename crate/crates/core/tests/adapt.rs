use posture_core::adapt::*;
use posture_core::datagen::{generate_samples, DomainSpec};
use posture_core::poseprov::{OracleProvider, PoseCorruption};
use posture_core::priornet::{PriorConfig, PriorModel};
use posture_core::pseudo::{split_batch, SelectionConfig};
use posture_core::segnet::{pretrain_source, SegConfig, SegModel, TrainSchedule};
use posture_core::{DomainTag, Error, ProbMap, Sample, UnlabeledSet, NUM_CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pm(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ProbMap {
    let mut probs = Vec::with_capacity(h * w * NUM_CLASSES);
    for _ in 0..h * w {
        // Peaked enough that some pixels pass the thresholds.
        let raw: Vec<f32> = (0..NUM_CLASSES)
            .map(|_| rng.random_range(0.0f32..1.0).powi(8) * 20.0 + 0.01)
            .collect();
        let sum: f32 = raw.iter().sum();
        probs.extend(raw.iter().map(|v| v / sum));
    }
    ProbMap::new(h, w, probs).unwrap()
}

/// Per-pixel restatement: confident pixels of each split, pooled.
fn rpl_oracle(pms: &[ProbMap], reliable: &[bool], sel: &SelectionConfig) -> f64 {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (pm, &r) in pms.iter().zip(reliable) {
        let threshold = if r { sel.alpha } else { sel.beta };
        for i in 0..pm.len() {
            let px = pm.pixel(i);
            let (mut best, mut arg) = (px[0], 0);
            for (k, &p) in px.iter().enumerate() {
                if p > best {
                    best = p;
                    arg = k;
                }
            }
            if px[arg] as f64 >= threshold {
                let slot = usize::from(!r);
                sums[slot] -= (px[arg] as f64).ln();
                counts[slot] += 1;
            }
        }
    }
    let lambda = reliable.iter().filter(|&&r| r).count() as f64 / reliable.len() as f64;
    let mean = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
    lambda * mean(sums[0], counts[0]) + (1.0 - lambda) * mean(sums[1], counts[1])
}

#[test]
fn rpl_matches_brute_force_on_three_2x2_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sel = SelectionConfig {
        alpha: 0.5,
        beta: 0.7,
        ..Default::default()
    };
    for _ in 0..200 {
        let pms: Vec<ProbMap> = (0..3).map(|_| random_pm(&mut rng, 2, 2)).collect();
        let scores: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        let split = split_batch(&scores, 0.4);
        let reliable: Vec<bool> = scores.iter().map(|&s| s >= 0.4).collect();
        let got = loss_rpl(&pms, &split, &sel).unwrap();
        let want = rpl_oracle(&pms, &reliable, &sel);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn rpl_with_empty_unreliable_split_is_lambda_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let sel = SelectionConfig::default();
    let pms: Vec<ProbMap> = (0..3).map(|_| random_pm(&mut rng, 2, 2)).collect();
    let split = split_batch(&[0.9, 0.8, 0.7], 0.25);
    assert_eq!(split.lambda, 1.0);
    let want = rpl_oracle(&pms, &[true; 3], &sel);
    assert!((loss_rpl(&pms, &split, &sel).unwrap() - want).abs() < 1e-9);
}

#[test]
fn rpl_rejects_tampered_lambda() {
    let pms = vec![ProbMap::uniform(2, 2); 2];
    let mut split = split_batch(&[0.9, 0.1], 0.5);
    split.lambda = 0.75;
    assert!(matches!(
        loss_rpl(&pms, &split, &SelectionConfig::default()),
        Err(Error::InvalidSplit(_))
    ));
}

struct Fixture {
    seg: SegModel<f32>,
    prior: PriorModel<f32>,
    source: Vec<Sample>,
    target: Vec<Sample>,
    provider: OracleProvider,
}

fn fixture() -> Fixture {
    let source = generate_samples(24, &DomainSpec::source(), 100, 32, DomainTag::Source).unwrap();
    let target = generate_samples(24, &DomainSpec::target(), 200, 32, DomainTag::Target).unwrap();
    let mut seg = SegModel::new(SegConfig { width: 4 }, 3).unwrap();
    let warmup = TrainSchedule {
        epochs: 1,
        iters_per_epoch: 5,
        batch_size: 4,
        lr: 3e-3,
        decay_epochs: vec![],
        decay_factor: 10.0,
    };
    pretrain_source(&mut seg, &source, &warmup, 1).unwrap();
    let prior = PriorModel::new(
        PriorConfig {
            grid: 4,
            width: 8,
            stages: 3,
        },
        4,
    )
    .unwrap();
    let provider = OracleProvider::from_samples(&target, PoseCorruption::adapted(), 5).unwrap();
    Fixture {
        seg,
        prior,
        source,
        target,
        provider,
    }
}

const SEED: u64 = 9;

fn small_config(eta: LossWeights) -> AdaptConfig {
    AdaptConfig {
        eta,
        schedule: TrainSchedule {
            epochs: 2,
            iters_per_epoch: 3,
            batch_size: 4,
            lr: 1e-3,
            decay_epochs: vec![1],
            decay_factor: 10.0,
        },
        ..Default::default()
    }
}

#[test]
fn empty_source_is_rejected() {
    let f = fixture();
    let target = UnlabeledSet::from_samples(&f.target);
    let err = adapt_posture(
        f.seg,
        &f.prior,
        &f.provider,
        &[],
        &target,
        None,
        &small_config(LossWeights::default()),
        SEED,
    )
    .unwrap_err();
    assert!(matches!(err, Error::MissingSourceData));
}

#[test]
fn source_free_with_zero_weights_leaves_parameters_unchanged() {
    let f = fixture();
    let target = UnlabeledSet::from_samples(&f.target);
    let cfg = small_config(LossWeights {
        source: 1.0,
        p2s: 0.0,
        rpl: 0.0,
        pl: 0.0,
    });
    let before = f.seg.params().to_vec();
    let run = adapt_sf(f.seg, &f.prior, &f.provider, &target, None, &cfg, SEED).unwrap();
    assert_eq!(run.model.params(), &before[..]);
}

#[test]
fn source_term_alone_is_continued_source_training() {
    let f = fixture();
    let target = UnlabeledSet::from_samples(&f.target);
    let cfg = small_config(LossWeights {
        source: 1.0,
        p2s: 0.0,
        rpl: 0.0,
        pl: 0.0,
    });
    let mut reference = f.seg.clone();
    pretrain_source(&mut reference, &f.source, &cfg.schedule, SEED).unwrap();
    let run = adapt_posture(
        f.seg,
        &f.prior,
        &f.provider,
        &f.source,
        &target,
        None,
        &cfg,
        SEED,
    )
    .unwrap();
    assert_eq!(run.model.params(), reference.params());
}

#[test]
fn logged_total_is_weighted_sum_of_components() {
    let f = fixture();
    let target = UnlabeledSet::from_samples(&f.target);
    let eta = LossWeights {
        source: 0.7,
        p2s: 1.3,
        rpl: 0.4,
        pl: 0.2,
    };
    let run = adapt_posture(
        f.seg,
        &f.prior,
        &f.provider,
        &f.source,
        &target,
        Some(&f.target),
        &small_config(eta),
        SEED,
    )
    .unwrap();
    let s = &run.steps[0];
    let sum =
        eta.source * s.loss_s + eta.p2s * s.loss_p2s + eta.rpl * s.loss_rpl + eta.pl * s.loss_pl;
    assert!((s.total - sum).abs() < 1e-6);
    assert!(s.loss_s > 0.0 && s.loss_p2s > 0.0);

    assert_eq!(run.records.len(), 2);
    for r in &run.records {
        for v in [
            r.loss_s,
            r.loss_pl,
            r.loss_p2s,
            r.loss_rpl,
            r.loss_total,
            r.lambda_mean,
            r.coverage,
        ] {
            assert!(v.is_finite());
        }
        assert!((0.0..=1.0).contains(&r.coverage));
        assert!((0.0..=1.0).contains(&r.lambda_mean));
        assert!(r.target_miou.is_some());
    }
    assert_eq!(run.records[1].lr, 1e-4);
}

#[test]
fn runs_are_deterministic() {
    let f = fixture();
    let target = UnlabeledSet::from_samples(&f.target);
    let cfg = small_config(LossWeights::default());
    let a = adapt_posture(
        f.seg.clone(),
        &f.prior,
        &f.provider,
        &f.source,
        &target,
        Some(&f.target),
        &cfg,
        SEED,
    )
    .unwrap();
    let b = adapt_posture(
        f.seg,
        &f.prior,
        &f.provider,
        &f.source,
        &target,
        Some(&f.target),
        &cfg,
        SEED,
    )
    .unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.model.params(), b.model.params());
}

#[test]
fn source_free_ignores_source_weight() {
    let f = fixture();
    let target = UnlabeledSet::from_samples(&f.target);
    let run = adapt_sf(
        f.seg,
        &f.prior,
        &f.provider,
        &target,
        None,
        &small_config(LossWeights::default()),
        SEED,
    )
    .unwrap();
    assert!(run
        .steps
        .iter()
        .all(|s| s.loss_s == 0.0 && s.source_batch.is_empty()));
}

#[test]
fn prior_resolution_must_match_target_images() {
    let f = fixture();
    let big = PriorModel::new(
        PriorConfig {
            grid: 4,
            width: 8,
            stages: 4,
        },
        0,
    )
    .unwrap();
    let target = UnlabeledSet::from_samples(&f.target);
    assert!(adapt_sf(
        f.seg,
        &big,
        &f.provider,
        &target,
        None,
        &small_config(LossWeights::default()),
        SEED
    )
    .is_err());
}

#[test]
fn ladder_needs_three_seeds() {
    let f = fixture();
    let target = UnlabeledSet::from_samples(&f.target);
    let setup = SeedSetup {
        seed: 0,
        pretrained: &f.seg,
        prior: &f.prior,
        provider: &f.provider,
        source: &f.source,
        target: &target,
        eval: &f.target,
    };
    assert!(matches!(
        ablation_ladder(&[setup], &small_config(LossWeights::default())),
        Err(Error::Config(_))
    ));
}

#[test]
fn first_rung_is_the_pretrained_evaluation() {
    let f = fixture();
    let target = UnlabeledSet::from_samples(&f.target);
    let setup = SeedSetup {
        seed: 0,
        pretrained: &f.seg,
        prior: &f.prior,
        provider: &f.provider,
        source: &f.source,
        target: &target,
        eval: &f.target,
    };
    let base = small_config(LossWeights::default());
    let rung = run_rung(&setup, &base, LADDER[0].eta).unwrap();
    let direct = posture_core::segnet::evaluate(&f.seg, &f.target)
        .unwrap()
        .mean;
    assert_eq!(rung, direct);
}
