use posture_core::datagen::{generate_samples, DomainSpec};
use posture_core::metrics::miou_image;
use posture_core::priornet::{
    prior_pseudo, train_prior, PriorConfig, PriorModel, PriorTrainConfig,
};
use posture_core::segnet::{evaluate, pretrain_source, SegConfig, SegModel, TrainSchedule};
use posture_core::DomainTag;

fn source(n: usize, seed: u64) -> Vec<posture_core::Sample> {
    generate_samples(n, &DomainSpec::source(), seed, 64, DomainTag::Source).unwrap()
}

#[test]
fn segmenter_memorizes_four_images() {
    let train = source(4, 21);
    let mut model = SegModel::new(SegConfig::default(), 0).unwrap();
    let schedule = TrainSchedule {
        epochs: 1,
        iters_per_epoch: 300,
        batch_size: 4,
        lr: 6e-3,
        decay_epochs: vec![],
        decay_factor: 10.0,
    };
    pretrain_source(&mut model, &train, &schedule, 0).unwrap();
    let miou = evaluate(&model, &train).unwrap().mean;
    assert!(miou >= 0.95, "training mIoU {miou:.4}");
}

#[test]
fn prior_memorizes_a_single_pair() {
    let pair = source(1, 8);
    let mut model = PriorModel::new(PriorConfig::default(), 0).unwrap();
    let cfg = PriorTrainConfig {
        epochs: 500,
        batch_size: 1,
        lr: 2e-3,
        mirror_augment: false,
    };
    train_prior(&mut model, &pair, &cfg, 0).unwrap();
    let want = pair[0].mask.as_ref().unwrap();
    let got = prior_pseudo(&model, pair[0].keypoints.as_ref().unwrap());
    let hits = got
        .labels()
        .iter()
        .zip(want.labels())
        .filter(|(a, b)| a == b)
        .count();
    let acc = hits as f64 / want.len() as f64;
    assert!(acc >= 0.99, "pixel accuracy {acc:.4}");
}

#[test]
fn prior_training_descends_and_respects_mirroring() {
    let train = source(300, 100);
    let mut model = PriorModel::new(PriorConfig::default(), 1).unwrap();
    let cfg = PriorTrainConfig {
        epochs: 10,
        ..PriorTrainConfig::default()
    };
    let logs = train_prior(&mut model, &train, &cfg, 1).unwrap();
    for w in logs.windows(2) {
        assert!(
            w[1].loss < w[0].loss,
            "loss rose at epoch {}: {} -> {}",
            w[1].epoch,
            w[0].loss,
            w[1].loss
        );
    }
    let probes = source(40, 900);
    let mut worst = 1.0f64;
    let mut total = 0.0;
    for s in &probes {
        let kp = s.keypoints.as_ref().unwrap();
        let direct = prior_pseudo(&model, kp);
        let flipped = prior_pseudo(&model, &kp.mirrored()).mirrored();
        let m = miou_image(&flipped, &direct).unwrap();
        worst = worst.min(m);
        total += m;
    }
    let mean = total / probes.len() as f64;
    assert!(
        mean >= 0.8,
        "mirror agreement mean {mean:.3}, worst {worst:.3}"
    );
}
