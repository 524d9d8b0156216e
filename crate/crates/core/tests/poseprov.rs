use posture_core::datagen::{generate_samples, DomainSpec};
use posture_core::poseprov::{OracleProvider, PoseCorruption, PoseProvider};
use posture_core::{DomainTag, NUM_JOINTS};

#[test]
fn keypoint_error_grows_with_jitter() {
    let samples = generate_samples(500, &DomainSpec::target(), 40, 32, DomainTag::Target).unwrap();
    let mean_error = |jitter_std: f64| {
        let c = PoseCorruption {
            jitter_std,
            ..PoseCorruption::none()
        };
        let provider = OracleProvider::from_samples(&samples, c, 2).unwrap();
        let (mut total, mut n) = (0.0, 0usize);
        for s in &samples {
            let truth = s.keypoints.unwrap();
            let est = provider.estimate(s.id, &s.image).unwrap();
            for j in (0..NUM_JOINTS).filter(|&j| truth.visible[j]) {
                let dx = (est.coords[j][0] - truth.coords[j][0]) as f64;
                let dy = (est.coords[j][1] - truth.coords[j][1]) as f64;
                total += dx.hypot(dy);
                n += 1;
            }
        }
        total / n as f64
    };
    let errors: Vec<f64> = [0.0, 0.02, 0.06].into_iter().map(mean_error).collect();
    assert_eq!(errors[0], 0.0);
    assert!(errors.windows(2).all(|w| w[1] > w[0]), "{errors:?}");
}

#[test]
fn certain_miss_hides_every_joint() {
    let samples = generate_samples(20, &DomainSpec::target(), 1, 32, DomainTag::Target).unwrap();
    let c = PoseCorruption {
        miss_rate: 1.0,
        ..PoseCorruption::none()
    };
    let provider = OracleProvider::from_samples(&samples, c, 0).unwrap();
    for s in &samples {
        let est = provider.estimate(s.id, &s.image).unwrap();
        assert!(est.visible.iter().all(|v| !v));
        assert!(est.coords.iter().all(|c| *c == [0.0, 0.0]));
    }
}

#[test]
fn unknown_image_is_an_error() {
    let provider = OracleProvider::from_samples(&[], PoseCorruption::adapted(), 0).unwrap();
    let img = posture_core::Image::filled(8, 8, [0.0; 3]);
    assert!(matches!(
        provider.estimate(7, &img),
        Err(posture_core::Error::UnknownImage(7))
    ));
}
