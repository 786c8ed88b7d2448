use proptest::prelude::*;
use sixchan_core::dataset::{generate_splits, Authenticity, DatasetSplit, Domain, ImageBuffer, SceneConfig, ValueRange};
use sixchan_core::translate::{cycle_loss, train_translator, translate, translate_split, Direction, GanHyperparams, OracleParams, TranslatorKind, TranslatorPair};

fn arb_params() -> impl Strategy<Value = OracleParams> {
    (prop::array::uniform3(0.1f32..1.0), 0.4f32..3.0).prop_map(|(gain, gamma)| OracleParams { gain, gamma })
}

fn arb_image(side: usize) -> impl Strategy<Value = ImageBuffer> {
    prop::collection::vec(0.0f32..=1.0, 3 * side * side).prop_map(move |data| ImageBuffer::new(side, side, 3, ValueRange::Unit01, data).unwrap())
}

fn max_diff(a: &ImageBuffer, b: &ImageBuffer) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn small_splits() -> Vec<DatasetSplit> {
    let cfg = SceneConfig {
        image_size: 64,
        car_size: (12, 30),
        ..SceneConfig::default()
    };
    generate_splits(&cfg, 4).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_round_trip(params in arb_params(), img in arb_image(8)) {
        let pair = TranslatorPair::oracle(Domain::Day, params).unwrap();
        let night = translate(&pair, &img, Direction::Forward).unwrap();
        let back = translate(&pair, &night, Direction::Backward).unwrap();
        prop_assert!(max_diff(&img, &back) <= 1e-6);
        prop_assert_eq!(night.range(), ValueRange::Unit01);
    }

    #[test]
    fn oracle_round_trip_in_symmetric_range(gain in prop::array::uniform3(0.1f32..1.0), gamma in 0.4f32..1.0, img in arb_image(8)) {
        let params = OracleParams { gain, gamma };
        let pair = TranslatorPair::oracle(Domain::Day, params).unwrap();
        let sym = img.to_range(ValueRange::Sym11);
        let back = translate(&pair, &translate(&pair, &sym, Direction::Forward).unwrap(), Direction::Backward).unwrap();
        prop_assert_eq!(back.range(), ValueRange::Sym11);
        prop_assert!(max_diff(&sym, &back) <= 1e-5);
    }

    #[test]
    fn forward_darkens(params in arb_params(), img in arb_image(4)) {
        let pair = TranslatorPair::oracle(Domain::Day, params).unwrap();
        let night = translate(&pair, &img, Direction::Forward).unwrap();
        for (c, (x, y)) in img.data().iter().zip(night.data()).enumerate() {
            let g = params.gain[c / 16] as f64;
            let expected = (g * *x as f64).powf(params.gamma as f64);
            prop_assert!((*y as f64 - expected).abs() < 1e-6);
        }
    }
}

#[test]
fn fake_splits_keep_annotations() {
    let splits = small_splits();
    let pair = TranslatorPair::oracle(Domain::Day, sixchan_core::dataset::night_oracle_params(&SceneConfig::default())).unwrap();
    let fake = translate_split(&pair, &splits[0], Direction::Forward).unwrap();
    assert_eq!(fake.name, "fake-train-night");
    assert_eq!(fake.len(), splits[0].len());
    for (real, f) in splits[0].samples.iter().zip(&fake.samples) {
        assert_eq!(f.id, format!("fake-{}", real.id));
        assert_eq!(f.annotations, real.annotations);
        assert_eq!(f.domain, Domain::Night);
        assert_eq!(f.authenticity, Authenticity::Fake);
        assert!(f.image.data().iter().all(|v| ((v * 255.0).round() - v * 255.0).abs() < 1e-3));
    }
    let back = translate_split(&pair, &splits[3], Direction::Backward).unwrap();
    assert_eq!(back.name, "fake-test-day");
    assert!(back.samples.iter().all(|s| s.domain == Domain::Day));
}

#[test]
fn learned_pair_round_trips_through_disk() {
    let splits = small_splits();
    let hp = GanHyperparams {
        epochs: 1,
        steps_per_epoch: Some(2),
        crop_size: 32,
        base_filters: 4,
        residual_blocks: 1,
        ..GanHyperparams::default()
    };
    let pair = train_translator(&splits[0], &splits[1], &hp).unwrap();
    assert_eq!(pair.kind(), TranslatorKind::Learned);
    assert_eq!(pair.history.len(), 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("translator.bin");
    pair.save(&path).unwrap();
    let loaded = TranslatorPair::load(&path).unwrap();
    assert_eq!(loaded, pair);
    let img = &splits[2].samples[0].image;
    let out = translate(&loaded, img, Direction::Forward).unwrap();
    assert_eq!(out, translate(&pair, img, Direction::Forward).unwrap());
    assert_eq!((out.height(), out.width(), out.channels(), out.range()), (64, 64, 3, img.range()));
    let rec = translate(&loaded, &out, Direction::Backward).unwrap();
    assert!(cycle_loss(img, &rec).unwrap() >= 0.0);
}

#[test]
fn learned_training_is_deterministic() {
    let splits = small_splits();
    let hp = GanHyperparams {
        epochs: 1,
        steps_per_epoch: Some(2),
        crop_size: 32,
        base_filters: 4,
        residual_blocks: 1,
        seed: 7,
        ..GanHyperparams::default()
    };
    let a = train_translator(&splits[0], &splits[1], &hp).unwrap();
    let b = train_translator(&splits[0], &splits[1], &hp).unwrap();
    assert_eq!(a, b);
}
