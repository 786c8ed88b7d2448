use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sixchan_core::dataset::{generate_splits, night_oracle_params, Domain, ImageSet, SceneConfig};
use sixchan_core::sixchannel::{compute_norm_stats, concat6, expand_first_layer, normalize, ChannelOrder, PairedSplit};
use sixchan_core::translate::{translate_split, Direction, TranslatorPair};
use sixchan_nn::{Conv2d, ConvSpec, Tensor};

fn doubled(x: &Tensor<f32>) -> Tensor<f32> {
    let mut data = x.data.clone();
    data.extend_from_slice(&x.data);
    Tensor::from_vec(6, x.height, x.width, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn expansion_on_duplicated_input(seed in any::<u64>(), out in 1usize..6, halve in any::<bool>(), data in prop::collection::vec(-2.0f32..2.0, 3 * 7 * 7)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = Conv2d::<f32>::normal(ConvSpec::new(3, out, 3, 1, 1), 0.4, &mut rng);
        let six = expand_first_layer(&conv, halve).unwrap();
        prop_assert_eq!(&six.bias.value, &conv.bias.value);
        let x = Tensor::from_vec(3, 7, 7, data).unwrap();
        let y3 = conv.forward(&x).unwrap();
        let y6 = six.forward(&doubled(&x)).unwrap();
        let factor = if halve { 1.0 } else { 2.0 };
        let plane = 49;
        for (i, (a, b)) in y3.data.iter().zip(&y6.data).enumerate() {
            let bias = conv.bias.value[i / plane];
            prop_assert!((factor * (a - bias) - (b - bias)).abs() <= 1e-5);
        }
    }
}

#[test]
fn expansion_needs_three_channels() {
    let conv = Conv2d::<f32>::zeros(ConvSpec::new(6, 2, 3, 1, 1));
    assert!(expand_first_layer(&conv, true).is_err());
}

#[test]
fn channel_orders_place_halves() {
    let cfg = SceneConfig {
        image_size: 32,
        car_size: (8, 16),
        ..SceneConfig::default()
    };
    let splits = generate_splits(&cfg, 3).unwrap();
    let pair = TranslatorPair::oracle(Domain::Day, night_oracle_params(&cfg)).unwrap();
    let night = &splits[1];
    let fake_day = translate_split(&pair, night, Direction::Backward).unwrap();

    let real_first = concat6(&night.samples[0], &fake_day.samples[0], ChannelOrder::RealFirst).unwrap();
    assert_eq!(real_first.data.slice_channels(0, 3), night.samples[0].image);
    assert_eq!(real_first.data.slice_channels(3, 6), fake_day.samples[0].image);
    let day_first = concat6(&night.samples[0], &fake_day.samples[0], ChannelOrder::DayFirst).unwrap();
    assert_eq!(day_first.data.slice_channels(0, 3), fake_day.samples[0].image);
    assert_eq!(day_first.annotations, night.samples[0].annotations);
    assert_eq!(day_first.real_domain, Domain::Night);

    assert!(concat6(&fake_day.samples[0], &night.samples[0], ChannelOrder::RealFirst).is_err());
    assert!(concat6(&night.samples[0], &fake_day.samples[1], ChannelOrder::RealFirst).is_err());

    let mut shuffled = fake_day.clone();
    shuffled.samples.reverse();
    let paired = PairedSplit::new(night, &shuffled, ChannelOrder::RealFirst).unwrap();
    assert_eq!(paired.len(), 3);
    for i in 0..3 {
        assert_eq!(paired.sample(i).unwrap().source_ids.1, format!("fake-{}", night.samples[i].id));
        assert_eq!(paired.boxes(i), night.samples[i].boxes());
    }
    shuffled.samples.pop();
    assert!(PairedSplit::new(night, &shuffled, ChannelOrder::RealFirst).is_err());
}

#[test]
fn six_channel_statistics_extend_three_channel_ones() {
    let cfg = SceneConfig {
        image_size: 32,
        car_size: (8, 16),
        ..SceneConfig::default()
    };
    let splits = generate_splits(&cfg, 4).unwrap();
    let pair = TranslatorPair::oracle(Domain::Day, night_oracle_params(&cfg)).unwrap();
    let fake = translate_split(&pair, &splits[0], Direction::Forward).unwrap();
    let paired = PairedSplit::new(&splits[0], &fake, ChannelOrder::RealFirst).unwrap();
    let six = compute_norm_stats(&paired, 6).unwrap();
    let real = compute_norm_stats(&splits[0], 3).unwrap();
    let translated = compute_norm_stats(&fake, 3).unwrap();
    let joined = real.concat(&translated);
    for c in 0..6 {
        assert!((six.mean[c] - joined.mean[c]).abs() < 1e-12);
        assert!((six.std[c] - joined.std[c]).abs() < 1e-12);
    }
    let z = normalize(&paired.image(0).unwrap(), &six).unwrap();
    assert_eq!(z.channels(), 6);
}
