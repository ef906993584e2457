//! Randomized invariants across module boundaries.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stainfield::encoders::{AttnEncoderConfig, Backbone, ConvEncoderConfig};
use stainfield::evaluation::fid_from_embeddings;
use stainfield::grid::{make_grid, nearest_pixel};
use stainfield::inference::{translate, Scale};
use stainfield::losses::{implicit_loss, total_loss, PerceptualSpec};
use stainfield::model::{ImplicitModel, ModelConfig};
use stainfield::synth::{apply_mapping, generate, Mapping, SynthSpec};
use stainfield::RasterImage;

fn image(h: usize, w: usize, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RasterImage::from_fn(h, w, 3, |_, _, _| rng.random_range(0.0..1.0)).unwrap()
}

fn tiny(backbone: Backbone) -> ImplicitModel {
    ImplicitModel::new(ModelConfig {
        backbone,
        conv: ConvEncoderConfig { num_layers: 2, output_channels: 4, ..Default::default() },
        attention: AttnEncoderConfig { embed_dim: 8, num_heads: 2, depth: 2, window_size: 4, mlp_ratio: 2, output_channels: 4, ..Default::default() },
        embed_dim: 4,
        hidden: vec![8],
        seed: 1,
        ..Default::default()
    })
    .unwrap()
}

fn backbone() -> impl Strategy<Value = Backbone> {
    prop_oneof![Just(Backbone::Fused), Just(Backbone::ConvOnly), Just(Backbone::AttentionOnly)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encoders_keep_resolution_and_are_deterministic(h in 1usize..14, w in 1usize..14, b in backbone(), seed in 0u64..1000) {
        let m = tiny(b);
        let img = image(h, w, seed);
        let a = m.encode(&img).unwrap();
        prop_assert_eq!((a.height(), a.width()), (h, w));
        let again = m.encode(&img).unwrap();
        prop_assert!(a.data().iter().zip(again.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn output_size_is_rounded_scale(h in 1usize..40, w in 1usize..40, s in prop_oneof![Just((1u64, 2u64)), Just((1, 1)), Just((2, 1)), Just((4, 1))]) {
        let scale = Scale::new(s.0, s.1).unwrap();
        let expect = |n: usize| ((n as f64 * s.0 as f64 / s.1 as f64) + 0.5).floor() as usize;
        match scale.output_size(h, w) {
            Ok(dims) => prop_assert_eq!(dims, (expect(h), expect(w))),
            Err(_) => prop_assert!(expect(h) == 0 || expect(w) == 0),
        }
    }

    #[test]
    fn scale_text_round_trips(num in 1u64..50, den in 1u64..50) {
        let s = Scale::new(num, den).unwrap();
        prop_assert_eq!(s.to_string().parse::<Scale>().unwrap(), s);
    }

    #[test]
    fn grid_points_resolve_to_their_pixel(h in 1usize..64, w in 1usize..64) {
        let g = make_grid(h, w).unwrap();
        for r in 0..h {
            for c in 0..w {
                let p = g.get(r, c);
                prop_assert!(p.iter().all(|v| *v > -1.0 && *v < 1.0));
                prop_assert_eq!(nearest_pixel(p, h, w), (r, c));
            }
        }
    }

    #[test]
    fn translation_is_bit_identical_across_runs(h in 2usize..10, w in 2usize..10, seed in 0u64..1000) {
        let m = tiny(Backbone::Fused);
        let img = image(h, w, seed);
        let scale = Scale::new(3, 2).unwrap();
        let a = translate(&m, &img, scale, None).unwrap();
        let b = translate(&m, &img, scale, None).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn implicit_loss_is_a_symmetric_distance(h in 1usize..8, w in 1usize..8, s1 in 0u64..500, s2 in 500u64..1000) {
        let (a, b) = (image(h, w, s1), image(h, w, s2));
        let ab = implicit_loss(&a, &b).unwrap();
        prop_assert!(ab > 0.0);
        prop_assert_eq!(ab, implicit_loss(&b, &a).unwrap());
        prop_assert_eq!(implicit_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_grows_with_lambda(l1 in 0.0f64..3.0, dl in 0.0f64..3.0, s in 0u64..1000) {
        let (a, b) = (image(6, 6, s), image(6, 6, s + 1));
        let lo = total_loss(&a, &b, &[PerceptualSpec::identity(l1)]).unwrap().total;
        let hi = total_loss(&a, &b, &[PerceptualSpec::identity(l1 + dl)]).unwrap().total;
        prop_assert!(hi >= lo);
    }

    #[test]
    fn fid_is_symmetric(n in 2usize..30, m in 2usize..30, dim in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = |k: usize, shift: f64| -> Vec<Vec<f64>> {
            (0..k).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0) + shift).collect()).collect()
        };
        let (a, b) = (set(n, 0.0), set(m, 0.5));
        let (ab, ba) = (fid_from_embeddings(&a, &b).unwrap().0, fid_from_embeddings(&b, &a).unwrap().0);
        prop_assert!((ab - ba).abs() <= 1e-8 * ab.abs().max(1.0));
        prop_assert!(fid_from_embeddings(&a, &a).unwrap().0 <= 1e-8);
    }

    #[test]
    fn generated_targets_are_recomputable(seed in 0u64..10_000, m in prop_oneof![Just(Mapping::Pointwise), Just(Mapping::Contextual), Just(Mapping::Longrange)]) {
        let pair = generate(&SynthSpec { seed, size: 16, mapping: m, ..Default::default() }).unwrap();
        let again = apply_mapping(m, &pair.clean).unwrap();
        prop_assert_eq!(&again, &pair.pair.target);
    }
}
