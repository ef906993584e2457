use stainfield::encoders::{AttnEncoderConfig, Backbone, ConvEncoderConfig};
use stainfield::losses::LossConfig;
use stainfield::model::ModelConfig;
use stainfield::synth::{generate_pair, Mapping, SynthSpec};
use stainfield::training::{train_model, PairedPatch, TrainConfig};

#[test]
fn identity_pair_is_learned() {
    let p = generate_pair(&SynthSpec { seed: 4, size: 16, mapping: Mapping::Pointwise, ..Default::default() }).unwrap();
    let pair = PairedPatch::new(p.source.clone(), p.source, "identity").unwrap();
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 1,
        epochs: usize::MAX,
        max_steps: Some(200),
        model: ModelConfig {
            backbone: Backbone::Fused,
            conv: ConvEncoderConfig { num_layers: 2, output_channels: 8, ..Default::default() },
            attention: AttnEncoderConfig { embed_dim: 16, num_heads: 2, depth: 2, window_size: 8, mlp_ratio: 2, output_channels: 8, ..Default::default() },
            embed_dim: 8,
            hidden: vec![32, 32],
            ..Default::default()
        },
        loss: LossConfig::pixel_only(),
        ..Default::default()
    };
    let run = train_model(&[pair], &cfg).unwrap();
    assert_eq!(run.history.len(), 200);
    let last = run.history.last().unwrap().implicit_loss;
    assert!(last < 0.02, "final implicit loss {last}");
}
