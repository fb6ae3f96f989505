//! Patch encoder / decoder.
//!
//! The encoder halves the resolution three times (channels L/4, L/2, L) and
//! keeps the activations of the first two stages as skip connections. The
//! bottleneck plane becomes a row-major token sequence for the fusion stage;
//! the decoder mirrors the encoder with nearest-neighbor upsampling and skip
//! concatenation, ending in per-pixel class logits.

use crate::config::ModelConfig;
use crate::model::Init;
use crate::params::TapeParams;
use crate::tape::{Tape, Var};
use crate::tensor::Real;

pub fn codec_param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let l = cfg.latent_dim;
    let k = cfg.classes;
    vec![
        ("enc.conv1.w".into(), vec![l / 4, 3, 3, 3], Init::Glorot),
        ("enc.conv1.b".into(), vec![l / 4], Init::Zeros),
        ("enc.conv2.w".into(), vec![l / 2, l / 4, 3, 3], Init::Glorot),
        ("enc.conv2.b".into(), vec![l / 2], Init::Zeros),
        ("enc.conv3.w".into(), vec![l, l / 2, 3, 3], Init::Glorot),
        ("enc.conv3.b".into(), vec![l], Init::Zeros),
        ("dec.conv1.w".into(), vec![l / 2, l + l / 2, 3, 3], Init::Glorot),
        ("dec.conv1.b".into(), vec![l / 2], Init::Zeros),
        ("dec.conv2.w".into(), vec![l / 4, l / 2 + l / 4, 3, 3], Init::Glorot),
        ("dec.conv2.b".into(), vec![l / 4], Init::Zeros),
        ("dec.out.w".into(), vec![k, l / 4, 3, 3], Init::Glorot),
        ("dec.out.b".into(), vec![k], Init::Zeros),
    ]
}

/// Encoder output: bottleneck tokens plus the two skip activations.
pub struct Encoded {
    /// `[b*b, L]` token rows in row-major bottleneck order.
    pub tokens: Var,
    /// `[1, L/4, h/2, h/2]`
    pub skip1: Var,
    /// `[1, L/2, h/4, h/4]`
    pub skip2: Var,
    /// Bottleneck edge length `b = h / 8`.
    pub grid: usize,
}

/// Encodes one patch `[1, 3, h, h]` (h a multiple of 8).
pub fn encode_patch<T: Real>(tape: &mut Tape<T>, tp: &TapeParams, patch: Var) -> Encoded {
    let h = tape.value(patch).dim(2);
    let c1 = tape.conv2d(patch, tp.var("enc.conv1.w"), tp.var("enc.conv1.b"), 2, 1);
    let skip1 = tape.relu(c1);
    let c2 = tape.conv2d(skip1, tp.var("enc.conv2.w"), tp.var("enc.conv2.b"), 2, 1);
    let skip2 = tape.relu(c2);
    let c3 = tape.conv2d(skip2, tp.var("enc.conv3.w"), tp.var("enc.conv3.b"), 2, 1);
    let bottom = tape.relu(c3);
    let tokens = tape.tokens_from_map(bottom);
    Encoded {
        tokens,
        skip1,
        skip2,
        grid: h / 8,
    }
}

/// Decodes fused tokens `[b*b, L]` back to logits `[1, classes, h, h]`.
pub fn decode_tokens<T: Real>(
    tape: &mut Tape<T>,
    tp: &TapeParams,
    tokens: Var,
    enc: &Encoded,
) -> Var {
    let b = enc.grid;
    let map = tape.map_from_tokens(tokens, b, b);
    let up2 = tape.upsample2x(map);
    let cat2 = tape.concat_channels(up2, enc.skip2);
    let d1 = tape.conv2d(cat2, tp.var("dec.conv1.w"), tp.var("dec.conv1.b"), 1, 1);
    let a1 = tape.relu(d1);
    let up1 = tape.upsample2x(a1);
    let cat1 = tape.concat_channels(up1, enc.skip1);
    let d2 = tape.conv2d(cat1, tp.var("dec.conv2.w"), tp.var("dec.conv2.b"), 1, 1);
    let a2 = tape.relu(d2);
    let up0 = tape.upsample2x(a2);
    tape.conv2d(up0, tp.var("dec.out.w"), tp.var("dec.out.b"), 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::model::init_params;
    use crate::params::ParamSet;
    use crate::tensor::Tensor;

    fn cfg() -> ModelConfig {
        ModelConfig {
            latent_dim: 16,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn shapes_round_trip() {
        let cfg = cfg();
        let params: ParamSet<f64> = init_params(&cfg, 1).cast();
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let patch = tape.leaf(Tensor::full(&[1, 3, 32, 32], 0.25));
        let enc = encode_patch(&mut tape, &tp, patch);
        assert_eq!(enc.grid, 4);
        assert_eq!(tape.value(enc.tokens).shape(), &[16, 16]);
        assert_eq!(tape.value(enc.skip1).shape(), &[1, 4, 16, 16]);
        assert_eq!(tape.value(enc.skip2).shape(), &[1, 8, 8, 8]);
        let logits = decode_tokens(&mut tape, &tp, enc.tokens, &enc);
        assert_eq!(tape.value(logits).shape(), &[1, 4, 32, 32]);
        assert!(tape.value(logits).is_finite());
    }

    #[test]
    fn pooled_patch_shapes() {
        // granularity 2: the codec sees a 16 px patch
        let cfg = ModelConfig {
            granularity: 2,
            ..cfg()
        };
        let params: ParamSet<f64> = init_params(&cfg, 1).cast();
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let patch = tape.leaf(Tensor::full(&[1, 3, 32, 32], 0.25));
        let pooled = tape.avg_pool(patch, 2);
        let enc = encode_patch(&mut tape, &tp, pooled);
        assert_eq!(enc.grid, 2);
        let logits = decode_tokens(&mut tape, &tp, enc.tokens, &enc);
        assert_eq!(tape.value(logits).shape(), &[1, 4, 16, 16]);
        let full = tape.upsample2x(logits);
        assert_eq!(tape.value(full).shape(), &[1, 4, 32, 32]);
    }

    #[test]
    fn zero_weights_give_uniform_logits() {
        let cfg = cfg();
        let mut params: ParamSet<f64> = init_params(&cfg, 1).cast();
        // zero the final conv so every class logit is the bias value
        let shape = params.get("dec.out.w").shape().to_vec();
        params.set("dec.out.w", Tensor::zeros(&shape));
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let patch = tape.leaf(Tensor::full(&[1, 3, 32, 32], 0.3));
        let enc = encode_patch(&mut tape, &tp, patch);
        let logits = decode_tokens(&mut tape, &tp, enc.tokens, &enc);
        for &v in tape.value(logits).data() {
            assert_eq!(v, 0.0);
        }
    }
}
