//! Context / detail fusion.
//!
//! The full strategy builds a sequence of the context vector (with its own
//! embedding) followed by the patch tokens (with a learned grid embedding)
//! and runs pre-norm multi-head self-attention blocks with residuals; the
//! token rows are then handed back to the decoder. Reduced strategies replace
//! attention with elementwise gating (`dot`), concatenation plus a linear
//! map (`cat`), or nothing at all (`none`).

use crate::config::{FusionStrategy, ModelConfig};
use crate::model::Init;
use crate::params::TapeParams;
use crate::tape::{Tape, Var};
use crate::tensor::Real;

pub fn fusion_param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let l = cfg.latent_dim;
    let b2 = cfg.token_grid() * cfg.token_grid();
    let mut out = Vec::new();
    match cfg.fusion {
        FusionStrategy::None | FusionStrategy::Dot => {}
        FusionStrategy::Cat => {
            out.push(("fuse.cat.w".into(), vec![2 * l, l], Init::Glorot));
            out.push(("fuse.cat.b".into(), vec![l], Init::Zeros));
        }
        FusionStrategy::Dcfusion => {
            out.push(("fuse.e_ctx".into(), vec![1, l], Init::Embed));
            out.push(("fuse.e_grid".into(), vec![b2, l], Init::Embed));
            for i in 0..cfg.fusion_blocks {
                let p = format!("fuse.{i}");
                out.push((format!("{p}.ln.gamma"), vec![l], Init::Ones));
                out.push((format!("{p}.ln.beta"), vec![l], Init::Zeros));
                for m in ["wq", "wk", "wv", "wo"] {
                    out.push((format!("{p}.{m}"), vec![l, l], Init::Glorot));
                }
                for b in ["bq", "bk", "bv", "bo"] {
                    out.push((format!("{p}.{b}"), vec![l], Init::Zeros));
                }
                if cfg.ffn {
                    out.push((format!("{p}.ln2.gamma"), vec![l], Init::Ones));
                    out.push((format!("{p}.ln2.beta"), vec![l], Init::Zeros));
                    out.push((format!("{p}.ffn.w1"), vec![l, 4 * l], Init::Glorot));
                    out.push((format!("{p}.ffn.b1"), vec![4 * l], Init::Zeros));
                    out.push((format!("{p}.ffn.w2"), vec![4 * l, l], Init::Glorot));
                    out.push((format!("{p}.ffn.b2"), vec![l], Init::Zeros));
                }
            }
        }
    }
    out
}

/// One pre-norm multi-head self-attention block with residual:
/// `x + MSA(LN(x))`.
fn msa_block<T: Real>(
    tape: &mut Tape<T>,
    tp: &TapeParams,
    prefix: &str,
    x: Var,
    heads: usize,
) -> Var {
    let l = tape.value(x).dim(1);
    let dh = l / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());

    let ln = tape.layer_norm_rows(
        x,
        tp.var(&format!("{prefix}.ln.gamma")),
        tp.var(&format!("{prefix}.ln.beta")),
    );
    let project = |tape: &mut Tape<T>, w: &str, b: &str| {
        let m = tape.matmul(ln, tp.var(w));
        tape.add_row(m, tp.var(b))
    };
    let q = project(tape, &format!("{prefix}.wq"), &format!("{prefix}.bq"));
    let k = project(tape, &format!("{prefix}.wk"), &format!("{prefix}.bk"));
    let v = project(tape, &format!("{prefix}.wv"), &format!("{prefix}.bv"));

    let mut merged: Option<Var> = None;
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(q, lo, hi);
        let kh = tape.slice_cols(k, lo, hi);
        let vh = tape.slice_cols(v, lo, hi);
        let kt = tape.transpose(kh);
        let raw = tape.matmul(qh, kt);
        let scores = tape.scale(raw, scale);
        let alpha = tape.softmax_rows(scores);
        let oh = tape.matmul(alpha, vh);
        merged = Some(match merged {
            None => oh,
            Some(acc) => tape.concat_cols(acc, oh),
        });
    }
    let heads_out = merged.expect("at least one head");
    let proj = tape.matmul(heads_out, tp.var(&format!("{prefix}.wo")));
    let o = tape.add_row(proj, tp.var(&format!("{prefix}.bo")));
    tape.add(x, o)
}

/// Feed-forward sublayer with residual: `x + W2 relu(W1 LN(x))`.
fn ffn_block<T: Real>(tape: &mut Tape<T>, tp: &TapeParams, prefix: &str, x: Var) -> Var {
    let ln = tape.layer_norm_rows(
        x,
        tp.var(&format!("{prefix}.ln2.gamma")),
        tp.var(&format!("{prefix}.ln2.beta")),
    );
    let h1 = tape.matmul(ln, tp.var(&format!("{prefix}.ffn.w1")));
    let h1b = tape.add_row(h1, tp.var(&format!("{prefix}.ffn.b1")));
    let a = tape.relu(h1b);
    let h2 = tape.matmul(a, tp.var(&format!("{prefix}.ffn.w2")));
    let h2b = tape.add_row(h2, tp.var(&format!("{prefix}.ffn.b2")));
    tape.add(x, h2b)
}

/// Fuses patch tokens `[b*b, L]` with one context row `[1, L]` according to
/// the configured strategy, returning refreshed tokens `[b*b, L]`.
pub fn fuse_tokens<T: Real>(
    tape: &mut Tape<T>,
    tp: &TapeParams,
    cfg: &ModelConfig,
    tokens: Var,
    context: Var,
) -> Var {
    let b2 = tape.value(tokens).dim(0);
    match cfg.fusion {
        FusionStrategy::None => tokens,
        FusionStrategy::Dot => tape.mul_rows(tokens, context),
        FusionStrategy::Cat => {
            let wide = tape.broadcast_rows(context, b2);
            let cat = tape.concat_cols(tokens, wide);
            let proj = tape.matmul(cat, tp.var("fuse.cat.w"));
            tape.add_row(proj, tp.var("fuse.cat.b"))
        }
        FusionStrategy::Dcfusion => {
            let ctx_row = tape.add(context, tp.var("fuse.e_ctx"));
            let grid_rows = tape.add(tokens, tp.var("fuse.e_grid"));
            let mut seq = tape.concat_rows(ctx_row, grid_rows);
            for i in 0..cfg.fusion_blocks {
                let prefix = format!("fuse.{i}");
                seq = msa_block(tape, tp, &prefix, seq, cfg.heads);
                if cfg.ffn {
                    seq = ffn_block(tape, tp, &prefix, seq);
                }
            }
            let idx: Vec<usize> = (1..=b2).collect();
            tape.select_rows(seq, idx)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::model::init_params;
    use crate::params::ParamSet;
    use crate::tensor::Tensor;
    use approx::assert_abs_diff_eq;

    fn cfg(fusion: FusionStrategy) -> ModelConfig {
        ModelConfig {
            latent_dim: 8,
            heads: 2,
            fusion_blocks: 2,
            fusion,
            ..ModelConfig::default()
        }
    }

    fn run(cfg: &ModelConfig, tokens: Tensor<f64>, ctx: Tensor<f64>) -> Tensor<f64> {
        let params: ParamSet<f64> = init_params(cfg, 5).cast();
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let t = tape.leaf(tokens);
        let c = tape.leaf(ctx);
        let out = fuse_tokens(&mut tape, &tp, cfg, t, c);
        tape.value(out).clone()
    }

    #[test]
    fn none_passes_tokens_through() {
        let tokens = Tensor::new(&[3, 8], (0..24).map(|i| i as f64).collect()).unwrap();
        let ctx = Tensor::full(&[1, 8], 9.0);
        let out = run(&cfg(FusionStrategy::None), tokens.clone(), ctx);
        assert_eq!(out, tokens);
    }

    #[test]
    fn dot_gates_each_row() {
        let tokens = Tensor::new(&[2, 8], vec![1.0; 16]).unwrap();
        let ctx =
            Tensor::new(&[1, 8], vec![0.0, 1.0, 2.0, -1.0, 0.5, 3.0, -2.0, 1.5]).unwrap();
        let out = run(&cfg(FusionStrategy::Dot), tokens, ctx.clone());
        for r in 0..2 {
            for c in 0..8 {
                assert_eq!(out.data()[r * 8 + c], ctx.data()[c]);
            }
        }
    }

    #[test]
    fn cat_depends_on_context() {
        let tokens = Tensor::full(&[4, 8], 0.5);
        let a = run(
            &cfg(FusionStrategy::Cat),
            tokens.clone(),
            Tensor::full(&[1, 8], 0.0),
        );
        let b = run(
            &cfg(FusionStrategy::Cat),
            tokens,
            Tensor::full(&[1, 8], 1.0),
        );
        assert_eq!(a.shape(), &[4, 8]);
        assert!(a.max_abs_diff(&b) > 1e-4, "context had no effect");
    }

    #[test]
    fn dcfusion_shape_and_context_sensitivity() {
        // token_grid for the default 32 px patch is 4, so 16 token rows;
        // the context rows differ in structure, not just by a constant
        // offset (layer norm is invariant to constant shifts)
        let cfg = cfg(FusionStrategy::Dcfusion);
        let tokens = Tensor::new(
            &[16, 8],
            (0..128).map(|i| ((i * 7 % 13) as f64) / 6.0 - 1.0).collect(),
        )
        .unwrap();
        let ctx_a =
            Tensor::new(&[1, 8], vec![0.9, -0.3, 0.1, 0.4, -0.8, 0.2, 0.6, -0.1]).unwrap();
        let ctx_b =
            Tensor::new(&[1, 8], vec![-0.5, 0.7, -0.2, 0.3, 0.8, -0.6, 0.0, 0.4]).unwrap();
        let a = run(&cfg, tokens.clone(), ctx_a);
        let b = run(&cfg, tokens, ctx_b);
        assert_eq!(a.shape(), &[16, 8]);
        assert!(a.max_abs_diff(&b) > 1e-5, "context ignored by attention");
    }

    #[test]
    fn residual_identity_when_projections_vanish() {
        // zero wo kills the attention update; the block reduces to identity
        let cfg = cfg(FusionStrategy::Dcfusion);
        let mut params: ParamSet<f64> = init_params(&cfg, 5).cast();
        for i in 0..cfg.fusion_blocks {
            let name = format!("fuse.{i}.wo");
            let shape = params.get(&name).shape().to_vec();
            params.set(&name, Tensor::zeros(&shape));
        }
        // also zero the embeddings so the sequence equals the raw inputs
        for name in ["fuse.e_ctx", "fuse.e_grid"] {
            let shape = params.get(name).shape().to_vec();
            params.set(name, Tensor::zeros(&shape));
        }
        let tokens = Tensor::new(&[16, 8], (0..128).map(|i| i as f64 / 50.0).collect()).unwrap();
        let ctx = Tensor::full(&[1, 8], 1.0);
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let t = tape.leaf(tokens.clone());
        let c = tape.leaf(ctx);
        let out = fuse_tokens(&mut tape, &tp, &cfg, t, c);
        for (x, y) in tape.value(out).data().iter().zip(tokens.data().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn ffn_layers_register_only_when_enabled() {
        let base = cfg(FusionStrategy::Dcfusion);
        let with_ffn = ModelConfig { ffn: true, ..base.clone() };
        let n0 = fusion_param_shapes(&base).len();
        let n1 = fusion_param_shapes(&with_ffn).len();
        assert_eq!(n1 - n0, 6 * base.fusion_blocks);
    }
}
