//! Sequence encoder over padded observation histories.
//!
//! The input is a fixed-shape `[max_len × input_dim]` matrix holding the
//! most recent observation in row 0 and older ones below it, zero-padded
//! past the start of the episode, with a boolean mask marking the real
//! rows. The pipeline is: linear embedding → sinusoidal positional
//! encoding → `n_blocks` post-norm attention blocks (multi-head
//! attention with the padding mask applied on the key side, then a
//! two-layer feed-forward, each wrapped in residual + layer norm) →
//! masked mean pooling into a single `[1 × d_model]` summary.
//!
//! Padded rows never influence that summary: attention zeroes their key
//! weights exactly and the pool averages valid rows only, so an encoding
//! is bit-identical whatever bytes sit in the padded region.

use atsc_nn::{ParamId, ParamStore, Scalar, Tape, Tid};
use rand::Rng;

use crate::{AgentError, Result};

/// Shape of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Width of one observation row.
    pub input_dim: usize,
    /// Embedding / attention width.
    pub d_model: usize,
    /// Attention heads; must divide `d_model`.
    pub n_heads: usize,
    /// Feed-forward hidden width.
    pub d_ff: usize,
    /// Attention blocks; zero degenerates to embed + pool.
    pub n_blocks: usize,
    /// History rows per encoding.
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 22,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            n_blocks: 2,
            max_len: 20,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.d_model == 0 || self.max_len == 0 {
            return Err(AgentError::Config(format!(
                "encoder dimensions must be positive: input {}, model {}, history {}",
                self.input_dim, self.d_model, self.max_len
            )));
        }
        if self.n_blocks > 0 {
            if self.n_heads == 0 || self.d_ff == 0 {
                return Err(AgentError::Config(
                    "attention blocks need at least one head and a feed-forward width".into(),
                ));
            }
            if self.d_model % self.n_heads != 0 {
                return Err(AgentError::Config(format!(
                    "model width {} is not divisible by {} heads",
                    self.d_model, self.n_heads
                )));
            }
        }
        Ok(())
    }
}

/// Parameter handles of one attention block.
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
}

/// Parameter handles of the whole encoder inside one store.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub blocks: Vec<BlockParams>,
}

impl EncoderParams {
    /// Registers freshly initialized encoder parameters under `ns.`
    /// prefixed names. Weights are uniform fan-in, biases zero, layer
    /// norm gains one. Registration order is fixed and doubles as the
    /// rng consumption order, so identical configs and rng states yield
    /// identical parameters.
    pub fn build<S: Scalar>(
        store: &mut ParamStore<S>,
        ns: &str,
        cfg: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let (din, d, dff) = (cfg.input_dim, cfg.d_model, cfg.d_ff);
        let embed_w = store.add_uniform_fan_in(&format!("{ns}.embed.w"), din, d, din, rng)?;
        let embed_b = store.add_zeros(&format!("{ns}.embed.b"), 1, d)?;
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for b in 0..cfg.n_blocks {
            let p = |part: &str| format!("{ns}.block{b}.{part}");
            blocks.push(BlockParams {
                wq: store.add_uniform_fan_in(&p("attn.wq"), d, d, d, rng)?,
                bq: store.add_zeros(&p("attn.bq"), 1, d)?,
                wk: store.add_uniform_fan_in(&p("attn.wk"), d, d, d, rng)?,
                bk: store.add_zeros(&p("attn.bk"), 1, d)?,
                wv: store.add_uniform_fan_in(&p("attn.wv"), d, d, d, rng)?,
                bv: store.add_zeros(&p("attn.bv"), 1, d)?,
                wo: store.add_uniform_fan_in(&p("attn.wo"), d, d, d, rng)?,
                bo: store.add_zeros(&p("attn.bo"), 1, d)?,
                ln1_g: store.add_ones(&p("ln1.g"), 1, d)?,
                ln1_b: store.add_zeros(&p("ln1.b"), 1, d)?,
                ff_w1: store.add_uniform_fan_in(&p("ff.w1"), d, dff, d, rng)?,
                ff_b1: store.add_zeros(&p("ff.b1"), 1, dff)?,
                ff_w2: store.add_uniform_fan_in(&p("ff.w2"), dff, d, dff, rng)?,
                ff_b2: store.add_zeros(&p("ff.b2"), 1, d)?,
                ln2_g: store.add_ones(&p("ln2.g"), 1, d)?,
                ln2_b: store.add_zeros(&p("ln2.b"), 1, d)?,
            });
        }
        Ok(EncoderParams { embed_w, embed_b, blocks })
    }

    /// Resolves already-registered parameters by name, e.g. on a store
    /// loaded from a checkpoint.
    pub fn lookup<S: Scalar>(
        store: &ParamStore<S>,
        ns: &str,
        cfg: &EncoderConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let find = |name: String| -> Result<ParamId> {
            store
                .id_by_name(&name)
                .ok_or_else(|| AgentError::Config(format!("store is missing parameter {name}")))
        };
        let embed_w = find(format!("{ns}.embed.w"))?;
        let embed_b = find(format!("{ns}.embed.b"))?;
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for b in 0..cfg.n_blocks {
            let p = |part: &str| format!("{ns}.block{b}.{part}");
            blocks.push(BlockParams {
                wq: find(p("attn.wq"))?,
                bq: find(p("attn.bq"))?,
                wk: find(p("attn.wk"))?,
                bk: find(p("attn.bk"))?,
                wv: find(p("attn.wv"))?,
                bv: find(p("attn.bv"))?,
                wo: find(p("attn.wo"))?,
                bo: find(p("attn.bo"))?,
                ln1_g: find(p("ln1.g"))?,
                ln1_b: find(p("ln1.b"))?,
                ff_w1: find(p("ff.w1"))?,
                ff_b1: find(p("ff.b1"))?,
                ff_w2: find(p("ff.w2"))?,
                ff_b2: find(p("ff.b2"))?,
                ln2_g: find(p("ln2.g"))?,
                ln2_b: find(p("ln2.b"))?,
            });
        }
        Ok(EncoderParams { embed_w, embed_b, blocks })
    }
}

/// Sinusoidal position table, row-major `[max_len × d]`:
/// `PE[pos][2i] = sin(pos / 10000^(2i/d))`, `PE[pos][2i+1]` the cosine.
pub fn positional_encoding(max_len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; max_len * d];
    for pos in 0..max_len {
        for i in 0..d {
            let pair = (i / 2 * 2) as f64; // exponent shared within a sin/cos pair
            let angle = pos as f64 / 10000f64.powf(pair / d as f64);
            pe[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

const LN_EPS: f64 = 1e-5;

/// Runs the encoder over one padded history, returning the pooled
/// `[1 × d_model]` summary. `trainable` decides whether parameters join
/// the tape with gradients or as frozen constants (target networks,
/// neighbour messages).
pub fn encode<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    history: &[f64],
    mask: &[bool],
) -> Result<Tid> {
    encode_leased(tape, store, params, cfg, history, mask, true)
}

/// [`encode`] with parameters frozen (no gradients recorded).
pub fn encode_frozen<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    history: &[f64],
    mask: &[bool],
) -> Result<Tid> {
    encode_leased(tape, store, params, cfg, history, mask, false)
}

fn encode_leased<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    history: &[f64],
    mask: &[bool],
    trainable: bool,
) -> Result<Tid> {
    let (l, d) = (cfg.max_len, cfg.d_model);
    if history.len() != l * cfg.input_dim {
        return Err(AgentError::Config(format!(
            "history holds {} values, expected {}x{}",
            history.len(),
            l,
            cfg.input_dim
        )));
    }
    if mask.len() != l {
        return Err(AgentError::Config(format!(
            "mask holds {} slots, expected {l}",
            mask.len()
        )));
    }
    if !mask[0] {
        return Err(AgentError::Config(
            "history mask must cover the current observation".into(),
        ));
    }
    let lease = |tape: &mut Tape<S>, id: ParamId| -> Tid {
        if trainable {
            tape.param(store, id)
        } else {
            tape.param_const(store, id)
        }
    };

    let x = tape.constant(
        l,
        cfg.input_dim,
        history.iter().map(|&v| S::from_f64(v)).collect(),
    );
    let ew = lease(tape, params.embed_w);
    let eb = lease(tape, params.embed_b);
    let mut h = tape.matmul(x, ew)?;
    h = tape.add_row(h, eb)?;
    let pe = tape.constant(
        l,
        d,
        positional_encoding(l, d)
            .into_iter()
            .map(S::from_f64)
            .collect(),
    );
    h = tape.add(h, pe)?;

    let dh = if cfg.n_blocks > 0 { d / cfg.n_heads } else { d };
    for block in &params.blocks {
        // Multi-head attention with the padding mask on the key side.
        let wq = lease(tape, block.wq);
        let bq = lease(tape, block.bq);
        let wk = lease(tape, block.wk);
        let bk = lease(tape, block.bk);
        let wv = lease(tape, block.wv);
        let bv = lease(tape, block.bv);
        let q = tape.matmul(h, wq)?;
        let q = tape.add_row(q, bq)?;
        let k = tape.matmul(h, wk)?;
        let k = tape.add_row(k, bk)?;
        let v = tape.matmul(h, wv)?;
        let v = tape.add_row(v, bv)?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for head in 0..cfg.n_heads {
            let (from, to) = (head * dh, (head + 1) * dh);
            let qh = tape.slice_cols(q, from, to)?;
            let kh = tape.slice_cols(k, from, to)?;
            let vh = tape.slice_cols(v, from, to)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let weights = tape.masked_softmax(scores, mask)?;
            heads.push(tape.matmul(weights, vh)?);
        }
        let ctx = tape.concat_cols(&heads)?;
        let wo = lease(tape, block.wo);
        let bo = lease(tape, block.bo);
        let proj = tape.matmul(ctx, wo)?;
        let proj = tape.add_row(proj, bo)?;
        let res = tape.add(h, proj)?;
        let g1 = lease(tape, block.ln1_g);
        let b1 = lease(tape, block.ln1_b);
        h = tape.layer_norm(res, g1, b1, LN_EPS)?;

        // Position-wise feed-forward.
        let w1 = lease(tape, block.ff_w1);
        let fb1 = lease(tape, block.ff_b1);
        let w2 = lease(tape, block.ff_w2);
        let fb2 = lease(tape, block.ff_b2);
        let f = tape.matmul(h, w1)?;
        let f = tape.add_row(f, fb1)?;
        let f = tape.relu(f);
        let f = tape.matmul(f, w2)?;
        let f = tape.add_row(f, fb2)?;
        let res = tape.add(h, f)?;
        let g2 = lease(tape, block.ln2_g);
        let b2 = lease(tape, block.ln2_b);
        h = tape.layer_norm(res, g2, b2, LN_EPS)?;
    }

    Ok(tape.masked_mean_rows(h, mask)?)
}

/// Forward-only encoding to plain values (for messages and greedy play).
pub fn encode_values<S: Scalar>(
    store: &ParamStore<S>,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    history: &[f64],
    mask: &[bool],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let out = encode_frozen(&mut tape, store, params, cfg, history, mask)?;
    Ok(tape.value(out).iter().map(|&v| Scalar::to_f64(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use atsc_nn::gradcheck::max_relative_error;
    use atsc_sim::rng::stream;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            input_dim: 5,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            n_blocks: 1,
            max_len: 4,
        }
    }

    fn random_history(cfg: &EncoderConfig, seed: u64, valid: usize) -> (Vec<f64>, Vec<bool>) {
        use rand::Rng;
        let mut rng = stream(seed, "hist");
        let mut h = vec![0.0; cfg.max_len * cfg.input_dim];
        for row in 0..valid {
            for c in 0..cfg.input_dim {
                h[row * cfg.input_dim + c] = rng.gen_range(-2.0..2.0);
            }
        }
        let mask: Vec<bool> = (0..cfg.max_len).map(|r| r < valid).collect();
        (h, mask)
    }

    #[test]
    fn positional_encoding_matches_formula() {
        let d = 8;
        let pe = positional_encoding(3, d);
        // Position 0: sin(0) = 0, cos(0) = 1 alternating.
        for i in 0..d {
            let expect = if i % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe[i], expect);
        }
        // Spot-check position 2, pair index 1 (columns 2 and 3).
        let angle: f64 = 2.0 / 10000f64.powf(2.0 / d as f64);
        assert_eq!(pe[2 * d + 2], angle.sin());
        assert_eq!(pe[2 * d + 3], angle.cos());
        // Wavelength grows with the pair index.
        let a0: f64 = 1.0;
        let a6 = 1.0 / 10000f64.powf(6.0 / d as f64);
        assert_eq!(pe[d], a0.sin());
        assert_eq!(pe[d + 6], a6.sin());
    }

    /// Whatever bytes occupy the padded rows, the encoding is
    /// bit-identical: masked attention and masked pooling never read them.
    #[test]
    fn padding_region_is_invisible() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f64>::new();
        let mut rng = stream(1, "init");
        let params = EncoderParams::build(&mut store, "enc", &cfg, &mut rng).unwrap();
        let (clean, mask) = random_history(&cfg, 2, 2);
        let mut dirty = clean.clone();
        for row in 2..cfg.max_len {
            for c in 0..cfg.input_dim {
                dirty[row * cfg.input_dim + c] = 1e6 * (row * 31 + c) as f64 - 3.0;
            }
        }
        let a = encode_values(&store, &params, &cfg, &clean, &mask).unwrap();
        let b = encode_values(&store, &params, &cfg, &dirty, &mask).unwrap();
        assert_eq!(a, b, "padded rows leaked into the encoding");
    }

    /// More visible history changes the encoding (the mask is not inert).
    #[test]
    fn longer_history_changes_the_encoding() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f64>::new();
        let mut rng = stream(3, "init");
        let params = EncoderParams::build(&mut store, "enc", &cfg, &mut rng).unwrap();
        let (h, _) = random_history(&cfg, 4, 4);
        let short: Vec<bool> = vec![true, true, false, false];
        let long: Vec<bool> = vec![true, true, true, true];
        let a = encode_values(&store, &params, &cfg, &h, &short).unwrap();
        let b = encode_values(&store, &params, &cfg, &h, &long).unwrap();
        assert_ne!(a, b);
    }

    /// The full encoder pipeline differentiates correctly: every
    /// parameter coordinate's analytic gradient matches central finite
    /// differences.
    #[test]
    fn encoder_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f64>::new();
        let mut rng = stream(5, "init");
        let params = EncoderParams::build(&mut store, "enc", &cfg, &mut rng).unwrap();
        let (h, mask) = random_history(&cfg, 6, 3);

        // Weighted sum of the pooled encoding keeps the loss scalar but
        // sensitive to every output coordinate.
        let weights: Vec<f64> = (0..cfg.d_model).map(|i| 0.3 + 0.1 * i as f64).collect();
        let run = |store: &ParamStore<f64>, want_grads: Option<&mut ParamStore<f64>>| -> f64 {
            let mut tape = Tape::new();
            let enc = encode(&mut tape, store, &params, &cfg, &h, &mask).unwrap();
            let w = tape.constant(cfg.d_model, 1, weights.clone());
            let out = tape.matmul(enc, w).unwrap();
            let loss = tape.sum_all(out);
            let v = tape.value(loss)[0];
            if let Some(g) = want_grads {
                tape.backward(loss).unwrap();
                tape.write_param_grads(g);
            }
            v
        };
        let mut grads = store.clone();
        grads.zero_grads();
        run(&store, Some(&mut grads));
        let worst = max_relative_error(
            &mut store,
            &mut |s: &ParamStore<f64>| run(s, None),
            &mut |pid, idx| grads.get(pid).grad[idx],
        );
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    /// Zero blocks degenerate to embed + positional encoding + pool, the
    /// memoryless architecture.
    #[test]
    fn zero_blocks_still_encode() {
        let cfg = EncoderConfig {
            n_blocks: 0,
            ..tiny_cfg()
        };
        let mut store = ParamStore::<f64>::new();
        let mut rng = stream(7, "init");
        let params = EncoderParams::build(&mut store, "enc", &cfg, &mut rng).unwrap();
        assert!(params.blocks.is_empty());
        let (h, mask) = random_history(&cfg, 8, 1);
        let out = encode_values(&store, &params, &cfg, &h, &mask).unwrap();
        assert_eq!(out.len(), cfg.d_model);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn config_rejects_bad_shapes() {
        let bad = EncoderConfig {
            d_model: 10,
            n_heads: 4,
            ..tiny_cfg()
        };
        assert!(bad.validate().is_err());
        let zero = EncoderConfig {
            max_len: 0,
            ..tiny_cfg()
        };
        assert!(zero.validate().is_err());
    }

    /// Identical rng state and config produce identical parameters, and
    /// lookup resolves exactly what build registered.
    #[test]
    fn build_is_deterministic_and_lookup_roundtrips() {
        let cfg = tiny_cfg();
        let mut s1 = ParamStore::<f64>::new();
        let mut s2 = ParamStore::<f64>::new();
        EncoderParams::build(&mut s1, "enc", &cfg, &mut stream(9, "init")).unwrap();
        EncoderParams::build(&mut s2, "enc", &cfg, &mut stream(9, "init")).unwrap();
        assert_eq!(s1.len(), s2.len());
        for ((_, a), (_, b)) in s1.iter().zip(s2.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.values, b.values);
        }
        let looked = EncoderParams::lookup(&s1, "enc", &cfg).unwrap();
        assert_eq!(looked.embed_w, s1.id_by_name("enc.embed.w").unwrap());
        assert!(EncoderParams::lookup(&s1, "other", &cfg).is_err());
    }
}
