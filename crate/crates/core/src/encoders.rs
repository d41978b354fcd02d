//! Recurrent encoders: the variational posterior `q(z | w)` and the span
//! encoder with label-specific projections.
//!
//! LSTM gates are stacked as `[i; f; g; o]` in a `[4H, E]` input matrix and
//! a `[4H, H]` recurrent matrix; initial states are zero.

use rand::Rng;
use serde::{Deserialize, Serialize};
use vcpcfg_autodiff::{Tape, Var};

use crate::params::{xavier, Bindings, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab: usize,
    pub word_dim: usize,
    pub hidden_dim: usize,
    pub z_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanEncoderConfig {
    pub vocab: usize,
    pub word_dim: usize,
    pub hidden_dim: usize,
    /// Joint embedding size shared with the image projection.
    pub joint_dim: usize,
    /// Number of span labels, equal to the grammar's nonterminal count.
    pub labels: usize,
    /// Reuse the variational encoder's word embeddings.
    pub share_embeddings: bool,
}

fn init_lstm<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) {
    store.insert(&format!("{}.wx", prefix), &[4 * hidden, input], xavier(rng, 4 * hidden, input));
    store.insert(&format!("{}.wh", prefix), &[4 * hidden, hidden], xavier(rng, 4 * hidden, hidden));
    store.insert(&format!("{}.b", prefix), &[4 * hidden], vec![0.0; 4 * hidden]);
}

pub fn init_encoder<R: Rng>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) {
    let (e, h) = (cfg.word_dim, cfg.hidden_dim);
    store.insert("enc.emb", &[cfg.vocab, e], xavier(rng, cfg.vocab, e));
    init_lstm(store, "enc.fwd", e, h, rng);
    init_lstm(store, "enc.bwd", e, h, rng);
    store.insert("enc.out.w", &[2 * cfg.z_dim, 2 * h], xavier(rng, 2 * cfg.z_dim, 2 * h));
    store.insert("enc.out.b", &[2 * cfg.z_dim], vec![0.0; 2 * cfg.z_dim]);
}

pub fn init_span_encoder<R: Rng>(store: &mut ParamStore, cfg: &SpanEncoderConfig, rng: &mut R) {
    let (e, h, j, k) = (cfg.word_dim, cfg.hidden_dim, cfg.joint_dim, cfg.labels);
    if !cfg.share_embeddings {
        store.insert("span.emb", &[cfg.vocab, e], xavier(rng, cfg.vocab, e));
    }
    init_lstm(store, "span.fwd", e, h, rng);
    init_lstm(store, "span.bwd", e, h, rng);
    // K label maps, each [J, 2H], stacked row-wise.
    let mut w = Vec::with_capacity(k * j * 2 * h);
    for _ in 0..k {
        w.extend(xavier(rng, j, 2 * h));
    }
    store.insert("span.label.w", &[k * j, 2 * h], w);
    store.insert("span.label.b", &[k * j], vec![0.0; k * j]);
}

fn embed(tape: &mut Tape, bind: &mut Bindings, table: &str, tokens: &[usize]) -> Vec<Var> {
    tokens.iter().map(|&w| bind.row(tape, table, w)).collect()
}

/// Hidden states of one LSTM direction over `inputs`, in input order.
pub fn lstm(tape: &mut Tape, bind: &mut Bindings, prefix: &str, inputs: &[Var]) -> Vec<Var> {
    let wx = bind.var(tape, &format!("{}.wx", prefix));
    let wh = bind.var(tape, &format!("{}.wh", prefix));
    let b = bind.var(tape, &format!("{}.b", prefix));
    let h_dim = tape.shape(wh)[1];
    let mut state: Option<(Var, Var)> = None;
    let mut out = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let mut gates = tape.affine(wx, x, b);
        if let Some((h, _)) = state {
            let rec = tape.matvec(wh, h);
            gates = tape.add(gates, rec);
        }
        let i = tape.slice(gates, 0, h_dim);
        let i = tape.sigmoid(i);
        let f = tape.slice(gates, h_dim, h_dim);
        let f = tape.sigmoid(f);
        let g = tape.slice(gates, 2 * h_dim, h_dim);
        let g = tape.tanh(g);
        let o = tape.slice(gates, 3 * h_dim, h_dim);
        let o = tape.sigmoid(o);
        let mut c = tape.mul(i, g);
        if let Some((_, c_prev)) = state {
            let keep = tape.mul(f, c_prev);
            c = tape.add(c, keep);
        }
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        state = Some((h, c));
        out.push(h);
    }
    out
}

/// `[h_fwd(t); h_bwd(t)]` for every position.
fn bilstm(tape: &mut Tape, bind: &mut Bindings, prefix: &str, inputs: &[Var]) -> Vec<Var> {
    let fwd = lstm(tape, bind, &format!("{}.fwd", prefix), inputs);
    let rev: Vec<Var> = inputs.iter().rev().copied().collect();
    let mut bwd = lstm(tape, bind, &format!("{}.bwd", prefix), &rev);
    bwd.reverse();
    fwd.into_iter().zip(bwd).map(|(f, b)| tape.concat(&[f, b])).collect()
}

/// Gaussian posterior parameters as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct Posterior {
    pub mu: Var,
    pub log_var: Var,
}

/// Max-pooled BiLSTM states mapped to `(mu, log_var)`.
pub fn encode_posterior(tape: &mut Tape, bind: &mut Bindings, sentence: &[usize]) -> Posterior {
    assert!(!sentence.is_empty(), "cannot encode an empty sentence");
    let xs = embed(tape, bind, "enc.emb", sentence);
    let states = bilstm(tape, bind, "enc", &xs);
    let pooled = tape.max_pool(&states);
    let w = bind.var(tape, "enc.out.w");
    let b = bind.var(tape, "enc.out.b");
    let out = tape.affine(w, pooled, b);
    let z = tape.shape(out)[0] / 2;
    Posterior { mu: tape.slice(out, 0, z), log_var: tape.slice(out, z, z) }
}

/// `mu + exp(log_var / 2) * noise`.
pub fn sample_z(tape: &mut Tape, post: &Posterior, noise: &[f64]) -> Var {
    let shape = tape.shape(post.mu).to_vec();
    assert_eq!(shape, [noise.len()], "noise has the wrong dimension");
    let half = tape.scale(post.log_var, 0.5);
    let sd = tape.exp(half);
    let eps = tape.constant(noise.to_vec(), &shape);
    let spread = tape.mul(sd, eps);
    tape.add(post.mu, spread)
}

/// `KL(N(mu, exp(log_var)) || N(0, I))`.
pub fn kl_gaussian(tape: &mut Tape, post: &Posterior) -> Var {
    let mu2 = tape.mul(post.mu, post.mu);
    let var = tape.exp(post.log_var);
    let s = tape.add(mu2, var);
    let s = tape.sub(s, post.log_var);
    let s = tape.shift(s, -1.0);
    let total = tape.sum(s);
    tape.scale(total, 0.5)
}

/// Mean-pooled BiLSTM state over the span's own tokens.
pub fn span_state(
    tape: &mut Tape,
    bind: &mut Bindings,
    cfg: &SpanEncoderConfig,
    sentence: &[usize],
    (i, j): (usize, usize),
) -> Var {
    assert!(i < j && j <= sentence.len(), "span ({}, {}) out of range", i, j);
    let table = if cfg.share_embeddings { "enc.emb" } else { "span.emb" };
    let xs = embed(tape, bind, table, &sentence[i..j]);
    let states = bilstm(tape, bind, "span", &xs);
    tape.mean_pool(&states)
}

/// Span vectors `Σ_k p(k | c) f_k(pooled)` for every span, given each span's
/// label posterior node (shape `[K]`).
pub fn encode_spans(
    tape: &mut Tape,
    bind: &mut Bindings,
    cfg: &SpanEncoderConfig,
    sentence: &[usize],
    spans: &[(usize, usize)],
    posteriors: &[Var],
) -> Vec<Var> {
    assert_eq!(spans.len(), posteriors.len(), "one label posterior per span");
    let w = bind.var(tape, "span.label.w");
    let b = bind.var(tape, "span.label.b");
    spans
        .iter()
        .zip(posteriors)
        .map(|(&span, &post)| {
            let pooled = span_state(tape, bind, cfg, sentence, span);
            let all = tape.affine(w, pooled, b);
            let per_label = tape.reshape(all, &[cfg.labels, cfg.joint_dim]);
            tape.matvec_t(per_label, post)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn enc_cfg() -> EncoderConfig {
        EncoderConfig { vocab: 6, word_dim: 4, hidden_dim: 3, z_dim: 2 }
    }

    fn span_cfg() -> SpanEncoderConfig {
        SpanEncoderConfig { vocab: 6, word_dim: 4, hidden_dim: 3, joint_dim: 5, labels: 3, share_embeddings: false }
    }

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        init_encoder(&mut s, &enc_cfg(), &mut rng);
        init_span_encoder(&mut s, &span_cfg(), &mut rng);
        // Non-zero biases so the tests are not special cases.
        for (name, p) in s.iter_mut() {
            if name.ends_with(".b") {
                p.data.iter_mut().enumerate().for_each(|(i, x)| *x = 0.1 * (i as f64).sin());
            }
        }
        s
    }

    fn posterior_values(store: &ParamStore, sentence: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let mut bind = Bindings::new(store);
        let p = encode_posterior(&mut tape, &mut bind, sentence);
        (tape.value(p.mu).to_vec(), tape.value(p.log_var).to_vec())
    }

    #[test]
    fn single_token_pools_its_own_state() {
        let s = store();
        let mut tape = Tape::new();
        let mut bind = Bindings::new(&s);
        let xs = embed(&mut tape, &mut bind, "enc.emb", &[3]);
        let states = bilstm(&mut tape, &mut bind, "enc", &xs);
        let pooled = tape.max_pool(&states);
        assert_eq!(tape.value(pooled), tape.value(states[0]));
    }

    #[test]
    fn posterior_is_order_sensitive_and_deterministic() {
        let s = store();
        let a = posterior_values(&s, &[1, 4, 2]);
        assert_eq!(a, posterior_values(&s, &[1, 4, 2]));
        assert_ne!(a, posterior_values(&s, &[4, 1, 2]));
    }

    #[test]
    fn sampling_examples() {
        let mut tape = Tape::new();
        let mu = tape.constant(vec![1.0, 1.0], &[2]);
        let lv = tape.constant(vec![4f64.ln(), 4f64.ln()], &[2]);
        let post = Posterior { mu, log_var: lv };
        let z = sample_z(&mut tape, &post, &[0.5, 0.5]);
        assert!(tape.value(z).iter().all(|&x| (x - 2.0).abs() < 1e-15));
        let z = sample_z(&mut tape, &post, &[0.0, 0.0]);
        assert_eq!(tape.value(z), &[1.0, 1.0]);
        let zero = tape.constant(vec![0.0, 0.0], &[2]);
        let std = Posterior { mu: zero, log_var: zero };
        let z = sample_z(&mut tape, &std, &[0.3, -1.2]);
        assert_eq!(tape.value(z), &[0.3, -1.2]);
    }

    #[test]
    fn kl_closed_forms() {
        let kl = |mu: f64, lv: f64| {
            let mut tape = Tape::new();
            let post = Posterior { mu: tape.constant(vec![mu], &[1]), log_var: tape.constant(vec![lv], &[1]) };
            let k = kl_gaussian(&mut tape, &post);
            tape.scalar_value(k)
        };
        assert_eq!(kl(0.0, 0.0), 0.0);
        assert!((kl(1.0, 0.0) - 0.5).abs() < 1e-15);
        assert!((kl(0.0, 1.0) - 0.5 * (std::f64::consts::E - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn one_hot_posterior_selects_a_label_map() {
        let s = store();
        let cfg = span_cfg();
        let sentence = [0, 5, 2, 3];
        let mut tape = Tape::new();
        let mut bind = Bindings::new(&s);
        let post = tape.constant(vec![0.0, 1.0, 0.0], &[3]);
        let v = encode_spans(&mut tape, &mut bind, &cfg, &sentence, &[(1, 3)], &[post])[0];
        let pooled = span_state(&mut tape, &mut bind, &cfg, &sentence, (1, 3));
        let w = s.get("span.label.w").unwrap();
        let b = s.get("span.label.b").unwrap();
        let p = tape.value(pooled);
        for r in 0..cfg.joint_dim {
            let row = cfg.joint_dim + r;
            let want: f64 = b.data[row] + (0..6).map(|c| w.data[row * 6 + c] * p[c]).sum::<f64>();
            assert!((tape.value(v)[r] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn width_one_span_is_its_hidden_state() {
        let s = store();
        let cfg = span_cfg();
        let mut tape = Tape::new();
        let mut bind = Bindings::new(&s);
        let pooled = span_state(&mut tape, &mut bind, &cfg, &[2, 4, 1], (1, 2));
        let xs = embed(&mut tape, &mut bind, "span.emb", &[4]);
        let states = bilstm(&mut tape, &mut bind, "span", &xs);
        assert_eq!(tape.value(pooled), tape.value(states[0]));
    }

    #[test]
    fn span_cost_is_linear_in_span_tokens() {
        let s = store();
        let cfg = span_cfg();
        let count = |spans: &[(usize, usize)]| {
            let mut tape = Tape::new();
            let mut bind = Bindings::new(&s);
            let posts: Vec<Var> = spans.iter().map(|_| tape.constant(vec![1.0 / 3.0; 3], &[3])).collect();
            let before = tape.len();
            encode_spans(&mut tape, &mut bind, &cfg, &[0, 1, 2, 3, 4, 5, 0, 1], spans, &posts);
            tape.len() - before
        };
        let base = count(&[(0, 2)]);
        let per_token = count(&[(0, 3)]) - base;
        assert_eq!(count(&[(0, 4)]), base + 2 * per_token);
        // Nine parameter leaves are bound once per tape.
        assert_eq!(count(&[(0, 2), (3, 7)]), count(&[(0, 2)]) + count(&[(0, 4)]) - 9);
    }
}
