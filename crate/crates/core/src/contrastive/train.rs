use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{info_nce_grad, ContrastiveError, EncoderPair, SslHeads, TrainConfig};
use crate::embed::{encode_packet_base, encode_text_base, EmbedError, ProjectionHead};
use crate::optim::Adam;
use crate::textgen::PairedCorpus;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome<F: Scalar> {
    pub heads: SslHeads<F>,
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
}

/// Base vectors of every pair: `(text rows, packet rows)`.
pub fn encode_corpus<F: Scalar>(corpus: &PairedCorpus, enc: &EncoderPair) -> Result<(Array2<F>, Array2<F>), EmbedError> {
    let n = corpus.len();
    let mut text = Array2::zeros((n, enc.text.output_dim));
    let mut packet = Array2::zeros((n, enc.packet.output_dim));
    for (i, p) in corpus.pairs.iter().enumerate() {
        text.row_mut(i).assign(&encode_text_base::<F>(&p.text, &enc.text)?.vector);
        packet.row_mut(i).assign(&encode_packet_base::<F>(&p.payload, &enc.packet)?.vector);
    }
    Ok((text, packet))
}

/// Trains the projection heads with InfoNCE over seeded shuffled batches.
/// The base encoders are only read.
pub fn pretrain_heads<F: Scalar>(
    corpus: &PairedCorpus,
    enc: &EncoderPair,
    cfg: &TrainConfig,
) -> Result<PretrainOutcome<F>, ContrastiveError> {
    let (text, packet) = encode_corpus::<F>(corpus, enc)?;
    let heads = SslHeads::for_encoders(cfg.ssl_mode, enc, cfg.embed_dim, cfg.seed)?;
    pretrain_on_bases(&text, &packet, heads, cfg)
}

fn update_head<F: Scalar>(opt: &mut Adam<F>, slot: usize, head: &mut ProjectionHead<F>, g: &(Array2<F>, ndarray::Array1<F>)) {
    let (gw, gb) = g;
    opt.update(
        slot,
        head.weight.as_slice_mut().expect("standard layout"),
        gw.as_standard_layout().as_slice().expect("standard layout"),
    );
    opt.update(slot + 1, head.bias.as_slice_mut().expect("contiguous"), gb.as_slice().expect("contiguous"));
}

/// Training loop over precomputed base vectors, starting from `heads`.
pub fn pretrain_on_bases<F: Scalar>(
    text: &Array2<F>,
    packet: &Array2<F>,
    mut heads: SslHeads<F>,
    cfg: &TrainConfig,
) -> Result<PretrainOutcome<F>, ContrastiveError> {
    cfg.validate()?;
    let n = text.nrows();
    if n != packet.nrows() {
        return Err(ContrastiveError::Config(format!("{n} texts but {} packets", packet.nrows())));
    }
    if n < cfg.batch {
        return Err(ContrastiveError::Config(format!(
            "corpus has {n} pairs, fewer than the batch size {}",
            cfg.batch
        )));
    }
    let sizes = |h: &Option<ProjectionHead<F>>| h.as_ref().map_or([0, 0], |h| [h.weight.len(), h.bias.len()]);
    let mut slots = sizes(&heads.text).to_vec();
    slots.extend(sizes(&heads.packet));
    let mut opt = Adam::<F>::new(cfg.adam, &slots);
    let tau = F::of(cfg.tau);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cursor + cfg.batch > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + cfg.batch];
        cursor += cfg.batch;
        let xt = text.select(Axis(0), idx);
        let xp = packet.select(Axis(0), idx);
        let (loss, grads) = info_nce_grad(xt.view(), xp.view(), &heads, tau, cfg.denominator_mode, cfg.symmetric)?;
        if !loss.is_finite() {
            let (text_norm, packet_norm) = heads.norms();
            return Err(ContrastiveError::NonFinite {
                step,
                text_norm,
                packet_norm,
            });
        }
        losses.push(loss.as_f64());
        opt.tick();
        if let (Some(h), Some(g)) = (heads.text.as_mut(), grads.text.as_ref()) {
            update_head(&mut opt, 0, h, g);
        }
        if let (Some(h), Some(g)) = (heads.packet.as_mut(), grads.packet.as_ref()) {
            update_head(&mut opt, 2, h, g);
        }
        if step % 100 == 0 {
            log::debug!("pretrain step {step}: loss {loss:.5}");
        }
    }
    Ok(PretrainOutcome { heads, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::SslMode;
    use crate::optim::AdamConfig;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Array2::from_shape_fn((n, 12), |_| rng.gen_range(-1.0..1.0));
        let p = Array2::from_shape_fn((n, 10), |(i, j)| t[[i, j]] * 0.5 + rng.gen_range(-0.1..0.1));
        (t, p)
    }

    fn cfg(lr: f64, steps: usize) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig { lr, ..AdamConfig::default() },
            steps,
            batch: 8,
            embed_dim: 6,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_keeps_initialization() {
        let (t, p) = toy(32, 1);
        let init = SslHeads::init(SslMode::Both, 12, 10, 6, 0).unwrap();
        let out = pretrain_on_bases(&t, &p, init.clone(), &cfg(0.0, 20)).unwrap();
        assert_eq!(out.heads, init);
        assert_eq!(out.losses.len(), 20);
    }

    #[test]
    fn deterministic_and_learns() {
        let (t, p) = toy(64, 2);
        let init = SslHeads::init(SslMode::Both, 12, 10, 6, 0).unwrap();
        let a = pretrain_on_bases(&t, &p, init.clone(), &cfg(1e-2, 300)).unwrap();
        let b = pretrain_on_bases(&t, &p, init, &cfg(1e-2, 300)).unwrap();
        assert_eq!(a.losses, b.losses);
        let head: f64 = a.losses[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = a.losses[250..].iter().sum::<f64>() / 50.0;
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn batch_larger_than_corpus_rejected() {
        let (t, p) = toy(4, 3);
        let init = SslHeads::init(SslMode::Both, 12, 10, 6, 0).unwrap();
        assert!(pretrain_on_bases(&t, &p, init, &cfg(1e-3, 1)).is_err());
    }
}
