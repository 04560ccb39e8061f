//! Small speaker-classification network over frame-level features.
//!
//! Two dense+ReLU frame layers, statistics pooling (per-utterance mean and
//! standard deviation concatenated), a linear embedding layer whose
//! pre-activation is the speaker embedding, and a softmax classifier head.
//! Backpropagation is written out by hand; it also returns the gradient with
//! respect to the input features so the front-end kernels can be trained
//! through the network.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::pipeline::FeatureMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Width of the two frame-level layers.
pub const FRAME_DIM: usize = 64;
/// Embedding dimensionality.
pub const EMBED_DIM: usize = 64;
/// Pooled vector length (mean and std concatenated).
pub const POOLED_DIM: usize = 2 * FRAME_DIM;

#[derive(Debug, Clone)]
pub struct ToyEmbedNet {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub w3: Mat,
    pub b3: Vec<f64>,
    pub w4: Mat,
    pub b4: Vec<f64>,
    input_dim: usize,
    num_speakers: usize,
}

/// Gradients for every net parameter, same shapes as [`ToyEmbedNet`].
#[derive(Debug, Clone)]
pub struct NetGradients {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub w3: Mat,
    pub b3: Vec<f64>,
    pub w4: Mat,
    pub b4: Vec<f64>,
}

impl NetGradients {
    pub fn zeros_like(net: &ToyEmbedNet) -> Self {
        NetGradients {
            w1: Mat::zeros(net.w1.rows(), net.w1.cols()),
            b1: vec![0.0; net.b1.len()],
            w2: Mat::zeros(net.w2.rows(), net.w2.cols()),
            b2: vec![0.0; net.b2.len()],
            w3: Mat::zeros(net.w3.rows(), net.w3.cols()),
            b3: vec![0.0; net.b3.len()],
            w4: Mat::zeros(net.w4.rows(), net.w4.cols()),
            b4: vec![0.0; net.b4.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &NetGradients, a: f64) {
        self.w1.add_scaled(&other.w1, a);
        self.w2.add_scaled(&other.w2, a);
        self.w3.add_scaled(&other.w3, a);
        self.w4.add_scaled(&other.w4, a);
        for (dst, src) in [
            (&mut self.b1, &other.b1),
            (&mut self.b2, &other.b2),
            (&mut self.b3, &other.b3),
            (&mut self.b4, &other.b4),
        ] {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.w1.scale(a);
        self.w2.scale(a);
        self.w3.scale(a);
        self.w4.scale(a);
        for b in [&mut self.b1, &mut self.b2, &mut self.b3, &mut self.b4] {
            for v in b.iter_mut() {
                *v *= a;
            }
        }
    }
}

/// Activations cached by the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct UtteranceCache {
    /// Input features after CMN, one row per frame.
    pub inputs: Vec<Vec<f64>>,
    h1: Vec<Vec<f64>>,
    h2: Vec<Vec<f64>>,
    mean: Vec<f64>,
    std: Vec<f64>,
    pooled: Vec<f64>,
    /// Pre-activation of the embedding layer; this is the embedding.
    pub embedding: Vec<f64>,
    hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

fn glorot_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-a..a))
}

impl ToyEmbedNet {
    /// Seeded Glorot-uniform weights, zero biases.
    pub fn new(input_dim: usize, num_speakers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_ab1e);
        ToyEmbedNet {
            w1: glorot_uniform(&mut rng, FRAME_DIM, input_dim),
            b1: vec![0.0; FRAME_DIM],
            w2: glorot_uniform(&mut rng, FRAME_DIM, FRAME_DIM),
            b2: vec![0.0; FRAME_DIM],
            w3: glorot_uniform(&mut rng, EMBED_DIM, POOLED_DIM),
            b3: vec![0.0; EMBED_DIM],
            w4: glorot_uniform(&mut rng, num_speakers, EMBED_DIM),
            b4: vec![0.0; num_speakers],
            input_dim,
            num_speakers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_speakers(&self) -> usize {
        self.num_speakers
    }

    /// Forward pass returning logits and the speaker embedding (the
    /// pre-activation of the layer after statistics pooling).
    pub fn forward_utterance(&self, fm: &FeatureMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let cache = self.forward_cached_rows(
            (0..fm.num_frames()).map(|t| fm.frame(t).to_vec()).collect(),
        )?;
        Ok((cache.logits, cache.embedding))
    }

    /// Forward pass keeping every activation for the backward pass.
    pub fn forward_cached(&self, fm: &FeatureMatrix) -> Result<UtteranceCache> {
        self.forward_cached_rows((0..fm.num_frames()).map(|t| fm.frame(t).to_vec()).collect())
    }

    fn forward_cached_rows(&self, inputs: Vec<Vec<f64>>) -> Result<UtteranceCache> {
        let t_frames = inputs.len();
        if t_frames < 2 {
            return Err(Error::TooFewFrames { frames: t_frames, required: 2 });
        }
        if inputs.iter().any(|r| r.len() != self.input_dim) {
            return Err(Error::ShapeMismatch {
                op: "forward_utterance",
                detail: format!(
                    "feature dim {} != net input dim {}",
                    inputs[0].len(),
                    self.input_dim
                ),
            });
        }

        let dense_relu = |w: &Mat, b: &[f64], x: &[f64]| -> Vec<f64> {
            w.matvec(x)
                .iter()
                .zip(b)
                .map(|(v, bi)| (v + bi).max(0.0))
                .collect()
        };
        let h1: Vec<Vec<f64>> = inputs.iter().map(|x| dense_relu(&self.w1, &self.b1, x)).collect();
        let h2: Vec<Vec<f64>> = h1.iter().map(|x| dense_relu(&self.w2, &self.b2, x)).collect();

        let tf = t_frames as f64;
        let mut mean = vec![0.0; FRAME_DIM];
        for h in &h2 {
            for (m, &v) in mean.iter_mut().zip(h) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= tf;
        }
        let mut var = vec![0.0; FRAME_DIM];
        for h in &h2 {
            for ((v, &x), &m) in var.iter_mut().zip(h).zip(&mean) {
                let d = x - m;
                *v += d * d;
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / tf).sqrt()).collect();

        let mut pooled = Vec::with_capacity(POOLED_DIM);
        pooled.extend_from_slice(&mean);
        pooled.extend_from_slice(&std);

        let embedding: Vec<f64> =
            self.w3.matvec(&pooled).iter().zip(&self.b3).map(|(v, b)| v + b).collect();
        let hidden: Vec<f64> = embedding.iter().map(|&v| v.max(0.0)).collect();
        let logits: Vec<f64> =
            self.w4.matvec(&hidden).iter().zip(&self.b4).map(|(v, b)| v + b).collect();

        Ok(UtteranceCache { inputs, h1, h2, mean, std, pooled, embedding, hidden, logits })
    }

    /// Backward pass from a logits gradient. Accumulates parameter gradients
    /// into `grads` and returns the gradient with respect to the input
    /// features (one row per frame).
    pub fn backward(
        &self,
        cache: &UtteranceCache,
        d_logits: &[f64],
        grads: &mut NetGradients,
    ) -> Vec<Vec<f64>> {
        let t_frames = cache.inputs.len();
        let tf = t_frames as f64;

        grads.w4.add_outer(d_logits, &cache.hidden, 1.0);
        for (b, &g) in grads.b4.iter_mut().zip(d_logits) {
            *b += g;
        }
        let d_hidden = self.w4.matvec_t(d_logits);
        let d_emb: Vec<f64> = d_hidden
            .iter()
            .zip(&cache.embedding)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();

        grads.w3.add_outer(&d_emb, &cache.pooled, 1.0);
        for (b, &g) in grads.b3.iter_mut().zip(&d_emb) {
            *b += g;
        }
        let d_pooled = self.w3.matvec_t(&d_emb);
        let (d_mean, d_std) = d_pooled.split_at(FRAME_DIM);

        let mut d_inputs = Vec::with_capacity(t_frames);
        for t in 0..t_frames {
            // Mean pooling spreads its gradient uniformly; the std half adds
            // the centered-and-scaled deviation. A coordinate with zero std
            // has zero deviations, so its std term carries nothing.
            let h2 = &cache.h2[t];
            let dh2: Vec<f64> = (0..FRAME_DIM)
                .map(|j| {
                    let mut g = d_mean[j] / tf;
                    if cache.std[j] > 0.0 {
                        g += d_std[j] * (h2[j] - cache.mean[j]) / (tf * cache.std[j]);
                    }
                    g
                })
                .collect();
            let dz2: Vec<f64> =
                dh2.iter().zip(h2).map(|(&g, &h)| if h > 0.0 { g } else { 0.0 }).collect();
            grads.w2.add_outer(&dz2, &cache.h1[t], 1.0);
            for (b, &g) in grads.b2.iter_mut().zip(&dz2) {
                *b += g;
            }
            let dh1 = self.w2.matvec_t(&dz2);
            let dz1: Vec<f64> = dh1
                .iter()
                .zip(&cache.h1[t])
                .map(|(&g, &h)| if h > 0.0 { g } else { 0.0 })
                .collect();
            grads.w1.add_outer(&dz1, &cache.inputs[t], 1.0);
            for (b, &g) in grads.b1.iter_mut().zip(&dz1) {
                *b += g;
            }
            d_inputs.push(self.w1.matvec_t(&dz1));
        }
        d_inputs
    }
}

/// Numerically stable softmax cross-entropy.
///
/// Returns the loss and the logits gradient `softmax(logits) - onehot`.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    debug_assert!(label < logits.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Cosine similarity of two embeddings.
pub fn score_cosine(e1: &[f64], e2: &[f64]) -> Result<f64> {
    let n1 = crate::linalg::norm2(e1);
    let n2 = crate::linalg::norm2(e2);
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::ZeroVector { op: "score_cosine" });
    }
    Ok(crate::linalg::dot(e1, e2) / (n1 * n2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows, 0.01).unwrap()
    }

    #[test]
    fn zero_features_zero_biases_give_uniform_softmax() {
        let net = ToyEmbedNet::new(5, 4, 0);
        let fm = features(vec![vec![0.0; 5]; 3]);
        let (logits, emb) = net.forward_utterance(&fm).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        assert!(emb.iter().all(|&v| v == 0.0));
        let (loss, grad) = cross_entropy(&logits, 2);
        assert!((loss - (4.0f64).ln()).abs() < 1e-12);
        assert!((grad[0] - (0.25 - 0.0)).abs() < 1e-12);
        assert!((grad[2] - (0.25 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn logits_invariant_to_frame_order() {
        let net = ToyEmbedNet::new(3, 4, 1);
        let rows = vec![
            vec![0.5, -0.2, 1.0],
            vec![-1.0, 0.3, 0.4],
            vec![2.0, 0.1, -0.6],
        ];
        let mut reversed = rows.clone();
        reversed.reverse();
        let (a, _) = net.forward_utterance(&features(rows)).unwrap();
        let (b, _) = net.forward_utterance(&features(reversed)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicating_frames_preserves_pooled_statistics() {
        let net = ToyEmbedNet::new(3, 4, 2);
        let rows = vec![vec![0.5, -0.2, 1.0], vec![-1.0, 0.3, 0.4]];
        let doubled: Vec<Vec<f64>> =
            rows.iter().chain(rows.iter()).cloned().collect();
        let a = net.forward_cached(&features(rows)).unwrap();
        let b = net.forward_cached(&features(doubled)).unwrap();
        for (x, y) in a.pooled.iter().zip(&b.pooled) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_frames_is_rejected() {
        let net = ToyEmbedNet::new(3, 4, 3);
        let fm = features(vec![vec![1.0, 2.0, 3.0]]);
        assert!(matches!(
            net.forward_utterance(&fm),
            Err(Error::TooFewFrames { frames: 1, required: 2 })
        ));
    }

    #[test]
    fn softmax_sums_to_one() {
        let (loss, grad) = cross_entropy(&[2.0, -1.0, 0.5], 0);
        assert!(loss > 0.0);
        // grad + onehot is the softmax, which sums to 1.
        let total: f64 = grad.iter().sum::<f64>() + 1.0;
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn net_gradients_match_finite_differences() {
        let net = ToyEmbedNet::new(4, 3, 7);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|t| (0..4).map(|j| ((t * 4 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let fm = features(rows.clone());
        let label = 1;

        let loss_of = |net: &ToyEmbedNet, rows: &[Vec<f64>]| -> f64 {
            let fm = features(rows.to_vec());
            let cache = net.forward_cached(&fm).unwrap();
            cross_entropy(&cache.logits, label).0
        };

        let cache = net.forward_cached(&fm).unwrap();
        let (_, d_logits) = cross_entropy(&cache.logits, label);
        let mut grads = NetGradients::zeros_like(&net);
        let d_inputs = net.backward(&cache, &d_logits, &mut grads);

        // Spot-check a handful of parameters in each tensor.
        let check = |get: &dyn Fn(&ToyEmbedNet) -> f64,
                     set: &dyn Fn(&mut ToyEmbedNet, f64),
                     analytic: f64| {
            let mut pert = net.clone();
            let theta = get(&net);
            let h = 1e-6 * (1.0 + theta.abs());
            set(&mut pert, theta + h);
            let plus = loss_of(&pert, &rows);
            set(&mut pert, theta - h);
            let minus = loss_of(&pert, &rows);
            let fd = (plus - minus) / (2.0 * h);
            assert!(
                (analytic - fd).abs() < 1e-6,
                "analytic {analytic} vs fd {fd}"
            );
        };
        for (i, j) in [(0usize, 0usize), (3, 2), (17, 1)] {
            check(&|n| n.w1.get(i, j), &|n, v| n.w1.set(i, j, v), grads.w1.get(i, j));
        }
        for (i, j) in [(0usize, 0usize), (5, 9), (63, 63)] {
            check(&|n| n.w2.get(i, j), &|n, v| n.w2.set(i, j, v), grads.w2.get(i, j));
        }
        for (i, j) in [(0usize, 64usize), (10, 3), (63, 127)] {
            check(&|n| n.w3.get(i, j), &|n, v| n.w3.set(i, j, v), grads.w3.get(i, j));
        }
        for (i, j) in [(0usize, 0usize), (2, 11)] {
            check(&|n| n.w4.get(i, j), &|n, v| n.w4.set(i, j, v), grads.w4.get(i, j));
        }
        check(&|n| n.b1[4], &|n, v| n.b1[4] = v, grads.b1[4]);
        check(&|n| n.b3[0], &|n, v| n.b3[0] = v, grads.b3[0]);
        check(&|n| n.b4[2], &|n, v| n.b4[2] = v, grads.b4[2]);

        // And the input gradient, which feeds the front-end.
        for (t, j) in [(0usize, 0usize), (2, 3), (4, 1)] {
            let mut pert = rows.clone();
            let theta = pert[t][j];
            let h = 1e-6 * (1.0 + theta.abs());
            pert[t][j] = theta + h;
            let plus = loss_of(&net, &pert);
            pert[t][j] = theta - h;
            let minus = loss_of(&net, &pert);
            let fd = (plus - minus) / (2.0 * h);
            assert!((d_inputs[t][j] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn cosine_scoring() {
        assert!((score_cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(score_cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap().abs() < 1e-12);
        let a = [0.3, -0.7, 0.2];
        let b = [1.1, 0.4, -0.9];
        let s1 = score_cosine(&a, &b).unwrap();
        let scaled: Vec<f64> = a.iter().map(|v| 4.2 * v).collect();
        let s2 = score_cosine(&scaled, &b).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
        assert!(score_cosine(&[0.0, 0.0], &b).is_err());
    }
}
