//! Training objectives and the adversarial weight schedule.
//!
//! Every loss is a batch mean. The `graph` functions build the loss on a tape
//! from logits; the plain functions evaluate the same formulas on
//! probabilities and are what reports and tests use.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Result, TensorError};

/// Per-network learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub generator: f64,
    pub classifier: f64,
    pub discriminator: f64,
    pub encoder: f64,
    pub decoder: f64,
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        LearningRates {
            generator: lr,
            classifier: lr,
            discriminator: lr,
            encoder: lr,
            decoder: lr,
        }
    }
}

impl Default for LearningRates {
    fn default() -> Self {
        Self::uniform(2e-4)
    }
}

/// `lambda(t) = 2 / (1 + exp(-t / tau)) - 1`, or a constant when `fixed` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    pub tau: f64,
    pub fixed: Option<f64>,
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule { tau: 1.0, fixed: None }
    }
}

impl LambdaSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match self.fixed {
            Some(v) => v,
            None => lambda_schedule(t, self.tau),
        }
    }
}

pub fn lambda_schedule(t: usize, tau: f64) -> f64 {
    2.0 / (1.0 + (-(t as f64) / tau).exp()) - 1.0
}

/// Relative weights of the objectives and the per-network learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Classification weight on `G`.
    pub beta: f64,
    /// Reconstruction weight on `G`.
    pub gamma: f64,
    /// Reconstruction weight on `E`.
    pub mu: f64,
    /// Weight of the discriminator's own loss on `D`.
    pub discriminator: f64,
    pub lambda: LambdaSchedule,
    pub lr: LearningRates,
    /// DSN reconstruction coefficient.
    pub dsn_recon: f64,
    /// DSN difference-loss coefficient.
    pub dsn_difference: f64,
    /// Weight of the DIRep information penalty in the DSN ablation.
    pub reverse_kl: f64,
    /// Weight of the negated difference loss in the VAEGAN ablation.
    pub reverse_difference: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 1.0,
            gamma: 1.0,
            mu: 1.0,
            discriminator: 1.0,
            lambda: LambdaSchedule::default(),
            lr: LearningRates::default(),
            dsn_recon: 0.15,
            dsn_difference: 0.05,
            reverse_kl: 0.01,
            reverse_difference: 0.05,
        }
    }
}

impl LossWeights {
    /// Names of any negative or non-finite fields.
    pub fn problems(&self) -> Vec<String> {
        let fields = [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("mu", self.mu),
            ("discriminator", self.discriminator),
            ("lambda_tau", self.lambda.tau),
            ("lr_generator", self.lr.generator),
            ("lr_classifier", self.lr.classifier),
            ("lr_discriminator", self.lr.discriminator),
            ("lr_encoder", self.lr.encoder),
            ("lr_decoder", self.lr.decoder),
            ("dsn_recon", self.dsn_recon),
            ("dsn_difference", self.dsn_difference),
            ("reverse_kl", self.reverse_kl),
            ("reverse_difference", self.reverse_difference),
        ];
        let mut out: Vec<String> = fields
            .iter()
            .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
            .map(|(k, v)| format!("{k} must be finite and non-negative, got {v}"))
            .collect();
        if self.lambda.tau <= 0.0 {
            out.push("lambda_tau must be positive".into());
        }
        if let Some(v) = self.lambda.fixed {
            if !(v.is_finite() && v >= 0.0) {
                out.push(format!("lambda must be finite and non-negative, got {v}"));
            }
        }
        out
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// `-sum_k l_k log p_k`, averaged over rows. Classes with zero target mass
/// contribute nothing, so an exact one-hot prediction scores 0.
pub fn classification_loss<T: Real>(probs: &Tensor<T>, onehot: &Tensor<T>) -> Result<f64, TensorError> {
    same_shape("classification_loss", probs, onehot)?;
    let rows = probs.rows();
    if rows == 0 {
        return Err(TensorError::Contract("classification loss of empty batch".into()));
    }
    let mut total = 0.0;
    for (i, (&p, &l)) in probs.data().iter().zip(onehot.data()).enumerate() {
        let l = to_f64(l);
        if l != 0.0 {
            let p = to_f64(p);
            if p <= 0.0 {
                return Err(TensorError::Domain { value: p, index: i });
            }
            total -= l * p.ln();
        }
    }
    Ok(total / rows as f64)
}

/// Binary cross-entropy of `P(d = 1)` against the domain bits, batch mean.
pub fn discriminator_loss(p_target: &[f64], bits: &[f64]) -> Result<f64, TensorError> {
    if p_target.len() != bits.len() || p_target.is_empty() {
        return Err(TensorError::ShapeMismatch {
            op: "discriminator_loss",
            lhs: vec![p_target.len()],
            rhs: vec![bits.len()],
        });
    }
    let xlogy = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * y.ln() };
    let total: f64 = p_target
        .iter()
        .zip(bits)
        .map(|(&p, &d)| -(xlogy(d, p) + xlogy(1.0 - d, 1.0 - p)))
        .sum();
    Ok(total / p_target.len() as f64)
}

/// The discriminator loss with every domain bit inverted.
pub fn generator_adversarial_loss(p_target: &[f64], bits: &[f64]) -> Result<f64, TensorError> {
    let flipped: Vec<f64> = bits.iter().map(|d| 1.0 - d).collect();
    discriminator_loss(p_target, &flipped)
}

/// Per-row squared L2 error, batch mean.
pub fn reconstruction_loss<T: Real>(xhat: &Tensor<T>, x: &Tensor<T>) -> Result<f64, TensorError> {
    same_shape("reconstruction_loss", xhat, x)?;
    let rows = x.rows().max(1);
    let total: f64 = xhat
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| {
            let d = to_f64(a) - to_f64(b);
            d * d
        })
        .sum();
    Ok(total / rows as f64)
}

/// KL divergence of `N(mean, exp(log_var))` from `N(0, 1)`, summed over
/// latent dimensions and averaged over rows.
pub fn kl_loss<T: Real>(z_mean: &Tensor<T>, z_log_var: &Tensor<T>) -> Result<f64, TensorError> {
    same_shape("kl_loss", z_mean, z_log_var)?;
    let rows = z_mean.rows().max(1);
    let total: f64 = z_mean
        .data()
        .iter()
        .zip(z_log_var.data())
        .map(|(&m, &lv)| {
            let (m, lv) = (to_f64(m), to_f64(lv));
            -0.5 * (1.0 + lv - lv.exp() - m * m)
        })
        .sum();
    Ok(total / rows as f64)
}

/// `|shared^T private|_F^2` for `[n, k1]` and `[n, k2]` matrices.
pub fn difference_loss<T: Real>(shared: &Tensor<T>, private: &Tensor<T>) -> Result<f64, TensorError> {
    if shared.shape().len() != 2 || private.shape().len() != 2 || shared.rows() != private.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "difference_loss",
            lhs: shared.shape().to_vec(),
            rhs: private.shape().to_vec(),
        });
    }
    let (n, k1, k2) = (shared.rows(), shared.cols(), private.cols());
    let mut total = 0.0;
    for a in 0..k1 {
        for b in 0..k2 {
            let dot: f64 = (0..n)
                .map(|i| to_f64(shared.data()[i * k1 + a]) * to_f64(private.data()[i * k2 + b]))
                .sum();
            total += dot * dot;
        }
    }
    Ok(total)
}

/// Tape versions of the losses.
pub mod graph {
    use super::*;

    /// One-hot rows for class indices.
    pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Tensor<T> {
        let mut t = Tensor::zeros(&[labels.len(), classes]);
        for (i, &l) in labels.iter().enumerate() {
            t.data_mut()[i * classes + l] = T::one();
        }
        t
    }

    /// `[1 - d, d]` rows for domain bits.
    pub fn domain_targets<T: Real>(bits: &[f64]) -> Tensor<T> {
        let mut t = Tensor::zeros(&[bits.len(), 2]);
        for (i, &d) in bits.iter().enumerate() {
            t.data_mut()[2 * i] = T::from_f64_lossy(1.0 - d);
            t.data_mut()[2 * i + 1] = T::from_f64_lossy(d);
        }
        t
    }

    /// Cross-entropy of class logits against one-hot (or soft) targets.
    pub fn classification_loss<T: Real>(tape: &mut Tape<T>, logits: Var, targets: Var) -> Result<Var> {
        Ok(tape.softmax_cross_entropy(logits, targets)?)
    }

    /// Two-way cross-entropy of discriminator logits against the domain bits.
    pub fn discriminator_loss<T: Real>(tape: &mut Tape<T>, logits: Var, bits: &[f64]) -> Result<Var> {
        let targets = tape.constant(domain_targets(bits));
        Ok(tape.softmax_cross_entropy(logits, targets)?)
    }

    pub fn generator_adversarial_loss<T: Real>(tape: &mut Tape<T>, logits: Var, bits: &[f64]) -> Result<Var> {
        let flipped: Vec<f64> = bits.iter().map(|d| 1.0 - d).collect();
        discriminator_loss(tape, logits, &flipped)
    }

    pub fn reconstruction_loss<T: Real>(tape: &mut Tape<T>, xhat: Var, x: Var) -> Result<Var> {
        let rows = tape.shape(x).first().copied().unwrap_or(1).max(1);
        let diff = tape.sub(xhat, x)?;
        let sq = tape.sum_squares(diff)?;
        Ok(tape.scale(sq, T::one() / T::from_usize(rows).unwrap())?)
    }

    pub fn kl_loss<T: Real>(tape: &mut Tape<T>, z_mean: Var, z_log_var: Var) -> Result<Var> {
        let rows = tape.shape(z_mean).first().copied().unwrap_or(1).max(1);
        let var = tape.exp(z_log_var)?;
        let m2 = tape.mul(z_mean, z_mean)?;
        let a = tape.add_scalar(z_log_var, T::one())?;
        let b = tape.sub(a, var)?;
        let c = tape.sub(b, m2)?;
        let s = tape.sum(c)?;
        Ok(tape.scale(s, T::from_f64_lossy(-0.5) / T::from_usize(rows).unwrap())?)
    }

    pub fn difference_loss<T: Real>(tape: &mut Tape<T>, shared: Var, private: Var) -> Result<Var> {
        let st = tape.transpose(shared)?;
        let prod = tape.matmul(st, private)?;
        Ok(tape.sum_squares(prod)?)
    }

    /// Centre columns over the batch and scale rows to unit length, the
    /// preprocessing the difference loss expects.
    pub fn normalize_for_difference<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let c = tape.center_cols(x)?;
        Ok(tape.normalize_rows(c, T::from_f64_lossy(1e-8))?)
    }

    /// KL of the per-dimension batch Gaussian fit of `x` from `N(0, 1)` plus
    /// the mean squared row norm per dimension. Pressure toward a small,
    /// low-information representation.
    pub fn representation_information<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::Rank {
                op: "representation_information",
                expected: 2,
                shape,
            }
            .into());
        }
        let width = T::from_usize(shape[1]).unwrap();
        let mean = tape.batch_mean(x)?;
        let centered = tape.center_cols(x)?;
        let sq = tape.mul(centered, centered)?;
        let var = tape.batch_mean(sq)?;
        let var = tape.add_scalar(var, T::from_f64_lossy(1e-6))?;
        let log_var = tape.ln(var)?;
        let m2 = tape.mul(mean, mean)?;
        let a = tape.add_scalar(log_var, T::one())?;
        let b = tape.sub(a, var)?;
        let c = tape.sub(b, m2)?;
        let kl = tape.sum(c)?;
        let kl = tape.scale(kl, T::from_f64_lossy(-0.5))?;
        let energy = tape.sum_squares(x)?;
        let rows = T::from_usize(shape[0].max(1)).unwrap();
        let energy = tape.scale(energy, T::one() / (rows * width))?;
        Ok(tape.add(kl, energy)?)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::autodiff::gradcheck::{central_difference, max_relative_error};

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    #[test]
    fn classification_examples() {
        let l = graph::one_hot::<f64>(&[3], 10);
        assert_eq!(classification_loss(&l, &l).unwrap(), 0.0);
        let uniform = Tensor::full(&[1, 10], 0.1);
        close(classification_loss(&uniform, &l).unwrap(), 2.302585, 1e-6);
        let mut probs = Tensor::full(&[2, 10], 0.1);
        probs.data_mut()[..10].copy_from_slice(l.data());
        let labels = graph::one_hot::<f64>(&[3, 7], 10);
        close(classification_loss(&probs, &labels).unwrap(), 1.151293, 1e-6);
        assert!(classification_loss(&uniform, &graph::one_hot(&[1, 2], 10)).is_err());
    }

    #[test]
    fn discriminator_examples() {
        assert_eq!(discriminator_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        close(discriminator_loss(&[0.5], &[1.0]).unwrap(), 0.693147, 1e-6);
        close(discriminator_loss(&[0.9], &[1.0]).unwrap(), 0.105361, 1e-6);
        assert!(discriminator_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn generator_examples() {
        close(generator_adversarial_loss(&[0.5], &[0.0]).unwrap(), 0.693147, 1e-6);
        close(generator_adversarial_loss(&[0.9], &[0.0]).unwrap(), 0.105361, 1e-6);
    }

    #[test]
    fn reconstruction_examples() {
        let x = t(&[1, 2], &[0.0, 0.0]);
        assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&t(&[1, 2], &[1.0, 1.0]), &x).unwrap(), 2.0);
        let xh = t(&[2, 2], &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(reconstruction_loss(&xh, &t(&[2, 2], &[0.0; 4])).unwrap(), 1.0);
        assert!(reconstruction_loss(&xh, &x).is_err());
    }

    #[test]
    fn kl_examples() {
        let zero = t(&[1, 1], &[0.0]);
        assert_eq!(kl_loss(&zero, &zero).unwrap(), 0.0);
        close(kl_loss(&t(&[1, 1], &[1.0]), &zero).unwrap(), 0.5, 1e-12);
        // variance e, i.e. log variance 1
        close(kl_loss(&zero, &t(&[1, 1], &[1.0])).unwrap(), 0.359141, 1e-6);
    }

    #[test]
    fn kl_is_non_negative_and_zero_only_at_standard_normal() {
        for i in -20..=20 {
            for j in -20..=20 {
                let m = i as f64 * 0.25;
                let lv = j as f64 * 0.25;
                let v = kl_loss(&t(&[1, 1], &[m]), &t(&[1, 1], &[lv])).unwrap();
                assert!(v >= 0.0);
                if i == 0 && j == 0 {
                    assert_eq!(v, 0.0);
                } else {
                    assert!(v > 0.0);
                }
            }
        }
    }

    #[test]
    fn difference_examples() {
        let shared = t(&[3, 2], &[1.0, 0.5, -0.2, 0.3, 0.0, 1.0]);
        assert_eq!(difference_loss(&shared, &Tensor::zeros(&[3, 2])).unwrap(), 0.0);
        // columns of `orth` are orthogonal to the columns of `a`
        let a = t(&[2, 1], &[1.0, 1.0]);
        let orth = t(&[2, 2], &[1.0, 2.0, -1.0, -2.0]);
        assert_eq!(difference_loss(&a, &orth).unwrap(), 0.0);
        let unit = t(&[1, 3], &[0.6, 0.8, 0.0]);
        close(difference_loss(&unit, &unit).unwrap(), 1.0, 1e-12);
        assert!(difference_loss(&unit, &shared).is_err());
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_schedule(0, 1.0), 0.0);
        close(lambda_schedule(1, 1.0), 0.462117, 1e-6);
        close(lambda_schedule(1000, 1.0), 1.0, 1e-12);
        close(lambda_schedule(100, 100.0), 0.462117, 1e-6);
        let fixed = LambdaSchedule { tau: 1.0, fixed: Some(0.3) };
        assert_eq!(fixed.at(50), 0.3);
    }

    #[test]
    fn weights_default_and_validation() {
        let w = LossWeights::default();
        assert_eq!((w.beta, w.gamma, w.mu), (1.0, 1.0, 1.0));
        assert_eq!(w.lr, LearningRates::uniform(2e-4));
        assert_eq!((w.dsn_recon, w.dsn_difference), (0.15, 0.05));
        assert!(w.problems().is_empty());
        let bad = LossWeights { gamma: -1.0, ..w };
        assert_eq!(bad.problems().len(), 1);
    }

    fn graph_value(build: impl Fn(&mut Tape<f64>) -> Var) -> f64 {
        let mut tape = Tape::new();
        let v = build(&mut tape);
        tape.item(v).unwrap()
    }

    #[test]
    fn graph_losses_agree_with_plain_formulas() {
        let logits = t(&[3, 4], &[0.1, -2.0, 1.5, 0.3, 2.2, 0.0, -0.4, 1.0, -1.0, -1.0, 3.0, 0.2]);
        let mut probs = logits.clone();
        for r in 0..3 {
            let row = &mut probs.data_mut()[r * 4..(r + 1) * 4];
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            row.iter_mut().for_each(|v| *v = v.exp() / s);
        }
        let labels = graph::one_hot::<f64>(&[2, 0, 3], 4);
        let g = graph_value(|tp| {
            let l = tp.constant(logits.clone());
            let y = tp.constant(labels.clone());
            graph::classification_loss(tp, l, y).unwrap()
        });
        close(g, classification_loss(&probs, &labels).unwrap(), 1e-12);

        let dl = t(&[3, 2], &[0.3, -0.1, 2.0, 0.0, -1.0, 1.0]);
        let bits = [0.0, 1.0, 1.0];
        let p1: Vec<f64> = (0..3)
            .map(|r| {
                let (a, b) = (dl.data()[2 * r], dl.data()[2 * r + 1]);
                b.exp() / (a.exp() + b.exp())
            })
            .collect();
        let gd = graph_value(|tp| {
            let l = tp.constant(dl.clone());
            graph::discriminator_loss(tp, l, &bits).unwrap()
        });
        close(gd, discriminator_loss(&p1, &bits).unwrap(), 1e-12);
        let gg = graph_value(|tp| {
            let l = tp.constant(dl.clone());
            graph::generator_adversarial_loss(tp, l, &bits).unwrap()
        });
        close(gg, generator_adversarial_loss(&p1, &bits).unwrap(), 1e-12);

        let a = t(&[2, 3], &[0.2, 0.4, 0.1, 0.9, 0.0, 0.5]);
        let b = t(&[2, 3], &[0.0, 1.0, 0.3, 0.2, 0.2, 0.2]);
        let gr = graph_value(|tp| {
            let x = tp.constant(a.clone());
            let y = tp.constant(b.clone());
            graph::reconstruction_loss(tp, x, y).unwrap()
        });
        close(gr, reconstruction_loss(&a, &b).unwrap(), 1e-12);
        let gk = graph_value(|tp| {
            let x = tp.constant(a.clone());
            let y = tp.constant(b.clone());
            graph::kl_loss(tp, x, y).unwrap()
        });
        close(gk, kl_loss(&a, &b).unwrap(), 1e-12);
        let gdiff = graph_value(|tp| {
            let x = tp.constant(a.clone());
            let y = tp.constant(b.clone());
            graph::difference_loss(tp, x, y).unwrap()
        });
        close(gdiff, difference_loss(&a, &b).unwrap(), 1e-12);
    }

    #[test]
    fn graph_loss_gradients_match_finite_differences() {
        let base: Vec<f64> = vec![0.3, -0.2, 0.8, 0.1, 0.5, -0.6, 0.05, 0.9];
        type Builder = fn(&mut Tape<f64>, Var) -> Var;
        let builders: Vec<Builder> = vec![
            |tp, p| {
                let y = tp.constant(graph::one_hot(&[1, 3], 4));
                graph::classification_loss(tp, p, y).unwrap()
            },
            |tp, p| {
                let l = tp.slice_cols(p, 0, 2).unwrap();
                graph::discriminator_loss(tp, l, &[0.0, 1.0]).unwrap()
            },
            |tp, p| {
                let l = tp.slice_cols(p, 2, 4).unwrap();
                graph::generator_adversarial_loss(tp, l, &[1.0, 0.0]).unwrap()
            },
            |tp, p| {
                let x = tp.constant(Tensor::full(&[2, 4], 0.25));
                graph::reconstruction_loss(tp, p, x).unwrap()
            },
            |tp, p| {
                let m = tp.slice_cols(p, 0, 2).unwrap();
                let lv = tp.slice_cols(p, 2, 4).unwrap();
                graph::kl_loss(tp, m, lv).unwrap()
            },
            |tp, p| {
                let a = tp.slice_cols(p, 0, 2).unwrap();
                let b = tp.slice_cols(p, 2, 4).unwrap();
                let na = graph::normalize_for_difference(tp, a).unwrap();
                let nb = graph::normalize_for_difference(tp, b).unwrap();
                graph::difference_loss(tp, na, nb).unwrap()
            },
            |tp, p| graph::representation_information(tp, p).unwrap(),
        ];
        for (i, build) in builders.iter().enumerate() {
            let mut tape = Tape::new();
            let p = tape.param(&t(&[2, 4], &base));
            let loss = build(&mut tape, p);
            let analytic = tape.backward(loss).unwrap().get(p).unwrap().to_vec();
            let numeric = central_difference(&base, 1e-5, |v| {
                let mut tape = Tape::new();
                let p = tape.param(&t(&[2, 4], v));
                let l = build(&mut tape, p);
                tape.item(l).unwrap()
            });
            let err = max_relative_error(&analytic, &numeric, 1e-6);
            assert!(err < 1e-4, "builder {i}: {err}");
        }
    }

    #[test]
    fn reverse_difference_is_the_negated_difference() {
        let direp = t(&[3, 4], &[0.1, 0.4, -0.3, 0.2, 0.5, 0.0, 0.1, -0.2, 0.3, 0.3, 0.3, 0.3]);
        let ddrep = t(&[3, 1], &[0.7, -0.1, 0.2]);
        let mut tape = Tape::new();
        let a = tape.constant(direp);
        let b = tape.constant(ddrep);
        let tiled = tape.tile_cols(b, 4).unwrap();
        let na = graph::normalize_for_difference(&mut tape, a).unwrap();
        let nb = graph::normalize_for_difference(&mut tape, tiled).unwrap();
        let d = graph::difference_loss(&mut tape, na, nb).unwrap();
        let rev = tape.scale(d, -1.0).unwrap();
        let plain = difference_loss(&tape.value(na), &tape.value(nb)).unwrap();
        assert!(plain > 0.0);
        close(tape.item(rev).unwrap(), -plain, 1e-12);
    }

    proptest! {
        #[test]
        fn generator_loss_is_the_label_flipped_discriminator_loss(
            pairs in proptest::collection::vec((0.001f64..0.999, proptest::bool::ANY), 1..20)
        ) {
            let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let d: Vec<f64> = pairs.iter().map(|x| if x.1 { 1.0 } else { 0.0 }).collect();
            let flipped: Vec<f64> = d.iter().map(|v| 1.0 - v).collect();
            prop_assert_eq!(
                generator_adversarial_loss(&p, &d).unwrap(),
                discriminator_loss(&p, &flipped).unwrap()
            );
        }

        #[test]
        fn batch_losses_are_permutation_invariant(
            rows in proptest::collection::vec((0usize..4, 0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0), 2..12),
            rot in 1usize..11,
        ) {
            let build = |order: &[usize]| {
                let mut probs = Vec::new();
                let mut labels = Vec::new();
                let mut p1 = Vec::new();
                let mut bits = Vec::new();
                for &i in order {
                    let (l, a, b, c, d) = rows[i];
                    let s = a + b + c + d;
                    probs.extend([a / s, b / s, c / s, d / s]);
                    labels.push(l);
                    p1.push(a / (a + b));
                    bits.push((l % 2) as f64);
                }
                let n = order.len();
                let cl = classification_loss(&t(&[n, 4], &probs), &graph::one_hot(&labels, 4)).unwrap();
                (cl, discriminator_loss(&p1, &bits).unwrap())
            };
            let n = rows.len();
            let ident: Vec<usize> = (0..n).collect();
            let mut perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            perm.reverse();
            let (a1, b1) = build(&ident);
            let (a2, b2) = build(&perm);
            prop_assert!((a1 - a2).abs() < 1e-12);
            prop_assert!((b1 - b2).abs() < 1e-12);
        }
    }
}
