use std::collections::BTreeMap;

use crate::autodiff::{adam_update, AdamState, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{graph, LearningRates, LossWeights};
use crate::networks::{encoder_forward, ModelSet, Network, Role};

use super::{Algorithm, StepReport};

/// What one step optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSpec {
    pub algorithm: Algorithm,
    pub weights: LossWeights,
    pub lambda: f64,
    /// DSN ablation: penalize information in the shared representation.
    pub reverse_kl: bool,
    /// VAEGAN ablation: reward difference between DIRep and DDRep.
    pub reverse_difference: bool,
}

impl StepSpec {
    pub fn new(algorithm: Algorithm, weights: LossWeights, iteration: usize) -> Self {
        StepSpec {
            algorithm,
            weights,
            lambda: weights.lambda.at(iteration),
            reverse_kl: false,
            reverse_difference: false,
        }
    }
}

/// One step's inputs. `revealed` holds labelled target rows (possibly none);
/// `noise` is the encoder's reparameterization noise, one row per source and
/// target sample, required only when an encoder is present.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub source: Tensor<T>,
    pub source_labels: Vec<usize>,
    pub target: Tensor<T>,
    pub revealed: Tensor<T>,
    pub revealed_labels: Vec<usize>,
    pub noise: Option<Tensor<T>>,
}

impl<T: Real> Batch<T> {
    pub fn new(source: Tensor<T>, source_labels: Vec<usize>, target: Tensor<T>) -> Self {
        let width = source.shape().get(1).copied().unwrap_or(0);
        Batch {
            source,
            source_labels,
            target,
            revealed: Tensor::zeros(&[0, width]),
            revealed_labels: Vec::new(),
            noise: None,
        }
    }
}

/// Per-network gradients, in parameter order, not yet applied.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGradients<T> {
    pub by_role: BTreeMap<Role, Vec<Vec<T>>>,
}

/// Adam moments for every parameter of every network.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers<T> {
    states: BTreeMap<Role, Vec<AdamState<T>>>,
}

impl<T: Real> Optimizers<T> {
    pub fn new(models: &ModelSet<T>) -> Self {
        let states = models
            .networks()
            .into_iter()
            .map(|n| (n.role(), n.params().map(AdamState::for_tensor).collect()))
            .collect();
        Optimizers { states }
    }

    pub fn state(&self, role: Role) -> Option<&[AdamState<T>]> {
        self.states.get(&role).map(Vec::as_slice)
    }
}

fn learning_rate(lr: &LearningRates, role: Role) -> f64 {
    match role {
        Role::Generator => lr.generator,
        Role::Classifier => lr.classifier,
        Role::Discriminator => lr.discriminator,
        Role::Decoder => lr.decoder,
        Role::Encoder | Role::PrivateSource | Role::PrivateTarget => lr.encoder,
    }
}

fn stack_rows<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let width = parts[0].shape().get(1).copied().unwrap_or(0);
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    let mut rows = 0;
    for p in parts {
        if p.shape().len() != 2 || p.shape()[1] != width {
            return Err(Error::Invalid(format!(
                "batch parts disagree on width: {:?} vs {width}",
                p.shape()
            )));
        }
        rows += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::matrix(rows, width, data)?)
}

fn need<'a, T>(net: Option<&'a Network<T>>, role: Role, algorithm: Algorithm) -> Result<&'a Network<T>> {
    net.ok_or_else(|| Error::Invalid(format!("{algorithm} needs a {} network", role.tag())))
}

fn rows<T: Real>(t: &Tensor<T>) -> usize {
    t.shape().first().copied().unwrap_or(0)
}

fn check_batch<T: Real>(models: &ModelSet<T>, batch: &Batch<T>, adversarial: bool) -> Result<()> {
    let width = models.generator.input_width();
    let classes = models.arch.classes;
    for (name, t) in [("source", &batch.source), ("target", &batch.target), ("revealed", &batch.revealed)] {
        if t.shape().len() != 2 || (t.shape()[1] != width && t.shape()[0] > 0) {
            return Err(Error::Invalid(format!("{name} batch {:?} does not match input width {width}", t.shape())));
        }
    }
    if rows(&batch.source) == 0 || adversarial && rows(&batch.target) == 0 {
        return Err(Error::Invalid("both domains need at least one sample per step".into()));
    }
    if batch.source_labels.len() != rows(&batch.source) || batch.revealed_labels.len() != rows(&batch.revealed) {
        return Err(Error::Invalid("one label per labelled row".into()));
    }
    if let Some(l) = batch.source_labels.iter().chain(&batch.revealed_labels).find(|&&l| l >= classes) {
        return Err(Error::Invalid(format!("label {l} outside {classes} classes")));
    }
    Ok(())
}

struct Losses {
    c: Var,
    d: Option<Var>,
    g: Option<Var>,
    r: Option<Var>,
    kl: Option<Var>,
    difference: Option<Var>,
    information: Option<Var>,
}

/// Forward pass and every network's gradient; nothing is updated.
pub fn compute_gradients<T: Real>(
    models: &ModelSet<T>,
    batch: &Batch<T>,
    spec: &StepSpec,
    iteration: usize,
) -> Result<(StepReport, StepGradients<T>)> {
    let algo = spec.algorithm;
    let adversarial = algo.adversarial();
    check_batch(models, batch, adversarial)?;
    let (nr, ns, nt) = (rows(&batch.revealed), rows(&batch.source), rows(&batch.target));
    let w = &spec.weights;
    let t = |v: f64| T::from_f64_lossy(v);

    let mut tape = Tape::new();
    let gb = models.generator.bind(&mut tape);
    let cb = models.classifier.bind(&mut tape);
    let db = models.discriminator.bind(&mut tape);

    let mut parts = Vec::with_capacity(3);
    if nr > 0 {
        parts.push(&batch.revealed);
    }
    parts.push(&batch.source);
    if adversarial {
        parts.push(&batch.target);
    }
    let x = tape.constant(stack_rows(&parts)?);
    let direp = models.generator.forward(&mut tape, &gb, x)?;

    let cls = tape.slice_rows(direp, 0, nr + ns)?;
    let logits_c = models.classifier.forward_logits(&mut tape, &cb, cls)?;
    let labels: Vec<usize> = batch.revealed_labels.iter().chain(&batch.source_labels).copied().collect();
    let onehot = tape.constant(graph::one_hot(&labels, models.arch.classes));
    let mut losses = Losses {
        c: graph::classification_loss(&mut tape, logits_c, onehot)?,
        d: None,
        g: None,
        r: None,
        kl: None,
        difference: None,
        information: None,
    };

    let mut private_vars = Vec::new();
    let mut encoder_vars = Vec::new();
    let mut decoder_vars = Vec::new();
    if adversarial {
        let dom = tape.slice_rows(direp, nr, nr + ns + nt)?;
        let bits: Vec<f64> = (0..ns + nt).map(|i| if i < ns { 0.0 } else { 1.0 }).collect();
        let d_in = if algo == Algorithm::Dann {
            tape.scale_grad(dom, t(-spec.lambda))?
        } else {
            dom
        };
        let logits_d = models.discriminator.forward_logits(&mut tape, &db, d_in)?;
        losses.d = Some(graph::discriminator_loss(&mut tape, logits_d, &bits)?);
        losses.g = Some(graph::generator_adversarial_loss(&mut tape, logits_d, &bits)?);

        if matches!(algo, Algorithm::Vaegan | Algorithm::ExplicitDdrep | Algorithm::Dsn) {
            let xd = tape.constant(stack_rows(&[&batch.source, &batch.target])?);
            let decoder = need(models.decoder.as_ref(), Role::Decoder, algo)?;
            let fb = decoder.bind(&mut tape);
            decoder_vars = fb.vars().to_vec();
            let mut f_in = vec![dom];
            let mut ddrep = None;
            if let Some(encoder) = models.encoder.as_ref() {
                let eb = encoder.bind(&mut tape);
                encoder_vars = eb.vars().to_vec();
                let noise = batch
                    .noise
                    .as_ref()
                    .ok_or_else(|| Error::Invalid("an encoder step needs reparameterization noise".into()))?;
                let eps = tape.constant(noise.clone());
                let out = encoder_forward(encoder, &mut tape, &eb, xd, eps)?;
                losses.kl = Some(graph::kl_loss(&mut tape, out.z_mean, out.z_log_var)?);
                f_in.push(out.ddrep);
                ddrep = Some(out.ddrep);
            } else if algo == Algorithm::Vaegan {
                return Err(Error::Invalid("vaegan needs an encoder network".into()));
            }
            match algo {
                Algorithm::ExplicitDdrep => {
                    let bits = Tensor::from_f64(vec![ns + nt, 1], &bits)?;
                    f_in.push(tape.constant(bits));
                }
                Algorithm::Dsn => {
                    let ps = need(models.private_source.as_ref(), Role::PrivateSource, algo)?;
                    let pt = need(models.private_target.as_ref(), Role::PrivateTarget, algo)?;
                    let psb = ps.bind(&mut tape);
                    let ptb = pt.bind(&mut tape);
                    private_vars = vec![(Role::PrivateSource, psb.vars().to_vec()), (Role::PrivateTarget, ptb.vars().to_vec())];
                    let xs = tape.constant(batch.source.clone());
                    let xt = tape.constant(batch.target.clone());
                    let hs = ps.forward(&mut tape, &psb, xs)?;
                    let ht = pt.forward(&mut tape, &ptb, xt)?;
                    let private = tape.concat_rows(&[hs, ht])?;
                    f_in.push(private);
                    let mut diff = |shared_from: usize, shared_to: usize, p: Var| -> Result<Var> {
                        let s = tape.slice_rows(dom, shared_from, shared_to)?;
                        let s = graph::normalize_for_difference(&mut tape, s)?;
                        let p = graph::normalize_for_difference(&mut tape, p)?;
                        graph::difference_loss(&mut tape, s, p)
                    };
                    let source_diff = diff(0, ns, hs)?;
                    let target_diff = diff(ns, ns + nt, ht)?;
                    losses.difference = Some(tape.add(source_diff, target_diff)?);
                    if spec.reverse_kl {
                        losses.information = Some(graph::representation_information(&mut tape, dom)?);
                    }
                }
                _ => {}
            }
            if spec.reverse_difference {
                let ddrep = ddrep.ok_or_else(|| Error::Invalid("reverse difference needs an encoder".into()))?;
                let (dw, ew) = (tape.shape(dom)[1], tape.shape(ddrep)[1]);
                if dw % ew != 0 {
                    return Err(Error::Invalid(format!("DDRep width {ew} does not tile DIRep width {dw}")));
                }
                let tiled = tape.tile_cols(ddrep, dw / ew)?;
                let a = graph::normalize_for_difference(&mut tape, dom)?;
                let b = graph::normalize_for_difference(&mut tape, tiled)?;
                losses.difference = Some(graph::difference_loss(&mut tape, a, b)?);
            }
            let joined = tape.concat_cols(&f_in)?;
            let xhat = decoder.forward(&mut tape, &fb, joined)?;
            losses.r = Some(graph::reconstruction_loss(&mut tape, xhat, xd)?);
        }
    }

    let value = |v: Option<Var>, name: &'static str| -> Result<f64> {
        let Some(v) = v else { return Ok(0.0) };
        let x = tape.item(v)?.to_f64().unwrap_or(f64::NAN);
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::NumericAbort { iteration, loss: name })
        }
    };
    let report = StepReport {
        iteration,
        loss_c: value(Some(losses.c), "loss_c")?,
        loss_d: value(losses.d, "loss_d")?,
        loss_g: value(losses.g, "loss_g")?,
        loss_r: value(losses.r, "loss_r")?,
        loss_kl: value(losses.kl, "loss_kl")?,
        loss_difference: losses.difference.map(|d| value(Some(d), "loss_difference")).transpose()?,
        lambda: spec.lambda,
        source_acc: None,
        target_acc: None,
    };
    if let Some(info) = losses.information {
        value(Some(info), "loss_information")?;
    }

    let seeds = |pairs: &[(Option<Var>, f64)]| -> Vec<(Var, T)> {
        pairs.iter().filter_map(|&(v, k)| v.map(|v| (v, t(k)))).collect()
    };
    let lambda = spec.lambda;
    let g_seeds = match algo {
        Algorithm::Vaegan | Algorithm::ExplicitDdrep => {
            let rd = if spec.reverse_difference { -w.reverse_difference } else { 0.0 };
            seeds(&[(losses.g, lambda), (Some(losses.c), w.beta), (losses.r, w.gamma), (losses.difference, rd)])
        }
        Algorithm::GanBased => seeds(&[(losses.g, lambda), (Some(losses.c), w.beta)]),
        // the reversal layer already carries -lambda
        Algorithm::Dann => seeds(&[(Some(losses.c), w.beta), (losses.d, 1.0)]),
        Algorithm::Dsn => seeds(&[
            (losses.g, lambda),
            (Some(losses.c), w.beta),
            (losses.r, w.dsn_recon),
            (losses.information, w.reverse_kl),
        ]),
        Algorithm::SourceOnly | Algorithm::TargetOnly => seeds(&[(Some(losses.c), w.beta)]),
    };

    let mut by_role = BTreeMap::new();
    by_role.insert(Role::Generator, tape.gradients(&g_seeds, gb.vars())?);
    by_role.insert(Role::Classifier, tape.gradients(&seeds(&[(Some(losses.c), 1.0)]), cb.vars())?);
    if adversarial {
        by_role.insert(
            Role::Discriminator,
            tape.gradients(&seeds(&[(losses.d, w.discriminator)]), db.vars())?,
        );
    }
    if !encoder_vars.is_empty() {
        let rd = if spec.reverse_difference { -w.reverse_difference } else { 0.0 };
        let e = seeds(&[(losses.kl, 1.0), (losses.r, w.mu), (losses.difference, rd)]);
        by_role.insert(Role::Encoder, tape.gradients(&e, &encoder_vars)?);
    }
    if !decoder_vars.is_empty() {
        let k = if algo == Algorithm::Dsn { w.dsn_recon } else { 1.0 };
        by_role.insert(Role::Decoder, tape.gradients(&seeds(&[(losses.r, k)]), &decoder_vars)?);
    }
    for (role, vars) in private_vars {
        let p = seeds(&[(losses.r, w.dsn_recon), (losses.difference, w.dsn_difference)]);
        by_role.insert(role, tape.gradients(&p, &vars)?);
    }
    Ok((report, StepGradients { by_role }))
}

/// Adam-update each network from precomputed gradients, in `order` (every
/// role with gradients when `None`). Networks without gradients are untouched.
pub fn apply_gradients<T: Real>(
    models: &mut ModelSet<T>,
    optimizers: &mut Optimizers<T>,
    grads: StepGradients<T>,
    lr: &LearningRates,
    order: Option<&[Role]>,
) -> Result<()> {
    let mut by_role = grads.by_role;
    let roles: Vec<Role> = match order {
        Some(o) => o.to_vec(),
        None => by_role.keys().copied().collect(),
    };
    for role in roles {
        let Some(g) = by_role.remove(&role) else { continue };
        let net = models
            .network_mut(role)
            .ok_or_else(|| Error::Invalid(format!("no {} network to update", role.tag())))?;
        let states = optimizers
            .states
            .get_mut(&role)
            .ok_or_else(|| Error::Invalid(format!("no optimizer state for {}", role.tag())))?;
        net.accumulate_gradients(&g)?;
        let rate = learning_rate(lr, role);
        for (p, s) in net.params_mut().zip(states.iter_mut()) {
            adam_update(p, s, rate)?;
            p.clear_grad();
        }
    }
    if let Some(role) = by_role.keys().next() {
        return Err(Error::Invalid(format!("update order skipped {}", role.tag())));
    }
    Ok(())
}

/// Compute then apply: one simultaneous update of every network.
pub fn step<T: Real>(
    models: &mut ModelSet<T>,
    optimizers: &mut Optimizers<T>,
    batch: &Batch<T>,
    spec: &StepSpec,
    iteration: usize,
) -> Result<StepReport> {
    let (report, grads) = compute_gradients(models, batch, spec, iteration)?;
    apply_gradients(models, optimizers, grads, &spec.weights.lr, None)?;
    Ok(report)
}

macro_rules! named_step {
    ($(#[$doc:meta])* $name:ident, $algo:expr) => {
        $(#[$doc])*
        pub fn $name<T: Real>(
            models: &mut ModelSet<T>,
            optimizers: &mut Optimizers<T>,
            batch: &Batch<T>,
            weights: &LossWeights,
            iteration: usize,
        ) -> Result<StepReport> {
            step(models, optimizers, batch, &StepSpec::new($algo, *weights, iteration), iteration)
        }
    };
}

named_step!(
    /// `G` on `lambda*L_g + beta*L_c + gamma*L_r`, `C` on `L_c`, `D` on `L_d`,
    /// `E` on `L_kl + mu*L_r`, `F` on `L_r`.
    vaegan_step,
    Algorithm::Vaegan
);
named_step!(
    /// As [`vaegan_step`] with the domain bit as DDRep.
    explicit_ddrep_step,
    Algorithm::ExplicitDdrep
);
named_step!(
    /// [`vaegan_step`] without encoder and decoder.
    gan_based_step,
    Algorithm::GanBased
);
named_step!(
    /// `L_c + L_d` with the domain gradient reversed (times `-lambda`) into `G`.
    dann_step,
    Algorithm::Dann
);
named_step!(dsn_step, Algorithm::Dsn);
