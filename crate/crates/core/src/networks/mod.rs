//! Fully-connected stacks for the generator, encoder, decoder, classifier and
//! discriminator.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result, TensorError};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Generator,
    Encoder,
    Decoder,
    Classifier,
    Discriminator,
    /// DSN private encoder for the source domain.
    PrivateSource,
    /// DSN private encoder for the target domain.
    PrivateTarget,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Generator,
        Role::Encoder,
        Role::Decoder,
        Role::Classifier,
        Role::Discriminator,
        Role::PrivateSource,
        Role::PrivateTarget,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Role::Generator => "G",
            Role::Encoder => "E",
            Role::Decoder => "F",
            Role::Classifier => "C",
            Role::Discriminator => "D",
            Role::PrivateSource => "Ps",
            Role::PrivateTarget => "Pt",
        }
    }

    fn stream(self) -> u64 {
        Role::ALL.iter().position(|&r| r == self).unwrap() as u64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input: usize, output: usize, activation: Activation) -> Self {
        LayerSpec {
            input,
            output,
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    /// `[input, output]`
    pub weight: Tensor<T>,
    /// `[output]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    role: Role,
    layers: Vec<Layer<T>>,
}

/// Tape handles for one network's parameters, in `weight, bias` order per layer.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Invalid("network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input == 0 || s.output == 0 {
            return Err(Error::Invalid(format!("layer {i} has a zero width")));
        }
    }
    for (i, w) in specs.windows(2).enumerate() {
        if w[0].output != w[1].input {
            return Err(Error::Invalid(format!(
                "layer {i} outputs {} but layer {} takes {}",
                w[0].output,
                i + 1,
                w[1].input
            )));
        }
    }
    Ok(())
}

impl<T: Real> Network<T> {
    /// Glorot-uniform weights drawn from the role's stream of `seed`; zero biases.
    pub fn new(role: Role, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(role.stream());
        let layers = specs
            .iter()
            .map(|&spec| {
                let limit = (6.0 / (spec.input + spec.output) as f64).sqrt();
                let w: Vec<T> = (0..spec.input * spec.output)
                    .map(|_| T::from_f64_lossy(rng.random_range(-limit..limit)))
                    .collect();
                Layer {
                    spec,
                    weight: Tensor::new(vec![spec.input, spec.output], w).expect("sized"),
                    bias: Tensor::zeros(&[spec.output]),
                }
            })
            .collect();
        Ok(Network { role, layers })
    }

    pub fn zeros(role: Role, specs: &[LayerSpec]) -> Result<Self> {
        validate_specs(specs)?;
        let layers = specs
            .iter()
            .map(|&spec| Layer {
                spec,
                weight: Tensor::zeros(&[spec.input, spec.output]),
                bias: Tensor::zeros(&[spec.output]),
            })
            .collect();
        Ok(Network { role, layers })
    }

    pub(crate) fn from_layers(role: Role, layers: Vec<Layer<T>>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        Ok(Network { role, layers })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.input
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// `("G.fc1.weight", tensor)` style names in parameter order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let tag = self.role.tag();
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{tag}.fc{}.weight", i + 1), &l.weight),
                    (format!("{tag}.fc{}.bias", i + 1), &l.bias),
                ]
            })
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound(self.params().map(|p| tape.param(p)).collect())
    }

    fn check_input(&self, tape: &Tape<T>, x: Var) -> Result<()> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.input_width() {
            return Err(TensorError::ShapeMismatch {
                op: "network input",
                lhs: vec![self.input_width()],
                rhs: shape.to_vec(),
            }
            .into());
        }
        Ok(())
    }

    fn run(&self, tape: &mut Tape<T>, bound: &Bound, x: Var, final_activation: bool) -> Result<Var> {
        self.check_input(tape, x)?;
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = (bound.0[2 * i], bound.0[2 * i + 1]);
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = if i == last && !final_activation {
                z
            } else {
                match layer.spec.activation {
                    Activation::Relu => tape.relu(z)?,
                    Activation::Sigmoid => tape.sigmoid(z)?,
                    Activation::Softmax => tape.softmax(z)?,
                    Activation::Identity => z,
                }
            };
        }
        Ok(h)
    }

    /// Full forward pass of a `[batch, input]` matrix.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        self.run(tape, bound, x, true)
    }

    /// Forward pass stopping before the last layer's activation.
    pub fn forward_logits(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        self.run(tape, bound, x, false)
    }

    /// Forward pass outside of any training tape.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xv = tape.leaf(x);
        let y = self.forward(&mut tape, &bound, xv)?;
        Ok(tape.value(y))
    }

    /// Add per-parameter gradients (as returned by [`Tape::gradients`] for
    /// `bound.vars()`) into the parameters' gradient buffers.
    pub fn accumulate_gradients(&mut self, grads: &[Vec<T>]) -> Result<()> {
        let n = self.layers.len() * 2;
        if grads.len() != n {
            return Err(TensorError::Contract(format!(
                "{} expects {n} gradient tensors, got {}",
                self.role.tag(),
                grads.len()
            ))
            .into());
        }
        for (p, g) in self.params_mut().zip(grads) {
            p.accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            role: self.role,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }
}

/// Layer widths of every network, independent of the algorithm using them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_width: usize,
    pub generator_hidden: Vec<usize>,
    pub direp_width: usize,
    pub classifier_hidden: Vec<usize>,
    pub classes: usize,
    pub discriminator_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub ddrep_width: usize,
}

fn stack(input: usize, hidden: &[usize], hidden_act: Activation, out: usize, out_act: Activation) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input;
    for &h in hidden {
        specs.push(LayerSpec::new(prev, h, hidden_act));
        prev = h;
    }
    specs.push(LayerSpec::new(prev, out, out_act));
    specs
}

impl ArchConfig {
    /// The MLP used for the Fashion-MNIST experiments: four 100-unit layers
    /// and a 100-unit DIRep, 400-unit layers everywhere else, 1-D DDRep.
    pub fn fashion_mnist(input_width: usize) -> Self {
        ArchConfig {
            input_width,
            generator_hidden: vec![100; 4],
            direp_width: 100,
            classifier_hidden: vec![400; 2],
            classes: 10,
            discriminator_hidden: vec![400; 4],
            decoder_hidden: vec![400; 4],
            encoder_hidden: vec![400; 2],
            ddrep_width: 1,
        }
    }

    /// Same topology at a width suited to low-dimensional fixtures.
    pub fn compact(input_width: usize, classes: usize) -> Self {
        ArchConfig {
            input_width,
            generator_hidden: vec![32; 2],
            direp_width: 16,
            classifier_hidden: vec![32],
            classes,
            discriminator_hidden: vec![32; 2],
            decoder_hidden: vec![32; 2],
            encoder_hidden: vec![32],
            ddrep_width: 1,
        }
    }

    pub fn generator_specs(&self) -> Vec<LayerSpec> {
        stack(
            self.input_width,
            &self.generator_hidden,
            Activation::Relu,
            self.direp_width,
            Activation::Identity,
        )
    }

    pub fn classifier_specs(&self) -> Vec<LayerSpec> {
        stack(
            self.direp_width,
            &self.classifier_hidden,
            Activation::Relu,
            self.classes,
            Activation::Softmax,
        )
    }

    pub fn discriminator_specs(&self) -> Vec<LayerSpec> {
        stack(
            self.direp_width,
            &self.discriminator_hidden,
            Activation::Relu,
            2,
            Activation::Softmax,
        )
    }

    /// Encoder emits `[z_mean | z_log_var]`, each `ddrep_width` wide.
    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        stack(
            self.input_width,
            &self.encoder_hidden,
            Activation::Relu,
            2 * self.ddrep_width,
            Activation::Identity,
        )
    }

    pub fn decoder_specs(&self, input: DecoderInput) -> Vec<LayerSpec> {
        stack(
            self.decoder_input_width(input),
            &self.decoder_hidden,
            Activation::Relu,
            self.input_width,
            Activation::Sigmoid,
        )
    }

    pub fn private_specs(&self) -> Vec<LayerSpec> {
        self.generator_specs()
    }

    pub fn decoder_input_width(&self, input: DecoderInput) -> usize {
        self.direp_width
            + match input {
                DecoderInput::Encoder => self.ddrep_width,
                DecoderInput::DomainBit => 1,
                DecoderInput::EncoderAndBit => self.ddrep_width + 1,
                DecoderInput::Private => self.direp_width,
            }
    }
}

/// What the decoder sees next to the DIRep (always DIRep first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderInput {
    /// Sampled encoder DDRep.
    Encoder,
    /// The domain bit alone.
    DomainBit,
    /// Encoder DDRep followed by the domain bit.
    EncoderAndBit,
    /// A DSN private representation.
    Private,
}

/// Which optional networks a model set carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub encoder: bool,
    pub decoder: Option<DecoderInput>,
    pub private_encoders: bool,
}

impl ModelLayout {
    pub const CLASSIFIER_ONLY: ModelLayout = ModelLayout {
        encoder: false,
        decoder: None,
        private_encoders: false,
    };
    pub const VAEGAN: ModelLayout = ModelLayout {
        encoder: true,
        decoder: Some(DecoderInput::Encoder),
        private_encoders: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet<T> {
    pub arch: ArchConfig,
    pub layout: ModelLayout,
    pub generator: Network<T>,
    pub classifier: Network<T>,
    pub discriminator: Network<T>,
    pub encoder: Option<Network<T>>,
    pub decoder: Option<Network<T>>,
    pub private_source: Option<Network<T>>,
    pub private_target: Option<Network<T>>,
}

impl<T: Real> ModelSet<T> {
    /// Every network is seeded from its own role stream, so `G`, `C` and `D`
    /// start identical whichever optional networks are present.
    pub fn build(arch: &ArchConfig, layout: ModelLayout, seed: u64) -> Result<Self> {
        if layout.decoder == Some(DecoderInput::Private) && !layout.private_encoders
            || matches!(layout.decoder, Some(DecoderInput::Encoder | DecoderInput::EncoderAndBit))
                && !layout.encoder
        {
            return Err(Error::Invalid(format!("inconsistent model layout {layout:?}")));
        }
        let opt = |on: bool, role: Role, specs: Vec<LayerSpec>| -> Result<Option<Network<T>>> {
            on.then(|| Network::new(role, &specs, seed)).transpose()
        };
        Ok(ModelSet {
            arch: arch.clone(),
            layout,
            generator: Network::new(Role::Generator, &arch.generator_specs(), seed)?,
            classifier: Network::new(Role::Classifier, &arch.classifier_specs(), seed)?,
            discriminator: Network::new(Role::Discriminator, &arch.discriminator_specs(), seed)?,
            encoder: opt(layout.encoder, Role::Encoder, arch.encoder_specs())?,
            decoder: match layout.decoder {
                Some(input) => Some(Network::new(Role::Decoder, &arch.decoder_specs(input), seed)?),
                None => None,
            },
            private_source: opt(layout.private_encoders, Role::PrivateSource, arch.private_specs())?,
            private_target: opt(layout.private_encoders, Role::PrivateTarget, arch.private_specs())?,
        })
    }

    pub fn networks(&self) -> Vec<&Network<T>> {
        let mut out = vec![&self.generator, &self.classifier, &self.discriminator];
        out.extend(self.encoder.iter());
        out.extend(self.decoder.iter());
        out.extend(self.private_source.iter());
        out.extend(self.private_target.iter());
        out
    }

    pub fn network(&self, role: Role) -> Option<&Network<T>> {
        match role {
            Role::Generator => Some(&self.generator),
            Role::Classifier => Some(&self.classifier),
            Role::Discriminator => Some(&self.discriminator),
            Role::Encoder => self.encoder.as_ref(),
            Role::Decoder => self.decoder.as_ref(),
            Role::PrivateSource => self.private_source.as_ref(),
            Role::PrivateTarget => self.private_target.as_ref(),
        }
    }

    pub fn network_mut(&mut self, role: Role) -> Option<&mut Network<T>> {
        match role {
            Role::Generator => Some(&mut self.generator),
            Role::Classifier => Some(&mut self.classifier),
            Role::Discriminator => Some(&mut self.discriminator),
            Role::Encoder => self.encoder.as_mut(),
            Role::Decoder => self.decoder.as_mut(),
            Role::PrivateSource => self.private_source.as_mut(),
            Role::PrivateTarget => self.private_target.as_mut(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.networks().iter().map(|n| n.param_count()).sum()
    }
}

/// `G`, `E`, `F`, `C`, `D` for the Fashion-MNIST MLP at training precision.
pub fn build_default_fm_networks(input_width: usize, seed: u64) -> Result<ModelSet<f32>> {
    ModelSet::build(&ArchConfig::fashion_mnist(input_width), ModelLayout::VAEGAN, seed)
}

/// Sampled DDRep and the Gaussian parameters it was drawn from.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub ddrep: Var,
    pub z_mean: Var,
    pub z_log_var: Var,
}

pub fn generator_forward<T: Real>(g: &Network<T>, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
    g.forward(tape, bound, x)
}

/// `ddrep = z_mean + exp(z_log_var / 2) * eps`.
pub fn encoder_forward<T: Real>(
    e: &Network<T>,
    tape: &mut Tape<T>,
    bound: &Bound,
    x: Var,
    eps: Var,
) -> Result<EncoderOutput> {
    let latent = e.output_width() / 2;
    let rows = tape.shape(x).first().copied().unwrap_or(0);
    if tape.shape(eps) != [rows, latent] {
        return Err(TensorError::ShapeMismatch {
            op: "encoder noise",
            lhs: vec![rows, latent],
            rhs: tape.shape(eps).to_vec(),
        }
        .into());
    }
    let out = e.forward(tape, bound, x)?;
    let z_mean = tape.slice_cols(out, 0, latent)?;
    let z_log_var = tape.slice_cols(out, latent, 2 * latent)?;
    let half = tape.scale(z_log_var, T::from_f64_lossy(0.5))?;
    let std = tape.exp(half)?;
    let noise = tape.mul(std, eps)?;
    let ddrep = tape.add(z_mean, noise)?;
    Ok(EncoderOutput {
        ddrep,
        z_mean,
        z_log_var,
    })
}

/// Reconstruction from `DIRep ⊕ DDRep`.
pub fn decoder_forward<T: Real>(
    f: &Network<T>,
    tape: &mut Tape<T>,
    bound: &Bound,
    direp: Var,
    ddrep: Var,
) -> Result<Var> {
    let joined = tape.concat_cols(&[direp, ddrep])?;
    f.forward(tape, bound, joined)
}

/// Class probabilities for each DIRep row.
pub fn predict_label<T: Real>(c: &Network<T>, direp: &Tensor<T>) -> Result<Tensor<T>> {
    c.infer(direp)
}

/// Domain probabilities `[P(source), P(target)]` for each DIRep row.
pub fn predict_domain<T: Real>(d: &Network<T>, direp: &Tensor<T>) -> Result<Tensor<T>> {
    d.infer(direp)
}
