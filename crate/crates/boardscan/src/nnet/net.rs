//! Network assembly: one shared encoder feeding two decoder heads.
//!
//! All trainable values live in a single flat arena so the optimizer,
//! checkpoints, and the gradient checker can treat parameters uniformly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, ConvSpec};
use super::{AdamState, Scalar, Tensor};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.1;
pub const ENCODER_WIDTHS: [usize; 3] = [16, 32, 64];

/// One named parameter tensor inside the arena.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

/// Which stage of the graph a parameter belongs to; used by the gradient
/// checker to recompute only downstream stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerId {
    Enc(usize),
    Recon(usize),
    Mask(usize),
}

/// Fixed layer topology: 3 stride-2 3x3 convolutions into a latent with 64
/// channels, mirrored by two chains of 3 stride-2 4x4 transposed
/// convolutions (image head: 3 channels, gate head: 1 channel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arch {
    pub in_channels: usize,
    pub enc: [ConvSpec; 3],
    pub dec_recon: [ConvSpec; 3],
    pub dec_mask: [ConvSpec; 3],
    pub n_params: usize,
    pub groups: Vec<ParamGroup>,
}

impl Arch {
    pub fn standard(in_channels: usize) -> Arch {
        let mut offset = 0usize;
        let mut groups = Vec::new();
        let mut make = |name: &str,
                        in_ch: usize,
                        out_ch: usize,
                        kernel: usize,
                        transposed: bool|
         -> ConvSpec {
            let w_len = kernel * kernel * in_ch * out_ch;
            let spec = ConvSpec {
                in_ch,
                out_ch,
                kernel,
                stride: 2,
                pad: 1,
                transposed,
                w_off: offset,
                b_off: offset + w_len,
            };
            groups.push(ParamGroup {
                name: format!("{name}.weight"),
                offset,
                len: w_len,
                shape: vec![kernel, kernel, in_ch, out_ch],
            });
            groups.push(ParamGroup {
                name: format!("{name}.bias"),
                offset: offset + w_len,
                len: out_ch,
                shape: vec![out_ch],
            });
            offset += w_len + out_ch;
            spec
        };

        let [w1, w2, w3] = ENCODER_WIDTHS;
        let enc = [
            make("encoder.conv1", in_channels, w1, 3, false),
            make("encoder.conv2", w1, w2, 3, false),
            make("encoder.conv3", w2, w3, 3, false),
        ];
        let dec_recon = [
            make("recon.tconv1", w3, w2, 4, true),
            make("recon.tconv2", w2, w1, 4, true),
            make("recon.tconv3", w1, 3, 4, true),
        ];
        let dec_mask = [
            make("mask.tconv1", w3, w2, 4, true),
            make("mask.tconv2", w2, w1, 4, true),
            make("mask.tconv3", w1, 1, 4, true),
        ];
        Arch {
            in_channels,
            enc,
            dec_recon,
            dec_mask,
            n_params: offset,
            groups,
        }
    }

    /// Map an arena index back to its parameter group (for diagnostics).
    pub fn group_of(&self, index: usize) -> &ParamGroup {
        self.groups
            .iter()
            .find(|g| index >= g.offset && index < g.offset + g.len)
            .expect("index within arena")
    }

    /// Stage owning a parameter group, keyed by group name prefix.
    pub fn layer_of_group(&self, group: &ParamGroup) -> LayerId {
        let chain_index = |name: &str| -> usize {
            // names look like "recon.tconv2.weight"
            let digit = name
                .bytes()
                .find(|b| b.is_ascii_digit())
                .expect("layer index digit");
            (digit - b'1') as usize
        };
        if group.name.starts_with("encoder") {
            LayerId::Enc(chain_index(&group.name))
        } else if group.name.starts_with("recon") {
            LayerId::Recon(chain_index(&group.name))
        } else {
            LayerId::Mask(chain_index(&group.name))
        }
    }
}

/// Architecture plus its parameter arena.
#[derive(Debug, Clone, PartialEq)]
pub struct Net<T> {
    pub arch: Arch,
    pub params: Vec<T>,
}

impl<T: Scalar> Net<T> {
    /// Glorot-uniform weights, zero biases, reproducible from the seed.
    pub fn init(arch: Arch, seed: u64) -> Net<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::ZERO; arch.n_params];
        for spec in arch
            .enc
            .iter()
            .chain(arch.dec_recon.iter())
            .chain(arch.dec_mask.iter())
        {
            let limit = spec.init_limit();
            for w in &mut params[spec.w_off..spec.w_off + spec.w_len()] {
                *w = T::from_f64(rng.gen_range(-limit..limit));
            }
        }
        Net { arch, params }
    }

    pub fn zero_grads(&self) -> Vec<T> {
        vec![T::ZERO; self.arch.n_params]
    }

    /// Convert the arena element type (f32 training <-> f64 checking).
    pub fn cast<U: Scalar>(&self) -> Net<U> {
        Net {
            arch: self.arch.clone(),
            params: self.params.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Cached activations of one conv chain, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ChainCache<T> {
    /// Input to each layer (inputs[0] is the chain input).
    pub inputs: Vec<Tensor<T>>,
    /// Pre-activation output of each layer.
    pub pres: Vec<Tensor<T>>,
    /// Chain output after the final nonlinearity.
    pub output: Tensor<T>,
}

fn run_encoder<T: Scalar>(net: &Net<T>, x: &Tensor<T>, from: usize, cache: &mut ChainCache<T>) {
    let slope = T::from_f64(LEAKY_SLOPE);
    let mut cur = x.clone();
    cache.inputs.truncate(from);
    cache.pres.truncate(from);
    if from > 0 {
        cur = leaky_relu(&cache.pres[from - 1], slope);
    }
    for l in from..3 {
        cache.inputs.push(cur.clone());
        let pre = net.arch.enc[l].forward(&net.params, &cur);
        cur = leaky_relu(&pre, slope);
        cache.pres.push(pre);
    }
    cache.output = cur;
}

/// Run the encoder: three stride-2 convolutions, leaky rectifier after each.
/// Spatial dims shrink 8x, so the input side must be a multiple of 8.
pub fn encode<T: Scalar>(net: &Net<T>, x: &Tensor<T>) -> Result<(Tensor<T>, ChainCache<T>)> {
    if x.channels != net.arch.in_channels {
        return Err(Error::Shape(format!(
            "encoder expects {} channels, got {}",
            net.arch.in_channels, x.channels
        )));
    }
    if x.height % 8 != 0 || x.width % 8 != 0 || x.height == 0 {
        return Err(Error::Shape(format!(
            "encoder input dims {}x{} must be multiples of 8",
            x.height, x.width
        )));
    }
    let mut cache = ChainCache {
        inputs: Vec::with_capacity(3),
        pres: Vec::with_capacity(3),
        output: Tensor::zeros(0, 0, 0),
    };
    run_encoder(net, x, 0, &mut cache);
    Ok((cache.output.clone(), cache))
}

fn run_decoder<T: Scalar>(
    chain: &[ConvSpec; 3],
    net: &Net<T>,
    z: &Tensor<T>,
    from: usize,
    cache: &mut ChainCache<T>,
) {
    let slope = T::from_f64(LEAKY_SLOPE);
    let mut cur = z.clone();
    cache.inputs.truncate(from);
    cache.pres.truncate(from);
    if from > 0 {
        cur = leaky_relu(&cache.pres[from - 1], slope);
    }
    for l in from..3 {
        cache.inputs.push(cur.clone());
        let pre = chain[l].forward(&net.params, &cur);
        cur = if l < 2 {
            leaky_relu(&pre, slope)
        } else {
            sigmoid(&pre)
        };
        cache.pres.push(pre);
    }
    cache.output = cur;
}

/// Run a decoder head: three stride-2 transposed convolutions, leaky
/// rectifier between, sigmoid on the output so values lie in (0, 1).
pub fn decode<T: Scalar>(
    chain: &[ConvSpec; 3],
    net: &Net<T>,
    z: &Tensor<T>,
) -> Result<(Tensor<T>, ChainCache<T>)> {
    if z.channels != chain[0].in_ch {
        return Err(Error::Shape(format!(
            "decoder expects {} channels, got {}",
            chain[0].in_ch, z.channels
        )));
    }
    let mut cache = ChainCache {
        inputs: Vec::with_capacity(3),
        pres: Vec::with_capacity(3),
        output: Tensor::zeros(0, 0, 0),
    };
    run_decoder(chain, net, z, 0, &mut cache);
    Ok((cache.output.clone(), cache))
}

pub fn decode_recon<T: Scalar>(net: &Net<T>, z: &Tensor<T>) -> Result<(Tensor<T>, ChainCache<T>)> {
    decode(&net.arch.dec_recon, net, z)
}

pub fn decode_mask<T: Scalar>(net: &Net<T>, z: &Tensor<T>) -> Result<(Tensor<T>, ChainCache<T>)> {
    decode(&net.arch.dec_mask, net, z)
}

/// Recompute a chain output from layer `from` onwards, reusing cached inputs.
/// Used by the finite-difference checker after perturbing one parameter.
pub fn reencode_from<T: Scalar>(net: &Net<T>, from: usize, cache: &mut ChainCache<T>) {
    let input0 = cache.inputs[0].clone();
    run_encoder(net, &input0, from, cache);
}

pub fn redecode_from<T: Scalar>(
    chain: &[ConvSpec; 3],
    net: &Net<T>,
    from: usize,
    cache: &mut ChainCache<T>,
) {
    let input0 = cache.inputs[0].clone();
    run_decoder(chain, net, &input0, from, cache);
}

/// Backward through a decoder chain. `d_output` is the gradient at the
/// post-sigmoid output; returns the gradient at the chain input.
pub fn decode_backward<T: Scalar>(
    chain: &[ConvSpec; 3],
    net: &Net<T>,
    cache: &ChainCache<T>,
    d_output: &Tensor<T>,
    grads: &mut [T],
) -> Tensor<T> {
    let slope = T::from_f64(LEAKY_SLOPE);
    let mut d = sigmoid_backward(&cache.output, d_output);
    for l in (0..3).rev() {
        let d_in = chain[l].backward(&net.params, &cache.inputs[l], &d, grads);
        d = if l > 0 {
            leaky_relu_backward(&cache.pres[l - 1], &d_in, slope)
        } else {
            d_in
        };
    }
    d
}

/// Backward through the encoder. `d_z` is the gradient at the latent
/// (post-activation); the input gradient is discarded (inputs are data).
pub fn encode_backward<T: Scalar>(
    net: &Net<T>,
    cache: &ChainCache<T>,
    d_z: &Tensor<T>,
    grads: &mut [T],
) {
    let slope = T::from_f64(LEAKY_SLOPE);
    let mut d = leaky_relu_backward(&cache.pres[2], d_z, slope);
    for l in (0..3).rev() {
        let d_in = net.arch.enc[l].backward(&net.params, &cache.inputs[l], &d, grads);
        if l > 0 {
            d = leaky_relu_backward(&cache.pres[l - 1], &d_in, slope);
        }
    }
}

/// Trainable parameters plus optimizer moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub net: Net<T>,
    pub opt: AdamState<T>,
}

impl<T: Scalar> ModelState<T> {
    pub fn init(in_channels: usize, seed: u64) -> ModelState<T> {
        let arch = Arch::standard(in_channels);
        let n = arch.n_params;
        ModelState {
            net: Net::init(arch, seed),
            opt: AdamState::new(n),
        }
    }
}
