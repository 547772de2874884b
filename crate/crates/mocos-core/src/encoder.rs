//! Motif guided graph transformer encoder.
//!
//! Per frame: joints are embedded from their 3-D coordinates plus the
//! Laplacian positional encoding, then passed through L transformer layers
//! whose attention heads are masked by the motif table. Sequence
//! representations are spatio-temporal means of the final node features.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::motifs::HeadMaskTable;
use crate::seed;
use crate::tensor::Tensor;
use crate::Tensor64;

/// Epsilon inside the layer-normalization variance.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// How motif masks enter the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Multiply logits by the mask inside the softmax, exactly as the
    /// motif-guided relation formula is written: masked logits become 0 and
    /// still contribute exp(0) mass.
    Literal,
    /// Restrict the softmax support to unmasked entries (−∞ masking). Rows
    /// whose mask is all-zero are an error in this mode.
    Additive,
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskMode::Literal => "literal",
            MaskMode::Additive => "additive",
        })
    }
}

impl std::str::FromStr for MaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(MaskMode::Literal),
            "additive" => Ok(MaskMode::Additive),
            other => Err(Error::Config(format!(
                "mask_mode must be literal or additive, got {other:?}"
            ))),
        }
    }
}

/// Architecture dimensions. `heads·d_k = d` is enforced so the concatenated
/// head outputs are exactly `d` wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Node embedding width.
    pub d: usize,
    /// Per-head projection width.
    pub d_k: usize,
    pub heads: usize,
    pub layers: usize,
    /// Positional-encoding width.
    pub k: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_k == 0 || self.heads == 0 || self.k == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be positive, got {self:?}"
            )));
        }
        if self.heads * self.d_k != self.d {
            return Err(Error::Config(format!(
                "heads*d_k must equal d: {}*{} != {}",
                self.heads, self.d_k, self.d
            )));
        }
        Ok(())
    }
}

/// One attention head's projection maps, each `d_k × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub q: Tensor64,
    pub k: Tensor64,
    pub v: Tensor64,
}

/// One transformer layer: heads, output map, feed-forward, and the two
/// layer-norm affine parameter sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    /// `d × d` output map applied to the concatenated head outputs.
    pub o: Tensor64,
    /// Feed-forward `d → 2d → d`.
    pub ff1_w: Tensor64,
    pub ff1_b: Tensor64,
    pub ff2_w: Tensor64,
    pub ff2_b: Tensor64,
    pub ln1_gamma: Tensor64,
    pub ln1_beta: Tensor64,
    pub ln2_gamma: Tensor64,
    pub ln2_beta: Tensor64,
}

/// Every learnable tensor of the model, including the two projection heads
/// used by the sub-skeleton prototype loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// Coordinate embedding `d × 3` and bias.
    pub w1: Tensor64,
    pub b1: Tensor64,
    /// Positional-encoding embedding `d × k` and bias.
    pub w2: Tensor64,
    pub b2: Tensor64,
    pub layers: Vec<LayerParams>,
    /// Projections applied to sub-skeleton features and prototypes in the
    /// sub-skeleton contrastive loss, each `d × d` affine.
    pub f1_w: Tensor64,
    pub f1_b: Tensor64,
    pub f2_w: Tensor64,
    pub f2_b: Tensor64,
}

impl ModelParams {
    /// Seeded init: weights uniform in ±sqrt(6/(fan_in+fan_out)), biases
    /// zero, layer-norm gains one.
    pub fn init(dims: ModelDims, master_seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(master_seed, "init", 0));
        let mut xavier = |out_dim: usize, in_dim: usize| -> Tensor64 {
            let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let data = (0..out_dim * in_dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            Tensor::new(vec![out_dim, in_dim], data).expect("weight shape")
        };
        let d = dims.d;
        let mut layers = Vec::with_capacity(dims.layers);
        for _ in 0..dims.layers {
            let heads = (0..dims.heads)
                .map(|_| HeadParams {
                    q: xavier(dims.d_k, d),
                    k: xavier(dims.d_k, d),
                    v: xavier(dims.d_k, d),
                })
                .collect();
            layers.push(LayerParams {
                heads,
                o: xavier(d, d),
                ff1_w: xavier(2 * d, d),
                ff1_b: Tensor::zeros(&[2 * d]),
                ff2_w: xavier(d, 2 * d),
                ff2_b: Tensor::zeros(&[d]),
                ln1_gamma: Tensor::filled(&[d], 1.0),
                ln1_beta: Tensor::zeros(&[d]),
                ln2_gamma: Tensor::filled(&[d], 1.0),
                ln2_beta: Tensor::zeros(&[d]),
            });
        }
        Ok(ModelParams {
            dims,
            w1: xavier(d, 3),
            b1: Tensor::zeros(&[d]),
            w2: xavier(d, dims.k),
            b2: Tensor::zeros(&[d]),
            layers,
            f1_w: xavier(d, d),
            f1_b: Tensor::zeros(&[d]),
            f2_w: xavier(d, d),
            f2_b: Tensor::zeros(&[d]),
        })
    }

    /// All learnable tensors in their fixed declaration order; this order is
    /// the checkpoint layout and the optimizer slot order.
    pub fn tensors(&self) -> Vec<&Tensor64> {
        let mut out: Vec<&Tensor64> = vec![&self.w1, &self.b1, &self.w2, &self.b2];
        for layer in &self.layers {
            for head in &layer.heads {
                out.push(&head.q);
                out.push(&head.k);
                out.push(&head.v);
            }
            out.push(&layer.o);
            out.push(&layer.ff1_w);
            out.push(&layer.ff1_b);
            out.push(&layer.ff2_w);
            out.push(&layer.ff2_b);
            out.push(&layer.ln1_gamma);
            out.push(&layer.ln1_beta);
            out.push(&layer.ln2_gamma);
            out.push(&layer.ln2_beta);
        }
        out.push(&self.f1_w);
        out.push(&self.f1_b);
        out.push(&self.f2_w);
        out.push(&self.f2_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor64> {
        let mut out: Vec<&mut Tensor64> = vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2];
        for layer in &mut self.layers {
            for head in &mut layer.heads {
                out.push(&mut head.q);
                out.push(&mut head.k);
                out.push(&mut head.v);
            }
            out.push(&mut layer.o);
            out.push(&mut layer.ff1_w);
            out.push(&mut layer.ff1_b);
            out.push(&mut layer.ff2_w);
            out.push(&mut layer.ff2_b);
            out.push(&mut layer.ln1_gamma);
            out.push(&mut layer.ln1_beta);
            out.push(&mut layer.ln2_gamma);
            out.push(&mut layer.ln2_beta);
        }
        out.push(&mut self.f1_w);
        out.push(&mut self.f1_b);
        out.push(&mut self.f2_w);
        out.push(&mut self.f2_b);
        out
    }

    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|t| t.shape().to_vec()).collect()
    }

    /// Records every tensor as a parameter leaf on the tape, in declaration
    /// order, so gradients can be pulled back out positionally.
    pub fn bind(&self, tape: &mut Tape<f64>) -> BoundParams {
        let dims = self.dims;
        let w1 = tape.param(self.w1.clone());
        let b1 = tape.param(self.b1.clone());
        let w2 = tape.param(self.w2.clone());
        let b2 = tape.param(self.b2.clone());
        let layers = self
            .layers
            .iter()
            .map(|layer| BoundLayer {
                heads: layer
                    .heads
                    .iter()
                    .map(|h| BoundHead {
                        q: tape.param(h.q.clone()),
                        k: tape.param(h.k.clone()),
                        v: tape.param(h.v.clone()),
                    })
                    .collect(),
                o: tape.param(layer.o.clone()),
                ff1_w: tape.param(layer.ff1_w.clone()),
                ff1_b: tape.param(layer.ff1_b.clone()),
                ff2_w: tape.param(layer.ff2_w.clone()),
                ff2_b: tape.param(layer.ff2_b.clone()),
                ln1_gamma: tape.param(layer.ln1_gamma.clone()),
                ln1_beta: tape.param(layer.ln1_beta.clone()),
                ln2_gamma: tape.param(layer.ln2_gamma.clone()),
                ln2_beta: tape.param(layer.ln2_beta.clone()),
            })
            .collect();
        BoundParams {
            dims,
            w1,
            b1,
            w2,
            b2,
            layers,
            f1_w: tape.param(self.f1_w.clone()),
            f1_b: tape.param(self.f1_b.clone()),
            f2_w: tape.param(self.f2_w.clone()),
            f2_b: tape.param(self.f2_b.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundHead {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

#[derive(Debug, Clone)]
pub struct BoundLayer {
    pub heads: Vec<BoundHead>,
    pub o: Var,
    pub ff1_w: Var,
    pub ff1_b: Var,
    pub ff2_w: Var,
    pub ff2_b: Var,
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
}

/// Tape handles to every parameter, mirroring [`ModelParams`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub dims: ModelDims,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub layers: Vec<BoundLayer>,
    pub f1_w: Var,
    pub f1_b: Var,
    pub f2_w: Var,
    pub f2_b: Var,
}

impl BoundParams {
    /// Rebuilds the structure from a flat var list in [`ModelParams::tensors`]
    /// order; the exact inverse of [`BoundParams::vars`].
    pub fn from_vars(dims: ModelDims, vars: &[Var]) -> Result<Self> {
        dims.validate()?;
        let expected = 4 + dims.layers * (3 * dims.heads + 9) + 4;
        if vars.len() != expected {
            return Err(Error::Config(format!(
                "expected {expected} parameter vars for these dims, got {}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let (w1, b1, w2, b2) = (next(), next(), next(), next());
        let mut layers = Vec::with_capacity(dims.layers);
        for _ in 0..dims.layers {
            let heads = (0..dims.heads)
                .map(|_| BoundHead {
                    q: next(),
                    k: next(),
                    v: next(),
                })
                .collect();
            layers.push(BoundLayer {
                heads,
                o: next(),
                ff1_w: next(),
                ff1_b: next(),
                ff2_w: next(),
                ff2_b: next(),
                ln1_gamma: next(),
                ln1_beta: next(),
                ln2_gamma: next(),
                ln2_beta: next(),
            });
        }
        Ok(BoundParams {
            dims,
            w1,
            b1,
            w2,
            b2,
            layers,
            f1_w: next(),
            f1_b: next(),
            f2_w: next(),
            f2_b: next(),
        })
    }

    /// Vars in the same order as [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.w1, self.b1, self.w2, self.b2];
        for layer in &self.layers {
            for head in &layer.heads {
                out.push(head.q);
                out.push(head.k);
                out.push(head.v);
            }
            out.push(layer.o);
            out.push(layer.ff1_w);
            out.push(layer.ff1_b);
            out.push(layer.ff2_w);
            out.push(layer.ff2_b);
            out.push(layer.ln1_gamma);
            out.push(layer.ln1_beta);
            out.push(layer.ln2_gamma);
            out.push(layer.ln2_beta);
        }
        out.push(self.f1_w);
        out.push(self.f1_b);
        out.push(self.f2_w);
        out.push(self.f2_b);
        out
    }
}

/// The head-mask table as 0/1 tensors, head order preserved.
pub fn mask_tensors(table: &HeadMaskTable) -> Vec<Tensor64> {
    table.masks.iter().map(|m| m.to_tensor()).collect()
}

/// Per-joint embedding: `h_i = (W1·v_i + b1) + (W2·λ_i + b2)`.
pub fn embed_nodes(tape: &mut Tape<f64>, coords: Var, pe: Var, p: &BoundParams) -> Result<Var> {
    let w1t = tape.transpose(p.w1)?;
    let a = tape.matmul(coords, w1t)?;
    let a = tape.add_row(a, p.b1)?;
    let w2t = tape.transpose(p.w2)?;
    let b = tape.matmul(pe, w2t)?;
    let b = tape.add_row(b, p.b2)?;
    tape.add(a, b)
}

/// Unmasked scaled dot-product relations: `softmax((Qh_i·Kh_j)/sqrt(d_k))`.
pub fn full_relation(tape: &mut Tape<f64>, h: Var, q: Var, k: Var, d_k: usize) -> Result<Var> {
    let logits = relation_logits(tape, h, q, k, d_k)?;
    tape.row_softmax(logits)
}

/// One motif-guided relation head: scaled dot-product logits combined with
/// the mask per `mode`, rows softmax-normalized.
pub fn relation_head(
    tape: &mut Tape<f64>,
    h: Var,
    mask: &Tensor64,
    q: Var,
    k: Var,
    d_k: usize,
    mode: MaskMode,
) -> Result<Var> {
    let logits = relation_logits(tape, h, q, k, d_k)?;
    match mode {
        MaskMode::Literal => {
            let m = tape.constant(mask.clone());
            let masked = tape.mul(logits, m)?;
            tape.row_softmax(masked)
        }
        MaskMode::Additive => tape.masked_row_softmax(logits, mask),
    }
}

fn relation_logits(tape: &mut Tape<f64>, h: Var, q: Var, k: Var, d_k: usize) -> Result<Var> {
    let qt = tape.transpose(q)?;
    let qh = tape.matmul(h, qt)?;
    let kt = tape.transpose(k)?;
    let kh = tape.matmul(h, kt)?;
    let kht = tape.transpose(kh)?;
    let raw = tape.matmul(qh, kht)?;
    tape.scale(raw, 1.0 / (d_k as f64).sqrt())
}

/// Multi-head attention: per head, motif-guided relations aggregate the
/// value-mapped nodes; head outputs are concatenated in head order and sent
/// through the output map. Returns the retained relation matrices when
/// `retain` is set.
pub fn attention_block(
    tape: &mut Tape<f64>,
    h: Var,
    layer: &BoundLayer,
    masks: &[Tensor64],
    d_k: usize,
    mode: MaskMode,
    retain: bool,
) -> Result<(Var, Vec<Tensor64>)> {
    let mut head_outs = Vec::with_capacity(layer.heads.len());
    let mut relations = Vec::new();
    for (head, mask) in layer.heads.iter().zip(masks) {
        let r = relation_head(tape, h, mask, head.q, head.k, d_k, mode)?;
        if retain {
            relations.push(tape.value(r).clone());
        }
        let vt = tape.transpose(head.v)?;
        let vh = tape.matmul(h, vt)?;
        let agg = tape.matmul(r, vh)?;
        head_outs.push(agg);
    }
    let cat = tape.concat(&head_outs, 1)?;
    let ot = tape.transpose(layer.o)?;
    let out = tape.matmul(cat, ot)?;
    Ok((out, relations))
}

/// One full transformer layer: attention, residual, layer-norm with affine,
/// position-wise feed-forward (relu, 2d hidden), residual, layer-norm.
pub fn mgt_layer(
    tape: &mut Tape<f64>,
    h: Var,
    layer: &BoundLayer,
    masks: &[Tensor64],
    d_k: usize,
    mode: MaskMode,
    retain: bool,
) -> Result<(Var, Vec<Tensor64>)> {
    let (attn, relations) = attention_block(tape, h, layer, masks, d_k, mode, retain)?;
    let sum1 = tape.add(h, attn)?;
    let n1 = tape.layer_norm(sum1, LAYER_NORM_EPS)?;
    let n1 = tape.mul_row(n1, layer.ln1_gamma)?;
    let x1 = tape.add_row(n1, layer.ln1_beta)?;

    let f1t = tape.transpose(layer.ff1_w)?;
    let a = tape.matmul(x1, f1t)?;
    let a = tape.add_row(a, layer.ff1_b)?;
    let a = tape.relu(a)?;
    let f2t = tape.transpose(layer.ff2_w)?;
    let b = tape.matmul(a, f2t)?;
    let b = tape.add_row(b, layer.ff2_b)?;

    let sum2 = tape.add(x1, b)?;
    let n2 = tape.layer_norm(sum2, LAYER_NORM_EPS)?;
    let n2 = tape.mul_row(n2, layer.ln2_gamma)?;
    let x2 = tape.add_row(n2, layer.ln2_beta)?;
    Ok((x2, relations))
}

/// Encodes one frame to its `J×d` node representation. Retained relations
/// are indexed `[layer][head]`.
pub fn encode_frame(
    tape: &mut Tape<f64>,
    coords: &Tensor64,
    pe: Var,
    p: &BoundParams,
    masks: &[Tensor64],
    mode: MaskMode,
    retain: bool,
) -> Result<(Var, Vec<Vec<Tensor64>>)> {
    let x = tape.constant(coords.clone());
    let mut h = embed_nodes(tape, x, pe, p)?;
    let mut all_relations = Vec::new();
    for layer in &p.layers {
        let (next, relations) = mgt_layer(tape, h, layer, masks, p.dims.d_k, mode, retain)?;
        h = next;
        if retain {
            all_relations.push(relations);
        }
    }
    Ok((h, all_relations))
}

/// Mean over a frame's joint rows: `J×d → 1×d`.
pub fn frame_mean(tape: &mut Tape<f64>, nodes: Var, d: usize) -> Result<Var> {
    let m = tape.mean_axis(nodes, 0)?;
    tape.reshape(m, &[1, d])
}

/// Spatio-temporal mean `V = (1/f)Σ_t (1/J)Σ_i h^t_i` as a `1×d` row. The
/// frame means are reduced first so that masked pooling with empty masks
/// reproduces this value bit for bit.
pub fn sequence_mean(tape: &mut Tape<f64>, frame_nodes: &[Var], d: usize) -> Result<Var> {
    let means = frame_nodes
        .iter()
        .map(|&f| frame_mean(tape, f, d))
        .collect::<Result<Vec<_>>>()?;
    let cat = tape.concat(&means, 0)?;
    let m = tape.mean_axis(cat, 0)?;
    tape.reshape(m, &[1, d])
}

/// Element-wise mean of each head's relation matrix over a stream of
/// frames; the result is indexed `[layer][head]`. Every row of every
/// returned matrix still sums to 1: a mean of stochastic rows is stochastic.
pub fn mean_relations<'a, I>(
    params: &ModelParams,
    frames: I,
    pe: &Tensor64,
    masks: &[Tensor64],
    mode: MaskMode,
) -> Result<Vec<Vec<Tensor64>>>
where
    I: IntoIterator<Item = &'a Tensor64>,
{
    let mut sums: Vec<Vec<Tensor64>> = Vec::new();
    let mut count = 0usize;
    for coords in frames {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let pe_var = tape.constant(pe.clone());
        let (_, relations) = encode_frame(&mut tape, coords, pe_var, &bound, masks, mode, true)?;
        if sums.is_empty() {
            sums = relations;
        } else {
            for (ls, lr) in sums.iter_mut().zip(&relations) {
                for (ms, mr) in ls.iter_mut().zip(lr) {
                    for (a, b) in ms.data_mut().iter_mut().zip(mr.data()) {
                        *a += *b;
                    }
                }
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Eval("no frames to average relations over".into()));
    }
    let inv = 1.0 / count as f64;
    for layer in &mut sums {
        for m in layer {
            for v in m.data_mut() {
                *v *= inv;
            }
        }
    }
    Ok(sums)
}
