//! Combinatorial skeleton prototype learning: joint and frame masking,
//! per-class prototypes, and the two contrastive losses they anchor.
//!
//! Sub-skeletons are means over kept joints of one frame; sub-tracklets are
//! means over kept sub-skeletons of one sequence. Both are contrasted
//! against per-identity prototype centroids that stay constant within an
//! epoch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Tensor64;

/// Epsilon guarding the L2 normalization of features and prototypes.
pub const NORMALIZE_EPS: f64 = 1e-12;

/// Joint keep pattern for one frame; `true` keeps the joint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialMask {
    pub bits: Vec<bool>,
}

/// Frame keep pattern for one sequence; `true` keeps the frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalMask {
    pub bits: Vec<bool>,
}

impl SpatialMask {
    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

impl TemporalMask {
    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

fn sample_bits(len: usize, drop_p: f64, rng: &mut ChaCha8Rng) -> Result<Vec<bool>> {
    if len == 0 {
        return Err(Error::Mask("cannot sample a mask of length 0".into()));
    }
    if !(0.0..1.0).contains(&drop_p) {
        return Err(Error::Mask(format!(
            "masking probability must be in [0,1), got {drop_p}"
        )));
    }
    let mut bits: Vec<bool> = (0..len).map(|_| rng.gen::<f64>() >= drop_p).collect();
    // At least one entry must survive; unmask one uniform position instead
    // of resampling.
    if bits.iter().all(|&b| !b) {
        bits[rng.gen_range(0..len)] = true;
    }
    Ok(bits)
}

/// I.i.d. joint mask with `P(drop) = p_s`, repaired to keep at least one.
pub fn sample_spatial_mask(joints: usize, p_s: f64, rng: &mut ChaCha8Rng) -> Result<SpatialMask> {
    Ok(SpatialMask {
        bits: sample_bits(joints, p_s, rng)?,
    })
}

/// I.i.d. frame mask with `P(drop) = p_t`, repaired to keep at least one.
pub fn sample_temporal_mask(
    frames: usize,
    p_t: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TemporalMask> {
    Ok(TemporalMask {
        bits: sample_bits(frames, p_t, rng)?,
    })
}

/// Mean of the kept node rows of one frame: `J×d → 1×d`. Gradients flow to
/// kept rows only.
pub fn sub_skeleton(tape: &mut Tape<f64>, nodes: Var, mask: &SpatialMask) -> Result<Var> {
    let shape = tape.value(nodes).shape().to_vec();
    if shape.len() != 2 || shape[0] != mask.bits.len() {
        return Err(Error::Mask(format!(
            "spatial mask of length {} does not fit node matrix {shape:?}",
            mask.bits.len()
        )));
    }
    let idx: Vec<usize> = mask
        .bits
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    if idx.is_empty() {
        return Err(Error::Mask("spatial mask keeps no joint".into()));
    }
    let kept = tape.gather_rows(nodes, &idx)?;
    let m = tape.mean_axis(kept, 0)?;
    tape.reshape(m, &[1, shape[1]])
}

/// Mean of the kept sub-skeleton rows of one sequence; every input is a
/// `1×d` row. With all-keep masks this performs the identical reduction as
/// the unmasked sequence representation.
pub fn sub_tracklet(tape: &mut Tape<f64>, sub_skels: &[Var], mask: &TemporalMask) -> Result<Var> {
    if sub_skels.len() != mask.bits.len() {
        return Err(Error::Mask(format!(
            "temporal mask of length {} does not fit {} frames",
            mask.bits.len(),
            sub_skels.len()
        )));
    }
    let kept: Vec<Var> = sub_skels
        .iter()
        .zip(&mask.bits)
        .filter_map(|(&v, &b)| b.then_some(v))
        .collect();
    if kept.is_empty() {
        return Err(Error::Mask("temporal mask keeps no frame".into()));
    }
    let d = tape.value(kept[0]).cols();
    let cat = tape.concat(&kept, 0)?;
    let m = tape.mean_axis(cat, 0)?;
    tape.reshape(m, &[1, d])
}

/// Per-class centroids of unmasked sequence representations. Class `k`
/// (1-based) occupies row `k − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeTable {
    pub centroids: Tensor64,
    pub counts: Vec<usize>,
}

impl PrototypeTable {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn row(&self, label: usize) -> Result<usize> {
        if label == 0 || label > self.classes() {
            return Err(Error::Train(format!(
                "label {label} outside prototype classes 1..={}",
                self.classes()
            )));
        }
        Ok(label - 1)
    }
}

/// Arithmetic mean of each class's rows. Labels are 1-based and every class
/// in `1..=classes` must appear.
pub fn compute_prototypes(
    reps: &Tensor64,
    labels: &[usize],
    classes: usize,
) -> Result<PrototypeTable> {
    if reps.ndim() != 2 || reps.rows() != labels.len() {
        return Err(Error::Train(format!(
            "{} labels do not fit representation matrix {:?}",
            labels.len(),
            reps.shape()
        )));
    }
    if classes == 0 {
        return Err(Error::Train("prototype table needs at least one class".into()));
    }
    let d = reps.cols();
    let mut centroids = Tensor::zeros(&[classes, d]);
    let mut counts = vec![0usize; classes];
    for (i, &y) in labels.iter().enumerate() {
        if y == 0 || y > classes {
            return Err(Error::Train(format!(
                "label {y} outside declared classes 1..={classes}"
            )));
        }
        counts[y - 1] += 1;
        let row = centroids.row_mut(y - 1);
        for (acc, v) in row.iter_mut().zip(reps.row(i)) {
            *acc += *v;
        }
    }
    for (k, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::Train(format!("class {} has no sequences", k + 1)));
        }
        let inv = 1.0 / count as f64;
        for v in centroids.row_mut(k) {
            *v *= inv;
        }
    }
    Ok(PrototypeTable { centroids, counts })
}

fn check_temperature(tau: f64) -> Result<()> {
    if tau <= 0.0 || tau.is_nan() {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

/// `−mean_i log softmax(logits)_i[y_i]` via a one-hot selection matrix.
fn nll_of_true_class(
    tape: &mut Tape<f64>,
    logits: Var,
    labels: &[usize],
    classes: usize,
) -> Result<Var> {
    let n = tape.value(logits).rows();
    if n != labels.len() {
        return Err(Error::Train(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    let mut onehot = Tensor::zeros(&[n, classes]);
    for (r, &y) in labels.iter().enumerate() {
        if y == 0 || y > classes {
            return Err(Error::Train(format!(
                "label {y} outside prototype classes 1..={classes}"
            )));
        }
        *onehot.at_mut(r, y - 1) = 1.0;
    }
    let ls = tape.row_log_softmax(logits)?;
    let oh = tape.constant(onehot);
    let picked = tape.mul(ls, oh)?;
    let total = tape.sum_all(picked)?;
    tape.scale(total, -1.0 / n as f64)
}

/// Sub-tracklet-level prototype contrast: InfoNCE of each batch row against
/// the class centroids at temperature `tau1`. Prototypes enter as constants
/// and receive no gradient.
pub fn csp_str_loss(
    tape: &mut Tape<f64>,
    reps: Var,
    labels: &[usize],
    prototypes: &PrototypeTable,
    tau1: f64,
    normalize: bool,
) -> Result<Var> {
    check_temperature(tau1)?;
    let mut feats = reps;
    let mut table = tape.constant(prototypes.centroids.clone());
    if normalize {
        feats = tape.l2_normalize_rows(feats, NORMALIZE_EPS)?;
        table = tape.l2_normalize_rows(table, NORMALIZE_EPS)?;
    }
    let tt = tape.transpose(table)?;
    let dots = tape.matmul(feats, tt)?;
    let logits = tape.scale(dots, 1.0 / tau1)?;
    nll_of_true_class(tape, logits, labels, prototypes.classes())
}

/// Sub-skeleton-level prototype contrast. `sub_skels` stacks every kept
/// sub-skeleton as a row (n·f of them); `labels` gives each row's class.
/// Features pass through the affine map (f1_w, f1_b) and prototypes through
/// (f2_w, f2_b) before the dot products.
#[allow(clippy::too_many_arguments)]
pub fn csp_ssk_loss(
    tape: &mut Tape<f64>,
    sub_skels: Var,
    labels: &[usize],
    prototypes: &PrototypeTable,
    f1_w: Var,
    f1_b: Var,
    f2_w: Var,
    f2_b: Var,
    tau2: f64,
    normalize: bool,
) -> Result<Var> {
    check_temperature(tau2)?;
    let w1t = tape.transpose(f1_w)?;
    let projected = tape.matmul(sub_skels, w1t)?;
    let mut feats = tape.add_row(projected, f1_b)?;
    let table_const = tape.constant(prototypes.centroids.clone());
    let w2t = tape.transpose(f2_w)?;
    let table_proj = tape.matmul(table_const, w2t)?;
    let mut table = tape.add_row(table_proj, f2_b)?;
    if normalize {
        feats = tape.l2_normalize_rows(feats, NORMALIZE_EPS)?;
        table = tape.l2_normalize_rows(table, NORMALIZE_EPS)?;
    }
    let tt = tape.transpose(table)?;
    let dots = tape.matmul(feats, tt)?;
    let logits = tape.scale(dots, 1.0 / tau2)?;
    nll_of_true_class(tape, logits, labels, prototypes.classes())
}

/// Convex combination `λ·str + (1−λ)·ssk`.
pub fn csp_loss(tape: &mut Tape<f64>, str_loss: Var, ssk_loss: Var, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "fusion coefficient must be in [0,1], got {lambda}"
        )));
    }
    let a = tape.scale(str_loss, lambda)?;
    let b = tape.scale(ssk_loss, 1.0 - lambda)?;
    tape.add(a, b)
}
