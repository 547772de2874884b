//! Training loop: epoch-level prototype refresh, per-batch combinatorial
//! mask sampling, backpropagation, and Adam updates. Also home to the
//! composed gradient checks that exercise the full loss end to end.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{check_gradients, Tape, Var};
use crate::config::RunConfig;
use crate::csp::{
    compute_prototypes, csp_loss, csp_ssk_loss, csp_str_loss, sample_spatial_mask,
    sample_temporal_mask, sub_skeleton, sub_tracklet, PrototypeTable, SpatialMask, TemporalMask,
};
use crate::data::{Dataset, SkeletonSequence, Split};
use crate::encoder::{
    encode_frame, mask_tensors, sequence_mean, BoundParams, MaskMode, ModelDims, ModelParams,
};
use crate::error::{Error, Result};
use crate::graph::{build_adjacency, build_context, JointLayout};
use crate::motifs::{build_hsm, HeadMaskTable, LimbSets, MotifSet};
use crate::optim::Adam;
use crate::seed;
use crate::tensor::Tensor;
use crate::Tensor64;

/// Everything fixed per (config, layout) pair that the encoder needs:
/// resolved dimensions, the positional-encoding matrix, and the per-head
/// motif masks.
#[derive(Debug, Clone)]
pub struct EncoderSetup {
    pub dims: ModelDims,
    pub pe: Tensor64,
    pub table: HeadMaskTable,
    pub masks: Vec<Tensor64>,
    pub mask_mode: MaskMode,
}

/// Builds the motif family for a layout, honoring the config's limb
/// overrides. Limb sets come from the config when present, else from the
/// layout; gait motifs require them, and without any limbs the structural
/// motifs still apply while the gait slots fall back to full attention.
pub fn resolve_motifs(config: &RunConfig, layout: &JointLayout) -> Result<MotifSet> {
    let adjacency = build_adjacency::<f64>(layout);
    let to_zero_based = |v: &[usize]| v.iter().map(|i| i - 1).collect::<Vec<_>>();
    let upper = config
        .limbs_upper
        .as_deref()
        .map(to_zero_based)
        .unwrap_or_else(|| layout.upper_limbs.clone());
    let lower = config
        .limbs_lower
        .as_deref()
        .map(to_zero_based)
        .unwrap_or_else(|| layout.lower_limbs.clone());
    let have_limbs = !upper.is_empty() || !lower.is_empty();
    if have_limbs {
        let limbs = LimbSets::new(upper, lower, layout.joints)?;
        MotifSet::build(&adjacency, &limbs, config.hsm_self)
    } else {
        if config.use_gcm {
            return Err(Error::Motif(format!(
                "layout {:?} has no limb sets; set limbs_upper/limbs_lower or use_gcm = false",
                layout.name
            )));
        }
        let mut set = MotifSet::all_full(layout.joints);
        set.hsm = [
            build_hsm(&adjacency, 1, config.hsm_self)?,
            build_hsm(&adjacency, 2, config.hsm_self)?,
            build_hsm(&adjacency, 3, config.hsm_self)?,
        ];
        Ok(set)
    }
}

/// Resolves the architecture against a concrete joint layout.
pub fn build_setup(config: &RunConfig, layout: &JointLayout) -> Result<EncoderSetup> {
    config.validate()?;
    let k = config.resolve_k(layout.joints);
    let flips: Option<Vec<bool>> = if config.pe_sign_random {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "pe-sign", 0));
        Some((0..k).map(|_| rng.gen::<bool>()).collect())
    } else {
        None
    };
    let context = build_context::<f64>(layout, k, flips.as_deref())?;
    let set = resolve_motifs(config, layout)?;
    let table = HeadMaskTable::build(&set, config.heads, config.use_hsm, config.use_gcm)?;
    let masks = mask_tensors(&table);
    Ok(EncoderSetup {
        dims: ModelDims {
            d: config.d,
            d_k: config.d_k,
            heads: config.heads,
            layers: config.layers,
            k,
        },
        pe: context.pe,
        table,
        masks,
        mask_mode: config.mask_mode,
    })
}

/// Encodes sequences to their unmasked spatio-temporal means, one row per
/// sequence. Used by the prototype refresh and by evaluation.
pub fn encode_sequences(
    setup: &EncoderSetup,
    params: &ModelParams,
    seqs: &[&SkeletonSequence],
) -> Result<Tensor64> {
    let d = setup.dims.d;
    let mut data = Vec::with_capacity(seqs.len() * d);
    for seq in seqs {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let pe = tape.constant(setup.pe.clone());
        let mut frames = Vec::with_capacity(seq.frames.len());
        for coords in &seq.frames {
            let (h, _) = encode_frame(
                &mut tape,
                coords,
                pe,
                &bound,
                &setup.masks,
                setup.mask_mode,
                false,
            )?;
            frames.push(h);
        }
        let v = sequence_mean(&mut tape, &frames, d)?;
        data.extend_from_slice(tape.value(v).data());
    }
    Tensor::new(vec![seqs.len(), d], data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub str_loss: f64,
    pub ssk_loss: f64,
    pub secs: f64,
}

/// Trains on the dataset's train split and returns the final parameters
/// plus per-epoch statistics. `on_epoch` fires after each epoch, in order.
///
/// Determinism: parameter init, the shuffle, and every mask draw come from
/// streams derived from the config seed; the mask stream is indexed by
/// (epoch, dataset position) so it does not depend on batch boundaries.
pub fn train(
    config: &RunConfig,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(ModelParams, Vec<EpochStats>)> {
    dataset.validate()?;
    let setup = build_setup(config, &dataset.layout)?;
    let train_seqs = dataset.split(Split::Train);
    let labels: Vec<usize> = train_seqs.iter().map(|s| s.label).collect();
    let classes = dataset.classes();
    let n = train_seqs.len();
    let mut params = ModelParams::init(setup.dims, config.seed)?;
    let mut adam = Adam::with_defaults(&params.tensor_shapes(), config.lr);
    let mut stats = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        let reps = encode_sequences(&setup, &params, &train_seqs)?;
        let prototypes = compute_prototypes(&reps, &labels, classes)?;
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "shuffle", epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut str_sum, mut ssk_sum) = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch) {
            let (loss, str_l, ssk_l) = train_batch(
                config,
                &setup,
                &mut params,
                &mut adam,
                &prototypes,
                &train_seqs,
                batch,
                epoch,
                n,
            )?;
            loss_sum += loss * batch.len() as f64;
            str_sum += str_l * batch.len() as f64;
            ssk_sum += ssk_l * batch.len() as f64;
        }
        let s = EpochStats {
            epoch,
            loss: loss_sum / n as f64,
            str_loss: str_sum / n as f64,
            ssk_loss: ssk_sum / n as f64,
            secs: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&s);
        stats.push(s);
    }
    Ok((params, stats))
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    config: &RunConfig,
    setup: &EncoderSetup,
    params: &mut ModelParams,
    adam: &mut Adam<f64>,
    prototypes: &PrototypeTable,
    train_seqs: &[&SkeletonSequence],
    batch: &[usize],
    epoch: usize,
    n: usize,
) -> Result<(f64, f64, f64)> {
    let d = setup.dims.d;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let pe = tape.constant(setup.pe.clone());
    let mut tracklets = Vec::with_capacity(batch.len());
    let mut batch_labels = Vec::with_capacity(batch.len());
    let mut skels: Vec<Var> = Vec::new();
    let mut skel_labels: Vec<usize> = Vec::new();
    for &si in batch {
        let seq = train_seqs[si];
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed::derive(
            config.seed,
            "mask",
            (epoch * n + si) as u64,
        ));
        let mut frames = Vec::with_capacity(seq.frames.len());
        for coords in &seq.frames {
            let (h, _) = encode_frame(
                &mut tape,
                coords,
                pe,
                &bound,
                &setup.masks,
                setup.mask_mode,
                false,
            )?;
            frames.push(h);
        }
        let tracklet = if config.use_csp {
            let mut seq_skels = Vec::with_capacity(frames.len());
            for &h in &frames {
                let smask =
                    sample_spatial_mask(dataset_joints(seq), config.p_s, &mut mask_rng)?;
                seq_skels.push(sub_skeleton(&mut tape, h, &smask)?);
            }
            let tmask = sample_temporal_mask(frames.len(), config.p_t, &mut mask_rng)?;
            let tracklet = sub_tracklet(&mut tape, &seq_skels, &tmask)?;
            skel_labels.extend(std::iter::repeat_n(seq.label, seq_skels.len()));
            skels.extend_from_slice(&seq_skels);
            tracklet
        } else {
            sequence_mean(&mut tape, &frames, d)?
        };
        tracklets.push(tracklet);
        batch_labels.push(seq.label);
    }
    let stacked = tape.concat(&tracklets, 0)?;
    let str_loss = csp_str_loss(
        &mut tape,
        stacked,
        &batch_labels,
        prototypes,
        config.tau1,
        config.normalize,
    )?;
    let (total, str_val, ssk_val) = if config.use_csp {
        let skel_stack = tape.concat(&skels, 0)?;
        let ssk_loss = csp_ssk_loss(
            &mut tape,
            skel_stack,
            &skel_labels,
            prototypes,
            bound.f1_w,
            bound.f1_b,
            bound.f2_w,
            bound.f2_b,
            config.tau2,
            config.normalize,
        )?;
        let total = csp_loss(&mut tape, str_loss, ssk_loss, config.lambda)?;
        (
            total,
            tape.value(str_loss).item(),
            tape.value(ssk_loss).item(),
        )
    } else {
        (str_loss, tape.value(str_loss).item(), 0.0)
    };
    let loss_val = tape.value(total).item();
    if !loss_val.is_finite() {
        return Err(Error::Train(format!(
            "non-finite loss {loss_val} at epoch {epoch} (batch of {})",
            batch.len()
        )));
    }
    let grads = tape.backward(total)?;
    let shapes = params.tensor_shapes();
    let grad_tensors: Vec<Tensor64> = bound
        .vars()
        .iter()
        .zip(&shapes)
        .map(|(&v, shape)| grads.wrt(v, shape))
        .collect();
    let mut slots = params.tensors_mut();
    adam.step(&mut slots, &grad_tensors)?;
    Ok((loss_val, str_val, ssk_val))
}

fn dataset_joints(seq: &SkeletonSequence) -> usize {
    seq.frames[0].rows()
}

/// Tiny five-joint chain used by the composed gradient checks: two-joint
/// limbs at each end, exercising HSM and both gait motifs.
fn check_layout() -> JointLayout {
    JointLayout::new(
        "custom",
        5,
        &[(1, 2), (2, 3), (3, 4), (4, 5)],
        &[1, 2],
        &[4, 5],
    )
    .expect("static check layout")
}

fn check_setup(seed_val: u64) -> Result<(EncoderSetup, ModelParams, Vec<Tensor64>)> {
    let config = RunConfig {
        d: 10,
        heads: 5,
        d_k: 2,
        layers: 1,
        k: Some(2),
        seed: seed_val,
        ..RunConfig::default()
    };
    config.validate()?;
    let layout = check_layout();
    let setup = build_setup(&config, &layout)?;
    let params = ModelParams::init(setup.dims, seed_val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_val, "check-data", 0));
    let frames: Vec<Tensor64> = (0..4)
        .map(|_| {
            let data = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::new(vec![5, 3], data).expect("frame shape")
        })
        .collect();
    Ok((setup, params, frames))
}

/// Central-difference check of one full MGT layer (masked heads included)
/// against the analytic gradients. Returns the worst relative error.
pub fn mgt_layer_gradient_check(seed_val: u64) -> Result<f64> {
    let (setup, params, frames) = check_setup(seed_val)?;
    let dims = setup.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_val, "check-weights", 0));
    let readout: Vec<f64> = (0..5 * dims.d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let readout = Tensor::new(vec![5, dims.d], readout)?;
    let inputs: Vec<Tensor64> = params.tensors().into_iter().cloned().collect();
    let coords = frames[0].clone();
    let pe = setup.pe.clone();
    let masks = setup.masks.clone();
    check_gradients(
        move |tape, vars| {
            let bound = BoundParams::from_vars(dims, vars)?;
            let pe_var = tape.constant(pe.clone());
            let (h, _) =
                encode_frame(tape, &coords, pe_var, &bound, &masks, MaskMode::Literal, false)?;
            let w = tape.constant(readout.clone());
            let weighted = tape.mul(h, w)?;
            tape.sum_all(weighted)
        },
        &inputs,
        1e-5,
    )
}

/// Central-difference check of the complete loss: two sequences encoded
/// through the MGT, masked pooling with frozen masks, and both prototype
/// losses fused at λ = 0.6. Prototypes are frozen constants, exactly as in
/// a training step.
pub fn full_loss_gradient_check(seed_val: u64) -> Result<f64> {
    let (setup, params, frames) = check_setup(seed_val)?;
    let dims = setup.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_val, "check-masks", 0));
    // Two sequences of two frames each, labels 1 and 2.
    let seq_frames: Vec<Vec<Tensor64>> = vec![frames[0..2].to_vec(), frames[2..4].to_vec()];
    let spatial: Vec<Vec<SpatialMask>> = (0..2)
        .map(|_| {
            (0..2)
                .map(|_| sample_spatial_mask(5, 0.4, &mut rng))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let temporal: Vec<TemporalMask> = (0..2)
        .map(|_| sample_temporal_mask(2, 0.4, &mut rng))
        .collect::<Result<_>>()?;
    let proto_data: Vec<f64> = (0..2 * dims.d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let prototypes = PrototypeTable {
        centroids: Tensor::new(vec![2, dims.d], proto_data)?,
        counts: vec![1, 1],
    };
    let inputs: Vec<Tensor64> = params.tensors().into_iter().cloned().collect();
    let pe = setup.pe.clone();
    let masks = setup.masks.clone();
    check_gradients(
        move |tape, vars| {
            let bound = BoundParams::from_vars(dims, vars)?;
            let pe_var = tape.constant(pe.clone());
            let mut tracklets = Vec::new();
            let mut skels = Vec::new();
            let mut skel_labels = Vec::new();
            for (s, frames) in seq_frames.iter().enumerate() {
                let mut seq_skels = Vec::new();
                for (t, coords) in frames.iter().enumerate() {
                    let (h, _) = encode_frame(
                        tape,
                        coords,
                        pe_var,
                        &bound,
                        &masks,
                        MaskMode::Literal,
                        false,
                    )?;
                    seq_skels.push(sub_skeleton(tape, h, &spatial[s][t])?);
                }
                tracklets.push(sub_tracklet(tape, &seq_skels, &temporal[s])?);
                skel_labels.extend([s + 1, s + 1]);
                skels.append(&mut seq_skels);
            }
            let stacked = tape.concat(&tracklets, 0)?;
            let str_loss = csp_str_loss(tape, stacked, &[1, 2], &prototypes, 0.5, true)?;
            let skel_stack = tape.concat(&skels, 0)?;
            let ssk_loss = csp_ssk_loss(
                tape,
                skel_stack,
                &skel_labels,
                &prototypes,
                bound.f1_w,
                bound.f1_b,
                bound.f2_w,
                bound.f2_b,
                0.5,
                true,
            )?;
            csp_loss(tape, str_loss, ssk_loss, 0.6)
        },
        &inputs,
        1e-5,
    )
}
