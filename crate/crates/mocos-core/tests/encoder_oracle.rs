//! Scalar-loop oracle for the motif-guided encoder: the whole two-layer
//! forward pass re-implemented with nested loops over Vec<Vec<f64>>, no
//! tensors, no tape, plus the stochasticity and plain-transformer
//! reduction properties of the relation matrices.

// Oracles stay in plain index notation on purpose.
#![allow(clippy::needless_range_loop)]

use mocos_core::encoder::{
    attention_block, embed_nodes, encode_frame, full_relation, mask_tensors, MaskMode, ModelDims,
    ModelParams, LAYER_NORM_EPS,
};
use mocos_core::graph::{build_adjacency, build_context, JointLayout};
use mocos_core::motifs::{HeadMaskTable, LimbSets, MotifSet};
use mocos_core::tensor::Tensor;
use mocos_core::{Tape64, Tensor64};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn to_mat(t: &Tensor64) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// x · wᵀ + b for a stored `out×in` weight and length-`out` bias.
fn affine(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            w.iter()
                .zip(b)
                .map(|(wr, &bc)| wr.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + bc)
                .collect()
        })
        .collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let cols = b[0].len();
    a.iter()
        .map(|ar| {
            (0..cols)
                .map(|c| ar.iter().zip(b).map(|(&x, br)| x * br[c]).sum())
                .collect()
        })
        .collect()
}

/// Unstabilized softmax: exp(x)/Σexp(x), the formula as written.
fn naive_softmax(row: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = row.iter().map(|&x| x.exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn layer_norm_rows(x: &Mat, gamma: &[f64], beta: &[f64]) -> Mat {
    let d = x[0].len() as f64;
    x.iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter()
                .zip(gamma.iter().zip(beta))
                .map(|(&v, (&g, &b))| (v - mean) * inv * g + b)
                .collect()
        })
        .collect()
}

/// Full two-layer forward pass in scalar loops. Masks are apply-by-value:
/// literal mode multiplies the logits, additive mode restricts the
/// normalization support.
fn scalar_encoder(
    coords: &Mat,
    pe: &Mat,
    params: &ModelParams,
    masks: &[Tensor64],
    mode: MaskMode,
) -> Mat {
    let d_k = params.dims.d_k;
    let scale = 1.0 / (d_k as f64).sqrt();
    let embed_coord = affine(coords, &to_mat(&params.w1), params.b1.data());
    let embed_pe = affine(pe, &to_mat(&params.w2), params.b2.data());
    let mut h: Mat = embed_coord
        .iter()
        .zip(&embed_pe)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    let j = h.len();
    for layer in &params.layers {
        let mut cat: Mat = vec![Vec::new(); j];
        for (head, mask) in layer.heads.iter().zip(masks) {
            let qh = affine(&h, &to_mat(&head.q), &vec![0.0; d_k]);
            let kh = affine(&h, &to_mat(&head.k), &vec![0.0; d_k]);
            let vh = affine(&h, &to_mat(&head.v), &vec![0.0; d_k]);
            let mut rel: Mat = Vec::with_capacity(j);
            for i in 0..j {
                let logits: Vec<f64> = (0..j)
                    .map(|c| {
                        qh[i].iter().zip(&kh[c]).map(|(a, b)| a * b).sum::<f64>() * scale
                    })
                    .collect();
                let row = match mode {
                    MaskMode::Literal => {
                        let masked: Vec<f64> = logits
                            .iter()
                            .enumerate()
                            .map(|(c, &x)| x * mask.at(i, c))
                            .collect();
                        naive_softmax(&masked)
                    }
                    MaskMode::Additive => {
                        let exps: Vec<f64> = logits
                            .iter()
                            .enumerate()
                            .map(|(c, &x)| if mask.at(i, c) != 0.0 { x.exp() } else { 0.0 })
                            .collect();
                        let sum: f64 = exps.iter().sum();
                        exps.iter().map(|e| e / sum).collect()
                    }
                };
                rel.push(row);
            }
            let agg = matmul(&rel, &vh);
            for (row, add) in cat.iter_mut().zip(agg) {
                row.extend(add);
            }
        }
        let attn = affine(&cat, &to_mat(&layer.o), &vec![0.0; params.dims.d]);
        let sum1: Mat = h
            .iter()
            .zip(&attn)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        let x1 = layer_norm_rows(&sum1, layer.ln1_gamma.data(), layer.ln1_beta.data());
        let hidden = affine(&x1, &to_mat(&layer.ff1_w), layer.ff1_b.data());
        let hidden: Mat = hidden
            .iter()
            .map(|row| row.iter().map(|&v| v.max(0.0)).collect())
            .collect();
        let ff = affine(&hidden, &to_mat(&layer.ff2_w), layer.ff2_b.data());
        let sum2: Mat = x1
            .iter()
            .zip(&ff)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        h = layer_norm_rows(&sum2, layer.ln2_gamma.data(), layer.ln2_beta.data());
    }
    h
}

fn path5() -> JointLayout {
    JointLayout::new(
        "path5",
        5,
        &[(1, 2), (2, 3), (3, 4), (4, 5)],
        &[1, 2],
        &[4, 5],
    )
    .unwrap()
}

struct Fixture {
    pe: Tensor64,
    params: ModelParams,
    masks: Vec<Tensor64>,
}

fn fixture(seed: u64, use_gcm: bool) -> Fixture {
    let layout = path5();
    let adj = build_adjacency::<f64>(&layout);
    let context = build_context::<f64>(&layout, 2, None).unwrap();
    let limbs = LimbSets::new(layout.upper_limbs.clone(), layout.lower_limbs.clone(), 5).unwrap();
    let set = MotifSet::build(&adj, &limbs, true).unwrap();
    let table = HeadMaskTable::build(&set, 5, true, use_gcm).unwrap();
    let dims = ModelDims {
        d: 10,
        d_k: 2,
        heads: 5,
        layers: 2,
        k: 2,
    };
    Fixture {
        pe: context.pe,
        params: ModelParams::init(dims, seed).unwrap(),
        masks: mask_tensors(&table),
    }
}

fn random_coords(rng: &mut ChaCha8Rng) -> Tensor64 {
    Tensor::new(vec![5, 3], (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn run_encoder(fix: &Fixture, coords: &Tensor64, mode: MaskMode, retain: bool) -> (Tensor64, Vec<Vec<Tensor64>>) {
    let mut tape = Tape64::new();
    let bound = fix.params.bind(&mut tape);
    let pe = tape.constant(fix.pe.clone());
    let (out, relations) =
        encode_frame(&mut tape, coords, pe, &bound, &fix.masks, mode, retain).unwrap();
    (tape.value(out).clone(), relations)
}

fn assert_matches_oracle(fix: &Fixture, mode: MaskMode, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..5 {
        let coords = random_coords(&mut rng);
        let (got, _) = run_encoder(fix, &coords, mode, false);
        let want = scalar_encoder(&to_mat(&coords), &to_mat(&fix.pe), &fix.params, &fix.masks, mode);
        for r in 0..5 {
            for c in 0..10 {
                assert!(
                    (got.at(r, c) - want[r][c]).abs() <= 1e-10,
                    "({r},{c}): {} vs {}",
                    got.at(r, c),
                    want[r][c]
                );
            }
        }
    }
}

#[test]
fn literal_mode_matches_the_scalar_loop() {
    assert_matches_oracle(&fixture(11, true), MaskMode::Literal, 101);
}

#[test]
fn additive_mode_matches_the_scalar_loop() {
    // Gait heads have empty rows off the limbs, which additive mode rejects;
    // run it on the structural heads only.
    assert_matches_oracle(&fixture(13, false), MaskMode::Additive, 103);
}

#[test]
fn all_ones_masks_reduce_to_the_plain_transformer_bitwise() {
    let fix = fixture(17, true);
    let ones: Vec<Tensor64> = (0..5).map(|_| Tensor::filled(&[5, 5], 1.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    for _ in 0..3 {
        let coords = random_coords(&mut rng);

        // Reference: the unmasked relation formula wired through the same
        // layer ops on a fresh tape.
        let mut tape = Tape64::new();
        let bound = fix.params.bind(&mut tape);
        let pe = tape.constant(fix.pe.clone());
        let x = tape.constant(coords.clone());
        let mut h = embed_nodes(&mut tape, x, pe, &bound).unwrap();
        for layer in &bound.layers {
            let mut head_outs = Vec::new();
            for head in &layer.heads {
                let r = full_relation(&mut tape, h, head.q, head.k, 2).unwrap();
                let vt = tape.transpose(head.v).unwrap();
                let vh = tape.matmul(h, vt).unwrap();
                head_outs.push(tape.matmul(r, vh).unwrap());
            }
            let cat = tape.concat(&head_outs, 1).unwrap();
            let ot = tape.transpose(layer.o).unwrap();
            let attn = tape.matmul(cat, ot).unwrap();
            let sum1 = tape.add(h, attn).unwrap();
            let n1 = tape.layer_norm(sum1, LAYER_NORM_EPS).unwrap();
            let n1 = tape.mul_row(n1, layer.ln1_gamma).unwrap();
            let x1 = tape.add_row(n1, layer.ln1_beta).unwrap();
            let f1t = tape.transpose(layer.ff1_w).unwrap();
            let a = tape.matmul(x1, f1t).unwrap();
            let a = tape.add_row(a, layer.ff1_b).unwrap();
            let a = tape.relu(a).unwrap();
            let f2t = tape.transpose(layer.ff2_w).unwrap();
            let b = tape.matmul(a, f2t).unwrap();
            let b = tape.add_row(b, layer.ff2_b).unwrap();
            let sum2 = tape.add(x1, b).unwrap();
            let n2 = tape.layer_norm(sum2, LAYER_NORM_EPS).unwrap();
            let n2 = tape.mul_row(n2, layer.ln2_gamma).unwrap();
            h = tape.add_row(n2, layer.ln2_beta).unwrap();
        }
        let want = tape.value(h).clone();

        for mode in [MaskMode::Literal, MaskMode::Additive] {
            let mut tape = Tape64::new();
            let bound = fix.params.bind(&mut tape);
            let pe = tape.constant(fix.pe.clone());
            let (out, _) =
                encode_frame(&mut tape, &coords, pe, &bound, &ones, mode, false).unwrap();
            let got = tape.value(out);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{mode:?} diverged");
            }
        }
    }
}

#[test]
fn relation_rows_stay_stochastic_across_a_thousand_evaluations() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let mut checked = 0usize;
    for round in 0..10 {
        let use_gcm = round % 2 == 0;
        let fix = fixture(200 + round, use_gcm);
        let mode = if use_gcm {
            MaskMode::Literal
        } else {
            MaskMode::Additive
        };
        for _ in 0..100 {
            let coords = random_coords(&mut rng);
            let (_, relations) = run_encoder(&fix, &coords, mode, true);
            for layer in &relations {
                for rel in layer {
                    for r in 0..rel.rows() {
                        let sum: f64 = rel.row(r).iter().sum();
                        assert!((sum - 1.0).abs() <= 1e-9, "row sum {sum}");
                    }
                }
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 1000);
}

#[test]
fn additive_mode_rejects_gait_heads_with_empty_rows() {
    // Joint 3 of the chain is in neither limb group, so its gait-motif row
    // is all zero and the support-restricted softmax has nothing to keep.
    let fix = fixture(19, true);
    let mut rng = ChaCha8Rng::seed_from_u64(113);
    let coords = random_coords(&mut rng);
    let mut tape = Tape64::new();
    let bound = fix.params.bind(&mut tape);
    let pe = tape.constant(fix.pe.clone());
    let x = tape.constant(coords.clone());
    let h = embed_nodes(&mut tape, x, pe, &bound).unwrap();
    let err = attention_block(
        &mut tape,
        h,
        &bound.layers[0],
        &fix.masks,
        2,
        MaskMode::Additive,
        false,
    )
    .unwrap_err();
    assert!(err.to_string().contains("no unmasked entry"), "{err}");
}

#[test]
fn additive_relations_are_exactly_zero_off_the_motif_support() {
    let fix = fixture(23, false);
    let mut rng = ChaCha8Rng::seed_from_u64(127);
    let coords = random_coords(&mut rng);
    let (_, relations) = run_encoder(&fix, &coords, MaskMode::Additive, true);
    for layer in &relations {
        for (rel, mask) in layer.iter().zip(&fix.masks) {
            for r in 0..rel.rows() {
                for c in 0..rel.cols() {
                    if mask.at(r, c) == 0.0 {
                        assert_eq!(rel.at(r, c), 0.0);
                    } else {
                        assert!(rel.at(r, c) > 0.0);
                    }
                }
            }
        }
    }
}
