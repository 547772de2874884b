//! Joint layouts, skeleton adjacency, the normalized graph Laplacian, and
//! Laplacian eigenvector positional encodings.
//!
//! Joint indices are 1-based in files and messages (matching the dataset
//! format) and 0-based everywhere in memory.

use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How eigenvector sign ambiguity is resolved in the positional encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeSign {
    /// First component with magnitude above 1e-9 is made positive.
    Deterministic,
    /// A seeded coin flips each column's sign after the deterministic fix.
    Random,
}

/// A named joint layout: joint count, undirected bone edges, and the default
/// upper/lower limb groupings used by the gait motifs. Custom layouts may
/// leave the limb groups empty; limb-dependent features then require explicit
/// sets from the dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointLayout {
    pub name: String,
    pub joints: usize,
    /// 0-based, stored as (lo, hi) with lo < hi, sorted, deduplicated.
    pub edges: Vec<(usize, usize)>,
    /// 0-based default limb joint indices; may be empty.
    pub upper_limbs: Vec<usize>,
    pub lower_limbs: Vec<usize>,
}

impl JointLayout {
    /// Builds a layout from 1-based edge and limb lists, validating ranges,
    /// self-edges, duplicates, and connectivity.
    pub fn new(
        name: &str,
        joints: usize,
        edges_1b: &[(usize, usize)],
        upper_1b: &[usize],
        lower_1b: &[usize],
    ) -> Result<Self> {
        if joints < 2 {
            return Err(Error::Layout(format!(
                "layout {name:?} needs at least 2 joints, got {joints}"
            )));
        }
        let mut edges = Vec::with_capacity(edges_1b.len());
        for &(a, b) in edges_1b {
            if a < 1 || a > joints || b < 1 || b > joints {
                return Err(Error::Layout(format!(
                    "edge {a}-{b} out of range for {joints} joints"
                )));
            }
            if a == b {
                return Err(Error::Layout(format!("self-edge {a}-{b}")));
            }
            let (lo, hi) = (a.min(b) - 1, a.max(b) - 1);
            edges.push((lo, hi));
        }
        edges.sort_unstable();
        let before = edges.len();
        edges.dedup();
        if edges.len() != before {
            return Err(Error::Layout(format!("duplicate edge in layout {name:?}")));
        }
        let layout = JointLayout {
            name: name.to_string(),
            joints,
            edges,
            upper_limbs: to_zero_based(upper_1b, joints, "upper limb")?,
            lower_limbs: to_zero_based(lower_1b, joints, "lower limb")?,
        };
        if !layout.is_connected() {
            return Err(Error::Layout(format!("layout {name:?} is not connected")));
        }
        Ok(layout)
    }

    /// Neighbor lists, 0-based.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.joints];
        for &(a, b) in &self.edges {
            lists[a].push(b);
            lists[b].push(a);
        }
        lists
    }

    fn is_connected(&self) -> bool {
        let lists = self.adjacency_lists();
        let mut seen = vec![false; self.joints];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &lists[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == self.joints
    }

    /// Edges as 1-based pairs for display and serialization.
    pub fn edges_one_based(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&(a, b)| (a + 1, b + 1)).collect()
    }
}

fn to_zero_based(idx_1b: &[usize], joints: usize, what: &str) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(idx_1b.len());
    for &i in idx_1b {
        if i < 1 || i > joints {
            return Err(Error::Layout(format!(
                "{what} joint {i} out of range for {joints} joints"
            )));
        }
        out.push(i - 1);
    }
    out.sort_unstable();
    let before = out.len();
    out.dedup();
    if out.len() != before {
        return Err(Error::Layout(format!("duplicate {what} joint index")));
    }
    Ok(out)
}

pub const BUILTIN_LAYOUT_NAMES: [&str; 3] = ["kinect20", "kinect25", "synth10"];

/// Returns a built-in layout by name: `kinect20` (Kinect v1 style),
/// `kinect25` (Kinect v2 style), or `synth10` (compact synthetic body).
pub fn builtin_layout(name: &str) -> Result<JointLayout> {
    match name {
        // 1 hip-center, 2 spine, 3 shoulder-center, 4 head,
        // 5-8 left arm (shoulder, elbow, wrist, hand), 9-12 right arm,
        // 13-16 left leg (hip, knee, ankle, foot), 17-20 right leg.
        "kinect20" => JointLayout::new(
            "kinect20",
            20,
            &[
                (1, 2),
                (2, 3),
                (3, 4),
                (3, 5),
                (5, 6),
                (6, 7),
                (7, 8),
                (3, 9),
                (9, 10),
                (10, 11),
                (11, 12),
                (1, 13),
                (13, 14),
                (14, 15),
                (15, 16),
                (1, 17),
                (17, 18),
                (18, 19),
                (19, 20),
            ],
            &[5, 6, 7, 8, 9, 10, 11, 12],
            &[13, 14, 15, 16, 17, 18, 19, 20],
        ),
        // 1 spine-base, 2 spine-mid, 3 neck, 4 head, 5-8 left arm,
        // 9-12 right arm, 13-16 left leg, 17-20 right leg, 21 spine-shoulder,
        // 22/23 left hand tip/thumb, 24/25 right hand tip/thumb.
        "kinect25" => JointLayout::new(
            "kinect25",
            25,
            &[
                (1, 2),
                (2, 21),
                (21, 3),
                (3, 4),
                (21, 5),
                (5, 6),
                (6, 7),
                (7, 8),
                (21, 9),
                (9, 10),
                (10, 11),
                (11, 12),
                (1, 13),
                (13, 14),
                (14, 15),
                (15, 16),
                (1, 17),
                (17, 18),
                (18, 19),
                (19, 20),
                (8, 22),
                (8, 23),
                (12, 24),
                (12, 25),
            ],
            &[5, 6, 7, 8, 9, 10, 11, 12, 22, 23, 24, 25],
            &[13, 14, 15, 16, 17, 18, 19, 20],
        ),
        // 1 pelvis, 2 spine, 3 chest, 4 head, 5/6 left/right hand,
        // 7/8 left knee/foot, 9/10 right knee/foot.
        "synth10" => JointLayout::new(
            "synth10",
            10,
            &[
                (1, 2),
                (2, 3),
                (3, 4),
                (3, 5),
                (3, 6),
                (1, 7),
                (7, 8),
                (1, 9),
                (9, 10),
            ],
            &[5, 6],
            &[7, 8, 9, 10],
        ),
        other => Err(Error::Layout(format!(
            "unknown layout {other:?}; built-ins are {BUILTIN_LAYOUT_NAMES:?}"
        ))),
    }
}

/// Fixed per-layout graph quantities shared read-only by every encoder call:
/// adjacency, normalized Laplacian, and the J×K positional-encoding matrix.
#[derive(Debug, Clone)]
pub struct SkeletonGraphContext<T> {
    pub adjacency: Tensor<T>,
    pub laplacian: Tensor<T>,
    pub pe: Tensor<T>,
    pub k: usize,
}

/// J×J binary adjacency matrix of a layout: symmetric, zero diagonal.
pub fn build_adjacency<T: Scalar>(layout: &JointLayout) -> Tensor<T> {
    let j = layout.joints;
    let mut a = Tensor::zeros(&[j, j]);
    for &(p, q) in &layout.edges {
        *a.at_mut(p, q) = T::one();
        *a.at_mut(q, p) = T::one();
    }
    a
}

/// Symmetric normalized Laplacian L = I - D^(-1/2) A D^(-1/2).
///
/// Entries for i != j are computed once and mirrored, so the result is
/// exactly symmetric. Fails on isolated nodes (zero degree).
pub fn normalized_laplacian<T: Scalar>(adj: &Tensor<T>) -> Result<Tensor<T>> {
    let j = adj.rows();
    let mut inv_sqrt_deg = Vec::with_capacity(j);
    for i in 0..j {
        let mut d = T::zero();
        for c in 0..j {
            d += adj.at(i, c);
        }
        if d <= T::zero() {
            return Err(Error::Layout(format!("joint {} is isolated", i + 1)));
        }
        inv_sqrt_deg.push(T::one() / d.sqrt());
    }
    let mut l = Tensor::zeros(&[j, j]);
    for i in 0..j {
        *l.at_mut(i, i) = T::one();
        for c in (i + 1)..j {
            if adj.at(i, c) != T::zero() {
                let v = -(adj.at(i, c) * inv_sqrt_deg[i] * inv_sqrt_deg[c]);
                *l.at_mut(i, c) = v;
                *l.at_mut(c, i) = v;
            }
        }
    }
    Ok(l)
}

/// Eigensolver tolerance used for positional encodings.
const EIGEN_TOL: f64 = 1e-12;
/// The smallest Laplacian eigenvalue must sit below this to count as the
/// trivial zero mode.
const ZERO_MODE_TOL: f64 = 1e-8;
/// Threshold on |component| when picking the sign-fixing entry.
const SIGN_TOL: f64 = 1e-9;

/// J×K positional-encoding matrix: the eigenvectors of the K smallest
/// strictly-positive Laplacian eigenvalues, ascending, with each column's
/// sign fixed so its first component of magnitude above 1e-9 is positive.
pub fn positional_encoding<T: Scalar>(adj: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let j = adj.rows();
    if k < 1 || k >= j {
        return Err(Error::Layout(format!(
            "positional encoding width {k} must satisfy 1 <= K <= J-1 (J = {j})"
        )));
    }
    let lap = normalized_laplacian(adj)?;
    let eig = symmetric_eigen(&lap, T::of(EIGEN_TOL))?;
    if eig.values[0].abs() > T::of(ZERO_MODE_TOL) {
        return Err(Error::Eigen(format!(
            "smallest Laplacian eigenvalue {} is not the zero mode",
            eig.values[0]
        )));
    }
    let mut pe = Tensor::zeros(&[j, k]);
    for col in 0..k {
        // Column col+1 of the decomposition: skip the single zero mode.
        let src = col + 1;
        let mut flip = T::one();
        for r in 0..j {
            let v = eig.vectors.at(r, src);
            if v.abs() > T::of(SIGN_TOL) {
                if v < T::zero() {
                    flip = -T::one();
                }
                break;
            }
        }
        for r in 0..j {
            *pe.at_mut(r, col) = flip * eig.vectors.at(r, src);
        }
    }
    Ok(pe)
}

/// Default positional-encoding width for a layout.
pub fn default_pe_width(joints: usize) -> usize {
    8.min(joints.saturating_sub(1)).max(1)
}

/// Builds the shared graph context for a layout. `sign_flips`, when present,
/// multiplies each PE column by the given ±1 factor (the `pe_sign=random`
/// mode); callers supply seeded flips so runs stay reproducible.
pub fn build_context<T: Scalar>(
    layout: &JointLayout,
    k: usize,
    sign_flips: Option<&[bool]>,
) -> Result<SkeletonGraphContext<T>> {
    let adjacency = build_adjacency::<T>(layout);
    let laplacian = normalized_laplacian(&adjacency)?;
    let mut pe = positional_encoding(&adjacency, k)?;
    if let Some(flips) = sign_flips {
        if flips.len() != k {
            return Err(Error::Layout(format!(
                "expected {k} sign flips, got {}",
                flips.len()
            )));
        }
        for (col, &flip) in flips.iter().enumerate() {
            if flip {
                for r in 0..layout.joints {
                    let v = pe.at(r, col);
                    *pe.at_mut(r, col) = -v;
                }
            }
        }
    }
    Ok(SkeletonGraphContext {
        adjacency,
        laplacian,
        pe,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> JointLayout {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i, i + 1)).collect();
        JointLayout::new(&format!("path{n}"), n, &edges, &[], &[]).unwrap()
    }

    #[test]
    fn path_adjacency() {
        let a = build_adjacency::<f64>(&path(3));
        let want = Tensor::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(a, want);
    }

    #[test]
    fn builtin_layouts_are_trees() {
        for name in BUILTIN_LAYOUT_NAMES {
            let layout = builtin_layout(name).unwrap();
            assert_eq!(
                layout.edges.len(),
                layout.joints - 1,
                "{name} edge count"
            );
            let a = build_adjacency::<f64>(&layout);
            let total: f64 = a.data().iter().sum();
            assert_eq!(total as usize, 2 * (layout.joints - 1));
            for i in 0..layout.joints {
                assert_eq!(a.at(i, i), 0.0);
                for j in 0..layout.joints {
                    assert_eq!(a.at(i, j), a.at(j, i));
                }
            }
        }
        // The 20-joint tree has 19 edges, so the adjacency sums to 38.
        let a = build_adjacency::<f64>(&builtin_layout("kinect20").unwrap());
        assert_eq!(a.data().iter().sum::<f64>(), 38.0);
    }

    #[test]
    fn rejects_disconnected_and_bad_edges() {
        assert!(JointLayout::new("bad", 4, &[(1, 2), (3, 4)], &[], &[]).is_err());
        assert!(JointLayout::new("bad", 3, &[(1, 2), (2, 4)], &[], &[]).is_err());
        assert!(JointLayout::new("bad", 3, &[(1, 1), (2, 3)], &[], &[]).is_err());
        assert!(JointLayout::new("bad", 3, &[(1, 2), (2, 1), (2, 3)], &[], &[]).is_err());
    }

    #[test]
    fn single_edge_laplacian() {
        let a = build_adjacency::<f64>(&path(2));
        let l = normalized_laplacian(&a).unwrap();
        let want =
            Tensor::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert_eq!(l, want);
    }

    #[test]
    fn path3_laplacian_spectrum() {
        let a = build_adjacency::<f64>(&path(3));
        let l = normalized_laplacian(&a).unwrap();
        let eig = crate::eigen::symmetric_eigen(&l, 1e-12).unwrap();
        let want = [0.0, 1.0, 2.0];
        for (got, want) in eig.values.iter().zip(want) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn laplacian_rejects_isolated_node() {
        let mut a = Tensor::<f64>::zeros(&[3, 3]);
        *a.at_mut(0, 1) = 1.0;
        *a.at_mut(1, 0) = 1.0;
        assert!(normalized_laplacian(&a).is_err());
    }

    #[test]
    fn single_edge_pe_sign_convention() {
        let a = build_adjacency::<f64>(&path(2));
        let pe = positional_encoding(&a, 1).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((pe.at(0, 0) - r).abs() < 1e-12);
        assert!((pe.at(1, 0) + r).abs() < 1e-12);
    }

    #[test]
    fn pe_columns_unit_norm_and_deterministic() {
        let layout = builtin_layout("kinect20").unwrap();
        let a = build_adjacency::<f64>(&layout);
        let k = default_pe_width(layout.joints);
        let pe = positional_encoding(&a, k).unwrap();
        for c in 0..k {
            let norm: f64 = (0..layout.joints).map(|r| pe.at(r, c).powi(2)).sum();
            assert!((norm.sqrt() - 1.0).abs() < 1e-8);
        }
        let again = positional_encoding(&a, k).unwrap();
        assert_eq!(pe, again);
    }

    #[test]
    fn pe_rejects_k_out_of_range() {
        let a = build_adjacency::<f64>(&path(3));
        assert!(positional_encoding(&a, 3).is_err());
        assert!(positional_encoding(&a, 0).is_err());
    }

    #[test]
    fn path3_pe_matches_hand_solve() {
        // Normalized Laplacian of the 3-path has eigenpairs
        // (1, (1,0,-1)/sqrt2) and (2, (1,-sqrt2,1)/2) after the zero mode.
        let a = build_adjacency::<f64>(&path(3));
        let pe = positional_encoding(&a, 2).unwrap();
        let r2 = 2f64.sqrt();
        let want_col0 = [1.0 / r2, 0.0, -1.0 / r2];
        let want_col1 = [0.5, -r2 / 2.0, 0.5];
        for r in 0..3 {
            assert!((pe.at(r, 0) - want_col0[r]).abs() < 1e-10);
            assert!((pe.at(r, 1) - want_col1[r]).abs() < 1e-10);
        }
    }
}
