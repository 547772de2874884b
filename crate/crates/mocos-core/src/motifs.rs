//! Structural and gait-collaborative attention motifs.
//!
//! A motif is a fixed J×J binary pattern over joint pairs. Hierarchical
//! structural motifs (HSM) mark, for every joint, the joints within m hops;
//! gait collaborative motifs (GCM) mark, for every limb joint, the other
//! joints of the upper and lower limbs. Attention heads are routed through
//! these masks in a fixed canonical order.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which pattern a motif matrix encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotifKind {
    /// Joints within `m` hops; `m` in 1..=3.
    Hsm(u8),
    GcmUpper,
    GcmLower,
    /// All-ones: unmasked attention.
    Full,
}

impl fmt::Display for MotifKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MotifKind::Hsm(m) => write!(f, "A{m}"),
            MotifKind::GcmUpper => write!(f, "B1"),
            MotifKind::GcmLower => write!(f, "B2"),
            MotifKind::Full => write!(f, "FULL"),
        }
    }
}

/// J×J binary mask plus its kind. Row i lists the joints that joint i may
/// attend to under this motif.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotifMatrix {
    pub kind: MotifKind,
    pub joints: usize,
    /// Row-major 0/1 entries.
    bits: Vec<u8>,
}

impl MotifMatrix {
    fn zeros(kind: MotifKind, joints: usize) -> Self {
        MotifMatrix {
            kind,
            joints,
            bits: vec![0; joints * joints],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.bits[i * self.joints + j]
    }

    fn set(&mut self, i: usize, j: usize) {
        self.bits[i * self.joints + j] = 1;
    }

    /// Number of ones in row `i`.
    pub fn row_count(&self, i: usize) -> usize {
        self.bits[i * self.joints..(i + 1) * self.joints]
            .iter()
            .map(|&b| b as usize)
            .sum()
    }

    /// The mask as a 0.0/1.0 tensor, for use as an attention mask.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .bits
            .iter()
            .map(|&b| if b == 1 { T::one() } else { T::zero() })
            .collect();
        Tensor::new(vec![self.joints, self.joints], data).expect("bit matrix is square")
    }

    /// Rows of space-separated 0/1, one line per joint.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for i in 0..self.joints {
            let row: Vec<String> = (0..self.joints)
                .map(|j| self.get(i, j).to_string())
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// The disjoint upper/lower limb joint groups that define the gait motifs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LimbSets {
    /// 0-based joint indices, sorted.
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
}

impl LimbSets {
    /// Validates 0-based index sets: non-empty, in range, disjoint.
    pub fn new(mut upper: Vec<usize>, mut lower: Vec<usize>, joints: usize) -> Result<Self> {
        upper.sort_unstable();
        upper.dedup();
        lower.sort_unstable();
        lower.dedup();
        if upper.is_empty() || lower.is_empty() {
            return Err(Error::Motif("limb sets must both be non-empty".into()));
        }
        for &i in upper.iter().chain(lower.iter()) {
            if i >= joints {
                return Err(Error::Motif(format!(
                    "limb joint {} out of range for {} joints",
                    i + 1,
                    joints
                )));
            }
        }
        if upper.iter().any(|i| lower.binary_search(i).is_ok()) {
            return Err(Error::Motif("limb sets overlap".into()));
        }
        Ok(LimbSets { upper, lower })
    }
}

/// BFS shortest-path hop distances from `start`; `usize::MAX` marks
/// unreachable nodes.
pub fn hop_distances<T: Scalar>(adjacency: &Tensor<T>, start: usize) -> Vec<usize> {
    let j = adjacency.rows();
    let mut dist = vec![usize::MAX; j];
    dist[start] = 0;
    let mut frontier = vec![start];
    let mut d = 0;
    while !frontier.is_empty() {
        d += 1;
        let mut next = Vec::new();
        for &i in &frontier {
            for (c, dc) in dist.iter_mut().enumerate() {
                if adjacency.at(i, c) != T::zero() && *dc == usize::MAX {
                    *dc = d;
                    next.push(c);
                }
            }
        }
        frontier = next;
    }
    dist
}

/// The joints at shortest-path distance exactly `k` from joint `i`
/// (excluding `i` itself), ascending.
pub fn k_hop_neighbors<T: Scalar>(adjacency: &Tensor<T>, i: usize, k: usize) -> Vec<usize> {
    let dist = hop_distances(adjacency, i);
    (0..adjacency.rows())
        .filter(|&c| c != i && dist[c] == k)
        .collect()
}

/// m-order hierarchical structural motif: entry (i,j) is 1 iff j lies within
/// m hops of i. `include_self` controls the diagonal (the role semantics
/// include the joint itself; the literal union over k >= 1 does not).
pub fn build_hsm<T: Scalar>(
    adjacency: &Tensor<T>,
    m: usize,
    include_self: bool,
) -> Result<MotifMatrix> {
    if !(1..=3).contains(&m) {
        return Err(Error::Motif(format!("HSM order {m} outside 1..=3")));
    }
    let j = adjacency.rows();
    let mut motif = MotifMatrix::zeros(MotifKind::Hsm(m as u8), j);
    for i in 0..j {
        let dist = hop_distances(adjacency, i);
        for (c, &dc) in dist.iter().enumerate() {
            if c == i {
                if include_self {
                    motif.set(i, c);
                }
            } else if dc <= m {
                motif.set(i, c);
            }
        }
    }
    Ok(motif)
}

/// Gait collaborative motif for one limb group: row i is populated only when
/// joint i belongs to the chosen group, and then marks every joint of
/// upper ∪ lower except i itself.
pub fn build_gcm(limbs: &LimbSets, joints: usize, upper: bool) -> Result<MotifMatrix> {
    for &i in limbs.upper.iter().chain(limbs.lower.iter()) {
        if i >= joints {
            return Err(Error::Motif(format!(
                "limb joint {} out of range for {} joints",
                i + 1,
                joints
            )));
        }
    }
    let kind = if upper {
        MotifKind::GcmUpper
    } else {
        MotifKind::GcmLower
    };
    let own = if upper { &limbs.upper } else { &limbs.lower };
    let mut motif = MotifMatrix::zeros(kind, joints);
    for &i in own {
        for &j in limbs.upper.iter().chain(limbs.lower.iter()) {
            if j != i {
                motif.set(i, j);
            }
        }
    }
    Ok(motif)
}

/// The all-ones mask: plain unmasked attention.
pub fn build_full(joints: usize) -> MotifMatrix {
    let mut motif = MotifMatrix::zeros(MotifKind::Full, joints);
    for i in 0..joints {
        for j in 0..joints {
            motif.set(i, j);
        }
    }
    motif
}

/// Number of distinct semantic roles a motif kind distinguishes: an m-order
/// HSM separates 2m+1 roles (self, m hop rings, in/out of range... counted
/// per the hierarchy), a GCM separates 3, FULL none beyond uniformity.
pub fn role_count(kind: MotifKind) -> usize {
    match kind {
        MotifKind::Hsm(m) => 2 * (m as usize) + 1,
        MotifKind::GcmUpper | MotifKind::GcmLower => 3,
        MotifKind::Full => 1,
    }
}

/// The five structural/gait motifs of a skeleton plus the all-ones mask.
#[derive(Debug, Clone)]
pub struct MotifSet {
    pub hsm: [MotifMatrix; 3],
    pub gcm_upper: MotifMatrix,
    pub gcm_lower: MotifMatrix,
    pub full: MotifMatrix,
}

impl MotifSet {
    pub fn build<T: Scalar>(
        adjacency: &Tensor<T>,
        limbs: &LimbSets,
        include_self: bool,
    ) -> Result<Self> {
        let joints = adjacency.rows();
        Ok(MotifSet {
            hsm: [
                build_hsm(adjacency, 1, include_self)?,
                build_hsm(adjacency, 2, include_self)?,
                build_hsm(adjacency, 3, include_self)?,
            ],
            gcm_upper: build_gcm(limbs, joints, true)?,
            gcm_lower: build_gcm(limbs, joints, false)?,
            full: build_full(joints),
        })
    }

    /// A motif set with every slot replaced by FULL; used when a skeleton has
    /// no limb grouping and all motif heads are disabled.
    pub fn all_full(joints: usize) -> Self {
        let full = build_full(joints);
        MotifSet {
            hsm: [full.clone(), full.clone(), full.clone()],
            gcm_upper: full.clone(),
            gcm_lower: full.clone(),
            full,
        }
    }
}

/// Per-head mask assignment: heads 1-3 take HSM orders 1-3, heads 4-5 the
/// two GCMs, and every later head attends fully. Fewer heads truncate that
/// order; disabled motif families fall back to FULL in their slots.
#[derive(Debug, Clone)]
pub struct HeadMaskTable {
    pub masks: Vec<MotifMatrix>,
}

impl HeadMaskTable {
    pub fn build(set: &MotifSet, heads: usize, use_hsm: bool, use_gcm: bool) -> Result<Self> {
        if heads < 1 {
            return Err(Error::Motif("head count must be at least 1".into()));
        }
        let mut masks = Vec::with_capacity(heads);
        for k in 0..heads {
            let mask = match k {
                0..=2 if use_hsm => set.hsm[k].clone(),
                3 if use_gcm => set.gcm_upper.clone(),
                4 if use_gcm => set.gcm_lower.clone(),
                _ => set.full.clone(),
            };
            masks.push(mask);
        }
        Ok(HeadMaskTable { masks })
    }

    pub fn kinds(&self) -> Vec<MotifKind> {
        self.masks.iter().map(|m| m.kind).collect()
    }
}
