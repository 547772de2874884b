//! Synthetic gait sequences and the SKL1 dataset format.
//!
//! Identities are parametric walkers: a forward-kinematic skeleton whose
//! limbs swing sinusoidally with per-identity frequency, phase, amplitude,
//! and bone scales. Sequences of one identity differ by a global phase
//! shift and coordinate noise. The generator drives only the `synth10`
//! layout; Kinect layouts exist for ingesting externally produced files.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{builtin_layout, JointLayout};
use crate::seed;
use crate::tensor::Tensor;
use crate::Tensor64;

/// How far apart identity parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difficulty {
    /// Stratified sampling keeps any two identities at least 10% of each
    /// scale range apart in at least one of the three bone-scale axes, and
    /// gait frequencies complete whole cycles per sequence so that
    /// frame-averaged poses carry the identity signal regardless of phase.
    Easy,
    /// Narrow uniform ranges, free-running frequencies, heavier noise.
    Hard,
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        })
    }
}

impl FromStr for Difficulty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Config(format!(
                "difficulty must be easy or hard, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Probe,
    Gallery,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Probe => "probe",
            Split::Gallery => "gallery",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "probe" => Ok(Split::Probe),
            "gallery" => Ok(Split::Gallery),
            other => Err(Error::Config(format!(
                "split must be train, probe or gallery, got {other:?}"
            ))),
        }
    }
}

/// One labeled skeleton sequence: `frames` holds f matrices of shape `J×3`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub seq_id: String,
    /// Identity class, 1-based.
    pub label: usize,
    pub split: Split,
    pub frames: Vec<Tensor64>,
}

impl SkeletonSequence {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// A full dataset: the joint layout plus every sequence in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub layout: JointLayout,
    pub sequences: Vec<SkeletonSequence>,
}

impl Dataset {
    pub fn split(&self, which: Split) -> Vec<&SkeletonSequence> {
        self.sequences.iter().filter(|s| s.split == which).collect()
    }

    /// Number of identity classes: the largest train label.
    pub fn classes(&self) -> usize {
        self.sequences
            .iter()
            .filter(|s| s.split == Split::Train)
            .map(|s| s.label)
            .max()
            .unwrap_or(0)
    }

    /// Structural invariants: unique ids, positive labels, at least one
    /// frame per sequence, frames matching the layout, finite coordinates,
    /// a non-empty train section, and every probe label present in the
    /// gallery.
    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<&str> = self.sequences.iter().map(|s| s.seq_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate sequence id in dataset".into()));
        }
        for s in &self.sequences {
            if s.label == 0 {
                return Err(Error::Config(format!("sequence {} has label 0", s.seq_id)));
            }
            if s.frames.is_empty() {
                return Err(Error::Config(format!("sequence {} has no frames", s.seq_id)));
            }
            for fr in &s.frames {
                if fr.shape() != [self.layout.joints, 3] {
                    return Err(Error::Config(format!(
                        "sequence {} frame shape {:?} does not match {} joints",
                        s.seq_id,
                        fr.shape(),
                        self.layout.joints
                    )));
                }
                if !fr.all_finite() {
                    return Err(Error::Config(format!(
                        "sequence {} contains a non-finite coordinate",
                        s.seq_id
                    )));
                }
            }
        }
        if self.split(Split::Train).is_empty() {
            return Err(Error::Config("dataset has no training sequences".into()));
        }
        let gallery_labels: Vec<usize> =
            self.split(Split::Gallery).iter().map(|s| s.label).collect();
        for p in self.split(Split::Probe) {
            if !gallery_labels.contains(&p.label) {
                return Err(Error::Config(format!(
                    "probe label {} absent from the gallery",
                    p.label
                )));
            }
        }
        Ok(())
    }
}

/// The walker parameters that constitute an identity. Limb order in
/// `phases` and `amplitudes` is left leg, right leg, left arm, right arm.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityProfile {
    /// Per-edge bone length in layout edge order.
    pub bone_lengths: Vec<f64>,
    /// Gait cycles per frame.
    pub frequency: f64,
    pub phases: [f64; 4],
    /// Swing amplitudes in radians.
    pub amplitudes: [f64; 4],
    /// Whole-body, leg-bone, and arm-bone length multipliers.
    pub height_scale: f64,
    pub leg_scale: f64,
    pub arm_scale: f64,
}

impl IdentityProfile {
    pub fn validate(&self) -> Result<()> {
        if self.bone_lengths.iter().any(|&l| l <= 0.0 || l.is_nan()) {
            return Err(Error::Config("bone lengths must be positive".into()));
        }
        if self
            .amplitudes
            .iter()
            .any(|&a| !(0.0..=PI / 2.0).contains(&a))
        {
            return Err(Error::Config("amplitudes must lie in [0, pi/2]".into()));
        }
        if !(self.frequency > 0.0 && self.frequency < 0.5) {
            return Err(Error::Config("frequency must lie in (0, 0.5)".into()));
        }
        if !(self.height_scale > 0.0 && self.leg_scale > 0.0 && self.arm_scale > 0.0) {
            return Err(Error::Config("bone scales must be positive".into()));
        }
        Ok(())
    }
}

/// Rest pose of the synth10 layout, joint order matching the layout. Arms
/// hang down and outward from the chest so that swinging about the x-axis
/// actually moves the hands.
const REST_POSE: [[f64; 3]; 10] = [
    [0.0, 0.0, 0.0],     // pelvis
    [0.0, 0.3, 0.0],     // spine
    [0.0, 0.6, 0.0],     // chest
    [0.0, 0.85, 0.0],    // head
    [-0.35, 0.25, 0.0],  // left hand
    [0.35, 0.25, 0.0],   // right hand
    [-0.12, -0.45, 0.0], // left knee
    [-0.12, -0.9, 0.0],  // left foot
    [0.12, -0.45, 0.0],  // right knee
    [0.12, -0.9, 0.0],   // right foot
];

/// Kinematic parent of each synth10 joint; the pelvis is its own parent.
const PARENT: [usize; 10] = [0, 0, 1, 2, 2, 2, 0, 6, 0, 8];

const LEFT_LEG: [usize; 2] = [6, 7];
const RIGHT_LEG: [usize; 2] = [8, 9];
const LEFT_ARM: [usize; 1] = [4];
const RIGHT_ARM: [usize; 1] = [5];
const PELVIS: usize = 0;
const CHEST: usize = 2;
const LEFT_KNEE: usize = 6;
const RIGHT_KNEE: usize = 8;

fn scale_group(joint: usize, profile: &IdentityProfile) -> f64 {
    match joint {
        4 | 5 => profile.arm_scale,
        6..=9 => profile.leg_scale,
        _ => 1.0,
    }
}

/// Static pose: every bone offset scaled by height times its group scale.
fn scaled_rest_pose(profile: &IdentityProfile) -> [[f64; 3]; 10] {
    let mut pos = [[0.0; 3]; 10];
    for j in 1..10 {
        let p = PARENT[j];
        let s = profile.height_scale * scale_group(j, profile);
        for c in 0..3 {
            pos[j][c] = pos[p][c] + s * (REST_POSE[j][c] - REST_POSE[p][c]);
        }
    }
    pos
}

/// Easy-mode strata per stratified axis.
const STRATA: usize = 8;
const SCALE_LO: f64 = 0.8;
const SCALE_HI: f64 = 1.2;

fn stratum_value(cell: usize, rng: &mut ChaCha8Rng) -> f64 {
    let range = SCALE_HI - SCALE_LO;
    let width = range / STRATA as f64;
    let center = SCALE_LO + (cell as f64 + 0.5) * width;
    // Jitter stays below 0.8% of the range so points in different strata
    // remain at least 10% of the range apart.
    center + rng.gen_range(-0.008..0.008) * range
}

/// Deterministic cell assignment: a seeded permutation of the `STRATA^3`
/// grid cells, indexed by identity.
fn easy_cell(master_seed: u64, index: usize) -> usize {
    let cells = STRATA * STRATA * STRATA;
    let mut order: Vec<usize> = (0..cells).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(master_seed, "strata", 0));
    order.shuffle(&mut rng);
    order[index % cells]
}

fn profile_bone_lengths(profile: &IdentityProfile, layout: &JointLayout) -> Vec<f64> {
    let pos = scaled_rest_pose(profile);
    layout
        .edges
        .iter()
        .map(|&(a, b)| {
            (0..3)
                .map(|c| (pos[a][c] - pos[b][c]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Samples the walker parameters of identity `index`.
///
/// Easy difficulty stratifies (height, leg, arm) bone scales over a seeded
/// permutation of grid cells and snaps the frequency to whole cycles per
/// `frames`-long sequence, so a sequence's frame-averaged pose is almost
/// independent of its phase. Hard difficulty draws every parameter from a
/// narrow uniform range with a free-running frequency.
pub fn generate_identity(
    master_seed: u64,
    index: usize,
    frames: usize,
    difficulty: Difficulty,
) -> IdentityProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(master_seed, "identity", index as u64));
    let (height_scale, leg_scale, arm_scale, a_leg, a_arm, frequency) = match difficulty {
        Difficulty::Easy => {
            let cell = easy_cell(master_seed, index);
            let cx = cell % STRATA;
            let cy = (cell / STRATA) % STRATA;
            let cz = cell / (STRATA * STRATA);
            let h = stratum_value(cx, &mut rng);
            let l = stratum_value(cy, &mut rng);
            let a = stratum_value(cz, &mut rng);
            let a_leg = rng.gen_range(0.38..0.42);
            let a_arm = rng.gen_range(0.28..0.32);
            let max_whole = (frames.saturating_sub(1)) / 2;
            let freq = if max_whole >= 1 {
                rng.gen_range(1..=max_whole) as f64 / frames as f64
            } else {
                0.25
            };
            (h, l, a, a_leg, a_arm, freq)
        }
        Difficulty::Hard => (
            rng.gen_range(0.95..1.05),
            rng.gen_range(0.95..1.05),
            rng.gen_range(0.95..1.05),
            rng.gen_range(0.45..0.55),
            rng.gen_range(0.35..0.45),
            rng.gen_range(0.2..0.3),
        ),
    };
    let base_phase = rng.gen_range(0.0..TAU);
    let layout = builtin_layout("synth10").expect("built-in layout");
    let mut profile = IdentityProfile {
        bone_lengths: Vec::new(),
        frequency,
        // Legs in antiphase; each arm counters its same-side leg.
        phases: [base_phase, base_phase + PI, base_phase + PI, base_phase],
        amplitudes: [a_leg, a_leg, a_arm, a_arm],
        height_scale,
        leg_scale,
        arm_scale,
    };
    profile.bone_lengths = profile_bone_lengths(&profile, &layout);
    profile
}

fn rotate_about_x(pos: &mut [[f64; 3]], anchor: usize, subtree: &[usize], theta: f64) {
    let (ay, az) = (pos[anchor][1], pos[anchor][2]);
    let (s, c) = theta.sin_cos();
    for &j in subtree {
        let y = pos[j][1] - ay;
        let z = pos[j][2] - az;
        pos[j][1] = ay + c * y - s * z;
        pos[j][2] = az + s * y + c * z;
    }
}

/// Forward-kinematic gait: limbs swing in the sagittal plane about their
/// anchors, feet counter-bend at the knees at half amplitude, and zero-mean
/// Gaussian noise lands on every coordinate. The sequence's global phase
/// comes from `rng`.
pub fn generate_sequence(
    profile: &IdentityProfile,
    layout: &JointLayout,
    frames: usize,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Tensor64>> {
    if layout.name != "synth10" || layout.joints != REST_POSE.len() {
        return Err(Error::Layout(format!(
            "the gait generator drives only the synth10 layout, got {:?}",
            layout.name
        )));
    }
    if frames == 0 {
        return Err(Error::Config("a sequence needs at least one frame".into()));
    }
    if noise_sigma < 0.0 || noise_sigma.is_nan() {
        return Err(Error::Config(format!(
            "noise sigma must be non-negative, got {noise_sigma}"
        )));
    }
    profile.validate()?;
    let noise = Normal::new(0.0, noise_sigma)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let global_phase = rng.gen_range(0.0..TAU);
    let rest = scaled_rest_pose(profile);
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let mut pos = rest;
        let base = TAU * profile.frequency * t as f64 + global_phase;
        let swing: Vec<f64> = (0..4)
            .map(|l| profile.amplitudes[l] * (base + profile.phases[l]).sin())
            .collect();
        rotate_about_x(&mut pos, PELVIS, &LEFT_LEG, swing[0]);
        rotate_about_x(&mut pos, PELVIS, &RIGHT_LEG, swing[1]);
        rotate_about_x(&mut pos, CHEST, &LEFT_ARM, swing[2]);
        rotate_about_x(&mut pos, CHEST, &RIGHT_ARM, swing[3]);
        rotate_about_x(&mut pos, LEFT_KNEE, &[LEFT_LEG[1]], -0.5 * swing[0]);
        rotate_about_x(&mut pos, RIGHT_KNEE, &[RIGHT_LEG[1]], -0.5 * swing[1]);
        let mut data = Vec::with_capacity(pos.len() * 3);
        for p in &pos {
            for &c in p {
                data.push(c + noise.sample(rng));
            }
        }
        out.push(Tensor::new(vec![layout.joints, 3], data)?);
    }
    Ok(out)
}

/// Generator request: `noise_sigma = None` picks the difficulty default
/// (0.01 easy, 0.05 hard).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSpec {
    pub ids: usize,
    pub seqs_per_id: usize,
    pub frames: usize,
    pub difficulty: Difficulty,
    pub noise_sigma: Option<f64>,
    pub seed: u64,
}

impl GenSpec {
    pub fn noise(&self) -> f64 {
        self.noise_sigma.unwrap_or(match self.difficulty {
            Difficulty::Easy => 0.01,
            Difficulty::Hard => 0.05,
        })
    }
}

/// Builds the full dataset: per identity, roughly 60% train, 20% probe,
/// 20% gallery with every section at least one sequence deep.
pub fn generate_dataset(spec: &GenSpec) -> Result<Dataset> {
    if spec.ids == 0 {
        return Err(Error::Config("need at least one identity".into()));
    }
    if spec.seqs_per_id < 3 {
        return Err(Error::Config(format!(
            "need at least 3 sequences per identity to fill train, probe and gallery, got {}",
            spec.seqs_per_id
        )));
    }
    let layout = builtin_layout("synth10").expect("built-in layout");
    let noise = spec.noise();
    let m = spec.seqs_per_id;
    let probe_n = ((0.2 * m as f64).round() as usize).max(1);
    let gallery_n = probe_n;
    let mut sequences = Vec::with_capacity(spec.ids * m);
    for i in 0..spec.ids {
        let profile = generate_identity(spec.seed, i, spec.frames, spec.difficulty);
        for s in 0..m {
            let stream = (i * m + s) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, "sequence", stream));
            let frames = generate_sequence(&profile, &layout, spec.frames, noise, &mut rng)?;
            let split = if s < m - probe_n - gallery_n {
                Split::Train
            } else if s < m - gallery_n {
                Split::Probe
            } else {
                Split::Gallery
            };
            sequences.push(SkeletonSequence {
                seq_id: format!("id{:03}-s{:02}", i + 1, s + 1),
                label: i + 1,
                split,
                frames,
            });
        }
    }
    let ds = Dataset { layout, sequences };
    ds.validate()?;
    Ok(ds)
}

/// Serializes a dataset in the SKL1 text format. Coordinates print with the
/// shortest round-tripping decimal form, so read(write(x)) == x.
pub fn format_dataset(ds: &Dataset) -> String {
    let mut out = String::new();
    let builtin = builtin_layout(&ds.layout.name).is_ok();
    let kind = if builtin {
        ds.layout.name.as_str()
    } else {
        "custom"
    };
    out.push_str(&format!("SKL1 J={} K={}\n", ds.layout.joints, kind));
    if !builtin {
        out.push_str("edges");
        for &(a, b) in &ds.layout.edges {
            out.push_str(&format!(" {}-{}", a + 1, b + 1));
        }
        out.push('\n');
    }
    if !ds.layout.upper_limbs.is_empty() || !ds.layout.lower_limbs.is_empty() {
        let csv = |v: &[usize]| {
            v.iter()
                .map(|i| (i + 1).to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        out.push_str(&format!(
            "limbs upper={} lower={}\n",
            csv(&ds.layout.upper_limbs),
            csv(&ds.layout.lower_limbs)
        ));
    }
    for s in &ds.sequences {
        out.push_str(&format!(
            "seq {} label {} split {} frames {}\n",
            s.seq_id,
            s.label,
            s.split,
            s.frames.len()
        ));
        for fr in &s.frames {
            let line = fr
                .data()
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    ds.validate()?;
    std::fs::write(path, format_dataset(ds))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset(&text, &path.display().to_string())
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_csv_indices(s: &str, path: &str, line: usize) -> Result<Vec<usize>> {
    s.split(',')
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| parse_err(path, line, format!("bad joint index {tok:?}")))
        })
        .collect()
}

/// Parses the SKL1 text format; every error names its line.
pub fn parse_dataset(text: &str, path: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (lno, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 3 || toks[0] != "SKL1" {
        return Err(parse_err(
            path,
            lno,
            "expected header `SKL1 J=<n> K=<layout>`",
        ));
    }
    let joints: usize = toks[1]
        .strip_prefix("J=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(path, lno, format!("bad joint count {:?}", toks[1])))?;
    let kind = toks[2]
        .strip_prefix("K=")
        .ok_or_else(|| parse_err(path, lno, format!("bad layout field {:?}", toks[2])))?
        .to_string();

    let mut edges_1b: Option<Vec<(usize, usize)>> = None;
    let mut limbs_1b: Option<(Vec<usize>, Vec<usize>)> = None;
    let mut pending: Option<(usize, &str)> = None;
    for (lno, line) in lines.by_ref() {
        if line == "edges" || line.starts_with("edges ") {
            if kind != "custom" {
                return Err(parse_err(
                    path,
                    lno,
                    "an edges line is only valid with K=custom",
                ));
            }
            let mut parsed = Vec::new();
            for tok in line.split_whitespace().skip(1) {
                let (a, b) = tok
                    .split_once('-')
                    .ok_or_else(|| parse_err(path, lno, format!("bad edge {tok:?}")))?;
                let a: usize = a
                    .parse()
                    .map_err(|_| parse_err(path, lno, format!("bad edge {tok:?}")))?;
                let b: usize = b
                    .parse()
                    .map_err(|_| parse_err(path, lno, format!("bad edge {tok:?}")))?;
                parsed.push((a, b));
            }
            edges_1b = Some(parsed);
        } else if line.starts_with("limbs ") {
            let mut upper = None;
            let mut lower = None;
            for tok in line.split_whitespace().skip(1) {
                if let Some(v) = tok.strip_prefix("upper=") {
                    upper = Some(parse_csv_indices(v, path, lno)?);
                } else if let Some(v) = tok.strip_prefix("lower=") {
                    lower = Some(parse_csv_indices(v, path, lno)?);
                } else {
                    return Err(parse_err(path, lno, format!("bad limbs field {tok:?}")));
                }
            }
            match (upper, lower) {
                (Some(u), Some(l)) => limbs_1b = Some((u, l)),
                _ => {
                    return Err(parse_err(
                        path,
                        lno,
                        "limbs line needs both upper= and lower=",
                    ))
                }
            }
        } else {
            pending = Some((lno, line));
            break;
        }
    }

    let layout = if kind == "custom" {
        let edges =
            edges_1b.ok_or_else(|| parse_err(path, 1, "K=custom requires an edges line"))?;
        let (u, l) = limbs_1b.unwrap_or_default();
        JointLayout::new("custom", joints, &edges, &u, &l)?
    } else {
        let mut layout = builtin_layout(&kind)?;
        if layout.joints != joints {
            return Err(parse_err(
                path,
                1,
                format!(
                    "header J={} does not match layout {} with {} joints",
                    joints, kind, layout.joints
                ),
            ));
        }
        if let Some((u, l)) = limbs_1b {
            layout = JointLayout::new(&kind, joints, &layout.edges_one_based(), &u, &l)?;
        }
        layout
    };

    let mut sequences = Vec::new();
    loop {
        let (lno, line) = match pending.take() {
            Some(p) => p,
            None => match lines.next() {
                Some(p) => p,
                None => break,
            },
        };
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 8
            || toks[0] != "seq"
            || toks[2] != "label"
            || toks[4] != "split"
            || toks[6] != "frames"
        {
            return Err(parse_err(
                path,
                lno,
                "expected `seq <id> label <y> split <train|probe|gallery> frames <f>`",
            ));
        }
        let seq_id = toks[1].to_string();
        let label: usize = toks[3]
            .parse()
            .ok()
            .filter(|&y| y >= 1)
            .ok_or_else(|| parse_err(path, lno, format!("bad label {:?}", toks[3])))?;
        let split = Split::from_str(toks[5]).map_err(|e| parse_err(path, lno, e.to_string()))?;
        let frame_count: usize = toks[7]
            .parse()
            .ok()
            .filter(|&f| f >= 1)
            .ok_or_else(|| parse_err(path, lno, format!("bad frame count {:?}", toks[7])))?;
        let mut frames = Vec::with_capacity(frame_count);
        for _ in 0..frame_count {
            let (lno, line) = lines
                .next()
                .ok_or_else(|| parse_err(path, lno, "file ends inside a sequence"))?;
            let mut coords = Vec::with_capacity(joints * 3);
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| parse_err(path, lno, format!("bad coordinate {tok:?}")))?;
                if !v.is_finite() {
                    return Err(parse_err(
                        path,
                        lno,
                        format!("non-finite coordinate {tok}"),
                    ));
                }
                coords.push(v);
            }
            if coords.len() != joints * 3 {
                return Err(parse_err(
                    path,
                    lno,
                    format!("expected {} coordinates, got {}", joints * 3, coords.len()),
                ));
            }
            frames.push(Tensor::new(vec![joints, 3], coords)?);
        }
        sequences.push(SkeletonSequence {
            seq_id,
            label,
            split,
            frames,
        });
    }
    let ds = Dataset { layout, sequences };
    ds.validate()?;
    Ok(ds)
}
