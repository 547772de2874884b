//! Run configuration: one flat key set shared by the config file format,
//! the CLI flags, and the checkpoint echo.
//!
//! Files hold `key = value` lines with `#` comments. Serialization is
//! canonical (fixed key order, optional keys omitted when unset) so a
//! config echoed into a checkpoint re-parses to an identical value.

use std::path::Path;
use std::str::FromStr;

use crate::encoder::MaskMode;
use crate::error::{Error, Result};
use crate::eval::Metric;

/// Every tunable in one place. Limb overrides are 1-based joint indices,
/// matching the dataset format; `k = None` defers the positional-encoding
/// width to `min(8, J-1)` for the layout at hand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_k: usize,
    pub k: Option<usize>,
    pub frames: usize,
    pub p_s: f64,
    pub p_t: f64,
    pub lambda: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mask_mode: MaskMode,
    pub normalize: bool,
    /// Whether m-hop motifs include the diagonal.
    pub hsm_self: bool,
    /// Deterministic eigenvector signs, or seeded random column flips.
    pub pe_sign_random: bool,
    pub use_hsm: bool,
    pub use_gcm: bool,
    pub use_csp: bool,
    pub metric: Metric,
    pub limbs_upper: Option<Vec<usize>>,
    pub limbs_lower: Option<Vec<usize>>,
    pub layout: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 128,
            layers: 2,
            heads: 8,
            d_k: 16,
            k: None,
            frames: 6,
            p_s: 0.25,
            p_t: 0.25,
            lambda: 0.5,
            tau1: 0.07,
            tau2: 0.07,
            lr: 3.5e-4,
            batch: 32,
            epochs: 50,
            seed: 7,
            mask_mode: MaskMode::Literal,
            normalize: true,
            hsm_self: true,
            pe_sign_random: false,
            use_hsm: true,
            use_gcm: true,
            use_csp: true,
            metric: Metric::Cosine,
            limbs_upper: None,
            limbs_lower: None,
            layout: "synth10".to_string(),
        }
    }
}

fn bad_value(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("config key {key}: got {value:?}, expected {want}"))
}

fn parse_num<T: FromStr>(key: &str, value: &str, want: &str) -> Result<T> {
    value.parse().map_err(|_| bad_value(key, value, want))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(key, value, "true or false")),
    }
}

fn parse_indices(key: &str, value: &str) -> Result<Vec<usize>> {
    let v: Result<Vec<usize>> = value
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| bad_value(key, value, "comma-separated 1-based joint indices"))
        })
        .collect();
    let v = v?;
    if v.is_empty() {
        return Err(bad_value(key, value, "a non-empty index list"));
    }
    Ok(v)
}

impl RunConfig {
    /// Applies one `key = value` assignment. Unknown keys are rejected by
    /// name; range checks run later in [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse_num(key, value, "a positive integer")?,
            "layers" => self.layers = parse_num(key, value, "a non-negative integer")?,
            "heads" => self.heads = parse_num(key, value, "a positive integer")?,
            "d_k" => self.d_k = parse_num(key, value, "a positive integer")?,
            "k" => self.k = Some(parse_num(key, value, "a positive integer")?),
            "frames" => self.frames = parse_num(key, value, "a positive integer")?,
            "p_s" => self.p_s = parse_num(key, value, "a real in [0, 1)")?,
            "p_t" => self.p_t = parse_num(key, value, "a real in [0, 1)")?,
            "lambda" => self.lambda = parse_num(key, value, "a real in [0, 1]")?,
            "tau1" => self.tau1 = parse_num(key, value, "a positive real")?,
            "tau2" => self.tau2 = parse_num(key, value, "a positive real")?,
            "lr" => self.lr = parse_num(key, value, "a non-negative real")?,
            "batch" => self.batch = parse_num(key, value, "a positive integer")?,
            "epochs" => self.epochs = parse_num(key, value, "a non-negative integer")?,
            "seed" => self.seed = parse_num(key, value, "an unsigned integer")?,
            "mask_mode" => self.mask_mode = value.parse()?,
            "normalize" => self.normalize = parse_bool(key, value)?,
            "hsm_self" => {
                self.hsm_self = match value {
                    "include" => true,
                    "exclude" => false,
                    _ => return Err(bad_value(key, value, "include or exclude")),
                }
            }
            "pe_sign" => {
                self.pe_sign_random = match value {
                    "deterministic" => false,
                    "random" => true,
                    _ => return Err(bad_value(key, value, "deterministic or random")),
                }
            }
            "use_hsm" => self.use_hsm = parse_bool(key, value)?,
            "use_gcm" => self.use_gcm = parse_bool(key, value)?,
            "use_csp" => self.use_csp = parse_bool(key, value)?,
            "metric" => self.metric = value.parse()?,
            "limbs_upper" => self.limbs_upper = Some(parse_indices(key, value)?),
            "limbs_lower" => self.limbs_lower = Some(parse_indices(key, value)?),
            "layout" => self.layout = value.to_string(),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Range and consistency checks; every error names the offending key.
    pub fn validate(&self) -> Result<()> {
        fn range(ok: bool, key: &str, want: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("config key {key} must be {want}")))
            }
        }
        range(self.d >= 1, "d", "at least 1")?;
        range(self.heads >= 1, "heads", "at least 1")?;
        range(self.d_k >= 1, "d_k", "at least 1")?;
        if self.heads * self.d_k != self.d {
            return Err(Error::Config(format!(
                "heads * d_k must equal d: {} * {} != {}",
                self.heads, self.d_k, self.d
            )));
        }
        if let Some(k) = self.k {
            range(k >= 1, "k", "at least 1")?;
        }
        range(self.frames >= 1, "frames", "at least 1")?;
        range((0.0..1.0).contains(&self.p_s), "p_s", "in [0, 1)")?;
        range((0.0..1.0).contains(&self.p_t), "p_t", "in [0, 1)")?;
        range(
            (0.0..=1.0).contains(&self.lambda),
            "lambda",
            "in [0, 1]",
        )?;
        range(self.tau1 > 0.0, "tau1", "positive")?;
        range(self.tau2 > 0.0, "tau2", "positive")?;
        range(self.lr >= 0.0 && self.lr.is_finite(), "lr", "non-negative and finite")?;
        range(self.batch >= 1, "batch", "at least 1")?;
        range(!self.layout.is_empty(), "layout", "a layout name")?;
        Ok(())
    }

    /// Positional-encoding width for a layout with `joints` joints.
    pub fn resolve_k(&self, joints: usize) -> usize {
        self.k
            .unwrap_or_else(|| crate::graph::default_pe_width(joints))
    }

    /// Canonical `key = value` serialization; parsing it back is identity.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("d", self.d.to_string());
        push("layers", self.layers.to_string());
        push("heads", self.heads.to_string());
        push("d_k", self.d_k.to_string());
        if let Some(k) = self.k {
            push("k", k.to_string());
        }
        push("frames", self.frames.to_string());
        push("p_s", self.p_s.to_string());
        push("p_t", self.p_t.to_string());
        push("lambda", self.lambda.to_string());
        push("tau1", self.tau1.to_string());
        push("tau2", self.tau2.to_string());
        push("lr", self.lr.to_string());
        push("batch", self.batch.to_string());
        push("epochs", self.epochs.to_string());
        push("seed", self.seed.to_string());
        push("mask_mode", self.mask_mode.to_string());
        push("normalize", self.normalize.to_string());
        push(
            "hsm_self",
            if self.hsm_self { "include" } else { "exclude" }.to_string(),
        );
        push(
            "pe_sign",
            if self.pe_sign_random {
                "random"
            } else {
                "deterministic"
            }
            .to_string(),
        );
        push("use_hsm", self.use_hsm.to_string());
        push("use_gcm", self.use_gcm.to_string());
        push("use_csp", self.use_csp.to_string());
        push("metric", self.metric.to_string());
        let csv = |v: &[usize]| {
            v.iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        if let Some(u) = &self.limbs_upper {
            push("limbs_upper", csv(u));
        }
        if let Some(l) = &self.limbs_lower {
            push("limbs_lower", csv(l));
        }
        push("layout", self.layout.clone());
        out
    }

    /// Parses config text on top of the defaults and validates the result.
    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("expected `key = value`, got {line:?}"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }
}
