//! mocos: synthetic gait data generation, motif-guided encoder training,
//! and closed-set re-identification evaluation from one binary.
//!
//! Exit codes: 0 on success, 1 on validation or I/O problems, 2 on numeric
//! failures.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mocos_core::autodiff::op_gradient_checks;
use mocos_core::checkpoint::{load_checkpoint, save_checkpoint};
use mocos_core::config::RunConfig;
use mocos_core::data::{generate_dataset, read_dataset, write_dataset, GenSpec, Split};
use mocos_core::encoder::mean_relations;
use mocos_core::eval::evaluate;
use mocos_core::graph::builtin_layout;
use mocos_core::motifs::HeadMaskTable;
use mocos_core::train::{
    build_setup, encode_sequences, full_loss_gradient_check, mgt_layer_gradient_check,
    resolve_motifs, train,
};
use mocos_core::{Error, Result};

const OP_GRAD_TOL: f64 = 1e-5;
const COMPOSED_GRAD_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "mocos",
    version,
    about = "Skeleton-based person re-identification with motif-guided attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic gait dataset.
    Gen(GenArgs),
    /// Train the encoder and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's probe/gallery split.
    Eval(EvalArgs),
    /// Print the motif matrices and the per-head mask table.
    InspectMotifs(InspectMotifsArgs),
    /// Average a sequence's relation matrices and write them as CSV.
    DumpRelations(DumpRelationsArgs),
    /// Run the finite-difference gradient checks.
    CheckGrad(CheckGradArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Number of identities.
    #[arg(long)]
    ids: usize,
    /// Sequences per identity (at least 3; splits 60/20/20).
    #[arg(long)]
    seqs: usize,
    /// Frames per sequence.
    #[arg(long)]
    frames: usize,
    /// Identity separation: easy or hard.
    #[arg(long, default_value = "easy")]
    difficulty: String,
    /// Coordinate noise sigma; defaults to 0.01 easy, 0.05 hard.
    #[arg(long)]
    noise: Option<f64>,
    /// Master seed for identities and motion.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output dataset file (SKL1 text).
    #[arg(long, default_value = "dataset.skl")]
    out: PathBuf,
}

/// Config-file keys exposed as flags; any flag given here overrides the
/// same key from `--config`.
#[derive(Args, Default)]
struct Overrides {
    /// Node embedding width D.
    #[arg(long)]
    d: Option<String>,
    /// Encoder layer count L.
    #[arg(long)]
    layers: Option<String>,
    /// Attention head count H.
    #[arg(long)]
    heads: Option<String>,
    /// Per-head width; heads * d_k must equal d.
    #[arg(long)]
    d_k: Option<String>,
    /// Positional-encoding width K (default: min(8, J-1)).
    #[arg(long)]
    k: Option<String>,
    /// Frames per sequence the config describes.
    #[arg(long)]
    frames: Option<String>,
    /// Spatial mask rate in [0, 1).
    #[arg(long)]
    p_s: Option<String>,
    /// Temporal mask rate in [0, 1).
    #[arg(long)]
    p_t: Option<String>,
    /// Loss fusion coefficient in [0, 1].
    #[arg(long)]
    lambda: Option<String>,
    /// Sequence-level contrast temperature.
    #[arg(long)]
    tau1: Option<String>,
    /// Sub-skeleton-level contrast temperature.
    #[arg(long)]
    tau2: Option<String>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<String>,
    /// Batch size.
    #[arg(long)]
    batch: Option<String>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<String>,
    /// Master seed for init, shuffling, and masks.
    #[arg(long)]
    seed: Option<String>,
    /// Motif application: literal or additive.
    #[arg(long)]
    mask_mode: Option<String>,
    /// L2-normalize features and prototypes: true or false.
    #[arg(long)]
    normalize: Option<String>,
    /// Self-attention in structural motifs: include or exclude.
    #[arg(long)]
    hsm_self: Option<String>,
    /// Positional-encoding sign: deterministic or random.
    #[arg(long)]
    pe_sign: Option<String>,
    /// Use the structural motif heads: true or false.
    #[arg(long)]
    use_hsm: Option<String>,
    /// Use the gait motif heads: true or false.
    #[arg(long)]
    use_gcm: Option<String>,
    /// Use combinatorial masking and the two-level loss: true or false.
    #[arg(long)]
    use_csp: Option<String>,
    /// Distance metric: cosine or euclidean.
    #[arg(long)]
    metric: Option<String>,
    /// Comma-separated 1-based upper-limb joints.
    #[arg(long)]
    limbs_upper: Option<String>,
    /// Comma-separated 1-based lower-limb joints.
    #[arg(long)]
    limbs_lower: Option<String>,
    /// Built-in joint layout name.
    #[arg(long)]
    layout: Option<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let pairs: [(&str, &Option<String>); 26] = [
            ("d", &self.d),
            ("layers", &self.layers),
            ("heads", &self.heads),
            ("d_k", &self.d_k),
            ("k", &self.k),
            ("frames", &self.frames),
            ("p_s", &self.p_s),
            ("p_t", &self.p_t),
            ("lambda", &self.lambda),
            ("tau1", &self.tau1),
            ("tau2", &self.tau2),
            ("lr", &self.lr),
            ("batch", &self.batch),
            ("epochs", &self.epochs),
            ("seed", &self.seed),
            ("mask_mode", &self.mask_mode),
            ("normalize", &self.normalize),
            ("hsm_self", &self.hsm_self),
            ("pe_sign", &self.pe_sign),
            ("use_hsm", &self.use_hsm),
            ("use_gcm", &self.use_gcm),
            ("use_csp", &self.use_csp),
            ("metric", &self.metric),
            ("limbs_upper", &self.limbs_upper),
            ("limbs_lower", &self.limbs_lower),
            ("layout", &self.layout),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(())
    }
}

fn load_config(path: &Option<PathBuf>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::parse_file(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset (SKL1 file).
    #[arg(long)]
    data: PathBuf,
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset with probe and gallery splits (SKL1 file).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Override the checkpoint's distance metric (cosine or euclidean).
    #[arg(long)]
    metric: Option<String>,
    /// Largest rank of the CMC curve.
    #[arg(long, default_value_t = 10)]
    r_max: usize,
    /// Write per-probe average precisions to this CSV file.
    #[arg(long)]
    ap_csv: Option<PathBuf>,
}

#[derive(Args)]
struct InspectMotifsArgs {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct DumpRelationsArgs {
    /// Dataset holding the sequence (SKL1 file).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Sequence id to average over; defaults to the first sequence.
    #[arg(long)]
    seq: Option<String>,
    /// Output CSV path.
    #[arg(long, default_value = "relations.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckGradArgs {
    /// Seed for the random check inputs.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn run_gen(args: GenArgs) -> Result<()> {
    let spec = GenSpec {
        ids: args.ids,
        seqs_per_id: args.seqs,
        frames: args.frames,
        difficulty: args.difficulty.parse()?,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    let dataset = generate_dataset(&spec)?;
    write_dataset(&dataset, &args.out)?;
    println!(
        "wrote {} ({} sequences, {} identities, {} frames each)",
        args.out.display(),
        dataset.sequences.len(),
        args.ids,
        args.frames
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.config, &args.overrides)?;
    let dataset = read_dataset(&args.data)?;
    let (params, _) = train(&cfg, &dataset, |s| {
        println!(
            "epoch={} loss={:.6} str={:.6} ssk={:.6} secs={:.2}",
            s.epoch, s.loss, s.str_loss, s.ssk_loss, s.secs
        );
    })?;
    // The echo pins the positional-encoding width actually used, so eval
    // rebuilds the identical architecture.
    let mut echo = cfg.clone();
    echo.k = Some(echo.resolve_k(dataset.layout.joints));
    save_checkpoint(&args.out, &echo, &params)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let (mut cfg, params) = load_checkpoint(&args.ckpt)?;
    if let Some(metric) = &args.metric {
        cfg.set("metric", metric)?;
    }
    let dataset = read_dataset(&args.data)?;
    dataset.validate()?;
    let setup = build_setup(&cfg, &dataset.layout)?;
    if setup.dims != params.dims {
        return Err(Error::Checkpoint(format!(
            "dataset layout needs dims {:?} but the checkpoint was trained with {:?}",
            setup.dims, params.dims
        )));
    }
    let probe = dataset.split(Split::Probe);
    let gallery = dataset.split(Split::Gallery);
    let probe_reps = encode_sequences(&setup, &params, &probe)?;
    let gallery_reps = encode_sequences(&setup, &params, &gallery)?;
    let probe_labels: Vec<usize> = probe.iter().map(|s| s.label).collect();
    let gallery_labels: Vec<usize> = gallery.iter().map(|s| s.label).collect();
    let r_max = args.r_max.max(10);
    let report = evaluate(
        &probe_reps,
        &gallery_reps,
        &probe_labels,
        &gallery_labels,
        cfg.metric,
        r_max,
    )?;
    println!(
        "R1={:.4} R5={:.4} R10={:.4} mAP={:.4}",
        report.rank_accuracy[&1],
        report.rank_accuracy[&5],
        report.rank_accuracy[&10],
        report.mean_ap
    );
    if let Some(path) = &args.ap_csv {
        let mut csv = String::from("probe,ap\n");
        for (i, ap) in report.average_precisions.iter().enumerate() {
            let _ = writeln!(csv, "{},{}", i + 1, ap);
        }
        std::fs::write(path, csv)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_inspect_motifs(args: InspectMotifsArgs) -> Result<()> {
    let cfg = load_config(&args.config, &args.overrides)?;
    let layout = builtin_layout(&cfg.layout)?;
    let set = resolve_motifs(&cfg, &layout)?;
    for motif in [
        &set.hsm[0],
        &set.hsm[1],
        &set.hsm[2],
        &set.gcm_upper,
        &set.gcm_lower,
    ] {
        println!("{} ({}x{})", motif.kind, layout.joints, layout.joints);
        print!("{}", motif.render());
        println!();
    }
    let table = HeadMaskTable::build(&set, cfg.heads, cfg.use_hsm, cfg.use_gcm)?;
    println!("head table ({} heads):", cfg.heads);
    for (i, kind) in table.kinds().iter().enumerate() {
        println!("  head {}: {}", i + 1, kind);
    }
    Ok(())
}

fn run_dump_relations(args: DumpRelationsArgs) -> Result<()> {
    let (cfg, params) = load_checkpoint(&args.ckpt)?;
    let dataset = read_dataset(&args.data)?;
    let seq = match &args.seq {
        Some(id) => dataset
            .sequences
            .iter()
            .find(|s| &s.seq_id == id)
            .ok_or_else(|| Error::Eval(format!("sequence {id:?} not in the dataset")))?,
        None => dataset
            .sequences
            .first()
            .ok_or_else(|| Error::Eval("dataset has no sequences".into()))?,
    };
    let setup = build_setup(&cfg, &dataset.layout)?;
    let relations = mean_relations(
        &params,
        seq.frames.iter(),
        &setup.pe,
        &setup.masks,
        setup.mask_mode,
    )?;
    let mut csv = String::new();
    for (l, layer) in relations.iter().enumerate() {
        for (h, rel) in layer.iter().enumerate() {
            let _ = writeln!(csv, "{},{}", h + 1, l + 1);
            for r in 0..rel.rows() {
                let row: Vec<String> = rel.row(r).iter().map(|v| v.to_string()).collect();
                let _ = writeln!(csv, "{}", row.join(","));
            }
        }
    }
    std::fs::write(&args.out, csv)?;
    println!(
        "wrote {} (sequence {}, {} layers x {} heads)",
        args.out.display(),
        seq.seq_id,
        relations.len(),
        relations.first().map_or(0, Vec::len)
    );
    Ok(())
}

fn run_check_grad(args: CheckGradArgs) -> Result<()> {
    let mut failures = Vec::new();
    for (name, err) in op_gradient_checks(args.seed)? {
        let ok = err <= OP_GRAD_TOL;
        println!("{name}: max_rel_err={err:.3e} {}", verdict(ok));
        if !ok {
            failures.push(name);
        }
    }
    for (name, err) in [
        ("encoder-layer", mgt_layer_gradient_check(args.seed)?),
        ("masked-prototype-loss", full_loss_gradient_check(args.seed)?),
    ] {
        let ok = err <= COMPOSED_GRAD_TOL;
        println!("{name} (composed): max_rel_err={err:.3e} {}", verdict(ok));
        if !ok {
            failures.push(name.to_string());
        }
    }
    if failures.is_empty() {
        println!("all gradient checks passed");
        Ok(())
    } else {
        Err(Error::Train(format!(
            "gradient tolerance exceeded: {}",
            failures.join(", ")
        )))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Gen(args) => run_gen(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::InspectMotifs(args) => run_inspect_motifs(args),
        Command::DumpRelations(args) => run_dump_relations(args),
        Command::CheckGrad(args) => run_check_grad(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
