//! Command-line front end: `synth`, `cluster`, `train`, `eval`, `attend` and
//! `bench`.
//!
//! Every subcommand accepts `--config FILE` with `key=value` lines naming its
//! long flags; explicit flags override the file. Each run writes the fully
//! resolved settings to `<out>/<subcommand>.resolved.txt` in the same
//! format, so a run can be repeated from its snapshot.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::clustering::{build_centroid_sets, read_centroids, write_centroids};
use crate::data::{augment, load_dataset, AugmentMode, AugmentationConfig, Dataset, Split, SynthConfig};
use crate::error::{Error, Result};
use crate::harness::{
    bench_scaling, bench_to_csv, evaluate, export_attention, train, BenchOptions, EvalOptions, TrainConfig, TrainSink,
};
use crate::loss::{Balance, LossParams};
use crate::model::{load_checkpoint, BackboneSpec, C2fModel, CentroidTable, ModelConfig};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "C2F_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "c2f", version, about = "Coarse-to-fine multi-scene camera pose regression")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic multi-scene dataset.
    Synth(SynthArgs),
    /// Cluster per-scene poses into position and orientation centroids.
    Cluster(ClusterArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Export attention heatmaps and scene rankings.
    Attend(AttendArgs),
    /// Time inference as the number of scenes grows.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// key=value file supplying defaults for this subcommand's flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: $C2F_OUTPUT_ROOT/<subcommand>, or runs/<subcommand>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 3)]
    scenes: usize,
    #[arg(long, default_value_t = 64)]
    per_scene: usize,
    #[arg(long, default_value_t = 0)]
    test_per_scene: usize,
    #[arg(long, default_value_t = 64)]
    image_size: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    kx: usize,
    #[arg(long, default_value_t = 4)]
    kq: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Centroid file to write [default: <out>/centroids.txt].
    #[arg(long)]
    centroids: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Backbone: `reference` (224x224 input) or `tiny` (64x64 input).
    #[arg(long, default_value = "reference")]
    backbone: String,
    #[arg(long, default_value_t = 256)]
    token_dim: usize,
    #[arg(long, default_value_t = 6)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 256)]
    mlp_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 1024)]
    head_hidden: usize,
}

impl ModelArgs {
    fn config(&self, num_scenes: usize, k_x: usize, k_q: usize) -> Result<ModelConfig> {
        let backbone = match self.backbone.as_str() {
            "reference" => BackboneSpec::reference_224(),
            "tiny" => BackboneSpec::tiny_64(),
            other => return Err(Error::Config(format!("unknown backbone `{other}`"))),
        };
        let cfg = ModelConfig {
            num_scenes,
            token_dim: self.token_dim,
            layers: self.layers,
            heads: self.heads,
            mlp_dim: self.mlp_dim,
            dropout: self.dropout,
            k_x,
            k_q,
            head_hidden: self.head_hidden,
            backbone,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    centroids: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Halve the learning rate every this many epochs (0 disables).
    #[arg(long, default_value_t = 10)]
    lr_halving: usize,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-10)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint every this many epochs (0: final checkpoint only).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    s_x: f64,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    s_q: f64,
    /// Clip the global gradient norm (0 disables).
    #[arg(long, default_value_t = 0.0)]
    grad_clip: f64,
    /// Shorter-edge resize before cropping [default: model input + 1/7].
    #[arg(long)]
    resize: Option<u32>,
    #[arg(long, default_value_t = 0.2)]
    brightness: f32,
    #[arg(long, default_value_t = 0.2)]
    contrast: f32,
    #[arg(long, default_value_t = 0.2)]
    saturation: f32,
    /// Disable random cropping and colour jitter.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    centroids: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Shorter-edge resize before the center crop [default: model input].
    #[arg(long)]
    resize: Option<u32>,
    /// Report centroid-only predictions.
    #[arg(long)]
    no_residuals: bool,
}

#[derive(Args, Debug)]
struct AttendArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    centroids: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Maximum number of images to export.
    #[arg(long, default_value_t = 8)]
    limit: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated scene counts.
    #[arg(long, default_value = "4,10,100,1000")]
    scene_counts: String,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    kx: usize,
    #[arg(long, default_value_t = 1)]
    kq: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code: 0 on success, 1 on a failed run, 2 on a
/// usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match apply_config_file(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match dispatch(cli.command, name, sub) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Long flag names of `sub`, mapped to whether the flag takes a value.
fn known_flags(sub: &str) -> Option<BTreeMap<String, bool>> {
    let cmd = Cli::command();
    let sc = cmd.find_subcommand(sub)?;
    Some(
        sc.get_arguments()
            .filter_map(|a| Some((a.get_long()?.to_string(), a.get_action().takes_values())))
            .collect(),
    )
}

/// Splices `key=value` pairs from `--config FILE` in front of the explicit
/// flags, so the explicit ones win.
fn apply_config_file(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(sub_pos) = argv.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(argv);
    };
    let sub_pos = sub_pos + 1;
    let sub = argv[sub_pos].to_string_lossy().to_string();
    let mut config = None;
    let mut i = sub_pos + 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            config = argv.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        }
        i += 1;
    }
    let (Some(path), Some(flags)) = (config, known_flags(&sub)) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut injected: Vec<OsString> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            path: path.clone(),
            line: n + 1,
            msg,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "config" {
            return Err(bad("config files cannot include other config files".into()));
        }
        match flags.get(k) {
            None => return Err(bad(format!("unknown key `{k}` for `{sub}`"))),
            Some(true) => {
                injected.push(format!("--{k}").into());
                injected.push(v.into());
            }
            Some(false) => match v {
                "true" => injected.push(format!("--{k}").into()),
                "false" => {}
                _ => return Err(bad(format!("`{k}` expects true or false"))),
            },
        }
    }
    let mut out = argv[..=sub_pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[sub_pos + 1..]);
    Ok(out)
}

fn output_dir(common: &Common, sub: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(sub)
    })
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| Error::Config(format!("missing required flag --{flag}")))
}

/// Writes every resolved flag of the run as `key=value`.
fn write_snapshot(sub: &str, matches: &ArgMatches, out: &Path, overrides: &[(&str, String)]) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let cmd = Cli::command();
    let sc = cmd.find_subcommand(sub).expect("known subcommand");
    let mut text = format!("# resolved settings for `c2f {sub}`\n");
    for arg in sc.get_arguments() {
        let Some(long) = arg.get_long() else { continue };
        let id = arg.get_id().as_str();
        if long == "config" {
            continue;
        }
        if let Some((_, v)) = overrides.iter().find(|(k, _)| *k == long) {
            text.push_str(&format!("{long}={v}\n"));
            continue;
        }
        if let Ok(Some(raw)) = matches.try_get_raw(id) {
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().to_string()).collect();
            if let Some(last) = vals.last() {
                text.push_str(&format!("{long}={last}\n"));
            }
        }
    }
    std::fs::write(out.join(format!("{sub}.resolved.txt")), text)?;
    Ok(())
}

fn abs(p: &Path) -> String {
    std::path::absolute(p)
        .unwrap_or_else(|_| p.to_path_buf())
        .display()
        .to_string()
}

fn dispatch(command: Command, name: &str, matches: &ArgMatches) -> Result<()> {
    match command {
        Command::Synth(a) => {
            let out = output_dir(&a.common, name);
            write_snapshot(name, matches, &out, &[("out", abs(&out))])?;
            let cfg = SynthConfig {
                num_scenes: a.scenes,
                samples_per_scene: a.per_scene,
                test_per_scene: a.test_per_scene,
                image_size: a.image_size,
                seed: a.seed,
            };
            let ds = crate::data::generate_synthetic(&cfg, &out)?;
            println!(
                "wrote {} samples over {} scenes to {}",
                ds.len(),
                ds.num_scenes(),
                out.display()
            );
        }
        Command::Cluster(a) => {
            let manifest = require(&a.manifest, "manifest")?;
            let out = output_dir(&a.common, name);
            let target = a.centroids.clone().unwrap_or_else(|| out.join("centroids.txt"));
            write_snapshot(name, matches, &out, &[("out", abs(&out)), ("centroids", abs(&target))])?;
            let ds = load_dataset(manifest)?;
            let sets = build_centroid_sets(&ds.split(Split::Train).samples, a.kx, a.kq, a.seed)?;
            if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            write_centroids(&sets, &target)?;
            println!("wrote centroids for {} scenes to {}", sets.len(), target.display());
        }
        Command::Train(a) => {
            let manifest = require(&a.manifest, "manifest")?;
            let centroids_path = require(&a.centroids, "centroids")?;
            let out = output_dir(&a.common, name);
            let ds = load_dataset(manifest)?;
            let sets = read_centroids(centroids_path)?;
            let table = CentroidTable::new(&sets)?;
            let model_cfg = a.model.config(ds.num_scenes(), table.k_x, table.k_q)?;
            let input = model_cfg.backbone.input_height as u32;
            let resize = a.resize.unwrap_or(input * 8 / 7);
            write_snapshot(
                name,
                matches,
                &out,
                &[("out", abs(&out)), ("resize", resize.to_string())],
            )?;
            let cfg = TrainConfig {
                epochs: a.epochs,
                batch_size: a.batch_size,
                lr: a.lr,
                lr_halving_epochs: a.lr_halving,
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                seed: a.seed,
                checkpoint_every: a.checkpoint_every,
                balance: Balance { s_x: a.s_x, s_q: a.s_q },
                grad_clip: (a.grad_clip > 0.0).then_some(a.grad_clip),
                augmentation: AugmentationConfig {
                    resize,
                    crop: input,
                    brightness: a.brightness,
                    contrast: a.contrast,
                    saturation: a.saturation,
                },
                augment: !a.no_augment,
            };
            let model = C2fModel::new(&model_cfg, candle_core::DType::F32, a.seed)?;
            let loss = LossParams::new(cfg.balance, candle_core::DType::F32)?;
            let mut log = BufWriter::new(File::create(out.join("train.log"))?);
            let summary = train(
                &model,
                &loss,
                &ds,
                &sets,
                &cfg,
                TrainSink {
                    log: Some(&mut log),
                    checkpoint_dir: Some(out.clone()),
                },
            )?;
            let last = summary.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {} steps, final epoch loss {last:.5}; checkpoint {}",
                summary.steps.len(),
                summary.final_checkpoint.as_deref().unwrap_or(Path::new("-")).display()
            );
        }
        Command::Eval(a) => {
            let checkpoint = require(&a.checkpoint, "checkpoint")?;
            let manifest = require(&a.manifest, "manifest")?;
            let centroids_path = require(&a.centroids, "centroids")?;
            let split: Split = a.split.parse()?;
            let out = output_dir(&a.common, name);
            let (model, _, meta) = load_checkpoint(checkpoint)?;
            let input = model.config().backbone.input_height as u32;
            let resize = a.resize.unwrap_or(input);
            write_snapshot(
                name,
                matches,
                &out,
                &[("out", abs(&out)), ("resize", resize.to_string())],
            )?;
            let ds = load_dataset(manifest)?;
            let sets = read_centroids(centroids_path)?;
            warn_on_centroid_mismatch(&meta.centroid_hash, &sets)?;
            let opts = EvalOptions {
                split,
                batch_size: a.batch_size,
                augmentation: AugmentationConfig {
                    resize,
                    ..AugmentationConfig::identity(input)
                },
                residuals: !a.no_residuals,
            };
            let report = evaluate(&model, &ds, &sets, &opts)?;
            report.write(out.join("eval_report.txt"))?;
            print!("{}", report.to_text());
        }
        Command::Attend(a) => {
            let checkpoint = require(&a.checkpoint, "checkpoint")?;
            let manifest = require(&a.manifest, "manifest")?;
            let centroids_path = require(&a.centroids, "centroids")?;
            let split: Split = a.split.parse()?;
            let out = output_dir(&a.common, name);
            write_snapshot(name, matches, &out, &[("out", abs(&out))])?;
            let (model, _, meta) = load_checkpoint(checkpoint)?;
            let sets = read_centroids(centroids_path)?;
            warn_on_centroid_mismatch(&meta.centroid_hash, &sets)?;
            let table = CentroidTable::new(&sets)?;
            let ds = load_dataset(manifest)?.split(split);
            let images = attention_inputs(&model, &ds, a.limit)?;
            let summaries = export_attention(&model, &table, &images, &out)?;
            for s in &summaries {
                println!(
                    "{}: predicted scene {}, attention ranking {:?}",
                    s.name, s.predicted_scene, s.ranking
                );
            }
        }
        Command::Bench(a) => {
            let out = output_dir(&a.common, name);
            write_snapshot(name, matches, &out, &[("out", abs(&out))])?;
            let counts = a
                .scene_counts
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("--scene-counts: {e}")))?;
            let template = a.model.config(1, a.kx, a.kq)?;
            let rows = bench_scaling(
                &template,
                &counts,
                &BenchOptions {
                    trials: a.trials,
                    warmup: a.warmup,
                    batch_size: a.batch_size,
                    seed: a.seed,
                },
            )?;
            let csv = bench_to_csv(&rows);
            std::fs::write(out.join("bench.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn warn_on_centroid_mismatch(
    expected: &Option<String>,
    sets: &BTreeMap<usize, crate::clustering::CentroidSet>,
) -> Result<()> {
    if let Some(h) = expected {
        let table = CentroidTable::new(sets)?;
        if &table.fingerprint != h {
            log::warn!("centroid file differs from the one the checkpoint was trained with");
        }
    }
    Ok(())
}

fn attention_inputs(model: &C2fModel, ds: &Dataset, limit: usize) -> Result<Vec<(String, crate::data::ImageTensor)>> {
    let size = model.config().backbone.input_height as u32;
    let cfg = AugmentationConfig::identity(size);
    ds.samples
        .iter()
        .take(limit)
        .enumerate()
        .map(|(i, s)| {
            let stem = s
                .image
                .file_stem()
                .map(|n| n.to_string_lossy().replace([' ', '/', '\\'], "_"))
                .unwrap_or_else(|| format!("image{i}"));
            let img = image::open(&s.image)?.to_rgb8();
            Ok((stem, augment(&img, &cfg, AugmentMode::Test)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_values_precede_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "# comment\nkx = 3\nseed=9\n").unwrap();
        let argv = os(&["c2f", "cluster", "--config", cfg.to_str().unwrap(), "--kx", "5"]);
        let out = apply_config_file(argv).unwrap();
        let s: Vec<String> = out.iter().map(|a| a.to_string_lossy().to_string()).collect();
        assert_eq!(&s[..6], &["c2f", "cluster", "--kx", "3", "--seed", "9"]);
        let m = Cli::command().try_get_matches_from(&out).unwrap();
        let (_, sub) = m.subcommand().unwrap();
        assert_eq!(sub.get_one::<usize>("kx"), Some(&5));
        assert_eq!(sub.get_one::<u64>("seed"), Some(&9));
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "bogus=1\n").unwrap();
        let argv = os(&["c2f", "cluster", "--config", cfg.to_str().unwrap()]);
        assert!(matches!(apply_config_file(argv), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn boolean_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "no-residuals=true\n").unwrap();
        let argv = os(&["c2f", "eval", "--config", cfg.to_str().unwrap()]);
        let out = apply_config_file(argv).unwrap();
        assert!(out.contains(&OsString::from("--no-residuals")));
        std::fs::write(&cfg, "no-residuals=maybe\n").unwrap();
        let argv = os(&["c2f", "eval", "--config", cfg.to_str().unwrap()]);
        assert!(apply_config_file(argv).is_err());
    }

    #[test]
    fn every_subcommand_is_registered() {
        for sub in ["synth", "cluster", "train", "eval", "attend", "bench"] {
            assert!(known_flags(sub).is_some(), "{sub}");
        }
    }

    #[test]
    fn usage_error_exits_two() {
        assert_eq!(run(["c2f", "cluster", "--no-such-flag"]), 2);
        assert_eq!(run(["c2f", "frobnicate"]), 2);
    }

    #[test]
    fn missing_checkpoint_exits_one() {
        assert_eq!(run(["c2f", "eval", "--manifest", "m.txt"]), 1);
    }
}
