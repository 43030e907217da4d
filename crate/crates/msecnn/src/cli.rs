//! Command-line interface. Exit codes: 0 success, 1 user or data error,
//! 2 internal invariant violation.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use msecnn_core::audio::MelExtractor;
use msecnn_core::model::{build_model, count_flops, count_params, forward, Mode, ModelConfig, Variant};
use msecnn_core::train::gradient_check;
use msecnn_core::Checkpoint;

use crate::cache::{cache_build, thread_count, FeatureCache};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{FileConfig, ModelFile, Preset, RunConfig, TrainFile};
use crate::dataset::{
    default_manifest_path, parse_annotations, select_top_tags, split_by_part, DatasetManifest, Split,
};
use crate::driver::{evaluate, fit, load_split};
use crate::error::{Error, Result};
use crate::synth::{synth_generate, SynthConfig};
use crate::wav;

/// Gradient-check failure threshold.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "msecnn", version, about = "FCN-5 / MsE-CNN music auto-tagging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the dataset manifest and log-Mel feature cache from annotations.
    Extract(ExtractArgs),
    /// Train a model on a feature cache and write the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and print per-tag metrics.
    Eval(EvalArgs),
    /// Print the top-scoring tags for one WAV file.
    Tag(TagArgs),
    /// Print layer shapes, channel counts, parameter and MAC counts.
    Inspect(InspectArgs),
    /// Check analytic gradients against finite differences on tiny models.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic tagged WAV corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub audio_root: PathBuf,
    #[arg(long)]
    pub cache_out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Number of most frequent tags to keep (capped at the tag count).
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub top_k: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub cache: PathBuf,
    /// Defaults to `<cache>/manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_parser = seed_parser())]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct TagArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub top: u64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Repeat for several variants; both when omitted.
    #[arg(long)]
    pub variant: Vec<Variant>,
    #[arg(long, value_enum, default_value = "canonical")]
    pub preset: Preset,
    #[arg(long, default_value_t = 50)]
    pub tags: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0, value_parser = seed_parser())]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    /// One distinct cue per tag, at most 8.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=8))]
    pub tags: u64,
    #[arg(long, default_value_t = 0, value_parser = seed_parser())]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Only local-texture cues (at most 4 tags).
    #[arg(long)]
    pub texture_only: bool,
    #[arg(long, default_value_t = 0.4)]
    pub p_active: f64,
    /// Clip length; defaults to the preset front end's.
    #[arg(long)]
    pub clip_seconds: Option<f64>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
}

fn seed_parser() -> clap::builder::RangedU64ValueParser {
    // seeds are echoed as TOML integers
    clap::value_parser!(u64).range(..=i64::MAX as u64)
}

/// Parses `args` and runs the command, returning the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    write!(out, "{e}").ok();
                    0
                }
                _ => {
                    write!(err, "{}", e.render()).ok();
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            let mut src = std::error::Error::source(&e);
            let shown = e.to_string();
            while let Some(s) = src {
                let text = s.to_string();
                if !shown.contains(&text) {
                    writeln!(err, "  caused by: {text}").ok();
                }
                src = s.source();
            }
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Extract(a) => cmd_extract(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Tag(a) => cmd_tag(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

fn say(out: &mut dyn Write, text: impl AsRef<str>) -> Result<()> {
    out.write_all(text.as_ref().as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn cmd_extract(a: ExtractArgs, out: &mut dyn Write) -> Result<i32> {
    let file = FileConfig::load(a.config.as_deref())?.merge(FileConfig {
        preset: a.preset,
        ..Default::default()
    });
    let frontend = file.resolve_frontend()?;
    let threads = thread_count()?;
    let mut rc = RunConfig::new("extract")
        .path("annotations", &a.annotations)
        .path("audio_root", &a.audio_root)
        .path("cache_out", &a.cache_out)
        .option("top_k", a.top_k as i64)
        .option("threads", threads as i64);
    rc.frontend = Some(&frontend);
    say(out, rc.render())?;

    let table = parse_annotations(&a.annotations)?;
    let k = (a.top_k as usize).min(table.tags.len());
    let selection = select_top_tags(&table, k)?;
    let manifest = split_by_part(selection, frontend.clone())?;
    for line in &manifest.log {
        say(out, format!("note: {line}\n"))?;
    }
    let summary = cache_build(&manifest, &a.audio_root, &a.cache_out, threads)?;
    let counts = manifest.split_counts();
    let n = |s| counts.get(&s).copied().unwrap_or(0);
    say(
        out,
        format!(
            "clips {} (train {}, val {}, test {}), tags {}\ncache {} records, {} bytes\nmanifest {}\n",
            manifest.clips.len(),
            n(Split::Train),
            n(Split::Val),
            n(Split::Test),
            manifest.tags.len(),
            summary.records,
            summary.bytes,
            default_manifest_path(&a.cache_out).display()
        ),
    )?;
    Ok(0)
}

fn load_manifest(cache: &Path, manifest: Option<&Path>) -> Result<(PathBuf, DatasetManifest)> {
    let path = manifest.map_or_else(|| default_manifest_path(cache), Path::to_path_buf);
    let m = DatasetManifest::load(&path)?;
    Ok((path, m))
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let (manifest_path, manifest) = load_manifest(&a.cache, a.manifest.as_deref())?;
    let flags = FileConfig {
        preset: a.preset,
        model: ModelFile {
            variant: a.variant,
            dropout_rate: a.dropout,
            ..Default::default()
        },
        train: TrainFile {
            seed: a.seed,
            max_epochs: a.epochs,
            batch_size: a.batch_size,
            learning_rate: a.lr,
            early_stop_patience: a.patience,
            ..Default::default()
        },
        ..Default::default()
    };
    let file = FileConfig::load(a.config.as_deref())?.merge(flags);
    file.check_frontend_against(&manifest.frontend)?;
    let model = file.resolve_model(&manifest.frontend, manifest.tags.len())?;
    let train_cfg = file.resolve_train()?;
    let mut rc = RunConfig::new("train")
        .path("cache", &a.cache)
        .path("manifest", &manifest_path)
        .path("out", &a.out);
    rc.frontend = Some(&manifest.frontend);
    rc.model = Some(&model);
    rc.train = Some(&train_cfg);
    say(out, rc.render())?;

    let cache = FeatureCache::new(&a.cache, manifest.frontend.clone());
    let train = load_split(&cache, &manifest, Split::Train)?;
    let val = load_split(&cache, &manifest, Split::Val)?;
    say(out, format!("train clips {}, val clips {}\n", train.len(), val.len()))?;
    let state = build_model(&model, train_cfg.seed)?;
    let outcome = fit(state, &model, &train_cfg, &train, &val, &manifest.tags, out)?;
    let final_loss = outcome.final_train_loss();
    let ck = Checkpoint {
        config: model,
        frontend: manifest.frontend.clone(),
        tags: manifest.tags.clone(),
        state: outcome.state,
    };
    save_checkpoint(&a.out, &ck)?;
    if let Some(loss) = final_loss {
        say(out, format!("final train_loss {loss:.6}\n"))?;
    }
    say(out, format!("checkpoint {}\n", a.out.display()))?;
    Ok(0)
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let ck = load_checkpoint(&a.ckpt)?;
    let (manifest_path, manifest) = load_manifest(&a.cache, a.manifest.as_deref())?;
    let mut rc = RunConfig::new("eval")
        .path("ckpt", &a.ckpt)
        .path("cache", &a.cache)
        .path("manifest", &manifest_path)
        .option("split", a.split.to_string());
    rc.frontend = Some(&ck.frontend);
    rc.model = Some(&ck.config);
    say(out, rc.render())?;

    if ck.frontend != manifest.frontend {
        return Err(Error::Data(
            "checkpoint and cache were built with different front ends".into(),
        ));
    }
    if ck.config.n_tags != manifest.tags.len() || (!ck.tags.is_empty() && ck.tags != manifest.tags) {
        return Err(Error::Data(
            "checkpoint tag vocabulary differs from the manifest's".into(),
        ));
    }
    let cache = FeatureCache::new(&a.cache, manifest.frontend.clone());
    let data = load_split(&cache, &manifest, a.split)?;
    let report = evaluate(&ck.state, &ck.config, &data, &manifest.tags)?;
    say(out, format!("# split {} clips {}\n", a.split, data.len()))?;
    say(out, report.to_tsv())?;
    Ok(0)
}

fn cmd_tag(a: TagArgs, out: &mut dyn Write) -> Result<i32> {
    let ck = load_checkpoint(&a.ckpt)?;
    let mut rc = RunConfig::new("tag")
        .path("ckpt", &a.ckpt)
        .path("wav", &a.wav)
        .option("top", a.top as i64);
    rc.frontend = Some(&ck.frontend);
    rc.model = Some(&ck.config);
    say(out, rc.render())?;

    let clip = wav::read_wav(&a.wav)?;
    if clip.sample_rate != ck.frontend.sample_rate {
        return Err(Error::Audio {
            path: a.wav.clone(),
            msg: format!(
                "sample rate {} Hz, model expects {} Hz (resample first)",
                clip.sample_rate, ck.frontend.sample_rate
            ),
        });
    }
    let spec = MelExtractor::new(&ck.frontend)?.extract(&clip, &a.wav.display().to_string())?;
    let shape = spec.values.shape().to_vec();
    let x = spec.values.reshape(&[1, 1, shape[0], shape[1]])?;
    let (scores, _) = forward(&ck.state, &ck.config, &x, Mode::Infer)?;
    let names: Vec<String> = if ck.tags.is_empty() {
        (0..ck.config.n_tags).map(|i| format!("tag{i}")).collect()
    } else {
        ck.tags.clone()
    };
    let mut order: Vec<usize> = (0..names.len()).collect();
    // stable: equal scores keep tag order
    order.sort_by(|&i, &j| scores.data()[j].total_cmp(&scores.data()[i]));
    for &i in order.iter().take(a.top as usize) {
        say(out, format!("{}\t{:.6}\n", names[i], scores.data()[i]))?;
    }
    Ok(0)
}

fn chain_text(items: impl IntoIterator<Item = String>) -> String {
    items.into_iter().collect::<Vec<_>>().join(",")
}

fn cmd_inspect(a: InspectArgs, out: &mut dyn Write) -> Result<i32> {
    let variants = if a.variant.is_empty() {
        vec![Variant::Fcn5, Variant::MsECnn]
    } else {
        a.variant.clone()
    };
    let rc = RunConfig::new("inspect")
        .option("preset", format!("{:?}", a.preset).to_lowercase())
        .option("tags", a.tags as i64)
        .option("variants", chain_text(variants.iter().map(|v| v.to_string())));
    say(out, rc.render())?;

    let mut totals = Vec::new();
    for &v in &variants {
        let cfg = a.preset.model(v, a.tags);
        cfg.validate()?;
        let report = count_flops(&cfg);
        let (c, h, w) = cfg.input_shape;
        let mut text = format!("== {v} ==\ninput {c}x{h}x{w}\nlevel\tin_hw\tin_ch\tconv_ch\tout_ch\tout_hw\tmacs\n");
        let chain = cfg.spatial_chain();
        let out_ch = cfg.level_out_channels();
        for (k, lc) in report.levels.iter().enumerate() {
            text += &format!(
                "{}\t{}x{}\t{}\t{}\t{}\t{}x{}\t{}\n",
                k + 1,
                lc.height,
                lc.width,
                lc.in_channels,
                lc.out_channels,
                out_ch[k],
                chain[k].0,
                chain[k].1,
                lc.macs
            );
        }
        text += &format!(
            "spatial chain {}\nchannels {}\nfinal feature width {}\nparams {}\ndense macs {}\ntotal macs {}\n",
            chain_text(chain.iter().map(|(h, w)| format!("({h},{w})"))),
            chain_text(out_ch.iter().map(|c| c.to_string())),
            cfg.feature_width(),
            count_params(&cfg),
            report.dense_macs,
            report.total_macs
        );
        say(out, text)?;
        totals.push((v, report.total_macs, cfg.feature_width()));
    }
    let find = |v| totals.iter().find(|t| t.0 == v);
    if let (Some(f), Some(m)) = (find(Variant::Fcn5), find(Variant::MsECnn)) {
        say(
            out,
            format!(
                "feature width ratio msecnn/fcn5 {:.2} ({}/{})\nmac ratio msecnn/fcn5 {:.4}\n",
                m.2 as f64 / f.2 as f64,
                m.2,
                f.2,
                m.1 as f64 / f.1 as f64
            ),
        )?;
    }
    say(
        out,
        "# macs count conv and dense multiply-accumulates; pooling, batch norm and activations are excluded\n",
    )?;
    Ok(0)
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let rc = RunConfig::new("gradcheck")
        .option("model", "tiny")
        .option("precision", "f64")
        .option("seed", a.seed as i64)
        .option("eps", a.eps)
        .option("tolerance", GRADCHECK_TOLERANCE);
    say(out, rc.render())?;
    let mut worst: f64 = 0.0;
    for v in [Variant::Fcn5, Variant::MsECnn] {
        let cfg = ModelConfig::tiny(v);
        let r = gradient_check(&cfg, a.seed, a.eps)?;
        say(
            out,
            format!(
                "{v}\tmax_rel_error {:.3e}\tworst {}\tchecked {}\n",
                r.max_rel_error, r.worst_param, r.n_checked
            ),
        )?;
        worst = worst.max(r.max_rel_error);
    }
    say(out, format!("max_rel_error {worst:.3e}\n"))?;
    if worst < GRADCHECK_TOLERANCE {
        Ok(0)
    } else {
        say(out, format!("FAILED: above tolerance {GRADCHECK_TOLERANCE:e}\n"))?;
        Ok(1)
    }
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let frontend = a.preset.frontend();
    let cfg = SynthConfig {
        n_clips: a.n,
        n_tags: a.tags as usize,
        seed: a.seed,
        sample_rate: frontend.sample_rate,
        clip_seconds: a.clip_seconds.unwrap_or(frontend.clip_seconds),
        p_active: a.p_active,
        texture_only: a.texture_only,
    };
    let rc = RunConfig::new("synth")
        .path("out", &a.out)
        .option("n_clips", cfg.n_clips as i64)
        .option("n_tags", cfg.n_tags as i64)
        .option("seed", cfg.seed as i64)
        .option("sample_rate", cfg.sample_rate as i64)
        .option("clip_seconds", cfg.clip_seconds)
        .option("p_active", cfg.p_active)
        .option("texture_only", cfg.texture_only);
    say(out, rc.render())?;
    let summary = synth_generate(&cfg, &a.out)?;
    say(
        out,
        format!(
            "clips {}\ntags {}\npositives {}\nannotations {}\n",
            cfg.n_clips,
            summary.tags.join(","),
            chain_text(summary.positives.iter().map(|p| p.to_string())),
            summary.annotations.display()
        ),
    )?;
    Ok(0)
}
