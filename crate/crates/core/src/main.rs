use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adscreen::container;
use adscreen::eval::render_subgroups;
use adscreen::fusion::{format_weight, read_predictions, render_sweep, weight_sweep, write_predictions};
use adscreen::pipeline::{
    config::KEYS, cross_validate, features_store, fit_audio, fit_text, ingest_manifest, load_audio_model,
    load_corpus, load_text_model, predict_subjects, save_audio_model, save_text_model, synth_corpus, write_artifact,
    write_sidecar, Corpus, RunConfig,
};
use adscreen::{Error, Result};

#[derive(Parser)]
#[command(name = "adscreen", version, about = "Dementia screening from speech recordings and transcripts")]
struct Cli {
    /// Key-value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs serially
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Audio patch length: short or long
    #[arg(long, global = true)]
    segment: Option<String>,
    /// Transcript column: manual or asr
    #[arg(long, global = true)]
    source: Option<String>,
    /// Fusion weights, comma separated
    #[arg(long, global = true)]
    weights: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Any config key, as KEY=VALUE (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract log-mel spectrograms for every manifest subject
    Features,
    /// Train m-VGGish on all manifest subjects
    TrainAudio,
    /// Train the transcript classifier on all manifest subjects
    TrainText,
    /// Per-subject p_a / p_t CSV from trained models
    Predict,
    /// Weight-sweep table from a predictions CSV
    Fuse,
    /// Full cross-validation with report, ROC points, subgroups and highlights
    Evaluate,
    /// Generate a synthetic corpus
    Synth {
        #[arg(long, default_value_t = 80)]
        n: usize,
    },
    /// Print the resolved configuration with key descriptions
    Config,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut c = RunConfig::resolve(cli.config.as_deref())?;
    let flags: [(&str, Option<String>); 7] = [
        ("seed", cli.seed.map(|v| v.to_string())),
        ("jobs", cli.jobs.map(|v| v.to_string())),
        ("segment", cli.segment.clone()),
        ("source", cli.source.clone()),
        ("weights", cli.weights.clone()),
        ("out", cli.out.as_ref().map(|p| p.display().to_string())),
        ("manifest", cli.manifest.as_ref().map(|p| p.display().to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            c.set(k, &v)?;
        }
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        c.set(k, v)?;
    }
    Ok(c)
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn corpus(cfg: &RunConfig) -> Result<Corpus> {
    let manifest = ingest_manifest(&cfg.require_path("manifest")?)?;
    let cached = match cfg.path("features") {
        Some(p) => Some(container::load::<f32>(&p)?),
        None => None,
    };
    load_corpus(&manifest, cfg, cached.as_ref())
}

fn sidecars(files: &[PathBuf], cfg: &RunConfig) -> Result<()> {
    files.iter().try_for_each(|f| write_sidecar(f, cfg))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.usize("jobs")?)
        .build_global()
        .map_err(|e| Error::Config(format!("jobs: {e}")))?;
    log::info!("seed {} config hash {}", cfg.get("seed"), cfg.hash());
    for line in cfg.canonical().lines() {
        log::debug!("  {line}");
    }
    let out = cfg.out_dir();
    let seed = cfg.uint("seed")?;
    match cli.command {
        Command::Config => {
            for (k, _, doc) in KEYS {
                println!("{k} = {}    # {doc}", cfg.get(k));
            }
        }
        Command::Synth { n } => {
            mkdir(&out)?;
            let m = synth_corpus(n, seed, &out)?;
            write_sidecar(&out.join("manifest.csv"), &cfg)?;
            println!("wrote {} subjects to {}", m.records.len(), out.join("manifest.csv").display());
        }
        Command::Features => {
            let c = corpus(&cfg)?;
            let path = cfg.path("features").unwrap_or_else(|| out.join("features.weights"));
            if let Some(d) = path.parent() {
                mkdir(d)?;
            }
            container::save(&features_store(&c)?, &path)?;
            write_sidecar(&path, &cfg)?;
            println!("cached spectrograms for {} subjects in {}", c.subjects.len(), path.display());
        }
        Command::TrainAudio => {
            let c = corpus(&cfg)?;
            let idx: Vec<usize> = (0..c.subjects.len()).filter(|&i| c.subjects[i].spectrogram.is_some()).collect();
            let (model, history) = fit_audio(&c, &idx, &cfg, seed)?;
            let dir = cfg.model_dir();
            let ids = idx.iter().map(|&i| c.subjects[i].id().to_string()).collect();
            let mut files = save_audio_model(&dir, &model, ids)?;
            let h = dir.join("audio_history.csv");
            history.write_csv(&h)?;
            files.push(h);
            sidecars(&files, &cfg)?;
            println!("audio model ({} parameters) saved to {}", model.parameter_count(), dir.display());
        }
        Command::TrainText => {
            let c = corpus(&cfg)?;
            let idx: Vec<usize> = (0..c.subjects.len()).filter(|&i| c.subjects[i].tokens.is_some()).collect();
            let (model, history) = fit_text(&c, &idx, &cfg, seed)?;
            let dir = cfg.model_dir();
            let ids = idx.iter().map(|&i| c.subjects[i].id().to_string()).collect();
            let mut files = save_text_model(&dir, &model, ids)?;
            let h = dir.join("text_history.csv");
            history.write_csv(&h)?;
            files.push(h);
            sidecars(&files, &cfg)?;
            println!("text model saved to {}", dir.join("text").display());
        }
        Command::Predict => {
            let c = corpus(&cfg)?;
            let dir = cfg.model_dir();
            let audio = dir.join("audio.json").exists().then(|| load_audio_model(&dir)).transpose()?;
            let text = dir.join("text/meta.json").exists().then(|| load_text_model(&dir, &cfg)).transpose()?;
            if audio.is_none() && text.is_none() {
                return Err(Error::Config(format!("no trained model under {} (key \"model_dir\")", dir.display())));
            }
            for trained in [audio.as_ref().map(|a| &a.1), text.as_ref().map(|t| &t.1)].into_iter().flatten() {
                let seen = c.subjects.iter().filter(|s| trained.iter().any(|t| t == s.id())).count();
                if seen > 0 {
                    log::warn!("{seen} predicted subjects were part of the training set");
                }
            }
            let idx: Vec<usize> = (0..c.subjects.len()).collect();
            let (preds, highlights) =
                predict_subjects(&c, &idx, audio.as_ref().map(|a| &a.0), text.as_ref().map(|t| &t.0), &cfg)?;
            mkdir(&out)?;
            let p = out.join("predictions.csv");
            write_predictions(&p, &preds)?;
            write_sidecar(&p, &cfg)?;
            write_highlights(&out, &highlights, &cfg)?;
            println!("wrote {} predictions to {}", preds.len(), p.display());
        }
        Command::Fuse => {
            let p = cfg.path("predictions").unwrap_or_else(|| out.join("predictions.csv"));
            let preds = read_predictions(&p)?;
            let rows = weight_sweep(&preds, &cfg.weights()?, cfg.float("threshold")?)?;
            let table = render_sweep(&rows);
            mkdir(&out)?;
            write_artifact(&out.join("fusion.txt"), table.as_bytes(), &cfg)?;
            write_artifact(&out.join("fusion.json"), serde_json::to_string_pretty(&rows)?.as_bytes(), &cfg)?;
            print!("{table}");
        }
        Command::Evaluate => {
            let c = corpus(&cfg)?;
            let cv = cross_validate(&c, &cfg)?;
            mkdir(&out)?;
            let files = [out.join("report.json"), out.join("roc.csv"), out.join("predictions.csv")];
            cv.report.save_json(&files[0])?;
            cv.report.write_roc_csv(&files[1])?;
            write_predictions(&files[2], &cv.predictions)?;
            sidecars(&files, &cfg)?;
            let rows = weight_sweep(&cv.predictions, &cfg.weights()?, cfg.float("threshold")?)?;
            let table = render_sweep(&rows);
            write_artifact(&out.join("fusion.txt"), table.as_bytes(), &cfg)?;
            let sub = render_subgroups(&cv.report.subgroups);
            write_artifact(&out.join("subgroups.txt"), sub.as_bytes(), &cfg)?;
            write_artifact(&out.join("histories.json"), serde_json::to_string_pretty(&cv.histories)?.as_bytes(), &cfg)?;
            write_highlights(&out, &cv.highlights, &cfg)?;
            print!("{table}\nbest w = {}\n\n{sub}", format_weight(cv.report.best_weight));
        }
    }
    Ok(())
}

fn write_highlights(out: &Path, highlights: &[(String, String)], cfg: &RunConfig) -> Result<()> {
    if highlights.is_empty() {
        return Ok(());
    }
    let dir = out.join("highlights");
    mkdir(&dir)?;
    for (id, text) in highlights {
        write_artifact(&dir.join(format!("{id}.txt")), text.as_bytes(), cfg)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
