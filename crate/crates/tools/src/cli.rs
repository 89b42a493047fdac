//! Command-line front end. Every subcommand is a thin wrapper over the
//! library calls it names; the binary only maps errors to exit codes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use csm_core::{score, Cem, CsmModel, Dm, FeatureSeries};
use serde::{Deserialize, Serialize};

use crate::audio::load_waveform;
use crate::batch::{extract_database, load_model, save_model};
use crate::calibration::database::ListeningTestDatabase;
use crate::calibration::{calibrate, CalibrationConfig, CalibrationReport};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvaluationReport, DEFAULT_BOOTSTRAP_SEED};
use crate::features::cache::{write_cache, CacheRecord};
use crate::features::FeatureExtractor;
use crate::frontend::FrontEndConfig;
use crate::pipeline::{preprocess, PipelineConfig};
use crate::synth::{synth_database, DatabaseSpec};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "CSM_CONFIG";

/// File-level settings. Command-line flags override these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub frontend: FrontEndConfig,
    pub calibration: CalibrationConfig,
    pub synth: DatabaseSpec,
    pub bootstrap_seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineConfig::default(),
            frontend: FrontEndConfig::default(),
            calibration: CalibrationConfig::default(),
            synth: DatabaseSpec::default(),
            bootstrap_seed: DEFAULT_BOOTSTRAP_SEED,
            jobs: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn extractor(&self) -> Result<FeatureExtractor> {
        self.frontend.validate()?;
        Ok(FeatureExtractor::new(self.frontend.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "csm", version, about = "Full-reference audio quality measurement")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-item work (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Report format on standard output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PipelineFlags {
    /// Playback level both signals are scaled to, dB SPL.
    #[arg(long)]
    pub target_spl: Option<f64>,
    /// Largest delay searched during alignment, samples.
    #[arg(long)]
    pub max_lag: Option<usize>,
    /// Summed absolute amplitude below which a window counts as silent.
    #[arg(long)]
    pub silence_threshold: Option<f64>,
    /// Silence window length, samples.
    #[arg(long)]
    pub silence_run: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one REF/SUT pair.
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        sut: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Write the per-frame quality series as CSV.
        #[arg(long)]
        series: Option<PathBuf>,
        /// Write excitation patterns as CSV into this directory.
        #[arg(long)]
        dump_internal: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Score every item of a manifest.
    BatchScore {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// CSV output (standard output when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Fit a model on a manifest with `bf` and `interaction` splits.
    Calibrate {
        #[arg(long)]
        manifest: PathBuf,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        /// Directory for the candidate and coefficient tables.
        #[arg(long)]
        report_dir: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Compare model scores with the subjective scores of a manifest.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for report, residual table and scatter data.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        bootstrap_seed: Option<u64>,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Generate a synthetic listening-test database.
    SynthDb {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        signals: Option<usize>,
        #[arg(long)]
        treatments: Option<usize>,
        /// Signal duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        bf_signals: Option<usize>,
        /// Per-listener score standard deviation.
        #[arg(long)]
        listener_sigma: Option<f64>,
    },
    /// Print a model's terms and parameter count.
    InspectModel {
        #[arg(long)]
        model: PathBuf,
    },
    /// Extract per-frame DMs and CEMs of one pair.
    DumpFeatures {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        sut: PathBuf,
        /// CSV output (standard output when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the series as a JSON-lines feature cache.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        dump_internal: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
}

impl PipelineFlags {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.target_spl {
            cfg.target_spl = v;
        }
        if let Some(v) = self.max_lag {
            cfg.max_lag = v;
        }
        if let Some(v) = self.silence_threshold {
            cfg.silence_threshold = v;
        }
        if let Some(v) = self.silence_run {
            cfg.silence_run = v;
        }
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Effective configuration after file and flags.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    match &cli.command {
        Command::Score { pipeline, .. }
        | Command::BatchScore { pipeline, .. }
        | Command::Calibrate { pipeline, .. }
        | Command::DumpFeatures { pipeline, .. } => pipeline.apply(&mut cfg.pipeline),
        Command::Evaluate {
            pipeline,
            bootstrap_seed,
            ..
        } => {
            pipeline.apply(&mut cfg.pipeline);
            if let Some(s) = bootstrap_seed {
                cfg.bootstrap_seed = *s;
            }
        }
        Command::SynthDb {
            seed,
            signals,
            treatments,
            duration,
            bf_signals,
            listener_sigma,
            ..
        } => {
            let s = &mut cfg.synth;
            s.seed = seed.unwrap_or(s.seed);
            s.signals = signals.unwrap_or(s.signals);
            s.treatments = treatments.unwrap_or(s.treatments);
            s.duration = duration.unwrap_or(s.duration);
            s.bf_signals = bf_signals.unwrap_or(s.bf_signals);
            s.latent.listener_sigma = listener_sigma.unwrap_or(s.latent.listener_sigma);
        }
        Command::InspectModel { .. } => {}
    }
    Ok(cfg)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = effective_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut buf = Vec::new();
    let res = pool.install(|| dispatch(cli, &cfg, &mut buf));
    out.write_all(&buf).map_err(io_out)?;
    res
}

fn io_out(e: std::io::Error) -> Error {
    Error::io(Path::new("<stdout>"), e)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn check_hash(model: &CsmModel, extractor: &FeatureExtractor) -> Result<()> {
    let h = extractor.config_hash();
    if model.config_hash != h {
        return Err(Error::Config(format!(
            "model was calibrated with front-end config {} but the current config is {h}",
            model.config_hash
        )));
    }
    Ok(())
}

fn dispatch(cli: &Cli, cfg: &RunConfig, out: &mut Vec<u8>) -> Result<()> {
    match &cli.command {
        Command::Score {
            reference,
            sut,
            model,
            series,
            dump_internal,
            ..
        } => {
            let model = load_model(model)?;
            let ex = cfg.extractor()?;
            check_hash(&model, &ex)?;
            let pair = preprocess(&load_waveform(reference)?, &load_waveform(sut)?, &cfg.pipeline)?;
            let (features, internals) = ex.extract_detailed(&pair)?;
            if let Some(dir) = dump_internal {
                dump_internals(dir, &internals)?;
            }
            let s = score(&features, &model)?;
            if let Some(p) = series {
                let mut text = String::from("frame,time_s,qm\n");
                for (n, q) in s.qm_series.iter().enumerate() {
                    let _ = writeln!(text, "{n},{},{q}", n as f64 * features.hop_seconds);
                }
                write_file(p, &text)?;
            }
            let means = s.terms.column_means();
            match cli.format {
                Format::Text => {
                    let mut t = String::new();
                    let _ = writeln!(t, "score {:.4}", s.score);
                    let _ = writeln!(t, "unclamped {:.4}", s.unclamped);
                    let _ = writeln!(t, "frames {}", features.len());
                    for (id, m) in s.terms.ids.iter().zip(&means) {
                        let _ = writeln!(t, "term {id} {m:.4}");
                    }
                    for dm in Dm::ALL {
                        let _ = writeln!(t, "dm {} {:.6}", dm.name(), features.item_mean_dm[dm.index()]);
                    }
                    for c in Cem::ALL {
                        let _ = writeln!(t, "cem {} {:.6}", c.name(), features.item_mean_cem[c.index()]);
                    }
                    out.write_all(t.as_bytes()).map_err(io_out)?;
                }
                Format::Csv => {
                    let mut t = String::from("key,value\n");
                    let _ = writeln!(t, "score,{}", s.score);
                    let _ = writeln!(t, "unclamped,{}", s.unclamped);
                    for (id, m) in s.terms.ids.iter().zip(&means) {
                        let _ = writeln!(t, "{id},{m}");
                    }
                    out.write_all(t.as_bytes()).map_err(io_out)?;
                }
            }
            Ok(())
        }
        Command::BatchScore { manifest, model, out: path, .. } => {
            let model = load_model(model)?;
            let ex = cfg.extractor()?;
            check_hash(&model, &ex)?;
            let db = ListeningTestDatabase::load(manifest)?;
            let items = extract_database(&db, &cfg.pipeline, &ex)?;
            let scores = crate::evaluation::score_items(&model, &items)?;
            let mut t = String::from("signal_id,treatment_id,score,subjective\n");
            for (it, s) in items.iter().zip(&scores) {
                let _ = writeln!(t, "{},{},{s},{}", it.signal_id, it.treatment_id, it.score);
            }
            match path {
                Some(p) => write_file(p, &t),
                None => out.write_all(t.as_bytes()).map_err(io_out),
            }
        }
        Command::Calibrate {
            manifest,
            out: model_path,
            report_dir,
            ..
        } => {
            let ex = cfg.extractor()?;
            let db = ListeningTestDatabase::load(manifest)?;
            let items = extract_database(&db, &cfg.pipeline, &ex)?;
            let mut result = calibrate(&items, &cfg.calibration)?;
            record_config(&mut result.model, cfg);
            save_model(&result.model, model_path)?;
            if let Some(dir) = report_dir {
                write_calibration_report(dir, &result.report, cfg)?;
            }
            let text = match cli.format {
                Format::Text => calibration_text(&result.report, &result.model),
                Format::Csv => coefficient_csv(&result.report),
            };
            out.write_all(text.as_bytes()).map_err(io_out)
        }
        Command::Evaluate {
            model, manifest, out_dir, ..
        } => {
            let model = load_model(model)?;
            let ex = cfg.extractor()?;
            check_hash(&model, &ex)?;
            let db = ListeningTestDatabase::load(manifest)?;
            let items = extract_database(&db, &cfg.pipeline, &ex)?;
            let report = evaluate(&model, &items, cfg.bootstrap_seed)?;
            if let Some(dir) = out_dir {
                write_evaluation_report(dir, &report, cfg)?;
            }
            let text = match cli.format {
                Format::Text => evaluation_text(&report),
                Format::Csv => residual_csv(&report),
            };
            out.write_all(text.as_bytes()).map_err(io_out)
        }
        Command::SynthDb { out: dir, .. } => {
            let db = synth_database(&cfg.synth)?;
            let manifest = db.write(dir)?;
            write_file(&dir.join("config.toml"), &cfg.to_toml())?;
            writeln!(out, "wrote {} items to {}", db.items.len(), manifest.display()).map_err(io_out)
        }
        Command::InspectModel { model } => {
            let model = load_model(model)?;
            let c = model.count_parameters();
            let mut t = String::new();
            let _ = writeln!(t, "format {}", model.format_version);
            let _ = writeln!(t, "config_hash {}", model.config_hash);
            let _ = writeln!(t, "description {}", model.provenance.description);
            for term in &model.terms {
                let _ = writeln!(
                    t,
                    "{} {} coefficient {} z_mean {} z_std {}",
                    term.id,
                    term.expression(),
                    term.coefficient,
                    term.z_mean,
                    term.z_std
                );
            }
            for d in &model.dpws {
                let _ = writeln!(t, "{} {}", d.id, serde_json::to_string(&d.factors).expect("serializes"));
            }
            let _ = writeln!(
                t,
                "parameters total {} (basis functions {}, dpws {}, coefficients {}, normalizers {})",
                c.total, c.basis_functions, c.dpws, c.coefficients, c.normalizers
            );
            out.write_all(t.as_bytes()).map_err(io_out)
        }
        Command::DumpFeatures {
            reference,
            sut,
            out: path,
            cache,
            dump_internal,
            ..
        } => {
            let ex = cfg.extractor()?;
            let pair = preprocess(&load_waveform(reference)?, &load_waveform(sut)?, &cfg.pipeline)?;
            let (features, internals) = ex.extract_detailed(&pair)?;
            if let Some(dir) = dump_internal {
                dump_internals(dir, &internals)?;
            }
            if let Some(p) = cache {
                let id = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                write_cache(
                    p,
                    &[CacheRecord {
                        signal_id: id(reference),
                        treatment_id: id(sut),
                        features: features.clone(),
                    }],
                )?;
            }
            let t = feature_csv(&features);
            match path {
                Some(p) => write_file(p, &t),
                None => out.write_all(t.as_bytes()).map_err(io_out),
            }
        }
    }
}

/// Stores the effective run configuration in the model provenance.
fn record_config(model: &mut CsmModel, cfg: &RunConfig) {
    let s = &mut model.provenance.settings;
    s.insert("pipeline".into(), serde_json::to_string(&cfg.pipeline).expect("serializes"));
    s.insert("frontend".into(), serde_json::to_string(&cfg.frontend).expect("serializes"));
    s.insert("calibration".into(), serde_json::to_string(&cfg.calibration).expect("serializes"));
}

pub fn feature_csv(f: &FeatureSeries) -> String {
    let mut t = String::from("frame,time_s");
    for dm in Dm::ALL {
        t.push(',');
        t.push_str(dm.name());
    }
    for c in Cem::ALL {
        t.push(',');
        t.push_str(c.name());
    }
    t.push('\n');
    for (n, (d, c)) in f.dm.iter().zip(&f.cem).enumerate() {
        let _ = write!(t, "{n},{}", n as f64 * f.hop_seconds);
        for v in d.iter().chain(c.iter()) {
            let _ = write!(t, ",{v}");
        }
        t.push('\n');
    }
    t
}

fn dump_internals(dir: &Path, internals: &crate::features::Internals) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, patterns) in [("ref", &internals.reference), ("sut", &internals.sut)] {
        for (ch, p) in patterns.iter().enumerate() {
            let path = dir.join(format!("excitation_{name}_ch{ch}.csv"));
            let mut buf = Vec::new();
            p.write_csv(&mut buf).map_err(|e| Error::io(&path, e))?;
            std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct WithConfig<'a, T: Serialize> {
    config: &'a RunConfig,
    #[serde(flatten)]
    report: &'a T,
}

fn calibration_text(r: &CalibrationReport, m: &CsmModel) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "config_hash {}", r.config_hash);
    let _ = writeln!(
        t,
        "items bf {} interaction {} (signals {})",
        r.bf_items, r.interaction_items, r.interaction_signals
    );
    let _ = writeln!(t, "candidates");
    for c in &r.candidates {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(
            t,
            "  {:6} {:10} {:13} c_before {:>8} c_after {:>8} signed {:>8} {}",
            c.id,
            c.cem,
            c.dm,
            f(c.c_before),
            f(c.c_after),
            f(c.signed_c),
            c.status
        );
    }
    let _ = writeln!(t, "coefficients (p threshold {:.3e})", r.p_threshold);
    for c in &r.coefficients {
        let p = c.p_value.map_or("-".to_string(), |p| format!("{p:.3e}"));
        let _ = writeln!(t, "  {:4} {:28} {:>10.4} p {}", c.id, c.expression, c.coefficient, p);
    }
    let _ = writeln!(
        t,
        "fit r {:.4} rmse {:.4} adjusted_r2 {:.4} n {}",
        r.fit.r, r.fit.rmse, r.fit.adjusted_r2, r.fit.n_items
    );
    let _ = writeln!(t, "parameters {}", m.count_parameters().total);
    for w in &r.warnings {
        let _ = writeln!(t, "warning {w}");
    }
    t
}

fn coefficient_csv(r: &CalibrationReport) -> String {
    let mut t = String::from("id,expression,coefficient,z_mean,z_std,p_value\n");
    for c in &r.coefficients {
        let p = c.p_value.map_or(String::new(), |p| p.to_string());
        let _ = writeln!(t, "{},{},{},{},{},{p}", c.id, c.expression, c.coefficient, c.z_mean, c.z_std);
    }
    t
}

fn candidate_csv(r: &CalibrationReport) -> String {
    let mut t = String::from("id,cem,dm,c_before,c_after,signed_c,inverted,status\n");
    let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for c in &r.candidates {
        let _ = writeln!(
            t,
            "{},{},{},{},{},{},{},{}",
            c.id,
            c.cem,
            c.dm,
            f(c.c_before),
            f(c.c_after),
            f(c.signed_c),
            c.inverted.map_or(String::new(), |b| b.to_string()),
            c.status
        );
    }
    t
}

fn write_calibration_report(dir: &Path, r: &CalibrationReport, cfg: &RunConfig) -> Result<()> {
    write_file(&dir.join("candidates.csv"), &candidate_csv(r))?;
    write_file(&dir.join("coefficients.csv"), &coefficient_csv(r))?;
    let json = serde_json::to_string_pretty(&WithConfig { config: cfg, report: r }).expect("serializes");
    write_file(&dir.join("calibration_report.json"), &(json + "\n"))
}

fn evaluation_text(r: &EvaluationReport) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "items {}", r.n_items);
    let _ = writeln!(t, "r {:.6}", r.r);
    let _ = writeln!(
        t,
        "r_ci95 {:.6} {:.6} (bootstrap {} resamples, seed {})",
        r.r_ci[0], r.r_ci[1], r.bootstrap_resamples, r.bootstrap_seed
    );
    let _ = writeln!(t, "rmse {:.6}", r.rmse);
    let _ = writeln!(t, "mapped_r {:.6}", r.mapped_r);
    let _ = writeln!(t, "mapped_rmse {:.6}", r.mapped_rmse);
    let _ = writeln!(t, "mapping {:?}", r.mapping.coef);
    let _ = writeln!(t, "outliers {}", r.outliers);
    t
}

fn residual_csv(r: &EvaluationReport) -> String {
    let mut t = String::from("signal_id,treatment_id,objective,subjective,mapped,residual\n");
    for it in &r.items {
        let _ = writeln!(
            t,
            "{},{},{},{},{},{}",
            it.signal_id, it.treatment_id, it.objective, it.subjective, it.mapped, it.residual
        );
    }
    t
}

fn write_evaluation_report(dir: &Path, r: &EvaluationReport, cfg: &RunConfig) -> Result<()> {
    write_file(&dir.join("report.txt"), &evaluation_text(r))?;
    write_file(&dir.join("residuals.csv"), &residual_csv(r))?;
    let mut scatter = String::from("x,y,mapped_y\n");
    for it in &r.items {
        let _ = writeln!(scatter, "{},{},{}", it.objective, it.subjective, it.mapped);
    }
    write_file(&dir.join("scatter.csv"), &scatter)?;
    let json = serde_json::to_string_pretty(&WithConfig { config: cfg, report: r }).expect("serializes");
    write_file(&dir.join("report.json"), &(json + "\n"))
}

/// Parameter count breakdown as ordered key/value pairs.
pub fn parameter_table(model: &CsmModel) -> BTreeMap<&'static str, usize> {
    let c = model.count_parameters();
    BTreeMap::from([
        ("basis_functions", c.basis_functions),
        ("dpws", c.dpws),
        ("coefficients", c.coefficients),
        ("normalizers", c.normalizers),
        ("total", c.total),
    ])
}
