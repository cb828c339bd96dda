mod synth;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use covifex_core::experiment::{
    discover_extractors, emit_report, export_best_model, export_model, load_feature_dir, run_grid,
    ExtractionRecord, FeatureSet, GridConfig,
};
use covifex_core::extract::{
    features_load, features_save, features_to_csv, ExtractorBackend, StubBackend, DEFAULT_BATCH_SIZE,
    DEFAULT_STUB_DIM,
};
use covifex_core::{
    dataset_from_manifest, extract_features, registry_get, train, ClassifierKind, EnsembleConfig, Error,
    Metric,
};
use covifex_service::{LoadOptions, LoadedModel, PredictError, ServeOptions, DEFAULT_PORT};

const EXIT_VALIDATION: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "covifex", version, about = "COVID-19 X-ray/CT classification from deep CNN features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    /// Channels first (PyTorch exports).
    Nchw,
    /// Channels last (Keras exports).
    Nhwc,
}

#[derive(Subcommand)]
enum Command {
    /// Extract one feature vector per manifest image.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        /// Registry name (e.g. DenseNet121) or `stub`.
        #[arg(long)]
        extractor: String,
        /// ONNX network; required for every extractor except the stub.
        #[arg(long)]
        model_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "nchw")]
        layout: Layout,
        #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
        batch_size: usize,
        #[arg(long, default_value_t = DEFAULT_STUB_DIM)]
        stub_dim: usize,
        #[arg(long, default_value_t = 0)]
        stub_seed: u64,
        /// Also write the features as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate every extractor x classifier pair and write the report tables.
    Grid {
        /// Directory of `<Extractor>.cvfx` files.
        #[arg(long)]
        features_dir: PathBuf,
        /// Comma-separated extractor names; default is every feature file found.
        #[arg(long, value_delimiter = ',')]
        extractors: Vec<String>,
        /// Comma-separated classifier names; default is all six.
        #[arg(long, value_delimiter = ',')]
        classifiers: Vec<ClassifierKind>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Retrain the best cell on all data and save it here.
        #[arg(long)]
        export_model: Option<PathBuf>,
    },
    /// Train one classifier on a feature file.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        classifier: ClassifierKind,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        n_estimators: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify one image with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        extractor_model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "nchw")]
        layout: Layout,
    },
    /// Serve the prediction API.
    Serve {
        #[arg(long, env = "COVIFEX_MODEL")]
        model: PathBuf,
        #[arg(long, env = "COVIFEX_EXTRACTOR_MODEL")]
        extractor_model: Option<PathBuf>,
        #[arg(long, env = "COVIFEX_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, value_enum, default_value = "nchw")]
        layout: Layout,
        /// Keep every upload and its response here.
        #[arg(long)]
        audit_dir: Option<PathBuf>,
    },
    /// Write a small synthetic image dataset with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_io() { EXIT_IO } else { EXIT_VALIDATION },
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        message: message.into(),
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn ensure_parent(path: &Path) -> CmdResult {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
        }
        _ => Ok(()),
    }
}

fn sidecar(features: &Path) -> PathBuf {
    features.with_extension("extract.json")
}

fn make_backend(
    extractor: &str,
    model_file: Option<&Path>,
    layout: Layout,
    stub_dim: usize,
    stub_seed: u64,
) -> std::result::Result<(covifex_core::ExtractorSpec, Box<dyn ExtractorBackend>), Failure> {
    let spec = registry_get(extractor).ok_or_else(|| {
        invalid(format!(
            "unknown extractor {extractor:?}; known: {}",
            covifex_core::registry_list()
                .iter()
                .map(|s| s.name.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        ))
    })?;
    if spec.name == covifex_core::extract::STUB_EXTRACTOR {
        let spec = covifex_core::ExtractorSpec::stub(stub_dim);
        return Ok((spec, Box::new(StubBackend::new(stub_dim, stub_seed)?)));
    }
    let path = model_file.ok_or_else(|| invalid(format!("--model-file is required for {}", spec.name)))?;
    onnx_backend(spec, path, layout)
}

#[cfg(feature = "onnx")]
fn onnx_backend(
    spec: covifex_core::ExtractorSpec,
    path: &Path,
    layout: Layout,
) -> std::result::Result<(covifex_core::ExtractorSpec, Box<dyn ExtractorBackend>), Failure> {
    use covifex_core::extract::{OnnxBackend, TensorLayout};
    let layout = match layout {
        Layout::Nchw => TensorLayout::Nchw,
        Layout::Nhwc => TensorLayout::Nhwc,
    };
    let backend = OnnxBackend::load(path, &spec, layout)?;
    Ok((spec, Box::new(backend)))
}

#[cfg(not(feature = "onnx"))]
fn onnx_backend(
    spec: covifex_core::ExtractorSpec,
    _path: &Path,
    _layout: Layout,
) -> std::result::Result<(covifex_core::ExtractorSpec, Box<dyn ExtractorBackend>), Failure> {
    Err(invalid(format!("{} needs a build with the `onnx` feature", spec.name)))
}

#[allow(clippy::too_many_arguments)]
fn cmd_extract(
    manifest: &Path,
    extractor: &str,
    model_file: Option<&Path>,
    layout: Layout,
    batch_size: usize,
    stub_dim: usize,
    stub_seed: u64,
    csv: Option<&Path>,
    out: &Path,
) -> CmdResult {
    let ds = dataset_from_manifest(manifest)?;
    if ds.is_empty() {
        return Err(invalid(format!("{} lists no images", manifest.display())));
    }
    let (spec, mut backend) = make_backend(extractor, model_file, layout, stub_dim, stub_seed)?;
    let cfg = spec.preprocess_config();
    ensure_parent(out)?;
    let (feats, timing) = extract_features(&ds, &spec, &cfg, backend.as_mut(), batch_size)?;
    features_save(&feats, out)?;
    let record = ExtractionRecord {
        extractor: spec.name.clone(),
        n: feats.n,
        d: feats.d,
        total_s: timing.total_s,
        per_image_s: timing.per_image_s,
        batch_size,
        preprocess: cfg,
        stub_seed: (spec.name == covifex_core::extract::STUB_EXTRACTOR).then_some(stub_seed),
        model_file: model_file.map(|p| p.display().to_string()),
    };
    record.save(&sidecar(out))?;
    if let Some(csv) = csv {
        let f = std::fs::File::create(csv).map_err(|e| io_failure(csv, e))?;
        features_to_csv(&feats, std::io::BufWriter::new(f)).map_err(|e| io_failure(csv, e))?;
    }
    println!(
        "{}: {} images x {} features in {:.3} s ({:.4} s/image) -> {}",
        spec.name,
        feats.n,
        feats.d,
        timing.total_s,
        timing.per_image_s,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_grid(
    dir: &Path,
    extractors: Vec<String>,
    classifiers: Vec<ClassifierKind>,
    k: usize,
    seed: u64,
    out: &Path,
    export: Option<&Path>,
) -> CmdResult {
    let extractors = if extractors.is_empty() {
        discover_extractors(dir)?
    } else {
        extractors
    };
    if extractors.is_empty() {
        return Err(invalid(format!("no .cvfx feature files in {}", dir.display())));
    }
    let classifiers = if classifiers.is_empty() {
        ClassifierKind::ALL.to_vec()
    } else {
        classifiers
    };
    let mut cfg = GridConfig::new(extractors.clone(), classifiers, out);
    cfg.k = k;
    cfg.seed = seed;
    cfg.validate()?;
    let input = load_feature_dir(dir, &extractors)?;
    let report = run_grid(&input, &cfg)?;
    let files = emit_report(&report, out)?;
    println!("{}", std::fs::read_to_string(out.join("report_accuracy.md")).map_err(|e| io_failure(out, e))?);
    println!("wrote {} files to {}", files.paths.len(), out.display());
    println!("report checksum {}", files.checksum);
    if let Some(best) = report.best() {
        let s = best.summary.get(Metric::Accuracy);
        println!(
            "best: {} + {} accuracy {}",
            best.extractor,
            best.classifier.display_name(),
            covifex_core::experiment::format_cell(s.mean, s.std)
        );
    }
    if let Some(path) = export {
        ensure_parent(path)?;
        let (_, m) = export_best_model(&report, &input, &cfg, &files.checksum, path)?;
        println!("exported {} + {} to {}", m.extractor, m.classifier_name, path.display());
    }
    Ok(())
}

fn cmd_train(features: &Path, kind: ClassifierKind, seed: u64, n_estimators: Option<usize>, out: &Path) -> CmdResult {
    let matrix = features_load(features)?;
    let record = sidecar(features);
    let extraction = if record.is_file() {
        Some(ExtractionRecord::load(&record)?)
    } else {
        None
    };
    let mut cfg = EnsembleConfig::for_kind(kind).with_seed(seed);
    if let Some(n) = n_estimators {
        cfg.n_estimators = n;
    }
    let model = train(kind, &matrix, &cfg)?;
    let pred = model.predict_matrix(&matrix)?;
    let correct = pred.iter().zip(&matrix.labels).filter(|(p, y)| p == y).count();
    let set = FeatureSet { matrix, extraction };
    ensure_parent(out)?;
    export_model(&model, &set, seed, None, "", out)?;
    println!(
        "{} on {} ({} x {}): trained in {:.3} s, training accuracy {:.4} -> {}",
        kind.display_name(),
        set.matrix.extractor_name,
        set.matrix.n,
        set.matrix.d,
        model.train_time_s,
        correct as f64 / set.matrix.n as f64,
        out.display()
    );
    Ok(())
}

fn load_options(extractor_model: Option<PathBuf>, layout: Layout) -> LoadOptions {
    LoadOptions {
        extractor_model,
        channels_last: matches!(layout, Layout::Nhwc),
    }
}

fn cmd_predict(model: &Path, image: &Path, extractor_model: Option<PathBuf>, layout: Layout) -> CmdResult {
    let loaded = LoadedModel::load(model, &load_options(extractor_model, layout))?;
    let bytes = std::fs::read(image).map_err(|e| io_failure(image, e))?;
    let resp = loaded.predict(&bytes, "cli".into()).map_err(|e| match e {
        PredictError::BadImage(m) => invalid(format!("{}: {m}", image.display())),
        PredictError::Internal(m) => invalid(m),
    })?;
    println!("{}", serde_json::to_string_pretty(&resp).expect("response serializes"));
    Ok(())
}

fn cmd_serve(model: PathBuf, extractor_model: Option<PathBuf>, port: u16, layout: Layout, audit_dir: Option<PathBuf>) -> CmdResult {
    if !model.is_file() {
        return Err(io_failure(&model, std::io::Error::new(std::io::ErrorKind::NotFound, "model file not found")));
    }
    let opts = ServeOptions {
        model,
        load: load_options(extractor_model, layout),
        port,
        audit_dir,
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure {
        code: EXIT_IO,
        message: e.to_string(),
    })?;
    rt.block_on(covifex_service::serve(opts)).map_err(|e| Failure {
        code: EXIT_IO,
        message: format!("server: {e}"),
    })
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Extract {
            manifest,
            extractor,
            model_file,
            layout,
            batch_size,
            stub_dim,
            stub_seed,
            csv,
            out,
        } => cmd_extract(
            &manifest,
            &extractor,
            model_file.as_deref(),
            layout,
            batch_size,
            stub_dim,
            stub_seed,
            csv.as_deref(),
            &out,
        ),
        Command::Grid {
            features_dir,
            extractors,
            classifiers,
            k,
            seed,
            out,
            export_model,
        } => cmd_grid(&features_dir, extractors, classifiers, k, seed, &out, export_model.as_deref()),
        Command::Train {
            features,
            classifier,
            seed,
            n_estimators,
            out,
        } => cmd_train(&features, classifier, seed, n_estimators, &out),
        Command::Predict {
            model,
            image,
            extractor_model,
            layout,
        } => cmd_predict(&model, &image, extractor_model, layout),
        Command::Serve {
            model,
            extractor_model,
            port,
            layout,
            audit_dir,
        } => cmd_serve(model, extractor_model, port, layout, audit_dir),
        Command::Synth { out, per_class, seed } => {
            let m = synth::write_dataset(&out, per_class, seed)?;
            println!("wrote {} images and {}", 2 * per_class, m.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
