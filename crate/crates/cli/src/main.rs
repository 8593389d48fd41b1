use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use oscseg_core::config::parse_config_file;
use oscseg_core::harness::{
    cmd_compare, cmd_gen_synthetic, cmd_noise_study, cmd_segment, cmd_sweep, HarnessError, Method, NoiseStudySpec,
    Synthetic, SweepSpec,
};
use oscseg_core::{ConfigError, ModelKind, NoiseSpec, RunConfig};

/// Image segmentation with grids of coupled oscillators.
#[derive(Parser, Debug)]
#[command(name = "oscseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment one PGM image and write labels, frequencies and a run report.
    Segment {
        input: PathBuf,
        /// Reference mask (PGM) to score against.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        mode: ModeArgs,
    },
    /// Gap-cluster one image over a grid of couplings and thresholds.
    Sweep {
        input: PathBuf,
        /// Comma-separated gap thresholds (AU⁻¹, or fractions with --relative).
        #[arg(long, value_delimiter = ',', required = true)]
        threshold: Vec<f64>,
        /// Interpret thresholds as fractions of the mean frequency.
        #[arg(long)]
        relative: bool,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        run: MultiRunArgs,
    },
    /// Mislabel rate against added Gaussian noise, per method.
    NoiseStudy {
        input: PathBuf,
        /// Ground-truth mask (PGM).
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.005, 0.01, 0.02, 0.03])]
        variances: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        /// Explicit noise seed per trial (default: seed + trial index).
        #[arg(long, value_delimiter = ',')]
        trial_seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',', default_values_t = [MethodName::Neural, MethodName::Bz, MethodName::Mems, MethodName::Otsu])]
        methods: Vec<MethodName>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        run: MethodArgs,
    },
    /// Score several methods on images with reference masks.
    Compare {
        /// Comma-separated input images.
        #[arg(long, value_delimiter = ',')]
        images: Vec<PathBuf>,
        /// Comma-separated reference masks, one per image.
        #[arg(long = "ref", value_delimiter = ',')]
        references: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [MethodName::Neural, MethodName::Bz, MethodName::Mems, MethodName::Otsu])]
        methods: Vec<MethodName>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        run: MethodArgs,
    },
    /// Write a synthetic test image and its ground truth.
    GenSynthetic {
        #[arg(value_enum)]
        kind: SyntheticKind,
        #[arg(long, default_value_t = 16)]
        side: usize,
        /// Gray levels per quadrant (quadrant image).
        #[arg(long, default_value_t = 64)]
        levels: usize,
        /// Left-half intensity (two-region image).
        #[arg(long, default_value_t = 0.3)]
        a: f64,
        /// Right-half intensity (two-region image).
        #[arg(long, default_value_t = 0.7)]
        b: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_variance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SyntheticKind {
    Quadrant,
    TwoRegion,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MethodName {
    Neural,
    Bz,
    Mems,
    Otsu,
}

impl std::fmt::Display for MethodName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

/// Settings shared by every simulating command.
#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Named preset: neural-default, bz-default, mems-default,
    /// shape-extraction, tuned-thresholds.
    #[arg(long)]
    preset: Option<String>,
    /// `key = value` config file, applied before command-line flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    total_time: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` override (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    coupling: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct MultiRunArgs {
    #[arg(long)]
    model: Option<ModelKind>,
    /// Comma-separated coupling coefficients.
    #[arg(long, value_delimiter = ',', required = true)]
    coupling: Vec<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct MethodArgs {
    /// Coupling applied to every oscillator method (default: per preset).
    #[arg(long)]
    coupling: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
#[group(multiple = false)]
struct ModeArgs {
    /// Binary split at a fixed frequency (AU⁻¹).
    #[arg(long)]
    threshold: Option<f64>,
    /// Gap clustering with an absolute gap (AU⁻¹).
    #[arg(long)]
    gap_threshold: Option<f64>,
    /// Gap clustering with a gap given as a fraction of the mean frequency.
    #[arg(long)]
    relative_gap_threshold: Option<f64>,
    /// Otsu threshold on the frequency histogram.
    #[arg(long)]
    otsu: bool,
}

impl ModeArgs {
    fn setting(&self) -> Option<String> {
        if let Some(t) = self.threshold {
            Some(format!("threshold:{t}"))
        } else if let Some(g) = self.gap_threshold {
            Some(format!("gap:{g}"))
        } else if let Some(r) = self.relative_gap_threshold {
            Some(format!("relative-gap:{r}"))
        } else {
            self.otsu.then(|| "otsu".to_string())
        }
    }
}

type Settings = Vec<(String, String)>;

fn push(settings: &mut Settings, key: &str, value: impl ToString) {
    settings.push((key.to_string(), value.to_string()));
}

impl CommonArgs {
    /// Config-file settings followed by flag overrides, in precedence order.
    fn settings(&self) -> Result<Settings, HarnessError> {
        let mut out = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
                parse_config_file(&text)?
            }
            None => Vec::new(),
        };
        if let Some(p) = &self.preset {
            push(&mut out, "preset", p);
        }
        if let Some(v) = self.dt {
            push(&mut out, "dt", v);
        }
        if let Some(v) = self.total_time {
            push(&mut out, "total_time", v);
        }
        if let Some(v) = self.seed {
            push(&mut out, "seed", v);
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| ConfigError::invalid("--set", format!("expected KEY=VALUE, got `{kv}`")))?;
            push(&mut out, k.trim(), v.trim());
        }
        Ok(out)
    }
}

fn single_config(model: Option<ModelKind>, coupling: Option<f64>, common: &CommonArgs, mode: Option<String>) -> Result<RunConfig, HarnessError> {
    let mut settings = common.settings()?;
    if let Some(m) = model {
        push(&mut settings, "model", m);
    }
    if let Some(c) = coupling {
        push(&mut settings, "coupling", c);
    }
    if let Some(m) = mode {
        push(&mut settings, "mode", m);
    }
    Ok(RunConfig::resolve(&settings)?)
}

/// One config per method. Model-prefixed keys only reach their own model;
/// a `*-default` preset is replaced by each model's own default.
fn method_list(names: &[MethodName], args: &MethodArgs) -> Result<Vec<Method>, HarnessError> {
    if names.is_empty() {
        return Err(ConfigError::invalid("methods", "must be nonempty").into());
    }
    let base = args.common.settings()?;
    let mut methods = Vec::new();
    for name in names {
        let kind = match name {
            MethodName::Neural => ModelKind::Neural,
            MethodName::Bz => ModelKind::Bz,
            MethodName::Mems => ModelKind::Mems,
            MethodName::Otsu => {
                let bins = RunConfig::resolve(&only_common(&base))?.otsu_bins;
                methods.push(Method::Otsu { bins });
                continue;
            }
        };
        let mut settings: Settings = base
            .iter()
            .filter(|(k, v)| match k.split_once('.') {
                Some((prefix, _)) if prefix.parse::<ModelKind>().is_ok() => prefix == kind.name(),
                _ => k != "model" && !(k == "preset" && v.ends_with("-default")),
            })
            .cloned()
            .collect();
        push(&mut settings, "model", kind);
        if let Some(c) = args.coupling {
            push(&mut settings, "coupling", c);
        }
        methods.push(Method::Oscillator(Box::new(RunConfig::resolve(&settings)?)));
    }
    Ok(methods)
}

fn only_common(settings: &Settings) -> Settings {
    settings.iter().filter(|(k, _)| k == "otsu_bins").cloned().collect()
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Segment { input, reference, out_dir, run, mode } => {
            let cfg = single_config(run.model, run.coupling, &run.common, mode.setting())?;
            let result = cmd_segment(&cfg, &input, reference.as_deref(), &out_dir)?;
            let r = &result.report;
            print!("{} clusters, converged: {}", r.clusters, r.converged);
            if let Some(m) = r.mislabeled_fraction {
                print!(", mislabeled: {m:.4}");
            }
            println!();
        }
        Command::Sweep { input, threshold, relative, out_dir, run } => {
            let cfg = single_config(run.model, None, &run.common, None)?;
            let spec = SweepSpec { couplings: run.coupling, thresholds: threshold, relative };
            let cells = cmd_sweep(&cfg, &input, &spec, &out_dir)?;
            let failed = cells.iter().filter(|c| c.status != "ok").count();
            println!("{} cells, {failed} failed; wrote {}", cells.len(), out_dir.join("sweep.csv").display());
        }
        Command::NoiseStudy { input, reference, variances, trials, trial_seeds, methods, out_dir, run } => {
            let methods = method_list(&methods, &run)?;
            let base_seed = run.common.seed.unwrap_or(0);
            let spec = NoiseStudySpec { variances, trials, seeds: trial_seeds, base_seed };
            let study = cmd_noise_study(&methods, &input, reference.as_deref(), &spec, &out_dir)?;
            print!("{}", study.summary_csv());
        }
        Command::Compare { images, references, methods, out_dir, run } => {
            if images.is_empty() {
                let mut cmd = Cli::command();
                cmd.build();
                let usage = cmd.find_subcommand_mut("compare").expect("subcommand exists").render_usage();
                eprintln!("{usage}");
                return Err(ConfigError::invalid("images", "at least one image is required").into());
            }
            let methods = method_list(&methods, &run)?;
            let rows = cmd_compare(&methods, &images, &references, &out_dir)?;
            println!("{} rows; wrote {}", rows.len(), out_dir.join("compare.csv").display());
        }
        Command::GenSynthetic { kind, side, levels, a, b, noise_variance, seed, out_dir } => {
            let kind = match kind {
                SyntheticKind::Quadrant => Synthetic::Quadrant { side, levels_per_quadrant: levels, seed },
                SyntheticKind::TwoRegion => Synthetic::TwoRegion { side, a, b },
            };
            let noise = (noise_variance != 0.0).then_some(NoiseSpec { variance: noise_variance, seed });
            cmd_gen_synthetic(kind, noise, &out_dir)?;
            println!("wrote {}", Path::new(&out_dir).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
