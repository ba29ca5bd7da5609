//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on domain errors (bad input content),
//! 2 on usage errors and missing files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use tablestruct::codec::{grid_to_html, grid_to_otsl, html_to_grid, otsl_parse, otsl_to_grid, parse_html, HtmlTree};
use tablestruct::corpus::{
    generate_corpus, oracle_features, oracle_filter_params, read_corpus, write_corpus, CorpusConfig, CorpusError,
    CorpusSample, SampleFeatures, WatermarkConfig,
};
use tablestruct::filter::FilterParams;
use tablestruct::gradcheck::{run_gradient_suite, DEFAULT_STEP};
use tablestruct::losses::{LossComponents, LossWeights};
use tablestruct::pipeline::{
    compare_filters, evaluate_losses, oracle_tag_logits, report, run_pipeline, FilterMode, DEFAULT_MARGIN,
};
use tablestruct::pointer::{ProjectionMatrix, Temperature};
use tablestruct::teds::{score_pair, TedsScores};

#[derive(Parser)]
#[command(
    name = "tablestruct",
    version,
    about = "Table structure coding, scoring and synthetic evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Otsl,
    Html,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a table between OTSL and HTML.
    Convert {
        #[arg(long, value_enum)]
        from: Format,
        #[arg(long, value_enum)]
        to: Format,
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// TEDS between a predicted and a ground-truth HTML table.
    Score {
        #[arg(long, required_unless_present = "batch", conflicts_with = "batch")]
        pred: Option<PathBuf>,
        #[arg(long, required_unless_present = "batch", conflicts_with = "batch")]
        gt: Option<PathBuf>,
        /// JSON lines of {"pred": html, "gt": html}.
        #[arg(long)]
        batch: Option<PathBuf>,
        #[arg(long)]
        struct_only: bool,
    },
    /// Generate a synthetic corpus as JSON lines.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        max_rows: usize,
        #[arg(long, default_value_t = 6)]
        max_cols: usize,
        #[arg(long, default_value_t = 0.2)]
        span_prob: f64,
        #[arg(long, default_value_t = 3)]
        max_span: usize,
        #[arg(long, default_value_t = 0.1)]
        empty_prob: f64,
        #[arg(long, default_value_t = 3)]
        max_boxes: usize,
        /// Zero disables watermarks.
        #[arg(long, default_value_t = 0.0)]
        watermark_prob: f64,
        #[arg(long, default_value_t = 0.8)]
        min_iou: f64,
        #[arg(long, default_value_t = 640)]
        box_slots: usize,
        #[arg(long, default_value_t = 64)]
        feature_dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Point boxes at data tags and assemble the final table.
    Assemble {
        #[arg(long)]
        corpus: PathBuf,
        /// Emit one sample's table instead of corpus means.
        #[arg(long)]
        index: Option<usize>,
        /// Hidden states and projections as JSON; oracle features otherwise.
        #[arg(long, requires = "index")]
        features: Option<PathBuf>,
        /// Filter parameters as JSON; the oracle filter otherwise.
        #[arg(long)]
        filter_params: Option<PathBuf>,
        #[arg(long, conflicts_with = "filter_params")]
        no_filter: bool,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
    },
    /// Print the weighted loss breakdown and a gradient check report.
    EvalLosses {
        /// Five comma-separated component values: cls,ptr,ptr_empty,row,col.
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["corpus", "seed"])]
        components: Option<Vec<f64>>,
        /// Five comma-separated weights; defaults to 1,1,1,0.5,0.5.
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Generate the sample from this seed when no corpus is given.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
        /// Random fixtures per gradient check; zero skips the check.
        #[arg(long, default_value_t = 100)]
        grad_seeds: usize,
    },
    /// Compare the IOU baselines with the filtered pointer pipeline.
    FilterEval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
    },
}

enum CliError {
    Usage(String),
    Domain(String),
}

impl CliError {
    fn domain(e: impl std::fmt::Display) -> Self {
        CliError::Domain(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Usage(format!("{}: no such file", path.display())),
        _ => CliError::Domain(format!("{}: {e}", path.display())),
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

fn load_corpus(path: &Path) -> Result<Vec<CorpusSample>> {
    read_corpus(path).map_err(|e| match e {
        CorpusError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            CliError::Usage(format!("{}: no such file", path.display()))
        }
        other => CliError::Domain(format!("{}: {other}", path.display())),
    })
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let line = serde_json::to_string(value).map_err(CliError::domain)?;
    println!("{line}");
    Ok(())
}

fn temperature(tau: f64) -> Result<Temperature> {
    Temperature::new(tau).map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_table(text: &str, format: Format) -> Result<(HtmlTree, String)> {
    match format {
        Format::Otsl => {
            let seq = otsl_parse(text).map_err(CliError::domain)?;
            let grid = otsl_to_grid(&seq).map_err(CliError::domain)?;
            Ok((grid_to_html(&grid, false), seq.to_string()))
        }
        Format::Html => {
            let tree = parse_html(text).map_err(CliError::domain)?;
            let grid = html_to_grid(&tree).map_err(CliError::domain)?;
            Ok((grid_to_html(&grid, true), grid_to_otsl(&grid).to_string()))
        }
    }
}

fn convert(from: Format, to: Format, input: &Path, out: Option<&Path>) -> Result<()> {
    let (html, otsl) = parse_table(&read_text(input)?, from)?;
    let text = match to {
        Format::Html => html.to_html(),
        Format::Otsl => otsl,
    };
    match out {
        Some(path) => {
            fs::write(path, format!("{text}\n")).map_err(|e| CliError::domain(format!("{}: {e}", path.display())))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn score_json(s: TedsScores, struct_only: bool) -> serde_json::Value {
    if struct_only {
        json!({ "teds_struct": s.teds_struct })
    } else {
        json!({ "teds": s.teds, "teds_struct": s.teds_struct })
    }
}

#[derive(Deserialize)]
struct Pair {
    pred: String,
    gt: String,
}

fn score_html(pred: &str, gt: &str) -> std::result::Result<TedsScores, String> {
    let p = parse_html(pred).map_err(|e| format!("pred: {e}"))?;
    let g = parse_html(gt).map_err(|e| format!("gt: {e}"))?;
    score_pair(&p, &g).map_err(|e| e.to_string())
}

fn score(pred: Option<&Path>, gt: Option<&Path>, batch: Option<&Path>, struct_only: bool) -> Result<()> {
    if let Some(batch) = batch {
        let text = read_text(batch)?;
        let lines: Vec<(usize, &str)> = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).collect();
        let scores = lines
            .par_iter()
            .map(|&(i, line)| {
                let pair: Pair = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
                score_html(&pair.pred, &pair.gt).map_err(|e| format!("line {}: {e}", i + 1))
            })
            .collect::<std::result::Result<Vec<_>, String>>()
            .map_err(CliError::Domain)?;
        let n = scores.len().max(1) as f64;
        let mean = TedsScores {
            teds: scores.iter().map(|s| s.teds).sum::<f64>() / n,
            teds_struct: scores.iter().map(|s| s.teds_struct).sum::<f64>() / n,
        };
        let per: Vec<_> = scores.iter().map(|&s| score_json(s, struct_only)).collect();
        return print_json(&json!({ "samples": per, "mean": score_json(mean, struct_only) }));
    }
    let (pred, gt) = (pred.expect("clap requires pred"), gt.expect("clap requires gt"));
    let (p, g) = (read_text(pred)?, read_text(gt)?);
    let s = score_html(&p, &g).map_err(CliError::Domain)?;
    print_json(&score_json(s, struct_only))
}

fn probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{name} must lie in [0, 1]")))
    }
}

fn gen(config: CorpusConfig, out: &Path) -> Result<()> {
    probability("span-prob", config.span_probability)?;
    probability("empty-prob", config.empty_cell_probability)?;
    probability("watermark-prob", config.watermark.probability)?;
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let samples = generate_corpus(&config).map_err(CliError::domain)?;
    write_corpus(out, &samples).map_err(|e| CliError::domain(format!("{}: {e}", out.display())))?;
    let boxes: usize = samples.iter().map(|s| s.annotations.len()).sum();
    let distractors: usize = samples.iter().map(|s| s.annotations.distractor_count()).sum();
    print_json(&json!({ "samples": samples.len(), "boxes": boxes, "distractors": distractors }))
}

struct AssembleArgs {
    index: Option<usize>,
    features: Option<PathBuf>,
    filter_params: Option<PathBuf>,
    no_filter: bool,
    dim: usize,
    margin: f64,
    tau: f64,
}

fn assemble(corpus: &Path, a: AssembleArgs) -> Result<()> {
    let tau = temperature(a.tau)?;
    let samples = load_corpus(corpus)?;
    let params: Option<FilterParams> = a.filter_params.as_deref().map(read_json).transpose()?;
    let mode_for = |s: &CorpusSample| -> Result<FilterMode> {
        Ok(match (&params, a.no_filter || a.features.is_some()) {
            (Some(p), _) => FilterMode::Params(p.clone()),
            (None, true) => FilterMode::Off,
            (None, false) => FilterMode::Params(
                oracle_filter_params(s.data_tags().len(), a.dim, a.margin).map_err(CliError::domain)?,
            ),
        })
    };
    if let Some(i) = a.index {
        let s = samples
            .get(i)
            .ok_or_else(|| CliError::Usage(format!("corpus has {} samples, no index {i}", samples.len())))?;
        let features: SampleFeatures = match &a.features {
            Some(path) => read_json(path)?,
            None => oracle_features(s, a.dim, a.margin).map_err(CliError::domain)?,
        };
        let out = run_pipeline(s, &features, &mode_for(s)?, tau).map_err(CliError::domain)?;
        return print_json(&json!({
            "index": s.index,
            "html": out.html.to_html(),
            "assignment": out.assignment,
            "kept_boxes": out.kept_boxes,
            "teds": out.scores.teds,
            "teds_struct": out.scores.teds_struct,
        }));
    }
    let results = samples
        .par_iter()
        .map(|s| {
            let features = oracle_features(s, a.dim, a.margin).map_err(CliError::domain)?;
            run_pipeline(s, &features, &mode_for(s)?, tau)
                .map(|o| o.scores)
                .map_err(CliError::domain)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = results.len().max(1) as f64;
    print_json(&json!({
        "samples": results.len(),
        "mean_teds": results.iter().map(|s| s.teds).sum::<f64>() / n,
        "mean_teds_struct": results.iter().map(|s| s.teds_struct).sum::<f64>() / n,
        "perfect": results.iter().filter(|s| s.teds == 1.0 && s.teds_struct == 1.0).count(),
    }))
}

/// Scales oracle box features back to unit length for the contrastive head.
fn unit_projection(dim: usize, margin: f64) -> ProjectionMatrix {
    let mut p = ProjectionMatrix::identity(dim);
    p.weights.values_mut().iter_mut().for_each(|w| *w /= margin);
    p
}

struct EvalArgs {
    components: Option<Vec<f64>>,
    lambda: Option<Vec<f64>>,
    corpus: Option<PathBuf>,
    index: usize,
    seed: Option<u64>,
    dim: usize,
    margin: f64,
    tau: f64,
    grad_seeds: usize,
}

fn five(name: &str, values: &Option<Vec<f64>>) -> Result<()> {
    match values {
        Some(v) if v.len() != 5 => Err(CliError::Usage(format!(
            "--{name} takes 5 comma-separated values, got {}",
            v.len()
        ))),
        _ => Ok(()),
    }
}

fn eval_losses(a: EvalArgs) -> Result<()> {
    five("components", &a.components)?;
    five("lambda", &a.lambda)?;
    let weights = match &a.lambda {
        Some(l) => LossWeights::new(l[0], l[1], l[2], l[3], l[4]).map_err(|e| CliError::Usage(e.to_string()))?,
        None => LossWeights::default(),
    };
    let tau = temperature(a.tau)?;
    let rep = if let Some(c) = &a.components {
        let components = LossComponents {
            cls: c[0],
            ptr: c[1],
            ptr_empty: c[2],
            contr_row: c[3],
            contr_col: c[4],
        };
        report(components, weights).map_err(CliError::domain)?
    } else {
        let sample = match &a.corpus {
            Some(path) => {
                let samples = load_corpus(path)?;
                samples
                    .into_iter()
                    .nth(a.index)
                    .ok_or_else(|| CliError::Usage(format!("corpus has no sample {}", a.index)))?
            }
            None => {
                let config = CorpusConfig {
                    seed: a.seed.unwrap_or(0),
                    feature_dim: a.dim,
                    ..CorpusConfig::default()
                };
                tablestruct::corpus::generate_sample(&config, a.index as u64).map_err(CliError::domain)?
            }
        };
        let features = oracle_features(&sample, a.dim, a.margin).map_err(CliError::domain)?;
        evaluate_losses(
            &sample,
            &features,
            &oracle_tag_logits(&sample.otsl, a.margin),
            &unit_projection(a.dim, a.margin),
            tau,
            weights,
        )
        .map_err(CliError::domain)?
    };
    let mut value = serde_json::to_value(rep).map_err(CliError::domain)?;
    if a.grad_seeds > 0 {
        let check = run_gradient_suite(a.seed.unwrap_or(0), a.grad_seeds, DEFAULT_STEP).map_err(CliError::domain)?;
        value["gradient_check"] = json!({
            "step": DEFAULT_STEP,
            "max_relative_error": check.max(),
            "per_gradient": check,
            "passed": check.max() < 1e-4,
        });
    }
    print_json(&value)
}

fn filter_eval(corpus: &Path, params: Option<&Path>, dim: usize, margin: f64, tau: f64) -> Result<()> {
    let tau = temperature(tau)?;
    let samples = load_corpus(corpus)?;
    let params: Option<FilterParams> = params.map(read_json).transpose()?;
    let c = compare_filters(&samples, dim, margin, tau, params.as_ref()).map_err(CliError::domain)?;
    print_json(&c)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert { from, to, input, out } => convert(from, to, &input, out.as_deref()),
        Command::Score {
            pred,
            gt,
            batch,
            struct_only,
        } => score(pred.as_deref(), gt.as_deref(), batch.as_deref(), struct_only),
        Command::Gen {
            seed,
            n,
            max_rows,
            max_cols,
            span_prob,
            max_span,
            empty_prob,
            max_boxes,
            watermark_prob,
            min_iou,
            box_slots,
            feature_dim,
            out,
        } => gen(
            CorpusConfig {
                seed,
                n_samples: n,
                max_rows,
                max_cols,
                span_probability: span_prob,
                max_span,
                empty_cell_probability: empty_prob,
                max_boxes_per_cell: max_boxes,
                watermark: WatermarkConfig {
                    enabled: watermark_prob > 0.0,
                    probability: watermark_prob,
                    min_iou,
                },
                feature_dim,
                box_slots,
            },
            &out,
        ),
        Command::Assemble {
            corpus,
            index,
            features,
            filter_params,
            no_filter,
            dim,
            margin,
            tau,
        } => assemble(
            &corpus,
            AssembleArgs {
                index,
                features,
                filter_params,
                no_filter,
                dim,
                margin,
                tau,
            },
        ),
        Command::EvalLosses {
            components,
            lambda,
            corpus,
            index,
            seed,
            dim,
            margin,
            tau,
            grad_seeds,
        } => eval_losses(EvalArgs {
            components,
            lambda,
            corpus,
            index,
            seed,
            dim,
            margin,
            tau,
            grad_seeds,
        }),
        Command::FilterEval {
            corpus,
            params,
            dim,
            margin,
            tau,
        } => filter_eval(&corpus, params.as_deref(), dim, margin, tau),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(CliError::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
