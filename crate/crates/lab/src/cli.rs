//! Argument parsing and dispatch for the `dleaf` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dleaf_core::engine::DleafConfig;
use dleaf_core::eval::{PlantedSpec, SyntheticScene};
use dleaf_core::model::ModelConfig;
use serde_json::json;

use crate::commands::analyze::analyze;
use crate::commands::dpo_check::{dpo_check, DpoParams};
use crate::commands::run::{planted_run, toy_run};
use crate::commands::score::{score_chair, score_pope};
use crate::commands::sweep::{parse_grid, sweep, SweepAxis, SweepInputs, Task};
use crate::commands::throughput::{measure, ThroughputParams};
use crate::commands::CommandOutput;
use crate::config::{load_model_config, BasRuleName, DetectionMetricName, DleafSettings, HeadMetricName};
use crate::error::{LabError, LabResult};
use crate::output::{to_json_string, unix_millis, write_json, Manifest, OutputDir, ReportEnvelope, MANIFEST_FILE, REPORT_FILE};
use crate::trace_io::{attach_labels, read_labels, read_trace, write_labels, write_trace, LabelJoin};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "dleaf", version, about = "Attention-entropy diagnosis and head-fusion correction on a toy multimodal decoder")]
pub struct Cli {
    /// Print the report as JSON instead of a summary
    #[arg(long, global = true)]
    pub json: bool,
    /// Root directory for reports and artifacts
    #[arg(long, global = true, env = "DLEAF_OUT_DIR", default_value = "dleaf-out")]
    pub out_dir: PathBuf,
    /// Seed for every random choice of the subcommand [default: 42, or rng_seed from --model-config]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// Toy model TOML file [default: built-in 4-layer, 8-head model]
    #[arg(long)]
    pub model_config: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct DleafArgs {
    /// Intervention settings TOML file; flags override its values
    #[arg(long)]
    pub dleaf_config: Option<PathBuf>,
    /// Fusion weight toward the best head [default: 0.8]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Number of heads corrected per flagged layer [default: 4]
    #[arg(long)]
    pub heads: Option<usize>,
    /// Layers eligible for detection: `all`, `none`, `L` or `A-B` [default: 0-25]
    #[arg(long)]
    pub window: Option<String>,
    /// LIAS mixing weight, used with --detection-metric lias [default: 0.5]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// IAS mixing weight, used with --head-metric ias [default: 0.5]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Renormalize corrected rows to sum to one [default: off]
    #[arg(long)]
    pub renormalize: bool,
    /// Layer anomaly score [default: liae]
    #[arg(long, value_enum)]
    pub detection_metric: Option<DetectionMetricName>,
    /// Head ranking score [default: iaf]
    #[arg(long, value_enum)]
    pub head_metric: Option<HeadMetricName>,
    /// Threshold update rule [default: running-min]
    #[arg(long, value_enum)]
    pub bas_rule: Option<BasRuleName>,
    /// Disable the intervention entirely
    #[arg(long)]
    pub no_dleaf: bool,
}

impl DleafArgs {
    pub fn settings(&self) -> LabResult<DleafSettings> {
        let file = match &self.dleaf_config {
            Some(p) => DleafSettings::load(p)?,
            None => DleafSettings::default(),
        };
        let flags = DleafSettings {
            gamma: self.gamma,
            heads: self.heads,
            window: self.window.clone(),
            detection_metric: self.detection_metric,
            alpha: self.alpha,
            head_metric: self.head_metric,
            beta: self.beta,
            renormalize: self.renormalize.then_some(true),
            bas_rule: self.bas_rule,
        };
        Ok(file.overlay(&flags))
    }

    /// `None` when the intervention is disabled.
    pub fn resolve(&self) -> LabResult<Option<DleafConfig>> {
        let config = self.settings()?.resolve()?;
        Ok((!self.no_dleaf).then_some(config))
    }
}

#[derive(Debug, Args, Clone)]
pub struct PlantedArgs {
    /// Planted task: number of generated steps
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Planted task: fraction of hallucination-prone steps
    #[arg(long, default_value_t = 0.4)]
    pub prone_fraction: f64,
    /// Hallucination threshold on aggregate image mass
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
}

impl PlantedArgs {
    fn spec(&self) -> PlantedSpec {
        PlantedSpec { steps: self.steps, prone_fraction: self.prone_fraction, ..PlantedSpec::default() }
    }

    fn scene(&self) -> SyntheticScene {
        SyntheticScene { threshold: self.threshold, ..SyntheticScene::default() }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode with the toy model or evaluate the planted task
    Run {
        #[arg(long, value_enum, default_value_t = Task::Toy)]
        task: Task,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        dleaf: DleafArgs,
        #[command(flatten)]
        planted: PlantedArgs,
        /// Also write the planted traces and oracle labels (large)
        #[arg(long)]
        write_trace: bool,
    },
    /// Evaluate a grid of settings along one axis
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated grid values, e.g. `0,0.25,0.5` or `0-25,5-20`
        #[arg(long)]
        values: String,
        #[arg(long, value_enum, default_value_t = Task::Planted)]
        task: Task,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        dleaf: DleafArgs,
        #[command(flatten)]
        planted: PlantedArgs,
    },
    /// Statistics over a recorded trace
    Analyze {
        /// Trace file (newline-delimited JSON)
        #[arg(long)]
        trace: PathBuf,
        /// Label file of `{step, label}` lines; replaces labels stored in the trace
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Number of lowest-IAF heads in the layer histogram
        #[arg(long, default_value_t = 50)]
        top_k: usize,
    },
    /// Hallucination scorers
    Score {
        #[command(subcommand)]
        scorer: Scorer,
    },
    /// Numerical checks of the DPO gradient relationship
    DpoCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 16)]
        vocab: usize,
        #[arg(long, default_value_t = 8)]
        pairs: usize,
        /// DPO temperature
        #[arg(long, default_value_t = 0.1)]
        beta_dpo: f64,
        /// Finite-difference step
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Tokens per second with and without the intervention hook
    Throughput {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        dleaf: DleafArgs,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        /// Generated tokens per run
        #[arg(long, default_value_t = 128)]
        tokens: usize,
        /// Fail with exit code 2 when the overhead exceeds this fraction
        #[arg(long)]
        max_overhead: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum Scorer {
    /// CHAIR over `{caption_id, mentions, gold_objects}` lines
    Chair {
        #[arg(long)]
        captions: PathBuf,
        /// JSON object mapping surface forms to canonical objects
        #[arg(long)]
        synonyms: Option<PathBuf>,
    },
    /// POPE over `{image_id, turn, object, gold, pred}` lines
    Pope {
        #[arg(long)]
        items: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Run { .. } => "run",
            Command::Sweep { .. } => "sweep",
            Command::Analyze { .. } => "analyze",
            Command::Score { scorer: Scorer::Chair { .. } } => "score-chair",
            Command::Score { scorer: Scorer::Pope { .. } } => "score-pope",
            Command::DpoCheck { .. } => "dpo-check",
            Command::Throughput { .. } => "throughput",
        }
    }
}

fn model_config(args: &ModelArgs, seed: Option<u64>) -> LabResult<ModelConfig> {
    let mut config = load_model_config(args.model_config.as_deref())?;
    if let Some(seed) = seed {
        config.rng_seed = seed;
    }
    Ok(config)
}

fn path_string(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

struct Executed {
    output: CommandOutput,
    parameters: serde_json::Value,
    seed: Option<u64>,
}

fn execute(command: &Command, seed: Option<u64>, out: &mut OutputDir) -> LabResult<Executed> {
    match command {
        Command::Run { task: Task::Toy, model, dleaf, .. } => {
            let model_cfg = model_config(model, seed)?;
            let config = dleaf.resolve()?;
            let scene = SyntheticScene::default();
            let run = toy_run(&model_cfg, config.as_ref(), &scene)?;
            write_trace(&out.artifact("trace.ndjson"), &run.header, &run.records)?;
            write_json(&out.artifact("intervention_log.json"), &run.log)?;
            let summary = format!(
                "generated {} tokens, corrected {} layer activations",
                run.report.tokens.len(),
                run.report.corrected_layers
            );
            Ok(Executed {
                output: CommandOutput::new(&run.report, summary),
                parameters: json!({
                    "task": "toy", "model": model_cfg, "dleaf": config, "scene": scene,
                    "model_config_path": path_string(&model.model_config),
                    "dleaf_config_path": path_string(&dleaf.dleaf_config),
                }),
                seed: Some(model_cfg.rng_seed),
            })
        }
        Command::Run { task: Task::Planted, dleaf, planted, write_trace: with_trace, .. } => {
            let seed = seed.unwrap_or(DEFAULT_SEED);
            let config = dleaf.resolve()?;
            let (spec, scene) = (planted.spec(), planted.scene());
            let (task, outcome, report) = planted_run(&spec, &scene, seed, config.as_ref())?;
            let flagged: Vec<Vec<usize>> = outcome.logs.iter().map(|l| l.flagged_layers()).collect();
            let planted_layers: Vec<&Vec<usize>> = task.steps.iter().map(|s| &s.anomalous_layers).collect();
            write_json(&out.artifact("layers.json"), &json!({ "flagged": flagged, "planted": planted_layers }))?;
            if *with_trace {
                let records = task.trace_records()?;
                let header = dleaf_core::trace::TraceHeader::new(spec.num_layers, spec.num_heads, spec.span(), 1, "dleaf planted task");
                write_trace(&out.artifact("trace.ndjson"), &header, &records)?;
                write_labels(&out.artifact("labels.ndjson"), &records)?;
            }
            let summary = format!(
                "hallucinated {} -> {} of {} steps ({:.1}% reduction); detection precision {:.3}, recall {:.3}",
                report.hallucinated_before,
                report.hallucinated_after,
                report.steps,
                100.0 * report.reduction,
                report.precision,
                report.recall
            );
            Ok(Executed {
                output: CommandOutput::new(&report, summary),
                parameters: json!({
                    "task": "planted", "spec": spec, "scene": scene, "dleaf": config,
                    "dleaf_config_path": path_string(&dleaf.dleaf_config), "write_trace": with_trace,
                }),
                seed: Some(seed),
            })
        }
        Command::Sweep { axis, values, task, model, dleaf, planted } => {
            let grid = parse_grid(values)?;
            let base = dleaf.settings()?;
            let model_cfg = model_config(model, seed)?;
            let seed = seed.unwrap_or(DEFAULT_SEED);
            let (spec, scene) = (planted.spec(), planted.scene());
            let report = sweep(&SweepInputs {
                axis: *axis,
                grid: &grid,
                base: &base,
                task: *task,
                model: &model_cfg,
                planted: &spec,
                scene: &scene,
                seed,
            })?;
            let mut table = String::from("value\thallucinated_after\tcorrected_or_recall\n");
            for row in &report.rows {
                match (&row.planted, &row.toy) {
                    (Some(p), _) => table.push_str(&format!("{}\t{}\t{:.4}\n", row.value, p.hallucinated_after, p.recall)),
                    (_, Some(t)) => table.push_str(&format!("{}\t-\t{}\n", row.value, t.corrected_layers)),
                    _ => {}
                }
            }
            let path = out.artifact("sweep.tsv");
            std::fs::write(&path, &table).map_err(|e| LabError::io(&path, e))?;
            Ok(Executed {
                output: CommandOutput::new(&report, format!("{} grid points\n{}", report.rows.len(), table.trim_end())),
                parameters: json!({
                    "axis": axis, "grid": grid, "task": task, "base": base, "model": model_cfg,
                    "spec": spec, "scene": scene,
                    "model_config_path": path_string(&model.model_config),
                    "dleaf_config_path": path_string(&dleaf.dleaf_config),
                }),
                seed: Some(seed),
            })
        }
        Command::Analyze { trace, labels, top_k } => {
            let (header, mut records) = read_trace(trace)?;
            let join = match labels {
                Some(path) => attach_labels(&mut records, &read_labels(path)?),
                None => {
                    let count = |l| records.iter().filter(|r| r.label == l).count();
                    use dleaf_core::trace::Label;
                    LabelJoin { real: count(Label::Real), hallucinated: count(Label::Hallucinated), unlabeled: count(Label::Unlabeled) }
                }
            };
            let report = analyze(&records, join, *top_k)?;
            let mut summary = format!("{} records over {} layers", report.records, report.layers);
            if let Some(t) = &report.liae_test {
                summary.push_str(&format!("; LIAE hallucinated > real: W = {}, p = {:.3e}", t.statistic, t.p_value));
            }
            if let Some(rho) = report.liae_liaf_spearman {
                summary.push_str(&format!("; Spearman(LIAE, LIAF) = {rho:.4}"));
            }
            Ok(Executed {
                output: CommandOutput::new(&json!({ "header": header, "analysis": report }), summary),
                parameters: json!({ "trace": trace.display().to_string(), "labels": path_string(labels), "top_k": top_k }),
                seed: None,
            })
        }
        Command::Score { scorer: Scorer::Chair { captions, synonyms } } => {
            let report = score_chair(captions, synonyms.as_deref())?;
            let mut summary = format!("CHAIR_S = {:.4}, CHAIR_I = {:.4}", report.chair_s, report.chair_i);
            if report.no_mentions {
                summary.push_str(" (warning: no object mentions)");
            }
            Ok(Executed {
                output: CommandOutput::new(&report, summary),
                parameters: json!({ "captions": captions.display().to_string(), "synonyms": path_string(synonyms) }),
                seed: None,
            })
        }
        Command::Score { scorer: Scorer::Pope { items } } => {
            let report = score_pope(items)?;
            let summary = format!(
                "accuracy {:.4}, precision {:.4}, recall {:.4}, F1 {:.4}",
                report.accuracy, report.precision, report.recall, report.f1
            );
            Ok(Executed {
                output: CommandOutput::new(&report, summary),
                parameters: json!({ "items": items.display().to_string() }),
                seed: None,
            })
        }
        Command::DpoCheck { instances, dim, vocab, pairs, beta_dpo, eps } => {
            let params = DpoParams {
                instances: *instances,
                dim: *dim,
                vocab: *vocab,
                pairs: *pairs,
                beta: *beta_dpo,
                eps: *eps,
                seed: seed.unwrap_or(DEFAULT_SEED),
            };
            let report = dpo_check(&params)?;
            let summary = format!(
                "loss deviation {:.1e}, fd error {:.1e}, shared ratio deviation {:.1e}, gap series {:?}",
                report.max_loss_deviation, report.max_fd_relative_error, report.max_shared_ratio_deviation, report.feature_gap.gaps
            );
            let mut output = CommandOutput::new(&report, summary);
            output.failures = report.failures();
            Ok(Executed { output, parameters: json!(params), seed: Some(params.seed) })
        }
        Command::Throughput { model, dleaf, repetitions, tokens, max_overhead } => {
            let model_cfg = model_config(model, seed)?;
            let config = dleaf.settings()?.resolve()?;
            let params = ThroughputParams { repetitions: *repetitions, tokens: *tokens };
            let report = measure(&model_cfg, &config, &params)?;
            let s = report.measurements.summary;
            let summary = format!(
                "baseline {:.1} tok/s, hooked {:.1} tok/s, overhead {:.1}%",
                s.baseline_tps,
                s.hooked_tps,
                100.0 * s.overhead
            );
            let mut output = CommandOutput::new(&report, summary);
            if let Some(limit) = max_overhead {
                if s.overhead > *limit {
                    output.failures.push(format!("overhead {:.4} exceeds {limit}", s.overhead));
                }
            }
            Ok(Executed {
                output,
                parameters: json!({ "model": model_cfg, "dleaf": config, "params": params, "max_overhead": max_overhead }),
                seed: Some(model_cfg.rng_seed),
            })
        }
    }
}

/// Runs one parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> u8 {
    match run_inner(cli) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_inner(cli: &Cli) -> LabResult<bool> {
    let started = unix_millis();
    let name = cli.command.name();
    let mut out = OutputDir::create(&cli.out_dir, name)?;
    let executed = execute(&cli.command, cli.seed, &mut out)?;
    let output = &executed.output;
    let report_path = out.artifact(REPORT_FILE);
    let envelope = ReportEnvelope {
        subcommand: name,
        manifest: MANIFEST_FILE,
        passed: output.passed(),
        failures: &output.failures,
        result: &output.result,
    };
    write_json(&report_path, &envelope)?;
    let manifest = Manifest {
        tool: "dleaf",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: name.to_string(),
        seed: executed.seed,
        out_dir: out.root().display().to_string(),
        parameters: executed.parameters,
        artifacts: out.artifacts().to_vec(),
        passed: output.passed(),
        started_unix_ms: started,
        finished_unix_ms: unix_millis(),
    };
    write_json(&out.root().join(MANIFEST_FILE), &manifest)?;

    if cli.json {
        print!("{}", to_json_string(&envelope));
    } else {
        println!("{name}: {}", output.summary);
        for f in &output.failures {
            println!("FAILED: {f}");
        }
        println!("report: {}", report_path.display());
    }
    Ok(output.passed())
}

/// Parses `args` (without the program name) and runs them.
pub fn run_args<I, S>(args: I) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv = std::iter::once(std::ffi::OsString::from("dleaf")).chain(args.into_iter().map(Into::into));
    match Cli::try_parse_from(argv) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
    }
}

pub fn report_path(out_dir: &Path, subcommand: &str) -> PathBuf {
    out_dir.join(subcommand).join(REPORT_FILE)
}
