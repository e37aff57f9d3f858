// SPDX-License-Identifier: MIT OR Apache-2.0

//! Subcommands.
//!
//! Every random choice is derived from `--seed` through named streams
//! (`seed::stream(seed, tag)`): `"init"` for weights, `"preserved"` for the
//! preserved corpus, `"target"` and `"prompt"` for edit and trace prompts,
//! `"edit-layer"` for the demo's planting layer and `"probe"` for the probe
//! corpus. Trace trial `t` uses `trial_seed(seed, t)`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nse_metrics::{
    prefix_corpus, EditMode, EditReport, EditScenario, ScenarioConfig, ScenarioOutcome,
    ScenarioPlan,
};
use nse_nullspace::{build_projector, CovarianceAccumulator, DEFAULT_CUTOFF};
use nse_tensor::Matrix;
use nse_toymodel::corpus::random_prompt;
use nse_toymodel::seed::stream;
use nse_toymodel::{
    collect_keys, init_planner, plant_any, PlannerConfig, ToyPlanner, DEFAULT_MARGIN, DEFAULT_SEED,
};
use nse_tracing::{
    causal_impact, localize, rank_layers, LocalizationCase, RankWeights, TraceConfig,
    LOCALIZATION_PROMPT_LEN,
};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::format::{encode_csv, encode_nsm1, encode_nsp1, read_matrix, read_nsm1, write_atomic};
use crate::{CliError, Result};

/// Drift and KL limits the demo must meet to exit 0.
pub const DEMO_MAX_DRIFT: f64 = 0.01;
pub const DEMO_MAX_KL: f64 = 1e-3;

/// Hidden width used by `demo` when `--d-hidden` is absent. The demo needs a
/// key space wider than its preserved corpus.
pub const DEMO_D_HIDDEN: usize = 512;

pub const EDIT_META: &str = "edit.json";

#[derive(Debug, Parser)]
#[command(
    name = "nse",
    version,
    about = "Null-space constrained editing of a seeded toy planner"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the preserved corpus and write its keys at one layer.
    Collect(RunConfig),
    /// Read a key matrix and write the null-space projector (NSP1).
    Projector(RunConfig),
    /// Per-layer causal impact, probe accuracy and gradient norm.
    Trace(RunConfig),
    /// Plant (optionally), solve v*, edit, and write checkpoints and ΔW.
    Edit(RunConfig),
    /// Score an edit directory and print the report as JSON.
    Verify(RunConfig),
    /// Seeded end-to-end plant, trace, edit and verify.
    Demo(RunConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum MatrixFormat {
    Csv,
    #[default]
    Bin,
}

#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_hidden: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Layer to collect at or edit. Defaults to the planting layer, or the
    /// middle layer.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Relative eigenvalue cutoff of the projector.
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    pub eps: f64,
    #[arg(long, default_value_t = nse_editor::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    /// Noise standard deviation in units of the embedding std.
    #[arg(long, default_value_t = 3.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Preserved prompts; defaults to 7/8 of the hidden width.
    #[arg(long)]
    pub corpus_size: Option<usize>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MatrixFormat::Bin)]
    pub format: MatrixFormat,
    /// Unconstrained rank-one edit.
    #[arg(long)]
    pub naive: bool,
    /// Load the model from a checkpoint directory instead of `--seed`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated token ids.
    #[arg(long, value_delimiter = ',')]
    pub prompt: Option<Vec<usize>>,
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long)]
    pub plant_layer: Option<usize>,
    /// `verify`: checkpoint to compare from, overriding `<in>/before`.
    #[arg(long)]
    pub before: Option<PathBuf>,
    /// `verify`: checkpoint to compare to, overriding `<in>/after`.
    #[arg(long)]
    pub after: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            d_model: None,
            d_hidden: None,
            vocab: None,
            layers: None,
            layer: None,
            eps: DEFAULT_CUTOFF,
            tau: nse_editor::DEFAULT_TAU,
            margin: DEFAULT_MARGIN,
            noise_sigma: 3.0,
            trials: 10,
            corpus_size: None,
            input: None,
            out: None,
            format: MatrixFormat::Bin,
            naive: false,
            checkpoint: None,
            prompt: None,
            target: None,
            plant_layer: None,
            before: None,
            after: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

impl RunConfig {
    /// # Errors
    ///
    /// [`CliError::Invalid`] for out-of-range numbers or empty paths.
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(invalid(format!("--eps {} must lie in (0, 1)", self.eps)));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(invalid(format!("--tau {} must be positive", self.tau)));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(invalid(format!(
                "--margin {} must be positive",
                self.margin
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(invalid(format!(
                "--noise-sigma {} must be non-negative",
                self.noise_sigma
            )));
        }
        if self.trials == 0 {
            return Err(invalid("--trials must be at least 1"));
        }
        if self.corpus_size == Some(0) {
            return Err(invalid("--corpus-size must be at least 1"));
        }
        for (name, v) in [
            ("--d-model", self.d_model),
            ("--d-hidden", self.d_hidden),
            ("--vocab", self.vocab),
            ("--layers", self.layers),
        ] {
            if v == Some(0) {
                return Err(invalid(format!("{name} must be at least 1")));
            }
        }
        let paths = [
            &self.input,
            &self.out,
            &self.checkpoint,
            &self.before,
            &self.after,
        ];
        if paths
            .iter()
            .any(|p| p.as_ref().is_some_and(|p| p.as_os_str().is_empty()))
        {
            return Err(invalid("paths must be nonempty"));
        }
        if self.prompt.as_ref().is_some_and(|p| p.is_empty()) {
            return Err(invalid("--prompt must list at least one token"));
        }
        Ok(())
    }

    fn planner_config(&self, d_hidden_default: usize) -> PlannerConfig {
        let d = PlannerConfig::default();
        PlannerConfig {
            d_model: self.d_model.unwrap_or(d.d_model),
            d_hidden: self.d_hidden.unwrap_or(d_hidden_default),
            vocab: self.vocab.unwrap_or(d.vocab),
            layers: self.layers.unwrap_or(d.layers),
            seed: self.seed,
            ..d
        }
    }

    /// The checkpoint if given, else a fresh planner from `--seed`.
    ///
    /// # Errors
    ///
    /// Checkpoint errors, or dimension flags that disagree with it.
    pub fn model(&self, d_hidden_default: usize) -> Result<ToyPlanner> {
        let Some(dir) = &self.checkpoint else {
            return Ok(init_planner(&self.planner_config(d_hidden_default))?);
        };
        let m = load_checkpoint(dir)?;
        let c = m.config();
        for (name, flag, have) in [
            ("--d-model", self.d_model, c.d_model),
            ("--d-hidden", self.d_hidden, c.d_hidden),
            ("--vocab", self.vocab, c.vocab),
            ("--layers", self.layers, c.layers),
        ] {
            if flag.is_some_and(|f| f != have) {
                return Err(invalid(format!(
                    "{name} disagrees with checkpoint value {have}"
                )));
            }
        }
        Ok(m)
    }

    fn scenario_config(&self, model: &ToyPlanner) -> ScenarioConfig {
        let c = model.config();
        ScenarioConfig {
            d_model: c.d_model,
            d_hidden: c.d_hidden,
            vocab: c.vocab,
            layers: c.layers,
            margin: self.margin,
            cutoff: self.eps,
            tau: self.tau,
            preserved_keys: self.corpus_size,
            ..ScenarioConfig::default()
        }
    }

    fn trace_config(&self) -> TraceConfig {
        TraceConfig {
            noise_sigma_scale: self.noise_sigma,
            trials: self.trials,
            seed: self.seed,
            ..TraceConfig::default()
        }
    }

    fn need_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| invalid("--out is required"))
    }

    fn need_in(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| invalid("--in is required"))
    }

    fn corpus_size(&self, model: &ToyPlanner) -> usize {
        self.corpus_size.unwrap_or(model.config().d_hidden * 7 / 8)
    }
}

fn default_layer(model: &ToyPlanner) -> usize {
    model.layers() / 2
}

/// # Errors
///
/// Any command failure.
pub fn run(cli: &Cli) -> Result<()> {
    let out = match &cli.command {
        Command::Collect(c) => cmd_collect(c)?,
        Command::Projector(c) => cmd_projector(c)?,
        Command::Trace(c) => cmd_trace(c)?,
        Command::Edit(c) => cmd_edit(c)?,
        Command::Verify(c) => cmd_verify(c)?,
        Command::Demo(c) => {
            let (text, pass) = cmd_demo(c)?;
            print!("{text}");
            if !pass {
                return Err(CliError::Thresholds("demo thresholds not met".into()));
            }
            return Ok(());
        }
    };
    print!("{out}");
    Ok(())
}

/// Keys of the first `corpus_size` preserved prompts at the chosen layer.
///
/// # Errors
///
/// Config and model errors.
pub fn collected_keys(cfg: &RunConfig) -> Result<(Matrix, usize)> {
    cfg.validate()?;
    let model = cfg.model(PlannerConfig::default().d_hidden)?;
    let layer = cfg.layer.unwrap_or_else(|| default_layer(&model));
    model.check_layer(layer)?;
    let n = cfg.corpus_size(&model);
    let sc = cfg.scenario_config(&model);
    let mut prompts = prefix_corpus(&mut stream(cfg.seed, "preserved"), &sc, n, &[]);
    prompts.truncate(n);
    Ok((collect_keys(&model, &prompts, layer)?, layer))
}

pub fn cmd_collect(cfg: &RunConfig) -> Result<String> {
    let out = cfg.need_out()?;
    let (keys, layer) = collected_keys(cfg)?;
    match cfg.format {
        MatrixFormat::Bin => write_atomic(out, &encode_nsm1(&keys))?,
        MatrixFormat::Csv => write_atomic(out, encode_csv(&keys).as_bytes())?,
    }
    Ok(format!(
        "collect: keys {}x{} at layer {layer} -> {}\n",
        keys.rows(),
        keys.cols(),
        out.display()
    ))
}

pub fn cmd_projector(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let input = cfg.need_in()?;
    let out = cfg.need_out()?;
    let keys = read_matrix(input)?;
    let acc = CovarianceAccumulator::from_keys(&keys)?;
    let proj = build_projector(&acc, cfg.eps)?;
    write_atomic(out, &encode_nsp1(&proj))?;
    Ok(format!(
        "projector: d {}, null rank {}, cutoff {:e} -> {}\n",
        proj.dim(),
        proj.null_rank(),
        proj.cutoff(),
        out.display()
    ))
}

fn trace_prompt(cfg: &RunConfig, model: &ToyPlanner) -> Result<Vec<usize>> {
    let p = match &cfg.prompt {
        Some(p) => p.clone(),
        None => random_prompt(
            &mut stream(cfg.seed, "prompt"),
            model.config().vocab,
            LOCALIZATION_PROMPT_LEN..=LOCALIZATION_PROMPT_LEN,
        ),
    };
    model.check_tokens(&p)?;
    Ok(p)
}

/// Per-layer CSV, bar chart and combined ranking.
pub fn cmd_trace(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let model = cfg.model(PlannerConfig::default().d_hidden)?;
    let prompt = trace_prompt(cfg, &model)?;
    let (planted, layer, token) = match cfg.plant_layer {
        Some(pl) => {
            let p = plant_any(&model, &prompt, pl, cfg.margin, 0)?;
            (p.model, pl, p.token)
        }
        None => {
            let top = model.forward(&prompt)?.argmax();
            let l = cfg.layer.unwrap_or(0);
            (model.clone(), l, top)
        }
    };
    let token = cfg.target.unwrap_or(token);
    let case = LocalizationCase {
        seed: cfg.seed,
        clean: model,
        planted,
        prompt,
        layer,
        token,
    };
    let profile = localize(&case, &cfg.trace_config())?;
    let csv = profile.to_csv();
    let mut s = String::new();
    match &cfg.out {
        Some(out) => {
            write_atomic(out, csv.as_bytes())?;
            let _ = writeln!(
                s,
                "trace: {} layers -> {}",
                profile.layers.len(),
                out.display()
            );
        }
        None => s.push_str(&csv),
    }
    s.push_str(&profile.bar_chart());
    let ranking = rank_layers(&profile, RankWeights::default())?;
    let _ = writeln!(s, "traced token {token}; ranking {ranking:?}");
    if let Some(l) = profile.argmax_impact() {
        let _ = writeln!(s, "argmax impact layer {l}");
    }
    Ok(s)
}

/// What `edit` records next to its checkpoints so `verify` can rebuild the
/// corpora. `v*` is stored separately in `value.nsm1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditMeta {
    pub seed: u64,
    pub mode: String,
    pub layer: usize,
    pub plant_layer: Option<usize>,
    pub prompt: Vec<usize>,
    pub target: usize,
    pub replaced: usize,
    pub attempts: u32,
    pub margin: f64,
    pub cutoff: f64,
    pub tau: f64,
    pub corpus_size: Option<usize>,
}

/// Build the scenario for `edit` and run it.
///
/// # Errors
///
/// Config, planting, editor errors; `DegenerateKey` when the key is
/// preserved.
pub fn edit_outcome(cfg: &RunConfig) -> Result<(EditScenario, ScenarioOutcome)> {
    cfg.validate()?;
    let model = cfg.model(PlannerConfig::default().d_hidden)?;
    let prompt = match &cfg.prompt {
        Some(p) => p.clone(),
        None => random_prompt(
            &mut stream(cfg.seed, "target"),
            model.config().vocab,
            ScenarioConfig::default().prompt_len..=ScenarioConfig::default().prompt_len,
        ),
    };
    model.check_tokens(&prompt)?;
    let edit_layer = cfg
        .layer
        .or(cfg.plant_layer)
        .unwrap_or_else(|| default_layer(&model));
    let sc = cfg.scenario_config(&model);
    let plan = ScenarioPlan {
        prompt,
        edit_layer,
        plant_layer: cfg.plant_layer,
        target: cfg.target,
    };
    let scenario = EditScenario::from_plan(cfg.seed, &sc, model, plan)?;
    let mode = if cfg.naive {
        EditMode::Naive
    } else {
        EditMode::Constrained
    };
    let outcome = scenario.run(mode)?;
    Ok((scenario, outcome))
}

fn mode_name(m: EditMode) -> &'static str {
    match m {
        EditMode::Constrained => "constrained",
        EditMode::Naive => "naive",
    }
}

fn to_json(v: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| invalid(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Writes `before/`, `after/`, `delta.nsm1`, `value.nsm1`, `edit.json` and
/// `report.json` under `--out`.
pub fn cmd_edit(cfg: &RunConfig) -> Result<String> {
    let out = cfg.need_out()?.to_path_buf();
    let (sc, o) = edit_outcome(cfg)?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    save_checkpoint(&out.join("before"), &sc.planted)?;
    save_checkpoint(&out.join("after"), &o.edited)?;
    write_atomic(&out.join("delta.nsm1"), &encode_nsm1(&o.delta))?;
    write_atomic(
        &out.join("value.nsm1"),
        &encode_nsm1(&Matrix::column_vector(&o.value)),
    )?;
    let meta = EditMeta {
        seed: cfg.seed,
        mode: mode_name(o.mode).into(),
        layer: sc.layer,
        plant_layer: cfg.plant_layer,
        prompt: sc.prompt.clone(),
        target: sc.correct_token,
        replaced: sc.wrong_token,
        attempts: o.attempts,
        margin: cfg.margin,
        cutoff: cfg.eps,
        tau: cfg.tau,
        corpus_size: cfg.corpus_size,
    };
    write_atomic(&out.join(EDIT_META), to_json(&meta)?.as_bytes())?;
    write_atomic(&out.join("report.json"), to_json(&o.report)?.as_bytes())?;
    Ok(format!(
        "edit ({}) at layer {}: token {} -> {}; {}\n",
        mode_name(o.mode),
        sc.layer,
        sc.wrong_token,
        sc.correct_token,
        o.report.summary_line()
    ))
}

/// Rebuild the corpora recorded in an edit directory and score the edit.
///
/// # Errors
///
/// IO and format errors, mismatched checkpoints.
pub fn verify_report(cfg: &RunConfig) -> Result<EditReport> {
    cfg.validate()?;
    let dir = cfg.need_in()?;
    let meta_path = dir.join(EDIT_META);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| CliError::io(&meta_path, e))?;
    let meta: EditMeta =
        serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{EDIT_META}: {e}")))?;
    let before_dir = cfg.before.clone().unwrap_or_else(|| dir.join("before"));
    let after_dir = cfg.after.clone().unwrap_or_else(|| dir.join("after"));
    let before = load_checkpoint(&before_dir)?;
    let after = load_checkpoint(&after_dir)?;
    if before.config() != after.config() {
        return Err(invalid(
            "before and after checkpoints have different configs",
        ));
    }
    before.check_layer(meta.layer)?;
    let delta = if cfg.before.is_none() && cfg.after.is_none() {
        read_nsm1(&dir.join("delta.nsm1"))?
    } else {
        after
            .block(meta.layer)
            .w2()
            .sub(before.block(meta.layer).w2())?
    };
    let value = read_nsm1(&dir.join("value.nsm1"))?;
    let sc_cfg = RunConfig {
        margin: meta.margin,
        eps: meta.cutoff,
        tau: meta.tau,
        corpus_size: meta.corpus_size,
        ..RunConfig::default()
    }
    .scenario_config(&before);
    let plan = ScenarioPlan {
        prompt: meta.prompt.clone(),
        edit_layer: meta.layer,
        plant_layer: None,
        target: Some(meta.target),
    };
    let sc = EditScenario::from_plan(meta.seed, &sc_cfg, before.clone(), plan)?;
    let target = nse_metrics::EditTarget {
        prompt: &meta.prompt,
        token: meta.target,
        value: value.data(),
    };
    Ok(nse_metrics::verify_edit(
        &before,
        &after,
        meta.layer,
        &delta,
        &sc.k0_heldout,
        &target,
        &sc.preserved,
    )?)
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<String> {
    let report = verify_report(cfg)?;
    let json = to_json(&report)?;
    if let Some(out) = &cfg.out {
        write_atomic(out, json.as_bytes())?;
    }
    Ok(json)
}

/// Result of the demo pipeline.
#[derive(Debug, Clone)]
pub struct DemoRun {
    pub scenario: EditScenario,
    pub outcome: ScenarioOutcome,
    pub planted_layer: usize,
    pub traced_layer: usize,
}

impl DemoRun {
    pub fn passes(&self) -> bool {
        let r = &self.outcome.report;
        r.edit_succeeded
            && r.preserved_argmax_drift <= DEMO_MAX_DRIFT
            && r.preserved_kl_mean <= DEMO_MAX_KL
    }
}

/// Plant at the seeded layer, trace to pick the edit layer, then collect,
/// build the projector, edit and verify there.
///
/// # Errors
///
/// Any pipeline failure.
pub fn demo_run(cfg: &RunConfig) -> Result<DemoRun> {
    cfg.validate()?;
    if cfg.checkpoint.is_some() {
        return Err(invalid(
            "demo builds its own model; --checkpoint is not accepted",
        ));
    }
    let pc = cfg.planner_config(DEMO_D_HIDDEN);
    let mut sc = ScenarioConfig {
        d_model: pc.d_model,
        d_hidden: pc.d_hidden,
        vocab: pc.vocab,
        layers: pc.layers,
        ..ScenarioConfig::default()
    };
    sc.margin = cfg.margin;
    sc.cutoff = cfg.eps;
    sc.tau = cfg.tau;
    sc.preserved_keys = cfg.corpus_size;
    let (clean, mut plan) = EditScenario::draw(cfg.seed, &sc)?;
    if let Some(p) = &cfg.prompt {
        plan.prompt = p.clone();
    }
    if let Some(l) = cfg.plant_layer {
        plan.plant_layer = Some(l);
    }
    let planted_layer = plan.plant_layer.unwrap_or(plan.edit_layer);
    let planted = plant_any(&clean, &plan.prompt, planted_layer, sc.margin, 0)?;
    let traced_layer = match cfg.layer {
        Some(l) => l,
        None => causal_impact(
            &planted.model,
            &plan.prompt,
            planted.token,
            &cfg.trace_config(),
        )?
        .argmax_impact()
        .unwrap_or(planted_layer),
    };
    plan.edit_layer = traced_layer;
    plan.plant_layer = Some(planted_layer);
    let scenario = EditScenario::from_plan(cfg.seed, &sc, clean, plan)?;
    let mode = if cfg.naive {
        EditMode::Naive
    } else {
        EditMode::Constrained
    };
    let outcome = scenario.run(mode)?;
    Ok(DemoRun {
        scenario,
        outcome,
        planted_layer,
        traced_layer,
    })
}

/// Summary text and whether the thresholds were met.
pub fn cmd_demo(cfg: &RunConfig) -> Result<(String, bool)> {
    let d = demo_run(cfg)?;
    let sc = &d.scenario;
    let o = &d.outcome;
    let c = sc.clean.config();
    let probs = |m: &ToyPlanner| -> Result<Vec<f64>> { Ok(m.forward(&sc.prompt)?.probs) };
    let (pc, pp, pe) = (probs(&sc.clean)?, probs(&sc.planted)?, probs(&o.edited)?);
    let top = |p: &[f64]| nse_toymodel::argmax(p);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "demo seed {}: d_model {}, d_hidden {}, vocab {}, layers {}",
        sc.seed, c.d_model, c.d_hidden, c.vocab, c.layers
    );
    let _ = writeln!(s, "prompt {:?}", sc.prompt);
    let _ = writeln!(
        s,
        "planted layer {}, traced layer {}",
        d.planted_layer, d.traced_layer
    );
    let _ = writeln!(
        s,
        "preserved prompts {}, null rank {} of {}",
        sc.preserved.len(),
        sc.projector.null_rank(),
        sc.projector.dim()
    );
    let _ = writeln!(
        s,
        "{:<12}{:>12}{:>12}{:>12}",
        "",
        "clean",
        "planted",
        mode_name(o.mode)
    );
    let _ = writeln!(
        s,
        "{:<12}{:>12}{:>12}{:>12}",
        "prediction",
        top(&pc),
        top(&pp),
        top(&pe)
    );
    let t = sc.correct_token;
    let _ = writeln!(
        s,
        "{:<12}{:>12.4}{:>12.4}{:>12.4}",
        format!("p({t})"),
        pc[t],
        pp[t],
        pe[t]
    );
    let w = sc.wrong_token;
    let _ = writeln!(
        s,
        "{:<12}{:>12.4}{:>12.4}{:>12.4}",
        format!("p({w})"),
        pc[w],
        pp[w],
        pe[w]
    );
    let _ = writeln!(s, "{}", o.report.summary_line());
    let pass = d.passes();
    let _ = writeln!(
        s,
        "thresholds: drift <= {DEMO_MAX_DRIFT}, kl <= {DEMO_MAX_KL}, success -> {}",
        if pass { "PASS" } else { "FAIL" }
    );
    if let Some(out) = &cfg.out {
        write_atomic(out, to_json(&o.report)?.as_bytes())?;
    }
    Ok((s, pass))
}
