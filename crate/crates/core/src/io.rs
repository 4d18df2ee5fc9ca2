//! Model and policy files, CSV reports and the experiment runner behind the
//! command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::RelaxedControl;
use crate::dtmdp::{continuity_probe, example_a1_controls, example_a1_model, DtState, ProbeFunction, ProbeRow, YoungFamily};
use crate::model::{validate_model, ActionDistribution, ModelError, PdmdpModel, PostJump, StatePoint, Violation};
use crate::sim::{
    simulate_paths, History, Limits, MarkovPolicy, MonteCarlo, Policy, ScriptedPolicy, StationaryPolicy,
};
use crate::solver::{solve_direct, solve_via_auxiliary, SolverConfig, SolverError, Value};
use crate::uniformizer::{build_auxiliary, equivalence_test, EquivalenceConfig, Statistic};

/// Models shipped with the crate.
pub mod bundled {
    pub const CTMDP2: &str = include_str!("../models/ctmdp2.json");
    pub const CTMDP2_DIVERGENT: &str = include_str!("../models/ctmdp2_divergent.json");
    pub const DRIFTLINE: &str = include_str!("../models/driftline.json");
    pub const EXAMPLE_A1: &str = include_str!("../models/example_a1.json");
    pub const CTMDP2_SWITCH_POLICY: &str = include_str!("../models/ctmdp2_switch.policy.json");
    pub const DRIFTLINE_SWITCH_POLICY: &str = include_str!("../models/driftline_switch.policy.json");
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Structure { path: String, source: ModelError },
    #[error("{path}: invalid model:{}", list(.violations))]
    Invalid { path: String, violations: Vec<Violation> },
    #[error("{path}: {message}")]
    Policy { path: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
}

fn list(vs: &[Violation]) -> String {
    vs.iter().map(|v| format!("\n  - {v}")).collect()
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Parse {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostJumpRecord {
    Keep,
    Reset,
    Set(f64),
}

impl From<PostJumpRecord> for PostJump {
    fn from(r: PostJumpRecord) -> Self {
        match r {
            PostJumpRecord::Keep => PostJump::Keep,
            PostJumpRecord::Reset => PostJump::Reset,
            PostJumpRecord::Set(k) => PostJump::Set(k),
        }
    }
}

impl From<PostJump> for PostJumpRecord {
    fn from(r: PostJump) -> Self {
        match r {
            PostJump::Keep => PostJumpRecord::Keep,
            PostJump::Reset => PostJumpRecord::Reset,
            PostJump::Set(k) => PostJumpRecord::Set(k),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateRecord {
    pub from_mode: String,
    pub cell_index: usize,
    pub action: String,
    pub to_mode: String,
    pub rate: f64,
    pub post_jump: PostJumpRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostRecord {
    pub mode: String,
    pub cell_index: usize,
    pub action: String,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagonalRecord {
    pub mode: String,
    pub cell_index: usize,
    pub action: String,
    pub value: f64,
}

/// On-disk model. Rate and cost entries not listed are 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub modes: Vec<String>,
    pub actions: Vec<String>,
    #[serde(default)]
    pub drift: BTreeMap<String, f64>,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub rates: Vec<RateRecord>,
    #[serde(default)]
    pub costs: Vec<CostRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagonal: Vec<DiagonalRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_values: Option<Vec<f64>>,
}

impl ModelFile {
    pub fn build(&self) -> Result<PdmdpModel, ModelError> {
        let mut b = PdmdpModel::builder(self.modes.clone(), self.actions.clone());
        for (m, v) in &self.drift {
            b = b.drift(m, *v);
        }
        for (m, g) in &self.grid {
            b = b.grid(m, g.clone());
        }
        for r in &self.rates {
            b = b.rate(&r.from_mode, r.cell_index, &r.action, &r.to_mode, r.rate, r.post_jump.into());
        }
        for c in &self.costs {
            b = b.cost(&c.mode, c.cell_index, &c.action, c.cost);
        }
        for d in &self.diagonal {
            b = b.diagonal(&d.mode, d.cell_index, &d.action, d.value);
        }
        if let Some(v) = &self.action_values {
            b = b.action_values(v.clone());
        }
        b.build()
    }

    pub fn from_model(model: &PdmdpModel) -> Self {
        let modes = model.modes().to_vec();
        let actions = model.actions().labels().to_vec();
        let drift = modes
            .iter()
            .enumerate()
            .map(|(m, name)| (name.clone(), model.flow().drift(m)))
            .collect();
        let grid = modes
            .iter()
            .enumerate()
            .filter(|(m, _)| !model.grid().breakpoints(*m).is_empty())
            .map(|(m, name)| (name.clone(), model.grid().breakpoints(m).to_vec()))
            .collect();
        let mut rates = Vec::new();
        let mut costs = Vec::new();
        for (m, mode) in modes.iter().enumerate() {
            for cell in 0..model.grid().cell_count(m) {
                for (a, action) in actions.iter().enumerate() {
                    for e in model.kernel().entries(m, cell, a) {
                        rates.push(RateRecord {
                            from_mode: mode.clone(),
                            cell_index: cell,
                            action: action.clone(),
                            to_mode: modes[e.to_mode].clone(),
                            rate: e.rate,
                            post_jump: e.post_jump.into(),
                        });
                    }
                    let c = model.cost_rate().get(m, cell, a);
                    if c != 0.0 {
                        costs.push(CostRecord {
                            mode: mode.clone(),
                            cell_index: cell,
                            action: action.clone(),
                            cost: c,
                        });
                    }
                }
            }
        }
        let diagonal = model
            .kernel()
            .declared_diagonal()
            .iter()
            .map(|d| DiagonalRecord {
                mode: modes[d.mode].clone(),
                cell_index: d.cell,
                action: actions[d.action].clone(),
                value: d.value,
            })
            .collect();
        Self {
            modes,
            actions,
            drift,
            grid,
            rates,
            costs,
            diagonal,
            action_values: model.action_values().map(<[f64]>::to_vec),
        }
    }
}

/// Parse and validate a model; `origin` names the source in errors.
pub fn parse_model(text: &str, origin: &str) -> Result<PdmdpModel, IoError> {
    let file: ModelFile = parse_json(text, origin)?;
    let model = file.build().map_err(|source| IoError::Structure {
        path: origin.to_string(),
        source,
    })?;
    let violations = validate_model(&model);
    if !violations.is_empty() {
        return Err(IoError::Invalid {
            path: origin.to_string(),
            violations,
        });
    }
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<PdmdpModel, IoError> {
    parse_model(&read(path)?, &path.display().to_string())
}

pub fn model_to_json(model: &PdmdpModel) -> String {
    serde_json::to_string_pretty(&ModelFile::from_model(model)).expect("model files always serialize")
}

pub fn write_model(model: &PdmdpModel, path: &Path) -> Result<(), IoError> {
    fs::write(path, model_to_json(model) + "\n").map_err(|source| IoError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// An action label or a map from labels to weights.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum DistRecord {
    Action(String),
    Weights(BTreeMap<String, f64>),
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseRecord {
    #[serde(default)]
    pub breakpoints: Vec<f64>,
    #[serde(default)]
    pub segments: Vec<DistRecord>,
    pub tail: DistRecord,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ControlRecord {
    Constant(DistRecord),
    Piecewise(PiecewiseRecord),
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum CellsRecord {
    All(DistRecord),
    PerCell(Vec<DistRecord>),
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleRecord {
    /// Inclusive jump-count range; open ends when absent.
    #[serde(default)]
    pub min_jump: Option<usize>,
    #[serde(default)]
    pub max_jump: Option<usize>,
    /// Mode of the current state.
    #[serde(default)]
    pub mode: Option<String>,
    /// `[lo, hi)` for the current position.
    #[serde(default)]
    pub position: Option<[f64; 2]>,
    pub control: ControlRecord,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyFile {
    DeterministicStationary {
        table: BTreeMap<String, CellsRecord>,
    },
    RandomizedStationary {
        #[serde(default)]
        uniform: bool,
        #[serde(default)]
        table: BTreeMap<String, CellsRecord>,
    },
    MarkovPiecewise {
        by_jump: Vec<ControlRecord>,
    },
    Scripted {
        #[serde(default)]
        rules: Vec<RuleRecord>,
        default: ControlRecord,
    },
}

struct Resolver<'a> {
    model: &'a PdmdpModel,
    origin: &'a str,
}

impl Resolver<'_> {
    fn err(&self, message: impl Into<String>) -> IoError {
        IoError::Policy {
            path: self.origin.to_string(),
            message: message.into(),
        }
    }

    fn action(&self, label: &str) -> Result<usize, IoError> {
        self.model
            .actions()
            .index_of(label)
            .ok_or_else(|| self.err(format!("unknown action `{label}`")))
    }

    fn mode(&self, label: &str) -> Result<usize, IoError> {
        self.model
            .mode_index(label)
            .ok_or_else(|| self.err(format!("unknown mode `{label}`")))
    }

    fn dist(&self, d: &DistRecord) -> Result<ActionDistribution, IoError> {
        let n = self.model.action_count();
        match d {
            DistRecord::Action(a) => Ok(ActionDistribution::dirac(n, self.action(a)?)),
            DistRecord::Weights(w) => {
                let mut weights = vec![0.0; n];
                for (a, p) in w {
                    weights[self.action(a)?] = *p;
                }
                ActionDistribution::new(weights).map_err(|e| self.err(e.to_string()))
            }
        }
    }

    fn control(&self, c: &ControlRecord) -> Result<RelaxedControl, IoError> {
        match c {
            ControlRecord::Constant(d) => Ok(RelaxedControl::constant(self.dist(d)?)),
            ControlRecord::Piecewise(p) => {
                let segments = p.segments.iter().map(|d| self.dist(d)).collect::<Result<Vec<_>, _>>()?;
                RelaxedControl::new(p.breakpoints.clone(), segments, self.dist(&p.tail)?)
                    .map_err(|e| self.err(e.to_string()))
            }
        }
    }

    fn stationary(&self, table: &BTreeMap<String, CellsRecord>, deterministic: bool) -> Result<StationaryPolicy, IoError> {
        for name in table.keys() {
            self.mode(name)?;
        }
        let mut rows = Vec::with_capacity(self.model.mode_count());
        for (m, name) in self.model.modes().iter().enumerate() {
            let cells = self.model.grid().cell_count(m);
            let rec = table
                .get(name)
                .ok_or_else(|| self.err(format!("no entry for mode `{name}`")))?;
            let row = match rec {
                CellsRecord::All(d) => vec![self.dist(d)?; cells],
                CellsRecord::PerCell(ds) => {
                    if ds.len() != cells {
                        return Err(self.err(format!("mode `{name}` has {cells} cells, {} entries given", ds.len())));
                    }
                    ds.iter().map(|d| self.dist(d)).collect::<Result<_, _>>()?
                }
            };
            if deterministic && row.iter().any(|d| d.as_dirac().is_none()) {
                return Err(self.err(format!("mode `{name}`: deterministic policy needs single actions")));
            }
            rows.push(row);
        }
        StationaryPolicy::on_model_cells(self.model, rows).map_err(|e| self.err(e.to_string()))
    }
}

pub fn parse_policy(text: &str, model: &PdmdpModel, origin: &str) -> Result<Policy, IoError> {
    let file: PolicyFile = parse_json(text, origin)?;
    let r = Resolver { model, origin };
    match file {
        PolicyFile::DeterministicStationary { table } => Ok(Policy::DeterministicStationary(r.stationary(&table, true)?)),
        PolicyFile::RandomizedStationary { uniform, table } => {
            if uniform {
                if !table.is_empty() {
                    return Err(r.err("`uniform` and `table` are exclusive"));
                }
                let n = model.action_count();
                let rows = (0..model.mode_count())
                    .map(|m| vec![ActionDistribution::uniform(n); model.grid().cell_count(m)])
                    .collect();
                let p = StationaryPolicy::on_model_cells(model, rows).map_err(|e| r.err(e.to_string()))?;
                Ok(Policy::RandomizedStationary(p))
            } else {
                Ok(Policy::RandomizedStationary(r.stationary(&table, false)?))
            }
        }
        PolicyFile::MarkovPiecewise { by_jump } => {
            let controls = by_jump.iter().map(|c| r.control(c)).collect::<Result<Vec<_>, _>>()?;
            Ok(Policy::MarkovPiecewise(
                MarkovPolicy::new(controls).map_err(|e| r.err(e.to_string()))?,
            ))
        }
        PolicyFile::Scripted { rules, default } => {
            let mut compiled = Vec::with_capacity(rules.len());
            for rule in &rules {
                let mode = rule.mode.as_deref().map(|m| r.mode(m)).transpose()?;
                compiled.push((rule.min_jump, rule.max_jump, mode, rule.position, r.control(&rule.control)?));
            }
            let default = r.control(&default)?;
            Ok(Policy::Scripted(ScriptedPolicy::new(move |h: &History<StatePoint>| {
                let n = h.jumps();
                let x = h.last_state();
                compiled
                    .iter()
                    .find(|(lo, hi, mode, pos, _)| {
                        lo.is_none_or(|lo| n >= lo)
                            && hi.is_none_or(|hi| n <= hi)
                            && mode.is_none_or(|m| m == x.mode)
                            && pos.is_none_or(|[a, b]| a <= x.position && x.position < b)
                    })
                    .map_or(&default, |rule| &rule.4)
                    .clone()
            })))
        }
    }
}

pub fn load_policy(path: &Path, model: &PdmdpModel) -> Result<Policy, IoError> {
    parse_policy(&read(path)?, model, &path.display().to_string())
}

/// `MODE:POS`, with the mode given by label.
pub fn parse_state(model: &PdmdpModel, text: &str) -> Result<StatePoint, IoError> {
    let (mode, pos) = text
        .rsplit_once(':')
        .ok_or_else(|| IoError::Usage(format!("state `{text}` is not of the form MODE:POS")))?;
    let m = model
        .mode_index(mode)
        .ok_or_else(|| IoError::Usage(format!("unknown mode `{mode}` in state `{text}`")))?;
    let p: f64 = pos
        .parse()
        .map_err(|_| IoError::Usage(format!("bad position `{pos}` in state `{text}`")))?;
    if !p.is_finite() {
        return Err(IoError::Usage(format!("position in `{text}` must be finite")));
    }
    Ok(StatePoint::new(m, p))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Write {
            path: dir.display().to_string(),
            source,
        })?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| IoError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn fmt_value(v: Value) -> String {
    match v {
        Value::Finite(x) => x.to_string(),
        Value::Infinite => "INF".to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMode {
    Direct,
    Auxiliary,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProbeSource {
    /// The built-in two-point example, optionally uniformized at rate `shift`.
    ExampleA1 { ns: Vec<usize>, shift: Option<f64> },
    /// A model with a control-sequence file and an optional test-function file.
    Files {
        model: PathBuf,
        controls: PathBuf,
        f: Option<PathBuf>,
        shift: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Validate {
        model: PathBuf,
    },
    Simulate {
        model: PathBuf,
        policy: PathBuf,
        x0: String,
        paths: usize,
        max_jumps: usize,
        horizon: f64,
        out: PathBuf,
    },
    Equivalence {
        model: PathBuf,
        policy: PathBuf,
        lambda: f64,
        x0: String,
        paths: usize,
        depth: usize,
        horizon: f64,
        out: PathBuf,
    },
    Solve {
        model: PathBuf,
        mode: SolveMode,
        lambda: f64,
        tolerance: f64,
        depth: usize,
        values_out: PathBuf,
        policy_out: Option<PathBuf>,
    },
    DtmdpProbe {
        source: ProbeSource,
        out: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Simulate { .. } => "simulate",
            Command::Equivalence { .. } => "equivalence",
            Command::Solve { .. } => "solve",
            Command::DtmdpProbe { .. } => "dtmdp-probe",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub seed: u64,
    pub threads: Option<usize>,
    /// Relative output paths are resolved against this directory, which
    /// also receives `manifest.csv`.
    pub out_dir: Option<PathBuf>,
    pub command: Command,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Io(IoError),
    #[error("validation failed: {0}")]
    Validation(IoError),
    #[error("internal consistency failure: {0}")]
    Consistency(String),
    #[error("{0}")]
    Usage(String),
}

impl RunError {
    /// 1 usage or parse, 2 validation, 3 internal consistency.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Io(_) | RunError::Usage(_) => 1,
            RunError::Validation(_) => 2,
            RunError::Consistency(_) => 3,
        }
    }
}

impl From<IoError> for RunError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Invalid { .. } | IoError::Structure { .. } => RunError::Validation(e),
            IoError::Usage(m) => RunError::Usage(m),
            other => RunError::Io(other),
        }
    }
}

fn solver_error(e: SolverError) -> RunError {
    match e {
        SolverError::NonMonotone { .. } | SolverError::ParityGap { .. } | SolverError::ParityDependentSelector { .. } => {
            RunError::Consistency(e.to_string())
        }
        other => RunError::Usage(other.to_string()),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub outputs: Vec<PathBuf>,
    /// Human-readable result lines.
    pub summary: Vec<String>,
    /// Key/value pairs added to the manifest.
    pub results: Vec<(String, String)>,
}

fn resolve(out_dir: &Option<PathBuf>, p: &Path) -> PathBuf {
    match out_dir {
        Some(d) if p.is_relative() => d.join(p),
        _ => p.to_path_buf(),
    }
}

fn parameters(cmd: &Command) -> Vec<(String, String)> {
    let p = |k: &str, v: String| (k.to_string(), v);
    let path = |x: &Path| x.display().to_string();
    match cmd {
        Command::Validate { model } => vec![p("model", path(model))],
        Command::Simulate {
            model,
            policy,
            x0,
            paths,
            max_jumps,
            horizon,
            out,
        } => vec![
            p("model", path(model)),
            p("policy", path(policy)),
            p("x0", x0.clone()),
            p("paths", paths.to_string()),
            p("max_jumps", max_jumps.to_string()),
            p("horizon", horizon.to_string()),
            p("out", path(out)),
        ],
        Command::Equivalence {
            model,
            policy,
            lambda,
            x0,
            paths,
            depth,
            horizon,
            out,
        } => vec![
            p("model", path(model)),
            p("policy", path(policy)),
            p("lambda", lambda.to_string()),
            p("x0", x0.clone()),
            p("paths", paths.to_string()),
            p("depth", depth.to_string()),
            p("horizon", horizon.to_string()),
            p("out", path(out)),
        ],
        Command::Solve {
            model,
            mode,
            lambda,
            tolerance,
            depth,
            values_out,
            policy_out,
        } => vec![
            p("model", path(model)),
            p(
                "mode",
                match mode {
                    SolveMode::Direct => "direct",
                    SolveMode::Auxiliary => "auxiliary",
                }
                .into(),
            ),
            p("lambda", lambda.to_string()),
            p("tol", tolerance.to_string()),
            p("depth", depth.to_string()),
            p("out", path(values_out)),
            p("policy_out", policy_out.as_deref().map(path).unwrap_or_default()),
        ],
        Command::DtmdpProbe { source, out } => {
            let mut v = match source {
                ProbeSource::ExampleA1 { ns, shift } => vec![
                    p("source", "example-a1".into()),
                    p("ns", ns.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")),
                    p("shift", shift.map(|s| s.to_string()).unwrap_or_default()),
                ],
                ProbeSource::Files {
                    model,
                    controls,
                    f,
                    shift,
                } => vec![
                    p("model", path(model)),
                    p("control_seq", path(controls)),
                    p("f", f.as_deref().map(path).unwrap_or_default()),
                    p("shift", shift.map(|s| s.to_string()).unwrap_or_default()),
                ],
            };
            v.push(p("out", path(out)));
            v
        }
    }
}

/// Run one subcommand, write its CSV outputs and `manifest.csv`.
pub fn run_experiment(exp: &Experiment) -> Result<RunReport, RunError> {
    let mut report = match &exp.command {
        Command::Validate { model } => {
            let m = load_model(model)?;
            RunReport {
                summary: vec![format!(
                    "{}: valid ({} modes, {} actions)",
                    model.display(),
                    m.mode_count(),
                    m.action_count()
                )],
                ..RunReport::default()
            }
        }
        Command::Simulate {
            model,
            policy,
            x0,
            paths,
            max_jumps,
            horizon,
            out,
        } => {
            let m = load_model(model)?;
            let pol = load_policy(policy, &m)?;
            let x0 = parse_state(&m, x0)?;
            if *paths == 0 || !(horizon.is_finite() && *horizon > 0.0) {
                return Err(RunError::Usage("need paths >= 1 and a finite positive horizon".into()));
            }
            let mc = MonteCarlo {
                n_paths: *paths,
                seed: exp.seed,
                limits: Limits::new(*max_jumps, *horizon),
            };
            let trajs = simulate_paths(&m, &pol, &x0, &mc);
            let out = resolve(&exp.out_dir, out);
            write_csv(
                &out,
                &["path_id", "n_jumps", "termination", "cost_integral", "exp_cost"],
                trajs.iter().enumerate().map(|(i, t)| {
                    vec![
                        i.to_string(),
                        t.history.jumps().to_string(),
                        t.terminated_by.as_str().to_string(),
                        t.cost_integral.to_string(),
                        t.cost_integral.exp().to_string(),
                    ]
                }),
            )?;
            let exps: Vec<f64> = trajs.iter().map(|t| t.cost_integral).collect();
            let risk = crate::sim::risk_from_exponents(&exps);
            let line = match risk {
                crate::sim::RiskEstimate::Finite {
                    mean, standard_error, ..
                } => format!("risk cost {mean} (se {standard_error})"),
                crate::sim::RiskEstimate::Infinite(d) => format!("risk cost infinite ({d:?})"),
            };
            RunReport {
                outputs: vec![out],
                summary: vec![line.clone()],
                results: vec![("risk_cost".into(), line)],
            }
        }
        Command::Equivalence {
            model,
            policy,
            lambda,
            x0,
            paths,
            depth,
            horizon,
            out,
        } => {
            let m = load_model(model)?;
            let pol = load_policy(policy, &m)?;
            let x0 = parse_state(&m, x0)?;
            if *paths == 0 || *depth == 0 {
                return Err(RunError::Usage("need paths >= 1 and depth >= 1".into()));
            }
            let cfg = EquivalenceConfig {
                lambda: *lambda,
                n_paths: *paths,
                depth: *depth,
                seed: exp.seed,
                horizon: *horizon,
            };
            let rep = equivalence_test(&m, &pol, x0, &cfg).map_err(|e| RunError::Usage(e.to_string()))?;
            let out = resolve(&exp.out_dir, out);
            write_csv(
                &out,
                &["jump_index", "statistic", "value", "threshold", "pass"],
                rep.rows.iter().map(|r| {
                    vec![
                        r.jump_index.to_string(),
                        r.statistic.as_str().to_string(),
                        r.value.to_string(),
                        r.threshold.to_string(),
                        r.pass.to_string(),
                    ]
                }),
            )?;
            let failed = rep.rows.iter().filter(|r| !r.pass).count();
            let mismatches = rep
                .rows_for(Statistic::LabelMismatch)
                .map(|r| r.value)
                .sum::<f64>();
            if mismatches > 0.0 {
                return Err(RunError::Consistency(format!(
                    "{mismatches} auxiliary trajectories failed the jump-label cross-check"
                )));
            }
            RunReport {
                outputs: vec![out],
                summary: vec![format!("{} rows, {} rejected", rep.rows.len(), failed)],
                results: vec![("rejected_rows".into(), failed.to_string())],
            }
        }
        Command::Solve {
            model,
            mode,
            lambda,
            tolerance,
            depth,
            values_out,
            policy_out,
        } => {
            let m = load_model(model)?;
            let cfg = SolverConfig {
                tolerance: *tolerance,
                depth: *depth,
                ..SolverConfig::default()
            };
            let (values, selector, solution, gap) = match mode {
                SolveMode::Direct => {
                    let s = solve_direct(&m, &cfg).map_err(solver_error)?;
                    (s.solution.values.clone(), s.selector, s.solution, None)
                }
                SolveMode::Auxiliary => {
                    let s = solve_via_auxiliary(&m, *lambda, &cfg).map_err(solver_error)?;
                    (s.values, s.selector, s.solution, Some(s.parity_gap))
                }
            };
            let values_path = resolve(&exp.out_dir, values_out);
            write_csv(
                &values_path,
                &["mode", "position_node", "value_or_INF"],
                values
                    .rows()
                    .map(|(mi, _, p, v)| vec![m.modes()[mi].clone(), p.to_string(), fmt_value(v)]),
            )?;
            let mut outputs = vec![values_path];
            if let Some(po) = policy_out {
                let po = resolve(&exp.out_dir, po);
                write_csv(
                    &po,
                    &["mode", "position_node", "action"],
                    values.grid().points().map(|(mi, k, p)| {
                        vec![
                            m.modes()[mi].clone(),
                            p.position.to_string(),
                            m.actions().label(selector.actions[mi][k]).to_string(),
                        ]
                    }),
                )?;
                outputs.push(po);
            }
            let mut results = vec![
                ("iterations".into(), solution.iterations.to_string()),
                ("converged".into(), solution.converged.to_string()),
            ];
            let mut summary = vec![format!(
                "{} after {} iterations",
                if solution.converged { "converged" } else { "not converged" },
                solution.iterations
            )];
            if let Some(g) = gap {
                results.push(("parity_gap".into(), g.to_string()));
                summary.push(format!("parity gap {g}"));
            }
            RunReport {
                outputs,
                summary,
                results,
            }
        }
        Command::DtmdpProbe { source, out } => {
            let (rows, labels) = run_probe(source)?;
            let out = resolve(&exp.out_dir, out);
            write_csv(
                &out,
                &["n", "integral_at_rho_n", "integral_at_limit", "gap", "max_young_test_gap"],
                rows.iter().zip(&labels).map(|(r, n)| {
                    vec![
                        n.clone(),
                        r.at_sequence.to_string(),
                        r.at_limit.to_string(),
                        r.gap.to_string(),
                        r.max_young_gap.to_string(),
                    ]
                }),
            )?;
            let max_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
            RunReport {
                outputs: vec![out],
                summary: vec![format!("{} controls, max gap {max_gap}", rows.len())],
                results: vec![("max_gap".into(), max_gap.to_string())],
            }
        }
    };
    let manifest = resolve(&exp.out_dir, Path::new("manifest.csv"));
    let mut entries = vec![
        ("command".to_string(), exp.command.name().to_string()),
        ("seed".to_string(), exp.seed.to_string()),
        (
            "threads".to_string(),
            exp.threads.map(|t| t.to_string()).unwrap_or_else(|| "auto".into()),
        ),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ];
    entries.extend(parameters(&exp.command));
    entries.extend(report.results.iter().cloned());
    write_csv(&manifest, &["key", "value"], entries.into_iter().map(|(k, v)| vec![k, v]))?;
    report.outputs.push(manifest);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlSeqFile {
    #[serde(default)]
    from: Option<String>,
    sequence: Vec<ControlRecord>,
    limit: ControlRecord,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestFunctionFile {
    table: BTreeMap<String, Vec<f64>>,
    absorbing: f64,
}

fn run_probe(source: &ProbeSource) -> Result<(Vec<ProbeRow>, Vec<String>), RunError> {
    let (model, seq, limit, f, from, labels, shift) = match source {
        ProbeSource::ExampleA1 { ns, shift } => {
            if ns.is_empty() || ns.contains(&0) {
                return Err(RunError::Usage("example sequence needs positive n".into()));
            }
            let model = example_a1_model(ns);
            let (seq, limit) = example_a1_controls(&model, ns);
            let f = ProbeFunction::absorption_indicator(&model);
            let labels = ns.iter().map(usize::to_string).collect();
            (model, seq, limit, f, StatePoint::new(0, 0.0), labels, *shift)
        }
        ProbeSource::Files {
            model,
            controls,
            f,
            shift,
        } => {
            let model = load_model(model)?;
            let origin = controls.display().to_string();
            let file: ControlSeqFile = parse_json(&read(controls)?, &origin)?;
            let r = Resolver {
                model: &model,
                origin: &origin,
            };
            let seq = file.sequence.iter().map(|c| r.control(c)).collect::<Result<Vec<_>, _>>()?;
            let limit = r.control(&file.limit)?;
            let from = match &file.from {
                Some(s) => parse_state(&model, s)?,
                None => StatePoint::new(0, 0.0),
            };
            let f = match f {
                None => ProbeFunction::absorption_indicator(&model),
                Some(p) => {
                    let origin = p.display().to_string();
                    let tf: TestFunctionFile = parse_json(&read(p)?, &origin)?;
                    let mut table = Vec::with_capacity(model.mode_count());
                    for name in model.modes() {
                        table.push(tf.table.get(name).cloned().ok_or_else(|| IoError::Policy {
                            path: origin.clone(),
                            message: format!("no values for mode `{name}`"),
                        })?);
                    }
                    ProbeFunction::new(&model, table, tf.absorbing).map_err(|e| IoError::Policy {
                        path: origin.clone(),
                        message: e.to_string(),
                    })?
                }
            };
            let labels = (1..=seq.len()).map(|i| i.to_string()).collect();
            (model, seq, limit, f, from, labels, *shift)
        }
    };
    let family = match YoungFamily::standard(&model) {
        Ok(f) => f,
        // Without declared action values, embed actions by index.
        Err(_) => YoungFamily::new((0..model.action_count()).map(|a| a as f64).collect(), vec![0, 1, 2], vec![1, 2])
            .expect("index values are finite"),
    };
    let from_state = DtState::finite(1.0, from).expect("unit sojourn is positive");
    let rows = match shift {
        None => continuity_probe(&model, &from_state, &seq, &limit, &f, &family),
        Some(l) => {
            let aux = build_auxiliary(&model, l).map_err(|e| RunError::Usage(e.to_string()))?;
            let from_aux = match from_state {
                DtState::Finite { sojourn, state } => DtState::Finite {
                    sojourn,
                    state: crate::uniformizer::AuxState::new(state, crate::uniformizer::Parity::Plus),
                },
                DtState::Absorbing => DtState::Absorbing,
            };
            continuity_probe(&aux, &from_aux, &seq, &limit, &f, &family)
        }
    };
    Ok((rows, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_models_load() {
        let m = parse_model(bundled::CTMDP2, "ctmdp2").unwrap();
        assert_eq!(m.mode_count(), 2);
        assert!(m.flow().drifts().iter().all(|v| *v == 0.0));
        parse_model(bundled::DRIFTLINE, "driftline").unwrap();
        parse_model(bundled::CTMDP2_DIVERGENT, "div").unwrap();
        let a1 = parse_model(bundled::EXAMPLE_A1, "a1").unwrap();
        assert_eq!(a1, example_a1_model(&[1, 2, 10, 100]));
    }

    #[test]
    fn negative_rate_is_rejected() {
        let text = r#"{"modes": ["s", "t"], "actions": ["a"],
            "rates": [{"from_mode": "s", "cell_index": 0, "action": "a", "to_mode": "t", "rate": -1, "post_jump": "keep"}]}"#;
        match parse_model(text, "neg") {
            Err(IoError::Invalid { violations, .. }) => {
                assert_eq!(violations.len(), 1);
                assert!(violations[0].to_string().contains("negative rate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse_model("{\n  \"modes\": [1]\n}", "bad.json") {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_costs_default_to_zero() {
        let text = r#"{"modes": ["s", "t"], "actions": ["a"],
            "rates": [{"from_mode": "s", "cell_index": 0, "action": "a", "to_mode": "t", "rate": 1, "post_jump": "keep"}]}"#;
        let m = parse_model(text, "nocost").unwrap();
        assert_eq!(m.cost(&StatePoint::new(0, 0.0), 0), 0.0);
    }

    #[test]
    fn policy_kinds() {
        let m = parse_model(bundled::CTMDP2, "ctmdp2").unwrap();
        let det = r#"{"kind": "deterministic-stationary", "table": {"s1": "b", "s2": ["a"]}}"#;
        assert!(matches!(parse_policy(det, &m, "p").unwrap(), Policy::DeterministicStationary(_)));
        let uni = r#"{"kind": "randomized-stationary", "uniform": true}"#;
        assert!(matches!(parse_policy(uni, &m, "p").unwrap(), Policy::RandomizedStationary(_)));
        match parse_policy(bundled::CTMDP2_SWITCH_POLICY, &m, "p").unwrap() {
            Policy::MarkovPiecewise(p) => assert_eq!(p.for_jump(0).breakpoints(), &[1.0]),
            other => panic!("unexpected {other:?}"),
        }
        let dangling = r#"{"kind": "deterministic-stationary", "table": {"s1": "z", "s2": "a"}}"#;
        assert!(parse_policy(dangling, &m, "p").is_err());
        let bad_mode = r#"{"kind": "deterministic-stationary", "table": {"s1": "a", "s2": "a", "s9": "a"}}"#;
        assert!(parse_policy(bad_mode, &m, "p").is_err());
    }

    #[test]
    fn scripted_rules() {
        use crate::sim::ControlPolicy;
        let m = parse_model(bundled::CTMDP2, "ctmdp2").unwrap();
        let text = r#"{"kind": "scripted",
            "rules": [{"max_jump": 0, "mode": "s1", "control": {"breakpoints": [1.0], "segments": ["a"], "tail": "b"}}],
            "default": "a"}"#;
        let p = parse_policy(text, &m, "p").unwrap();
        let h = History::new(StatePoint::new(0, 0.0));
        assert_eq!(p.control(&h).breakpoints(), &[1.0]);
        let h2 = History::new(StatePoint::new(1, 0.0));
        assert_eq!(p.control(&h2), RelaxedControl::constant(ActionDistribution::dirac(2, 0)));
    }

    #[test]
    fn state_parsing() {
        let m = parse_model(bundled::DRIFTLINE, "d").unwrap();
        assert_eq!(parse_state(&m, "line:0.5").unwrap(), StatePoint::new(0, 0.5));
        assert!(parse_state(&m, "nope:0").is_err());
        assert!(parse_state(&m, "line").is_err());
    }
}
