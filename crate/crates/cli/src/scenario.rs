//! Scenario files: TOML grammar, validation and defaults.
//!
//! The grammar is documented in `CONFIG.md` next to this crate's manifest.

use std::fmt;
use std::path::PathBuf;

use cascade_core::fock::FockDims;
use cascade_core::fluctuations::{linear_grid, log_grid};
use cascade_core::liouvillian::ChainParams;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TRAJECTORIES: usize = 500;
pub const DEFAULT_T_FINAL: f64 = 60.0;
pub const DEFAULT_WIGNER_EXTENT: f64 = 3.5;
pub const DEFAULT_WIGNER_POINTS: usize = 101;

/// Configuration error with the 1-based line it refers to, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

// ---- file layer -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub model: ModelSection,
    pub solver: SolverSection,
    pub sweep: SweepSection,
    pub outputs: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub modes: usize,
    pub gamma: f64,
    pub kerr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<EtaSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSpec {
    Uniform(f64),
    Links(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    FullQuantumSteady,
    FullQuantumMcwf,
    Linearized,
}

impl SolverKind {
    pub fn is_full_quantum(self) -> bool {
        !matches!(self, SolverKind::Linearized)
    }

    pub fn label(self) -> &'static str {
        match self {
            SolverKind::FullQuantumSteady => "full-quantum-steady",
            SolverKind::FullQuantumMcwf => "full-quantum-mcwf",
            SolverKind::Linearized => "linearized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub kind: SolverKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation: Option<TruncationSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_check: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruncationSpec {
    Uniform(usize),
    PerMode(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_last: Option<AxisSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drive: Option<AxisSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<AxisSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec {
    Values(Vec<f64>),
    Range(RangeSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub from: f64,
    pub to: f64,
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spacing: Option<Spacing>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    G2,
    Populations,
    Fidelity,
    Wigner,
    Duan,
    Bistability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub quantities: Vec<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duan_pair: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wigner_extent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wigner_points: Option<usize>,
}

// ---- validated layer ------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    /// Population of the last mode; the drive follows from the mean field.
    NLast,
    Drive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub kind: AxisKind,
    pub values: Vec<f64>,
    pub delta: Vec<f64>,
}

impl Sweep {
    pub fn len(&self) -> usize {
        self.values.len() * self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(delta, axis value)` of grid point `index`; delta varies slowest.
    pub fn point(&self, index: usize) -> (f64, f64) {
        (self.delta[index / self.values.len()], self.values[index % self.values.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WignerSpec {
    pub extent: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub g2: bool,
    pub populations: bool,
    pub fidelity: bool,
    pub wigner: Option<WignerSpec>,
    /// Zero-based mode pair.
    pub duan: Option<(usize, usize)>,
    pub bistability: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub params: ChainParams,
    pub solver: SolverKind,
    pub truncation: Option<FockDims>,
    pub trajectories: usize,
    pub t_final: f64,
    pub convergence_check: bool,
    pub sweep: Sweep,
    pub outputs: Outputs,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// The file layer with every default written out.
    pub resolved: ScenarioFile,
}

impl Scenario {
    pub fn n_modes(&self) -> usize {
        self.params.n_modes
    }

    /// TOML text of the resolved scenario; parses back to an equal scenario.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.resolved).expect("scenario serializes")
    }
}

// ---- parsing --------------------------------------------------------------

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside `[section]` (or at top level when `section` is empty).
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section {
                section_line = Some(i + 1);
            }
            if !key.is_empty() && current == format!("{section}.{key}") {
                return Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    section_line
}

fn err(text: &str, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { line: locate(text, section, key), message: message.into() }
}

fn expand_axis(spec: &AxisSpec, text: &str, key: &str) -> Result<Vec<f64>, ConfigError> {
    let values = match spec {
        AxisSpec::Values(v) => {
            if v.is_empty() {
                return Err(err(text, "sweep", key, format!("sweep axis `{key}` is empty")));
            }
            v.clone()
        }
        AxisSpec::Range(r) => {
            if r.points == 0 {
                return Err(err(text, "sweep", key, format!("sweep axis `{key}` needs points >= 1")));
            }
            match r.spacing.unwrap_or(Spacing::Linear) {
                Spacing::Linear => linear_grid(r.from, r.to, r.points),
                Spacing::Log => {
                    if !(r.from > 0.0 && r.to > 0.0) {
                        return Err(err(text, "sweep", key, format!("log-spaced axis `{key}` needs positive endpoints")));
                    }
                    log_grid(r.from, r.to, r.points)
                }
            }
        }
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(err(text, "sweep", key, format!("sweep axis `{key}` has a non-finite value")));
    }
    Ok(values)
}

/// Parse and validate a scenario document. `default_name` is used when the
/// file has no `name` key.
pub fn parse_scenario(text: &str, default_name: &str) -> Result<Scenario, ConfigError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ConfigError {
        line: e.span().map(|s| line_of_offset(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    validate(file, text, default_name)
}

fn validate(file: ScenarioFile, text: &str, default_name: &str) -> Result<Scenario, ConfigError> {
    let m = &file.model;
    if m.modes == 0 {
        return Err(err(text, "model", "modes", "model.modes must be at least 1"));
    }
    for (key, v) in [("gamma", Some(m.gamma)), ("kerr", Some(m.kerr)), ("delta", m.delta)] {
        if let Some(v) = v {
            if !v.is_finite() {
                return Err(err(text, "model", key, format!("model.{key} must be finite")));
            }
        }
    }
    if m.gamma <= 0.0 {
        return Err(err(text, "model", "gamma", "model.gamma must be positive"));
    }
    let links = m.modes - 1;
    let eta_links = match &m.eta {
        None => vec![1.0; links],
        Some(EtaSpec::Uniform(e)) => vec![*e; links],
        Some(EtaSpec::Links(v)) => {
            if v.len() != links {
                return Err(err(text, "model", "eta", format!("model.eta lists {} links, the chain has {links}", v.len())));
            }
            v.clone()
        }
    };
    if eta_links.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(err(text, "model", "eta", "model.eta entries must lie in [0, 1]"));
    }

    let s = &file.solver;
    let full = s.kind.is_full_quantum();
    let truncation = match (&s.truncation, full) {
        (None, true) => return Err(err(text, "solver", "kind", "full-quantum solvers need solver.truncation")),
        (Some(_), false) => return Err(err(text, "solver", "truncation", "solver.truncation applies only to full-quantum solvers")),
        (None, false) => None,
        (Some(t), true) => {
            let per = match t {
                TruncationSpec::Uniform(d) => vec![*d; m.modes],
                TruncationSpec::PerMode(v) => v.clone(),
            };
            if per.len() != m.modes {
                return Err(err(text, "solver", "truncation", format!("solver.truncation lists {} modes, the chain has {}", per.len(), m.modes)));
            }
            Some(FockDims::new(per).map_err(|e| err(text, "solver", "truncation", e.to_string()))?)
        }
    };
    let mcwf = s.kind == SolverKind::FullQuantumMcwf;
    if !mcwf && s.trajectories.is_some() {
        return Err(err(text, "solver", "trajectories", "solver.trajectories applies only to full-quantum-mcwf"));
    }
    if !mcwf && s.t_final.is_some() {
        return Err(err(text, "solver", "t_final", "solver.t_final applies only to full-quantum-mcwf"));
    }
    if !full && s.convergence_check.is_some() {
        return Err(err(text, "solver", "convergence_check", "solver.convergence_check applies only to full-quantum solvers"));
    }
    let trajectories = s.trajectories.unwrap_or(DEFAULT_TRAJECTORIES);
    if mcwf && trajectories == 0 {
        return Err(err(text, "solver", "trajectories", "solver.trajectories must be at least 1"));
    }
    let t_final = s.t_final.unwrap_or(DEFAULT_T_FINAL);
    if mcwf && !(t_final > 0.0) {
        return Err(err(text, "solver", "t_final", "solver.t_final must be positive"));
    }
    let convergence_check = full && s.convergence_check.unwrap_or(true);

    let sw = &file.sweep;
    let (kind, axis_key, axis) = match (&sw.n_last, &sw.drive) {
        (Some(a), None) => (AxisKind::NLast, "n_last", a),
        (None, Some(a)) => (AxisKind::Drive, "drive", a),
        (Some(_), Some(_)) => return Err(err(text, "sweep", "drive", "sweep over either n_last or drive, not both")),
        (None, None) => return Err(err(text, "sweep", "", "sweep needs an n_last or a drive axis")),
    };
    let values = expand_axis(axis, text, axis_key)?;
    if values.iter().any(|v| *v < 0.0) {
        return Err(err(text, "sweep", axis_key, format!("sweep axis `{axis_key}` must be non-negative")));
    }
    let delta = match &sw.delta {
        Some(a) => {
            if m.delta.is_some() {
                return Err(err(text, "model", "delta", "model.delta conflicts with the delta sweep axis"));
            }
            expand_axis(a, text, "delta")?
        }
        None => vec![m.delta.unwrap_or(0.0)],
    };

    let o = &file.outputs;
    if o.quantities.is_empty() {
        return Err(err(text, "outputs", "quantities", "outputs.quantities is empty"));
    }
    for (i, q) in o.quantities.iter().enumerate() {
        if o.quantities[..i].contains(q) {
            return Err(err(text, "outputs", "quantities", format!("{q:?} is listed twice").to_lowercase()));
        }
    }
    let has = |q: Quantity| o.quantities.contains(&q);
    for q in [Quantity::Wigner, Quantity::Fidelity] {
        if has(q) && !full {
            return Err(err(
                text,
                "outputs",
                "quantities",
                format!("{} requires a full-quantum solver, not {}", format!("{q:?}").to_lowercase(), s.kind.label()),
            ));
        }
    }
    if has(Quantity::Bistability) && kind != AxisKind::Drive {
        return Err(err(text, "outputs", "quantities", "bistability requires a drive sweep axis"));
    }
    let duan = if has(Quantity::Duan) {
        if m.modes < 2 {
            return Err(err(text, "outputs", "quantities", "duan needs at least two modes"));
        }
        let [p, q] = o.duan_pair.unwrap_or([1, 2]);
        if p == q {
            return Err(err(text, "outputs", "duan_pair", "outputs.duan_pair names the same mode twice"));
        }
        if p == 0 || q == 0 || p > m.modes || q > m.modes {
            return Err(err(text, "outputs", "duan_pair", format!("outputs.duan_pair modes must lie in 1..={}", m.modes)));
        }
        Some((p - 1, q - 1))
    } else {
        if o.duan_pair.is_some() {
            return Err(err(text, "outputs", "duan_pair", "outputs.duan_pair set but duan is not requested"));
        }
        None
    };
    let wigner = if has(Quantity::Wigner) {
        let extent = o.wigner_extent.unwrap_or(DEFAULT_WIGNER_EXTENT);
        let points = o.wigner_points.unwrap_or(DEFAULT_WIGNER_POINTS);
        if !(extent > 0.0) || points < 2 {
            return Err(err(text, "outputs", "wigner_extent", "wigner grid needs extent > 0 and at least 2 points"));
        }
        Some(WignerSpec { extent, points })
    } else {
        if o.wigner_extent.is_some() || o.wigner_points.is_some() {
            return Err(err(text, "outputs", "wigner_points", "wigner grid settings given but wigner is not requested"));
        }
        None
    };

    let name = file.name.clone().unwrap_or_else(|| default_name.to_string());
    let output_dir = file.output_dir.clone().unwrap_or_else(|| format!("results/{name}"));
    let seed = file.seed.unwrap_or(0);

    let mut params = ChainParams::new(m.modes, m.gamma, m.kerr, delta[0], 0.0);
    for (i, e) in eta_links.iter().enumerate() {
        params.eta[i][i + 1] = *e;
    }
    params.validate().map_err(|e| err(text, "model", "", e.to_string()))?;

    let mut resolved = file.clone();
    resolved.name = Some(name.clone());
    resolved.seed = Some(seed);
    resolved.output_dir = Some(output_dir.clone());
    if resolved.sweep.delta.is_none() {
        resolved.model.delta = Some(delta[0]);
    }
    resolved.model.eta = Some(if eta_links.iter().all(|e| *e == 1.0) { EtaSpec::Uniform(1.0) } else { EtaSpec::Links(eta_links) });
    if full {
        resolved.solver.convergence_check = Some(convergence_check);
    }
    if mcwf {
        resolved.solver.trajectories = Some(trajectories);
        resolved.solver.t_final = Some(t_final);
    }
    if let Some(w) = wigner {
        resolved.outputs.wigner_extent = Some(w.extent);
        resolved.outputs.wigner_points = Some(w.points);
    }
    if let Some((p, q)) = duan {
        resolved.outputs.duan_pair = Some([p + 1, q + 1]);
    }

    Ok(Scenario {
        name,
        params,
        solver: s.kind,
        truncation,
        trajectories,
        t_final,
        convergence_check,
        sweep: Sweep { kind, values, delta },
        outputs: Outputs {
            g2: has(Quantity::G2),
            populations: has(Quantity::Populations),
            fidelity: has(Quantity::Fidelity),
            wigner,
            duan,
            bistability: has(Quantity::Bistability),
        },
        seed,
        output_dir: PathBuf::from(output_dir),
        resolved,
    })
}
