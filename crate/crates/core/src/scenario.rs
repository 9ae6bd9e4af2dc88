//! Line-oriented scenario files: `key = value`, `#` comments, species-indexed
//! keys such as `D.1` or `ic.2`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::mesh::{CellField, Mesh1D, MeshError, StateField};
use crate::model::{hypothesis_report, ChiFamily, CustomQ, HypothesisReport, ModelError, ModelSpec, QFamily, ScalarPotential};
use crate::scheme::{JacobianMode, MobilityMean, StepperSettings};

const HYPOTHESIS_GRID: usize = 400;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing required key '{0}'")]
    Missing(String),
    #[error("invalid value for '{key}': {message}")]
    Invalid { key: String, message: String },
    #[error("hypotheses violated:\n{}", .0.render())]
    Hypotheses(Box<HypothesisReport>),
    #[error("initial data outside the closed simplex: {0}")]
    InitialData(MeshError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum QSpec {
    Power(f64),
    Table(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChiSpec {
    Zero,
    Linear(Vec<f64>),
    /// One `(a, b)` affine potential per species.
    Separable(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialProfile {
    Constant(f64),
    /// `a + b cos(k pi x / L)`.
    Cosine { a: f64, b: f64, k: f64 },
    /// Two-column `x,value` file, linearly interpolated at cell centres.
    Table(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputCadence {
    EverySteps(usize),
    EveryTime(f64),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub length: f64,
    pub cells: usize,
    pub species: usize,
    pub diffusivities: Vec<f64>,
    pub q: QSpec,
    pub chi: ChiSpec,
    pub profiles: Vec<InitialProfile>,
    pub settings: StepperSettings,
    pub t_end: f64,
    pub cadence: OutputCadence,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub model: ModelSpec,
    pub mesh: Mesh1D,
    pub initial: StateField,
    pub report: HypothesisReport,
}

impl Scenario {
    pub fn alpha(&self) -> Option<f64> {
        match self.q {
            QSpec::Power(a) => Some(a),
            QSpec::Table(_) => None,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "name",
    "L",
    "N",
    "n",
    "q",
    "chi",
    "tau",
    "tau_min",
    "tau_max",
    "T",
    "output_every",
    "output_dt",
    "out_dir",
    "entropy_guard",
    "seed",
    "newton_tol",
    "newton_max_iter",
    "mobility_mean",
    "jacobian",
];
const INDEXED_KEYS: &[&str] = &["D", "ic", "chi"];

fn known(key: &str) -> bool {
    if KNOWN_KEYS.contains(&key) {
        return true;
    }
    match key.split_once('.') {
        Some((base, idx)) => INDEXED_KEYS.contains(&base) && idx.parse::<usize>().is_ok_and(|i| i >= 1),
        None => false,
    }
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }

    fn required(&self, key: &str) -> Result<&str, ScenarioError> {
        self.get(key).ok_or_else(|| ScenarioError::Missing(key.into()))
    }

    fn invalid(&self, key: &str, message: impl Into<String>) -> ScenarioError {
        let message = message.into();
        match self.map.get(key) {
            Some((line, _)) => ScenarioError::Parse {
                line: *line,
                message: format!("{key}: {message}"),
            },
            None => ScenarioError::Invalid {
                key: key.into(),
                message,
            },
        }
    }

    fn number<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ScenarioError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| self.invalid(key, format!("'{v}': {e}"))))
            .transpose()
    }

    fn required_number<T: std::str::FromStr>(&self, key: &str) -> Result<T, ScenarioError>
    where
        T::Err: std::fmt::Display,
    {
        self.number(key)?.ok_or_else(|| ScenarioError::Missing(key.into()))
    }
}

fn tokenize(text: &str) -> Result<Entries, ScenarioError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ScenarioError::Parse {
            line,
            message: format!("expected 'key = value', got '{content}'"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if !known(key) {
            return Err(ScenarioError::Parse {
                line,
                message: format!("unknown key '{key}'"),
            });
        }
        if value.is_empty() {
            return Err(ScenarioError::Parse {
                line,
                message: format!("empty value for '{key}'"),
            });
        }
        if map.insert(key.to_string(), (line, value.to_string())).is_some() {
            return Err(ScenarioError::Parse {
                line,
                message: format!("duplicate key '{key}'"),
            });
        }
    }
    Ok(Entries { map })
}

fn floats(entries: &Entries, key: &str, words: &[&str]) -> Result<Vec<f64>, ScenarioError> {
    words
        .iter()
        .map(|w| w.parse::<f64>().map_err(|e| entries.invalid(key, format!("'{w}': {e}"))))
        .collect()
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn parse_bool(entries: &Entries, key: &str) -> Result<Option<bool>, ScenarioError> {
    entries
        .get(key)
        .map(|v| match v {
            "on" | "true" | "yes" | "1" => Ok(true),
            "off" | "false" | "no" | "0" => Ok(false),
            other => Err(entries.invalid(key, format!("'{other}' is not on/off"))),
        })
        .transpose()
}

/// Reads a two-column numeric CSV, skipping a non-numeric header line.
pub fn read_two_columns(path: &Path) -> Result<(Vec<f64>, Vec<f64>), ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = parts.iter().map(|p| p.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == 2 => {
                xs.push(v[0]);
                ys.push(v[1]);
            }
            Err(_) if xs.is_empty() && i == 0 => continue,
            _ => {
                return Err(ScenarioError::Invalid {
                    key: path.display().to_string(),
                    message: format!("line {}: expected two numbers", i + 1),
                })
            }
        }
    }
    Ok((xs, ys))
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let t = (x - x0) / (x1 - x0);
    ys[j - 1] * (1.0 - t) + ys[j] * t
}

impl InitialProfile {
    fn sample(&self, mesh: &Mesh1D) -> Result<Vec<f64>, ScenarioError> {
        let l = mesh.length();
        Ok(match self {
            InitialProfile::Constant(c) => vec![*c; mesh.cells()],
            InitialProfile::Cosine { a, b, k } => mesh
                .centers()
                .iter()
                .map(|x| a + b * (k * std::f64::consts::PI * x / l).cos())
                .collect(),
            InitialProfile::Table(path) => {
                let (xs, ys) = read_two_columns(path)?;
                if xs.len() < 2 || xs.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(ScenarioError::Invalid {
                        key: path.display().to_string(),
                        message: "need at least two rows with increasing x".into(),
                    });
                }
                mesh.centers().iter().map(|&x| interpolate(&xs, &ys, x)).collect()
            }
        })
    }
}

fn parse_profile(entries: &Entries, key: &str, base: &Path) -> Result<InitialProfile, ScenarioError> {
    let value = entries.required(key)?;
    let words: Vec<&str> = value.split_whitespace().collect();
    match words.as_slice() {
        ["constant", c] => Ok(InitialProfile::Constant(floats(entries, key, &[c])?[0])),
        ["cosine", rest @ ..] if rest.len() == 3 => {
            let v = floats(entries, key, rest)?;
            Ok(InitialProfile::Cosine { a: v[0], b: v[1], k: v[2] })
        }
        ["table", path] => Ok(InitialProfile::Table(resolve(base, path))),
        _ => Err(entries.invalid(key, format!("'{value}' (expected constant c | cosine a b k | table path)"))),
    }
}

fn parse_chi(entries: &Entries, n: usize) -> Result<ChiSpec, ScenarioError> {
    let Some(value) = entries.get("chi") else {
        return Ok(ChiSpec::Zero);
    };
    let words: Vec<&str> = value.split_whitespace().collect();
    match words.as_slice() {
        ["zero"] => Ok(ChiSpec::Zero),
        ["linear", rest @ ..] => {
            if rest.len() != n {
                return Err(entries.invalid("chi", format!("linear needs {n} coefficients")));
            }
            Ok(ChiSpec::Linear(floats(entries, "chi", rest)?))
        }
        ["separable"] => (1..=n)
            .map(|i| {
                let key = format!("chi.{i}");
                let v = entries.required(&key)?;
                let w: Vec<&str> = v.split_whitespace().collect();
                match w.as_slice() {
                    ["affine", a, b] => {
                        let ab = floats(entries, &key, &[a, b])?;
                        Ok((ab[0], ab[1]))
                    }
                    _ => Err(entries.invalid(&key, format!("'{v}' (expected affine a b)"))),
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(ChiSpec::Separable),
        _ => Err(entries.invalid("chi", format!("'{value}' (expected zero | linear c.. | separable)"))),
    }
}

fn build_q(spec: &QSpec) -> Result<QFamily, ScenarioError> {
    match spec {
        QSpec::Power(alpha) => Ok(QFamily::power(*alpha)),
        QSpec::Table(path) => {
            let (s, q) = read_two_columns(path)?;
            Ok(QFamily::Custom(CustomQ::from_table(path.display().to_string(), &s, &q)?))
        }
    }
}

fn build_chi(spec: &ChiSpec) -> ChiFamily {
    match spec {
        ChiSpec::Zero => ChiFamily::Zero,
        ChiSpec::Linear(c) => ChiFamily::LinearShift { c: c.clone() },
        ChiSpec::Separable(ab) => ChiFamily::Separable {
            potentials: ab.iter().map(|&(a, b)| ScalarPotential::affine(a, b)).collect(),
        },
    }
}

/// Parses and validates a scenario; relative table paths resolve against `base`.
pub fn parse_scenario(text: &str, base: &Path) -> Result<Scenario, ScenarioError> {
    let e = tokenize(text)?;
    let name = e.get("name").unwrap_or("scenario").to_string();
    let length: f64 = e.required_number("L")?;
    let cells: usize = e.required_number("N")?;
    let species: usize = e.required_number("n")?;
    if species == 0 {
        return Err(e.invalid("n", "need at least one species"));
    }
    for key in e.map.keys() {
        if let Some((_, idx)) = key.split_once('.') {
            let i: usize = idx.parse().unwrap_or(0);
            if i > species {
                return Err(e.invalid(key, format!("species index {i} exceeds n = {species}")));
            }
        }
    }
    let diffusivities = (1..=species)
        .map(|i| e.required_number::<f64>(&format!("D.{i}")))
        .collect::<Result<Vec<_>, _>>()?;

    let q_text = e.required("q")?;
    let q_words: Vec<&str> = q_text.split_whitespace().collect();
    let q = match q_words.as_slice() {
        ["power", a] => QSpec::Power(floats(&e, "q", &[a])?[0]),
        ["table", path] => QSpec::Table(resolve(base, path)),
        _ => return Err(e.invalid("q", format!("'{q_text}' (expected power alpha | table path)"))),
    };
    let chi = parse_chi(&e, species)?;
    let profiles = (1..=species)
        .map(|i| parse_profile(&e, &format!("ic.{i}"), base))
        .collect::<Result<Vec<_>, _>>()?;

    let tau: f64 = e.required_number("tau")?;
    let defaults = StepperSettings::default();
    let settings = StepperSettings {
        tau,
        tau_min: e.number("tau_min")?.unwrap_or(tau.min(defaults.tau_min)),
        tau_max: e.number("tau_max")?.unwrap_or(tau),
        newton_tol: e.number("newton_tol")?.unwrap_or(defaults.newton_tol),
        newton_max_iter: e.number("newton_max_iter")?.unwrap_or(defaults.newton_max_iter),
        mobility_mean: e
            .get("mobility_mean")
            .map(|v| v.parse::<MobilityMean>().map_err(|m| e.invalid("mobility_mean", m)))
            .transpose()?
            .unwrap_or_default(),
        entropy_guard: parse_bool(&e, "entropy_guard")?.unwrap_or(defaults.entropy_guard),
        jacobian: e
            .get("jacobian")
            .map(|v| v.parse::<JacobianMode>().map_err(|m| e.invalid("jacobian", m)))
            .transpose()?
            .unwrap_or_default(),
    };
    settings.validate().map_err(|err| ScenarioError::Invalid {
        key: "tau".into(),
        message: err.to_string(),
    })?;
    let t_end: f64 = e.required_number("T")?;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(e.invalid("T", "must be positive"));
    }
    let cadence = match (e.number::<usize>("output_every")?, e.number::<f64>("output_dt")?) {
        (Some(_), Some(_)) => return Err(e.invalid("output_dt", "give either output_every or output_dt")),
        (Some(0), None) => return Err(e.invalid("output_every", "must be positive")),
        (Some(m), None) => OutputCadence::EverySteps(m),
        (None, Some(dt)) if dt > 0.0 && dt.is_finite() => OutputCadence::EveryTime(dt),
        (None, Some(_)) => return Err(e.invalid("output_dt", "must be positive")),
        (None, None) => OutputCadence::EverySteps(1),
    };
    let out_dir = e.get("out_dir").map(|p| resolve(base, p));
    let seed = e.number("seed")?.unwrap_or(0);

    let model = ModelSpec::new(diffusivities.clone(), build_q(&q)?, build_chi(&chi))?;
    let report = hypothesis_report(&model, HYPOTHESIS_GRID);
    if !report.all_ok() {
        return Err(ScenarioError::Hypotheses(Box::new(report)));
    }
    let mesh = Mesh1D::new(length, cells)?;
    let columns = profiles.iter().map(|p| p.sample(&mesh)).collect::<Result<Vec<_>, _>>()?;
    let values = (0..cells).flat_map(|k| columns.iter().map(move |c| c[k])).collect();
    let initial = StateField::new(CellField::from_values(species, values)?).map_err(ScenarioError::InitialData)?;
    let masses = initial.masses(&mesh);
    let solvent = length - masses.iter().sum::<f64>();
    if let Some(i) = masses.iter().position(|&m| !(m > 0.0)) {
        return Err(e.invalid(&format!("ic.{}", i + 1), "species has zero mass; the steady state must lie inside the simplex"));
    }
    if !(solvent > 1e-12 * length) {
        return Err(e.invalid("ic", "the species fill the whole domain; the steady state must lie inside the simplex"));
    }

    Ok(Scenario {
        name,
        length,
        cells,
        species,
        diffusivities,
        q,
        chi,
        profiles,
        settings,
        t_end,
        cadence,
        out_dir,
        seed,
        model,
        mesh,
        initial,
        report,
    })
}

/// Reads and parses a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Text of the reference scenario with `q(s) = s^alpha`.
pub fn reference_text(name: &str, alpha: f64) -> String {
    format!(
        "name = {name}
L = 1
N = 100
n = 2
D.1 = 1.0
D.2 = 0.5
q = power {alpha}
chi = zero
ic.1 = cosine 0.3 0.2 1
ic.2 = cosine 0.3 -0.1 1
tau = 1e-3
tau_min = 1e-8
tau_max = 0.05
T = 50
output_dt = 0.1
entropy_guard = on
seed = 0
"
    )
}

/// Degenerate reference scenario (`q(s) = s^2`).
pub fn reference_s1() -> Scenario {
    parse_scenario(&reference_text("S1", 2.0), Path::new(".")).expect("reference scenario is valid")
}

/// Nondegenerate reference scenario (`q(s) = s`).
pub fn reference_s0() -> Scenario {
    parse_scenario(&reference_text("S0", 1.0), Path::new(".")).expect("reference scenario is valid")
}
