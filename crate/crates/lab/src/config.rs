//! Scenario files.
//!
//! A scenario is plain text made of `key = value` lines grouped under
//! `[section]` headers; `#` starts a comment. Keys before the first header
//! belong to the top level (`name`, `command`). Lists are comma-separated.
//!
//! ```text
//! name = flow-demo
//! command = flow
//!
//! [model]
//! profile = euclidean
//! n = 3
//! h = 0.05
//! N = 320
//! potential = gaussian
//!
//! [flow]
//! dt = 0.05
//! horizon = 2
//! initial = envelope
//! ```
//!
//! Unknown sections and keys, missing required keys, malformed values and
//! out-of-range values are errors that carry the offending line number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line; `None` when the problem is the absence of a line.
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError { line: Some(line), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Geometry,
    Poisson,
    Flow,
    Stability,
    Decay,
    Riccati,
    Report,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Geometry,
        Command::Poisson,
        Command::Flow,
        Command::Stability,
        Command::Decay,
        Command::Riccati,
        Command::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Geometry => "geometry",
            Command::Poisson => "poisson",
            Command::Flow => "flow",
            Command::Stability => "stability",
            Command::Decay => "decay",
            Command::Riccati => "riccati",
            Command::Report => "report",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Command::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown command `{s}`"))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Euclidean,
    SphereCap,
    Cylinder,
    FromCurvature,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    /// `R0` from the warp function.
    Geometric,
    Zero,
    /// `amplitude * exp(-(r / width)²)`.
    Gaussian {
        amplitude: f64,
        width: f64,
    },
    /// The three-dimensional `tanh` fixture with its closed-form potential.
    CylinderBump,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub profile: ProfileKind,
    pub n: u32,
    pub h: f64,
    pub cells: usize,
    pub potential: Potential,
    /// Node table for `from_curvature` (K) and `tabulated` (f).
    pub table: Option<Vec<f64>>,
    pub nonnegative: bool,
}

impl ModelSpec {
    pub fn extent(&self) -> f64 {
        self.cells as f64 * self.h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryParams {
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoissonMode {
    M,
    H,
}

/// Shape of `φ - 1` in mode H.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiShape {
    /// `(1 + r²)^{-1/2}`, superharmonic for every `n ≥ 3`.
    Harmonic,
    /// `e^{-r}`.
    Exponential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonParams {
    pub mode: PoissonMode,
    pub schedule: Vec<f64>,
    pub tol: f64,
    pub decay_fraction: f64,
    pub phi: PhiShape,
    pub phi_amplitude: f64,
    pub theta_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Initial {
    One,
    /// `1 + amplitude e^{-r²}`.
    Bump,
    /// `1 + amplitude C v` with `v` the Property-(M) solution.
    Envelope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    pub dt: f64,
    pub horizon: f64,
    pub stride: usize,
    pub initial: Initial,
    pub amplitude: f64,
    pub barrier_c: f64,
    pub porous_medium: bool,
    pub schedule: Vec<f64>,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityParams {
    pub cutoff_radius: f64,
    pub k: Option<u32>,
    pub dt: f64,
    pub horizon: f64,
    pub sample_step: f64,
    /// `v0 = 1 + amplitude e^{-r²}` against `u0 = 1`.
    pub amplitude: f64,
    pub kato_trials: usize,
    /// Test hook: a leaking solver on the first trajectory.
    pub fault_leak: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayParams {
    pub radii: Vec<f64>,
    pub amplitude: f64,
    pub t_probe: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiParams {
    pub case2: bool,
    pub a0: Option<f64>,
    pub v0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportParams {
    /// Resolved against the directory of the report file.
    pub scenarios: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Geometry(GeometryParams),
    Poisson(PoissonParams),
    Flow(FlowParams),
    Stability(StabilityParams),
    Decay(DecayParams),
    Riccati(RiccatiParams),
    Report(ReportParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub command: Command,
    /// Absent only for `report`.
    pub model: Option<ModelSpec>,
    pub params: Params,
    /// Raw file text, hashed into the manifest.
    pub source: String,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

#[derive(Debug, Default)]
struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

/// Line-level grammar only: sections, keys, duplicates.
#[derive(Debug, Default)]
struct Document {
    sections: BTreeMap<String, Section>,
}

fn tokenize(text: &str) -> Result<Document> {
    let mut doc = Document::default();
    doc.sections.insert(String::new(), Section { line: 0, ..Default::default() });
    let mut current = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name =
                rest.strip_suffix(']').ok_or_else(|| ConfigError::at(line, "section header must end with `]`"))?.trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(ConfigError::at(line, format!("invalid section name `{name}`")));
            }
            if doc.sections.contains_key(name) {
                return Err(ConfigError::at(line, format!("section `[{name}]` appears twice")));
            }
            doc.sections.insert(name.to_string(), Section { line, ..Default::default() });
            current = name.to_string();
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line, format!("expected `key = value`, found `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ConfigError::at(line, format!("invalid key `{key}`")));
        }
        if value.is_empty() {
            return Err(ConfigError::at(line, format!("`{key}` has no value")));
        }
        let section = doc.sections.get_mut(&current).expect("current section exists");
        if let Some(prev) = section.entries.get(key) {
            return Err(ConfigError::at(line, format!("`{key}` already set on line {}", prev.line)));
        }
        section.entries.insert(key.to_string(), Entry { value: value.to_string(), line, used: false });
    }
    Ok(doc)
}

/// Typed access to one section; every read marks the key as known.
struct Reader<'a> {
    name: &'a str,
    section: &'a mut Section,
}

impl<'a> Reader<'a> {
    fn label(&self) -> String {
        if self.name.is_empty() {
            "top level".to_string()
        } else {
            format!("[{}]", self.name)
        }
    }

    fn raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.section.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn missing(&self, key: &str) -> ConfigError {
        let msg = format!("missing required key `{key}` in {}", self.label());
        if self.section.line > 0 {
            ConfigError::at(self.section.line, msg)
        } else {
            ConfigError { line: None, message: msg }
        }
    }

    fn parse<T: FromStr>(&mut self, key: &str, kind: &str) -> Result<Option<(T, usize)>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(|x| Some((x, line)))
                .map_err(|_| ConfigError::at(line, format!("`{key}` must be {kind}, found `{v}`"))),
        }
    }

    fn real(&mut self, key: &str) -> Result<Option<(f64, usize)>> {
        match self.parse::<f64>(key, "a number")? {
            Some((x, line)) if !x.is_finite() => Err(ConfigError::at(line, format!("`{key}` must be finite"))),
            other => Ok(other),
        }
    }

    fn positive(&mut self, key: &str, default: Option<f64>) -> Result<f64> {
        match self.real(key)? {
            Some((x, line)) if x <= 0.0 => Err(ConfigError::at(line, format!("{key} must be > 0 (got {x})"))),
            Some((x, _)) => Ok(x),
            None => default.ok_or_else(|| self.missing(key)),
        }
    }

    fn nonnegative(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.real(key)? {
            Some((x, line)) if x < 0.0 => Err(ConfigError::at(line, format!("{key} must be ≥ 0 (got {x})"))),
            Some((x, _)) => Ok(x),
            None => Ok(default),
        }
    }

    fn count(&mut self, key: &str, min: usize, default: Option<usize>) -> Result<usize> {
        match self.parse::<usize>(key, "a non-negative integer")? {
            Some((x, line)) if x < min => Err(ConfigError::at(line, format!("{key} must be ≥ {min} (got {x})"))),
            Some((x, _)) => Ok(x),
            None => default.ok_or_else(|| self.missing(key)),
        }
    }

    fn flag(&mut self, key: &str, default: bool) -> Result<bool> {
        Ok(self.parse::<bool>(key, "`true` or `false`")?.map_or(default, |(b, _)| b))
    }

    fn word(&mut self, key: &str) -> Option<(String, usize)> {
        self.raw(key)
    }

    fn list(&mut self, key: &str) -> Result<Option<(Vec<f64>, usize)>> {
        let Some((v, line)) = self.raw(key) else { return Ok(None) };
        let items = parse_list(&v).map_err(|item| {
            ConfigError::at(line, format!("`{key}` must be a comma-separated list of numbers, bad item `{item}`"))
        })?;
        Ok(Some((items, line)))
    }

    fn finish(self) -> Result<()> {
        let unknown = self.section.entries.iter().filter(|(_, e)| !e.used).min_by_key(|(_, e)| e.line);
        match unknown {
            Some((k, e)) => Err(ConfigError::at(e.line, format!("unknown key `{k}` in {}", self.label()))),
            None => Ok(()),
        }
    }
}

fn parse_list(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(s.to_string()),
        })
        .collect()
}

fn reader<'a>(doc: &'a mut Document, name: &'a str) -> Option<Reader<'a>> {
    doc.sections.get_mut(name).map(|section| Reader { name, section })
}

fn check_radii(radii: &[f64], line: usize, extent: f64, key: &str) -> Result<()> {
    if radii.is_empty() {
        return Err(ConfigError::at(line, format!("`{key}` must not be empty")));
    }
    for &r in radii {
        if !(r > 0.0) || r > extent * (1.0 + 1e-12) {
            return Err(ConfigError::at(line, format!("radius {r} in `{key}` outside the grid (0, {extent}]")));
        }
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ConfigError::at(line, format!("`{key}` must be strictly increasing")));
    }
    Ok(())
}

fn default_schedule(extent: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = 4.0f64.min(extent);
    while r < extent * (1.0 - 1e-12) {
        out.push(r);
        r *= 2.0;
    }
    out.push(extent);
    out
}

fn schedule(rd: &mut Reader, extent: f64) -> Result<Vec<f64>> {
    match rd.list("schedule")? {
        Some((s, line)) => {
            check_radii(&s, line, extent, "schedule")?;
            Ok(s)
        }
        None => Ok(default_schedule(extent)),
    }
}

fn read_table(path: &Path, line: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::at(line, format!("cannot read table {}: {e}", path.display())))?;
    parse_list(&text).map_err(|item| ConfigError::at(line, format!("bad number `{item}` in {}", path.display())))
}

fn parse_model(doc: &mut Document, base: &Path) -> Result<ModelSpec> {
    let mut rd = reader(doc, "model").ok_or(ConfigError { line: None, message: "missing section [model]".into() })?;
    let (profile_name, profile_line) = rd.word("profile").ok_or_else(|| rd.missing("profile"))?;
    let profile = match profile_name.as_str() {
        "euclidean" => ProfileKind::Euclidean,
        "sphere_cap" => ProfileKind::SphereCap,
        "cylinder" => ProfileKind::Cylinder,
        "from_curvature" => ProfileKind::FromCurvature,
        "tabulated" => ProfileKind::Tabulated,
        other => {
            return Err(ConfigError::at(
                profile_line,
                format!("unknown profile `{other}` (euclidean, sphere_cap, cylinder, from_curvature, tabulated)"),
            ))
        }
    };
    let n = match rd.parse::<i64>("n", "an integer")? {
        Some((n, line)) if n < 3 => return Err(ConfigError::at(line, "n must be ≥ 3")),
        Some((n, line)) if n > 64 => return Err(ConfigError::at(line, "n must be ≤ 64")),
        Some((n, _)) => n as u32,
        None => return Err(rd.missing("n")),
    };
    let h = rd.positive("h", None)?;
    let cells = rd.count("N", 8, None)?;
    let potential = match rd.word("potential") {
        None => Potential::Geometric,
        Some((p, line)) => match p.as_str() {
            "geometric" => Potential::Geometric,
            "zero" => Potential::Zero,
            "gaussian" => Potential::Gaussian { amplitude: 0.0, width: 0.0 },
            "cylinder_bump" => {
                if profile != ProfileKind::Cylinder || n != 3 {
                    return Err(ConfigError::at(line, "potential `cylinder_bump` needs profile = cylinder and n = 3"));
                }
                Potential::CylinderBump
            }
            other => {
                return Err(ConfigError::at(
                    line,
                    format!("unknown potential `{other}` (geometric, zero, gaussian, cylinder_bump)"),
                ))
            }
        },
    };
    let potential = match potential {
        Potential::Gaussian { .. } => Potential::Gaussian {
            amplitude: rd.nonnegative("potential_amplitude", 1.0)?,
            width: rd.positive("potential_width", Some(1.0))?,
        },
        other => other,
    };
    let table = match (profile, rd.word("table")) {
        (ProfileKind::FromCurvature | ProfileKind::Tabulated, Some((p, line))) => {
            let values = read_table(&base.join(p), line)?;
            if values.len() != cells + 1 {
                return Err(ConfigError::at(
                    line,
                    format!("table has {} values, expected N + 1 = {}", values.len(), cells + 1),
                ));
            }
            Some(values)
        }
        (ProfileKind::FromCurvature | ProfileKind::Tabulated, None) => return Err(rd.missing("table")),
        (_, Some((_, line))) => {
            return Err(ConfigError::at(line, "`table` only applies to from_curvature and tabulated"))
        }
        (_, None) => None,
    };
    let nonnegative = rd.flag("nonnegative", false)?;
    rd.finish()?;
    Ok(ModelSpec { profile, n, h, cells, potential, table, nonnegative })
}

fn parse_params(doc: &mut Document, command: Command, model: Option<&ModelSpec>, base: &Path) -> Result<Params> {
    let name = command.as_str();
    let mut empty = Section::default();
    let mut rd = match doc.sections.get_mut(name) {
        Some(section) => Reader { name, section },
        None => Reader { name, section: &mut empty },
    };
    let extent = model.map_or(f64::INFINITY, ModelSpec::extent);
    let params = match command {
        Command::Geometry => {
            let radii = match rd.list("radii")? {
                Some((r, line)) => {
                    check_radii(&r, line, extent, "radii")?;
                    r
                }
                None => Vec::new(),
            };
            Params::Geometry(GeometryParams { radii })
        }
        Command::Poisson => {
            let mode = match rd.word("mode") {
                None => PoissonMode::M,
                Some((m, line)) => match m.as_str() {
                    "m" | "M" => PoissonMode::M,
                    "h" | "H" => PoissonMode::H,
                    other => return Err(ConfigError::at(line, format!("mode must be `m` or `h`, found `{other}`"))),
                },
            };
            let schedule = schedule(&mut rd, extent)?;
            let tol = rd.positive("tol", Some(1e-6))?;
            let decay_fraction = rd.positive("decay_fraction", Some(0.05))?;
            let phi = match rd.word("phi") {
                None => PhiShape::Harmonic,
                Some((w, line)) => match w.as_str() {
                    "harmonic" => PhiShape::Harmonic,
                    "exponential" => PhiShape::Exponential,
                    other => {
                        return Err(ConfigError::at(
                            line,
                            format!("phi must be `harmonic` or `exponential`, found `{other}`"),
                        ))
                    }
                },
            };
            let phi_amplitude = rd.nonnegative("phi_amplitude", 1.0)?;
            let theta_bound = match rd.real("theta_bound")? {
                Some((t, line)) if !(t > 0.0 && t < 1.0) => {
                    return Err(ConfigError::at(line, format!("theta_bound must lie in (0, 1) (got {t})")))
                }
                Some((t, _)) => t,
                None => 0.9,
            };
            Params::Poisson(PoissonParams { mode, schedule, tol, decay_fraction, phi, phi_amplitude, theta_bound })
        }
        Command::Flow => {
            let dt = rd.positive("dt", None)?;
            let horizon = rd.positive("horizon", None)?;
            if horizon < dt {
                return Err(ConfigError::at(
                    rd.section.line.max(1),
                    format!("horizon {horizon} is shorter than dt {dt}"),
                ));
            }
            let stride = rd.count("stride", 1, Some(10))?;
            let initial = match rd.word("initial") {
                None => Initial::One,
                Some((i, line)) => match i.as_str() {
                    "one" => Initial::One,
                    "bump" => Initial::Bump,
                    "envelope" => Initial::Envelope,
                    other => {
                        return Err(ConfigError::at(line, format!("unknown initial `{other}` (one, bump, envelope)")))
                    }
                },
            };
            let amplitude = rd.real("amplitude")?.map_or(0.5, |(a, _)| a);
            let barrier_c = match rd.real("barrier_c")? {
                Some((c, line)) if c < 1.0 => {
                    return Err(ConfigError::at(line, format!("barrier_c must be ≥ 1 (got {c})")))
                }
                Some((c, _)) => c,
                None => 1.0,
            };
            let porous_medium = match rd.word("form") {
                None => false,
                Some((f, line)) => match f.as_str() {
                    "conformal" => false,
                    "porous_medium" => true,
                    other => {
                        return Err(ConfigError::at(line, format!("unknown form `{other}` (conformal, porous_medium)")))
                    }
                },
            };
            let schedule = schedule(&mut rd, extent)?;
            let tol = rd.positive("tol", Some(1e-6))?;
            Params::Flow(FlowParams {
                dt,
                horizon,
                stride,
                initial,
                amplitude,
                barrier_c,
                porous_medium,
                schedule,
                tol,
            })
        }
        Command::Stability => {
            let (cutoff_radius, line) = rd.real("cutoff_radius")?.ok_or_else(|| rd.missing("cutoff_radius"))?;
            check_radii(&[cutoff_radius], line, extent, "cutoff_radius")?;
            let k = match rd.parse::<u32>("k", "a positive integer")? {
                Some((k, line)) if k == 0 => return Err(ConfigError::at(line, "k must be > 0")),
                other => other.map(|(k, _)| k),
            };
            let dt = rd.positive("dt", Some(0.05))?;
            let horizon = rd.positive("horizon", Some(2.0))?;
            let sample_step = rd.positive("sample_step", Some(0.2))?;
            let amplitude = rd.real("amplitude")?.map_or(0.3, |(a, _)| a);
            let kato_trials = rd.count("kato_trials", 0, Some(0))?;
            let fault_leak = rd.real("fault_leak")?.map(|(x, _)| x).filter(|&x| x != 0.0);
            Params::Stability(StabilityParams {
                cutoff_radius,
                k,
                dt,
                horizon,
                sample_step,
                amplitude,
                kato_trials,
                fault_leak,
            })
        }
        Command::Decay => {
            let (radii, line) = rd.list("radii")?.ok_or_else(|| rd.missing("radii"))?;
            check_radii(&radii, line, extent, "radii")?;
            if radii.len() < 2 {
                return Err(ConfigError::at(line, "`radii` needs at least two values"));
            }
            let amplitude = rd.real("amplitude")?.map_or(0.5, |(a, _)| a);
            let t_probe = rd.positive("t_probe", Some(1.0))?;
            let dt = rd.positive("dt", Some(0.05))?;
            Params::Decay(DecayParams { radii, amplitude, t_probe, dt })
        }
        Command::Riccati => {
            let case2 = match rd.word("case") {
                None => false,
                Some((c, line)) => match c.as_str() {
                    "case1" => false,
                    "case2" => true,
                    other => {
                        return Err(ConfigError::at(line, format!("case must be `case1` or `case2`, found `{other}`")))
                    }
                },
            };
            let a0 = rd.real("a0")?.map(|(a, _)| a);
            let v0 = match rd.real("v0")? {
                Some((v, line)) if v <= 0.0 => return Err(ConfigError::at(line, format!("v0 must be > 0 (got {v})"))),
                other => other.map(|(v, _)| v),
            };
            let fixture = model.is_some_and(|m| m.potential == Potential::CylinderBump);
            if a0.is_none() && !fixture {
                return Err(rd.missing("a0"));
            }
            Params::Riccati(RiccatiParams { case2, a0, v0 })
        }
        Command::Report => {
            let (list, line) = rd.word("scenarios").ok_or_else(|| rd.missing("scenarios"))?;
            let scenarios: Vec<PathBuf> =
                list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| base.join(s)).collect();
            if scenarios.is_empty() {
                return Err(ConfigError::at(line, "`scenarios` must list at least one file"));
            }
            Params::Report(ReportParams { scenarios })
        }
    };
    rd.finish()?;
    Ok(params)
}

/// Parses scenario text. `base` resolves relative paths; `expected` is the
/// command named on the command line, which a `command` key must match.
pub fn parse_scenario(text: &str, base: &Path, expected: Option<Command>, fallback_name: &str) -> Result<Scenario> {
    let mut doc = tokenize(text)?;
    let mut top = reader(&mut doc, "").expect("top level exists");
    let name = top.word("name").map_or_else(|| fallback_name.to_string(), |(n, _)| n);
    let command = match (top.word("command"), expected) {
        (Some((c, line)), expected) => {
            let c: Command = c.parse().map_err(|e: String| ConfigError::at(line, e))?;
            if let Some(e) = expected.filter(|&e| e != c) {
                return Err(ConfigError::at(line, format!("config is for `{c}` but `{e}` was requested")));
            }
            c
        }
        (None, Some(e)) => e,
        (None, None) => return Err(ConfigError { line: None, message: "missing required key `command`".into() }),
    };
    top.finish()?;
    let model = if command == Command::Report { None } else { Some(parse_model(&mut doc, base)?) };
    let params = parse_params(&mut doc, command, model.as_ref(), base)?;
    let allowed = ["", "model", command.as_str()];
    if let Some((name, s)) =
        doc.sections.iter().filter(|(k, _)| !allowed.contains(&k.as_str())).min_by_key(|(_, s)| s.line)
    {
        return Err(ConfigError::at(s.line, format!("unknown section `[{name}]` for command `{command}`")));
    }
    Ok(Scenario { name, command, model, params, source: text.to_string() })
}

pub fn parse_config(path: &Path, expected: Option<Command>) -> std::result::Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError { line: None, message: format!("cannot read {}: {e}", path.display()) })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    parse_scenario(&text, base, expected, stem)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Scenario> {
        parse_scenario(text, Path::new("."), None, "t")
    }

    const GEOMETRY: &str = "command = geometry\n[model]\nprofile = euclidean\nn = 3\nh = 0.01\nN = 1000\n";

    #[test]
    fn minimal_geometry() {
        let s = parse(GEOMETRY).unwrap();
        assert_eq!(s.command, Command::Geometry);
        let m = s.model.unwrap();
        assert_eq!((m.n, m.h, m.cells), (3, 0.01, 1000));
        assert_eq!(m.potential, Potential::Geometric);
        assert_eq!(s.params, Params::Geometry(GeometryParams { radii: vec![] }));
    }

    #[test]
    fn dimension_below_three() {
        let e = parse(&GEOMETRY.replace("n = 3", "n = 2")).unwrap_err();
        assert_eq!(e.line, Some(4));
        assert!(e.message.contains("n must be ≥ 3"));
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let text = "command = flow\n[model]\nprofile = euclidean\nn = 3\nh = 0.1\nN = 80\n[flow]\ndt = 0.1\ndtt = 0.2\nhorizon = 1\n";
        let e = parse(text).unwrap_err();
        assert_eq!(e.line, Some(9));
        assert!(e.message.contains("`dtt`"), "{e}");
    }

    #[test]
    fn type_mismatch_and_missing_key() {
        let e = parse(&GEOMETRY.replace("h = 0.01", "h = fast")).unwrap_err();
        assert_eq!(e.line, Some(5));
        let e = parse(&GEOMETRY.replace("N = 1000\n", "")).unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.message.contains("`N`"));
    }

    #[test]
    fn radii_must_fit_the_grid() {
        let text = format!("{GEOMETRY}[geometry]\nradii = 1, 2, 20\n");
        let e = parse(&text).unwrap_err();
        assert_eq!(e.line, Some(8));
        let ok = parse(&format!("{GEOMETRY}[geometry]\nradii = 1, 2, 10\n")).unwrap();
        assert_eq!(ok.params, Params::Geometry(GeometryParams { radii: vec![1.0, 2.0, 10.0] }));
    }

    #[test]
    fn grammar_errors() {
        assert_eq!(parse("command = geometry\n[model\n").unwrap_err().line, Some(2));
        assert_eq!(parse("command = geometry\nno equals sign\n").unwrap_err().line, Some(2));
        assert_eq!(parse("command = geometry\nname = a\nname = b\n").unwrap_err().line, Some(3));
        let e = parse(&format!("{GEOMETRY}[flow]\ndt = 1\n")).unwrap_err();
        assert_eq!(e.line, Some(7));
        assert!(parse("[model]\nprofile = euclidean\n").is_err());
    }

    #[test]
    fn command_must_match_request() {
        let e = parse_scenario(GEOMETRY, Path::new("."), Some(Command::Flow), "t").unwrap_err();
        assert_eq!(e.line, Some(1));
        let s = parse_scenario(&GEOMETRY[19..], Path::new("."), Some(Command::Geometry), "t").unwrap();
        assert_eq!(s.command, Command::Geometry);
    }

    #[test]
    fn comments_and_defaults() {
        let text = "# stability run\ncommand = stability # trailing\n[model]\nprofile = euclidean\nn = 3\nh = 0.05\nN = 480\npotential = gaussian\n[stability]\ncutoff_radius = 16\n";
        let s = parse(text).unwrap();
        assert_eq!(s.model.unwrap().potential, Potential::Gaussian { amplitude: 1.0, width: 1.0 });
        let Params::Stability(p) = s.params else { panic!() };
        assert_eq!((p.dt, p.horizon, p.sample_step, p.fault_leak), (0.05, 2.0, 0.2, None));
    }

    #[test]
    fn fixture_requirements() {
        let text =
            "command = riccati\n[model]\nprofile = euclidean\nn = 3\nh = 0.1\nN = 100\npotential = cylinder_bump\n";
        assert_eq!(parse(text).unwrap_err().line, Some(7));
        let text = "command = riccati\n[model]\nprofile = euclidean\nn = 3\nh = 0.1\nN = 100\n";
        assert!(parse(text).unwrap_err().message.contains("`a0`"));
    }

    #[test]
    fn default_schedule_doubles_up_to_extent() {
        assert_eq!(default_schedule(32.0), vec![4.0, 8.0, 16.0, 32.0]);
        assert_eq!(default_schedule(20.0), vec![4.0, 8.0, 16.0, 20.0]);
        assert_eq!(default_schedule(3.0), vec![3.0]);
    }
}
