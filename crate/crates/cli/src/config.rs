//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Every key is
//! optional; missing keys fall back to the defaults of the chosen scenario.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use filmflow_core::constitutive::ViscosityLaw;
use filmflow_core::discretization::XiLaw;
use filmflow_core::stepper::StepConfig;
use filmflow_core::{Profile, RegularizationConfig, Scenario, ScenarioKind};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice (first on line {first})")]
    Duplicate { line: usize, key: String, first: usize },
    #[error("line {line}: key `{key}`: {message}")]
    Value {
        line: usize,
        key: String,
        message: String,
    },
    #[error("{}key `{key}`: {message}", .line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid {
        line: Option<usize>,
        key: String,
        message: String,
    },
}

/// Recognised keys, in the order they are documented.
pub const KEYS: &[(&str, &str)] = &[
    ("scenario", "zero | couette | coupled | mms-p2"),
    ("p", "flow exponent in [1.2, 2]"),
    ("deterministic", "true | false"),
    ("mu.family", "constant | bounded | thermo"),
    ("mu.c", "constant viscosity"),
    ("mu.mu0", "lower viscosity bound"),
    ("mu.mu1", "upper viscosity bound"),
    ("mu.alpha", "temperature sensitivity (thermo)"),
    ("mu.beta", "velocity sensitivity (thermo)"),
    ("domain.length", "film length L"),
    ("domain.profile", "constant | affine | cosine"),
    ("domain.h0", "thickness at x = 0 (mean thickness for cosine)"),
    ("domain.slope", "thickness slope (affine)"),
    ("domain.amplitude", "thickness amplitude (cosine)"),
    ("mesh.nx", "cells along the film"),
    ("mesh.nz", "cells across the film"),
    ("data.u", "lift speed at the bottom wall"),
    ("data.s", "bottom wall sliding speed"),
    ("data.k", "friction threshold"),
    ("data.f_x", "uniform body force, x component"),
    ("data.f_z", "uniform body force, z component"),
    ("data.theta0", "temperature amplitude (coupled)"),
    ("xi.family", "constant | exp | linear"),
    ("xi.initial", "xi(0), must be 1"),
    ("xi.rate", "decay rate (exp) or slope (linear)"),
    ("time.T", "final time"),
    ("time.steps", "number of time steps"),
    ("step.newton_tol", "Newton relative tolerance"),
    ("step.newton_max", "Newton iteration cap"),
    ("reg.eps", "comma-separated decreasing eps schedule"),
    ("reg.eta", "initial strain smoothing (default: automatic)"),
    ("reg.eta_floor", "smallest strain smoothing"),
    ("reg.delta", "friction smoothing (default: automatic)"),
    ("reg.picard_tol", "Picard relative tolerance"),
    ("reg.picard_max", "Picard iteration cap"),
    ("output.steps", "all | last | comma-separated step indices for field dumps"),
    ("sweep.key", "key varied by the sweep subcommand"),
    ("sweep.values", "comma-separated values for sweep.key"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutputSteps {
    All,
    Last,
    List(Vec<usize>),
}

impl OutputSteps {
    pub fn selected(&self, steps: usize) -> Vec<usize> {
        match self {
            OutputSteps::All => (0..=steps).collect(),
            OutputSteps::Last => vec![steps],
            OutputSteps::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub steps: usize,
    pub step: StepConfig,
    pub reg: RegularizationConfig,
    pub output: OutputSteps,
    pub deterministic: bool,
    pub sweep: Option<(String, Vec<String>)>,
    entries: BTreeMap<String, (String, usize)>,
}

struct Entries<'a> {
    map: &'a BTreeMap<String, (String, usize)>,
}

impl Entries<'_> {
    fn line(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|(_, l)| *l)
    }

    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.map.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn value_error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Value {
            line: self.line(key).unwrap_or(0),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, _)) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Some(x)),
                _ => Err(self.value_error(key, format!("expected a finite number, found {v:?}"))),
            },
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    fn usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, _)) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|_| self.value_error(key, format!("expected a non-negative integer, found {v:?}"))),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, _)) => split_list(v)
                .into_iter()
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| self.value_error(key, format!("expected a number, found {s:?}")))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            line: self.line(key),
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// Rejects `key` when the selected family does not use it.
    fn unused(&self, key: &str, family: &str) -> Result<(), ConfigError> {
        match self.line(key) {
            Some(_) => Err(self.invalid(key, format!("not used by {family}"))),
            None => Ok(()),
        }
    }
}

fn split_list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn tokenize(text: &str) -> Result<BTreeMap<String, (String, usize)>, ConfigError> {
    let mut map: BTreeMap<String, (String, usize)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                text: raw.to_string(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                text: raw.to_string(),
            });
        }
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        if let Some((_, first)) = map.get(key) {
            return Err(ConfigError::Duplicate {
                line,
                key: key.to_string(),
                first: *first,
            });
        }
        map.insert(key.to_string(), (value.to_string(), line));
    }
    Ok(map)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_entries(tokenize(text)?)
    }

    /// Copy of this config with one key replaced, revalidated.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self, ConfigError> {
        if !KEYS.iter().any(|(k, _)| *k == key) || key.starts_with("sweep.") {
            return Err(ConfigError::Invalid {
                line: self.entries.get("sweep.key").map(|(_, l)| *l),
                key: "sweep.key".into(),
                message: format!("`{key}` cannot be swept"),
            });
        }
        let mut entries = self.entries.clone();
        let line = entries.get(key).map(|(_, l)| *l).unwrap_or(0);
        entries.insert(key.to_string(), (value.to_string(), line));
        entries.remove("sweep.key");
        entries.remove("sweep.values");
        Self::from_entries(entries)
    }

    /// Canonical `key = value` listing of the explicitly given keys.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _) in KEYS {
            if let Some((v, _)) = self.entries.get(*k) {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    fn from_entries(map: BTreeMap<String, (String, usize)>) -> Result<Self, ConfigError> {
        let e = Entries { map: &map };
        let kind = match e.raw("scenario") {
            None => ScenarioKind::Couette,
            Some((v, _)) => v
                .parse::<ScenarioKind>()
                .map_err(|err| e.value_error("scenario", err.to_string()))?,
        };
        let mut s = Scenario::defaults(kind);

        s.p = e.f64_or("p", s.p)?;
        if !(1.2..=2.0).contains(&s.p) {
            return Err(e.invalid("p", format!("must lie in [1.2, 2], found {}", s.p)));
        }
        s.law = viscosity(&e, s.law)?;
        s.length = e.f64_or("domain.length", s.length)?;
        s.profile = profile(&e, s.profile)?;
        s.nx = e.usize("mesh.nx")?.unwrap_or(s.nx);
        s.nz = e.usize("mesh.nz")?.unwrap_or(s.nz);
        if s.nx == 0 || s.nz == 0 {
            return Err(e.invalid("mesh.nx", "mesh needs at least one cell in each direction"));
        }
        s.lift_speed = e.f64_or("data.u", s.lift_speed)?;
        s.wall_speed = e.f64_or("data.s", s.wall_speed)?;
        s.threshold = e.f64_or("data.k", s.threshold)?;
        if s.threshold < 0.0 {
            return Err(e.invalid("data.k", "friction threshold must be nonnegative"));
        }
        s.force = [e.f64_or("data.f_x", s.force[0])?, e.f64_or("data.f_z", s.force[1])?];
        s.theta0 = e.f64_or("data.theta0", s.theta0)?;
        s.xi = xi_law(&e, s.xi)?;
        s.horizon = e.f64_or("time.T", s.horizon)?;
        if s.horizon <= 0.0 {
            return Err(e.invalid("time.T", "final time must be positive"));
        }
        let steps = e.usize("time.steps")?.unwrap_or(10);
        if steps == 0 {
            return Err(e.invalid("time.steps", "need at least one time step"));
        }
        let mut step = StepConfig::new(s.horizon / steps as f64);
        step.newton_tol = e.f64_or("step.newton_tol", step.newton_tol)?;
        step.newton_max = e.usize("step.newton_max")?.unwrap_or(step.newton_max);
        if step.newton_tol <= 0.0 || step.newton_max == 0 {
            return Err(e.invalid("step.newton_tol", "Newton tolerance and cap must be positive"));
        }

        let mut reg = RegularizationConfig::default();
        if let Some(list) = e.f64_list("reg.eps")? {
            reg.eps_schedule = list;
        }
        reg.eta = e.f64("reg.eta")?;
        reg.eta_floor = e.f64_or("reg.eta_floor", reg.eta_floor)?;
        reg.delta = e.f64("reg.delta")?;
        reg.picard_tol = e.f64_or("reg.picard_tol", reg.picard_tol)?;
        reg.picard_max = e.usize("reg.picard_max")?.unwrap_or(reg.picard_max);
        if let Err(err) = reg.validate() {
            let key = match err {
                filmflow_core::continuation::ContinuationError::NonPositive { name, .. } => {
                    format!("reg.{name}")
                }
                _ => "reg.eps".to_string(),
            };
            return Err(e.invalid(&key, err.to_string()));
        }
        if reg.picard_max == 0 {
            return Err(e.invalid("reg.picard_max", "need at least one Picard iteration"));
        }

        let output = match e.raw("output.steps") {
            None | Some(("last", _)) => OutputSteps::Last,
            Some(("all", _)) => OutputSteps::All,
            Some((v, _)) => {
                let list = split_list(v)
                    .into_iter()
                    .map(|t| t.parse::<usize>().ok().filter(|&n| n <= steps))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| e.value_error("output.steps", format!("expected all, last or step indices in 0..={steps}")))?;
                OutputSteps::List(list)
            }
        };
        let deterministic = match e.raw("deterministic") {
            None | Some(("true", _)) => true,
            Some(("false", _)) => false,
            Some((v, _)) => return Err(e.value_error("deterministic", format!("expected true or false, found {v:?}"))),
        };
        let sweep = match (e.raw("sweep.key"), e.raw("sweep.values")) {
            (None, None) => None,
            (Some((k, _)), Some((v, _))) => Some((k.to_string(), split_list(v).into_iter().map(String::from).collect())),
            (Some(_), None) => return Err(e.invalid("sweep.key", "sweep.values is missing")),
            (None, Some(_)) => return Err(e.invalid("sweep.values", "sweep.key is missing")),
        };

        // scenario-level compatibility checks (flat film, xi(0) = 1, ...)
        if let Err(err) = s.build() {
            let key = match &err {
                filmflow_core::scenario::ScenarioError::Problem(p) => match p {
                    filmflow_core::discretization::ProblemError::Data(d) => match d {
                        filmflow_core::discretization::DataError::XiInitialValue(_) => "xi.initial",
                        filmflow_core::discretization::DataError::NegativeThreshold(_) => "data.k",
                        filmflow_core::discretization::DataError::NonPositiveHorizon(_) => "time.T",
                        _ => "domain.profile",
                    },
                    _ => "domain.profile",
                },
                filmflow_core::scenario::ScenarioError::Constitutive(_) => "mu.family",
                filmflow_core::scenario::ScenarioError::Requirement { requirement, .. } => {
                    if requirement.contains("thickness") {
                        "domain.profile"
                    } else if requirement.contains("viscosity") {
                        "mu.family"
                    } else {
                        "scenario"
                    }
                }
                _ => "scenario",
            };
            return Err(e.invalid(key, err.to_string()));
        }

        Ok(Self {
            scenario: s,
            steps,
            step,
            reg,
            output,
            deterministic,
            sweep,
            entries: map,
        })
    }
}

fn viscosity(e: &Entries, default: ViscosityLaw) -> Result<ViscosityLaw, ConfigError> {
    let family = match e.raw("mu.family") {
        None => match default {
            ViscosityLaw::Constant(_) => "constant",
            ViscosityLaw::BoundedIncreasing { .. } => "bounded",
            ViscosityLaw::ThermoCoupled { .. } => "thermo",
        },
        Some((v, _)) => v,
    };
    let (d0, d1) = default.bounds();
    let law = match family {
        "constant" => {
            for k in ["mu.mu0", "mu.mu1", "mu.alpha", "mu.beta"] {
                e.unused(k, "the constant family")?;
            }
            ViscosityLaw::Constant(e.f64_or("mu.c", d0)?)
        }
        "bounded" => {
            for k in ["mu.c", "mu.alpha", "mu.beta"] {
                e.unused(k, "the bounded family")?;
            }
            ViscosityLaw::BoundedIncreasing {
                mu0: e.f64_or("mu.mu0", d0)?,
                mu1: e.f64_or("mu.mu1", d1.max(2.0 * d0))?,
            }
        }
        "thermo" => {
            e.unused("mu.c", "the thermo family")?;
            let (a, b) = match default {
                ViscosityLaw::ThermoCoupled { alpha, beta, .. } => (alpha, beta),
                _ => (1.0, 0.5),
            };
            ViscosityLaw::ThermoCoupled {
                mu0: e.f64_or("mu.mu0", d0)?,
                mu1: e.f64_or("mu.mu1", d1.max(2.0 * d0))?,
                alpha: e.f64_or("mu.alpha", a)?,
                beta: e.f64_or("mu.beta", b)?,
            }
        }
        other => {
            return Err(e.value_error("mu.family", format!("expected constant, bounded or thermo, found {other:?}")))
        }
    };
    let (lo, hi) = law.bounds();
    if lo <= 0.0 || hi < lo {
        let key = if e.line("mu.c").is_some() { "mu.c" } else { "mu.mu0" };
        return Err(e.invalid(key, format!("viscosity bounds must satisfy 0 < mu0 <= mu1, found [{lo}, {hi}]")));
    }
    Ok(law)
}

fn profile(e: &Entries, default: Profile) -> Result<Profile, ConfigError> {
    let h_default = match default {
        Profile::Constant { h0 } | Profile::Affine { h0, .. } => h0,
        Profile::Cosine { mean, .. } => mean,
    };
    let h0 = e.f64_or("domain.h0", h_default)?;
    match e.raw("domain.profile").map(|(v, _)| v).unwrap_or("constant") {
        "constant" => {
            e.unused("domain.slope", "the constant profile")?;
            e.unused("domain.amplitude", "the constant profile")?;
            Ok(Profile::Constant { h0 })
        }
        "affine" => {
            e.unused("domain.amplitude", "the affine profile")?;
            Ok(Profile::Affine {
                h0,
                slope: e.f64_or("domain.slope", 0.0)?,
            })
        }
        "cosine" => {
            e.unused("domain.slope", "the cosine profile")?;
            Ok(Profile::Cosine {
                mean: h0,
                amplitude: e.f64_or("domain.amplitude", 0.0)?,
            })
        }
        other => Err(e.value_error("domain.profile", format!("expected constant, affine or cosine, found {other:?}"))),
    }
}

fn xi_law(e: &Entries, default: XiLaw) -> Result<XiLaw, ConfigError> {
    let initial = e.f64_or("xi.initial", default.value(0.0))?;
    if initial != 1.0 {
        return Err(e.invalid("xi.initial", format!("the time modulation must satisfy xi(0) = 1, found xi(0) = {initial}")));
    }
    match e.raw("xi.family").map(|(v, _)| v).unwrap_or("constant") {
        "constant" => {
            e.unused("xi.rate", "the constant modulation")?;
            Ok(XiLaw::Constant { initial })
        }
        "exp" => Ok(XiLaw::Exponential {
            initial,
            rate: e.f64_or("xi.rate", 1.0)?,
        }),
        "linear" => Ok(XiLaw::Linear {
            initial,
            slope: e.f64_or("xi.rate", 0.0)?,
        }),
        other => Err(e.value_error("xi.family", format!("expected constant, exp or linear, found {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_couette() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.scenario.kind, ScenarioKind::Couette);
        assert_eq!(c.steps, 10);
        assert!((c.step.dt - 0.1).abs() < 1e-15);
        assert_eq!(c.output, OutputSteps::Last);
    }

    #[test]
    fn parses_all_sections() {
        let text = "\
# comment
scenario = coupled
p = 1.8
mu.family = thermo
mu.mu0 = 0.5
mu.mu1 = 3   # trailing comment
mu.alpha = 2
mesh.nx = 6
mesh.nz = 3
reg.eps = 1e-1, 1e-2
time.T = 0.5
time.steps = 5
output.steps = 0, 5
xi.family = exp
xi.rate = 0.5
";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.scenario.p, 1.8);
        assert_eq!(
            c.scenario.law,
            ViscosityLaw::ThermoCoupled {
                mu0: 0.5,
                mu1: 3.0,
                alpha: 2.0,
                beta: 0.5
            }
        );
        assert_eq!(c.reg.eps_schedule, vec![1e-1, 1e-2]);
        assert_eq!(c.output, OutputSteps::List(vec![0, 5]));
        assert_eq!(c.scenario.xi, XiLaw::Exponential { initial: 1.0, rate: 0.5 });
        assert_eq!((c.scenario.nx, c.scenario.nz), (6, 3));
    }

    #[test]
    fn errors_cite_line_and_key() {
        let err = RunConfig::parse("p = 1.5\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 2, .. }), "{err}");
        let err = RunConfig::parse("p = 1.5\np = 1.6\n").unwrap_err();
        assert!(matches!(err, ConfigError::Duplicate { line: 2, first: 1, .. }));
        let err = RunConfig::parse("p 1.5\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }));
        let err = RunConfig::parse("\nmesh.nx = -2\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2: key `mesh.nx`"), "{err}");
        let err = RunConfig::parse("p = 2.5\n").unwrap_err();
        assert!(err.to_string().contains("line 1: key `p`"), "{err}");
    }

    #[test]
    fn cross_field_checks() {
        let err = RunConfig::parse("xi.family = exp\nxi.initial = 0.5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("xi.initial") && msg.contains("xi(0) = 1"), "{msg}");
        let err = RunConfig::parse("domain.profile = affine\ndomain.slope = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("domain.profile"), "{err}");
        let err = RunConfig::parse("scenario = coupled\nmu.family = constant\n").unwrap_err();
        assert!(err.to_string().contains("line 2: key `mu.family`"), "{err}");
        let err = RunConfig::parse("reg.eps = 1e-2, 1e-1\n").unwrap_err();
        assert!(err.to_string().contains("reg.eps"), "{err}");
        let err = RunConfig::parse("mu.family = constant\nmu.mu1 = 2\n").unwrap_err();
        assert!(err.to_string().contains("mu.mu1"), "{err}");
    }

    #[test]
    fn overrides_revalidate() {
        let c = RunConfig::parse("data.k = 1\nsweep.key = data.k\nsweep.values = 0.5, 2\n").unwrap();
        assert_eq!(c.sweep, Some(("data.k".into(), vec!["0.5".into(), "2".into()])));
        let d = c.with_override("data.k", "2").unwrap();
        assert_eq!(d.scenario.threshold, 2.0);
        assert!(d.sweep.is_none());
        assert!(c.with_override("data.k", "-1").is_err());
        assert!(c.with_override("nonsense", "1").is_err());
        assert!(d.to_text().contains("data.k = 2"));
    }
}
