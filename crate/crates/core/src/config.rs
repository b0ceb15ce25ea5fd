//! Experiment configuration: a flat `key = value` text format with optional
//! `[section]` headers that prefix the keys below them (`[smc]` then
//! `particles = 300` sets `smc.particles`). Lines starting with `#` or `;` are
//! comments.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fredmd::{Imputer, Month, Strategy, Target};
use crate::gds::{GdsConfig, StepSize};
use crate::harness::{HarnessMethod, RollingConfig};
use crate::l1::LassoConfig;
use crate::model::SolverKind;
use crate::oracle::OracleSpec;
use crate::paths::SolverSettings;
use crate::selection::SelectionPlan;
use crate::sim::{DgpKind, DgpSpec, Mechanism, Method, StudyConfig};
use crate::smc::SmcConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Simulate,
    Ingest,
    Backtest,
    OracleCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Ingest => "ingest",
            Command::Backtest => "backtest",
            Command::OracleCheck => "oracle-check",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "simulate" => Ok(Command::Simulate),
            "ingest" => Ok(Command::Ingest),
            "backtest" => Ok(Command::Backtest),
            "oracle-check" | "oracle_check" => Ok(Command::OracleCheck),
            other => Err(invalid("command", format!("unknown command `{other}`"))),
        }
    }
}

/// Simulation design selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    One,
    Two,
    Three,
    FaPredictors,
    FaFactors,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::One => "1",
            Setting::Two => "2",
            Setting::Three => "3",
            Setting::FaPredictors => "fa-predictors",
            Setting::FaFactors => "fa-factors",
        }
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" => Ok(Setting::One),
            "2" => Ok(Setting::Two),
            "3" => Ok(Setting::Three),
            "fa-predictors" | "4" => Ok(Setting::FaPredictors),
            "fa-factors" | "5" => Ok(Setting::FaFactors),
            other => Err(invalid("setting", format!("unknown setting `{other}`"))),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::ConfigInvalid { field: field.into(), reason: reason.into() }
}

/// Attributes `e` to `field` unless it already names one.
fn attribute(field: &str, e: Error) -> Error {
    match e {
        Error::ConfigInvalid { .. } => e,
        other => invalid(field, other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub seed: u64,
    pub out: String,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Method names; empty means the command's default set.
    pub solvers: Vec<String>,
    pub k_max: Option<usize>,

    pub setting: Setting,
    pub r2: f64,
    pub t: usize,
    pub reps: usize,
    pub test_size: Option<usize>,
    pub plan: Option<SelectionPlan>,

    pub smc: SmcConfig,
    pub gds: GdsConfig,
    pub lasso: LassoConfig,

    pub fredmd: Option<String>,
    pub targets: Vec<Target>,
    pub horizons: Vec<usize>,
    pub strategy: Strategy,
    pub imputer: Imputer,
    pub window: usize,
    pub validation: usize,
    pub first_target: Month,
    pub last_target: Month,
    pub ar_max_order: usize,
    pub fa_max_factors: usize,
    pub fa_max_ar: usize,
    pub fa_max_lags: usize,

    pub oracle: OracleSpec,
    pub seeds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let rolling = RollingConfig::default();
        Self {
            command: Command::Simulate,
            seed: 0,
            out: "out".into(),
            threads: 0,
            solvers: Vec::new(),
            k_max: None,
            setting: Setting::Two,
            r2: 0.8,
            t: 200,
            reps: 20,
            test_size: None,
            plan: None,
            smc: SmcConfig { particles: 300, ..SmcConfig::default() },
            gds: GdsConfig::new(1),
            lasso: LassoConfig::default(),
            fredmd: None,
            targets: vec![Target::Emp, Target::Ip, Target::Cpi],
            horizons: rolling.horizons,
            strategy: Strategy::DropSeries,
            imputer: Imputer::LocalLevel,
            window: rolling.window,
            validation: rolling.validation,
            first_target: rolling.first_target,
            last_target: rolling.last_target,
            ar_max_order: rolling.ar_max_order,
            fa_max_factors: rolling.fa_max_factors,
            fa_max_ar: rolling.fa_max_ar,
            fa_max_lags: rolling.fa_max_lags,
            oracle: OracleSpec::default(),
            seeds: 20,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| invalid(key, format!("cannot parse `{v}`")))
}

fn parse_list<T>(key: &str, v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(s).map_err(|e| attribute(key, e)))
        .collect()
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    match v.trim() {
        "default" | "" => Ok(None),
        s => parse_num(key, s).map(Some),
    }
}

fn parse_plan(key: &str, v: &str) -> Result<Option<SelectionPlan>> {
    let v = v.trim().to_ascii_lowercase();
    let (name, arg) = v.split_once(':').unwrap_or((&v, ""));
    Ok(Some(match name {
        "default" | "" => return Ok(None),
        "kfold" => SelectionPlan::KFold { folds: parse_num(key, arg)? },
        "fcv" => SelectionPlan::ForwardCv { validation: parse_num(key, arg)? },
        "bic" if arg.is_empty() => SelectionPlan::Bic,
        "aic" if arg.is_empty() => SelectionPlan::Aic,
        _ => return Err(invalid(key, format!("unknown plan `{v}`"))),
    }))
}

fn plan_text(plan: Option<SelectionPlan>) -> String {
    match plan {
        None => "default".into(),
        Some(SelectionPlan::KFold { folds }) => format!("kfold:{folds}"),
        Some(SelectionPlan::ForwardCv { validation }) => format!("fcv:{validation}"),
        Some(p) => p.name().into(),
    }
}

fn opt_text<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "default".into(), |x| x.to_string())
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Sets one key. Used by the file parser and for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "command" => self.command = v.parse()?,
            "seed" => self.seed = parse_num(key, v)?,
            "out" => self.out = v.to_string(),
            "threads" => self.threads = parse_num(key, v)?,
            "solvers" => self.solvers = parse_list(key, v, |s| Ok(s.to_ascii_lowercase()))?,
            "k_max" => self.k_max = parse_opt(key, v)?,
            "simulate.setting" => self.setting = v.parse()?,
            "simulate.r2" => self.r2 = parse_num(key, v)?,
            "simulate.t" => self.t = parse_num(key, v)?,
            "simulate.reps" => self.reps = parse_num(key, v)?,
            "simulate.test_size" => self.test_size = parse_opt(key, v)?,
            "simulate.plan" => self.plan = parse_plan(key, v)?,
            "smc.particles" => self.smc.particles = parse_num(key, v)?,
            "smc.ess_fraction" => self.smc.ess_fraction = parse_num(key, v)?,
            "smc.proposal_mix" => self.smc.proposal_mix = parse_num(key, v)?,
            "smc.warm_start_mix" => self.smc.warm_start_mix = parse_num(key, v)?,
            "smc.boost_target" => self.smc.boost_target = parse_num(key, v)?,
            "smc.max_moves" => self.smc.max_moves = parse_num(key, v)?,
            "smc.max_rounds" => self.smc.max_rounds = parse_num(key, v)?,
            "gds.step_size" => {
                self.gds.step_size = match v {
                    "auto" => StepSize::Auto,
                    "lipschitz" => StepSize::Lipschitz,
                    s => StepSize::Fixed(parse_num(key, s)?),
                }
            }
            "gds.eps1" => self.gds.eps1 = parse_num(key, v)?,
            "gds.eps2" => self.gds.eps2 = parse_num(key, v)?,
            "gds.max_iter" => self.gds.max_iter = parse_num(key, v)?,
            "lasso.grid_size" => self.lasso.grid_size = parse_num(key, v)?,
            "lasso.grid_ratio" => self.lasso.grid_ratio = parse_num(key, v)?,
            "lasso.max_sweeps" => self.lasso.max_sweeps = parse_num(key, v)?,
            "lasso.tolerance" => self.lasso.tolerance = parse_num(key, v)?,
            "backtest.fredmd" => self.fredmd = (!v.is_empty()).then(|| v.to_string()),
            "backtest.targets" => self.targets = parse_list(key, v, str::parse)?,
            "backtest.horizons" => self.horizons = parse_list(key, v, |s| parse_num(key, s))?,
            "backtest.strategy" => self.strategy = v.parse().map_err(|e: Error| invalid(key, e.to_string()))?,
            "backtest.imputer" => {
                self.imputer = match v {
                    "local-level" => Imputer::LocalLevel,
                    "linear" => Imputer::Linear,
                    other => return Err(invalid(key, format!("unknown imputer `{other}`"))),
                }
            }
            "backtest.window" => self.window = parse_num(key, v)?,
            "backtest.validation" => self.validation = parse_num(key, v)?,
            "backtest.first_target" => self.first_target = v.parse().map_err(|e: Error| invalid(key, e.to_string()))?,
            "backtest.last_target" => self.last_target = v.parse().map_err(|e: Error| invalid(key, e.to_string()))?,
            "backtest.ar_max_order" => self.ar_max_order = parse_num(key, v)?,
            "backtest.fa_max_factors" => self.fa_max_factors = parse_num(key, v)?,
            "backtest.fa_max_ar" => self.fa_max_ar = parse_num(key, v)?,
            "backtest.fa_max_lags" => self.fa_max_lags = parse_num(key, v)?,
            "oracle.p" => self.oracle.p = parse_num(key, v)?,
            "oracle.t" => self.oracle.t = parse_num(key, v)?,
            "oracle.k" => self.oracle.k = parse_num(key, v)?,
            "oracle.r2" => self.oracle.r2 = parse_num(key, v)?,
            "oracle.seeds" => self.seeds = parse_num(key, v)?,
            _ => return Err(invalid(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies the lines of a config file on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| invalid(&format!("line {}", n + 1), "unterminated section header"))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| invalid(&format!("line {}", n + 1), "expected `key = value`"))?;
            let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
            if !seen.insert(key.clone()) {
                return Err(invalid(&key, "duplicate key"));
            }
            self.set(&key, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.merge_text(text)?;
        Ok(c)
    }

    /// Every key, in a form [`ExperimentConfig::parse`] reads back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command.name());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "solvers = {}", self.solvers.join(","));
        let _ = writeln!(s, "k_max = {}", opt_text(&self.k_max));
        let _ = writeln!(s, "\n[simulate]");
        let _ = writeln!(s, "setting = {}", self.setting.name());
        let _ = writeln!(s, "r2 = {:?}", self.r2);
        let _ = writeln!(s, "t = {}", self.t);
        let _ = writeln!(s, "reps = {}", self.reps);
        let _ = writeln!(s, "test_size = {}", opt_text(&self.test_size));
        let _ = writeln!(s, "plan = {}", plan_text(self.plan));
        let m = &self.smc;
        let _ = writeln!(s, "\n[smc]");
        let _ = writeln!(s, "particles = {}", m.particles);
        let _ = writeln!(s, "ess_fraction = {:?}", m.ess_fraction);
        let _ = writeln!(s, "proposal_mix = {:?}", m.proposal_mix);
        let _ = writeln!(s, "warm_start_mix = {:?}", m.warm_start_mix);
        let _ = writeln!(s, "boost_target = {:?}", m.boost_target);
        let _ = writeln!(s, "max_moves = {}", m.max_moves);
        let _ = writeln!(s, "max_rounds = {}", m.max_rounds);
        let g = &self.gds;
        let _ = writeln!(s, "\n[gds]");
        match g.step_size {
            StepSize::Auto => {
                let _ = writeln!(s, "step_size = auto");
            }
            StepSize::Lipschitz => {
                let _ = writeln!(s, "step_size = lipschitz");
            }
            StepSize::Fixed(eta) => {
                let _ = writeln!(s, "step_size = {eta:?}");
            }
        }
        let _ = writeln!(s, "eps1 = {:?}", g.eps1);
        let _ = writeln!(s, "eps2 = {:?}", g.eps2);
        let _ = writeln!(s, "max_iter = {}", g.max_iter);
        let l = &self.lasso;
        let _ = writeln!(s, "\n[lasso]");
        let _ = writeln!(s, "grid_size = {}", l.grid_size);
        let _ = writeln!(s, "grid_ratio = {:?}", l.grid_ratio);
        let _ = writeln!(s, "max_sweeps = {}", l.max_sweeps);
        let _ = writeln!(s, "tolerance = {:?}", l.tolerance);
        let _ = writeln!(s, "\n[backtest]");
        let _ = writeln!(s, "fredmd = {}", self.fredmd.as_deref().unwrap_or(""));
        let _ = writeln!(s, "targets = {}", join(&self.targets, |t| t.name().to_ascii_lowercase()));
        let _ = writeln!(s, "horizons = {}", join(&self.horizons, |h| h.to_string()));
        let _ = writeln!(s, "strategy = {}", if self.strategy == Strategy::DropSeries { "drop" } else { "impute" });
        let _ = writeln!(s, "imputer = {}", if self.imputer == Imputer::LocalLevel { "local-level" } else { "linear" });
        let _ = writeln!(s, "window = {}", self.window);
        let _ = writeln!(s, "validation = {}", self.validation);
        let _ = writeln!(s, "first_target = {}", self.first_target);
        let _ = writeln!(s, "last_target = {}", self.last_target);
        let _ = writeln!(s, "ar_max_order = {}", self.ar_max_order);
        let _ = writeln!(s, "fa_max_factors = {}", self.fa_max_factors);
        let _ = writeln!(s, "fa_max_ar = {}", self.fa_max_ar);
        let _ = writeln!(s, "fa_max_lags = {}", self.fa_max_lags);
        let _ = writeln!(s, "\n[oracle]");
        let _ = writeln!(s, "p = {}", self.oracle.p);
        let _ = writeln!(s, "t = {}", self.oracle.t);
        let _ = writeln!(s, "k = {}", self.oracle.k);
        let _ = writeln!(s, "r2 = {:?}", self.oracle.r2);
        let _ = writeln!(s, "seeds = {}", self.seeds);
        s
    }

    pub fn dgp_spec(&self) -> Result<DgpSpec> {
        let kind = match self.setting {
            Setting::One => DgpKind::Setting1 { r2: self.r2 },
            Setting::Two => DgpKind::Setting2 { t: self.t },
            Setting::Three => DgpKind::Setting3 { t: self.t },
            Setting::FaPredictors => DgpKind::FaVsVs(Mechanism::FromPredictors),
            Setting::FaFactors => DgpKind::FaVsVs(Mechanism::FromFactors),
        };
        let mut spec = DgpSpec::new(kind, self.seed);
        if let Some(n) = self.test_size {
            spec.test_size = n;
        }
        spec.validate().map_err(|e| invalid("simulate", e.to_string()))?;
        Ok(spec)
    }

    pub fn solver_settings(&self, default_k_max: usize) -> SolverSettings {
        SolverSettings {
            k_max: self.k_max.unwrap_or(default_k_max),
            gds: self.gds.clone(),
            smc: self.smc.clone(),
            lasso: self.lasso.clone(),
        }
    }

    pub fn study_config(&self) -> Result<StudyConfig> {
        let spec = self.dgp_spec()?;
        let methods = if self.solvers.is_empty() {
            let mut m = vec![Method::Truth];
            m.extend([SolverKind::Fs, SolverKind::Iht, SolverKind::Htp, SolverKind::AdaLasso].map(Method::Solver));
            if matches!(spec.kind, DgpKind::FaVsVs(_)) {
                m.push(Method::Solver(SolverKind::Smc));
                m.extend([Method::FaBic, Method::FaFcv]);
            }
            m
        } else {
            parse_names(&self.solvers, Method::parse)?
        };
        let mut c = StudyConfig::new(spec, methods, self.reps);
        c.settings = self.solver_settings(spec.default_k_max());
        if let Some(p) = self.plan {
            c.plan = p;
        }
        Ok(c)
    }

    pub fn rolling_config(&self) -> Result<RollingConfig> {
        let methods = if self.solvers.is_empty() {
            HarnessMethod::default_set()
        } else {
            let mut m = parse_names(&self.solvers, HarnessMethod::parse)?;
            if !m.contains(&HarnessMethod::Ar) {
                m.insert(0, HarnessMethod::Ar);
            }
            m
        };
        let c = RollingConfig {
            window: self.window,
            validation: self.validation,
            first_target: self.first_target,
            last_target: self.last_target,
            horizons: self.horizons.clone(),
            methods,
            ar_max_order: self.ar_max_order,
            fa_max_factors: self.fa_max_factors,
            fa_max_ar: self.fa_max_ar,
            fa_max_lags: self.fa_max_lags,
            solvers: self.solver_settings(20),
            seed: self.seed,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn oracle_solvers(&self) -> Result<Vec<SolverKind>> {
        if self.solvers.is_empty() {
            return Ok(vec![SolverKind::Fs, SolverKind::Smc, SolverKind::Iht, SolverKind::Htp]);
        }
        parse_names(&self.solvers, |s| s.parse())
    }

    /// Checks everything the configured command will need.
    pub fn validate(&self) -> Result<()> {
        self.smc.validate()?;
        self.gds.validate().map_err(|e| invalid("gds", e.to_string()))?;
        match self.command {
            Command::Simulate => {
                let c = self.study_config()?;
                if c.repetitions == 0 {
                    return Err(invalid("simulate.reps", "need at least one replicate"));
                }
            }
            Command::Ingest => {
                if self.fredmd.is_none() {
                    return Err(invalid("backtest.fredmd", "a FRED-MD CSV path is required"));
                }
            }
            Command::Backtest => {
                if self.fredmd.is_none() {
                    return Err(invalid("backtest.fredmd", "a FRED-MD CSV path is required"));
                }
                if self.targets.is_empty() {
                    return Err(invalid("backtest.targets", "need at least one target"));
                }
                self.rolling_config()?;
            }
            Command::OracleCheck => {
                self.oracle.validate().map_err(|e| invalid("oracle", e.to_string()))?;
                self.oracle_solvers()?;
            }
        }
        Ok(())
    }
}

fn parse_names<T>(names: &[String], f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    names.iter().map(|s| f(s).map_err(|e| attribute("solvers", e))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fredmd::Strategy;
    use proptest::prelude::*;
    use proptest::strategy::Strategy as _;

    #[test]
    fn sections_prefix_keys() {
        let c = ExperimentConfig::parse(
            "# study\ncommand = simulate\nseed = 7\n[simulate]\nsetting = 2\nt = 50\n\n[smc]\nparticles = 120\n; done\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.t, 50);
        assert_eq!(c.smc.particles, 120);
        let spec = c.dgp_spec().unwrap();
        assert_eq!(spec.kind, DgpKind::Setting2 { t: 50 });
    }

    #[test]
    fn errors_name_the_field() {
        let e = ExperimentConfig::parse("smc.particles = lots").unwrap_err();
        assert!(matches!(e, Error::ConfigInvalid { ref field, .. } if field == "smc.particles"));
        let e = ExperimentConfig::parse("colour = red").unwrap_err();
        assert!(matches!(e, Error::ConfigInvalid { ref field, .. } if field == "colour"));
        assert!(ExperimentConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(ExperimentConfig::parse("[smc\nparticles = 3").is_err());
        assert!(ExperimentConfig::parse("just words").is_err());
    }

    #[test]
    fn unknown_solver_is_config_invalid() {
        let c = ExperimentConfig::parse("solvers = fs,lars").unwrap();
        let e = c.validate().unwrap_err();
        assert!(matches!(e, Error::ConfigInvalid { ref field, .. } if field == "solvers"));
    }

    #[test]
    fn commands_need_their_inputs() {
        let c = ExperimentConfig::parse("command = backtest").unwrap();
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid { .. })));
        let c = ExperimentConfig::parse("command = oracle-check\nsolvers = fs,smc").unwrap();
        c.validate().unwrap();
        assert_eq!(c.oracle_solvers().unwrap(), vec![SolverKind::Fs, SolverKind::Smc]);
        let c = ExperimentConfig::parse("command = backtest\nsolvers = fs\n[backtest]\nfredmd = x.csv").unwrap();
        assert_eq!(c.rolling_config().unwrap().methods[0], HarnessMethod::Ar);
    }

    fn arb_config() -> impl proptest::strategy::Strategy<Value = ExperimentConfig> {
        let base = (
            prop_oneof![Just(Command::Simulate), Just(Command::Ingest), Just(Command::Backtest), Just(Command::OracleCheck)],
            any::<u64>(),
            "[a-zA-Z0-9_/.-]{1,20}",
            0usize..64,
            prop::collection::vec(prop_oneof![Just("fs"), Just("smc"), Just("iht"), Just("adalasso")], 0..4),
            prop::option::of(1usize..100),
        );
        let sim = (
            prop_oneof![Just(Setting::One), Just(Setting::Two), Just(Setting::Three), Just(Setting::FaPredictors), Just(Setting::FaFactors)],
            0.0f64..1.0,
            10usize..500,
            0usize..200,
            prop::option::of(1usize..200),
            prop_oneof![
                Just(None),
                (2usize..10).prop_map(|f| Some(SelectionPlan::KFold { folds: f })),
                (1usize..80).prop_map(|v| Some(SelectionPlan::ForwardCv { validation: v })),
                Just(Some(SelectionPlan::Bic)),
                Just(Some(SelectionPlan::Aic)),
            ],
        );
        let solver = (
            (2usize..5000, 0.01f64..0.99, 0.0f64..1.0, 0.0f64..1.0, 0.1f64..20.0, 1usize..50, 1usize..5000),
            (prop::option::of(1e-6f64..2.0), 1e-6f64..1.0, 1e-6f64..1.0, 1usize..2000),
            (2usize..500, 1e-6f64..0.5, 1usize..100_000, 1e-12f64..1e-3),
        );
        let real = (
            prop::option::of("[a-zA-Z0-9_/.-]{1,30}"),
            prop::collection::vec(prop_oneof![Just(Target::Emp), Just(Target::Ip), Just(Target::Cpi)], 0..4),
            prop::collection::vec(1usize..24, 0..5),
            prop_oneof![Just(Strategy::DropSeries), Just(Strategy::Impute)],
            prop_oneof![Just(Imputer::LocalLevel), Just(Imputer::Linear)],
            (1usize..600, 1usize..100, 1900i32..2100, 1u32..13, 0i64..200),
            (0usize..10, 0usize..10, 0usize..10, 1usize..10),
        );
        let oracle = (1usize..30, 1usize..200, 1usize..10, 0.01f64..0.99, 0usize..100);
        (base, sim, solver, real, oracle).prop_map(|(b, s, v, r, o)| {
            let mut c = ExperimentConfig::default();
            (c.command, c.seed, c.out, c.threads) = (b.0, b.1, b.2, b.3);
            c.solvers = b.4.into_iter().map(String::from).collect();
            c.k_max = b.5;
            (c.setting, c.r2, c.t, c.reps, c.test_size, c.plan) = s;
            let (m, g, l) = v;
            c.smc = SmcConfig {
                particles: m.0,
                ess_fraction: m.1,
                proposal_mix: m.2,
                warm_start_mix: m.3,
                boost_target: m.4,
                max_moves: m.5,
                max_rounds: m.6,
                ..c.smc
            };
            c.gds.step_size = g.0.map_or(StepSize::Auto, StepSize::Fixed);
            (c.gds.eps1, c.gds.eps2, c.gds.max_iter) = (g.1, g.2, g.3);
            c.lasso = LassoConfig { grid_size: l.0, grid_ratio: l.1, max_sweeps: l.2, tolerance: l.3 };
            c.fredmd = r.0;
            (c.targets, c.horizons, c.strategy, c.imputer) = (r.1, r.2, r.3, r.4);
            let (window, validation, year, month, span) = r.5;
            c.window = window;
            c.validation = validation;
            c.first_target = Month::new(year, month).unwrap();
            c.last_target = c.first_target.add_months(span);
            (c.ar_max_order, c.fa_max_factors, c.fa_max_ar, c.fa_max_lags) = r.6;
            c.oracle = OracleSpec { p: o.0, t: o.1, k: o.2, r2: o.3 };
            c.seeds = o.4;
            c
        })
    }

    proptest! {
        #[test]
        fn text_round_trips(c in arb_config()) {
            let text = c.to_text();
            let back = ExperimentConfig::parse(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_text(), text);
        }
    }
}
