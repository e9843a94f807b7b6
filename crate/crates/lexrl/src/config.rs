//! Strict experiment configuration files: flat `[section]` blocks of
//! `key = value` lines with `#` comments. Unknown keys and duplicate keys
//! are fatal — silent hyperparameter typos are the dominant reproducibility
//! hazard — and every error carries line numbers.

use thiserror::Error;

use crate::harness::{
    stable_digest, Algorithm, SafetySpec, ScalingExperimentConfig,
};
use crate::momdp::{GridNavConfig, RandomMomdpConfig};
use crate::policy_based::{ObjectiveKind, PblrlConfig, TimescaleChain};
use crate::util::g17;
use crate::value_based::{
    ExplorationSchedule, StepSizeSchedule, ToleranceSpec, UpdateRule, VblrlConfig,
};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key {section}.{key}")]
    UnknownKey { section: String, key: String, line: usize },
    #[error("lines {first_line} and {line}: duplicate key {section}.{key}")]
    DuplicateKey {
        section: String,
        key: String,
        first_line: usize,
        line: usize,
    },
    #[error("unknown section [{section}] at line {line}")]
    UnknownSection { section: String, line: usize },
    #[error("missing required section [{section}]")]
    MissingSection { section: String },
    #[error("missing required key {section}.{key}")]
    MissingKey { section: String, key: String },
    #[error("line {line}: {section}.{key}: expected {expected}, got {value:?}")]
    TypeMismatch {
        section: String,
        key: String,
        line: usize,
        expected: &'static str,
        value: String,
    },
    #[error("line {line}: {section}.{key}: {message}")]
    Constraint {
        section: String,
        key: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Clone)]
struct Section {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

/// A parsed configuration document. Equality ignores line numbers, so
/// `parse(serialize(doc)) == doc` holds regardless of the source layout.
#[derive(Debug, Clone)]
pub struct ConfigDocument {
    sections: Vec<Section>,
}

impl PartialEq for ConfigDocument {
    fn eq(&self, other: &Self) -> bool {
        self.sections.len() == other.sections.len()
            && self.sections.iter().zip(&other.sections).all(|(a, b)| {
                a.name == b.name
                    && a.entries.len() == b.entries.len()
                    && a.entries
                        .iter()
                        .zip(&b.entries)
                        .all(|(x, y)| x.key == y.key && x.value == y.value)
            })
    }
}

impl ConfigDocument {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: Vec<Section> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let content = content.trim();
            if content.is_empty() {
                continue;
            }
            if let Some(inner) = content.strip_prefix('[') {
                let Some(name) = inner.strip_suffix(']') else {
                    return Err(ConfigError::Syntax {
                        line,
                        message: format!("unterminated section header {content:?}"),
                    });
                };
                let name = name.trim();
                if name.is_empty() {
                    return Err(ConfigError::Syntax {
                        line,
                        message: "empty section name".into(),
                    });
                }
                sections.push(Section { name: name.to_string(), line, entries: Vec::new() });
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("expected `key = value`, got {content:?}"),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line, message: "empty key".into() });
            }
            let Some(section) = sections.last_mut() else {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("key {key:?} before any [section] header"),
                });
            };
            if let Some(first) = section.entries.iter().find(|e| e.key == key) {
                return Err(ConfigError::DuplicateKey {
                    section: section.name.clone(),
                    key,
                    first_line: first.line,
                    line,
                });
            }
            section.entries.push(Entry { key, value, line });
        }
        Ok(Self { sections })
    }

    /// Canonical text form; `parse(serialize(doc)) == doc`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for section in &self.sections {
            out.push('[');
            out.push_str(&section.name);
            out.push_str("]\n");
            for entry in &section.entries {
                out.push_str(&entry.key);
                out.push_str(" = ");
                out.push_str(&entry.value);
                out.push('\n');
            }
        }
        out
    }

    /// Stable digest of the canonical serialization.
    pub fn digest(&self) -> String {
        stable_digest(&self.serialize())
    }

    fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// Errors on sections not in `allowed`.
    fn check_sections(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for section in &self.sections {
            if !allowed.contains(&section.name.as_str()) {
                return Err(ConfigError::UnknownSection {
                    section: section.name.clone(),
                    line: section.line,
                });
            }
        }
        Ok(())
    }

    fn builder(&mut self, name: &str) -> &mut Section {
        if !self.sections.iter().any(|s| s.name == name) {
            self.sections.push(Section { name: name.to_string(), line: 0, entries: Vec::new() });
        }
        self.sections.iter_mut().find(|s| s.name == name).unwrap()
    }
}

impl Section {
    fn set(&mut self, key: &str, value: String) {
        self.entries.push(Entry { key: key.to_string(), value, line: 0 });
    }
}

/// Tracks which keys a typed parser consumed so leftovers are flagged.
struct Reader<'a> {
    section: &'a Section,
    consumed: Vec<bool>,
}

impl<'a> Reader<'a> {
    fn new(doc: &'a ConfigDocument, name: &str) -> Result<Self, ConfigError> {
        let section = doc
            .section(name)
            .ok_or_else(|| ConfigError::MissingSection { section: name.to_string() })?;
        Ok(Self { consumed: vec![false; section.entries.len()], section })
    }

    fn raw(&mut self, key: &str) -> Option<(&'a str, usize)> {
        for (idx, entry) in self.section.entries.iter().enumerate() {
            if entry.key == key {
                self.consumed[idx] = true;
                return Some((&entry.value, entry.line));
            }
        }
        None
    }

    fn mismatch(&self, key: &str, line: usize, expected: &'static str, value: &str) -> ConfigError {
        ConfigError::TypeMismatch {
            section: self.section.name.clone(),
            key: key.to_string(),
            line,
            expected,
            value: value.to_string(),
        }
    }

    fn constraint(&self, key: &str, line: usize, message: String) -> ConfigError {
        ConfigError::Constraint {
            section: self.section.name.clone(),
            key: key.to_string(),
            line,
            message,
        }
    }

    fn missing(&self, key: &str) -> ConfigError {
        ConfigError::MissingKey { section: self.section.name.clone(), key: key.to_string() }
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| self.mismatch(key, line, "real", v)),
        }
    }

    fn usize_opt(&mut self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| self.mismatch(key, line, "integer", v)),
        }
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.usize_opt(key)?.unwrap_or(default))
    }

    fn usize_required(&mut self, key: &str) -> Result<usize, ConfigError> {
        self.usize_opt(key)?.ok_or_else(|| self.missing(key))
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| self.mismatch(key, line, "integer", v)),
        }
    }

    fn string(&mut self, key: &str, default: &str) -> Result<String, ConfigError> {
        Ok(self.raw(key).map_or_else(|| default.to_string(), |(v, _)| v.to_string()))
    }

    fn string_required(&mut self, key: &str) -> Result<(String, usize), ConfigError> {
        self.raw(key)
            .map(|(v, line)| (v.to_string(), line))
            .ok_or_else(|| self.missing(key))
    }

    fn usize_list(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>, ConfigError> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some((v, line)) => v
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse()
                        .map_err(|_| self.mismatch(key, line, "integer list", v))
                })
                .collect(),
        }
    }

    fn string_list(&mut self, key: &str, default: &[&str]) -> Result<Vec<String>, ConfigError> {
        match self.raw(key) {
            None => Ok(default.iter().map(|s| s.to_string()).collect()),
            Some((v, _)) => Ok(v.split(',').map(|item| item.trim().to_string()).collect()),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        for (idx, entry) in self.section.entries.iter().enumerate() {
            if !self.consumed[idx] {
                return Err(ConfigError::UnknownKey {
                    section: self.section.name.clone(),
                    key: entry.key.clone(),
                    line: entry.line,
                });
            }
        }
        Ok(())
    }
}

/// Environment generator selection from a `[momdp]` section.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorConfig {
    Random(RandomMomdpConfig),
    GridNav(GridNavConfig),
}

pub fn parse_generator_config(doc: &ConfigDocument) -> Result<GeneratorConfig, ConfigError> {
    doc.check_sections(&["momdp"])?;
    let mut r = Reader::new(doc, "momdp")?;
    let (kind, kind_line) = r.string_required("kind")?;
    let out = match kind.as_str() {
        "random" => {
            let mut cfg = RandomMomdpConfig::new(
                r.usize_required("states")?,
                r.usize("actions", 4)?,
                r.usize_required("objectives")?,
                r.u64("seed", 0)?,
            );
            cfg.density = r.f64("density", cfg.density)?;
            cfg.reward_noise_sigma = r.f64("reward_noise_sigma", cfg.reward_noise_sigma)?;
            cfg.discount = r.f64("discount", cfg.discount)?;
            cfg.horizon = r.usize("horizon", cfg.horizon)?;
            GeneratorConfig::Random(cfg)
        }
        "gridnav" => {
            let d = GridNavConfig::default();
            let cfg = GridNavConfig {
                grid_side: r.usize("grid_side", d.grid_side)?,
                unsafe_density: r.f64("unsafe_density", d.unsafe_density)?,
                slip_prob: r.f64("slip_prob", d.slip_prob)?,
                goal_reward: r.f64("goal_reward", d.goal_reward)?,
                unsafe_cost: r.f64("unsafe_cost", d.unsafe_cost)?,
                step_limit: r.usize("step_limit", d.step_limit)?,
                seed: r.u64("seed", d.seed)?,
            };
            GeneratorConfig::GridNav(cfg)
        }
        other => {
            return Err(r.constraint(
                "kind",
                kind_line,
                format!("must be `random` or `gridnav`, got {other:?}"),
            ))
        }
    };
    r.finish()?;
    Ok(out)
}

pub fn generator_to_document(cfg: &GeneratorConfig) -> ConfigDocument {
    let mut doc = ConfigDocument { sections: Vec::new() };
    let s = doc.builder("momdp");
    match cfg {
        GeneratorConfig::Random(c) => {
            s.set("kind", "random".into());
            s.set("states", c.num_states.to_string());
            s.set("actions", c.num_actions.to_string());
            s.set("objectives", c.num_objectives.to_string());
            s.set("seed", c.seed.to_string());
            s.set("density", g17(c.density));
            s.set("reward_noise_sigma", g17(c.reward_noise_sigma));
            s.set("discount", g17(c.discount));
            s.set("horizon", c.horizon.to_string());
        }
        GeneratorConfig::GridNav(c) => {
            s.set("kind", "gridnav".into());
            s.set("grid_side", c.grid_side.to_string());
            s.set("unsafe_density", g17(c.unsafe_density));
            s.set("slip_prob", g17(c.slip_prob));
            s.set("goal_reward", g17(c.goal_reward));
            s.set("unsafe_cost", g17(c.unsafe_cost));
            s.set("step_limit", c.step_limit.to_string());
            s.set("seed", c.seed.to_string());
        }
    }
    doc
}

fn parse_tolerance(r: &mut Reader, prefix: &str, default: &ToleranceSpec) -> Result<ToleranceSpec, ConfigError> {
    let kind_key = format!("{prefix}_tolerance");
    let Some((kind, line)) = r.raw(&kind_key).map(|(v, l)| (v.to_string(), l)) else {
        return Ok(default.clone());
    };
    match kind.as_str() {
        "constant" => Ok(ToleranceSpec::Constant(r.f64(&format!("{prefix}_tau0"), 0.01)?)),
        "proportional" => Ok(ToleranceSpec::Proportional {
            sigma_frac: r.f64(&format!("{prefix}_sigma_frac"), 0.01)?,
        }),
        "decaying" => Ok(ToleranceSpec::Decaying {
            tau0: r.f64(&format!("{prefix}_tau0"), 0.01)?,
            power: r.f64(&format!("{prefix}_power"), 0.5)?,
        }),
        other => Err(r.constraint(
            &kind_key,
            line,
            format!("must be `constant`, `proportional`, or `decaying`, got {other:?}"),
        )),
    }
}

fn tolerance_to_section(s: &mut Section, prefix: &str, spec: &ToleranceSpec) {
    match spec {
        ToleranceSpec::Constant(tau0) => {
            s.set(&format!("{prefix}_tolerance"), "constant".into());
            s.set(&format!("{prefix}_tau0"), g17(*tau0));
        }
        ToleranceSpec::Proportional { sigma_frac } => {
            s.set(&format!("{prefix}_tolerance"), "proportional".into());
            s.set(&format!("{prefix}_sigma_frac"), g17(*sigma_frac));
        }
        ToleranceSpec::Decaying { tau0, power } => {
            s.set(&format!("{prefix}_tolerance"), "decaying".into());
            s.set(&format!("{prefix}_tau0"), g17(*tau0));
            s.set(&format!("{prefix}_power"), g17(*power));
        }
    }
}

fn vblrl_from_reader(r: &mut Reader) -> Result<VblrlConfig, ConfigError> {
    let (rule_name, rule_line) = r.string_required("rule")?;
    let rule = match rule_name.as_str() {
        "lexq" => UpdateRule::LexQ,
        "sarsa" => UpdateRule::Sarsa,
        "expected-sarsa" => UpdateRule::ExpectedSarsa,
        "double-q" => UpdateRule::LexDoubleQ,
        other => {
            return Err(r.constraint(
                "rule",
                rule_line,
                format!("must be `lexq`, `sarsa`, `expected-sarsa`, or `double-q`, got {other:?}"),
            ))
        }
    };
    let mut cfg = VblrlConfig::new(rule, r.usize_required("max_steps")?, r.u64("seed", 0)?);
    cfg.bandit_tolerance = parse_tolerance(r, "bandit", &cfg.bandit_tolerance)?;
    // τ_Q defaults to τ_B unless given explicitly.
    cfg.update_tolerance = parse_tolerance(r, "update", &cfg.bandit_tolerance)?;
    let step_kind = r.string("step_size", "visit-power")?;
    cfg.step_size = match step_kind.as_str() {
        "constant" => StepSizeSchedule::Constant(r.f64("step_a0", 0.01)?),
        "visit-power" => StepSizeSchedule::VisitPower {
            a0: r.f64("step_a0", 0.5)?,
            power: r.f64("step_power", 0.6)?,
        },
        other => {
            return Err(r.constraint(
                "step_size",
                0,
                format!("must be `constant` or `visit-power`, got {other:?}"),
            ))
        }
    };
    let exp_kind = r.string("exploration", "visit-power")?;
    cfg.exploration = match exp_kind.as_str() {
        "constant" => ExplorationSchedule::Constant(r.f64("exploration_eps0", 0.05)?),
        "visit-power" => ExplorationSchedule::VisitPower {
            eps0: r.f64("exploration_eps0", 1.0)?,
            power: r.f64("exploration_power", 0.5)?,
        },
        other => {
            return Err(r.constraint(
                "exploration",
                0,
                format!("must be `constant` or `visit-power`, got {other:?}"),
            ))
        }
    };
    cfg.q_init = r.f64("q_init", cfg.q_init)?;
    cfg.convergence_window = r.usize("convergence_window", cfg.convergence_window)?;
    cfg.q_delta_threshold = r.f64("q_delta_threshold", cfg.q_delta_threshold)?;
    Ok(cfg)
}

pub fn parse_vblrl_config(doc: &ConfigDocument) -> Result<VblrlConfig, ConfigError> {
    doc.check_sections(&["value_based"])?;
    let mut r = Reader::new(doc, "value_based")?;
    let cfg = vblrl_from_reader(&mut r)?;
    r.finish()?;
    Ok(cfg)
}

fn vblrl_into_section(s: &mut Section, cfg: &VblrlConfig) {
    s.set(
        "rule",
        match cfg.update_rule {
            UpdateRule::LexQ => "lexq",
            UpdateRule::Sarsa => "sarsa",
            UpdateRule::ExpectedSarsa => "expected-sarsa",
            UpdateRule::LexDoubleQ => "double-q",
        }
        .into(),
    );
    s.set("max_steps", cfg.max_steps.to_string());
    s.set("seed", cfg.seed.to_string());
    tolerance_to_section(s, "bandit", &cfg.bandit_tolerance);
    tolerance_to_section(s, "update", &cfg.update_tolerance);
    match cfg.step_size {
        StepSizeSchedule::Constant(a0) => {
            s.set("step_size", "constant".into());
            s.set("step_a0", g17(a0));
        }
        StepSizeSchedule::VisitPower { a0, power } => {
            s.set("step_size", "visit-power".into());
            s.set("step_a0", g17(a0));
            s.set("step_power", g17(power));
        }
    }
    match cfg.exploration {
        ExplorationSchedule::Constant(eps0) => {
            s.set("exploration", "constant".into());
            s.set("exploration_eps0", g17(eps0));
        }
        ExplorationSchedule::VisitPower { eps0, power } => {
            s.set("exploration", "visit-power".into());
            s.set("exploration_eps0", g17(eps0));
            s.set("exploration_power", g17(power));
        }
    }
    s.set("q_init", g17(cfg.q_init));
    s.set("convergence_window", cfg.convergence_window.to_string());
    s.set("q_delta_threshold", g17(cfg.q_delta_threshold));
}

pub fn vblrl_to_document(cfg: &VblrlConfig) -> ConfigDocument {
    let mut doc = ConfigDocument { sections: Vec::new() };
    vblrl_into_section(doc.builder("value_based"), cfg);
    doc
}

fn pblrl_from_reader(r: &mut Reader) -> Result<PblrlConfig, ConfigError> {
    let (objective_name, obj_line) = r.string_required("objective")?;
    let kappa_entry = r.raw("kappa").map(|(v, l)| (v.to_string(), l));
    let objective = match objective_name.as_str() {
        "a2c" => {
            if let Some((_, line)) = kappa_entry {
                return Err(r.constraint(
                    "kappa",
                    line,
                    "kappa applies only to the ppo-kl objective".into(),
                ));
            }
            ObjectiveKind::A2c
        }
        "ppo-kl" => {
            let kappa = match &kappa_entry {
                None => 1.5,
                Some((v, line)) => v.parse().map_err(|_| r.mismatch("kappa", *line, "real", v))?,
            };
            if kappa <= 1.0 {
                let line = kappa_entry.map_or(0, |(_, l)| l);
                return Err(r.constraint(
                    "kappa",
                    line,
                    format!("the KL penalty coefficient must exceed 1, got {kappa}"),
                ));
            }
            ObjectiveKind::PpoKl { kappa }
        }
        other => {
            return Err(r.constraint(
                "objective",
                obj_line,
                format!("must be `a2c` or `ppo-kl`, got {other:?}"),
            ))
        }
    };
    let objectives = r.usize_required("objectives")?;
    let mut cfg = PblrlConfig::new(objective, objectives, r.usize_required("max_steps")?, r.u64("seed", 0)?);
    cfg.batch_size = r.usize("batch_size", cfg.batch_size)?;
    cfg.chain.alpha_base = r.f64("alpha_base", cfg.chain.alpha_base)?;
    cfg.chain.beta_base = r.f64("beta_base", cfg.chain.beta_base)?;
    cfg.chain.eta_base = r.f64("eta_base", cfg.chain.eta_base)?;
    cfg.chain.tau0 = r.f64("tau0", cfg.chain.tau0)?;
    cfg.theta_max = r.f64("theta_max", cfg.theta_max)?;
    cfg.convergence_window = r.usize("convergence_window", cfg.convergence_window)?;
    cfg.convergence_threshold = r.f64("convergence_threshold", cfg.convergence_threshold)?;
    cfg.return_window = r.usize("return_window", cfg.return_window)?;
    cfg.ppo_inner_steps = r.usize("ppo_inner_steps", cfg.ppo_inner_steps)?;
    Ok(cfg)
}

pub fn parse_pblrl_config(doc: &ConfigDocument) -> Result<PblrlConfig, ConfigError> {
    doc.check_sections(&["policy_based"])?;
    let mut r = Reader::new(doc, "policy_based")?;
    let cfg = pblrl_from_reader(&mut r)?;
    r.finish()?;
    Ok(cfg)
}

fn pblrl_into_section(s: &mut Section, cfg: &PblrlConfig) {
    match cfg.objective {
        ObjectiveKind::A2c => s.set("objective", "a2c".into()),
        ObjectiveKind::PpoKl { kappa } => {
            s.set("objective", "ppo-kl".into());
            s.set("kappa", g17(kappa));
        }
    }
    s.set("objectives", cfg.chain.num_objectives.to_string());
    s.set("max_steps", cfg.max_steps.to_string());
    s.set("seed", cfg.seed.to_string());
    s.set("batch_size", cfg.batch_size.to_string());
    s.set("alpha_base", g17(cfg.chain.alpha_base));
    s.set("beta_base", g17(cfg.chain.beta_base));
    s.set("eta_base", g17(cfg.chain.eta_base));
    s.set("tau0", g17(cfg.chain.tau0));
    s.set("theta_max", g17(cfg.theta_max));
    s.set("convergence_window", cfg.convergence_window.to_string());
    s.set("convergence_threshold", g17(cfg.convergence_threshold));
    s.set("return_window", cfg.return_window.to_string());
    s.set("ppo_inner_steps", cfg.ppo_inner_steps.to_string());
}

pub fn pblrl_to_document(cfg: &PblrlConfig) -> ConfigDocument {
    let mut doc = ConfigDocument { sections: Vec::new() };
    pblrl_into_section(doc.builder("policy_based"), cfg);
    doc
}

fn algorithm_by_name(
    doc: &ConfigDocument,
    name: &str,
    line: usize,
    section: &str,
    objectives: usize,
) -> Result<Algorithm, ConfigError> {
    match name {
        "lexq-vb" | "sarsa-vb" | "esarsa-vb" | "doubleq-vb" => {
            let mut r = Reader::new(doc, "value_based")?;
            let mut cfg = vblrl_from_reader(&mut r)?;
            r.finish()?;
            cfg.update_rule = match name {
                "lexq-vb" => UpdateRule::LexQ,
                "sarsa-vb" => UpdateRule::Sarsa,
                "esarsa-vb" => UpdateRule::ExpectedSarsa,
                _ => UpdateRule::LexDoubleQ,
            };
            Ok(Algorithm::ValueBased(cfg))
        }
        "la2c" | "lppo" => {
            let mut r = Reader::new(doc, "policy_based")?;
            let mut cfg = pblrl_from_reader(&mut r)?;
            r.finish()?;
            cfg.objective = if name == "la2c" {
                ObjectiveKind::A2c
            } else {
                match cfg.objective {
                    ObjectiveKind::PpoKl { kappa } => ObjectiveKind::PpoKl { kappa },
                    ObjectiveKind::A2c => ObjectiveKind::PpoKl { kappa: 1.5 },
                }
            };
            cfg.chain = TimescaleChain {
                num_objectives: objectives,
                ..cfg.chain
            };
            Ok(Algorithm::PolicyBased(cfg))
        }
        other => Err(ConfigError::Constraint {
            section: section.to_string(),
            key: "algorithm".to_string(),
            line,
            message: format!(
                "unknown algorithm {other:?}; expected lexq-vb, sarsa-vb, esarsa-vb, doubleq-vb, la2c, or lppo"
            ),
        }),
    }
}

pub fn parse_scaling_config(doc: &ConfigDocument) -> Result<ScalingExperimentConfig, ConfigError> {
    doc.check_sections(&["scaling", "value_based", "policy_based"])?;
    let mut r = Reader::new(doc, "scaling")?;
    let states = r.usize("states", 64)?;
    let actions = r.usize("actions", 4)?;
    let objective_counts = r.usize_list("objectives", &[1, 2, 4])?;
    let momdps_per_cell = r.usize("momdps_per_cell", 30)?;
    let (algorithm_name, alg_line) = r.string_required("algorithm")?;
    let convergence_window = r.usize("convergence_window", 50)?;
    let convergence_threshold = r.f64("convergence_threshold", 0.05)?;
    let seed = r.u64("seed", 0)?;
    let threads = r.usize("threads", 1)?;
    r.finish()?;
    // The sweep overrides m per cell; the chain objective count here only
    // seeds the per-algorithm config and is reset per run.
    let max_m = objective_counts.iter().copied().max().unwrap_or(1);
    let algorithm = algorithm_by_name(doc, &algorithm_name, alg_line, "scaling", max_m)?;
    let mut cfg = ScalingExperimentConfig::new(states, algorithm, seed);
    cfg.actions = actions;
    cfg.objective_counts = objective_counts;
    cfg.momdps_per_cell = momdps_per_cell;
    cfg.convergence_window = convergence_window;
    cfg.convergence_threshold = convergence_threshold;
    cfg.threads = threads;
    Ok(cfg)
}

pub fn scaling_to_document(cfg: &ScalingExperimentConfig) -> ConfigDocument {
    let mut doc = match &cfg.algorithm {
        Algorithm::ValueBased(vb) => vblrl_to_document(vb),
        Algorithm::PolicyBased(pb) => pblrl_to_document(pb),
    };
    let s = doc.builder("scaling");
    s.set("states", cfg.states.to_string());
    s.set("actions", cfg.actions.to_string());
    s.set(
        "objectives",
        cfg.objective_counts
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    s.set("momdps_per_cell", cfg.momdps_per_cell.to_string());
    s.set("algorithm", cfg.algorithm.name().into());
    s.set("convergence_window", cfg.convergence_window.to_string());
    s.set("convergence_threshold", g17(cfg.convergence_threshold));
    s.set("seed", cfg.seed.to_string());
    s.set("threads", cfg.threads.to_string());
    doc
}

/// The full safety-study configuration: environment, suite, replication.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyConfig {
    pub grid: GridNavConfig,
    pub specs: Vec<SafetySpec>,
    pub seeds: usize,
    pub eval_episodes: usize,
    pub threads: usize,
}

pub fn parse_safety_config(doc: &ConfigDocument) -> Result<SafetyConfig, ConfigError> {
    doc.check_sections(&["safety", "momdp", "value_based", "policy_based"])?;
    let grid = match parse_generator_config(&ConfigDocument {
        sections: doc.section("momdp").cloned().into_iter().collect(),
    })? {
        GeneratorConfig::GridNav(grid) => grid,
        GeneratorConfig::Random(_) => {
            let line = doc.section("momdp").map_or(0, |s| s.line);
            return Err(ConfigError::Constraint {
                section: "momdp".into(),
                key: "kind".into(),
                line,
                message: "the safety study requires kind = gridnav".into(),
            });
        }
    };
    let mut r = Reader::new(doc, "safety")?;
    let seeds = r.usize("seeds", 10)?;
    let eval_episodes = r.usize("eval_episodes", 100)?;
    let threads = r.usize("threads", 1)?;
    let names = r.string_list("algorithms", &["lexq-vb", "la2c", "lppo", "lexq-vb-baseline"])?;
    let line = doc.section("safety").map_or(0, |s| s.line);
    r.finish()?;
    let mut specs = Vec::new();
    for name in names {
        let (base, reward_only) = match name.strip_suffix("-baseline") {
            Some(base) => (base.to_string(), true),
            None => (name.clone(), false),
        };
        let objectives = if reward_only { 1 } else { 2 };
        let algorithm = algorithm_by_name(doc, &base, line, "safety", objectives)?;
        specs.push(SafetySpec { algorithm, reward_only });
    }
    Ok(SafetyConfig { grid, specs, seeds, eval_episodes, threads })
}

pub fn safety_to_document(cfg: &SafetyConfig) -> ConfigDocument {
    let mut doc = generator_to_document(&GeneratorConfig::GridNav(cfg.grid.clone()));
    for spec in &cfg.specs {
        match &spec.algorithm {
            Algorithm::ValueBased(vb) => {
                if doc.section("value_based").is_none() {
                    vblrl_into_section(doc.builder("value_based"), vb);
                }
            }
            Algorithm::PolicyBased(pb) => {
                if doc.section("policy_based").is_none() {
                    pblrl_into_section(doc.builder("policy_based"), pb);
                }
            }
        }
    }
    let s = doc.builder("safety");
    s.set("seeds", cfg.seeds.to_string());
    s.set("eval_episodes", cfg.eval_episodes.to_string());
    s.set("threads", cfg.threads.to_string());
    s.set(
        "algorithms",
        cfg.specs.iter().map(|spec| spec.name()).collect::<Vec<_>>().join(","),
    );
    doc
}
