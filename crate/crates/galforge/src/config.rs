//! Line-oriented `key = value` configuration with dotted keys, layered as
//! defaults < config file < command-line overrides.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use galforge_core::acquisition::AcquisitionKind;
use galforge_core::classifier::{ClassifierSpec, TrainConfig};
use galforge_core::generator::GeneratorConfig;
use galforge_core::world::WorldSpec;

use crate::error::{Error, Result};
use crate::fsutil::read_to_string;

/// Every recognised key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("world.classes", "10", "number of mixture components"),
    ("world.dim", "2", "data dimension"),
    ("world.layout", "ring", "ring | grid"),
    ("world.class_std", "0.155", "per-class isotropic std (raw coordinates)"),
    ("world.spacing", "1", "ring radius or grid pitch"),
    ("world.pretrain_n", "20000", "generator pre-training split size"),
    ("world.pool_n", "4000", "unlabeled pool size"),
    ("world.test_n", "2000", "test split size"),
    ("world.seed", "0", "world seed"),
    ("generator.steps", "50", "diffusion steps T"),
    ("generator.hidden", "128x128x128", "noise-predictor hidden widths"),
    ("generator.train_steps", "2500", "pre-training Adam steps"),
    ("generator.batch", "256", "pre-training batch size"),
    ("generator.lr", "0.002", "peak pre-training learning rate"),
    ("generator.jitter", "0.1", "condition jitter std during pre-training"),
    ("generator.heldout_frac", "0.1", "held-out fraction of the pre-training split"),
    ("generator.seed", "0", "pre-training seed"),
    ("classifier.arch", "mlp-64x64", "classifier architecture id"),
    ("classifier.dropout", "0.1", "dropout rate"),
    ("classifier.epochs", "200", "passes over the training set per cycle"),
    ("classifier.epochs_multiplier", "1", "multiplies classifier.epochs"),
    ("classifier.batch", "64", "minibatch size"),
    ("classifier.lr", "0.001", "Adam learning rate"),
    ("run.mode", "joint", "al | gal | joint | full | joint_basic"),
    ("run.cycles", "10", "number of cycles N"),
    ("run.seeds", "0,1,2,3,4", "replicate seeds"),
    ("run.timing", "false", "write measured wall_ms into the results (breaks byte-identical reruns)"),
    ("al.b_al", "50", "pool samples annotated per cycle"),
    ("al.sigma", "margin", "pool acquisition function"),
    ("al.mc_passes", "10", "MC-dropout passes for var_ratio, mean_std and bald"),
    ("al.reset_labeled", "false", "clear L at the start of every cycle"),
    ("gal.b_gal", "equal_L", "equal_L | ratio:<r> | fixed:<m>"),
    ("gal.gen_multiplier", "1", "generate this many times B_GAL, then subsample"),
    ("gal.g_retention", "accumulate", "accumulate | replace"),
    ("gal.template", "0", "template id used for anchors"),
    ("opt.epsilon_max", "0.5", "final-cycle ball radius of the linear schedule"),
    ("opt.epsilon_fixed", "none", "constant radius for every cycle, overriding the schedule"),
    ("opt.alpha_ratio", "0.2", "step size as a fraction of epsilon"),
    ("opt.steps", "10", "sign-gradient steps n"),
    ("opt.k", "6", "samples per gradient estimate"),
    ("opt.sigma_gal", "margin", "acquisition maximised by condition optimization"),
    ("opt.step_factor", "true", "scale last-step gradients by T"),
];

pub fn is_known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

/// A parsed `key = value` file. `#` starts a comment that runs to the end of the line.
#[derive(Debug, Clone, Default)]
pub struct KvFile {
    entries: Vec<(String, String, usize)>,
}

impl KvFile {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split_once('#').map_or(line, |(body, _)| body).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string(), i + 1));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v, _)| (k.as_str(), v.as_str()))
    }

    /// Last value given for `key`.
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _, _)| k == key).map(|(_, v, _)| v.as_str())
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| Error::Config(format!("{key} = {v}: {e}"))),
        }
    }
}

/// The resolved key set.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !is_known(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let kv = KvFile::parse(path, &read_to_string(path)?)?;
        for (k, v) in kv.entries() {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// `key=value` override as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(k.trim(), v)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key);
        v.parse().map_err(|e| Error::Config(format!("{key} = {v}: {e}")))
    }

    /// One `key = value` line per key, sorted.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn world_spec(&self) -> Result<WorldSpec> {
        Ok(WorldSpec {
            classes: self.parse("world.classes")?,
            dim: self.parse("world.dim")?,
            layout: galforge_core::world::Layout::parse(self.get("world.layout"))?,
            class_std: self.parse("world.class_std")?,
            spacing: self.parse("world.spacing")?,
            pretrain_n: self.parse("world.pretrain_n")?,
            pool_n: self.parse("world.pool_n")?,
            test_n: self.parse("world.test_n")?,
            seed: self.parse("world.seed")?,
        })
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        Ok(GeneratorConfig {
            steps: self.parse("generator.steps")?,
            hidden: parse_widths(self.get("generator.hidden"))?,
            train_steps: self.parse("generator.train_steps")?,
            batch: self.parse("generator.batch")?,
            lr: self.parse("generator.lr")?,
            jitter: self.parse("generator.jitter")?,
            heldout_frac: self.parse("generator.heldout_frac")?,
            seed: self.parse("generator.seed")?,
        })
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let epsilon_fixed = match self.get("opt.epsilon_fixed") {
            "none" | "" => None,
            v => Some(v.parse::<f64>().map_err(|e| Error::Config(format!("opt.epsilon_fixed = {v}: {e}")))?),
        };
        let cfg = ExperimentConfig {
            mode: Mode::parse(self.get("run.mode"))?,
            cycles: self.parse("run.cycles")?,
            seeds: parse_list(self.get("run.seeds"))?,
            timing: self.parse("run.timing")?,
            b_al: self.parse("al.b_al")?,
            sigma_al: AcquisitionKind::parse(self.get("al.sigma"))?,
            mc_passes: self.parse("al.mc_passes")?,
            reset_labeled: self.parse("al.reset_labeled")?,
            b_gal: BGalRule::parse(self.get("gal.b_gal"))?,
            gen_multiplier: self.parse("gal.gen_multiplier")?,
            retention: Retention::parse(self.get("gal.g_retention"))?,
            template: self.parse("gal.template")?,
            epsilon_max: self.parse("opt.epsilon_max")?,
            epsilon_fixed,
            alpha_ratio: self.parse("opt.alpha_ratio")?,
            opt_steps: self.parse("opt.steps")?,
            opt_k: self.parse("opt.k")?,
            sigma_gal: AcquisitionKind::parse(self.get("opt.sigma_gal"))?,
            step_factor: self.parse("opt.step_factor")?,
            arch: self.get("classifier.arch").to_string(),
            dropout: self.parse("classifier.dropout")?,
            train: TrainConfig {
                epochs: self.parse("classifier.epochs")?,
                batch: self.parse("classifier.batch")?,
                lr: self.parse("classifier.lr")?,
                seed: 0,
            },
            epochs_multiplier: self.parse("classifier.epochs_multiplier")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(['x', ','])
        .map(|w| w.trim().parse().map_err(|e| Error::Config(format!("width `{w}`: {e}"))))
        .collect()
}

fn parse_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| v.trim().parse().map_err(|e| Error::Config(format!("seed `{v}`: {e}"))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Al,
    Gal,
    Joint,
    Full,
    JointBasic,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "al" => Mode::Al,
            "gal" => Mode::Gal,
            "joint" => Mode::Joint,
            "full" => Mode::Full,
            "joint_basic" => Mode::JointBasic,
            _ => return Err(Error::Config(format!("unknown mode `{s}`"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Al => "al",
            Mode::Gal => "gal",
            Mode::Joint => "joint",
            Mode::Full => "full",
            Mode::JointBasic => "joint_basic",
        }
    }

    pub fn annotates(self) -> bool {
        matches!(self, Mode::Al | Mode::Joint | Mode::JointBasic)
    }

    pub fn generates(self) -> bool {
        matches!(self, Mode::Gal | Mode::Joint | Mode::JointBasic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BGalRule {
    /// `|L|`; in gal mode, the `c·B_AL` a matching AL run would have labeled.
    EqualL,
    Ratio(f64),
    Fixed(usize),
}

impl BGalRule {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("gal.b_gal: expected equal_L, ratio:<r> or fixed:<m>, got `{s}`"));
        match s.split_once(':') {
            None if s == "equal_L" => Ok(BGalRule::EqualL),
            Some(("ratio", r)) => r.parse().map(BGalRule::Ratio).map_err(|_| bad()),
            Some(("fixed", m)) => m.parse().map(BGalRule::Fixed).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }

    pub fn count(self, labeled: usize) -> usize {
        match self {
            BGalRule::EqualL => labeled,
            BGalRule::Ratio(r) => (r * labeled as f64).round() as usize,
            BGalRule::Fixed(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retention {
    Accumulate,
    Replace,
}

impl Retention {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "accumulate" => Ok(Retention::Accumulate),
            "replace" => Ok(Retention::Replace),
            _ => Err(Error::Config(format!("gal.g_retention: unknown value `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub cycles: usize,
    pub seeds: Vec<u64>,
    pub timing: bool,
    pub b_al: usize,
    pub sigma_al: AcquisitionKind,
    pub mc_passes: usize,
    pub reset_labeled: bool,
    pub b_gal: BGalRule,
    pub gen_multiplier: usize,
    pub retention: Retention,
    pub template: usize,
    pub epsilon_max: f64,
    pub epsilon_fixed: Option<f64>,
    pub alpha_ratio: f64,
    pub opt_steps: usize,
    pub opt_k: usize,
    pub sigma_gal: AcquisitionKind,
    pub step_factor: bool,
    pub arch: String,
    pub dropout: f64,
    /// `seed` is ignored; each cycle derives its own.
    pub train: TrainConfig,
    pub epochs_multiplier: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Config::default().experiment().expect("defaults are valid")
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::Config("run.cycles must be ≥ 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("run.seeds is empty".into()));
        }
        if self.gen_multiplier == 0 || self.epochs_multiplier == 0 {
            return Err(Error::Config("multipliers must be ≥ 1".into()));
        }
        if matches!(self.sigma_gal, AcquisitionKind::KMeans | AcquisitionKind::CoreSet) {
            return Err(Error::Config(format!("`{}` cannot be used as opt.sigma_gal", self.sigma_gal.name())));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("classifier.dropout must be in [0, 1)".into()));
        }
        if let BGalRule::Ratio(r) = self.b_gal {
            if !(r >= 0.0) {
                return Err(Error::Config("gal.b_gal ratio must be ≥ 0".into()));
            }
        }
        Ok(())
    }

    /// Template and radius actually used: joint_basic pins both.
    pub fn effective_template(&self) -> usize {
        if self.mode == Mode::JointBasic {
            0
        } else {
            self.template
        }
    }

    pub fn classifier_spec(&self, input_dim: usize, classes: usize) -> Result<ClassifierSpec> {
        let mut spec = ClassifierSpec::new(&self.arch, input_dim, classes)?;
        spec.dropout_rate = self.dropout;
        Ok(spec)
    }

    /// Method label used in result rows.
    pub fn method(&self) -> String {
        match self.mode {
            Mode::Al => format!("al:{}", self.sigma_al.name()),
            Mode::Gal => format!("gal:{}", self.sigma_gal.name()),
            Mode::Joint => format!("joint:{}+{}", self.sigma_al.name(), self.sigma_gal.name()),
            Mode::JointBasic => format!("joint_basic:{}", self.sigma_al.name()),
            Mode::Full => "full".to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_table() {
        let e = ExperimentConfig::default();
        assert_eq!((e.cycles, e.opt_k, e.opt_steps), (10, 6, 10));
        assert_eq!(e.epsilon_max, 0.5);
        assert_eq!(e.alpha_ratio, 0.2);
        assert_eq!(Config::default().generator_config().unwrap(), GeneratorConfig::default());
        assert_eq!(Config::default().world_spec().unwrap(), WorldSpec::default());
    }

    #[test]
    fn precedence_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "# comment\nal.b_al = 20\nrun.cycles=3\n").unwrap();
        let mut c = Config::default();
        c.apply_file(&path).unwrap();
        c.apply_override("al.b_al=30").unwrap();
        let e = c.experiment().unwrap();
        assert_eq!((e.b_al, e.cycles), (30, 3));
        assert!(c.apply_override("al.bal=1").is_err());
        std::fs::write(&path, "no equals sign\n").unwrap();
        assert!(Config::default().apply_file(&path).is_err());
        std::fs::write(&path, "run.cycles = 4    # trailing\n").unwrap();
        let mut c = Config::default();
        c.apply_file(&path).unwrap();
        assert_eq!(c.experiment().unwrap().cycles, 4);
    }

    #[test]
    fn b_gal_rules() {
        assert_eq!(BGalRule::parse("equal_L").unwrap().count(40), 40);
        assert_eq!(BGalRule::parse("ratio:0.5").unwrap().count(41), 21);
        assert_eq!(BGalRule::parse("fixed:0").unwrap().count(40), 0);
        assert!(BGalRule::parse("fixed:-1").is_err());
        assert!(BGalRule::parse("half").is_err());
    }

    #[test]
    fn render_is_sorted_and_complete() {
        let r = Config::default().render();
        assert_eq!(r.lines().count(), KEYS.len());
        let lines: Vec<&str> = r.lines().collect();
        let mut sorted = lines.clone();
        sorted.sort();
        assert_eq!(lines, sorted);
    }
}
