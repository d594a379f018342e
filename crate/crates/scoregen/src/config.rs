//! Run configuration: a TOML file of flat `key = value` sections.
//!
//! ```toml
//! [run]
//! seed = 0
//!
//! [target]
//! preset = "benchmark"      # benchmark | stationary | mixture
//! d = 3
//! # preset = "mixture" reads weights, means, and either covariances (full)
//! # or variances (diagonal shorthand), one entry per component.
//!
//! [forward]
//! sigma = 1.0
//! schedule = "constant"     # constant | linear-ramp
//!
//! [schedule]
//! n = 4096                  # also the training sample size
//! beta = 1.0
//!
//! [train]
//! iterations = 400
//!
//! [sample]
//! profile = "ddpm"          # ddpm | ode | constant | alternating
//! n_steps = 1000
//!
//! [evaluate]
//! n_proj = 256
//!
//! [sweep]
//! ns = [512, 1024, 2048, 4096, 8192]
//! ```
//!
//! Every key is optional; see the `Default` impls. The horizon constant
//! `schedule.c` enters `T̄ = max(c, σ²)·log n`, which keeps `e^{−T̄/σ²} ≤ 1/n`.

use std::fs;
use std::path::Path;

use scoregen_core::forward::{ForwardSpec, NoiseSchedule};
use scoregen_core::sampler::{DiffusionProfile, Integrator, SampleRun, StepGrid};
use scoregen_core::schedule::{IntervalArch, ManualSchedule, ScheduleMode, ScheduleParams};
use scoregen_core::trainer::TrainConfig;
use scoregen_core::{Matrix, MixtureTarget, TimeSchedule};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result, Stage};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub target: TargetSection,
    pub forward: ForwardSection,
    pub schedule: ScheduleSection,
    pub train: TrainConfig,
    pub sample: SampleSection,
    pub evaluate: EvaluateSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub preset: String,
    pub d: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub variances: Vec<Vec<f64>>,
}

impl Default for TargetSection {
    fn default() -> Self {
        TargetSection {
            preset: "benchmark".into(),
            d: 3,
            weights: Vec::new(),
            means: Vec::new(),
            covariances: Vec::new(),
            variances: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardSection {
    pub sigma: f64,
    pub schedule: String,
    /// `constant`: the rate `α`.
    pub rate: f64,
    /// `linear-ramp`: `α` moves from `ramp_start` to `ramp_end` over `ramp_time`.
    pub ramp_start: f64,
    pub ramp_end: f64,
    pub ramp_time: f64,
}

impl Default for ForwardSection {
    fn default() -> Self {
        ForwardSection {
            sigma: 1.0,
            schedule: "constant".into(),
            rate: 1.0,
            ramp_start: 0.5,
            ramp_end: 1.0,
            ramp_time: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub n: usize,
    pub beta: f64,
    pub c: f64,
    pub c2: f64,
    pub lip_scale: f64,
    pub width_min: usize,
    pub width_max: usize,
    /// 0 derives the depth from `(n, β, d)`.
    pub depth: usize,
    pub max_upsilon: usize,
    /// `derived` or `manual`; the remaining keys apply to `manual` only.
    pub mode: String,
    pub t_low: f64,
    pub t_high: f64,
    pub upsilon: Vec<usize>,
    pub width: usize,
    pub weight_bound: f64,
    pub sup_cap: f64,
    pub lip_cap: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            n: 4096,
            beta: 1.0,
            c: 1.0,
            c2: 1.0,
            lip_scale: 10.0,
            width_min: 8,
            width_max: 32,
            depth: 1,
            max_upsilon: 64,
            mode: "derived".into(),
            t_low: 0.01,
            t_high: 5.0,
            upsilon: vec![1],
            width: 16,
            weight_bound: 50.0,
            sup_cap: 10.0,
            lip_cap: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub profile: String,
    /// Level for `constant` and `alternating`.
    pub b: f64,
    pub period: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub integrator: String,
    pub grid: String,
    /// `bin` (raw f64 plus JSON sidecar) or `csv`.
    pub format: String,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection {
            profile: "ddpm".into(),
            b: 1.0,
            period: 1.0,
            n_steps: 1000,
            n_paths: 8192,
            integrator: "euler-maruyama".into(),
            grid: "geometric".into(),
            format: "bin".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Generated samples are compared against `sample.n_paths` fresh target draws.
    pub n_proj: usize,
    pub fisher_nodes: usize,
    pub fisher_draws: usize,
    /// Also sample and score the untrained model `−x/σ²`.
    pub baseline: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { n_proj: 256, fisher_nodes: 4, fisher_draws: 512, baseline: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub ns: Vec<usize>,
    pub repetitions: usize,
    pub bootstrap: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { ns: vec![512, 1024, 2048, 4096, 8192], repetitions: 3, bootstrap: 2000 }
    }
}

pub const PRESETS: &[&str] = &["benchmark", "smoke", "stationary"];

impl Config {
    /// `benchmark`: the defaults. `smoke`: a seconds-scale run of the same
    /// pipeline. `stationary`: target `N(0, σ²I)`, where the initial model is exact.
    pub fn preset(name: &str) -> Result<Config> {
        let mut cfg = Config::default();
        match name {
            "benchmark" => {}
            "smoke" | "stationary" => {
                cfg.schedule.n = 512;
                cfg.train.iterations = 60;
                cfg.sample.n_paths = 1024;
                cfg.sample.n_steps = 200;
                cfg.evaluate.n_proj = 64;
                cfg.evaluate.fisher_draws = 128;
                cfg.sweep.ns = vec![256, 512, 1024, 2048];
                cfg.sweep.bootstrap = 500;
                if name == "stationary" {
                    cfg.target.preset = "stationary".into();
                    cfg.target.d = 2;
                }
            }
            other => return Err(Error::Config(format!("unknown preset `{other}` (expected one of {PRESETS:?})"))),
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Config> {
        if !path.exists() {
            return Err(Error::ConfigNotFound(path.to_path_buf()));
        }
        Config::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// The complete effective configuration, defaults included. Loading it back
    /// yields an equal `Config`.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`snapshot`](Self::snapshot), hex.
    pub fn hash(&self) -> String {
        crate::io::sha256_hex(self.snapshot().as_bytes())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.run.seed, ..self.train.clone() }
    }

    pub fn target(&self) -> Result<MixtureTarget> {
        let t = &self.target;
        match t.preset.as_str() {
            "benchmark" => Ok(MixtureTarget::benchmark(t.d)),
            "stationary" => MixtureTarget::stationary(t.d, self.forward.sigma).stage("target"),
            "mixture" => {
                let k = t.weights.len();
                if k == 0 || t.means.len() != k {
                    return Err(Error::Config("target: weights and means need one entry per component".into()));
                }
                let covs = match (t.covariances.len(), t.variances.len()) {
                    (c, 0) if c == k => t.covariances.iter().map(|rows| Matrix::from_rows(rows)).collect(),
                    (0, v) if v == k => t.variances.iter().map(|diag| Matrix::from_diag(diag)).collect(),
                    _ => {
                        return Err(Error::Config(
                            "target: give either covariances or variances, one per component".into(),
                        ))
                    }
                };
                MixtureTarget::new(&t.weights, t.means.clone(), covs).stage("target")
            }
            other => Err(Error::Config(format!("target: unknown preset `{other}`"))),
        }
    }

    pub fn forward_spec(&self) -> Result<ForwardSpec> {
        let f = &self.forward;
        let schedule = match f.schedule.as_str() {
            "constant" => NoiseSchedule::Constant(f.rate),
            "linear-ramp" => NoiseSchedule::LinearRamp { start: f.ramp_start, end: f.ramp_end, ramp_time: f.ramp_time },
            other => return Err(Error::Config(format!("forward: unknown schedule `{other}`"))),
        };
        ForwardSpec::with_schedule(f.sigma, schedule).stage("forward")
    }

    pub fn schedule_params(&self, d: usize) -> Result<ScheduleParams> {
        let s = &self.schedule;
        let mut p = ScheduleParams::new(s.n, s.beta, d);
        p.c = s.c;
        p.c2 = s.c2;
        p.lip_scale = s.lip_scale;
        p.sigma = self.forward.sigma;
        p.width_clamp = (s.width_min, s.width_max);
        p.depth_override = (s.depth > 0).then_some(s.depth);
        p.max_upsilon = s.max_upsilon;
        match s.mode.as_str() {
            "derived" => {}
            "manual" => {
                p.mode = ScheduleMode::Manual;
                p.manual = Some(ManualSchedule {
                    t_low: s.t_low,
                    t_high: s.t_high,
                    upsilon: s.upsilon.clone(),
                    arch: IntervalArch {
                        depth: s.depth.max(1),
                        width: s.width,
                        weight_bound: s.weight_bound,
                        sup_cap: s.sup_cap,
                        lip_cap: s.lip_cap,
                    },
                });
            }
            other => return Err(Error::Config(format!("schedule: unknown mode `{other}`"))),
        }
        Ok(p)
    }

    pub fn time_schedule(&self, d: usize) -> Result<TimeSchedule> {
        TimeSchedule::build(&self.schedule_params(d)?).stage("schedule")
    }

    pub fn profile(&self) -> Result<DiffusionProfile> {
        let s = &self.sample;
        Ok(match s.profile.as_str() {
            "ddpm" => DiffusionProfile::Ddpm,
            "ode" => DiffusionProfile::Ode,
            "constant" => DiffusionProfile::Constant(s.b),
            "alternating" => DiffusionProfile::Alternating { c: s.b, period: s.period },
            other => return Err(Error::Config(format!("sample: unknown profile `{other}`"))),
        })
    }

    pub fn sample_run(&self, spec: ForwardSpec, schedule: &TimeSchedule) -> Result<SampleRun> {
        let s = &self.sample;
        let integrator = match s.integrator.as_str() {
            "euler-maruyama" => Integrator::EulerMaruyama,
            "exponential" => Integrator::Exponential,
            other => return Err(Error::Config(format!("sample: unknown integrator `{other}`"))),
        };
        let grid = match s.grid.as_str() {
            "uniform" => StepGrid::Uniform,
            "geometric" => StepGrid::Geometric,
            other => return Err(Error::Config(format!("sample: unknown grid `{other}`"))),
        };
        Ok(SampleRun::for_schedule(spec, schedule, self.profile()?, s.n_steps)
            .stage("sample")?
            .with_integrator(integrator)
            .with_grid(grid))
    }

    /// Applies `section.key=value` overrides; values are parsed as TOML, falling
    /// back to a bare string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Config> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form section.key=value")))?;
            let (section, field) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("override key `{key}` must be section.key")))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
            let table = root
                .get_mut(section)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| Error::Config(format!("unknown section `{section}`")))?;
            table.insert(field.to_string(), value);
        }
        root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self) -> Result<()> {
        let target = self.target()?;
        self.forward_spec()?;
        self.schedule_params(target.dim())?;
        self.train_config().validate().stage("train")?;
        self.profile()?.validate().stage("sample")?;
        if self.sweep.ns.len() < 2 || self.sweep.repetitions == 0 {
            return Err(Error::Config("sweep: need at least two sizes and one repetition".into()));
        }
        if !matches!(self.sample.format.as_str(), "bin" | "csv") {
            return Err(Error::Config(format!("sample: unknown format `{}`", self.sample.format)));
        }
        Ok(())
    }
}
