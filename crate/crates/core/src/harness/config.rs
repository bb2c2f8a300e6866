//! Experiment configuration and its text format.
//!
//! The format is a small subset of INI/TOML:
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! list = 1.0, 2.5, -3
//! schedule = (10.0, m, 2.0), (10.0, d, 1.5)
//! ```
//!
//! Sections are `plant`, `dict`, `redmd`, `mpc`, `observer` and `run`. Every
//! key is optional and falls back to [`ExperimentConfig::default`]. Unknown
//! sections or keys and repeated keys are errors. Floats are written in
//! Rust's shortest round-trip form, so `parse(to_config_string(c)) == c`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};

use crate::control::MpcConfig;
use crate::error::{Error, Result};
use crate::matops::Matrix;
use crate::observables::{DictionaryFamily, ObservableDictionary};
use crate::observer::ObserverConfig;
use crate::plants::{self, ChangeEvent, ChangeSchedule, PlantKind, PlantModel};
use crate::redmd::{GammaInit, RedmdConfig};

use super::reference::{ReferenceKind, ReferenceSpec};

/// Which of the two consumers receive the recursively updated model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    StaticStatic,
    AdaptiveCtrl,
    AdaptiveObs,
    AdaptiveBoth,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::StaticStatic,
        Variant::AdaptiveCtrl,
        Variant::AdaptiveObs,
        Variant::AdaptiveBoth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::StaticStatic => "static-static",
            Variant::AdaptiveCtrl => "adaptive-ctrl",
            Variant::AdaptiveObs => "adaptive-obs",
            Variant::AdaptiveBoth => "adaptive-both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn adapts_controller(self) -> bool {
        matches!(self, Variant::AdaptiveCtrl | Variant::AdaptiveBoth)
    }

    pub fn adapts_observer(self) -> bool {
        matches!(self, Variant::AdaptiveObs | Variant::AdaptiveBoth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictConfig {
    pub family: DictionaryFamily,
    /// Index of the measured state, shared by the plant sensor and the observer.
    pub output_index: usize,
}

impl DictConfig {
    pub fn build(&self, state_dim: usize) -> Result<ObservableDictionary> {
        ObservableDictionary::from_family(state_dim, &self.family, self.output_index)
    }
}

/// Offline excitation: `u(t) = sum_i a_i sin(2 pi f_i t + phase_i) + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSpec {
    pub duration: f64,
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<f64>,
    /// Std of white noise added to the input.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub t_sim: f64,
    pub seed: u64,
    pub variant: Variant,
    pub reference: ReferenceSpec,
    /// Stroke speeds swept by `compare`.
    pub speeds: Vec<f64>,
    pub x0: Vec<f64>,
    pub training: TrainingSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub plant: PlantModel,
    pub schedule: ChangeSchedule,
    pub dict: DictConfig,
    pub redmd: RedmdConfig,
    pub mpc: MpcConfig,
    pub observer: ObserverConfig,
    pub run: RunConfig,
}

const DEFAULT_A: [f64; 4] = [0.0, 1.0, -1.0, -0.2];
const DEFAULT_B: [f64; 2] = [0.0, 1.0];

impl Default for ExperimentConfig {
    /// The reference pendulum scenario: at `t = 10 s` the mass doubles and
    /// the viscous friction triples.
    fn default() -> Self {
        let mut plant = PlantModel::pendulum(1.0, 1.0, 9.81, 0.5, 0.0, 0.01);
        plant.noise_x = 1e-3;
        plant.noise_y = 1e-3;
        plant.substeps = 10;
        let schedule = ChangeSchedule::new(vec![
            ChangeEvent {
                time: 10.0,
                parameter: "m".into(),
                value: 2.0,
            },
            ChangeEvent {
                time: 10.0,
                parameter: "d".into(),
                value: 1.5,
            },
        ])
        .expect("finite");
        let mut mpc = MpcConfig::diagonal(20, &[100.0, 1.0], &[1e-3]);
        mpc.u_min = Some(vec![-100.0]);
        mpc.u_max = Some(vec![100.0]);
        Self {
            plant,
            schedule,
            dict: DictConfig {
                family: DictionaryFamily::Trig { states: vec![0] },
                output_index: 0,
            },
            redmd: RedmdConfig {
                lambda0: 1.0,
                lambda_min: 0.95,
                variable_lambda: true,
                m_op: 20,
                eps_low: 5e-3,
                eps_high: 5e-2,
                n0: 10.0,
                mu_sigma: 10.0,
                trace_max_factor: Some(10.0),
                gamma_init: GammaInit::FromData,
                state_scales: vec![],
                sigma_floor: 1e-8,
                ridge: 0.0,
            },
            mpc,
            // the velocity is not measured; a large process noise on it keeps
            // the estimate from leaning on the model too heavily
            observer: ObserverConfig {
                q: vec![1e-3, 1.0, 1e-3, 1e-3],
                ..ObserverConfig::default()
            },
            run: RunConfig {
                t_sim: 40.0,
                seed: 42,
                variant: Variant::AdaptiveBoth,
                reference: ReferenceSpec::default(),
                speeds: vec![1.0, 2.0],
                x0: vec![0.0, 0.0],
                training: TrainingSpec {
                    duration: 20.0,
                    amplitudes: vec![4.0, 3.0, 2.0],
                    frequencies: vec![0.15, 0.6, 1.7],
                    noise: 1.0,
                },
            },
        }
    }
}

impl ExperimentConfig {
    pub fn dictionary(&self) -> Result<ObservableDictionary> {
        self.dict.build(self.plant.state_dim())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        self.plant.validate()?;
        plants::validate_schedule(&self.plant, &self.schedule)?;
        if self.plant.output != self.dict.output_index {
            return cfg_err("plant sensor and dictionary output index differ".into());
        }
        self.dictionary()?;
        self.redmd.validate()?;
        if !self.redmd.state_scales.is_empty() && self.redmd.state_scales.len() != self.plant.state_dim() {
            return cfg_err(format!(
                "redmd.state_scales needs {} entries",
                self.plant.state_dim()
            ));
        }
        self.mpc.validate(self.plant.state_dim(), self.plant.input_dim())?;
        let o = &self.observer;
        if o.q.iter().any(|q| !(*q >= 0.0)) || !(o.p0 >= 0.0 && o.r > 0.0) {
            return cfg_err("observer needs q >= 0, p0 >= 0, r > 0".into());
        }
        let big_n = self.dictionary()?.lifted_dim();
        if o.q.len() != 1 && o.q.len() != big_n {
            return cfg_err(format!("observer.q needs 1 or {big_n} entries"));
        }
        let r = &self.run;
        if !(r.t_sim > 0.0 && r.t_sim.is_finite()) {
            return cfg_err(format!("run.t_sim must be > 0, got {}", r.t_sim));
        }
        r.reference.validate()?;
        if r.speeds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return cfg_err("run.speeds must be positive".into());
        }
        if r.x0.len() != self.plant.state_dim() || r.x0.iter().any(|v| !v.is_finite()) {
            return cfg_err(format!("run.x0 needs {} finite entries", self.plant.state_dim()));
        }
        let t = &r.training;
        if !(t.duration > 0.0 && t.duration.is_finite()) {
            return cfg_err("run.train_duration must be > 0".into());
        }
        if t.amplitudes.len() != t.frequencies.len() {
            return cfg_err("run.train_amplitudes and run.train_frequencies differ in length".into());
        }
        if !(t.noise >= 0.0) || t.amplitudes.iter().chain(&t.frequencies).any(|v| !v.is_finite()) {
            return cfg_err("training excitation must be finite with noise >= 0".into());
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse and validate.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = split_sections(text)?;
        let mut cfg = ExperimentConfig::default();
        if let Some(mut s) = sections.remove("plant") {
            parse_plant(&mut s, &mut cfg)?;
            s.finish()?;
        }
        if let Some(mut s) = sections.remove("dict") {
            parse_dict(&mut s, &mut cfg.dict)?;
            s.finish()?;
        }
        cfg.plant.output = cfg.dict.output_index;
        if let Some(mut s) = sections.remove("redmd") {
            parse_redmd(&mut s, &mut cfg.redmd)?;
            s.finish()?;
        }
        if let Some(mut s) = sections.remove("mpc") {
            parse_mpc(&mut s, &mut cfg.mpc)?;
            s.finish()?;
        }
        if let Some(mut s) = sections.remove("observer") {
            let o = &mut cfg.observer;
            o.q = s.list_or("q", &o.q)?;
            o.r = s.f64_or("r", o.r)?;
            o.joseph = s.bool_or("joseph", o.joseph)?;
            o.relift_after_correct = s.bool_or("relift_after_correct", o.relift_after_correct)?;
            o.p0 = s.f64_or("p0", o.p0)?;
            s.finish()?;
        }
        if let Some(mut s) = sections.remove("run") {
            parse_run(&mut s, &mut cfg.run)?;
            s.finish()?;
        }
        if let Some((name, s)) = sections.into_iter().next() {
            return Err(Error::Config(format!("line {}: unknown section [{name}]", s.line)));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; every key is written.
    pub fn to_config_string(&self) -> String {
        let mut o = String::new();
        let p = &self.plant;
        o.push_str("[plant]\n");
        match &p.kind {
            PlantKind::Pendulum { m, l, g, d, c } => {
                kv(&mut o, "kind", "pendulum");
                for (k, v) in [("m", m), ("l", l), ("g", g), ("d", d), ("c", c)] {
                    kv(&mut o, k, &fmt(*v));
                }
            }
            PlantKind::Linear2nd { a, b } => {
                kv(&mut o, "kind", "linear2nd");
                kv(&mut o, "a", &list(&[a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]]));
                kv(&mut o, "b", &list(&[b[0], b[1]]));
            }
        }
        kv(&mut o, "noise_y", &fmt(p.noise_y));
        kv(&mut o, "noise_x", &fmt(p.noise_x));
        kv(&mut o, "dt", &fmt(p.dt));
        kv(&mut o, "substeps", &p.substeps.to_string());
        let sched: Vec<String> = self
            .schedule
            .events()
            .iter()
            .map(|e| format!("({}, {}, {})", fmt(e.time), e.parameter, fmt(e.value)))
            .collect();
        kv(&mut o, "schedule", &sched.join(", "));

        o.push_str("\n[dict]\n");
        match &self.dict.family {
            DictionaryFamily::Identity => kv(&mut o, "family", "identity"),
            DictionaryFamily::Trig { states } => {
                kv(&mut o, "family", "trig");
                let s: Vec<String> = states.iter().map(|i| i.to_string()).collect();
                kv(&mut o, "trig_states", &s.join(", "));
            }
            DictionaryFamily::Monomial { degree } => {
                kv(&mut o, "family", "monomial");
                kv(&mut o, "degree", &degree.to_string());
            }
        }
        kv(&mut o, "output_index", &self.dict.output_index.to_string());

        let r = &self.redmd;
        o.push_str("\n[redmd]\n");
        kv(&mut o, "lambda0", &fmt(r.lambda0));
        kv(&mut o, "lambda_min", &fmt(r.lambda_min));
        kv(&mut o, "variable_lambda", &r.variable_lambda.to_string());
        kv(&mut o, "m_op", &r.m_op.to_string());
        kv(&mut o, "eps_low", &fmt(r.eps_low));
        kv(&mut o, "eps_high", &fmt(r.eps_high));
        kv(&mut o, "n0", &fmt(r.n0));
        kv(&mut o, "mu_sigma", &fmt(r.mu_sigma));
        kv(
            &mut o,
            "trace_max_factor",
            &r.trace_max_factor.map_or_else(|| "none".to_string(), fmt),
        );
        match r.gamma_init {
            GammaInit::FromData => kv(&mut o, "gamma_init", "data"),
            GammaInit::Diagonal(d) => {
                kv(&mut o, "gamma_init", "diagonal");
                kv(&mut o, "gamma_delta", &fmt(d));
            }
        }
        kv(&mut o, "state_scales", &list(&r.state_scales));
        kv(&mut o, "sigma_floor", &fmt(r.sigma_floor));
        kv(&mut o, "ridge", &fmt(r.ridge));

        let m = &self.mpc;
        o.push_str("\n[mpc]\n");
        kv(&mut o, "horizon", &m.horizon.to_string());
        kv(&mut o, "qy", &list(m.q_y.diagonal().as_slice()));
        kv(&mut o, "ru", &list(m.r_u.diagonal().as_slice()));
        kv(&mut o, "terminal_weight", &fmt(m.terminal_weight));
        let bound = |b: &Option<Vec<f64>>| b.as_ref().map_or_else(|| "none".to_string(), |v| list(v));
        kv(&mut o, "u_min", &bound(&m.u_min));
        kv(&mut o, "u_max", &bound(&m.u_max));
        kv(&mut o, "max_pg_iters", &m.max_pg_iters.to_string());
        kv(&mut o, "pg_tol", &fmt(m.pg_tol));

        let ob = &self.observer;
        o.push_str("\n[observer]\n");
        kv(&mut o, "q", &list(&ob.q));
        kv(&mut o, "r", &fmt(ob.r));
        kv(&mut o, "joseph", &ob.joseph.to_string());
        kv(&mut o, "relift_after_correct", &ob.relift_after_correct.to_string());
        kv(&mut o, "p0", &fmt(ob.p0));

        let run = &self.run;
        o.push_str("\n[run]\n");
        kv(&mut o, "t_sim", &fmt(run.t_sim));
        kv(&mut o, "seed", &run.seed.to_string());
        kv(&mut o, "variant", run.variant.name());
        kv(&mut o, "reference", run.reference.kind.name());
        kv(&mut o, "amplitude", &fmt(run.reference.amplitude));
        kv(&mut o, "speed", &fmt(run.reference.speed));
        kv(&mut o, "hold", &fmt(run.reference.hold));
        kv(&mut o, "frequency", &fmt(run.reference.frequency));
        kv(&mut o, "speeds", &list(&run.speeds));
        kv(&mut o, "x0", &list(&run.x0));
        kv(&mut o, "train_duration", &fmt(run.training.duration));
        kv(&mut o, "train_amplitudes", &list(&run.training.amplitudes));
        kv(&mut o, "train_frequencies", &list(&run.training.frequencies));
        kv(&mut o, "train_noise", &fmt(run.training.noise));
        o
    }
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| fmt(*x)).collect::<Vec<_>>().join(", ")
}

fn kv(out: &mut String, key: &str, value: &str) {
    if value.is_empty() {
        let _ = writeln!(out, "{key} =");
    } else {
        let _ = writeln!(out, "{key} = {value}");
    }
}

struct Section {
    name: String,
    line: usize,
    entries: BTreeMap<String, (String, usize)>,
}

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut out: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {lineno}: malformed section header")))?
                .trim()
                .to_string();
            if out.contains_key(&name) {
                return Err(Error::Config(format!("line {lineno}: section [{name}] repeated")));
            }
            out.insert(
                name.clone(),
                Section {
                    name: name.clone(),
                    line: lineno,
                    entries: BTreeMap::new(),
                },
            );
            current = Some(name);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {lineno}: expected `key = value`")))?;
        let key = key.trim().to_string();
        let section = current
            .as_ref()
            .and_then(|c| out.get_mut(c))
            .ok_or_else(|| Error::Config(format!("line {lineno}: `{key}` outside any section")))?;
        if section.entries.contains_key(&key) {
            return Err(Error::Config(format!(
                "line {lineno}: key `{key}` repeated in [{}]",
                section.name
            )));
        }
        section.entries.insert(key, (value.trim().to_string(), lineno));
    }
    Ok(out)
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    fn err(&self, line: usize, key: &str, msg: impl std::fmt::Display) -> Error {
        Error::Config(format!("line {line}: [{}] {key}: {msg}", self.name))
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => parse_f64(&v).ok_or_else(|| self.err(line, key, format!("`{v}` is not a number"))),
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => v
                .parse()
                .map_err(|_| self.err(line, key, format!("`{v}` is not a non-negative integer"))),
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => match v.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(self.err(line, key, format!("`{v}` is not true/false"))),
            },
        }
    }

    fn list_or(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some((v, line)) => parse_list(&v).ok_or_else(|| self.err(line, key, format!("`{v}` is not a number list"))),
        }
    }

    fn optional_list_or(&mut self, key: &str, default: &Option<Vec<f64>>) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(default.clone()),
            Some((v, _)) if v == "none" => Ok(None),
            Some((v, line)) => parse_list(&v)
                .map(Some)
                .ok_or_else(|| self.err(line, key, format!("`{v}` is not a number list"))),
        }
    }

    fn string(&mut self, key: &str) -> Option<(String, usize)> {
        self.take(key)
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (_, line))) = self.entries.into_iter().next() {
            return Err(Error::Config(format!("line {line}: unknown key `{key}` in [{}]", self.name)));
        }
        Ok(())
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(parse_f64).collect()
}

fn parse_schedule(s: &str) -> Option<Vec<ChangeEvent>> {
    let mut out = Vec::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        let body = rest.strip_prefix('(')?;
        let close = body.find(')')?;
        let fields: Vec<&str> = body[..close].split(',').map(str::trim).collect();
        if fields.len() != 3 || fields[1].is_empty() {
            return None;
        }
        out.push(ChangeEvent {
            time: parse_f64(fields[0])?,
            parameter: fields[1].to_string(),
            value: parse_f64(fields[2])?,
        });
        rest = body[close + 1..].trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
            if rest.is_empty() {
                return None;
            }
        } else if !rest.is_empty() {
            return None;
        }
    }
    Some(out)
}

fn parse_plant(s: &mut Section, cfg: &mut ExperimentConfig) -> Result<()> {
    let p = &mut cfg.plant;
    if let Some((kind, line)) = s.string("kind") {
        let same = matches!(
            (&p.kind, kind.as_str()),
            (PlantKind::Pendulum { .. }, "pendulum") | (PlantKind::Linear2nd { .. }, "linear2nd")
        );
        if !same {
            p.kind = match kind.as_str() {
                "pendulum" => PlantKind::Pendulum {
                    m: 1.0,
                    l: 1.0,
                    g: 9.81,
                    d: 0.5,
                    c: 0.0,
                },
                "linear2nd" => PlantKind::Linear2nd {
                    a: Matrix2::from_row_slice(&DEFAULT_A),
                    b: Vector2::from_row_slice(&DEFAULT_B),
                },
                other => return Err(s.err(line, "kind", format!("unknown plant kind `{other}`"))),
            };
            // the default schedule names pendulum parameters
            cfg.schedule = ChangeSchedule::default();
        }
    }
    match &mut p.kind {
        PlantKind::Pendulum { m, l, g, d, c } => {
            *m = s.f64_or("m", *m)?;
            *l = s.f64_or("l", *l)?;
            *g = s.f64_or("g", *g)?;
            *d = s.f64_or("d", *d)?;
            *c = s.f64_or("c", *c)?;
        }
        PlantKind::Linear2nd { a, b } => {
            let cur_a = [a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]];
            let line = s.entries.get("a").map_or(0, |e| e.1);
            let va = s.list_or("a", &cur_a)?;
            if va.len() != 4 {
                return Err(s.err(line, "a", "needs 4 entries (row-major)"));
            }
            *a = Matrix2::from_row_slice(&va);
            let line = s.entries.get("b").map_or(0, |e| e.1);
            let vb = s.list_or("b", &[b[0], b[1]])?;
            if vb.len() != 2 {
                return Err(s.err(line, "b", "needs 2 entries"));
            }
            *b = Vector2::from_row_slice(&vb);
        }
    }
    p.noise_y = s.f64_or("noise_y", p.noise_y)?;
    p.noise_x = s.f64_or("noise_x", p.noise_x)?;
    p.dt = s.f64_or("dt", p.dt)?;
    p.substeps = s.usize_or("substeps", p.substeps)?;
    if let Some((v, line)) = s.string("schedule") {
        let events = parse_schedule(&v)
            .ok_or_else(|| s.err(line, "schedule", "expected `(t, name, value), ...`"))?;
        cfg.schedule = ChangeSchedule::new(events).map_err(|e| s.err(line, "schedule", e))?;
    }
    Ok(())
}

fn parse_dict(s: &mut Section, d: &mut DictConfig) -> Result<()> {
    let states_line = s.entries.get("trig_states").map(|e| e.1);
    let states = match s.take("trig_states") {
        None => None,
        Some((v, line)) => {
            let parsed: Option<Vec<usize>> = if v.is_empty() {
                Some(Vec::new())
            } else {
                v.split(',').map(|t| t.trim().parse().ok()).collect()
            };
            Some(parsed.ok_or_else(|| s.err(line, "trig_states", format!("`{v}` is not an index list")))?)
        }
    };
    let degree = match s.take("degree") {
        None => None,
        Some((v, line)) => Some(
            v.parse::<u32>()
                .map_err(|_| s.err(line, "degree", format!("`{v}` is not a degree")))?,
        ),
    };
    if let Some((fam, line)) = s.string("family") {
        d.family = match fam.as_str() {
            "identity" => DictionaryFamily::Identity,
            "trig" => DictionaryFamily::Trig { states: vec![] },
            "monomial" => DictionaryFamily::Monomial { degree: 2 },
            other => return Err(s.err(line, "family", format!("unknown dictionary family `{other}`"))),
        };
    }
    match &mut d.family {
        DictionaryFamily::Trig { states: st } => {
            if let Some(v) = states {
                *st = v;
            }
        }
        DictionaryFamily::Monomial { degree: dg } => {
            if let Some(v) = degree {
                *dg = v;
            }
        }
        DictionaryFamily::Identity => {}
    }
    if let (Some(line), false) = (states_line, matches!(d.family, DictionaryFamily::Trig { .. })) {
        return Err(s.err(line, "trig_states", "only valid with family = trig"));
    }
    d.output_index = s.usize_or("output_index", d.output_index)?;
    Ok(())
}

fn parse_redmd(s: &mut Section, r: &mut RedmdConfig) -> Result<()> {
    r.lambda0 = s.f64_or("lambda0", r.lambda0)?;
    r.lambda_min = s.f64_or("lambda_min", r.lambda_min)?;
    r.variable_lambda = s.bool_or("variable_lambda", r.variable_lambda)?;
    r.m_op = s.usize_or("m_op", r.m_op)?;
    r.eps_low = s.f64_or("eps_low", r.eps_low)?;
    r.eps_high = s.f64_or("eps_high", r.eps_high)?;
    r.n0 = s.f64_or("n0", r.n0)?;
    r.mu_sigma = s.f64_or("mu_sigma", r.mu_sigma)?;
    match s.take("trace_max_factor") {
        None => {}
        Some((v, _)) if v == "none" => r.trace_max_factor = None,
        Some((v, line)) => {
            r.trace_max_factor = Some(
                parse_f64(&v).ok_or_else(|| s.err(line, "trace_max_factor", format!("`{v}` is not a number")))?,
            )
        }
    }
    let current_delta = match r.gamma_init {
        GammaInit::Diagonal(d) => d,
        GammaInit::FromData => 1e3,
    };
    let delta = s.f64_or("gamma_delta", current_delta)?;
    let kind = s.take("gamma_init");
    r.gamma_init = match kind.as_ref().map(|(v, l)| (v.as_str(), *l)) {
        None => match r.gamma_init {
            GammaInit::Diagonal(_) => GammaInit::Diagonal(delta),
            g => g,
        },
        Some(("data", _)) => GammaInit::FromData,
        Some(("diagonal", _)) => GammaInit::Diagonal(delta),
        Some((other, line)) => {
            return Err(s.err(line, "gamma_init", format!("expected data or diagonal, got `{other}`")))
        }
    };
    r.state_scales = s.list_or("state_scales", &r.state_scales)?;
    r.sigma_floor = s.f64_or("sigma_floor", r.sigma_floor)?;
    r.ridge = s.f64_or("ridge", r.ridge)?;
    Ok(())
}

fn parse_mpc(s: &mut Section, m: &mut MpcConfig) -> Result<()> {
    m.horizon = s.usize_or("horizon", m.horizon)?;
    let qy = s.list_or("qy", m.q_y.diagonal().as_slice())?;
    m.q_y = Matrix::from_diagonal(&nalgebra::DVector::from_vec(qy));
    let ru = s.list_or("ru", m.r_u.diagonal().as_slice())?;
    m.r_u = Matrix::from_diagonal(&nalgebra::DVector::from_vec(ru));
    m.terminal_weight = s.f64_or("terminal_weight", m.terminal_weight)?;
    m.u_min = s.optional_list_or("u_min", &m.u_min)?;
    m.u_max = s.optional_list_or("u_max", &m.u_max)?;
    m.max_pg_iters = s.usize_or("max_pg_iters", m.max_pg_iters)?;
    m.pg_tol = s.f64_or("pg_tol", m.pg_tol)?;
    Ok(())
}

fn parse_run(s: &mut Section, r: &mut RunConfig) -> Result<()> {
    r.t_sim = s.f64_or("t_sim", r.t_sim)?;
    if let Some((v, line)) = s.take("seed") {
        r.seed = v
            .parse()
            .map_err(|_| s.err(line, "seed", format!("`{v}` is not an unsigned integer")))?;
    }
    if let Some((v, line)) = s.take("variant") {
        r.variant = Variant::parse(&v).ok_or_else(|| {
            s.err(
                line,
                "variant",
                format!("`{v}` is not one of static-static, adaptive-ctrl, adaptive-obs, adaptive-both"),
            )
        })?;
    }
    if let Some((v, line)) = s.take("reference") {
        r.reference.kind = ReferenceKind::parse(&v)
            .ok_or_else(|| s.err(line, "reference", format!("`{v}` is not rest-to-rest, sinusoid or hold")))?;
    }
    r.reference.amplitude = s.f64_or("amplitude", r.reference.amplitude)?;
    r.reference.speed = s.f64_or("speed", r.reference.speed)?;
    r.reference.hold = s.f64_or("hold", r.reference.hold)?;
    r.reference.frequency = s.f64_or("frequency", r.reference.frequency)?;
    r.speeds = s.list_or("speeds", &r.speeds)?;
    r.x0 = s.list_or("x0", &r.x0)?;
    r.training.duration = s.f64_or("train_duration", r.training.duration)?;
    r.training.amplitudes = s.list_or("train_amplitudes", &r.training.amplitudes)?;
    r.training.frequencies = s.list_or("train_frequencies", &r.training.frequencies)?;
    r.training.noise = s.f64_or("train_noise", r.training.noise)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_bit_exactly() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_config_string();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_config_string(), text);
    }

    #[test]
    fn awkward_floats_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.plant.noise_y = 0.1 + 0.2;
        cfg.observer.q = vec![1.0e-300 / 3.0];
        cfg.redmd.trace_max_factor = None;
        cfg.redmd.gamma_init = GammaInit::Diagonal(1.0 / 7.0);
        cfg.mpc.u_min = None;
        cfg.schedule = ChangeSchedule::default();
        let text = cfg.to_config_string();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_config_string(), text);
    }

    #[test]
    fn linear_plant_and_monomials_round_trip() {
        let text = "[plant]\nkind = linear2nd\na = 0, 1, -2, -0.5\nb = 0, 2\n[dict]\nfamily = monomial\ndegree = 3\n[observer]\nq = 1e-3\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert!(cfg.schedule.is_empty());
        assert_eq!(cfg.dict.family, DictionaryFamily::Monomial { degree: 3 });
        assert_eq!(cfg.plant.parameter("a21").unwrap(), -2.0);
        let again = ExperimentConfig::parse(&cfg.to_config_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::parse("# only a seed\n[run]\nseed = 7 # trailing\n").unwrap();
        let mut expect = ExperimentConfig::default();
        expect.run.seed = 7;
        assert_eq!(cfg, expect);
    }

    #[test]
    fn schedule_grammar() {
        let ev = parse_schedule("(1.5, m, 2), (3, d,4.0)").unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[1].parameter, "d");
        assert_eq!(parse_schedule("").unwrap().len(), 0);
        assert!(parse_schedule("(1, m)").is_none());
        assert!(parse_schedule("(1, m, 2),").is_none());
        assert!(parse_schedule("(1, m, 2) (2, d, 1)").is_none());
    }

    #[test]
    fn errors_name_the_line() {
        let err = |t: &str| match ExperimentConfig::parse(t) {
            Err(Error::Config(m)) => m,
            other => panic!("expected config error, got {other:?}"),
        };
        assert!(err("[plant]\nmass = 2\n").contains("line 2"));
        assert!(err("[nope]\n").contains("unknown section"));
        assert!(err("[run]\nseed = 1\nseed = 2\n").contains("repeated"));
        assert!(err("seed = 1\n").contains("outside"));
        assert!(err("[run]\nvariant = fancy\n").contains("fancy"));
        assert!(err("[run]\nt_sim = -1\n").contains("t_sim"));
        assert!(err("[dict]\nfamily = identity\ntrig_states = 0\n").contains("trig_states"));
        // schedule naming an unknown parameter
        assert!(matches!(
            ExperimentConfig::parse("[plant]\nschedule = (1, mass, 2)\n"),
            Err(Error::UnknownParameter(_))
        ));
    }

    #[test]
    fn variant_flags() {
        assert!(!Variant::StaticStatic.adapts_controller() && !Variant::StaticStatic.adapts_observer());
        assert!(Variant::AdaptiveCtrl.adapts_controller() && !Variant::AdaptiveCtrl.adapts_observer());
        assert!(!Variant::AdaptiveObs.adapts_controller() && Variant::AdaptiveObs.adapts_observer());
        assert!(Variant::AdaptiveBoth.adapts_controller() && Variant::AdaptiveBoth.adapts_observer());
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()), Some(v));
        }
    }
}
