//! Config-driven experiments: reference runs, uniform and sparse sweeps,
//! stochastic ensembles, and CSV output.
//!
//! Test and reference states are evolved together and sampled on the times
//! both schedules share, so no trajectory has to be stored.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainModel, ModelKind, Partition};
use crate::observables::{common_times, deviation_series, fidelity, spin_profile, TimeSeries};
use crate::statevec::StateVector;
use crate::trotter::{
    build_sparse_dt, build_stochastic, build_uniform_dt, execute, Execution, Schedule,
    StochasticParams, TIME_EPS,
};

/// Largest chain the runner accepts (one state takes `16 · 2^L` bytes).
pub const MAX_SITES: usize = 28;

fn default_coupling() -> f64 {
    1.0
}

fn default_nodes() -> usize {
    1
}

fn default_stride() -> usize {
    1
}

fn default_reference_dt() -> f64 {
    0.1
}

fn default_observables() -> Vec<Observable> {
    vec![Observable::Magnetization, Observable::Correlation, Observable::Fidelity]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub sites: usize,
    #[serde(default = "default_coupling")]
    pub coupling: f64,
    #[serde(default)]
    pub field: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SchemeConfig {
    Uniform {
        dt: f64,
    },
    Sparse {
        dt: f64,
        sparsity: usize,
    },
    Stochastic {
        dt_ref: f64,
        mu: f64,
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t1: Option<f64>,
        ensemble_size: usize,
        #[serde(default)]
        base_seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default = "default_reference_dt")]
    pub dt: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            dt: default_reference_dt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observable {
    Magnetization,
    Correlation,
    Fidelity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Dt,
    Sparsity,
    Mu,
    Sigma,
}

impl SweepParameter {
    fn name(self) -> &'static str {
        match self {
            SweepParameter::Dt => "dt",
            SweepParameter::Sparsity => "sparsity",
            SweepParameter::Mu => "mu",
            SweepParameter::Sigma => "sigma",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    pub t_end: f64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default = "default_observables")]
    pub observables: Vec<Observable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be a positive number, got {v}")))
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON config.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.sites < 2 || m.sites > MAX_SITES {
            return Err(Error::config(
                "model.sites",
                format!("must lie in 2..={MAX_SITES}, got {}", m.sites),
            ));
        }
        if !m.coupling.is_finite() {
            return Err(Error::config("model.coupling", "must be finite"));
        }
        if !m.field.is_finite() {
            return Err(Error::config("model.field", "must be finite"));
        }
        if m.kind == ModelKind::Xy && m.field != 0.0 {
            return Err(Error::config("model.field", "the XY model has no field"));
        }
        if m.kind == ModelKind::Xy && m.sites % 2 != 0 {
            return Err(Error::config("model.sites", "domain wall needs an even chain length"));
        }
        if self.nodes == 0 || m.sites % self.nodes != 0 {
            return Err(Error::config(
                "nodes",
                format!("{} sites cannot be split into {} equal nodes", m.sites, self.nodes),
            ));
        }
        positive("t_end", self.t_end)?;
        positive("reference.dt", self.reference.dt)?;
        if self.snapshot_stride == 0 {
            return Err(Error::config("snapshot_stride", "must be at least 1"));
        }
        match &self.scheme {
            SchemeConfig::Uniform { dt } => positive("scheme.dt", *dt)?,
            SchemeConfig::Sparse { dt, sparsity } => {
                positive("scheme.dt", *dt)?;
                if *sparsity < 2 || sparsity % 2 != 0 {
                    return Err(Error::config(
                        "scheme.sparsity",
                        format!("must be a positive even number, got {sparsity}"),
                    ));
                }
                if self.nodes < 2 {
                    return Err(Error::config("nodes", "sparse schemes need at least two nodes"));
                }
            }
            SchemeConfig::Stochastic {
                dt_ref,
                mu,
                sigma,
                t1,
                ensemble_size,
                ..
            } => {
                positive("scheme.dt_ref", *dt_ref)?;
                positive("scheme.mu", *mu)?;
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::config("scheme.sigma", format!("must be non-negative, got {sigma}")));
                }
                let first = t1.unwrap_or(*mu);
                positive("scheme.t1", first)?;
                if first >= self.t_end {
                    return Err(Error::config("scheme.t1", "first step must be shorter than t_end"));
                }
                if *ensemble_size == 0 {
                    return Err(Error::config("scheme.ensemble_size", "must be at least 1"));
                }
                if self.nodes < 2 {
                    return Err(Error::config("nodes", "stochastic schemes need at least two nodes"));
                }
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::config("sweep.values", "must not be empty"));
            }
            for &v in &sweep.values {
                self.with_parameter(sweep.parameter, v)?.validate()?;
            }
        }
        Ok(())
    }

    /// Copy of this config with one scheme parameter replaced and no sweep.
    pub fn with_parameter(&self, parameter: SweepParameter, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.sweep = None;
        let bad = || {
            Error::config(
                "sweep.parameter",
                format!("`{}` does not apply to this scheme", parameter.name()),
            )
        };
        match (&mut cfg.scheme, parameter) {
            (SchemeConfig::Uniform { dt }, SweepParameter::Dt)
            | (SchemeConfig::Sparse { dt, .. }, SweepParameter::Dt) => *dt = value,
            (SchemeConfig::Sparse { sparsity, .. }, SweepParameter::Sparsity) => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(Error::config("sweep.values", format!("sparsity {value} is not an integer")));
                }
                *sparsity = value as usize;
            }
            (SchemeConfig::Stochastic { mu, .. }, SweepParameter::Mu) => *mu = value,
            (SchemeConfig::Stochastic { sigma, .. }, SweepParameter::Sigma) => *sigma = value,
            _ => return Err(bad()),
        }
        Ok(cfg)
    }

    pub fn chain_model(&self) -> Result<ChainModel> {
        ChainModel::new(self.model.kind, self.model.sites, self.model.coupling, self.model.field)
    }

    /// Deterministic test schedule; `None` for stochastic schemes.
    pub fn schedule(&self, model: &ChainModel) -> Result<Option<Schedule>> {
        match &self.scheme {
            SchemeConfig::Uniform { dt } => Ok(Some(build_uniform_dt(model, *dt, self.t_end)?)),
            SchemeConfig::Sparse { dt, sparsity } => {
                let partition = Partition::new(model, self.nodes)?;
                Ok(Some(build_sparse_dt(model, &partition, *dt, *sparsity, self.t_end)?))
            }
            SchemeConfig::Stochastic { .. } => Ok(None),
        }
    }

    pub fn reference_schedule(&self, model: &ChainModel) -> Result<Schedule> {
        build_uniform_dt(model, self.reference.dt, self.t_end)
    }

    fn wants(&self, o: Observable) -> bool {
        self.observables.contains(&o)
    }
}

/// Observables sampled along one evolution.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trajectory {
    /// Per-site `⟨σ^z_i⟩`.
    pub magnetization: TimeSeries,
    /// `χ_{0,i}` for every site `i`.
    pub correlation: TimeSeries,
    /// Fidelity against the reference at the same time.
    pub fidelity: Vec<f64>,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        self.magnetization.times()
    }

    fn record(&mut self, time: f64, state: &StateVector, fid: f64) -> Result<()> {
        let p = spin_profile(state);
        self.magnetization.push(time, p.magnetization)?;
        self.correlation.push(time, p.corr_first)?;
        self.fidelity.push(fid);
        Ok(())
    }

    /// The rows at `times`, which must all be present.
    pub fn restrict_to(&self, times: &[f64]) -> Result<Trajectory> {
        let magnetization = self.magnetization.restrict_to(times)?;
        if magnetization.len() != times.len() {
            return Err(Error::param("trajectory lacks some requested times"));
        }
        let fidelity = common_index(self.times(), times)
            .into_iter()
            .map(|k| self.fidelity[k])
            .collect();
        Ok(Trajectory {
            magnetization,
            correlation: self.correlation.restrict_to(times)?,
            fidelity,
        })
    }
}

fn common_index(grid: &[f64], times: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut k = 0;
    for &t in times {
        while k < grid.len() && grid[k] < t - TIME_EPS {
            k += 1;
        }
        if k < grid.len() && (grid[k] - t).abs() <= TIME_EPS {
            out.push(k);
        }
    }
    out
}

/// Every `stride`-th entry, always keeping the last one.
pub fn apply_stride(times: &[f64], stride: usize) -> Vec<f64> {
    let stride = stride.max(1);
    let mut out: Vec<f64> = times.iter().copied().step_by(stride).collect();
    if let Some(&last) = times.last() {
        if out.last() != Some(&last) {
            out.push(last);
        }
    }
    out
}

/// Evolves the reference and every test schedule side by side. Each test is
/// sampled on the checkpoint times it shares with the reference (thinned by
/// `stride`); the reference is sampled on the union of those grids.
pub fn lockstep(
    model: &ChainModel,
    reference: &Schedule,
    tests: &[Schedule],
    stride: usize,
) -> Result<(Trajectory, Vec<Trajectory>)> {
    let ref_times = reference.checkpoint_times();
    let grids: Vec<Vec<f64>> = tests
        .iter()
        .map(|s| apply_stride(&common_times(&ref_times, &s.checkpoint_times()), stride))
        .collect();
    let union: Vec<f64> = ref_times
        .iter()
        .copied()
        .filter(|&t| grids.iter().any(|g| g.iter().any(|&x| x == t)))
        .collect();

    let initial = model.initial_state()?;
    let mut ref_state = initial.clone();
    let mut ref_run = Execution::new(reference, model)?;
    let mut states: Vec<StateVector> = tests.iter().map(|_| initial.clone()).collect();
    let mut runs = tests
        .iter()
        .map(|s| Execution::new(s, model))
        .collect::<Result<Vec<_>>>()?;
    let mut ref_traj = Trajectory::default();
    let mut trajs = vec![Trajectory::default(); tests.len()];
    let mut cursor = vec![0usize; tests.len()];

    for &t in &union {
        ref_run.advance_to(&mut ref_state, t)?;
        ref_traj.record(t, &ref_state, 1.0)?;
        for i in 0..tests.len() {
            if grids[i].get(cursor[i]) != Some(&t) {
                continue;
            }
            cursor[i] += 1;
            runs[i].advance_to(&mut states[i], t)?;
            let f = fidelity(&ref_state, &states[i])?;
            trajs[i].record(t, &states[i], f)?;
        }
        log::debug!("lockstep t = {t:.4}");
    }
    Ok((ref_traj, trajs))
}

/// Per-instance results of a stochastic ensemble evaluated at `t_end`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleOutcome {
    pub seeds: Vec<u64>,
    pub final_fidelity: Vec<f64>,
    pub mean_magnetization: Vec<f64>,
    pub mean_correlation: Vec<f64>,
}

impl EnsembleOutcome {
    pub fn mean_fidelity(&self) -> f64 {
        mean(&self.final_fidelity)
    }

    /// Sample standard deviation (zero for a single instance).
    pub fn std_fidelity(&self) -> f64 {
        std_dev(&self.final_fidelity)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Runs `size` stochastic schedules with seeds `base_seed + i` in parallel
/// and compares each final state with `reference_final`. With zero variance
/// every instance is identical, so one run is replicated.
pub fn run_ensemble(
    model: &ChainModel,
    partition: &Partition,
    template: &StochasticParams,
    dt_ref: f64,
    t_end: f64,
    size: usize,
    base_seed: u64,
    reference_final: &StateVector,
) -> Result<EnsembleOutcome> {
    let seeds: Vec<u64> = (0..size as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let one = |seed: u64| -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let params = StochasticParams { seed, ..*template };
        let schedule = build_stochastic(model, partition, &params, dt_ref, t_end)?;
        let mut state = model.initial_state()?;
        execute(&schedule, model, &mut state, |_, _| {})?;
        let p = spin_profile(&state);
        Ok((fidelity(reference_final, &state)?, p.magnetization, p.corr_first))
    };
    let runs: Vec<(f64, Vec<f64>, Vec<f64>)> = if template.sigma == 0.0 {
        let r = one(seeds[0])?;
        vec![r; size]
    } else {
        seeds.par_iter().map(|&s| one(s)).collect::<Result<Vec<_>>>()?
    };
    let n = model.num_sites();
    let mut mean_magnetization = vec![0.0; n];
    let mut mean_correlation = vec![0.0; n];
    for (_, m, c) in &runs {
        for i in 0..n {
            mean_magnetization[i] += m[i] / size as f64;
            mean_correlation[i] += c[i] / size as f64;
        }
    }
    Ok(EnsembleOutcome {
        seeds,
        final_fidelity: runs.iter().map(|r| r.0).collect(),
        mean_magnetization,
        mean_correlation,
    })
}

/// Outcome of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Test run (ensemble means for stochastic schemes).
    pub test: Trajectory,
    /// Reference run on the same times.
    pub reference: Trajectory,
    /// Per snapshot, the ensemble standard deviation of the fidelity.
    pub fidelity_std: Option<Vec<f64>>,
    pub ensemble: Option<EnsembleOutcome>,
    /// Cut-bond layers in the deterministic test schedule.
    pub cut_bond_uses: Option<usize>,
}

impl ExperimentResult {
    pub fn times(&self) -> &[f64] {
        self.test.times()
    }

    pub fn final_fidelity(&self) -> f64 {
        self.test.fidelity.last().copied().unwrap_or(f64::NAN)
    }

    /// `max_{i,t} |Δm_i(t)|`.
    pub fn max_magnetization_deviation(&self) -> Result<f64> {
        Ok(deviation_series(&self.test.magnetization, &self.reference.magnetization)?.1)
    }

    /// `max_{i,t} |Δχ_{0,i}(t)|`.
    pub fn max_correlation_deviation(&self) -> Result<f64> {
        Ok(deviation_series(&self.test.correlation, &self.reference.correlation)?.1)
    }

    /// Column-oriented view written by [`write_csv`].
    pub fn to_table(&self) -> CsvTable {
        let n = self.config.model.sites;
        let mut header = vec!["time".to_string()];
        let mag = self.config.wants(Observable::Magnetization);
        let cor = self.config.wants(Observable::Correlation);
        let fid = self.config.wants(Observable::Fidelity);
        if mag {
            header.extend((0..n).map(|i| format!("m_{i}")));
        }
        if cor {
            header.extend((0..n).map(|i| format!("chi_0_{i}")));
        }
        if fid {
            match self.fidelity_std {
                Some(_) => {
                    header.push("fidelity_mean".into());
                    header.push("fidelity_std".into());
                }
                None => header.push("fidelity".into()),
            }
        }
        let rows = (0..self.times().len())
            .map(|k| {
                let mut row = vec![self.times()[k]];
                if mag {
                    row.extend(&self.test.magnetization.values()[k]);
                }
                if cor {
                    row.extend(&self.test.correlation.values()[k]);
                }
                if fid {
                    row.push(self.test.fidelity[k]);
                    if let Some(std) = &self.fidelity_std {
                        row.push(std[k]);
                    }
                }
                row
            })
            .collect();
        CsvTable { header, rows }
    }

    /// Provenance sidecar: config echo, seeds, summary figures.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "crate_version": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "snapshots": self.times().len(),
            "final_fidelity": self.final_fidelity(),
            "fidelity_std_final": self.fidelity_std.as_ref().and_then(|s| s.last()),
            "max_magnetization_deviation": self.max_magnetization_deviation().ok(),
            "max_correlation_deviation": self.max_correlation_deviation().ok(),
            "cut_bond_uses": self.cut_bond_uses,
            "rng": "ChaCha8 seeded from u64, normal variates via rand_distr::Normal",
            "seeds": self.ensemble.as_ref().map(|e| &e.seeds),
        })
    }
}

fn ensemble_result(
    cfg: &ExperimentConfig,
    model: &ChainModel,
    reference_final: &StateVector,
) -> Result<ExperimentResult> {
    let SchemeConfig::Stochastic {
        dt_ref,
        mu,
        sigma,
        t1,
        ensemble_size,
        base_seed,
    } = cfg.scheme
    else {
        unreachable!("only called for stochastic schemes");
    };
    let partition = Partition::new(model, cfg.nodes)?;
    let template = StochasticParams {
        mu,
        sigma,
        seed: base_seed,
        t1: t1.unwrap_or(mu),
    };
    let ens = run_ensemble(
        model,
        &partition,
        &template,
        dt_ref,
        cfg.t_end,
        ensemble_size,
        base_seed,
        reference_final,
    )?;
    let initial = spin_profile(&model.initial_state()?);
    let reference_profile = spin_profile(reference_final);
    let times = vec![0.0, cfg.t_end];
    let test = Trajectory {
        magnetization: TimeSeries::from_parts(
            times.clone(),
            vec![initial.magnetization.clone(), ens.mean_magnetization.clone()],
        )?,
        correlation: TimeSeries::from_parts(
            times.clone(),
            vec![initial.corr_first.clone(), ens.mean_correlation.clone()],
        )?,
        fidelity: vec![1.0, ens.mean_fidelity()],
    };
    let reference = Trajectory {
        magnetization: TimeSeries::from_parts(
            times.clone(),
            vec![initial.magnetization, reference_profile.magnetization],
        )?,
        correlation: TimeSeries::from_parts(times, vec![initial.corr_first, reference_profile.corr_first])?,
        fidelity: vec![1.0, 1.0],
    };
    Ok(ExperimentResult {
        config: cfg.clone(),
        test,
        reference,
        fidelity_std: Some(vec![0.0, ens.std_fidelity()]),
        ensemble: Some(ens),
        cut_bond_uses: None,
    })
}

/// Runs every config against one shared reference evolution. Deterministic
/// schemes are evolved in lockstep with the reference; stochastic ensembles
/// compare against the reference's final state.
pub fn run_batch(configs: &[ExperimentConfig]) -> Result<Vec<ExperimentResult>> {
    let Some(first) = configs.first() else {
        return Ok(Vec::new());
    };
    for c in configs {
        c.validate()?;
        if c.model != first.model || c.reference != first.reference || c.t_end != first.t_end {
            return Err(Error::config("sweep", "batch members must share model, reference and t_end"));
        }
    }
    let model = first.chain_model()?;
    let reference = first.reference_schedule(&model)?;

    let mut schedules = Vec::new();
    let mut owner = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        if let Some(s) = c.schedule(&model)? {
            schedules.push(s);
            owner.push(i);
        }
    }
    let any_ensemble = owner.len() < configs.len();
    let mut final_ref: Option<StateVector> = None;

    let (ref_traj, trajs) = if schedules.is_empty() {
        (Trajectory::default(), Vec::new())
    } else {
        let stride = first.snapshot_stride;
        if configs.iter().any(|c| c.snapshot_stride != stride) {
            return Err(Error::config("snapshot_stride", "batch members must share the stride"));
        }
        lockstep(&model, &reference, &schedules, stride)?
    };
    if any_ensemble {
        let mut state = model.initial_state()?;
        execute(&reference.clone().keep_endpoints(), &model, &mut state, |_, _| {})?;
        final_ref = Some(state);
    }

    let mut results: Vec<Option<ExperimentResult>> = vec![None; configs.len()];
    for ((i, traj), schedule) in owner.into_iter().zip(trajs).zip(&schedules) {
        let reference = ref_traj.restrict_to(traj.times())?;
        results[i] = Some(ExperimentResult {
            config: configs[i].clone(),
            test: traj,
            reference,
            fidelity_std: None,
            ensemble: None,
            cut_bond_uses: Some(schedule.cut_bond_uses()),
        });
    }
    for (i, c) in configs.iter().enumerate() {
        if results[i].is_none() {
            let r = final_ref.as_ref().expect("computed when an ensemble is present");
            results[i] = Some(ensemble_result(c, &model, r)?);
        }
    }
    Ok(results.into_iter().map(|r| r.expect("filled")).collect())
}

/// Runs a single experiment (ignoring any sweep section).
pub fn run(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut cfg = config.clone();
    cfg.sweep = None;
    Ok(run_batch(std::slice::from_ref(&cfg))?.remove(0))
}

/// Expands the sweep section into one config per value.
pub fn sweep_configs(config: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "missing sweep section"))?;
    sweep
        .values
        .iter()
        .map(|&v| {
            let mut c = config.with_parameter(sweep.parameter, v)?;
            c.output = config.output.as_ref().map(|p| variant_path(p, sweep.parameter, v));
            Ok(c)
        })
        .collect()
}

/// `out/run.csv` becomes `out/run_sparsity4.csv`.
pub fn variant_path(base: &Path, parameter: SweepParameter, value: f64) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}_{}{value}.{ext}", parameter.name()))
}

/// Runs every sweep variant against one shared reference.
pub fn sweep(config: &ExperimentConfig) -> Result<Vec<ExperimentResult>> {
    run_batch(&sweep_configs(config)?)
}

/// Table of named float columns.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// CSV text with floats at 12 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|x| format!("{x:.11e}")))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    /// Parses CSV with a header row and float cells.
    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::parse(1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
            if rec.len() != header.len() {
                return Err(Error::parse(line, format!("expected {} fields, got {}", header.len(), rec.len())));
            }
            let row = rec
                .iter()
                .map(|c| c.trim().parse::<f64>().map_err(|e| Error::parse(line, format!("`{c}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(CsvTable { header, rows })
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Writes the result table to `path` and metadata to `path.meta.json`.
pub fn write_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, result.to_table().to_csv_string()).map_err(|e| Error::io(path, e))?;
    let meta = meta_path(path);
    let text = serde_json::to_string_pretty(&result.metadata()).expect("metadata serializes");
    fs::write(&meta, text + "\n").map_err(|e| Error::io(&meta, e))
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CsvTable::parse(&text)
}

/// One line per sweep variant: parameter value and summary figures.
pub fn sweep_summary(parameter: SweepParameter, results: &[ExperimentResult]) -> Result<CsvTable> {
    let header = [
        parameter.name(),
        "final_fidelity",
        "final_fidelity_std",
        "max_dm",
        "max_dchi",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows = results
        .iter()
        .map(|r| {
            let value = match (&r.config.scheme, parameter) {
                (SchemeConfig::Uniform { dt }, _) | (SchemeConfig::Sparse { dt, .. }, SweepParameter::Dt) => *dt,
                (SchemeConfig::Sparse { sparsity, .. }, _) => *sparsity as f64,
                (SchemeConfig::Stochastic { mu, .. }, SweepParameter::Mu) => *mu,
                (SchemeConfig::Stochastic { sigma, .. }, _) => *sigma,
            };
            Ok(vec![
                value,
                r.final_fidelity(),
                r.fidelity_std.as_ref().and_then(|s| s.last().copied()).unwrap_or(0.0),
                r.max_magnetization_deviation()?,
                r.max_correlation_deviation()?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CsvTable { header, rows })
}
