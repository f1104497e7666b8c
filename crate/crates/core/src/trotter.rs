//! Gate schedules for uniform, sparse and stochastic sparse Trotterization,
//! and an executor that drives a [`StateVector`] through them.
//!
//! A [`Schedule`] is an ordered list of [`Layer`]s. Uniform schedules are
//! written in primitive layers (`Local1Q`, `EvenBonds`, `OddBonds` over the
//! whole chain). Sparse and stochastic schedules are written in node-local
//! `LocalBlock` layers, each one symmetric second-order step restricted to a
//! node, interleaved with `CutBond` layers on the bonds that join two nodes.
//!
//! Checkpoints mark positions in the layer list where every term of the
//! Hamiltonian has been evolved for the same total time; observables are only
//! sampled there.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainModel, Parity, Partition};
use crate::statevec::{Gate, StateVector};

/// Absolute tolerance for time bookkeeping.
pub const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// Single-site field term on every site in scope.
    Local1Q,
    /// Every even bond inside the scope.
    EvenBonds,
    /// Every odd bond inside the scope.
    OddBonds,
    /// One interconnect bond.
    CutBond,
    /// One full symmetric Trotter step restricted to the scope.
    LocalBlock,
}

impl LayerKind {
    fn name(self) -> &'static str {
        match self {
            LayerKind::Local1Q => "local_1q",
            LayerKind::EvenBonds => "even_bonds",
            LayerKind::OddBonds => "odd_bonds",
            LayerKind::CutBond => "cut_bond",
            LayerKind::LocalBlock => "local_block",
        }
    }
}

impl FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "local_1q" => LayerKind::Local1Q,
            "even_bonds" => LayerKind::EvenBonds,
            "odd_bonds" => LayerKind::OddBonds,
            "cut_bond" => LayerKind::CutBond,
            "local_block" => LayerKind::LocalBlock,
            other => return Err(format!("unknown layer kind `{other}`")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scope {
    Chain,
    Node(usize),
    /// Index into [`Partition::cut_bonds`].
    Cut(usize),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Chain => f.write_str("chain"),
            Scope::Node(k) => write!(f, "node={k}"),
            Scope::Cut(c) => write!(f, "cut={c}"),
        }
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "chain" {
            return Ok(Scope::Chain);
        }
        let parse_idx = |v: &str| v.parse::<usize>().map_err(|e| format!("bad index `{v}`: {e}"));
        match s.split_once('=') {
            Some(("node", v)) => Ok(Scope::Node(parse_idx(v)?)),
            Some(("cut", v)) => Ok(Scope::Cut(parse_idx(v)?)),
            _ => Err(format!("unknown scope `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub scope: Scope,
    pub duration: f64,
}

impl Layer {
    pub fn new(kind: LayerKind, scope: Scope, duration: f64) -> Self {
        Layer {
            kind,
            scope,
            duration,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Uniform,
    Sparse,
    Stochastic,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Uniform => "uniform",
            Scheme::Sparse => "sparse",
            Scheme::Stochastic => "stochastic",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(Scheme::Uniform),
            "sparse" => Ok(Scheme::Sparse),
            "stochastic" => Ok(Scheme::Stochastic),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}

/// Normal-distribution parameters for cut-bond step durations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticParams {
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
    /// Deterministic first step.
    pub t1: f64,
}

impl StochasticParams {
    /// First step defaults to the mean.
    pub fn new(mu: f64, sigma: f64, seed: u64) -> Self {
        StochasticParams {
            mu,
            sigma,
            seed,
            t1: mu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::param(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::param(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if !(self.t1 > 0.0 && self.t1.is_finite()) {
            return Err(Error::param(format!("t1 must be positive, got {}", self.t1)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleMeta {
    pub scheme: Scheme,
    pub num_sites: usize,
    pub num_nodes: usize,
    /// Number of node-local steps `N` (uniform, sparse).
    pub steps: Option<usize>,
    /// Sparsity `n` (sparse).
    pub sparsity: Option<usize>,
    /// Node-local step size.
    pub dt: f64,
    pub t_end: f64,
    pub stochastic: Option<StochasticParams>,
    /// Per cut bond, the step durations `t_1, t_2, …` (stochastic).
    pub cut_steps: Vec<Vec<f64>>,
}

/// Position after `after_layer` layers where all terms have evolved for `time`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Checkpoint {
    pub after_layer: usize,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub meta: ScheduleMeta,
    pub layers: Vec<Layer>,
    pub checkpoints: Vec<Checkpoint>,
}

impl Schedule {
    fn empty(meta: ScheduleMeta) -> Self {
        Schedule {
            meta,
            layers: Vec::new(),
            checkpoints: vec![Checkpoint {
                after_layer: 0,
                time: 0.0,
            }],
        }
    }

    fn mark(&mut self, time: f64) {
        self.checkpoints.push(Checkpoint {
            after_layer: self.layers.len(),
            time,
        });
    }

    pub fn count(&self, kind: LayerKind) -> usize {
        self.layers.iter().filter(|l| l.kind == kind).count()
    }

    /// Interconnect uses: one per cut-bond layer.
    pub fn cut_bond_uses(&self) -> usize {
        self.count(LayerKind::CutBond)
    }

    pub fn checkpoint_times(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.time).collect()
    }

    /// Drops every checkpoint except the first and the last. The executor
    /// can then merge half-steps across the former checkpoints, which speeds
    /// up runs whose intermediate states are not needed.
    pub fn keep_endpoints(mut self) -> Self {
        let n = self.checkpoints.len();
        if n > 2 {
            let last = self.checkpoints[n - 1];
            self.checkpoints.truncate(1);
            self.checkpoints.push(last);
        }
        self
    }

    /// Line-oriented text form: `#`-prefixed metadata, then one layer per
    /// line (`kind scope duration`) with `checkpoint time` lines interleaved.
    /// Floats carry 17 significant digits.
    pub fn to_dump(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        let f = |x: f64| format!("{x:.16e}");
        let _ = writeln!(out, "# scheme {}", m.scheme);
        let _ = writeln!(out, "# sites {}", m.num_sites);
        let _ = writeln!(out, "# nodes {}", m.num_nodes);
        if let Some(n) = m.steps {
            let _ = writeln!(out, "# steps {n}");
        }
        if let Some(n) = m.sparsity {
            let _ = writeln!(out, "# sparsity {n}");
        }
        let _ = writeln!(out, "# dt {}", f(m.dt));
        let _ = writeln!(out, "# t_end {}", f(m.t_end));
        if let Some(p) = &m.stochastic {
            let _ = writeln!(
                out,
                "# stochastic {} {} {} {}",
                f(p.mu),
                f(p.sigma),
                p.seed,
                f(p.t1)
            );
        }
        for (c, steps) in m.cut_steps.iter().enumerate() {
            let list: Vec<String> = steps.iter().map(|&x| f(x)).collect();
            let _ = writeln!(out, "# cut_steps {c} {}", list.join(" "));
        }
        let mut cps = self.checkpoints.iter().peekable();
        for i in 0..=self.layers.len() {
            while let Some(cp) = cps.next_if(|cp| cp.after_layer == i) {
                let _ = writeln!(out, "checkpoint {}", f(cp.time));
            }
            if let Some(l) = self.layers.get(i) {
                let _ = writeln!(out, "{} {} {}", l.kind.name(), l.scope, f(l.duration));
            }
        }
        out
    }

    /// Parses the output of [`Schedule::to_dump`].
    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut scheme = None;
        let mut num_sites = None;
        let mut num_nodes = None;
        let mut steps = None;
        let mut sparsity = None;
        let mut dt = None;
        let mut t_end = None;
        let mut stochastic = None;
        let mut cut_steps: Vec<Vec<f64>> = Vec::new();
        let mut layers = Vec::new();
        let mut checkpoints = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |msg: String| Error::parse(line_no, msg);
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let num = |s: Option<&str>, what: &str| -> Result<f64> {
                let s = s.ok_or_else(|| err(format!("missing {what}")))?;
                let v: f64 = s.parse().map_err(|_| err(format!("bad {what} `{s}`")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(err(format!("{what} is not finite")))
                }
            };
            let int = |s: Option<&str>, what: &str| -> Result<usize> {
                let s = s.ok_or_else(|| err(format!("missing {what}")))?;
                s.parse().map_err(|_| err(format!("bad {what} `{s}`")))
            };
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                match it.next() {
                    Some("scheme") => {
                        let s = it.next().ok_or_else(|| err("missing scheme".into()))?;
                        scheme = Some(s.parse::<Scheme>().map_err(err)?);
                    }
                    Some("sites") => num_sites = Some(int(it.next(), "sites")?),
                    Some("nodes") => num_nodes = Some(int(it.next(), "nodes")?),
                    Some("steps") => steps = Some(int(it.next(), "steps")?),
                    Some("sparsity") => sparsity = Some(int(it.next(), "sparsity")?),
                    Some("dt") => dt = Some(num(it.next(), "dt")?),
                    Some("t_end") => t_end = Some(num(it.next(), "t_end")?),
                    Some("stochastic") => {
                        let mu = num(it.next(), "mu")?;
                        let sigma = num(it.next(), "sigma")?;
                        let seed = it
                            .next()
                            .and_then(|s| s.parse::<u64>().ok())
                            .ok_or_else(|| err("bad seed".into()))?;
                        let t1 = num(it.next(), "t1")?;
                        stochastic = Some(StochasticParams { mu, sigma, seed, t1 });
                    }
                    Some("cut_steps") => {
                        let c = int(it.next(), "cut index")?;
                        if c != cut_steps.len() {
                            return Err(err(format!("cut_steps {c} out of order")));
                        }
                        let list = it
                            .map(|s| num(Some(s), "step"))
                            .collect::<Result<Vec<f64>>>()?;
                        cut_steps.push(list);
                    }
                    _ => {}
                }
                continue;
            }
            let mut it = line.split_whitespace();
            let head = it.next().unwrap_or_default();
            if head == "checkpoint" {
                let time = num(it.next(), "checkpoint time")?;
                if let Some(prev) = checkpoints.last().map(|c: &Checkpoint| c.time) {
                    if time < prev {
                        return Err(err("checkpoint times must not decrease".into()));
                    }
                }
                checkpoints.push(Checkpoint {
                    after_layer: layers.len(),
                    time,
                });
                continue;
            }
            let kind: LayerKind = head.parse().map_err(err)?;
            let scope: Scope = it
                .next()
                .ok_or_else(|| err("missing scope".into()))?
                .parse()
                .map_err(err)?;
            let duration = num(it.next(), "duration")?;
            if duration <= 0.0 {
                return Err(err("duration must be positive".into()));
            }
            if it.next().is_some() {
                return Err(err("trailing fields".into()));
            }
            layers.push(Layer::new(kind, scope, duration));
        }

        let missing = |what: &str| Error::parse(0, format!("missing `# {what}` header"));
        let meta = ScheduleMeta {
            scheme: scheme.ok_or_else(|| missing("scheme"))?,
            num_sites: num_sites.ok_or_else(|| missing("sites"))?,
            num_nodes: num_nodes.ok_or_else(|| missing("nodes"))?,
            steps,
            sparsity,
            dt: dt.ok_or_else(|| missing("dt"))?,
            t_end: t_end.ok_or_else(|| missing("t_end"))?,
            stochastic,
            cut_steps,
        };
        if meta.num_nodes == 0 || meta.num_sites < 2 || meta.num_sites % meta.num_nodes != 0 {
            return Err(Error::parse(0, "inconsistent sites/nodes header"));
        }
        for l in &layers {
            let ok = match l.scope {
                Scope::Chain => l.kind != LayerKind::CutBond,
                Scope::Node(k) => k < meta.num_nodes && l.kind != LayerKind::CutBond,
                Scope::Cut(c) => c + 1 < meta.num_nodes && l.kind == LayerKind::CutBond,
            };
            if !ok {
                return Err(Error::parse(0, format!("layer {:?} has invalid scope", l.kind)));
            }
        }
        Ok(Schedule {
            meta,
            layers,
            checkpoints,
        })
    }
}

/// Splits a node-local fill of length `time` into whole steps of `dt` plus a
/// shorter remainder step (omitted when zero).
pub fn fill_steps(time: f64, dt: f64) -> (usize, Option<f64>) {
    if time <= TIME_EPS {
        return (0, None);
    }
    let whole = (time / dt + TIME_EPS).floor();
    let rest = time - whole * dt;
    (whole as usize, (rest > TIME_EPS).then_some(rest))
}

fn push_fill(layers: &mut Vec<Layer>, scope: Scope, time: f64, dt: f64) {
    let (whole, rest) = fill_steps(time, dt);
    layers.extend((0..whole).map(|_| Layer::new(LayerKind::LocalBlock, scope, dt)));
    if let Some(r) = rest {
        layers.push(Layer::new(LayerKind::LocalBlock, scope, r));
    }
}

/// One symmetric step `T0(dt/2) Teven(dt/2) Todd(dt) Teven(dt/2) T0(dt/2)`;
/// the field layers are dropped for models without a site term.
pub fn symmetric_step(model: &ChainModel, scope: Scope, dt: f64) -> Vec<Layer> {
    let field = model.site_term().is_some();
    let mut out = Vec::with_capacity(5);
    if field {
        out.push(Layer::new(LayerKind::Local1Q, scope, dt / 2.0));
    }
    out.push(Layer::new(LayerKind::EvenBonds, scope, dt / 2.0));
    out.push(Layer::new(LayerKind::OddBonds, scope, dt));
    out.push(Layer::new(LayerKind::EvenBonds, scope, dt / 2.0));
    if field {
        out.push(Layer::new(LayerKind::Local1Q, scope, dt / 2.0));
    }
    out
}

fn check_time(t_end: f64) -> Result<()> {
    if t_end > 0.0 && t_end.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("evolution time must be positive, got {t_end}")))
    }
}

/// Uniform second-order Trotterization with `steps` steps of `t_end / steps`.
pub fn build_uniform(model: &ChainModel, steps: usize, t_end: f64) -> Result<Schedule> {
    if steps == 0 {
        return Err(Error::param("uniform Trotterization needs at least one step"));
    }
    check_time(t_end)?;
    let dt = t_end / steps as f64;
    let mut s = Schedule::empty(ScheduleMeta {
        scheme: Scheme::Uniform,
        num_sites: model.num_sites(),
        num_nodes: 1,
        steps: Some(steps),
        sparsity: None,
        dt,
        t_end,
        stochastic: None,
        cut_steps: Vec::new(),
    });
    for k in 1..=steps {
        s.layers.extend(symmetric_step(model, Scope::Chain, dt));
        s.mark(if k == steps { t_end } else { k as f64 * dt });
    }
    Ok(s)
}

/// Uniform Trotterization with a fixed step `dt`; when `dt` does not divide
/// `t_end` a final shorter step closes the interval.
pub fn build_uniform_dt(model: &ChainModel, dt: f64, t_end: f64) -> Result<Schedule> {
    check_time(t_end)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param(format!("step size must be positive, got {dt}")));
    }
    let (whole, rest) = fill_steps(t_end, dt);
    if rest.is_none() {
        let mut s = build_uniform(model, whole.max(1), t_end)?;
        s.meta.dt = dt;
        return Ok(s);
    }
    let mut s = Schedule::empty(ScheduleMeta {
        scheme: Scheme::Uniform,
        num_sites: model.num_sites(),
        num_nodes: 1,
        steps: Some(whole + 1),
        sparsity: None,
        dt,
        t_end,
        stochastic: None,
        cut_steps: Vec::new(),
    });
    for k in 1..=whole {
        s.layers.extend(symmetric_step(model, Scope::Chain, dt));
        s.mark(k as f64 * dt);
    }
    if let Some(r) = rest {
        s.layers.extend(symmetric_step(model, Scope::Chain, r));
        s.mark(t_end);
    }
    Ok(s)
}

fn require_distributed(partition: &Partition, model: &ChainModel) -> Result<()> {
    if partition.num_sites() != model.num_sites() {
        return Err(Error::DimensionMismatch {
            expected: model.num_sites(),
            actual: partition.num_sites(),
        });
    }
    if partition.num_nodes() < 2 {
        return Err(Error::param("sparse schemes need at least two nodes"));
    }
    Ok(())
}

fn push_macro_step(s: &mut Schedule, partition: &Partition, half_local: f64, dt: f64, cut: f64) {
    for node in 0..partition.num_nodes() {
        push_fill(&mut s.layers, Scope::Node(node), half_local, dt);
    }
    for c in 0..partition.cut_bonds().len() {
        s.layers.push(Layer::new(LayerKind::CutBond, Scope::Cut(c), cut));
    }
    for node in 0..partition.num_nodes() {
        push_fill(&mut s.layers, Scope::Node(node), half_local, dt);
    }
}

/// Sparse Trotterization: `steps / sparsity` macro-steps, each made of
/// `sparsity / 2` node-local steps, one cut-bond step of `sparsity * dt`, and
/// another `sparsity / 2` node-local steps.
pub fn build_sparse(
    model: &ChainModel,
    partition: &Partition,
    steps: usize,
    sparsity: usize,
    t_end: f64,
) -> Result<Schedule> {
    require_distributed(partition, model)?;
    check_time(t_end)?;
    if sparsity < 2 || sparsity % 2 != 0 {
        return Err(Error::param(format!(
            "sparsity must be a positive even number, got {sparsity}"
        )));
    }
    if steps == 0 || steps % sparsity != 0 {
        return Err(Error::param(format!(
            "step count {steps} is not a positive multiple of sparsity {sparsity}"
        )));
    }
    let dt = t_end / steps as f64;
    let macros = steps / sparsity;
    let mut s = Schedule::empty(ScheduleMeta {
        scheme: Scheme::Sparse,
        num_sites: model.num_sites(),
        num_nodes: partition.num_nodes(),
        steps: Some(steps),
        sparsity: Some(sparsity),
        dt,
        t_end,
        stochastic: None,
        cut_steps: Vec::new(),
    });
    let macro_len = sparsity as f64 * dt;
    for m in 1..=macros {
        push_macro_step(&mut s, partition, macro_len / 2.0, dt, macro_len);
        s.mark(if m == macros { t_end } else { m as f64 * macro_len });
    }
    Ok(s)
}

/// Sparse Trotterization with node-local step `dt` up to an arbitrary
/// `t_end`. Whole macro-steps of `sparsity * dt` are followed, if needed, by
/// one shorter macro-step covering the remainder with the same structure.
pub fn build_sparse_dt(
    model: &ChainModel,
    partition: &Partition,
    dt: f64,
    sparsity: usize,
    t_end: f64,
) -> Result<Schedule> {
    require_distributed(partition, model)?;
    check_time(t_end)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param(format!("step size must be positive, got {dt}")));
    }
    let macro_len = sparsity as f64 * dt;
    let (whole, rest) = fill_steps(t_end, macro_len);
    if rest.is_none() {
        return build_sparse(model, partition, whole * sparsity, sparsity, t_end);
    }
    if sparsity < 2 || sparsity % 2 != 0 {
        return Err(Error::param(format!(
            "sparsity must be a positive even number, got {sparsity}"
        )));
    }
    let mut s = Schedule::empty(ScheduleMeta {
        scheme: Scheme::Sparse,
        num_sites: model.num_sites(),
        num_nodes: partition.num_nodes(),
        steps: None,
        sparsity: Some(sparsity),
        dt,
        t_end,
        stochastic: None,
        cut_steps: Vec::new(),
    });
    for m in 1..=whole {
        push_macro_step(&mut s, partition, macro_len / 2.0, dt, macro_len);
        s.mark(m as f64 * macro_len);
    }
    if let Some(r) = rest {
        push_macro_step(&mut s, partition, r / 2.0, dt, r);
        s.mark(t_end);
    }
    Ok(s)
}

/// Step durations `[t1, t2, …, tm]` for one cut bond. Draws after the first
/// are normal and clamped below at `dt_ref`; the final entry is replaced so
/// the list sums to `t_end`.
pub fn draw_cut_steps(
    params: &StochasticParams,
    t_end: f64,
    dt_ref: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    params.validate()?;
    check_time(t_end)?;
    if !(dt_ref > 0.0 && dt_ref.is_finite()) {
        return Err(Error::param(format!("reference step must be positive, got {dt_ref}")));
    }
    if params.t1 >= t_end {
        return Err(Error::param(format!(
            "first step {} must be shorter than t_end {t_end}",
            params.t1
        )));
    }
    let normal = Normal::new(params.mu, params.sigma)
        .map_err(|e| Error::param(format!("normal distribution: {e}")))?;
    let mut steps = vec![params.t1];
    let mut total = params.t1;
    while t_end - total > TIME_EPS {
        let x = normal.sample(rng).max(dt_ref);
        steps.push(x);
        total += x;
    }
    // Replace the last draw so the sum is exact; drop draws that would leave
    // a non-positive remainder.
    loop {
        let last = steps.pop().expect("at least t1 and one draw");
        let head: f64 = steps.iter().sum();
        let fixed = t_end - head;
        if fixed > TIME_EPS || steps.len() == 1 && fixed > 0.0 {
            steps.push(fixed);
            break;
        }
        if steps.len() == 1 {
            // Only t1 is left and it already reaches t_end.
            steps.push(last);
            return Err(Error::param("first step leaves no time for the bulk"));
        }
    }
    Ok(steps)
}

/// Stochastic sparse Trotterization with freshly drawn step lists (cut bond
/// 0 first, then 1, … from one seeded stream).
pub fn build_stochastic(
    model: &ChainModel,
    partition: &Partition,
    params: &StochasticParams,
    dt_ref: f64,
    t_end: f64,
) -> Result<Schedule> {
    require_distributed(partition, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let cut_steps = (0..partition.cut_bonds().len())
        .map(|_| draw_cut_steps(params, t_end, dt_ref, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut s = build_stochastic_from_steps(model, partition, cut_steps, dt_ref, t_end)?;
    s.meta.stochastic = Some(*params);
    Ok(s)
}

/// Stochastic sparse construction from explicit per-cut-bond step lists.
/// Every list starts with the shared deterministic step `t1` and sums to
/// `t_end`.
pub fn build_stochastic_from_steps(
    model: &ChainModel,
    partition: &Partition,
    cut_steps: Vec<Vec<f64>>,
    dt_ref: f64,
    t_end: f64,
) -> Result<Schedule> {
    require_distributed(partition, model)?;
    check_time(t_end)?;
    let num_cuts = partition.cut_bonds().len();
    if cut_steps.len() != num_cuts {
        return Err(Error::DimensionMismatch {
            expected: num_cuts,
            actual: cut_steps.len(),
        });
    }
    let t1 = cut_steps[0].first().copied().unwrap_or(0.0);
    for (c, list) in cut_steps.iter().enumerate() {
        if list.len() < 2 || list[0] != t1 {
            return Err(Error::param(format!(
                "cut {c}: step list needs the shared first step and at least one more"
            )));
        }
        if list.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::param(format!("cut {c}: steps must be positive")));
        }
        let sum: f64 = list.iter().sum();
        if (sum - t_end).abs() > TIME_EPS {
            return Err(Error::param(format!("cut {c}: steps sum to {sum}, not {t_end}")));
        }
    }

    let mut s = Schedule::empty(ScheduleMeta {
        scheme: Scheme::Stochastic,
        num_sites: model.num_sites(),
        num_nodes: partition.num_nodes(),
        steps: None,
        sparsity: None,
        dt: dt_ref,
        t_end,
        stochastic: None,
        cut_steps: Vec::new(),
    });
    let nodes = partition.num_nodes();

    for node in 0..nodes {
        push_fill(&mut s.layers, Scope::Node(node), t1 / 2.0, dt_ref);
    }
    for c in 0..num_cuts {
        s.layers.push(Layer::new(LayerKind::CutBond, Scope::Cut(c), t1));
    }

    // Bulk events keyed by the interconnect's cumulative time.
    let mut events: Vec<(f64, usize, f64)> = Vec::new();
    for (c, list) in cut_steps.iter().enumerate() {
        let mut key = t1 / 2.0;
        for &step in &list[1..] {
            key += step;
            events.push((key, c, step));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut clock = vec![t1 / 2.0; nodes];
    for &(key, c, step) in &events {
        for node in [c, c + 1] {
            let need = key - clock[node];
            if need > TIME_EPS {
                push_fill(&mut s.layers, Scope::Node(node), need, dt_ref);
            }
            clock[node] = clock[node].max(key);
        }
        s.layers.push(Layer::new(LayerKind::CutBond, Scope::Cut(c), step));
    }

    for node in 0..nodes {
        push_fill(&mut s.layers, Scope::Node(node), t1 / 2.0, dt_ref);
    }
    s.mark(t_end);
    s.meta.cut_steps = cut_steps;
    Ok(s)
}

/// Total evolution time accumulated by every Hamiltonian term.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeAudit {
    /// Indexed by bond (left site).
    pub bond_time: Vec<f64>,
    /// Indexed by site; empty for models without a site term.
    pub field_time: Vec<f64>,
    /// Time covered by `LocalBlock` layers, per node.
    pub node_block_time: Vec<f64>,
    /// Time covered by `CutBond` layers, per cut bond.
    pub cut_time: Vec<f64>,
}

impl TimeAudit {
    /// Largest deviation of any term (and any node clock, when the schedule
    /// is block-structured) from `t_end`.
    pub fn max_deviation(&self, t_end: f64) -> f64 {
        let blocks_used = self.node_block_time.iter().any(|&t| t > 0.0);
        self.bond_time
            .iter()
            .chain(&self.field_time)
            .chain(&self.cut_time)
            .chain(self.node_block_time.iter().filter(|_| blocks_used))
            .map(|t| (t - t_end).abs())
            .fold(0.0, f64::max)
    }
}

/// Sums layer durations per term of `model`.
pub fn audit(schedule: &Schedule, model: &ChainModel) -> Result<TimeAudit> {
    let ctx = ExecContext::new(schedule, model)?;
    let n = model.num_sites();
    let mut a = TimeAudit {
        bond_time: vec![0.0; n - 1],
        field_time: if model.site_term().is_some() { vec![0.0; n] } else { Vec::new() },
        node_block_time: vec![0.0; ctx.partition.num_nodes()],
        cut_time: vec![0.0; ctx.partition.cut_bonds().len()],
    };
    for l in &schedule.layers {
        let d = l.duration;
        let (fields, evens, odds, block) = match l.kind {
            LayerKind::Local1Q => (true, false, false, false),
            LayerKind::EvenBonds => (false, true, false, false),
            LayerKind::OddBonds => (false, false, true, false),
            LayerKind::LocalBlock => (true, true, true, true),
            LayerKind::CutBond => {
                if let Scope::Cut(c) = l.scope {
                    a.cut_time[c] += d;
                    a.bond_time[ctx.partition.cut_bonds()[c].left] += d;
                }
                continue;
            }
        };
        if fields && !a.field_time.is_empty() {
            for site in ctx.scope_sites(l.scope) {
                a.field_time[site] += d;
            }
        }
        for bond in ctx.scope_bonds(l.scope) {
            let hit = match bond.parity {
                Parity::Even => evens,
                Parity::Odd => odds,
            };
            if hit {
                a.bond_time[bond.left] += d;
            }
        }
        if block {
            match l.scope {
                Scope::Node(k) => a.node_block_time[k] += d,
                _ => a.node_block_time.iter_mut().for_each(|t| *t += d),
            }
        }
    }
    Ok(a)
}

struct ExecContext<'a> {
    model: &'a ChainModel,
    partition: Partition,
}

impl<'a> ExecContext<'a> {
    fn new(schedule: &Schedule, model: &'a ChainModel) -> Result<Self> {
        if schedule.meta.num_sites != model.num_sites() {
            return Err(Error::DimensionMismatch {
                expected: model.num_sites(),
                actual: schedule.meta.num_sites,
            });
        }
        let partition = Partition::new(model, schedule.meta.num_nodes)?;
        for l in &schedule.layers {
            let ok = match l.scope {
                Scope::Chain => true,
                Scope::Node(k) => k < partition.num_nodes(),
                Scope::Cut(c) => c < partition.cut_bonds().len(),
            };
            if !ok || (l.kind == LayerKind::CutBond) != matches!(l.scope, Scope::Cut(_)) {
                return Err(Error::param(format!("layer {l:?} does not fit the partition")));
            }
            if l.kind == LayerKind::Local1Q && model.site_term().is_none() {
                return Err(Error::param("field layer in a model without site terms"));
            }
        }
        Ok(ExecContext { model, partition })
    }

    fn scope_sites(&self, scope: Scope) -> std::ops::Range<usize> {
        match scope {
            Scope::Chain => 0..self.model.num_sites(),
            Scope::Node(k) => self.partition.node_sites(k),
            Scope::Cut(c) => {
                let b = self.partition.cut_bonds()[c];
                b.left..b.right() + 1
            }
        }
    }

    fn scope_mask(&self, scope: Scope) -> u64 {
        self.scope_sites(scope).fold(0, |m, s| m | 1 << s)
    }

    /// Bonds fully inside the scope; node scopes exclude cut bonds.
    fn scope_bonds(&self, scope: Scope) -> impl Iterator<Item = &crate::model::Bond> + '_ {
        let sites = self.scope_sites(scope);
        let node_scope = matches!(scope, Scope::Node(_));
        self.model.bonds().iter().filter(move |b| {
            sites.contains(&b.left)
                && sites.contains(&b.right())
                && !(node_scope && self.partition.is_cut(b))
        })
    }

    /// Expands blocks into primitive layers and folds a primitive into the
    /// previous layer touching the same sites when kind and scope agree.
    fn primitives(&self, layers: &[Layer]) -> Vec<Layer> {
        let mut out: Vec<(Layer, u64)> = Vec::with_capacity(layers.len() * 5);
        let mut push = |p: Layer| {
            let mask = self.scope_mask(p.scope);
            if p.kind != LayerKind::CutBond {
                if let Some((prev, _)) = out.iter_mut().rev().find(|(_, m)| m & mask != 0) {
                    if prev.kind == p.kind && prev.scope == p.scope {
                        prev.duration += p.duration;
                        return;
                    }
                }
            }
            out.push((p, mask));
        };
        for l in layers {
            if l.kind == LayerKind::LocalBlock {
                for p in symmetric_step(self.model, l.scope, l.duration) {
                    push(p);
                }
            } else {
                push(*l);
            }
        }
        out.into_iter().map(|(l, _)| l).collect()
    }

    fn gates(&self, layers: &[Layer], stats: &mut ExecStats) -> Vec<Gate> {
        let bond_term = self.model.bond_term();
        let mut gates = Vec::new();
        for p in self.primitives(layers) {
            match p.kind {
                LayerKind::Local1Q => {
                    let term = self.model.site_term().expect("validated in ExecContext::new");
                    let u = match term.exp(p.duration) {
                        crate::gates::GateMatrix::One(m) => m,
                        crate::gates::GateMatrix::Two(_) => unreachable!("site term is 1-site"),
                    };
                    for site in self.scope_sites(p.scope) {
                        gates.push(Gate::one(site, &u));
                    }
                }
                LayerKind::EvenBonds | LayerKind::OddBonds => {
                    let parity = if p.kind == LayerKind::EvenBonds { Parity::Even } else { Parity::Odd };
                    let u = two_site(bond_term.exp(p.duration));
                    for b in self.scope_bonds(p.scope).filter(|b| b.parity == parity) {
                        gates.push(Gate::two(b.left, b.right(), &u));
                    }
                }
                LayerKind::CutBond => {
                    let Scope::Cut(c) = p.scope else { unreachable!("validated") };
                    let b = self.partition.cut_bonds()[c];
                    gates.push(Gate::two(b.left, b.right(), &two_site(bond_term.exp(p.duration))));
                    stats.cut_gates += 1;
                }
                LayerKind::LocalBlock => unreachable!("expanded above"),
            }
        }
        stats.gates += gates.len();
        gates
    }
}

fn two_site(m: crate::gates::GateMatrix) -> nalgebra::Matrix4<crate::C64> {
    match m {
        crate::gates::GateMatrix::Two(u) => u,
        crate::gates::GateMatrix::One(_) => unreachable!("bond term is 2-site"),
    }
}

/// Gate counters accumulated during execution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub gates: usize,
    pub cut_gates: usize,
}

/// Steps a state through a schedule one checkpoint at a time.
pub struct Execution<'a> {
    schedule: &'a Schedule,
    ctx: ExecContext<'a>,
    next: usize,
    done_layers: usize,
    stats: ExecStats,
}

impl<'a> Execution<'a> {
    pub fn new(schedule: &'a Schedule, model: &'a ChainModel) -> Result<Self> {
        Ok(Execution {
            schedule,
            ctx: ExecContext::new(schedule, model)?,
            next: 0,
            done_layers: 0,
            stats: ExecStats::default(),
        })
    }

    /// Time of the checkpoint the next [`advance`](Self::advance) reaches.
    pub fn peek_time(&self) -> Option<f64> {
        self.schedule.checkpoints.get(self.next).map(|c| c.time)
    }

    pub fn stats(&self) -> ExecStats {
        self.stats
    }

    /// Runs the layers up to the next checkpoint and returns its time, or
    /// `None` (after flushing any trailing layers) when the schedule is done.
    pub fn advance(&mut self, state: &mut StateVector) -> Result<Option<f64>> {
        if state.num_sites() != self.ctx.model.num_sites() {
            return Err(Error::DimensionMismatch {
                expected: self.ctx.model.num_sites(),
                actual: state.num_sites(),
            });
        }
        let (end, time) = match self.schedule.checkpoints.get(self.next) {
            Some(cp) => (cp.after_layer, Some(cp.time)),
            None => (self.schedule.layers.len(), None),
        };
        if end > self.done_layers {
            let gates = self.ctx.gates(&self.schedule.layers[self.done_layers..end], &mut self.stats);
            state.apply_gates(&gates)?;
            self.done_layers = end;
        }
        if time.is_some() {
            self.next += 1;
        }
        Ok(time)
    }

    /// Advances to the checkpoint at `time` (within [`TIME_EPS`]); errors if
    /// the schedule has no such checkpoint ahead.
    pub fn advance_to(&mut self, state: &mut StateVector, time: f64) -> Result<()> {
        loop {
            match self.peek_time() {
                Some(t) if t < time - TIME_EPS => {
                    self.advance(state)?;
                }
                Some(t) if (t - time).abs() <= TIME_EPS => {
                    self.advance(state)?;
                    return Ok(());
                }
                _ => return Err(Error::param(format!("schedule has no checkpoint at t = {time}"))),
            }
        }
    }
}

/// Applies the whole schedule, calling `on_checkpoint(time, state)` at every
/// checkpoint (including `t = 0` when present).
pub fn execute(
    schedule: &Schedule,
    model: &ChainModel,
    state: &mut StateVector,
    mut on_checkpoint: impl FnMut(f64, &StateVector),
) -> Result<ExecStats> {
    let mut run = Execution::new(schedule, model)?;
    while let Some(t) = run.advance(state)? {
        on_checkpoint(t, state);
    }
    Ok(run.stats())
}
