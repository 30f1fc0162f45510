//! Kinetic Monte Carlo for the boundary-driven symmetric simple exclusion
//! process on sites `1..=N-1`, with reservoirs behind sites `1` and `N-1`.
//!
//! Rates carry the diffusive factor `N²`, so time is macroscopic:
//!
//! * bond `{x, x+1}`, `1 ≤ x ≤ N-2`, exchanges its occupations at rate `N²/2`
//!   when they differ;
//! * site `1` is filled at rate `N²α/2` and emptied at rate `N²(1-α)/2`;
//!   site `N-1` likewise with `β`.
//!
//! Bond `x` (for `x = 0..N`) joins site `x` to site `x+1`; bonds `0` and `N-1`
//! are the reservoir bonds. The integrated current `W[x]` goes up by one for
//! every particle crossing bond `x` to the right (a creation at site 1 for
//! `x = 0`, an exit into the right reservoir for `x = N-1`) and down by one
//! for every crossing to the left, so that
//! `η_t(x) − η_0(x) = W[x−1] − W[x]` at every interior site.
//!
//! # Random streams
//!
//! Replica `r` of a run with seed `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` switched to stream `r` with
//! [`rand_chacha::ChaCha8Rng::set_stream`]. Both steps are fixed by the
//! `rand_chacha` 0.3 API, so trajectories are reproducible across machines.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{FieldKind, Grid, GridFunction};
use crate::stats::{batch_covariance, batch_means, Estimate, MIN_BATCHES};

/// Default burn-in before stationary measurements, in macroscopic time.
pub const DEFAULT_BURN_IN: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeState {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    /// `eta[x - 1]` is the occupation of site `x`.
    pub eta: Vec<u8>,
}

impl LatticeState {
    pub fn new(n: usize, alpha: f64, beta: f64, eta: Vec<u8>) -> Result<Self> {
        check_reservoirs(n, alpha, beta)?;
        if eta.len() != n - 1 {
            return Err(Error::GridMismatch(format!(
                "lattice of size {n} has {} sites, got {} occupations",
                n - 1,
                eta.len()
            )));
        }
        if let Some(x) = eta.iter().position(|v| *v > 1) {
            return Err(invalid(format!("occupation at site {} is {}, expected 0 or 1", x + 1, eta[x])));
        }
        Ok(Self { n, alpha, beta, eta })
    }

    pub fn empty(n: usize, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(n, alpha, beta, vec![0; n.saturating_sub(1)])
    }

    pub fn full(n: usize, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(n, alpha, beta, vec![1; n.saturating_sub(1)])
    }

    /// Occupation of site `x ∈ 1..=N-1`.
    pub fn occupation(&self, x: usize) -> u8 {
        self.eta[x - 1]
    }

    pub fn particles(&self) -> usize {
        self.eta.iter().map(|v| *v as usize).sum()
    }
}

fn check_reservoirs(n: usize, alpha: f64, beta: f64) -> Result<()> {
    if n < 2 {
        return Err(invalid(format!("lattice size must be at least 2, got {n}")));
    }
    for (name, v) in [("alpha", alpha), ("beta", beta)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    Ok(())
}

/// Integrated bond currents and the elapsed (macroscopic) time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentCounters {
    /// `w[x]` is the net number of particles that crossed bond `{x, x+1}`.
    pub w: Vec<i64>,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Final macroscopic time.
    pub t_end: f64,
    pub seed: u64,
    pub n_replicas: usize,
    /// Macroscopic time between snapshots (and the batch length of
    /// stationary estimates).
    pub sample_interval: f64,
}

impl SimParams {
    pub fn new(n: usize, alpha: f64, beta: f64) -> Self {
        Self {
            n,
            alpha,
            beta,
            t_end: 1.0,
            seed: 0,
            n_replicas: 1,
            sample_interval: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_reservoirs(self.n, self.alpha, self.beta)?;
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(invalid(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.n_replicas == 0 {
            return Err(invalid("n_replicas must be at least 1"));
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return Err(invalid(format!(
                "sample_interval must be positive, got {}",
                self.sample_interval
            )));
        }
        if self.alpha > self.beta {
            warn!(
                "alpha = {} exceeds beta = {}; currents flow to the right",
                self.alpha, self.beta
            );
        }
        Ok(())
    }

    /// Snapshot times `0, Δ, 2Δ, …` up to `t_end`.
    pub fn sample_times(&self) -> Vec<f64> {
        let k = (self.t_end / self.sample_interval + 1e-9).floor() as usize;
        (0..=k).map(|i| i as f64 * self.sample_interval).collect()
    }
}

/// How the lattice is populated at time zero.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    State(LatticeState),
    /// Independent sites, site `x` occupied with probability `γ(x/N)`.
    Bernoulli(GridFunction),
    /// Independent sites with the stationary mean `α + (x/N)(β − α)`.
    Linear,
}

impl InitialCondition {
    fn realize(&self, params: &SimParams, rng: &mut ChaCha8Rng) -> Result<Vec<u8>> {
        let n = params.n;
        let draw = |rng: &mut ChaCha8Rng, p: f64| u8::from(rng.gen::<f64>() < p);
        match self {
            InitialCondition::State(s) => {
                if s.n != n {
                    return Err(Error::GridMismatch(format!("initial state has size {}, run has {n}", s.n)));
                }
                Ok(s.eta.clone())
            }
            InitialCondition::Bernoulli(gamma) => {
                if let Some(v) = gamma.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(invalid(format!("Bernoulli profile value {v} outside [0, 1]")));
                }
                Ok((1..n).map(|x| draw(rng, gamma.interpolate(x as f64 / n as f64))).collect())
            }
            InitialCondition::Linear => Ok((1..n)
                .map(|x| draw(rng, params.alpha + (x as f64 / n as f64) * (params.beta - params.alpha)))
                .collect()),
        }
    }
}

/// Binary tree of partial sums over channel rates.
#[derive(Debug, Clone)]
struct SumTree {
    size: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(len: usize) -> Self {
        let size = len.next_power_of_two();
        Self {
            size,
            nodes: vec![0.0; 2 * size],
        }
    }

    fn set(&mut self, i: usize, value: f64) {
        let mut k = i + self.size;
        self.nodes[k] = value;
        k /= 2;
        while k >= 1 {
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
            k /= 2;
        }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.size {
            let left = self.nodes[2 * k];
            if u < left || self.nodes[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                u -= left;
                k = 2 * k + 1;
            }
        }
        k - self.size
    }
}

/// Time integrals of occupations (and optionally pair products), updated
/// lazily when a site flips.
#[derive(Debug, Clone)]
struct Integrals {
    occ: Vec<f64>,
    occ_last: Vec<f64>,
    pairs: Option<(Vec<f64>, Vec<f64>)>,
}

impl Integrals {
    fn new(sites: usize, track_pairs: bool, t: f64) -> Self {
        Self {
            occ: vec![0.0; sites],
            occ_last: vec![t; sites],
            pairs: track_pairs.then(|| (vec![0.0; sites * sites], vec![t; sites * sites])),
        }
    }

    fn flush_site(&mut self, eta: &[u8], s: usize, t: f64) {
        self.occ[s] += eta[s] as f64 * (t - self.occ_last[s]);
        self.occ_last[s] = t;
        if let Some((sum, last)) = self.pairs.as_mut() {
            let m = eta.len();
            if eta[s] == 0 {
                // only the clocks move
                for y in 0..m {
                    let k = s.min(y) * m + s.max(y);
                    last[k] = t;
                }
                return;
            }
            for y in 0..m {
                let k = s.min(y) * m + s.max(y);
                sum[k] += eta[y] as f64 * (t - last[k]);
                last[k] = t;
            }
        }
    }

    /// Flush everything to time `t`, return the integrals and restart them.
    fn take(&mut self, eta: &[u8], t: f64) -> (Vec<f64>, Option<Vec<f64>>) {
        let m = eta.len();
        for s in 0..m {
            self.occ[s] += eta[s] as f64 * (t - self.occ_last[s]);
            self.occ_last[s] = t;
        }
        let occ = std::mem::replace(&mut self.occ, vec![0.0; m]);
        let pairs = self.pairs.as_mut().map(|(sum, last)| {
            for x in 0..m {
                for y in x..m {
                    let k = x * m + y;
                    sum[k] += (eta[x] * eta[y]) as f64 * (t - last[k]);
                    last[k] = t;
                }
            }
            std::mem::replace(sum, vec![0.0; m * m])
        });
        (occ, pairs)
    }
}

/// One replica of the exclusion process.
#[derive(Debug, Clone)]
pub struct Simulator {
    n: usize,
    alpha: f64,
    beta: f64,
    rate: f64,
    eta: Vec<u8>,
    eta0: Vec<u8>,
    w: Vec<i64>,
    time: f64,
    next_event: f64,
    tree: SumTree,
    rng: ChaCha8Rng,
    events: u64,
    integrals: Option<Integrals>,
}

impl Simulator {
    /// Build replica `replica` of `params` from `initial`.
    pub fn new(params: &SimParams, initial: &InitialCondition, replica: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = replica_rng(params.seed, replica);
        let eta = initial.realize(params, &mut rng)?;
        let n = params.n;
        let mut sim = Self {
            n,
            alpha: params.alpha,
            beta: params.beta,
            rate: 0.5 * (n * n) as f64,
            eta0: eta.clone(),
            eta,
            w: vec![0; n],
            time: 0.0,
            next_event: 0.0,
            tree: SumTree::new(n),
            rng,
            events: 0,
            integrals: None,
        };
        for c in 0..n {
            let r = sim.channel_rate(c);
            sim.tree.set(c, r);
        }
        sim.schedule();
        Ok(sim)
    }

    fn channel_rate(&self, c: usize) -> f64 {
        let n = self.n;
        // a single site when N = 2: both reservoirs act on it
        let left = |eta: u8, rho: f64| if eta == 0 { rho } else { 1.0 - rho };
        if c == 0 {
            self.rate * left(self.eta[0], self.alpha)
        } else if c == n - 1 {
            self.rate * left(self.eta[n - 2], self.beta)
        } else if self.eta[c - 1] != self.eta[c] {
            self.rate
        } else {
            0.0
        }
    }

    fn schedule(&mut self) {
        let total = self.tree.total();
        if total > 0.0 {
            let u: f64 = self.rng.gen();
            self.next_event = self.time - (1.0 - u).ln() / total;
        } else {
            self.next_event = f64::INFINITY;
        }
    }

    fn flush(&mut self, s: usize) {
        if let Some(integrals) = self.integrals.as_mut() {
            integrals.flush_site(&self.eta, s, self.time);
        }
    }

    fn refresh(&mut self, site: usize) {
        // channels touching site `site` (1-based): bonds site-1 and site
        for c in [site - 1, site] {
            let r = self.channel_rate(c);
            self.tree.set(c, r);
        }
    }

    fn fire(&mut self) {
        let n = self.n;
        let u = self.rng.gen::<f64>() * self.tree.total();
        let c = self.tree.find(u);
        self.events += 1;
        if c == 0 || c == n - 1 {
            let s = if c == 0 { 0 } else { n - 2 };
            self.flush(s);
            let filled = self.eta[s] == 0;
            self.eta[s] = u8::from(filled);
            // creation at site 1 and exit at site N-1 are rightward crossings
            let rightward = (c == 0) == filled;
            self.w[c] += if rightward { 1 } else { -1 };
            self.refresh(s + 1);
            self.check_conservation(s + 1);
        } else {
            let (a, b) = (c - 1, c);
            self.flush(a);
            self.flush(b);
            self.w[c] += if self.eta[a] == 1 { 1 } else { -1 };
            self.eta.swap(a, b);
            self.refresh(c);
            self.refresh(c + 1);
            self.check_conservation(c);
            self.check_conservation(c + 1);
        }
    }

    #[inline]
    fn check_conservation(&self, site: usize) {
        debug_assert_eq!(
            self.eta[site - 1] as i64 - self.eta0[site - 1] as i64,
            self.w[site - 1] - self.w[site],
            "conservation violated at site {site}"
        );
    }

    /// Run the chain up to time `t` (no-op if `t` is not ahead).
    pub fn advance_to(&mut self, t: f64) {
        while self.next_event <= t {
            self.time = self.next_event;
            self.fire();
            self.schedule();
        }
        if t > self.time {
            self.time = t;
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn state(&self) -> LatticeState {
        LatticeState {
            n: self.n,
            alpha: self.alpha,
            beta: self.beta,
            eta: self.eta.clone(),
        }
    }

    pub fn counters(&self) -> CurrentCounters {
        CurrentCounters {
            w: self.w.clone(),
            time: self.time,
        }
    }

    /// Start accumulating occupation time integrals from the current time.
    pub fn start_integrals(&mut self, track_pairs: bool) {
        self.integrals = Some(Integrals::new(self.n - 1, track_pairs, self.time));
    }

    /// Occupation (and pair) integrals since the last call, restarting them.
    pub fn take_integrals(&mut self) -> Option<(Vec<f64>, Option<Vec<f64>>)> {
        let t = self.time;
        let eta = &self.eta;
        self.integrals.as_mut().map(|i| i.take(eta, t))
    }
}

/// Random generator of replica `replica` for seed `seed`.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub state: LatticeState,
    pub counters: CurrentCounters,
}

pub type Trajectory = Vec<Snapshot>;

/// Run every replica and record snapshots at [`SimParams::sample_times`].
///
/// Replicas run concurrently; the result is in replica order.
pub fn simulate(params: &SimParams, initial: &InitialCondition) -> Result<Vec<Trajectory>> {
    params.validate()?;
    (0..params.n_replicas as u64)
        .into_par_iter()
        .map(|r| simulate_replica(params, initial, r))
        .collect()
}

/// Snapshots of a single replica.
pub fn simulate_replica(params: &SimParams, initial: &InitialCondition, replica: u64) -> Result<Trajectory> {
    let mut sim = Simulator::new(params, initial, replica)?;
    let mut out = Vec::new();
    for t in params.sample_times() {
        sim.advance_to(t);
        out.push(Snapshot {
            time: t,
            state: sim.state(),
            counters: sim.counters(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryOptions {
    pub burn_in: f64,
    /// Estimate two-point correlations (adds `O(N)` work per event).
    pub track_pairs: bool,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            burn_in: DEFAULT_BURN_IN,
            track_pairs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryStats {
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    /// `density[x - 1]` estimates the mean occupation of site `x`.
    pub density: Vec<Estimate>,
    /// `correlations[x - 1][y - 1]` estimates `E[η(x); η(y)]`.
    pub correlations: Option<Vec<Vec<Estimate>>>,
    /// `bond_current[x]` estimates `W[x] / (N t)`.
    pub bond_current: Vec<Estimate>,
    /// Bond-averaged `W / (N t)`.
    pub mean_current: Estimate,
    pub batches: usize,
    pub batch_length: f64,
    pub measured_time: f64,
}

impl StationaryStats {
    pub fn site_mean(&self, x: usize) -> Estimate {
        self.density[x - 1]
    }

    pub fn correlation(&self, x: usize, y: usize) -> Option<Estimate> {
        self.correlations.as_ref().map(|c| c[x - 1][y - 1])
    }

    /// `α + (x/N)(β − α)`.
    pub fn exact_density(&self, x: usize) -> f64 {
        exact_density(self.n, self.alpha, self.beta, x)
    }

    pub fn exact_correlation(&self, x: usize, y: usize) -> f64 {
        exact_correlation(self.n, self.alpha, self.beta, x, y)
    }
}

/// Stationary mean occupation of site `x`.
pub fn exact_density(n: usize, alpha: f64, beta: f64, x: usize) -> f64 {
    alpha + (x as f64 / n as f64) * (beta - alpha)
}

/// Stationary `E[η(x); η(y)]` for `x < y`, `−(β−α)²/(N−1) · (x/N)(1 − y/N)`.
pub fn exact_correlation(n: usize, alpha: f64, beta: f64, x: usize, y: usize) -> f64 {
    let (x, y) = (x.min(y), x.max(y));
    let nf = n as f64;
    if x == y {
        let r = exact_density(n, alpha, beta, x);
        // the diagonal carries the one-site variance on top
        return r * (1.0 - r) - (beta - alpha).powi(2) / (nf - 1.0) * (x as f64 / nf) * (1.0 - y as f64 / nf);
    }
    -(beta - alpha).powi(2) / (nf - 1.0) * (x as f64 / nf) * (1.0 - y as f64 / nf)
}

struct ReplicaBatches {
    occ: Vec<Vec<f64>>,
    pairs: Vec<Vec<f64>>,
    currents: Vec<Vec<f64>>,
}

/// Stationary statistics with the default options and burn-in `burn_in`.
pub fn estimate_stationary(params: &SimParams, burn_in: f64) -> Result<StationaryStats> {
    estimate_stationary_with(
        params,
        &StationaryOptions {
            burn_in,
            ..StationaryOptions::default()
        },
    )
}

/// Time averages along one long trajectory per replica, from `burn_in` to
/// `t_end`, cut into batches of length `sample_interval`; error bars by batch
/// means over the batches of all replicas.
pub fn estimate_stationary_with(params: &SimParams, opts: &StationaryOptions) -> Result<StationaryStats> {
    params.validate()?;
    if !(opts.burn_in >= 0.0 && opts.burn_in.is_finite()) {
        return Err(invalid(format!("burn_in must be nonnegative, got {}", opts.burn_in)));
    }
    let len = params.sample_interval;
    let per_replica = ((params.t_end - opts.burn_in) / len + 1e-9).floor().max(0.0) as usize;
    let total = per_replica * params.n_replicas;
    if total < MIN_BATCHES {
        return Err(Error::InsufficientSamples(format!(
            "{total} batches after burn-in; need at least {MIN_BATCHES} (lengthen t_end or shorten sample_interval)"
        )));
    }
    let n = params.n;
    let sites = n - 1;
    let replicas: Vec<ReplicaBatches> = (0..params.n_replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<ReplicaBatches> {
            let mut sim = Simulator::new(params, &InitialCondition::Linear, r)?;
            sim.advance_to(opts.burn_in);
            sim.start_integrals(opts.track_pairs);
            let mut out = ReplicaBatches {
                occ: Vec::with_capacity(per_replica),
                pairs: Vec::new(),
                currents: Vec::with_capacity(per_replica),
            };
            let mut w_prev = sim.w.clone();
            for b in 1..=per_replica {
                sim.advance_to(opts.burn_in + b as f64 * len);
                let (occ, pairs) = sim.take_integrals().expect("integrals started");
                out.occ.push(occ.iter().map(|v| v / len).collect());
                if let Some(p) = pairs {
                    out.pairs.push(p.iter().map(|v| v / len).collect());
                }
                out.currents
                    .push(sim.w.iter().zip(&w_prev).map(|(a, b)| (a - b) as f64 / (n as f64 * len)).collect());
                w_prev.clone_from(&sim.w);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let column = |f: &dyn Fn(&ReplicaBatches, usize) -> f64| -> Vec<f64> {
        replicas
            .iter()
            .flat_map(|r| (0..per_replica).map(move |b| f(r, b)))
            .collect()
    };
    let occ_series: Vec<Vec<f64>> = (0..sites).map(|s| column(&|r, b| r.occ[b][s])).collect();
    let density = occ_series.iter().map(|c| batch_means(c)).collect::<Result<Vec<_>>>()?;
    let correlations = if opts.track_pairs {
        let mut mat = vec![vec![Estimate { mean: 0.0, stderr: 0.0 }; sites]; sites];
        for x in 0..sites {
            for y in x..sites {
                let xy = column(&|r, b| r.pairs[b][x * sites + y]);
                let est = batch_covariance(&occ_series[x], &occ_series[y], &xy)?;
                mat[x][y] = est;
                mat[y][x] = est;
            }
        }
        Some(mat)
    } else {
        None
    };
    let bond_current = (0..n)
        .map(|x| batch_means(&column(&|r, b| r.currents[b][x])))
        .collect::<Result<Vec<_>>>()?;
    let mean_current = batch_means(&column(&|r, b| r.currents[b].iter().sum::<f64>() / n as f64))?;
    Ok(StationaryStats {
        n,
        alpha: params.alpha,
        beta: params.beta,
        density,
        correlations,
        bond_current,
        mean_current,
        batches: total,
        batch_length: len,
        measured_time: per_replica as f64 * len * params.n_replicas as f64,
    })
}

/// Binned empirical density and integrated current on `grid`.
///
/// Site `x` carries mass `1/N` at `x/N`; bond `x` carries `W[x]/N²` at `x/N`.
/// Both are collected into node bins of width `h` (`h/2` at the two ends)
/// and divided by the bin width, so that the trapezoid integral of the
/// density equals the total mass `(number of particles)/N` exactly.
pub fn empirical_observables(
    state: &LatticeState,
    counters: &CurrentCounters,
    grid: Grid,
) -> Result<(GridFunction, GridFunction)> {
    let n = state.n;
    if grid.cells() > n {
        return Err(Error::GridMismatch(format!(
            "macroscopic grid of {} cells is finer than the lattice (N = {n})",
            grid.cells()
        )));
    }
    if counters.w.len() != n {
        return Err(Error::GridMismatch(format!(
            "{} current counters for a lattice of size {n}",
            counters.w.len()
        )));
    }
    let m = grid.cells();
    let bin = |x: usize| ((x * m) as f64 / n as f64).round() as usize;
    let mut density = vec![0.0; m + 1];
    let mut current = vec![0.0; m + 1];
    let nf = n as f64;
    for x in 1..n {
        density[bin(x)] += state.eta[x - 1] as f64 / nf;
    }
    for x in 0..n {
        current[bin(x)] += counters.w[x] as f64 / (nf * nf);
    }
    for i in 0..=m {
        let width = grid.node_weight(i);
        density[i] /= width;
        current[i] /= width;
    }
    Ok((
        GridFunction::new(grid, FieldKind::Node, density)?,
        GridFunction::new(grid, FieldKind::Node, current)?,
    ))
}

/// `⟨π^N, F⟩ = N⁻¹ Σ_x F(x/N) η(x)`.
pub fn pair_density(state: &LatticeState, f: impl Fn(f64) -> f64) -> f64 {
    let n = state.n as f64;
    state
        .eta
        .iter()
        .enumerate()
        .map(|(i, e)| *e as f64 * f((i + 1) as f64 / n))
        .sum::<f64>()
        / n
}

/// `⟨W^N, F⟩ = N⁻² Σ_x F(x/N) W[x]`.
pub fn pair_current(counters: &CurrentCounters, f: impl Fn(f64) -> f64) -> f64 {
    let n = counters.w.len() as f64;
    counters
        .w
        .iter()
        .enumerate()
        .map(|(x, w)| *w as f64 * f(x as f64 / n))
        .sum::<f64>()
        / (n * n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlnReport {
    pub n: usize,
    pub replicas: usize,
    /// Replica average of `sup_t |⟨π^N_t, H⟩ − ⟨ρ_t, H⟩|`.
    pub discrepancy: f64,
    /// Standard error of the replica average.
    pub stderr: f64,
}

/// Compare `⟨π^N_t, H⟩` along simulated trajectories started from
/// Bernoulli(`gamma`) with `⟨ρ_t, H⟩` for the heat-equation solution `ρ`
/// started from `gamma`, at every snapshot time.
pub fn density_lln_check(
    params: &SimParams,
    gamma: &GridFunction,
    test_fn: impl Fn(f64) -> f64 + Sync,
    dt: f64,
) -> Result<LlnReport> {
    params.validate()?;
    let times = params.sample_times();
    let stride = ((params.sample_interval / dt).round() as usize).max(1);
    let step = params.sample_interval / stride as f64;
    let heat = crate::pde::solve_heat_strided(gamma, params.alpha, params.beta, times[times.len() - 1], step, stride)?;
    if heat.len() != times.len() {
        return Err(Error::GridMismatch("heat path and snapshots are not aligned".into()));
    }
    let targets: Vec<f64> = (0..heat.len()).map(|k| heat.frame(k).pair(&test_fn)).collect();
    let initial = InitialCondition::Bernoulli(gamma.clone());
    let sups: Vec<f64> = (0..params.n_replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let traj = simulate_replica(params, &initial, r)?;
            Ok(traj
                .iter()
                .zip(&targets)
                .map(|(s, target)| (pair_density(&s.state, &test_fn) - target).abs())
                .fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    let k = sups.len() as f64;
    let mean = sups.iter().sum::<f64>() / k;
    let var = if sups.len() > 1 {
        sups.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    Ok(LlnReport {
        n: params.n,
        replicas: params.n_replicas,
        discrepancy: mean,
        stderr: (var / k).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, alpha: f64, beta: f64) -> SimParams {
        SimParams {
            t_end: 1.0,
            sample_interval: 0.25,
            ..SimParams::new(n, alpha, beta)
        }
    }

    #[test]
    fn sum_tree_selection() {
        let mut t = SumTree::new(5);
        for (i, r) in [1.0, 0.0, 2.0, 0.0, 1.0].iter().enumerate() {
            t.set(i, *r);
        }
        assert_eq!(t.total(), 4.0);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(2.999), 2);
        assert_eq!(t.find(3.5), 4);
        // rounding past the total never lands on a dead channel
        assert_eq!(t.find(4.0), 4);
    }

    #[test]
    fn validation() {
        assert!(SimParams::new(1, 0.2, 0.8).validate().is_err());
        assert!(SimParams::new(10, -0.1, 0.8).validate().is_err());
        assert!(SimParams { t_end: 0.0, ..SimParams::new(10, 0.2, 0.8) }.validate().is_err());
        assert!(SimParams { n_replicas: 0, ..SimParams::new(10, 0.2, 0.8) }.validate().is_err());
        assert!(SimParams::new(10, 0.8, 0.2).validate().is_ok());
        assert!(LatticeState::new(4, 0.2, 0.8, vec![0, 2, 1]).is_err());
        assert!(LatticeState::new(4, 0.2, 0.8, vec![0, 1]).is_err());
    }

    #[test]
    fn conservation_after_every_event() {
        let p = params(12, 0.3, 0.9);
        let mut sim = Simulator::new(&p, &InitialCondition::Linear, 0).unwrap();
        let eta0 = sim.eta.clone();
        for _ in 0..5000 {
            let t = sim.next_event;
            sim.advance_to(t);
            for x in 1..12 {
                let d = sim.eta[x - 1] as i64 - eta0[x - 1] as i64;
                assert_eq!(d, sim.w[x - 1] - sim.w[x]);
            }
        }
        assert_eq!(sim.events(), 5000);
    }

    #[test]
    fn reproducible_and_stream_separated() {
        let p = SimParams { n_replicas: 2, ..params(16, 0.2, 0.8) };
        let a = simulate(&p, &InitialCondition::Linear).unwrap();
        let b = simulate(&p, &InitialCondition::Linear).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert_eq!(a[0].len(), 5);
        assert_eq!(a[0][4].time, 1.0);
    }

    #[test]
    fn empty_and_full_observables() {
        let g = Grid::new(10).unwrap();
        let c = CurrentCounters { w: vec![3; 10], time: 0.0 };
        let empty = LatticeState::empty(10, 0.2, 0.8).unwrap();
        let (d, cur) = empirical_observables(&empty, &c, g).unwrap();
        assert!(d.values.iter().all(|v| *v == 0.0));
        assert!((cur.integral() - 30.0 / 100.0).abs() < 1e-14);
        let full = LatticeState::full(10, 0.2, 0.8).unwrap();
        let (d, _) = empirical_observables(&full, &c, g).unwrap();
        assert!((d.integral() - 0.9).abs() < 1e-14);
        assert!(empirical_observables(&full, &c, Grid::new(20).unwrap()).is_err());
    }

    #[test]
    fn pairing_helpers() {
        let s = LatticeState::new(4, 0.2, 0.8, vec![1, 0, 1]).unwrap();
        assert!((pair_density(&s, |u| u) - (0.25 + 0.75) / 4.0).abs() < 1e-15);
        let c = CurrentCounters { w: vec![1, 2, 0, -4], time: 1.0 };
        assert!((pair_current(&c, |u| 1.0 + u) - (1.0 + 2.0 * 1.25 - 4.0 * 1.75) / 16.0).abs() < 1e-15);
        // the binned current at M = N pairs exactly with the trapezoid rule
        let g = Grid::new(4).unwrap();
        let (_, cur) = empirical_observables(&s, &c, g).unwrap();
        assert!((cur.pair(|u| 1.0 + u) - pair_current(&c, |u| 1.0 + u)).abs() < 1e-15);
    }

    #[test]
    fn two_site_equilibrium() {
        let p = SimParams {
            t_end: 60.0,
            sample_interval: 1.0,
            n_replicas: 2,
            ..SimParams::new(2, 0.5, 0.5)
        };
        let stats = estimate_stationary(&p, 1.0).unwrap();
        assert!(stats.site_mean(1).within(0.5, 3.0), "{:?}", stats.site_mean(1));
    }

    #[test]
    fn insufficient_batches() {
        let p = SimParams { t_end: 12.0, sample_interval: 1.0, ..SimParams::new(8, 0.2, 0.8) };
        assert!(matches!(estimate_stationary(&p, 10.0), Err(Error::InsufficientSamples(_))));
    }

    #[test]
    fn exact_formulas() {
        assert!((exact_correlation(10, 0.0, 1.0, 3, 6) + 0.3 * 0.4 / 9.0).abs() < 1e-15);
        assert!((exact_correlation(20, 0.2, 0.8, 5, 15) + 0.0011842).abs() < 1e-7);
        assert!((exact_density(50, 0.2, 0.8, 25) - 0.5).abs() < 1e-15);
    }
}
