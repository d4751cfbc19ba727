//! Single-step Markov kernels and their exact transition matrices.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::statespace::{EnergyModel, FiniteDistribution, LadderLevel, Neighborhood, StateSpace};

/// Tolerance used when a constructor checks that rows are stochastic.
pub const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub state: usize,
    pub accepted: bool,
}

pub trait MarkovKernel {
    fn state_count(&self) -> usize;

    fn step(&self, state: usize, rng: &mut dyn RngCore) -> StepOutcome;

    /// Analytic transition matrix, when the kernel supports it.
    fn exact_matrix(&self) -> Result<TransitionMatrix> {
        Err(Error::Capability(
            "kernel has no exact transition matrix".into(),
        ))
    }
}

/// Dense row-stochastic `n × n` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("transition matrix must be square".into()));
        }
        let m = Self {
            n,
            data: rows.concat(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks nonnegativity and unit row sums within [`ROW_TOLERANCE`].
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !(*v >= 0.0)) {
            return Err(Error::Numeric(format!(
                "entry ({}, {}) is {}",
                i / self.n,
                i % self.n,
                self.data[i]
            )));
        }
        let err = self.row_sum_error();
        if err > ROW_TOLERANCE {
            return Err(Error::Numeric(format!(
                "row sums deviate from 1 by {err:e}"
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.n + y]
    }

    #[inline]
    pub fn add(&mut self, x: usize, y: usize, v: f64) {
        self.data[x * self.n + y] += v;
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.n..(x + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_sum_error(&self) -> f64 {
        (0..self.n)
            .map(|x| (self.row(x).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Row vector times matrix.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (x, &vx) in v.iter().enumerate() {
            for (o, k) in out.iter_mut().zip(self.row(x)) {
                *o += vx * k;
            }
        }
        out
    }

    /// `max_y |(pi K)(y) - pi(y)|`.
    pub fn stationarity_error(&self, pi: &[f64]) -> f64 {
        self.left_mul(pi)
            .iter()
            .zip(pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest detailed-balance violation `(x, y, |pi(x)K(x,y) - pi(y)K(y,x)|)`.
    pub fn reversibility_violation(&self, pi: &[f64]) -> (usize, usize, f64) {
        let mut worst = (0, 0, 0.0);
        for x in 0..self.n {
            for y in (x + 1)..self.n {
                let v = (pi[x] * self.get(x, y) - pi[y] * self.get(y, x)).abs();
                if v > worst.2 {
                    worst = (x, y, v);
                }
            }
        }
        worst
    }

    /// `alpha * a + (1 - alpha) * b`, entrywise.
    pub fn convex_combination(alpha: f64, a: &Self, b: &Self) -> Result<Self> {
        if a.n != b.n {
            return Err(Error::Shape(format!(
                "cannot mix {}-state and {}-state kernels",
                a.n, b.n
            )));
        }
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
            .collect();
        Ok(Self { n: a.n, data })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Random-walk Metropolis step with a uniform proposal over a fixed-size
/// symmetric neighborhood. Out-of-range slots count as rejections.
pub fn rw_mh_step(
    state: usize,
    logdensity: impl Fn(usize) -> f64,
    neighborhood: &dyn Neighborhood,
    rng: &mut dyn RngCore,
) -> StepOutcome {
    let slot = rng.gen_range(0..neighborhood.size());
    let Some(proposal) = neighborhood.neighbor(state, slot) else {
        return StepOutcome {
            state,
            accepted: false,
        };
    };
    let log_ratio = logdensity(proposal) - logdensity(state);
    if log_ratio >= 0.0 || rng.gen::<f64>() < log_ratio.exp() {
        StepOutcome {
            state: proposal,
            accepted: true,
        }
    } else {
        StepOutcome {
            state,
            accepted: false,
        }
    }
}

/// Local random-walk MH on the model's own topology, targeting one ladder level.
#[derive(Debug, Clone)]
pub struct LocalMh<'a> {
    model: &'a EnergyModel,
    level: LadderLevel,
}

impl<'a> LocalMh<'a> {
    pub fn new(model: &'a EnergyModel, level: LadderLevel) -> Result<Self> {
        if model.space().size() == 0 {
            return Err(Error::config(
                "kernel.neighborhood",
                "neighborhood is empty",
            ));
        }
        Ok(Self { model, level })
    }

    fn logdensity(&self, state: usize) -> f64 {
        self.level
            .logdensity(self.model.energy(state).expect("state from own space"))
    }
}

impl MarkovKernel for LocalMh<'_> {
    fn state_count(&self) -> usize {
        self.model.state_count()
    }

    fn step(&self, state: usize, rng: &mut dyn RngCore) -> StepOutcome {
        rw_mh_step(state, |s| self.logdensity(s), self.model.space(), rng)
    }

    fn exact_matrix(&self) -> Result<TransitionMatrix> {
        self.model.require_enumerable()?;
        let logd: Vec<f64> = self
            .model
            .energy_vector()?
            .into_iter()
            .map(|e| self.level.logdensity(e))
            .collect();
        Ok(local_mh_matrix(&logd, self.model.space()))
    }
}

/// Exact matrix of [`rw_mh_step`] for a tabulated log-density.
pub fn local_mh_matrix(logd: &[f64], neighborhood: &dyn Neighborhood) -> TransitionMatrix {
    let n = logd.len();
    let slots = neighborhood.size();
    let mut k = TransitionMatrix::zeros(n);
    for x in 0..n {
        let mut moved = 0.0;
        for slot in 0..slots {
            if let Some(y) = neighborhood.neighbor(x, slot) {
                let p = (logd[y] - logd[x]).min(0.0).exp() / slots as f64;
                k.add(x, y, p);
                moved += p;
            }
        }
        k.add(x, x, 1.0 - moved);
    }
    k
}

/// Metropolized independence sampler: `y ~ q`, accept with
/// `min(1, w(y) / w(x))` where `w = pi / q`.
#[derive(Debug, Clone)]
pub struct Mis {
    log_target: Vec<f64>,
    proposal: FiniteDistribution,
    log_weight: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl Mis {
    /// `log_target` may be unnormalized. `proposal` must be dense over the
    /// same states with full support.
    pub fn new(log_target: Vec<f64>, proposal: FiniteDistribution) -> Result<Self> {
        if proposal.len() != log_target.len() || !proposal.is_dense() {
            return Err(Error::Shape(format!(
                "proposal must cover all {} states in order",
                log_target.len()
            )));
        }
        for (s, q) in proposal.iter() {
            if q == 0.0 && log_target[s] > f64::NEG_INFINITY {
                return Err(Error::Support { state: s });
            }
        }
        let log_weight = log_target
            .iter()
            .zip(proposal.probs())
            .map(|(lp, q)| lp - q.ln())
            .collect();
        let sampler =
            WeightedIndex::new(proposal.probs()).map_err(|e| Error::Numeric(e.to_string()))?;
        Ok(Self {
            log_target,
            proposal,
            log_weight,
            sampler,
        })
    }

    pub fn from_distributions(
        target: &FiniteDistribution,
        proposal: FiniteDistribution,
    ) -> Result<Self> {
        if !target.is_dense() {
            return Err(Error::Shape("target must be dense".into()));
        }
        Self::new(target.probs().iter().map(|p| p.ln()).collect(), proposal)
    }

    pub fn proposal(&self) -> &FiniteDistribution {
        &self.proposal
    }

    pub fn log_target(&self) -> &[f64] {
        &self.log_target
    }
}

impl MarkovKernel for Mis {
    fn state_count(&self) -> usize {
        self.log_target.len()
    }

    fn step(&self, state: usize, rng: &mut dyn RngCore) -> StepOutcome {
        let y = self.sampler.sample(rng);
        let log_ratio = self.log_weight[y] - self.log_weight[state];
        if log_ratio >= 0.0 || rng.gen::<f64>() < log_ratio.exp() {
            StepOutcome {
                state: y,
                accepted: true,
            }
        } else {
            StepOutcome {
                state,
                accepted: false,
            }
        }
    }

    fn exact_matrix(&self) -> Result<TransitionMatrix> {
        let n = self.state_count();
        let q = self.proposal.probs();
        let mut k = TransitionMatrix::zeros(n);
        for x in 0..n {
            let mut moved = 0.0;
            for y in (0..n).filter(|&y| y != x) {
                let p = q[y] * (self.log_weight[y] - self.log_weight[x]).min(0.0).exp();
                k.add(x, y, p);
                moved += p;
            }
            k.add(x, x, 1.0 - moved);
        }
        Ok(k)
    }
}

/// With probability `alpha` take a `local` step, otherwise a `jump` step.
#[derive(Debug, Clone)]
pub struct Mixture<A, B> {
    alpha: f64,
    local: A,
    jump: B,
}

impl<A: MarkovKernel, B: MarkovKernel> Mixture<A, B> {
    pub fn new(alpha: f64, local: A, jump: B) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(
                "alpha",
                format!("mixture weight {alpha} is outside [0, 1]"),
            ));
        }
        if local.state_count() != jump.state_count() {
            return Err(Error::Shape(
                "mixture components act on different spaces".into(),
            ));
        }
        Ok(Self { alpha, local, jump })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl<A: MarkovKernel, B: MarkovKernel> MarkovKernel for Mixture<A, B> {
    fn state_count(&self) -> usize {
        self.local.state_count()
    }

    fn step(&self, state: usize, rng: &mut dyn RngCore) -> StepOutcome {
        if rng.gen::<f64>() < self.alpha {
            self.local.step(state, rng)
        } else {
            self.jump.step(state, rng)
        }
    }

    fn exact_matrix(&self) -> Result<TransitionMatrix> {
        TransitionMatrix::convex_combination(
            self.alpha,
            &self.local.exact_matrix()?,
            &self.jump.exact_matrix()?,
        )
    }
}

/// The lazy kernel that never moves.
#[derive(Debug, Clone, Copy)]
pub struct Identity {
    pub n: usize,
}

impl MarkovKernel for Identity {
    fn state_count(&self) -> usize {
        self.n
    }

    fn step(&self, state: usize, _rng: &mut dyn RngCore) -> StepOutcome {
        StepOutcome {
            state,
            accepted: true,
        }
    }

    fn exact_matrix(&self) -> Result<TransitionMatrix> {
        Ok(TransitionMatrix::identity(self.n))
    }
}

/// Random-scan Gibbs step on a coordinate vector. `conditional(coords, i)`
/// returns nonnegative weights over the values of coordinate `i`; the chosen
/// coordinate is resampled in place and returned.
pub fn gibbs_conditional_step<F>(
    coords: &mut [usize],
    mut conditional: F,
    rng: &mut dyn RngCore,
) -> Result<usize>
where
    F: FnMut(&[usize], usize) -> Vec<f64>,
{
    let i = rng.gen_range(0..coords.len());
    let weights = conditional(coords, i);
    coords[i] = sample_weights(&weights, rng)?;
    Ok(i)
}

/// Draw an index proportional to nonnegative weights.
pub(crate) fn sample_weights(weights: &[f64], rng: &mut dyn RngCore) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Numeric(format!(
            "conditional weights {weights:?} cannot be normalized"
        )));
    }
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return Ok(i);
        }
        u -= w;
    }
    // u landed in the rounding slack; return the last positive weight
    Ok(weights
        .iter()
        .rposition(|w| *w > 0.0)
        .expect("positive total"))
}

/// Random-scan single-site Gibbs on a Potts lattice model at one ladder level.
#[derive(Debug, Clone)]
pub struct LatticeGibbs<'a> {
    model: &'a EnergyModel,
    level: LadderLevel,
}

impl<'a> LatticeGibbs<'a> {
    pub fn new(model: &'a EnergyModel, level: LadderLevel) -> Result<Self> {
        if !matches!(model.space(), StateSpace::Potts(_)) {
            return Err(Error::Capability(
                "site Gibbs needs a lattice labeling space".into(),
            ));
        }
        Ok(Self { model, level })
    }

    fn lattice(&self) -> crate::statespace::PottsLattice {
        match self.model.space() {
            StateSpace::Potts(lat) => *lat,
            _ => unreachable!(),
        }
    }

    /// Normalized full conditional of `site` given the rest of `state`.
    fn conditional(&self, state: usize, site: usize) -> Vec<f64> {
        let lat = self.lattice();
        let logw: Vec<f64> = (0..lat.labels)
            .map(|l| {
                let s = lat.with_label(state, site, l);
                self.level
                    .logdensity(self.model.energy(s).expect("in space"))
            })
            .collect();
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }
}

impl MarkovKernel for LatticeGibbs<'_> {
    fn state_count(&self) -> usize {
        self.model.state_count()
    }

    fn step(&self, state: usize, rng: &mut dyn RngCore) -> StepOutcome {
        let lat = self.lattice();
        let mut coords = lat.decode(state);
        gibbs_conditional_step(&mut coords, |c, i| self.conditional(lat.encode(c), i), rng)
            .expect("conditional of a finite energy is normalizable");
        let next = lat.encode(&coords);
        StepOutcome {
            state: next,
            accepted: true,
        }
    }

    fn exact_matrix(&self) -> Result<TransitionMatrix> {
        self.model.require_enumerable()?;
        let lat = self.lattice();
        let n = self.model.state_count();
        let sites = lat.sites() as f64;
        let mut k = TransitionMatrix::zeros(n);
        for x in 0..n {
            for site in 0..lat.sites() {
                for (l, p) in self.conditional(x, site).into_iter().enumerate() {
                    k.add(x, lat.with_label(x, site, l), p / sites);
                }
            }
        }
        Ok(k)
    }
}

/// Empirical transition matrix from `steps` simulated steps out of every state.
pub fn empirical_matrix(
    kernel: &dyn MarkovKernel,
    steps: usize,
    rng: &mut dyn RngCore,
) -> TransitionMatrix {
    let n = kernel.state_count();
    let mut k = TransitionMatrix::zeros(n);
    for x in 0..n {
        for _ in 0..steps {
            let y = kernel.step(x, rng).state;
            k.add(x, y, 1.0 / steps as f64);
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use crate::statespace::{enumerate_distribution, DEFAULT_ENUMERATION_CAP};

    fn mis_example() -> Mis {
        let pi = FiniteDistribution::dense(vec![0.75, 0.25]).unwrap();
        Mis::from_distributions(&pi, FiniteDistribution::uniform(2).unwrap()).unwrap()
    }

    #[test]
    fn local_mh_boundary_rejection() {
        let m = EnergyModel::table_energies(vec![0.0; 3]).unwrap();
        let k = LocalMh::new(&m, LadderLevel::target())
            .unwrap()
            .exact_matrix()
            .unwrap();
        assert_eq!(k.get(0, 1), 0.5);
        assert_eq!(k.get(0, 0), 0.5);
        assert_eq!(k.get(1, 0), 0.5);
        assert_eq!(k.get(1, 1), 0.0);
    }

    #[test]
    fn uphill_density_always_accepted() {
        let m = EnergyModel::table_energies(vec![2.0, 1.0]).unwrap();
        let kernel = LocalMh::new(&m, LadderLevel::target()).unwrap();
        let mut rng = stream(3, Domain::Data, 0);
        for _ in 0..200 {
            let out = kernel.step(0, &mut rng);
            // slot 0 is out of range, slot 1 goes to the denser state
            assert!(out.state == 1 || !out.accepted);
            if out.state == 1 {
                assert!(out.accepted);
            }
        }
        assert_eq!(kernel.exact_matrix().unwrap().get(0, 1), 0.5);
    }

    #[test]
    fn double_well_local_is_stationary() {
        let m =
            EnergyModel::double_well_grid(41, (-2.0, 2.0), 1.0, DEFAULT_ENUMERATION_CAP).unwrap();
        let pi = enumerate_distribution(&m, &LadderLevel::target()).unwrap();
        let k = LocalMh::new(&m, LadderLevel::target())
            .unwrap()
            .exact_matrix()
            .unwrap();
        assert!(k.row_sum_error() <= 1e-12);
        assert!(k.stationarity_error(pi.probs()) <= 1e-12);
        assert!(k.reversibility_violation(pi.probs()).2 <= 1e-12);
    }

    #[test]
    fn mis_two_state_matrix() {
        // direct evaluation: K(0,1) = q(1) min(1, w1/w0) = 0.5 * (0.5/1.5)
        let k = mis_example().exact_matrix().unwrap();
        let expected = [[5.0 / 6.0, 1.0 / 6.0], [0.5, 0.5]];
        for x in 0..2 {
            for y in 0..2 {
                assert!((k.get(x, y) - expected[x][y]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn mis_with_perfect_proposal_is_independent_sampling() {
        let pi = FiniteDistribution::dense(vec![0.2, 0.5, 0.3]).unwrap();
        let k = Mis::from_distributions(&pi, pi.clone())
            .unwrap()
            .exact_matrix()
            .unwrap();
        for x in 0..3 {
            for y in 0..3 {
                assert!((k.get(x, y) - pi.probs()[y]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn mis_support_error() {
        let q = FiniteDistribution::dense(vec![1.0, 0.0]).unwrap();
        assert_eq!(
            Mis::new(vec![0.0, 0.0], q).unwrap_err(),
            Error::Support { state: 1 }
        );
    }

    #[test]
    fn mis_self_proposal_keeps_state() {
        let q = FiniteDistribution::dense(vec![1.0]).unwrap();
        let mis = Mis::new(vec![0.0], q).unwrap();
        let mut rng = stream(1, Domain::Data, 0);
        assert_eq!(mis.step(0, &mut rng).state, 0);
    }

    #[test]
    fn mixture_degenerate_and_half() {
        let mis = mis_example();
        let id = Identity { n: 2 };
        let k_mis = mis.exact_matrix().unwrap();
        let one = Mixture::new(1.0, id, mis.clone())
            .unwrap()
            .exact_matrix()
            .unwrap();
        assert_eq!(one, TransitionMatrix::identity(2));
        let zero = Mixture::new(0.0, id, mis.clone())
            .unwrap()
            .exact_matrix()
            .unwrap();
        assert_eq!(zero, k_mis);
        let half = Mixture::new(0.5, id, mis.clone())
            .unwrap()
            .exact_matrix()
            .unwrap();
        let expected = [[0.5 + 5.0 / 12.0, 1.0 / 12.0], [0.25, 0.75]];
        for x in 0..2 {
            for y in 0..2 {
                assert!((half.get(x, y) - expected[x][y]).abs() <= 1e-15);
            }
        }
        assert!(matches!(
            Mixture::new(1.5, id, mis),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn gibbs_generic_examples() {
        let mut rng = stream(9, Domain::Data, 0);
        let mut counts = [0usize; 3];
        let mut coords = vec![0usize];
        for _ in 0..30_000 {
            let i =
                gibbs_conditional_step(&mut coords, |_, _| vec![1.0, 1.0, 1.0], &mut rng).unwrap();
            assert_eq!(i, 0);
            counts[coords[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.02);
        }
        let err = gibbs_conditional_step(&mut coords, |_, _| vec![0.0, 0.0], &mut rng);
        assert!(matches!(err, Err(Error::Numeric(_))));
    }

    #[test]
    fn lattice_gibbs_at_zero_coupling_is_uniform() {
        let m = EnergyModel::potts_grid(2, 2, 2, 0.0, DEFAULT_ENUMERATION_CAP).unwrap();
        let g = LatticeGibbs::new(&m, LadderLevel::target()).unwrap();
        for x in 0..16 {
            for site in 0..4 {
                assert_eq!(g.conditional(x, site), vec![0.5, 0.5]);
            }
        }
    }

    #[test]
    fn lattice_gibbs_exact() {
        let m = EnergyModel::potts_grid(2, 2, 3, 0.7, DEFAULT_ENUMERATION_CAP).unwrap();
        let pi = enumerate_distribution(&m, &LadderLevel::target()).unwrap();
        let k = LatticeGibbs::new(&m, LadderLevel::target())
            .unwrap()
            .exact_matrix()
            .unwrap();
        assert!(k.row_sum_error() <= 1e-12);
        assert!(k.stationarity_error(pi.probs()) <= 1e-12);
        assert!(k.reversibility_violation(pi.probs()).2 <= 1e-12);
    }

    #[test]
    fn exact_matrix_matches_simulation() {
        // 10^6 steps split over the rows; each entry within 3 binomial standard errors
        let m = EnergyModel::table(&[1.0, 3.0, 0.5, 2.0]).unwrap();
        let pi = enumerate_distribution(&m, &LadderLevel::target()).unwrap();
        let q = FiniteDistribution::dense(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let kernel = Mixture::new(
            0.4,
            LocalMh::new(&m, LadderLevel::target()).unwrap(),
            Mis::from_distributions(&pi, q).unwrap(),
        )
        .unwrap();
        let exact = kernel.exact_matrix().unwrap();
        let steps = 250_000;
        let mut rng = stream(11, Domain::Data, 0);
        let emp = empirical_matrix(&kernel, steps, &mut rng);
        for x in 0..4 {
            for y in 0..4 {
                let p = exact.get(x, y);
                let se = (p * (1.0 - p) / steps as f64).sqrt();
                assert!(
                    (emp.get(x, y) - p).abs() <= 3.0 * se + 1e-12,
                    "({x},{y}) {} vs {p}",
                    emp.get(x, y)
                );
            }
        }
    }
}
