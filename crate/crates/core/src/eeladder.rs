//! Equi-energy ladders: ring ledgers of recorded states, the jump step in
//! restricted and unrestricted modes, and the parallel and serial schedules.
//!
//! Level `i` jumps into the ledger filled by level `i + 1`. A proposal `y`
//! drawn from that ledger is accepted with
//!
//! ```text
//! min(1, d_i(y) d_{i+1}(x) / (d_i(x) d_{i+1}(y)))
//! ```
//!
//! where `d_i = exp(level_logdensity)`. When the ring of the current state is
//! empty the step falls back to a local random-walk move.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::kernels::{
    local_mh_matrix, rw_mh_step, LocalMh, MarkovKernel, StepOutcome, TransitionMatrix,
};
use crate::rng::{self, Domain};
use crate::statespace::{
    enumerate_distribution, truncate_to_ring, EnergyModel, Ladder, LadderLevel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpMode {
    /// Draw only from the ring that contains the current energy.
    Restricted,
    /// Draw from every recorded state.
    Unrestricted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Parallel,
    Serial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveType {
    Local,
    Jump,
    JumpFallback,
}

impl MoveType {
    pub fn as_str(self) -> &'static str {
        match self {
            MoveType::Local => "local",
            MoveType::Jump => "jump",
            MoveType::JumpFallback => "jump_fallback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub state: usize,
    pub energy: f64,
}

/// Append-only store of recorded states, grouped into energy rings
/// `[B_j, B_{j+1})` with `B_0 = -inf` and `B_K = +inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct RingLedger {
    level: usize,
    boundaries: Vec<f64>,
    rings: Vec<Vec<Record>>,
    /// Insertion order across rings, for unrestricted draws.
    order: Vec<(usize, usize)>,
    max_records: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Draw {
    State(Record),
    EmptyRing,
}

impl RingLedger {
    pub fn new(level: usize, boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.iter().any(|b| !b.is_finite()) {
            return Err(Error::config(
                "ladder.ring_boundaries",
                "boundaries must be finite",
            ));
        }
        if boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config(
                "ladder.ring_boundaries",
                "boundaries must be strictly increasing",
            ));
        }
        let rings = vec![Vec::new(); boundaries.len() + 1];
        Ok(Self {
            level,
            boundaries,
            rings,
            order: Vec::new(),
            max_records: usize::MAX,
        })
    }

    pub fn with_max_records(mut self, max_records: usize) -> Self {
        self.max_records = max_records;
        self
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn ring_count(&self) -> usize {
        self.rings.len()
    }

    pub fn ring(&self, j: usize) -> &[Record] {
        &self.rings[j]
    }

    pub fn total(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// The unique `j` with `energy` in `[B_j, B_{j+1})`.
    pub fn ring_index(&self, energy: f64) -> usize {
        self.boundaries.partition_point(|&b| b <= energy)
    }

    /// Energy interval `[lo, hi)` of ring `j`.
    pub fn ring_bounds(&self, j: usize) -> (f64, f64) {
        let lo = if j == 0 {
            f64::NEG_INFINITY
        } else {
            self.boundaries[j - 1]
        };
        let hi = self.boundaries.get(j).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }

    /// Appends a record; returns false once the record cap is reached.
    pub fn record(&mut self, state: usize, energy: f64) -> bool {
        if self.total() >= self.max_records {
            return false;
        }
        let j = self.ring_index(energy);
        self.order.push((j, self.rings[j].len()));
        self.rings[j].push(Record { state, energy });
        true
    }

    /// Uniform draw from the current ring (restricted) or from all records
    /// (unrestricted). An empty pool consumes no randomness.
    pub fn draw(&self, mode: JumpMode, current_ring: usize, rng: &mut dyn RngCore) -> Draw {
        match mode {
            JumpMode::Restricted => {
                let ring = &self.rings[current_ring];
                if ring.is_empty() {
                    Draw::EmptyRing
                } else {
                    Draw::State(ring[rng.gen_range(0..ring.len())])
                }
            }
            JumpMode::Unrestricted => {
                if self.order.is_empty() {
                    Draw::EmptyRing
                } else {
                    let (j, k) = self.order[rng.gen_range(0..self.order.len())];
                    Draw::State(self.rings[j][k])
                }
            }
        }
    }

    pub fn records(&self) -> impl Iterator<Item = Record> + '_ {
        self.order.iter().map(|&(j, k)| self.rings[j][k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpOutcome {
    pub state: usize,
    pub energy: f64,
    pub accepted: bool,
    pub move_type: MoveType,
}

/// Log acceptance ratio of an equi-energy jump from energy `hx` to `hy`.
#[inline]
pub fn ee_log_ratio(lower: &LadderLevel, upper: &LadderLevel, hx: f64, hy: f64) -> f64 {
    lower.logdensity(hy) + upper.logdensity(hx) - lower.logdensity(hx) - upper.logdensity(hy)
}

fn local_step(
    model: &EnergyModel,
    level: &LadderLevel,
    state: usize,
    rng: &mut dyn RngCore,
) -> StepOutcome {
    rw_mh_step(
        state,
        |s| level.logdensity(model.energy(s).expect("state from own space")),
        model.space(),
        rng,
    )
}

/// One equi-energy jump attempt for the chain at `lower`, reading the ledger
/// recorded by `upper`.
#[allow(clippy::too_many_arguments)]
pub fn ee_jump_step(
    model: &EnergyModel,
    lower: &LadderLevel,
    upper: &LadderLevel,
    ledger: &RingLedger,
    mode: JumpMode,
    state: usize,
    energy: f64,
    rng: &mut dyn RngCore,
) -> JumpOutcome {
    match ledger.draw(mode, ledger.ring_index(energy), rng) {
        Draw::EmptyRing => {
            let out = local_step(model, lower, state, rng);
            let energy = if out.state == state {
                energy
            } else {
                model.energy(out.state).expect("in space")
            };
            JumpOutcome {
                state: out.state,
                energy,
                accepted: out.accepted,
                move_type: MoveType::JumpFallback,
            }
        }
        Draw::State(y) => {
            let log_ratio = ee_log_ratio(lower, upper, energy, y.energy);
            if log_ratio >= 0.0 || rng.gen::<f64>() < log_ratio.exp() {
                JumpOutcome {
                    state: y.state,
                    energy: y.energy,
                    accepted: true,
                    move_type: MoveType::Jump,
                }
            } else {
                JumpOutcome {
                    state,
                    energy,
                    accepted: false,
                    move_type: MoveType::Jump,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderConfig {
    pub ladder: Ladder,
    /// Ring boundaries; `None` uses the finite truncation energies of the ladder.
    pub ring_boundaries: Option<Vec<f64>>,
    pub burn_in: u64,
    pub p_jump: f64,
    pub jump_mode: JumpMode,
    pub schedule: Schedule,
    pub steps_per_level: u64,
    pub macro_steps: u64,
    pub max_records: usize,
    pub initial_state: usize,
}

impl LadderConfig {
    pub fn new(ladder: Ladder) -> Self {
        Self {
            ladder,
            ring_boundaries: None,
            burn_in: 0,
            p_jump: 0.1,
            jump_mode: JumpMode::Restricted,
            schedule: Schedule::Parallel,
            steps_per_level: 10_000,
            macro_steps: 10_000,
            max_records: usize::MAX,
            initial_state: 0,
        }
    }

    pub fn boundaries(&self) -> Vec<f64> {
        self.ring_boundaries
            .clone()
            .unwrap_or_else(|| self.ladder.truncation_boundaries())
    }

    pub fn validate(&self, model: &EnergyModel) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_jump) {
            return Err(Error::config("ladder.p_jump", "must lie in [0, 1]"));
        }
        if self.initial_state >= model.state_count() {
            return Err(Error::config(
                "ladder.initial_state",
                "state is outside the model's space",
            ));
        }
        RingLedger::new(0, self.boundaries())?;
        Ok(())
    }

    fn ledgers(&self) -> Result<Vec<RingLedger>> {
        (0..self.ladder.len())
            .map(|i| Ok(RingLedger::new(i, self.boundaries())?.with_max_records(self.max_records)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub level: usize,
    pub state: usize,
    pub energy: f64,
    pub ring: usize,
    pub move_type: MoveType,
    pub accepted: bool,
}

/// Per-level traces, one row per transition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceSet {
    pub levels: Vec<Vec<TraceRow>>,
}

impl TraceSet {
    /// Empirical distribution of the visited states at `level`, skipping the
    /// first `skip` rows.
    pub fn occupancy(&self, level: usize, states: usize, skip: usize) -> Vec<f64> {
        let rows = &self.levels[level];
        let mut counts = vec![0.0; states];
        let kept = rows.len().saturating_sub(skip);
        for r in rows.iter().skip(skip) {
            counts[r.state] += 1.0;
        }
        if kept > 0 {
            counts.iter_mut().for_each(|c| *c /= kept as f64);
        }
        counts
    }

    /// Rows of all levels in `(level, step)` order.
    pub fn rows(&self) -> impl Iterator<Item = &TraceRow> {
        self.levels.iter().flatten()
    }
}

#[derive(Debug, Clone)]
pub struct LadderRun {
    pub traces: TraceSet,
    pub ledgers: Vec<RingLedger>,
}

/// Per-level chain state with its energy cache and own random stream.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub states: Vec<usize>,
    pub energies: Vec<f64>,
    pub rngs: Vec<rng::Rng>,
    pub steps: Vec<u64>,
}

impl ChainState {
    pub fn new(model: &EnergyModel, levels: usize, initial: usize, seed: u64) -> Result<Self> {
        let e = model.energy(initial)?;
        Ok(Self {
            states: vec![initial; levels],
            energies: vec![e; levels],
            rngs: (0..levels)
                .map(|i| rng::stream(seed, Domain::Level, i as u32))
                .collect(),
            steps: vec![0; levels],
        })
    }
}

/// Advance level `i` by one transition; `ledger` is the ledger of level
/// `i + 1` (absent for the top level).
fn advance(
    model: &EnergyModel,
    config: &LadderConfig,
    chain: &mut ChainState,
    i: usize,
    ledger: Option<&RingLedger>,
    boundaries_ledger: &RingLedger,
) -> TraceRow {
    let levels = config.ladder.levels();
    let (state, energy) = (chain.states[i], chain.energies[i]);
    let rng = &mut chain.rngs[i];
    let out = match ledger {
        Some(upper_ledger) if rng.gen::<f64>() < config.p_jump => ee_jump_step(
            model,
            &levels[i],
            &levels[i + 1],
            upper_ledger,
            config.jump_mode,
            state,
            energy,
            rng,
        ),
        _ => {
            let o = local_step(model, &levels[i], state, rng);
            let e = if o.state == state {
                energy
            } else {
                model.energy(o.state).expect("in space")
            };
            JumpOutcome {
                state: o.state,
                energy: e,
                accepted: o.accepted,
                move_type: MoveType::Local,
            }
        }
    };
    chain.states[i] = out.state;
    chain.energies[i] = out.energy;
    let step = chain.steps[i];
    chain.steps[i] += 1;
    TraceRow {
        step,
        level: i,
        state: out.state,
        energy: out.energy,
        ring: boundaries_ledger.ring_index(out.energy),
        move_type: out.move_type,
        accepted: out.accepted,
    }
}

/// All levels advance together: each macro step updates levels top-down and
/// post-burn-in states of level `i + 1` are recorded before level `i` moves.
pub fn run_parallel(config: &LadderConfig, model: &EnergyModel, seed: u64) -> Result<LadderRun> {
    config.validate(model)?;
    let k = config.ladder.len();
    let mut chain = ChainState::new(model, k, config.initial_state, seed)?;
    let mut ledgers = config.ledgers()?;
    let mut traces = TraceSet {
        levels: vec![Vec::with_capacity(config.macro_steps as usize); k],
    };
    for t in 0..config.macro_steps {
        for i in (0..k).rev() {
            let upper = (i + 1 < k).then(|| &ledgers[i + 1]);
            let row = advance(model, config, &mut chain, i, upper, &ledgers[i]);
            if i > 0 && t >= config.burn_in {
                ledgers[i].record(row.state, row.energy);
            }
            traces.levels[i].push(row);
        }
    }
    Ok(LadderRun { traces, ledgers })
}

/// Levels run one at a time from the top: level `i + 1` runs to completion
/// and its ledger is frozen before level `i` starts.
pub fn run_serial(config: &LadderConfig, model: &EnergyModel, seed: u64) -> Result<LadderRun> {
    config.validate(model)?;
    let k = config.ladder.len();
    let mut chain = ChainState::new(model, k, config.initial_state, seed)?;
    let mut ledgers = config.ledgers()?;
    let mut traces = TraceSet {
        levels: vec![Vec::new(); k],
    };
    for i in (0..k).rev() {
        let (below, above) = ledgers.split_at_mut(i + 1);
        let own = &mut below[i];
        let frozen = above.first();
        let rows = &mut traces.levels[i];
        rows.reserve(config.steps_per_level as usize);
        for t in 0..config.steps_per_level {
            let row = advance(model, config, &mut chain, i, frozen, own);
            if i > 0 && t >= config.burn_in {
                own.record(row.state, row.energy);
            }
            rows.push(row);
        }
    }
    Ok(LadderRun { traces, ledgers })
}

pub fn run(config: &LadderConfig, model: &EnergyModel, seed: u64) -> Result<LadderRun> {
    match config.schedule {
        Schedule::Parallel => run_parallel(config, model, seed),
        Schedule::Serial => run_serial(config, model, seed),
    }
}

fn level_logd(model: &EnergyModel, level: &LadderLevel) -> Result<Vec<f64>> {
    Ok(model
        .energy_vector()?
        .into_iter()
        .map(|e| level.logdensity(e))
        .collect())
}

/// The jump kernel of level `lower` with its proposal replaced by the exact
/// upper-level density truncated to the ring of the current state.
#[derive(Debug, Clone)]
pub struct IdealRingJump<'a> {
    model: &'a EnergyModel,
    lower: LadderLevel,
    upper: LadderLevel,
    rings: RingLedger,
    /// `(states, probs)` of the truncated upper density, per ring.
    proposals: Vec<Option<(Vec<usize>, Vec<f64>)>>,
}

impl<'a> IdealRingJump<'a> {
    pub fn new(
        model: &'a EnergyModel,
        lower: LadderLevel,
        upper: LadderLevel,
        boundaries: Vec<f64>,
    ) -> Result<Self> {
        let rings = RingLedger::new(lower.index, boundaries)?;
        let q = enumerate_distribution(model, &upper)?;
        let proposals = (0..rings.ring_count())
            .map(|j| {
                let (lo, hi) = rings.ring_bounds(j);
                match truncate_to_ring(&q, model, lo, hi) {
                    Ok(d) => Ok(Some((d.states().to_vec(), d.probs().to_vec()))),
                    Err(Error::EmptyRing { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            model,
            lower,
            upper,
            rings,
            proposals,
        })
    }
}

impl MarkovKernel for IdealRingJump<'_> {
    fn state_count(&self) -> usize {
        self.model.state_count()
    }

    fn step(&self, state: usize, rng: &mut dyn RngCore) -> StepOutcome {
        let hx = self.model.energy(state).expect("in space");
        // the current state is in its own ring, so the ring is never empty
        let (states, probs) = self.proposals[self.rings.ring_index(hx)]
            .as_ref()
            .expect("own ring");
        let mut u = rng.gen::<f64>();
        let mut pick = states[states.len() - 1];
        for (s, p) in states.iter().zip(probs) {
            if u < *p {
                pick = *s;
                break;
            }
            u -= p;
        }
        let hy = self.model.energy(pick).expect("in space");
        let lr = ee_log_ratio(&self.lower, &self.upper, hx, hy);
        if lr >= 0.0 || rng.gen::<f64>() < lr.exp() {
            StepOutcome {
                state: pick,
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
        let energies = self.model.energy_vector()?;
        let n = energies.len();
        let mut k = TransitionMatrix::zeros(n);
        for x in 0..n {
            let (states, probs) = self.proposals[self.rings.ring_index(energies[x])]
                .as_ref()
                .expect("own ring");
            let mut moved = 0.0;
            for (&y, &q) in states.iter().zip(probs) {
                if y != x {
                    let p = q * ee_log_ratio(&self.lower, &self.upper, energies[x], energies[y])
                        .min(0.0)
                        .exp();
                    k.add(x, y, p);
                    moved += p;
                }
            }
            k.add(x, x, 1.0 - moved);
        }
        Ok(k)
    }
}

/// Kernel of a level whose upper ledger is frozen: with probability `p_jump`
/// an equi-energy jump into the ledger (local fallback on an empty ring),
/// otherwise a local move.
#[derive(Debug, Clone)]
pub struct FrozenLedgerKernel<'a> {
    pub model: &'a EnergyModel,
    pub lower: LadderLevel,
    pub upper: LadderLevel,
    pub ledger: &'a RingLedger,
    pub mode: JumpMode,
    pub p_jump: f64,
}

impl MarkovKernel for FrozenLedgerKernel<'_> {
    fn state_count(&self) -> usize {
        self.model.state_count()
    }

    fn step(&self, state: usize, rng: &mut dyn RngCore) -> StepOutcome {
        let energy = self.model.energy(state).expect("in space");
        if rng.gen::<f64>() < self.p_jump {
            let o = ee_jump_step(
                self.model,
                &self.lower,
                &self.upper,
                self.ledger,
                self.mode,
                state,
                energy,
                rng,
            );
            StepOutcome {
                state: o.state,
                accepted: o.accepted,
            }
        } else {
            local_step(self.model, &self.lower, state, rng)
        }
    }

    fn exact_matrix(&self) -> Result<TransitionMatrix> {
        let energies = self.model.energy_vector()?;
        let n = energies.len();
        let local = local_mh_matrix(&level_logd(self.model, &self.lower)?, self.model.space());
        let mut jump = TransitionMatrix::zeros(n);
        for x in 0..n {
            let pool: Vec<Record> = match self.mode {
                JumpMode::Restricted => self
                    .ledger
                    .ring(self.ledger.ring_index(energies[x]))
                    .to_vec(),
                JumpMode::Unrestricted => self.ledger.records().collect(),
            };
            if pool.is_empty() {
                for y in 0..n {
                    jump.add(x, y, local.get(x, y));
                }
                continue;
            }
            let mass = 1.0 / pool.len() as f64;
            let mut moved = 0.0;
            for r in pool.iter().filter(|r| r.state != x) {
                let p = mass
                    * ee_log_ratio(&self.lower, &self.upper, energies[x], r.energy)
                        .min(0.0)
                        .exp();
                jump.add(x, r.state, p);
                moved += p;
            }
            jump.add(x, x, 1.0 - moved);
        }
        TransitionMatrix::convex_combination(self.p_jump, &jump, &local)
    }
}

/// Fill a ledger for `level` by running a local chain there: `burn_in`
/// discarded steps, then `records` states kept every `thin` steps.
pub fn fill_ledger(
    model: &EnergyModel,
    level: &LadderLevel,
    boundaries: Vec<f64>,
    initial: usize,
    burn_in: u64,
    records: usize,
    thin: u64,
    rng: &mut dyn RngCore,
) -> Result<RingLedger> {
    let kernel = LocalMh::new(model, *level)?;
    let mut ledger = RingLedger::new(level.index, boundaries)?;
    let mut state = initial;
    for _ in 0..burn_in {
        state = kernel.step(state, rng).state;
    }
    while ledger.total() < records {
        for _ in 0..thin.max(1) {
            state = kernel.step(state, rng).state;
        }
        ledger.record(state, model.energy(state)?);
    }
    Ok(ledger)
}
