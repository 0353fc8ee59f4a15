//! Federated training over transmitted operator states.
//!
//! Rounds are synchronous: the server prepares shift states for the selected
//! parameters, every client runs them through its chip against its local
//! batch and returns per-parameter gradient estimates, and the server
//! aggregates (FedSGD or FedAvg) at the round barrier. Clients never see θ;
//! they only receive operator encodings plus the classical descale metadata.
//!
//! The whole run is a pure function of the configuration: parameter
//! selection, shot noise, and retransmission draws all derive from the
//! master seed. Clients are independent within a round and could be
//! processed in parallel; the ledger and the aggregation step are the only
//! synchronization points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chip::{chip_run_raw, doubled_target, ChipError};
use crate::model::{
    self, AnsatzSpec, LabeledExample, ModelError, ParamVector, ShiftMode, ShiftStateSpec,
};
use crate::scalar::{real, Scalar};
use crate::statevec::{EstimationMode, PureState, StateError};

/// Default cap on post-selection retries before a client gives up on a round.
pub const DEFAULT_RETRANSMISSION_CAP: u32 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FedError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Chip(#[from] ChipError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no gradient messages to aggregate")]
    EmptyMessages,
    #[error("gradient message from client {client} has {actual} values, expected {expected}")]
    MessageShape {
        client: usize,
        expected: usize,
        actual: usize,
    },
    #[error("client {client} has an empty dataset")]
    EmptyDataset { client: usize },
    #[error("every client dropped out of round {round}")]
    AllClientsDropped { round: usize },
}

/// Retransmission cap reached without a successful post-selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("retransmission cap {cap} exceeded")]
pub struct CapExceeded {
    pub cap: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("client {client_id} dropped from the round: {source}")]
    Dropped {
        client_id: usize,
        #[source]
        source: CapExceeded,
    },
    #[error(transparent)]
    Fatal(#[from] FedError),
}

/// Server aggregation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// θ ← θ − η · Σ_clients Σ_examples ∇L.
    FedSgd,
    /// Weighted average of per-client virtual updates θᵢ = θ − η·∇ᵢ. The
    /// clients hold no θ in this protocol, so the server computes the
    /// virtual updates itself from the returned gradients.
    FedAvg,
}

/// A client with local data and a fixed estimation budget.
#[derive(Debug, Clone)]
pub struct ClientNode<T> {
    pub id: usize,
    pub dataset: Vec<LabeledExample<T>>,
    pub shots: EstimationMode,
    pub rng_seed: u64,
}

/// Server state and round policy.
#[derive(Debug, Clone)]
pub struct ServerNode<T> {
    pub ansatz: AnsatzSpec,
    pub theta: ParamVector<T>,
    pub learning_rate: T,
    pub strategy: Strategy,
    pub shift_mode: ShiftMode,
    pub shift: T,
    /// Fraction of parameters shifted per round, in (0, 1].
    pub partial_fraction: T,
}

/// A shift state ready for transmission plus its classical metadata.
#[derive(Debug, Clone)]
pub struct PreparedShift<T> {
    pub state: PureState<T>,
    pub spec: ShiftStateSpec<T>,
}

/// What a client returns: per-parameter gradient estimates (zero for
/// parameters outside this round's selection), the modeled standard error of
/// each estimate, and consumption counters.
#[derive(Debug, Clone)]
pub struct GradientMessage<T> {
    pub client_id: usize,
    pub values: Vec<T>,
    pub std_errors: Vec<T>,
    pub sample_count: u64,
    pub shots_used: u64,
    pub retransmissions: u64,
}

/// Communication counters. Downlink counts every transmitted copy of a shift
/// state in qubits; `classical_bits` tracks the classical side channel
/// (descale metadata at 64 bits per state, gradient uplink at 64 bits per
/// selected parameter); `classical_equivalent_bits` is what shipping each
/// prepared operator as an N×N matrix of 64-bit reals would have cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LedgerEntry {
    pub qubits_downlink: u64,
    pub qubits_uplink: u64,
    pub classical_bits: u64,
    pub retransmissions: u64,
    pub classical_equivalent_bits: u64,
    pub states_prepared: u64,
}

impl LedgerEntry {
    fn absorb(&mut self, other: &LedgerEntry) {
        self.qubits_downlink += other.qubits_downlink;
        self.qubits_uplink += other.qubits_uplink;
        self.classical_bits += other.classical_bits;
        self.retransmissions += other.retransmissions;
        self.classical_equivalent_bits += other.classical_equivalent_bits;
        self.states_prepared += other.states_prepared;
    }
}

/// Per-round communication records plus monotone cumulative totals.
#[derive(Debug, Clone, Default)]
pub struct CommLedger {
    totals: LedgerEntry,
    current: LedgerEntry,
    rounds: Vec<LedgerEntry>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn totals(&self) -> &LedgerEntry {
        &self.totals
    }

    /// Per-round deltas, one entry per closed round.
    pub fn rounds(&self) -> &[LedgerEntry] {
        &self.rounds
    }

    /// One logical shift state sent to one client.
    pub fn record_downlink_state(&mut self, qubits: u64, matrix_dim: usize) {
        self.current.qubits_downlink += qubits;
        self.current.states_prepared += 1;
        self.current.classical_equivalent_bits += (matrix_dim * matrix_dim) as u64 * 64;
        // descale travels classically alongside the state
        self.current.classical_bits += 64;
    }

    /// A failed post-selection trial forcing a fresh copy of the state.
    pub fn record_retransmission(&mut self, qubits: u64) {
        self.current.qubits_downlink += qubits;
        self.current.retransmissions += 1;
    }

    /// Gradient values returned classically.
    pub fn record_uplink_gradient(&mut self, num_values: usize) {
        self.current.classical_bits += num_values as u64 * 64;
    }

    /// Closes the round: archives the delta and returns the cumulative
    /// totals snapshot.
    pub fn end_round(&mut self) -> LedgerEntry {
        self.totals.absorb(&self.current);
        self.rounds.push(self.current);
        self.current = LedgerEntry::default();
        self.totals
    }
}

/// Cost summary derived from the ledger counters.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerReport {
    pub total_qubits_downlink: u64,
    pub total_qubits_uplink: u64,
    pub total_classical_bits: u64,
    pub total_retransmissions: u64,
    pub total_states_prepared: u64,
    pub total_classical_equivalent_bits: u64,
    /// Average qubits per transmitted copy, counting retransmitted copies:
    /// 2n, plus the index register in indexed mode.
    pub qubits_per_state: f64,
    /// Classical cost of one operator matrix: N²·64 bits.
    pub matrix_bits_per_state: u64,
    /// Classical cost of shipping θ itself once: m·64 bits.
    pub theta_bits: u64,
    /// matrix_bits_per_state / qubits_per_state, the Θ(4ⁿ/n) advantage.
    pub matrix_to_qubit_ratio: f64,
    /// theta_bits / qubits_per_state.
    pub theta_to_qubit_ratio: f64,
}

/// Pure arithmetic over the counters; `dim` is the data dimension N and
/// `param_count` the length of θ.
pub fn ledger_report(ledger: &CommLedger, dim: usize, param_count: usize) -> LedgerReport {
    let totals = ledger.totals();
    let copies = totals.states_prepared + totals.retransmissions;
    let qubits_per_state = if copies == 0 {
        0.0
    } else {
        totals.qubits_downlink as f64 / copies as f64
    };
    let matrix_bits_per_state = (dim * dim) as u64 * 64;
    let theta_bits = param_count as u64 * 64;
    let ratio = |bits: u64| {
        if qubits_per_state == 0.0 {
            0.0
        } else {
            bits as f64 / qubits_per_state
        }
    };
    LedgerReport {
        total_qubits_downlink: totals.qubits_downlink,
        total_qubits_uplink: totals.qubits_uplink,
        total_classical_bits: totals.classical_bits,
        total_retransmissions: totals.retransmissions,
        total_states_prepared: totals.states_prepared,
        total_classical_equivalent_bits: totals.classical_equivalent_bits,
        qubits_per_state,
        matrix_bits_per_state,
        theta_bits,
        matrix_to_qubit_ratio: ratio(matrix_bits_per_state),
        theta_to_qubit_ratio: ratio(theta_bits),
    }
}

/// One closed training round.
#[derive(Debug, Clone)]
pub struct RoundRecord<T> {
    pub round: usize,
    pub theta_before: ParamVector<T>,
    pub theta_after: ParamVector<T>,
    /// Mean (over clients) of the mean local loss, evaluated at
    /// `theta_before`.
    pub mean_loss: T,
    pub per_client_loss: Vec<T>,
    pub dropped_clients: Vec<usize>,
    /// Cumulative ledger totals at the round barrier.
    pub ledger_totals: LedgerEntry,
}

/// Everything needed to run and audit a training job.
#[derive(Debug, Clone)]
pub struct TrainingConfig<T> {
    pub ansatz: AnsatzSpec,
    pub num_clients: usize,
    pub examples_per_client: usize,
    pub data_seed: u64,
    pub rounds: usize,
    pub learning_rate: T,
    pub strategy: Strategy,
    pub shift_mode: ShiftMode,
    pub shift: T,
    pub partial_fraction: T,
    pub estimation: EstimationMode,
    pub master_seed: u64,
    pub retransmission_cap: u32,
}

impl TrainingConfig<f64> {
    /// The reference toy task: three clients, two data qubits, realizable
    /// labels from a hidden target θ*. Converges in seconds and pins the
    /// golden metrics trace.
    pub fn reference() -> Self {
        Self {
            ansatz: AnsatzSpec::new(2, 2),
            num_clients: 3,
            examples_per_client: 4,
            data_seed: 42,
            rounds: 200,
            learning_rate: 0.05,
            strategy: Strategy::FedSgd,
            shift_mode: ShiftMode::Single,
            shift: std::f64::consts::PI,
            partial_fraction: 1.0,
            estimation: EstimationMode::Exact,
            master_seed: 42,
            retransmission_cap: DEFAULT_RETRANSMISSION_CAP,
        }
    }
}

impl<T: Scalar> TrainingConfig<T> {
    pub fn validate(&self) -> Result<(), FedError> {
        let fail = |msg: &str| Err(FedError::InvalidConfig(msg.to_string()));
        if self.num_clients == 0 {
            return fail("num_clients must be positive");
        }
        if self.examples_per_client == 0 {
            return fail("examples_per_client must be positive");
        }
        if !(self.learning_rate > T::zero() && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive and finite");
        }
        if !(self.shift > T::zero() && self.shift < real::<T>(std::f64::consts::TAU)) {
            return fail("shift must lie in (0, 2*pi)");
        }
        if !(self.partial_fraction > T::zero() && self.partial_fraction <= T::one()) {
            return fail("partial_fraction must lie in (0, 1]");
        }
        let m = self.ansatz.param_count();
        if selection_size(self.partial_fraction, m) < 1 {
            return fail("partial_fraction selects no parameters");
        }
        if matches!(self.shift_mode, ShiftMode::Indexed)
            && selection_size(self.partial_fraction, m) < 2
        {
            return fail("indexed shift mode needs at least two selected parameters");
        }
        if self.retransmission_cap == 0 {
            return fail("retransmission_cap must be positive");
        }
        if let EstimationMode::Shots(0) = self.estimation {
            return fail("shot count must be positive");
        }
        Ok(())
    }
}

/// Result of [`run_training`]: round records, the ledger, and the task
/// itself for post-run evaluation.
#[derive(Debug, Clone)]
pub struct TrainingRun<T> {
    pub records: Vec<RoundRecord<T>>,
    pub ledger: CommLedger,
    pub clients: Vec<ClientNode<T>>,
    pub final_theta: ParamVector<T>,
    pub target_theta: ParamVector<T>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed derivation; every random decision in a run hangs
/// off the master seed through this.
fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix64(acc ^ p))
}

const SALT_SELECT: u64 = 0x01;
const SALT_CLIENT: u64 = 0x02;
const SALT_RETRANS: u64 = 0x03;
const SALT_SHOT: u64 = 0x04;
const SALT_DATA: u64 = 0x05;

fn selection_size<T: Scalar>(partial_fraction: T, param_count: usize) -> usize {
    if partial_fraction >= T::one() {
        return param_count;
    }
    let scaled = (partial_fraction * T::from_usize(param_count).unwrap())
        .round()
        .to_usize()
        .unwrap_or(0);
    scaled.clamp(1, param_count)
}

/// Picks this round's parameter subset; the full set when
/// `partial_fraction = 1`, otherwise a seeded draw without replacement.
fn select_indices<T: Scalar>(server: &ServerNode<T>, round: usize, master_seed: u64) -> Vec<usize> {
    let m = server.ansatz.param_count();
    let k = selection_size(server.partial_fraction, m);
    if k == m {
        return (0..m).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[master_seed, round as u64, SALT_SELECT]));
    let mut pool: Vec<usize> = (0..m).collect();
    for i in 0..k {
        let j = rng.random_range(i..m);
        pool.swap(i, j);
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Prepares this round's shift states and debits the downlink ledger once
/// per state per client.
pub fn server_prepare_round<T: Scalar>(
    server: &ServerNode<T>,
    round: usize,
    master_seed: u64,
    num_clients: usize,
    ledger: &mut CommLedger,
) -> Result<Vec<PreparedShift<T>>, FedError> {
    let indices = select_indices(server, round, master_seed);
    let mut prepared = Vec::new();
    match server.shift_mode {
        ShiftMode::Single => {
            for &index in &indices {
                let (state, spec) =
                    model::prepare_shift_state(&server.ansatz, &server.theta, index, server.shift)?;
                prepared.push(PreparedShift { state, spec });
            }
        }
        ShiftMode::Multi => {
            let (state, spec) = model::prepare_multi_shift_state(
                &server.ansatz,
                &server.theta,
                &indices,
                server.shift,
            )?;
            prepared.push(PreparedShift { state, spec });
        }
        ShiftMode::Indexed => {
            let (state, spec) = model::prepare_indexed_shift_state(
                &server.ansatz,
                &server.theta,
                &indices,
                server.shift,
            )?;
            prepared.push(PreparedShift { state, spec });
        }
    }
    let dim = server.ansatz.dim();
    for _ in 0..num_clients {
        for shift in &prepared {
            ledger.record_downlink_state(shift.state.num_qubits() as u64, dim);
        }
    }
    Ok(prepared)
}

/// Geometric retry model for post-selection: Bernoulli(p) trials until the
/// first success, giving up after `cap` copies. Returns the number of copies
/// consumed; the expected value is ≈ 1/p.
pub fn simulate_retransmission(
    success_prob: f64,
    cap: u32,
    rng: &mut ChaCha8Rng,
) -> Result<u32, CapExceeded> {
    let p = success_prob.clamp(0.0, 1.0);
    for copies in 1..=cap {
        if rng.random_bool(p) {
            return Ok(copies);
        }
    }
    Err(CapExceeded { cap })
}

/// Round-scoped context a client needs besides its own state.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext {
    pub round: usize,
    pub master_seed: u64,
    pub retransmission_cap: u32,
    pub data_dim: usize,
    pub param_count: usize,
}

/// Gradient values recovered from one shift state against one example, with
/// the modeled standard error of each value (zero in exact mode).
#[derive(Debug, Clone)]
pub struct ShiftEstimate<T> {
    pub recovered: Vec<T>,
    pub std_errors: Vec<T>,
    pub success_prob: T,
}

/// Runs one shift state through the chip against one example and rescales
/// the overlap estimate(s) into gradient values.
///
/// Exact mode reads the expectation off the unnormalized chip output, which
/// is well defined even when the shifted operator difference annihilates the
/// input. Shot mode estimates the overlap of the renormalized output against
/// the matched-pair target |i⟩Σᵣyᵣ|r⟩|r⟩ with Bernoulli sampling and scales
/// by √p; its standard error is bounded by √p/√shots per raw value.
pub fn estimate_from_shift_state<T: Scalar>(
    shift: &PreparedShift<T>,
    example: &LabeledExample<T>,
    estimation: EstimationMode,
    seed: u64,
) -> Result<ShiftEstimate<T>, FedError> {
    let passenger = shift.spec.index_register_qubits();
    let branches = match shift.spec.mode {
        ShiftMode::Single | ShiftMode::Multi => 1,
        ShiftMode::Indexed => shift.spec.indices.len(),
    };
    let dim = example.dim();
    let half_shift = shift.spec.shift / real::<T>(2.0);
    let rescale = shift.spec.descale * T::from_usize(dim).unwrap().sqrt()
        / (real::<T>(4.0) * half_shift.sin());

    let raw_run = chip_run_raw(&shift.state, passenger, example.x())?;
    let success_prob = raw_run.success_prob();
    let mut raws = Vec::with_capacity(branches);
    let std_errors;
    match estimation {
        EstimationMode::Exact => {
            std_errors = vec![T::zero(); branches];
            for branch in 0..branches {
                raws.push(raw_run.branch_overlap(branch, example.y())?);
            }
        }
        EstimationMode::Shots(shots) => {
            let joint = raw_run.normalized_joint()?;
            let target = doubled_target(example.y());
            let sqrt_p = success_prob.sqrt();
            let sigma = sqrt_p / T::from_u64(shots).unwrap().sqrt() * rescale;
            std_errors = vec![sigma; branches];
            for branch in 0..branches {
                let branch_target = if passenger == 0 {
                    target.clone()
                } else {
                    PureState::basis(passenger, branch).tensor(&target)
                };
                let estimate = joint.overlap_real_estimate(
                    &branch_target,
                    EstimationMode::Shots(shots),
                    derive_seed(&[seed, branch as u64, SALT_SHOT]),
                )?;
                raws.push(estimate * sqrt_p);
            }
        }
    }
    let recovered = model::recover_partials(&raws, &shift.spec, dim)?;
    Ok(ShiftEstimate {
        recovered,
        std_errors,
        success_prob,
    })
}

/// Runs every received shift state against the local batch and averages the
/// recovered partials into one gradient message.
///
/// In exact mode the raw value is the exact expectation read off the
/// unnormalized chip output. In shot mode each (state, example) pair first
/// plays the retransmission lottery at the state's post-selection
/// probability (failed trials debit the downlink ledger; exceeding the cap
/// drops the client from the round), then estimates the overlap against the
/// matched-pair target with the configured shot budget.
pub fn client_process<T: Scalar>(
    client: &ClientNode<T>,
    prepared: &[PreparedShift<T>],
    ctx: &RoundContext,
    ledger: &mut CommLedger,
) -> Result<GradientMessage<T>, ClientError> {
    if client.dataset.is_empty() {
        return Err(FedError::EmptyDataset { client: client.id }.into());
    }
    let m = ctx.param_count;
    let mut value_sums = vec![T::zero(); m];
    let mut variance_sums = vec![T::zero(); m];
    let mut retransmissions = 0u64;
    let mut shots_used = 0u64;
    let mut retrans_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        ctx.master_seed,
        ctx.round as u64,
        client.rng_seed,
        SALT_RETRANS,
    ]));

    for (state_idx, shift) in prepared.iter().enumerate() {
        for (example_idx, example) in client.dataset.iter().enumerate() {
            if example.dim() != ctx.data_dim {
                return Err(FedError::Model(ModelError::ExampleDimension {
                    expected: ctx.data_dim,
                    actual: example.dim(),
                })
                .into());
            }

            if let EstimationMode::Shots(shots) = client.shots {
                // Post-selection lottery: every failed trial consumes a
                // fresh copy of the state. Never silent — the failed copies
                // stay on the ledger and the server sees the drop.
                let raw_run = chip_run_raw(
                    &shift.state,
                    shift.spec.index_register_qubits(),
                    example.x(),
                )
                .map_err(|e| ClientError::Fatal(e.into()))?;
                let copies = simulate_retransmission(
                    raw_run.success_prob().to_f64().unwrap_or(0.0),
                    ctx.retransmission_cap,
                    &mut retrans_rng,
                )
                .map_err(|source| {
                    for _ in 1..ctx.retransmission_cap {
                        ledger.record_retransmission(shift.state.num_qubits() as u64);
                    }
                    retransmissions += u64::from(ctx.retransmission_cap - 1);
                    ClientError::Dropped {
                        client_id: client.id,
                        source,
                    }
                })?;
                for _ in 1..copies {
                    ledger.record_retransmission(shift.state.num_qubits() as u64);
                }
                retransmissions += u64::from(copies - 1);
                shots_used += shots * raw_run.branch_count().min(shift.spec.indices.len()) as u64;
            }

            let estimate = estimate_from_shift_state(
                shift,
                example,
                client.shots,
                derive_seed(&[
                    ctx.master_seed,
                    ctx.round as u64,
                    client.rng_seed,
                    state_idx as u64,
                    example_idx as u64,
                ]),
            )
            .map_err(ClientError::Fatal)?;

            match shift.spec.mode {
                ShiftMode::Single => {
                    let index = shift.spec.indices[0];
                    value_sums[index] += estimate.recovered[0];
                    variance_sums[index] += estimate.std_errors[0] * estimate.std_errors[0];
                }
                ShiftMode::Multi => {
                    // Only the sum of the selected partials is observable;
                    // attribute it uniformly.
                    let share = T::from_usize(shift.spec.indices.len()).unwrap();
                    for &index in &shift.spec.indices {
                        value_sums[index] += estimate.recovered[0] / share;
                        let sigma = estimate.std_errors[0] / share;
                        variance_sums[index] += sigma * sigma;
                    }
                }
                ShiftMode::Indexed => {
                    for (branch, &index) in shift.spec.indices.iter().enumerate() {
                        value_sums[index] += estimate.recovered[branch];
                        variance_sums[index] +=
                            estimate.std_errors[branch] * estimate.std_errors[branch];
                    }
                }
            }
        }
    }

    let n = T::from_usize(client.dataset.len()).unwrap();
    let values: Vec<T> = value_sums.into_iter().map(|v| v / n).collect();
    let std_errors: Vec<T> = variance_sums.into_iter().map(|v| v.sqrt() / n).collect();
    let selected: usize = prepared.iter().map(|p| p.spec.indices.len()).sum();
    ledger.record_uplink_gradient(selected);
    Ok(GradientMessage {
        client_id: client.id,
        values,
        std_errors,
        sample_count: client.dataset.len() as u64,
        shots_used,
        retransmissions,
    })
}

fn check_messages<T: Scalar>(
    theta_len: usize,
    messages: &[GradientMessage<T>],
) -> Result<(), FedError> {
    if messages.is_empty() {
        return Err(FedError::EmptyMessages);
    }
    for msg in messages {
        if msg.values.len() != theta_len {
            return Err(FedError::MessageShape {
                client: msg.client_id,
                expected: theta_len,
                actual: msg.values.len(),
            });
        }
    }
    Ok(())
}

/// θ ← θ − η · Σ_clients nᵢ·⟨∇⟩ᵢ, i.e. the summed per-example gradients of
/// the pooled dataset. Parameters outside this round's selection carry zero
/// gradient and stay put.
pub fn aggregate_fedsgd<T: Scalar>(
    server: &ServerNode<T>,
    messages: &[GradientMessage<T>],
) -> Result<ParamVector<T>, FedError> {
    check_messages(server.theta.len(), messages)?;
    let mut theta = server.theta.values().to_vec();
    for msg in messages {
        let samples = T::from_u64(msg.sample_count).unwrap();
        for (slot, &g) in theta.iter_mut().zip(&msg.values) {
            *slot -= server.learning_rate * samples * g;
        }
    }
    Ok(ParamVector::new(theta)?)
}

/// FedAvg with server-side virtual updates: θᵢ = θ − η·nᵢ·⟨∇⟩ᵢ per client,
/// then θ ← Σ (nᵢ/n)·θᵢ.
pub fn aggregate_fedavg<T: Scalar>(
    server: &ServerNode<T>,
    messages: &[GradientMessage<T>],
) -> Result<ParamVector<T>, FedError> {
    check_messages(server.theta.len(), messages)?;
    let total: u64 = messages.iter().map(|m| m.sample_count).sum();
    if total == 0 {
        return Err(FedError::EmptyMessages);
    }
    let total_t = T::from_u64(total).unwrap();
    let mut theta = vec![T::zero(); server.theta.len()];
    for msg in messages {
        let samples = T::from_u64(msg.sample_count).unwrap();
        let weight = samples / total_t;
        for ((slot, &base), &g) in theta.iter_mut().zip(server.theta.values()).zip(&msg.values) {
            let local = base - server.learning_rate * samples * g;
            *slot += weight * local;
        }
    }
    Ok(ParamVector::new(theta)?)
}

/// Clients plus the hidden target θ* and the initial θ of a generated task.
pub type RealizableTask<T> = (Vec<ClientNode<T>>, ParamVector<T>, ParamVector<T>);

/// Generates the realizable-target regression task: a hidden θ*, random real
/// unit inputs, and labels y = O(θ*)·x. Returns the clients, the hidden
/// target, and the initial θ.
pub fn make_realizable_task<T: Scalar>(
    ansatz: &AnsatzSpec,
    num_clients: usize,
    examples_per_client: usize,
    data_seed: u64,
    shots: EstimationMode,
) -> Result<RealizableTask<T>, FedError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[data_seed, SALT_DATA]));
    let m = ansatz.param_count();
    let draw_theta = |rng: &mut ChaCha8Rng| -> Result<ParamVector<T>, FedError> {
        let values = (0..m)
            .map(|_| real::<T>((rng.random::<f64>() * 2.0 - 1.0) * std::f64::consts::PI))
            .collect();
        Ok(ParamVector::new(values)?)
    };
    let target_theta = draw_theta(&mut rng)?;
    let initial_theta = draw_theta(&mut rng)?;
    let target_op = model::build_operator(ansatz, &target_theta)?;

    let dim = ansatz.dim();
    let mut clients = Vec::with_capacity(num_clients);
    for id in 0..num_clients {
        let mut dataset = Vec::with_capacity(examples_per_client);
        for _ in 0..examples_per_client {
            let x = loop {
                let raw: Vec<T> = (0..dim)
                    .map(|_| real::<T>(rng.random::<f64>() * 2.0 - 1.0))
                    .collect();
                match PureState::from_real(&raw) {
                    Ok((state, norm)) if norm > real::<T>(1e-3) => break state,
                    _ => continue,
                }
            };
            let image = target_op.apply(x.amplitudes())?;
            let (y, _) = PureState::normalized(image)?;
            dataset.push(LabeledExample::new(x, y)?);
        }
        clients.push(ClientNode {
            id,
            dataset,
            shots,
            rng_seed: derive_seed(&[data_seed, id as u64, SALT_CLIENT]),
        });
    }
    Ok((clients, target_theta, initial_theta))
}

/// Mean local loss per client and the overall mean, evaluated exactly.
pub fn mean_loss_over<T: Scalar>(
    ansatz: &AnsatzSpec,
    theta: &ParamVector<T>,
    clients: &[ClientNode<T>],
) -> Result<(T, Vec<T>), FedError> {
    let mut per_client = Vec::with_capacity(clients.len());
    for client in clients {
        if client.dataset.is_empty() {
            return Err(FedError::EmptyDataset { client: client.id });
        }
        let total: T = client
            .dataset
            .iter()
            .map(|ex| model::loss(ansatz, theta, ex))
            .sum::<Result<T, ModelError>>()?;
        per_client.push(total / T::from_usize(client.dataset.len()).unwrap());
    }
    let mean =
        per_client.iter().copied().sum::<T>() / T::from_usize(per_client.len().max(1)).unwrap();
    Ok((mean, per_client))
}

/// Runs the full synchronous protocol. Deterministic for a fixed
/// configuration: identical seeds give bitwise-identical records.
pub fn run_training<T: Scalar>(config: &TrainingConfig<T>) -> Result<TrainingRun<T>, FedError> {
    config.validate()?;
    let (clients, target_theta, initial_theta) = make_realizable_task(
        &config.ansatz,
        config.num_clients,
        config.examples_per_client,
        config.data_seed,
        config.estimation,
    )?;
    let mut server = ServerNode {
        ansatz: config.ansatz,
        theta: initial_theta,
        learning_rate: config.learning_rate,
        strategy: config.strategy,
        shift_mode: config.shift_mode,
        shift: config.shift,
        partial_fraction: config.partial_fraction,
    };
    let mut ledger = CommLedger::new();
    let mut records = Vec::with_capacity(config.rounds);

    for round in 0..config.rounds {
        let prepared = server_prepare_round(
            &server,
            round,
            config.master_seed,
            clients.len(),
            &mut ledger,
        )?;
        let (mean_loss, per_client_loss) = mean_loss_over(&server.ansatz, &server.theta, &clients)?;

        let ctx = RoundContext {
            round,
            master_seed: config.master_seed,
            retransmission_cap: config.retransmission_cap,
            data_dim: server.ansatz.dim(),
            param_count: server.theta.len(),
        };
        let mut messages = Vec::with_capacity(clients.len());
        let mut dropped_clients = Vec::new();
        for client in &clients {
            match client_process(client, &prepared, &ctx, &mut ledger) {
                Ok(message) => messages.push(message),
                Err(ClientError::Dropped { client_id, .. }) => dropped_clients.push(client_id),
                Err(ClientError::Fatal(e)) => return Err(e),
            }
        }
        if messages.is_empty() {
            return Err(FedError::AllClientsDropped { round });
        }

        let theta_after = match server.strategy {
            Strategy::FedSgd => aggregate_fedsgd(&server, &messages)?,
            Strategy::FedAvg => aggregate_fedavg(&server, &messages)?,
        };
        let ledger_totals = ledger.end_round();
        records.push(RoundRecord {
            round,
            theta_before: server.theta.clone(),
            theta_after: theta_after.clone(),
            mean_loss,
            per_client_loss,
            dropped_clients,
            ledger_totals,
        });
        server.theta = theta_after;
    }

    Ok(TrainingRun {
        records,
        ledger,
        clients,
        final_theta: server.theta,
        target_theta,
    })
}
