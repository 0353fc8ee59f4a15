//! Dense state-vector simulation core.
//!
//! States are immutable: every operation returns a fresh [`PureState`], so
//! values can be shared freely across threads. Randomness is always owned by
//! the call through an explicit seed.
//!
//! # Qubit ordering
//!
//! Qubit indexing is big-endian and fixed globally: qubit 0 is the leftmost
//! ket label and the most significant bit of the amplitude index. A
//! three-qubit ket |q₁q₂q₃⟩ lives at index `q₁·4 + q₂·2 + q₃`. This is the
//! one place the convention is documented; it is not configurable.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::{real, Scalar};

/// Hard cap on total qubits; dense simulation beyond this is out of scope.
pub const MAX_QUBITS: usize = 24;

/// Errors from state-vector operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("amplitude vector length {len} is not a power of two")]
    NotPowerOfTwo { len: usize },
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("state is not normalized: Σ|amplitude|² = {norm_sqr}")]
    NotNormalized { norm_sqr: f64 },
    #[error("operator application annihilated the state")]
    Annihilated,
    #[error("impossible branch: selection probability {probability} below tolerance")]
    ImpossibleBranch { probability: f64 },
    #[error("control and target spans overlap")]
    OverlappingSpans,
    #[error("bit pattern {pattern} does not fit in {len} bits")]
    PatternTooWide { pattern: usize, len: usize },
    #[error("{requested} qubits exceed the {MAX_QUBITS}-qubit simulation cap")]
    TooManyQubits { requested: usize },
}

/// Contiguous run of qubits inside a larger register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegisterSpan {
    start: usize,
    len: usize,
}

impl RegisterSpan {
    pub const fn new(start_qubit: usize, length: usize) -> Self {
        Self {
            start: start_qubit,
            len: length,
        }
    }

    pub const fn start(&self) -> usize {
        self.start
    }

    pub const fn len(&self) -> usize {
        self.len
    }

    pub const fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// One past the last qubit covered.
    pub const fn end(&self) -> usize {
        self.start + self.len
    }

    pub const fn overlaps(&self, other: &RegisterSpan) -> bool {
        self.start < other.end() && other.start < self.end()
    }

    fn assert_fits(&self, num_qubits: usize) {
        assert!(
            self.end() <= num_qubits,
            "span [{}, {}) out of range for {num_qubits} qubits",
            self.start,
            self.end(),
        );
    }
}

/// Tally of one measurement outcome; outcomes are big-endian basis indices
/// over the sampled span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementSample {
    pub outcome: usize,
    pub count: u64,
}

/// Whether an estimator returns the exact expectation or a finite-shot draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimationMode {
    Exact,
    Shots(u64),
}

/// Square complex matrix acting on a register span, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMatrix<T> {
    dim: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> GateMatrix<T> {
    /// # Panics
    /// Panics when `data.len() != dim * dim` or `dim` is not a power of two.
    pub fn new(dim: usize, data: Vec<Complex<T>>) -> Self {
        assert!(
            dim.is_power_of_two(),
            "gate dimension must be a power of two"
        );
        assert_eq!(data.len(), dim * dim, "gate matrix data length");
        Self { dim, data }
    }

    pub fn from_real_rows(rows: &[Vec<T>]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            assert_eq!(row.len(), dim, "gate matrix rows must be square");
            data.extend(row.iter().map(|&x| Complex::new(x, T::zero())));
        }
        Self::new(dim, data)
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        for r in 0..dim {
            data[r * dim + r] = Complex::new(T::one(), T::zero());
        }
        Self::new(dim, data)
    }

    pub fn hadamard() -> Self {
        let h = real::<T>(std::f64::consts::FRAC_1_SQRT_2);
        Self::from_real_rows(&[vec![h, h], vec![h, -h]])
    }

    /// Matrix unit |row⟩⟨col| of the given dimension.
    pub fn matrix_unit(dim: usize, row: usize, col: usize) -> Self {
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        data[row * dim + col] = Complex::new(T::one(), T::zero());
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex<T> {
        self.data[row * self.dim + col]
    }

    fn num_qubits(&self) -> usize {
        self.dim.trailing_zeros() as usize
    }
}

/// Normalized pure state over `num_qubits` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState<T> {
    num_qubits: usize,
    amps: Vec<Complex<T>>,
}

impl<T: Scalar> PureState<T> {
    /// |0…0⟩ on `num_qubits` qubits.
    ///
    /// # Panics
    /// Panics when `num_qubits` exceeds [`MAX_QUBITS`].
    pub fn zero(num_qubits: usize) -> Self {
        Self::basis(num_qubits, 0)
    }

    /// Computational basis state |index⟩.
    ///
    /// # Panics
    /// Panics when `num_qubits > MAX_QUBITS` or `index >= 2^num_qubits`.
    pub fn basis(num_qubits: usize, index: usize) -> Self {
        assert!(
            num_qubits <= MAX_QUBITS,
            "{num_qubits} qubits exceed the simulation cap"
        );
        let dim = 1usize << num_qubits;
        assert!(index < dim, "basis index {index} out of range");
        let mut amps = vec![Complex::new(T::zero(), T::zero()); dim];
        amps[index] = Complex::new(T::one(), T::zero());
        Self { num_qubits, amps }
    }

    /// Wraps an amplitude vector that is already normalized within
    /// [`Scalar::NORM_TOL`].
    pub fn from_amplitudes(amps: Vec<Complex<T>>) -> Result<Self, StateError> {
        let state = Self::from_raw(amps)?;
        let norm_sqr = state.norm_sqr();
        if (norm_sqr - T::one()).abs() > T::NORM_TOL {
            return Err(StateError::NotNormalized {
                norm_sqr: norm_sqr.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(state)
    }

    /// Normalizes an arbitrary amplitude vector; returns the state and the
    /// original norm.
    pub fn normalized(amps: Vec<Complex<T>>) -> Result<(Self, T), StateError> {
        let mut state = Self::from_raw(amps)?;
        let norm = state.norm_sqr().sqrt();
        if norm < T::BRANCH_TOL {
            return Err(StateError::ZeroNorm);
        }
        for a in &mut state.amps {
            *a = a.unscale(norm);
        }
        Ok((state, norm))
    }

    /// Normalizes a real amplitude vector; returns the state and the norm.
    pub fn from_real(values: &[T]) -> Result<(Self, T), StateError> {
        Self::normalized(values.iter().map(|&v| Complex::new(v, T::zero())).collect())
    }

    fn from_raw(amps: Vec<Complex<T>>) -> Result<Self, StateError> {
        let len = amps.len();
        if !len.is_power_of_two() || len == 0 {
            return Err(StateError::NotPowerOfTwo { len });
        }
        let num_qubits = len.trailing_zeros() as usize;
        if num_qubits > MAX_QUBITS {
            return Err(StateError::TooManyQubits {
                requested: num_qubits,
            });
        }
        Ok(Self { num_qubits, amps })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amps
    }

    pub fn amplitude(&self, index: usize) -> Complex<T> {
        self.amps[index]
    }

    fn norm_sqr(&self) -> T {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Tensor product; `self` supplies the leading (most significant) qubits.
    ///
    /// # Panics
    /// Panics when the combined register exceeds [`MAX_QUBITS`].
    pub fn tensor(&self, other: &PureState<T>) -> PureState<T> {
        let num_qubits = self.num_qubits + other.num_qubits;
        assert!(
            num_qubits <= MAX_QUBITS,
            "{num_qubits} qubits exceed the simulation cap"
        );
        let mut amps = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        PureState { num_qubits, amps }
    }

    /// Applies `m` to the span (identity elsewhere), renormalizes, and
    /// returns the post-application squared norm as the branch weight.
    /// Unitary gates keep the weight at 1.
    pub fn apply_matrix(
        &self,
        m: &GateMatrix<T>,
        span: RegisterSpan,
    ) -> Result<(PureState<T>, T), StateError> {
        span.assert_fits(self.num_qubits);
        if m.dim() != 1usize << span.len() {
            return Err(StateError::DimensionMismatch {
                expected: 1usize << span.len(),
                actual: m.dim(),
            });
        }
        let mut amps = self.amps.clone();
        apply_matrix_raw(&mut amps, self.num_qubits, m, span);
        self.finish_weighted(amps)
    }

    /// Applies `m` to `target_span` only on the subspace where the control
    /// qubits equal `pattern` (big-endian within the control span).
    pub fn controlled_apply(
        &self,
        control_span: RegisterSpan,
        pattern: usize,
        m: &GateMatrix<T>,
        target_span: RegisterSpan,
    ) -> Result<(PureState<T>, T), StateError> {
        control_span.assert_fits(self.num_qubits);
        target_span.assert_fits(self.num_qubits);
        if control_span.overlaps(&target_span) {
            return Err(StateError::OverlappingSpans);
        }
        if pattern >= 1usize << control_span.len() {
            return Err(StateError::PatternTooWide {
                pattern,
                len: control_span.len(),
            });
        }
        if m.dim() != 1usize << target_span.len() {
            return Err(StateError::DimensionMismatch {
                expected: 1usize << target_span.len(),
                actual: m.dim(),
            });
        }
        let mut amps = self.amps.clone();
        controlled_apply_raw(
            &mut amps,
            self.num_qubits,
            control_span,
            pattern,
            m,
            target_span,
        );
        self.finish_weighted(amps)
    }

    fn finish_weighted(&self, mut amps: Vec<Complex<T>>) -> Result<(PureState<T>, T), StateError> {
        let weight: T = amps.iter().map(|a| a.norm_sqr()).sum();
        if weight < T::BRANCH_TOL {
            return Err(StateError::Annihilated);
        }
        let norm = weight.sqrt();
        for a in &mut amps {
            *a = a.unscale(norm);
        }
        Ok((
            PureState {
                num_qubits: self.num_qubits,
                amps,
            },
            weight,
        ))
    }

    /// H^⊗len on the span.
    pub fn hadamard_register(&self, span: RegisterSpan) -> PureState<T> {
        span.assert_fits(self.num_qubits);
        let mut amps = self.amps.clone();
        hadamard_register_raw(&mut amps, self.num_qubits, span);
        PureState {
            num_qubits: self.num_qubits,
            amps,
        }
    }

    /// Conditions the span on the big-endian outcome `value`, removes those
    /// qubits, and returns the renormalized conditional state plus the
    /// selection probability.
    pub fn post_select(
        &self,
        span: RegisterSpan,
        value: usize,
    ) -> Result<(PureState<T>, T), StateError> {
        span.assert_fits(self.num_qubits);
        assert!(
            span.len() < self.num_qubits,
            "post-selecting every qubit leaves an empty register"
        );
        if value >= 1usize << span.len() {
            return Err(StateError::PatternTooWide {
                pattern: value,
                len: span.len(),
            });
        }
        let (kept, probability) = post_select_raw(&self.amps, self.num_qubits, span, value);
        if probability < T::BRANCH_TOL {
            return Err(StateError::ImpossibleBranch {
                probability: probability.to_f64().unwrap_or(f64::NAN),
            });
        }
        let norm = probability.sqrt();
        let amps = kept.into_iter().map(|a| a.unscale(norm)).collect();
        Ok((
            PureState {
                num_qubits: self.num_qubits - span.len(),
                amps,
            },
            probability,
        ))
    }

    /// ⟨self|other⟩.
    pub fn inner_product(&self, other: &PureState<T>) -> Result<Complex<T>, StateError> {
        if self.num_qubits != other.num_qubits {
            return Err(StateError::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| {
                acc + a.conj() * b
            }))
    }

    /// Marginal probability distribution of the span, indexed by big-endian
    /// outcome.
    pub fn marginal_probabilities(&self, span: RegisterSpan) -> Vec<T> {
        span.assert_fits(self.num_qubits);
        let layout = SpanLayout::new(self.num_qubits, span);
        let mut probs = vec![T::zero(); 1usize << span.len()];
        for (i, a) in self.amps.iter().enumerate() {
            probs[layout.sub_index(i)] += a.norm_sqr();
        }
        probs
    }

    /// Draws `shots` outcomes from the span's marginal distribution.
    /// Deterministic for a fixed seed; zero-count outcomes are omitted.
    pub fn sample(&self, span: RegisterSpan, shots: u64, seed: u64) -> Vec<MeasurementSample> {
        let probs = self.marginal_probabilities(span);
        let cumulative: Vec<f64> = probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p.to_f64().unwrap_or(0.0);
                Some(*acc)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0u64; probs.len()];
        for _ in 0..shots {
            let draw: f64 = rng.random();
            let outcome = cumulative
                .iter()
                .position(|&c| draw < c)
                .unwrap_or(probs.len() - 1);
            counts[outcome] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .filter(|&(_, count)| count > 0)
            .map(|(outcome, count)| MeasurementSample { outcome, count })
            .collect()
    }

    /// Estimates Re⟨self|other⟩.
    ///
    /// Exact mode returns the expectation directly. Shot mode draws
    /// `shots` Bernoulli trials with success probability
    /// `(1 + Re⟨a|b⟩)/2` — the acceptance statistics of a Hadamard-test
    /// circuit — giving an unbiased estimate with standard error ≤ 1/√shots.
    pub fn overlap_real_estimate(
        &self,
        other: &PureState<T>,
        mode: EstimationMode,
        seed: u64,
    ) -> Result<T, StateError> {
        let re = self.inner_product(other)?.re;
        match mode {
            EstimationMode::Exact => Ok(re),
            EstimationMode::Shots(shots) => {
                let p = (re.to_f64().unwrap_or(0.0) + 1.0) / 2.0;
                let p = p.clamp(0.0, 1.0);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut successes = 0u64;
                for _ in 0..shots {
                    if rng.random_bool(p) {
                        successes += 1;
                    }
                }
                let p_hat = successes as f64 / shots as f64;
                Ok(real::<T>(2.0 * p_hat - 1.0))
            }
        }
    }
}

/// Precomputed bit layout of a span inside an index space.
#[derive(Clone, Copy)]
struct SpanLayout {
    low_bits: usize,
    sub_mask: usize,
    low_mask: usize,
}

impl SpanLayout {
    fn new(num_qubits: usize, span: RegisterSpan) -> Self {
        let low_bits = num_qubits - span.end();
        Self {
            low_bits,
            sub_mask: (1usize << span.len()) - 1,
            low_mask: (1usize << low_bits) - 1,
        }
    }

    /// Big-endian value of the span bits inside `index`.
    #[inline]
    fn sub_index(&self, index: usize) -> usize {
        (index >> self.low_bits) & self.sub_mask
    }

    /// Full index for group `group` (the non-span bits, packed) with the span
    /// bits set to `sub`.
    #[inline]
    fn expand(&self, group: usize, sub: usize, span_len: usize) -> usize {
        let high = (group >> self.low_bits) << (self.low_bits + span_len);
        let low = group & self.low_mask;
        high | low | (sub << self.low_bits)
    }

    /// Index with the span bits removed (used when dropping the span).
    #[inline]
    fn strip(&self, index: usize, span_len: usize) -> usize {
        let high = index >> (self.low_bits + span_len);
        let low = index & self.low_mask;
        (high << self.low_bits) | low
    }
}

/// In-place unnormalized matrix application; shared by the public weighted
/// operations and by pipelines that normalize once at the end.
pub(crate) fn apply_matrix_raw<T: Scalar>(
    amps: &mut [Complex<T>],
    num_qubits: usize,
    m: &GateMatrix<T>,
    span: RegisterSpan,
) {
    let layout = SpanLayout::new(num_qubits, span);
    let sub_dim = m.dim();
    let groups = amps.len() >> m.num_qubits();
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); sub_dim];
    for group in 0..groups {
        for (sub, slot) in scratch.iter_mut().enumerate() {
            *slot = amps[layout.expand(group, sub, span.len())];
        }
        for row in 0..sub_dim {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (col, &amp) in scratch.iter().enumerate() {
                acc += m.entry(row, col) * amp;
            }
            amps[layout.expand(group, row, span.len())] = acc;
        }
    }
}

pub(crate) fn controlled_apply_raw<T: Scalar>(
    amps: &mut [Complex<T>],
    num_qubits: usize,
    control_span: RegisterSpan,
    pattern: usize,
    m: &GateMatrix<T>,
    target_span: RegisterSpan,
) {
    let target_layout = SpanLayout::new(num_qubits, target_span);
    let control_layout = SpanLayout::new(num_qubits, control_span);
    let sub_dim = m.dim();
    let groups = amps.len() >> m.num_qubits();
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); sub_dim];
    for group in 0..groups {
        // Control bits never sit inside the target span, so any member of the
        // group determines them.
        let probe = target_layout.expand(group, 0, target_span.len());
        if control_layout.sub_index(probe) != pattern {
            continue;
        }
        for (sub, slot) in scratch.iter_mut().enumerate() {
            *slot = amps[target_layout.expand(group, sub, target_span.len())];
        }
        for row in 0..sub_dim {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (col, &amp) in scratch.iter().enumerate() {
                acc += m.entry(row, col) * amp;
            }
            amps[target_layout.expand(group, row, target_span.len())] = acc;
        }
    }
}

pub(crate) fn hadamard_register_raw<T: Scalar>(
    amps: &mut [Complex<T>],
    num_qubits: usize,
    span: RegisterSpan,
) {
    let h = real::<T>(std::f64::consts::FRAC_1_SQRT_2);
    for qubit in span.start()..span.end() {
        let stride = 1usize << (num_qubits - 1 - qubit);
        for i in 0..amps.len() {
            if i & stride == 0 {
                let j = i | stride;
                let a = amps[i];
                let b = amps[j];
                amps[i] = (a + b).scale(h);
                amps[j] = (a - b).scale(h);
            }
        }
    }
}

/// Unnormalized post-selection: returns the kept amplitudes (span removed)
/// and the branch probability relative to the input norm.
pub(crate) fn post_select_raw<T: Scalar>(
    amps: &[Complex<T>],
    num_qubits: usize,
    span: RegisterSpan,
    value: usize,
) -> (Vec<Complex<T>>, T) {
    let layout = SpanLayout::new(num_qubits, span);
    let mut kept = vec![Complex::new(T::zero(), T::zero()); amps.len() >> span.len()];
    let mut probability = T::zero();
    for (i, a) in amps.iter().enumerate() {
        if layout.sub_index(i) == value {
            probability += a.norm_sqr();
            kept[layout.strip(i, span.len())] = *a;
        }
    }
    (kept, probability)
}
