//! The input-driven quantum chip.
//!
//! A fixed circuit applies whatever real operator it is handed as a quantum
//! state: the N×N matrix is flattened column-major into a 2n-qubit
//! vec-encoding |o⟩ (column register first, row register second), every
//! matrix unit |r⟩⟨c| is applied to the data register conditioned on the
//! encoding register reading |c⟩|r⟩, the column register goes through a
//! Hadamard readout, and post-selecting |0…0⟩ there leaves the image O|ψ⟩
//! spread over the matched row/data pairs |r⟩|r⟩.
//!
//! The success probability of that post-selection is ‖Oψ‖²/(N·‖O‖²_F); the
//! closed form is exposed separately in [`success_probability`] so the gate
//! pipeline and the formula can be cross-checked against each other.

use num_complex::Complex;
use thiserror::Error;

use crate::scalar::{real, Scalar};
use crate::statevec::{
    controlled_apply_raw, hadamard_register_raw, post_select_raw, GateMatrix, PureState,
    RegisterSpan, StateError, MAX_QUBITS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChipError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error("operator dimension {dim} is not a power of two of at least 2")]
    BadDimension { dim: usize },
    #[error("operator entry ({row}, {col}) is not finite")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("operator has zero Frobenius norm")]
    ZeroOperator,
    #[error("encoded state has non-real amplitudes (max |imag| = {max_imag})")]
    NonRealAmplitudes { max_imag: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("chip registers need {requested} qubits, above the {MAX_QUBITS}-qubit cap")]
    TooManyQubits { requested: usize },
    #[error("operator annihilates the data state (success probability {probability})")]
    AnnihilatesData { probability: f64 },
}

/// Real N×N matrix, N a power of two, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct RealOperator<T> {
    dim: usize,
    entries: Vec<T>,
}

impl<T: Scalar> RealOperator<T> {
    pub fn new(dim: usize, entries: Vec<T>) -> Result<Self, ChipError> {
        if dim < 2 || !dim.is_power_of_two() {
            return Err(ChipError::BadDimension { dim });
        }
        if entries.len() != dim * dim {
            return Err(ChipError::DimensionMismatch {
                expected: dim * dim,
                actual: entries.len(),
            });
        }
        for (i, e) in entries.iter().enumerate() {
            if !e.is_finite() {
                return Err(ChipError::NonFiniteEntry {
                    row: i / dim,
                    col: i % dim,
                });
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, ChipError> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(ChipError::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        Self::new(dim, entries)
    }

    pub fn zeros(dim: usize) -> Result<Self, ChipError> {
        Self::new(dim, vec![T::zero(); dim * dim])
    }

    pub fn identity(dim: usize) -> Result<Self, ChipError> {
        let mut op = Self::zeros(dim)?;
        for i in 0..dim {
            op.entries[i * dim + i] = T::one();
        }
        Ok(op)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_qubits(&self) -> usize {
        self.dim.trailing_zeros() as usize
    }

    pub fn entry(&self, row: usize, col: usize) -> T {
        self.entries[row * self.dim + col]
    }

    pub fn set_entry(&mut self, row: usize, col: usize, value: T) {
        self.entries[row * self.dim + col] = value;
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn frobenius_norm(&self) -> T {
        self.entries.iter().map(|&e| e * e).sum::<T>().sqrt()
    }

    pub fn transpose(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.dim {
            for c in 0..self.dim {
                out.entries[c * self.dim + r] = self.entry(r, c);
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self, ChipError> {
        if self.dim != rhs.dim {
            return Err(ChipError::DimensionMismatch {
                expected: self.dim,
                actual: rhs.dim,
            });
        }
        let mut out = Self::zeros(self.dim)?;
        for r in 0..self.dim {
            for k in 0..self.dim {
                let lhs = self.entry(r, k);
                if lhs == T::zero() {
                    continue;
                }
                for c in 0..self.dim {
                    out.entries[r * self.dim + c] += lhs * rhs.entry(k, c);
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, ChipError> {
        if self.dim != rhs.dim {
            return Err(ChipError::DimensionMismatch {
                expected: self.dim,
                actual: rhs.dim,
            });
        }
        let entries = self
            .entries
            .iter()
            .zip(&rhs.entries)
            .map(|(&a, &b)| a + b)
            .collect();
        Self::new(self.dim, entries)
    }

    pub fn kron(&self, rhs: &Self) -> Self {
        let dim = self.dim * rhs.dim;
        let mut entries = vec![T::zero(); dim * dim];
        for r1 in 0..self.dim {
            for c1 in 0..self.dim {
                let factor = self.entry(r1, c1);
                for r2 in 0..rhs.dim {
                    for c2 in 0..rhs.dim {
                        entries[(r1 * rhs.dim + r2) * dim + (c1 * rhs.dim + c2)] =
                            factor * rhs.entry(r2, c2);
                    }
                }
            }
        }
        Self { dim, entries }
    }

    /// Matrix-vector product on complex amplitudes.
    pub fn apply(&self, v: &[Complex<T>]) -> Result<Vec<Complex<T>>, ChipError> {
        if v.len() != self.dim {
            return Err(ChipError::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        Ok((0..self.dim)
            .map(|r| {
                v.iter()
                    .enumerate()
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (c, amp)| {
                        acc + amp.scale(self.entry(r, c))
                    })
            })
            .collect())
    }

    /// Column-major flattening of the matrix divided by its Frobenius norm,
    /// stored as a 2n-qubit state (column register first).
    pub fn vec_encode(&self) -> Result<VecEncodedOperator<T>, ChipError> {
        let n2 = self.dim * self.dim;
        let mut amps = vec![Complex::new(T::zero(), T::zero()); n2];
        for c in 0..self.dim {
            for r in 0..self.dim {
                amps[c * self.dim + r] = Complex::new(self.entry(r, c), T::zero());
            }
        }
        let (state, frob_norm) =
            PureState::normalized(amps).map_err(|_| ChipError::ZeroOperator)?;
        Ok(VecEncodedOperator {
            state,
            frob_norm,
            dim: self.dim,
        })
    }
}

/// An operator shipped as a quantum state: |o⟩ = vec(O)/‖O‖_F plus the norm
/// that restores physical scale.
#[derive(Debug, Clone)]
pub struct VecEncodedOperator<T> {
    state: PureState<T>,
    frob_norm: T,
    dim: usize,
}

impl<T: Scalar> VecEncodedOperator<T> {
    pub fn state(&self) -> &PureState<T> {
        &self.state
    }

    pub fn frob_norm(&self) -> T {
        self.frob_norm
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_data_qubits(&self) -> usize {
        self.dim.trailing_zeros() as usize
    }

    /// Inverse of [`RealOperator::vec_encode`]; rejects states whose
    /// amplitudes have drifted off the real axis.
    pub fn vec_decode(&self) -> Result<RealOperator<T>, ChipError> {
        let mut max_imag = T::zero();
        for a in self.state.amplitudes() {
            max_imag = max_imag.max(a.im.abs());
        }
        if max_imag > T::NORM_TOL {
            return Err(ChipError::NonRealAmplitudes {
                max_imag: max_imag.to_f64().unwrap_or(f64::NAN),
            });
        }
        let mut op = RealOperator::zeros(self.dim)?;
        for c in 0..self.dim {
            for r in 0..self.dim {
                op.set_entry(
                    r,
                    c,
                    self.state.amplitude(c * self.dim + r).re * self.frob_norm,
                );
            }
        }
        Ok(op)
    }
}

/// Unnormalized result of the chip pipeline, before the post-selected state
/// is renormalized. Never fails on annihilation, which makes it the right
/// entry point for exact-expectation estimates.
#[derive(Debug, Clone)]
pub struct ChipRaw<T> {
    success_prob: T,
    num_data_qubits: usize,
    passenger_qubits: usize,
    post_selected: Vec<Complex<T>>,
}

impl<T: Scalar> ChipRaw<T> {
    pub fn success_prob(&self) -> T {
        self.success_prob
    }

    pub fn branch_count(&self) -> usize {
        1usize << self.passenger_qubits
    }

    /// Unnormalized image amplitudes of one passenger branch: entry `r` is
    /// the amplitude of |branch⟩|r⟩|r⟩ in the post-selected state.
    pub fn branch_image(&self, branch: usize) -> Vec<Complex<T>> {
        let n = self.num_data_qubits;
        let dim = 1usize << n;
        (0..dim)
            .map(|r| self.post_selected[(branch << (2 * n)) | (r << n) | r])
            .collect()
    }

    /// Re⟨branch, Y|Φ⟩ against the matched-pair target Σᵣ yᵣ|r⟩|r⟩, reduced
    /// to the diagonal since the chip output has no off-diagonal support.
    pub fn branch_overlap(&self, branch: usize, target: &PureState<T>) -> Result<T, ChipError> {
        let dim = 1usize << self.num_data_qubits;
        if target.dim() != dim {
            return Err(ChipError::DimensionMismatch {
                expected: dim,
                actual: target.dim(),
            });
        }
        let image = self.branch_image(branch);
        Ok(image
            .iter()
            .enumerate()
            .map(|(r, a)| (target.amplitude(r).conj() * a).re)
            .sum())
    }

    /// Renormalized post-selected state over passenger + row + data qubits.
    pub fn normalized_joint(&self) -> Result<PureState<T>, ChipError> {
        let (state, _) = PureState::normalized(self.post_selected.clone()).map_err(|_| {
            ChipError::AnnihilatesData {
                probability: self.success_prob.to_f64().unwrap_or(f64::NAN),
            }
        })?;
        Ok(state)
    }
}

/// Post-selected, renormalized chip output for an arbitrary wire state.
#[derive(Debug, Clone)]
pub struct ChipRun<T> {
    pub joint_state: PureState<T>,
    pub success_prob: T,
}

/// Chip output for a proper vec-encoded operator, with the image and its
/// exact scale pulled out.
#[derive(Debug, Clone)]
pub struct ChipOutput<T> {
    /// Post-selected state over row + data registers, supported on |r⟩|r⟩.
    pub joint_state: PureState<T>,
    /// Probability of reading |0…0⟩ on the column register.
    pub success_prob: T,
    /// Unnormalized image amplitudes; `extracted[r] / scale` is (O·ψ)ᵣ.
    pub extracted: Vec<Complex<T>>,
    /// The documented positive factor 1/(√N · ‖O‖_F).
    pub scale: T,
}

/// Runs the chip pipeline without renormalizing: controlled matrix units,
/// Hadamard readout on the column register, post-selection of |0…0⟩ there.
///
/// `wire` holds `passenger_qubits` leading qubits that ride along untouched
/// (the ancilla index register of indexed shift states), then the column and
/// row registers. `data` is the n-qubit input ψ.
pub fn chip_run_raw<T: Scalar>(
    wire: &PureState<T>,
    passenger_qubits: usize,
    data: &PureState<T>,
) -> Result<ChipRaw<T>, ChipError> {
    let n = data.num_qubits();
    let dim = data.dim();
    if wire.num_qubits() != passenger_qubits + 2 * n {
        return Err(ChipError::DimensionMismatch {
            expected: passenger_qubits + 2 * n,
            actual: wire.num_qubits(),
        });
    }
    let total = wire.num_qubits() + n;
    if total > MAX_QUBITS {
        return Err(ChipError::TooManyQubits { requested: total });
    }

    let joint = wire.tensor(data);
    let mut amps = joint.amplitudes().to_vec();
    let encoding_span = RegisterSpan::new(passenger_qubits, 2 * n);
    let data_span = RegisterSpan::new(passenger_qubits + 2 * n, n);
    for col in 0..dim {
        for row in 0..dim {
            let unit = GateMatrix::matrix_unit(dim, row, col);
            controlled_apply_raw(
                &mut amps,
                total,
                encoding_span,
                col * dim + row,
                &unit,
                data_span,
            );
        }
    }
    let column_span = RegisterSpan::new(passenger_qubits, n);
    hadamard_register_raw(&mut amps, total, column_span);
    let (post_selected, success_prob) = post_select_raw(&amps, total, column_span, 0);
    Ok(ChipRaw {
        success_prob,
        num_data_qubits: n,
        passenger_qubits,
        post_selected,
    })
}

/// [`chip_run_raw`] plus renormalization; fails when the post-selection
/// branch is impossible.
pub fn chip_run<T: Scalar>(
    wire: &PureState<T>,
    passenger_qubits: usize,
    data: &PureState<T>,
) -> Result<(ChipRun<T>, ChipRaw<T>), ChipError> {
    let raw = chip_run_raw(wire, passenger_qubits, data)?;
    if raw.success_prob < T::BRANCH_TOL {
        return Err(ChipError::AnnihilatesData {
            probability: raw.success_prob.to_f64().unwrap_or(f64::NAN),
        });
    }
    let joint_state = raw.normalized_joint()?;
    Ok((
        ChipRun {
            joint_state,
            success_prob: raw.success_prob,
        },
        raw,
    ))
}

/// Emulates O|ψ⟩ through the chip. The extracted image equals O·ψ times
/// `scale` = 1/(√N·‖O‖_F), and the post-selection succeeds with probability
/// ‖Oψ‖²/(N·‖O‖²_F).
pub fn chip_apply<T: Scalar>(
    o: &VecEncodedOperator<T>,
    psi: &PureState<T>,
) -> Result<ChipOutput<T>, ChipError> {
    if psi.num_qubits() != o.num_data_qubits() {
        return Err(ChipError::DimensionMismatch {
            expected: o.num_data_qubits(),
            actual: psi.num_qubits(),
        });
    }
    let (run, raw) = chip_run(o.state(), 0, psi)?;
    let scale = (real::<T>(1.0) / T::from_usize(o.dim()).unwrap().sqrt()) / o.frob_norm();
    Ok(ChipOutput {
        joint_state: run.joint_state,
        success_prob: run.success_prob,
        extracted: raw.branch_image(0),
        scale,
    })
}

/// Closed-form post-selection probability ‖Oψ‖²/(N·‖O‖²_F), the formula
/// counterpart of the empirical branch weight measured by [`chip_apply`].
pub fn success_probability<T: Scalar>(
    o: &RealOperator<T>,
    psi: &PureState<T>,
) -> Result<T, ChipError> {
    if psi.dim() != o.dim() {
        return Err(ChipError::DimensionMismatch {
            expected: o.dim(),
            actual: psi.dim(),
        });
    }
    let frob_sqr = o.entries().iter().map(|&e| e * e).sum::<T>();
    if frob_sqr < T::BRANCH_TOL {
        return Ok(T::zero());
    }
    let image = o.apply(psi.amplitudes())?;
    let image_norm_sqr: T = image.iter().map(|a| a.norm_sqr()).sum();
    Ok(image_norm_sqr / (T::from_usize(o.dim()).unwrap() * frob_sqr))
}

/// Matched-pair target Σᵣ yᵣ|r⟩|r⟩ over row + data registers; the state a
/// client compares the chip output against.
pub fn doubled_target<T: Scalar>(y: &PureState<T>) -> PureState<T> {
    let n = y.num_qubits();
    let mut amps = vec![Complex::new(T::zero(), T::zero()); 1usize << (2 * n)];
    for r in 0..y.dim() {
        amps[(r << n) | r] = y.amplitude(r);
    }
    PureState::from_amplitudes(amps).expect("doubled target norm equals input norm")
}

/// Coefficients of a real 2×2 matrix over the unitary basis {I, X, Z, XZ}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcuCoefficients<T> {
    pub c_i: T,
    pub c_x: T,
    pub c_z: T,
    pub c_xz: T,
}

impl<T: Scalar> LcuCoefficients<T> {
    pub fn coefficients(&self) -> [T; 4] {
        [self.c_i, self.c_x, self.c_z, self.c_xz]
    }

    /// The basis unitaries, in coefficient order. XZ is the product X·Z.
    pub fn basis() -> [GateMatrix<T>; 4] {
        let one = T::one();
        let zero = T::zero();
        [
            GateMatrix::from_real_rows(&[vec![one, zero], vec![zero, one]]),
            GateMatrix::from_real_rows(&[vec![zero, one], vec![one, zero]]),
            GateMatrix::from_real_rows(&[vec![one, zero], vec![zero, -one]]),
            GateMatrix::from_real_rows(&[vec![zero, -one], vec![one, zero]]),
        ]
    }

    pub fn reconstruct(&self) -> RealOperator<T> {
        RealOperator::from_rows(&[
            vec![self.c_i + self.c_z, self.c_x - self.c_xz],
            vec![self.c_x + self.c_xz, self.c_i - self.c_z],
        ])
        .expect("2x2 reconstruction")
    }
}

/// Solves m = c_I·I + c_X·X + c_Z·Z + c_XZ·XZ; the basis is complete for
/// real 2×2 matrices, so this always succeeds on a dim-2 operator.
pub fn lcu_2x2<T: Scalar>(m: &RealOperator<T>) -> Result<LcuCoefficients<T>, ChipError> {
    if m.dim() != 2 {
        return Err(ChipError::DimensionMismatch {
            expected: 2,
            actual: m.dim(),
        });
    }
    let half = real::<T>(0.5);
    Ok(LcuCoefficients {
        c_i: (m.entry(0, 0) + m.entry(1, 1)) * half,
        c_x: (m.entry(0, 1) + m.entry(1, 0)) * half,
        c_z: (m.entry(0, 0) - m.entry(1, 1)) * half,
        c_xz: (m.entry(1, 0) - m.entry(0, 1)) * half,
    })
}

/// One term of the permuted block-diagonal decomposition: a 2×2-block
/// diagonal matrix and the XOR-shift permutation that moves its blocks into
/// place.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutedTerm<T> {
    block_diagonal: RealOperator<T>,
    permutation_bits: Vec<u8>,
}

impl<T: Scalar> PermutedTerm<T> {
    pub fn block_diagonal(&self) -> &RealOperator<T> {
        &self.block_diagonal
    }

    /// Bits b_j of Pᵢ = (⊗ⱼ X^{b_j}) ⊗ I, ordered by tensor factor.
    pub fn permutation_bits(&self) -> &[u8] {
        &self.permutation_bits
    }

    fn block_shift(&self) -> usize {
        self.permutation_bits
            .iter()
            .fold(0usize, |acc, &b| (acc << 1) | b as usize)
    }

    /// Dense form of the permutation: block column k moves to block row k⊕i.
    pub fn permutation_matrix(&self) -> RealOperator<T> {
        let dim = self.block_diagonal.dim();
        let shift = self.block_shift();
        let mut p = RealOperator::zeros(dim).expect("dims validated");
        for col in 0..dim {
            let row = (((col >> 1) ^ shift) << 1) | (col & 1);
            p.set_entry(row, col, T::one());
        }
        p
    }

    /// This term's contribution Oᵢ·Pᵢ to the reconstruction.
    pub fn contribution(&self) -> Result<RealOperator<T>, ChipError> {
        self.block_diagonal.matmul(&self.permutation_matrix())
    }
}

/// O = Σᵢ OᵢPᵢ with N/2 block-diagonal terms.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutedBlockDecomposition<T> {
    dim: usize,
    terms: Vec<PermutedTerm<T>>,
}

impl<T: Scalar> PermutedBlockDecomposition<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[PermutedTerm<T>] {
        &self.terms
    }

    /// Σᵢ Oᵢ·Pᵢ.
    pub fn reconstruct(&self) -> Result<RealOperator<T>, ChipError> {
        let mut total = RealOperator::zeros(self.dim)?;
        for term in &self.terms {
            if term.block_diagonal.dim() != self.dim {
                return Err(ChipError::DimensionMismatch {
                    expected: self.dim,
                    actual: term.block_diagonal.dim(),
                });
            }
            total = total.add(&term.contribution()?)?;
        }
        Ok(total)
    }
}

/// Splits O into N/2 permuted block-diagonal terms: term i's diagonal block
/// at block-row j is the 2×2 block of O at block position (j, j XOR i), and
/// Pᵢ is the XOR-shift by i on the block index.
pub fn permuted_block_decompose<T: Scalar>(o: &RealOperator<T>) -> PermutedBlockDecomposition<T> {
    let dim = o.dim();
    let block_rows = dim / 2;
    let bit_count = o.num_qubits() - 1;
    let terms = (0..block_rows)
        .map(|i| {
            let mut block_diagonal = RealOperator::zeros(dim).expect("dims validated");
            for j in 0..block_rows {
                let src_col = j ^ i;
                for dr in 0..2 {
                    for dc in 0..2 {
                        block_diagonal.set_entry(
                            2 * j + dr,
                            2 * j + dc,
                            o.entry(2 * j + dr, 2 * src_col + dc),
                        );
                    }
                }
            }
            let permutation_bits = (0..bit_count)
                .map(|b| ((i >> (bit_count - 1 - b)) & 1) as u8)
                .collect();
            PermutedTerm {
                block_diagonal,
                permutation_bits,
            }
        })
        .collect();
    PermutedBlockDecomposition { dim, terms }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevec::EstimationMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Op = RealOperator<f64>;
    type State = PureState<f64>;
    type C = Complex<f64>;

    fn random_operator(dim: usize, rng: &mut ChaCha8Rng) -> Op {
        let entries = (0..dim * dim)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        Op::new(dim, entries).unwrap()
    }

    fn random_state(dim: usize, rng: &mut ChaCha8Rng) -> State {
        let amps: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        State::from_real(&amps).unwrap().0
    }

    /// Independent dense oracle for O·ψ.
    fn oracle_matvec(o: &Op, psi: &State) -> Vec<C> {
        (0..o.dim())
            .map(|r| {
                (0..o.dim())
                    .map(|c| psi.amplitude(c).scale(o.entry(r, c)))
                    .sum()
            })
            .collect()
    }

    fn matrix_unit_op(row: usize, col: usize) -> Op {
        let mut op = Op::zeros(2).unwrap();
        op.set_entry(row, col, 1.0);
        op
    }

    // vec-encoding
    // ============

    #[test]
    fn vec_encode_matrix_unit_gives_basis_state() {
        // O₂ = |0⟩⟨1| flattens to basis state 2.
        let encoded = matrix_unit_op(0, 1).vec_encode().unwrap();
        assert!((encoded.state().amplitude(2).re - 1.0).abs() < 1e-15);
        assert!((encoded.frob_norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn vec_encode_column_major_order() {
        // [[a, c], [b, d]] reads out as (a, b, c, d)/F.
        let (a, b, c, d) = (1.0, 2.0, 3.0, 4.0);
        let op = Op::from_rows(&[vec![a, c], vec![b, d]]).unwrap();
        let encoded = op.vec_encode().unwrap();
        let f = (a * a + b * b + c * c + d * d).sqrt();
        for (i, expected) in [a, b, c, d].iter().enumerate() {
            assert!((encoded.state().amplitude(i).re - expected / f).abs() < 1e-12);
        }
        assert!((encoded.frob_norm() - f).abs() < 1e-12);
    }

    #[test]
    fn vec_encode_identity_is_matched_pair_state() {
        let encoded = Op::identity(2).unwrap().vec_encode().unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((encoded.state().amplitude(0).re - h).abs() < 1e-12);
        assert!((encoded.state().amplitude(3).re - h).abs() < 1e-12);
        assert!(encoded.state().amplitude(1).norm() < 1e-15);
        assert!(encoded.state().amplitude(2).norm() < 1e-15);
    }

    #[test]
    fn vec_encode_rejects_zero_matrix() {
        let err = Op::zeros(2).unwrap().vec_encode().unwrap_err();
        assert_eq!(err, ChipError::ZeroOperator);
    }

    #[test]
    fn vec_decode_round_trips_random_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let op = random_operator(4, &mut rng);
        let decoded = op.vec_encode().unwrap().vec_decode().unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert!((decoded.entry(r, c) - op.entry(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vec_decode_basis_state_gives_matrix_unit() {
        // |o⟩ = |01⟩ with unit norm decodes to O₁ = |1⟩⟨0|.
        let encoded = VecEncodedOperator {
            state: State::basis(2, 1),
            frob_norm: 1.0,
            dim: 2,
        };
        let decoded = encoded.vec_decode().unwrap();
        assert_eq!(decoded, matrix_unit_op(1, 0));
    }

    #[test]
    fn vec_decode_rejects_complex_amplitudes() {
        let amps = vec![
            C::new(0.0, 1.0),
            C::new(0.0, 0.0),
            C::new(0.0, 0.0),
            C::new(0.0, 0.0),
        ];
        let encoded = VecEncodedOperator {
            state: State::from_amplitudes(amps).unwrap(),
            frob_norm: 1.0,
            dim: 2,
        };
        assert!(matches!(
            encoded.vec_decode().unwrap_err(),
            ChipError::NonRealAmplitudes { .. }
        ));
    }

    // chip pipeline
    // =============

    #[test]
    fn chip_output_has_matched_pair_structure() {
        // Joint state ∝ (aα+cβ)|00⟩ + (bα+dβ)|11⟩ for O = [[a,c],[b,d]].
        let (a, b, c, d) = (0.6, -0.8, 1.2, 0.4);
        let (alpha, beta) = (0.3, -0.7);
        let op = Op::from_rows(&[vec![a, c], vec![b, d]]).unwrap();
        let (psi, _) = State::from_real(&[alpha, beta]).unwrap();
        let out = chip_apply(&op.vec_encode().unwrap(), &psi).unwrap();
        let raw = [a * alpha + c * beta, b * alpha + d * beta];
        let norm = (raw[0] * raw[0] + raw[1] * raw[1]).sqrt();
        assert!((out.joint_state.amplitude(0b00).re - raw[0] / norm).abs() < 1e-12);
        assert!((out.joint_state.amplitude(0b11).re - raw[1] / norm).abs() < 1e-12);
        assert!(out.joint_state.amplitude(0b01).norm() < 1e-15);
        assert!(out.joint_state.amplitude(0b10).norm() < 1e-15);
    }

    #[test]
    fn chip_identity_passes_data_through_at_quarter_probability() {
        let op = Op::identity(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = random_state(2, &mut rng);
        let out = chip_apply(&op.vec_encode().unwrap(), &psi).unwrap();
        assert!((out.success_prob - 0.25).abs() < 1e-12);
        for r in 0..2 {
            let recovered = out.extracted[r].unscale(out.scale);
            assert!((recovered - psi.amplitude(r)).norm() < 1e-12);
        }
    }

    #[test]
    fn chip_matches_dense_oracle_on_random_operators() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let op = random_operator(8, &mut rng);
            let psi = random_state(8, &mut rng);
            let out = chip_apply(&op.vec_encode().unwrap(), &psi).unwrap();
            let expected = oracle_matvec(&op, &psi);
            for (r, e) in expected.iter().enumerate() {
                assert!(
                    (out.extracted[r].unscale(out.scale) - e).norm() < 1e-9,
                    "component {r} disagrees with the dense product"
                );
            }
        }
    }

    #[test]
    fn chip_rejects_annihilated_data() {
        let op = matrix_unit_op(1, 0);
        let err = chip_apply(&op.vec_encode().unwrap(), &State::basis(1, 1)).unwrap_err();
        assert!(matches!(err, ChipError::AnnihilatesData { .. }));
    }

    #[test]
    fn chip_is_linear_in_the_encoding_register() {
        // vec(A) − vec(B), renormalized, extracts (A−B)ψ up to scale.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_operator(4, &mut rng);
        let b = random_operator(4, &mut rng);
        let psi = random_state(4, &mut rng);
        let ea = a.vec_encode().unwrap();
        let eb = b.vec_encode().unwrap();
        let diff: Vec<C> = ea
            .state()
            .amplitudes()
            .iter()
            .zip(eb.state().amplitudes())
            .map(|(x, y)| x.scale(ea.frob_norm()) - y.scale(eb.frob_norm()))
            .collect();
        let (wire, diff_norm) = State::normalized(diff).unwrap();
        let raw = chip_run_raw(&wire, 0, &psi).unwrap();
        let image = raw.branch_image(0);
        let mut difference = a.clone();
        for r in 0..4 {
            for c in 0..4 {
                difference.set_entry(r, c, a.entry(r, c) - b.entry(r, c));
            }
        }
        let expected = oracle_matvec(&difference, &psi);
        let scale = 1.0 / (2.0 * diff_norm);
        for (r, e) in expected.iter().enumerate() {
            assert!((image[r] - e.scale(scale)).norm() < 1e-12);
        }
    }

    #[test]
    fn passenger_register_rides_along_per_branch() {
        // Wire = |1⟩ ⊗ vec(O): the single populated branch carries O·ψ.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let op = random_operator(2, &mut rng);
        let psi = random_state(2, &mut rng);
        let encoded = op.vec_encode().unwrap();
        let wire = State::basis(1, 1).tensor(encoded.state());
        let raw = chip_run_raw(&wire, 1, &psi).unwrap();
        assert_eq!(raw.branch_count(), 2);
        let empty = raw.branch_image(0);
        assert!(empty.iter().all(|a| a.norm() < 1e-15));
        let expected = oracle_matvec(&op, &psi);
        let scale = 1.0 / (std::f64::consts::SQRT_2 * encoded.frob_norm());
        let busy = raw.branch_image(1);
        for (r, e) in expected.iter().enumerate() {
            assert!((busy[r] - e.scale(scale)).norm() < 1e-12);
        }
    }

    // success probability
    // ===================

    #[test]
    fn success_probability_of_annihilating_pair_is_zero() {
        let op = matrix_unit_op(1, 0);
        let p = success_probability(&op, &State::basis(1, 1)).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn success_probability_identity_is_quarter() {
        let op = Op::identity(2).unwrap();
        let p = success_probability(&op, &State::basis(1, 0)).unwrap();
        assert!((p - 0.25).abs() < 1e-15);
    }

    #[test]
    fn success_probability_matches_chip_branch_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let op = random_operator(4, &mut rng);
            let psi = random_state(4, &mut rng);
            let formula = success_probability(&op, &psi).unwrap();
            let empirical = chip_apply(&op.vec_encode().unwrap(), &psi)
                .unwrap()
                .success_prob;
            assert!((formula - empirical).abs() < 1e-12);
        }
    }

    #[test]
    fn success_probability_is_bounded_by_one_over_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &dim in &[2usize, 4, 8] {
            for _ in 0..20 {
                let op = random_operator(dim, &mut rng);
                let psi = random_state(dim, &mut rng);
                let p = success_probability(&op, &psi).unwrap();
                assert!(p >= 0.0);
                assert!(p <= 1.0 / dim as f64 + 1e-12);
            }
        }
        // Rank-1 operator aligned with the data saturates the bound.
        let mut aligned = Op::zeros(4).unwrap();
        let v = [0.5, 0.5, 0.5, 0.5];
        for r in 0..4 {
            for c in 0..4 {
                aligned.set_entry(r, c, v[r] * v[c]);
            }
        }
        let psi = State::from_real(&v).unwrap().0;
        let p = success_probability(&aligned, &psi).unwrap();
        assert!((p - 0.25).abs() < 1e-12);
    }

    // LCU
    // ===

    #[test]
    fn lcu_of_the_four_matrix_units() {
        let cases = [
            (matrix_unit_op(0, 0), [0.5, 0.0, 0.5, 0.0]),
            (matrix_unit_op(1, 0), [0.0, 0.5, 0.0, 0.5]),
            (Op::identity(2).unwrap(), [1.0, 0.0, 0.0, 0.0]),
        ];
        for (op, expected) in cases {
            let coeffs = lcu_2x2(&op).unwrap();
            assert_eq!(coeffs.coefficients(), expected, "coefficients for {op:?}");
            let rebuilt = coeffs.reconstruct();
            for r in 0..2 {
                for c in 0..2 {
                    assert!((rebuilt.entry(r, c) - op.entry(r, c)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn lcu_route_matches_direct_nonunitary_application() {
        // Unitary applications combined with the coefficients reproduce the
        // direct weighted application of the non-unitary gate.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let op = random_operator(2, &mut rng);
            let coeffs = lcu_2x2(&op).unwrap();
            let state = random_state(2, &mut rng);
            let span = RegisterSpan::new(0, 1);

            let gate = GateMatrix::from_real_rows(&[
                vec![op.entry(0, 0), op.entry(0, 1)],
                vec![op.entry(1, 0), op.entry(1, 1)],
            ]);
            let direct = match state.apply_matrix(&gate, span) {
                Ok((out, w)) => out
                    .amplitudes()
                    .iter()
                    .map(|a| a.scale(w.sqrt()))
                    .collect::<Vec<_>>(),
                Err(_) => continue,
            };

            let mut combined = vec![C::new(0.0, 0.0); 2];
            for (c, unitary) in coeffs.coefficients().iter().zip(LcuCoefficients::basis()) {
                let (out, w) = state.apply_matrix(&unitary, span).unwrap();
                assert!((w - 1.0_f64).abs() < 1e-12);
                for (slot, amp) in combined.iter_mut().zip(out.amplitudes()) {
                    *slot += amp.scale(*c);
                }
            }
            for (d, l) in direct.iter().zip(&combined) {
                assert!((d - l).norm() < 1e-12);
            }
        }
    }

    // permuted block-diagonal decomposition
    // =====================================

    #[test]
    fn decomposition_routes_blocks_by_xor() {
        // Fill block (j, k) of an 8×8 matrix with marker 10·(j⊕k) + j; term
        // i must then hold markers 10·i + j on its diagonal.
        let mut op = Op::zeros(8).unwrap();
        for j in 0..4usize {
            for k in 0..4usize {
                let marker = 10.0 * (j ^ k) as f64 + j as f64 + 1.0;
                for dr in 0..2 {
                    for dc in 0..2 {
                        op.set_entry(2 * j + dr, 2 * k + dc, marker);
                    }
                }
            }
        }
        let decomposition = permuted_block_decompose(&op);
        assert_eq!(decomposition.terms().len(), 4);
        for (i, term) in decomposition.terms().iter().enumerate() {
            for j in 0..4usize {
                let expected = 10.0 * i as f64 + j as f64 + 1.0;
                assert_eq!(term.block_diagonal().entry(2 * j, 2 * j), expected);
            }
        }
        let rebuilt = decomposition.reconstruct().unwrap();
        for r in 0..8 {
            for c in 0..8 {
                assert!((rebuilt.entry(r, c) - op.entry(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_diagonal_input_concentrates_in_term_zero() {
        let mut op = Op::zeros(8).unwrap();
        for j in 0..4 {
            for dr in 0..2 {
                for dc in 0..2 {
                    op.set_entry(2 * j + dr, 2 * j + dc, (j + 1) as f64);
                }
            }
        }
        let decomposition = permuted_block_decompose(&op);
        assert_eq!(decomposition.terms()[0].block_diagonal(), &op);
        for term in &decomposition.terms()[1..] {
            assert!(term.block_diagonal().entries().iter().all(|&e| e == 0.0));
        }
    }

    #[test]
    fn random_matrices_reconstruct_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for &dim in &[2usize, 4, 8, 16] {
            for _ in 0..10 {
                let op = random_operator(dim, &mut rng);
                let rebuilt = permuted_block_decompose(&op).reconstruct().unwrap();
                for r in 0..dim {
                    for c in 0..dim {
                        assert!((rebuilt.entry(r, c) - op.entry(r, c)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn dim_two_decomposition_is_the_input() {
        let op = Op::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let decomposition = permuted_block_decompose(&op);
        assert_eq!(decomposition.terms().len(), 1);
        assert_eq!(decomposition.terms()[0].block_diagonal(), &op);
        assert!(decomposition.terms()[0].permutation_bits().is_empty());
        assert_eq!(decomposition.reconstruct().unwrap(), op);
    }

    #[test]
    fn permutations_are_self_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let op = random_operator(16, &mut rng);
        for term in permuted_block_decompose(&op).terms() {
            let p = term.permutation_matrix();
            let square = p.matmul(&p).unwrap();
            let identity = Op::identity(16).unwrap();
            for r in 0..16 {
                for c in 0..16 {
                    assert_eq!(square.entry(r, c), identity.entry(r, c));
                }
            }
        }
    }

    // estimation plumbing
    // ===================

    #[test]
    fn doubled_target_overlap_recovers_loss_value() {
        // ⟨Y|Φ⟩ · √N · ‖O‖_F equals ⟨y|O|x⟩ when Φ is the unnormalized
        // post-selected output.
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let op = random_operator(4, &mut rng);
        let x = random_state(4, &mut rng);
        let y = random_state(4, &mut rng);
        let encoded = op.vec_encode().unwrap();
        let raw = chip_run_raw(encoded.state(), 0, &x).unwrap();
        let raw_overlap = raw.branch_overlap(0, &y).unwrap();
        let expected: f64 = oracle_matvec(&op, &x)
            .iter()
            .zip(y.amplitudes())
            .map(|(img, t)| (t.conj() * img).re)
            .sum();
        let recovered = raw_overlap * 2.0 * encoded.frob_norm();
        assert!((recovered - expected).abs() < 1e-12);

        // The shot estimator against the doubled target converges to the
        // same value through the normalized state.
        let (run, _) = chip_run(encoded.state(), 0, &x).unwrap();
        let target = doubled_target(&y);
        let exact = run
            .joint_state
            .overlap_real_estimate(&target, EstimationMode::Exact, 0)
            .unwrap();
        assert!((exact * run.success_prob.sqrt() - raw_overlap).abs() < 1e-12);
    }
}
