//! Server-side parameterized operator and shift-state preparation.
//!
//! The ansatz is the minimal real-orthogonal family: per layer one
//! Y-rotation per qubit followed by controlled-Z entanglers on a chain
//! (closed into a ring from three qubits up; a two-qubit ring would apply
//! the same CZ twice). Real rotations and real entanglers keep O(θ), its
//! vec-encoding, and the inner-product loss all real.
//!
//! The loss L = ⟨y|O(θ)|x⟩ is linear in O, so the amplitude-level shift rule
//! is exact: with θᵢ appearing in a single R_y gate,
//! L(θ) = A·cos(θᵢ/2) + B·sin(θᵢ/2) and
//!
//! ∂L/∂θᵢ = [L(θ + s·eᵢ) − L(θ − s·eᵢ)] / (4·sin(s/2))
//!
//! for any shift s in (0, 2π). Shift states transmit the operator difference
//! vec(O(θ+s·eᵢ)) − vec(O(θ−s·eᵢ)) (always plus minus minus, so recovered
//! values carry the ordinary derivative sign); the norm of that unnormalized
//! difference is the `descale` factor the server keeps so clients' raw
//! estimates can be rescaled to physical units.

use num_complex::Complex;
use thiserror::Error;

use crate::chip::{ChipError, RealOperator};
use crate::scalar::{real, Scalar};
use crate::statevec::{PureState, StateError, MAX_QUBITS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter vector has length {actual}, ansatz expects {expected}")]
    ParameterCount { expected: usize, actual: usize },
    #[error("parameter {index} is not finite")]
    NonFiniteParameter { index: usize },
    #[error("parameter index {index} out of range for {count} parameters")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("parameter index {index} repeated in shift selection")]
    DuplicateIndex { index: usize },
    #[error("shift selection is empty")]
    EmptyIndices,
    #[error("indexed shift state needs at least two parameters")]
    TooFewIndices,
    #[error("shift {shift} outside the open interval (0, 2π)")]
    InvalidShift { shift: f64 },
    #[error("shifted operators coincide; the shift state is degenerate")]
    DegenerateShift,
    #[error(
        "index register would push the chip to {qubits} qubits, above the {MAX_QUBITS}-qubit cap"
    )]
    IndexRegisterOverflow { qubits: usize },
    #[error("raw estimate has {actual} entries, shift spec expects {expected}")]
    RawShapeMismatch { expected: usize, actual: usize },
    #[error("example dimension {actual} does not match the {expected}-dimensional ansatz")]
    ExampleDimension { expected: usize, actual: usize },
    #[error(transparent)]
    Chip(#[from] ChipError),
    #[error(transparent)]
    State(#[from] StateError),
}

/// Circuit layout: `num_layers` repetitions of per-qubit Y-rotations plus a
/// CZ entangler chain/ring. One parameter per rotation gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnsatzSpec {
    num_qubits: usize,
    num_layers: usize,
}

impl AnsatzSpec {
    /// # Panics
    /// Panics when `num_qubits` or `num_layers` is zero.
    pub fn new(num_qubits: usize, num_layers: usize) -> Self {
        assert!(num_qubits >= 1, "ansatz needs at least one qubit");
        assert!(num_layers >= 1, "ansatz needs at least one layer");
        Self {
            num_qubits,
            num_layers,
        }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn param_count(&self) -> usize {
        self.num_qubits * self.num_layers
    }

    pub fn dim(&self) -> usize {
        1usize << self.num_qubits
    }

    /// CZ pairs of one entangling layer; empty on a single qubit.
    fn entangler_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.num_qubits;
        let mut pairs: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|q| (q, q + 1)).collect();
        if n >= 3 {
            pairs.push((n - 1, 0));
        }
        pairs
    }
}

/// The model parameters θ, in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, ModelError> {
        for (index, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(ModelError::NonFiniteParameter { index });
            }
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![T::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, index: usize) -> T {
        self.values[index]
    }

    /// Copy with `delta` added to component `index`.
    pub fn shifted(&self, index: usize, delta: T) -> Self {
        let mut values = self.values.clone();
        values[index] += delta;
        Self { values }
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

/// One training pair of normalized states.
#[derive(Debug, Clone)]
pub struct LabeledExample<T> {
    x: PureState<T>,
    y: PureState<T>,
}

impl<T: Scalar> LabeledExample<T> {
    pub fn new(x: PureState<T>, y: PureState<T>) -> Result<Self, ModelError> {
        if x.dim() != y.dim() {
            return Err(ModelError::ExampleDimension {
                expected: x.dim(),
                actual: y.dim(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &PureState<T> {
        &self.x
    }

    pub fn y(&self) -> &PureState<T> {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }
}

/// How shifted operator encodings are superposed on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    /// One state per shifted parameter.
    Single,
    /// One state summing the shift differences of several parameters; the
    /// client recovers the sum of their partial derivatives.
    Multi,
    /// One state with a leading ancilla register indexing the shifted
    /// parameter; each branch recovers one partial derivative.
    Indexed,
}

/// Classical metadata traveling with a shift state: which parameters were
/// shifted, by how much, and the descale factor restoring physical units.
/// The difference is always vec(O₊) − vec(O₋).
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftStateSpec<T> {
    pub mode: ShiftMode,
    pub indices: Vec<usize>,
    pub shift: T,
    pub descale: T,
}

impl<T: Scalar> ShiftStateSpec<T> {
    /// Qubits of the transmitted state: 2n for the encoding registers plus
    /// the ancilla index register in indexed mode.
    pub fn wire_qubits(&self, num_data_qubits: usize) -> usize {
        2 * num_data_qubits + self.index_register_qubits()
    }

    pub fn index_register_qubits(&self) -> usize {
        match self.mode {
            ShiftMode::Single | ShiftMode::Multi => 0,
            ShiftMode::Indexed => index_register_width(self.indices.len()),
        }
    }
}

fn index_register_width(branches: usize) -> usize {
    usize::BITS as usize - (branches - 1).leading_zeros() as usize
}

fn ry_matrix<T: Scalar>(theta: T) -> RealOperator<T> {
    let half = theta / real::<T>(2.0);
    let (s, c) = (half.sin(), half.cos());
    RealOperator::from_rows(&[vec![c, -s], vec![s, c]]).expect("2x2 rotation")
}

fn check_theta<T: Scalar>(spec: &AnsatzSpec, theta: &ParamVector<T>) -> Result<(), ModelError> {
    if theta.len() != spec.param_count() {
        return Err(ModelError::ParameterCount {
            expected: spec.param_count(),
            actual: theta.len(),
        });
    }
    Ok(())
}

/// O(θ): layers of ⊗ R_y(θ) followed by the CZ entangler, composed in
/// circuit order. Real orthogonal by construction.
pub fn build_operator<T: Scalar>(
    spec: &AnsatzSpec,
    theta: &ParamVector<T>,
) -> Result<RealOperator<T>, ModelError> {
    check_theta(spec, theta)?;
    let n = spec.num_qubits();
    let pairs = spec.entangler_pairs();

    let mut entangler = RealOperator::identity(spec.dim())?;
    for index in 0..spec.dim() {
        let mut sign = T::one();
        for &(a, b) in &pairs {
            let bit_a = (index >> (n - 1 - a)) & 1;
            let bit_b = (index >> (n - 1 - b)) & 1;
            if bit_a == 1 && bit_b == 1 {
                sign = -sign;
            }
        }
        entangler.set_entry(index, index, sign);
    }

    let mut operator = RealOperator::identity(spec.dim())?;
    for layer in 0..spec.num_layers() {
        let mut rotations = ry_matrix(theta.get(layer * n));
        for qubit in 1..n {
            rotations = rotations.kron(&ry_matrix(theta.get(layer * n + qubit)));
        }
        operator = rotations.matmul(&operator)?;
        if !pairs.is_empty() {
            operator = entangler.matmul(&operator)?;
        }
    }
    Ok(operator)
}

/// L(x, y) = ⟨y|O(θ)|x⟩, real for this operator family and bounded by 1 in
/// magnitude.
pub fn loss<T: Scalar>(
    spec: &AnsatzSpec,
    theta: &ParamVector<T>,
    example: &LabeledExample<T>,
) -> Result<T, ModelError> {
    if example.dim() != spec.dim() {
        return Err(ModelError::ExampleDimension {
            expected: spec.dim(),
            actual: example.dim(),
        });
    }
    let operator = build_operator(spec, theta)?;
    let image = operator.apply(example.x().amplitudes())?;
    Ok(image
        .iter()
        .zip(example.y().amplitudes())
        .map(|(img, t)| (t.conj() * img).re)
        .sum())
}

/// Exact gradient by the amplitude shift rule at s = π:
/// ∂L/∂θᵢ = [L(θ + π·eᵢ) − L(θ − π·eᵢ)] / 4.
pub fn exact_gradient<T: Scalar>(
    spec: &AnsatzSpec,
    theta: &ParamVector<T>,
    example: &LabeledExample<T>,
) -> Result<Vec<T>, ModelError> {
    check_theta(spec, theta)?;
    let pi = real::<T>(std::f64::consts::PI);
    let quarter = real::<T>(0.25);
    (0..theta.len())
        .map(|i| {
            let plus = loss(spec, &theta.shifted(i, pi), example)?;
            let minus = loss(spec, &theta.shifted(i, -pi), example)?;
            Ok((plus - minus) * quarter)
        })
        .collect()
}

fn validate_shift<T: Scalar>(shift: T) -> Result<(), ModelError> {
    let two_pi = real::<T>(std::f64::consts::TAU);
    if !(shift > T::zero() && shift < two_pi) {
        return Err(ModelError::InvalidShift {
            shift: shift.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

fn validate_indices(indices: &[usize], count: usize) -> Result<(), ModelError> {
    if indices.is_empty() {
        return Err(ModelError::EmptyIndices);
    }
    let mut seen = vec![false; count];
    for &index in indices {
        if index >= count {
            return Err(ModelError::IndexOutOfRange { index, count });
        }
        if seen[index] {
            return Err(ModelError::DuplicateIndex { index });
        }
        seen[index] = true;
    }
    Ok(())
}

/// Column-major flattening of O(θ+s·eᵢ) − O(θ−s·eᵢ), unnormalized.
fn shift_difference<T: Scalar>(
    spec: &AnsatzSpec,
    theta: &ParamVector<T>,
    index: usize,
    shift: T,
) -> Result<Vec<Complex<T>>, ModelError> {
    let plus = build_operator(spec, &theta.shifted(index, shift))?;
    let minus = build_operator(spec, &theta.shifted(index, -shift))?;
    let dim = spec.dim();
    let mut flat = Vec::with_capacity(dim * dim);
    for c in 0..dim {
        for r in 0..dim {
            flat.push(Complex::new(
                plus.entry(r, c) - minus.entry(r, c),
                T::zero(),
            ));
        }
    }
    Ok(flat)
}

fn finish_shift_state<T: Scalar>(
    flat: Vec<Complex<T>>,
    mode: ShiftMode,
    indices: Vec<usize>,
    shift: T,
) -> Result<(PureState<T>, ShiftStateSpec<T>), ModelError> {
    let (state, descale) = PureState::normalized(flat).map_err(|_| ModelError::DegenerateShift)?;
    Ok((
        state,
        ShiftStateSpec {
            mode,
            indices,
            shift,
            descale,
        },
    ))
}

/// Shift state for a single parameter: state ∝ vec(O₊) − vec(O₋), with the
/// difference norm recorded as `descale`.
pub fn prepare_shift_state<T: Scalar>(
    spec: &AnsatzSpec,
    theta: &ParamVector<T>,
    index: usize,
    shift: T,
) -> Result<(PureState<T>, ShiftStateSpec<T>), ModelError> {
    check_theta(spec, theta)?;
    validate_indices(&[index], spec.param_count())?;
    validate_shift(shift)?;
    let flat = shift_difference(spec, theta, index, shift)?;
    finish_shift_state(flat, ShiftMode::Single, vec![index], shift)
}

/// Shift state superposing several parameters: state ∝ Σᵢ (vec(O₊ⁱ) −
/// vec(O₋ⁱ)). The client's estimate recovers the sum of the selected
/// partial derivatives.
pub fn prepare_multi_shift_state<T: Scalar>(
    spec: &AnsatzSpec,
    theta: &ParamVector<T>,
    indices: &[usize],
    shift: T,
) -> Result<(PureState<T>, ShiftStateSpec<T>), ModelError> {
    check_theta(spec, theta)?;
    validate_indices(indices, spec.param_count())?;
    validate_shift(shift)?;
    let dim = spec.dim();
    let mut total = vec![Complex::new(T::zero(), T::zero()); dim * dim];
    for &index in indices {
        for (slot, value) in total
            .iter_mut()
            .zip(shift_difference(spec, theta, index, shift)?)
        {
            *slot += value;
        }
    }
    finish_shift_state(total, ShiftMode::Multi, indices.to_vec(), shift)
}

/// Shift state with a leading ancilla register: state ∝ Σⱼ |j⟩ ⊗ (vec(O₊ʲ) −
/// vec(O₋ʲ)). Run through the chip with the ancilla as passenger, branch j
/// recovers the partial derivative of `indices[j]`, all under one shared
/// descale.
pub fn prepare_indexed_shift_state<T: Scalar>(
    spec: &AnsatzSpec,
    theta: &ParamVector<T>,
    indices: &[usize],
    shift: T,
) -> Result<(PureState<T>, ShiftStateSpec<T>), ModelError> {
    check_theta(spec, theta)?;
    validate_indices(indices, spec.param_count())?;
    if indices.len() < 2 {
        return Err(ModelError::TooFewIndices);
    }
    validate_shift(shift)?;
    let width = index_register_width(indices.len());
    // The chip will also hold the n-qubit data register.
    let chip_qubits = width + 3 * spec.num_qubits();
    if chip_qubits > MAX_QUBITS {
        return Err(ModelError::IndexRegisterOverflow {
            qubits: chip_qubits,
        });
    }
    let block = spec.dim() * spec.dim();
    let mut total = vec![Complex::new(T::zero(), T::zero()); block << width];
    for (branch, &index) in indices.iter().enumerate() {
        let flat = shift_difference(spec, theta, index, shift)?;
        total[branch * block..(branch + 1) * block].copy_from_slice(&flat);
    }
    finish_shift_state(total, ShiftMode::Indexed, indices.to_vec(), shift)
}

/// Rescales raw chip estimates into gradient values: each entry is
/// multiplied by descale·√N and divided by 4·sin(s/2).
///
/// Single and multi specs expect one raw value (the latter yielding the sum
/// of the selected partials); indexed specs expect one value per branch.
pub fn recover_partials<T: Scalar>(
    raw: &[T],
    spec: &ShiftStateSpec<T>,
    dim: usize,
) -> Result<Vec<T>, ModelError> {
    let expected = match spec.mode {
        ShiftMode::Single | ShiftMode::Multi => 1,
        ShiftMode::Indexed => spec.indices.len(),
    };
    if raw.len() != expected {
        return Err(ModelError::RawShapeMismatch {
            expected,
            actual: raw.len(),
        });
    }
    let half_shift = spec.shift / real::<T>(2.0);
    let factor =
        spec.descale * T::from_usize(dim).unwrap().sqrt() / (real::<T>(4.0) * half_shift.sin());
    Ok(raw.iter().map(|&r| r * factor).collect())
}
