//! Dense statevector simulation.
//!
//! Qubit `0` is the most significant bit of the amplitude index, so the
//! amplitude of `|q0 q1 … q(n-1)⟩` lives at index `q0·2^(n-1) + … + q(n-1)`.
//! All arithmetic is carried out in `f64` complex precision.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest register the simulator accepts.
pub const MAX_QUBITS: usize = 12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Pure state of an `n`-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl QuantumState {
    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        check_size(n_qubits)?;
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[0] = ONE;
        Ok(Self { n_qubits, amps })
    }

    /// Wraps raw amplitudes. The length must be a power of two and the
    /// vector must have unit norm within `1e-10`.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let n_qubits = qubits_for_len(amps.len())?;
        let norm2: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if !norm2.is_finite() || (norm2 - 1.0).abs() > 1e-10 {
            return Err(Error::Contract(format!(
                "amplitudes must have unit norm, got squared norm {norm2}"
            )));
        }
        Ok(Self { n_qubits, amps })
    }

    /// Like [`from_amplitudes`](Self::from_amplitudes) but without the norm
    /// check. Used for intermediate vectors of the adjoint sweep, which are
    /// not normalized.
    pub(crate) fn from_raw(amps: Vec<Complex64>) -> Self {
        let n_qubits = amps.len().trailing_zeros() as usize;
        Self { n_qubits, amps }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Measurement probability of every basis state.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &QuantumState) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    fn bit(&self, qubit: usize) -> usize {
        1 << (self.n_qubits - 1 - qubit)
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.n_qubits {
            return Err(Error::Index(format!(
                "qubit {qubit} out of range for a {}-qubit state",
                self.n_qubits
            )));
        }
        Ok(())
    }

    /// Applies a 2×2 matrix `[[m00, m01], [m10, m11]]` to `qubit`.
    pub fn apply_matrix1(&mut self, qubit: usize, m: &[[Complex64; 2]; 2]) -> Result<()> {
        self.check_qubit(qubit)?;
        let bit = self.bit(qubit);
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let j = i | bit;
                let (a, b) = (self.amps[i], self.amps[j]);
                self.amps[i] = m[0][0] * a + m[0][1] * b;
                self.amps[j] = m[1][0] * a + m[1][1] * b;
            }
        }
        Ok(())
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(Error::Index(format!(
                "CNOT control and target coincide ({control})"
            )));
        }
        let (cb, tb) = (self.bit(control), self.bit(target));
        for i in 0..self.amps.len() {
            if i & cb != 0 && i & tb == 0 {
                self.amps.swap(i, i | tb);
            }
        }
        Ok(())
    }

    /// Applies `σ_axis` on `qubit` (identity elsewhere).
    pub fn apply_pauli(&mut self, axis: PauliAxis, qubit: usize) -> Result<()> {
        self.check_qubit(qubit)?;
        let bit = self.bit(qubit);
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let j = i | bit;
                let (a, b) = (self.amps[i], self.amps[j]);
                match axis {
                    PauliAxis::X => {
                        self.amps[i] = b;
                        self.amps[j] = a;
                    }
                    PauliAxis::Y => {
                        self.amps[i] = -I * b;
                        self.amps[j] = I * a;
                    }
                    PauliAxis::Z => self.amps[j] = -b,
                }
            }
        }
        Ok(())
    }

    /// Applies `exp(-i·angle·σ_axis/2)` on `qubit`.
    pub fn apply_rotation(&mut self, axis: PauliAxis, qubit: usize, angle: f64) -> Result<()> {
        self.apply_matrix1(qubit, &rotation_matrix(axis, angle))
    }

    /// In-place form of [`apply_gate`].
    pub fn apply(&mut self, gate: &Gate, params: &[f64]) -> Result<()> {
        gate.validate(self.n_qubits)?;
        match gate.kind {
            GateKind::H => self.apply_matrix1(gate.target, &hadamard_matrix()),
            GateKind::Cnot => self.apply_cnot(gate.control.unwrap_or(usize::MAX), gate.target),
            kind => {
                let angle = gate.angle(params)?;
                let axis = kind.rotation_axis().expect("rotation gate");
                self.apply_rotation(axis, gate.target, angle)
            }
        }
    }

    /// Applies the inverse of `gate`.
    pub fn apply_inverse(&mut self, gate: &Gate, params: &[f64]) -> Result<()> {
        match gate.kind {
            // self-inverse
            GateKind::H | GateKind::Cnot => self.apply(gate, params),
            kind => {
                gate.validate(self.n_qubits)?;
                let angle = gate.angle(params)?;
                let axis = kind.rotation_axis().expect("rotation gate");
                self.apply_rotation(axis, gate.target, -angle)
            }
        }
    }

    /// `⟨σ_axis⟩` on a single qubit.
    pub fn expectation(&self, axis: PauliAxis, qubit: usize) -> Result<f64> {
        self.check_qubit(qubit)?;
        let bit = self.bit(qubit);
        let mut acc = 0.0;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let (a, b) = (self.amps[i], self.amps[i | bit]);
                acc += match axis {
                    PauliAxis::X => 2.0 * (a.conj() * b).re,
                    PauliAxis::Y => 2.0 * (a.conj() * b).im,
                    PauliAxis::Z => a.norm_sqr() - b.norm_sqr(),
                };
            }
        }
        Ok(acc)
    }

    /// Per-qubit `⟨σ_axis⟩` for every qubit, in qubit order.
    pub fn expectations(&self, axis: PauliAxis) -> Vec<f64> {
        (0..self.n_qubits)
            .map(|q| self.expectation(axis, q).expect("qubit in range"))
            .collect()
    }
}

fn check_size(n_qubits: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::Config(format!(
            "qubit count {n_qubits} outside supported range 1..={MAX_QUBITS}"
        )));
    }
    Ok(())
}

fn qubits_for_len(len: usize) -> Result<usize> {
    if len < 2 || !len.is_power_of_two() {
        return Err(Error::Contract(format!(
            "state length {len} is not a power of two ≥ 2"
        )));
    }
    let n = len.trailing_zeros() as usize;
    check_size(n)?;
    Ok(n)
}

/// Minimum qubit count able to hold a `dim`-dimensional amplitude vector.
pub fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim < 2 {
        return Err(Error::Config(format!("dimension {dim} < 2")));
    }
    let n = (usize::BITS - (dim - 1).leading_zeros()) as usize;
    check_size(n)?;
    Ok(n)
}

/// `|0…0⟩` on `n_qubits` qubits.
pub fn zero_state(n_qubits: usize) -> Result<QuantumState> {
    QuantumState::zero(n_qubits)
}

/// Returns `gate` applied to `state`.
pub fn apply_gate(mut state: QuantumState, gate: &Gate, params: &[f64]) -> Result<QuantumState> {
    state.apply(gate, params)?;
    Ok(state)
}

/// Amplitude encoding: `s / ‖s‖₂` stored in the first `s.len()` amplitudes
/// of a `⌈log2 D⌉`-qubit register, remaining amplitudes zero.
pub fn amplitude_encode(s: &[f64]) -> Result<QuantumState> {
    let n = qubits_for_dim(s.len())?;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in amplitude input".into()));
    }
    let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Degenerate(
            "cannot amplitude-encode an all-zero vector".into(),
        ));
    }
    let mut amps = vec![ZERO; 1 << n];
    // leave exactly-unit inputs untouched so they round-trip bit for bit
    let scale = if (norm - 1.0).abs() <= 1e-12 {
        1.0
    } else {
        norm
    };
    for (a, v) in amps.iter_mut().zip(s) {
        *a = Complex64::new(v / scale, 0.0);
    }
    Ok(QuantumState { n_qubits: n, amps })
}

/// Angle encoding: `⊗_j RY(z_j)|0⟩`.
pub fn angle_encode(z: &[f64]) -> Result<QuantumState> {
    check_size(z.len())?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite rotation angle".into()));
    }
    // product state: build amplitudes directly instead of n sweeps
    let mut amps = vec![ONE];
    for &angle in z {
        let (s, c) = (angle / 2.0).sin_cos();
        amps = amps.iter().flat_map(|a| [a * c, a * s]).collect();
    }
    Ok(QuantumState {
        n_qubits: z.len(),
        amps,
    })
}

/// `⟨ψ|σ_axis^(qubit)|ψ⟩`.
pub fn pauli_expectation(state: &QuantumState, axis: PauliAxis, qubit: usize) -> Result<f64> {
    state.expectation(axis, qubit)
}

/// Per-qubit expectations of `σ_axis`, one entry per qubit.
pub fn pauli_expectation_all(state: &QuantumState, axis: PauliAxis) -> Vec<f64> {
    state.expectations(axis)
}

/// Bloch coordinates `(r_x, r_y, r_z)` of a single-qubit state.
pub fn bloch_vector(state: &QuantumState) -> Result<[f64; 3]> {
    if state.n_qubits() != 1 {
        return Err(Error::Contract(format!(
            "Bloch vector requires one qubit, state has {}",
            state.n_qubits()
        )));
    }
    Ok([
        state.expectation(PauliAxis::X, 0)?,
        state.expectation(PauliAxis::Y, 0)?,
        state.expectation(PauliAxis::Z, 0)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

impl PauliAxis {
    pub const ALL: [PauliAxis; 3] = [PauliAxis::X, PauliAxis::Y, PauliAxis::Z];

    pub fn matrix(self) -> [[Complex64; 2]; 2] {
        match self {
            PauliAxis::X => [[ZERO, ONE], [ONE, ZERO]],
            PauliAxis::Y => [[ZERO, -I], [I, ZERO]],
            PauliAxis::Z => [[ONE, ZERO], [ZERO, -ONE]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    H,
    Cnot,
}

impl GateKind {
    /// Generator axis of a rotation gate, `None` for fixed gates.
    pub fn rotation_axis(self) -> Option<PauliAxis> {
        match self {
            GateKind::Rx => Some(PauliAxis::X),
            GateKind::Ry => Some(PauliAxis::Y),
            GateKind::Rz => Some(PauliAxis::Z),
            GateKind::H | GateKind::Cnot => None,
        }
    }
}

/// One gate of a circuit. Rotation angles are read from a parameter vector
/// through `param_slot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gate {
    pub kind: GateKind,
    pub target: usize,
    pub control: Option<usize>,
    pub param_slot: Option<usize>,
}

impl Gate {
    pub fn rotation(axis: PauliAxis, target: usize, slot: usize) -> Self {
        let kind = match axis {
            PauliAxis::X => GateKind::Rx,
            PauliAxis::Y => GateKind::Ry,
            PauliAxis::Z => GateKind::Rz,
        };
        Self {
            kind,
            target,
            control: None,
            param_slot: Some(slot),
        }
    }

    pub fn rx(target: usize, slot: usize) -> Self {
        Self::rotation(PauliAxis::X, target, slot)
    }

    pub fn ry(target: usize, slot: usize) -> Self {
        Self::rotation(PauliAxis::Y, target, slot)
    }

    pub fn rz(target: usize, slot: usize) -> Self {
        Self::rotation(PauliAxis::Z, target, slot)
    }

    pub fn h(target: usize) -> Self {
        Self {
            kind: GateKind::H,
            target,
            control: None,
            param_slot: None,
        }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        Self {
            kind: GateKind::Cnot,
            target,
            control: Some(control),
            param_slot: None,
        }
    }

    /// Qubits the gate touches, control first.
    pub fn qubits(&self) -> Vec<usize> {
        self.control.into_iter().chain([self.target]).collect()
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        for q in self.qubits() {
            if q >= n_qubits {
                return Err(Error::Index(format!(
                    "gate {:?} touches qubit {q} of a {n_qubits}-qubit state",
                    self.kind
                )));
            }
        }
        match (self.kind, self.control) {
            (GateKind::Cnot, None) => Err(Error::Contract("CNOT without control".into())),
            (GateKind::Cnot, Some(c)) if c == self.target => Err(Error::Index(format!(
                "CNOT control and target coincide ({c})"
            ))),
            (GateKind::Cnot, _) => Ok(()),
            (_, Some(_)) => Err(Error::Contract(format!(
                "{:?} gate cannot carry a control qubit",
                self.kind
            ))),
            _ => Ok(()),
        }
    }

    /// Rotation angle of the gate. Fixed gates report `0`.
    pub fn angle(&self, params: &[f64]) -> Result<f64> {
        if self.kind.rotation_axis().is_none() {
            return Ok(0.0);
        }
        let slot = self.param_slot.ok_or_else(|| {
            Error::Contract(format!("{:?} gate without parameter slot", self.kind))
        })?;
        params.get(slot).copied().ok_or_else(|| {
            Error::Index(format!(
                "parameter slot {slot} out of range for {} parameters",
                params.len()
            ))
        })
    }

    /// Local unitary: 2×2 for single-qubit gates, 4×4 (control ⊗ target
    /// ordering) for CNOT.
    pub fn matrix(&self, params: &[f64]) -> Result<Array2<Complex64>> {
        Ok(match self.kind {
            GateKind::Cnot => {
                let mut m = Array2::zeros((4, 4));
                m[[0, 0]] = ONE;
                m[[1, 1]] = ONE;
                m[[2, 3]] = ONE;
                m[[3, 2]] = ONE;
                m
            }
            GateKind::H => from2(hadamard_matrix()),
            kind => from2(rotation_matrix(
                kind.rotation_axis().expect("rotation gate"),
                self.angle(params)?,
            )),
        })
    }
}

fn from2(m: [[Complex64; 2]; 2]) -> Array2<Complex64> {
    Array2::from_shape_fn((2, 2), |(r, c)| m[r][c])
}

pub fn hadamard_matrix() -> [[Complex64; 2]; 2] {
    let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    [[s, s], [s, -s]]
}

/// `exp(-i·angle·σ_axis/2)`.
pub fn rotation_matrix(axis: PauliAxis, angle: f64) -> [[Complex64; 2]; 2] {
    let (s, c) = (angle / 2.0).sin_cos();
    let (c, s) = (Complex64::new(c, 0.0), Complex64::new(s, 0.0));
    match axis {
        PauliAxis::X => [[c, -I * s], [-I * s, c]],
        PauliAxis::Y => [[c, -s], [s, c]],
        PauliAxis::Z => [[c - I * s, ZERO], [ZERO, c + I * s]],
    }
}
