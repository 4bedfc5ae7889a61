//! Parameterized quantum circuits and their gradients.
//!
//! Three gradient routes are provided. [`vjp`] / [`grad_adjoint`] run a single
//! reverse sweep over the gate list and are what training uses.
//! [`grad_parameter_shift`] and [`grad_finite_diff`] exist as independent
//! checks.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::qsim::{amplitude_encode, angle_encode, Gate, PauliAxis, QuantumState};

/// CNOT pattern closing each ansatz layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Entangler {
    /// `j → j+1 mod n` for every qubit.
    #[default]
    Ring,
    /// `j → j+1` for `j < n-1`.
    Line,
}

impl std::str::FromStr for Entangler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(Entangler::Ring),
            "line" => Ok(Entangler::Line),
            other => Err(Error::Config(format!("unknown entangler {other:?}"))),
        }
    }
}

impl std::fmt::Display for Entangler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Entangler::Ring => "ring",
            Entangler::Line => "line",
        })
    }
}

/// How a classical vector is loaded into the register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    /// Normalized amplitudes on `⌈log2 D⌉` qubits.
    Amplitude,
    /// One `RY(z_j)` per qubit.
    Angle,
}

impl Encoding {
    pub fn encode(self, input: &[f64]) -> Result<QuantumState> {
        match self {
            Encoding::Amplitude => amplitude_encode(input),
            Encoding::Angle => angle_encode(input),
        }
    }
}

/// Ordered gate list `V(θ) = V_L(θ_L) … V_1(θ_1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitDescriptor {
    pub n_qubits: usize,
    pub layers: usize,
    pub gates: Vec<Gate>,
    pub n_params: usize,
}

impl CircuitDescriptor {
    /// Empty circuit on `n_qubits` qubits.
    pub fn identity(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            layers: 0,
            gates: Vec::new(),
            n_params: 0,
        }
    }

    /// Checks that every gate fits the register and every parameter slot is
    /// used by exactly one gate.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![0usize; self.n_params];
        for g in &self.gates {
            g.validate(self.n_qubits)?;
            if let Some(slot) = g.param_slot {
                let count = seen.get_mut(slot).ok_or_else(|| {
                    Error::Index(format!("slot {slot} ≥ n_params {}", self.n_params))
                })?;
                *count += 1;
            }
        }
        if let Some(slot) = seen.iter().position(|&c| c != 1) {
            return Err(Error::Contract(format!(
                "parameter slot {slot} referenced {} times",
                seen[slot]
            )));
        }
        Ok(())
    }

    pub fn cnot_count(&self) -> usize {
        self.gates.iter().filter(|g| g.control.is_some()).count()
    }

    /// Uniform initialization in `[-π/4, π/4]`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.n_params)
            .map(|_| rng.random_range(-FRAC_PI_4..=FRAC_PI_4))
            .collect()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(Error::contract(format!(
                "circuit expects {} parameters, got {}",
                self.n_params,
                theta.len()
            )));
        }
        Ok(())
    }

    fn check_state(&self, state: &QuantumState) -> Result<()> {
        if state.n_qubits() != self.n_qubits {
            return Err(Error::contract(format!(
                "circuit acts on {} qubits, state has {}",
                self.n_qubits,
                state.n_qubits()
            )));
        }
        Ok(())
    }

    /// `V(θ)|ψ⟩`.
    pub fn run(&self, theta: &[f64], input: &QuantumState) -> Result<QuantumState> {
        self.check_theta(theta)?;
        self.check_state(input)?;
        let mut state = input.clone();
        for g in &self.gates {
            state.apply(g, theta)?;
        }
        Ok(state)
    }
}

/// Hardware-efficient ansatz: each layer applies `RY` then `RZ` on every
/// qubit (own parameter each) followed by a CNOT entangler. `layers = 0`
/// yields the identity.
pub fn build_ansatz(n_qubits: usize, layers: usize, entangle: Entangler) -> CircuitDescriptor {
    let mut gates = Vec::new();
    let mut slot = 0;
    for _ in 0..layers {
        for q in 0..n_qubits {
            gates.push(Gate::ry(q, slot));
            gates.push(Gate::rz(q, slot + 1));
            slot += 2;
        }
        if n_qubits > 1 {
            let pairs = match entangle {
                Entangler::Ring if n_qubits > 2 => n_qubits,
                // a 2-qubit ring is 0→1, 1→0
                Entangler::Ring => 2,
                Entangler::Line => n_qubits - 1,
            };
            for j in 0..pairs {
                gates.push(Gate::cnot(j, (j + 1) % n_qubits));
            }
        }
    }
    CircuitDescriptor {
        n_qubits,
        layers,
        gates,
        n_params: slot,
    }
}

/// Per-qubit `⟨σ_axis⟩` of `V(θ)|input⟩`.
pub fn expectation(
    circuit: &CircuitDescriptor,
    theta: &[f64],
    input: &QuantumState,
    axis: PauliAxis,
) -> Result<Vec<f64>> {
    Ok(circuit.run(theta, input)?.expectations(axis))
}

/// Weighted sum of single-qubit Pauli observables,
/// `Σ_axis Σ_q w[axis][q]·σ_axis^(q)`.
///
/// In training the weights are the upstream gradients of the per-qubit
/// readouts, which turns the adjoint sweep into a vector-Jacobian product.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observable {
    pub terms: Vec<(PauliAxis, Vec<f64>)>,
}

impl Observable {
    /// `Σ_q σ_axis^(q)`.
    pub fn sum(axis: PauliAxis, n_qubits: usize) -> Self {
        Self {
            terms: vec![(axis, vec![1.0; n_qubits])],
        }
    }

    /// `σ_axis` on a single qubit.
    pub fn single(axis: PauliAxis, qubit: usize, n_qubits: usize) -> Self {
        let mut w = vec![0.0; n_qubits];
        w[qubit] = 1.0;
        Self {
            terms: vec![(axis, w)],
        }
    }

    pub fn push(&mut self, axis: PauliAxis, weights: Vec<f64>) {
        self.terms.push((axis, weights));
    }

    /// `⟨ψ|O|ψ⟩`.
    pub fn evaluate(&self, state: &QuantumState) -> Result<f64> {
        let mut total = 0.0;
        for (axis, w) in &self.terms {
            check_weights(w, state)?;
            for (q, &wq) in w.iter().enumerate() {
                if wq != 0.0 {
                    total += wq * state.expectation(*axis, q)?;
                }
            }
        }
        Ok(total)
    }

    /// `O|ψ⟩` (not normalized).
    fn apply(&self, state: &QuantumState) -> Result<QuantumState> {
        let mut acc = vec![Complex64::new(0.0, 0.0); state.dim()];
        for (axis, w) in &self.terms {
            check_weights(w, state)?;
            for (q, &wq) in w.iter().enumerate() {
                if wq == 0.0 {
                    continue;
                }
                let mut p = state.clone();
                p.apply_pauli(*axis, q)?;
                for (a, b) in acc.iter_mut().zip(p.amplitudes()) {
                    *a += b * wq;
                }
            }
        }
        Ok(QuantumState::from_raw(acc))
    }
}

fn check_weights(w: &[f64], state: &QuantumState) -> Result<()> {
    if w.len() != state.n_qubits() {
        return Err(Error::contract(format!(
            "observable has {} weights for a {}-qubit state",
            w.len(),
            state.n_qubits()
        )));
    }
    Ok(())
}

/// Gradients of a scalar circuit output.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    /// `∂⟨O⟩/∂θ`, one entry per circuit parameter.
    pub d_theta: Vec<f64>,
    /// `∂⟨O⟩/∂input`, one entry per classical input coordinate.
    pub d_input: Vec<f64>,
}

/// Walks `gates` backwards. On entry `state` is the output of the gate list
/// and `lambda` is `O` applied to the final state, pulled back to this point;
/// on exit both refer to the input of the gate list. Parameter gradients are
/// accumulated into `grad`.
fn adjoint_sweep(
    gates: &[Gate],
    params: &[f64],
    state: &mut QuantumState,
    lambda: &mut QuantumState,
    grad: &mut [f64],
) -> Result<()> {
    for g in gates.iter().rev() {
        if let (Some(axis), Some(slot)) = (g.kind.rotation_axis(), g.param_slot) {
            // d/dθ exp(-iθP/2) = -i/2·P·U, so dE/dθ = Im⟨λ|P|φ⟩ with φ the
            // state just after the gate
            let mut p_phi = state.clone();
            p_phi.apply_pauli(axis, g.target)?;
            grad[slot] += lambda.inner(&p_phi).im;
        }
        state.apply_inverse(g, params)?;
        lambda.apply_inverse(g, params)?;
    }
    Ok(())
}

/// Value and gradient of `⟨O⟩` for `V(θ)` acting on an encoded classical
/// input. Returns `(⟨O⟩, gradients)`.
pub fn vjp(
    circuit: &CircuitDescriptor,
    theta: &[f64],
    input: &[f64],
    encoding: Encoding,
    observable: &Observable,
) -> Result<(f64, GradientReport)> {
    let encoded = encoding.encode(input)?;
    let mut state = circuit.run(theta, &encoded)?;
    let value = observable.evaluate(&state)?;
    let mut lambda = observable.apply(&state)?;

    let mut d_theta = vec![0.0; circuit.n_params];
    adjoint_sweep(&circuit.gates, theta, &mut state, &mut lambda, &mut d_theta)?;

    let d_input = match encoding {
        Encoding::Angle => {
            let gates: Vec<Gate> = (0..input.len()).map(|q| Gate::ry(q, q)).collect();
            let mut d_z = vec![0.0; input.len()];
            adjoint_sweep(&gates, input, &mut state, &mut lambda, &mut d_z)?;
            d_z
        }
        Encoding::Amplitude => {
            // E(ψ) with ψ real: ∂E/∂ψ_i = 2·Re λ_i. Then pull back through
            // ψ = s/‖s‖, whose Jacobian is (I − ψψᵀ)/‖s‖.
            let norm = input.iter().map(|v| v * v).sum::<f64>().sqrt();
            let g: Vec<f64> = lambda.amplitudes()[..input.len()]
                .iter()
                .map(|l| 2.0 * l.re)
                .collect();
            let psi: Vec<f64> = input.iter().map(|v| v / norm).collect();
            let dot: f64 = psi.iter().zip(&g).map(|(p, g)| p * g).sum();
            g.iter()
                .zip(&psi)
                .map(|(g, p)| (g - p * dot) / norm)
                .collect()
        }
    };
    Ok((value, GradientReport { d_theta, d_input }))
}

/// Adjoint gradient of `Σ_q ⟨σ_axis^(q)⟩`.
pub fn grad_adjoint(
    circuit: &CircuitDescriptor,
    theta: &[f64],
    input: &[f64],
    encoding: Encoding,
    axis: PauliAxis,
) -> Result<GradientReport> {
    let obs = Observable::sum(axis, circuit.n_qubits);
    vjp(circuit, theta, input, encoding, &obs).map(|(_, g)| g)
}

/// Two-term parameter-shift gradient of `⟨σ_axis^(qubit)⟩`.
pub fn grad_parameter_shift(
    circuit: &CircuitDescriptor,
    theta: &[f64],
    input: &QuantumState,
    axis: PauliAxis,
    qubit: usize,
) -> Result<Vec<f64>> {
    circuit.check_theta(theta)?;
    if qubit >= circuit.n_qubits {
        return Err(Error::Index(format!("qubit {qubit} out of range")));
    }
    for g in &circuit.gates {
        if g.param_slot.is_some() && g.kind.rotation_axis().is_none() {
            return Err(Error::Unsupported(format!(
                "{:?} gate has no shift rule",
                g.kind
            )));
        }
    }
    let eval = |t: &[f64]| -> Result<f64> { circuit.run(t, input)?.expectation(axis, qubit) };
    let mut shifted = theta.to_vec();
    (0..circuit.n_params)
        .map(|j| {
            shifted[j] = theta[j] + FRAC_PI_2;
            let plus = eval(&shifted)?;
            shifted[j] = theta[j] - FRAC_PI_2;
            let minus = eval(&shifted)?;
            shifted[j] = theta[j];
            Ok(0.5 * (plus - minus))
        })
        .collect()
}

/// Central finite differences of `Σ_q ⟨σ_axis^(q)⟩` over every parameter and
/// every input coordinate.
pub fn grad_finite_diff(
    circuit: &CircuitDescriptor,
    theta: &[f64],
    input: &[f64],
    encoding: Encoding,
    axis: PauliAxis,
    h: f64,
) -> Result<GradientReport> {
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::Config(format!("step {h} outside (0, 1e-2]")));
    }
    let obs = Observable::sum(axis, circuit.n_qubits);
    let eval = |t: &[f64], x: &[f64]| -> Result<f64> {
        obs.evaluate(&circuit.run(t, &encoding.encode(x)?)?)
    };
    let mut t = theta.to_vec();
    let mut d_theta = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        t[j] = theta[j] + h;
        let plus = eval(&t, input)?;
        t[j] = theta[j] - h;
        let minus = eval(&t, input)?;
        t[j] = theta[j];
        d_theta.push((plus - minus) / (2.0 * h));
    }
    let mut x = input.to_vec();
    let mut d_input = Vec::with_capacity(input.len());
    for j in 0..input.len() {
        x[j] = input[j] + h;
        let plus = eval(theta, &x)?;
        x[j] = input[j] - h;
        let minus = eval(theta, &x)?;
        x[j] = input[j];
        d_input.push((plus - minus) / (2.0 * h));
    }
    Ok(GradientReport { d_theta, d_input })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::zero_state;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn ansatz_counts() {
        let c = build_ansatz(2, 1, Entangler::Ring);
        assert_eq!(c.n_params, 4);
        assert_eq!(c.gates.len() - c.cnot_count(), 4);
        assert_eq!(c.cnot_count(), 2);

        let c = build_ansatz(1, 1, Entangler::Ring);
        assert_eq!(c.n_params, 2);
        assert_eq!(c.cnot_count(), 0);

        let c = build_ansatz(3, 2, Entangler::Line);
        assert_eq!(c.n_params, 12);
        assert_eq!(c.cnot_count(), 4);

        let c = build_ansatz(4, 3, Entangler::Ring);
        assert_eq!(c.n_params, 2 * 4 * 3);
        c.validate().unwrap();
    }

    #[test]
    fn validate_rejects_shared_slots() {
        let mut c = build_ansatz(2, 1, Entangler::Line);
        c.gates[1].param_slot = Some(0);
        assert!(matches!(c.validate(), Err(Error::Contract(_))));
    }

    #[test]
    fn identity_and_single_rotation() {
        let c = CircuitDescriptor::identity(1);
        let e = expectation(&c, &[], &zero_state(1).unwrap(), PauliAxis::Z).unwrap();
        assert_eq!(e, vec![1.0]);

        let c = CircuitDescriptor {
            n_qubits: 1,
            layers: 1,
            gates: vec![Gate::ry(0, 0)],
            n_params: 1,
        };
        let e = expectation(&c, &[PI / 3.0], &zero_state(1).unwrap(), PauliAxis::Z).unwrap();
        assert!((e[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let c = build_ansatz(2, 1, Entangler::Ring);
        let r = expectation(&c, &[0.0; 3], &zero_state(2).unwrap(), PauliAxis::Z);
        assert!(matches!(r, Err(Error::Contract(_))));
        let r = expectation(&c, &[0.0; 4], &zero_state(3).unwrap(), PauliAxis::Z);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn shift_rule_single_rotation() {
        let c = CircuitDescriptor {
            n_qubits: 1,
            layers: 1,
            gates: vec![Gate::ry(0, 0)],
            n_params: 1,
        };
        let zero = zero_state(1).unwrap();
        let g = grad_parameter_shift(&c, &[PI / 3.0], &zero, PauliAxis::Z, 0).unwrap();
        assert!((g[0] + (PI / 3.0).sin()).abs() < 1e-12);
        let g = grad_parameter_shift(&c, &[0.0], &zero, PauliAxis::Z, 0).unwrap();
        assert!(g[0].abs() < 1e-12);
    }

    #[test]
    fn adjoint_angle_input_zero_depth() {
        let c = CircuitDescriptor::identity(1);
        for theta in [0.0, 0.4, 1.3, -2.2] {
            let g = grad_adjoint(&c, &[], &[theta], Encoding::Angle, PauliAxis::Z).unwrap();
            assert!((g.d_input[0] + theta.sin()).abs() < 1e-12);
            assert!(g.d_theta.is_empty());
        }
    }

    #[test]
    fn adjoint_matches_finite_diff_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = build_ansatz(2, 2, Entangler::Ring);
        let theta = c.init_params(&mut rng);
        for (enc, input) in [
            (Encoding::Angle, vec![0.3, -0.8]),
            (Encoding::Amplitude, vec![0.2, -0.5, 0.9, 0.1]),
        ] {
            for axis in PauliAxis::ALL {
                let a = grad_adjoint(&c, &theta, &input, enc, axis).unwrap();
                let f = grad_finite_diff(&c, &theta, &input, enc, axis, 1e-5).unwrap();
                for (x, y) in a.d_theta.iter().zip(&f.d_theta) {
                    assert!((x - y).abs() < 1e-7, "{x} vs {y}");
                }
                for (x, y) in a.d_input.iter().zip(&f.d_input) {
                    assert!((x - y).abs() < 1e-7, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn symmetric_point_has_zero_gradient() {
        // ⟨Z⟩ = cos z is even in z
        let c = CircuitDescriptor::identity(1);
        let f = grad_finite_diff(&c, &[], &[0.0], Encoding::Angle, PauliAxis::Z, 1e-3).unwrap();
        assert!(f.d_input[0].abs() < 1e-12);
    }

    #[test]
    fn finite_diff_step_range() {
        let c = CircuitDescriptor::identity(1);
        let r = grad_finite_diff(&c, &[], &[0.0], Encoding::Angle, PauliAxis::Z, 0.1);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn observable_weights_are_linear() {
        let c = build_ansatz(3, 1, Entangler::Ring);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta = c.init_params(&mut rng);
        let input = [0.4, 0.1, -0.7];
        let mut obs = Observable::default();
        obs.push(PauliAxis::X, vec![0.5, -1.0, 2.0]);
        obs.push(PauliAxis::Z, vec![1.5, 0.0, -0.25]);
        let (value, g) = vjp(&c, &theta, &input, Encoding::Angle, &obs).unwrap();

        let state = c.run(&theta, &angle_encode(&input).unwrap()).unwrap();
        let x = state.expectations(PauliAxis::X);
        let z = state.expectations(PauliAxis::Z);
        let direct = 0.5 * x[0] - x[1] + 2.0 * x[2] + 1.5 * z[0] - 0.25 * z[2];
        assert!((value - direct).abs() < 1e-12);

        let gx = vjp(
            &c,
            &theta,
            &input,
            Encoding::Angle,
            &Observable {
                terms: vec![obs.terms[0].clone()],
            },
        )
        .unwrap()
        .1;
        let gz = vjp(
            &c,
            &theta,
            &input,
            Encoding::Angle,
            &Observable {
                terms: vec![obs.terms[1].clone()],
            },
        )
        .unwrap()
        .1;
        for j in 0..theta.len() {
            assert!((g.d_theta[j] - gx.d_theta[j] - gz.d_theta[j]).abs() < 1e-12);
        }
    }
}
