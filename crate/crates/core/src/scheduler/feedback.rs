//! Measurement-basis feedback: conditional Clifford conjugation of the next
//! measurement operator, and the fidelity cost of feedback latency.

use serde::{Deserialize, Serialize};

use super::SchedulerError;
use crate::code_model::Pauli;

/// Clifford whose conjugation a TICK outcome conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gate {
    X(usize),
    Z(usize),
    S(usize),
    H(usize),
    Cnot { control: usize, target: usize },
}

impl Gate {
    /// Parses `"S 0"`, `"CNOT 0 1"`, ...
    pub fn parse(s: &str) -> Result<Gate, SchedulerError> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let q = |i: usize| -> Result<usize, SchedulerError> {
            parts
                .get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| SchedulerError::UnknownGate(s.to_string()))
        };
        match parts.first().map(|p| p.to_ascii_uppercase()).as_deref() {
            Some("X") => Ok(Gate::X(q(1)?)),
            Some("Z") => Ok(Gate::Z(q(1)?)),
            Some("S") => Ok(Gate::S(q(1)?)),
            Some("H") => Ok(Gate::H(q(1)?)),
            Some("CNOT") | Some("CX") => Ok(Gate::Cnot {
                control: q(1)?,
                target: q(2)?,
            }),
            _ => Err(SchedulerError::UnknownGate(s.to_string())),
        }
    }

    fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::X(q) | Gate::Z(q) | Gate::S(q) | Gate::H(q) => vec![q],
            Gate::Cnot { control, target } => vec![control, target],
        }
    }
}

/// Pauli string `i^phase X^x Z^z` in symplectic form.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Symplectic {
    x: Vec<bool>,
    z: Vec<bool>,
    phase: u8,
}

impl Symplectic {
    fn identity(n: usize) -> Symplectic {
        Symplectic {
            x: vec![false; n],
            z: vec![false; n],
            phase: 0,
        }
    }

    fn single(n: usize, q: usize, x: bool, z: bool, phase: u8) -> Symplectic {
        let mut s = Symplectic::identity(n);
        s.x[q] = x;
        s.z[q] = z;
        s.phase = phase;
        s
    }

    /// `self * other`.
    fn mul(&self, other: &Symplectic) -> Symplectic {
        // X^x1 Z^z1 X^x2 Z^z2 = (-1)^{z1.x2} X^{x1+x2} Z^{z1+z2}
        let mut phase = self.phase + other.phase;
        for q in 0..self.x.len() {
            if self.z[q] && other.x[q] {
                phase += 2;
            }
        }
        Symplectic {
            x: self.x.iter().zip(&other.x).map(|(a, b)| a ^ b).collect(),
            z: self.z.iter().zip(&other.z).map(|(a, b)| a ^ b).collect(),
            phase: phase % 4,
        }
    }
}

/// Images `C^dagger X_q C` and `C^dagger Z_q C` of the generators on `q`.
fn images(gate: Gate, n: usize, q: usize) -> (Symplectic, Symplectic) {
    let x = Symplectic::single(n, q, true, false, 0);
    let z = Symplectic::single(n, q, false, true, 0);
    let neg = |mut s: Symplectic| {
        s.phase = (s.phase + 2) % 4;
        s
    };
    // -Y = -i X Z
    let minus_y = Symplectic::single(n, q, true, true, 3);
    match gate {
        Gate::X(g) if g == q => (x, neg(z)),
        Gate::Z(g) if g == q => (neg(x), z),
        Gate::S(g) if g == q => (minus_y, z),
        Gate::H(g) if g == q => (z, x),
        Gate::Cnot { control, target } if q == control => {
            let mut xx = x;
            xx.x[target] = true;
            (xx, z)
        }
        Gate::Cnot { control, target } if q == target => {
            let mut zz = z;
            zz.z[control] = true;
            (x, zz)
        }
        _ => (x, z),
    }
}

/// Next measurement operator as a Pauli string with a sign.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauliBasisState {
    pub paulis: Vec<Pauli>,
    /// +1 or -1.
    pub sign: i8,
}

impl PauliBasisState {
    pub fn new(paulis: Vec<Pauli>) -> PauliBasisState {
        PauliBasisState { paulis, sign: 1 }
    }

    fn to_symplectic(&self) -> Symplectic {
        let n = self.paulis.len();
        let mut s = Symplectic::identity(n);
        // Y = i X Z
        let mut phase = if self.sign < 0 { 2 } else { 0 };
        for (q, p) in self.paulis.iter().enumerate() {
            match p {
                Pauli::I => {}
                Pauli::X => s.x[q] = true,
                Pauli::Z => s.z[q] = true,
                Pauli::Y => {
                    s.x[q] = true;
                    s.z[q] = true;
                    phase += 1;
                }
            }
        }
        s.phase = phase % 4;
        s
    }

    fn from_symplectic(s: &Symplectic) -> PauliBasisState {
        let mut phase = s.phase as i32;
        let paulis = s
            .x
            .iter()
            .zip(&s.z)
            .map(|(&x, &z)| match (x, z) {
                (false, false) => Pauli::I,
                (true, false) => Pauli::X,
                (false, true) => Pauli::Z,
                (true, true) => {
                    // X Z = -i Y
                    phase += 3;
                    Pauli::Y
                }
            })
            .collect();
        let phase = phase.rem_euclid(4);
        debug_assert!(phase % 2 == 0, "non-Hermitian result");
        PauliBasisState {
            paulis,
            sign: if phase == 0 { 1 } else { -1 },
        }
    }

    /// `P' = C^dagger P C`.
    pub fn conjugate(&self, gate: Gate) -> Result<PauliBasisState, SchedulerError> {
        let n = self.paulis.len();
        if gate.qubits().iter().any(|&q| q >= n) {
            return Err(SchedulerError::UnknownGate(format!("{gate:?} on {n} qubits")));
        }
        if let Gate::Cnot { control, target } = gate {
            if control == target {
                return Err(SchedulerError::UnknownGate(format!("{gate:?}")));
            }
        }
        let s = self.to_symplectic();
        let mut out = Symplectic::identity(n);
        out.phase = s.phase;
        for q in 0..n {
            let (ix, _) = images(gate, n, q);
            if s.x[q] {
                out = out.mul(&ix);
            }
        }
        for q in 0..n {
            let (_, iz) = images(gate, n, q);
            if s.z[q] {
                out = out.mul(&iz);
            }
        }
        Ok(PauliBasisState::from_symplectic(&out))
    }
}

/// Conditional basis update: unchanged on outcome 0, conjugated on 1.
pub fn update_measurement_basis(
    state: &PauliBasisState,
    gate: Gate,
    outcome: bool,
) -> Result<PauliBasisState, SchedulerError> {
    if outcome {
        state.conjugate(gate)
    } else {
        // still validate the tag so a bad program fails on either branch
        state.conjugate(gate)?;
        Ok(state.clone())
    }
}

/// Extra logical error from waiting `latency_ns` for feedback at a per-round
/// logical error rate `eps` (1 us rounds): `(1 - (1 - 2 eps)^n) / 2`.
pub fn fidelity_penalty(latency_ns: u64, eps: f64) -> Result<f64, SchedulerError> {
    if !(0.0..=0.5).contains(&eps) {
        return Err(SchedulerError::InvalidRate(eps));
    }
    let n = latency_ns.div_ceil(1000).max(1);
    Ok(0.5 * (1.0 - (1.0 - 2.0 * eps).powf(n as f64)))
}

/// First-order approximation `n eps`.
pub fn fidelity_penalty_linear(latency_ns: u64, eps: f64) -> f64 {
    latency_ns.div_ceil(1000).max(1) as f64 * eps
}
