//! Piecewise RIS phase schedules, pilot reception and Hadamard decoupling.
//!
//! The `T = Q B` pilot slots are split into `B` subframes of `Q` slots. In
//! slot `k` of subframe `b`, group `q` reflects with `sqrt(Q) Phi(k, q) v_b`,
//! where `Phi` is the `Q x Q` unitary Hadamard matrix and `v_b` is column `b`
//! of the `M' x M'` Hadamard matrix. Entry `i` of `v_b` drives the `i`-th
//! smallest RIS index of the group. Right-multiplying a subframe's stacked
//! observations by `Phi^H / sqrt(Q)` then isolates each group.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::numerics::{hadamard, unitary_hadamard, ComplexMatrix, ComplexVector};

/// Equal-size disjoint grouping of RIS element indices `0..M`.
///
/// Groups are stored with their indices sorted ascending; group order is
/// kept as given.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(mut groups: Vec<Vec<usize>>, m: usize) -> Result<Partition> {
        if groups.is_empty() {
            return Err(Error::InvalidPartition("no groups".into()));
        }
        let size = groups[0].len();
        if size == 0 {
            return Err(Error::InvalidPartition("empty group".into()));
        }
        if groups.len() * size != m {
            return Err(Error::InvalidPartition(format!(
                "{} groups of {size} do not cover {m} elements",
                groups.len()
            )));
        }
        let mut seen = vec![false; m];
        for (q, g) in groups.iter_mut().enumerate() {
            if g.len() != size {
                return Err(Error::InvalidPartition(format!(
                    "group {q} has {} elements, expected {size}",
                    g.len()
                )));
            }
            g.sort_unstable();
            for &i in g.iter() {
                if i >= m {
                    return Err(Error::InvalidPartition(format!("index {i} out of range 0..{m}")));
                }
                if seen[i] {
                    return Err(Error::InvalidPartition(format!("index {i} appears twice")));
                }
                seen[i] = true;
            }
        }
        Ok(Partition { groups })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_size(&self) -> usize {
        self.groups[0].len()
    }

    pub fn element_count(&self) -> usize {
        self.groups.len() * self.group_size()
    }

    /// Group index of every element.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.element_count()];
        for (q, g) in self.groups.iter().enumerate() {
            for &i in g {
                out[i] = q;
            }
        }
        out
    }

    /// True when both partitions contain the same groups, in any order.
    pub fn same_grouping(&self, other: &Partition) -> bool {
        let mut a = self.groups.clone();
        let mut b = other.groups.clone();
        a.sort();
        b.sort();
        a == b
    }

    /// FNV-1a digest of the ordered group lists, as 16 hex digits.
    pub fn hash_hex(&self) -> String {
        let mut h = Fnv::new();
        for g in &self.groups {
            h.write_u64(g.len() as u64);
            for &i in g {
                h.write_u64(i as u64);
            }
        }
        format!("{:016x}", h.finish())
    }
}

/// 64-bit FNV-1a, used for stable provenance hashes.
#[derive(Debug, Clone, Copy)]
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Fnv {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub fn write_u64(&mut self, x: u64) {
        for byte in x.to_le_bytes() {
            self.0 ^= u64::from(byte);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Fnv::new()
    }
}

#[derive(Debug, Clone)]
pub struct PhaseSchedule {
    q: usize,
    b: usize,
    partition: Partition,
    vectors: Vec<ComplexVector>,
    decoupler: ComplexMatrix,
    subframe_codes: DMatrix<i32>,
}

impl PhaseSchedule {
    pub fn groups(&self) -> usize {
        self.q
    }

    pub fn subframes(&self) -> usize {
        self.b
    }

    pub fn pilots(&self) -> usize {
        self.q * self.b
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// Reflection vectors `psi_t`, `t = k + b Q`.
    pub fn vectors(&self) -> &[ComplexVector] {
        &self.vectors
    }

    /// `Phi`, the `Q x Q` unitary Hadamard matrix.
    pub fn decoupler(&self) -> &ComplexMatrix {
        &self.decoupler
    }

    /// The `M' x M'` Hadamard matrix whose first `B` columns are the `v_b`.
    pub fn subframe_codes(&self) -> &DMatrix<i32> {
        &self.subframe_codes
    }

    /// `v_b` as reals.
    pub fn code(&self, b: usize) -> Vec<f64> {
        self.subframe_codes.column(b).iter().map(|&x| f64::from(x)).collect()
    }
}

pub fn build_schedule(m: usize, q: usize, b: usize, partition: Partition) -> Result<PhaseSchedule> {
    if q == 0 || !q.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(q));
    }
    if m % q != 0 {
        return Err(Error::InvalidArgument(format!("Q={q} does not divide M={m}")));
    }
    let m_prime = m / q;
    if !m_prime.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(m_prime));
    }
    if b == 0 || b > m_prime {
        return Err(Error::InvalidArgument(format!(
            "B={b} must satisfy 1 <= B <= M'={m_prime}"
        )));
    }
    if partition.element_count() != m || partition.group_count() != q {
        return Err(Error::InvalidPartition(format!(
            "partition has {} groups over {} elements, expected {q} over {m}",
            partition.group_count(),
            partition.element_count()
        )));
    }
    let decoupler = unitary_hadamard(q)?;
    let subframe_codes = hadamard(m_prime)?;
    let amp = (q as f64).sqrt();
    let mut vectors = Vec::with_capacity(q * b);
    for sub in 0..b {
        for k in 0..q {
            let mut psi = DVector::from_element(m, Complex64::new(0.0, 0.0));
            for (g, members) in partition.groups().iter().enumerate() {
                let coeff = amp * decoupler[(k, g)].re;
                for (i, &elem) in members.iter().enumerate() {
                    // amp * (+-1/sqrt(Q)) * (+-1) is exactly +-1 up to rounding.
                    let v = (coeff * f64::from(subframe_codes[(i, sub)])).round();
                    psi[elem] = Complex64::new(v, 0.0);
                }
            }
            vectors.push(psi);
        }
    }
    Ok(PhaseSchedule { q, b, partition, vectors, decoupler, subframe_codes })
}

/// `t` reflection vectors with i.i.d. uniform phases, for the conventional
/// full-LS and OMP baselines.
pub fn random_reflections<R: Rng + ?Sized>(m: usize, t: usize, rng: &mut R) -> Vec<ComplexVector> {
    (0..t)
        .map(|_| DVector::from_fn(m, |_, _| Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>())))
        .collect()
}

/// `sigma^2 = P 10^(-snr_db / 10)`.
pub fn snr_to_noise_var(snr_db: f64, power: f64) -> Result<f64> {
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::InvalidArgument(format!("transmit power {power} must be positive")));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("SNR {snr_db} dB is not finite")));
    }
    Ok(power * 10f64.powf(-snr_db / 10.0))
}

/// Normalized observations `y_t / (sqrt(P) s_t)` for every pilot slot.
#[derive(Debug, Clone)]
pub struct ReceivedPilots {
    pub slots: Vec<ComplexVector>,
}

impl ReceivedPilots {
    /// Stacks slots into `B` subframe matrices `Y_b` of `Q` columns each.
    pub fn into_subframes(self, q: usize) -> Result<PilotObservation> {
        if q == 0 || self.slots.len() % q != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} slots do not split into subframes of {q}",
                self.slots.len()
            )));
        }
        let subframes = self
            .slots
            .chunks(q)
            .map(|chunk| DMatrix::from_columns(chunk))
            .collect();
        Ok(PilotObservation { subframes })
    }
}

/// Per-subframe stacks `Y_b`, each `N x Q`.
#[derive(Debug, Clone)]
pub struct PilotObservation {
    pub subframes: Vec<ComplexMatrix>,
}

/// Simulates `y_t = sqrt(P) F diag(psi_t) h s_t + n_t` with `s_t = 1` and
/// `n_t ~ CN(0, noise_var I)`, returning `y_t / sqrt(P)`.
pub fn simulate_pilot_rx<R: Rng + ?Sized>(
    f: &ComplexMatrix,
    h: &ComplexVector,
    reflections: &[ComplexVector],
    power: f64,
    noise_var: f64,
    rng: &mut R,
) -> Result<ReceivedPilots> {
    if !(power > 0.0) {
        return Err(Error::InvalidArgument("transmit power must be positive".into()));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidArgument("noise variance must be non-negative".into()));
    }
    if f.ncols() != h.len() {
        return Err(Error::DimensionMismatch(format!(
            "F is {}x{} but h has length {}",
            f.nrows(),
            f.ncols(),
            h.len()
        )));
    }
    let sqrt_p = power.sqrt();
    let normal = Normal::new(0.0, (noise_var / 2.0).sqrt())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut slots = Vec::with_capacity(reflections.len());
    for psi in reflections {
        if psi.len() != h.len() {
            return Err(Error::DimensionMismatch(format!(
                "reflection vector of length {} for M={}",
                psi.len(),
                h.len()
            )));
        }
        let mut y = f * psi.component_mul(h) * Complex64::new(sqrt_p, 0.0);
        if noise_var > 0.0 {
            for z in y.iter_mut() {
                *z += Complex64::new(normal.sample(rng), normal.sample(rng));
            }
        }
        slots.push(y / Complex64::new(sqrt_p, 0.0));
    }
    Ok(ReceivedPilots { slots })
}

/// Pilot reception for a piecewise schedule, grouped into subframes.
pub fn simulate_schedule_rx<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    schedule: &PhaseSchedule,
    power: f64,
    noise_var: f64,
    rng: &mut R,
) -> Result<PilotObservation> {
    simulate_pilot_rx(&channel.ris_bs, &channel.user_ris, schedule.vectors(), power, noise_var, rng)?
        .into_subframes(schedule.groups())
}

/// Decoupled per-group observations, indexed `[b][q]`.
#[derive(Debug, Clone)]
pub struct Decoupled {
    pub z: Vec<Vec<ComplexVector>>,
}

impl Decoupled {
    pub fn get(&self, b: usize, q: usize) -> &ComplexVector {
        &self.z[b][q]
    }
}

/// `z_{b,q}` = column `q` of `Y_b Phi^H / sqrt(Q)`. The Sylvester `Phi` is
/// real and symmetric, so `Phi^T Phi^H = I` undoes the slot mixing.
pub fn decouple(obs: &PilotObservation, schedule: &PhaseSchedule) -> Result<Decoupled> {
    let q = schedule.groups();
    if obs.subframes.len() != schedule.subframes() {
        return Err(Error::DimensionMismatch(format!(
            "{} subframes observed, schedule has {}",
            obs.subframes.len(),
            schedule.subframes()
        )));
    }
    let mix = schedule.decoupler().adjoint() / Complex64::new((q as f64).sqrt(), 0.0);
    let mut z = Vec::with_capacity(obs.subframes.len());
    for y in &obs.subframes {
        if y.ncols() != q {
            return Err(Error::DimensionMismatch(format!(
                "subframe has {} columns, expected {q}",
                y.ncols()
            )));
        }
        let yt = y * &mix;
        z.push((0..q).map(|c| yt.column(c).into_owned()).collect());
    }
    Ok(Decoupled { z })
}
