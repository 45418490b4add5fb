//! Queue, channel, and arrival models, plus the exact controlled transition
//! kernels they induce.
//!
//! A [`QueueSpec`] describes one user: finite buffer `M`, per-packet holding
//! cost `C`, Poisson arrival rate, a convex increasing energy function, and a
//! finite Markov channel. Queue dynamics are
//! `x' = min(x - u*z + K, M)` with `K ~ Poisson(rate)`; the kernel builders
//! lump the Poisson tail onto the buffer cap exactly, so every row is a
//! probability vector for the finite MDP.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row sums and probability entries are validated to this tolerance.
pub const KERNEL_TOL: f64 = 1e-12;

/// Poisson support is enumerated until this much mass is covered; the
/// remainder is lumped (it lands on the buffer cap anyway).
const PMF_COVERAGE: f64 = 1.0 - 1e-14;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("queue state {x} exceeds buffer {m}")]
    StateOutOfRange { x: usize, m: usize },
    #[error("transmission count {z} exceeds queue state {x}")]
    TransmitTooLarge { z: usize, x: usize },
}

// ── Energy functions ──────────────────────────────────────────────────────

/// Energy cost `f(z)` of transmitting `z` packets in one slot. The cost of a
/// transmission in channel state `mu` is `mu * f(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnergyFn {
    /// `f(z) = 2^z - 1`
    Exponential,
    /// `f(z) = k * z^2`
    Quadratic { k: f64 },
    /// Tabulated values, `values[z] = f(z)`.
    Table { values: Vec<f64> },
}

impl EnergyFn {
    pub fn eval(&self, z: usize) -> f64 {
        match self {
            EnergyFn::Exponential => (z as f64).exp2() - 1.0,
            EnergyFn::Quadratic { k } => k * (z * z) as f64,
            EnergyFn::Table { values } => values[z],
        }
    }

    /// f(0..=m) as a lookup vector.
    pub fn table(&self, m: usize) -> Vec<f64> {
        (0..=m).map(|z| self.eval(z)).collect()
    }
}

// ── Channel model ─────────────────────────────────────────────────────────

/// Finite irreducible Markov channel. `states` are the real channel values
/// (larger = noisier = more energy per packet), strictly increasing;
/// `kernel[a][b]` is the transition probability from `states[a]` to
/// `states[b]`. Internally channel states are referred to by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub states: Vec<f64>,
    pub kernel: Vec<Vec<f64>>,
}

impl ChannelModel {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// First-order stochastic dominance of row `a` over row `b`:
    /// tail sums of row `a` dominate those of row `b`.
    pub fn row_dominates(&self, a: usize, b: usize) -> bool {
        let n = self.n_states();
        let mut tail_a = 0.0;
        let mut tail_b = 0.0;
        for m in (0..n).rev() {
            tail_a += self.kernel[a][m];
            tail_b += self.kernel[b][m];
            if tail_a < tail_b - KERNEL_TOL {
                return false;
            }
        }
        true
    }

    /// Single communicating class on the strictly-positive support.
    pub fn is_irreducible(&self) -> bool {
        let n = self.n_states();
        if n == 0 {
            return false;
        }
        let reach = |forward: bool| -> usize {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    let p = if forward {
                        self.kernel[i][j]
                    } else {
                        self.kernel[j][i]
                    };
                    if p > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.iter().filter(|&&s| s).count()
        };
        reach(true) == n && reach(false) == n
    }
}

// ── Arrivals ──────────────────────────────────────────────────────────────

/// Truncated Poisson arrival distribution used for kernel construction:
/// exact pmf values for `k = 0..pmf.len()`, with the remaining tail mass
/// lumped (onto the buffer cap by the kernel builders).
#[derive(Debug, Clone)]
pub struct ArrivalDist {
    pub rate: f64,
    pub pmf: Vec<f64>,
    pub tail: f64,
}

impl ArrivalDist {
    /// Enumerate pmf terms until `PMF_COVERAGE` of the mass is covered or
    /// `max_support` terms have been produced, whichever comes first.
    pub fn new(rate: f64, max_support: usize) -> Self {
        if rate == 0.0 {
            let n = max_support.max(1).min(1);
            let mut pmf = vec![0.0; n];
            pmf[0] = 1.0;
            return Self { rate, pmf, tail: 0.0 };
        }
        let mut pmf = Vec::new();
        let mut p = (-rate).exp();
        let mut cum = p;
        pmf.push(p);
        while cum < PMF_COVERAGE && pmf.len() < max_support.max(1) {
            let k = pmf.len() as f64;
            p *= rate / k;
            pmf.push(p);
            cum += p;
        }
        Self { rate, pmf, tail: (1.0 - cum).max(0.0) }
    }

    /// Exact Poisson pmf at `k`, independent of the truncation.
    pub fn pmf_exact(&self, k: usize) -> f64 {
        if self.rate == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        let mut p = (-self.rate).exp();
        for i in 1..=k {
            p *= self.rate / i as f64;
        }
        p
    }

    /// Complementary CDF `P(K >= k)` computed by direct summation.
    pub fn ccdf(&self, k: usize) -> f64 {
        if k == 0 {
            return 1.0;
        }
        let mut cum = 0.0;
        let mut p = if self.rate == 0.0 { 1.0 } else { (-self.rate).exp() };
        if self.rate == 0.0 {
            return 0.0;
        }
        cum += p;
        for i in 1..k {
            p *= self.rate / i as f64;
            cum += p;
        }
        (1.0 - cum).max(0.0)
    }
}

// ── Queue specification ───────────────────────────────────────────────────

/// One user's queue: buffer size, holding cost, Poisson arrival rate, energy
/// function, and channel model. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueSpec {
    /// Buffer size `M`; queue states are `0..=M`.
    pub buffer: usize,
    /// Holding cost `C` per packet per slot.
    pub holding_cost: f64,
    /// Poisson arrival rate per slot.
    pub arrival_rate: f64,
    pub energy: EnergyFn,
    pub channel: ChannelModel,
}

impl QueueSpec {
    pub fn n_states(&self) -> usize {
        (self.buffer + 1) * self.channel.n_states()
    }

    fn kernel_row(&self, from_level: usize) -> Vec<f64> {
        let m = self.buffer;
        let arr = ArrivalDist::new(self.arrival_rate, m.max(1));
        let mut row = vec![0.0; m + 1];
        for (k, &p) in arr.pmf.iter().enumerate() {
            row[(from_level + k).min(m)] += p;
        }
        row[m] += arr.tail;
        row
    }

    /// Transition row for an active queue holding `x` packets and
    /// transmitting `z` of them: `P(x' = min(x - z + K, M))`.
    pub fn active_kernel(&self, x: usize, z: usize) -> Result<Vec<f64>, ModelError> {
        if x > self.buffer {
            return Err(ModelError::StateOutOfRange { x, m: self.buffer });
        }
        if z > x {
            return Err(ModelError::TransmitTooLarge { z, x });
        }
        Ok(self.kernel_row(x - z))
    }

    /// Transition row for a passive queue: `active_kernel(x, 0)`.
    pub fn passive_kernel(&self, x: usize) -> Result<Vec<f64>, ModelError> {
        self.active_kernel(x, 0)
    }

    /// All arrival rows `level -> distribution over 0..=M`, for solvers.
    pub fn arrival_rows(&self) -> Vec<Vec<f64>> {
        (0..=self.buffer).map(|d| self.kernel_row(d)).collect()
    }
}

// ── Validation ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    EnergyNonzeroAtOrigin { value: f64 },
    EnergyDecreasing { z: usize },
    EnergyNonConvex { z: usize, second_difference: f64 },
    EnergyTableTooShort { len: usize, needed: usize },
    ChannelStatesEmpty,
    ChannelStatesNotIncreasing { index: usize },
    ChannelStateNonPositive { index: usize },
    KernelNotSquare,
    KernelRowSum { row: usize, sum: f64 },
    KernelEntryOutOfRange { row: usize, col: usize, value: f64 },
    KernelNotIrreducible,
    ChannelNotFsd { upper_row: usize, lower_row: usize },
    NonPositiveHoldingCost { value: f64 },
    NegativeArrivalRate { value: f64 },
    NonFiniteField { field: &'static str },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::EnergyNonzeroAtOrigin { value } => write!(f, "f(0) = {value}, expected 0"),
            Violation::EnergyDecreasing { z } => write!(f, "energy decreasing at z={z}"),
            Violation::EnergyNonConvex { z, second_difference } => {
                write!(f, "energy non-convex at z={z} (second difference {second_difference})")
            }
            Violation::EnergyTableTooShort { len, needed } => {
                write!(f, "energy table has {len} entries, needs {needed}")
            }
            Violation::ChannelStatesEmpty => write!(f, "channel has no states"),
            Violation::ChannelStatesNotIncreasing { index } => {
                write!(f, "channel states not strictly increasing at index {index}")
            }
            Violation::ChannelStateNonPositive { index } => {
                write!(f, "channel state {index} is not positive")
            }
            Violation::KernelNotSquare => write!(f, "channel kernel is not square"),
            Violation::KernelRowSum { row, sum } => {
                write!(f, "kernel row {row} sums to {sum}")
            }
            Violation::KernelEntryOutOfRange { row, col, value } => {
                write!(f, "kernel entry ({row},{col}) = {value} outside [0,1]")
            }
            Violation::KernelNotIrreducible => write!(f, "channel kernel is not irreducible"),
            Violation::ChannelNotFsd { upper_row, lower_row } => {
                write!(f, "row {upper_row} does not stochastically dominate row {lower_row}")
            }
            Violation::NonPositiveHoldingCost { value } => {
                write!(f, "holding cost {value} must be positive")
            }
            Violation::NegativeArrivalRate { value } => {
                write!(f, "arrival rate {value} must be non-negative")
            }
            Violation::NonFiniteField { field } => write!(f, "{field} is not finite"),
        }
    }
}

/// Advisory validation report; `--strict` front-ends turn any violation into
/// a hard error.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every invariant a [`QueueSpec`] is supposed to satisfy. Violations
/// are reported, not raised; one deliberate baseline uses non-FSD channels.
pub fn validate(spec: &QueueSpec) -> ValidationReport {
    let mut v = Vec::new();

    if !spec.holding_cost.is_finite() {
        v.push(Violation::NonFiniteField { field: "holding_cost" });
    } else if spec.holding_cost <= 0.0 {
        v.push(Violation::NonPositiveHoldingCost { value: spec.holding_cost });
    }
    if !spec.arrival_rate.is_finite() {
        v.push(Violation::NonFiniteField { field: "arrival_rate" });
    } else if spec.arrival_rate < 0.0 {
        v.push(Violation::NegativeArrivalRate { value: spec.arrival_rate });
    }

    // Energy: f(0) = 0, non-decreasing, convex over 0..=M.
    if let EnergyFn::Table { values } = &spec.energy {
        if values.len() < spec.buffer + 1 {
            v.push(Violation::EnergyTableTooShort { len: values.len(), needed: spec.buffer + 1 });
        }
    }
    let upto = match &spec.energy {
        EnergyFn::Table { values } => values.len().saturating_sub(1).min(spec.buffer),
        _ => spec.buffer,
    };
    let f = spec.energy.table(upto);
    if let Some(&f0) = f.first() {
        if f0 != 0.0 {
            v.push(Violation::EnergyNonzeroAtOrigin { value: f0 });
        }
    }
    for z in 1..f.len() {
        if f[z] < f[z - 1] {
            v.push(Violation::EnergyDecreasing { z });
        }
    }
    for z in 1..f.len().saturating_sub(1) {
        let d2 = (f[z + 1] - f[z]) - (f[z] - f[z - 1]);
        if d2 < -KERNEL_TOL {
            v.push(Violation::EnergyNonConvex { z, second_difference: d2 });
        }
    }

    // Channel states.
    let ch = &spec.channel;
    let n = ch.n_states();
    if n == 0 {
        v.push(Violation::ChannelStatesEmpty);
        return ValidationReport { violations: v };
    }
    for (i, &s) in ch.states.iter().enumerate() {
        if !s.is_finite() || s <= 0.0 {
            v.push(Violation::ChannelStateNonPositive { index: i });
        }
        if i > 0 && s <= ch.states[i - 1] {
            v.push(Violation::ChannelStatesNotIncreasing { index: i });
        }
    }

    // Kernel shape, stochasticity, irreducibility, FSD.
    if ch.kernel.len() != n || ch.kernel.iter().any(|r| r.len() != n) {
        v.push(Violation::KernelNotSquare);
        return ValidationReport { violations: v };
    }
    for (i, row) in ch.kernel.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > KERNEL_TOL {
            v.push(Violation::KernelRowSum { row: i, sum });
        }
        for (j, &p) in row.iter().enumerate() {
            if !(0.0..=1.0 + KERNEL_TOL).contains(&p) {
                v.push(Violation::KernelEntryOutOfRange { row: i, col: j, value: p });
            }
        }
    }
    if !ch.is_irreducible() {
        v.push(Violation::KernelNotIrreducible);
    }
    for a in 1..n {
        if !ch.row_dominates(a, a - 1) {
            v.push(Violation::ChannelNotFsd { upper_row: a, lower_row: a - 1 });
        }
    }

    ValidationReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_channel() -> ChannelModel {
        ChannelModel {
            states: vec![1.0, 2.0],
            kernel: vec![vec![0.7, 0.3], vec![0.3, 0.7]],
        }
    }

    fn spec(m: usize, rate: f64) -> QueueSpec {
        QueueSpec {
            buffer: m,
            holding_cost: 1.0,
            arrival_rate: rate,
            energy: EnergyFn::Exponential,
            channel: two_state_channel(),
        }
    }

    const E1: f64 = 0.36787944117144233; // exp(-1)

    #[test]
    fn active_kernel_no_arrivals_is_point_mass() {
        let row = spec(50, 0.0).active_kernel(3, 2).unwrap();
        assert_eq!(row[1], 1.0);
        assert_eq!(row.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn active_kernel_saturated_state_lumps_everything() {
        let row = spec(3, 1.0).active_kernel(3, 0).unwrap();
        assert_eq!(row[3], 1.0);
    }

    #[test]
    fn active_kernel_matches_poisson_pmf() {
        let row = spec(50, 1.0).active_kernel(3, 2).unwrap();
        assert!((row[1] - E1).abs() < 1e-15);
        assert!((row[2] - E1).abs() < 1e-15);
        assert!((row[3] - E1 / 2.0).abs() < 1e-15);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < KERNEL_TOL);
    }

    #[test]
    fn passive_kernel_examples() {
        let row = spec(50, 0.0).passive_kernel(7).unwrap();
        assert_eq!(row[7], 1.0);

        let row = spec(2, 1.0).passive_kernel(0).unwrap();
        assert!((row[0] - E1).abs() < 1e-15);
        assert!((row[1] - E1).abs() < 1e-15);
        assert!((row[2] - (1.0 - 2.0 * E1)).abs() < 1e-15);
    }

    #[test]
    fn passive_equals_active_with_zero() {
        let s = spec(9, 1.3);
        for x in 0..=9 {
            assert_eq!(s.passive_kernel(x).unwrap(), s.active_kernel(x, 0).unwrap());
        }
    }

    #[test]
    fn kernel_domain_errors() {
        let s = spec(5, 1.0);
        assert!(matches!(s.active_kernel(3, 4), Err(ModelError::TransmitTooLarge { .. })));
        assert!(matches!(s.active_kernel(6, 0), Err(ModelError::StateOutOfRange { .. })));
        assert!(s.passive_kernel(6).is_err());
    }

    #[test]
    fn tail_mass_matches_complementary_cdf() {
        let s = spec(4, 1.7);
        let arr = ArrivalDist::new(1.7, 1000);
        for x in 0..=4usize {
            for z in 0..=x {
                let row = s.active_kernel(x, z).unwrap();
                let need = 4 - (x - z);
                assert!(
                    (row[4] - arr.ccdf(need)).abs() < 1e-13,
                    "x={x} z={z}: {} vs {}",
                    row[4],
                    arr.ccdf(need)
                );
            }
        }
    }

    #[test]
    fn validate_paper_channel_passes() {
        assert!(validate(&spec(50, 1.0)).is_ok());
    }

    #[test]
    fn validate_flags_fsd_violation() {
        let mut s = spec(5, 1.0);
        s.channel.kernel = vec![vec![0.3, 0.7], vec![0.7, 0.3]];
        let rep = validate(&s);
        assert!(rep.violations.iter().any(|v| matches!(v, Violation::ChannelNotFsd { .. })));
    }

    #[test]
    fn validate_flags_nonconvex_energy_table() {
        let mut s = spec(2, 1.0);
        s.energy = EnergyFn::Table { values: vec![0.0, 1.0, 1.5] };
        let rep = validate(&s);
        assert!(rep
            .violations
            .iter()
            .any(|v| matches!(v, Violation::EnergyNonConvex { z: 1, .. })));
    }

    #[test]
    fn validate_flags_bad_row_sum() {
        let mut s = spec(5, 1.0);
        s.channel.kernel = vec![vec![0.6, 0.3], vec![0.3, 0.7]];
        let rep = validate(&s);
        assert!(rep.violations.iter().any(|v| matches!(v, Violation::KernelRowSum { row: 0, .. })));
    }

    #[test]
    fn monotone_coupling_in_x() {
        // For x' >= x and equal z, the active kernel at x' dominates (tail sums).
        let s = spec(8, 1.2);
        for x in 0..8usize {
            for z in 0..=x {
                let lo = s.active_kernel(x, z).unwrap();
                let hi = s.active_kernel(x + 1, z).unwrap();
                let mut tl = 0.0;
                let mut th = 0.0;
                for y in (0..=8).rev() {
                    tl += lo[y];
                    th += hi[y];
                    assert!(th >= tl - KERNEL_TOL, "x={x} z={z} y={y}");
                }
            }
        }
    }
}
