//! Fidelities, `σ^z` expectation values, and deviation series.
//!
//! Expectation values are computed from probabilities `|amp|²` with bit tests,
//! never from operator matrices.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::statevec::{bit_of_site, StateVector};
use crate::trotter::TIME_EPS;

/// `|⟨a|b⟩|²`, clamped to `[0, 1]`.
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok(a.inner_product(b)?.norm_sqr().clamp(0.0, 1.0))
}

fn check_site(state: &StateVector, site: usize) -> Result<()> {
    if site < state.num_sites() {
        Ok(())
    } else {
        Err(Error::SiteOutOfRange {
            site,
            num_sites: state.num_sites(),
        })
    }
}

/// `⟨σ^z_i σ^z_j⟩`; exactly 1 when `i == j`.
pub fn correlation_zz(state: &StateVector, i: usize, j: usize) -> Result<f64> {
    check_site(state, i)?;
    check_site(state, j)?;
    if i == j {
        return Ok(1.0);
    }
    let mask = (1usize << bit_of_site(i)) | (1usize << bit_of_site(j));
    Ok(state
        .amplitudes()
        .par_iter()
        .enumerate()
        .map(|(x, a)| {
            let p = a.norm_sqr();
            if (x & mask).count_ones() == 1 {
                -p
            } else {
                p
            }
        })
        .sum())
}

/// `⟨σ^z_i⟩` on every site.
pub fn magnetization(state: &StateVector) -> Vec<f64> {
    spin_profile(state).magnetization
}

/// Per-site magnetization together with the correlations `χ_{0,i}` with the
/// first site.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinProfile {
    pub magnetization: Vec<f64>,
    pub corr_first: Vec<f64>,
}

/// Partial probability sums for one slice of the amplitudes.
#[derive(Clone)]
struct Tally {
    total: f64,
    /// Σ p over indices with bit 0 set.
    first_set: f64,
    /// Per bit: Σ p with the bit set and bit 0 clear / set.
    set_first_clear: Vec<f64>,
    set_first_set: Vec<f64>,
}

impl Tally {
    fn new(bits: usize) -> Self {
        Tally {
            total: 0.0,
            first_set: 0.0,
            set_first_clear: vec![0.0; bits],
            set_first_set: vec![0.0; bits],
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.total += other.total;
        self.first_set += other.first_set;
        for (a, b) in self.set_first_clear.iter_mut().zip(&other.set_first_clear) {
            *a += b;
        }
        for (a, b) in self.set_first_set.iter_mut().zip(&other.set_first_set) {
            *a += b;
        }
        self
    }
}

const BLOCK_BITS: usize = 8;

/// Magnetization on all sites and `χ_{0,i}` for all `i` in one pass.
pub fn spin_profile(state: &StateVector) -> SpinProfile {
    let bits = state.num_sites();
    let low = bits.min(BLOCK_BITS);
    let block = 1usize << low;
    let tally = state
        .amplitudes()
        .par_chunks(block)
        .enumerate()
        .fold(
            || Tally::new(bits),
            |mut t, (chunk, amps)| {
                let mut p = [0.0f64; 1 << BLOCK_BITS];
                for (dst, a) in p.iter_mut().zip(amps) {
                    *dst = a.norm_sqr();
                }
                let (mut even, mut odd) = (0.0, 0.0);
                for pair in p[..block].chunks_exact(2) {
                    even += pair[0];
                    odd += pair[1];
                }
                t.total += even + odd;
                t.first_set += odd;
                for bit in 1..low {
                    let (mut c, mut s) = (0.0, 0.0);
                    for (x, &px) in p[..block].iter().enumerate() {
                        if x >> bit & 1 == 1 {
                            if x & 1 == 1 {
                                s += px;
                            } else {
                                c += px;
                            }
                        }
                    }
                    t.set_first_clear[bit] += c;
                    t.set_first_set[bit] += s;
                }
                let high = chunk << low;
                for bit in low..bits {
                    if high >> bit & 1 == 1 {
                        t.set_first_clear[bit] += even;
                        t.set_first_set[bit] += odd;
                    }
                }
                t
            },
        )
        .reduce(|| Tally::new(bits), Tally::merge);

    let mut magnetization = Vec::with_capacity(bits);
    let mut corr_first = Vec::with_capacity(bits);
    for site in 0..bits {
        let bit = bit_of_site(site);
        let (set, corr) = if bit == 0 {
            (tally.first_set, 1.0)
        } else {
            let set = tally.set_first_clear[bit] + tally.set_first_set[bit];
            let differ = tally.set_first_clear[bit] + (tally.first_set - tally.set_first_set[bit]);
            (set, tally.total - 2.0 * differ)
        };
        magnetization.push(tally.total - 2.0 * set);
        corr_first.push(corr);
    }
    SpinProfile {
        magnetization,
        corr_first,
    }
}

/// Rows of values sampled at strictly increasing times.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TimeSeries {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                actual: values.len(),
            });
        }
        let mut ts = TimeSeries::new();
        for (t, v) in times.into_iter().zip(values) {
            ts.push(t, v)?;
        }
        Ok(ts)
    }

    /// Appends a row; times must increase and rows share one width.
    pub fn push(&mut self, time: f64, row: Vec<f64>) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if time <= last {
                return Err(Error::param(format!(
                    "time series must increase: {time} after {last}"
                )));
            }
        }
        if let Some(first) = self.values.first() {
            if first.len() != row.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    actual: row.len(),
                });
            }
        }
        self.times.push(time);
        self.values.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn last(&self) -> Option<(f64, &[f64])> {
        self.times.last().map(|&t| (t, self.values.last().unwrap().as_slice()))
    }

    /// Rows whose time matches one of `times` within [`TIME_EPS`], relabelled
    /// with the given times.
    pub fn restrict_to(&self, times: &[f64]) -> Result<TimeSeries> {
        let mut out = TimeSeries::new();
        let mut k = 0;
        for &t in times {
            while k < self.times.len() && self.times[k] < t - TIME_EPS {
                k += 1;
            }
            if k < self.times.len() && (self.times[k] - t).abs() <= TIME_EPS {
                out.push(t, self.values[k].clone())?;
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Times present (within [`TIME_EPS`]) in both grids, taken from `a`.
pub fn common_times(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0;
    for &t in a {
        while k < b.len() && b[k] < t - TIME_EPS {
            k += 1;
        }
        if k < b.len() && (b[k] - t).abs() <= TIME_EPS {
            out.push(t);
        }
    }
    out
}

/// Element-wise `test - reference` and its largest absolute entry. The time
/// grids must agree exactly.
pub fn deviation_series(test: &TimeSeries, reference: &TimeSeries) -> Result<(TimeSeries, f64)> {
    if test.times != reference.times {
        return Err(Error::param("deviation needs identical time grids"));
    }
    let mut out = TimeSeries::new();
    for ((&t, a), b) in test.times.iter().zip(&test.values).zip(&reference.values) {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: b.len(),
                actual: a.len(),
            });
        }
        out.push(t, a.iter().zip(b).map(|(x, y)| x - y).collect())?;
    }
    let max = out.max_abs();
    Ok((out, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::{pauli_z, TermKind, TermSpec};
    use crate::model::ChainModel;
    use crate::oracle::{apply_dense, kron_sites};
    use crate::statevec::Spin;
    use crate::C64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(n: usize, seed: u64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amps = (0..1 << n)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mut s = StateVector::from_amplitudes(amps).unwrap();
        s.normalize();
        s
    }

    fn expect(state: &StateVector, op: &nalgebra::DMatrix<C64>) -> f64 {
        state.inner_product(&apply_dense(op, state).unwrap()).unwrap().re
    }

    #[test]
    fn fidelity_basics() {
        let a = StateVector::basis_state(3, &[Spin::Up; 3]).unwrap();
        let b = StateVector::basis_state(3, &[Spin::Down; 3]).unwrap();
        assert_eq!(fidelity(&a, &a).unwrap(), 1.0);
        assert_eq!(fidelity(&a, &b).unwrap(), 0.0);
        let c = StateVector::basis_state(4, &[Spin::Up; 4]).unwrap();
        assert!(fidelity(&a, &c).is_err());
    }

    #[test]
    fn fidelity_symmetric_and_phase_blind() {
        let a = random_state(5, 1);
        let b = random_state(5, 2);
        let f = fidelity(&a, &b).unwrap();
        assert!((f - fidelity(&b, &a).unwrap()).abs() < 1e-15);
        let phase = C64::from_polar(1.0, 0.83);
        let ap = StateVector::from_amplitudes(a.amplitudes().iter().map(|x| x * phase).collect()).unwrap();
        assert!((fidelity(&ap, &b).unwrap() - f).abs() < 1e-14);
        assert!((fidelity(&ap, &a).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn initial_profiles() {
        let s = ChainModel::xy(6).unwrap().initial_state().unwrap();
        assert_eq!(magnetization(&s), vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        assert_eq!(correlation_zz(&s, 0, 5).unwrap(), -1.0);
        let s = ChainModel::tfi(5, 0.5).unwrap().initial_state().unwrap();
        assert_eq!(magnetization(&s), vec![-1.0; 5]);
        let amps = vec![C64::new(0.5, 0.0); 4];
        let s = StateVector::from_amplitudes(amps).unwrap();
        assert_eq!(magnetization(&s), vec![0.0, 0.0]);
    }

    #[test]
    fn product_state_correlations_factorize() {
        // Each new factor becomes the lowest bit, so sites are added from the top.
        let angles: [f64; 4] = [0.3, 1.1, 2.0, 0.7];
        let mut amps = vec![C64::new(1.0, 0.0)];
        for &a in angles.iter().rev() {
            amps = amps
                .iter()
                .flat_map(|&x| [x * a.cos(), x * a.sin()])
                .collect::<Vec<_>>();
        }
        let s = StateVector::from_amplitudes(amps).unwrap();
        let m = magnetization(&s);
        for i in 0..4 {
            for j in 0..4 {
                let chi = correlation_zz(&s, i, j).unwrap();
                let want = if i == j { 1.0 } else { m[i] * m[j] };
                assert!((chi - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn profile_matches_dense_operators() {
        for n in [1usize, 2, 3, 6] {
            let s = if n == 1 {
                StateVector::from_amplitudes(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]).unwrap()
            } else {
                random_state(n, n as u64)
            };
            let prof = spin_profile(&s);
            for i in 0..n {
                let zi = kron_sites(n, &[(i, pauli_z())]);
                assert!((prof.magnetization[i] - expect(&s, &zi)).abs() < 1e-12);
                for j in 0..n {
                    let zz = if i == j {
                        nalgebra::DMatrix::identity(1 << n, 1 << n)
                    } else {
                        kron_sites(n, &[(i, pauli_z()), (j, pauli_z())])
                    };
                    let chi = correlation_zz(&s, i, j).unwrap();
                    assert!((chi - expect(&s, &zz)).abs() < 1e-12);
                    if i == 0 {
                        assert!((prof.corr_first[j] - chi).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn profile_large_register_uses_block_path() {
        let s = random_state(11, 5);
        let prof = spin_profile(&s);
        for i in 0..11 {
            let direct: f64 = s
                .amplitudes()
                .iter()
                .enumerate()
                .map(|(x, a)| if x >> i & 1 == 0 { a.norm_sqr() } else { -a.norm_sqr() })
                .sum();
            assert!((prof.magnetization[i] - direct).abs() < 1e-12);
            assert!((prof.corr_first[i] - correlation_zz(&s, 0, i).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn site_range_checked() {
        let s = random_state(3, 0);
        assert!(matches!(correlation_zz(&s, 0, 3), Err(Error::SiteOutOfRange { site: 3, .. })));
    }

    #[test]
    fn xy_gate_conserves_total_sz() {
        let s0 = random_state(4, 9);
        let total = |s: &StateVector| magnetization(s).iter().sum::<f64>();
        let before = total(&s0);
        let mut s = s0.clone();
        if let crate::gates::GateMatrix::Two(u) = TermSpec::new(TermKind::XxPlusYy, 1.0).exp(0.37) {
            s.apply_2q(1, 2, &u).unwrap();
            s.apply_2q(0, 1, &u).unwrap();
        }
        assert!((total(&s) - before).abs() < 1e-12);
    }

    #[test]
    fn deviation_of_identical_series_is_zero() {
        let ts = TimeSeries::from_parts(vec![0.0, 0.5, 1.0], vec![vec![1.0, -1.0], vec![0.2, 0.3], vec![0.0, 0.1]]).unwrap();
        let (dev, max) = deviation_series(&ts, &ts).unwrap();
        assert_eq!(max, 0.0);
        assert!(dev.values().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn deviation_takes_max_over_sites_and_times() {
        let a = TimeSeries::from_parts(vec![0.0, 1.0], vec![vec![1.0, 0.0], vec![0.5, -0.2]]).unwrap();
        let b = TimeSeries::from_parts(vec![0.0, 1.0], vec![vec![1.0, 0.1], vec![0.1, 0.2]]).unwrap();
        let (_, max) = deviation_series(&a, &b).unwrap();
        assert!((max - 0.4).abs() < 1e-15);
        let c = TimeSeries::from_parts(vec![0.0, 1.5], vec![vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(deviation_series(&a, &c).is_err());
    }

    #[test]
    fn time_series_rejects_unordered_times() {
        let mut ts = TimeSeries::new();
        ts.push(1.0, vec![0.0]).unwrap();
        assert!(ts.push(1.0, vec![0.0]).is_err());
        assert!(ts.push(2.0, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn common_grid_intersection() {
        let fine: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let coarse: Vec<f64> = (0..=25).map(|k| k as f64 * 0.4).collect();
        let common = common_times(&fine, &coarse);
        assert_eq!(common.len(), 26);
        let ts = TimeSeries::from_parts(fine.clone(), fine.iter().map(|&t| vec![t]).collect()).unwrap();
        let r = ts.restrict_to(&coarse).unwrap();
        assert_eq!(r.len(), 26);
        assert_eq!(r.times(), coarse.as_slice());
    }

    proptest! {
        #[test]
        fn correlations_are_bounded(seed in 0u64..500, i in 0usize..5, j in 0usize..5) {
            let s = random_state(5, seed);
            let chi = correlation_zz(&s, i, j).unwrap();
            prop_assert!(chi.abs() <= 1.0 + 1e-12);
            if i == j {
                prop_assert_eq!(chi, 1.0);
            }
        }
    }
}
