//! Dense statevector storage and in-place gate kernels.
//!
//! Basis convention: site `i` is bit `i` of the amplitude index (site 0 is the
//! least significant bit), `|↑⟩` is bit value 0 and `|↓⟩` is bit value 1, so
//! `σ^z = diag(+1, -1)` in bit order.
//!
//! Two-site gate matrices are indexed by `bit_a + 2 * bit_b`, i.e. rows and
//! columns run over `(bit_b, bit_a) = (0,0), (0,1), (1,0), (1,1)` with `site_a`
//! the low-order index.

use nalgebra::{Matrix2, Matrix4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::C64;

/// Unitarity tolerance applied to gate matrices in debug builds.
pub const UNITARY_TOL: f64 = 1e-12;

/// Chunks of `2^LOW_WINDOW` contiguous amplitudes are processed gate-by-gate
/// while resident in cache.
const LOW_WINDOW: usize = 14;
/// Up to this size the whole state is treated as one chunk.
const FLAT_MAX_SITES: usize = 15;
/// Scratch buffer size (amplitudes) for gates on high bits.
const GATHER_AMPS: usize = 1 << 15;
/// Bits per lookup table when fusing diagonal two-site gates.
const PHASE_WINDOW: usize = 13;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    /// Bit value encoding this spin.
    pub fn bit(self) -> usize {
        match self {
            Spin::Up => 0,
            Spin::Down => 1,
        }
    }

    /// Eigenvalue of `σ^z`.
    pub fn sigma_z(self) -> f64 {
        match self {
            Spin::Up => 1.0,
            Spin::Down => -1.0,
        }
    }
}

/// Bit position holding `site`.
#[inline]
pub fn bit_of_site(site: usize) -> usize {
    site
}

/// Site stored at bit position `bit`.
#[inline]
pub fn site_of_bit(bit: usize) -> usize {
    bit
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    num_sites: usize,
    amps: Vec<C64>,
}

impl StateVector {
    /// Computational basis state with the given spin on each site.
    pub fn basis_state(num_sites: usize, spins: &[Spin]) -> Result<Self> {
        if num_sites == 0 {
            return Err(Error::param("chain needs at least one site"));
        }
        if spins.len() != num_sites {
            return Err(Error::DimensionMismatch {
                expected: num_sites,
                actual: spins.len(),
            });
        }
        let index = spins
            .iter()
            .enumerate()
            .fold(0usize, |acc, (site, s)| acc | (s.bit() << bit_of_site(site)));
        Self::basis_index(num_sites, index)
    }

    /// Computational basis state `|index⟩`.
    pub fn basis_index(num_sites: usize, index: usize) -> Result<Self> {
        if num_sites == 0 || num_sites >= usize::BITS as usize {
            return Err(Error::param(format!("unsupported chain length {num_sites}")));
        }
        let dim = 1usize << num_sites;
        if index >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: index,
            });
        }
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Ok(StateVector { num_sites, amps })
    }

    /// Wraps raw amplitudes. The length must be a power of two; no
    /// normalisation is applied.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::param(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        Ok(StateVector {
            num_sites: len.trailing_zeros() as usize,
            amps,
        })
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            let inv = 1.0 / n;
            self.amps.iter_mut().for_each(|a| *a *= inv);
        }
    }

    /// `⟨self|other⟩ = Σ conj(self_i) · other_i`.
    pub fn inner_product(&self, other: &StateVector) -> Result<C64> {
        if self.num_sites != other.num_sites {
            return Err(Error::DimensionMismatch {
                expected: self.num_sites,
                actual: other.num_sites,
            });
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .fold(ZERO, |acc, (a, b)| acc + a.conj() * b))
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.num_sites {
            Err(Error::SiteOutOfRange {
                site,
                num_sites: self.num_sites,
            })
        } else {
            Ok(())
        }
    }

    /// Applies a single-site unitary in place.
    pub fn apply_1q(&mut self, site: usize, u: &Matrix2<C64>) -> Result<()> {
        let gate = Gate::one(site, u);
        self.check_gate(&gate)?;
        if cfg!(debug_assertions) {
            check_unitary2(u)?;
        }
        gate.apply_flat(&mut self.amps);
        Ok(())
    }

    /// Applies a two-site unitary in place; see the module docs for the
    /// row/column order of `u`.
    pub fn apply_2q(&mut self, site_a: usize, site_b: usize, u: &Matrix4<C64>) -> Result<()> {
        let gate = Gate::two(site_a, site_b, u);
        self.check_gate(&gate)?;
        if cfg!(debug_assertions) {
            check_unitary4(u)?;
        }
        gate.apply_flat(&mut self.amps);
        Ok(())
    }

    fn check_gate(&self, gate: &Gate) -> Result<()> {
        match *gate {
            Gate::One { bit, .. } => self.check_site(site_of_bit(bit)),
            Gate::Two { bit_a, bit_b, .. } => {
                self.check_site(site_of_bit(bit_a))?;
                self.check_site(site_of_bit(bit_b))?;
                if bit_a == bit_b {
                    Err(Error::RepeatedSite(site_of_bit(bit_a)))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Applies `gates` in order. Gates on disjoint sites may be regrouped
    /// into cache-sized batches; the result equals sequential application.
    pub fn apply_gates(&mut self, gates: &[Gate]) -> Result<()> {
        for g in gates {
            self.check_gate(g)?;
        }
        let mut pending: Vec<Gate> = Vec::with_capacity(gates.len());
        let mut i = 0;
        while i < gates.len() {
            let run = gates[i..].iter().take_while(|g| g.is_diagonal_pair()).count();
            if run >= 2 {
                self.apply_batched(&pending);
                pending.clear();
                let (table, rest) = PhaseTable::fuse(self.num_sites, &gates[i..i + run]);
                table.apply(&mut self.amps);
                // Diagonal gates commute, so leftovers may follow the table.
                pending.extend(rest);
                i += run;
            } else {
                pending.push(gates[i]);
                i += 1;
            }
        }
        self.apply_batched(&pending);
        Ok(())
    }

    fn apply_batched(&mut self, gates: &[Gate]) {
        let n = self.num_sites;
        if n <= FLAT_MAX_SITES {
            for g in gates {
                g.apply_flat(&mut self.amps);
            }
            return;
        }

        // The high window overlaps the low one by a bit so that every
        // nearest-neighbour bond fits in at least one window.
        let high_start = LOW_WINDOW - 1;
        let low_limit = 1usize << LOW_WINDOW;
        let high_floor = 1usize << high_start;
        let in_low = |g: &Gate| g.mask() < low_limit;
        let in_high = |g: &Gate| g.mask() & (high_floor - 1) == 0;

        let mut done = vec![false; gates.len()];
        let mut remaining = gates.len();
        let mut batch: Vec<Gate> = Vec::new();
        while remaining > 0 {
            let mut progressed = false;
            for low_phase in [true, false] {
                batch.clear();
                let mut blocked = 0usize;
                for (i, g) in gates.iter().enumerate() {
                    if done[i] {
                        continue;
                    }
                    let fits = if low_phase { in_low(g) } else { in_high(g) };
                    if fits && g.mask() & blocked == 0 {
                        batch.push(*g);
                        done[i] = true;
                    } else {
                        blocked |= g.mask();
                    }
                }
                if batch.is_empty() {
                    continue;
                }
                progressed = true;
                remaining -= batch.len();
                if low_phase {
                    let batch = &batch;
                    self.amps.par_chunks_mut(low_limit).for_each(|chunk| {
                        for g in batch {
                            g.apply_flat(chunk);
                        }
                    });
                } else {
                    apply_gathered(&mut self.amps, n, high_start, &batch);
                }
            }
            if !progressed {
                // Neither window holds the next gate; apply it on its own.
                let i = done.iter().position(|d| !d).expect("remaining > 0");
                gates[i].apply_flat(&mut self.amps);
                done[i] = true;
                remaining -= 1;
            }
        }
    }
}

/// Structural class of a gate matrix; picks the cheapest exact kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel2 {
    /// `diag(d0, d1, d2, d3)`.
    Diagonal([C64; 4]),
    /// Identity on `|00⟩`, `|11⟩` and `[[c, i s], [i s, c]]` on `{|01⟩, |10⟩}`.
    Rotation { c: f64, s: f64 },
    /// Phases `d00`, `d11` on `|00⟩`, `|11⟩` and a 2×2 block on `{|01⟩, |10⟩}`.
    Exchange { d00: C64, d11: C64, block: [C64; 4] },
    /// Row-major 4×4.
    Dense([C64; 16]),
}

impl Kernel2 {
    pub fn classify(u: &Matrix4<C64>) -> Self {
        let off_diag_zero = |pairs: &[(usize, usize)]| pairs.iter().all(|&(r, c)| u[(r, c)] == ZERO);
        let all_off: Vec<(usize, usize)> = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .filter(|(r, c)| r != c)
            .collect();
        if off_diag_zero(&all_off) {
            return Kernel2::Diagonal([u[(0, 0)], u[(1, 1)], u[(2, 2)], u[(3, 3)]]);
        }
        let outside_block: Vec<(usize, usize)> = all_off
            .iter()
            .copied()
            .filter(|&(r, c)| !((r == 1 || r == 2) && (c == 1 || c == 2)))
            .collect();
        if off_diag_zero(&outside_block) {
            let block = [u[(1, 1)], u[(1, 2)], u[(2, 1)], u[(2, 2)]];
            if u[(0, 0)] == ONE && u[(3, 3)] == ONE {
                if let Some((c, s)) = rotation_parts(&block) {
                    return Kernel2::Rotation { c, s };
                }
            }
            return Kernel2::Exchange {
                d00: u[(0, 0)],
                d11: u[(3, 3)],
                block: [u[(1, 1)], u[(1, 2)], u[(2, 1)], u[(2, 2)]],
            };
        }
        let mut m = [ZERO; 16];
        for r in 0..4 {
            for c in 0..4 {
                m[4 * r + c] = u[(r, c)];
            }
        }
        Kernel2::Dense(m)
    }
}

/// `Some((c, s))` when `m = [[c, i s], [i s, c]]` with real `c`, `s`.
fn rotation_parts(m: &[C64; 4]) -> Option<(f64, f64)> {
    let symmetric = m[0] == m[3] && m[1] == m[2];
    (symmetric && m[0].im == 0.0 && m[1].re == 0.0).then_some((m[0].re, m[1].im))
}

/// Structural class of a single-site gate matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel1 {
    /// `[[c, i s], [i s, c]]`.
    Rotation { c: f64, s: f64 },
    /// Row-major 2×2.
    Dense([C64; 4]),
}

impl Kernel1 {
    pub fn classify(u: &Matrix2<C64>) -> Self {
        let m = [u[(0, 0)], u[(0, 1)], u[(1, 0)], u[(1, 1)]];
        match rotation_parts(&m) {
            Some((c, s)) => Kernel1::Rotation { c, s },
            None => Kernel1::Dense(m),
        }
    }
}

/// `c x + i s y` for real `c`, `s`.
#[inline(always)]
fn rot(c: f64, s: f64, x: C64, y: C64) -> C64 {
    C64::new(c * x.re - s * y.im, c * x.im + s * y.re)
}

/// A gate bound to its target bit(s), ready for a kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    One { bit: usize, kernel: Kernel1 },
    Two { bit_a: usize, bit_b: usize, kernel: Kernel2 },
}

impl Gate {
    pub fn one(site: usize, u: &Matrix2<C64>) -> Self {
        Gate::One {
            bit: bit_of_site(site),
            kernel: Kernel1::classify(u),
        }
    }

    pub fn two(site_a: usize, site_b: usize, u: &Matrix4<C64>) -> Self {
        Gate::Two {
            bit_a: bit_of_site(site_a),
            bit_b: bit_of_site(site_b),
            kernel: Kernel2::classify(u),
        }
    }

    /// Bit mask of the touched positions.
    pub fn mask(&self) -> usize {
        match *self {
            Gate::One { bit, .. } => 1 << bit,
            Gate::Two { bit_a, bit_b, .. } => (1 << bit_a) | (1 << bit_b),
        }
    }

    fn is_diagonal_pair(&self) -> bool {
        matches!(self, Gate::Two { kernel: Kernel2::Diagonal(_), .. })
    }

    /// Moves every touched bit from `bit` to `bit - from + to`.
    fn rebased(&self, from: usize, to: usize) -> Gate {
        match *self {
            Gate::One { bit, kernel } => Gate::One { bit: bit - from + to, kernel },
            Gate::Two { bit_a, bit_b, kernel } => Gate::Two {
                bit_a: bit_a - from + to,
                bit_b: bit_b - from + to,
                kernel,
            },
        }
    }

    /// Applies to a contiguous slice whose length covers every touched bit.
    fn apply_flat(&self, amps: &mut [C64]) {
        match *self {
            Gate::One { bit, kernel: Kernel1::Rotation { c, s } } => {
                for_each_pair(amps, bit, |s0, s1| {
                    for (x0, x1) in s0.iter_mut().zip(s1) {
                        let (a, b) = (*x0, *x1);
                        *x0 = rot(c, s, a, b);
                        *x1 = rot(c, s, b, a);
                    }
                });
            }
            Gate::One { bit, kernel: Kernel1::Dense(m) } => {
                for_each_pair(amps, bit, |s0, s1| {
                    for (x0, x1) in s0.iter_mut().zip(s1) {
                        let (a, b) = (*x0, *x1);
                        *x0 = m[0] * a + m[1] * b;
                        *x1 = m[2] * a + m[3] * b;
                    }
                });
            }
            Gate::Two { bit_a, bit_b, kernel } => {
                let (lo, hi) = (bit_a.min(bit_b), bit_a.max(bit_b));
                let a_is_low = bit_a < bit_b;
                // Slices arrive as (00, lo set, hi set, both); the matrix
                // order is (00, a set, b set, both).
                match kernel {
                    Kernel2::Diagonal(d) => {
                        let (d1, d2) = if a_is_low { (d[1], d[2]) } else { (d[2], d[1]) };
                        for_each_quad(amps, lo, hi, |s00, s01, s10, s11| {
                            for (s, f) in [(s00, d[0]), (s01, d1), (s10, d2), (s11, d[3])] {
                                s.iter_mut().for_each(|x| *x *= f);
                            }
                        });
                    }
                    Kernel2::Rotation { c, s } => {
                        // Only the |01⟩, |10⟩ pair moves; its order is symmetric.
                        for_each_quad(amps, lo, hi, |_, s01, s10, _| {
                            for (x1, x2) in s01.iter_mut().zip(s10) {
                                let (a, b) = (*x1, *x2);
                                *x1 = rot(c, s, a, b);
                                *x2 = rot(c, s, b, a);
                            }
                        });
                    }
                    Kernel2::Exchange { d00, d11, block } => {
                        let phase_free = d00 == ONE && d11 == ONE;
                        for_each_quad(amps, lo, hi, |s00, s01, s10, s11| {
                            let (sa, sb) = if a_is_low { (s01, s10) } else { (s10, s01) };
                            for (x1, x2) in sa.iter_mut().zip(sb) {
                                let (a, b) = (*x1, *x2);
                                *x1 = block[0] * a + block[1] * b;
                                *x2 = block[2] * a + block[3] * b;
                            }
                            if !phase_free {
                                s00.iter_mut().for_each(|x| *x *= d00);
                                s11.iter_mut().for_each(|x| *x *= d11);
                            }
                        });
                    }
                    Kernel2::Dense(m) => {
                        for_each_quad(amps, lo, hi, |s00, s01, s10, s11| {
                            let (sa, sb) = if a_is_low { (s01, s10) } else { (s10, s01) };
                            let quads = s00.iter_mut().zip(sa).zip(sb).zip(s11);
                            for (((y0, y1), y2), y3) in quads {
                                let x = [*y0, *y1, *y2, *y3];
                                let row = |r: usize| {
                                    m[4 * r] * x[0] + m[4 * r + 1] * x[1] + m[4 * r + 2] * x[2] + m[4 * r + 3] * x[3]
                                };
                                *y0 = row(0);
                                *y1 = row(1);
                                *y2 = row(2);
                                *y3 = row(3);
                            }
                        });
                    }
                }
            }
        }
    }
}

/// Product of commuting diagonal two-site gates, tabulated over windows of
/// `PHASE_WINDOW` consecutive bits. Consecutive windows overlap by one bit so
/// any nearest-neighbour gate lands in one of them.
struct PhaseTable {
    /// `(shift, mask, factors)`: amplitude `x` picks `factors[(x >> shift) & mask]`.
    windows: Vec<(usize, usize, Vec<C64>)>,
}

impl PhaseTable {
    /// Tabulates every gate that fits a window; returns the others.
    fn fuse(num_sites: usize, gates: &[Gate]) -> (PhaseTable, Vec<Gate>) {
        let step = PHASE_WINDOW - 1;
        let mut windows: Vec<(usize, usize, Vec<C64>)> = Vec::new();
        let mut slots: Vec<Option<usize>> = Vec::new();
        let mut rest = Vec::new();
        for g in gates {
            let Gate::Two { bit_a, bit_b, kernel: Kernel2::Diagonal(d) } = *g else {
                unreachable!("only diagonal pairs are fused");
            };
            let (lo, hi) = (bit_a.min(bit_b), bit_a.max(bit_b));
            let k = lo / step;
            let start = k * step;
            let width = PHASE_WINDOW.min(num_sites - start);
            if hi >= start + width {
                rest.push(*g);
                continue;
            }
            if slots.len() <= k {
                slots.resize(k + 1, None);
            }
            let w = *slots[k].get_or_insert_with(|| {
                windows.push((start, (1 << width) - 1, vec![ONE; 1 << width]));
                windows.len() - 1
            });
            let (la, lb) = (bit_a - start, bit_b - start);
            for (y, f) in windows[w].2.iter_mut().enumerate() {
                *f *= d[(y >> la & 1) + 2 * (y >> lb & 1)];
            }
        }
        (PhaseTable { windows }, rest)
    }

    fn apply(&self, amps: &mut [C64]) {
        const CHUNK: usize = 1 << 14;
        amps.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * CHUNK;
            match self.windows.as_slice() {
                [(s0, m0, t0)] => {
                    for (j, a) in chunk.iter_mut().enumerate() {
                        *a *= t0[(base + j) >> s0 & m0];
                    }
                }
                [(s0, m0, t0), (s1, m1, t1)] => {
                    for (j, a) in chunk.iter_mut().enumerate() {
                        let x = base + j;
                        *a *= t0[x >> s0 & m0] * t1[x >> s1 & m1];
                    }
                }
                ws => {
                    for (j, a) in chunk.iter_mut().enumerate() {
                        let x = base + j;
                        *a *= ws.iter().fold(ONE, |p, (s, m, t)| p * t[x >> s & m]);
                    }
                }
            }
        });
    }
}

/// Shared base pointer for disjoint parallel access.
#[derive(Clone, Copy)]
struct AmpPtr(*mut C64);

// SAFETY: `apply_gathered` hands each worker a disjoint set of indices.
unsafe impl Send for AmpPtr {}
unsafe impl Sync for AmpPtr {}

/// Applies gates acting only on bits `>= shift`. The state is viewed as
/// `2^(n - shift)` rows of `2^shift` columns; blocks of adjacent columns are
/// copied into a contiguous buffer (row-major, block width fastest), the
/// gates run there on rebased bits, and the block is written back.
fn apply_gathered(amps: &mut [C64], n: usize, shift: usize, gates: &[Gate]) {
    let row_bits = n - shift;
    let rows = 1usize << row_bits;
    let cols = 1usize << shift;
    let width = (GATHER_AMPS >> row_bits).clamp(1, cols);
    let width_bits = width.trailing_zeros() as usize;
    let local: Vec<Gate> = gates.iter().map(|g| g.rebased(shift, width_bits)).collect();
    let base = AmpPtr(amps.as_mut_ptr());
    (0..cols / width).into_par_iter().for_each_init(
        || vec![ZERO; rows * width],
        |buf, block| {
            let base = base;
            let col0 = block * width;
            for r in 0..rows {
                // SAFETY: index `(r << shift) + col0 + j` with `j < width`
                // stays below `rows * cols = amps.len()`, and distinct blocks
                // touch distinct columns.
                unsafe {
                    let src = base.0.add((r << shift) + col0);
                    std::ptr::copy_nonoverlapping(src, buf.as_mut_ptr().add(r * width), width);
                }
            }
            for g in &local {
                g.apply_flat(buf);
            }
            for r in 0..rows {
                // SAFETY: as above.
                unsafe {
                    let dst = base.0.add((r << shift) + col0);
                    std::ptr::copy_nonoverlapping(buf.as_ptr().add(r * width), dst, width);
                }
            }
        },
    );
}

/// Calls `f` with the bit-clear and bit-set halves of every block of
/// `2^(bit + 1)` amplitudes.
#[inline(always)]
fn for_each_pair(amps: &mut [C64], bit: usize, mut f: impl FnMut(&mut [C64], &mut [C64])) {
    let step = 1usize << bit;
    for block in amps.chunks_exact_mut(2 * step) {
        let (s0, s1) = block.split_at_mut(step);
        f(s0, s1);
    }
}

/// Calls `f` with four equal runs whose bits `(lo, hi)` are `00`, `10`,
/// `01` and `11`, covering the slice.
#[inline(always)]
fn for_each_quad(
    amps: &mut [C64],
    lo: usize,
    hi: usize,
    f: impl FnMut(&mut [C64], &mut [C64], &mut [C64], &mut [C64]),
) {
    // Fixed-size blocks let the compiler unroll the short runs of low bits.
    match (lo, hi) {
        (0, 1) => quad_blocks::<4>(amps, 1, 2, f),
        (0, 2) => quad_blocks::<8>(amps, 1, 4, f),
        (1, 2) => quad_blocks::<8>(amps, 2, 4, f),
        (0, _) => quad_runs::<2>(amps, hi, f),
        (1, _) => quad_runs::<4>(amps, hi, f),
        (2, _) => quad_runs::<8>(amps, hi, f),
        _ => {
            let mut f = f;
            let lo_step = 1usize << lo;
            let hi_step = 1usize << hi;
            for block in amps.chunks_exact_mut(2 * hi_step) {
                let (lower, upper) = block.split_at_mut(hi_step);
                for (l, u) in lower.chunks_exact_mut(2 * lo_step).zip(upper.chunks_exact_mut(2 * lo_step)) {
                    let (s00, s01) = l.split_at_mut(lo_step);
                    let (s10, s11) = u.split_at_mut(lo_step);
                    f(s00, s01, s10, s11);
                }
            }
        }
    }
}

/// Quads inside blocks of `Q` amplitudes with strides `lo_step < hi_step < Q`.
#[inline(always)]
fn quad_blocks<const Q: usize>(
    amps: &mut [C64],
    lo_step: usize,
    hi_step: usize,
    mut f: impl FnMut(&mut [C64], &mut [C64], &mut [C64], &mut [C64]),
) {
    let (blocks, _) = amps.as_chunks_mut::<Q>();
    for block in blocks {
        let (lower, upper) = block.split_at_mut(hi_step);
        for (l, u) in lower.chunks_exact_mut(2 * lo_step).zip(upper.chunks_exact_mut(2 * lo_step)) {
            let (s00, s01) = l.split_at_mut(lo_step);
            let (s10, s11) = u.split_at_mut(lo_step);
            f(s00, s01, s10, s11);
        }
    }
}

/// Quads with a short low stride `W / 2` and a large high stride.
#[inline(always)]
fn quad_runs<const W: usize>(
    amps: &mut [C64],
    hi: usize,
    mut f: impl FnMut(&mut [C64], &mut [C64], &mut [C64], &mut [C64]),
) {
    let hi_step = 1usize << hi;
    for block in amps.chunks_exact_mut(2 * hi_step) {
        let (lower, upper) = block.split_at_mut(hi_step);
        let (lower, _) = lower.as_chunks_mut::<W>();
        let (upper, _) = upper.as_chunks_mut::<W>();
        for (l, u) in lower.iter_mut().zip(upper) {
            let (s00, s01) = l.split_at_mut(W / 2);
            let (s10, s11) = u.split_at_mut(W / 2);
            f(s00, s01, s10, s11);
        }
    }
}

/// Max element deviation of `u† u` from the identity.
pub fn unitarity_deviation2(u: &Matrix2<C64>) -> f64 {
    (u.adjoint() * u - Matrix2::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn unitarity_deviation4(u: &Matrix4<C64>) -> f64 {
    (u.adjoint() * u - Matrix4::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn check_unitary2(u: &Matrix2<C64>) -> Result<()> {
    let deviation = unitarity_deviation2(u);
    if deviation > UNITARY_TOL {
        return Err(Error::NotUnitary { deviation });
    }
    Ok(())
}

fn check_unitary4(u: &Matrix4<C64>) -> Result<()> {
    let deviation = unitarity_deviation4(u);
    if deviation > UNITARY_TOL {
        return Err(Error::NotUnitary { deviation });
    }
    Ok(())
}
