//! Generator blocks of {Y(t)} on Z₊⁴ × S0, keyed by regime signature.
//!
//! The background state is J = (J1a, J3a, J1s, J2s) and block matrices are
//! Kronecker products in that factor order. A regime signature records
//! each coordinate as 0, 1 or ≥ 2 (stored as 2); every block depends on a
//! level vector only through its signature.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::DMatrix;

use crate::linalg::{sparse_kron, Csr};
use crate::service_disciplines::{Done, NetworkModel, Occ};
use crate::{Error, Result, Subset};

/// Displacement z ∈ {−1, 0, 1}⁴.
pub type Disp = [i8; 4];

/// Number of regime signatures (3⁴).
pub const SIGNATURES: usize = 81;

/// Margin applied to the largest exit rate when choosing ν.
pub const NU_FACTOR: f64 = 1.05;

/// Index of a boundary face, i.e. the set of strictly positive coordinates.
pub fn boundary_face(x: [usize; 4]) -> Subset {
    let mut bits = 0u8;
    for (i, &v) in x.iter().enumerate() {
        if v > 0 {
            bits |= 1 << i;
        }
    }
    Subset::from_bits(bits)
}

/// Regime signature of a level vector.
pub fn signature(x: [usize; 4]) -> [u8; 4] {
    x.map(|v| v.min(2) as u8)
}

pub fn signature_index(s: [u8; 4]) -> usize {
    s.iter().fold(0usize, |acc, &c| acc * 3 + c as usize)
}

pub fn signature_from_index(mut i: usize) -> [u8; 4] {
    let mut s = [0u8; 4];
    for k in (0..4).rev() {
        s[k] = (i % 3) as u8;
        i /= 3;
    }
    s
}

/// Rate blocks leaving one regime signature.
#[derive(Debug, Clone)]
pub struct SigBlocks {
    /// (displacement, rate block); the zero displacement holds the diagonal block.
    pub blocks: Vec<(Disp, Csr)>,
    /// Total exit rate −Q(x,x)_jj for each background state j.
    pub exit: Vec<f64>,
    /// Lifted completion rates (M·1) of queue i+1 for each background state.
    pub completion: [Vec<f64>; 4],
}

impl SigBlocks {
    pub fn block(&self, z: Disp) -> Option<&Csr> {
        self.blocks.iter().find(|(d, _)| *d == z).map(|(_, b)| b)
    }
}

/// The generator Q of {Y(t)} in face-homogeneous block form.
#[derive(Debug, Clone)]
pub struct Generator {
    dims: [usize; 4],
    sigs: Vec<SigBlocks>,
}

fn occ(c: u8) -> Occ {
    if c == 0 {
        Occ::Zero
    } else {
        Occ::Pos
    }
}

fn done(c: u8) -> Done {
    if c == 1 {
        Done::One
    } else {
        Done::Two
    }
}

struct Lifter {
    i1: DMatrix<f64>,
    i3: DMatrix<f64>,
    is1: DMatrix<f64>,
    is2: DMatrix<f64>,
}

impl Generator {
    /// Assembles all signature blocks eagerly.
    pub fn new(model: &NetworkModel) -> Generator {
        let dims = [
            model.map1().phases(),
            model.map3().phases(),
            model.msp1().state_count(),
            model.msp2().state_count(),
        ];
        let id = |n: usize| DMatrix::<f64>::identity(n, n);
        let lf = Lifter { i1: id(dims[0]), i3: id(dims[1]), is1: id(dims[2]), is2: id(dims[3]) };
        let sigs = (0..SIGNATURES).map(|i| build_sig(model, &lf, signature_from_index(i))).collect();
        Generator { dims, sigs }
    }

    /// Factor dimensions (s1a, s3a, |S1s|, |S2s|).
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    /// |S0|.
    pub fn phase_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Splits a background index into its four components.
    pub fn split_phase(&self, j: usize) -> [usize; 4] {
        let [_, b, c, d] = self.dims;
        [j / (b * c * d), (j / (c * d)) % b, (j / d) % c, j % d]
    }

    pub fn join_phase(&self, p: [usize; 4]) -> usize {
        let [_, b, c, d] = self.dims;
        ((p[0] * b + p[1]) * c + p[2]) * d + p[3]
    }

    pub fn sig(&self, s: [u8; 4]) -> &SigBlocks {
        &self.sigs[signature_index(s)]
    }

    pub fn sig_at(&self, x: [usize; 4]) -> &SigBlocks {
        self.sig(signature(x))
    }

    /// Q(x, xp). Errors if the pair is not skip-free.
    pub fn block(&self, x: [usize; 4], xp: [usize; 4]) -> Result<Csr> {
        let mut z = [0i8; 4];
        for i in 0..4 {
            let d = xp[i] as i64 - x[i] as i64;
            if d.abs() > 1 {
                return Err(Error::SkipFreeViolation { from: x, to: xp });
            }
            z[i] = d as i8;
        }
        let m = self.phase_dim();
        Ok(self.sig_at(x).block(z).cloned().unwrap_or_else(|| Csr::zeros(m, m)))
    }

    /// Largest exit rate over all signatures.
    pub fn max_exit_rate(&self) -> f64 {
        self.sigs.iter().flat_map(|s| s.exit.iter().copied()).fold(0.0, f64::max)
    }

    /// ν = 1.05 × max |Q(x,x)_jj|.
    pub fn uniformization_constant(&self) -> f64 {
        NU_FACTOR * self.max_exit_rate()
    }

    /// Conditional mean increment α(y) in rate units (multiply by 1/ν for
    /// the uniformized chain).
    pub fn mean_increment(&self, x: [usize; 4], j: usize) -> [f64; 4] {
        let mut a = [0.0; 4];
        for (z, b) in &self.sig_at(x).blocks {
            let rate: f64 = b.row(j).1.iter().sum();
            if z.iter().all(|&v| v == 0) {
                continue;
            }
            for l in 0..4 {
                a[l] += z[l] as f64 * rate;
            }
        }
        a
    }

    /// Writes the generator restricted to the box [0, level]⁴ as
    /// `row col rate` lines. Transitions leaving the box are dropped, so
    /// rows on the outer boundary do not sum to zero. The flat index is
    /// `((x1·(L+1) + x2)·(L+1) + x3)·(L+1) + x4` times |S0| plus the
    /// background index.
    pub fn write_triplets<W: Write>(&self, level: usize, mut out: W) -> std::io::Result<()> {
        let m = self.phase_dim();
        let side = level + 1;
        let flat = |x: [usize; 4]| ((x[0] * side + x[1]) * side + x[2]) * side + x[3];
        for x in lattice_box(level) {
            let base = flat(x) * m;
            for (z, b) in &self.sig_at(x).blocks {
                let Some(xp) = shift(x, *z, level) else { continue };
                let tb = flat(xp) * m;
                for (i, j, v) in b.triplets() {
                    writeln!(out, "{} {} {:e}", base + i, tb + j, v)?;
                }
            }
        }
        Ok(())
    }
}

/// All points of [0, level]⁴ in lexicographic order.
pub fn lattice_box(level: usize) -> impl Iterator<Item = [usize; 4]> {
    let side = level + 1;
    (0..side.pow(4)).map(move |mut k| {
        let mut x = [0usize; 4];
        for i in (0..4).rev() {
            x[i] = k % side;
            k /= side;
        }
        x
    })
}

/// x + z if it stays inside [0, level]⁴.
fn shift(x: [usize; 4], z: Disp, level: usize) -> Option<[usize; 4]> {
    let mut y = [0usize; 4];
    for i in 0..4 {
        let v = x[i] as i64 + z[i] as i64;
        if v < 0 || v > level as i64 {
            return None;
        }
        y[i] = v as usize;
    }
    Some(y)
}

fn build_sig(model: &NetworkModel, lf: &Lifter, s: [u8; 4]) -> SigBlocks {
    let (m1, m2) = (model.msp1(), model.msp2());
    let p = model.p();
    let [c1, c2, c3, c4] = s;
    // Station 1 regime is (x1, x4), station 2 regime is (x3, x2).
    let (r1, r2, r3, r4) = (occ(c1), occ(c2), occ(c3), occ(c4));
    let mut blocks: Vec<(Disp, Csr)> = Vec::new();
    let mut push = |z: Disp, b: Csr| {
        if b.is_zero() {
            return;
        }
        if let Some((_, acc)) = blocks.iter_mut().find(|(d, _)| *d == z) {
            *acc = acc.add(&b);
        } else {
            blocks.push((z, b));
        }
    };

    let t1 = m1.t(r1, r4);
    let t2 = m2.t(r3, r2);
    let diag = sparse_kron(&[model.map1().c(), &lf.i3, &lf.is1, &lf.is2])
        .add(&sparse_kron(&[&lf.i1, model.map3().c(), &lf.is1, &lf.is2]))
        .add(&sparse_kron(&[&lf.i1, &lf.i3, t1, &lf.is2]))
        .add(&sparse_kron(&[&lf.i1, &lf.i3, &lf.is1, t2]));
    push([0, 0, 0, 0], diag);

    // Exogenous arrivals.
    push([1, 0, 0, 0], sparse_kron(&[model.map1().d(), &lf.i3, m1.u_first(r1, r4), &lf.is2]));
    push([0, 0, 1, 0], sparse_kron(&[&lf.i1, model.map3().d(), &lf.is1, m2.u_first(r3, r2)]));

    let mut completion: [DMatrix<f64>; 4] = std::array::from_fn(|_| DMatrix::zeros(0, 0));
    let zeros1 = DMatrix::zeros(lf.is1.nrows(), lf.is1.nrows());
    let zeros2 = DMatrix::zeros(lf.is2.nrows(), lf.is2.nrows());
    completion[0] = zeros1.clone();
    completion[3] = zeros1;
    completion[1] = zeros2.clone();
    completion[2] = zeros2;

    // Q1 completion: the customer joins Q2.
    if c1 > 0 {
        let t = m1.first_done(done(c1), r4);
        completion[0] = t.clone();
        push([-1, 1, 0, 0], sparse_kron(&[&lf.i1, &lf.i3, t, m2.u_second(r3, r2)]));
    }
    // Q2 completion: leaves, or joins Q3 with probability p.
    if c2 > 0 {
        let t = m2.second_done(r3, done(c2));
        completion[1] = t.clone();
        if p < 1.0 {
            push([0, -1, 0, 0], sparse_kron(&[&lf.i1, &lf.i3, &lf.is1, &(t * (1.0 - p))]));
        }
        if p > 0.0 {
            let after = occ(c2 - 1);
            let tu = t * m2.u_first(r3, after) * p;
            push([0, -1, 1, 0], sparse_kron(&[&lf.i1, &lf.i3, &lf.is1, &tu]));
        }
    }
    // Q3 completion: the customer joins Q4.
    if c3 > 0 {
        let t = m2.first_done(done(c3), r2);
        completion[2] = t.clone();
        push([0, 0, -1, 1], sparse_kron(&[&lf.i1, &lf.i3, m1.u_second(r1, r4), t]));
    }
    // Q4 completion: the customer leaves.
    if c4 > 0 {
        let t = m1.second_done(r1, done(c4));
        completion[3] = t.clone();
        push([0, 0, 0, -1], sparse_kron(&[&lf.i1, &lf.i3, t, &lf.is2]));
    }

    let m = lf.i1.nrows() * lf.i3.nrows() * lf.is1.nrows() * lf.is2.nrows();
    let exit = blocks
        .iter()
        .find(|(z, _)| *z == [0, 0, 0, 0])
        .map(|(_, b)| b.diagonal().into_iter().map(|v| -v).collect())
        .unwrap_or_else(|| vec![0.0; m]);
    let lift = |station: usize, t: &DMatrix<f64>| -> Vec<f64> {
        let sums: Vec<f64> = t.row_iter().map(|r| r.sum()).collect();
        let (n1, n2) = (lf.is1.nrows(), lf.is2.nrows());
        (0..m)
            .map(|j| if station == 1 { sums[(j / n2) % n1] } else { sums[j % n2] })
            .collect()
    };
    let completion = [
        lift(1, &completion[0]),
        lift(2, &completion[1]),
        lift(2, &completion[2]),
        lift(1, &completion[3]),
    ];
    SigBlocks { blocks, exit, completion }
}

/// Uniformized kernel P = I + Q/ν.
#[derive(Debug, Clone)]
pub struct BlockKernel {
    generator: Generator,
    nu: f64,
}

/// Uniformizes with the given ν; errors if some diagonal probability
/// would be negative.
pub fn uniformize(generator: Generator, nu: f64) -> Result<BlockKernel> {
    let required = generator.max_exit_rate();
    if !(nu > 0.0) || nu < required {
        return Err(Error::NuTooSmall { nu, required });
    }
    Ok(BlockKernel { generator, nu })
}

/// ν for a model (1.05 × largest exit rate).
pub fn uniformization_constant(model: &NetworkModel) -> f64 {
    Generator::new(model).uniformization_constant()
}

/// Q(x, xp) for a model. Builds all blocks; reuse a [`Generator`] for
/// repeated queries.
pub fn generator_block(model: &NetworkModel, x: [usize; 4], xp: [usize; 4]) -> Result<DMatrix<f64>> {
    Generator::new(model).block(x, xp).map(|b| b.to_dense())
}

impl BlockKernel {
    pub fn new(model: &NetworkModel) -> BlockKernel {
        let g = Generator::new(model);
        let nu = g.uniformization_constant();
        BlockKernel { generator: g, nu }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// P(x, x + z) for a signature.
    pub fn probability_block(&self, s: [u8; 4], z: Disp) -> Csr {
        let m = self.generator.phase_dim();
        let q = self.generator.sig(s).block(z).cloned().unwrap_or_else(|| Csr::zeros(m, m));
        let p = q.scaled(1.0 / self.nu);
        if z == [0, 0, 0, 0] {
            p.add_identity(1.0)
        } else {
            p
        }
    }

    /// All nonzero probability blocks of a signature.
    pub fn probability_blocks(&self, s: [u8; 4]) -> Vec<(Disp, Csr)> {
        let mut out: Vec<(Disp, Csr)> =
            self.generator.sig(s).blocks.iter().map(|(z, _)| (*z, self.probability_block(s, *z))).collect();
        if !out.iter().any(|(z, _)| *z == [0, 0, 0, 0]) {
            out.push(([0, 0, 0, 0], self.probability_block(s, [0, 0, 0, 0])));
        }
        out
    }
}

/// Outcome of the reachability probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SemiIrreducibility {
    ConfirmedSemiIrreducible,
    Unknown,
}

/// Checks that `probe` (levels, background index) is reachable from every
/// state of the box [0, radius]⁴ × S0. Paths may pass through a margin of
/// `REACH_MARGIN` levels beyond the box, since states on the box's upper
/// faces often have no move that stays inside it. A negative answer is
/// never a disproof.
pub fn check_semi_irreducible(
    generator: &Generator,
    probe: ([usize; 4], usize),
    radius: usize,
) -> Result<SemiIrreducibility> {
    if probe.0.iter().any(|&v| v > radius) || probe.1 >= generator.phase_dim() {
        return Err(Error::InvalidArgument("probe state outside the box".into()));
    }
    let m = generator.phase_dim();
    let outer = radius + REACH_MARGIN;
    let side = outer + 1;
    let flat = |x: [usize; 4]| ((x[0] * side + x[1]) * side + x[2]) * side + x[3];
    let total = side.pow(4) * m;
    // Reverse adjacency.
    let mut rev: Vec<Vec<u32>> = vec![Vec::new(); total];
    for x in lattice_box(outer) {
        let base = flat(x) * m;
        for (z, b) in &generator.sig_at(x).blocks {
            let Some(xp) = shift(x, *z, outer) else { continue };
            let tb = flat(xp) * m;
            for i in 0..m {
                let (cols, vals) = b.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    let (from, to) = (base + i, tb + j);
                    if v > 0.0 && from != to {
                        rev[to].push(from as u32);
                    }
                }
            }
        }
    }
    let start = flat(probe.0) * m + probe.1;
    let mut seen = vec![false; total];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        for &f in &rev[s] {
            let f = f as usize;
            if !seen[f] {
                seen[f] = true;
                queue.push_back(f);
            }
        }
    }
    let inner_ok = lattice_box(radius).all(|x| (0..m).all(|j| seen[flat(x) * m + j]));
    Ok(if inner_ok {
        SemiIrreducibility::ConfirmedSemiIrreducible
    } else {
        SemiIrreducibility::Unknown
    })
}

/// Extra levels searched beyond the requested box.
pub const REACH_MARGIN: usize = 2;

/// Default probe: empty queues, every component in its first state.
pub const DEFAULT_PROBE: ([usize; 4], usize) = ([0, 0, 0, 0], 0);
