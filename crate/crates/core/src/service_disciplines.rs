//! Markovian service processes (MSPs) for the two stations.
//!
//! Every MSP uses the same index convention. A station serves a "first"
//! queue and a "second" queue: at station 1 these are Q1 and Q4, at
//! station 2 they are Q3 and Q2. Superscripts follow the (first, second)
//! order, so `T^{+0}` at station 2 is the regime x3 ≥ 1, x2 = 0. The
//! built-in builders lay states out as [idle | first-class service |
//! second-class service], with the idle set being the single state 0.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, STRUCT_TOL};
use crate::primitives::{map_arrival_rate, MapSpec, PhSpec};
use crate::{Error, Result};

/// Occupancy of a queue as seen by the service process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Occ {
    Zero,
    Pos,
}

/// Queue content just before a service completion: exactly one (1*) or
/// at least two (2*).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Done {
    One,
    Two,
}

impl Occ {
    pub fn of(level: usize) -> Occ {
        if level == 0 {
            Occ::Zero
        } else {
            Occ::Pos
        }
    }

    fn idx(self) -> usize {
        self as usize
    }

    fn sym(self) -> char {
        match self {
            Occ::Zero => '0',
            Occ::Pos => '+',
        }
    }
}

impl Done {
    /// `None` when the queue is empty.
    pub fn of(level: usize) -> Option<Done> {
        match level {
            0 => None,
            1 => Some(Done::One),
            _ => Some(Done::Two),
        }
    }

    fn idx(self) -> usize {
        self as usize
    }

    fn sym(self) -> &'static str {
        match self {
            Done::One => "1*",
            Done::Two => "2*",
        }
    }
}

const OCCS: [Occ; 2] = [Occ::Zero, Occ::Pos];
const DONES: [Done; 2] = [Done::One, Done::Two];

/// Partition of the server states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MspPartition {
    pub idle: Vec<usize>,
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

/// Which family a named MSP matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    /// Rates without a completion.
    Rates,
    /// Rates with one completion.
    Completion,
    /// Phase jump probabilities at an arrival.
    Jump,
}

/// A station's Markovian service process.
#[derive(Debug, Clone, PartialEq)]
pub struct MspSpec {
    n: usize,
    partition: MspPartition,
    t: [[DMatrix<f64>; 2]; 2],
    first_done: [[DMatrix<f64>; 2]; 2],
    second_done: [[DMatrix<f64>; 2]; 2],
    u_first: [[DMatrix<f64>; 2]; 2],
    u_second: [[DMatrix<f64>; 2]; 2],
    reducible: Vec<String>,
}

/// Names of the twenty matrices, in a fixed order.
pub fn matrix_names() -> Vec<(String, MatrixKind)> {
    let mut out = Vec::with_capacity(20);
    for a in OCCS {
        for b in OCCS {
            out.push((format!("{}{}", a.sym(), b.sym()), MatrixKind::Rates));
        }
    }
    for k in DONES {
        for b in OCCS {
            out.push((format!("{}{}", k.sym(), b.sym()), MatrixKind::Completion));
        }
    }
    for a in OCCS {
        for k in DONES {
            out.push((format!("{}{}", a.sym(), k.sym()), MatrixKind::Completion));
        }
    }
    for a in OCCS {
        for b in OCCS {
            out.push((format!("{}*{}", a.sym(), b.sym()), MatrixKind::Jump));
        }
    }
    for a in OCCS {
        for b in OCCS {
            out.push((format!("{}{}*", a.sym(), b.sym()), MatrixKind::Jump));
        }
    }
    out
}

fn parse_occ(c: char) -> Option<Occ> {
    match c {
        '0' => Some(Occ::Zero),
        '+' => Some(Occ::Pos),
        _ => None,
    }
}

fn parse_done(c: char) -> Option<Done> {
    match c {
        '1' => Some(Done::One),
        '2' => Some(Done::Two),
        _ => None,
    }
}

impl MspSpec {
    /// Assembles a spec from named matrices (see [`matrix_names`]) and
    /// validates it. Missing matrices are an error; nothing is inferred.
    pub fn from_named<F>(n: usize, partition: MspPartition, mut get: F) -> Result<MspSpec>
    where
        F: FnMut(&str) -> Option<DMatrix<f64>>,
    {
        let z = || DMatrix::<f64>::zeros(n, n);
        let mut spec = MspSpec {
            n,
            partition,
            t: [[z(), z()], [z(), z()]],
            first_done: [[z(), z()], [z(), z()]],
            second_done: [[z(), z()], [z(), z()]],
            u_first: [[z(), z()], [z(), z()]],
            u_second: [[z(), z()], [z(), z()]],
            reducible: Vec::new(),
        };
        for (name, _) in matrix_names() {
            let m = get(&name).ok_or_else(|| Error::DimensionMismatch(format!("matrix {name} missing")))?;
            *spec.slot_mut(&name).expect("known name") = m;
        }
        validate_msp(spec)
    }

    fn slot_mut(&mut self, name: &str) -> Option<&mut DMatrix<f64>> {
        let c: Vec<char> = name.chars().collect();
        match c.as_slice() {
            [a, b] => Some(&mut self.t[parse_occ(*a)?.idx()][parse_occ(*b)?.idx()]),
            [k, '*', b] if parse_done(*k).is_some() => {
                Some(&mut self.first_done[parse_done(*k)?.idx()][parse_occ(*b)?.idx()])
            }
            [a, k, '*'] if parse_done(*k).is_some() => {
                Some(&mut self.second_done[parse_occ(*a)?.idx()][parse_done(*k)?.idx()])
            }
            [a, '*', b] => Some(&mut self.u_first[parse_occ(*a)?.idx()][parse_occ(*b)?.idx()]),
            [a, b, '*'] => Some(&mut self.u_second[parse_occ(*a)?.idx()][parse_occ(*b)?.idx()]),
            _ => None,
        }
    }

    /// Matrix by name, e.g. `"+0"`, `"2*+"`, `"0+*"`.
    pub fn matrix(&self, name: &str) -> Option<&DMatrix<f64>> {
        let c: Vec<char> = name.chars().collect();
        match c.as_slice() {
            [a, b] => Some(&self.t[parse_occ(*a)?.idx()][parse_occ(*b)?.idx()]),
            [k, '*', b] if parse_done(*k).is_some() => {
                Some(&self.first_done[parse_done(*k)?.idx()][parse_occ(*b)?.idx()])
            }
            [a, k, '*'] if parse_done(*k).is_some() => {
                Some(&self.second_done[parse_occ(*a)?.idx()][parse_done(*k)?.idx()])
            }
            [a, '*', b] => Some(&self.u_first[parse_occ(*a)?.idx()][parse_occ(*b)?.idx()]),
            [a, b, '*'] => Some(&self.u_second[parse_occ(*a)?.idx()][parse_occ(*b)?.idx()]),
            _ => None,
        }
    }

    pub fn state_count(&self) -> usize {
        self.n
    }

    pub fn partition(&self) -> &MspPartition {
        &self.partition
    }

    /// Names of composite generators found reducible during validation.
    pub fn reducible_composites(&self) -> &[String] {
        &self.reducible
    }

    /// T^{ab}: rates without completion.
    pub fn t(&self, first: Occ, second: Occ) -> &DMatrix<f64> {
        &self.t[first.idx()][second.idx()]
    }

    /// T^{k* b}: completion of a first-queue customer.
    pub fn first_done(&self, k: Done, second: Occ) -> &DMatrix<f64> {
        &self.first_done[k.idx()][second.idx()]
    }

    /// T^{a k*}: completion of a second-queue customer.
    pub fn second_done(&self, first: Occ, k: Done) -> &DMatrix<f64> {
        &self.second_done[first.idx()][k.idx()]
    }

    /// U^{a* b}: jump at an arrival to the first queue.
    pub fn u_first(&self, first: Occ, second: Occ) -> &DMatrix<f64> {
        &self.u_first[first.idx()][second.idx()]
    }

    /// U^{a b*}: jump at an arrival to the second queue.
    pub fn u_second(&self, first: Occ, second: Occ) -> &DMatrix<f64> {
        &self.u_second[first.idx()][second.idx()]
    }

    /// Multiplies all rate matrices by `s`; jump matrices are unchanged.
    pub fn scaled(&self, s: f64) -> MspSpec {
        let mut out = self.clone();
        for row in out.t.iter_mut().chain(out.first_done.iter_mut()).chain(out.second_done.iter_mut()) {
            for m in row.iter_mut() {
                *m *= s;
            }
        }
        out
    }

    /// The eight composite generators, by name.
    pub fn composites(&self) -> Vec<(String, DMatrix<f64>)> {
        let mut out = Vec::new();
        for k in DONES {
            out.push((format!("T+0 + T{}0", k.sym()), self.t(Occ::Pos, Occ::Zero) + self.first_done(k, Occ::Zero)));
        }
        for k in DONES {
            out.push((format!("T0+ + T0{}", k.sym()), self.t(Occ::Zero, Occ::Pos) + self.second_done(Occ::Zero, k)));
        }
        for k1 in DONES {
            for k2 in DONES {
                out.push((
                    format!("T++ + T{}+ + T+{}", k1.sym(), k2.sym()),
                    self.t(Occ::Pos, Occ::Pos) + self.first_done(k1, Occ::Pos) + self.second_done(Occ::Pos, k2),
                ));
            }
        }
        out
    }
}

fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.amax().max(1.0)
}

fn check_generator_rows(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let tol = STRUCT_TOL * scale_of(m);
    for i in 0..m.nrows() {
        let r = m.row(i).sum();
        if r.abs() > tol {
            return Err(Error::GeneratorRowSumNonzero { name: name.into(), row: i, residual: r });
        }
    }
    Ok(())
}

/// Validates all structural invariants of an MSP. Reducible composite
/// generators are recorded, not rejected.
pub fn validate_msp(mut spec: MspSpec) -> Result<MspSpec> {
    let n = spec.n;
    if n == 0 {
        return Err(Error::DimensionMismatch("MSP has no states".into()));
    }
    let mut seen = vec![false; n];
    for &i in spec.partition.idle.iter().chain(&spec.partition.first).chain(&spec.partition.second) {
        if i >= n || seen[i] {
            return Err(Error::DimensionMismatch(format!("partition index {i} out of range or repeated")));
        }
        seen[i] = true;
    }
    if seen.iter().any(|&s| !s) {
        return Err(Error::DimensionMismatch("partition does not cover all server states".into()));
    }
    for (name, kind) in matrix_names() {
        let m = spec.matrix(&name).expect("known name");
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch(format!("{name} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
        }
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if !v.is_finite() {
                    return Err(Error::InvalidArgument(format!("{name} has a non-finite entry at ({i}, {j})")));
                }
                let must_be_nonneg = match kind {
                    MatrixKind::Rates => i != j,
                    MatrixKind::Completion | MatrixKind::Jump => true,
                };
                if must_be_nonneg && v < 0.0 {
                    if kind == MatrixKind::Jump {
                        return Err(Error::NonStochasticU { name: format!("U{name}"), row: i, sum: m.row(i).sum() });
                    }
                    return Err(Error::NegativeOffDiagonal { name: format!("T{name}"), row: i, col: j, value: v });
                }
            }
        }
        if kind == MatrixKind::Jump {
            for i in 0..n {
                let s = m.row(i).sum();
                if (s - 1.0).abs() > STRUCT_TOL * n as f64 {
                    return Err(Error::NonStochasticU { name: format!("U{name}"), row: i, sum: s });
                }
            }
        }
    }
    check_generator_rows("T00", spec.t(Occ::Zero, Occ::Zero))?;
    let mut reducible = Vec::new();
    if linalg::first_unconnected(spec.t(Occ::Zero, Occ::Zero)).is_some() {
        reducible.push("T00".to_string());
    }
    for (name, m) in spec.composites() {
        check_generator_rows(&name, &m)?;
        if linalg::first_unconnected(&m).is_some() {
            reducible.push(name);
        }
    }
    spec.reducible = reducible;
    Ok(spec)
}

/// Dense builder over the [idle | first | second] layout.
struct Layout {
    n: usize,
    first0: usize,
    second0: usize,
}

impl Layout {
    fn new(s_first: usize, s_second: usize) -> Layout {
        Layout { n: 1 + s_first + s_second, first0: 1, second0: 1 + s_first }
    }

    fn zero(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.n, self.n)
    }

    fn partition(&self) -> MspPartition {
        MspPartition {
            idle: vec![0],
            first: (self.first0..self.second0).collect(),
            second: (self.second0..self.n).collect(),
        }
    }
}

fn put(m: &mut DMatrix<f64>, r0: usize, c0: usize, b: &DMatrix<f64>) {
    m.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(b);
}

fn add(m: &mut DMatrix<f64>, r0: usize, c0: usize, b: &DMatrix<f64>) {
    let mut v = m.view_mut((r0, c0), (b.nrows(), b.ncols()));
    v += b;
}

fn outer(col: &DVector<f64>, row: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(col.len(), row.len(), |i, j| col[i] * row[j])
}

fn ones_row(rows: usize, row: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows, row.len(), |_, j| row[j])
}

fn neg_eye(n: usize) -> DMatrix<f64> {
    -DMatrix::<f64>::identity(n, n)
}

/// The dummy returns of T^{00}: every busy state goes to idle at rate 1.
fn dummy_t00(l: &Layout) -> DMatrix<f64> {
    let mut m = l.zero();
    for i in 1..l.n {
        m[(i, 0)] = 1.0;
        m[(i, i)] = -1.0;
    }
    m
}

/// Unlisted jump matrices default to the identity, unlisted rate and
/// completion matrices to zero.
fn assemble(l: &Layout, named: Vec<(&str, DMatrix<f64>)>) -> Result<MspSpec> {
    let mut map: std::collections::HashMap<String, DMatrix<f64>> =
        named.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let kinds: std::collections::HashMap<String, MatrixKind> = matrix_names().into_iter().collect();
    let n = l.n;
    MspSpec::from_named(n, l.partition(), |name| {
        map.remove(name).or_else(|| match kinds.get(name) {
            Some(MatrixKind::Jump) => Some(DMatrix::identity(n, n)),
            Some(_) => Some(DMatrix::zeros(n, n)),
            None => None,
        })
    })
}

/// Non-preemptive priority: the second queue (Q4, resp. Q2) has priority
/// over the first (Q1, resp. Q3).
pub fn build_nonpreemptive_msp(ph_first: &PhSpec, ph_second: &PhSpec) -> Result<MspSpec> {
    let (s1, s4) = (ph_first.phases(), ph_second.phases());
    let l = Layout::new(s1, s4);
    let (f, s) = (l.first0, l.second0);
    let (b1, b4) = (ph_first.beta().as_slice(), ph_second.beta().as_slice());
    let (h1, h4) = (ph_first.exit(), ph_second.exit());

    let t00 = dummy_t00(&l);
    let mut tp0 = l.zero();
    tp0[(0, 0)] = -1.0;
    put(&mut tp0, 0, f, &ones_row(1, b1));
    put(&mut tp0, f, f, ph_first.h());
    put(&mut tp0, s, f, &ones_row(s4, b1));
    put(&mut tp0, s, s, &neg_eye(s4));
    let mut t1s0 = l.zero();
    put(&mut t1s0, f, 0, &DMatrix::from_column_slice(s1, 1, h1.as_slice()));
    let mut t2s0 = l.zero();
    put(&mut t2s0, f, f, &outer(h1, b1));
    let mut t0p = l.zero();
    t0p[(0, 0)] = -1.0;
    put(&mut t0p, 0, s, &ones_row(1, b4));
    put(&mut t0p, f, f, &neg_eye(s1));
    put(&mut t0p, f, s, &ones_row(s1, b4));
    put(&mut t0p, s, s, ph_second.h());
    let mut t01s = l.zero();
    put(&mut t01s, s, 0, &DMatrix::from_column_slice(s4, 1, h4.as_slice()));
    let mut t02s = l.zero();
    put(&mut t02s, s, s, &outer(h4, b4));
    let mut tpp = l.zero();
    tpp[(0, 0)] = -1.0;
    put(&mut tpp, 0, s, &ones_row(1, b4));
    put(&mut tpp, f, f, ph_first.h());
    put(&mut tpp, s, s, ph_second.h());
    let mut t1sp = l.zero();
    put(&mut t1sp, f, s, &outer(h1, b4));
    let mut tp1s = l.zero();
    put(&mut tp1s, s, f, &outer(h4, b1));
    let tp2s = t02s.clone();
    let mut u0s0 = l.zero();
    put(&mut u0s0, 0, f, &ones_row(l.n, b1));
    let mut u00s = l.zero();
    put(&mut u00s, 0, s, &ones_row(l.n, b4));

    assemble(
        &l,
        vec![
            ("00", t00),
            ("+0", tp0),
            ("0+", t0p),
            ("++", tpp),
            ("1*0", t1s0),
            ("2*0", t2s0),
            ("1*+", t1sp.clone()),
            ("2*+", t1sp),
            ("01*", t01s),
            ("02*", t02s),
            ("+1*", tp1s),
            ("+2*", tp2s),
            ("0*0", u0s0),
            ("00*", u00s),
        ],
    )
}

/// Preemptive-resume priority. Second-class states are indexed by
/// (interrupted first-class phase k, second-class phase).
pub fn build_preemptive_resume_msp(ph_first: &PhSpec, ph_second: &PhSpec) -> Result<MspSpec> {
    let (s1, s4) = (ph_first.phases(), ph_second.phases());
    let l = Layout::new(s1, s1 * s4);
    let (f, s) = (l.first0, l.second0);
    let g = |k: usize| s + k * s4;
    let (b1, b4) = (ph_first.beta().as_slice(), ph_second.beta().as_slice());
    let (h1, h4) = (ph_first.exit(), ph_second.exit());
    // Row block [β1]_1 β4 | ... | [β1]_s1 β4 spanning all groups.
    let weighted: Vec<f64> = (0..s1).flat_map(|k| b4.iter().map(move |&v| b1[k] * v)).collect();

    let t00 = dummy_t00(&l);
    let mut tp0 = l.zero();
    tp0[(0, 0)] = -1.0;
    put(&mut tp0, 0, f, &ones_row(1, b1));
    put(&mut tp0, f, f, ph_first.h());
    for k in 0..s1 {
        for r in 0..s4 {
            tp0[(g(k) + r, f + k)] = 1.0;
            tp0[(g(k) + r, g(k) + r)] = -1.0;
        }
    }
    let mut t1s0 = l.zero();
    put(&mut t1s0, f, 0, &DMatrix::from_column_slice(s1, 1, h1.as_slice()));
    let mut t2s0 = l.zero();
    put(&mut t2s0, f, f, &outer(h1, b1));
    let mut t0p = l.zero();
    t0p[(0, 0)] = -1.0;
    put(&mut t0p, 0, s, &ones_row(1, &weighted));
    put(&mut t0p, f, f, &neg_eye(s1));
    put(&mut t0p, f, s, &ones_row(s1, &weighted));
    for k in 0..s1 {
        put(&mut t0p, g(k), g(k), ph_second.h());
    }
    let tpp = t0p.clone();
    let mut t01s = l.zero();
    for k in 0..s1 {
        put(&mut t01s, g(k), 0, &DMatrix::from_column_slice(s4, 1, h4.as_slice()));
    }
    let mut t02s = l.zero();
    for k in 0..s1 {
        put(&mut t02s, g(k), g(k), &outer(h4, b4));
    }
    let mut tp1s = l.zero();
    for k in 0..s1 {
        for r in 0..s4 {
            tp1s[(g(k) + r, f + k)] = h4[r];
        }
    }
    let tp2s = t02s.clone();
    let mut u0s0 = l.zero();
    put(&mut u0s0, 0, f, &ones_row(l.n, b1));
    let mut u00s = l.zero();
    put(&mut u00s, 0, s, &ones_row(l.n, &weighted));
    let mut up0s = l.zero();
    put(&mut up0s, 0, s, &ones_row(1, &weighted));
    for k in 0..s1 {
        put(&mut up0s, f + k, g(k), &ones_row(1, b4));
    }
    for i in s..l.n {
        up0s[(i, i)] = 1.0;
    }

    assemble(
        &l,
        vec![
            ("00", t00),
            ("+0", tp0),
            ("0+", t0p),
            ("++", tpp),
            ("1*0", t1s0),
            ("2*0", t2s0),
            ("01*", t01s),
            ("02*", t02s),
            ("+1*", tp1s),
            ("+2*", tp2s),
            ("0*0", u0s0),
            ("00*", u00s),
            ("+0*", up0s),
        ],
    )
}

/// (1,K)-limited service: one first-queue customer per visit, then up to
/// K second-queue customers. Second-class states are indexed by
/// (slot 1..K, phase).
pub fn build_limited_msp(ph_single: &PhSpec, ph_batch: &PhSpec, k: usize) -> Result<MspSpec> {
    if k < 1 {
        return Err(Error::InvalidK(k));
    }
    let (s1, s4) = (ph_single.phases(), ph_batch.phases());
    let l = Layout::new(s1, k * s4);
    let (f, s) = (l.first0, l.second0);
    let slot = |i: usize| s + i * s4;
    let (b1, b4) = (ph_single.beta().as_slice(), ph_batch.beta().as_slice());
    let (h1, h4) = (ph_single.exit(), ph_batch.exit());
    let h4b4 = outer(h4, b4);
    let h4b1 = outer(h4, b1);

    let t00 = dummy_t00(&l);
    let mut tp0 = l.zero();
    tp0[(0, 0)] = -1.0;
    put(&mut tp0, 0, f, &ones_row(1, b1));
    put(&mut tp0, f, f, ph_single.h());
    put(&mut tp0, s, f, &ones_row(k * s4, b1));
    put(&mut tp0, s, s, &neg_eye(k * s4));
    let mut t1s0 = l.zero();
    put(&mut t1s0, f, 0, &DMatrix::from_column_slice(s1, 1, h1.as_slice()));
    let mut t2s0 = l.zero();
    put(&mut t2s0, f, f, &outer(h1, b1));
    let mut t0p = l.zero();
    t0p[(0, 0)] = -1.0;
    put(&mut t0p, 0, slot(0), &ones_row(1, b4));
    put(&mut t0p, f, f, &neg_eye(s1));
    put(&mut t0p, f, slot(0), &ones_row(s1, b4));
    for i in 0..k {
        put(&mut t0p, slot(i), slot(i), ph_batch.h());
    }
    let mut t01s = l.zero();
    for i in 0..k {
        put(&mut t01s, slot(i), 0, &DMatrix::from_column_slice(s4, 1, h4.as_slice()));
    }
    let mut t02s = l.zero();
    for i in 0..k {
        add(&mut t02s, slot(i), slot((i + 1) % k), &h4b4);
    }
    let mut tpp = l.zero();
    tpp[(0, 0)] = -1.0;
    put(&mut tpp, 0, slot(0), &ones_row(1, b4));
    put(&mut tpp, f, f, ph_single.h());
    for i in 0..k {
        put(&mut tpp, slot(i), slot(i), ph_batch.h());
    }
    let mut t1sp = l.zero();
    put(&mut t1sp, f, slot(0), &outer(h1, b4));
    let mut tp1s = l.zero();
    for i in 0..k {
        put(&mut tp1s, slot(i), f, &h4b1);
    }
    let mut tp2s = l.zero();
    for i in 0..k - 1 {
        add(&mut tp2s, slot(i), slot(i + 1), &h4b4);
    }
    add(&mut tp2s, slot(k - 1), f, &h4b1);
    let mut u0s0 = l.zero();
    put(&mut u0s0, 0, f, &ones_row(l.n, b1));
    let mut u00s = l.zero();
    put(&mut u00s, 0, slot(0), &ones_row(l.n, b4));

    assemble(
        &l,
        vec![
            ("00", t00),
            ("+0", tp0),
            ("0+", t0p),
            ("++", tpp),
            ("1*0", t1s0),
            ("2*0", t2s0),
            ("1*+", t1sp.clone()),
            ("2*+", t1sp),
            ("01*", t01s),
            ("02*", t02s),
            ("+1*", tp1s),
            ("+2*", tp2s),
            ("0*0", u0s0),
            ("00*", u00s),
        ],
    )
}

/// Service discipline of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discipline {
    NonPreemptive,
    PreemptiveResume,
    Limited { k: usize },
    Custom,
}

/// The complete two-station network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    map1: MapSpec,
    map3: MapSpec,
    msp1: MspSpec,
    msp2: MspSpec,
    ph: [PhSpec; 4],
    p: f64,
    discipline: Discipline,
    lambda: [f64; 2],
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("feedback probability {p} outside [0, 1]")));
    }
    Ok(())
}

impl NetworkModel {
    /// Builds a network with one of the built-in disciplines. `ph[i]` is
    /// the service-time distribution of class i+1. Station 1 serves
    /// classes 1 (first) and 4 (second); station 2 serves classes 3
    /// (first) and 2 (second).
    pub fn new(map1: MapSpec, map3: MapSpec, ph: [PhSpec; 4], p: f64, discipline: Discipline) -> Result<Self> {
        check_p(p)?;
        let (msp1, msp2) = match discipline {
            Discipline::NonPreemptive => {
                (build_nonpreemptive_msp(&ph[0], &ph[3])?, build_nonpreemptive_msp(&ph[2], &ph[1])?)
            }
            Discipline::PreemptiveResume => {
                (build_preemptive_resume_msp(&ph[0], &ph[3])?, build_preemptive_resume_msp(&ph[2], &ph[1])?)
            }
            Discipline::Limited { k } => (build_limited_msp(&ph[0], &ph[3], k)?, build_limited_msp(&ph[2], &ph[1], k)?),
            Discipline::Custom => {
                return Err(Error::InvalidArgument("custom discipline needs explicit MSPs".into()));
            }
        };
        Self::assemble(map1, map3, msp1, msp2, ph, p, discipline)
    }

    /// Builds a network from explicit service processes.
    pub fn with_msps(map1: MapSpec, map3: MapSpec, msp1: MspSpec, msp2: MspSpec, ph: [PhSpec; 4], p: f64) -> Result<Self> {
        check_p(p)?;
        Self::assemble(map1, map3, msp1, msp2, ph, p, Discipline::Custom)
    }

    fn assemble(
        map1: MapSpec,
        map3: MapSpec,
        msp1: MspSpec,
        msp2: MspSpec,
        ph: [PhSpec; 4],
        p: f64,
        discipline: Discipline,
    ) -> Result<Self> {
        let lambda = [map_arrival_rate(&map1)?, map_arrival_rate(&map3)?];
        Ok(NetworkModel { map1, map3, msp1, msp2, ph, p, discipline, lambda })
    }

    /// Poisson arrivals and exponential services, the most common case.
    pub fn exponential(lambda1: f64, lambda3: f64, mu: [f64; 4], p: f64, discipline: Discipline) -> Result<Self> {
        let ph = [
            PhSpec::exponential(mu[0])?,
            PhSpec::exponential(mu[1])?,
            PhSpec::exponential(mu[2])?,
            PhSpec::exponential(mu[3])?,
        ];
        Self::new(MapSpec::poisson(lambda1)?, MapSpec::poisson(lambda3)?, ph, p, discipline)
    }

    pub fn map1(&self) -> &MapSpec {
        &self.map1
    }

    pub fn map3(&self) -> &MapSpec {
        &self.map3
    }

    pub fn msp1(&self) -> &MspSpec {
        &self.msp1
    }

    pub fn msp2(&self) -> &MspSpec {
        &self.msp2
    }

    pub fn ph(&self) -> &[PhSpec; 4] {
        &self.ph
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn discipline(&self) -> Discipline {
        self.discipline
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda[0]
    }

    pub fn lambda3(&self) -> f64 {
        self.lambda[1]
    }

    /// Service rate μ_i of class i (1-based).
    pub fn mu(&self, class: usize) -> f64 {
        self.ph[class - 1].rate()
    }

    /// Size of the background state space S0.
    pub fn phase_dim(&self) -> usize {
        self.map1.phases() * self.map3.phases() * self.msp1.state_count() * self.msp2.state_count()
    }

    /// Same network with every rate multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> NetworkModel {
        NetworkModel {
            map1: self.map1.scaled(s),
            map3: self.map3.scaled(s),
            msp1: self.msp1.scaled(s),
            msp2: self.msp2.scaled(s),
            ph: self.ph.clone().map(|p| p.scaled(s)),
            p: self.p,
            discipline: self.discipline,
            lambda: [self.lambda[0] * s, self.lambda[1] * s],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(r: f64) -> PhSpec {
        PhSpec::exponential(r).unwrap()
    }

    #[test]
    fn nonpreemptive_exponential_layout() {
        let (m1, m4) = (5.0, 2.0);
        let msp = build_nonpreemptive_msp(&exp(m1), &exp(m4)).unwrap();
        assert_eq!(msp.state_count(), 3);
        let tp0 = msp.t(Occ::Pos, Occ::Zero);
        let want = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 0.0, -m1, 0.0, 0.0, 1.0, -1.0]);
        assert_eq!(tp0, &want);
        let tpp = msp.t(Occ::Pos, Occ::Pos);
        let want = DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 1.0, 0.0, -m1, 0.0, 0.0, 0.0, -m4]);
        assert_eq!(tpp, &want);
        assert_eq!(msp.u_first(Occ::Pos, Occ::Pos), &DMatrix::identity(3, 3));
        assert_eq!(msp.first_done(Done::One, Occ::Pos), msp.first_done(Done::Two, Occ::Pos));
        assert_eq!(msp.first_done(Done::One, Occ::Pos)[(1, 2)], m1);
        assert_eq!(msp.u_first(Occ::Zero, Occ::Zero).column(1).sum(), 3.0);
    }

    #[test]
    fn erlang_low_is_four_states() {
        let msp = build_nonpreemptive_msp(&PhSpec::erlang(2, 4.0).unwrap(), &exp(1.0)).unwrap();
        assert_eq!(msp.state_count(), 4);
        assert_eq!(msp.partition().first, vec![1, 2]);
    }

    #[test]
    fn preemptive_dimension() {
        let msp = build_preemptive_resume_msp(&PhSpec::erlang(2, 4.0).unwrap(), &exp(1.0)).unwrap();
        assert_eq!(msp.state_count(), 5);
        let up0s = msp.u_second(Occ::Pos, Occ::Zero);
        // Interrupted phase k moves to group k.
        assert_eq!(up0s[(1, 3)], 1.0);
        assert_eq!(up0s[(2, 4)], 1.0);
        assert_eq!(msp.t(Occ::Pos, Occ::Zero)[(4, 2)], 1.0);
        assert!(msp.first_done(Done::Two, Occ::Pos).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn limited_dimensions_and_wrap() {
        let k1 = build_limited_msp(&exp(5.0), &exp(1.8), 1).unwrap();
        assert_eq!(k1.state_count(), 3);
        // With K = 1 a second-class completion returns to the first class.
        assert_eq!(k1.second_done(Occ::Pos, Done::Two)[(2, 1)], 1.8);
        let k3 = build_limited_msp(&exp(5.0), &exp(1.8), 3).unwrap();
        assert_eq!(k3.state_count(), 5);
        let tp2 = k3.second_done(Occ::Pos, Done::Two);
        assert_eq!(tp2[(2, 3)], 1.8);
        assert_eq!(tp2[(3, 4)], 1.8);
        assert_eq!(tp2[(4, 1)], 1.8);
        let t02 = k3.second_done(Occ::Zero, Done::Two);
        assert_eq!(t02[(4, 2)], 1.8);
        assert!(matches!(build_limited_msp(&exp(1.0), &exp(1.0), 0), Err(Error::InvalidK(0))));
    }

    #[test]
    fn validation_errors() {
        let msp = build_nonpreemptive_msp(&exp(2.0), &exp(1.0)).unwrap();
        let mut bad = msp.clone();
        bad.t[1][1][(1, 1)] += 0.1;
        assert!(matches!(validate_msp(bad), Err(Error::GeneratorRowSumNonzero { .. })));
        let mut bad = msp.clone();
        bad.u_first[0][0] *= 0.9;
        assert!(matches!(validate_msp(bad), Err(Error::NonStochasticU { .. })));
        let mut bad = msp.clone();
        bad.t[0][1][(0, 2)] = -1.0;
        bad.t[0][1][(0, 0)] = 1.0;
        assert!(matches!(validate_msp(bad), Err(Error::NegativeOffDiagonal { .. })));
    }

    #[test]
    fn named_lookup_round_trip() {
        let msp = build_limited_msp(&exp(3.0), &exp(1.0), 2).unwrap();
        let names = matrix_names();
        assert_eq!(names.len(), 20);
        let rebuilt = MspSpec::from_named(msp.state_count(), msp.partition().clone(), |n| msp.matrix(n).cloned()).unwrap();
        assert_eq!(rebuilt, msp);
    }
}
