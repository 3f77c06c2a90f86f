//! Problem-specific pseudo-calibration: coefficient formulas for planted
//! clique, planted slightly denser subgraph, spiked tensor PCA, and the
//! Wishart model of sparse PCA; Monte-Carlo and exact oracles against the
//! planted distributions; and full moment-matrix assembly.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::Error;
use crate::fourier::{
    eval_graph_matrix_f, eval_graph_matrix_i, matrix_indices_for, Dist, EvaluatedMatrix,
    HermiteBasis, HermiteTable, InputTensor,
};
use crate::rng::CounterRng;
use crate::scalar::{double_factorial_odd, rat_int, rat_pow, rat_to_f64};
use crate::separators::{decompose, enumerate_row_patterns, FamilyConfig};
use crate::shape::{enumerate_shapes, EnumConfig, IndexShape, MatrixIndex, Piece, Ribbon, Shape, TypeTable};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Problem {
    Clique,
    Plds,
    Tpca,
    Spca,
}

impl Problem {
    pub fn parse(s: &str) -> Result<Problem> {
        match s {
            "clique" => Ok(Problem::Clique),
            "plds" => Ok(Problem::Plds),
            "tpca" => Ok(Problem::Tpca),
            "spca" => Ok(Problem::Spca),
            other => Err(Error::InvalidParam(format!("unknown problem: {other}"))),
        }
    }

    pub fn dist(&self) -> Dist {
        match self {
            Problem::Clique | Problem::Plds => Dist::Rademacher,
            Problem::Tpca | Problem::Spca => Dist::Gaussian,
        }
    }

    /// Pseudo-calibration coefficients are stated in the unnormalized
    /// Hermite basis for the Gaussian problems.
    pub fn basis(&self) -> HermiteBasis {
        HermiteBasis::Unnormalized
    }
}

/// Desk-scale parameters: truncation degrees are given directly rather
/// than through an `n^(C eps)` schedule.
#[derive(Clone, Debug)]
pub struct ProblemParams {
    pub problem: Problem,
    /// Type populations: `[n]` for clique/plds/tpca, `[d, m]` for spca
    /// (type 0 indexes solution variables in every problem).
    pub table: TypeTable,
    /// Planted size `k` (clique, plds, spca sparsity).
    pub planted_size: BigRational,
    /// Edge density `p` in (1/2, 1) for plds.
    pub density: BigRational,
    /// Signal strength for tpca/spca.
    pub signal: BigRational,
    /// Slack in (0, 1] for tpca/spca.
    pub slack: BigRational,
    /// Hyperedge arity (tensor order) for tpca; 2 otherwise.
    pub arity: usize,
    pub d_sos: u32,
    pub d_v: usize,
    pub d_e: u32,
    /// Divide the assembled matrix by its (empty, empty) entry.
    pub normalize: bool,
}

impl ProblemParams {
    pub fn validate(&self) -> Result<()> {
        let one = BigRational::one();
        let half = BigRational::new(1.into(), 2.into());
        match self.problem {
            Problem::Clique | Problem::Plds => {
                let n = rat_int(self.table.sizes[0] as i64);
                if self.planted_size <= BigRational::zero() || self.planted_size > n {
                    return Err(Error::InvalidParam("need 0 < k <= n".into()));
                }
                if self.problem == Problem::Plds && (self.density <= half || self.density >= one) {
                    return Err(Error::InvalidParam("need p in (1/2, 1)".into()));
                }
            }
            Problem::Tpca => {
                if self.slack <= BigRational::zero() || self.slack > one {
                    return Err(Error::InvalidParam("need slack in (0, 1]".into()));
                }
                if self.arity < 2 {
                    return Err(Error::InvalidParam("tensor order must be >= 2".into()));
                }
            }
            Problem::Spca => {
                if self.table.t_max() != 2 {
                    return Err(Error::InvalidParam("spca needs two index types".into()));
                }
                if self.slack <= BigRational::zero() || self.slack > one {
                    return Err(Error::InvalidParam("need slack in (0, 1]".into()));
                }
            }
        }
        Ok(())
    }

    pub fn ordered_edges(&self) -> bool {
        self.problem == Problem::Tpca
    }

    pub fn edge_arity(&self) -> usize {
        if self.problem == Problem::Tpca {
            self.arity
        } else {
            2
        }
    }

    /// Slot types of the input tensor cells.
    pub fn slot_types(&self) -> Vec<usize> {
        match self.problem {
            Problem::Clique | Problem::Plds => vec![0, 0],
            Problem::Tpca => vec![0; self.arity],
            Problem::Spca => vec![0, 1],
        }
    }

    pub fn bipartite(&self) -> Option<(usize, usize)> {
        if self.problem == Problem::Spca {
            Some((0, 1))
        } else {
            None
        }
    }

    /// Index pieces with powers are only meaningful for the real-valued
    /// problems; boolean problems keep multilinear tuples.
    pub fn allow_powers(&self) -> bool {
        matches!(self.problem, Problem::Tpca | Problem::Spca)
    }

    pub fn index_types(&self) -> Option<Vec<usize>> {
        if self.problem == Problem::Spca {
            Some(vec![0])
        } else {
            None
        }
    }

    pub fn family_config(&self, max_edges: Option<usize>) -> FamilyConfig {
        FamilyConfig {
            table: self.table.clone(),
            d_sos: self.d_sos,
            d_v: self.d_v,
            d_e: self.d_e,
            arity: self.edge_arity(),
            ordered_edges: self.ordered_edges(),
            bipartite: self.bipartite(),
            index_types: self.index_types(),
            allow_powers: self.allow_powers(),
            max_edges,
            cap: 20_000_000,
        }
    }
}

// ---------------------------------------------------------------------------
// Coefficient formulas
// ---------------------------------------------------------------------------

/// Truncation test: monomial degrees of U and V at most D_sos/2, all
/// three decomposition parts at most D_V vertices, labels at most D_E.
pub fn satisfies_truncation(shape: &Shape, p: &ProblemParams) -> Result<bool> {
    if shape.u.degree() > p.d_sos / 2 || shape.v.degree() > p.d_sos / 2 {
        return Ok(false);
    }
    if shape.edges.iter().any(|e| e.label > p.d_e) {
        return Ok(false);
    }
    if shape.nv() > 3 * p.d_v {
        return Ok(false);
    }
    let d = decompose(shape, &p.table, None, None, 14)?;
    Ok(d.left.nv() <= p.d_v && d.middle.nv() <= p.d_v && d.right.nv() <= p.d_v)
}

fn parity_ok(shape: &Shape) -> bool {
    (0..shape.nv() as u32).all(|i| {
        (shape.deg_vertex(i) + shape.u.deg_of(i) as u64 + shape.v.deg_of(i) as u64) % 2 == 0
    })
}

/// Pseudo-calibration coefficient of a shape; zero outside the support
/// (improper, truncation-violating, or parity-violating shapes).
pub fn lambda(shape: &Shape, p: &ProblemParams) -> Result<BigRational> {
    if !shape.is_proper() || !satisfies_truncation(shape, p)? {
        return Ok(BigRational::zero());
    }
    lambda_formula(shape, p)
}

/// The closed-form value without the truncation gate (still zero on
/// parity or structure violations). Exposed for charge-quantity reuse.
pub fn lambda_formula(shape: &Shape, p: &ProblemParams) -> Result<BigRational> {
    let nv = rat_int(shape.nv() as i64);
    let _ = nv;
    match p.problem {
        Problem::Clique => {
            let n = rat_int(p.table.sizes[0] as i64);
            Ok(rat_pow(&(&p.planted_size / n), shape.nv() as i64))
        }
        Problem::Plds => {
            let n = rat_int(p.table.sizes[0] as i64);
            let kn = rat_pow(&(&p.planted_size / n), shape.nv() as i64);
            let bias = rat_int(2) * &p.density - BigRational::one();
            Ok(kn * rat_pow(&bias, shape.edge_count() as i64))
        }
        Problem::Tpca => {
            if !parity_ok(shape) {
                return Ok(BigRational::zero());
            }
            let n = rat_int(p.table.sizes[0] as i64);
            let deg: i64 = (shape.u.degree() + shape.v.degree()) as i64;
            let total_label = shape.total_edge_label() as i64;
            let half = deg + p.arity as i64 * total_label;
            debug_assert!(half % 2 == 0, "parity forces an integer exponent");
            let dn = &p.slack * &n;
            let v = rat_pow(&p.slack, shape.nv() as i64)
                * rat_pow(&p.signal, total_label)
                * rat_pow(&dn, -half / 2);
            Ok(v)
        }
        Problem::Spca => {
            if shape.u.pieces.iter().any(|q| q.ty != 0) || shape.v.pieces.iter().any(|q| q.ty != 0)
            {
                return Ok(BigRational::zero());
            }
            if shape.edges.iter().any(|e| {
                e.ends.len() != 2
                    || shape.vtypes[e.ends[0] as usize] == shape.vtypes[e.ends[1] as usize]
            }) {
                return Err(Error::RoleMismatch(
                    "spca shapes must be bipartite between the two types".into(),
                ));
            }
            if !parity_ok(shape) {
                return Ok(BigRational::zero());
            }
            let d = rat_int(p.table.sizes[0] as i64);
            let k = &p.planted_size;
            let deg: i64 = (shape.u.degree() + shape.v.degree()) as i64;
            let total_label = shape.total_edge_label() as i64;
            debug_assert!((deg + total_label) % 2 == 0 && total_label % 2 == 0);
            let counts = shape.type_counts(2);
            let mut dfact = BigRational::one();
            for i in 0..shape.nv() as u32 {
                if shape.vtypes[i as usize] == 1 {
                    dfact *= double_factorial_odd(shape.deg_vertex(i) as i64 - 1);
                }
            }
            let v = rat_pow(k, -(deg + total_label) / 2)
                * rat_pow(&(k / &d), counts[0] as i64)
                * rat_pow(&p.slack, counts[1] as i64)
                * dfact
                * rat_pow(&p.signal, total_label / 2);
            Ok(v)
        }
    }
}

/// Parity vector of a left shape: for each vertex of `V_sigma` (piece
/// order, tuple order) the parity of `deg^U(i) + deg^sigma(i)`.
pub fn parity_vector(sigma: &Shape) -> Vec<u8> {
    sigma
        .v
        .pieces
        .iter()
        .flat_map(|p| p.verts.iter())
        .map(|&i| ((sigma.deg_vertex(i) + sigma.u.deg_of(i) as u64) % 2) as u8)
        .collect()
}

// ---------------------------------------------------------------------------
// Oracles against the planted distributions
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct OracleEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub exact: Option<BigRational>,
}

/// Monomial exponent per concrete vertex of a ribbon, from both matrix
/// indices.
fn ribbon_monomial(r: &Ribbon) -> BTreeMap<(usize, u64), u32> {
    let mut m: BTreeMap<(usize, u64), u32> = BTreeMap::new();
    for mi in [&r.a, &r.b] {
        for p in &mi.pieces {
            for &v in &p.vals {
                *m.entry((p.ty, v)).or_insert(0) += p.power;
            }
        }
    }
    m
}

/// Exact `E_mu[x_I chi_E]` for clique/plds by enumerating planted-set
/// membership over the vertices the ribbon touches.
pub fn oracle_exact_boolean(r: &Ribbon, p: &ProblemParams) -> Result<BigRational> {
    if !matches!(p.problem, Problem::Clique | Problem::Plds) {
        return Err(Error::RoleMismatch("exact enumeration needs a +-1 problem".into()));
    }
    let involved: Vec<u64> = r
        .verts
        .iter()
        .map(|&(t, v)| {
            debug_assert_eq!(t, 0);
            v
        })
        .collect();
    if involved.len() > 20 {
        return Err(Error::BruteForceCap("too many vertices for exact enumeration".into()));
    }
    let monomial = ribbon_monomial(r);
    let n = rat_int(p.table.sizes[0] as i64);
    let q = &p.planted_size / &n; // membership probability
    let qc = BigRational::one() - &q;
    let bias = match p.problem {
        Problem::Clique => BigRational::one(),
        Problem::Plds => rat_int(2) * &p.density - BigRational::one(),
        _ => unreachable!(),
    };
    let mut total = BigRational::zero();
    for mask in 0u64..(1u64 << involved.len()) {
        let inset: BTreeSet<u64> = involved
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &v)| v)
            .collect();
        // x_I vanishes unless every monomial vertex is planted.
        if monomial.keys().any(|&(_, v)| !inset.contains(&v)) {
            continue;
        }
        let mut term = rat_pow(&q, inset.len() as i64)
            * rat_pow(&qc, (involved.len() - inset.len()) as i64);
        for e in &r.edges {
            let inside = e.ends.iter().all(|&i| inset.contains(&r.verts[i as usize].1));
            let odd = (e.label * e.mult) % 2 == 1;
            if !odd {
                continue; // even power of a +-1 entry is 1
            }
            if inside {
                term *= &bias;
            } else {
                term = BigRational::zero();
                break;
            }
        }
        total += term;
    }
    Ok(total)
}

/// Monte-Carlo estimate of `E_mu[x_I chi_a]` from the planted sampler,
/// sampling only the coordinates the ribbon touches.
pub fn oracle_moment_mc(
    r: &Ribbon,
    p: &ProblemParams,
    samples: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    if samples < 1 {
        return Err(Error::InvalidParam("need at least one sample".into()));
    }
    let monomial = ribbon_monomial(r);
    let hermite = HermiteTable::new(
        (r.edges.iter().map(|e| (e.label * e.mult) as usize).max().unwrap_or(1)).max(2),
    );
    let q_member = rat_to_f64(&p.planted_size) / p.table.sizes[0] as f64;
    let density = rat_to_f64(&p.density);
    let slack = rat_to_f64(&p.slack);
    let signal = rat_to_f64(&p.signal);
    let n0 = p.table.sizes[0] as f64;
    let kf = rat_to_f64(&p.planted_size);
    let d0 = p.table.sizes[0] as f64;

    let mut rng = CounterRng::new(seed);
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    for _ in 0..samples {
        let value = match p.problem {
            Problem::Clique | Problem::Plds => {
                let mut member: BTreeMap<u64, bool> = BTreeMap::new();
                for &(_, v) in &r.verts {
                    member.insert(v, rng.bernoulli(q_member));
                }
                let mut x_i = 1.0f64;
                for (&(_, v), _) in &monomial {
                    if !member[&v] {
                        x_i = 0.0;
                    }
                }
                let mut chi = 1.0f64;
                for e in &r.edges {
                    let inside = e.ends.iter().all(|&i| member[&r.verts[i as usize].1]);
                    let g: f64 = if inside {
                        let present = match p.problem {
                            Problem::Clique => true,
                            _ => rng.bernoulli(density),
                        };
                        if present {
                            1.0
                        } else {
                            -1.0
                        }
                    } else if rng.bernoulli(0.5) {
                        1.0
                    } else {
                        -1.0
                    };
                    chi *= g.powi((e.label * e.mult) as i32);
                }
                x_i * chi
            }
            Problem::Tpca => {
                let amp = 1.0 / (slack * n0).sqrt();
                let mut u: BTreeMap<u64, f64> = BTreeMap::new();
                for &(_, v) in &r.verts {
                    let roll = rng.uniform();
                    u.insert(
                        v,
                        if roll < slack / 2.0 {
                            amp
                        } else if roll < slack {
                            -amp
                        } else {
                            0.0
                        },
                    );
                }
                let mut x_i = 1.0f64;
                for (&(_, v), &pow) in &monomial {
                    x_i *= u[&v].powi(pow as i32);
                }
                let mut chi = 1.0f64;
                for e in &r.edges {
                    let planted: f64 =
                        signal * e.ends.iter().map(|&i| u[&r.verts[i as usize].1]).product::<f64>();
                    let a = rng.gaussian() + planted;
                    chi *= hermite.eval_unnorm(e.label as usize, a).powi(e.mult as i32);
                }
                x_i * chi
            }
            Problem::Spca => {
                let amp = 1.0 / kf.sqrt();
                let sparse_p = kf / d0;
                let mut u: BTreeMap<u64, f64> = BTreeMap::new();
                let mut row: BTreeMap<u64, f64> = BTreeMap::new();
                for &(t, v) in &r.verts {
                    if t == 0 {
                        let roll = rng.uniform();
                        u.insert(
                            v,
                            if roll < sparse_p / 2.0 {
                                amp
                            } else if roll < sparse_p {
                                -amp
                            } else {
                                0.0
                            },
                        );
                    } else {
                        let b = rng.bernoulli(slack);
                        let l = rng.gaussian();
                        row.insert(v, if b { signal.sqrt() * l } else { 0.0 });
                    }
                }
                let mut x_i = 1.0f64;
                for (&(t, v), &pow) in &monomial {
                    if t == 0 {
                        x_i *= u[&v].powi(pow as i32);
                    }
                }
                let mut chi = 1.0f64;
                for e in &r.edges {
                    let mut dim = None;
                    let mut smp = None;
                    for &i in &e.ends {
                        let (t, v) = r.verts[i as usize];
                        if t == 0 {
                            dim = Some(v);
                        } else {
                            smp = Some(v);
                        }
                    }
                    let (j, i) = (dim.unwrap(), smp.unwrap());
                    let v_entry = rng.gaussian() + row[&i] * u[&j];
                    chi *= hermite.eval_unnorm(e.label as usize, v_entry).powi(e.mult as i32);
                }
                x_i * chi
            }
        };
        sum += value;
        sumsq += value * value;
    }
    let mean = sum / samples as f64;
    let var = (sumsq / samples as f64 - mean * mean).max(0.0);
    Ok(OracleEstimate { mean, stderr: (var / samples as f64).sqrt(), exact: None })
}

// ---------------------------------------------------------------------------
// Moment-matrix assembly
// ---------------------------------------------------------------------------

pub enum AssembledMatrix {
    Exact(EvaluatedMatrix<BigRational>),
    Float(EvaluatedMatrix<f64>),
}

impl AssembledMatrix {
    pub fn to_f64(&self) -> EvaluatedMatrix<f64> {
        match self {
            AssembledMatrix::Float(m) => m.clone(),
            AssembledMatrix::Exact(m) => EvaluatedMatrix {
                row_indices: m.row_indices.clone(),
                col_indices: m.col_indices.clone(),
                data: crate::matrix::Mat {
                    rows: m.data.rows,
                    cols: m.data.cols,
                    data: m.data.data.iter().map(rat_to_f64).collect(),
                },
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssemblyOrder {
    ByShape,
    ByRibbon,
}

/// All matrix indices of the moment matrix: every realization of every
/// row pattern, sorted.
pub fn moment_matrix_indices(p: &ProblemParams) -> Vec<MatrixIndex> {
    let cfg = p.family_config(None);
    let mut out: Vec<MatrixIndex> = Vec::new();
    for pat in enumerate_row_patterns(&cfg) {
        let pattern = IndexShape {
            pieces: pat
                .iter()
                .scan(0u32, |next, &(t, pw, len)| {
                    let verts: Vec<u32> = (*next..*next + len as u32).collect();
                    *next += len as u32;
                    Some(Piece { ty: t, power: pw, verts })
                })
                .collect(),
        };
        out.extend(matrix_indices_for(&pattern, &p.table));
    }
    out.sort();
    out.dedup();
    out
}

/// Shapes with potentially nonzero coefficient that also fit the
/// universe (larger shapes evaluate to zero anyway).
pub fn support_shapes(p: &ProblemParams) -> Result<Vec<(Shape, BigRational)>> {
    let total_universe: u64 = p.table.sizes.iter().sum();
    let max_v = (3 * p.d_v).min(total_universe as usize);
    let cfg = EnumConfig {
        t_max: p.table.t_max(),
        max_vertices: max_v,
        max_label: p.d_e,
        arity: p.edge_arity(),
        ordered_edges: p.ordered_edges(),
        bipartite: p.bipartite(),
        max_index_degree: p.d_sos / 2,
        allow_powers: p.allow_powers(),
        index_types: p.index_types(),
        tuple_orders: true,
        require_proper: true,
        max_edges: None,
        cap: 20_000_000,
    };
    let mut out = Vec::new();
    for s in enumerate_shapes(&cfg)? {
        // Respect per-type universe bounds.
        let counts = s.type_counts(p.table.t_max());
        if counts.iter().enumerate().any(|(t, &c)| c as u64 > p.table.sizes[t]) {
            continue;
        }
        let l = lambda(&s, p)?;
        if !l.is_zero() {
            out.push((s, l));
        }
    }
    Ok(out)
}

/// Assemble the moment matrix on a concrete input: entries
/// `sum_alpha lambda_alpha M_alpha(A, B)` over all monomial indices of
/// degree at most D_sos/2.
pub fn assemble_moment_matrix(
    p: &ProblemParams,
    x: &InputTensor,
    order: AssemblyOrder,
) -> Result<AssembledMatrix> {
    p.validate()?;
    let indices = moment_matrix_indices(p);
    let shapes = support_shapes(p)?;
    let nn = indices.len();
    let exact = p.problem.dist() == Dist::Rademacher;
    let mut data_r = vec![BigRational::zero(); if exact { nn * nn } else { 0 }];
    let mut data_f = vec![0.0f64; if exact { 0 } else { nn * nn }];
    for (shape, lam) in &shapes {
        match order {
            AssemblyOrder::ByShape => {
                if exact {
                    let m = eval_graph_matrix_i(shape, x, &p.table)?;
                    scatter_exact(&indices, &m, lam, &mut data_r)?;
                } else {
                    let m = eval_graph_matrix_f(shape, x, &p.table)?;
                    scatter_float(&indices, &m, rat_to_f64(lam), &mut data_f)?;
                }
            }
            AssemblyOrder::ByRibbon => {
                // Accumulate one ribbon at a time straight into the big
                // matrix; the sum is the same, the walk order differs.
                for_each_ribbon(shape, p, |r| {
                    let ra = indices.binary_search(&r.a).map_err(|_| {
                        Error::UniverseTooSmall("ribbon index missing from moment rows".into())
                    })?;
                    let rb = indices.binary_search(&r.b).map_err(|_| {
                        Error::UniverseTooSmall("ribbon index missing from moment cols".into())
                    })?;
                    if exact {
                        let chi = crate::fourier::fourier_character_i(&r, x)?;
                        data_r[ra * nn + rb] += lam * rat_int(chi);
                    } else {
                        let chi = crate::fourier::fourier_character_f(&r, x)?;
                        data_f[ra * nn + rb] += rat_to_f64(lam) * chi;
                    }
                    Ok(())
                })?;
            }
        }
    }
    let mut out = if exact {
        AssembledMatrix::Exact(EvaluatedMatrix {
            row_indices: indices.clone(),
            col_indices: indices,
            data: crate::matrix::Mat { rows: nn, cols: nn, data: data_r },
        })
    } else {
        AssembledMatrix::Float(EvaluatedMatrix {
            row_indices: indices.clone(),
            col_indices: indices,
            data: crate::matrix::Mat { rows: nn, cols: nn, data: data_f },
        })
    };
    if p.normalize {
        normalize_by_scale(&mut out)?;
    }
    Ok(out)
}

fn normalize_by_scale(m: &mut AssembledMatrix) -> Result<()> {
    match m {
        AssembledMatrix::Exact(e) => {
            let empty = MatrixIndex::empty();
            let i = e
                .row_indices
                .binary_search(&empty)
                .map_err(|_| Error::InvalidParam("no empty index to normalize by".into()))?;
            let scale = e.data.at(i, i).clone();
            if scale.is_zero() {
                return Err(Error::InvalidParam("scale entry is zero".into()));
            }
            for v in &mut e.data.data {
                *v = &*v / &scale;
            }
        }
        AssembledMatrix::Float(e) => {
            let empty = MatrixIndex::empty();
            let i = e
                .row_indices
                .binary_search(&empty)
                .map_err(|_| Error::InvalidParam("no empty index to normalize by".into()))?;
            let scale = *e.data.at(i, i);
            if scale == 0.0 {
                return Err(Error::InvalidParam("scale entry is zero".into()));
            }
            for v in &mut e.data.data {
                *v /= scale;
            }
        }
    }
    Ok(())
}

fn scatter_exact(
    indices: &[MatrixIndex],
    m: &EvaluatedMatrix<i64>,
    lam: &BigRational,
    out: &mut [BigRational],
) -> Result<()> {
    let nn = indices.len();
    for (ri, row) in m.row_indices.iter().enumerate() {
        let gr = match indices.binary_search(row) {
            Ok(i) => i,
            Err(_) => continue,
        };
        for (ci, col) in m.col_indices.iter().enumerate() {
            let v = *m.data.at(ri, ci);
            if v == 0 {
                continue;
            }
            let gc = match indices.binary_search(col) {
                Ok(i) => i,
                Err(_) => continue,
            };
            out[gr * nn + gc] += lam * rat_int(v);
        }
    }
    Ok(())
}

fn scatter_float(
    indices: &[MatrixIndex],
    m: &EvaluatedMatrix<f64>,
    lam: f64,
    out: &mut [f64],
) -> Result<()> {
    let nn = indices.len();
    for (ri, row) in m.row_indices.iter().enumerate() {
        let gr = match indices.binary_search(row) {
            Ok(i) => i,
            Err(_) => continue,
        };
        for (ci, col) in m.col_indices.iter().enumerate() {
            let v = *m.data.at(ri, ci);
            if v == 0.0 {
                continue;
            }
            let gc = match indices.binary_search(col) {
                Ok(i) => i,
                Err(_) => continue,
            };
            out[gr * nn + gc] += lam * v;
        }
    }
    Ok(())
}

fn for_each_ribbon(
    shape: &Shape,
    p: &ProblemParams,
    mut f: impl FnMut(Ribbon) -> Result<()>,
) -> Result<()> {
    let n = shape.nv();
    let mut assign: Vec<u64> = vec![0; n];
    let mut used: Vec<Vec<u64>> = vec![vec![]; p.table.t_max()];
    fn rec(
        shape: &Shape,
        table: &TypeTable,
        v: usize,
        assign: &mut Vec<u64>,
        used: &mut Vec<Vec<u64>>,
        f: &mut impl FnMut(Ribbon) -> Result<()>,
    ) -> Result<()> {
        if v == shape.nv() {
            return f(Ribbon::from_shape(shape, assign)?);
        }
        let t = shape.vtypes[v];
        for val in 0..table.sizes[t] {
            if used[t].contains(&val) {
                continue;
            }
            assign[v] = val;
            used[t].push(val);
            rec(shape, table, v + 1, assign, used, f)?;
            used[t].pop();
        }
        Ok(())
    }
    rec(shape, &p.table, 0, &mut assign, &mut used, &mut f)
}

/// A concrete realization of a shape for oracle tests: assigns vertex `i`
/// the `i`-th smallest unused index of its type.
pub fn canonical_ribbon(shape: &Shape, table: &TypeTable) -> Result<Ribbon> {
    let mut next: Vec<u64> = vec![0; table.t_max()];
    let mut assign = vec![0u64; shape.nv()];
    for v in 0..shape.nv() {
        let t = shape.vtypes[v];
        assign[v] = next[t];
        next[t] += 1;
        if assign[v] >= table.sizes[t] {
            return Err(Error::UniverseTooSmall("not enough indices for realization".into()));
        }
    }
    Ribbon::from_shape(shape, &assign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rat;
    use crate::shape::Edge;

    fn plds_params(n: u64, k: i64, p: (i64, i64)) -> ProblemParams {
        ProblemParams {
            problem: Problem::Plds,
            table: TypeTable::single(n),
            planted_size: rat_int(k),
            density: rat(p.0, p.1),
            signal: BigRational::zero(),
            slack: BigRational::one(),
            arity: 2,
            d_sos: 2,
            d_v: 4,
            d_e: 1,
            normalize: false,
        }
    }

    fn tpca_params(n: u64, arity: usize, signal: (i64, i64), slack: (i64, i64)) -> ProblemParams {
        ProblemParams {
            problem: Problem::Tpca,
            table: TypeTable::single(n),
            planted_size: BigRational::zero(),
            density: BigRational::zero(),
            signal: rat(signal.0, signal.1),
            slack: rat(slack.0, slack.1),
            arity,
            d_sos: 2,
            d_v: 4,
            d_e: 2,
            normalize: false,
        }
    }

    fn spca_params(d: u64, m: u64, k: i64, signal: (i64, i64), slack: (i64, i64)) -> ProblemParams {
        ProblemParams {
            problem: Problem::Spca,
            table: TypeTable::new(vec![d, m]).unwrap(),
            planted_size: rat_int(k),
            density: BigRational::zero(),
            signal: rat(signal.0, signal.1),
            slack: rat(slack.0, slack.1),
            arity: 2,
            d_sos: 2,
            d_v: 4,
            d_e: 2,
            normalize: false,
        }
    }

    fn empty_shape() -> Shape {
        Shape::new(vec![], vec![], IndexShape::empty(), IndexShape::empty(), false).unwrap()
    }

    #[test]
    fn plds_lambda_values() {
        let p = plds_params(100, 4, (3, 5));
        assert_eq!(lambda(&empty_shape(), &p).unwrap(), rat_int(1));
        // |V| = 3, |E| = 2 path: (k/n)^3 (2p-1)^2 = (1/25)^3 (1/5)^2.
        let path = Shape::new(
            vec![0, 0, 0],
            vec![
                Edge { ends: vec![0, 2], label: 1, mult: 1 },
                Edge { ends: vec![1, 2], label: 1, mult: 1 },
            ],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![1] }]).unwrap(),
            false,
        )
        .unwrap();
        let v = lambda(&path, &p).unwrap();
        assert_eq!(v, rat(1, 25 * 25 * 25) * rat(1, 25));
        // Truncation: a left part larger than D_V zeroes the coefficient.
        let mut tight = plds_params(100, 4, (3, 5));
        tight.d_v = 1;
        assert!(lambda(&path, &tight).unwrap().is_zero());
    }

    #[test]
    fn clique_lambda_matches_exact_oracle() {
        let mut p = plds_params(30, 3, (3, 5));
        p.problem = Problem::Clique;
        // Id_U with |U| = 2 at k = 3, n = 30: (k/n)^2 = 0.01.
        let is = IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0, 1] }]).unwrap();
        let id = Shape::new(vec![0, 0], vec![], is.clone(), is, false).unwrap();
        p.d_sos = 4;
        assert_eq!(lambda(&id, &p).unwrap(), rat(1, 100));
        let r = canonical_ribbon(&id, &p.table).unwrap();
        assert_eq!(oracle_exact_boolean(&r, &p).unwrap(), rat(1, 100));
        // And exact equality for a shape with edges under plds.
        let p2 = plds_params(12, 3, (4, 5));
        let edge = Shape::new(
            vec![0, 0],
            vec![Edge { ends: vec![0, 1], label: 1, mult: 1 }],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![1] }]).unwrap(),
            false,
        )
        .unwrap();
        let r = canonical_ribbon(&edge, &p2.table).unwrap();
        assert_eq!(oracle_exact_boolean(&r, &p2).unwrap(), lambda(&edge, &p2).unwrap());
    }

    #[test]
    fn tpca_lambda_parity_and_value() {
        let p = tpca_params(16, 3, (5, 1), (1, 2));
        // Single hyperedge with all three endpoints in U (power 1): each
        // endpoint has deg 1 + 1 = 2, even.
        let u = IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0, 1, 2] }]).unwrap();
        let s = Shape::new(
            vec![0, 0, 0],
            vec![Edge { ends: vec![0, 1, 2], label: 1, mult: 1 }],
            u,
            IndexShape::empty(),
            true,
        )
        .unwrap();
        let mut p6 = p.clone();
        p6.d_sos = 6;
        let v = lambda(&s, &p6).unwrap();
        // Delta^3 * (1/sqrt(Delta n))^3 * signal * (Delta n)^{-3/2}
        //   = Delta^3 * signal * (Delta n)^{-3}.
        let dn = rat(1, 2) * rat_int(16);
        let expect = rat(1, 8) * rat_int(5) * rat_pow(&dn, -3);
        assert_eq!(v, expect);
        // Odd-parity vertex kills the coefficient.
        let s_odd = Shape::new(
            vec![0, 0, 0],
            vec![Edge { ends: vec![0, 1, 2], label: 1, mult: 1 }],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0, 1] }]).unwrap(),
            IndexShape::empty(),
            true,
        )
        .unwrap();
        assert!(lambda(&s_odd, &p6).unwrap().is_zero());
        // Id_V with |V| = r gives 1/n^r.
        let idv =
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0, 1] }]).unwrap();
        let id = Shape::new(vec![0, 0], vec![], idv.clone(), idv, true).unwrap();
        let mut p4 = p.clone();
        p4.d_sos = 4;
        assert_eq!(lambda(&id, &p4).unwrap(), rat(1, 256));
    }

    #[test]
    fn spca_lambda_values() {
        let p = spca_params(40, 20, 5, (2, 1), (1, 4));
        // Id_V, type-0 only: Delta^0 / (d^{|V|_0} k^{|V|_1}) = 1/d^r.
        let idv = IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap();
        let id = Shape::new(vec![0], vec![], idv.clone(), idv, false).unwrap();
        assert_eq!(lambda(&id, &p).unwrap(), rat(1, 40));
        // Type-1 vertex with degree 4 contributes (4-1)!! = 3.
        let u = IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0, 1] }]).unwrap();
        let s = Shape::new(
            vec![0, 0, 0, 0, 1],
            vec![
                Edge { ends: vec![0, 4], label: 1, mult: 1 },
                Edge { ends: vec![1, 4], label: 1, mult: 1 },
                Edge { ends: vec![2, 4], label: 1, mult: 1 },
                Edge { ends: vec![3, 4], label: 1, mult: 1 },
            ],
            u.clone(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![2, 3] }]).unwrap(),
            false,
        )
        .unwrap();
        let mut p4 = p.clone();
        p4.d_sos = 4;
        let v = lambda(&s, &p4).unwrap();
        // (1/sqrt k)^4 * (k/d)^4 * Delta * 3 * (sqrt(lam)/sqrt(k))^4
        let expect = rat_pow(&rat_int(5), -4)
            * rat_pow(&rat(5, 40), 4)
            * rat(1, 4)
            * rat_int(3)
            * rat_pow(&rat(2, 5), 2)
            * rat_pow(&rat_int(5), 2);
        // (sqrt(lam)/sqrt(k))^{sum l} = (lam/k)^{sum l / 2} = (2/5)^2.
        let expect = expect / rat_pow(&rat_int(5), 2) * rat_pow(&rat_int(5), 2);
        assert_eq!(v, expect);
        // Odd-degree interior type-1 vertex vanishes.
        let s_odd = Shape::new(
            vec![0, 0, 1],
            vec![
                Edge { ends: vec![0, 2], label: 1, mult: 1 },
                Edge { ends: vec![1, 2], label: 2, mult: 1 },
            ],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![1] }]).unwrap(),
            false,
        )
        .unwrap();
        assert!(lambda(&s_odd, &p).unwrap().is_zero());
    }

    #[test]
    fn parity_vectors() {
        // Trivial left shape with power-1 U = V: each entry is the parity
        // of deg^U(i) + deg^sigma(i) = 1 + 0.
        let is = IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0, 1] }]).unwrap();
        let id = Shape::new(vec![0, 0], vec![], is.clone(), is, false).unwrap();
        assert_eq!(parity_vector(&id), vec![1, 1]);
        // Power-2 piece in U makes the contribution even again.
        let u2 = IndexShape::new(vec![Piece { ty: 0, power: 2, verts: vec![0] }]).unwrap();
        let v1 = IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap();
        let s = Shape::new(vec![0], vec![], u2, v1, false).unwrap();
        assert_eq!(parity_vector(&s), vec![0]);
    }

    #[test]
    fn mc_oracle_agrees_with_lambda_plds() {
        let p = plds_params(20, 4, (9, 10));
        let path = Shape::new(
            vec![0, 0, 0],
            vec![
                Edge { ends: vec![0, 2], label: 1, mult: 1 },
                Edge { ends: vec![1, 2], label: 1, mult: 1 },
            ],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![1] }]).unwrap(),
            false,
        )
        .unwrap();
        let r = canonical_ribbon(&path, &p.table).unwrap();
        let est = oracle_moment_mc(&r, &p, 200_000, 11).unwrap();
        let lam = rat_to_f64(&lambda(&path, &p).unwrap());
        assert!(
            (est.mean - lam).abs() <= 3.5 * est.stderr.max(1e-9),
            "estimate {} vs {} (stderr {})",
            est.mean,
            lam,
            est.stderr
        );
        // And the exact oracle agrees exactly.
        assert_eq!(oracle_exact_boolean(&r, &p).unwrap(), lambda(&path, &p).unwrap());
    }

    #[test]
    fn assembly_orders_agree() {
        let p = plds_params(5, 2, (4, 5));
        let x = InputTensor::random(
            &p.table,
            vec![0, 0],
            false,
            Dist::Rademacher,
            HermiteBasis::Orthonormal,
            1,
            3,
        );
        let a = assemble_moment_matrix(&p, &x, AssemblyOrder::ByShape).unwrap();
        let b = assemble_moment_matrix(&p, &x, AssemblyOrder::ByRibbon).unwrap();
        match (a, b) {
            (AssembledMatrix::Exact(a), AssembledMatrix::Exact(b)) => {
                assert_eq!(a.row_indices, b.row_indices);
                assert_eq!(a.data, b.data);
                // Symmetry of the assembled matrix.
                for i in 0..a.data.rows {
                    for j in 0..a.data.cols {
                        assert_eq!(a.data.at(i, j), a.data.at(j, i));
                    }
                }
            }
            _ => panic!("expected exact matrices"),
        }
    }

    #[test]
    fn degenerate_dsos_zero_gives_scalar() {
        let mut p = plds_params(6, 2, (4, 5));
        p.d_sos = 0;
        let x = InputTensor::random(
            &p.table,
            vec![0, 0],
            false,
            Dist::Rademacher,
            HermiteBasis::Orthonormal,
            1,
            5,
        );
        let m = assemble_moment_matrix(&p, &x, AssemblyOrder::ByShape).unwrap();
        match m {
            AssembledMatrix::Exact(e) => {
                assert_eq!(e.data.rows, 1);
                assert_eq!(e.row_indices[0], MatrixIndex::empty());
            }
            _ => panic!(),
        }
    }
}
