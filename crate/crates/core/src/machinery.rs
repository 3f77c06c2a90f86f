//! Shape coefficient matrices, the quantitative bound functions, the
//! charging quantities, the three spectral conditions of the main
//! machinery, truncation distance, and the positivity path-sum bound.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::Error;
use crate::fourier::{eval_graph_matrix_i, InputTensor};
use crate::matrix::{FMat, Mat, RMat};
use crate::pseudocal::{lambda, parity_vector, Problem, ProblemParams};
use crate::scalar::{double_factorial_odd, rat_int, rat_pow, rat_to_f64, SqrtRat};
use crate::separators::{
    high_multiplicity_interior, minsep_excluding_multi, pattern_aut, pattern_label, pattern_of,
    pattern_weight, IndexPattern, ShapeFamilies,
};
use crate::shape::{MatrixIndex, Shape, TypeTable, Weight};
use crate::Result;

// ---------------------------------------------------------------------------
// Coefficient matrices
// ---------------------------------------------------------------------------

/// Matrix over left shapes; rows and columns carry the shapes themselves
/// and lookups go through canonical keys.
#[derive(Clone, Debug)]
pub struct CoefficientMatrix {
    pub rows: Vec<Shape>,
    pub cols: Vec<Shape>,
    pub mat: RMat,
    row_keys: BTreeMap<Vec<u64>, usize>,
    col_keys: BTreeMap<Vec<u64>, usize>,
}

impl CoefficientMatrix {
    pub fn new(rows: Vec<Shape>, cols: Vec<Shape>) -> Self {
        let row_keys =
            rows.iter().enumerate().map(|(i, s)| (s.canonical_key(), i)).collect();
        let col_keys =
            cols.iter().enumerate().map(|(i, s)| (s.canonical_key(), i)).collect();
        let mat = RMat::zeros_rat(rows.len(), cols.len());
        CoefficientMatrix { rows, cols, mat, row_keys, col_keys }
    }

    pub fn row_of(&self, s: &Shape) -> Option<usize> {
        self.row_keys.get(&s.canonical_key()).copied()
    }

    pub fn col_of(&self, s: &Shape) -> Option<usize> {
        self.col_keys.get(&s.canonical_key()).copied()
    }

    pub fn to_f64(&self) -> FMat {
        self.mat.to_f64()
    }

    pub fn max_abs_f64(&self) -> f64 {
        rat_to_f64(&self.mat.max_abs())
    }
}

/// All coefficient matrices of a moment matrix: `H_{Id_U}` per middle
/// index pattern and `H_tau` per non-trivial proper middle shape.
pub struct CoefficientMatrices {
    pub h_id: BTreeMap<IndexPattern, CoefficientMatrix>,
    pub h_mid: BTreeMap<IndexPattern, Vec<(Shape, CoefficientMatrix)>>,
}

pub fn build_coefficient_matrices(
    p: &ProblemParams,
    fam: &ShapeFamilies,
) -> Result<CoefficientMatrices> {
    let mut h_id = BTreeMap::new();
    let mut h_mid = BTreeMap::new();
    for pat in &fam.mid_patterns {
        let lefts = fam.left_of(pat).to_vec();
        let aut_u = rat_int(pattern_aut(pat) as i64);
        let mut h = CoefficientMatrix::new(lefts.clone(), lefts.clone());
        for (i, s) in lefts.iter().enumerate() {
            for (j, s2) in lefts.iter().enumerate() {
                let composed = s.compose(&s2.transpose())?;
                *h.mat.at_mut(i, j) = lambda(&composed, p)? / &aut_u;
            }
        }
        h_id.insert(pat.clone(), h);
        let mut taus = Vec::new();
        for tau in fam.middle_of(pat) {
            let mut h = CoefficientMatrix::new(lefts.clone(), lefts.clone());
            let denom = &aut_u * &aut_u;
            for (i, s) in lefts.iter().enumerate() {
                for (j, s2) in lefts.iter().enumerate() {
                    let composed = s.compose(tau)?.compose(&s2.transpose())?;
                    *h.mat.at_mut(i, j) = lambda(&composed, p)? / &denom;
                }
            }
            taus.push((tau.clone(), h));
        }
        h_mid.insert(pat.clone(), taus);
    }
    Ok(CoefficientMatrices { h_id, h_mid })
}

/// `H^{-gamma,gamma}` on the left shapes of `U_gamma`: entries
/// `H_{Id_V}(sigma o gamma, sigma' o gamma)` with the D_V overflow rule.
/// Entries are recomputed from the coefficient formula, which agrees with
/// the table lookup wherever the composition stays in the family.
pub fn build_h_offset(
    p: &ProblemParams,
    fam: &ShapeFamilies,
    gamma: &Shape,
) -> Result<CoefficientMatrix> {
    let u_pat = pattern_of(&gamma.u);
    let v_pat = pattern_of(&gamma.v);
    let aut_v = rat_int(pattern_aut(&v_pat) as i64);
    let lefts = fam.left_of(&u_pat).to_vec();
    let mut h = CoefficientMatrix::new(lefts.clone(), lefts.clone());
    for (i, s) in lefts.iter().enumerate() {
        for (j, s2) in lefts.iter().enumerate() {
            let sg = s.compose(gamma)?;
            let sg2 = s2.compose(gamma)?;
            if sg.nv() > p.d_v || sg2.nv() > p.d_v {
                continue;
            }
            let composed = sg.compose(&sg2.transpose())?;
            *h.mat.at_mut(i, j) = lambda(&composed, p)? / &aut_v;
        }
    }
    Ok(h)
}

/// Canonical `H'_gamma`: `H_{Id_{U_gamma}}` with entries zeroed wherever
/// the composition with gamma overflows D_V.
pub fn build_h_prime(
    p: &ProblemParams,
    h_id_u: &CoefficientMatrix,
    gamma: &Shape,
) -> Result<CoefficientMatrix> {
    let mut h = h_id_u.clone();
    for (i, s) in h_id_u.rows.iter().enumerate() {
        let over_i = s.compose(gamma)?.nv() > p.d_v;
        for (j, s2) in h_id_u.cols.iter().enumerate() {
            if over_i || s2.compose(gamma)?.nv() > p.d_v {
                *h.mat.at_mut(i, j) = BigRational::zero();
            }
        }
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// Charging quantities
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeRole {
    Middle,
    Gamma,
    Left,
}

fn even_interior(shape: &Shape) -> bool {
    let uv = shape.uv_union();
    (0..shape.nv() as u32).all(|i| uv.contains(&i) || shape.deg_vertex(i) % 2 == 0)
}

/// Middle-part charge `S(tau)` (zero under parity violation).
pub fn charge_middle(shape: &Shape, p: &ProblemParams) -> Result<SqrtRat> {
    match p.problem {
        Problem::Clique | Problem::Plds => {
            let n = rat_int(p.table.sizes[0] as i64);
            let kn = &p.planted_size / n;
            let mut v = rat_pow(&kn, shape.nv() as i64 - shape.u.vertex_set().len() as i64);
            if p.problem == Problem::Plds {
                let bias = rat_int(2) * &p.density - BigRational::one();
                v *= rat_pow(&bias, shape.edge_count() as i64);
            }
            Ok(SqrtRat::from_rational(v))
        }
        Problem::Tpca => {
            if !even_interior(shape) {
                return Ok(SqrtRat::zero());
            }
            let n = rat_int(p.table.sizes[0] as i64);
            let dn = &p.slack * &n;
            let total_label = shape.total_edge_label() as i64;
            let v = rat_pow(&p.slack, shape.nv() as i64 - shape.u.vertex_set().len() as i64)
                * rat_pow(&p.signal, total_label);
            Ok(SqrtRat::from_rational(v)
                .mul(&SqrtRat::half_pow(&dn, -(p.arity as i64) * total_label)))
        }
        Problem::Spca => {
            if !even_interior(shape) {
                return Ok(SqrtRat::zero());
            }
            let d = rat_int(p.table.sizes[0] as i64);
            let counts = shape.type_counts(2);
            let u_counts = count_types(shape, &shape.u.vertex_set());
            let uv = shape.uv_union();
            let mut dfact = BigRational::one();
            for i in 0..shape.nv() as u32 {
                if shape.vtypes[i as usize] == 1 && !uv.contains(&i) {
                    dfact *= double_factorial_odd(shape.deg_vertex(i) as i64 - 1);
                }
            }
            let total_label = shape.total_edge_label() as i64;
            let v = rat_pow(&(&p.planted_size / &d), counts[0] as i64 - u_counts[0] as i64)
                * rat_pow(&p.slack, counts[1] as i64 - u_counts[1] as i64)
                * dfact;
            let lam_over_k = &p.signal / &p.planted_size;
            Ok(SqrtRat::from_rational(v).mul(&SqrtRat::half_pow(&lam_over_k, total_label)))
        }
    }
}

/// Gamma charge `S(gamma)` with half-exponents on the index sizes.
pub fn charge_gamma(shape: &Shape, p: &ProblemParams) -> Result<SqrtRat> {
    let usz = shape.u.vertex_set().len() as i64;
    let vsz = shape.v.vertex_set().len() as i64;
    match p.problem {
        Problem::Clique | Problem::Plds => {
            let n = rat_int(p.table.sizes[0] as i64);
            let kn = &p.planted_size / n;
            let mut v = SqrtRat::half_pow(&kn, 2 * shape.nv() as i64 - usz - vsz);
            if p.problem == Problem::Plds {
                let bias = rat_int(2) * &p.density - BigRational::one();
                v = v.mul_rat(&rat_pow(&bias, shape.edge_count() as i64));
            }
            Ok(v)
        }
        Problem::Tpca => {
            if !even_interior(shape) {
                return Ok(SqrtRat::zero());
            }
            let n = rat_int(p.table.sizes[0] as i64);
            let dn = &p.slack * &n;
            let total_label = shape.total_edge_label() as i64;
            let v = SqrtRat::half_pow(&p.slack, 2 * shape.nv() as i64 - usz - vsz)
                .mul_rat(&rat_pow(&p.signal, total_label))
                .mul(&SqrtRat::half_pow(&dn, -(p.arity as i64) * total_label));
            Ok(v)
        }
        Problem::Spca => {
            if !even_interior(shape) {
                return Ok(SqrtRat::zero());
            }
            let d = rat_int(p.table.sizes[0] as i64);
            let counts = shape.type_counts(2);
            let u_counts = count_types(shape, &shape.u.vertex_set());
            let v_counts = count_types(shape, &shape.v.vertex_set());
            let uv = shape.uv_union();
            let mut dfact = BigRational::one();
            for i in 0..shape.nv() as u32 {
                if shape.vtypes[i as usize] == 1 && !uv.contains(&i) {
                    dfact *= double_factorial_odd(shape.deg_vertex(i) as i64 - 1);
                }
            }
            let total_label = shape.total_edge_label() as i64;
            let kd = &p.planted_size / &d;
            let v = SqrtRat::half_pow(
                &kd,
                2 * counts[0] as i64 - u_counts[0] as i64 - v_counts[0] as i64,
            )
            .mul(&SqrtRat::half_pow(
                &p.slack,
                2 * counts[1] as i64 - u_counts[1] as i64 - v_counts[1] as i64,
            ))
            .mul_rat(&dfact)
            .mul(&SqrtRat::half_pow(&(&p.signal / &p.planted_size), total_label));
            Ok(v)
        }
    }
}

/// Left charge `T(sigma)`: multiplicative root of the identity-block
/// coefficients (defined for plds/clique and tpca).
pub fn charge_left(shape: &Shape, p: &ProblemParams) -> Result<SqrtRat> {
    let vsz = shape.v.vertex_set().len() as i64;
    match p.problem {
        Problem::Clique | Problem::Plds => {
            let n = rat_int(p.table.sizes[0] as i64);
            let kn = &p.planted_size / n;
            let mut v = SqrtRat::half_pow(&kn, 2 * shape.nv() as i64 - vsz);
            if p.problem == Problem::Plds {
                let bias = rat_int(2) * &p.density - BigRational::one();
                v = v.mul_rat(&rat_pow(&bias, shape.edge_count() as i64));
            }
            Ok(v)
        }
        Problem::Tpca => {
            // Interior parity: even total degree away from V_sigma.
            let vset = shape.v.vertex_set();
            let ok = (0..shape.nv() as u32).all(|i| {
                vset.contains(&i)
                    || (shape.deg_vertex(i) + shape.u.deg_of(i) as u64) % 2 == 0
            });
            if !ok {
                return Ok(SqrtRat::zero());
            }
            let n = rat_int(p.table.sizes[0] as i64);
            let dn = &p.slack * &n;
            let total_label = shape.total_edge_label() as i64;
            let ud = shape.u.degree() as i64;
            let v = SqrtRat::half_pow(&p.slack, 2 * shape.nv() as i64 - vsz)
                .mul(&SqrtRat::half_pow(&dn, -ud - p.arity as i64 * total_label))
                .mul_rat(&rat_pow(&p.signal, total_label));
            Ok(v)
        }
        Problem::Spca => Err(Error::RoleMismatch(
            "left charge is not rank-one for the Wishart model".into(),
        )),
    }
}

/// Boundary-degree factor `R(tau)` for the Wishart model: the
/// discretization constant raised to the type-1 boundary degree.
pub fn charge_boundary(shape: &Shape, p: &ProblemParams, c_disc: f64) -> Result<f64> {
    if p.problem != Problem::Spca {
        return Err(Error::RoleMismatch("boundary charge is specific to sparse PCA".into()));
    }
    let mut boundary_deg = 0u64;
    for is in [&shape.u, &shape.v] {
        for piece in &is.pieces {
            if piece.ty == 1 {
                for &v in &piece.verts {
                    boundary_deg += shape.deg_vertex(v);
                }
            }
        }
    }
    Ok((c_disc * (p.d_e as f64).sqrt()).powf(boundary_deg as f64))
}

fn count_types(shape: &Shape, set: &std::collections::BTreeSet<u32>) -> Vec<usize> {
    let t_max = shape.vtypes.iter().copied().max().unwrap_or(0) + 1;
    let mut c = vec![0usize; t_max.max(2)];
    for &v in set {
        c[shape.vtypes[v as usize]] += 1;
    }
    c
}

// ---------------------------------------------------------------------------
// Bound functions
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundVariant {
    /// Single index type, +-1 entries, label-1 edges.
    Simplified,
    /// Hyperedges, several types, Gaussian entries.
    General,
}

#[derive(Clone, Debug)]
pub struct BoundParams {
    pub variant: BoundVariant,
    pub table: TypeTable,
    pub eps: f64,
    pub eps_prime: f64,
    pub d_v: usize,
    pub d_e: u32,
    pub arity: usize,
    pub c_disc: f64,
    pub q: u64,
    pub b_vertex: f64,
}

impl BoundParams {
    pub fn new(
        variant: BoundVariant,
        table: TypeTable,
        eps: f64,
        eps_prime: f64,
        d_v: usize,
        d_e: u32,
        arity: usize,
    ) -> Self {
        let n = table.n_max() as f64;
        let dv = d_v as f64;
        let q = match variant {
            BoundVariant::Simplified => {
                3 * (dv * n.ln() + (1.0 / eps).ln() / 3.0 + dv * 5f64.ln()
                    + 3.0 * dv * dv * 2f64.ln())
                    .ceil() as u64
            }
            BoundVariant::General => {
                (3.0 * dv * n.ln()
                    + (1.0 / eps).ln()
                    + (3.0 * dv).powi(arity as i32) * ((d_e + 1) as f64).ln()
                    + 3.0 * dv * 5f64.ln())
                .ceil() as u64
            }
        };
        let b_vertex = match variant {
            BoundVariant::Simplified => 6.0 * dv * (2.0 * std::f64::consts::E * q as f64).powf(0.25),
            BoundVariant::General => 6.0 * q as f64 * dv,
        };
        BoundParams { variant, table, eps, eps_prime, d_v, d_e, arity, c_disc: 2.0, q, b_vertex }
    }

    /// Per-edge factor; the Gaussian closed form in the general case.
    pub fn edge_factor(&self, label: u32) -> f64 {
        match self.variant {
            BoundVariant::Simplified => 1.0,
            BoundVariant::General => {
                let dv = self.d_v as f64;
                let de = self.d_e as f64;
                (400.0 * dv * dv * de * de * self.q as f64).powi(label as i32)
            }
        }
    }

    fn edges_factor(&self, shape: &Shape) -> f64 {
        shape
            .edges
            .iter()
            .map(|e| self.edge_factor(e.label).powi(e.mult as i32))
            .product()
    }

    fn set_diff_count(shape: &Shape, minus: &std::collections::BTreeSet<u32>) -> i32 {
        (0..shape.nv() as u32).filter(|v| !minus.contains(v)).count() as i32
    }

    /// Norm bound: `B_vertex^{|V\U| + |V\V|} * prod B_edge * n^{(w(V) + w(I) - w(S_min)) / 2}`
    /// (times `2e` in the general variant).
    pub fn norm_bound(&self, shape: &Shape) -> Result<f64> {
        if shape.is_trivial() {
            // Identity shapes act as the unit inside distance sums.
            return Ok(1.0);
        }
        let t_max = self.table.t_max();
        let s_min = minsep_excluding_multi(shape, &self.table, 14)?;
        let iso = high_multiplicity_interior(shape);
        let w = shape
            .vertex_weight(t_max)
            .add(&shape.weight_of(&iso, t_max))
            .sub(&s_min.weight);
        let base = self.b_vertex.powi(
            Self::set_diff_count(shape, &shape.u.vertex_set())
                + Self::set_diff_count(shape, &shape.v.vertex_set()),
        );
        let scale = match self.variant {
            BoundVariant::Simplified => 1.0,
            BoundVariant::General => 2.0 * std::f64::consts::E,
        };
        Ok(scale * base * self.edges_factor(shape) * w.n_pow_half_f64(&self.table))
    }

    /// Intersection growth bound `B(gamma)`; multiplicative under
    /// composition of left shapes.
    pub fn gamma_bound(&self, shape: &Shape) -> f64 {
        let t_max = self.table.t_max();
        let uset = shape.u.vertex_set();
        let mut w = Weight::zero(t_max);
        for v in 0..shape.nv() as u32 {
            if !uset.contains(&v) {
                w.counts[shape.vtypes[v as usize]] += 1;
            }
        }
        self.b_vertex.powi(
            Self::set_diff_count(shape, &uset)
                + Self::set_diff_count(shape, &shape.v.vertex_set()),
        ) * self.edges_factor(shape)
            * w.n_pow_half_f64(&self.table)
    }

    /// Pattern multiplicity bound `N(gamma) = (3 D_V)^{2|V\V| + |V\U|}`.
    pub fn multiplicity_bound(&self, shape: &Shape) -> f64 {
        let e = 2 * Self::set_diff_count(shape, &shape.v.vertex_set())
            + Self::set_diff_count(shape, &shape.u.vertex_set());
        (3.0 * self.d_v as f64).powi(e)
    }

    /// Decay factor `c(alpha)` as an exact rational (it is an integer
    /// multiple of `5 / eps'`).
    pub fn decay_factor(&self, shape: &Shape) -> BigRational {
        let t_max = self.table.t_max() as i64;
        let uset = shape.u.vertex_set();
        let vset = shape.v.vertex_set();
        let u_minus_v = uset.difference(&vset).count() as i64;
        let v_minus_u = vset.difference(&uset).count() as i64;
        let interior = (0..shape.nv() as u32)
            .filter(|v| !uset.contains(v) && !vset.contains(v))
            .count() as i64;
        let edges = shape.edge_count() as i64;
        let (base_a, base_b, edge_mult) = match self.variant {
            BoundVariant::Simplified => (rat_int(3 * self.d_v as i64), rat_int(2), 2i64),
            BoundVariant::General => (
                rat_int(3 * t_max * self.d_v as i64),
                rat_int(2 * t_max),
                self.arity as i64,
            ),
        };
        let eps_prime_inv = BigRational::new(20.into(), 1.into());
        debug_assert!((self.eps_prime - 0.05).abs() < 1e-12 || self.eps_prime > 0.0);
        let five_over_eps = if (self.eps_prime - 0.05).abs() < 1e-12 {
            rat_int(5) * eps_prime_inv
        } else {
            // Round 5 / eps' to a rational with denominator 10^6.
            let scaled = (5.0 / self.eps_prime * 1e6).round() as i64;
            BigRational::new(scaled.into(), 1_000_000.into())
        };
        five_over_eps
            * rat_pow(&base_a, u_minus_v + v_minus_u + edge_mult * edges)
            * rat_pow(&base_b, interior)
    }
}

// ---------------------------------------------------------------------------
// M^fact and M^orth
// ---------------------------------------------------------------------------

/// Graph matrix of a shape embedded into a global index list: rows range
/// over `global`, columns over the realizations of the shape's own V.
fn eval_embedded(
    shape: &Shape,
    x: &InputTensor,
    table: &TypeTable,
    global: &[MatrixIndex],
) -> Result<(RMat, Vec<MatrixIndex>)> {
    let m = eval_graph_matrix_i(shape, x, table)?;
    let mut out = RMat::zeros_rat(global.len(), m.col_indices.len());
    for (ri, row) in m.row_indices.iter().enumerate() {
        if let Ok(g) = global.binary_search(row) {
            for ci in 0..m.col_indices.len() {
                let v = *m.data.at(ri, ci);
                if v != 0 {
                    *out.at_mut(g, ci) = rat_int(v);
                }
            }
        }
    }
    Ok((out, m.col_indices))
}

/// `M^fact_tau(H) = sum_{sigma, sigma'} H(sigma, sigma') M_sigma M_tau M_sigma'^T`
/// over the global moment indices, exact for +-1 inputs.
pub fn eval_m_fact(
    tau: &Shape,
    h: &CoefficientMatrix,
    x: &InputTensor,
    table: &TypeTable,
    global: &[MatrixIndex],
) -> Result<RMat> {
    let n = global.len();
    let mut acc = RMat::zeros_rat(n, n);
    let m_tau = eval_graph_matrix_i(tau, x, table)?;
    let m_tau_r: RMat = Mat {
        rows: m_tau.data.rows,
        cols: m_tau.data.cols,
        data: m_tau.data.data.iter().map(|&v| rat_int(v)).collect(),
    };
    // Cache embedded left-shape evaluations by canonical key.
    let mut cache: BTreeMap<Vec<u64>, (RMat, Vec<MatrixIndex>)> = BTreeMap::new();
    let mut get = |s: &Shape| -> Result<(RMat, Vec<MatrixIndex>)> {
        let key = s.canonical_key();
        if let Some(v) = cache.get(&key) {
            return Ok(v.clone());
        }
        let v = eval_embedded(s, x, table, global)?;
        cache.insert(key, v.clone());
        Ok(v)
    };
    for (i, sigma) in h.rows.iter().enumerate() {
        for (j, sigma2) in h.cols.iter().enumerate() {
            let coeff = h.mat.at(i, j);
            if coeff.is_zero() {
                continue;
            }
            let (g1, c1) = get(sigma)?;
            let (g2, c2) = get(sigma2)?;
            if c1 != m_tau.row_indices || c2 != m_tau.col_indices {
                return Err(Error::RoleMismatch(
                    "left-shape boundary does not match the middle shape".into(),
                ));
            }
            // g1 * m_tau * g2^T, scaled.
            let t = g1.matmul(&m_tau_r).matmul(&g2.transpose());
            for r in 0..n {
                for c in 0..n {
                    let v = t.at(r, c);
                    if !v.is_zero() {
                        let cur = acc.at_mut(r, c);
                        *cur = &*cur + &(coeff * v);
                    }
                }
            }
        }
    }
    Ok(acc)
}

/// Number of ways to split the composition back into its three parts:
/// `|Aut(sigma o tau o sigma'^T)| / (|Aut sigma| |Aut tau| |Aut sigma'|)`.
pub fn decomposition_count(sigma: &Shape, tau: &Shape, sigma2t: &Shape) -> Result<u64> {
    let composed = sigma.compose(tau)?.compose(sigma2t)?;
    let num = composed.aut_size();
    let den = sigma.aut_size() * tau.aut_size() * sigma2t.aut_size();
    debug_assert_eq!(num % den, 0, "coset count must be integral");
    Ok(num / den)
}

/// `M^orth_tau(H) = sum H(sigma, sigma') |Decomp| M_{sigma o tau o sigma'^T}`.
pub fn eval_m_orth(
    tau: &Shape,
    h: &CoefficientMatrix,
    x: &InputTensor,
    table: &TypeTable,
    global: &[MatrixIndex],
) -> Result<RMat> {
    let n = global.len();
    let mut acc = RMat::zeros_rat(n, n);
    for (i, sigma) in h.rows.iter().enumerate() {
        for (j, sigma2) in h.cols.iter().enumerate() {
            let coeff = h.mat.at(i, j);
            if coeff.is_zero() {
                continue;
            }
            let s2t = sigma2.transpose();
            let composed = sigma.compose(tau)?.compose(&s2t)?;
            let counts = composed.type_counts(table.t_max());
            if counts.iter().enumerate().any(|(t, &c)| c as u64 > table.sizes[t]) {
                continue;
            }
            let mult = rat_int(decomposition_count(sigma, tau, &s2t)? as i64);
            let m = eval_graph_matrix_i(&composed, x, table)?;
            for (ri, row) in m.row_indices.iter().enumerate() {
                let gr = match global.binary_search(row) {
                    Ok(v) => v,
                    Err(_) => continue,
                };
                for (ci, col) in m.col_indices.iter().enumerate() {
                    let v = *m.data.at(ri, ci);
                    if v == 0 {
                        continue;
                    }
                    let gc = match global.binary_search(col) {
                        Ok(vv) => vv,
                        Err(_) => continue,
                    };
                    let cur = acc.at_mut(gr, gc);
                    *cur = &*cur + coeff * &mult * rat_int(v);
                }
            }
        }
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Conditions
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ConditionReport {
    pub condition: u8,
    pub subject: String,
    pub min_eigenvalue: f64,
    /// Max-abs entry of the tested matrix; the tolerance is relative to it.
    pub scale: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn report(condition: u8, subject: String, m: &FMat, rel_tol: f64) -> ConditionReport {
    let scale = m.max_abs().max(1e-300);
    let min_eigenvalue = m.min_eigenvalue();
    let tolerance = rel_tol * scale;
    ConditionReport {
        condition,
        subject,
        min_eigenvalue,
        scale,
        tolerance,
        pass: min_eigenvalue >= -tolerance,
    }
}

fn block2(a: &FMat, b: &FMat, c: &FMat, d: &FMat) -> FMat {
    let n = a.rows;
    let mut out = FMat::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            *out.at_mut(i, j) = *a.at(i, j);
            *out.at_mut(i, n + j) = *b.at(i, j);
            *out.at_mut(n + i, j) = *c.at(i, j);
            *out.at_mut(n + i, n + j) = *d.at(i, j);
        }
    }
    out
}

fn scaled(m: &FMat, s: f64) -> FMat {
    Mat { rows: m.rows, cols: m.cols, data: m.data.iter().map(|v| v * s).collect() }
}

fn sub(a: &FMat, b: &FMat) -> FMat {
    Mat {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect(),
    }
}

/// The three spectral conditions of the quantitative machinery, one
/// report row per subject.
pub fn check_conditions(
    p: &ProblemParams,
    fam: &ShapeFamilies,
    cm: &CoefficientMatrices,
    bounds: &BoundParams,
    rel_tol: f64,
) -> Result<Vec<ConditionReport>> {
    let mut out = Vec::new();
    // Condition 1: H_{Id_U} PSD.
    for (pat, h) in &cm.h_id {
        out.push(report(1, format!("U={}", pattern_label(pat)), &h.to_f64(), rel_tol));
    }
    // Condition 2: the 2x2 block with the c(tau)/B_norm(tau) scaling.
    for (pat, taus) in &cm.h_mid {
        let h_id = &cm.h_id[pat];
        let aut_u = pattern_aut(pat) as f64;
        for (k, (tau, h_tau)) in taus.iter().enumerate() {
            let c_tau = rat_to_f64(&bounds.decay_factor(tau));
            let bn = bounds.norm_bound(tau)?;
            let diag = scaled(&h_id.to_f64(), 1.0 / (aut_u * c_tau));
            let off = scaled(&h_tau.to_f64(), bn);
            let offt = off.transpose();
            let m = block2(&diag, &off, &offt, &diag);
            out.push(report(
                2,
                format!("U={} tau#{k}", pattern_label(pat)),
                &m,
                rel_tol,
            ));
        }
    }
    // Condition 3: c^2 N^2 B^2 H^{-gamma,gamma} <= H'_gamma.
    for gamma in &fam.gammas {
        let u_pat = pattern_of(&gamma.u);
        let v_pat = pattern_of(&gamma.v);
        if pattern_weight(&u_pat, p.table.t_max())
            .cmp_in(&pattern_weight(&v_pat, p.table.t_max()), &p.table)
            != std::cmp::Ordering::Greater
        {
            continue;
        }
        let h_id_u = &cm.h_id[&u_pat];
        let offset = build_h_offset(p, fam, gamma)?;
        let h_prime = build_h_prime(p, h_id_u, gamma)?;
        let c = rat_to_f64(&bounds.decay_factor(gamma));
        let ng = bounds.multiplicity_bound(gamma);
        let bg = bounds.gamma_bound(gamma);
        let factor = c * c * ng * ng * bg * bg;
        let m = sub(&h_prime.to_f64(), &scaled(&offset.to_f64(), factor));
        out.push(report(
            3,
            format!(
                "U={} V={} gamma[{}v{}e]",
                pattern_label(&u_pat),
                pattern_label(&v_pat),
                gamma.nv(),
                gamma.edge_count()
            ),
            &m,
            rel_tol,
        ));
    }
    Ok(out)
}

/// Per-shape charging diagnostics mirroring the sufficient inequalities:
/// `c(tau) B_norm(tau) S(tau) <= 1` and
/// `c(gamma)^2 N(gamma)^2 B(gamma)^2 S(gamma)^2 |Aut U| / |Aut V| <= 1`
/// (with the boundary factor R for the Wishart model).
#[derive(Clone, Debug)]
pub struct ChargeRow {
    pub kind: &'static str,
    pub subject: String,
    pub lhs: f64,
    pub pass: bool,
}

pub fn charging_report(
    p: &ProblemParams,
    fam: &ShapeFamilies,
    bounds: &BoundParams,
) -> Result<Vec<ChargeRow>> {
    let mut out = Vec::new();
    for (pat, taus) in &fam.middle {
        for (k, tau) in taus.iter().enumerate() {
            let c = rat_to_f64(&bounds.decay_factor(tau));
            let bn = bounds.norm_bound(tau)?;
            let mut s = charge_middle(tau, p)?.to_f64().abs();
            if p.problem == Problem::Spca {
                s *= charge_boundary(tau, p, bounds.c_disc)?;
            }
            let lhs = c * bn * s;
            out.push(ChargeRow {
                kind: "middle",
                subject: format!("U={} tau#{k}", pattern_label(pat)),
                lhs,
                pass: lhs <= 1.0,
            });
        }
    }
    for gamma in &fam.gammas {
        let u_pat = pattern_of(&gamma.u);
        let v_pat = pattern_of(&gamma.v);
        let t_max = p.table.t_max();
        if pattern_weight(&u_pat, t_max).cmp_in(&pattern_weight(&v_pat, t_max), &p.table)
            != std::cmp::Ordering::Greater
        {
            continue;
        }
        let c = rat_to_f64(&bounds.decay_factor(gamma));
        let ng = bounds.multiplicity_bound(gamma);
        let bg = bounds.gamma_bound(gamma);
        let mut s = charge_gamma(gamma, p)?.to_f64().abs();
        if p.problem == Problem::Spca {
            s *= charge_boundary(gamma, p, bounds.c_disc)?;
        }
        let aut_ratio = pattern_aut(&u_pat) as f64 / pattern_aut(&v_pat) as f64;
        let lhs = (c * ng * bg * s).powi(2) * aut_ratio;
        out.push(ChargeRow {
            kind: "gamma",
            subject: format!(
                "U={} V={} gamma[{}v{}e]",
                pattern_label(&u_pat),
                pattern_label(&v_pat),
                gamma.nv(),
                gamma.edge_count()
            ),
            lhs,
            pass: lhs <= 1.0,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Truncation distance
// ---------------------------------------------------------------------------

/// `d_tau(H, H') = sum |H'(s,s') - H(s,s')| B_norm(s) B_norm(tau) B_norm(s')`.
pub fn truncation_distance(
    h: &CoefficientMatrix,
    h_prime: &CoefficientMatrix,
    bounds: &BoundParams,
    b_norm_tau: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, s) in h.rows.iter().enumerate() {
        let bs = bounds.norm_bound(s)?;
        for (j, s2) in h.cols.iter().enumerate() {
            let diff = (h_prime.mat.at(i, j) - h.mat.at(i, j)).abs();
            if diff.is_zero() {
                continue;
            }
            total += rat_to_f64(&diff) * bs * b_norm_tau * bounds.norm_bound(s2)?;
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Positivity path-sum bound
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct PositivityBound {
    /// Per index pattern: `lambda_V = |Aut(V)| H_{Id_V}(Id_V, Id_V)`.
    pub lambda_v: BTreeMap<IndexPattern, f64>,
    /// Cross-weight couplings `W(U, V)` for `w(U) > w(V)`.
    pub couplings: Vec<(IndexPattern, IndexPattern, f64)>,
    /// Total path sums into each `U`: `sum_V sum_paths prod w(e)`.
    pub path_sums: BTreeMap<IndexPattern, f64>,
    /// Certified coefficient: `sum_U M^fact(H_{Id_U}) >= delta * Id_Sym`
    /// assuming the norm bounds hold.
    pub delta: f64,
}

/// Identity-ordered trivial left shape inside a family list.
fn trivial_identity_index(lefts: &[Shape]) -> Option<usize> {
    lefts.iter().position(|s| s.is_trivial() && s.u == s.v)
}

pub fn positivity_bound(
    p: &ProblemParams,
    fam: &ShapeFamilies,
    cm: &CoefficientMatrices,
    bounds: &BoundParams,
) -> Result<PositivityBound> {
    let t_max = p.table.t_max();
    let mut lambda_v: BTreeMap<IndexPattern, f64> = BTreeMap::new();
    for (pat, h) in &cm.h_id {
        let idx = trivial_identity_index(&h.rows)
            .ok_or_else(|| Error::InvalidShape("family misses the identity left shape".into()))?;
        lambda_v.insert(
            pat.clone(),
            pattern_aut(pat) as f64 * rat_to_f64(h.mat.at(idx, idx)),
        );
    }
    // W(U, V) over pairs with w(U) > w(V).
    let count_vec = |pat: &IndexPattern| -> Vec<i64> {
        pattern_weight(pat, t_max).counts
    };
    let mut couplings = Vec::new();
    for (v_pat, h) in &cm.h_id {
        for u_pat in &fam.mid_patterns {
            if pattern_weight(u_pat, t_max).cmp_in(&pattern_weight(v_pat, t_max), &p.table)
                != std::cmp::Ordering::Greater
            {
                continue;
            }
            let mut w = 0.0f64;
            for (i, s) in h.rows.iter().enumerate() {
                if count_vec(&pattern_of(&s.u)) != count_vec(u_pat) {
                    continue;
                }
                let bs = bounds.norm_bound(s)?;
                for (j, s2) in h.cols.iter().enumerate() {
                    if count_vec(&pattern_of(&s2.u)) == count_vec(v_pat) {
                        continue;
                    }
                    let hv = rat_to_f64(h.mat.at(i, j));
                    if hv == 0.0 {
                        continue;
                    }
                    w += bs * bounds.norm_bound(s2)? * hv.abs();
                }
            }
            w /= pattern_aut(u_pat) as f64;
            if w != 0.0 {
                couplings.push((u_pat.clone(), v_pat.clone(), w));
            }
        }
    }
    // Path sums on the DAG ordered by weight: paths go from lighter V to
    // heavier U; dynamic programming from heavy to light.
    let mut pats = fam.mid_patterns.clone();
    pats.sort_by(|a, b| {
        pattern_weight(a, t_max).cmp_in(&pattern_weight(b, t_max), &p.table)
    });
    // reach[v][u] = sum over paths v -> u of the product of edge weights.
    let mut reach: BTreeMap<(IndexPattern, IndexPattern), f64> = BTreeMap::new();
    for v in &pats {
        reach.insert((v.clone(), v.clone()), 1.0);
    }
    // Process sources in descending weight so edge targets are done.
    for v in pats.iter().rev() {
        let lam_v = lambda_v.get(v).copied().unwrap_or(0.0);
        for (u_pat, v_pat, w) in &couplings {
            if v_pat != v || lam_v <= 0.0 {
                continue;
            }
            let edge = 2.0 * w / lam_v;
            // Extend every path starting at u_pat.
            let targets: Vec<(IndexPattern, f64)> = reach
                .iter()
                .filter(|((src, _), _)| src == u_pat)
                .map(|((_, dst), val)| (dst.clone(), *val))
                .collect();
            for (dst, val) in targets {
                *reach.entry((v.clone(), dst)).or_insert(0.0) += edge * val;
            }
        }
    }
    let mut path_sums: BTreeMap<IndexPattern, f64> = BTreeMap::new();
    let mut delta_inv = 0.0f64;
    for u in &pats {
        let lam_u = lambda_v.get(u).copied().unwrap_or(0.0);
        if lam_u <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "lambda_V is not positive for {}",
                pattern_label(u)
            )));
        }
        let total: f64 = reach
            .iter()
            .filter(|((_, dst), _)| dst == u)
            .map(|(_, val)| *val)
            .sum();
        path_sums.insert(u.clone(), total);
        delta_inv = delta_inv.max(2.0 * total / lam_u);
    }
    let delta = if delta_inv > 0.0 { 1.0 / delta_inv } else { f64::INFINITY };
    Ok(PositivityBound { lambda_v, couplings, path_sums, delta })
}

/// Naive path enumeration over the coupling DAG; oracle for the
/// dynamic-programming path sums.
pub fn path_sums_naive(
    p: &ProblemParams,
    fam: &ShapeFamilies,
    lambda_v: &BTreeMap<IndexPattern, f64>,
    couplings: &[(IndexPattern, IndexPattern, f64)],
) -> BTreeMap<IndexPattern, f64> {
    let t_max = p.table.t_max();
    let mut out: BTreeMap<IndexPattern, f64> = BTreeMap::new();
    // Depth-first over all simple weight-increasing paths.
    fn walk(
        cur: &IndexPattern,
        weight: f64,
        lambda_v: &BTreeMap<IndexPattern, f64>,
        couplings: &[(IndexPattern, IndexPattern, f64)],
        out: &mut BTreeMap<IndexPattern, f64>,
    ) {
        *out.entry(cur.clone()).or_insert(0.0) += weight;
        for (u, v, w) in couplings {
            if v == cur {
                let lam = lambda_v.get(cur).copied().unwrap_or(0.0);
                if lam > 0.0 {
                    walk(u, weight * 2.0 * w / lam, lambda_v, couplings, out);
                }
            }
        }
    }
    let _ = t_max;
    for pat in &fam.mid_patterns {
        walk(pat, 1.0, lambda_v, couplings, &mut out);
    }
    out
}

// ---------------------------------------------------------------------------
// Summability checks
// ---------------------------------------------------------------------------

/// Exact `sum_{gamma in Gamma_{U,*}} 1 / (|Aut(U)| c(gamma))` per pattern.
pub fn gamma_decay_sums(
    fam: &ShapeFamilies,
    bounds: &BoundParams,
) -> BTreeMap<IndexPattern, BigRational> {
    let mut out = BTreeMap::new();
    for pat in &fam.mid_patterns {
        let aut = rat_int(pattern_aut(pat) as i64);
        let mut sum = BigRational::zero();
        for g in fam.gamma_u_star(pat) {
            sum += (&aut * bounds.decay_factor(g)).recip();
        }
        out.insert(pat.clone(), sum);
    }
    out
}

/// Exact tail sums over gammas with at least `|U| + m` vertices; must be
/// at most `eps' / (5 * 2^(m-1))`.
pub fn gamma_tail_sum(
    fam: &ShapeFamilies,
    bounds: &BoundParams,
    pat: &IndexPattern,
    m: usize,
) -> BigRational {
    let aut = rat_int(pattern_aut(pat) as i64);
    let u_size: usize = pat.iter().map(|x| x.2).sum();
    let mut sum = BigRational::zero();
    for g in fam.gamma_u_star(pat) {
        if g.nv() >= u_size + m {
            sum += (&aut * bounds.decay_factor(g)).recip();
        }
    }
    sum
}

/// Exact middle-shape sums `sum_{tau} 1 / (|Aut(U)| c(tau))`.
pub fn middle_decay_sums(
    fam: &ShapeFamilies,
    bounds: &BoundParams,
) -> BTreeMap<IndexPattern, BigRational> {
    let mut out = BTreeMap::new();
    for pat in &fam.mid_patterns {
        let aut = rat_int(pattern_aut(pat) as i64);
        let mut sum = BigRational::zero();
        for tau in fam.middle_of(pat) {
            sum += (&aut * bounds.decay_factor(tau)).recip();
        }
        out.insert(pat.clone(), sum);
    }
    out
}

/// Geometric decay sum `sum_U sum_{sigma, sigma' nontrivial in L_U}
/// (D_sos^{D_sos} n^{fe |V(sigma o sigma')|})^{-1}`.
pub fn geometric_decay_sum(p: &ProblemParams, fam: &ShapeFamilies, fe: f64) -> f64 {
    let n = p.table.n_max() as f64;
    let dsos = (p.d_sos.max(1)) as f64;
    let mut total = 0.0;
    for pat in &fam.mid_patterns {
        let lefts = fam.left_of(pat);
        for s in lefts {
            if s.is_trivial() {
                continue;
            }
            for s2 in lefts {
                if s2.is_trivial() {
                    continue;
                }
                let joined = s.nv() + s2.nv() - pattern_weight(pat, p.table.t_max())
                    .total_vertices() as usize;
                total += 1.0 / (dsos.powf(dsos) * n.powf(fe * joined as f64));
            }
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Rank-one reconstruction helpers (identity-block structure)
// ---------------------------------------------------------------------------

/// Splits `H_{Id_U}` by parity vector and checks the rank-one structure
/// `H_{Id_U, rho, rho} = v_rho v_rho^T / |Aut(U)|` with `v_rho = T(sigma)`.
/// Returns the max-abs reconstruction defect as an exact rational.
pub fn identity_block_reconstruction_defect(
    p: &ProblemParams,
    pat: &IndexPattern,
    h: &CoefficientMatrix,
) -> Result<BigRational> {
    let aut = rat_int(pattern_aut(pat) as i64);
    let mut defect = BigRational::zero();
    for (i, s) in h.rows.iter().enumerate() {
        let ti = charge_left(s, p)?;
        let rho_i = parity_vector(s);
        for (j, s2) in h.cols.iter().enumerate() {
            let tj = charge_left(s2, p)?;
            let rho_j = parity_vector(s2);
            let expect = if rho_i == rho_j {
                let prod = ti.mul(&tj);
                prod.to_rational().ok_or_else(|| {
                    Error::InvalidParam("matched parities must give a rational product".into())
                })? / &aut
            } else {
                BigRational::zero()
            };
            let d = (h.mat.at(i, j) - expect).abs();
            if d > defect {
                defect = d;
            }
        }
    }
    Ok(defect)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rat;
    use crate::shape::{Edge, IndexShape, Piece};

    fn plds_params(n: u64, k: i64, p: (i64, i64), d_sos: u32, d_v: usize) -> ProblemParams {
        ProblemParams {
            problem: Problem::Plds,
            table: TypeTable::single(n),
            planted_size: rat_int(k),
            density: rat(p.0, p.1),
            signal: BigRational::zero(),
            slack: BigRational::one(),
            arity: 2,
            d_sos,
            d_v,
            d_e: 1,
            normalize: false,
        }
    }

    #[test]
    fn q_and_vertex_base_values() {
        // D_V = 2, eps = 0.1, n = 100 -> q = 3 * ceil(21.514..) = 66.
        let b = BoundParams::new(
            BoundVariant::Simplified,
            TypeTable::single(100),
            0.1,
            0.05,
            2,
            1,
            2,
        );
        assert_eq!(b.q, 66);
        assert!((b.b_vertex - 12.0 * (2.0 * std::f64::consts::E * 66.0).powf(0.25)).abs() < 1e-9);
    }

    #[test]
    fn trivial_gamma_bounds_are_one() {
        let b = BoundParams::new(
            BoundVariant::Simplified,
            TypeTable::single(100),
            0.1,
            0.05,
            3,
            1,
            2,
        );
        let is = IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap();
        let id = Shape::new(vec![0], vec![], is.clone(), is, false).unwrap();
        assert_eq!(b.multiplicity_bound(&id), 1.0);
        assert_eq!(b.gamma_bound(&id), 1.0);
        assert_eq!(b.norm_bound(&id).unwrap(), 1.0);
    }

    #[test]
    fn norm_bound_of_single_edge() {
        // B_norm(edge) = B_vertex^2 sqrt(n): w(V) = 2, w(S) = 1, I empty.
        let b = BoundParams::new(
            BoundVariant::Simplified,
            TypeTable::single(64),
            0.05,
            0.05,
            4,
            1,
            2,
        );
        let e = Shape::new(
            vec![0, 0],
            vec![Edge { ends: vec![0, 1], label: 1, mult: 1 }],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![1] }]).unwrap(),
            false,
        )
        .unwrap();
        let expect = b.b_vertex * b.b_vertex * 8.0;
        assert!((b.norm_bound(&e).unwrap() - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn gamma_bound_is_multiplicative() {
        let b = BoundParams::new(
            BoundVariant::Simplified,
            TypeTable::single(100),
            0.1,
            0.05,
            4,
            1,
            2,
        );
        // gamma1: U = (u,w), V = (u) with edge u-w; gamma2: U = (u), V = ()
        let g1 = Shape::new(
            vec![0, 0],
            vec![Edge { ends: vec![0, 1], label: 1, mult: 1 }],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0, 1] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            false,
        )
        .unwrap();
        let g2 = Shape::new(
            vec![0],
            vec![],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::empty(),
            false,
        )
        .unwrap();
        let composed = g1.compose(&g2).unwrap();
        let lhs = b.gamma_bound(&composed);
        let rhs = b.gamma_bound(&g1) * b.gamma_bound(&g2);
        assert!((lhs - rhs).abs() < 1e-9 * rhs.max(1.0));
    }

    #[test]
    fn plds_identity_blocks_are_rank_one() {
        let p = plds_params(100, 5, (3, 5), 2, 3);
        let fam = ShapeFamilies::build(p.family_config(None)).unwrap();
        let cm = build_coefficient_matrices(&p, &fam).unwrap();
        for (pat, h) in &cm.h_id {
            let defect = identity_block_reconstruction_defect(&p, pat, h).unwrap();
            assert!(defect.is_zero(), "defect {defect} at {}", pattern_label(pat));
            assert!(h.mat.is_psd_exact(), "H_Id not PSD at {}", pattern_label(pat));
        }
        // And H_tau = S(tau)/|Aut(U)|^2 v v^T: check via exact PSD of the
        // simplified 2x2 charging block [[S H, H_tau],[H_tau^T, S H]].
        for (pat, taus) in &cm.h_mid {
            let h_id = &cm.h_id[pat];
            let aut = rat_int(pattern_aut(pat) as i64);
            for (tau, h_tau) in taus {
                let s = charge_middle(tau, &p).unwrap().to_rational().unwrap();
                let n = h_id.mat.rows;
                let mut block = RMat::zeros_rat(2 * n, 2 * n);
                for i in 0..n {
                    for j in 0..n {
                        let d = &s * h_id.mat.at(i, j) / &aut;
                        *block.at_mut(i, j) = d.clone();
                        *block.at_mut(n + i, n + j) = d;
                        *block.at_mut(i, n + j) = h_tau.mat.at(i, j).clone();
                        *block.at_mut(n + i, j) = h_tau.mat.at(j, i).clone();
                    }
                }
                assert!(block.is_psd_exact(), "charging block not PSD");
            }
        }
    }

    #[test]
    fn plds_offset_identity_exact() {
        // |Aut(V)|/|Aut(U)| * 1/S(gamma)^2 * H^{-gamma,gamma} = H'_gamma.
        let p = plds_params(100, 5, (3, 5), 2, 3);
        let fam = ShapeFamilies::build(p.family_config(None)).unwrap();
        let cm = build_coefficient_matrices(&p, &fam).unwrap();
        let mut checked = 0;
        for gamma in &fam.gammas {
            let u_pat = pattern_of(&gamma.u);
            let v_pat = pattern_of(&gamma.v);
            if pattern_weight(&u_pat, 1).cmp_in(&pattern_weight(&v_pat, 1), &p.table)
                != std::cmp::Ordering::Greater
            {
                continue;
            }
            let offset = build_h_offset(&p, &fam, gamma).unwrap();
            let h_prime = build_h_prime(&p, &cm.h_id[&u_pat], gamma).unwrap();
            let s2 = charge_gamma(gamma, &p)
                .unwrap()
                .mul(&charge_gamma(gamma, &p).unwrap())
                .to_rational()
                .unwrap();
            let ratio = rat_int(pattern_aut(&u_pat) as i64)
                / rat_int(pattern_aut(&v_pat) as i64)
                * &s2;
            for i in 0..offset.mat.rows {
                for j in 0..offset.mat.cols {
                    let lhs = offset.mat.at(i, j).clone();
                    let rhs = &ratio * h_prime.mat.at(i, j);
                    assert_eq!(lhs, rhs, "offset identity failed at ({i},{j})");
                }
            }
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn plds_lambda_v_and_positivity() {
        let p = plds_params(100, 5, (3, 5), 2, 3);
        let fam = ShapeFamilies::build(p.family_config(None)).unwrap();
        let cm = build_coefficient_matrices(&p, &fam).unwrap();
        let bounds = BoundParams::new(
            BoundVariant::Simplified,
            p.table.clone(),
            0.05,
            0.05,
            p.d_v,
            p.d_e,
            2,
        );
        let pb = positivity_bound(&p, &fam, &cm, &bounds).unwrap();
        // lambda_V = (k/n)^{|V|}.
        for (pat, lam) in &pb.lambda_v {
            let r: usize = pat.iter().map(|x| x.2).sum();
            let expect = 0.05f64.powi(r as i32);
            assert!((lam - expect).abs() < 1e-12, "{lam} vs {expect}");
        }
        assert!(pb.delta > 0.0);
        // DP path sums match naive enumeration.
        let naive = path_sums_naive(&p, &fam, &pb.lambda_v, &pb.couplings);
        for (pat, total) in &pb.path_sums {
            let n = naive.get(pat).copied().unwrap_or(0.0);
            assert!((total - n).abs() <= 1e-9 * total.max(1.0), "{total} vs {n}");
        }
        // Single-pattern case: with D_sos = 0 only the empty pattern
        // remains, so delta = lambda_empty / 2.
        let p0 = plds_params(100, 5, (3, 5), 0, 3);
        let fam0 = ShapeFamilies::build(p0.family_config(None)).unwrap();
        let cm0 = build_coefficient_matrices(&p0, &fam0).unwrap();
        let pb0 = positivity_bound(&p0, &fam0, &cm0, &bounds).unwrap();
        assert_eq!(pb0.path_sums.len(), 1);
        assert!((pb0.delta - 0.5).abs() < 1e-12);
    }

    #[test]
    fn summability_sums_small() {
        let p = plds_params(100, 5, (3, 5), 2, 4);
        let fam = ShapeFamilies::build(p.family_config(None)).unwrap();
        let bounds = BoundParams::new(
            BoundVariant::Simplified,
            p.table.clone(),
            0.05,
            0.05,
            p.d_v,
            p.d_e,
            2,
        );
        let eps_prime = rat(1, 20);
        for (pat, sum) in gamma_decay_sums(&fam, &bounds) {
            assert!(sum < eps_prime, "gamma sum too large at {}", pattern_label(&pat));
        }
        for (pat, sum) in middle_decay_sums(&fam, &bounds) {
            assert!(sum < eps_prime, "middle sum too large at {}", pattern_label(&pat));
        }
        // Refined tail bound eps'/(5 * 2^(m-1)).
        for pat in &fam.mid_patterns {
            let u_size: usize = pat.iter().map(|x| x.2).sum();
            for m in 1..=3usize {
                let tail = gamma_tail_sum(&fam, &bounds, pat, m);
                let cap = rat(1, 20) / rat_int(5) / rat_int(1 << (m - 1));
                assert!(tail <= cap, "tail bound failed at m={m} u={u_size}");
            }
        }
    }
}
