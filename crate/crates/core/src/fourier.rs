//! Fourier characters over +-1 and Gaussian inputs, Hermite tables,
//! evaluation of ribbon and graph matrices on concrete inputs, inner
//! products, and Monte-Carlo norm estimation.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::Error;
use crate::matrix::{spectral_norm_sparse, Mat};
use crate::rng::CounterRng;
use crate::scalar::{rat_int, rat_to_f64};
use crate::shape::{CPiece, IndexShape, MatrixIndex, Ribbon, Shape, TypeTable};
use crate::Result;

// ---------------------------------------------------------------------------
// Hermite polynomials
// ---------------------------------------------------------------------------

/// Unnormalized Hermite polynomials `h_0 = 1, h_1 = x, h_{j+1} = x h_j - j h_{j-1}`
/// with exact rational coefficients, plus the orthonormalized and
/// positive-coefficient variants derived from them.
#[derive(Clone, Debug)]
pub struct HermiteTable {
    /// `coeffs[j][i]` is the coefficient of `x^i` in `h_j`.
    pub coeffs: Vec<Vec<BigRational>>,
}

impl HermiteTable {
    pub fn new(max_degree: usize) -> Self {
        let mut coeffs: Vec<Vec<BigRational>> = vec![vec![BigRational::one()]];
        if max_degree >= 1 {
            coeffs.push(vec![BigRational::zero(), BigRational::one()]);
        }
        for j in 1..max_degree {
            let mut next = vec![BigRational::zero(); j + 2];
            for (i, c) in coeffs[j].iter().enumerate() {
                next[i + 1] += c;
            }
            for (i, c) in coeffs[j - 1].iter().enumerate() {
                next[i] -= BigRational::from_integer(j.into()) * c;
            }
            coeffs.push(next);
        }
        HermiteTable { coeffs }
    }

    pub fn max_degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval_unnorm(&self, j: usize, x: f64) -> f64 {
        poly_eval(&self.coeffs[j], x, false)
    }

    /// `h_j / sqrt(j!)`, the orthonormal basis under the standard Gaussian.
    pub fn eval_orthonormal(&self, j: usize, x: f64) -> f64 {
        self.eval_unnorm(j, x) / fact_f64(j).sqrt()
    }

    /// `h^+_j`: all coefficients made positive (orthonormal scaling).
    pub fn eval_plus_orthonormal(&self, j: usize, x: f64) -> f64 {
        poly_eval(&self.coeffs[j], x, true) / fact_f64(j).sqrt()
    }

    /// Exact linearization in the unnormalized basis:
    /// `prod_i h_{labels[i]} = sum_k d_k h_k`.
    pub fn product_linearize_unnorm(&self, labels: &[u32]) -> Vec<BigRational> {
        // Multiply out in the monomial basis.
        let mut poly = vec![BigRational::one()];
        for &l in labels {
            poly = poly_mul(&poly, &self.coeffs[l as usize]);
        }
        monomials_to_hermite(&poly)
    }

    /// Linearization in the orthonormal basis together with the sum of
    /// absolute coefficients (to compare against the stated bound).
    pub fn product_linearize_orthonormal(&self, labels: &[u32]) -> (Vec<f64>, f64) {
        let d = self.product_linearize_unnorm(labels);
        let denom: f64 = labels.iter().map(|&l| fact_f64(l as usize)).product::<f64>().sqrt();
        let cs: Vec<f64> = d
            .iter()
            .enumerate()
            .map(|(k, dk)| rat_to_f64(dk) * fact_f64(k).sqrt() / denom)
            .collect();
        let abs_sum = cs.iter().map(|c| c.abs()).sum();
        (cs, abs_sum)
    }

    /// Gauss quadrature nodes and Christoffel weights for the standard
    /// Gaussian, exact for polynomials of degree `2 * points - 1`.
    pub fn gauss_quadrature(&self, points: usize) -> (Vec<f64>, Vec<f64>) {
        assert!(points >= 1);
        let mut jacobi = Mat::<f64>::zeros(points, points);
        for k in 1..points {
            let b = (k as f64).sqrt();
            *jacobi.at_mut(k - 1, k) = b;
            *jacobi.at_mut(k, k - 1) = b;
        }
        let nodes = jacobi.sym_eigenvalues();
        let ht =
            if self.max_degree() + 1 >= points { self.clone() } else { HermiteTable::new(points) };
        let weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let s: f64 = (0..points).map(|k| ht.eval_orthonormal(k, x).powi(2)).sum();
                1.0 / s
            })
            .collect();
        (nodes, weights)
    }
}

fn poly_eval(coeffs: &[BigRational], x: f64, abs: bool) -> f64 {
    let mut acc = 0.0;
    for c in coeffs.iter().rev() {
        let v = rat_to_f64(c);
        acc = acc * x + if abs { v.abs() } else { v };
    }
    acc
}

fn poly_mul(a: &[BigRational], b: &[BigRational]) -> Vec<BigRational> {
    let mut out = vec![BigRational::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Re-expand a polynomial (monomial coefficients) over the unnormalized
/// Hermite basis using `x * h_j = h_{j+1} + j * h_{j-1}`.
fn monomials_to_hermite(poly: &[BigRational]) -> Vec<BigRational> {
    let deg = poly.len() - 1;
    let mut out = vec![BigRational::zero(); deg + 1];
    // Hermite representation of x^k, built iteratively.
    let mut xk = vec![BigRational::one()]; // x^0 = h_0
    for (k, c) in poly.iter().enumerate() {
        if !c.is_zero() {
            for (j, a) in xk.iter().enumerate() {
                out[j] += c * a;
            }
        }
        if k < deg {
            let mut next = vec![BigRational::zero(); xk.len() + 1];
            for (j, a) in xk.iter().enumerate() {
                next[j + 1] += a;
                if j > 0 {
                    next[j - 1] += BigRational::from_integer(j.into()) * a;
                }
            }
            xk = next;
        }
    }
    out
}

pub fn fact_f64(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product::<f64>().max(1.0)
}

// ---------------------------------------------------------------------------
// Input tensors
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dist {
    Rademacher,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HermiteBasis {
    Unnormalized,
    Orthonormal,
}

/// Concrete input: entries indexed by ordered tuples of typed indices.
#[derive(Clone, Debug)]
pub struct InputTensor {
    pub dist: Dist,
    pub basis: HermiteBasis,
    /// Type of each tuple slot, sorted when `ordered` is false.
    pub slot_types: Vec<usize>,
    pub dims: Vec<u64>,
    pub ordered: bool,
    data_i: Vec<i64>,
    data_f: Vec<f64>,
    hermite: HermiteTable,
}

impl InputTensor {
    fn cell_count(dims: &[u64]) -> usize {
        dims.iter().map(|&d| d as usize).product()
    }

    pub fn constant_pm1(table: &TypeTable, slot_types: Vec<usize>, ordered: bool, v: i64) -> Self {
        let dims: Vec<u64> = slot_types.iter().map(|&t| table.sizes[t]).collect();
        let n = Self::cell_count(&dims);
        InputTensor {
            dist: Dist::Rademacher,
            basis: HermiteBasis::Orthonormal,
            slot_types,
            dims,
            ordered,
            data_i: vec![v; n],
            data_f: vec![],
            hermite: HermiteTable::new(1),
        }
    }

    pub fn random(
        table: &TypeTable,
        slot_types: Vec<usize>,
        ordered: bool,
        dist: Dist,
        basis: HermiteBasis,
        max_label: usize,
        seed: u64,
    ) -> Self {
        let dims: Vec<u64> = slot_types.iter().map(|&t| table.sizes[t]).collect();
        let n = Self::cell_count(&dims);
        let mut rng = CounterRng::new(seed);
        let (data_i, data_f) = match dist {
            Dist::Rademacher => ((0..n).map(|_| rng.rademacher()).collect(), vec![]),
            Dist::Gaussian => (vec![], (0..n).map(|_| rng.gaussian()).collect()),
        };
        InputTensor {
            dist,
            basis,
            slot_types,
            dims,
            ordered,
            data_i,
            data_f,
            hermite: HermiteTable::new((max_label * 64).max(8)),
        }
    }

    /// Overwrite entries from a bit mask over the canonical cell list
    /// (cells with strictly increasing values per type, i.e. those a
    /// proper ribbon can reference). Used for exact +-1 enumeration.
    pub fn set_pm1_mask(&mut self, cells: &[usize], mask: u64) {
        for (bit, &cell) in cells.iter().enumerate() {
            self.data_i[cell] = if mask & (1 << bit) != 0 { -1 } else { 1 };
        }
    }

    /// Linear ids of the canonical (sorted, distinct per type) cells.
    pub fn canonical_cells(&self) -> Vec<usize> {
        let k = self.dims.len();
        let mut out = Vec::new();
        let mut tuple: Vec<u64> = vec![0; k];
        'outer: loop {
            let mut ok = true;
            for i in 1..k {
                // Within a type run, require strictly increasing values.
                if self.slot_types[i] == self.slot_types[i - 1] && tuple[i] <= tuple[i - 1] {
                    ok = false;
                    break;
                }
            }
            if ok || self.ordered {
                // For ordered tensors every distinct-per-type tuple counts.
                let distinct = {
                    let mut seen: BTreeMap<(usize, u64), ()> = BTreeMap::new();
                    (0..k).all(|i| seen.insert((self.slot_types[i], tuple[i]), ()).is_none())
                };
                if distinct {
                    out.push(self.linear_id(&tuple));
                }
            }
            for i in (0..k).rev() {
                tuple[i] += 1;
                if tuple[i] < self.dims[i] {
                    continue 'outer;
                }
                tuple[i] = 0;
            }
            break;
        }
        out
    }

    fn linear_id(&self, vals: &[u64]) -> usize {
        let mut id = 0usize;
        for (i, &v) in vals.iter().enumerate() {
            id = id * self.dims[i] as usize + v as usize;
        }
        id
    }

    /// Raw entry for a concrete typed tuple (normalized when unordered).
    fn cell_of(&self, slots: &[(usize, u64)]) -> Result<usize> {
        let mut s: Vec<(usize, u64)> = slots.to_vec();
        if !self.ordered {
            s.sort_unstable();
        }
        if s.len() != self.slot_types.len()
            || s.iter().zip(&self.slot_types).any(|(&(t, _), &st)| t != st)
        {
            return Err(Error::InvalidParam("edge type pattern does not match input".into()));
        }
        let vals: Vec<u64> = s.iter().map(|&(_, v)| v).collect();
        if vals.iter().zip(&self.dims).any(|(&v, &d)| v >= d) {
            return Err(Error::UniverseTooSmall("edge index outside universe".into()));
        }
        Ok(self.linear_id(&vals))
    }

    pub fn entry_i(&self, slots: &[(usize, u64)]) -> Result<i64> {
        Ok(self.data_i[self.cell_of(slots)?])
    }

    pub fn entry_f(&self, slots: &[(usize, u64)]) -> Result<f64> {
        Ok(match self.dist {
            Dist::Rademacher => self.data_i[self.cell_of(slots)?] as f64,
            Dist::Gaussian => self.data_f[self.cell_of(slots)?],
        })
    }

    /// `h_label(x_e)^mult` for one concrete edge.
    pub fn char_edge_i(&self, slots: &[(usize, u64)], label: u32, mult: u32) -> Result<i64> {
        if self.dist != Dist::Rademacher {
            return Err(Error::InvalidParam("integer characters need +-1 input".into()));
        }
        if label > 1 {
            return Err(Error::InvalidParam("labels above 1 are not in the +-1 basis".into()));
        }
        if label == 0 {
            return Ok(1);
        }
        let x = self.entry_i(slots)?;
        Ok(if (label * mult) % 2 == 0 { 1 } else { x })
    }

    pub fn char_edge_f(&self, slots: &[(usize, u64)], label: u32, mult: u32) -> Result<f64> {
        match self.dist {
            Dist::Rademacher => self.char_edge_i(slots, label, mult).map(|v| v as f64),
            Dist::Gaussian => {
                let x = self.entry_f(slots)?;
                let h = match self.basis {
                    HermiteBasis::Unnormalized => self.hermite.eval_unnorm(label as usize, x),
                    HermiteBasis::Orthonormal => self.hermite.eval_orthonormal(label as usize, x),
                };
                Ok(h.powi(mult as i32))
            }
        }
    }
}

/// Fourier character of an edge multiset on a ribbon's concrete vertices.
pub fn fourier_character_f(ribbon: &Ribbon, x: &InputTensor) -> Result<f64> {
    let mut acc = 1.0f64;
    for e in &ribbon.edges {
        let slots: Vec<(usize, u64)> =
            e.ends.iter().map(|&i| ribbon.verts[i as usize]).collect();
        acc *= x.char_edge_f(&slots, e.label, e.mult)?;
    }
    Ok(acc)
}

pub fn fourier_character_i(ribbon: &Ribbon, x: &InputTensor) -> Result<i64> {
    let mut acc = 1i64;
    for e in &ribbon.edges {
        let slots: Vec<(usize, u64)> =
            e.ends.iter().map(|&i| ribbon.verts[i as usize]).collect();
        acc *= x.char_edge_i(&slots, e.label, e.mult)?;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Evaluated matrices
// ---------------------------------------------------------------------------

/// Dense matrix indexed by concrete matrix indices.
#[derive(Clone, Debug)]
pub struct EvaluatedMatrix<T> {
    pub row_indices: Vec<MatrixIndex>,
    pub col_indices: Vec<MatrixIndex>,
    pub data: Mat<T>,
}

pub type NormTriplets = (usize, usize, Vec<(usize, usize, f64)>);

impl<T: Clone> EvaluatedMatrix<T> {
    pub fn row_of(&self, idx: &MatrixIndex) -> Option<usize> {
        self.row_indices.binary_search(idx).ok()
    }

    pub fn col_of(&self, idx: &MatrixIndex) -> Option<usize> {
        self.col_indices.binary_search(idx).ok()
    }
}

/// All concrete matrix indices realizing an index-shape pattern: per
/// piece an injective tuple, pieces of equal type disjoint.
pub fn matrix_indices_for(pattern: &IndexShape, table: &TypeTable) -> Vec<MatrixIndex> {
    fn rec(
        pieces: &[(usize, u32, usize)],
        i: usize,
        table: &TypeTable,
        used: &mut Vec<Vec<u64>>,
        cur: &mut Vec<CPiece>,
        out: &mut Vec<MatrixIndex>,
    ) {
        if i == pieces.len() {
            out.push(MatrixIndex::new(cur.clone()));
            return;
        }
        let (ty, power, len) = pieces[i];
        let n = table.sizes[ty];
        let mut tuple: Vec<u64> = Vec::with_capacity(len);
        fn fill(
            n: u64,
            len: usize,
            ty: usize,
            power: u32,
            pieces: &[(usize, u32, usize)],
            i: usize,
            table: &TypeTable,
            used: &mut Vec<Vec<u64>>,
            tuple: &mut Vec<u64>,
            cur: &mut Vec<CPiece>,
            out: &mut Vec<MatrixIndex>,
        ) {
            if tuple.len() == len {
                cur.push(CPiece { ty, power, vals: tuple.clone() });
                for &v in tuple.iter() {
                    used[ty].push(v);
                }
                rec(pieces, i + 1, table, used, cur, out);
                for _ in 0..len {
                    used[ty].pop();
                }
                cur.pop();
                return;
            }
            for v in 0..n {
                if tuple.contains(&v) || used[ty].contains(&v) {
                    continue;
                }
                tuple.push(v);
                fill(n, len, ty, power, pieces, i, table, used, tuple, cur, out);
                tuple.pop();
            }
        }
        fill(n, len, ty, power, pieces, i, table, used, &mut tuple, cur, out);
    }
    let pieces: Vec<(usize, u32, usize)> =
        pattern.pieces.iter().map(|p| (p.ty, p.power, p.verts.len())).collect();
    let mut out = Vec::new();
    rec(
        &pieces,
        0,
        table,
        &mut vec![vec![]; table.t_max()],
        &mut Vec::new(),
        &mut out,
    );
    out.sort();
    out.dedup();
    out
}

/// Single-ribbon matrix over the full index lists of its two patterns.
pub fn eval_ribbon_matrix_f(
    ribbon: &Ribbon,
    x: &InputTensor,
    table: &TypeTable,
) -> Result<EvaluatedMatrix<f64>> {
    let shape = ribbon.to_shape();
    let rows = matrix_indices_for(&shape.u, table);
    let cols = matrix_indices_for(&shape.v, table);
    let mut data = Mat::<f64>::zeros(rows.len(), cols.len());
    let chi = fourier_character_f(ribbon, x)?;
    let r = rows
        .binary_search(&ribbon.a)
        .map_err(|_| Error::UniverseTooSmall("ribbon row index outside universe".into()))?;
    let c = cols
        .binary_search(&ribbon.b)
        .map_err(|_| Error::UniverseTooSmall("ribbon col index outside universe".into()))?;
    *data.at_mut(r, c) = chi;
    Ok(EvaluatedMatrix { row_indices: rows, col_indices: cols, data })
}

fn injective_assignments(shape: &Shape, table: &TypeTable, mut f: impl FnMut(&[u64])) {
    let n = shape.nv();
    let mut assign: Vec<u64> = vec![0; n];
    let mut used: Vec<Vec<u64>> = vec![vec![]; table.t_max()];
    fn rec(
        shape: &Shape,
        table: &TypeTable,
        v: usize,
        assign: &mut Vec<u64>,
        used: &mut Vec<Vec<u64>>,
        f: &mut impl FnMut(&[u64]),
    ) {
        if v == shape.nv() {
            f(assign);
            return;
        }
        let t = shape.vtypes[v];
        for val in 0..table.sizes[t] {
            if used[t].contains(&val) {
                continue;
            }
            assign[v] = val;
            used[t].push(val);
            rec(shape, table, v + 1, assign, used, f);
            used[t].pop();
        }
    }
    rec(shape, table, 0, &mut assign, &mut used, &mut f);
}

fn mk_matrix_index(is: &IndexShape, assign: &[u64]) -> MatrixIndex {
    MatrixIndex::new(
        is.pieces
            .iter()
            .map(|p| CPiece {
                ty: p.ty,
                power: p.power,
                vals: p.verts.iter().map(|&v| assign[v as usize]).collect(),
            })
            .collect(),
    )
}

/// Graph matrix: sum over all injective embeddings of the shape. Exact
/// integer entries for +-1 inputs.
pub fn eval_graph_matrix_i(
    shape: &Shape,
    x: &InputTensor,
    table: &TypeTable,
) -> Result<EvaluatedMatrix<i64>> {
    check_universe(shape, table)?;
    let rows = matrix_indices_for(&shape.u, table);
    let cols = matrix_indices_for(&shape.v, table);
    let mut data = Mat::<i64>::filled(rows.len(), cols.len(), 0i64);
    let mut err: Option<Error> = None;
    injective_assignments(shape, table, |assign| {
        if err.is_some() {
            return;
        }
        let mut chi = 1i64;
        for e in &shape.edges {
            let slots: Vec<(usize, u64)> = e
                .ends
                .iter()
                .map(|&v| (shape.vtypes[v as usize], assign[v as usize]))
                .collect();
            match x.char_edge_i(&slots, e.label, e.mult) {
                Ok(c) => chi *= c,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            }
            if chi == 0 {
                break;
            }
        }
        let r = rows.binary_search(&mk_matrix_index(&shape.u, assign)).unwrap();
        let c = cols.binary_search(&mk_matrix_index(&shape.v, assign)).unwrap();
        data.data[r * cols.len() + c] += chi;
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(EvaluatedMatrix { row_indices: rows, col_indices: cols, data })
}

pub fn eval_graph_matrix_f(
    shape: &Shape,
    x: &InputTensor,
    table: &TypeTable,
) -> Result<EvaluatedMatrix<f64>> {
    check_universe(shape, table)?;
    let rows = matrix_indices_for(&shape.u, table);
    let cols = matrix_indices_for(&shape.v, table);
    let mut data = Mat::<f64>::zeros(rows.len(), cols.len());
    let mut err: Option<Error> = None;
    injective_assignments(shape, table, |assign| {
        if err.is_some() {
            return;
        }
        let mut chi = 1f64;
        for e in &shape.edges {
            let slots: Vec<(usize, u64)> = e
                .ends
                .iter()
                .map(|&v| (shape.vtypes[v as usize], assign[v as usize]))
                .collect();
            match x.char_edge_f(&slots, e.label, e.mult) {
                Ok(c) => chi *= c,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            }
        }
        let r = rows.binary_search(&mk_matrix_index(&shape.u, assign)).unwrap();
        let c = cols.binary_search(&mk_matrix_index(&shape.v, assign)).unwrap();
        data.data[r * cols.len() + c] += chi;
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(EvaluatedMatrix { row_indices: rows, col_indices: cols, data })
}

fn check_universe(shape: &Shape, table: &TypeTable) -> Result<()> {
    let counts = shape.type_counts(table.t_max());
    for (t, &c) in counts.iter().enumerate() {
        if c as u64 > table.sizes[t] {
            return Err(Error::UniverseTooSmall(format!(
                "shape needs {c} distinct type-{t} indices, universe has {}",
                table.sizes[t]
            )));
        }
    }
    Ok(())
}

/// Sparse evaluation for norm estimation: row/col ids are mixed-radix
/// ranks of the index tuples, so nothing dense is materialized.
pub fn eval_graph_matrix_coo(
    shape: &Shape,
    x: &InputTensor,
    table: &TypeTable,
) -> Result<NormTriplets> {
    check_universe(shape, table)?;
    let rank_dim = |is: &IndexShape| -> usize {
        is.pieces
            .iter()
            .map(|p| (table.sizes[p.ty] as usize).pow(p.verts.len() as u32))
            .product::<usize>()
            .max(1)
    };
    let rank = |is: &IndexShape, assign: &[u64]| -> usize {
        let mut id = 0usize;
        for p in &is.pieces {
            for &v in &p.verts {
                id = id * table.sizes[p.ty] as usize + assign[v as usize] as usize;
            }
        }
        id
    };
    let rdim = rank_dim(&shape.u);
    let cdim = rank_dim(&shape.v);
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut err: Option<Error> = None;
    injective_assignments(shape, table, |assign| {
        if err.is_some() {
            return;
        }
        let mut chi = 1f64;
        for e in &shape.edges {
            let slots: Vec<(usize, u64)> = e
                .ends
                .iter()
                .map(|&v| (shape.vtypes[v as usize], assign[v as usize]))
                .collect();
            match x.char_edge_f(&slots, e.label, e.mult) {
                Ok(c) => chi *= c,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            }
        }
        *acc.entry((rank(&shape.u, assign), rank(&shape.v, assign))).or_insert(0.0) += chi;
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok((rdim, cdim, acc.into_iter().map(|((r, c), v)| (r, c, v)).collect()))
}

// ---------------------------------------------------------------------------
// Inner products
// ---------------------------------------------------------------------------

/// Exact `E[tr(M_{R1} M_{R2}^T)]` over all +-1 inputs of the universe.
/// Only feasible for small bit counts; errors beyond `max_bits`.
pub fn inner_product_ribbons_exact(
    r1: &Ribbon,
    r2: &Ribbon,
    x_template: &InputTensor,
    max_bits: usize,
) -> Result<BigRational> {
    if r1.a != r2.a || r1.b != r2.b {
        // Different support: every term in the trace vanishes.
        if r1.a.matches_same_dims(&r2.a) && r1.b.matches_same_dims(&r2.b) {
            // fall through to the expectation, which is still well-defined
        } else {
            return Ok(BigRational::zero());
        }
    }
    let mut x = x_template.clone();
    let cells = x.canonical_cells();
    if cells.len() > max_bits {
        return Err(Error::BruteForceCap(format!(
            "{} input bits exceeds exact-enumeration cap {max_bits}",
            cells.len()
        )));
    }
    let mut total = BigRational::zero();
    for mask in 0u64..(1u64 << cells.len()) {
        x.set_pm1_mask(&cells, mask);
        // tr(M1 M2^T) has a single potentially nonzero term.
        if r1.a == r2.a && r1.b == r2.b {
            let c1 = fourier_character_i(r1, &x)?;
            let c2 = fourier_character_i(r2, &x)?;
            total += rat_int(c1 * c2);
        }
    }
    Ok(total / rat_int(1i64 << cells.len()))
}

impl MatrixIndex {
    fn matches_same_dims(&self, other: &MatrixIndex) -> bool {
        self.pieces.len() == other.pieces.len()
            && self
                .pieces
                .iter()
                .zip(&other.pieces)
                .all(|(a, b)| a.ty == b.ty && a.power == b.power && a.vals.len() == b.vals.len())
    }
}

/// Monte-Carlo `<M_alpha, M_beta>` with a seeded sampler; returns
/// (estimate, standard error).
pub fn inner_product_shapes_mc(
    a: &Shape,
    b: &Shape,
    table: &TypeTable,
    dist: Dist,
    basis: HermiteBasis,
    slot_types: Vec<usize>,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    let max_label =
        a.edges.iter().chain(&b.edges).map(|e| e.label).max().unwrap_or(1) as usize;
    for t in 0..trials {
        let x = InputTensor::random(
            table,
            slot_types.clone(),
            a.ordered_edges,
            dist,
            basis,
            max_label,
            crate::rng::CounterRng::derive(seed, t as u64).next_u64(),
        );
        let ma = eval_graph_matrix_f(a, &x, table)?;
        let mb = eval_graph_matrix_f(b, &x, table)?;
        if ma.row_indices != mb.row_indices || ma.col_indices != mb.col_indices {
            return Err(Error::InvalidParam("shapes have different matrix dimensions".into()));
        }
        let tr: f64 = ma.data.data.iter().zip(&mb.data.data).map(|(x, y)| x * y).sum();
        sum += tr;
        sumsq += tr * tr;
    }
    let mean = sum / trials as f64;
    let var = (sumsq / trials as f64 - mean * mean).max(0.0);
    Ok((mean, (var / trials as f64).sqrt()))
}

// ---------------------------------------------------------------------------
// Norm estimation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct NormEstimate {
    pub per_trial: Vec<f64>,
    pub max: f64,
    pub mean: f64,
    /// Universe size per type actually used (may be reduced to keep the
    /// embedding count within budget).
    pub sizes_used: Vec<u64>,
}

/// Per-trial largest singular value of the evaluated graph matrix on
/// fresh random input; deterministic under a fixed seed. The universe is
/// shrunk per shape so the embedding count stays within `embed_budget`.
pub fn estimate_norm(
    shape: &Shape,
    table: &TypeTable,
    dist: Dist,
    basis: HermiteBasis,
    slot_types: Vec<usize>,
    trials: usize,
    seed: u64,
    embed_budget: u64,
) -> Result<NormEstimate> {
    let counts = shape.type_counts(table.t_max());
    let mut sizes = table.sizes.clone();
    loop {
        let mut embeddings = 1f64;
        for (t, &c) in counts.iter().enumerate() {
            for i in 0..c {
                embeddings *= (sizes[t].saturating_sub(i as u64)) as f64;
            }
        }
        let rdim: f64 = shape
            .u
            .pieces
            .iter()
            .map(|p| (sizes[p.ty] as f64).powi(p.verts.len() as i32))
            .product();
        let cdim: f64 = shape
            .v
            .pieces
            .iter()
            .map(|p| (sizes[p.ty] as f64).powi(p.verts.len() as i32))
            .product();
        if embeddings <= embed_budget as f64
            && rdim <= embed_budget as f64
            && cdim <= embed_budget as f64
        {
            break;
        }
        let t_big = (0..sizes.len()).max_by_key(|&t| sizes[t]).unwrap();
        if sizes[t_big] <= counts.iter().sum::<usize>() as u64 + 1 {
            break;
        }
        sizes[t_big] -= ((sizes[t_big] / 8).max(1)).min(sizes[t_big] - 1);
    }
    let used = TypeTable { sizes };
    let max_label = shape.edges.iter().map(|e| e.label).max().unwrap_or(1) as usize;
    let mut per_trial = Vec::with_capacity(trials);
    for t in 0..trials {
        let x = InputTensor::random(
            &used,
            slot_types.clone(),
            shape.ordered_edges,
            dist,
            basis,
            max_label,
            CounterRng::derive(seed, t as u64).next_u64(),
        );
        let (r, c, coo) = eval_graph_matrix_coo(shape, &x, &used)?;
        per_trial.push(spectral_norm_sparse(r, c, &coo));
    }
    let max = per_trial.iter().copied().fold(0.0f64, f64::max);
    let mean = per_trial.iter().sum::<f64>() / trials.max(1) as f64;
    Ok(NormEstimate { per_trial, max, mean, sizes_used: used.sizes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::{Edge, Piece};

    fn table(n: u64) -> TypeTable {
        TypeTable::single(n)
    }

    fn edge_shape() -> Shape {
        Shape::new(
            vec![0, 0],
            vec![Edge { ends: vec![0, 1], label: 1, mult: 1 }],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![1] }]).unwrap(),
            false,
        )
        .unwrap()
    }

    #[test]
    fn hermite_values() {
        let h = HermiteTable::new(6);
        // h_2(x) = x^2 - 1, so h_2(3) = 8.
        assert_eq!(h.eval_unnorm(2, 3.0), 8.0);
        // h_3(x) = x^3 - 3x.
        assert_eq!(h.eval_unnorm(3, 2.0), 2.0);
    }

    #[test]
    fn hermite_orthonormality_by_quadrature() {
        let h = HermiteTable::new(8);
        let (nodes, weights) = h.gauss_quadrature(10);
        for i in 0..=6usize {
            for j in 0..=6usize {
                let integral: f64 = nodes
                    .iter()
                    .zip(&weights)
                    .map(|(&x, &w)| w * h.eval_orthonormal(i, x) * h.eval_orthonormal(j, x))
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (integral - expect).abs() < 1e-10,
                    "E[h_{i} h_{j}] = {integral}"
                );
            }
        }
    }

    #[test]
    fn hermite_product_linearization() {
        let h = HermiteTable::new(8);
        // h_1^2 = x^2 = h_2 + h_0 in the unnormalized basis.
        let d = h.product_linearize_unnorm(&[1, 1]);
        assert_eq!(d[0], rat_int(1));
        assert_eq!(d[1], rat_int(0));
        assert_eq!(d[2], rat_int(1));
        // Orthonormal coefficients: c_2 = sqrt(2), c_0 = 1.
        let (cs, abs_sum) = h.product_linearize_orthonormal(&[1, 1]);
        assert!((cs[2] - 2f64.sqrt()).abs() < 1e-12);
        assert!((cs[0] - 1.0).abs() < 1e-12);
        // Single factor is a delta.
        let d = h.product_linearize_unnorm(&[3]);
        assert!(d[3].is_one() && d[0].is_zero() && d[1].is_zero() && d[2].is_zero());
        // Bound with B_Omega(j) = sqrt(j): sum |c_k| <= (p+1) prod h+_a(B(2p)).
        let p_max: f64 = 2.0 * 2.0; // labels [1,1], p_max = 2; B(2 p_max) = 2
        let bound = (2.0 + 1.0)
            * h.eval_plus_orthonormal(1, p_max.sqrt())
            * h.eval_plus_orthonormal(1, p_max.sqrt());
        assert!(abs_sum <= bound + 1e-12);
        // [2,2] within 5 * h+_2(sqrt 8)^2.
        let (_, s22) = h.product_linearize_orthonormal(&[2, 2]);
        let b22 = 5.0 * h.eval_plus_orthonormal(2, 8f64.sqrt()).powi(2);
        assert!(s22 <= b22 + 1e-12);
    }

    #[test]
    fn empty_character_is_one() {
        let t = table(4);
        let x = InputTensor::constant_pm1(&t, vec![0, 0], false, 1);
        let id = Shape::identity(
            &IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            |_| 0,
            false,
        );
        let r = Ribbon::from_shape(&id, &[2]).unwrap();
        assert_eq!(fourier_character_i(&r, &x).unwrap(), 1);
    }

    #[test]
    fn single_edge_character() {
        let t = table(4);
        let mut x = InputTensor::constant_pm1(&t, vec![0, 0], false, 1);
        let cells = x.canonical_cells();
        assert_eq!(cells.len(), 6);
        // Flip every edge to -1.
        x.set_pm1_mask(&cells, (1 << 6) - 1);
        let r = Ribbon::from_shape(&edge_shape(), &[0, 1]).unwrap();
        assert_eq!(fourier_character_i(&r, &x).unwrap(), -1);
    }

    #[test]
    fn graph_matrix_all_ones_is_j_minus_i() {
        // Single +-1 edge on X = +1: all-ones off-diagonal; norm 2 at n=3.
        let t = table(3);
        let x = InputTensor::constant_pm1(&t, vec![0, 0], false, 1);
        let m = eval_graph_matrix_i(&edge_shape(), &x, &t).unwrap();
        assert_eq!(m.data.rows, 3);
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(*m.data.at(r, c), if r == c { 0 } else { 1 });
            }
        }
        let (rr, cc, coo) = eval_graph_matrix_coo(&edge_shape(), &x, &t).unwrap();
        let norm = spectral_norm_sparse(rr, cc, &coo);
        assert!((norm - 2.0).abs() < 1e-8);
    }

    #[test]
    fn path_entry_matches_direct_enumeration() {
        let t = table(4);
        let x = InputTensor::random(
            &t,
            vec![0, 0],
            false,
            Dist::Rademacher,
            HermiteBasis::Orthonormal,
            1,
            99,
        );
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
        let m = eval_graph_matrix_i(&path, &x, &t).unwrap();
        // Entry ((1),(2)) = sum over w not in {1,2} of G_{1w} G_{w2}.
        let row = MatrixIndex::new(vec![CPiece { ty: 0, power: 1, vals: vec![1] }]);
        let col = MatrixIndex::new(vec![CPiece { ty: 0, power: 1, vals: vec![2] }]);
        let mut expect = 0i64;
        for w in 0..4u64 {
            if w == 1 || w == 2 {
                continue;
            }
            expect += x.entry_i(&[(0, 1), (0, w)]).unwrap() * x.entry_i(&[(0, w), (0, 2)]).unwrap();
        }
        let r = m.row_of(&row).unwrap();
        let c = m.col_of(&col).unwrap();
        assert_eq!(*m.data.at(r, c), expect);
    }

    #[test]
    fn ribbon_orthonormality_exact_small() {
        let t = table(4);
        let template = InputTensor::constant_pm1(&t, vec![0, 0], false, 1);
        let e = edge_shape();
        let r1 = Ribbon::from_shape(&e, &[0, 1]).unwrap();
        let r2 = Ribbon::from_shape(&e, &[0, 2]).unwrap();
        let same = inner_product_ribbons_exact(&r1, &r1, &template, 12).unwrap();
        let diff = inner_product_ribbons_exact(&r1, &r2, &template, 12).unwrap();
        assert_eq!(same, rat_int(1));
        assert_eq!(diff, rat_int(0));
    }

    #[test]
    fn deterministic_norm_replay() {
        let t = table(8);
        let e = edge_shape();
        let a = estimate_norm(
            &e,
            &t,
            Dist::Rademacher,
            HermiteBasis::Orthonormal,
            vec![0, 0],
            5,
            7,
            1 << 20,
        )
        .unwrap();
        let b = estimate_norm(
            &e,
            &t,
            Dist::Rademacher,
            HermiteBasis::Orthonormal,
            vec![0, 0],
            5,
            7,
            1 << 20,
        )
        .unwrap();
        assert_eq!(a.per_trial, b.per_trial);
        assert_eq!(a.sizes_used, vec![8]);
    }

    #[test]
    fn identity_shape_has_unit_norm() {
        let t = table(6);
        let id = Shape::identity(
            &IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            |_| 0,
            false,
        );
        let est = estimate_norm(
            &id,
            &t,
            Dist::Rademacher,
            HermiteBasis::Orthonormal,
            vec![0, 0],
            3,
            1,
            1 << 20,
        )
        .unwrap();
        for v in est.per_trial {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }
}
