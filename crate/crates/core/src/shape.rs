//! Shapes, ribbons, index shapes, and weights.
//!
//! A shape is a typed labeled multi-hypergraph with two distinguished
//! index shapes `U` and `V` (ordered tuples grouped into pieces by type
//! and power). A ribbon is a shape whose vertices carry concrete index
//! values. Equality of shapes is always up to renaming of vertices and is
//! decided through an exact canonical form (color refinement plus
//! exhaustive search inside the residual color classes).

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::One;

use crate::error::Error;
use crate::Result;

/// Population table: `sizes[t]` is the number of concrete indices of type `t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeTable {
    pub sizes: Vec<u64>,
}

impl TypeTable {
    pub fn new(sizes: Vec<u64>) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParam("type table needs >=1 type, all sizes >=1".into()));
        }
        Ok(TypeTable { sizes })
    }

    pub fn single(n: u64) -> Self {
        TypeTable { sizes: vec![n] }
    }

    pub fn t_max(&self) -> usize {
        self.sizes.len()
    }

    pub fn n_max(&self) -> u64 {
        *self.sizes.iter().max().unwrap()
    }
}

/// Per-type vertex counts, evaluating to `sum_t counts[t] * log_n(n_t)`.
///
/// Comparison is by evaluated value, with a lexicographic tie-break on the
/// count vector playing the role of an infinitesimal perturbation of the
/// populations, so equal weights force equal per-type counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Weight {
    pub counts: Vec<i64>,
}

impl Weight {
    pub fn zero(t_max: usize) -> Self {
        Weight { counts: vec![0; t_max] }
    }

    pub fn add(&self, other: &Weight) -> Weight {
        Weight { counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Weight) -> Weight {
        Weight { counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a - b).collect() }
    }

    pub fn total_vertices(&self) -> i64 {
        self.counts.iter().sum()
    }

    /// Exact comparison of the evaluated weights: compares the products
    /// `prod_t n_t^{counts[t]}`, then the count vector.
    pub fn cmp_in(&self, other: &Weight, table: &TypeTable) -> std::cmp::Ordering {
        let val = cmp_pow_products(&self.counts, &other.counts, table);
        val.then_with(|| self.counts.cmp(&other.counts))
    }

    /// `prod_t n_t^{counts[t]}` as an exact rational.
    pub fn n_pow(&self, table: &TypeTable) -> BigRational {
        let mut num = BigUint::one();
        let mut den = BigUint::one();
        for (t, &c) in self.counts.iter().enumerate() {
            let base = BigUint::from(table.sizes[t]);
            if c >= 0 {
                num *= base.pow(c as u32);
            } else {
                den *= base.pow((-c) as u32);
            }
        }
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    /// `prod_t n_t^{counts[t] / 2}` in floating point.
    pub fn n_pow_half_f64(&self, table: &TypeTable) -> f64 {
        let mut acc = 0.0f64;
        for (t, &c) in self.counts.iter().enumerate() {
            acc += c as f64 * (table.sizes[t] as f64).ln() / 2.0;
        }
        acc.exp()
    }

    pub fn is_zero(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }
}

fn cmp_pow_products(a: &[i64], b: &[i64], table: &TypeTable) -> std::cmp::Ordering {
    // Compare prod n_t^{a_t} vs prod n_t^{b_t} exactly: move negative
    // exponents to the other side and compare big integers.
    let mut lhs = BigUint::one();
    let mut rhs = BigUint::one();
    for t in 0..table.sizes.len() {
        let d = a[t] - b[t];
        let base = BigUint::from(table.sizes[t]);
        if d > 0 {
            lhs *= base.pow(d as u32);
        } else if d < 0 {
            rhs *= base.pow((-d) as u32);
        }
    }
    lhs.cmp(&rhs)
}

/// One hyperedge: ordered endpoint tuple, Fourier label, multiplicity.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub ends: Vec<u32>,
    pub label: u32,
    pub mult: u32,
}

/// One index-shape piece: an ordered tuple of distinct vertices sharing a
/// type, together with a power.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Piece {
    pub ty: usize,
    pub power: u32,
    pub verts: Vec<u32>,
}

/// Set of pieces, no two sharing (type, power); pieces vertex-disjoint.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct IndexShape {
    pub pieces: Vec<Piece>,
}

impl IndexShape {
    pub fn empty() -> Self {
        IndexShape { pieces: vec![] }
    }

    pub fn new(mut pieces: Vec<Piece>) -> Result<Self> {
        pieces.retain(|p| !p.verts.is_empty());
        pieces.sort_by(|a, b| (a.ty, a.power).cmp(&(b.ty, b.power)));
        let mut seen_kind = BTreeSet::new();
        let mut seen_vert = BTreeSet::new();
        for p in &pieces {
            if p.power == 0 {
                return Err(Error::InvalidShape("piece power must be >= 1".into()));
            }
            if !seen_kind.insert((p.ty, p.power)) {
                return Err(Error::InvalidShape("two pieces share type and power".into()));
            }
            for &v in &p.verts {
                if !seen_vert.insert(v) {
                    return Err(Error::InvalidShape("pieces are not vertex-disjoint".into()));
                }
            }
        }
        Ok(IndexShape { pieces })
    }

    pub fn vertex_set(&self) -> BTreeSet<u32> {
        self.pieces.iter().flat_map(|p| p.verts.iter().copied()).collect()
    }

    /// Structural equivalence: same (type, power, length) profile.
    pub fn equiv(&self, other: &IndexShape) -> bool {
        self.pieces.len() == other.pieces.len()
            && self
                .pieces
                .iter()
                .zip(&other.pieces)
                .all(|(a, b)| a.ty == b.ty && a.power == b.power && a.verts.len() == b.verts.len())
    }

    /// `prod_i |U_i|!`
    pub fn aut_size(&self) -> u64 {
        self.pieces.iter().map(|p| factorial(p.verts.len() as u64)).product()
    }

    /// Degree of the associated monomial: `sum_i power_i * |U_i|`.
    pub fn degree(&self) -> u32 {
        self.pieces.iter().map(|p| p.power * p.verts.len() as u32).sum()
    }

    /// Power of the piece containing `v`, or 0.
    pub fn deg_of(&self, v: u32) -> u32 {
        for p in &self.pieces {
            if p.verts.contains(&v) {
                return p.power;
            }
        }
        0
    }

    pub fn weight(&self, vtypes: &[usize], t_max: usize) -> Weight {
        let mut w = Weight::zero(t_max);
        for p in &self.pieces {
            for &v in &p.verts {
                w.counts[vtypes[v as usize]] += 1;
            }
        }
        w
    }

    /// All pieces have power one.
    pub fn is_multilinear(&self) -> bool {
        self.pieces.iter().all(|p| p.power == 1)
    }
}

pub fn factorial(n: u64) -> u64 {
    (1..=n).product::<u64>().max(1)
}

/// Abstract shape: typed vertices `0..nv`, labeled multi-hyperedges, and
/// distinguished index shapes `u`, `v`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape {
    pub vtypes: Vec<usize>,
    pub edges: Vec<Edge>,
    pub u: IndexShape,
    pub v: IndexShape,
    /// Whether hyperedge endpoint tuples are orientation-sensitive.
    pub ordered_edges: bool,
}

fn normalize_edges(mut edges: Vec<Edge>, ordered: bool) -> Vec<Edge> {
    for e in &mut edges {
        if !ordered {
            e.ends.sort_unstable();
        }
    }
    edges.sort_by(|a, b| (&a.ends, a.label).cmp(&(&b.ends, b.label)));
    let mut out: Vec<Edge> = Vec::with_capacity(edges.len());
    for e in edges {
        if let Some(last) = out.last_mut() {
            if last.ends == e.ends && last.label == e.label {
                last.mult += e.mult;
                continue;
            }
        }
        out.push(e);
    }
    out
}

impl Shape {
    pub fn new(
        vtypes: Vec<usize>,
        edges: Vec<Edge>,
        u: IndexShape,
        v: IndexShape,
        ordered_edges: bool,
    ) -> Result<Self> {
        let nv = vtypes.len() as u32;
        for is in [&u, &v] {
            for p in &is.pieces {
                for &x in &p.verts {
                    if x >= nv {
                        return Err(Error::InvalidShape("index piece references missing vertex".into()));
                    }
                    if vtypes[x as usize] != p.ty {
                        return Err(Error::InvalidShape("piece type does not match vertex type".into()));
                    }
                }
            }
        }
        for e in &edges {
            if e.mult == 0 {
                return Err(Error::InvalidShape("edge multiplicity must be >= 1".into()));
            }
            let mut seen = BTreeSet::new();
            for &x in &e.ends {
                if x >= nv {
                    return Err(Error::InvalidShape("edge references missing vertex".into()));
                }
                if !seen.insert(x) {
                    return Err(Error::InvalidShape("edge endpoints must be distinct".into()));
                }
            }
        }
        Ok(Shape { edges: normalize_edges(edges, ordered_edges), vtypes, u, v, ordered_edges })
    }

    pub fn nv(&self) -> usize {
        self.vtypes.len()
    }

    /// Trivial identity shape on an index shape pattern: `U = V`, no edges.
    pub fn identity(u: &IndexShape, vtypes_of: impl Fn(u32) -> usize, ordered_edges: bool) -> Shape {
        let verts: Vec<u32> = u.vertex_set().into_iter().collect();
        let nv = verts.len();
        let remap: BTreeMap<u32, u32> =
            verts.iter().enumerate().map(|(i, &v)| (v, i as u32)).collect();
        let map_is = |is: &IndexShape| IndexShape {
            pieces: is
                .pieces
                .iter()
                .map(|p| Piece {
                    ty: p.ty,
                    power: p.power,
                    verts: p.verts.iter().map(|v| remap[v]).collect(),
                })
                .collect(),
        };
        let mut vtypes = vec![0usize; nv];
        for &v in &verts {
            vtypes[remap[&v] as usize] = vtypes_of(v);
        }
        Shape { vtypes, edges: vec![], u: map_is(u), v: map_is(u), ordered_edges }
    }

    pub fn transpose(&self) -> Shape {
        Shape {
            vtypes: self.vtypes.clone(),
            edges: self.edges.clone(),
            u: self.v.clone(),
            v: self.u.clone(),
            ordered_edges: self.ordered_edges,
        }
    }

    pub fn uv_union(&self) -> BTreeSet<u32> {
        let mut s = self.u.vertex_set();
        s.extend(self.v.vertex_set());
        s
    }

    /// Sum of `label * mult` over edges incident to `v`.
    pub fn deg_vertex(&self, v: u32) -> u64 {
        self.edges
            .iter()
            .filter(|e| e.ends.contains(&v))
            .map(|e| e.label as u64 * e.mult as u64)
            .sum()
    }

    pub fn total_edge_label(&self) -> u64 {
        self.edges.iter().map(|e| e.label as u64 * e.mult as u64).sum()
    }

    /// Number of edges counted with multiplicity.
    pub fn edge_count(&self) -> u64 {
        self.edges.iter().map(|e| e.mult as u64).sum()
    }

    pub fn has_multi_edges(&self) -> bool {
        self.edges.iter().any(|e| e.mult > 1)
    }

    pub fn is_isolated(&self, v: u32) -> bool {
        !self.edges.iter().any(|e| e.ends.contains(&v))
    }

    /// No isolated vertex outside `U u V`, no multi-edges, no label-0 edges.
    pub fn is_proper(&self) -> bool {
        if self.has_multi_edges() || self.edges.iter().any(|e| e.label == 0) {
            return false;
        }
        let uv = self.uv_union();
        (0..self.nv() as u32).all(|v| uv.contains(&v) || !self.is_isolated(v))
    }

    /// `V(alpha) = V(U) = V(V)` as sets and no edges.
    pub fn is_trivial(&self) -> bool {
        if !self.edges.is_empty() {
            return false;
        }
        let us = self.u.vertex_set();
        let vs = self.v.vertex_set();
        us.len() == self.nv() && vs.len() == self.nv()
    }

    pub fn weight_of(&self, set: &BTreeSet<u32>, t_max: usize) -> Weight {
        let mut w = Weight::zero(t_max);
        for &v in set {
            w.counts[self.vtypes[v as usize]] += 1;
        }
        w
    }

    pub fn vertex_weight(&self, t_max: usize) -> Weight {
        let mut w = Weight::zero(t_max);
        for &t in &self.vtypes {
            w.counts[t] += 1;
        }
        w
    }

    /// Per-type vertex counts as a plain vector.
    pub fn type_counts(&self, t_max: usize) -> Vec<usize> {
        let mut c = vec![0usize; t_max];
        for &t in &self.vtypes {
            c[t] += 1;
        }
        c
    }

    /// Glue `self.v` onto `other.u`. Both index shapes must have the same
    /// piece structure, and at least one side may not have edges entirely
    /// inside the glued set.
    pub fn compose(&self, other: &Shape) -> Result<Shape> {
        Ok(self.compose_map(other)?.0)
    }

    /// Composition plus the map from `other`'s vertex ids into the result
    /// (self's vertices keep their ids).
    pub fn compose_map(&self, other: &Shape) -> Result<(Shape, Vec<u32>)> {
        if self.ordered_edges != other.ordered_edges {
            return Err(Error::NonComposable("mixed edge orientation conventions".into()));
        }
        if !self.v.equiv(&other.u) {
            return Err(Error::NonComposable(
                "left V and right U index shapes have different piece structure".into(),
            ));
        }
        let glue_left = self.v.vertex_set();
        let glue_right = other.u.vertex_set();
        let left_has = self.edges.iter().any(|e| e.ends.iter().all(|x| glue_left.contains(x)));
        let right_has = other.edges.iter().any(|e| e.ends.iter().all(|x| glue_right.contains(x)));
        if left_has && right_has {
            return Err(Error::NonComposable(
                "both sides have edges entirely inside the glued separator".into(),
            ));
        }
        // Identify other's U vertices with self's V vertices piece-by-piece.
        let mut map: BTreeMap<u32, u32> = BTreeMap::new();
        for (pl, pr) in self.v.pieces.iter().zip(&other.u.pieces) {
            for (&lv, &rv) in pl.verts.iter().zip(&pr.verts) {
                map.insert(rv, lv);
            }
        }
        let mut vtypes = self.vtypes.clone();
        for rv in 0..other.nv() as u32 {
            if let std::collections::btree_map::Entry::Vacant(e) = map.entry(rv) {
                e.insert(vtypes.len() as u32);
                vtypes.push(other.vtypes[rv as usize]);
            }
        }
        let mut edges = self.edges.clone();
        for e in &other.edges {
            edges.push(Edge {
                ends: e.ends.iter().map(|x| map[x]).collect(),
                label: e.label,
                mult: e.mult,
            });
        }
        let v = IndexShape {
            pieces: other
                .v
                .pieces
                .iter()
                .map(|p| Piece {
                    ty: p.ty,
                    power: p.power,
                    verts: p.verts.iter().map(|x| map[x]).collect(),
                })
                .collect(),
        };
        let shape = Shape::new(vtypes, edges, self.u.clone(), v, self.ordered_edges)?;
        let map_vec: Vec<u32> = (0..other.nv() as u32).map(|rv| map[&rv]).collect();
        Ok((shape, map_vec))
    }

    pub fn relabeled(&self, map: &[u32]) -> Shape {
        let nv = self.nv();
        let mut vtypes = vec![0usize; nv];
        for v in 0..nv {
            vtypes[map[v] as usize] = self.vtypes[v];
        }
        let edges: Vec<Edge> = self
            .edges
            .iter()
            .map(|e| Edge {
                ends: e.ends.iter().map(|&x| map[x as usize]).collect(),
                label: e.label,
                mult: e.mult,
            })
            .collect();
        let map_is = |is: &IndexShape| IndexShape {
            pieces: is
                .pieces
                .iter()
                .map(|p| Piece {
                    ty: p.ty,
                    power: p.power,
                    verts: p.verts.iter().map(|&x| map[x as usize]).collect(),
                })
                .collect(),
        };
        Shape {
            vtypes,
            edges: normalize_edges(edges, self.ordered_edges),
            u: map_is(&self.u),
            v: map_is(&self.v),
            ordered_edges: self.ordered_edges,
        }
    }

    pub fn canon(&self) -> Canon {
        canonicalize(self)
    }

    pub fn canonical_key(&self) -> Vec<u64> {
        self.canon().key
    }

    pub fn canonical_shape(&self) -> Shape {
        let c = self.canon();
        self.relabeled(&c.relabel)
    }

    /// Automorphisms fixing `U` and `V` pointwise (tuple order preserved).
    pub fn aut_size(&self) -> u64 {
        self.canon().aut
    }

    pub fn equivalent(&self, other: &Shape) -> bool {
        self.canonical_key() == other.canonical_key()
    }
}

/// Result of canonicalization: a byte-stable key, a witness relabeling
/// (old id -> canonical id), and the automorphism count.
#[derive(Clone, Debug)]
pub struct Canon {
    pub key: Vec<u64>,
    pub relabel: Vec<u32>,
    pub aut: u64,
}

/// Stable isomorphism-invariant vertex colors: initial colors from type
/// and U/V tuple positions, refined by incident-edge signatures.
fn refine_colors(s: &Shape) -> Vec<u32> {
    let n = s.nv();
    if n == 0 {
        return vec![];
    }
    let mut upos = vec![0u64; n];
    let mut vpos = vec![0u64; n];
    for (pi, p) in s.u.pieces.iter().enumerate() {
        for (i, &x) in p.verts.iter().enumerate() {
            upos[x as usize] = 1 + (pi as u64) * 64 + i as u64;
        }
    }
    for (pi, p) in s.v.pieces.iter().enumerate() {
        for (i, &x) in p.verts.iter().enumerate() {
            vpos[x as usize] = 1 + (pi as u64) * 64 + i as u64;
        }
    }
    let mut color: Vec<u32> = {
        let keys: Vec<(usize, u64, u64)> =
            (0..n).map(|v| (s.vtypes[v], upos[v], vpos[v])).collect();
        dense_rank(&keys)
    };
    loop {
        let mut sigs: Vec<(u32, Vec<Vec<u64>>)> = Vec::with_capacity(n);
        for v in 0..n {
            let mut local: Vec<Vec<u64>> = Vec::new();
            for e in &s.edges {
                for (pos, &x) in e.ends.iter().enumerate() {
                    if x as usize != v {
                        continue;
                    }
                    let mut sig: Vec<u64> = vec![e.label as u64, e.mult as u64];
                    if s.ordered_edges {
                        sig.push(pos as u64);
                        sig.extend(e.ends.iter().map(|&y| color[y as usize] as u64));
                    } else {
                        let mut others: Vec<u64> = e
                            .ends
                            .iter()
                            .filter(|&&y| y as usize != v)
                            .map(|&y| color[y as usize] as u64)
                            .collect();
                        others.sort_unstable();
                        sig.extend(others);
                    }
                    local.push(sig);
                }
            }
            local.sort();
            sigs.push((color[v], local));
        }
        let new_color = dense_rank(&sigs);
        let old_classes = color.iter().collect::<BTreeSet<_>>().len();
        let new_classes = new_color.iter().collect::<BTreeSet<_>>().len();
        if new_classes == old_classes {
            color = new_color;
            break;
        }
        color = new_color;
    }
    color
}

fn color_classes(color: &[u32]) -> Vec<Vec<u32>> {
    let mut by_color: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (v, &c) in color.iter().enumerate() {
        by_color.entry(c).or_default().push(v as u32);
    }
    by_color.into_values().collect()
}

fn canonicalize(s: &Shape) -> Canon {
    let n = s.nv();
    if n == 0 {
        return Canon { key: encode(s, &[]), relabel: vec![], aut: 1 };
    }
    let color = refine_colors(s);
    // Residual classes of interchangeable vertices.
    let classes: Vec<Vec<u32>> = color_classes(&color);
    let total: u64 = classes.iter().map(|c| factorial(c.len() as u64)).product();
    assert!(total <= 40_320 * 64, "canonicalization blow-up: residual group too large");

    // Canonical position base per class: vertices sorted by color.
    let mut base = 0u32;
    let mut class_base = Vec::with_capacity(classes.len());
    for c in &classes {
        class_base.push(base);
        base += c.len() as u32;
    }

    let mut best_key: Option<Vec<u64>> = None;
    let mut best_relabel: Vec<u32> = vec![0; n];
    let mut aut = 0u64;
    let mut perms: Vec<Vec<u32>> = classes.iter().map(|c| (0..c.len() as u32).collect()).collect();
    loop {
        let mut relabel = vec![0u32; n];
        for (ci, c) in classes.iter().enumerate() {
            for (j, &v) in c.iter().enumerate() {
                relabel[v as usize] = class_base[ci] + perms[ci][j];
            }
        }
        let key = encode(s, &relabel);
        match &best_key {
            None => {
                best_key = Some(key);
                best_relabel = relabel;
                aut = 1;
            }
            Some(b) => match key.cmp(b) {
                std::cmp::Ordering::Less => {
                    best_key = Some(key);
                    best_relabel = relabel;
                    aut = 1;
                }
                std::cmp::Ordering::Equal => aut += 1,
                std::cmp::Ordering::Greater => {}
            },
        }
        if !next_perm_multi(&mut perms) {
            break;
        }
    }
    Canon { key: best_key.unwrap(), relabel: best_relabel, aut }
}

/// All automorphisms (as explicit permutations, old id -> new id) fixing
/// `U` and `V` pointwise and preserving the labeled edge multiset.
pub fn automorphism_list(s: &Shape) -> Vec<Vec<u32>> {
    let n = s.nv();
    if n == 0 {
        return vec![vec![]];
    }
    let classes = color_classes(&refine_colors(s));
    let total: u64 = classes.iter().map(|c| factorial(c.len() as u64)).product();
    assert!(total <= 40_320 * 64, "automorphism search blow-up");
    let base_edges = {
        let mut e = s.edges.clone();
        e.sort();
        e
    };
    let mut out = Vec::new();
    let mut perms: Vec<Vec<u32>> = classes.iter().map(|c| (0..c.len() as u32).collect()).collect();
    loop {
        let mut relabel = vec![0u32; n];
        for (ci, c) in classes.iter().enumerate() {
            for (j, &v) in c.iter().enumerate() {
                relabel[v as usize] = c[perms[ci][j] as usize];
            }
        }
        // Automorphism iff the relabeled edge multiset is unchanged (U/V
        // fixed automatically: their classes are singletons).
        let mut mapped: Vec<Edge> = s
            .edges
            .iter()
            .map(|e| {
                let mut ends: Vec<u32> = e.ends.iter().map(|&x| relabel[x as usize]).collect();
                if !s.ordered_edges {
                    ends.sort_unstable();
                }
                Edge { ends, label: e.label, mult: e.mult }
            })
            .collect();
        mapped.sort();
        let fixes_uv = s.u.pieces.iter().chain(&s.v.pieces).all(|p| {
            p.verts.iter().all(|&x| relabel[x as usize] == x)
        });
        if fixes_uv && mapped == base_edges {
            out.push(relabel);
        }
        if !next_perm_multi(&mut perms) {
            break;
        }
    }
    out
}

fn dense_rank<K: Ord + Clone>(keys: &[K]) -> Vec<u32> {
    let sorted: BTreeSet<K> = keys.iter().cloned().collect();
    let rank: BTreeMap<K, u32> =
        sorted.into_iter().enumerate().map(|(i, k)| (k, i as u32)).collect();
    keys.iter().map(|k| rank[k]).collect()
}

/// Advance a vector of per-class permutations in mixed-radix order.
fn next_perm_multi(perms: &mut [Vec<u32>]) -> bool {
    for p in perms.iter_mut() {
        if next_permutation(p) {
            return true;
        }
        p.sort_unstable();
    }
    false
}

fn next_permutation(p: &mut [u32]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn encode(s: &Shape, relabel: &[u32]) -> Vec<u64> {
    let n = s.nv();
    let mut out: Vec<u64> = Vec::with_capacity(8 + 4 * s.edges.len());
    out.push(n as u64);
    out.push(s.ordered_edges as u64);
    let mut types = vec![0u64; n];
    for v in 0..n {
        types[relabel[v] as usize] = s.vtypes[v] as u64;
    }
    out.extend(types);
    for is in [&s.u, &s.v] {
        out.push(is.pieces.len() as u64);
        for p in &is.pieces {
            out.push(p.ty as u64);
            out.push(p.power as u64);
            out.push(p.verts.len() as u64);
            out.extend(p.verts.iter().map(|&x| relabel[x as usize] as u64));
        }
    }
    let mut edges: Vec<Vec<u64>> = s
        .edges
        .iter()
        .map(|e| {
            let mut ends: Vec<u64> =
                e.ends.iter().map(|&x| relabel[x as usize] as u64).collect();
            if !s.ordered_edges {
                ends.sort_unstable();
            }
            let mut rec = vec![ends.len() as u64];
            rec.extend(ends);
            rec.push(e.label as u64);
            rec.push(e.mult as u64);
            rec
        })
        .collect();
    edges.sort();
    out.push(edges.len() as u64);
    for e in edges {
        out.extend(e);
    }
    out
}

// ---------------------------------------------------------------------------
// Concrete matrix indices and ribbons
// ---------------------------------------------------------------------------

/// Concrete index-shape piece: tuple of distinct concrete indices.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CPiece {
    pub ty: usize,
    pub power: u32,
    pub vals: Vec<u64>,
}

/// Concrete matrix index: set of disjoint concrete pieces.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MatrixIndex {
    pub pieces: Vec<CPiece>,
}

impl MatrixIndex {
    pub fn empty() -> Self {
        MatrixIndex { pieces: vec![] }
    }

    pub fn new(mut pieces: Vec<CPiece>) -> Self {
        pieces.retain(|p| !p.vals.is_empty());
        pieces.sort_by(|a, b| (a.ty, a.power).cmp(&(b.ty, b.power)));
        MatrixIndex { pieces }
    }

    /// The monomial this index represents, as a sorted exponent multiset.
    pub fn monomial_key(&self) -> Vec<(usize, u64, u32)> {
        let mut m: BTreeMap<(usize, u64), u32> = BTreeMap::new();
        for p in &self.pieces {
            for &v in &p.vals {
                *m.entry((p.ty, v)).or_insert(0) += p.power;
            }
        }
        m.into_iter().map(|((t, v), p)| (t, v, p)).collect()
    }

    pub fn matches_pattern(&self, pat: &IndexShape) -> bool {
        self.pieces.len() == pat.pieces.len()
            && self
                .pieces
                .iter()
                .zip(&pat.pieces)
                .all(|(a, b)| a.ty == b.ty && a.power == b.power && a.vals.len() == b.verts.len())
    }
}

/// Concrete ribbon: vertices are typed concrete indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ribbon {
    /// Sorted distinct concrete vertices.
    pub verts: Vec<(usize, u64)>,
    /// Edge endpoints index into `verts`.
    pub edges: Vec<Edge>,
    pub a: MatrixIndex,
    pub b: MatrixIndex,
    pub ordered_edges: bool,
}

impl Ribbon {
    /// Instantiate a shape with one concrete value per abstract vertex.
    pub fn from_shape(shape: &Shape, assign: &[u64]) -> Result<Ribbon> {
        if assign.len() != shape.nv() {
            return Err(Error::InvalidParam("assignment length mismatch".into()));
        }
        let mut verts: Vec<(usize, u64)> =
            (0..shape.nv()).map(|v| (shape.vtypes[v], assign[v])).collect();
        verts.sort_unstable();
        verts.dedup();
        if verts.len() != shape.nv() {
            return Err(Error::InvalidParam("assignment is not injective per type".into()));
        }
        let pos = |v: usize| -> u32 {
            verts.binary_search(&(shape.vtypes[v], assign[v])).unwrap() as u32
        };
        let edges = shape
            .edges
            .iter()
            .map(|e| Edge {
                ends: e.ends.iter().map(|&x| pos(x as usize)).collect(),
                label: e.label,
                mult: e.mult,
            })
            .collect();
        let mk = |is: &IndexShape| {
            MatrixIndex::new(
                is.pieces
                    .iter()
                    .map(|p| CPiece {
                        ty: p.ty,
                        power: p.power,
                        vals: p.verts.iter().map(|&x| assign[x as usize]).collect(),
                    })
                    .collect(),
            )
        };
        Ok(Ribbon {
            edges: normalize_edges(edges, shape.ordered_edges),
            a: mk(&shape.u),
            b: mk(&shape.v),
            verts,
            ordered_edges: shape.ordered_edges,
        })
    }

    /// Forget concrete values: abstract shape with vertices `0..nv`.
    pub fn to_shape(&self) -> Shape {
        let vtypes: Vec<usize> = self.verts.iter().map(|&(t, _)| t).collect();
        let pos = |t: usize, val: u64| -> u32 {
            self.verts.binary_search(&(t, val)).unwrap() as u32
        };
        let mk = |mi: &MatrixIndex| IndexShape {
            pieces: mi
                .pieces
                .iter()
                .map(|p| Piece {
                    ty: p.ty,
                    power: p.power,
                    verts: p.vals.iter().map(|&v| pos(p.ty, v)).collect(),
                })
                .collect(),
        };
        Shape {
            vtypes,
            edges: self.edges.clone(),
            u: mk(&self.a),
            v: mk(&self.b),
            ordered_edges: self.ordered_edges,
        }
    }

    pub fn is_proper(&self) -> bool {
        self.to_shape().is_proper()
    }

    /// Concrete identity key: vertices, concrete edges, and endpoints.
    pub fn key(&self) -> Vec<u64> {
        let mut out = vec![self.verts.len() as u64];
        for &(t, v) in &self.verts {
            out.push(t as u64);
            out.push(v);
        }
        let mut edges: Vec<Vec<u64>> = self
            .edges
            .iter()
            .map(|e| {
                let mut rec = vec![e.ends.len() as u64];
                rec.extend(e.ends.iter().map(|&x| x as u64));
                rec.push(e.label as u64);
                rec.push(e.mult as u64);
                rec
            })
            .collect();
        edges.sort();
        for e in edges {
            out.extend(e);
        }
        for mi in [&self.a, &self.b] {
            out.push(mi.pieces.len() as u64);
            for p in &mi.pieces {
                out.push(p.ty as u64);
                out.push(p.power as u64);
                out.push(p.vals.len() as u64);
                out.extend(p.vals.iter().copied());
            }
        }
        out
    }

    pub fn composable_with(&self, other: &Ribbon) -> bool {
        self.b == other.a
    }

    /// No unexpected vertex intersections beyond the glued matrix index.
    pub fn properly_composable_with(&self, other: &Ribbon) -> bool {
        if !self.composable_with(other) {
            return false;
        }
        let glue: BTreeSet<(usize, u64)> = self
            .b
            .pieces
            .iter()
            .flat_map(|p| p.vals.iter().map(move |&v| (p.ty, v)))
            .collect();
        let left: BTreeSet<(usize, u64)> = self.verts.iter().copied().collect();
        let right: BTreeSet<(usize, u64)> = other.verts.iter().copied().collect();
        left.intersection(&right).all(|x| glue.contains(x))
    }

    pub fn compose(&self, other: &Ribbon) -> Result<Ribbon> {
        if !self.composable_with(other) {
            return Err(Error::NonComposable("ribbon B index differs from A index".into()));
        }
        let mut verts = self.verts.clone();
        verts.extend(other.verts.iter().copied());
        verts.sort_unstable();
        verts.dedup();
        let pos = |vs: &Vec<(usize, u64)>, idx: u32| -> u32 {
            let cv = vs[idx as usize];
            verts.binary_search(&cv).unwrap() as u32
        };
        let mut edges: Vec<Edge> = self
            .edges
            .iter()
            .map(|e| Edge {
                ends: e.ends.iter().map(|&x| pos(&self.verts, x)).collect(),
                label: e.label,
                mult: e.mult,
            })
            .collect();
        edges.extend(other.edges.iter().map(|e| Edge {
            ends: e.ends.iter().map(|&x| pos(&other.verts, x)).collect(),
            label: e.label,
            mult: e.mult,
        }));
        Ok(Ribbon {
            edges: normalize_edges(edges, self.ordered_edges),
            a: self.a.clone(),
            b: other.b.clone(),
            verts,
            ordered_edges: self.ordered_edges,
        })
    }
}

// ---------------------------------------------------------------------------
// Enumeration
// ---------------------------------------------------------------------------

/// Configuration for exhaustive shape enumeration.
#[derive(Clone, Debug)]
pub struct EnumConfig {
    pub t_max: usize,
    pub max_vertices: usize,
    /// Edge labels range over `1..=max_label`.
    pub max_label: u32,
    pub arity: usize,
    pub ordered_edges: bool,
    /// For arity-2 problems: required endpoint types (t1, t2) with t1 != t2.
    pub bipartite: Option<(usize, usize)>,
    /// Monomial degree cap for each of U and V.
    pub max_index_degree: u32,
    /// Allow index pieces with power > 1.
    pub allow_powers: bool,
    /// Restrict U/V piece types.
    pub index_types: Option<Vec<usize>>,
    /// Emit all tuple orderings of piece vertices (else ascending only).
    pub tuple_orders: bool,
    pub require_proper: bool,
    pub max_edges: Option<usize>,
    pub cap: usize,
}

impl EnumConfig {
    pub fn simplified(max_vertices: usize, max_index_degree: u32) -> Self {
        EnumConfig {
            t_max: 1,
            max_vertices,
            max_label: 1,
            arity: 2,
            ordered_edges: false,
            bipartite: None,
            max_index_degree,
            allow_powers: false,
            index_types: None,
            tuple_orders: true,
            require_proper: true,
            max_edges: None,
            cap: 20_000_000,
        }
    }
}

/// All canonical proper shapes within the configured caps, sorted by
/// canonical key. The count respects the crude upper bound
/// `5^z * (max_label + 1)^(z^k)` on proper shapes with at most `z` vertices.
pub fn enumerate_shapes(cfg: &EnumConfig) -> Result<Vec<Shape>> {
    let mut seen: BTreeMap<Vec<u64>, Shape> = BTreeMap::new();
    for nv in 0..=cfg.max_vertices {
        for vtypes in type_assignments(nv, cfg.t_max) {
            let slots = edge_slots(&vtypes, cfg);
            let mut labellings: Vec<Vec<Edge>> = Vec::new();
            enumerate_edge_sets(&slots, cfg, &mut Vec::new(), 0, &mut labellings);
            // Dedupe at the bare-graph level first; decorating one
            // representative per class with every U/V choice still covers
            // all decorated classes.
            let mut graph_reps: BTreeMap<Vec<u64>, Shape> = BTreeMap::new();
            for edges in labellings {
                let bare = match Shape::new(
                    vtypes.clone(),
                    edges,
                    IndexShape::empty(),
                    IndexShape::empty(),
                    cfg.ordered_edges,
                ) {
                    Ok(s) => s,
                    Err(_) => continue,
                };
                let canon = bare.canon();
                graph_reps
                    .entry(canon.key.clone())
                    .or_insert_with(|| bare.relabeled(&canon.relabel));
            }
            for bare in graph_reps.values() {
                let index_shapes = enumerate_index_shapes_on(&bare.vtypes, cfg);
                for us in &index_shapes {
                    for vs in &index_shapes {
                        let shape = match Shape::new(
                            bare.vtypes.clone(),
                            bare.edges.clone(),
                            us.clone(),
                            vs.clone(),
                            cfg.ordered_edges,
                        ) {
                            Ok(s) => s,
                            Err(_) => continue,
                        };
                        if cfg.require_proper && !shape.is_proper() {
                            continue;
                        }
                        // No dangling isolated vertices even when improper
                        // shapes are requested.
                        if !cfg.require_proper {
                            let uv = shape.uv_union();
                            if (0..nv as u32).any(|v| !uv.contains(&v) && shape.is_isolated(v)) {
                                continue;
                            }
                        }
                        let canon = shape.canon();
                        if !seen.contains_key(&canon.key) {
                            if seen.len() >= cfg.cap {
                                return Err(Error::CapExceeded(format!(
                                    "shape enumeration exceeded cap {}",
                                    cfg.cap
                                )));
                            }
                            seen.insert(canon.key.clone(), shape.relabeled(&canon.relabel));
                        }
                    }
                }
            }
        }
    }
    Ok(seen.into_values().collect())
}

fn type_assignments(nv: usize, t_max: usize) -> Vec<Vec<usize>> {
    // Non-decreasing type sequences suffice up to isomorphism.
    fn rec(nv: usize, t_max: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == nv {
            out.push(cur.clone());
            return;
        }
        for t in start..t_max {
            cur.push(t);
            rec(nv, t_max, t, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(nv, t_max, 0, &mut Vec::new(), &mut out);
    out
}

fn edge_slots(vtypes: &[usize], cfg: &EnumConfig) -> Vec<Vec<u32>> {
    let nv = vtypes.len() as u32;
    let mut slots = Vec::new();
    if cfg.ordered_edges {
        // Ordered tuples of distinct vertices.
        let mut stack: Vec<Vec<u32>> = vec![vec![]];
        for _ in 0..cfg.arity {
            let mut next = Vec::new();
            for prefix in &stack {
                for v in 0..nv {
                    if !prefix.contains(&v) {
                        let mut p = prefix.clone();
                        p.push(v);
                        next.push(p);
                    }
                }
            }
            stack = next;
        }
        slots = stack;
    } else {
        // Sorted tuples of distinct vertices.
        fn rec(nv: u32, arity: usize, start: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if cur.len() == arity {
                out.push(cur.clone());
                return;
            }
            for v in start..nv {
                cur.push(v);
                rec(nv, arity, v + 1, cur, out);
                cur.pop();
            }
        }
        rec(nv, cfg.arity, 0, &mut Vec::new(), &mut slots);
    }
    if let Some((t1, t2)) = cfg.bipartite {
        slots.retain(|ends| {
            let ts: BTreeSet<usize> = ends.iter().map(|&v| vtypes[v as usize]).collect();
            ends.len() == 2 && ts.contains(&t1) && ts.contains(&t2) && t1 != t2
        });
    }
    slots
}

fn enumerate_edge_sets(
    slots: &[Vec<u32>],
    cfg: &EnumConfig,
    cur: &mut Vec<Edge>,
    from: usize,
    out: &mut Vec<Vec<Edge>>,
) {
    out.push(cur.clone());
    if let Some(me) = cfg.max_edges {
        if cur.len() >= me {
            return;
        }
    }
    for i in from..slots.len() {
        for label in 1..=cfg.max_label {
            cur.push(Edge { ends: slots[i].clone(), label, mult: 1 });
            enumerate_edge_sets(slots, cfg, cur, i + 1, out);
            cur.pop();
        }
    }
}

fn enumerate_index_shapes_on(vtypes: &[usize], cfg: &EnumConfig) -> Vec<IndexShape> {
    // All index shapes over subsets of the vertices within the degree cap.
    let nv = vtypes.len() as u32;
    let allowed_types: Vec<usize> = match &cfg.index_types {
        Some(ts) => ts.clone(),
        None => (0..cfg.t_max).collect(),
    };
    let max_power = if cfg.allow_powers { cfg.max_index_degree.max(1) } else { 1 };
    // Piece kinds in fixed order.
    let mut kinds: Vec<(usize, u32)> = Vec::new();
    for &t in &allowed_types {
        for p in 1..=max_power {
            kinds.push((t, p));
        }
    }
    let mut out = Vec::new();
    fn rec(
        kinds: &[(usize, u32)],
        ki: usize,
        vtypes: &[usize],
        nv: u32,
        used: &mut BTreeSet<u32>,
        degree_left: i64,
        cur: &mut Vec<Piece>,
        tuple_orders: bool,
        out: &mut Vec<IndexShape>,
    ) {
        if ki == kinds.len() {
            out.push(IndexShape { pieces: cur.clone() });
            return;
        }
        // Skip this kind.
        rec(kinds, ki + 1, vtypes, nv, used, degree_left, cur, tuple_orders, out);
        let (ty, power) = kinds[ki];
        let candidates: Vec<u32> = (0..nv)
            .filter(|&v| vtypes[v as usize] == ty && !used.contains(&v))
            .collect();
        let max_len = (degree_left / power as i64).max(0) as usize;
        for len in 1..=candidates.len().min(max_len) {
            for combo in combinations(&candidates, len) {
                let orders: Vec<Vec<u32>> =
                    if tuple_orders { permutations(&combo) } else { vec![combo.clone()] };
                for verts in orders {
                    for &v in &verts {
                        used.insert(v);
                    }
                    cur.push(Piece { ty, power, verts: verts.clone() });
                    rec(
                        kinds,
                        ki + 1,
                        vtypes,
                        nv,
                        used,
                        degree_left - (power as i64) * (len as i64),
                        cur,
                        tuple_orders,
                        out,
                    );
                    cur.pop();
                    for &v in &verts {
                        used.remove(&v);
                    }
                }
            }
        }
    }
    rec(
        &kinds,
        0,
        vtypes,
        nv,
        &mut BTreeSet::new(),
        cfg.max_index_degree as i64,
        &mut Vec::new(),
        cfg.tuple_orders,
        &mut out,
    );
    out
}

pub fn combinations(items: &[u32], k: usize) -> Vec<Vec<u32>> {
    fn rec(items: &[u32], k: usize, start: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::new(), &mut out);
    out
}

pub fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    let mut p: Vec<u32> = items.to_vec();
    p.sort_unstable();
    let mut out = vec![p.clone()];
    while next_permutation(&mut p) {
        out.push(p.clone());
    }
    out
}

// ---------------------------------------------------------------------------
// Structured-text serialization
// ---------------------------------------------------------------------------

impl Shape {
    /// Deterministic structured-text encoding (canonical labeling first
    /// makes this byte-stable across equivalent shapes).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("shape\n");
        s.push_str(&format!("ordered {}\n", if self.ordered_edges { 1 } else { 0 }));
        s.push_str(&format!(
            "vertices {}\n",
            self.vtypes.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
        ));
        for e in &self.edges {
            s.push_str(&format!(
                "edge {} label {} mult {}\n",
                e.ends.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
                e.label,
                e.mult
            ));
        }
        for (tag, is) in [("u", &self.u), ("v", &self.v)] {
            for p in &is.pieces {
                s.push_str(&format!(
                    "{} type {} power {} verts {}\n",
                    tag,
                    p.ty,
                    p.power,
                    p.verts.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
                ));
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Shape> {
        let mut vtypes: Vec<usize> = vec![];
        let mut edges: Vec<Edge> = vec![];
        let mut upieces: Vec<Piece> = vec![];
        let mut vpieces: Vec<Piece> = vec![];
        let mut ordered = false;
        let mut started = false;
        for line in text.lines() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            match toks[0] {
                "shape" => started = true,
                "ordered" => ordered = toks.get(1) == Some(&"1"),
                "vertices" => {
                    vtypes = toks[1..]
                        .iter()
                        .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(e.to_string())))
                        .collect::<Result<_>>()?;
                }
                "edge" => {
                    let lab_pos = toks
                        .iter()
                        .position(|&t| t == "label")
                        .ok_or_else(|| Error::Parse("edge line missing label".into()))?;
                    let ends = toks[1..lab_pos]
                        .iter()
                        .map(|t| t.parse::<u32>().map_err(|e| Error::Parse(e.to_string())))
                        .collect::<Result<_>>()?;
                    let label = toks[lab_pos + 1]
                        .parse::<u32>()
                        .map_err(|e| Error::Parse(e.to_string()))?;
                    let mult = toks[lab_pos + 3]
                        .parse::<u32>()
                        .map_err(|e| Error::Parse(e.to_string()))?;
                    edges.push(Edge { ends, label, mult });
                }
                "u" | "v" => {
                    let ty = toks[2].parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?;
                    let power =
                        toks[4].parse::<u32>().map_err(|e| Error::Parse(e.to_string()))?;
                    let verts = toks[6..]
                        .iter()
                        .map(|t| t.parse::<u32>().map_err(|e| Error::Parse(e.to_string())))
                        .collect::<Result<_>>()?;
                    let piece = Piece { ty, power, verts };
                    if toks[0] == "u" {
                        upieces.push(piece);
                    } else {
                        vpieces.push(piece);
                    }
                }
                "end" => break,
                other => return Err(Error::Parse(format!("unknown shape line: {other}"))),
            }
        }
        if !started {
            return Err(Error::Parse("missing shape header".into()));
        }
        Shape::new(vtypes, edges, IndexShape::new(upieces)?, IndexShape::new(vpieces)?, ordered)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn single_edge_shape() -> Shape {
        // U = (u), V = (v), one edge u-v.
        Shape::new(
            vec![0, 0],
            vec![Edge { ends: vec![0, 1], label: 1, mult: 1 }],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![1] }]).unwrap(),
            false,
        )
        .unwrap()
    }

    pub(crate) fn path_shape() -> Shape {
        // U = (u), V = (v), path u-w-v.
        Shape::new(
            vec![0, 0, 0],
            vec![
                Edge { ends: vec![0, 2], label: 1, mult: 1 },
                Edge { ends: vec![1, 2], label: 1, mult: 1 },
            ],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![1] }]).unwrap(),
            false,
        )
        .unwrap()
    }

    fn id_u(k: usize) -> Shape {
        let is = IndexShape::new(vec![Piece {
            ty: 0,
            power: 1,
            verts: (0..k as u32).collect(),
        }])
        .unwrap();
        Shape::new(vec![0; k], vec![], is.clone(), is, false).unwrap()
    }

    #[test]
    fn identity_is_neutral_for_composition() {
        let e = single_edge_shape();
        let id = id_u(1);
        let l = id.compose(&e).unwrap();
        let r = e.compose(&id).unwrap();
        assert!(l.equivalent(&e));
        assert!(r.equivalent(&e));
    }

    #[test]
    fn edge_composed_with_transpose_is_path() {
        let e = single_edge_shape();
        let c = e.compose(&e.transpose()).unwrap();
        assert!(c.equivalent(&path_shape().canonical_shape()) || c.equivalent(&path_shape()));
        assert_eq!(c.nv(), 3);
    }

    #[test]
    fn transpose_involution_and_product_rule() {
        let e = single_edge_shape();
        let p = path_shape();
        assert!(e.transpose().transpose().equivalent(&e));
        let c = e.compose(&p).unwrap();
        let ct = c.transpose();
        let alt = p.transpose().compose(&e.transpose()).unwrap();
        assert!(ct.equivalent(&alt));
    }

    #[test]
    fn properness_rules() {
        let id = id_u(2);
        assert!(id.is_proper());
        // Isolated vertex outside U u V.
        let s = Shape::new(
            vec![0, 0],
            vec![],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            false,
        )
        .unwrap();
        assert!(!s.is_proper());
        // Multi-edge.
        let m = Shape::new(
            vec![0, 0],
            vec![Edge { ends: vec![0, 1], label: 1, mult: 2 }],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![1] }]).unwrap(),
            false,
        )
        .unwrap();
        assert!(!m.is_proper());
    }

    #[test]
    fn index_shape_aut_sizes() {
        let one = IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0, 1, 2] }]).unwrap();
        assert_eq!(one.aut_size(), 6);
        let two = IndexShape::new(vec![
            Piece { ty: 0, power: 1, verts: vec![0, 1] },
            Piece { ty: 1, power: 1, verts: vec![2, 3] },
        ])
        .unwrap();
        assert_eq!(two.aut_size(), 4);
        assert_eq!(IndexShape::empty().aut_size(), 1);
    }

    #[test]
    fn shape_aut_sizes() {
        // Path u-w-v: all vertices pinned by refinement.
        assert_eq!(path_shape().aut_size(), 1);
        // Two interchangeable middle vertices joined identically to u and v.
        let s = Shape::new(
            vec![0, 0, 0, 0],
            vec![
                Edge { ends: vec![0, 2], label: 1, mult: 1 },
                Edge { ends: vec![1, 2], label: 1, mult: 1 },
                Edge { ends: vec![0, 3], label: 1, mult: 1 },
                Edge { ends: vec![1, 3], label: 1, mult: 1 },
            ],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![1] }]).unwrap(),
            false,
        )
        .unwrap();
        assert_eq!(s.aut_size(), 2);
    }

    #[test]
    fn canonical_form_identifies_renamings() {
        let p = path_shape();
        // Rename vertices: 0->2, 1->0, 2->1.
        let renamed = p.relabeled(&[2, 0, 1]);
        assert_eq!(p.canonical_key(), renamed.canonical_key());
        assert!(p.canonical_key() != single_edge_shape().canonical_key());
        // Canonicalization is idempotent.
        let c = p.canonical_shape();
        assert_eq!(c.canonical_key(), p.canonical_key());
        assert_eq!(c.canonical_shape(), c);
    }

    #[test]
    fn weight_order_realizes_perturbation() {
        let table = TypeTable { sizes: vec![100, 100] };
        let a = Weight { counts: vec![1, 0] };
        let b = Weight { counts: vec![0, 1] };
        // Equal evaluated weight, tie broken lexicographically.
        assert_ne!(a.cmp_in(&b, &table), std::cmp::Ordering::Equal);
        let c = Weight { counts: vec![2, 0] };
        assert_eq!(a.cmp_in(&c, &table), std::cmp::Ordering::Less);
        let table2 = TypeTable { sizes: vec![8, 64] };
        // 8^2 = 64^1.
        let d = Weight { counts: vec![2, 0] };
        let e = Weight { counts: vec![0, 1] };
        assert_eq!(cmp_pow_products(&d.counts, &e.counts, &table2), std::cmp::Ordering::Equal);
        assert_ne!(d.cmp_in(&e, &table2), std::cmp::Ordering::Equal);
    }

    #[test]
    fn enumeration_counts_small() {
        // z = 0: only the empty shape.
        let cfg0 = EnumConfig::simplified(0, 2);
        assert_eq!(enumerate_shapes(&cfg0).unwrap().len(), 1);
        // z = 1 in the simplified setting: within the crude 5 * 2 bound.
        let cfg1 = EnumConfig::simplified(1, 2);
        let shapes = enumerate_shapes(&cfg1).unwrap();
        assert!(!shapes.is_empty());
        assert!(shapes.len() <= 10, "bound 5^1 * 2^1 violated: {}", shapes.len());
        for s in &shapes {
            assert!(s.is_proper());
        }
    }

    #[test]
    fn enumeration_matches_naive_generator_at_three_vertices() {
        // Independent route: enumerate raw (graph, U, V) candidates without
        // type-sorting or dedupe shortcuts, then count pairwise-inequivalent
        // shapes by brute-force isomorphism search.
        let cfg = EnumConfig::simplified(3, 3);
        let fast = enumerate_shapes(&cfg).unwrap();
        let mut naive: Vec<Shape> = Vec::new();
        for nv in 0..=3usize {
            let mut slots = Vec::new();
            for i in 0..nv as u32 {
                for j in (i + 1)..nv as u32 {
                    slots.push(vec![i, j]);
                }
            }
            for mask in 0..(1u32 << slots.len()) {
                let edges: Vec<Edge> = slots
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, ends)| Edge { ends: ends.clone(), label: 1, mult: 1 })
                    .collect();
                let verts: Vec<u32> = (0..nv as u32).collect();
                let mut tuples: Vec<Vec<u32>> = vec![vec![]];
                for len in 1..=nv.min(3) {
                    for combo in combinations(&verts, len) {
                        for perm in permutations(&combo) {
                            tuples.push(perm);
                        }
                    }
                }
                for ut in &tuples {
                    for vt in &tuples {
                        let mk = |t: &Vec<u32>| {
                            IndexShape::new(
                                if t.is_empty() {
                                    vec![]
                                } else {
                                    vec![Piece { ty: 0, power: 1, verts: t.clone() }]
                                },
                            )
                            .unwrap()
                        };
                        if let Ok(s) =
                            Shape::new(vec![0; nv], edges.clone(), mk(ut), mk(vt), false)
                        {
                            if s.is_proper() {
                                naive.push(s);
                            }
                        }
                    }
                }
            }
        }
        let mut keys: BTreeSet<Vec<u64>> = BTreeSet::new();
        for s in &naive {
            keys.insert(s.canonical_key());
        }
        assert_eq!(keys.len(), fast.len());
    }

    #[test]
    fn canonical_equality_matches_brute_force_isomorphism() {
        // For shapes with <= 4 vertices, canonical equality must coincide
        // with existence of an explicit isomorphism.
        let cfg = EnumConfig::simplified(3, 2);
        let shapes = enumerate_shapes(&cfg).unwrap();
        let iso = |a: &Shape, b: &Shape| -> bool {
            if a.nv() != b.nv() {
                return false;
            }
            let n = a.nv();
            let mut perm: Vec<u32> = (0..n as u32).collect();
            loop {
                if &a.relabeled(&perm) == &b.canonical_shape().relabeled(
                    &(0..n as u32).collect::<Vec<_>>(),
                ) || a.relabeled(&perm) == *b
                {
                    return true;
                }
                if !next_permutation(&mut perm) {
                    return false;
                }
            }
        };
        for (i, a) in shapes.iter().enumerate() {
            for b in shapes.iter().skip(i + 1) {
                assert!(
                    !iso(a, b),
                    "enumeration produced isomorphic duplicates:\n{}\n{}",
                    a.to_text(),
                    b.to_text()
                );
            }
            // And each shape is isomorphic to a relabeling of itself.
            let m: Vec<u32> = (0..a.nv() as u32).rev().collect();
            assert!(iso(a, &a.relabeled(&m)));
        }
    }

    #[test]
    fn text_round_trip() {
        let p = path_shape().canonical_shape();
        let t = p.to_text();
        let q = Shape::from_text(&t).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn ribbon_roundtrip_and_compose() {
        let e = single_edge_shape();
        let r1 = Ribbon::from_shape(&e, &[1, 2]).unwrap();
        assert!(r1.to_shape().equivalent(&e));
        let e2 = single_edge_shape();
        let r2 = Ribbon::from_shape(&e2, &[2, 3]).unwrap();
        assert!(r1.composable_with(&r2));
        assert!(r1.properly_composable_with(&r2));
        let c = r1.compose(&r2).unwrap();
        assert_eq!(c.verts.len(), 3);
        // Unexpected intersection.
        let r3 = Ribbon::from_shape(&e2, &[2, 1]).unwrap();
        assert!(r1.composable_with(&r3));
        assert!(!r1.properly_composable_with(&r3));
    }
}
