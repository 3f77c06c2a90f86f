//! Vertex separators, leftmost/rightmost minimum-weight separators,
//! left/middle/right decomposition, the max-flow dual, and enumeration of
//! the left, middle, and gamma shape families.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::Error;
use crate::shape::{enumerate_shapes, EnumConfig, IndexShape, Piece, Shape, TypeTable, Weight};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Separator {
    pub set: BTreeSet<u32>,
    pub weight: Weight,
}

/// Adjacency lists: vertices are adjacent when they share a hyperedge.
/// `drop_multi` removes edges with multiplicity at least 2.
fn adjacency(shape: &Shape, drop_multi: bool) -> Vec<BTreeSet<u32>> {
    let mut adj = vec![BTreeSet::new(); shape.nv()];
    for e in &shape.edges {
        if drop_multi && e.mult >= 2 {
            continue;
        }
        for (i, &a) in e.ends.iter().enumerate() {
            for &b in &e.ends[i + 1..] {
                adj[a as usize].insert(b);
                adj[b as usize].insert(a);
            }
        }
    }
    adj
}

fn reachable_avoiding(
    adj: &[BTreeSet<u32>],
    start: impl IntoIterator<Item = u32>,
    avoid: &BTreeSet<u32>,
) -> BTreeSet<u32> {
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<u32> = VecDeque::new();
    for s in start {
        if !avoid.contains(&s) && seen.insert(s) {
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v as usize] {
            if !avoid.contains(&w) && seen.insert(w) {
                queue.push_back(w);
            }
        }
    }
    seen
}

/// Does `s` block every path from `us` to `vs` (length-0 paths included)?
pub fn is_separator_sets(
    shape: &Shape,
    s: &BTreeSet<u32>,
    us: &BTreeSet<u32>,
    vs: &BTreeSet<u32>,
    drop_multi: bool,
) -> bool {
    if us.intersection(vs).any(|x| !s.contains(x)) {
        return false;
    }
    let adj = adjacency(shape, drop_multi);
    let reach = reachable_avoiding(&adj, us.iter().copied(), s);
    vs.iter().all(|v| s.contains(v) || !reach.contains(v))
}

pub fn is_separator(shape: &Shape, s: &BTreeSet<u32>) -> bool {
    is_separator_sets(shape, s, &shape.u.vertex_set(), &shape.v.vertex_set(), false)
}

/// All minimum-weight separators of `us` and `vs`, found by testing every
/// vertex subset. Serves as the oracle for the direct constructions.
pub fn min_separators_bruteforce_sets(
    shape: &Shape,
    table: &TypeTable,
    us: &BTreeSet<u32>,
    vs: &BTreeSet<u32>,
    drop_multi: bool,
    cap: usize,
) -> Result<Vec<Separator>> {
    let n = shape.nv();
    if n > cap {
        return Err(Error::BruteForceCap(format!(
            "shape has {n} vertices, brute-force cap is {cap}"
        )));
    }
    let adj = adjacency(shape, drop_multi);
    let mut best: Vec<Separator> = Vec::new();
    for mask in 0u64..(1u64 << n) {
        let s: BTreeSet<u32> = (0..n as u32).filter(|&v| mask & (1 << v) != 0).collect();
        if us.intersection(vs).any(|x| !s.contains(x)) {
            continue;
        }
        let reach = reachable_avoiding(&adj, us.iter().copied(), &s);
        if !vs.iter().all(|v| s.contains(v) || !reach.contains(v)) {
            continue;
        }
        let w = shape.weight_of(&s, table.t_max());
        match best.first() {
            None => best.push(Separator { set: s, weight: w }),
            Some(b) => match w.cmp_in(&b.weight, table) {
                Ordering::Less => {
                    best.clear();
                    best.push(Separator { set: s, weight: w });
                }
                Ordering::Equal => best.push(Separator { set: s, weight: w }),
                Ordering::Greater => {}
            },
        }
    }
    Ok(best)
}

pub fn min_separators_bruteforce(
    shape: &Shape,
    table: &TypeTable,
    cap: usize,
) -> Result<Vec<Separator>> {
    min_separators_bruteforce_sets(
        shape,
        table,
        &shape.u.vertex_set(),
        &shape.v.vertex_set(),
        false,
        cap,
    )
}

/// The minimum-weight separator `S` such that every path from `us` to any
/// other minimum separator intersects `S`. Existence and uniqueness hold
/// for every shape; both are checked here rather than assumed.
pub fn leftmost_min_separator_sets(
    shape: &Shape,
    table: &TypeTable,
    us: &BTreeSet<u32>,
    vs: &BTreeSet<u32>,
    drop_multi: bool,
    cap: usize,
) -> Result<Separator> {
    let mins = min_separators_bruteforce_sets(shape, table, us, vs, drop_multi, cap)?;
    let mut found: Option<Separator> = None;
    for cand in &mins {
        let dominates = mins
            .iter()
            .all(|other| is_separator_sets(shape, &cand.set, us, &other.set, drop_multi));
        if dominates {
            if found.is_some() {
                return Err(Error::InvalidShape(
                    "leftmost minimum separator is not unique".into(),
                ));
            }
            found = Some(cand.clone());
        }
    }
    found.ok_or_else(|| Error::InvalidShape("no leftmost minimum separator found".into()))
}

pub fn leftmost_min_separator(shape: &Shape, table: &TypeTable, cap: usize) -> Result<Separator> {
    leftmost_min_separator_sets(
        shape,
        table,
        &shape.u.vertex_set(),
        &shape.v.vertex_set(),
        false,
        cap,
    )
}

pub fn rightmost_min_separator(shape: &Shape, table: &TypeTable, cap: usize) -> Result<Separator> {
    leftmost_min_separator_sets(
        shape,
        table,
        &shape.v.vertex_set(),
        &shape.u.vertex_set(),
        false,
        cap,
    )
}

/// Leftmost minimum separator once all edges of multiplicity >= 2 are
/// deleted.
pub fn minsep_excluding_multi(shape: &Shape, table: &TypeTable, cap: usize) -> Result<Separator> {
    leftmost_min_separator_sets(
        shape,
        table,
        &shape.u.vertex_set(),
        &shape.v.vertex_set(),
        true,
        cap,
    )
}

/// Leftmost minimum separator with multiplicity >= 2 edges kept.
pub fn minsep_including_multi(shape: &Shape, table: &TypeTable, cap: usize) -> Result<Separator> {
    leftmost_min_separator(shape, table, cap)
}

/// Vertices outside `U u V` all of whose incident edges have multiplicity
/// at least 2. Isolated extra vertices qualify vacuously.
pub fn high_multiplicity_interior(shape: &Shape) -> BTreeSet<u32> {
    let uv = shape.uv_union();
    (0..shape.nv() as u32)
        .filter(|&v| !uv.contains(&v))
        .filter(|&v| {
            shape.edges.iter().filter(|e| e.ends.contains(&v)).all(|e| e.mult >= 2)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Flow graph
// ---------------------------------------------------------------------------

/// Directed flow network with vertex capacities realized by in/out
/// doubling; the max-flow value equals the minimum separator weight.
pub struct FlowGraph {
    node_count: usize,
    /// (from, to, capacity); reverse residual arcs are implicit.
    arcs: Vec<(usize, usize, Weight)>,
    source: usize,
    sink: usize,
    t_max: usize,
}

impl FlowGraph {
    /// `v_in -> v_out` with capacity w(v); for every pair inside a
    /// multiplicity-1 edge, arcs of infinite capacity both ways. Infinite
    /// capacity is encoded as total vertex weight plus one.
    pub fn build(shape: &Shape, table: &TypeTable) -> FlowGraph {
        let n = shape.nv();
        let t_max = table.t_max();
        let v_in = |v: usize| 2 * v;
        let v_out = |v: usize| 2 * v + 1;
        let source = 2 * n;
        let sink = 2 * n + 1;
        let mut inf = shape.vertex_weight(t_max);
        inf.counts[0] += 1;
        let mut arcs = Vec::new();
        for v in 0..n {
            let mut w = Weight::zero(t_max);
            w.counts[shape.vtypes[v]] += 1;
            arcs.push((v_in(v), v_out(v), w));
        }
        let adj = adjacency(shape, true);
        for (v, nbrs) in adj.iter().enumerate() {
            for &w in nbrs {
                arcs.push((v_out(v), v_in(w as usize), inf.clone()));
            }
        }
        for &u in &shape.u.vertex_set() {
            arcs.push((source, v_in(u as usize), inf.clone()));
        }
        for &v in &shape.v.vertex_set() {
            arcs.push((v_out(v as usize), sink, inf.clone()));
        }
        FlowGraph { node_count: 2 * n + 2, arcs, source, sink, t_max }
    }

    /// Max-flow value by augmenting paths over exact weight arithmetic.
    /// Terminates because flow values live on the integer count lattice
    /// and strictly increase.
    pub fn max_flow_value(&self, table: &TypeTable) -> Weight {
        let m = self.arcs.len();
        let mut cap: Vec<Weight> = self.arcs.iter().map(|a| a.2.clone()).collect();
        cap.extend((0..m).map(|_| Weight::zero(self.t_max)));
        let mut heads: Vec<usize> = Vec::with_capacity(2 * m);
        let mut tails: Vec<usize> = Vec::with_capacity(2 * m);
        for &(from, to, _) in &self.arcs {
            heads.push(to);
            tails.push(from);
        }
        for &(from, to, _) in &self.arcs {
            heads.push(from);
            tails.push(to);
        }
        let mut out_arcs: Vec<Vec<usize>> = vec![vec![]; self.node_count];
        for (i, &t) in tails.iter().enumerate() {
            out_arcs[t].push(i);
        }
        let zero = Weight::zero(self.t_max);
        let mut total = Weight::zero(self.t_max);
        loop {
            let mut pred: Vec<Option<usize>> = vec![None; self.node_count];
            let mut seen = vec![false; self.node_count];
            seen[self.source] = true;
            let mut queue = VecDeque::from([self.source]);
            'bfs: while let Some(v) = queue.pop_front() {
                for &ai in &out_arcs[v] {
                    if cap[ai].cmp_in(&zero, table) == Ordering::Greater {
                        let to = heads[ai];
                        if !seen[to] {
                            seen[to] = true;
                            pred[to] = Some(ai);
                            if to == self.sink {
                                break 'bfs;
                            }
                            queue.push_back(to);
                        }
                    }
                }
            }
            if !seen[self.sink] {
                return total;
            }
            let mut bottleneck: Option<Weight> = None;
            let mut v = self.sink;
            while v != self.source {
                let ai = pred[v].unwrap();
                bottleneck = Some(match bottleneck {
                    None => cap[ai].clone(),
                    Some(b) => {
                        if cap[ai].cmp_in(&b, table) == Ordering::Less {
                            cap[ai].clone()
                        } else {
                            b
                        }
                    }
                });
                v = tails[ai];
            }
            let b = bottleneck.unwrap();
            let mut v = self.sink;
            while v != self.source {
                let ai = pred[v].unwrap();
                cap[ai] = cap[ai].sub(&b);
                let rev = if ai < m { ai + m } else { ai - m };
                cap[rev] = cap[rev].add(&b);
                v = tails[ai];
            }
            total = total.add(&b);
        }
    }
}

// ---------------------------------------------------------------------------
// Decomposition into left, middle, and right parts
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub left: Shape,
    pub middle: Shape,
    /// The right part, i.e. the transpose of a left shape.
    pub right: Shape,
    pub order_s: Vec<u32>,
    pub order_t: Vec<u32>,
}

/// Index shape on a separator given an ordering of its vertices: one
/// power-1 piece per type, tuple order inherited from the ordering.
fn separator_index_shape(shape: &Shape, order: &[u32], t_max: usize) -> IndexShape {
    let mut pieces: Vec<Piece> = Vec::new();
    for t in 0..t_max {
        let verts: Vec<u32> =
            order.iter().copied().filter(|&v| shape.vtypes[v as usize] == t).collect();
        if !verts.is_empty() {
            pieces.push(Piece { ty: t, power: 1, verts });
        }
    }
    IndexShape { pieces }
}

/// Vertices of the part anchored at `start`: reachable from `start` with
/// only the final vertex allowed to lie in `block`, together with all of
/// `block` itself.
fn part_vertices(shape: &Shape, start: &BTreeSet<u32>, block: &BTreeSet<u32>) -> BTreeSet<u32> {
    let adj = adjacency(shape, false);
    let interior = reachable_avoiding(&adj, start.iter().copied(), block);
    let mut out: BTreeSet<u32> = interior;
    out.extend(start.iter().copied());
    out.extend(block.iter().copied());
    out
}

/// Decompose along the leftmost and rightmost minimum-weight separators
/// with the given orderings (defaults: ascending vertex id).
pub fn decompose(
    shape: &Shape,
    table: &TypeTable,
    order_s: Option<Vec<u32>>,
    order_t: Option<Vec<u32>>,
    cap: usize,
) -> Result<Decomposition> {
    let s = leftmost_min_separator(shape, table, cap)?;
    let t = rightmost_min_separator(shape, table, cap)?;
    let o_s = order_s.unwrap_or_else(|| s.set.iter().copied().collect());
    let o_t = order_t.unwrap_or_else(|| t.set.iter().copied().collect());
    if o_s.iter().copied().collect::<BTreeSet<_>>() != s.set
        || o_t.iter().copied().collect::<BTreeSet<_>>() != t.set
    {
        return Err(Error::InvalidParam("ordering does not list the separator".into()));
    }
    let t_max = table.t_max();
    let us = shape.u.vertex_set();
    let vs = shape.v.vertex_set();

    let left_verts = part_vertices(shape, &us, &s.set);
    let right_verts = part_vertices(shape, &vs, &t.set);

    let edge_in = |e: &crate::shape::Edge, verts: &BTreeSet<u32>, sep: &BTreeSet<u32>| -> bool {
        e.ends.iter().all(|x| verts.contains(x)) && !e.ends.iter().all(|x| sep.contains(x))
    };
    let left_edges: Vec<_> =
        shape.edges.iter().filter(|e| edge_in(e, &left_verts, &s.set)).cloned().collect();
    let right_edges: Vec<_> =
        shape.edges.iter().filter(|e| edge_in(e, &right_verts, &t.set)).cloned().collect();
    let mid_edges: Vec<_> = shape
        .edges
        .iter()
        .filter(|e| !edge_in(e, &left_verts, &s.set) && !edge_in(e, &right_verts, &t.set))
        .cloned()
        .collect();
    let mut mid_verts: BTreeSet<u32> =
        mid_edges.iter().flat_map(|e| e.ends.iter().copied()).collect();
    mid_verts.extend(s.set.iter().copied());
    mid_verts.extend(t.set.iter().copied());

    let sub_shape = |verts: &BTreeSet<u32>,
                     edges: &[crate::shape::Edge],
                     u_is: IndexShape,
                     v_is: IndexShape|
     -> Result<Shape> {
        let ordered: Vec<u32> = verts.iter().copied().collect();
        let remap: BTreeMap<u32, u32> =
            ordered.iter().enumerate().map(|(i, &v)| (v, i as u32)).collect();
        let vtypes: Vec<usize> = ordered.iter().map(|&v| shape.vtypes[v as usize]).collect();
        let edges: Vec<crate::shape::Edge> = edges
            .iter()
            .map(|e| crate::shape::Edge {
                ends: e.ends.iter().map(|x| remap[x]).collect(),
                label: e.label,
                mult: e.mult,
            })
            .collect();
        let map_is = |is: IndexShape| IndexShape {
            pieces: is
                .pieces
                .into_iter()
                .map(|p| Piece {
                    ty: p.ty,
                    power: p.power,
                    verts: p.verts.iter().map(|x| remap[x]).collect(),
                })
                .collect(),
        };
        Shape::new(vtypes, edges, map_is(u_is), map_is(v_is), shape.ordered_edges)
    };

    let s_is = separator_index_shape(shape, &o_s, t_max);
    let t_is = separator_index_shape(shape, &o_t, t_max);
    let left = sub_shape(&left_verts, &left_edges, shape.u.clone(), s_is.clone())?;
    let middle = sub_shape(&mid_verts, &mid_edges, s_is, t_is.clone())?;
    let right = sub_shape(&right_verts, &right_edges, t_is, shape.v.clone())?;
    Ok(Decomposition { left, middle, right, order_s: o_s, order_t: o_t })
}

/// Left shape: proper, `V` is both the leftmost and rightmost minimum
/// separator, all vertices outside `V` reachable from `U` avoiding `V`,
/// and no edges entirely inside `V`.
pub fn is_left_shape(shape: &Shape, table: &TypeTable, cap: usize) -> Result<bool> {
    if !shape.is_proper() {
        return Ok(false);
    }
    let vset = shape.v.vertex_set();
    if shape.edges.iter().any(|e| e.ends.iter().all(|x| vset.contains(x))) {
        return Ok(false);
    }
    let lm = leftmost_min_separator(shape, table, cap)?;
    let rm = rightmost_min_separator(shape, table, cap)?;
    if lm.set != vset || rm.set != vset {
        return Ok(false);
    }
    let adj = adjacency(shape, false);
    let us = shape.u.vertex_set();
    let reach = reachable_avoiding(&adj, us.iter().copied(), &vset);
    Ok((0..shape.nv() as u32)
        .all(|v| vset.contains(&v) || reach.contains(&v) || us.contains(&v)))
}

/// Proper middle shape: proper, `U` is the leftmost and `V` the rightmost
/// minimum-weight separator.
pub fn is_proper_middle_shape(shape: &Shape, table: &TypeTable, cap: usize) -> Result<bool> {
    if !shape.is_proper() {
        return Ok(false);
    }
    let lm = leftmost_min_separator(shape, table, cap)?;
    let rm = rightmost_min_separator(shape, table, cap)?;
    Ok(lm.set == shape.u.vertex_set() && rm.set == shape.v.vertex_set())
}

// ---------------------------------------------------------------------------
// Families
// ---------------------------------------------------------------------------

/// Structural pattern of an index shape: sorted (type, power, length).
pub type IndexPattern = Vec<(usize, u32, usize)>;

pub fn pattern_of(is: &IndexShape) -> IndexPattern {
    is.pieces.iter().map(|p| (p.ty, p.power, p.verts.len())).collect()
}

pub fn pattern_weight(pat: &IndexPattern, t_max: usize) -> Weight {
    let mut w = Weight::zero(t_max);
    for &(t, _, len) in pat {
        w.counts[t] += len as i64;
    }
    w
}

pub fn pattern_aut(pat: &IndexPattern) -> u64 {
    pat.iter().map(|&(_, _, len)| crate::shape::factorial(len as u64)).product()
}

pub fn pattern_label(pat: &IndexPattern) -> String {
    if pat.is_empty() {
        return "empty".into();
    }
    pat.iter()
        .map(|&(t, p, len)| format!("t{t}p{p}x{len}"))
        .collect::<Vec<_>>()
        .join("+")
}

/// Caps replicating the moment-matrix truncation.
#[derive(Clone, Debug)]
pub struct FamilyConfig {
    pub table: TypeTable,
    pub d_sos: u32,
    pub d_v: usize,
    pub d_e: u32,
    pub arity: usize,
    pub ordered_edges: bool,
    pub bipartite: Option<(usize, usize)>,
    /// Allowed types for matrix-index pieces (solution-variable types).
    pub index_types: Option<Vec<usize>>,
    pub allow_powers: bool,
    pub max_edges: Option<usize>,
    pub cap: usize,
}

/// The shape families of the factored moment-matrix representation.
pub struct ShapeFamilies {
    pub cfg: FamilyConfig,
    /// Index patterns of the moment-matrix rows (monomials up to D_sos/2).
    pub row_patterns: Vec<IndexPattern>,
    /// Power-one patterns of weight at most the maximum row weight.
    pub mid_patterns: Vec<IndexPattern>,
    /// Left shapes keyed by the pattern of `V_sigma`.
    pub left: BTreeMap<IndexPattern, Vec<Shape>>,
    /// Non-trivial proper middle shapes keyed by the common pattern of
    /// `U_tau = V_tau`.
    pub middle: BTreeMap<IndexPattern, Vec<Shape>>,
    /// Non-trivial left shapes with both index patterns in `mid_patterns`.
    pub gammas: Vec<Shape>,
}

impl ShapeFamilies {
    pub fn build(cfg: FamilyConfig) -> Result<ShapeFamilies> {
        let t_max = cfg.table.t_max();
        let row_patterns = enumerate_row_patterns(&cfg);
        let w_max = row_patterns
            .iter()
            .map(|p| pattern_weight(p, t_max))
            .max_by(|a, b| a.cmp_in(b, &cfg.table))
            .unwrap_or_else(|| Weight::zero(t_max));
        let mid_patterns = enumerate_mid_patterns(&cfg, &w_max);

        let mid_max_count =
            mid_patterns.iter().map(|p| p.iter().map(|x| x.2).sum::<usize>()).max().unwrap_or(0);
        let enum_cfg = EnumConfig {
            t_max,
            max_vertices: cfg.d_v,
            max_label: cfg.d_e,
            arity: cfg.arity,
            ordered_edges: cfg.ordered_edges,
            bipartite: cfg.bipartite,
            max_index_degree: (cfg.d_sos / 2).max(mid_max_count as u32),
            allow_powers: cfg.allow_powers,
            index_types: None,
            tuple_orders: true,
            require_proper: true,
            max_edges: cfg.max_edges,
            cap: cfg.cap,
        };
        let all = enumerate_shapes(&enum_cfg)?;
        let row_set: BTreeSet<IndexPattern> = row_patterns.iter().cloned().collect();
        let mid_set: BTreeSet<IndexPattern> = mid_patterns.iter().cloned().collect();

        let mut left: BTreeMap<IndexPattern, Vec<Shape>> = BTreeMap::new();
        let mut middle: BTreeMap<IndexPattern, Vec<Shape>> = BTreeMap::new();
        let mut gammas: Vec<Shape> = Vec::new();
        let brute = 14usize;
        for s in &all {
            let up = pattern_of(&s.u);
            let vp = pattern_of(&s.v);
            let is_left = is_left_shape(s, &cfg.table, brute)?;
            if is_left && row_set.contains(&up) && mid_set.contains(&vp) {
                left.entry(vp.clone()).or_default().push(s.clone());
            }
            if is_left && !s.is_trivial() && mid_set.contains(&up) && mid_set.contains(&vp) {
                gammas.push(s.clone());
            }
            if up == vp
                && mid_set.contains(&up)
                && !s.is_trivial()
                && is_proper_middle_shape(s, &cfg.table, brute)?
            {
                middle.entry(up).or_default().push(s.clone());
            }
        }
        for p in &mid_patterns {
            left.entry(p.clone()).or_default();
            middle.entry(p.clone()).or_default();
        }
        Ok(ShapeFamilies { cfg, row_patterns, mid_patterns, left, middle, gammas })
    }

    pub fn left_of(&self, pat: &IndexPattern) -> &[Shape] {
        self.left.get(pat).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn middle_of(&self, pat: &IndexPattern) -> &[Shape] {
        self.middle.get(pat).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn gamma_uv(&self, u: &IndexPattern, v: &IndexPattern) -> Vec<&Shape> {
        let t = self.cfg.table.t_max();
        if pattern_weight(u, t).cmp_in(&pattern_weight(v, t), &self.cfg.table)
            != Ordering::Greater
        {
            return vec![];
        }
        self.gammas
            .iter()
            .filter(|g| pattern_of(&g.u) == *u && pattern_of(&g.v) == *v)
            .collect()
    }

    pub fn gamma_u_star(&self, u: &IndexPattern) -> Vec<&Shape> {
        self.gammas.iter().filter(|g| pattern_of(&g.u) == *u).collect()
    }

    pub fn gamma_star_v(&self, v: &IndexPattern) -> Vec<&Shape> {
        self.gammas.iter().filter(|g| pattern_of(&g.v) == *v).collect()
    }
}

/// Monomial index patterns with degree at most `d_sos / 2`.
pub fn enumerate_row_patterns(cfg: &FamilyConfig) -> Vec<IndexPattern> {
    let types: Vec<usize> = match &cfg.index_types {
        Some(t) => t.clone(),
        None => (0..cfg.table.t_max()).collect(),
    };
    let cap = cfg.d_sos / 2;
    let max_power = if cfg.allow_powers { cap.max(1) } else { 1 };
    let mut kinds: Vec<(usize, u32)> = Vec::new();
    for &t in &types {
        for p in 1..=max_power {
            kinds.push((t, p));
        }
    }
    fn rec(
        kinds: &[(usize, u32)],
        i: usize,
        left: i64,
        cur: &mut IndexPattern,
        out: &mut Vec<IndexPattern>,
    ) {
        if i == kinds.len() {
            let mut pat = cur.clone();
            pat.sort();
            out.push(pat);
            return;
        }
        rec(kinds, i + 1, left, cur, out);
        let (t, p) = kinds[i];
        let mut len = 1i64;
        while len * p as i64 <= left {
            cur.push((t, p, len as usize));
            rec(kinds, i + 1, left - len * p as i64, cur, out);
            cur.pop();
            len += 1;
        }
    }
    let mut out = Vec::new();
    rec(&kinds, 0, cap as i64, &mut Vec::new(), &mut out);
    out.sort();
    out.dedup();
    out
}

/// Power-one index patterns with weight at most `w_max`.
fn enumerate_mid_patterns(cfg: &FamilyConfig, w_max: &Weight) -> Vec<IndexPattern> {
    let t_max = cfg.table.t_max();
    let mut out: Vec<IndexPattern> = Vec::new();
    let bound = cfg.d_v.max(cfg.d_sos as usize);
    let mut counts = vec![0usize; t_max];
    loop {
        let mut w = Weight::zero(t_max);
        for (t, &c) in counts.iter().enumerate() {
            w.counts[t] = c as i64;
        }
        if w.cmp_in(w_max, &cfg.table) != Ordering::Greater {
            let pat: IndexPattern = counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(t, &c)| (t, 1u32, c))
                .collect();
            out.push(pat);
        }
        let mut i = 0;
        loop {
            if i == t_max {
                out.sort();
                out.dedup();
                return out;
            }
            counts[i] += 1;
            if counts[i] <= bound {
                break;
            }
            counts[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::{Edge, IndexShape, Piece};

    fn single_type() -> TypeTable {
        TypeTable::single(100)
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

    fn path3() -> Shape {
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
        let is = IndexShape::new(vec![Piece { ty: 0, power: 1, verts: (0..k as u32).collect() }])
            .unwrap();
        Shape::new(vec![0; k], vec![], is.clone(), is, false).unwrap()
    }

    #[test]
    fn brute_force_separators_on_edge_and_path() {
        let t = single_type();
        let mins = min_separators_bruteforce(&edge_shape(), &t, 14).unwrap();
        let sets: BTreeSet<BTreeSet<u32>> = mins.into_iter().map(|s| s.set).collect();
        assert_eq!(sets, BTreeSet::from([BTreeSet::from([0u32]), BTreeSet::from([1u32])]));
        let mins = min_separators_bruteforce(&path3(), &t, 14).unwrap();
        let sets: BTreeSet<BTreeSet<u32>> = mins.into_iter().map(|s| s.set).collect();
        assert_eq!(
            sets,
            BTreeSet::from([
                BTreeSet::from([0u32]),
                BTreeSet::from([1u32]),
                BTreeSet::from([2u32])
            ])
        );
        let id = id_u(2);
        let mins = min_separators_bruteforce(&id, &t, 14).unwrap();
        assert_eq!(mins.len(), 1);
        assert_eq!(mins[0].set, BTreeSet::from([0u32, 1]));
    }

    #[test]
    fn leftmost_and_rightmost_selection() {
        let t = single_type();
        let lm = leftmost_min_separator(&edge_shape(), &t, 14).unwrap();
        let rm = rightmost_min_separator(&edge_shape(), &t, 14).unwrap();
        assert_eq!(lm.set, BTreeSet::from([0u32]));
        assert_eq!(rm.set, BTreeSet::from([1u32]));
        let lm = leftmost_min_separator(&path3(), &t, 14).unwrap();
        let rm = rightmost_min_separator(&path3(), &t, 14).unwrap();
        assert_eq!(lm.set, BTreeSet::from([0u32]));
        assert_eq!(rm.set, BTreeSet::from([1u32]));
        let id = id_u(1);
        assert_eq!(leftmost_min_separator(&id, &t, 14).unwrap().set, BTreeSet::from([0u32]));
    }

    #[test]
    fn variant_separators_with_multiplicity() {
        let t = single_type();
        let m = Shape::new(
            vec![0, 0],
            vec![Edge { ends: vec![0, 1], label: 1, mult: 2 }],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![1] }]).unwrap(),
            false,
        )
        .unwrap();
        let smin = minsep_excluding_multi(&m, &t, 14).unwrap();
        let smax = minsep_including_multi(&m, &t, 14).unwrap();
        // Deleting the doubled edge disconnects U from V entirely.
        assert!(smin.set.is_empty());
        assert_eq!(smax.set.len(), 1);
        let p = path3();
        assert_eq!(
            minsep_excluding_multi(&p, &t, 14).unwrap().set,
            minsep_including_multi(&p, &t, 14).unwrap().set
        );
        let w = Shape::new(
            vec![0, 0, 0],
            vec![
                Edge { ends: vec![0, 1], label: 1, mult: 1 },
                Edge { ends: vec![1, 2], label: 1, mult: 2 },
            ],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            false,
        )
        .unwrap();
        assert_eq!(high_multiplicity_interior(&w), BTreeSet::from([2u32]));
    }

    #[test]
    fn flow_value_matches_min_separator_weight() {
        let t = single_type();
        for s in [edge_shape(), path3(), id_u(2)] {
            let flow = FlowGraph::build(&s, &t).max_flow_value(&t);
            let min = min_separators_bruteforce(&s, &t, 14).unwrap();
            assert_eq!(flow, min[0].weight, "flow duality failed for {}", s.to_text());
        }
    }

    #[test]
    fn decomposition_recomposes() {
        let t = single_type();
        for s in [edge_shape(), path3(), id_u(2)] {
            let d = decompose(&s, &t, None, None, 14).unwrap();
            let recomposed = d.left.compose(&d.middle).unwrap().compose(&d.right).unwrap();
            assert!(recomposed.equivalent(&s), "recomposition failed for {}", s.to_text());
            assert!(is_left_shape(&d.left, &t, 14).unwrap());
            assert!(is_left_shape(&d.right.transpose(), &t, 14).unwrap());
            let m = &d.middle;
            assert!(is_proper_middle_shape(m, &t, 14).unwrap() || m.is_trivial());
        }
    }

    #[test]
    fn id_decomposes_into_identities() {
        let t = single_type();
        let id = id_u(2);
        let d = decompose(&id, &t, None, None, 14).unwrap();
        assert!(d.left.is_trivial());
        assert!(d.middle.is_trivial());
        assert!(d.right.is_trivial());
    }
}
