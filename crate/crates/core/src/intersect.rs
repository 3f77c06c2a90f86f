//! Intersection patterns: constraint-edge sets recording unexpected
//! vertex coincidences between composed ribbon parts, the collapsed
//! shapes they induce, their multiplicities, the exact correction
//! identity relating the factored and properly-composed sums, and the
//! weight tradeoff inequality.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::BigRational;

use crate::error::Error;
use crate::fourier::InputTensor;
use crate::machinery::{eval_m_fact, eval_m_orth, CoefficientMatrix};
use crate::matrix::RMat;
use crate::scalar::rat_int;
use crate::separators::{
    high_multiplicity_interior, is_left_shape, min_separators_bruteforce_sets,
    minsep_excluding_multi, Separator,
};
use crate::shape::{
    automorphism_list, Edge, IndexShape, MatrixIndex, Piece, Ribbon, Shape, TypeTable, Weight,
};
use crate::Result;

/// Which of the three parts a composed vertex belongs to (glue vertices
/// belong to two parts).
#[derive(Clone, Debug)]
struct PartMap {
    /// Composed vertex ids of each part.
    gamma: BTreeSet<u32>,
    tau: BTreeSet<u32>,
    gamma2: BTreeSet<u32>,
}

/// An intersection pattern on composable parts `gamma, tau, gamma2^T`:
/// the composed shape plus a non-empty transitive set of cross-part
/// constraint edges.
#[derive(Clone, Debug)]
pub struct IntersectionPattern {
    pub gamma: Shape,
    pub tau: Shape,
    pub gamma2t: Shape,
    pub composed: Shape,
    /// Sorted closed pair list (cliques per merged group).
    pub constraints: Vec<(u32, u32)>,
    /// Canonical key under the part-automorphism action.
    pub key: Vec<u64>,
}

/// Collapsed shape: composed vertices merged along the constraints, edge
/// multiset untouched. May be improper.
#[derive(Clone, Debug)]
pub struct CollapsedShape {
    pub shape: Shape,
    /// Composed vertex id -> collapsed vertex id.
    pub vertex_map: Vec<u32>,
}

fn compose_parts(gamma: &Shape, tau: &Shape, gamma2t: &Shape) -> Result<(Shape, PartMap)> {
    let (c1, tau_map) = gamma.compose_map(tau)?;
    let (c, g2_map) = c1.compose_map(gamma2t)?;
    let gamma_set: BTreeSet<u32> = (0..gamma.nv() as u32).collect();
    let tau_set: BTreeSet<u32> = tau_map.iter().copied().collect();
    let g2_set: BTreeSet<u32> = g2_map.iter().copied().collect();
    Ok((c, PartMap { gamma: gamma_set, tau: tau_set, gamma2: g2_set }))
}

fn close_constraints(pairs: &[(u32, u32)], n: usize) -> Vec<(u32, u32)> {
    // Union-find, then all intra-group pairs.
    let mut parent: Vec<u32> = (0..n as u32).collect();
    fn find(parent: &mut Vec<u32>, x: u32) -> u32 {
        let mut r = x;
        while parent[r as usize] != r {
            r = parent[r as usize];
        }
        let mut c = x;
        while parent[c as usize] != r {
            let next = parent[c as usize];
            parent[c as usize] = r;
            c = next;
        }
        r
    }
    for &(a, b) in pairs {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra as usize] = rb;
        }
    }
    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for v in 0..n as u32 {
        groups.entry(find(&mut parent, v)).or_default().push(v);
    }
    let mut out = Vec::new();
    for g in groups.values() {
        for (i, &a) in g.iter().enumerate() {
            for &b in &g[i + 1..] {
                out.push((a, b));
            }
        }
    }
    out.sort_unstable();
    out
}

fn pattern_canonical_key(
    constraints: &[(u32, u32)],
    part_auts: &[Vec<Vec<u32>>; 3],
    maps: (&[u32], &[u32], &[u32]),
    n: usize,
) -> Vec<u64> {
    // Combined action of Aut(gamma) x Aut(tau) x Aut(gamma2t) on composed
    // vertex ids; minimize the relabeled constraint list.
    let mut best: Option<Vec<u64>> = None;
    for ag in &part_auts[0] {
        for at in &part_auts[1] {
            for ag2 in &part_auts[2] {
                let mut perm: Vec<u32> = (0..n as u32).collect();
                for (i, &img) in ag.iter().enumerate() {
                    perm[maps.0[i] as usize] = maps.0[img as usize];
                }
                for (i, &img) in at.iter().enumerate() {
                    perm[maps.1[i] as usize] = maps.1[img as usize];
                }
                for (i, &img) in ag2.iter().enumerate() {
                    perm[maps.2[i] as usize] = maps.2[img as usize];
                }
                let mut mapped: Vec<(u32, u32)> = constraints
                    .iter()
                    .map(|&(a, b)| {
                        let (x, y) = (perm[a as usize], perm[b as usize]);
                        (x.min(y), x.max(y))
                    })
                    .collect();
                mapped.sort_unstable();
                let key: Vec<u64> = mapped
                    .iter()
                    .flat_map(|&(a, b)| [a as u64, b as u64])
                    .collect();
                if best.as_ref().map_or(true, |b| key < *b) {
                    best = Some(key);
                }
            }
        }
    }
    best.unwrap_or_default()
}

/// Does this constraint set satisfy the separator conditions: the part's
/// outer boundary is the unique minimum-weight separator shielding it
/// from the intersected vertices?
fn separator_conditions(
    gamma: &Shape,
    gamma2t: &Shape,
    constraints: &[(u32, u32)],
    parts: &PartMap,
    g2_offset_map: &[u32],
    table: &TypeTable,
) -> Result<bool> {
    // gamma side: U_gamma must be the unique minimum separator between
    // U_gamma and V_*(gamma) u V_gamma inside gamma (gamma keeps its own
    // ids in the composition).
    let touched: BTreeSet<u32> =
        constraints.iter().flat_map(|&(a, b)| [a, b]).collect();
    if !gamma.is_trivial() {
        let mut vstar: BTreeSet<u32> = gamma.v.vertex_set();
        for &v in &touched {
            if parts.gamma.contains(&v) && (v as usize) < gamma.nv() {
                vstar.insert(v);
            }
        }
        let us = gamma.u.vertex_set();
        let mins = min_separators_bruteforce_sets(gamma, table, &us, &vstar, false, 14)?;
        if mins.len() != 1 || mins[0].set != us {
            return Ok(false);
        }
    }
    if !gamma2t.is_trivial() {
        // Map composed ids back into gamma2t's local ids.
        let back: BTreeMap<u32, u32> = g2_offset_map
            .iter()
            .enumerate()
            .map(|(local, &global)| (global, local as u32))
            .collect();
        let mut ustar: BTreeSet<u32> = gamma2t.u.vertex_set();
        for &v in &touched {
            if let Some(&local) = back.get(&v) {
                ustar.insert(local);
            }
        }
        let vs = gamma2t.v.vertex_set();
        let mins =
            min_separators_bruteforce_sets(gamma2t, table, &ustar, &vs, false, 14)?;
        if mins.len() != 1 || mins[0].set != vs {
            return Ok(false);
        }
    }
    Ok(true)
}

/// All intersection patterns on `(gamma, tau, gamma2t)` up to the action
/// of the part automorphisms.
pub fn enumerate_patterns(
    gamma: &Shape,
    tau: &Shape,
    gamma2t: &Shape,
    table: &TypeTable,
) -> Result<Vec<IntersectionPattern>> {
    let (composed, parts) = compose_parts(gamma, tau, gamma2t)?;
    let n = composed.nv();
    // Local -> composed id maps for the three parts.
    let gamma_map: Vec<u32> = (0..gamma.nv() as u32).collect();
    let (c1, tau_map) = gamma.compose_map(tau)?;
    let (_, g2_map) = c1.compose_map(gamma2t)?;

    // Free vertices that may intersect.
    let gamma_free: Vec<u32> = {
        let vset = gamma.v.vertex_set();
        (0..gamma.nv() as u32).filter(|v| !vset.contains(v)).collect()
    };
    let g2_free: Vec<u32> = {
        let uset = gamma2t.u.vertex_set();
        (0..gamma2t.nv() as u32)
            .filter(|v| !uset.contains(v))
            .map(|v| g2_map[v as usize])
            .collect()
    };
    // Targets: for gamma-free vertices, anything outside gamma's image;
    // for gamma2-free vertices, anything outside gamma2's image except
    // the gamma-free vertices (those pairings are generated from the
    // gamma side; glue vertices of U_tau remain legitimate targets).
    let gamma_targets: Vec<u32> =
        (0..n as u32).filter(|v| !parts.gamma.contains(v)).collect();
    let g2_targets: Vec<u32> = (0..n as u32)
        .filter(|v| !parts.gamma2.contains(v) && !gamma_free.contains(v))
        .collect();

    let part_auts = [
        automorphism_list(gamma),
        automorphism_list(tau),
        automorphism_list(gamma2t),
    ];
    let maps = (gamma_map.as_slice(), tau_map.as_slice(), g2_map.as_slice());

    let mut seen: BTreeSet<Vec<u64>> = BTreeSet::new();
    let mut out: Vec<IntersectionPattern> = Vec::new();
    let mut assign_g: Vec<Option<u32>> = vec![None; gamma_free.len()];
    let mut assign_h: Vec<Option<u32>> = vec![None; g2_free.len()];

    fn emit(
        gamma: &Shape,
        tau: &Shape,
        gamma2t: &Shape,
        composed: &Shape,
        parts: &PartMap,
        gamma_free: &[u32],
        g2_free: &[u32],
        assign_g: &[Option<u32>],
        assign_h: &[Option<u32>],
        part_auts: &[Vec<Vec<u32>>; 3],
        maps: (&[u32], &[u32], &[u32]),
        g2_map: &[u32],
        table: &TypeTable,
        seen: &mut BTreeSet<Vec<u64>>,
        out: &mut Vec<IntersectionPattern>,
    ) -> Result<()> {
        let mut raw: Vec<(u32, u32)> = Vec::new();
        for (i, t) in assign_g.iter().enumerate() {
            if let Some(t) = t {
                raw.push((gamma_free[i], *t));
            }
        }
        for (i, t) in assign_h.iter().enumerate() {
            if let Some(t) = t {
                raw.push((g2_free[i], *t));
            }
        }
        if raw.is_empty() {
            return Ok(());
        }
        let closed = close_constraints(&raw, composed.nv());
        // No intra-part pair may appear after closure.
        for &(a, b) in &closed {
            if (parts.gamma.contains(&a) && parts.gamma.contains(&b))
                || (parts.tau.contains(&a) && parts.tau.contains(&b))
                || (parts.gamma2.contains(&a) && parts.gamma2.contains(&b))
            {
                return Ok(());
            }
            if composed.vtypes[a as usize] != composed.vtypes[b as usize] {
                return Ok(());
            }
        }
        if !separator_conditions(gamma, gamma2t, &closed, parts, g2_map, table)? {
            return Ok(());
        }
        let key = pattern_canonical_key(&closed, part_auts, maps, composed.nv());
        if seen.insert(key.clone()) {
            out.push(IntersectionPattern {
                gamma: gamma.clone(),
                tau: tau.clone(),
                gamma2t: gamma2t.clone(),
                composed: composed.clone(),
                constraints: closed,
                key,
            });
        }
        Ok(())
    }

    // Depth-first over assignments with distinct non-fresh targets per
    // side (an intra-side collision would close into an intra-part pair).
    fn rec(
        level: usize,
        gamma: &Shape,
        tau: &Shape,
        gamma2t: &Shape,
        composed: &Shape,
        parts: &PartMap,
        gamma_free: &[u32],
        g2_free: &[u32],
        gamma_targets: &[u32],
        g2_targets: &[u32],
        assign_g: &mut Vec<Option<u32>>,
        assign_h: &mut Vec<Option<u32>>,
        part_auts: &[Vec<Vec<u32>>; 3],
        maps: (&[u32], &[u32], &[u32]),
        g2_map: &[u32],
        table: &TypeTable,
        seen: &mut BTreeSet<Vec<u64>>,
        out: &mut Vec<IntersectionPattern>,
    ) -> Result<()> {
        let total = gamma_free.len() + g2_free.len();
        if level == total {
            return emit(
                gamma, tau, gamma2t, composed, parts, gamma_free, g2_free, assign_g, assign_h,
                part_auts, maps, g2_map, table, seen, out,
            );
        }
        let (is_gamma, idx) = if level < gamma_free.len() {
            (true, level)
        } else {
            (false, level - gamma_free.len())
        };
        // fresh
        rec(
            level + 1,
            gamma,
            tau,
            gamma2t,
            composed,
            parts,
            gamma_free,
            g2_free,
            gamma_targets,
            g2_targets,
            assign_g,
            assign_h,
            part_auts,
            maps,
            g2_map,
            table,
            seen,
            out,
        )?;
        let src = if is_gamma { gamma_free[idx] } else { g2_free[idx] };
        let targets = if is_gamma { gamma_targets } else { g2_targets };
        for &t in targets {
            if composed.vtypes[src as usize] != composed.vtypes[t as usize] {
                continue;
            }
            let clash = if is_gamma {
                assign_g.iter().any(|a| *a == Some(t))
            } else {
                assign_h.iter().any(|a| *a == Some(t)) || Some(t) == assign_h.get(idx).copied().flatten()
            };
            if clash {
                continue;
            }
            if is_gamma {
                assign_g[idx] = Some(t);
            } else {
                assign_h[idx] = Some(t);
            }
            rec(
                level + 1,
                gamma,
                tau,
                gamma2t,
                composed,
                parts,
                gamma_free,
                g2_free,
                gamma_targets,
                g2_targets,
                assign_g,
                assign_h,
                part_auts,
                maps,
                g2_map,
                table,
                seen,
                out,
            )?;
            if is_gamma {
                assign_g[idx] = None;
            } else {
                assign_h[idx] = None;
            }
        }
        Ok(())
    }

    rec(
        0,
        gamma,
        tau,
        gamma2t,
        &composed,
        &parts,
        &gamma_free,
        &g2_free,
        &gamma_targets,
        &g2_targets,
        &mut assign_g,
        &mut assign_h,
        &part_auts,
        maps,
        &g2_map,
        table,
        &mut seen,
        &mut out,
    )?;
    Ok(out)
}

impl IntersectionPattern {
    /// Contract the constraint edges: vertices merge, the edge multiset
    /// is the union, `U` and `V` are inherited from the outer parts.
    pub fn collapse(&self) -> Result<CollapsedShape> {
        let n = self.composed.nv();
        let closed = &self.constraints;
        let mut parent: Vec<u32> = (0..n as u32).collect();
        for &(a, b) in closed {
            let pa = parent[a as usize].min(parent[b as usize]);
            let (ra, rb) = (parent[a as usize], parent[b as usize]);
            for p in parent.iter_mut() {
                if *p == ra || *p == rb {
                    *p = pa;
                }
            }
        }
        let reps: Vec<u32> = {
            let set: BTreeSet<u32> = parent.iter().copied().collect();
            set.into_iter().collect()
        };
        let newid: BTreeMap<u32, u32> =
            reps.iter().enumerate().map(|(i, &r)| (r, i as u32)).collect();
        let vmap: Vec<u32> = (0..n).map(|v| newid[&parent[v]]).collect();
        let vtypes: Vec<usize> = reps
            .iter()
            .map(|&r| self.composed.vtypes[r as usize])
            .collect();
        let edges: Vec<Edge> = self
            .composed
            .edges
            .iter()
            .map(|e| Edge {
                ends: e.ends.iter().map(|&x| vmap[x as usize]).collect(),
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
                    verts: p.verts.iter().map(|&x| vmap[x as usize]).collect(),
                })
                .collect(),
        };
        let shape = Shape::new(
            vtypes,
            edges,
            map_is(&self.composed.u),
            map_is(&self.composed.v),
            self.composed.ordered_edges,
        )?;
        Ok(CollapsedShape { shape, vertex_map: vmap })
    }

    /// Pattern multiplicity `N(P)`: automorphisms of the composed shape
    /// stabilizing the constraints, modulo those splitting along parts.
    pub fn multiplicity(&self) -> Result<u64> {
        let auts = automorphism_list(&self.composed);
        let stab = |perm: &Vec<u32>| -> bool {
            let mut mapped: Vec<(u32, u32)> = self
                .constraints
                .iter()
                .map(|&(a, b)| {
                    let (x, y) = (perm[a as usize], perm[b as usize]);
                    (x.min(y), x.max(y))
                })
                .collect();
            mapped.sort_unstable();
            mapped == self.constraints
        };
        let aut_p = auts.iter().filter(|p| stab(p)).count() as u64;
        // Part-product automorphisms acting on the composed ids.
        let gamma_map: Vec<u32> = (0..self.gamma.nv() as u32).collect();
        let (c1, tau_map) = self.gamma.compose_map(&self.tau)?;
        let (_, g2_map) = c1.compose_map(&self.gamma2t)?;
        let pa = [
            automorphism_list(&self.gamma),
            automorphism_list(&self.tau),
            automorphism_list(&self.gamma2t),
        ];
        let n = self.composed.nv();
        let mut pieces = 0u64;
        for ag in &pa[0] {
            for at in &pa[1] {
                for ag2 in &pa[2] {
                    let mut perm: Vec<u32> = (0..n as u32).collect();
                    for (i, &img) in ag.iter().enumerate() {
                        perm[gamma_map[i] as usize] = gamma_map[img as usize];
                    }
                    for (i, &img) in at.iter().enumerate() {
                        perm[tau_map[i] as usize] = tau_map[img as usize];
                    }
                    for (i, &img) in ag2.iter().enumerate() {
                        perm[g2_map[i] as usize] = g2_map[img as usize];
                    }
                    if stab(&perm) {
                        pieces += 1;
                    }
                }
            }
        }
        if pieces == 0 || aut_p % pieces != 0 {
            return Err(Error::InvalidShape(
                "pattern stabilizer is not a union of part cosets".into(),
            ));
        }
        Ok(aut_p / pieces)
    }

    /// Crude multiplicity bound `|V(tau_P)|^{|V(gamma)\U| + |V(gamma')\U|}`.
    pub fn multiplicity_bound(&self) -> Result<u64> {
        let c = self.collapse()?;
        let base = c.shape.nv() as u64;
        let e1 = self.gamma.nv() - self.gamma.u.vertex_set().len();
        // gamma' in left orientation: V(gamma') \ U_gamma' = V(g2t) \ V_{g2t}.
        let e2 = self.gamma2t.nv() - self.gamma2t.v.vertex_set().len();
        Ok(base.pow((e1 + e2) as u32))
    }

    /// Both sides of the weight tradeoff:
    /// `w(V(tau_P)) + w(I_{tau_P}) - w(S_{tau_P,min})` against
    /// `w(V(tau)) + w(I_tau) - w(S_{tau,min}) + w(V(gamma)\U) + w(V(gamma')\U)`.
    pub fn tradeoff_sides(&self, table: &TypeTable) -> Result<(Weight, Weight)> {
        let t_max = table.t_max();
        let collapsed = self.collapse()?.shape;
        let lhs = side_weight(&collapsed, table)?;
        let tau_side = side_weight(&self.tau, table)?;
        let mut rhs = tau_side;
        let uset = self.gamma.u.vertex_set();
        for v in 0..self.gamma.nv() as u32 {
            if !uset.contains(&v) {
                rhs.counts[self.gamma.vtypes[v as usize]] += 1;
            }
        }
        let vset = self.gamma2t.v.vertex_set();
        for v in 0..self.gamma2t.nv() as u32 {
            if !vset.contains(&v) {
                rhs.counts[self.gamma2t.vtypes[v as usize]] += 1;
            }
        }
        let _ = t_max;
        Ok((lhs, rhs))
    }

    pub fn tradeoff_holds(&self, table: &TypeTable) -> Result<bool> {
        let (lhs, rhs) = self.tradeoff_sides(table)?;
        Ok(lhs.cmp_in(&rhs, table) != std::cmp::Ordering::Greater)
    }
}

fn side_weight(shape: &Shape, table: &TypeTable) -> Result<Weight> {
    let t_max = table.t_max();
    let s_min: Separator = minsep_excluding_multi(shape, table, 14)?;
    let iso = high_multiplicity_interior(shape);
    Ok(shape
        .vertex_weight(t_max)
        .add(&shape.weight_of(&iso, t_max))
        .sub(&s_min.weight))
}

// ---------------------------------------------------------------------------
// Factorizations of a left shape
// ---------------------------------------------------------------------------

/// All ways to split a left shape as `sigma2 o gamma` with both factors
/// left shapes and `gamma` non-trivial, up to equivalence of the pair.
pub fn left_factorizations(sigma: &Shape, table: &TypeTable) -> Result<Vec<(Shape, Shape)>> {
    let n = sigma.nv();
    let mut seen: BTreeSet<(Vec<u64>, Vec<u64>)> = BTreeSet::new();
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << n) {
        let cut: BTreeSet<u32> = (0..n as u32).filter(|&v| mask & (1 << v) != 0).collect();
        // sigma2 = the part of sigma between U and the cut; gamma the rest.
        let us = sigma.u.vertex_set();
        let adj: Vec<BTreeSet<u32>> = {
            let mut a = vec![BTreeSet::new(); n];
            for e in &sigma.edges {
                for (i, &x) in e.ends.iter().enumerate() {
                    for &y in &e.ends[i + 1..] {
                        a[x as usize].insert(y);
                        a[y as usize].insert(x);
                    }
                }
            }
            a
        };
        let mut left_side: BTreeSet<u32> = cut.clone();
        {
            let mut queue: Vec<u32> = us.iter().copied().filter(|v| !cut.contains(v)).collect();
            let mut seen_bfs: BTreeSet<u32> = queue.iter().copied().collect();
            while let Some(v) = queue.pop() {
                left_side.insert(v);
                for &w in &adj[v as usize] {
                    if !cut.contains(&w) && seen_bfs.insert(w) {
                        queue.push(w);
                    }
                }
            }
            left_side.extend(us.iter().copied());
        }
        let right_side: BTreeSet<u32> = (0..n as u32)
            .filter(|v| cut.contains(v) || !left_side.contains(v))
            .collect();
        // V_sigma must live on the gamma side.
        if !sigma.v.vertex_set().iter().all(|v| right_side.contains(v)) {
            continue;
        }
        // Edges must split cleanly; edges inside the cut go right.
        let mut left_edges = Vec::new();
        let mut right_edges = Vec::new();
        let mut ok = true;
        for e in &sigma.edges {
            let in_left = e.ends.iter().all(|x| left_side.contains(x));
            let in_cut = e.ends.iter().all(|x| cut.contains(x));
            let in_right = e.ends.iter().all(|x| right_side.contains(x));
            if in_cut || (in_right && !in_left) {
                right_edges.push(e.clone());
            } else if in_left {
                left_edges.push(e.clone());
            } else {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let order: Vec<u32> = cut.iter().copied().collect();
        let build = |verts: &BTreeSet<u32>,
                     edges: &[Edge],
                     u_is: IndexShape,
                     v_is: IndexShape|
         -> Result<Shape> {
            let ordered: Vec<u32> = verts.iter().copied().collect();
            let remap: BTreeMap<u32, u32> =
                ordered.iter().enumerate().map(|(i, &v)| (v, i as u32)).collect();
            let vtypes: Vec<usize> =
                ordered.iter().map(|&v| sigma.vtypes[v as usize]).collect();
            let edges: Vec<Edge> = edges
                .iter()
                .map(|e| Edge {
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
            Shape::new(vtypes, edges, map_is(u_is), map_is(v_is), sigma.ordered_edges)
        };
        let cut_is = |order: &[u32]| -> IndexShape {
            let t_max = table.t_max();
            let mut pieces = Vec::new();
            for t in 0..t_max {
                let verts: Vec<u32> = order
                    .iter()
                    .copied()
                    .filter(|&v| sigma.vtypes[v as usize] == t)
                    .collect();
                if !verts.is_empty() {
                    pieces.push(Piece { ty: t, power: 1, verts });
                }
            }
            IndexShape { pieces }
        };
        for perm in crate::shape::permutations(&order) {
            let s_is = cut_is(&perm);
            let sigma2 = build(&left_side, &left_edges, sigma.u.clone(), s_is.clone())?;
            let gamma = build(&right_side, &right_edges, s_is, sigma.v.clone())?;
            if gamma.is_trivial() {
                continue;
            }
            if !is_left_shape(&sigma2, table, 14)? || !is_left_shape(&gamma, table, 14)? {
                continue;
            }
            let rejoined = sigma2.compose(&gamma)?;
            if !rejoined.equivalent(sigma) {
                continue;
            }
            let key = (sigma2.canonical_key(), gamma.canonical_key());
            if seen.insert(key) {
                out.push((sigma2, gamma));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// The exact single-step identity
// ---------------------------------------------------------------------------

fn rank1(sigma: &Shape, sigma2: &Shape) -> CoefficientMatrix {
    let mut h = CoefficientMatrix::new(vec![sigma.clone()], vec![sigma2.clone()]);
    *h.mat.at_mut(0, 0) = rat_int(1);
    h
}

fn id_shape_for(pattern: &IndexShape, reference: &Shape) -> Shape {
    Shape::identity(pattern, |v| {
        pattern
            .pieces
            .iter()
            .find(|p| p.verts.contains(&v))
            .map(|p| p.ty)
            .unwrap_or(0)
    }, reference.ordered_edges)
}

/// Max-abs entrywise residual (exact) of the single-step identity:
/// `M^fact - M^orth` against the three correction sums over intersection
/// patterns. Zero for every composable triple.
pub fn verify_intersection_identity(
    sigma: &Shape,
    tau: &Shape,
    sigma2: &Shape,
    x: &InputTensor,
    table: &TypeTable,
    global: &[MatrixIndex],
) -> Result<BigRational> {
    let h = rank1(sigma, sigma2);
    let fact = eval_m_fact(tau, &h, x, table, global)?;
    let orth = eval_m_orth(tau, &h, x, table, global)?;
    let n = global.len();
    let mut residual = RMat::zeros_rat(n, n);
    for i in 0..n {
        for j in 0..n {
            *residual.at_mut(i, j) = fact.at(i, j) - orth.at(i, j);
        }
    }
    let id_u_tau = id_shape_for(&tau.u, tau);
    let id_v_tau = id_shape_for(&tau.v, tau);
    let left_factors = left_factorizations(sigma, table)?;
    let right_factors = left_factorizations(sigma2, table)?;
    let mut subtract_orth =
        |a: &Shape, mid: &Shape, b: &Shape, scale: &BigRational| -> Result<()> {
            let hr = rank1(a, b);
            let m = eval_m_orth(mid, &hr, x, table, global)?;
            for i in 0..n {
                for j in 0..n {
                    let cur = residual.at_mut(i, j);
                    *cur = &*cur - &(scale * m.at(i, j));
                }
            }
            Ok(())
        };
    // Left-only corrections.
    for (s2, g) in &left_factors {
        let aut_u = rat_int(g.u.aut_size() as i64);
        for pat in enumerate_patterns(g, tau, &id_v_tau, table)? {
            let np = rat_int(pat.multiplicity()? as i64);
            let tau_p = pat.collapse()?.shape;
            subtract_orth(s2, &tau_p, sigma2, &(np / &aut_u))?;
        }
    }
    // Right-only corrections.
    for (s2p, gp) in &right_factors {
        let aut_u = rat_int(gp.u.aut_size() as i64);
        for pat in enumerate_patterns(&id_u_tau, tau, &gp.transpose(), table)? {
            let np = rat_int(pat.multiplicity()? as i64);
            let tau_p = pat.collapse()?.shape;
            subtract_orth(sigma, &tau_p, s2p, &(np / &aut_u))?;
        }
    }
    // Both-sided corrections.
    for (s2, g) in &left_factors {
        for (s2p, gp) in &right_factors {
            let aut = rat_int((g.u.aut_size() * gp.u.aut_size()) as i64);
            for pat in enumerate_patterns(g, tau, &gp.transpose(), table)? {
                let np = rat_int(pat.multiplicity()? as i64);
                let tau_p = pat.collapse()?.shape;
                subtract_orth(s2, &tau_p, s2p, &(np / &aut))?;
            }
        }
    }
    Ok(residual.max_abs())
}

/// Brute-force ribbon-triple census at a given universe: the number of
/// triples `(R1, R2, R3)` of shapes `(gamma, tau, gamma2t)` with
/// `R1 o R2 o R3 = R` (a fixed ribbon of shape `tau_P`) inducing `P`.
pub fn ribbon_triple_census(pat: &IntersectionPattern, table: &TypeTable) -> Result<u64> {
    let collapsed = pat.collapse()?;
    let target = crate::pseudocal::canonical_ribbon(&collapsed.shape, table)?;
    // Concrete value of each collapsed vertex.
    let coll_vals: Vec<(usize, u64)> = {
        // canonical_ribbon assigns per-type consecutive values in vertex order.
        let mut next: Vec<u64> = vec![0; table.t_max()];
        (0..collapsed.shape.nv())
            .map(|v| {
                let t = collapsed.shape.vtypes[v];
                let val = next[t];
                next[t] += 1;
                (t, val)
            })
            .collect()
    };
    // Composed vertex -> concrete value.
    let composed_vals: Vec<(usize, u64)> = (0..pat.composed.nv())
        .map(|v| coll_vals[collapsed.vertex_map[v] as usize])
        .collect();
    let _ = composed_vals;

    let gamma = &pat.gamma;
    let tau = &pat.tau;
    let g2 = &pat.gamma2t;
    let gamma_map: Vec<u32> = (0..gamma.nv() as u32).collect();
    let (c1, tau_map) = gamma.compose_map(tau)?;
    let (_, g2_map) = c1.compose_map(g2)?;

    // Enumerate injective type-preserving assignments of each part into
    // the target's concrete vertices, pinning the boundary indices.
    let verts_of_target: Vec<(usize, u64)> = target.verts.clone();
    let a_vals: BTreeMap<u32, (usize, u64)> = {
        // U_gamma composed ids map to A_R in tuple order.
        let mut m = BTreeMap::new();
        for (piece, cpiece) in pat.composed.u.pieces.iter().zip(&target.a.pieces) {
            for (&v, &val) in piece.verts.iter().zip(&cpiece.vals) {
                m.insert(v, (cpiece.ty, val));
            }
        }
        m
    };
    let b_vals: BTreeMap<u32, (usize, u64)> = {
        let mut m = BTreeMap::new();
        for (piece, cpiece) in pat.composed.v.pieces.iter().zip(&target.b.pieces) {
            for (&v, &val) in piece.verts.iter().zip(&cpiece.vals) {
                m.insert(v, (cpiece.ty, val));
            }
        }
        m
    };

    let mut triples: BTreeSet<(Vec<u64>, Vec<u64>, Vec<u64>)> = BTreeSet::new();
    let mut count_match = 0u64;

    // Assignment vectors over composed ids for each part occurrence.
    let mut phi_g: Vec<Option<(usize, u64)>> = vec![None; gamma.nv()];
    let phi_t: Vec<Option<(usize, u64)>> = vec![None; tau.nv()];
    let phi_h: Vec<Option<(usize, u64)>> = vec![None; g2.nv()];

    fn assign_part(
        shape: &Shape,
        pin: &BTreeMap<u32, (usize, u64)>,
        universe: &[(usize, u64)],
        phi: &mut Vec<Option<(usize, u64)>>,
        v: usize,
        f: &mut impl FnMut(&mut Vec<Option<(usize, u64)>>),
    ) {
        if v == shape.nv() {
            f(phi);
            return;
        }
        if let Some(&val) = pin.get(&(v as u32)) {
            if phi.iter().flatten().any(|&x| x == val) {
                return;
            }
            phi[v] = Some(val);
            assign_part(shape, pin, universe, phi, v + 1, f);
            phi[v] = None;
            return;
        }
        let t = shape.vtypes[v];
        for &(ut, uv) in universe {
            if ut != t || phi.iter().flatten().any(|&x| x == (ut, uv)) {
                continue;
            }
            phi[v] = Some((ut, uv));
            assign_part(shape, pin, universe, phi, v + 1, f);
            phi[v] = None;
        }
    }

    // Pins: gamma's U to A_R; g2's V to B_R. Glue pins come from the
    // previous part's assignment, handled by nesting.
    let gamma_pin: BTreeMap<u32, (usize, u64)> = gamma
        .u
        .vertex_set()
        .into_iter()
        .map(|v| (v, a_vals[&gamma_map[v as usize]]))
        .collect();

    let mut phi_g_work = std::mem::take(&mut phi_g);
    assign_part(gamma, &gamma_pin, &verts_of_target, &mut phi_g_work, 0, &mut |pg| {
        // Pin tau's U to gamma's V image.
        let mut tau_pin: BTreeMap<u32, (usize, u64)> = BTreeMap::new();
        for (pl, pr) in gamma.v.pieces.iter().zip(&tau.u.pieces) {
            for (&gv, &tv) in pl.verts.iter().zip(&pr.verts) {
                tau_pin.insert(tv, pg[gv as usize].unwrap());
            }
        }
        let mut phi_t_work = vec![None; tau.nv()];
        let pg_frozen: Vec<Option<(usize, u64)>> = pg.clone();
        assign_part(tau, &tau_pin, &verts_of_target, &mut phi_t_work, 0, &mut |pt| {
            let mut g2_pin: BTreeMap<u32, (usize, u64)> = BTreeMap::new();
            for (pl, pr) in tau.v.pieces.iter().zip(&g2.u.pieces) {
                for (&tv, &hv) in pl.verts.iter().zip(&pr.verts) {
                    g2_pin.insert(hv, pt[tv as usize].unwrap());
                }
            }
            for (&v, &val) in &b_vals {
                // b_vals keys are composed ids; translate to g2-local ids.
                if let Some(local) = g2_map.iter().position(|&g| g == v) {
                    g2_pin.insert(local as u32, val);
                }
            }
            let pt_frozen: Vec<Option<(usize, u64)>> = pt.clone();
            let mut phi_h_work = vec![None; g2.nv()];
            assign_part(g2, &g2_pin, &verts_of_target, &mut phi_h_work, 0, &mut |ph| {
                // Build the three ribbons and test composition to target.
                let to_assign = |phi: &Vec<Option<(usize, u64)>>| -> Vec<u64> {
                    phi.iter().map(|x| x.unwrap().1).collect()
                };
                let r1 = Ribbon::from_shape(gamma, &to_assign(&pg_frozen.to_vec()));
                let r2 = Ribbon::from_shape(tau, &to_assign(&pt_frozen.to_vec()));
                let r3 = Ribbon::from_shape(g2, &to_assign(&ph.clone()));
                let (r1, r2, r3) = match (r1, r2, r3) {
                    (Ok(a), Ok(b), Ok(c)) => (a, b, c),
                    _ => return,
                };
                let composed = match r1.compose(&r2).and_then(|c| c.compose(&r3)) {
                    Ok(c) => c,
                    Err(_) => return,
                };
                if composed.key() != target.key() {
                    return;
                }
                // Induced pattern from the coincidences.
                let mut raw: Vec<(u32, u32)> = Vec::new();
                let lookup = |cid: u32| -> (usize, u64) {
                    // concrete value of a composed id under these phis
                    if let Some(local) = gamma_map.iter().position(|&g| g == cid) {
                        return pg_frozen[local].unwrap();
                    }
                    if let Some(local) = tau_map.iter().position(|&g| g == cid) {
                        return pt_frozen[local].unwrap();
                    }
                    let local = g2_map.iter().position(|&g| g == cid).unwrap();
                    ph[local].unwrap()
                };
                let ncomp = pat.composed.nv() as u32;
                for a in 0..ncomp {
                    for b in (a + 1)..ncomp {
                        if lookup(a) == lookup(b) {
                            raw.push((a, b));
                        }
                    }
                }
                if raw.is_empty() {
                    return;
                }
                let closed = close_constraints(&raw, pat.composed.nv());
                let part_auts = [
                    automorphism_list(gamma),
                    automorphism_list(tau),
                    automorphism_list(g2),
                ];
                let key = pattern_canonical_key(
                    &closed,
                    &part_auts,
                    (gamma_map.as_slice(), tau_map.as_slice(), g2_map.as_slice()),
                    pat.composed.nv(),
                );
                if key == pat.key {
                    let trip = (r1.key(), r2.key(), r3.key());
                    if triples.insert(trip) {
                        count_match += 1;
                    }
                }
            });
        });
    });
    phi_g = phi_g_work;
    let _ = (phi_g, phi_t, phi_h);
    Ok(count_match)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::{Dist, HermiteBasis};
    use num_traits::Zero;
    use crate::shape::{Edge, Piece};

    fn single_type(n: u64) -> TypeTable {
        TypeTable::single(n)
    }

    fn id1() -> Shape {
        let is = IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap();
        Shape::new(vec![0], vec![], is.clone(), is, false).unwrap()
    }

    fn gamma_one_extra() -> Shape {
        // U = (u, w), V = (u), edge u-w: a non-trivial left shape.
        Shape::new(
            vec![0, 0],
            vec![Edge { ends: vec![0, 1], label: 1, mult: 1 }],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0, 1] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            false,
        )
        .unwrap()
    }

    #[test]
    fn trivial_parts_have_no_patterns() {
        let t = single_type(10);
        let id = id1();
        let pats = enumerate_patterns(&id, &id, &id, &t).unwrap();
        assert!(pats.is_empty());
    }

    #[test]
    fn one_extra_vertex_patterns() {
        let t = single_type(10);
        let g = gamma_one_extra();
        let id = id1();
        // gamma has one free vertex w; tau = Id on one vertex; gamma' = Id.
        // w can collide only with the tau = Id vertex... which is glue on
        // both sides, so no valid target remains.
        let pats = enumerate_patterns(&g, &id, &id, &t).unwrap();
        assert!(pats.is_empty());
        // With a non-trivial tau there is a real target.
        let tau = Shape::new(
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
        let g2 = Shape::new(
            vec![0],
            vec![],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            false,
        )
        .unwrap();
        let pats = enumerate_patterns(&g, &tau, &g2, &t).unwrap();
        assert!(!pats.is_empty());
        for p in &pats {
            assert!(p.multiplicity().unwrap() >= 1);
            assert!(p.tradeoff_holds(&t).unwrap());
            let c = p.collapse().unwrap();
            assert!(c.shape.nv() < p.composed.nv());
        }
    }

    #[test]
    fn pattern_count_invariant_under_relabeling() {
        let t = single_type(10);
        let g = gamma_one_extra();
        let tau = Shape::new(
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
        let id = id1();
        let a = enumerate_patterns(&g, &tau, &id, &t).unwrap().len();
        let g_renamed = g.relabeled(&[1, 0]);
        let b = enumerate_patterns(&g_renamed, &tau, &id, &t).unwrap().len();
        assert_eq!(a, b);
    }

    #[test]
    fn left_factorizations_of_one_extra_vertex() {
        let t = single_type(10);
        let sigma = gamma_one_extra();
        assert!(is_left_shape(&sigma, &t, 14).unwrap());
        let fs = left_factorizations(&sigma, &t).unwrap();
        // The only non-trivial splits cut along U itself, one per ordering
        // of the two-element separator; sigma2 is trivial in both.
        assert_eq!(fs.len(), 2);
        for (s2, g) in &fs {
            assert!(s2.is_trivial());
            assert!(!g.is_trivial());
            assert!(s2.compose(g).unwrap().equivalent(&sigma));
        }
    }

    #[test]
    fn intersection_identity_trivial_parts() {
        // sigma, sigma' trivial: M^fact = M^orth exactly, no corrections.
        let t = single_type(5);
        let x = InputTensor::random(
            &t,
            vec![0, 0],
            false,
            Dist::Rademacher,
            HermiteBasis::Orthonormal,
            1,
            42,
        );
        let id = id1();
        let tau = Shape::new(
            vec![0, 0],
            vec![Edge { ends: vec![0, 1], label: 1, mult: 1 }],
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![0] }]).unwrap(),
            IndexShape::new(vec![Piece { ty: 0, power: 1, verts: vec![1] }]).unwrap(),
            false,
        )
        .unwrap();
        let global = crate::fourier::matrix_indices_for(&id.u, &t);
        let res = verify_intersection_identity(&id, &tau, &id, &x, &t, &global).unwrap();
        assert!(res.is_zero(), "residual {res}");
    }

    #[test]
    fn intersection_identity_one_extra_vertex() {
        // The smallest non-trivial left sigma (one extra vertex), tau = Id.
        let t = single_type(5);
        let x = InputTensor::random(
            &t,
            vec![0, 0],
            false,
            Dist::Rademacher,
            HermiteBasis::Orthonormal,
            1,
            7,
        );
        let sigma = gamma_one_extra();
        let tau = id1();
        let global = crate::fourier::matrix_indices_for(&sigma.u, &t);
        let res = verify_intersection_identity(&sigma, &tau, &sigma, &x, &t, &global).unwrap();
        assert!(res.is_zero(), "residual {res}");
    }

    #[test]
    fn census_matches_multiplicity_small() {
        let t = single_type(6);
        let g = gamma_one_extra();
        let tau = Shape::new(
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
        let id = id1();
        let pats = enumerate_patterns(&g, &tau, &id, &t).unwrap();
        assert!(!pats.is_empty());
        for p in &pats {
            let np = p.multiplicity().unwrap();
            let census = ribbon_triple_census(p, &t).unwrap();
            assert_eq!(np, census, "N(P) mismatch");
            assert!(np <= p.multiplicity_bound().unwrap());
        }
    }
}
