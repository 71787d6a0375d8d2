//! Bipartite driver–order matching: an exact Hungarian solver and an
//! entropic (Sinkhorn) alternative.

use super::{Driver, Order};

/// Feasible (driver, order) pair, indices into the caller's slices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub driver: usize,
    pub order: usize,
    pub distance: u32,
}

pub fn manhattan(a: (u32, u32), b: (u32, u32)) -> u32 {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// Idle drivers and orders alive at step `t` within `radius` cells.
pub fn feasible_pairs(drivers: &[Driver], orders: &[Order], t: usize, radius: u32) -> Vec<Edge> {
    let mut edges = Vec::new();
    for (i, d) in drivers.iter().enumerate() {
        if !d.is_idle(t) {
            continue;
        }
        for (j, o) in orders.iter().enumerate() {
            if !o.is_alive(t) {
                continue;
            }
            let distance = manhattan(d.position, o.origin);
            if distance <= radius {
                edges.push(Edge { driver: i, order: j, distance });
            }
        }
    }
    edges
}

/// Dense O(n³) Hungarian method with potentials; rows ≤ columns.
/// Returns the column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= columns");
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut ans = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            ans[p[j] - 1] = j - 1;
        }
    }
    ans
}

/// Connected components of the edge graph, each as a list of edge indices.
fn components(edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let rows: Vec<usize> = sorted_unique(edges.iter().map(|e| e.0));
    let cols: Vec<usize> = sorted_unique(edges.iter().map(|e| e.1));
    let mut parent: Vec<usize> = (0..rows.len() + cols.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let node = |e: &(usize, usize)| {
        (rows.binary_search(&e.0).expect("row"), rows.len() + cols.binary_search(&e.1).expect("col"))
    };
    for e in edges {
        let (a, b) = node(e);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (k, e) in edges.iter().enumerate() {
        let (a, _) = node(e);
        let root = find(&mut parent, a);
        groups.entry(root).or_default().push(k);
    }
    groups.into_values().collect()
}

fn sorted_unique(it: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = it.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Minimum-cost matching over the given edges where leaving a node
/// unmatched costs 0; only negative-cost edges can be worth taking.
/// Returns chosen edge indices in ascending order.
pub fn min_cost_matching(edges: &[(usize, usize)], cost: &[f64]) -> Vec<usize> {
    let mut chosen = Vec::new();
    for comp in components(edges) {
        let rows = sorted_unique(comp.iter().map(|&k| edges[k].0));
        let cols = sorted_unique(comp.iter().map(|&k| edges[k].1));
        let (r, c) = (rows.len(), cols.len());
        let size = r + c;
        let blocked = 1.0 + comp.iter().map(|&k| cost[k].abs()).sum::<f64>() * 2.0;
        // Rows: drivers then column-dummies; columns: orders then row-dummies.
        let mut mat = vec![vec![0.0; size]; size];
        let mut index = vec![vec![None; c]; r];
        for row in mat.iter_mut().take(r) {
            row[..c].fill(blocked);
        }
        for &k in &comp {
            let i = rows.binary_search(&edges[k].0).expect("row");
            let j = cols.binary_search(&edges[k].1).expect("col");
            if cost[k] < mat[i][j] {
                mat[i][j] = cost[k];
                index[i][j] = Some(k);
            }
        }
        let assign = hungarian(&mat);
        for (i, &j) in assign.iter().enumerate().take(r) {
            if j < c {
                if let Some(k) = index[i][j] {
                    if cost[k] < 0.0 {
                        chosen.push(k);
                    }
                }
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Maximum-cardinality matching with minimum total pickup distance.
/// Returns `(driver, order)` pairs sorted by driver.
pub fn match_distance(edges: &[Edge]) -> Vec<(usize, usize)> {
    if edges.is_empty() {
        return Vec::new();
    }
    let max_d = edges.iter().map(|e| e.distance).max().unwrap_or(0) as f64;
    let big = (max_d + 1.0) * (edges.len() as f64 + 1.0);
    let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.driver, e.order)).collect();
    let cost: Vec<f64> = edges.iter().map(|e| e.distance as f64 - big).collect();
    collect(edges, min_cost_matching(&pairs, &cost))
}

/// Maximum total weight matching; an edge is only used when its weight is
/// positive.
pub fn match_mdp(edges: &[Edge], weights: &[f64]) -> Vec<(usize, usize)> {
    let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.driver, e.order)).collect();
    let cost: Vec<f64> = weights.iter().map(|w| -w).collect();
    collect(edges, min_cost_matching(&pairs, &cost))
}

fn collect(edges: &[Edge], chosen: Vec<usize>) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = chosen.into_iter().map(|k| (edges[k].driver, edges[k].order)).collect();
    out.sort_unstable();
    out
}

/// Result of entropic matching.
#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornMatch {
    /// Square doubly stochastic plan over the padded problem.
    pub plan: Vec<Vec<f64>>,
    /// `(row, column)` pairs of the rounded assignment within the original
    /// cost matrix.
    pub assignment: Vec<(usize, usize)>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest marginal violation at exit.
    pub marginal_error: f64,
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn on a square-padded version of `cost` (infinite
/// entries are forbidden pairs), then greedy rounding: rows in decreasing
/// order of their best plan entry take their best free column.
///
/// With `unmatched_cost = Some(c)`, padding rows/columns cost `c`, letting
/// nodes stay unmatched; otherwise the matrix must be square.
pub fn match_sinkhorn(
    cost: &[Vec<f64>],
    regularization: f64,
    iterations: usize,
    unmatched_cost: Option<f64>,
) -> crate::error::Result<SinkhornMatch> {
    use crate::error::Error;
    if !(regularization > 0.0) {
        return Err(Error::invalid("Sinkhorn regularization must be positive"));
    }
    let r = cost.len();
    let c = cost.first().map_or(0, Vec::len);
    let (size, padded) = match unmatched_cost {
        Some(u) => {
            let n = r + c;
            let mut m = vec![vec![u; n]; n];
            for i in 0..r {
                m[i][..c].copy_from_slice(&cost[i]);
            }
            for row in m.iter_mut().skip(r) {
                for v in row.iter_mut().skip(c) {
                    *v = 0.0;
                }
            }
            (n, m)
        }
        None => {
            if r != c {
                return Err(Error::invalid("square cost matrix required without an unmatched cost"));
            }
            (r, cost.to_vec())
        }
    };
    let logk: Vec<Vec<f64>> =
        padded.iter().map(|row| row.iter().map(|&x| if x.is_finite() { -x / regularization } else { f64::NEG_INFINITY }).collect()).collect();
    let mut f = vec![0.0; size];
    let mut g = vec![0.0; size];
    let mut converged = false;
    let mut done = 0;
    let mut err = f64::INFINITY;
    let plan_of = |f: &[f64], g: &[f64]| -> Vec<Vec<f64>> {
        (0..size).map(|i| (0..size).map(|j| (f[i] + logk[i][j] + g[j]).exp()).collect()).collect()
    };
    for it in 0..iterations {
        for i in 0..size {
            f[i] = -log_sum_exp((0..size).map(|j| logk[i][j] + g[j]));
        }
        for j in 0..size {
            g[j] = -log_sum_exp((0..size).map(|i| logk[i][j] + f[i]));
        }
        done = it + 1;
        let plan = plan_of(&f, &g);
        err = (0..size).map(|i| (plan[i].iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
        if err < 1e-9 {
            converged = true;
            break;
        }
    }
    let plan = if done == 0 { vec![vec![0.0; size]; size] } else { plan_of(&f, &g) };
    let mut order: Vec<usize> = (0..r).collect();
    let best = |i: usize| plan[i][..c].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    order.sort_by(|&a, &b| best(b).total_cmp(&best(a)).then(a.cmp(&b)));
    let mut taken = vec![false; c];
    let mut assignment = Vec::new();
    for i in order {
        let mut pick: Option<usize> = None;
        for j in 0..c {
            if taken[j] || !cost[i][j].is_finite() {
                continue;
            }
            let stay = if unmatched_cost.is_some() { plan[i][c..].iter().sum::<f64>() } else { 0.0 };
            if plan[i][j] <= stay {
                continue;
            }
            if pick.is_none_or(|p| plan[i][j] > plan[i][p]) {
                pick = Some(j);
            }
        }
        if let Some(j) = pick {
            taken[j] = true;
            assignment.push((i, j));
        }
    }
    assignment.sort_unstable();
    Ok(SinkhornMatch { plan, assignment, converged, iterations: done, marginal_error: err })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hungarian_small() {
        assert_eq!(hungarian(&[vec![1.0, 2.0], vec![2.0, 1.0]]), vec![0, 1]);
        assert_eq!(hungarian(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]]), vec![1, 0, 2]);
    }

    #[test]
    fn distance_examples() {
        let e = |d, o, distance| Edge { driver: d, order: o, distance };
        let m = match_distance(&[e(0, 0, 1), e(0, 1, 2), e(1, 0, 2), e(1, 1, 1)]);
        assert_eq!(m, vec![(0, 0), (1, 1)]);
        assert_eq!(match_distance(&[e(0, 0, 0), e(0, 1, 2)]), vec![(0, 0)]);
        // Cardinality beats distance: the cheap pair would strand driver 1.
        let m = match_distance(&[e(0, 0, 0), e(0, 1, 2), e(1, 0, 2)]);
        assert_eq!(m, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn mdp_skips_nonpositive_edges() {
        let e = |d, o| Edge { driver: d, order: o, distance: 1 };
        assert_eq!(match_mdp(&[e(0, 0), e(0, 1)], &[2.0, 5.0]), vec![(0, 1)]);
        assert!(match_mdp(&[e(0, 0)], &[-1.0]).is_empty());
    }

    #[test]
    fn sinkhorn_concentrates_on_optimum() {
        let cost = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let s = match_sinkhorn(&cost, 0.01, 500, None).unwrap();
        assert!(s.converged);
        assert!(s.plan[0][0] > 0.999 && s.plan[1][1] > 0.999);
        assert_eq!(s.assignment, vec![(0, 0), (1, 1)]);
        for i in 0..2 {
            assert!((s.plan[i].iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((s.plan.iter().map(|r| r[i]).sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let none = match_sinkhorn(&cost, 0.1, 0, None).unwrap();
        assert!(!none.converged);
        assert!(match_sinkhorn(&cost, 0.0, 10, None).is_err());
    }
}
