//! Primal network simplex for the dense transportation problem.

use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Dir {
    /// Tree arc points from the node to its parent.
    Up,
    /// Tree arc points from the parent to the node.
    Down,
}

const NONE: usize = usize::MAX;

/// Solution of a transportation problem: sparse basic flows and the dual
/// potentials `(u, v)` with `c_ij ≥ u_i + v_j` at optimality.
#[derive(Clone, Debug)]
pub struct TransportSolution {
    pub flows: Vec<(usize, usize, f64)>,
    pub cost: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub pivots: usize,
}

struct Tree {
    parent: Vec<usize>,
    /// Arc joining the node to its parent: `< m·n` real, otherwise artificial.
    pred: Vec<usize>,
    dir: Vec<Dir>,
    /// Flow on the arc joining the node to its parent.
    flow: Vec<f64>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    children: Vec<Vec<usize>>,
}

struct Problem<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    art_cost: f64,
}

impl Problem<'_> {
    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.m * self.n {
            self.cost[e]
        } else if e - self.m * self.n < self.m {
            0.0
        } else {
            self.art_cost
        }
    }

    /// Endpoints `(source, target)` of a real arc.
    fn ends(&self, e: usize) -> (usize, usize) {
        (e / self.n, self.m + e % self.n)
    }
}

/// Solves `min Σ c_ij γ_ij` subject to row sums `a` and column sums `b`
/// (both positive, equal totals). `cost` is row-major `m × n`.
pub fn solve(a: &[f64], b: &[f64], cost: &[f64]) -> Result<TransportSolution> {
    let (m, n) = (a.len(), b.len());
    if m == 0 || n == 0 || cost.len() != m * n {
        return Err(Error::arg("transportation problem shape mismatch"));
    }
    let max_cost = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    if !max_cost.is_finite() {
        return Err(Error::numeric("non-finite transport cost"));
    }
    let nodes = m + n;
    let root = nodes;
    let prob = Problem { m, n, cost, art_cost: (max_cost + 1.0) * nodes as f64 };
    let eps = 1e-12 * (max_cost + 1.0) * (nodes as f64).sqrt();

    let mut t = Tree {
        parent: vec![root; nodes + 1],
        pred: (0..=nodes).map(|k| m * n + k).collect(),
        dir: vec![Dir::Up; nodes + 1],
        flow: vec![0.0; nodes + 1],
        depth: vec![1; nodes + 1],
        pi: vec![0.0; nodes + 1],
        children: vec![Vec::new(); nodes + 1],
    };
    t.parent[root] = NONE;
    t.depth[root] = 0;
    for i in 0..m {
        t.flow[i] = a[i];
    }
    for j in 0..n {
        t.dir[m + j] = Dir::Down;
        t.flow[m + j] = b[j];
        t.pi[m + j] = prob.art_cost;
    }
    t.children[root] = (0..nodes).collect();

    let arcs = m * n;
    let block = ((arcs as f64).sqrt().ceil() as usize).max(10).min(arcs);
    let mut next_arc = 0usize;
    let mut pivots = 0usize;
    let max_pivots = 50 * arcs + 10_000;

    loop {
        // Block search pricing.
        let mut best = -eps;
        let mut entering = NONE;
        let mut cnt = block;
        let mut e = next_arc;
        for _ in 0..arcs {
            let (i, j) = (e / n, e % n);
            let rc = cost[e] + t.pi[i] - t.pi[m + j];
            if rc < best {
                best = rc;
                entering = e;
            }
            e += 1;
            if e == arcs {
                e = 0;
            }
            cnt -= 1;
            if cnt == 0 {
                if entering != NONE {
                    break;
                }
                cnt = block;
            }
        }
        if entering == NONE {
            break;
        }
        next_arc = e;
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Convergence {
                message: "network simplex pivot limit reached".into(),
                iterations: pivots,
                residual_history: vec![best],
            });
        }
        pivot(&mut t, &prob, entering);
    }

    // Artificial arcs must carry no flow for a balanced problem.
    let total: f64 = a.iter().sum();
    let mut flows = Vec::new();
    let mut total_cost = 0.0;
    for node in 0..nodes {
        let e = t.pred[node];
        if e < arcs {
            if t.flow[node] > 0.0 {
                let (i, j) = (e / n, e % n);
                flows.push((i, j, t.flow[node]));
                total_cost += t.flow[node] * cost[e];
            }
        } else if t.flow[node] > 1e-9 * total {
            return Err(Error::numeric("transportation problem is unbalanced"));
        }
    }
    flows.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    let u: Vec<f64> = (0..m).map(|i| -t.pi[i]).collect();
    let v: Vec<f64> = (0..n).map(|j| t.pi[m + j]).collect();
    Ok(TransportSolution { flows, cost: total_cost, u, v, pivots })
}

fn pivot(t: &mut Tree, prob: &Problem, entering: usize) {
    let (first, second) = prob.ends(entering);

    // Join node of the cycle.
    let (mut p, mut q) = (first, second);
    while p != q {
        if t.depth[p] > t.depth[q] {
            p = t.parent[p];
        } else if t.depth[q] > t.depth[p] {
            q = t.parent[q];
        } else {
            p = t.parent[p];
            q = t.parent[q];
        }
    }
    let join = p;

    // Leaving arc: strict on the first path, non-strict on the second, which
    // keeps the basis strongly feasible.
    let mut delta = f64::INFINITY;
    let mut u_out = NONE;
    let mut side = 0;
    let mut u = first;
    while u != join {
        if t.dir[u] == Dir::Up && t.flow[u] < delta {
            delta = t.flow[u];
            u_out = u;
            side = 1;
        }
        u = t.parent[u];
    }
    let mut u = second;
    while u != join {
        if t.dir[u] == Dir::Down && t.flow[u] <= delta {
            delta = t.flow[u];
            u_out = u;
            side = 2;
        }
        u = t.parent[u];
    }
    debug_assert!(u_out != NONE, "uncapacitated cycle without a blocking arc");

    // Augment along the cycle.
    if delta > 0.0 {
        let mut u = first;
        while u != join {
            t.flow[u] += if t.dir[u] == Dir::Up { -delta } else { delta };
            u = t.parent[u];
        }
        let mut u = second;
        while u != join {
            t.flow[u] += if t.dir[u] == Dir::Down { -delta } else { delta };
            u = t.parent[u];
        }
    }

    // Re-hang the subtree cut off by the leaving arc below the entering arc.
    let (u_in, v_in, in_dir) = if side == 1 {
        (first, second, Dir::Up)
    } else {
        (second, first, Dir::Down)
    };
    let mut path = vec![u_in];
    while *path.last().unwrap() != u_out {
        let last = *path.last().unwrap();
        path.push(t.parent[last]);
    }
    detach(t, u_out);
    // Reverse parent pointers along the path, carrying arcs and flows.
    for k in (1..path.len()).rev() {
        let (child, node) = (path[k - 1], path[k]);
        detach(t, child);
        t.parent[node] = child;
        t.pred[node] = t.pred[child];
        t.flow[node] = t.flow[child];
        t.dir[node] = match t.dir[child] {
            Dir::Up => Dir::Down,
            Dir::Down => Dir::Up,
        };
        t.children[child].push(node);
    }
    t.parent[u_in] = v_in;
    t.pred[u_in] = entering;
    t.flow[u_in] = delta;
    t.dir[u_in] = in_dir;
    t.children[v_in].push(u_in);

    // Depths and potentials of the moved subtree.
    let mut stack = vec![u_in];
    while let Some(node) = stack.pop() {
        let par = t.parent[node];
        t.depth[node] = t.depth[par] + 1;
        let c = prob.arc_cost(t.pred[node]);
        t.pi[node] = match t.dir[node] {
            Dir::Up => t.pi[par] - c,
            Dir::Down => t.pi[par] + c,
        };
        stack.extend_from_slice(&t.children[node]);
    }
}

fn detach(t: &mut Tree, node: usize) {
    let par = t.parent[node];
    let list = &mut t.children[par];
    if let Some(pos) = list.iter().position(|&c| c == node) {
        list.swap_remove(pos);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*state >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut s = 11u64;
        for n in 1..=7 {
            for _ in 0..5 {
                let cost: Vec<f64> = (0..n * n).map(|_| lcg(&mut s)).collect();
                let w = vec![1.0 / n as f64; n];
                let sol = solve(&w, &w, &cost).unwrap();
                let best = permutations(n)
                    .iter()
                    .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
                    / n as f64;
                assert!((sol.cost - best).abs() < 1e-12, "n={n}: {} vs {best}", sol.cost);
            }
        }
    }

    #[test]
    fn dual_certificate_on_unbalanced_counts() {
        let mut s = 5u64;
        let (m, n) = (23, 17);
        let mut a: Vec<f64> = (0..m).map(|_| 0.1 + lcg(&mut s)).collect();
        let mut b: Vec<f64> = (0..n).map(|_| 0.1 + lcg(&mut s)).collect();
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        a.iter_mut().for_each(|x| *x /= sa);
        b.iter_mut().for_each(|x| *x /= sb);
        let cost: Vec<f64> = (0..m * n).map(|_| lcg(&mut s) * 3.0).collect();
        let sol = solve(&a, &b, &cost).unwrap();
        let mut rows = vec![0.0; m];
        let mut cols = vec![0.0; n];
        for &(i, j, f) in &sol.flows {
            assert!(f >= 0.0);
            rows[i] += f;
            cols[j] += f;
            assert!((cost[i * n + j] - sol.u[i] - sol.v[j]).abs() < 1e-9);
        }
        for i in 0..m {
            assert!((rows[i] - a[i]).abs() < 1e-12);
            for j in 0..n {
                assert!(cost[i * n + j] - sol.u[i] - sol.v[j] >= -1e-9);
            }
        }
        for j in 0..n {
            assert!((cols[j] - b[j]).abs() < 1e-12);
        }
        let dual: f64 = a.iter().zip(&sol.u).map(|(x, y)| x * y).sum::<f64>()
            + b.iter().zip(&sol.v).map(|(x, y)| x * y).sum::<f64>();
        assert!((dual - sol.cost).abs() < 1e-9);
    }
}
