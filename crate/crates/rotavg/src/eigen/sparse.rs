//! Sparse symmetric support for the shift-invert path: compressed upper
//! storage, reverse Cuthill-McKee ordering, and a simplicial `L D L^T`
//! factorization with 1x1 pivots (elimination-tree symbolic phase, up-looking
//! numeric phase).
//!
//! The factorization does no numerical pivoting; a pivot that vanishes makes
//! it fail, and callers retry with a perturbed shift. Indefinite matrices
//! factor fine and report their inertia through [`Ldlt::negative_pivots`].

/// Upper-triangle compressed sparse column matrix (diagonal included).
struct CscUpper {
    colptr: Vec<usize>,
    rowind: Vec<usize>,
    values: Vec<f64>,
}

fn csc_from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> CscUpper {
    let mut entries: Vec<(usize, usize, f64)> = triplets.to_vec();
    entries.sort_unstable_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
    for &(i, j, v) in &entries {
        debug_assert!(i <= j && j < n);
        match merged.last_mut() {
            Some(last) if last.0 == i && last.1 == j => last.2 += v,
            _ => merged.push((i, j, v)),
        }
    }
    let mut colptr = vec![0usize; n + 1];
    for &(_, j, _) in &merged {
        colptr[j + 1] += 1;
    }
    for j in 0..n {
        colptr[j + 1] += colptr[j];
    }
    let rowind = merged.iter().map(|e| e.0).collect();
    let values = merged.iter().map(|e| e.2).collect();
    CscUpper { colptr, rowind, values }
}

/// `L D L^T` factorization of `P (A - sigma I) P^T`.
pub(crate) struct Ldlt {
    n: usize,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    perm: Vec<usize>,
    pub(crate) negative_pivots: usize,
}

impl Ldlt {
    /// Solves `(A - sigma I) x = b`.
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for k in 0..n {
            y[k] = b[self.perm[k]];
        }
        for j in 0..n {
            let yj = y[j];
            for p in self.lp[j]..self.lp[j + 1] {
                y[self.li[p]] -= self.lx[p] * yj;
            }
        }
        for j in 0..n {
            y[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut yj = y[j];
            for p in self.lp[j]..self.lp[j + 1] {
                yj -= self.lx[p] * y[self.li[p]];
            }
            y[j] = yj;
        }
        let mut x = vec![0.0; n];
        for k in 0..n {
            x[self.perm[k]] = y[k];
        }
        x
    }
}

/// Factors `A - sigma I` using the given fill-reducing permutation
/// (`perm[new] = old`). Fails on a vanishing pivot.
pub(crate) fn factor_shifted(
    n: usize,
    triplets: &[(usize, usize, f64)],
    sigma: f64,
    perm: &[usize],
) -> Result<Ldlt, String> {
    let mut pinv = vec![0usize; n];
    for (k, &old) in perm.iter().enumerate() {
        pinv[old] = k;
    }
    let mut permuted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len() + n);
    for &(i, j, v) in triplets {
        let (a, b) = (pinv[i], pinv[j]);
        let (r, c) = if a <= b { (a, b) } else { (b, a) };
        permuted.push((r, c, v));
    }
    for k in 0..n {
        permuted.push((k, k, -sigma));
    }
    let a = csc_from_triplets(n, &permuted);

    // Symbolic phase: elimination tree and column counts.
    let mut parent = vec![usize::MAX; n];
    let mut lnz = vec![0usize; n];
    let mut flag = vec![usize::MAX; n];
    for k in 0..n {
        flag[k] = k;
        for p in a.colptr[k]..a.colptr[k + 1] {
            let mut i = a.rowind[p];
            while i < k && flag[i] != k {
                if parent[i] == usize::MAX {
                    parent[i] = k;
                }
                lnz[i] += 1;
                flag[i] = k;
                i = parent[i];
            }
        }
    }
    let mut lp = vec![0usize; n + 1];
    for j in 0..n {
        lp[j + 1] = lp[j] + lnz[j];
    }

    // Numeric phase, up-looking: row k of L from a sparse triangular solve.
    let mut li = vec![0usize; lp[n]];
    let mut lx = vec![0.0f64; lp[n]];
    let mut d = vec![0.0f64; n];
    let mut y = vec![0.0f64; n];
    let mut pattern = vec![0usize; n];
    let mut fill = vec![0usize; n];
    let mut flag = vec![usize::MAX; n];
    let mut negative_pivots = 0usize;
    for k in 0..n {
        y[k] = 0.0;
        let mut top = n;
        flag[k] = k;
        for p in a.colptr[k]..a.colptr[k + 1] {
            let i0 = a.rowind[p];
            y[i0] += a.values[p];
            let mut len = 0;
            let mut i = i0;
            while flag[i] != k {
                pattern[len] = i;
                len += 1;
                flag[i] = k;
                i = parent[i];
            }
            while len > 0 {
                len -= 1;
                top -= 1;
                pattern[top] = pattern[len];
            }
        }
        d[k] = y[k];
        y[k] = 0.0;
        while top < n {
            let i = pattern[top];
            top += 1;
            let yi = y[i];
            y[i] = 0.0;
            let p2 = lp[i] + fill[i];
            for p in lp[i]..p2 {
                y[li[p]] -= lx[p] * yi;
            }
            let l_ki = yi / d[i];
            d[k] -= l_ki * yi;
            li[p2] = k;
            lx[p2] = l_ki;
            fill[i] += 1;
        }
        if !d[k].is_finite() || d[k].abs() < 1e-300 {
            return Err(format!("zero pivot at column {k} (d = {:.3e})", d[k]));
        }
        if d[k] < 0.0 {
            negative_pivots += 1;
        }
    }
    Ok(Ldlt {
        n,
        lp,
        li,
        lx,
        d,
        perm: perm.to_vec(),
        negative_pivots,
    })
}

/// Reverse Cuthill-McKee ordering of the triplet pattern. Returns
/// `perm[new] = old`. Components are ordered one after another from
/// pseudo-peripheral roots.
pub(crate) fn rcm_order(n: usize, triplets: &[(usize, usize, f64)]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j, _) in triplets {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }

    let bfs_levels = |root: usize, visited_global: &[bool]| -> Vec<usize> {
        // Returns visit order; used both for peripheral search and ordering.
        let mut seen = vec![false; n];
        let mut order = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        seen[root] = true;
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = adj[u]
                .iter()
                .copied()
                .filter(|&v| !seen[v] && !visited_global[v])
                .collect();
            next.sort_by_key(|&v| (adj[v].len(), v));
            for v in next {
                seen[v] = true;
                queue.push_back(v);
            }
        }
        order
    };

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        let Some(start) = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (adj[v].len(), v))
        else {
            break;
        };
        // Pseudo-peripheral root: repeatedly jump to a farthest minimum-degree
        // node until the eccentricity stops growing.
        let mut root = start;
        let mut ecc = 0usize;
        for _ in 0..5 {
            let levels = bfs_levels(root, &visited);
            let last = *levels.last().unwrap();
            let new_ecc = levels.len();
            if new_ecc <= ecc {
                break;
            }
            ecc = new_ecc;
            root = last;
        }
        let component = bfs_levels(root, &visited);
        for &v in &component {
            visited[v] = true;
        }
        order.extend(component);
    }
    order.reverse();
    order
}

/// Lower bound on the smallest eigenvalue from Gershgorin disks.
pub(crate) fn gershgorin_lower(n: usize, triplets: &[(usize, usize, f64)]) -> f64 {
    let mut diag = vec![0.0f64; n];
    let mut off = vec![0.0f64; n];
    for &(i, j, v) in triplets {
        if i == j {
            diag[i] += v;
        } else {
            off[i] += v.abs();
            off[j] += v.abs();
        }
    }
    (0..n).map(|i| diag[i] - off[i]).fold(f64::INFINITY, f64::min)
}
