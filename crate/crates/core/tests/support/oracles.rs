//! Independent brute-force reference implementations used by the test suites.
//!
//! Nothing here calls into the library's numeric code paths.

/// Minimum transport cost `sum_ij |x_i - y_j| * plan_ij` between two discrete
/// distributions, each normalised to unit mass, solved as a linear program
/// with a dense two-phase simplex using Bland's rule.
pub fn transport_lp(r: &[(f64, f64)], g: &[(f64, f64)]) -> f64 {
    let unit = |d: &[(f64, f64)]| {
        let total: f64 = d.iter().map(|p| p.1).sum();
        d.iter().map(|&(x, w)| (x, w / total)).collect::<Vec<_>>()
    };
    let (r, g) = (&unit(r)[..], &unit(g)[..]);
    let (n, m) = (r.len(), g.len());
    let vars = n * m;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..n {
        let mut row = vec![0.0; vars];
        for j in 0..m {
            row[i * m + j] = 1.0;
        }
        a.push(row);
        b.push(r[i].1);
    }
    // The last column constraint is implied by the others.
    for j in 0..m.saturating_sub(1) {
        let mut row = vec![0.0; vars];
        for i in 0..n {
            row[i * m + j] = 1.0;
        }
        a.push(row);
        b.push(g[j].1);
    }
    let mut c = vec![0.0; vars];
    for i in 0..n {
        for j in 0..m {
            c[i * m + j] = (r[i].0 - g[j].0).abs();
        }
    }
    simplex_min(a, b, c)
}

/// `min c.x` subject to `A x = b`, `x >= 0`, `b >= 0`.
pub fn simplex_min(a: Vec<Vec<f64>>, b: Vec<f64>, c: Vec<f64>) -> f64 {
    const EPS: f64 = 1e-12;
    let p = a.len();
    let q = c.len();
    let width = q + p + 1;
    let rhs = q + p;
    let mut t = vec![vec![0.0; width]; p + 1];
    for i in 0..p {
        t[i][..q].copy_from_slice(&a[i]);
        t[i][q + i] = 1.0;
        t[i][rhs] = b[i];
    }
    let mut basis: Vec<usize> = (q..q + p).collect();

    fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
        let pv = t[row][col];
        for v in t[row].iter_mut() {
            *v /= pv;
        }
        let pivot_row = t[row].clone();
        for (i, r) in t.iter_mut().enumerate() {
            if i != row {
                let f = r[col];
                if f != 0.0 {
                    for (v, pr) in r.iter_mut().zip(&pivot_row) {
                        *v -= f * pr;
                    }
                }
            }
        }
        basis[row] = col;
    }

    fn run(t: &mut [Vec<f64>], basis: &mut [usize], eligible: usize, rhs: usize) {
        let p = basis.len();
        loop {
            let Some(col) = (0..eligible).find(|&j| t[p][j] < -EPS) else {
                return;
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..p {
                if t[i][col] > EPS {
                    let ratio = t[i][rhs] / t[i][col];
                    let better = match best {
                        None => true,
                        Some((br, _, bb)) => ratio < br - EPS || (ratio <= br + EPS && basis[i] < bb),
                    };
                    if better {
                        best = Some((ratio, i, basis[i]));
                    }
                }
            }
            let (_, row, _) = best.expect("unbounded transport LP");
            pivot(t, basis, row, col);
        }
    }

    // Phase I: minimise the sum of artificials.
    for j in 0..width {
        t[p][j] = -(0..p).map(|i| t[i][j]).sum::<f64>();
    }
    for i in 0..p {
        t[p][q + i] = 0.0;
    }
    run(&mut t, &mut basis, q + p, rhs);
    assert!(t[p][rhs].abs() < 1e-9, "infeasible transport LP");
    for i in 0..p {
        if basis[i] >= q {
            if let Some(col) = (0..q).find(|&j| t[i][j].abs() > 1e-9) {
                pivot(&mut t, &mut basis, i, col);
            }
        }
    }

    // Phase II.
    for j in 0..width {
        t[p][j] = if j < q { c[j] } else { 0.0 };
    }
    for i in 0..p {
        let cb = if basis[i] < q { c[basis[i]] } else { 0.0 };
        if cb != 0.0 {
            let row = t[i].clone();
            for (v, r) in t[p].iter_mut().zip(&row) {
                *v -= cb * r;
            }
        }
    }
    run(&mut t, &mut basis, q, rhs);
    (0..p)
        .filter(|&i| basis[i] < q)
        .map(|i| c[basis[i]] * t[i][rhs])
        .sum()
}

/// Kruskal minimum spanning tree edge weights in ascending order.
pub fn mst_weights(d: &[Vec<f64>]) -> Vec<f64> {
    let n = d.len();
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            edges.push((d[i][j], i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    let mut out = Vec::new();
    for (w, i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            out.push(w);
        }
    }
    out
}

/// Exhaustive boundary-distance computation between two 3D boolean masks.
/// Boundary voxels are foreground voxels with at least one face neighbour
/// that is background or outside the grid. Returns `(adb, hausdorff)`.
pub fn boundary_distances_brute(
    a: &ndarray::Array3<bool>,
    b: &ndarray::Array3<bool>,
    spacing: [f64; 3],
) -> Option<(f64, f64)> {
    boundary_distances_brute_with(a, b, spacing, false)
}

/// As above; `full` uses all 26 neighbours instead of the 6 face neighbours.
pub fn boundary_distances_brute_with(
    a: &ndarray::Array3<bool>,
    b: &ndarray::Array3<bool>,
    spacing: [f64; 3],
    full: bool,
) -> Option<(f64, f64)> {
    let mut offsets = Vec::new();
    for dx in -1i64..=1 {
        for dy in -1i64..=1 {
            for dz in -1i64..=1 {
                let nonzero = (dx != 0) as u8 + (dy != 0) as u8 + (dz != 0) as u8;
                if nonzero == 1 || (full && nonzero > 1) {
                    offsets.push((dx, dy, dz));
                }
            }
        }
    }
    let boundary = |m: &ndarray::Array3<bool>| -> Vec<[f64; 3]> {
        let (nx, ny, nz) = m.dim();
        let mut pts = Vec::new();
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    if !m[[x, y, z]] {
                        continue;
                    }
                    let mut edge = false;
                    for &(dx, dy, dz) in &offsets {
                        let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if xx < 0 || yy < 0 || zz < 0 || xx >= nx as i64 || yy >= ny as i64 || zz >= nz as i64 {
                            edge = true;
                        } else if !m[[xx as usize, yy as usize, zz as usize]] {
                            edge = true;
                        }
                    }
                    if edge {
                        pts.push([x as f64 * spacing[0], y as f64 * spacing[1], z as f64 * spacing[2]]);
                    }
                }
            }
        }
        pts
    };
    let pa = boundary(a);
    let pb = boundary(b);
    if pa.is_empty() || pb.is_empty() {
        return None;
    }
    let directed = |from: &[[f64; 3]], to: &[[f64; 3]]| -> (f64, f64) {
        let mut sum = 0.0;
        let mut max: f64 = 0.0;
        for p in from {
            let mut best = f64::INFINITY;
            for q in to {
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                best = best.min(d);
            }
            sum += best;
            max = max.max(best);
        }
        (sum / from.len() as f64, max)
    };
    let (mean_ab, max_ab) = directed(&pa, &pb);
    let (mean_ba, max_ba) = directed(&pb, &pa);
    Some((0.5 * (mean_ab + mean_ba), max_ab.max(max_ba)))
}

/// Dice by explicit counting.
pub fn dice_brute(a: &ndarray::Array3<bool>, b: &ndarray::Array3<bool>) -> f64 {
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (x, y) in a.iter().zip(b.iter()) {
        na += *x as usize;
        nb += *y as usize;
        inter += (*x && *y) as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// Per-voxel probabilistic adjustment, written out term by term:
/// `argmax_k p_k * prod_{j != k} (1 - exp(p_j) / sum_q exp(p_q))`, lowest index on ties.
pub fn adjust_voxel(p: [f64; 3]) -> usize {
    let denom = p[0].exp() + p[1].exp() + p[2].exp();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for k in 0..3 {
        let mut score = p[k];
        for j in 0..3 {
            if j != k {
                score *= 1.0 - p[j].exp() / denom;
            }
        }
        if score > best_score {
            best_score = score;
            best = k;
        }
    }
    best
}

/// Direct 2D convolution of `(c_in, h, w)` with `(c_out, c_in, k, k)` weights,
/// stride 1, the given zero padding and dilation.
pub fn conv2d_loops(
    x: &ndarray::Array3<f64>,
    w: &ndarray::Array4<f64>,
    bias: &[f64],
    pad: usize,
    dilation: usize,
) -> ndarray::Array3<f64> {
    let (cin, h, wd) = x.dim();
    let (cout, _, k, _) = w.dim();
    let span = dilation * (k - 1);
    let ho = h + 2 * pad - span;
    let wo = wd + 2 * pad - span;
    let mut out = ndarray::Array3::zeros((cout, ho, wo));
    for o in 0..cout {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = bias[o];
                for c in 0..cin {
                    for ki in 0..k {
                        for kj in 0..k {
                            let ii = (i + ki * dilation) as i64 - pad as i64;
                            let jj = (j + kj * dilation) as i64 - pad as i64;
                            if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                acc += w[[o, c, ki, kj]] * x[[c, ii as usize, jj as usize]];
                            }
                        }
                    }
                }
                out[[o, i, j]] = acc;
            }
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}
