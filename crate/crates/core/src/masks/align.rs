use ndarray::{Array1, Array2, Array3, Axis};

use super::MaskSet;
use crate::error::{Error, Result};

/// Largest class count for which every permutation is tried.
const EXHAUSTIVE_LIMIT: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub masks: MaskSet,
    /// `permutations[f][k]` is the raw class placed at aligned position `k`.
    pub permutations: Vec<Vec<usize>>,
    /// Band where alignment started.
    pub anchor: usize,
}

fn pearson(a: &Array1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn rec(n: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for k in 0..n {
            if !used[k] {
                used[k] = true;
                cur.push(k);
                rec(n, cur, used, out);
                cur.pop();
                used[k] = false;
            }
        }
    }
    rec(n, &mut cur, &mut used, &mut out);
    out
}

/// Best assignment for a `[aligned, raw]` score matrix.
fn best_assignment(score: &Array2<f64>, all: &[Vec<usize>]) -> Vec<usize> {
    let c = score.nrows();
    if c <= EXHAUSTIVE_LIMIT {
        let mut best = &all[0];
        let mut best_score = f64::NEG_INFINITY;
        for p in all {
            let s: f64 = p.iter().enumerate().map(|(k, &r)| score[[k, r]]).sum();
            if s > best_score {
                best_score = s;
                best = p;
            }
        }
        return best.clone();
    }
    let mut perm = vec![usize::MAX; c];
    let mut row_done = vec![false; c];
    let mut col_done = vec![false; c];
    for _ in 0..c {
        let mut pick = (0, 0);
        let mut val = f64::NEG_INFINITY;
        for k in 0..c {
            for r in 0..c {
                if !row_done[k] && !col_done[r] && score[[k, r]] > val {
                    val = score[[k, r]];
                    pick = (k, r);
                }
            }
        }
        row_done[pick.0] = true;
        col_done[pick.1] = true;
        perm[pick.0] = pick.1;
    }
    perm
}

/// Resolves per-band label permutations of soft masks.
///
/// Alignment starts at the band with the highest mean posterior maximum and
/// proceeds outwards (lower neighbour first). Each band takes the class
/// permutation that maximizes the summed Pearson correlation between its
/// temporal class profiles and the running mean profiles of the bands
/// aligned so far. Up to five classes every permutation is scored; above
/// that a greedy assignment is used.
pub fn align_frequency_permutations(raw: &MaskSet) -> Result<Alignment> {
    let (c, t, f) = raw.masks().dim();
    if c < 2 {
        return Err(Error::config("permutation alignment needs at least two classes"));
    }
    let m = raw.masks();
    let confidence: Vec<f64> = (0..f)
        .map(|fi| {
            (0..t)
                .map(|ti| (0..c).map(|k| m[[k, ti, fi]]).fold(f64::NEG_INFINITY, f64::max))
                .sum::<f64>()
                / t as f64
        })
        .collect();
    let anchor = (0..f).fold(0, |b, fi| if confidence[fi] > confidence[b] { fi } else { b });

    let mut order = vec![anchor];
    for step in 1..f {
        if step <= anchor {
            order.push(anchor - step);
        }
        if anchor + step < f {
            order.push(anchor + step);
        }
    }

    let all = if c <= EXHAUSTIVE_LIMIT {
        permutations(c)
    } else {
        Vec::new()
    };
    let mut perms = vec![Vec::new(); f];
    let mut profile_sum: Array2<f64> = Array2::zeros((c, t));
    let mut out = Array3::zeros((c, t, f));
    for (n, &fi) in order.iter().enumerate() {
        let band = m.index_axis(Axis(2), fi);
        let perm = if n == 0 {
            (0..c).collect()
        } else {
            let score = Array2::from_shape_fn((c, c), |(k, r)| pearson(&profile_sum.row(k).to_owned(), band.row(r)));
            best_assignment(&score, &all)
        };
        for (k, &r) in perm.iter().enumerate() {
            let row = band.row(r);
            profile_sum.row_mut(k).zip_mut_with(&row, |a, b| *a += b);
            out.slice_mut(ndarray::s![k, .., fi]).assign(&row);
        }
        perms[fi] = perm;
    }
    Ok(Alignment {
        masks: MaskSet::new(out)?,
        permutations: perms,
        anchor,
    })
}
