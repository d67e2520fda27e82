use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};

/// One agglomeration step. Leaves are `0..T`; the cluster formed by merge
/// `m` gets id `T + m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
}

#[derive(Serialize, Deserialize)]
struct DendrogramFile {
    labels: Vec<String>,
    /// `[a, b, height, size]`
    merges: Vec<(usize, usize, f64, usize)>,
    tree: Value,
}

impl Dendrogram {
    /// Leaf order of a left-to-right traversal of the tree.
    pub fn leaf_order(&self) -> Vec<usize> {
        let t = self.labels.len();
        let mut out = Vec::with_capacity(t);
        let mut stack = vec![if self.merges.is_empty() { 0 } else { t + self.merges.len() - 1 }];
        if t == 0 {
            return out;
        }
        while let Some(id) = stack.pop() {
            if id < t {
                out.push(id);
            } else {
                let m = self.merges[id - t];
                stack.push(m.b);
                stack.push(m.a);
            }
        }
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = DendrogramFile {
            labels: self.labels.clone(),
            merges: self.merges.iter().map(|m| (m.a, m.b, m.height, m.size)).collect(),
            tree: ward_tree(self),
        };
        write_json(path, &file)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f: DendrogramFile = read_json(path, "dendrogram")?;
        Ok(Dendrogram {
            labels: f.labels,
            merges: f
                .merges
                .into_iter()
                .map(|(a, b, height, size)| Merge { a, b, height, size })
                .collect(),
        })
    }
}

/// Nested `{id, height, size, children}` / `{id, label}` tree.
pub fn ward_tree(d: &Dendrogram) -> Value {
    let t = d.labels.len();
    fn node(d: &Dendrogram, t: usize, id: usize) -> Value {
        if id < t {
            json!({ "id": id, "label": d.labels[id] })
        } else {
            let m = d.merges[id - t];
            json!({
                "id": id,
                "height": m.height,
                "size": m.size,
                "children": [node(d, t, m.a), node(d, t, m.b)],
            })
        }
    }
    match t {
        0 => Value::Null,
        _ if d.merges.is_empty() => node(d, t, 0),
        _ => node(d, t, t + d.merges.len() - 1),
    }
}

fn check(dist: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    let t = dist.nrows();
    let bad = |m: String| Err(Error::InvalidArgument(m));
    if dist.ncols() != t || labels.len() != t {
        return bad(format!("distance matrix {}x{} with {} labels", t, dist.ncols(), labels.len()));
    }
    if t == 0 {
        return bad("nothing to cluster".into());
    }
    for i in 0..t {
        if dist[(i, i)].abs() > 1e-12 {
            return bad(format!("non-zero diagonal at {i}"));
        }
        for j in 0..t {
            let v = dist[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return bad(format!("distance ({i}, {j}) = {v} is not a finite non-negative number"));
            }
            if (v - dist[(j, i)]).abs() > 1e-12 * v.abs().max(1.0) {
                return bad(format!("distance matrix is not symmetric at ({i}, {j})"));
            }
        }
    }
    Ok(())
}

/// Agglomerative clustering with the Ward criterion through the
/// Lance–Williams update
/// `d(k, i∪j)² = ((nᵢ+nₖ)·d(k,i)² + (nⱼ+nₖ)·d(k,j)² − nₖ·d(i,j)²) / (nᵢ+nⱼ+nₖ)`.
/// Ties go to the pair with the smallest ids.
pub fn ward_cluster(dist: &DMatrix<f64>, labels: Vec<String>) -> Result<Dendrogram> {
    check(dist, &labels)?;
    let t = dist.nrows();
    let total = 2 * t - 1;
    let mut d = DMatrix::zeros(total, total);
    d.view_mut((0, 0), (t, t)).copy_from(dist);
    let mut size = vec![1usize; total];
    let mut active: Vec<usize> = (0..t).collect();
    let mut merges = Vec::with_capacity(t - 1);
    while active.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for (x, &i) in active.iter().enumerate() {
            for &j in &active[x + 1..] {
                let cand = (d[(i, j)], i, j);
                let better = match best {
                    None => true,
                    Some(b) => cand.0.total_cmp(&b.0).then((cand.1, cand.2).cmp(&(b.1, b.2))).is_lt(),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (h, i, j) = best.expect("at least two active clusters");
        let new = t + merges.len();
        size[new] = size[i] + size[j];
        merges.push(Merge { a: i, b: j, height: h, size: size[new] });
        active.retain(|&c| c != i && c != j);
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for &k in &active {
            let nk = size[k] as f64;
            let sq = ((ni + nk) * d[(k, i)].powi(2) + (nj + nk) * d[(k, j)].powi(2) - nk * h * h) / (ni + nj + nk);
            let v = sq.max(0.0).sqrt();
            d[(k, new)] = v;
            d[(new, k)] = v;
        }
        active.push(new);
    }
    Ok(Dendrogram { labels, merges })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect()
    }

    #[test]
    fn three_leaf_example() {
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 4.0, 1.0, 0.0, 4.0, 4.0, 4.0, 0.0]);
        let g = ward_cluster(&d, labels(3)).unwrap();
        assert_eq!((g.merges[0].a, g.merges[0].b, g.merges[0].height), (0, 1, 1.0));
        assert_eq!((g.merges[1].a, g.merges[1].b, g.merges[1].size), (2, 3, 3));
        assert!((g.merges[1].height - 21f64.sqrt()).abs() < 1e-12);
        assert_eq!(g.leaf_order(), vec![2, 0, 1]);
    }

    #[test]
    fn degenerate_inputs() {
        let two = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.3, 0.0]);
        let g = ward_cluster(&two, labels(2)).unwrap();
        assert_eq!(g.merges, vec![Merge { a: 0, b: 1, height: 0.3, size: 2 }]);
        let zero = DMatrix::zeros(4, 4);
        assert!(ward_cluster(&zero, labels(4)).unwrap().merges.iter().all(|m| m.height == 0.0));
        let one = ward_cluster(&DMatrix::zeros(1, 1), labels(1)).unwrap();
        assert!(one.merges.is_empty());
        assert_eq!(ward_tree(&one)["label"], "A");
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.2, 0.0]);
        assert!(ward_cluster(&asym, labels(2)).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[0.0, -0.3, -0.3, 0.0]);
        assert!(ward_cluster(&neg, labels(2)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 4.0, 1.0, 0.0, 4.0, 4.0, 4.0, 0.0]);
        let g = ward_cluster(&d, labels(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dendrogram.json");
        g.write_json(&p).unwrap();
        assert_eq!(Dendrogram::read_json(&p).unwrap(), g);
        let tree = ward_tree(&g);
        assert_eq!(tree["children"][0]["label"], "C");
        assert_eq!(tree["children"][1]["size"], 2);
    }
}
