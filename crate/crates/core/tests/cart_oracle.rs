//! build_cart against a deliberately naive recursive reference that
//! enumerates every (feature, threshold) pair from scratch at every node.

use covifex_core::tree::{build_cart, FeatureColumns, TreeConfig};
use covifex_core::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-12;

fn gini(c: [f64; 2]) -> f64 {
    let t = c[0] + c[1];
    1.0 - (c[0] / t).powi(2) - (c[1] / t).powi(2)
}

fn counts(rows: &[usize], y: &[u8]) -> [f64; 2] {
    let mut c = [0.0; 2];
    for &r in rows {
        c[y[r] as usize] += 1.0;
    }
    c
}

enum Ref {
    Leaf([f64; 2]),
    Split(usize, f64, Box<Ref>, Box<Ref>),
}

fn reference(x: &[Vec<f64>], y: &[u8], rows: Vec<usize>, depth: usize, max_depth: Option<usize>, min_leaf: usize) -> Ref {
    let c = counts(&rows, y);
    let total = c[0] + c[1];
    let leaf = Ref::Leaf([c[0] / total, c[1] / total]);
    if c[0] == 0.0 || c[1] == 0.0 || max_depth.is_some_and(|m| depth >= m) {
        return leaf;
    }
    let mut best: Option<(f64, usize, f64)> = None;
    for (f, col) in x.iter().enumerate() {
        let mut vals: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let mut t = w[0] + (w[1] - w[0]) / 2.0;
            if t >= w[1] {
                t = w[0];
            }
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] <= t);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let (cl, cr) = (counts(&l, y), counts(&r, y));
            let dec = gini(c) - (l.len() as f64 / total) * gini(cl) - (r.len() as f64 / total) * gini(cr);
            let bar = best.map_or(EPS, |b| b.0 + EPS);
            if dec > bar {
                best = Some((dec, f, t));
            }
        }
    }
    match best {
        None => leaf,
        Some((_, f, t)) => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[f][i] <= t);
            Ref::Split(
                f,
                t,
                Box::new(reference(x, y, l, depth + 1, max_depth, min_leaf)),
                Box::new(reference(x, y, r, depth + 1, max_depth, min_leaf)),
            )
        }
    }
}

fn ref_predict(t: &Ref, row: &[f64]) -> u8 {
    match t {
        Ref::Leaf(p) => (p[1] > p[0]) as u8,
        Ref::Split(f, th, l, r) => ref_predict(if row[*f] <= *th { l } else { r }, row),
    }
}

#[test]
fn matches_exhaustive_reference_on_200_datasets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    for case in 0..200 {
        let n = rng.gen_range(2..=30);
        let d = rng.gen_range(1..=3);
        // small integer grid so duplicate values and tied splits are common
        let levels = rng.gen_range(2..8);
        let x: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..n).map(|_| rng.gen_range(0..levels) as f64 * 0.5).collect())
            .collect();
        let y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let labels: Vec<Label> = y.iter().map(|&b| Label::from_u8(b).unwrap()).collect();
        let cols = FeatureColumns::from_columns(x.clone()).unwrap();
        let max_depth = [None, Some(1), Some(2), Some(3)][case % 4];
        let min_leaf = 1 + (case / 4) % 2;
        let cfg = TreeConfig {
            max_depth,
            min_leaf,
            ..TreeConfig::default()
        };
        let tree = build_cart(&cols, &labels, &vec![1.0; n], &cfg).unwrap();
        let oracle = reference(&x, &y, (0..n).collect(), 0, max_depth, min_leaf);
        for i in 0..n {
            let row: Vec<f64> = x.iter().map(|c| c[i]).collect();
            let got = tree.predict_proba(&row).unwrap();
            let got = (got[1] > got[0]) as u8;
            assert_eq!(got, ref_predict(&oracle, &row), "case {case}, row {i}");
            checked += 1;
        }
    }
    assert!(checked > 200);
}
