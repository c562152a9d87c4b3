use super::*;
use crate::nets::ModelConfig;
use crate::synth::toy_scene;
use crate::numeric::Rng;
use proptest::prelude::*;

fn set(rows: Vec<Vec<f64>>) -> FeatureSet {
    FeatureSet::from_rows(&rows, "test").unwrap()
}

fn random_set(seed: u64, n: usize, d: usize, shift: f64) -> FeatureSet {
    let t: Tensor<f64> = Rng::new(seed).normal(&[n, d]);
    FeatureSet::new(t.map(|v| v + shift), "test").unwrap()
}

fn kid_oracle(a: &FeatureSet, b: &FeatureSet, paired: bool) -> f64 {
    let d = a.dim() as f64;
    let k = |x: &[f64], y: &[f64]| {
        let mut s = 0.0;
        for i in 0..x.len() {
            s += x[i] * y[i];
        }
        (s / d + 1.0).powi(3)
    };
    let (m, n) = (a.len(), b.len());
    let mut aa = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                aa += k(a.row(i), a.row(j));
            }
        }
    }
    let mut bb = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                bb += k(b.row(i), b.row(j));
            }
        }
    }
    let mut ab = 0.0;
    for i in 0..m {
        for j in 0..n {
            if !(paired && i == j) {
                ab += k(a.row(i), b.row(j));
            }
        }
    }
    let cross = if paired { m * (m - 1) } else { m * n };
    aa / (m * (m - 1)) as f64 + bb / (n * (n - 1)) as f64 - 2.0 * ab / cross as f64
}

fn mmd_oracle(a: &FeatureSet, b: &FeatureSet, sigma: f64) -> f64 {
    let k = |x: &[f64], y: &[f64]| {
        let mut s = 0.0;
        for i in 0..x.len() {
            s += (x[i] - y[i]).powi(2);
        }
        (-s / (2.0 * sigma * sigma)).exp()
    };
    let mean = |p: &FeatureSet, q: &FeatureSet| {
        let mut s = 0.0;
        for i in 0..p.len() {
            for j in 0..q.len() {
                s += k(p.row(i), q.row(j));
            }
        }
        s / (p.len() * q.len()) as f64
    };
    mean(a, a) + mean(b, b) - 2.0 * mean(a, b)
}

fn rel_err(x: f64, y: f64) -> f64 {
    (x - y).abs() / x.abs().max(y.abs()).max(1e-300)
}

#[test]
fn fid_identical_sets() {
    for (n, d) in [(30, 5), (2, 6), (4, 8), (50, 1)] {
        let a = random_set(n as u64, n, d, 0.0);
        assert!(fid(&a, &a).unwrap().abs() < 1e-9, "n {n} d {d}");
    }
}

#[test]
fn fid_one_dimensional_mean_shift() {
    let a = set(vec![vec![-1.0], vec![1.0]]);
    let b = set(vec![vec![0.0], vec![2.0]]);
    assert!((fid(&a, &b).unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn fid_diagonal_variance_case() {
    // ±s·e_k over d axes: covariance 2s²/(2d−1)·I.
    let d = 4;
    let sample = |var: f64| {
        let s = (var * (2 * d - 1) as f64 / 2.0).sqrt();
        let mut rows = Vec::new();
        for k in 0..d {
            for sign in [1.0, -1.0] {
                let mut r = vec![0.0; d];
                r[k] = sign * s;
                rows.push(r);
            }
        }
        set(rows)
    };
    let v = fid(&sample(4.0), &sample(1.0)).unwrap();
    assert!((v - d as f64).abs() < 1e-6, "{v}");
}

#[test]
fn fid_one_dimensional_closed_form() {
    for seed in 0..10 {
        let a = random_set(seed, 20, 1, 0.0);
        let b = random_set(seed + 100, 25, 1, 0.7).features().map(|v| 2.0 * v);
        let b = FeatureSet::new(b, "test").unwrap();
        let stats = |s: &FeatureSet| {
            let n = s.len() as f64;
            let m = (0..s.len()).map(|i| s.row(i)[0]).sum::<f64>() / n;
            let v = (0..s.len()).map(|i| (s.row(i)[0] - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, v)
        };
        let ((ma, va), (mb, vb)) = (stats(&a), stats(&b));
        let want = (ma - mb).powi(2) + (va.sqrt() - vb.sqrt()).powi(2);
        assert!(rel_err(fid(&a, &b).unwrap(), want) < 1e-9);
    }
}

#[test]
fn fid_rejects_bad_input() {
    let a = random_set(1, 5, 3, 0.0);
    assert!(fid(&a, &random_set(2, 5, 2, 0.0)).is_err());
    assert!(fid(&a, &random_set(2, 1, 3, 0.0)).is_err());
    assert!(FeatureSet::from_rows(&[vec![f64::NAN]], "x").is_err());
}

#[test]
fn kid_constant_sets_cancel_exactly() {
    let a = set(vec![vec![0.3, -1.2, 2.0]; 5]);
    let b = set(vec![vec![0.3, -1.2, 2.0]; 7]);
    assert_eq!(kid(&a, &b).unwrap(), 0.0);
}

#[test]
fn kid_copy_is_exactly_zero() {
    for (n, d) in [(2, 1), (6, 3), (40, 8)] {
        let a = random_set(n as u64, n, d, 0.0);
        assert_eq!(kid(&a, &a.clone()).unwrap(), 0.0);
    }
}

#[test]
fn kid_permuted_copy_matches_unbiased_value() {
    // Reordering b changes which cross pairs the paired form skips, so an
    // equal multiset in a different order does not cancel.
    let a = random_set(5, 6, 3, 0.0);
    let rows: Vec<Vec<f64>> = (0..6).map(|i| a.row((i + 1) % 6).to_vec()).collect();
    let b = set(rows);
    let v = kid(&a, &b).unwrap();
    assert!(rel_err(v, kid_oracle(&a, &b, true)) < 1e-10);
    assert!(v != 0.0);
    // The unpaired form on a = b reduces to 2(S_off/(n(n−1)) − S_all/n²).
    let d = 3.0;
    let k = |x: &[f64], y: &[f64]| ((x[0] * y[0] + x[1] * y[1] + x[2] * y[2]) / d + 1.0).powi(3);
    let (mut off, mut diag) = (0.0, 0.0);
    for i in 0..6 {
        for j in 0..6 {
            if i == j {
                diag += k(a.row(i), a.row(j));
            } else {
                off += k(a.row(i), a.row(j));
            }
        }
    }
    let want = 2.0 * (off / 30.0 - (off + diag) / 36.0);
    assert!(rel_err(kid_with(&a, &a, KidEstimator::Unpaired).unwrap(), want) < 1e-10);
}

#[test]
fn kid_two_point_sets_by_hand() {
    let a = set(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let b = set(vec![vec![1.0, 1.0], vec![-1.0, 0.0]]);
    // k = (xᵀy/2 + 1)³
    let aa = 1.0; // k(a0, a1) = 1, counted twice over 2·1 pairs
    let bb = (0.5f64).powi(3); // (-1/2 + 1)³
    // Cross kernels: k(a0,b0) = 1.5³, k(a0,b1) = 0.5³, k(a1,b0) = 1.5³, k(a1,b1) = 1.
    let unpaired = [1.5f64, 0.5, 1.5, 1.0].iter().map(|v| v.powi(3)).sum::<f64>() / 4.0;
    let paired = (0.5f64.powi(3) + 1.5f64.powi(3)) / 2.0;
    assert!((kid(&a, &b).unwrap() - (aa + bb - 2.0 * paired)).abs() < 1e-15);
    assert!((kid_with(&a, &b, KidEstimator::Unpaired).unwrap() - (aa + bb - 2.0 * unpaired)).abs() < 1e-15);
    assert!(kid_with(&a, &set(vec![vec![0.0, 0.0]; 3]), KidEstimator::Paired).is_err());
}

#[test]
fn mmd_two_point_closed_form() {
    let sigma = 0.8;
    let a = set(vec![vec![0.0, 0.0]]);
    let b = set(vec![vec![sigma, sigma]]);
    let v = mmd_rbf(&a, &b, sigma).unwrap();
    assert!((v - (2.0 - 2.0 * (-1.0f64).exp())).abs() < 1e-12);
    assert_eq!(mmd_rbf(&a, &a, sigma).unwrap(), 0.0);
    assert!(mmd_rbf(&a, &b, 0.0).is_err());
}

#[test]
fn median_bandwidth_small_case() {
    let a = set(vec![vec![0.0], vec![1.0]]);
    let b = set(vec![vec![3.0]]);
    // Distances 1, 3, 2.
    assert_eq!(median_bandwidth(&a, &b).unwrap(), 2.0);
    assert!(median_bandwidth(&a, &a).is_ok());
    let same = set(vec![vec![1.0]; 3]);
    assert!(median_bandwidth(&same, &same).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn kernels_match_scalar_oracles(seed in 0u64..10_000, m in 2usize..50, n in 2usize..50, d in 1usize..8, shift in -1.0f64..1.0) {
        let a = random_set(seed, m, d, 0.0);
        let b = random_set(seed + 1, n, d, shift);
        prop_assert!(rel_err(kid(&a, &b).unwrap(), kid_oracle(&a, &b, m == n)) <= 1e-10);
        prop_assert!(rel_err(kid_with(&a, &b, KidEstimator::Unpaired).unwrap(), kid_oracle(&a, &b, false)) <= 1e-10);
        let sigma = median_bandwidth(&a, &b).unwrap();
        prop_assert!(rel_err(mmd_rbf(&a, &b, sigma).unwrap(), mmd_oracle(&a, &b, sigma)) <= 1e-10);
    }

    #[test]
    fn metrics_are_symmetric(seed in 0u64..10_000, m in 2usize..30, n in 2usize..30, d in 1usize..6) {
        let a = random_set(seed, m, d, 0.0);
        let b = random_set(seed + 7, n, d, 0.5);
        prop_assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert!(rel_err(kid(&a, &b).unwrap(), kid(&b, &a).unwrap()) < 1e-10);
        prop_assert!(kid(&a, &a.clone()).unwrap() == 0.0);
        prop_assert!(rel_err(mmd_rbf(&a, &b, 1.3).unwrap(), mmd_rbf(&b, &a, 1.3).unwrap()) < 1e-12);
    }

    #[test]
    fn fid_invariant_under_rotation(seed in 0u64..10_000, d in 1usize..7) {
        let a = random_set(seed, 25, d, 0.0);
        let b = random_set(seed + 3, 30, d, 0.4);
        let g: Tensor<f64> = Rng::new(seed + 9).normal(&[d, d]);
        let q = DMatrix::from_row_slice(d, d, g.data()).qr().q();
        let rotate = |s: &FeatureSet| {
            let x = DMatrix::from_row_slice(s.len(), d, s.features().data()) * &q;
            let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
            set(rows)
        };
        let before = fid(&a, &b).unwrap();
        let after = fid(&rotate(&a), &rotate(&b)).unwrap();
        prop_assert!((before - after).abs() < 1e-8, "{} vs {}", before, after);
    }
}

fn grid(labels: Vec<u16>) -> SemanticVoxelGrid {
    SemanticVoxelGrid::new([labels.len(), 1, 1], 0.1, 3, labels).unwrap()
}

#[test]
fn iou_hand_cases() {
    let g = grid(vec![0, 1, 1, 2, 2, 0]);
    assert_eq!(iou(&g, &g, 1).unwrap(), Some(1.0));
    assert_eq!(iou(&g, &g, 2).unwrap(), Some(1.0));
    assert_eq!(miou(&g, &g).unwrap(), Some(1.0));

    let gt = grid(vec![1, 1, 0, 0]);
    let disjoint = grid(vec![0, 0, 1, 1]);
    assert_eq!(iou(&disjoint, &gt, 1).unwrap(), Some(0.0));

    let pred = grid(vec![0, 1, 1, 0]);
    assert_eq!(iou(&pred, &gt, 1).unwrap(), Some(1.0 / 3.0));
    assert_eq!(iou(&pred, &gt, 2).unwrap(), None);
    assert_eq!(miou(&pred, &gt).unwrap(), Some(1.0 / 3.0));

    let other = SemanticVoxelGrid::new([2, 2, 1], 0.1, 3, vec![0; 4]).unwrap();
    assert!(iou(&other, &gt, 1).is_err());
}

#[test]
fn iou_counts_accumulate_over_pairs() {
    let mut c = IouCounts::new(3);
    c.add(&grid(vec![1, 1, 0]), &grid(vec![1, 0, 0])).unwrap();
    c.add(&grid(vec![2, 1, 0]), &grid(vec![2, 1, 2])).unwrap();
    // Class 1: inter 2, union 3; class 2: inter 1, union 2.
    assert_eq!(c.iou(1), Some(2.0 / 3.0));
    assert_eq!(c.iou(2), Some(0.5));
    assert_eq!(c.miou(), Some((2.0 / 3.0 + 0.5) / 2.0));
}

#[test]
fn extracted_features_follow_scenes() {
    let cfg = ModelConfig::new([1, 2, 2], 3);
    let vae = GraphVae::new(&cfg, [16, 16, 8]).unwrap();
    let p: crate::numeric::ParamStore<f64> = vae.init_params(&Rng::new(0));
    let s0 = toy_scene([16, 16, 8], 3, 2, 1).unwrap();
    let s1 = toy_scene([16, 16, 8], 3, 3, 2).unwrap();
    let f = extract_features(&vae, &p, &[s0.clone(), s1.clone(), s0.clone()]).unwrap();
    assert_eq!(f.dim(), cfg.widths.code);
    assert_eq!(f.row(0), f.row(2));
    assert_ne!(f.row(0), f.row(1));
    let g = extract_features(&vae, &p, &[s1, s0]).unwrap();
    assert_eq!(g.row(0), f.row(1));
    assert_eq!(g.row(1), f.row(0));
    let wrong = SemanticVoxelGrid::empty([8, 8, 8], 0.1, 3).unwrap();
    assert!(extract_features(&vae, &p, &[wrong]).is_err());
}

#[test]
fn report_scales_kid() {
    let a = random_set(1, 10, 3, 0.0);
    let b = random_set(2, 12, 3, 0.5);
    let r = MetricReport::compute(&a, &b, None, None).unwrap();
    assert_eq!(r.kid_x1e3, r.kid.map(|k| k * 1e3));
    assert_eq!(r.mmd_bandwidth, Some(median_bandwidth(&a, &b).unwrap()));
    let v = serde_json::to_value(&r).unwrap();
    assert!(v.get("kid_x1e3").is_some());
    let tiny = MetricReport::compute(&random_set(3, 1, 3, 0.0), &b, None, None).unwrap();
    assert_eq!(tiny.fid, None);
    assert!(tiny.mmd.is_some());
}
