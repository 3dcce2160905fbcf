use ndarray::Array2;
use pmq::eval::{accuracy, binary_auroc, confusion_matrix, macro_auroc, macro_f1, overall};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fraction of (positive, negative) pairs ordered correctly, ties counting half.
fn pairwise_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0u64);
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                pairs += 1;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

fn pairwise_macro(scores: &Array2<f64>, truth: &[usize]) -> f64 {
    let per: Vec<f64> = (0..scores.ncols())
        .filter_map(|c| {
            let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            pairwise_auroc(&scores.column(c).to_vec(), &pos)
        })
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

fn random_instance(r: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>) {
    let n = r.random_range(2..=50);
    let c = r.random_range(2..=5);
    let mut truth: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
    truth[0] = 0;
    truth[1] = 1;
    // coarse grid so ties are common
    let scores = Array2::from_shape_simple_fn((n, c), || r.random_range(0..6) as f64 / 5.0);
    (scores, truth)
}

#[test]
fn auroc_equals_pairwise_counting() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let (scores, truth) = random_instance(&mut r);
        let got = macro_auroc(scores.view(), &truth).unwrap();
        assert_eq!(got, pairwise_macro(&scores, &truth), "{scores} {truth:?}");
    }
}

#[test]
fn binary_auroc_equals_pairwise_counting() {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let n = r.random_range(1..=50);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..4) as f64).collect();
        let pos: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        assert_eq!(binary_auroc(&scores, &pos), pairwise_auroc(&scores, &pos));
    }
}

#[test]
fn random_scores_give_chance_auroc() {
    let mut r = ChaCha8Rng::seed_from_u64(13);
    let n = 5000;
    let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
    let scores = Array2::from_shape_simple_fn((n, 3), || r.random::<f64>());
    let a = macro_auroc(scores.view(), &truth).unwrap();
    assert!((a - 0.5).abs() < 0.05, "{a}");
}

#[test]
fn metrics_are_permutation_invariant() {
    let mut r = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let (scores, truth) = random_instance(&mut r);
        let c = scores.ncols();
        let pred: Vec<usize> = (0..truth.len()).map(|_| r.random_range(0..c)).collect();
        let mut order: Vec<usize> = (0..truth.len()).collect();
        order.shuffle(&mut r);
        let p2: Vec<usize> = order.iter().map(|&i| pred[i]).collect();
        let t2: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
        let s2 = scores.select(ndarray::Axis(0), &order);
        assert_eq!(accuracy(&pred, &truth).unwrap(), accuracy(&p2, &t2).unwrap());
        let (f1, f1p) = (macro_f1(&pred, &truth, c).unwrap(), macro_f1(&p2, &t2, c).unwrap());
        assert!((f1 - f1p).abs() < 1e-15);
        // rank statistics are computed exactly from counts
        assert_eq!(macro_auroc(scores.view(), &truth).unwrap(), macro_auroc(s2.view(), &t2).unwrap());
    }
}

#[test]
fn f1_is_one_exactly_for_diagonal_confusion() {
    let mut r = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..200 {
        let n = r.random_range(1..30);
        let c = 3;
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let pred: Vec<usize> = truth.iter().map(|&t| if r.random_bool(0.8) { t } else { r.random_range(0..c) }).collect();
        let f1 = macro_f1(&pred, &truth, c).unwrap();
        assert!((0.0..=1.0).contains(&f1));
        let cm = confusion_matrix(&pred, &truth, c).unwrap();
        let diagonal = (0..c).all(|i| (0..c).all(|j| i == j || cm[[i, j]] == 0));
        let present = (0..c).all(|k| truth.contains(&k));
        assert_eq!((f1 - 1.0).abs() < 1e-12, diagonal && present, "{cm}");
    }
}

#[test]
fn overall_of_nine_dataset_row() {
    let v = [56.1, 85.7, 71.7, 86.8, 96.8, 85.0, 64.2, 91.7, 69.0];
    assert_eq!(format!("{:.1}", overall(&v).unwrap()), "78.6");
}
