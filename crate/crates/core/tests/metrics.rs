use adaptseg::metrics::{compute_metrics, confusion_counts, ConfusionCounts, MetricReport};
use adaptseg::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Mean of fractions over a common denominator (the lcm of all denominators).
fn exact_mean(fracs: &[(u64, u64)]) -> f64 {
    let l = fracs.iter().filter(|f| f.1 > 0).fold(1u128, |l, f| l / gcd(l, f.1 as u128) * f.1 as u128);
    let num: u128 = fracs.iter().filter(|f| f.1 > 0).map(|&(n, d)| n as u128 * (l / d as u128)).sum();
    let den = l * fracs.len() as u128;
    let g = gcd(num, den);
    (num / g) as f64 / (den / g) as f64
}

/// Pixel-by-pixel recount of every quantity, then the textbook definitions.
fn oracle(pred: &[u8], gt: &[u8], k: usize, bg: u8) -> MetricReport {
    let n = pred.len() as u64;
    let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count() as u64;
    let fg: Vec<(u8, u8)> = pred.iter().zip(gt).filter(|(_, g)| **g != bg).map(|(p, g)| (*p, *g)).collect();
    let fg_correct = fg.iter().filter(|(p, g)| p == g).count() as u64;
    let (mut ps, mut rs, mut fs, mut per_class) = (vec![], vec![], vec![], vec![]);
    for c in 0..k as u8 {
        let tp = pred.iter().zip(gt).filter(|(p, g)| **p == c && **g == c).count() as u64;
        let fp = pred.iter().zip(gt).filter(|(p, g)| **p == c && **g != c).count() as u64;
        let fneg = pred.iter().zip(gt).filter(|(p, g)| **p != c && **g == c).count() as u64;
        if tp + fneg == 0 {
            per_class.push(None);
            continue;
        }
        ps.push((tp, tp + fp));
        rs.push((tp, tp + fneg));
        let f = (2 * tp, 2 * tp + fp + fneg);
        per_class.push(Some(if tp == 0 { 0.0 } else { f.0 as f64 / f.1 as f64 }));
        fs.push(f);
    }
    MetricReport {
        pixel_accuracy: correct as f64 / n as f64,
        foreground_accuracy: (!fg.is_empty()).then(|| fg_correct as f64 / fg.len() as f64),
        avg_precision: exact_mean(&ps),
        avg_recall: exact_mean(&rs),
        avg_f1: exact_mean(&fs),
        per_class_f1: per_class,
    }
}

fn random_map(r: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> Tensor<u8> {
    Tensor::new(vec![h, w], (0..h * w).map(|_| r.gen_range(0..k) as u8).collect()).unwrap()
}

#[test]
fn agrees_exactly_with_brute_force_oracle() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for k in [2usize, 4, 12] {
        for _ in 0..100 {
            let (h, w) = (r.gen_range(1..10), r.gen_range(1..10));
            let gt = random_map(&mut r, h, w, k);
            let pred = if r.gen_bool(0.3) {
                // Mostly-correct predictions exercise the high end of every score.
                let d = gt.data().iter().map(|&g| if r.gen_bool(0.8) { g } else { r.gen_range(0..k) as u8 }).collect();
                Tensor::new(vec![h, w], d).unwrap()
            } else {
                random_map(&mut r, h, w, k)
            };
            let counts = confusion_counts(&pred, &gt, k).unwrap();
            for i in 0..k {
                for j in 0..k {
                    let brute = pred
                        .data()
                        .iter()
                        .zip(gt.data())
                        .filter(|(p, g)| **g as usize == i && **p as usize == j)
                        .count();
                    assert_eq!(counts.get(i, j), brute as u64);
                }
            }
            assert_eq!(compute_metrics(&counts, 0).unwrap(), oracle(pred.data(), gt.data(), k, 0));
        }
    }
}

#[test]
fn perfect_prediction_scores_one() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let mut x = random_map(&mut r, 6, 5, 4);
        x.data_mut()[0] = 1;
        let m = compute_metrics(&confusion_counts(&x, &x, 4).unwrap(), 0).unwrap();
        assert_eq!((m.pixel_accuracy, m.foreground_accuracy), (1.0, Some(1.0)));
        assert_eq!((m.avg_precision, m.avg_recall, m.avg_f1), (1.0, 1.0, 1.0));
        assert!(m.per_class_f1.iter().flatten().all(|f| *f == 1.0));
    }
}

#[test]
fn counts_add_over_images() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<(Tensor<u8>, Tensor<u8>)> =
        (0..5).map(|_| (random_map(&mut r, 4, 3, 4), random_map(&mut r, 4, 3, 4))).collect();
    let mut acc = ConfusionCounts::new(4);
    for (p, g) in &pairs {
        acc.merge(&confusion_counts(p, g, 4).unwrap()).unwrap();
    }
    type Pick = fn(&(Tensor<u8>, Tensor<u8>)) -> &Tensor<u8>;
    let cat = |f: Pick| Tensor::new(vec![20, 3], pairs.iter().flat_map(|x| f(x).data().to_vec()).collect()).unwrap();
    let whole = confusion_counts(&cat(|x| &x.0), &cat(|x| &x.1), 4).unwrap();
    assert_eq!(acc, whole);
    assert_eq!(compute_metrics(&acc, 0).unwrap(), compute_metrics(&whole, 0).unwrap());
}

#[test]
fn report_serializations() {
    let gt = Tensor::new(vec![2, 2], vec![0u8, 1, 2, 3]).unwrap();
    let m = compute_metrics(&confusion_counts(&gt, &gt, 4).unwrap(), 0).unwrap();
    let keys = m.keys();
    assert_eq!(keys.len(), 9);
    let json: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
    let obj = json.as_object().unwrap();
    assert_eq!(obj.len(), 9);
    for key in &keys {
        assert_eq!(obj[key].as_f64(), Some(1.0));
    }
    let csv = m.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], keys.join(","));
    assert_eq!(lines[1].split(',').count(), 9);
    assert_eq!(m.to_json(), compute_metrics(&confusion_counts(&gt, &gt, 4).unwrap(), 0).unwrap().to_json());
}
