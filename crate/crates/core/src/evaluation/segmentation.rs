//! Overlap and boundary metrics between binary masks.

use serde::{Deserialize, Serialize};

use super::mask::BinaryMask;
use crate::error::{shape, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMetrics {
    pub dice: f64,
    pub iou: f64,
    /// Symmetric Hausdorff distance in pixels.
    pub hd: f64,
    pub tpr: f64,
    pub tnr: f64,
}

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let mut started = false;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        if !started {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            started = true;
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    if !started {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest positive
/// pixel (`∞` for an empty mask).
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (h, w) = (mask.height(), mask.width());
    let mut g: Vec<f64> = mask.data().iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let mut col = vec![0.0; h];
    let mut out = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            col[r] = g[r * w + c];
        }
        edt_1d(&col, &mut out);
        for r in 0..h {
            g[r * w + c] = out[r];
        }
    }
    let mut row_out = vec![0.0; w];
    for r in 0..h {
        edt_1d(&g[r * w..(r + 1) * w], &mut row_out);
        g[r * w..(r + 1) * w].copy_from_slice(&row_out);
    }
    g
}

/// Largest distance from a positive pixel of `from` to the nearest positive
/// pixel of `to`.
pub fn directed_hausdorff(from: &BinaryMask, to: &BinaryMask) -> f64 {
    let dt = squared_distance_transform(to);
    from.data().iter().zip(&dt).filter(|(p, _)| **p).map(|(_, d)| *d).fold(0.0, f64::max).sqrt()
}

/// Symmetric Hausdorff distance. Two empty masks give 0; exactly one empty
/// mask gives the image diagonal `√(H² + W²)`.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check(a, b)?;
    Ok(match (a.is_empty(), b.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => ((a.height().pow(2) + a.width().pow(2)) as f64).sqrt(),
        _ => directed_hausdorff(a, b).max(directed_hausdorff(b, a)),
    })
}

fn check(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(shape(format!("masks {}x{} and {}x{}", a.height(), a.width(), b.height(), b.width())));
    }
    Ok(())
}

/// Dice, IoU, Hausdorff, TPR and TNR of `pred` against `reference`.
///
/// Ratios with an empty denominator are 1 (nothing to find, nothing
/// missed); with exactly one mask empty Dice and IoU are 0.
pub fn segmentation_metrics(pred: &BinaryMask, reference: &BinaryMask) -> Result<SegmentationMetrics> {
    check(pred, reference)?;
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &r) in pred.data().iter().zip(reference.data()) {
        match (p, r) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    Ok(SegmentationMetrics {
        dice: ratio(2 * tp, 2 * tp + fp + fneg),
        iou: ratio(tp, tp + fp + fneg),
        hd: hausdorff(pred, reference)?,
        tpr: ratio(tp, tp + fneg),
        tnr: ratio(tn, tn + fp),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_hd(a: &BinaryMask, b: &BinaryMask) -> f64 {
        let (pa, pb) = (a.positives(), b.positives());
        let directed = |x: &[(usize, usize)], y: &[(usize, usize)]| {
            x.iter()
                .map(|&(r, c)| {
                    y.iter().map(|&(s, d)| ((r as f64 - s as f64).powi(2) + (c as f64 - d as f64).powi(2)).sqrt()).fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        directed(&pa, &pb).max(directed(&pb, &pa))
    }

    fn mask(h: usize, w: usize, cells: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| cells.contains(&(r, c)))
    }

    #[test]
    fn identical_masks() {
        let m = mask(5, 5, &[(1, 1), (2, 3)]);
        let s = segmentation_metrics(&m, &m).unwrap();
        assert_eq!((s.dice, s.iou, s.hd, s.tpr, s.tnr), (1.0, 1.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn three_four_five() {
        let s = segmentation_metrics(&mask(6, 6, &[(0, 0)]), &mask(6, 6, &[(3, 4)])).unwrap();
        assert_eq!((s.dice, s.iou, s.hd), (0.0, 0.0, 5.0));
    }

    #[test]
    fn shifted_block() {
        let p = mask(5, 5, &[(1, 1), (1, 2), (2, 1), (2, 2)]);
        let r = mask(5, 5, &[(1, 2), (1, 3), (2, 2), (2, 3)]);
        let s = segmentation_metrics(&p, &r).unwrap();
        assert_eq!(s.dice, 0.5);
        assert!((s.iou - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.hd, 1.0);
    }

    #[test]
    fn empty_conventions() {
        let e = BinaryMask::empty(3, 4);
        let s = segmentation_metrics(&e, &e).unwrap();
        assert_eq!((s.dice, s.iou, s.hd), (1.0, 1.0, 0.0));
        let s = segmentation_metrics(&e, &mask(3, 4, &[(0, 0)])).unwrap();
        assert_eq!((s.dice, s.iou, s.hd), (0.0, 0.0, 5.0));
        assert!(segmentation_metrics(&e, &BinaryMask::empty(4, 3)).is_err());
    }

    fn arb_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
        (1usize..=16, 1usize..=16, 0.0f64..1.0).prop_flat_map(|(h, w, p)| {
            let cells = proptest::collection::vec(proptest::bool::weighted(p.clamp(0.01, 0.99)), h * w);
            (cells.clone(), cells).prop_map(move |(a, b)| (BinaryMask::new(h, w, a).unwrap(), BinaryMask::new(h, w, b).unwrap()))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn hausdorff_equals_brute_force((a, b) in arb_pair()) {
            prop_assume!(!a.is_empty() && !b.is_empty());
            prop_assert_eq!(hausdorff(&a, &b).unwrap(), brute_hd(&a, &b));
        }

        #[test]
        fn dice_dominates_iou((a, b) in arb_pair()) {
            let s = segmentation_metrics(&a, &b).unwrap();
            prop_assert!(s.dice >= s.iou);
            let extreme = |v: f64| v == 0.0 || v == 1.0;
            prop_assert_eq!(s.dice == s.iou, extreme(s.dice) && extreme(s.iou));
            prop_assert!((0.0..=1.0).contains(&s.tpr) && (0.0..=1.0).contains(&s.tnr));
        }

        #[test]
        fn symmetry_and_complements((a, b) in arb_pair()) {
            let ab = segmentation_metrics(&a, &b).unwrap();
            let ba = segmentation_metrics(&b, &a).unwrap();
            prop_assert_eq!(ab.dice, ba.dice);
            prop_assert_eq!(ab.iou, ba.iou);
            prop_assert_eq!(ab.hd, ba.hd);
            let cc = segmentation_metrics(&a.complement(), &b.complement()).unwrap();
            prop_assert_eq!(ab.tpr, cc.tnr);
        }

        #[test]
        fn distance_transform_matches_brute_force((a, _b) in arb_pair()) {
            let dt = squared_distance_transform(&a);
            let pos = a.positives();
            for r in 0..a.height() {
                for c in 0..a.width() {
                    let best = pos.iter().map(|&(s, d)| ((r as i64 - s as i64).pow(2) + (c as i64 - d as i64).pow(2)) as f64).fold(f64::INFINITY, f64::min);
                    prop_assert_eq!(dt[r * a.width() + c], best);
                }
            }
        }
    }
}
