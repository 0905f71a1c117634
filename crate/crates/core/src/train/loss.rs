use crate::error::{Error, Result};
use crate::linalg::{dot, log_sum_exp, softmax};

/// Softmax cross-entropy of `logits` against class `label`.
pub fn binary_loss(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

/// Loss and `∂loss/∂logits`.
pub fn binary_loss_grad(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut d = softmax(logits);
    d[label] -= 1.0;
    (binary_loss(logits, label), d)
}

fn scores(anchor: &[f64], candidates: &[&[f64]], target: usize) -> Result<Vec<f64>> {
    if candidates.len() < 2 || target >= candidates.len() {
        return Err(Error::Config(format!(
            "ranking needs >= 2 candidates and a valid target, got {} / {target}",
            candidates.len()
        )));
    }
    candidates
        .iter()
        .map(|c| {
            if c.len() != anchor.len() {
                Err(Error::DimMismatch {
                    expected: anchor.len(),
                    got: c.len(),
                })
            } else {
                Ok(dot(anchor, c))
            }
        })
        .collect()
}

/// Cross-entropy over the anchor·candidate dot products, with the true
/// candidate as the target class.
pub fn ranking_loss(anchor: &[f64], candidates: &[&[f64]], target: usize) -> Result<f64> {
    let s = scores(anchor, candidates, target)?;
    Ok(log_sum_exp(&s) - s[target])
}

#[derive(Clone, Debug)]
pub struct RankingGrad {
    pub loss: f64,
    /// `∂loss/∂score_j`.
    pub d_scores: Vec<f64>,
    pub d_anchor: Vec<f64>,
    pub d_candidates: Vec<Vec<f64>>,
}

pub fn ranking_loss_grad(
    anchor: &[f64],
    candidates: &[&[f64]],
    target: usize,
) -> Result<RankingGrad> {
    let s = scores(anchor, candidates, target)?;
    let loss = log_sum_exp(&s) - s[target];
    let mut d_scores = softmax(&s);
    d_scores[target] -= 1.0;
    let mut d_anchor = vec![0.0; anchor.len()];
    for (&w, c) in d_scores.iter().zip(candidates) {
        crate::linalg::axpy(w, c, &mut d_anchor);
    }
    let d_candidates = d_scores
        .iter()
        .map(|&w| anchor.iter().map(|a| w * a).collect())
        .collect();
    Ok(RankingGrad {
        loss,
        d_scores,
        d_anchor,
        d_candidates,
    })
}

/// True candidate strictly ahead of every impostor.
pub fn ranks_first(anchor: &[f64], candidates: &[&[f64]], target: usize) -> bool {
    let t = dot(anchor, candidates[target]);
    candidates
        .iter()
        .enumerate()
        .all(|(j, c)| j == target || dot(anchor, c) < t)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn binary_values() {
        assert!((binary_loss(&[0.0, 0.0], 0) - 2f64.ln()).abs() < 1e-15);
        assert!((binary_loss(&[0.0, 0.0], 1) - 2f64.ln()).abs() < 1e-15);
        assert!(binary_loss(&[50.0, -50.0], 0) < 1e-40);
        // ln(1 + e²)
        let expected = (1.0 + 2f64.exp()).ln();
        assert!((binary_loss(&[1.0, -1.0], 1) - expected).abs() < 1e-14);
        assert!((expected - 2.1269).abs() < 1e-4);
    }

    #[test]
    fn ranking_values() {
        let a = [1.0, 2.0];
        let c = [0.5, 0.5];
        let cands: Vec<&[f64]> = vec![&c; 4];
        assert!((ranking_loss(&a, &cands, 2).unwrap() - 4f64.ln()).abs() < 1e-14);

        // k = 2, dots (5, −5)
        let a = [1.0];
        let (p, n) = ([5.0], [-5.0]);
        let l = ranking_loss(&a, &[&p, &n], 0).unwrap();
        assert!((l - (1.0 + (-10f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 4.54e-5).abs() < 1e-7);

        // dots (1, 0, −1)
        let a = [1.0, 0.0];
        let e = std::f64::consts::E;
        let cands: [&[f64]; 3] = [&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]];
        let l = ranking_loss(&a, &cands, 0).unwrap();
        let expected = -(e / (e + 1.0 + 1.0 / e)).ln();
        assert!((l - expected).abs() < 1e-14);
        assert!((l - 0.407606).abs() < 1e-6);
        assert!(ranks_first(&a, &cands, 0));
        assert!(!ranks_first(&a, &cands, 1));
    }

    #[test]
    fn ranking_rejects_bad_shapes() {
        let a = [1.0, 0.0];
        let short: [&[f64]; 2] = [&[1.0], &[1.0, 0.0]];
        assert!(matches!(
            ranking_loss(&a, &short, 0),
            Err(Error::DimMismatch { .. })
        ));
        let one: [&[f64]; 1] = [&[1.0, 0.0]];
        assert!(ranking_loss(&a, &one, 0).is_err());
    }

    proptest! {
        #[test]
        fn losses_non_negative_and_signed_gradients(
            a in proptest::collection::vec(-2.0f64..2.0, 3),
            c in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 2..6),
            logits in proptest::collection::vec(-10.0f64..10.0, 2),
        ) {
            prop_assert!(binary_loss(&logits, 0) >= 0.0);
            prop_assert!(binary_loss(&logits, 1) >= 0.0);
            let cands: Vec<&[f64]> = c.iter().map(|v| v.as_slice()).collect();
            let g = ranking_loss_grad(&a, &cands, 0).unwrap();
            prop_assert!(g.loss >= 0.0);
            prop_assert!(g.d_scores[0] <= 0.0);
            for &d in &g.d_scores[1..] {
                prop_assert!(d >= 0.0);
            }
            prop_assert!(g.d_scores.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_gradient_matches_differences() {
        let a = [0.3, -0.7, 1.1];
        let c: [[f64; 3]; 3] = [[0.2, 0.1, -0.4], [1.0, -0.3, 0.5], [-0.6, 0.9, 0.2]];
        let cands: Vec<&[f64]> = c.iter().map(|v| v.as_slice()).collect();
        let g = ranking_loss_grad(&a, &cands, 1).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = a;
            up[i] += h;
            let mut down = a;
            down[i] -= h;
            let num = (ranking_loss(&up, &cands, 1).unwrap()
                - ranking_loss(&down, &cands, 1).unwrap())
                / (2.0 * h);
            assert!((num - g.d_anchor[i]).abs() < 1e-8);
        }
        for j in 0..3 {
            for i in 0..3 {
                let mut cu = c;
                cu[j][i] += h;
                let mut cd = c;
                cd[j][i] -= h;
                let lu = ranking_loss(&a, &cu.iter().map(|v| v.as_slice()).collect::<Vec<_>>(), 1)
                    .unwrap();
                let ld = ranking_loss(&a, &cd.iter().map(|v| v.as_slice()).collect::<Vec<_>>(), 1)
                    .unwrap();
                assert!(((lu - ld) / (2.0 * h) - g.d_candidates[j][i]).abs() < 1e-8);
            }
        }
    }
}
