use super::Params;

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between `analytic` and central differences of
/// `loss` around `params`, taken over every scalar parameter. Uses the
/// five-point stencil `(−L(x+2h) + 8L(x+h) − 8L(x−h) + L(x−2h)) / 12h`.
pub fn finite_diff_check<P, F>(params: &P, analytic: &P, loss: F, h: f64) -> f64
where
    P: Params + Clone,
    F: Fn(&P) -> f64,
{
    finite_diff_check_smooth(params, analytic, loss, |_| Vec::new(), h).0
}

/// Like [`finite_diff_check`], but skips coordinates whose stencil crosses a
/// kink, detected as a change of `signature` (e.g. the max-pool argmax
/// positions) between stencil points. Returns the worst error and the number
/// of skipped coordinates.
pub fn finite_diff_check_smooth<P, F, S>(
    params: &P,
    analytic: &P,
    loss: F,
    signature: S,
    h: f64,
) -> (f64, usize)
where
    P: Params + Clone,
    F: Fn(&P) -> f64,
    S: Fn(&P) -> Vec<usize>,
{
    let mut probe = params.clone();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();
    let base = signature(params);
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for (t, grad) in grads.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = probe.tensors()[t][i];
            let mut smooth = true;
            let mut at = |offset: f64| {
                probe.tensors_mut()[t][i] = orig + offset;
                smooth &= signature(&probe) == base;
                loss(&probe)
            };
            let numeric = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            probe.tensors_mut()[t][i] = orig;
            if smooth {
                worst = worst.max(relative_error(a, numeric));
            } else {
                skipped += 1;
            }
        }
    }
    (worst, skipped)
}
