use ndarray::{s, Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{shape_err, NnetError};

/// Guard added inside logarithms.
pub const LOG_EPS: f64 = 1e-7;
/// Log-variances are clamped to `[-LOGVAR_CLIP, LOGVAR_CLIP]`.
pub const LOGVAR_CLIP: f64 = 20.0;

fn same_shape(what: &str, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<(), NnetError> {
    if a.dim() != b.dim() {
        return Err(shape_err(what, a.shape(), b.shape()));
    }
    Ok(())
}

/// Squared error averaged over columns and rows; returns the value and the
/// gradient w.r.t. `pred`.
pub fn loss_mse(
    pred: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
) -> Result<(f64, Array2<f64>), NnetError> {
    same_shape("mse", pred, truth)?;
    let n = pred.len() as f64;
    let diff = &pred - &truth;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((value, diff * (2.0 / n)))
}

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub value: f64,
    /// Gradient w.r.t. the pre-softmax logits, `(pred - truth) / rows`.
    pub grad_logits: Array2<f64>,
    /// Exact gradient of `value` w.r.t. `pred`.
    pub grad_pred: Array2<f64>,
}

/// `mean_rows(-Σ truth · ln(pred + ε))` for softmax predictions against
/// one-hot (or probability) targets.
pub fn loss_cross_entropy(
    pred: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
) -> Result<CrossEntropy, NnetError> {
    same_shape("cross entropy", pred, truth)?;
    let rows = pred.nrows() as f64;
    let value = Zip::from(pred)
        .and(truth)
        .fold(0.0, |acc, &p, &t| acc - t * (p + LOG_EPS).ln())
        / rows;
    let grad_pred = Zip::from(pred)
        .and(truth)
        .map_collect(|&p, &t| -t / (p + LOG_EPS) / rows);
    let grad_logits = (&pred - &truth) / rows;
    Ok(CrossEntropy {
        value,
        grad_logits,
        grad_pred,
    })
}

/// Bernoulli negative log-likelihood summed over columns and averaged over
/// rows. Both arguments must lie in `[0, 1]`.
pub fn loss_sample_nll(
    pred: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
) -> Result<(f64, Array2<f64>), NnetError> {
    same_shape("sample nll", pred, truth)?;
    let in_range = |v: f64| (-LOG_EPS..=1.0 + LOG_EPS).contains(&v);
    if let Some(v) = pred.iter().chain(truth.iter()).find(|&&v| !in_range(v)) {
        return Err(NnetError::DomainError(format!("sample value {v}")));
    }
    let rows = pred.nrows() as f64;
    let value = Zip::from(pred).and(truth).fold(0.0, |acc, &p, &t| {
        acc - (t * (p + LOG_EPS).ln() + (1.0 - t) * (1.0 - p + LOG_EPS).ln())
    }) / rows;
    let grad = Zip::from(pred)
        .and(truth)
        .map_collect(|&p, &t| -(t / (p + LOG_EPS) - (1.0 - t) / (1.0 - p + LOG_EPS)) / rows);
    Ok((value, grad))
}

#[derive(Debug, Clone)]
pub struct KlDivergence {
    pub value: f64,
    pub grad_mu: Array2<f64>,
    pub grad_logvar: Array2<f64>,
}

/// `KL(N(mu, exp(logvar)) ‖ N(0, I))` summed over columns, averaged over rows.
pub fn loss_kl_std_normal(
    mu: ArrayView2<'_, f64>,
    logvar: ArrayView2<'_, f64>,
) -> Result<KlDivergence, NnetError> {
    same_shape("kl", mu, logvar)?;
    let rows = mu.nrows() as f64;
    let value = Zip::from(mu).and(logvar).fold(0.0, |acc, &m, &lv| {
        acc - 0.5 * (1.0 + lv - m * m - lv.exp())
    }) / rows;
    Ok(KlDivergence {
        value,
        grad_mu: &mu / rows,
        grad_logvar: logvar.mapv(|lv| 0.5 * (lv.exp() - 1.0) / rows),
    })
}

#[derive(Debug, Clone)]
pub struct Reparameterized {
    pub z: Array2<f64>,
    pub mu: Array2<f64>,
    /// Clamped log-variance.
    pub logvar: Array2<f64>,
    pub eps: Array2<f64>,
    /// Pre-clamp log-variance, kept so the clamp's zero gradient is exact.
    raw_logvar: Array2<f64>,
}

/// Splits `mlp_out` into mean and log-variance halves and draws
/// `z = mu + exp(logvar / 2) ⊙ ε` with fresh standard-normal `ε`.
pub fn reparameterize<R: Rng + ?Sized>(
    mlp_out: ArrayView2<'_, f64>,
    rng: &mut R,
) -> Result<Reparameterized, NnetError> {
    if !mlp_out.ncols().is_multiple_of(2) {
        return Err(NnetError::OddWidth(mlp_out.ncols()));
    }
    let half = mlp_out.ncols() / 2;
    let eps = Array2::from_shape_simple_fn((mlp_out.nrows(), half), || {
        rng.sample::<f64, _>(StandardNormal)
    });
    reparameterize_with(mlp_out, eps)
}

/// Deterministic variant of [`reparameterize`] with a caller-supplied `ε`.
pub fn reparameterize_with(
    mlp_out: ArrayView2<'_, f64>,
    eps: Array2<f64>,
) -> Result<Reparameterized, NnetError> {
    if !mlp_out.ncols().is_multiple_of(2) {
        return Err(NnetError::OddWidth(mlp_out.ncols()));
    }
    let half = mlp_out.ncols() / 2;
    if eps.dim() != (mlp_out.nrows(), half) {
        return Err(shape_err("noise", eps.shape(), &[mlp_out.nrows(), half]));
    }
    let mu = mlp_out.slice(s![.., ..half]).to_owned();
    let raw_logvar = mlp_out.slice(s![.., half..]).to_owned();
    let logvar = raw_logvar.mapv(|v| v.clamp(-LOGVAR_CLIP, LOGVAR_CLIP));
    let z = Zip::from(&mu)
        .and(&logvar)
        .and(&eps)
        .map_collect(|&m, &lv, &e| m + (0.5 * lv).exp() * e);
    Ok(Reparameterized {
        z,
        mu,
        logvar,
        eps,
        raw_logvar,
    })
}

/// Maps `(dL/dz, dL/dmu, dL/dlogvar)` back to the gradient w.r.t. the
/// concatenated `[mu | logvar]` input. Extra `mu`/`logvar` gradients (from a
/// KL term) are added before the clamp mask is applied.
pub fn reparameterize_backward(
    r: &Reparameterized,
    grad_z: &Array2<f64>,
    extra_mu: Option<&Array2<f64>>,
    extra_logvar: Option<&Array2<f64>>,
) -> Array2<f64> {
    let (rows, half) = r.mu.dim();
    let mut out = Array2::zeros((rows, 2 * half));
    let mut g_mu = grad_z.clone();
    if let Some(e) = extra_mu {
        g_mu += e;
    }
    let mut g_lv = Zip::from(grad_z)
        .and(&r.logvar)
        .and(&r.eps)
        .map_collect(|&g, &lv, &e| g * e * 0.5 * (0.5 * lv).exp());
    if let Some(e) = extra_logvar {
        g_lv += e;
    }
    Zip::from(&mut g_lv).and(&r.raw_logvar).for_each(|g, &raw| {
        if !(-LOGVAR_CLIP..=LOGVAR_CLIP).contains(&raw) {
            *g = 0.0;
        }
    });
    out.slice_mut(s![.., ..half]).assign(&g_mu);
    out.slice_mut(s![.., half..]).assign(&g_lv);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mse_examples() {
        let p = array![[1.0, 3.0]];
        let t = array![[0.0, 1.0]];
        assert_eq!(loss_mse(p.view(), t.view()).unwrap().0, 2.5);
        assert_eq!(loss_mse(t.view(), t.view()).unwrap().0, 0.0);
        assert!(loss_mse(p.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let p = array![[0.1, 0.1, 0.8]];
        let t = array![[0.0, 0.0, 1.0]];
        let ce = loss_cross_entropy(p.view(), t.view()).unwrap();
        assert!((ce.value - 0.8f64.ln().abs()).abs() < 1e-6);
        let perfect = loss_cross_entropy(t.view(), t.view()).unwrap();
        assert!(perfect.value.abs() < 1e-6);
    }

    #[test]
    fn sample_nll_examples() {
        let t = array![[1.0, 0.0]];
        assert!(loss_sample_nll(t.view(), t.view()).unwrap().0.abs() < 1e-6);
        let half = array![[0.5, 0.5]];
        let v = loss_sample_nll(half.view(), t.view()).unwrap().0;
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-6);
        assert!(matches!(
            loss_sample_nll(array![[1.5, 0.0]].view(), t.view()),
            Err(NnetError::DomainError(_))
        ));
    }

    #[test]
    fn kl_examples() {
        let z = array![[0.0]];
        assert_eq!(loss_kl_std_normal(z.view(), z.view()).unwrap().value, 0.0);
        let v = loss_kl_std_normal(array![[1.0]].view(), z.view())
            .unwrap()
            .value;
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reparameterize_examples() {
        let r = reparameterize_with(array![[0.0, 0.0]].view(), array![[0.7]]).unwrap();
        assert_eq!(r.z, array![[0.7]]);
        let r =
            reparameterize_with(array![[3.0, f64::NEG_INFINITY]].view(), array![[1.0]]).unwrap();
        assert!((r.z[[0, 0]] - 3.0).abs() < 5e-5);
        assert_eq!(r.logvar[[0, 0]], -LOGVAR_CLIP);
        let mut rng = rand::rng();
        assert_eq!(
            reparameterize(array![[1.0, 2.0, 3.0]].view(), &mut rng).unwrap_err(),
            NnetError::OddWidth(3)
        );
    }
}
