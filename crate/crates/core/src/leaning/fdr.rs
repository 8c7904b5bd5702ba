use super::LeaningError;

/// Benjamini-Hochberg adjusted q-values, returned in input order.
pub fn bh_fdr(p_values: &[f64]) -> Result<Vec<f64>, LeaningError> {
    if let Some(p) = p_values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(LeaningError::OutOfRange(*p));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(p_values[i] * m as f64 / (rank + 1) as f64);
        q[i] = running.max(p_values[i]);
    }
    Ok(q)
}
