use crate::attention::SparseSelection;
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Adds each processed token back onto the row it was taken from; rows that
/// were not selected are copied through untouched. `full` is `n x dim`,
/// `processed` is `selection.len() x dim` in selection order.
pub fn scatter_residual<S: Scalar>(
    full: &[S],
    processed: &[S],
    dim: usize,
    selection: &SparseSelection,
) -> Result<Vec<S>> {
    if dim == 0 || full.len() % dim != 0 {
        return Err(CoreError::Shape(format!("{} values are not rows of width {dim}", full.len())));
    }
    let n = full.len() / dim;
    if processed.len() != selection.len() * dim {
        return Err(CoreError::Shape(format!(
            "{} processed values for {} selected rows of width {dim}",
            processed.len(),
            selection.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in &selection.indices {
        if i >= n {
            return Err(CoreError::Contract(format!("selected row {i} outside {n} rows")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(CoreError::Contract(format!("row {i} selected twice")));
        }
    }
    let mut out = full.to_vec();
    scatter_add(&mut out, processed, dim, &selection.indices);
    Ok(out)
}

pub(crate) fn scatter_add<S: Scalar>(out: &mut [S], processed: &[S], dim: usize, indices: &[usize]) {
    for (r, &i) in indices.iter().enumerate() {
        for (o, p) in out[i * dim..(i + 1) * dim].iter_mut().zip(&processed[r * dim..(r + 1) * dim]) {
            *o += *p;
        }
    }
}
