//! Embedding lookup and second-order interaction ops over `E: B×m×d`.

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::kernel::{Parameter, Tensor};

fn dims(e: &Tensor) -> Result<(usize, usize, usize)> {
    match e.shape() {
        [b, m, d] => Ok((*b, *m, *d)),
        other => Err(Error::dimension("embeddings", other, &[0, 0, 0])),
    }
}

/// Gathers row `indices[b][i]` of table `i` into `E[b][i]`.
pub fn embed_lookup(batch: &Batch, tables: &[Parameter]) -> Result<Tensor> {
    if batch.fields != tables.len() {
        return Err(Error::dimension("embed_lookup", &[batch.fields], &[tables.len()]));
    }
    let d = tables.first().map_or(0, |t| t.value.cols());
    let mut out = Vec::with_capacity(batch.len() * batch.fields * d);
    for b in 0..batch.len() {
        for (field, (&idx, table)) in batch.example_indices(b).iter().zip(tables).enumerate() {
            let rows = table.value.rows();
            if idx as usize >= rows {
                return Err(Error::Lookup {
                    field,
                    index: idx as usize,
                    cardinality: rows,
                });
            }
            out.extend_from_slice(table.value.row(idx as usize));
        }
    }
    Tensor::new(vec![batch.len(), batch.fields, d], out)
}

/// Scatters `dE` into the looked-up rows only.
pub fn embed_backward(batch: &Batch, grad: &Tensor, tables: &mut [Parameter]) -> Result<()> {
    let (b_n, m, d) = dims(grad)?;
    if b_n != batch.len() || m != tables.len() {
        return Err(Error::dimension("embed_backward", grad.shape(), &[batch.len(), tables.len(), d]));
    }
    for b in 0..b_n {
        for (i, &idx) in batch.example_indices(b).iter().enumerate() {
            let src = &grad.data()[(b * m + i) * d..(b * m + i + 1) * d];
            for (g, s) in tables[i].grad.row_mut(idx as usize).iter_mut().zip(src) {
                *g += s;
            }
        }
    }
    Ok(())
}

/// First-order term `⟨w, x⟩`: one scalar weight per field value, `B×1`.
pub fn linear_term(batch: &Batch, weights: &[Parameter]) -> Result<Tensor> {
    if batch.fields != weights.len() {
        return Err(Error::dimension("linear_term", &[batch.fields], &[weights.len()]));
    }
    let mut out = Vec::with_capacity(batch.len());
    for b in 0..batch.len() {
        let mut acc = 0.0;
        for (field, (&idx, w)) in batch.example_indices(b).iter().zip(weights).enumerate() {
            let v = w.value.data().get(idx as usize).ok_or(Error::Lookup {
                field,
                index: idx as usize,
                cardinality: w.value.len(),
            })?;
            acc += v;
        }
        out.push(acc);
    }
    Tensor::new(vec![batch.len(), 1], out)
}

pub fn linear_term_backward(batch: &Batch, grad: &Tensor, weights: &mut [Parameter]) -> Result<()> {
    grad.expect_shape("linear_term backward", &[batch.len(), 1])?;
    for b in 0..batch.len() {
        let g = grad.data()[b];
        for (&idx, w) in batch.example_indices(b).iter().zip(weights.iter_mut()) {
            w.grad.data_mut()[idx as usize] += g;
        }
    }
    Ok(())
}

/// `Σ_{i<j} ⟨e_i, e_j⟩` per example via `½(‖Σ e_i‖² − Σ ‖e_i‖²)`, `B×1`.
pub fn pairwise_sum(e: &Tensor) -> Result<Tensor> {
    let (b_n, m, d) = dims(e)?;
    if m < 2 {
        return Err(Error::DegenerateInteraction(m));
    }
    let mut out = Vec::with_capacity(b_n);
    let mut sum = vec![0.0; d];
    for b in 0..b_n {
        sum.iter_mut().for_each(|s| *s = 0.0);
        let mut sq = 0.0;
        for i in 0..m {
            let row = &e.data()[(b * m + i) * d..(b * m + i + 1) * d];
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
                sq += v * v;
            }
        }
        out.push(0.5 * (sum.iter().map(|s| s * s).sum::<f64>() - sq));
    }
    Tensor::new(vec![b_n, 1], out)
}

/// `∂/∂e_i = (Σ_j e_j) − e_i`, scaled by the upstream gradient.
pub fn pairwise_sum_backward(e: &Tensor, grad: &Tensor) -> Result<Tensor> {
    let (b_n, m, d) = dims(e)?;
    grad.expect_shape("pairwise_sum backward", &[b_n, 1])?;
    let mut out = Tensor::zeros(e.shape());
    let mut sum = vec![0.0; d];
    for b in 0..b_n {
        sum.iter_mut().for_each(|s| *s = 0.0);
        for i in 0..m {
            for (s, v) in sum.iter_mut().zip(&e.data()[(b * m + i) * d..(b * m + i + 1) * d]) {
                *s += v;
            }
        }
        let g = grad.data()[b];
        for i in 0..m {
            let base = (b * m + i) * d;
            for k in 0..d {
                out.data_mut()[base + k] = g * (sum[k] - e.data()[base + k]);
            }
        }
    }
    Ok(out)
}

pub fn pair_count(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

/// All `⟨e_i, e_j⟩` for `i < j` in lexicographic order, `B×C(m,2)`.
pub fn pairwise_inner_products(e: &Tensor) -> Result<Tensor> {
    let (b_n, m, d) = dims(e)?;
    if m < 2 {
        return Err(Error::DegenerateInteraction(m));
    }
    let pairs = pair_count(m);
    let mut out = Vec::with_capacity(b_n * pairs);
    for b in 0..b_n {
        let row = |i: usize| &e.data()[(b * m + i) * d..(b * m + i + 1) * d];
        for i in 0..m {
            for j in i + 1..m {
                out.push(row(i).iter().zip(row(j)).map(|(x, y)| x * y).sum());
            }
        }
    }
    Tensor::new(vec![b_n, pairs], out)
}

pub fn pairwise_inner_products_backward(e: &Tensor, grad: &Tensor) -> Result<Tensor> {
    let (b_n, m, d) = dims(e)?;
    grad.expect_shape("pairwise_inner_products backward", &[b_n, pair_count(m)])?;
    let mut out = Tensor::zeros(e.shape());
    for b in 0..b_n {
        let mut p = 0;
        for i in 0..m {
            for j in i + 1..m {
                let g = grad.row(b)[p];
                p += 1;
                let (bi, bj) = ((b * m + i) * d, (b * m + j) * d);
                for k in 0..d {
                    let (ei, ej) = (e.data()[bi + k], e.data()[bj + k]);
                    out.data_mut()[bi + k] += g * ej;
                    out.data_mut()[bj + k] += g * ei;
                }
            }
        }
    }
    Ok(out)
}
