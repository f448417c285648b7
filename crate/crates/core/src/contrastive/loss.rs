use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{ContrastiveError, DenominatorMode, HeadGrads, SslHeads};
use crate::embed::cosine;
use crate::Scalar;

fn log_sum_exp<F: Scalar>(xs: impl Iterator<Item = F> + Clone) -> F {
    let m = xs.clone().fold(F::neg_infinity(), |a, b| a.max(b));
    if m == F::neg_infinity() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).fold(F::zero(), |a, b| a + b).ln()
}

/// InfoNCE loss of one text embedding against its paired packet embedding
/// and a set of negatives, scored by cosine over `tau`.
pub fn info_nce<F: Scalar>(
    z_t: ArrayView1<'_, F>,
    z_pos: ArrayView1<'_, F>,
    negatives: &[ArrayView1<'_, F>],
    tau: F,
    mode: DenominatorMode,
) -> Result<F, ContrastiveError> {
    if !(tau > F::zero()) {
        return Err(ContrastiveError::Config(format!("tau must be > 0, got {tau}")));
    }
    if negatives.is_empty() {
        return Err(ContrastiveError::Config("at least one negative is required".into()));
    }
    let pos = cosine(z_t, z_pos) / tau;
    let negs: Vec<F> = negatives.iter().map(|n| cosine(z_t, *n) / tau).collect();
    let lse = match mode {
        DenominatorMode::Standard => log_sum_exp(std::iter::once(pos).chain(negs.iter().copied())),
        DenominatorMode::NegativesOnly => log_sum_exp(negs.iter().copied()),
    };
    Ok(lse - pos)
}

/// Mean batch loss and its gradient with respect to both embedding matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss<F: Scalar> {
    pub loss: F,
    pub d_text: Array2<F>,
    pub d_packet: Array2<F>,
}

fn unit_rows<F: Scalar>(z: ArrayView2<'_, F>) -> (Array2<F>, Array1<F>) {
    let mut u = z.to_owned();
    let mut inv = Array1::zeros(z.nrows());
    for (i, mut row) in u.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if n > F::zero() {
            inv[i] = F::one() / n;
            row.mapv_inplace(|v| v / n);
        } else {
            row.fill(F::zero());
        }
    }
    (u, inv)
}

/// Gradient of the mean over rows of `-s_ii + lse_{j ∈ D_i} s_ij`, where
/// `D_i` is every column (standard) or every column but `i`.
fn row_direction<F: Scalar>(s: &Array2<F>, mode: DenominatorMode) -> (F, Array2<F>) {
    let b = s.nrows();
    let inv_b = F::one() / F::of_usize(b);
    let mut g = Array2::zeros((b, b));
    let mut total = F::zero();
    for i in 0..b {
        let row = s.row(i);
        let keep = |j: usize| mode == DenominatorMode::Standard || j != i;
        let cols = (0..b).filter(|&j| keep(j));
        let lse = log_sum_exp(cols.clone().map(|j| row[j]));
        total += lse - row[i];
        for j in cols {
            g[[i, j]] = (row[j] - lse).exp() * inv_b;
        }
        g[[i, i]] -= inv_b;
    }
    (total * inv_b, g)
}

/// Loss over a batch with in-batch negatives: row `i` of `z_text` is paired
/// with row `i` of `z_packet` and contrasted with every other packet row.
pub fn batch_loss_grad<F: Scalar>(
    z_text: ArrayView2<'_, F>,
    z_packet: ArrayView2<'_, F>,
    tau: F,
    mode: DenominatorMode,
    symmetric: bool,
) -> BatchLoss<F> {
    assert_eq!(z_text.dim(), z_packet.dim(), "text and packet batches differ in shape");
    assert!(z_text.nrows() >= 2, "batch needs at least two pairs");
    let (ut, inv_t) = unit_rows(z_text);
    let (up, inv_p) = unit_rows(z_packet);
    let cos = ut.dot(&up.t());
    let s = &cos / tau;
    let (loss, g) = if symmetric {
        let (l1, g1) = row_direction(&s, mode);
        let (l2, g2) = row_direction(&s.t().to_owned(), mode);
        let half = F::of(0.5);
        ((l1 + l2) * half, (g1 + g2.t()) * half)
    } else {
        row_direction(&s, mode)
    };
    // gradient with respect to cosines
    let gc = g / tau;
    let gcc = &gc * &cos;
    let row_terms = gcc.sum_axis(Axis(1));
    let col_terms = gcc.sum_axis(Axis(0));

    let mut d_text = gc.dot(&up);
    for (i, mut r) in d_text.rows_mut().into_iter().enumerate() {
        r.scaled_add(-row_terms[i], &ut.row(i));
        r.mapv_inplace(|v| v * inv_t[i]);
    }
    let mut d_packet = gc.t().dot(&ut);
    for (j, mut r) in d_packet.rows_mut().into_iter().enumerate() {
        r.scaled_add(-col_terms[j], &up.row(j));
        r.mapv_inplace(|v| v * inv_p[j]);
    }
    BatchLoss { loss, d_text, d_packet }
}

/// Loss and exact head gradients for a batch of base vectors; absent heads
/// get no gradient.
pub fn info_nce_grad<F: Scalar>(
    text_base: ArrayView2<'_, F>,
    packet_base: ArrayView2<'_, F>,
    heads: &SslHeads<F>,
    tau: F,
    mode: DenominatorMode,
    symmetric: bool,
) -> Result<(F, HeadGrads<F>), ContrastiveError> {
    if !(tau > F::zero()) {
        return Err(ContrastiveError::Config(format!("tau must be > 0, got {tau}")));
    }
    let zt = heads.text_rows(text_base)?;
    let zp = heads.packet_rows(packet_base)?;
    if zt.ncols() != zp.ncols() {
        return Err(ContrastiveError::Config(format!(
            "text and packet embeddings differ in dimension ({} vs {})",
            zt.ncols(),
            zp.ncols()
        )));
    }
    let bl = batch_loss_grad(zt.view(), zp.view(), tau, mode, symmetric);
    let grad = |d: &Array2<F>, x: ArrayView2<'_, F>| (d.t().dot(&x), d.sum_axis(Axis(0)));
    Ok((
        bl.loss,
        HeadGrads {
            text: heads.text.as_ref().map(|_| grad(&bl.d_text, text_base)),
            packet: heads.packet.as_ref().map(|_| grad(&bl.d_packet, packet_base)),
        },
    ))
}
