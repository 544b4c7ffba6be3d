//! Low-rank adapter utilities: attachment and an alternating least squares
//! oracle that measures how much readout change a given rank can express.

use crate::error::{Error, Result};
use crate::numerics::{RngState, Tensor};
use crate::synthground::HeadParams;

/// Attach a fresh adapter if none is present. Returns `true` when newly
/// attached, `false` when one already existed (left untouched).
pub fn ensure_adapter(head: &mut HeadParams, rank: usize, rng: &mut RngState) -> Result<bool> {
    if head.adapter.is_some() {
        return Ok(false);
    }
    head.attach_adapter(rank, rng)?;
    Ok(true)
}

fn matmul_plain(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = a.dims2()?;
    let (k2, m) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(
            "matmul_plain",
            format!("inner dims to agree ({k} vs {k2})"),
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    Tensor::from_fn(&[n, m], |i| {
        let (r, c) = (i / m, i % m);
        (0..k).map(|j| a.data()[r * k + j] * b.data()[j * m + c]).sum()
    })
}

fn transpose(a: &Tensor) -> Result<Tensor> {
    let (n, m) = a.dims2()?;
    Tensor::from_fn(&[m, n], |i| {
        let (r, c) = (i / n, i % n);
        a.data()[c * m + r]
    })
}

/// Solve `M·X = RHS` for square `M` by Gaussian elimination with partial
/// pivoting and a tiny ridge for numerical safety.
fn solve(m: &Tensor, rhs: &Tensor) -> Result<Tensor> {
    let (n, n2) = m.dims2()?;
    let (rn, c) = rhs.dims2()?;
    if n != n2 || rn != n {
        return Err(Error::shape(
            "solve",
            format!("square system of size {n}"),
            format!("{:?} with rhs {:?}", m.shape(), rhs.shape()),
        ));
    }
    let mut a: Vec<f64> = m.data().to_vec();
    let mut x: Vec<f64> = rhs.data().to_vec();
    for i in 0..n {
        a[i * n + i] += 1e-12;
    }
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&p, &q| {
                a[p * n + col]
                    .abs()
                    .partial_cmp(&a[q * n + col].abs())
                    .expect("finite pivots")
            })
            .expect("non-empty range");
        let pivot = a[pivot_row * n + col];
        if pivot.abs() < 1e-300 {
            return Err(Error::usage("singular system in adapter fit".to_string()));
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            for j in 0..c {
                x.swap(col * c + j, pivot_row * c + j);
            }
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = a[row * n + col] / a[col * n + col];
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            for j in 0..c {
                x[row * c + j] -= factor * x[col * c + j];
            }
        }
    }
    for row in 0..n {
        let d = a[row * n + row];
        for j in 0..c {
            x[row * c + j] /= d;
        }
    }
    Tensor::new(&[n, c], x)
}

/// Frobenius norm of `A·B − delta`.
pub fn adapter_fit_error(a: &Tensor, b: &Tensor, delta: &Tensor) -> Result<f64> {
    let approx = matmul_plain(a, b)?;
    if approx.shape() != delta.shape() {
        return Err(Error::shape(
            "adapter_fit_error",
            format!("{:?}", delta.shape()),
            format!("{:?}", approx.shape()),
        ));
    }
    Ok(approx
        .data()
        .iter()
        .zip(delta.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Alternating least squares: the best rank-`r` factorization `A·B ≈ delta`
/// reachable from a random start in `iters` sweeps. With
/// `r = min(rows, cols)` the factorization is exact (up to roundoff); with
/// smaller `r` the result measures how much of `delta` the rank can carry.
pub fn fit_adapter_to_delta(
    delta: &Tensor,
    rank: usize,
    iters: usize,
    rng: &mut RngState,
) -> Result<(Tensor, Tensor)> {
    let (f, o) = delta.dims2()?;
    if rank == 0 || rank > f.min(o) {
        return Err(Error::hyper(
            "rank",
            rank,
            "must satisfy 1 <= rank <= min(rows, cols)",
        ));
    }
    if iters == 0 {
        return Err(Error::hyper("iters", 0, "must be positive"));
    }
    let mut a = Tensor::from_fn(&[f, rank], |_| rng.normal())?;
    let mut b = Tensor::zeros(&[rank, o]);
    for _ in 0..iters {
        // B ← argmin ‖A·B − Δ‖: (AᵀA)·B = Aᵀ·Δ.
        let at = transpose(&a)?;
        let ata = matmul_plain(&at, &a)?;
        let atd = matmul_plain(&at, delta)?;
        b = solve(&ata, &atd)?;
        // A ← argmin ‖A·B − Δ‖: (B·Bᵀ)·Aᵀ = B·Δᵀ.
        let bt = transpose(&b)?;
        let bbt = matmul_plain(&b, &bt)?;
        let bdt = matmul_plain(&b, &transpose(delta)?)?;
        let a_t = solve(&bbt, &bdt)?;
        a = transpose(&a_t)?;
    }
    Ok((a, b))
}
