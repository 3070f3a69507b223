use crate::scalar::Real;
use crate::tensor::{shape_err, Tensor, TensorError};

/// `x [N, in] @ weight[out, in]^T + bias[out]`.
pub fn linear<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>, TensorError> {
    let (n, fan_in) = x.dims2("linear")?;
    let (fan_out, w_in) = weight.dims2("linear")?;
    if w_in != fan_in {
        return Err(shape_err("linear", format!("input {} vs weight {}", fan_in, w_in)));
    }
    if let Some(b) = bias {
        if b.shape() != [fan_out] {
            return Err(shape_err("linear", format!("bias shape {:?}", b.shape())));
        }
    }
    let mut out = vec![T::zero(); n * fan_out];
    T::gemm(
        n,
        fan_in,
        fan_out,
        T::one(),
        x.data(),
        fan_in as isize,
        1,
        weight.data(),
        1,
        fan_in as isize,
        T::zero(),
        &mut out,
        fan_out as isize,
        1,
    );
    if let Some(b) = bias {
        for row in out.chunks_mut(fan_out) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    Tensor::new(vec![n, fan_out], out)
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, fan_in) = (x.shape()[0], x.shape()[1]);
    let fan_out = weight.shape()[0];
    let mut dx = vec![T::zero(); n * fan_in];
    T::gemm(
        n,
        fan_out,
        fan_in,
        T::one(),
        grad_out.data(),
        fan_out as isize,
        1,
        weight.data(),
        fan_in as isize,
        1,
        T::zero(),
        &mut dx,
        fan_in as isize,
        1,
    );
    let mut dw = vec![T::zero(); fan_out * fan_in];
    T::gemm(
        fan_out,
        n,
        fan_in,
        T::one(),
        grad_out.data(),
        1,
        fan_out as isize,
        x.data(),
        fan_in as isize,
        1,
        T::zero(),
        &mut dw,
        fan_in as isize,
        1,
    );
    let mut db = vec![T::zero(); fan_out];
    for row in grad_out.data().chunks(fan_out) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dx"),
        Tensor::new(weight.shape().to_vec(), dw).expect("dw"),
        Tensor::new(vec![fan_out], db).expect("db"),
    )
}
