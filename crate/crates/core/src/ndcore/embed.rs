use crate::error::{Error, Result};

/// Sinusoidal embedding of a diffusion step: `[sin(k f_0), .., sin(k f_{n-1}),
/// cos(k f_0), .., cos(k f_{n-1})]` with `f_j = 10000^(-j/n)` and `n = dim / 2`.
pub fn timestep_embed(k: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "embedding dim must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let freq = (-(10000f64.ln()) * j as f64 / half as f64).exp();
        let angle = k as f64 * freq;
        out[j] = angle.sin();
        out[half + j] = angle.cos();
    }
    Ok(out)
}
