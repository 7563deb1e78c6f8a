use ndarray::Array5;

use super::Real;

/// Adaptive average pooling of the three trailing axes to a fixed size, using
/// the usual `[floor(i·in/out), ceil((i+1)·in/out))` bin rule.
#[derive(Debug, Clone)]
pub struct AdaptiveAvgPool3d {
    out: [usize; 3],
    input_dims: Option<[usize; 5]>,
}

fn bins(input: usize, output: usize) -> Vec<(usize, usize)> {
    (0..output)
        .map(|i| {
            let start = i * input / output;
            let end = ((i + 1) * input).div_ceil(output);
            (start, end.max(start + 1))
        })
        .collect()
}

impl AdaptiveAvgPool3d {
    pub fn new(out: [usize; 3]) -> Self {
        Self {
            out,
            input_dims: None,
        }
    }

    pub fn forward<F: Real>(&mut self, x: &Array5<F>) -> Array5<F> {
        let (n, c, d0, d1, d2) = x.dim();
        let [o0, o1, o2] = self.out;
        let (b0, b1, b2) = (bins(d0, o0), bins(d1, o1), bins(d2, o2));
        let mut y = Array5::zeros((n, c, o0, o1, o2));
        for s in 0..n {
            for ch in 0..c {
                let xs = x.slice(ndarray::s![s, ch, .., .., ..]);
                for (i, &(a0, e0)) in b0.iter().enumerate() {
                    for (j, &(a1, e1)) in b1.iter().enumerate() {
                        for (k, &(a2, e2)) in b2.iter().enumerate() {
                            let cell = xs.slice(ndarray::s![a0..e0, a1..e1, a2..e2]);
                            let count = F::of(cell.len() as f64);
                            y[[s, ch, i, j, k]] = cell.sum() / count;
                        }
                    }
                }
            }
        }
        self.input_dims = Some([n, c, d0, d1, d2]);
        y
    }

    pub fn backward<F: Real>(&mut self, dy: &Array5<F>) -> Array5<F> {
        let [n, c, d0, d1, d2] = self.input_dims.take().expect("forward before backward");
        let [o0, o1, o2] = self.out;
        let (b0, b1, b2) = (bins(d0, o0), bins(d1, o1), bins(d2, o2));
        let mut dx = Array5::zeros((n, c, d0, d1, d2));
        for s in 0..n {
            for ch in 0..c {
                let mut xs = dx.slice_mut(ndarray::s![s, ch, .., .., ..]);
                for (i, &(a0, e0)) in b0.iter().enumerate() {
                    for (j, &(a1, e1)) in b1.iter().enumerate() {
                        for (k, &(a2, e2)) in b2.iter().enumerate() {
                            let mut cell = xs.slice_mut(ndarray::s![a0..e0, a1..e1, a2..e2]);
                            let share = dy[[s, ch, i, j, k]] / F::of(cell.len() as f64);
                            cell.mapv_inplace(|v| v + share);
                        }
                    }
                }
            }
        }
        dx
    }
}
