use super::{Node, Tensor, Var};
use crate::error::{Error, Result};

pub(crate) struct LstmCache {
    i: Vec<f32>,
    f: Vec<f32>,
    g: Vec<f32>,
    o: Vec<f32>,
    tanh_c: Vec<f32>,
}

pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    AddScalar(usize),
    AddPerRow(usize, usize),
    AddPerCol(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Conv1d {
        x: usize,
        w: usize,
        b: Option<usize>,
        dilation: usize,
        pad_left: usize,
    },
    Prelu(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Softplus(usize),
    Abs(usize),
    Sin(usize),
    Cos(usize),
    Wrap(usize),
    Ln(usize),
    Recip(usize),
    MulBcast(usize, usize),
    AddBcast(usize, usize),
    Downsample2(usize),
    Upsample(usize, usize),
    SliceCols {
        x: usize,
        start: usize,
    },
    PadCols {
        x: usize,
        left: usize,
    },
    Row(usize, usize),
    StackRows(Vec<usize>),
    ConcatRows(usize, usize),
    Sum(usize),
    Mean(usize),
    Mse(usize, usize),
    LstmCell {
        x: usize,
        h: usize,
        c: usize,
        w_ih: usize,
        w_hh: usize,
        b: usize,
        cache: Box<LstmCache>,
    },
}

fn dims2(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::dim(op, shape, &[0, 0])),
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn wrap32(x: f32) -> f32 {
    crate::dsp::wrap(x as f64) as f32
}

impl<'t> Var<'t> {
    fn unary(self, op: Op, f: impl Fn(f32) -> f32) -> Var<'t> {
        let (shape, data) = self.with(|t| (t.shape.clone(), t.data.iter().map(|&v| f(v)).collect()));
        self.tape.push(Tensor { shape, data }, op, self.requires_grad(), None)
    }

    fn same_shape(self, other: Var<'t>, op: &'static str) -> Result<Vec<usize>> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::dim(op, &a, &b));
        }
        Ok(a)
    }

    fn binary(self, other: Var<'t>, op: Op, name: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Var<'t>> {
        let shape = self.same_shape(other, name)?;
        let data = self.with(|a| other.with(|b| a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()));
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(Tensor { shape, data }, op, rg, None))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), "add", |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), "sub", |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), "mul", |a, b| a * b)
    }

    pub fn scale(self, k: f32) -> Var<'t> {
        self.unary(Op::Scale(self.id, k), |v| v * k)
    }

    pub fn add_scalar(self, k: f32) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |v| v + k)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f32::tanh)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id), f32::abs)
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Op::Sin(self.id), f32::sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Op::Cos(self.id), f32::cos)
    }

    /// Wraps angles into `(-π, π]`; the derivative is taken as 1 away from
    /// the branch cut.
    pub fn wrap(self) -> Var<'t> {
        self.unary(Op::Wrap(self.id), wrap32)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.id), f32::ln)
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(Op::Recip(self.id), f32::recip)
    }

    /// Multiplies every element by the single element of `s`.
    pub fn mul_bcast(self, s: Var<'t>) -> Result<Var<'t>> {
        let k = scalar_of(s, "mul_bcast")?;
        let (shape, data) = self.with(|t| (t.shape.clone(), t.data.iter().map(|v| v * k).collect()));
        let rg = self.requires_grad() || s.requires_grad();
        Ok(self.tape.push(Tensor { shape, data }, Op::MulBcast(self.id, s.id), rg, None))
    }

    /// Adds the single element of `s` to every element.
    pub fn add_bcast(self, s: Var<'t>) -> Result<Var<'t>> {
        let k = scalar_of(s, "add_bcast")?;
        let (shape, data) = self.with(|t| (t.shape.clone(), t.data.iter().map(|v| v + k).collect()));
        let rg = self.requires_grad() || s.requires_grad();
        Ok(self.tape.push(Tensor { shape, data }, Op::AddBcast(self.id, s.id), rg, None))
    }

    /// `x [R, C] + b [R]`, broadcasting `b` along columns.
    pub fn add_per_row(self, b: Var<'t>) -> Result<Var<'t>> {
        let (r, c) = dims2(&self.shape(), "add_per_row")?;
        if b.shape() != [r] {
            return Err(Error::dim("add_per_row", &self.shape(), &b.shape()));
        }
        let data = self.with(|x| {
            b.with(|bv| {
                let mut out = x.data.clone();
                for i in 0..r {
                    out[i * c..(i + 1) * c].iter_mut().for_each(|v| *v += bv.data[i]);
                }
                out
            })
        });
        let rg = self.requires_grad() || b.requires_grad();
        Ok(self.tape.push(Tensor { shape: vec![r, c], data }, Op::AddPerRow(self.id, b.id), rg, None))
    }

    /// `x [R, C] + b [C]`, broadcasting `b` along rows.
    pub fn add_per_col(self, b: Var<'t>) -> Result<Var<'t>> {
        let (r, c) = dims2(&self.shape(), "add_per_col")?;
        if b.shape() != [c] {
            return Err(Error::dim("add_per_col", &self.shape(), &b.shape()));
        }
        let data = self.with(|x| {
            b.with(|bv| {
                let mut out = x.data.clone();
                for row in out.chunks_mut(c) {
                    row.iter_mut().zip(&bv.data).for_each(|(v, b)| *v += b);
                }
                out
            })
        });
        let rg = self.requires_grad() || b.requires_grad();
        Ok(self.tape.push(Tensor { shape: vec![r, c], data }, Op::AddPerCol(self.id, b.id), rg, None))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (m, k) = dims2(&self.shape(), "matmul")?;
        let (k2, n) = dims2(&other.shape(), "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape(), &other.shape()));
        }
        let data = self.with(|a| other.with(|b| matmul_kernel(&a.data, &b.data, m, k, n)));
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(Tensor { shape: vec![m, n], data }, Op::MatMul(self.id, other.id), rg, None))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let (r, c) = dims2(&self.shape(), "transpose")?;
        let data = self.with(|x| transpose_kernel(&x.data, r, c));
        Ok(self.tape.push(Tensor { shape: vec![c, r], data }, Op::Transpose(self.id), self.requires_grad(), None))
    }

    /// `y = x Wᵀ + b` for `x [N, in]` (or `[in]`), `W [out, in]`, `b [out]`.
    pub fn linear(self, w: Var<'t>, b: Option<Var<'t>>) -> Result<Var<'t>> {
        let xs = self.shape();
        let (n, inp, vector) = match xs.as_slice() {
            [i] => (1, *i, true),
            [n, i] => (*n, *i, false),
            _ => return Err(Error::dim("linear", &xs, &w.shape())),
        };
        let (out, inp2) = dims2(&w.shape(), "linear")?;
        if inp != inp2 {
            return Err(Error::dim("linear", &xs, &w.shape()));
        }
        if let Some(b) = b {
            if b.shape() != [out] {
                return Err(Error::dim("linear bias", &[out], &b.shape()));
            }
        }
        let data = self.with(|x| {
            w.with(|wt| {
                let bias = b.map(|b| b.to_vec());
                let mut y = vec![0.0f32; n * out];
                for r in 0..n {
                    let xr = &x.data[r * inp..(r + 1) * inp];
                    for o in 0..out {
                        let wr = &wt.data[o * inp..(o + 1) * inp];
                        let mut acc = bias.as_ref().map_or(0.0, |bv| bv[o] as f64);
                        for (a, c) in xr.iter().zip(wr) {
                            acc += (*a as f64) * (*c as f64);
                        }
                        y[r * out + o] = acc as f32;
                    }
                }
                y
            })
        });
        let shape = if vector { vec![out] } else { vec![n, out] };
        let rg = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        Ok(self.tape.push(
            Tensor { shape, data },
            Op::Linear { x: self.id, w: w.id, b: b.map(|b| b.id) },
            rg,
            None,
        ))
    }

    /// Dilated 1-D convolution over the time axis with explicit zero padding.
    /// `x [Cin, L]`, `w [Cout, Cin, K]`, `b [Cout]`; output length is
    /// `L + pad_left + pad_right - (K - 1) * dilation`.
    pub fn conv1d(
        self,
        w: Var<'t>,
        b: Option<Var<'t>>,
        dilation: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Var<'t>> {
        let (cin, len) = dims2(&self.shape(), "conv1d input")?;
        let ws = w.shape();
        let [cout, cin2, k] = ws[..] else {
            return Err(Error::dim("conv1d weight", &ws, &[0, cin, 0]));
        };
        if cin != cin2 || dilation == 0 {
            return Err(Error::dim("conv1d", &self.shape(), &ws));
        }
        if let Some(b) = b {
            if b.shape() != [cout] {
                return Err(Error::dim("conv1d bias", &[cout], &b.shape()));
            }
        }
        let span = (k - 1) * dilation;
        let padded = len + pad_left + pad_right;
        if padded < span + 1 {
            return Err(Error::dim("conv1d (input shorter than kernel span)", &self.shape(), &ws));
        }
        let lout = padded - span;
        let data = self.with(|x| {
            w.with(|wt| {
                let bias = b.map(|b| b.to_vec());
                let mut y = vec![0.0f32; cout * lout];
                let mut acc = vec![0.0f64; lout];
                for co in 0..cout {
                    let b0 = bias.as_ref().map_or(0.0, |bv| bv[co] as f64);
                    acc.iter_mut().for_each(|a| *a = b0);
                    for ci in 0..cin {
                        let xr = &x.data[ci * len..(ci + 1) * len];
                        for kk in 0..k {
                            let wv = wt.data[(co * cin + ci) * k + kk] as f64;
                            if wv == 0.0 {
                                continue;
                            }
                            let off = (kk * dilation) as isize - pad_left as isize;
                            let (t0, t1) = valid_range(off, len, lout);
                            for t in t0..t1 {
                                acc[t] += wv * xr[(t as isize + off) as usize] as f64;
                            }
                        }
                    }
                    for (dst, a) in y[co * lout..(co + 1) * lout].iter_mut().zip(&acc) {
                        *dst = *a as f32;
                    }
                }
                y
            })
        });
        let rg = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        Ok(self.tape.push(
            Tensor { shape: vec![cout, lout], data },
            Op::Conv1d { x: self.id, w: w.id, b: b.map(|b| b.id), dilation, pad_left },
            rg,
            None,
        ))
    }

    /// Symmetric-padded dilated convolution: pads `(K-1)·dilation/2` per
    /// side so that the output length equals the input length for odd `K`.
    pub fn conv1d_dilated(self, w: Var<'t>, b: Option<Var<'t>>, dilation: usize) -> Result<Var<'t>> {
        let k = *w.shape().last().unwrap_or(&1);
        let pad = (k.saturating_sub(1)) * dilation / 2;
        self.conv1d(w, b, dilation, pad, pad)
    }

    /// Parametric ReLU with one slope per row (channel): `x [C, L]`, `a [C]`.
    pub fn prelu(self, slope: Var<'t>) -> Result<Var<'t>> {
        let (c, l) = dims2(&self.shape(), "prelu")?;
        if slope.shape() != [c] {
            return Err(Error::dim("prelu", &self.shape(), &slope.shape()));
        }
        let data = self.with(|x| {
            slope.with(|a| {
                let mut out = x.data.clone();
                for ch in 0..c {
                    for v in &mut out[ch * l..(ch + 1) * l] {
                        if *v < 0.0 {
                            *v *= a.data[ch];
                        }
                    }
                }
                out
            })
        });
        let rg = self.requires_grad() || slope.requires_grad();
        Ok(self.tape.push(Tensor { shape: vec![c, l], data }, Op::Prelu(self.id, slope.id), rg, None))
    }

    /// Stride-2 decimation along columns: keeps columns 0, 2, 4, ….
    pub fn downsample2(self) -> Result<Var<'t>> {
        let (r, c) = dims2(&self.shape(), "downsample2")?;
        let oc = c.div_ceil(2);
        let data = self.with(|x| {
            let mut out = Vec::with_capacity(r * oc);
            for row in x.data.chunks(c) {
                out.extend(row.iter().step_by(2));
            }
            out
        });
        Ok(self.tape.push(Tensor { shape: vec![r, oc], data }, Op::Downsample2(self.id), self.requires_grad(), None))
    }

    /// Nearest-neighbour upsampling along columns by an integer factor.
    pub fn upsample(self, factor: usize) -> Result<Var<'t>> {
        let (r, c) = dims2(&self.shape(), "upsample")?;
        if factor == 0 {
            return Err(Error::dim("upsample factor", &[factor], &[1]));
        }
        let data = self.with(|x| {
            let mut out = Vec::with_capacity(r * c * factor);
            for row in x.data.chunks(c) {
                for &v in row {
                    out.extend(std::iter::repeat(v).take(factor));
                }
            }
            out
        });
        Ok(self.tape.push(
            Tensor { shape: vec![r, c * factor], data },
            Op::Upsample(self.id, factor),
            self.requires_grad(),
            None,
        ))
    }

    pub fn upsample2(self) -> Result<Var<'t>> {
        self.upsample(2)
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let (r, c) = dims2(&self.shape(), "slice_cols")?;
        if start + len > c {
            return Err(Error::dim("slice_cols", &[r, c], &[r, start + len]));
        }
        let data = self.with(|x| {
            let mut out = Vec::with_capacity(r * len);
            for row in x.data.chunks(c) {
                out.extend_from_slice(&row[start..start + len]);
            }
            out
        });
        Ok(self.tape.push(
            Tensor { shape: vec![r, len], data },
            Op::SliceCols { x: self.id, start },
            self.requires_grad(),
            None,
        ))
    }

    pub fn pad_cols(self, left: usize, right: usize) -> Result<Var<'t>> {
        let (r, c) = dims2(&self.shape(), "pad_cols")?;
        let nc = c + left + right;
        let data = self.with(|x| {
            let mut out = vec![0.0; r * nc];
            for (i, row) in x.data.chunks(c).enumerate() {
                out[i * nc + left..i * nc + left + c].copy_from_slice(row);
            }
            out
        });
        Ok(self.tape.push(
            Tensor { shape: vec![r, nc], data },
            Op::PadCols { x: self.id, left },
            self.requires_grad(),
            None,
        ))
    }

    pub fn row(self, i: usize) -> Result<Var<'t>> {
        let (r, c) = dims2(&self.shape(), "row")?;
        if i >= r {
            return Err(Error::dim("row", &[r, c], &[i]));
        }
        let data = self.with(|x| x.data[i * c..(i + 1) * c].to_vec());
        Ok(self.tape.push(Tensor { shape: vec![c], data }, Op::Row(self.id, i), self.requires_grad(), None))
    }

    pub fn concat_rows(self, other: Var<'t>) -> Result<Var<'t>> {
        let (r1, c) = dims2(&self.shape(), "concat_rows")?;
        let (r2, c2) = dims2(&other.shape(), "concat_rows")?;
        if c != c2 {
            return Err(Error::dim("concat_rows", &self.shape(), &other.shape()));
        }
        let data = self.with(|a| other.with(|b| [a.data.as_slice(), b.data.as_slice()].concat()));
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(Tensor { shape: vec![r1 + r2, c], data }, Op::ConcatRows(self.id, other.id), rg, None))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.with(|x| x.data.iter().map(|&v| v as f64).sum::<f64>());
        self.tape.push(Tensor::scalar(s as f32), Op::Sum(self.id), self.requires_grad(), None)
    }

    pub fn mean(self) -> Var<'t> {
        let s = self.with(|x| x.data.iter().map(|&v| v as f64).sum::<f64>() / x.data.len().max(1) as f64);
        self.tape.push(Tensor::scalar(s as f32), Op::Mean(self.id), self.requires_grad(), None)
    }

    /// One LSTM step. Gate order is input, forget, cell, output.
    /// Returns `(h', c')`.
    pub fn lstm_cell(
        self,
        h: Var<'t>,
        c: Var<'t>,
        w_ih: Var<'t>,
        w_hh: Var<'t>,
        b: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let xs = self.shape();
        let [inp] = xs[..] else {
            return Err(Error::dim("lstm_cell x", &xs, &[0]));
        };
        let hs = h.shape();
        let [hid] = hs[..] else {
            return Err(Error::dim("lstm_cell h", &hs, &[0]));
        };
        if c.shape() != [hid]
            || w_ih.shape() != [4 * hid, inp]
            || w_hh.shape() != [4 * hid, hid]
            || b.shape() != [4 * hid]
        {
            return Err(Error::dim("lstm_cell weights", &w_ih.shape(), &[4 * hid, inp]));
        }
        let (xv, hv, cv) = (self.to_vec(), h.to_vec(), c.to_vec());
        let z = w_ih.with(|wi| {
            w_hh.with(|wh| {
                b.with(|bv| {
                    (0..4 * hid)
                        .map(|r| {
                            let mut acc = bv.data[r] as f64;
                            for (w, x) in wi.data[r * inp..(r + 1) * inp].iter().zip(&xv) {
                                acc += (*w as f64) * (*x as f64);
                            }
                            for (w, x) in wh.data[r * hid..(r + 1) * hid].iter().zip(&hv) {
                                acc += (*w as f64) * (*x as f64);
                            }
                            acc as f32
                        })
                        .collect::<Vec<f32>>()
                })
            })
        });
        let i: Vec<f32> = z[..hid].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f32> = z[hid..2 * hid].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f32> = z[2 * hid..3 * hid].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f32> = z[3 * hid..].iter().map(|&v| sigmoid(v)).collect();
        let c_new: Vec<f32> = (0..hid).map(|j| f[j] * cv[j] + i[j] * g[j]).collect();
        let tanh_c: Vec<f32> = c_new.iter().map(|v| v.tanh()).collect();
        let h_new: Vec<f32> = (0..hid).map(|j| o[j] * tanh_c[j]).collect();
        let rg = [self, h, c, w_ih, w_hh, b].iter().any(|v| v.requires_grad());
        let packed = [h_new, c_new].concat();
        let both = self.tape.push(
            Tensor { shape: vec![2, hid], data: packed },
            Op::LstmCell {
                x: self.id,
                h: h.id,
                c: c.id,
                w_ih: w_ih.id,
                w_hh: w_hh.id,
                b: b.id,
                cache: Box::new(LstmCache { i, f, g, o, tanh_c }),
            },
            rg,
            None,
        );
        Ok((both.row(0)?, both.row(1)?))
    }
}

/// Stacks equal-length vectors into a `[n, C]` matrix.
pub fn stack_rows<'t>(rows: &[Var<'t>]) -> Result<Var<'t>> {
    let first = rows.first().ok_or_else(|| Error::dim("stack_rows (empty)", &[0], &[1]))?;
    let s = first.shape();
    let [c] = s[..] else {
        return Err(Error::dim("stack_rows", &s, &[0]));
    };
    let mut data = Vec::with_capacity(rows.len() * c);
    for r in rows {
        if r.shape() != [c] {
            return Err(Error::dim("stack_rows", &[c], &r.shape()));
        }
        r.with(|t| data.extend_from_slice(&t.data));
    }
    let rg = rows.iter().any(|r| r.requires_grad());
    Ok(first.tape.push(
        Tensor { shape: vec![rows.len(), c], data },
        Op::StackRows(rows.iter().map(|r| r.id).collect()),
        rg,
        None,
    ))
}

/// Mean-squared error over all elements.
pub fn mse_loss<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    a.same_shape(b, "mse_loss")?;
    let v = a.with(|x| {
        b.with(|y| {
            let n = x.data.len().max(1) as f64;
            x.data
                .iter()
                .zip(&y.data)
                .map(|(p, q)| {
                    let d = *p as f64 - *q as f64;
                    d * d
                })
                .sum::<f64>()
                / n
        })
    });
    let rg = a.requires_grad() || b.requires_grad();
    Ok(a.tape.push(Tensor::scalar(v as f32), Op::Mse(a.id, b.id), rg, None))
}

fn scalar_of(s: Var<'_>, op: &'static str) -> Result<f32> {
    let shape = s.shape();
    if shape.iter().product::<usize>() != 1 {
        return Err(Error::dim(op, &shape, &[1]));
    }
    Ok(s.item())
}

fn valid_range(off: isize, len: usize, lout: usize) -> (usize, usize) {
    let t0 = (-off).max(0) as usize;
    let t1 = ((len as isize - off).max(0) as usize).min(lout);
    (t0.min(t1), t1)
}

fn matmul_kernel(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let av = a[i * k + p] as f64;
            if av == 0.0 {
                continue;
            }
            for (dst, bv) in acc.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *dst += av * *bv as f64;
            }
        }
        for (dst, v) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *dst = *v as f32;
        }
    }
    out
}

fn transpose_kernel(x: &[f32], r: usize, c: usize) -> Vec<f32> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

fn acc_into(nodes: &[Node], grads: &mut [Option<Vec<f32>>], idx: usize, f: impl FnOnce(&mut [f32])) {
    if !nodes[idx].requires_grad {
        return;
    }
    let buf = grads[idx].get_or_insert_with(|| vec![0.0; nodes[idx].value.data.len()]);
    f(buf);
}

pub(crate) fn backward_node(nodes: &[Node], id: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
    let node = &nodes[id];
    let out = &node.value.data;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc_into(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            acc_into(nodes, grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x += y));
        }
        Op::Sub(a, b) => {
            acc_into(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            acc_into(nodes, grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value.data, &nodes[*b].value.data);
            acc_into(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * bv[i];
                }
            });
            acc_into(nodes, grads, *b, |gb| {
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            });
        }
        Op::Scale(a, k) => {
            acc_into(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * k));
        }
        Op::AddScalar(a) | Op::Wrap(a) => {
            acc_into(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
        }
        Op::AddPerRow(x, b) => {
            let c = node.value.shape[1];
            acc_into(nodes, grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(p, q)| *p += q));
            acc_into(nodes, grads, *b, |gb| {
                for (i, row) in g.chunks(c).enumerate() {
                    gb[i] += row.iter().map(|&v| v as f64).sum::<f64>() as f32;
                }
            });
        }
        Op::AddPerCol(x, b) => {
            let c = node.value.shape[1];
            acc_into(nodes, grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(p, q)| *p += q));
            acc_into(nodes, grads, *b, |gb| {
                let mut acc = vec![0.0f64; c];
                for row in g.chunks(c) {
                    acc.iter_mut().zip(row).for_each(|(a, v)| *a += *v as f64);
                }
                gb.iter_mut().zip(&acc).for_each(|(d, a)| *d += *a as f32);
            });
        }
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[*a].value.shape[0], nodes[*a].value.shape[1]);
            let n = nodes[*b].value.shape[1];
            let (av, bv) = (&nodes[*a].value.data, &nodes[*b].value.data);
            acc_into(nodes, grads, *a, |ga| {
                // dA = G Bᵀ
                let bt = transpose_kernel(bv, k, n);
                let d = matmul_kernel(g, &bt, m, n, k);
                ga.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
            });
            acc_into(nodes, grads, *b, |gb| {
                // dB = Aᵀ G
                let at = transpose_kernel(av, m, k);
                let d = matmul_kernel(&at, g, k, m, n);
                gb.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
            });
        }
        Op::Transpose(a) => {
            let (r, c) = (node.value.shape[0], node.value.shape[1]);
            acc_into(nodes, grads, *a, |ga| {
                let d = transpose_kernel(g, r, c);
                ga.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
            });
        }
        Op::Linear { x, w, b } => {
            let out_dim = nodes[*w].value.shape[0];
            let inp = nodes[*w].value.shape[1];
            let n = g.len() / out_dim;
            let (xv, wv) = (&nodes[*x].value.data, &nodes[*w].value.data);
            acc_into(nodes, grads, *x, |gx| {
                for r in 0..n {
                    let mut acc = vec![0.0f64; inp];
                    for o in 0..out_dim {
                        let gv = g[r * out_dim + o] as f64;
                        if gv == 0.0 {
                            continue;
                        }
                        for (a, wv) in acc.iter_mut().zip(&wv[o * inp..(o + 1) * inp]) {
                            *a += gv * *wv as f64;
                        }
                    }
                    for (d, a) in gx[r * inp..(r + 1) * inp].iter_mut().zip(&acc) {
                        *d += *a as f32;
                    }
                }
            });
            acc_into(nodes, grads, *w, |gw| {
                for o in 0..out_dim {
                    let mut acc = vec![0.0f64; inp];
                    for r in 0..n {
                        let gv = g[r * out_dim + o] as f64;
                        if gv == 0.0 {
                            continue;
                        }
                        for (a, xv) in acc.iter_mut().zip(&xv[r * inp..(r + 1) * inp]) {
                            *a += gv * *xv as f64;
                        }
                    }
                    for (d, a) in gw[o * inp..(o + 1) * inp].iter_mut().zip(&acc) {
                        *d += *a as f32;
                    }
                }
            });
            if let Some(b) = b {
                acc_into(nodes, grads, *b, |gb| {
                    for o in 0..out_dim {
                        gb[o] += (0..n).map(|r| g[r * out_dim + o] as f64).sum::<f64>() as f32;
                    }
                });
            }
        }
        Op::Conv1d { x, w, b, dilation, pad_left } => {
            let (cin, len) = (nodes[*x].value.shape[0], nodes[*x].value.shape[1]);
            let ws = &nodes[*w].value.shape;
            let (cout, k) = (ws[0], ws[2]);
            let lout = node.value.shape[1];
            let (xv, wv) = (&nodes[*x].value.data, &nodes[*w].value.data);
            acc_into(nodes, grads, *x, |gx| {
                let mut acc = vec![0.0f64; cin * len];
                for co in 0..cout {
                    let gr = &g[co * lout..(co + 1) * lout];
                    for ci in 0..cin {
                        for kk in 0..k {
                            let wval = wv[(co * cin + ci) * k + kk] as f64;
                            if wval == 0.0 {
                                continue;
                            }
                            let off = (kk * dilation) as isize - *pad_left as isize;
                            let (t0, t1) = valid_range(off, len, lout);
                            let base = ci * len;
                            for t in t0..t1 {
                                acc[base + (t as isize + off) as usize] += wval * gr[t] as f64;
                            }
                        }
                    }
                }
                gx.iter_mut().zip(&acc).for_each(|(d, a)| *d += *a as f32);
            });
            acc_into(nodes, grads, *w, |gw| {
                for co in 0..cout {
                    let gr = &g[co * lout..(co + 1) * lout];
                    for ci in 0..cin {
                        let xr = &xv[ci * len..(ci + 1) * len];
                        for kk in 0..k {
                            let off = (kk * dilation) as isize - *pad_left as isize;
                            let (t0, t1) = valid_range(off, len, lout);
                            let mut acc = 0.0f64;
                            for t in t0..t1 {
                                acc += gr[t] as f64 * xr[(t as isize + off) as usize] as f64;
                            }
                            gw[(co * cin + ci) * k + kk] += acc as f32;
                        }
                    }
                }
            });
            if let Some(b) = b {
                acc_into(nodes, grads, *b, |gb| {
                    for co in 0..cout {
                        gb[co] += g[co * lout..(co + 1) * lout].iter().map(|&v| v as f64).sum::<f64>() as f32;
                    }
                });
            }
        }
        Op::Prelu(x, a) => {
            let l = node.value.shape[1];
            let (xv, av) = (&nodes[*x].value.data, &nodes[*a].value.data);
            acc_into(nodes, grads, *x, |gx| {
                for i in 0..g.len() {
                    gx[i] += if xv[i] < 0.0 { g[i] * av[i / l] } else { g[i] };
                }
            });
            acc_into(nodes, grads, *a, |ga| {
                for (ch, slot) in ga.iter_mut().enumerate() {
                    let mut acc = 0.0f64;
                    for t in 0..l {
                        let i = ch * l + t;
                        if xv[i] < 0.0 {
                            acc += g[i] as f64 * xv[i] as f64;
                        }
                    }
                    *slot += acc as f32;
                }
            });
        }
        Op::Sigmoid(a) => {
            acc_into(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            });
        }
        Op::Tanh(a) => {
            acc_into(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            });
        }
        Op::Softplus(a) => {
            let xv = &nodes[*a].value.data;
            acc_into(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * sigmoid(xv[i]);
                }
            });
        }
        Op::Abs(a) => {
            let xv = &nodes[*a].value.data;
            acc_into(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * xv[i].signum() * (xv[i] != 0.0) as u8 as f32;
                }
            });
        }
        Op::Sin(a) => {
            let xv = &nodes[*a].value.data;
            acc_into(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * xv[i].cos();
                }
            });
        }
        Op::Cos(a) => {
            let xv = &nodes[*a].value.data;
            acc_into(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] -= g[i] * xv[i].sin();
                }
            });
        }
        Op::Ln(a) => {
            let xv = &nodes[*a].value.data;
            acc_into(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] / xv[i];
                }
            });
        }
        Op::Recip(a) => {
            acc_into(nodes, grads, *a, |ga| {
                for i in 0..g.len() {
                    ga[i] -= g[i] * out[i] * out[i];
                }
            });
        }
        Op::MulBcast(x, s) => {
            let k = nodes[*s].value.data[0];
            let xv = &nodes[*x].value.data;
            acc_into(nodes, grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b * k));
            acc_into(nodes, grads, *s, |gs| {
                gs[0] += g.iter().zip(xv).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>() as f32;
            });
        }
        Op::AddBcast(x, s) => {
            acc_into(nodes, grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b));
            acc_into(nodes, grads, *s, |gs| gs[0] += g.iter().map(|&v| v as f64).sum::<f64>() as f32);
        }
        Op::Downsample2(a) => {
            let c = nodes[*a].value.shape[1];
            let oc = node.value.shape[1];
            acc_into(nodes, grads, *a, |ga| {
                for (r, row) in g.chunks(oc).enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        ga[r * c + 2 * j] += v;
                    }
                }
            });
        }
        Op::Upsample(a, factor) => {
            acc_into(nodes, grads, *a, |ga| {
                for (i, chunk) in g.chunks(*factor).enumerate() {
                    ga[i] += chunk.iter().sum::<f32>();
                }
            });
        }
        Op::SliceCols { x, start } => {
            let c = nodes[*x].value.shape[1];
            let len = node.value.shape[1];
            acc_into(nodes, grads, *x, |gx| {
                for (r, row) in g.chunks(len).enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        gx[r * c + start + j] += v;
                    }
                }
            });
        }
        Op::PadCols { x, left } => {
            let c = nodes[*x].value.shape[1];
            let nc = node.value.shape[1];
            acc_into(nodes, grads, *x, |gx| {
                for (r, row) in gx.chunks_mut(c).enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v += g[r * nc + left + j];
                    }
                }
            });
        }
        Op::Row(x, i) => {
            let c = g.len();
            acc_into(nodes, grads, *x, |gx| {
                gx[i * c..(i + 1) * c].iter_mut().zip(g).for_each(|(a, b)| *a += b);
            });
        }
        Op::StackRows(rows) => {
            let c = node.value.shape[1];
            for (r, &src) in rows.iter().enumerate() {
                acc_into(nodes, grads, src, |gs| {
                    gs.iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(a, b)| *a += b);
                });
            }
        }
        Op::ConcatRows(a, b) => {
            let na = nodes[*a].value.data.len();
            acc_into(nodes, grads, *a, |ga| ga.iter_mut().zip(&g[..na]).for_each(|(x, y)| *x += y));
            acc_into(nodes, grads, *b, |gb| gb.iter_mut().zip(&g[na..]).for_each(|(x, y)| *x += y));
        }
        Op::Sum(a) => {
            acc_into(nodes, grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
        }
        Op::Mean(a) => {
            let n = nodes[*a].value.data.len().max(1) as f32;
            acc_into(nodes, grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
        }
        Op::Mse(a, b) => {
            let (av, bv) = (&nodes[*a].value.data, &nodes[*b].value.data);
            let k = 2.0 * g[0] as f64 / av.len().max(1) as f64;
            acc_into(nodes, grads, *a, |ga| {
                for i in 0..av.len() {
                    ga[i] += (k * (av[i] as f64 - bv[i] as f64)) as f32;
                }
            });
            acc_into(nodes, grads, *b, |gb| {
                for i in 0..av.len() {
                    gb[i] -= (k * (av[i] as f64 - bv[i] as f64)) as f32;
                }
            });
        }
        Op::LstmCell { x, h, c, w_ih, w_hh, b, cache } => {
            let hid = cache.i.len();
            let inp = nodes[*x].value.data.len();
            let (dh, dc_in) = (&g[..hid], &g[hid..]);
            let cprev = &nodes[*c].value.data;
            let mut dz = vec![0.0f32; 4 * hid];
            let mut dcprev = vec![0.0f32; hid];
            for j in 0..hid {
                let (i, f, gg, o, tc) = (cache.i[j], cache.f[j], cache.g[j], cache.o[j], cache.tanh_c[j]);
                let dc = dc_in[j] + dh[j] * o * (1.0 - tc * tc);
                dz[j] = dc * gg * i * (1.0 - i);
                dz[hid + j] = dc * cprev[j] * f * (1.0 - f);
                dz[2 * hid + j] = dc * i * (1.0 - gg * gg);
                dz[3 * hid + j] = dh[j] * tc * o * (1.0 - o);
                dcprev[j] = dc * f;
            }
            let (xv, hv) = (&nodes[*x].value.data, &nodes[*h].value.data);
            let (wi, wh) = (&nodes[*w_ih].value.data, &nodes[*w_hh].value.data);
            acc_into(nodes, grads, *c, |gc| gc.iter_mut().zip(&dcprev).for_each(|(a, b)| *a += b));
            acc_into(nodes, grads, *b, |gb| gb.iter_mut().zip(&dz).for_each(|(a, b)| *a += b));
            acc_into(nodes, grads, *x, |gx| {
                let mut acc = vec![0.0f64; inp];
                for (r, &d) in dz.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (a, w) in acc.iter_mut().zip(&wi[r * inp..(r + 1) * inp]) {
                        *a += d as f64 * *w as f64;
                    }
                }
                gx.iter_mut().zip(&acc).for_each(|(d, a)| *d += *a as f32);
            });
            acc_into(nodes, grads, *h, |gh| {
                let mut acc = vec![0.0f64; hid];
                for (r, &d) in dz.iter().enumerate() {
                    for (a, w) in acc.iter_mut().zip(&wh[r * hid..(r + 1) * hid]) {
                        *a += d as f64 * *w as f64;
                    }
                }
                gh.iter_mut().zip(&acc).for_each(|(d, a)| *d += *a as f32);
            });
            acc_into(nodes, grads, *w_ih, |gw| {
                for (r, &d) in dz.iter().enumerate() {
                    for (dst, xv) in gw[r * inp..(r + 1) * inp].iter_mut().zip(xv) {
                        *dst += d * xv;
                    }
                }
            });
            acc_into(nodes, grads, *w_hh, |gw| {
                for (r, &d) in dz.iter().enumerate() {
                    for (dst, hv) in gw[r * hid..(r + 1) * hid].iter_mut().zip(hv) {
                        *dst += d * hv;
                    }
                }
            });
        }
    }
}
