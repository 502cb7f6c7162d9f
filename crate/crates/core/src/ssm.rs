//! Selective state-space (S6) scan.
//!
//! Per channel `d` and state index `n`:
//!
//! ```text
//! Δ_t   = softplus(x_t · W_Δ + Δ_bias)
//! B_t   = x_t · W_B,  C_t = x_t · W_C
//! Ā_t   = exp(Δ_t A)            (zero-order hold)
//! B̄_t   = Δ_t B_t               (Euler)
//! h_t   = Ā_t ⊙ h_{t-1} + B̄_t u_t,   h_0 = 0
//! y_t   = ⟨C_t, h_t⟩ + D u_t
//! ```
//!
//! `A` is diagonal, real and strictly negative; it is stored as `A_log`
//! with `A = -exp(A_log)` so that `0 < Ā < 1` holds for any learned value.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Builder, Ctx, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Concrete selective SSM parameters for one block.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams<T> {
    /// `[D_m, N]`
    pub a_log: Tensor<T>,
    /// `[D_m]`
    pub d_skip: Tensor<T>,
    /// `[D_m, D_m]`
    pub w_delta: Tensor<T>,
    /// `[D_m]`
    pub delta_bias: Tensor<T>,
    /// `[D_m, N]`
    pub w_b: Tensor<T>,
    /// `[D_m, N]`
    pub w_c: Tensor<T>,
}

/// Δ range targeted by the bias initialization (log-uniform).
pub const DELTA_INIT_RANGE: (f64, f64) = (0.001, 0.1);

/// Inverse of softplus, used to place Δ at initialization.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl<T: Real> SsmParams<T> {
    pub fn channels(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn state_size(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// Standard initialization: `A[d, n] = -(n + 1)`, Δ log-uniform in
    /// [0.001, 0.1], `D = 1`, projections uniform in ±1/√D_m.
    pub fn init(channels: usize, state: usize, rng: &mut ChaCha8Rng) -> Self {
        let a_log = (0..channels * state).map(|i| T::of(((i % state) as f64 + 1.0).ln())).collect();
        let bound = 1.0 / (channels as f64).sqrt();
        let mut uni = |n: usize| -> Vec<T> { (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect() };
        let w_delta = uni(channels * channels);
        let w_b = uni(channels * state);
        let w_c = uni(channels * state);
        let (lo, hi) = DELTA_INIT_RANGE;
        let delta_bias = (0..channels)
            .map(|_| {
                let dt = (rng.gen_range(lo.ln()..=hi.ln())).exp();
                T::of(softplus_inverse(dt))
            })
            .collect();
        Self {
            a_log: Tensor::new([channels, state], a_log).unwrap(),
            d_skip: Tensor::ones([channels]),
            w_delta: Tensor::new([channels, channels], w_delta).unwrap(),
            delta_bias: Tensor::new([channels], delta_bias).unwrap(),
            w_b: Tensor::new([channels, state], w_b).unwrap(),
            w_c: Tensor::new([channels, state], w_c).unwrap(),
        }
    }

    /// `A = -exp(A_log)`.
    pub fn a(&self) -> Tensor<T> {
        self.a_log.map(|v| -v.exp())
    }
}

fn softplus<T: Real>(x: T) -> T {
    if x > T::of(crate::autodiff::EXP_CLAMP) {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn check_input<T: Real>(u: &Tensor<T>, channels: usize, op: &'static str) -> Result<(usize, usize)> {
    match u.shape() {
        [l, d] if *d == channels => Ok((*l, *d)),
        s => Err(Error::shape(op, format!("expected [L, {channels}], got {s:?}"))),
    }
}

/// Input-dependent Δ, B, C for a sequence `x: [L, D_m]`.
pub fn selection_projections<T: Real>(
    x: &Tensor<T>,
    params: &SsmParams<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let dm = params.channels();
    let n = params.state_size();
    let (l, _) = check_input(x, dm, "selection_projections")?;
    if !x.all_finite() {
        return Err(Error::NonFinite { op: "selection_projections" });
    }
    let mut delta = vec![T::zero(); l * dm];
    let mut b = vec![T::zero(); l * n];
    let mut c = vec![T::zero(); l * n];
    crate::autodiff::gemm_nn(l, dm, dm, x.data(), params.w_delta.data(), &mut delta);
    crate::autodiff::gemm_nn(l, dm, n, x.data(), params.w_b.data(), &mut b);
    crate::autodiff::gemm_nn(l, dm, n, x.data(), params.w_c.data(), &mut c);
    for t in 0..l {
        for d in 0..dm {
            let v = &mut delta[t * dm + d];
            *v = softplus(*v + params.delta_bias.data()[d]);
        }
    }
    let out = (Tensor::new([l, dm], delta)?, Tensor::new([l, n], b)?, Tensor::new([l, n], c)?);
    if !(out.0.all_finite() && out.1.all_finite() && out.2.all_finite()) {
        return Err(Error::NonFinite { op: "selection_projections" });
    }
    Ok(out)
}

/// `Ā = exp(Δ ⊗ A)`, `B̄ = Δ ⊗ B`, both `[L, D_m, N]`.
pub fn discretize<T: Real>(a: &Tensor<T>, b: &Tensor<T>, delta: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (dm, n) = match a.shape() {
        [dm, n] => (*dm, *n),
        s => return Err(Error::shape("discretize", format!("A must be [D, N], got {s:?}"))),
    };
    let l = delta.shape()[0];
    if delta.shape() != [l, dm] || b.shape() != [l, n] {
        return Err(Error::shape(
            "discretize",
            format!("Δ {:?} and B {:?} inconsistent with A {:?}", delta.shape(), b.shape(), a.shape()),
        ));
    }
    if delta.data().iter().any(|&v| !(v > T::zero())) {
        return Err(Error::InvalidArgument("discretize requires Δ > 0".into()));
    }
    if a.data().iter().any(|&v| !(v < T::zero())) {
        return Err(Error::InvalidArgument("discretize requires A < 0".into()));
    }
    let mut abar = Vec::with_capacity(l * dm * n);
    let mut bbar = Vec::with_capacity(l * dm * n);
    for t in 0..l {
        for d in 0..dm {
            let dt = delta.data()[t * dm + d];
            for k in 0..n {
                abar.push((dt * a.data()[d * n + k]).exp());
                bbar.push(dt * b.data()[t * n + k]);
            }
        }
    }
    Ok((Tensor::new([l, dm, n], abar)?, Tensor::new([l, dm, n], bbar)?))
}

/// A discretized SSM ready to scan a sequence of length `L`.
#[derive(Clone, Debug)]
pub struct Discretized<T> {
    /// `[L, D_m, N]`
    pub abar: Tensor<T>,
    /// `[L, D_m, N]`
    pub bbar: Tensor<T>,
    /// `[L, N]`
    pub c: Tensor<T>,
    /// `[D_m]`
    pub d_skip: Tensor<T>,
}

impl<T: Real> Discretized<T> {
    pub fn from_params(u: &Tensor<T>, params: &SsmParams<T>) -> Result<Self> {
        let (delta, b, c) = selection_projections(u, params)?;
        let (abar, bbar) = discretize(&params.a(), &b, &delta)?;
        Ok(Self { abar, bbar, c, d_skip: params.d_skip.clone() })
    }

    fn dims(&self, u: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
        let s = self.abar.shape();
        let (l, dm, n) = (s[0], s[1], s[2]);
        if u.shape() != [l, dm] || self.bbar.shape() != s || self.c.shape() != [l, n] || self.d_skip.shape() != [dm] {
            return Err(Error::shape(op, format!("u {:?} vs Ā {:?}", u.shape(), s)));
        }
        Ok((l, dm, n))
    }
}

/// Hidden state `h: [D_m, N]` at one position.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanState<T> {
    pub h: Tensor<T>,
}

#[inline]
fn readout<T: Real>(c: &[T], h: &[T], d: T, u: T) -> T {
    let mut s = T::zero();
    for (&ck, &hk) in c.iter().zip(h) {
        s += ck * hk;
    }
    s + d * u
}

/// Sequential recurrence over a discretized SSM. Also returns every hidden
/// state when `keep_states` is set (debug / verification use).
pub fn scan_sequential<T: Real>(
    u: &Tensor<T>,
    ssm: &Discretized<T>,
    keep_states: bool,
) -> Result<(Tensor<T>, Vec<ScanState<T>>)> {
    if u.shape().first() == Some(&0) || u.is_empty() {
        return Err(Error::EmptySequence("selective_scan_sequential"));
    }
    let (l, dm, n) = ssm.dims(u, "selective_scan_sequential")?;
    let mut h = vec![T::zero(); dm * n];
    let mut y = Vec::with_capacity(l * dm);
    let mut states = Vec::new();
    for t in 0..l {
        let ab = &ssm.abar.data()[t * dm * n..][..dm * n];
        let bb = &ssm.bbar.data()[t * dm * n..][..dm * n];
        let ct = &ssm.c.data()[t * n..][..n];
        for d in 0..dm {
            let ut = u.data()[t * dm + d];
            let hd = &mut h[d * n..(d + 1) * n];
            for k in 0..n {
                hd[k] = ab[d * n + k] * hd[k] + bb[d * n + k] * ut;
            }
            y.push(readout(ct, hd, ssm.d_skip.data()[d], ut));
        }
        if keep_states {
            states.push(ScanState { h: Tensor::new([dm, n], h.clone())? });
        }
    }
    let y = Tensor::new([l, dm], y)?;
    if !y.all_finite() {
        return Err(Error::NonFinite { op: "selective_scan_sequential" });
    }
    Ok((y, states))
}

/// One element of the linear recurrence `h ↦ a·h + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanElement<T> {
    pub a: T,
    pub b: T,
}

impl<T: Real> ScanElement<T> {
    pub fn identity() -> Self {
        Self { a: T::one(), b: T::zero() }
    }

    /// `self` applied first, then `later`: `(a₁,b₁)∘(a₂,b₂) = (a₁a₂, a₂b₁ + b₂)`.
    #[inline]
    pub fn then(self, later: Self) -> Self {
        Self { a: self.a * later.a, b: later.a * self.b + later.b }
    }
}

/// Work-efficient two-phase (up-sweep / down-sweep) inclusive scan. The
/// input is padded to a power of two with identity elements; padding is
/// discarded before returning.
pub fn blelloch_inclusive<T: Real>(elems: &[ScanElement<T>]) -> Vec<ScanElement<T>> {
    let l = elems.len();
    if l == 0 {
        return Vec::new();
    }
    let p = l.next_power_of_two();
    let mut tree: Vec<ScanElement<T>> = Vec::with_capacity(p);
    tree.extend_from_slice(elems);
    tree.resize(p, ScanElement::identity());
    // up-sweep
    let mut stride = 1;
    while stride < p {
        let mut i = 2 * stride - 1;
        while i < p {
            tree[i] = tree[i - stride].then(tree[i]);
            i += 2 * stride;
        }
        stride *= 2;
    }
    // down-sweep (exclusive)
    tree[p - 1] = ScanElement::identity();
    let mut stride = p / 2;
    while stride >= 1 {
        let mut i = 2 * stride - 1;
        while i < p {
            let left = tree[i - stride];
            tree[i - stride] = tree[i];
            tree[i] = tree[i].then(left);
            i += 2 * stride;
        }
        stride /= 2;
    }
    tree.truncate(l);
    tree.iter().zip(elems).map(|(ex, &e)| ex.then(e)).collect()
}

/// Associative-scan evaluation of the same recurrence as [`scan_sequential`].
pub fn scan_parallel<T: Real>(u: &Tensor<T>, ssm: &Discretized<T>) -> Result<Tensor<T>> {
    if u.is_empty() {
        return Err(Error::EmptySequence("selective_scan_parallel"));
    }
    let (l, dm, n) = ssm.dims(u, "selective_scan_parallel")?;
    let mut h = vec![T::zero(); l * dm * n];
    let mut elems = Vec::with_capacity(l);
    for d in 0..dm {
        for k in 0..n {
            elems.clear();
            for t in 0..l {
                let i = (t * dm + d) * n + k;
                elems.push(ScanElement { a: ssm.abar.data()[i], b: ssm.bbar.data()[i] * u.data()[t * dm + d] });
            }
            for (t, e) in blelloch_inclusive(&elems).into_iter().enumerate() {
                // h_t is the b-component of e_1 ∘ … ∘ e_t applied to h_0 = 0
                h[(t * dm + d) * n + k] = e.b;
            }
        }
    }
    let mut y = Vec::with_capacity(l * dm);
    for t in 0..l {
        let ct = &ssm.c.data()[t * n..][..n];
        for d in 0..dm {
            y.push(readout(ct, &h[(t * dm + d) * n..][..n], ssm.d_skip.data()[d], u.data()[t * dm + d]));
        }
    }
    let y = Tensor::new([l, dm], y)?;
    if !y.all_finite() {
        return Err(Error::NonFinite { op: "selective_scan_parallel" });
    }
    Ok(y)
}

pub fn selective_scan_sequential<T: Real>(u: &Tensor<T>, params: &SsmParams<T>) -> Result<Tensor<T>> {
    if u.is_empty() {
        return Err(Error::EmptySequence("selective_scan_sequential"));
    }
    Ok(scan_sequential(u, &Discretized::from_params(u, params)?, false)?.0)
}

pub fn selective_scan_parallel<T: Real>(u: &Tensor<T>, params: &SsmParams<T>) -> Result<Tensor<T>> {
    scan_parallel(u, &Discretized::from_params(u, params)?)
}

/// Differentiable batched selective scan.
///
/// Shapes: `u`, `delta`: `[B, L, D]`; `a`: `[D, N]`; `b`, `c`: `[B, L, N]`;
/// `d_skip`: `[D]`. Returns `y: [B, L, D]`. Hidden states are kept for the
/// backward pass.
pub fn selective_scan<'t, T: Real>(
    u: Var<'t, T>,
    delta: Var<'t, T>,
    a: Var<'t, T>,
    b: Var<'t, T>,
    c: Var<'t, T>,
    d_skip: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (uv, dv, av, bv, cv, sv) = (u.value(), delta.value(), a.value(), b.value(), c.value(), d_skip.value());
    let (bs, l, dm) = match uv.shape() {
        [bs, l, dm] => (*bs, *l, *dm),
        s => return Err(Error::shape("selective_scan", format!("u must be [B, L, D], got {s:?}"))),
    };
    let n = av.shape().get(1).copied().unwrap_or(0);
    if dv.shape() != uv.shape()
        || av.shape() != [dm, n]
        || bv.shape() != [bs, l, n]
        || cv.shape() != [bs, l, n]
        || sv.shape() != [dm]
    {
        return Err(Error::shape(
            "selective_scan",
            format!(
                "u {:?}, Δ {:?}, A {:?}, B {:?}, C {:?}, D {:?}",
                uv.shape(),
                dv.shape(),
                av.shape(),
                bv.shape(),
                cv.shape(),
                sv.shape()
            ),
        ));
    }
    let keep = u.tape().is_recording();
    let mut y = vec![T::zero(); bs * l * dm];
    let mut states = if keep { vec![T::zero(); bs * l * dm * n] } else { Vec::new() };
    // Ā per (b, t, d, k), cached so the reverse pass needs no exponentials
    let mut abars = if keep { vec![T::zero(); bs * l * dm * n] } else { Vec::new() };
    let mut h = vec![T::zero(); dm * n];
    let (ud, dd, ad, bd, cd, sd) = (uv.data(), dv.data(), av.data(), bv.data(), cv.data(), sv.data());
    for bi in 0..bs {
        h.iter_mut().for_each(|v| *v = T::zero());
        for t in 0..l {
            let row = bi * l + t;
            let bt = &bd[row * n..][..n];
            let ct = &cd[row * n..][..n];
            for d in 0..dm {
                let ut = ud[row * dm + d];
                let dt = dd[row * dm + d];
                let hd = &mut h[d * n..(d + 1) * n];
                let ad_row = &ad[d * n..(d + 1) * n];
                let mut s = T::zero();
                for k in 0..n {
                    let abar = (dt * ad_row[k]).exp();
                    hd[k] = abar * hd[k] + dt * bt[k] * ut;
                    s += ct[k] * hd[k];
                    if keep {
                        abars[(row * dm + d) * n + k] = abar;
                    }
                }
                y[row * dm + d] = s + sd[d] * ut;
            }
            if keep {
                states[row * dm * n..][..dm * n].copy_from_slice(&h);
            }
        }
    }
    let out = Tensor::new([bs, l, dm], y)?;
    u.tape().push("selective_scan", out, &[u, delta, a, b, c, d_skip], move || {
        Box::new(move |gy: &Tensor<T>| {
            let (ud, dd, ad, bd, cd, sd) = (uv.data(), dv.data(), av.data(), bv.data(), cv.data(), sv.data());
            let mut du = vec![T::zero(); ud.len()];
            let mut ddelta = vec![T::zero(); dd.len()];
            let mut da = vec![T::zero(); ad.len()];
            let mut db = vec![T::zero(); bd.len()];
            let mut dc = vec![T::zero(); cd.len()];
            let mut ds = vec![T::zero(); sd.len()];
            let mut carry = vec![T::zero(); dm * n];
            for bi in 0..bs {
                carry.iter_mut().for_each(|v| *v = T::zero());
                for t in (0..l).rev() {
                    let row = bi * l + t;
                    let bt = &bd[row * n..][..n];
                    let ct = &cd[row * n..][..n];
                    let hcur = &states[row * dm * n..][..dm * n];
                    for d in 0..dm {
                        let ut = ud[row * dm + d];
                        let dt = dd[row * dm + d];
                        let g_y = gy.data()[row * dm + d];
                        let mut g_dt = T::zero();
                        let mut g_u = g_y * sd[d];
                        ds[d] += g_y * ut;
                        for k in 0..n {
                            let i = d * n + k;
                            let g = g_y * ct[k] + carry[i];
                            dc[row * n + k] += g_y * hcur[i];
                            let hprev = if t > 0 { states[(row - 1) * dm * n + i] } else { T::zero() };
                            let abar = abars[row * dm * n + i];
                            let g_abar = g * hprev * abar;
                            g_dt += g_abar * ad[i] + g * bt[k] * ut;
                            da[i] += g_abar * dt;
                            db[row * n + k] += g * dt * ut;
                            g_u += g * dt * bt[k];
                            carry[i] = g * abar;
                        }
                        ddelta[row * dm + d] += g_dt;
                        du[row * dm + d] += g_u;
                    }
                }
            }
            let mk = |shape: &[usize], v: Vec<T>| Some(Tensor::new(shape.to_vec(), v).unwrap());
            vec![
                mk(uv.shape(), du),
                mk(dv.shape(), ddelta),
                mk(av.shape(), da),
                mk(bv.shape(), db),
                mk(cv.shape(), dc),
                mk(sv.shape(), ds),
            ]
        })
    })
}

/// Trainable selective SSM over token sequences `[B, L, D_m]`.
#[derive(Clone, Debug)]
pub struct SelectiveSsm {
    pub channels: usize,
    pub state: usize,
    a_log: ParamId,
    d_skip: ParamId,
    w_delta: ParamId,
    delta_bias: ParamId,
    w_b: ParamId,
    w_c: ParamId,
}

impl SelectiveSsm {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, channels: usize, state: usize) -> Result<Self> {
        if b.shapes_only() {
            return Ok(Self {
                channels,
                state,
                a_log: b.zeros("a_log", vec![channels, state])?,
                d_skip: b.zeros("d_skip", vec![channels])?,
                w_delta: b.zeros("w_delta", vec![channels, channels])?,
                delta_bias: b.zeros("delta_bias", vec![channels])?,
                w_b: b.zeros("w_b", vec![channels, state])?,
                w_c: b.zeros("w_c", vec![channels, state])?,
            });
        }
        let p = SsmParams::<T>::init(channels, state, b.rng());
        Ok(Self {
            channels,
            state,
            a_log: b.add("a_log", p.a_log)?,
            d_skip: b.add("d_skip", p.d_skip)?,
            w_delta: b.add("w_delta", p.w_delta)?,
            delta_bias: b.add("delta_bias", p.delta_bias)?,
            w_b: b.add("w_b", p.w_b)?,
            w_c: b.add("w_c", p.w_c)?,
        })
    }

    pub fn params<T: Real>(&self, store: &ParamStore<T>) -> SsmParams<T> {
        SsmParams {
            a_log: store.get(self.a_log).clone(),
            d_skip: store.get(self.d_skip).clone(),
            w_delta: store.get(self.w_delta).clone(),
            delta_bias: store.get(self.delta_bias).clone(),
            w_b: store.get(self.w_b).clone(),
            w_c: store.get(self.w_c).clone(),
        }
    }

    pub fn set_params<T: Real>(&self, store: &mut ParamStore<T>, p: SsmParams<T>) -> Result<()> {
        store.set(self.a_log, p.a_log)?;
        store.set(self.d_skip, p.d_skip)?;
        store.set(self.w_delta, p.w_delta)?;
        store.set(self.delta_bias, p.delta_bias)?;
        store.set(self.w_b, p.w_b)?;
        store.set(self.w_c, p.w_c)
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, u: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = u.shape();
        if s.len() != 3 || s[2] != self.channels {
            return Err(Error::shape("ssm", format!("expected [B, L, {}], got {s:?}", self.channels)));
        }
        let delta = u.linear(ctx.param(self.w_delta), Some(ctx.param(self.delta_bias)))?.softplus()?;
        let b = u.linear(ctx.param(self.w_b), None)?;
        let c = u.linear(ctx.param(self.w_c), None)?;
        let a = ctx.param(self.a_log).exp()?.neg()?;
        selective_scan(u, delta, a, b, c, ctx.param(self.d_skip))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn degenerate(l: usize) -> Discretized<f64> {
        Discretized {
            abar: Tensor::ones([l, 1, 1]),
            bbar: Tensor::ones([l, 1, 1]),
            c: Tensor::ones([l, 1]),
            d_skip: Tensor::zeros([1]),
        }
    }

    #[test]
    fn cumulative_sum_case() {
        let u = Tensor::from_f64([3, 1], &[1.0, 2.0, 3.0]).unwrap();
        let ssm = degenerate(3);
        assert_eq!(scan_sequential(&u, &ssm, false).unwrap().0.data(), &[1.0, 3.0, 6.0]);
        assert_eq!(scan_parallel(&u, &ssm).unwrap().data(), &[1.0, 3.0, 6.0]);
    }

    #[test]
    fn discretize_half() {
        let a = Tensor::<f64>::from_f64([1, 1], &[-1.0]).unwrap();
        let b = Tensor::from_f64([1, 1], &[2.0]).unwrap();
        let dt = Tensor::from_f64([1, 1], &[2f64.ln()]).unwrap();
        let (abar, bbar) = discretize(&a, &b, &dt).unwrap();
        assert!((abar.item() - 0.5).abs() < 1e-15);
        assert!((bbar.item() - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn discretize_small_delta_limit() {
        let a = Tensor::<f64>::from_f64([1, 2], &[-1.0, -5.0]).unwrap();
        let b = Tensor::from_f64([1, 2], &[0.7, -0.3]).unwrap();
        let dt = Tensor::from_f64([1, 1], &[1e-8]).unwrap();
        let (abar, bbar) = discretize(&a, &b, &dt).unwrap();
        assert!(abar.data().iter().all(|&v| (v - 1.0).abs() < 1e-7 && v < 1.0));
        assert!(bbar.data().iter().all(|&v| v.abs() < 1e-7));
    }

    #[test]
    fn discretize_rejects_nonpositive_delta() {
        let a = Tensor::<f64>::from_f64([1, 1], &[-1.0]).unwrap();
        let b = Tensor::ones([1, 1]);
        let dt = Tensor::zeros([1, 1]);
        assert!(matches!(discretize(&a, &b, &dt), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_input_gives_ln2_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = SsmParams::<f64>::init(3, 2, &mut rng);
        p.delta_bias = Tensor::zeros([3]);
        p.w_b = Tensor::zeros([3, 2]);
        let x = Tensor::zeros([4, 3]);
        let (delta, b, _) = selection_projections(&x, &p).unwrap();
        assert!(delta.data().iter().all(|&v| (v - 2f64.ln()).abs() < 1e-15));
        assert!(b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = SsmParams::<f64>::init(8, 4, &mut rng);
        let a = p.a();
        for d in 0..8 {
            for n in 0..4 {
                assert!((a.get(&[d, n]) + (n as f64 + 1.0)).abs() < 1e-12);
            }
        }
        for &bias in p.delta_bias.data() {
            let dt = softplus(bias);
            assert!((0.001 - 1e-12..=0.1 + 1e-12).contains(&dt), "{dt}");
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = SsmParams::<f64>::init(2, 2, &mut rng);
        assert!(Tensor::<f64>::new([0, 2], vec![]).is_err());
        let u = Tensor::<f64>::ones([1, 3]);
        assert!(selective_scan_sequential(&u, &p).is_err());
    }

    #[test]
    fn blelloch_matches_fold_on_odd_lengths() {
        for l in 1..20 {
            let elems: Vec<_> = (0..l).map(|i| ScanElement { a: 0.5 + 0.01 * i as f64, b: i as f64 - 3.0 }).collect();
            let scanned = blelloch_inclusive(&elems);
            let mut acc = ScanElement::identity();
            for (e, s) in elems.iter().zip(&scanned) {
                acc = acc.then(*e);
                assert!((acc.a - s.a).abs() < 1e-12 && (acc.b - s.b).abs() < 1e-12);
            }
        }
    }
}
