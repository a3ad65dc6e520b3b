//! Contraction of a factorized kernel with its input, without densification.
//!
//! Every core is first projected against the input vector
//! (`P[..] = sum_i G[i, ..] * x[i]`), then the projections are combined: an
//! elementwise product over the rank index for CP, a trace of the chained bond
//! matrices for TT/TR. When the same vector feeds every position, a shared core is
//! projected once.

use super::{KernelFormat, TnKernel};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Reusable scratch buffers for per-pixel contraction.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    proj: Vec<f64>,
    dproj: Vec<f64>,
    offsets: Vec<usize>,
    factors: Vec<f64>,
    prefix: Vec<Vec<f64>>,
    suffix: Vec<Vec<f64>>,
    tmp: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn projections(&self) -> &[f64] {
        &self.proj
    }
}

fn project(core: &[f64], x: &[f64], block: usize, out: &mut [f64]) {
    out.fill(0.0);
    for (i, &xi) in x.iter().enumerate() {
        let row = &core[i * block..(i + 1) * block];
        for (o, &g) in out.iter_mut().zip(row) {
            *o += xi * g;
        }
    }
}

/// Dot product with four interleaved partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, ar) = a.as_chunks::<4>();
    let (bc, br) = b.as_chunks::<4>();
    for (x, y) in ac.iter().zip(bc) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `a (m x k) * b (k x n)` into `out (m x n)`.
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut Vec<f64>) {
    out.clear();
    out.resize(m * n, 0.0);
    for r in 0..m {
        for c in 0..k {
            let av = a[r * k + c];
            let brow = &b[c * n..(c + 1) * n];
            for (o, &bv) in out[r * n..(r + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

impl TnKernel {
    /// Which projection slot feeds each position, and which stored core each slot uses.
    /// With a single input vector, slots coincide with stored cores.
    fn shared_input_slots(&self) -> (Vec<usize>, Vec<usize>) {
        let pos_slot = (0..self.order).map(|k| self.stored_index(k)).collect();
        let mut slot_pos = vec![usize::MAX; self.cores.len()];
        for k in (0..self.order).rev() {
            slot_pos[self.stored_index(k)] = k;
        }
        (pos_slot, slot_pos)
    }

    fn prepare(&self, slot_pos: &[usize], ws: &mut Workspace) {
        ws.offsets.clear();
        let mut total = 0;
        for &k in slot_pos {
            ws.offsets.push(total);
            total += self.block_len(k);
        }
        ws.offsets.push(total);
        ws.proj.resize(total, 0.0);
    }

    fn project_slots(
        &self,
        slot_pos: &[usize],
        slot_x: &dyn Fn(usize) -> usize,
        xs: &[&[f64]],
        ws: &mut Workspace,
        mults: &mut u64,
    ) {
        self.prepare(slot_pos, ws);
        for (s, &k) in slot_pos.iter().enumerate() {
            let block = self.block_len(k);
            let core = self.cores[self.stored_index(k)].data();
            let (lo, hi) = (ws.offsets[s], ws.offsets[s + 1]);
            project(core, xs[slot_x(s)], block, &mut ws.proj[lo..hi]);
            *mults += (self.in_dim * block) as u64;
        }
    }

    fn combine(&self, pos_slot: &[usize], ws: &mut Workspace, out: &mut [f64], mults: &mut u64) {
        let j_dim = self.out_dim;
        let p = self.order;
        match self.format {
            KernelFormat::Cp => {
                let r_dim = self.ranks[0];
                out.fill(0.0);
                for r in 0..r_dim {
                    for (j, o) in out.iter_mut().enumerate() {
                        let idx = r * j_dim + j;
                        let mut prod = ws.proj[ws.offsets[pos_slot[0]] + idx];
                        for &s in &pos_slot[1..] {
                            prod *= ws.proj[ws.offsets[s] + idx];
                        }
                        *o += prod;
                    }
                }
                *mults += (r_dim * j_dim * (p - 1)) as u64;
            }
            KernelFormat::Tt | KernelFormat::Tr => {
                let r0 = self.bond_dims(0).0;
                let (mut acc, mut link, mut next) = (Vec::new(), Vec::new(), Vec::new());
                for (j, o) in out.iter_mut().enumerate() {
                    self.link_matrix(ws, pos_slot[0], 0, j, &mut acc);
                    for k in 1..p {
                        let (a, b) = self.bond_dims(k);
                        self.link_matrix(ws, pos_slot[k], k, j, &mut link);
                        matmul(&acc, &link, r0, a, b, &mut next);
                        *mults += (r0 * a * b) as u64;
                        std::mem::swap(&mut acc, &mut next);
                    }
                    *o = (0..r0).map(|d| acc[d * r0 + d]).sum();
                }
            }
        }
    }

    /// Bond matrix `(a x b)` of position `k` at output `j`, read out of its projection slot.
    fn link_matrix(&self, ws: &Workspace, slot: usize, k: usize, j: usize, out: &mut Vec<f64>) {
        let (a, b) = self.bond_dims(k);
        let base = ws.offsets[slot];
        out.clear();
        out.extend((0..a * b).map(|ab| ws.proj[base + ab * self.out_dim + j]));
    }

    /// Contracts the kernel `p` times with `x`; slice form for hot loops.
    ///
    /// Panics if `x.len() != in_dim` or `out.len() != out_dim`.
    pub fn contract_into(&self, x: &[f64], out: &mut [f64], ws: &mut Workspace) {
        let mut mults = 0;
        self.contract_impl(x, out, ws, &mut mults);
    }

    fn contract_impl(&self, x: &[f64], out: &mut [f64], ws: &mut Workspace, mults: &mut u64) {
        assert_eq!(x.len(), self.in_dim, "input length");
        assert_eq!(out.len(), self.out_dim, "output length");
        let (pos_slot, slot_pos) = self.shared_input_slots();
        self.project_slots(&slot_pos, &|_| 0, &[x], ws, mults);
        self.combine(&pos_slot, ws, out, mults);
    }

    /// `y[j] = sum W[i1..ip, j] x[i1] .. x[ip]`, evaluated on the factorized cores.
    pub fn contract(&self, x: &DenseTensor) -> Result<DenseTensor> {
        self.check_input(x.data())?;
        let mut out = vec![0.0; self.out_dim];
        self.contract_into(x.data(), &mut out, &mut Workspace::new());
        DenseTensor::vector(out).map_err(|e| Error::Divergence(e.to_string()))
    }

    /// Contraction together with the number of scalar multiplications it performed.
    pub fn contract_counted(&self, x: &[f64]) -> Result<(Vec<f64>, u64)> {
        self.check_input(x)?;
        let mut out = vec![0.0; self.out_dim];
        let mut mults = 0;
        self.contract_impl(x, &mut out, &mut Workspace::new(), &mut mults);
        Ok((out, mults))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::invalid(format!(
                "input length {} does not match kernel input dimension {}",
                x.len(),
                self.in_dim
            )));
        }
        Ok(())
    }

    /// Multilinear form with a separate vector per position:
    /// `y[j] = sum W[i1..ip, j] xs[0][i1] .. xs[p-1][ip]`.
    pub fn contract_multilinear(&self, xs: &[&[f64]]) -> Result<Vec<f64>> {
        if xs.len() != self.order {
            return Err(Error::invalid(format!(
                "expected {} input vectors, got {}",
                self.order,
                xs.len()
            )));
        }
        for x in xs {
            self.check_input(x)?;
        }
        let mut ws = Workspace::new();
        let mut mults = 0;
        let slots: Vec<usize> = (0..self.order).collect();
        self.project_slots(&slots, &|s| s, xs, &mut ws, &mut mults);
        let mut out = vec![0.0; self.out_dim];
        self.combine(&slots, &mut ws, &mut out, &mut mults);
        Ok(out)
    }

    /// Gradients of `<upstream, contract(x)>` with respect to every stored core and `x`.
    pub fn contract_grad(
        &self,
        x: &DenseTensor,
        upstream: &DenseTensor,
    ) -> Result<(Vec<DenseTensor>, DenseTensor)> {
        self.check_input(x.data())?;
        if upstream.len() != self.out_dim {
            return Err(Error::invalid(format!(
                "upstream length {} does not match output dimension {}",
                upstream.len(),
                self.out_dim
            )));
        }
        let mut grads = self
            .cores
            .iter()
            .map(|c| DenseTensor::zeros(c.shape()))
            .collect::<Result<Vec<_>>>()?;
        let mut gx = vec![0.0; self.in_dim];
        self.accumulate_grad(x.data(), upstream.data(), &mut Workspace::new(), &mut grads, &mut gx);
        Ok((grads, DenseTensor::vector(gx)?))
    }

    /// Adds the gradients of `<upstream, contract(x)>` into `grad_cores` and `grad_x`.
    pub fn accumulate_grad(
        &self,
        x: &[f64],
        upstream: &[f64],
        ws: &mut Workspace,
        grad_cores: &mut [DenseTensor],
        grad_x: &mut [f64],
    ) {
        assert_eq!(x.len(), self.in_dim, "input length");
        assert_eq!(upstream.len(), self.out_dim, "upstream length");
        assert_eq!(grad_x.len(), self.in_dim, "grad_x length");
        assert_eq!(grad_cores.len(), self.cores.len(), "grad core count");
        let (pos_slot, slot_pos) = self.shared_input_slots();
        let mut mults = 0;
        self.project_slots(&slot_pos, &|_| 0, &[x], ws, &mut mults);
        self.backprop_projected(x, upstream, &pos_slot, &slot_pos, ws, grad_cores, grad_x);
    }

    /// [`TnKernel::accumulate_grad`] reusing the projections `proj` left in the
    /// workspace by a forward [`TnKernel::contract_into`] on the same `x`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn accumulate_grad_projected(
        &self,
        x: &[f64],
        proj: &[f64],
        upstream: &[f64],
        ws: &mut Workspace,
        grad_cores: &mut [DenseTensor],
        grad_x: &mut [f64],
    ) {
        let (pos_slot, slot_pos) = self.shared_input_slots();
        self.prepare(&slot_pos, ws);
        ws.proj.copy_from_slice(proj);
        self.backprop_projected(x, upstream, &pos_slot, &slot_pos, ws, grad_cores, grad_x);
    }

    /// Number of projected values a single contraction keeps in the workspace.
    pub(crate) fn projection_len(&self) -> usize {
        let (_, slot_pos) = self.shared_input_slots();
        slot_pos.iter().map(|&k| self.block_len(k)).sum()
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_projected(
        &self,
        x: &[f64],
        upstream: &[f64],
        pos_slot: &[usize],
        slot_pos: &[usize],
        ws: &mut Workspace,
        grad_cores: &mut [DenseTensor],
        grad_x: &mut [f64],
    ) {
        let total = *ws.offsets.last().unwrap();
        ws.dproj.clear();
        ws.dproj.resize(total, 0.0);
        match self.format {
            KernelFormat::Cp => self.cp_proj_grad(pos_slot, upstream, ws),
            _ => self.chain_proj_grad(pos_slot, upstream, ws),
        }
        for (s, &k) in slot_pos.iter().enumerate() {
            let block = self.block_len(k);
            let (lo, hi) = (ws.offsets[s], ws.offsets[s + 1]);
            let dp = &ws.dproj[lo..hi];
            let core = self.cores[s].data();
            let gcore = grad_cores[s].data_mut();
            for (i, &xi) in x.iter().enumerate() {
                let row = &core[i * block..(i + 1) * block];
                let grow = &mut gcore[i * block..(i + 1) * block];
                for (g, &d) in grow.iter_mut().zip(dp) {
                    *g += xi * d;
                }
                grad_x[i] += dot(row, dp);
            }
        }
    }

    fn cp_proj_grad(&self, pos_slot: &[usize], upstream: &[f64], ws: &mut Workspace) {
        let p = self.order;
        let j_dim = self.out_dim;
        let r_dim = self.ranks[0];
        ws.factors.resize(p, 0.0);
        ws.tmp.resize(p + 1, 0.0);
        for r in 0..r_dim {
            for (j, &u) in upstream.iter().enumerate() {
                let idx = r * j_dim + j;
                for (k, &s) in pos_slot.iter().enumerate() {
                    ws.factors[k] = ws.proj[ws.offsets[s] + idx];
                }
                // tmp[k] holds the product of factors after position k
                ws.tmp[p] = 1.0;
                for k in (0..p).rev() {
                    ws.tmp[k] = ws.tmp[k + 1] * ws.factors[k];
                }
                let mut before = u;
                for (k, &s) in pos_slot.iter().enumerate() {
                    ws.dproj[ws.offsets[s] + idx] += before * ws.tmp[k + 1];
                    before *= ws.factors[k];
                }
            }
        }
    }

    fn chain_proj_grad(&self, pos_slot: &[usize], upstream: &[f64], ws: &mut Workspace) {
        let p = self.order;
        let j_dim = self.out_dim;
        let r0 = self.bond_dims(0).0;
        let mut links: Vec<Vec<f64>> = vec![Vec::new(); p];
        let mut prefix: Vec<Vec<f64>> = std::mem::take(&mut ws.prefix);
        let mut suffix: Vec<Vec<f64>> = std::mem::take(&mut ws.suffix);
        prefix.resize(p, Vec::new());
        suffix.resize(p, Vec::new());
        let mut q = Vec::new();
        for (j, &u) in upstream.iter().enumerate() {
            for k in 0..p {
                self.link_matrix(ws, pos_slot[k], k, j, &mut links[k]);
            }
            // prefix[k] = M_0 .. M_k  (r0 x b_k)
            prefix[0].clone_from(&links[0]);
            for k in 1..p {
                let (a, b) = self.bond_dims(k);
                let (head, tail) = prefix.split_at_mut(k);
                matmul(&head[k - 1], &links[k], r0, a, b, &mut tail[0]);
            }
            // suffix[k] = M_k .. M_{p-1}  (a_k x r0)
            suffix[p - 1].clone_from(&links[p - 1]);
            for k in (0..p - 1).rev() {
                let (a, b) = self.bond_dims(k);
                let (head, tail) = suffix.split_at_mut(k + 1);
                matmul(&links[k], &tail[0], a, b, r0, &mut head[k]);
            }
            for k in 0..p {
                let (a, b) = self.bond_dims(k);
                // q = suffix[k+1] * prefix[k-1]  (b x a); d trace / d M_k[x,y] = q[y,x]
                match (k == 0, k + 1 == p) {
                    (true, true) => q = identity(r0),
                    (true, false) => q.clone_from(&suffix[1]),
                    (false, true) => q.clone_from(&prefix[p - 2]),
                    (false, false) => matmul(&suffix[k + 1], &prefix[k - 1], b, r0, a, &mut q),
                }
                let base = ws.offsets[pos_slot[k]];
                for x in 0..a {
                    for y in 0..b {
                        ws.dproj[base + (x * b + y) * j_dim + j] += u * q[y * a + x];
                    }
                }
            }
        }
        ws.prefix = prefix;
        ws.suffix = suffix;
    }
}
