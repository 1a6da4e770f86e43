//! Affine autoregressive normalizing flow with a shared causal ordering.
//!
//! A model is a stack of layers applied latent-to-data: `x = L_K(...L_1(z))`.
//! Within a layer, groups of variables are computed in rank order; each
//! group's scale `s` and shift `t` are produced by conditioner nets reading
//! the already-computed values of all lower-rank variables (the layer's own
//! output side), and the root group uses learned constants. Every layer
//! therefore shares one ordering, triangular Jacobians compose, and
//! `log |det dT^{-1}/dx| = -sum(s)` accumulated over layers.
//!
//! `flow_forward` / `flow_inverse` work in standardized model coordinates;
//! `log_likelihood`, `sample` and the query layer convert through the
//! model's column scaler so callers stay in original data units.

mod base;
mod ordering;

pub use base::BaseDistribution;
pub use ordering::{CausalOrdering, FlowStructure};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataMatrix, Scaler};
use crate::nn::{Activation, ConditionerNet, NetScratch};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

/// Bound applied to conditioner scale outputs during training; evaluation
/// outside the fit loop is exact (no clamp).
pub const SCALE_CLAMP: f64 = 7.0;

/// Scale/shift source for one variable group within a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupConditioner {
    /// Root group: learned per-variable constants.
    Constants { s: Vec<f64>, t: Vec<f64> },
    /// Non-root group: nets mapping all lower-rank values to per-variable
    /// scale and shift.
    Nets {
        s_net: ConditionerNet,
        t_net: ConditionerNet,
    },
}

/// One affine autoregressive layer: a conditioner per variable group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineLayer {
    pub conditioners: Vec<GroupConditioner>,
}

/// Which parameters a flat-vector segment holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    ScaleConst,
    ShiftConst,
    ScaleNet,
    ShiftNet,
}

/// One contiguous run of a flow parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowParamSegment {
    pub layer: usize,
    pub group: usize,
    pub role: ParamRole,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowParamLayout {
    pub segments: Vec<FlowParamSegment>,
    pub total_len: usize,
}

impl FlowParamLayout {
    pub fn coordinate_of(&self, flat: usize) -> Option<(usize, usize, ParamRole, usize)> {
        self.segments
            .iter()
            .find(|s| flat >= s.offset && flat < s.offset + s.len)
            .map(|s| (s.layer, s.group, s.role, flat - s.offset))
    }
}

/// Flat view of all flow parameters (or of a gradient over them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub values: Vec<f64>,
    pub layout: FlowParamLayout,
}

impl FlowParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Stack of affine autoregressive layers plus base distribution and the
/// input scaler recorded at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    structure: FlowStructure,
    layers: Vec<AffineLayer>,
    base: BaseDistribution,
    input_scaler: Option<Scaler>,
    /// Additive mode: all scales are held at zero, making every transformer
    /// a pure shift.
    additive: bool,
}

impl FlowModel {
    /// Builds a model from explicit parts and validates the layer shapes
    /// against the structure.
    pub fn from_parts(
        structure: FlowStructure,
        layers: Vec<AffineLayer>,
        base: BaseDistribution,
        input_scaler: Option<Scaler>,
        additive: bool,
    ) -> Result<Self> {
        let model = Self {
            structure,
            layers,
            base,
            input_scaler,
            additive,
        };
        model.validate()?;
        Ok(model)
    }

    /// Seeded initialization: constants at zero, net weights uniform in
    /// +-1/sqrt(fan_in). Conditioner nets get `hidden_dims` hidden layers.
    pub fn init(
        structure: FlowStructure,
        n_layers: usize,
        hidden_dims: &[usize],
        activation: Activation,
        base: BaseDistribution,
        additive: bool,
        seed: u64,
    ) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::Config("flow needs at least one layer".into()));
        }
        let mut rng = seeded(derive_seed(seed, "flow-init"));
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let mut conditioners = Vec::with_capacity(structure.n_groups());
            for g in 0..structure.n_groups() {
                let width = structure.group(g).len();
                if g == 0 {
                    conditioners.push(GroupConditioner::Constants {
                        s: vec![0.0; width],
                        t: vec![0.0; width],
                    });
                } else {
                    let mut dims = Vec::with_capacity(hidden_dims.len() + 2);
                    dims.push(structure.prefix_dim(g));
                    dims.extend_from_slice(hidden_dims);
                    dims.push(width);
                    let s_net = ConditionerNet::init(&dims, activation, rng.gen::<u64>())?;
                    let t_net = ConditionerNet::init(&dims, activation, rng.gen::<u64>())?;
                    conditioners.push(GroupConditioner::Nets { s_net, t_net });
                }
            }
            layers.push(AffineLayer { conditioners });
        }
        Self::from_parts(structure, layers, base, None, additive)
    }

    pub fn dim(&self) -> usize {
        self.structure.dim()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn structure(&self) -> &FlowStructure {
        &self.structure
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn base(&self) -> BaseDistribution {
        self.base
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.input_scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: Option<Scaler>) -> Result<()> {
        if let Some(s) = &scaler {
            if s.dim() != self.dim() {
                return Err(Error::Shape(format!(
                    "scaler dim {} vs model dim {}",
                    s.dim(),
                    self.dim()
                )));
            }
        }
        self.input_scaler = scaler;
        Ok(())
    }

    pub fn is_additive(&self) -> bool {
        self.additive
    }

    /// Structural invariants: every layer matches the group structure; the
    /// root group uses constants, all others nets of the right shape; all
    /// parameters finite.
    pub fn validate(&self) -> Result<()> {
        let mut structure = self.structure.clone();
        structure.revalidate()?;
        if structure != self.structure {
            return Err(Error::State("structure prefix table inconsistent".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::State("flow has no layers".into()));
        }
        for (q, layer) in self.layers.iter().enumerate() {
            if layer.conditioners.len() != self.structure.n_groups() {
                return Err(Error::State(format!(
                    "layer {q} has {} conditioners for {} groups",
                    layer.conditioners.len(),
                    self.structure.n_groups()
                )));
            }
            for (g, cond) in layer.conditioners.iter().enumerate() {
                let width = self.structure.group(g).len();
                let prefix = self.structure.prefix_dim(g);
                match cond {
                    GroupConditioner::Constants { s, t } => {
                        if g != 0 {
                            return Err(Error::State(format!(
                                "layer {q} group {g}: constants are only valid for the root group"
                            )));
                        }
                        if s.len() != width || t.len() != width {
                            return Err(Error::State(format!(
                                "layer {q} group {g}: constant width {}/{} vs group width {width}",
                                s.len(),
                                t.len()
                            )));
                        }
                        if s.iter().chain(t).any(|v| !v.is_finite()) {
                            return Err(Error::State(format!(
                                "layer {q} group {g}: non-finite constants"
                            )));
                        }
                    }
                    GroupConditioner::Nets { s_net, t_net } => {
                        if g == 0 {
                            return Err(Error::State(format!(
                                "layer {q} group 0: root group must use constants"
                            )));
                        }
                        for (name, net) in [("s", s_net), ("t", t_net)] {
                            if net.in_dim() != prefix || net.out_dim() != width {
                                return Err(Error::State(format!(
                                    "layer {q} group {g} {name}-net maps {}->{}, expected {prefix}->{width}",
                                    net.in_dim(),
                                    net.out_dim()
                                )));
                            }
                            if net.flatten().values.iter().any(|v| !v.is_finite()) {
                                return Err(Error::State(format!(
                                    "layer {q} group {g} {name}-net has non-finite parameters"
                                )));
                            }
                        }
                    }
                }
            }
        }
        if let Some(s) = &self.input_scaler {
            if s.dim() != self.dim() || s.scale.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::State("scaler dim/scale invalid".into()));
            }
        }
        Ok(())
    }

    // ----- parameter vector -----

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.conditioners)
            .map(|c| match c {
                GroupConditioner::Constants { s, t } => s.len() + t.len(),
                GroupConditioner::Nets { s_net, t_net } => {
                    s_net.param_count() + t_net.param_count()
                }
            })
            .sum()
    }

    pub fn param_layout(&self) -> FlowParamLayout {
        let mut segments = Vec::new();
        let mut offset = 0;
        for (q, layer) in self.layers.iter().enumerate() {
            for (g, cond) in layer.conditioners.iter().enumerate() {
                let (s_role, t_role, s_len, t_len) = match cond {
                    GroupConditioner::Constants { s, t } => {
                        (ParamRole::ScaleConst, ParamRole::ShiftConst, s.len(), t.len())
                    }
                    GroupConditioner::Nets { s_net, t_net } => (
                        ParamRole::ScaleNet,
                        ParamRole::ShiftNet,
                        s_net.param_count(),
                        t_net.param_count(),
                    ),
                };
                segments.push(FlowParamSegment {
                    layer: q,
                    group: g,
                    role: s_role,
                    offset,
                    len: s_len,
                });
                offset += s_len;
                segments.push(FlowParamSegment {
                    layer: q,
                    group: g,
                    role: t_role,
                    offset,
                    len: t_len,
                });
                offset += t_len;
            }
        }
        FlowParamLayout {
            segments,
            total_len: offset,
        }
    }

    pub fn params(&self) -> FlowParams {
        let mut values = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for cond in &layer.conditioners {
                match cond {
                    GroupConditioner::Constants { s, t } => {
                        values.extend_from_slice(s);
                        values.extend_from_slice(t);
                    }
                    GroupConditioner::Nets { s_net, t_net } => {
                        s_net.store_flat(&mut values);
                        t_net.store_flat(&mut values);
                    }
                }
            }
        }
        FlowParams {
            values,
            layout: self.param_layout(),
        }
    }

    pub fn set_params(&mut self, params: &FlowParams) -> Result<()> {
        if params.layout != self.param_layout() {
            return Err(Error::Shape("flow parameter layout mismatch".into()));
        }
        self.set_params_flat(&params.values)
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} flow parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut cursor = 0;
        for layer in &mut self.layers {
            for cond in &mut layer.conditioners {
                match cond {
                    GroupConditioner::Constants { s, t } => {
                        let n = s.len();
                        s.copy_from_slice(&values[cursor..cursor + n]);
                        cursor += n;
                        let n = t.len();
                        t.copy_from_slice(&values[cursor..cursor + n]);
                        cursor += n;
                    }
                    GroupConditioner::Nets { s_net, t_net } => {
                        let n = s_net.param_count();
                        s_net.load_flat(&values[cursor..cursor + n])?;
                        cursor += n;
                        let n = t_net.param_count();
                        t_net.load_flat(&values[cursor..cursor + n])?;
                        cursor += n;
                    }
                }
            }
        }
        Ok(())
    }

    // ----- evaluation -----

    pub(crate) fn make_workspace(&self) -> Workspace {
        let max_pre = (0..self.structure.n_groups())
            .map(|g| self.structure.prefix_dim(g))
            .max()
            .unwrap_or(0);
        let max_group = (0..self.structure.n_groups())
            .map(|g| self.structure.group(g).len())
            .max()
            .unwrap_or(0);
        let scratch = self.layers[0]
            .conditioners
            .iter()
            .map(|c| match c {
                GroupConditioner::Constants { .. } => None,
                GroupConditioner::Nets { s_net, .. } => Some(NetScratch::for_net(s_net)),
            })
            .collect();
        Workspace {
            scratch,
            pre: vec![0.0; max_pre],
            s_buf: vec![0.0; max_group],
            t_buf: vec![0.0; max_group],
            gate_buf: vec![1.0; max_group],
            buf_a: vec![0.0; self.dim()],
            buf_b: vec![0.0; self.dim()],
        }
    }

    fn eval_conditioner(
        &self,
        cond: &GroupConditioner,
        pre: &[f64],
        width: usize,
        clamp: bool,
        scratch: &mut Option<NetScratch>,
        s_out: &mut [f64],
        t_out: &mut [f64],
        gate_out: &mut [f64],
    ) -> Result<()> {
        match cond {
            GroupConditioner::Constants { s, t } => {
                s_out[..width].copy_from_slice(s);
                t_out[..width].copy_from_slice(t);
            }
            GroupConditioner::Nets { s_net, t_net } => {
                let sc = scratch.as_mut().expect("net group has scratch");
                if self.additive {
                    s_out[..width].fill(0.0);
                } else {
                    s_net.forward_scratch(pre, sc)?;
                    s_out[..width].copy_from_slice(sc.output());
                }
                t_net.forward_scratch(pre, sc)?;
                t_out[..width].copy_from_slice(sc.output());
            }
        }
        if self.additive {
            s_out[..width].fill(0.0);
            gate_out[..width].fill(0.0);
        } else if clamp {
            for k in 0..width {
                if s_out[k].abs() > SCALE_CLAMP {
                    s_out[k] = s_out[k].clamp(-SCALE_CLAMP, SCALE_CLAMP);
                    gate_out[k] = 0.0;
                } else {
                    gate_out[k] = 1.0;
                }
            }
        } else {
            gate_out[..width].fill(1.0);
        }
        Ok(())
    }

    /// One layer latent-to-data: groups in rank order, conditioners reading
    /// the layer's own output side.
    fn layer_forward(&self, q: usize, u: &[f64], y: &mut [f64], ws: &mut Workspace) -> Result<()> {
        for g in 0..self.structure.n_groups() {
            let vars = self.structure.group(g);
            let pre_vars = self.structure.prefix_vars(g);
            for (i, &pv) in pre_vars.iter().enumerate() {
                ws.pre[i] = y[pv];
            }
            let (s_buf, t_buf, gate_buf) = (&mut ws.s_buf, &mut ws.t_buf, &mut ws.gate_buf);
            self.eval_conditioner(
                &self.layers[q].conditioners[g],
                &ws.pre[..pre_vars.len()],
                vars.len(),
                false,
                &mut ws.scratch[g],
                s_buf,
                t_buf,
                gate_buf,
            )?;
            for (k, &v) in vars.iter().enumerate() {
                y[v] = ws.s_buf[k].exp() * u[v] + ws.t_buf[k];
                if !y[v].is_finite() {
                    return Err(Error::NonFinite {
                        layer: q,
                        variable: v,
                    });
                }
            }
        }
        Ok(())
    }

    /// One layer data-to-latent; returns this layer's `-sum(s)` log-det
    /// contribution and optionally records scale values and clamp gates.
    fn layer_inverse(
        &self,
        q: usize,
        y: &[f64],
        u: &mut [f64],
        clamp: bool,
        ws: &mut Workspace,
        mut record: Option<(&mut Vec<Vec<f64>>, &mut Vec<Vec<f64>>)>,
    ) -> Result<f64> {
        let mut ld = 0.0;
        for g in 0..self.structure.n_groups() {
            let vars = self.structure.group(g);
            let pre_vars = self.structure.prefix_vars(g);
            for (i, &pv) in pre_vars.iter().enumerate() {
                ws.pre[i] = y[pv];
            }
            let (s_buf, t_buf, gate_buf) = (&mut ws.s_buf, &mut ws.t_buf, &mut ws.gate_buf);
            self.eval_conditioner(
                &self.layers[q].conditioners[g],
                &ws.pre[..pre_vars.len()],
                vars.len(),
                clamp,
                &mut ws.scratch[g],
                s_buf,
                t_buf,
                gate_buf,
            )?;
            for (k, &v) in vars.iter().enumerate() {
                u[v] = (y[v] - ws.t_buf[k]) * (-ws.s_buf[k]).exp();
                ld -= ws.s_buf[k];
                if !u[v].is_finite() {
                    return Err(Error::NonFinite {
                        layer: q,
                        variable: v,
                    });
                }
            }
            if let Some((s_rec, gate_rec)) = record.as_mut() {
                s_rec[g].clear();
                s_rec[g].extend_from_slice(&ws.s_buf[..vars.len()]);
                gate_rec[g].clear();
                gate_rec[g].extend_from_slice(&ws.gate_buf[..vars.len()]);
            }
        }
        Ok(ld)
    }

    pub(crate) fn forward_std_ws(
        &self,
        z: &[f64],
        out: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<()> {
        self.check_dim(z.len())?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite input to flow_forward".into()));
        }
        out.copy_from_slice(z);
        for q in 0..self.layers.len() {
            let mut buf_a = std::mem::take(&mut ws.buf_a);
            buf_a.copy_from_slice(out);
            let res = self.layer_forward(q, &buf_a, out, ws);
            ws.buf_a = buf_a;
            res?;
        }
        Ok(())
    }

    pub(crate) fn inverse_std_ws(
        &self,
        x: &[f64],
        out: &mut [f64],
        clamp: bool,
        ws: &mut Workspace,
    ) -> Result<f64> {
        self.check_dim(x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite input to flow_inverse".into()));
        }
        out.copy_from_slice(x);
        let mut ld = 0.0;
        for q in (0..self.layers.len()).rev() {
            let mut buf_a = std::mem::take(&mut ws.buf_a);
            buf_a.copy_from_slice(out);
            let res = self.layer_inverse(q, &buf_a, out, clamp, ws, None);
            ws.buf_a = buf_a;
            ld += res?;
        }
        Ok(ld)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Shape(format!(
                "expected dim {}, got {}",
                self.dim(),
                len
            )));
        }
        Ok(())
    }

    /// Latent-to-data transform in standardized model coordinates.
    pub fn flow_forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut ws = self.make_workspace();
        let mut out = vec![0.0; self.dim()];
        self.forward_std_ws(z, &mut out, &mut ws)?;
        Ok(out)
    }

    /// Data-to-latent transform plus `log |det dT^{-1}/dx| = -sum(s)`.
    pub fn flow_inverse(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut ws = self.make_workspace();
        let mut out = vec![0.0; self.dim()];
        let ld = self.inverse_std_ws(x, &mut out, false, &mut ws)?;
        Ok((out, ld))
    }

    /// Row-wise forward transform (standardized coordinates).
    pub fn forward_batch(&self, z: &DataMatrix) -> Result<DataMatrix> {
        let mut ws = self.make_workspace();
        let mut out = DataMatrix::zeros(z.n_rows(), self.dim());
        for i in 0..z.n_rows() {
            let mut row = vec![0.0; self.dim()];
            self.forward_std_ws(z.row(i), &mut row, &mut ws)?;
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }

    /// Row-wise inverse transform (standardized coordinates).
    pub fn inverse_batch(&self, x: &DataMatrix) -> Result<DataMatrix> {
        let mut ws = self.make_workspace();
        let mut out = DataMatrix::zeros(x.n_rows(), self.dim());
        for i in 0..x.n_rows() {
            let mut row = vec![0.0; self.dim()];
            self.inverse_std_ws(x.row(i), &mut row, false, &mut ws)?;
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }

    /// Log-density of one original-unit observation: base log-density of the
    /// latents, plus the flow log-det, plus the scaler log-Jacobian.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let mut ws = self.make_workspace();
        let mut z = vec![0.0; self.dim()];
        let ll = match &self.input_scaler {
            Some(scaler) => {
                let mut x_std = vec![0.0; self.dim()];
                scaler.standardize_into(x, &mut x_std);
                let ld = self.inverse_std_ws(&x_std, &mut z, false, &mut ws)?;
                self.base.log_density(&z) + ld + scaler.log_jacobian()
            }
            None => {
                let ld = self.inverse_std_ws(x, &mut z, false, &mut ws)?;
                self.base.log_density(&z) + ld
            }
        };
        Ok(ll)
    }

    /// Mean log-likelihood over the rows of `data` (original units).
    pub fn mean_log_likelihood(&self, data: &DataMatrix) -> Result<f64> {
        if data.n_rows() == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        let mut ws = self.make_workspace();
        let mut z = vec![0.0; self.dim()];
        let mut x_std = vec![0.0; self.dim()];
        let offset = self.input_scaler.as_ref().map_or(0.0, Scaler::log_jacobian);
        let mut acc = 0.0;
        for i in 0..data.n_rows() {
            let row = data.row(i);
            self.check_dim(row.len())?;
            let ld = match &self.input_scaler {
                Some(scaler) => {
                    scaler.standardize_into(row, &mut x_std);
                    self.inverse_std_ws(&x_std, &mut z, false, &mut ws)?
                }
                None => self.inverse_std_ws(row, &mut z, false, &mut ws)?,
            };
            acc += self.base.log_density(&z) + ld + offset;
        }
        Ok(acc / data.n_rows() as f64)
    }

    /// Gradient of the batch-mean log-likelihood with respect to every flow
    /// parameter. Exact reverse mode; no clamping (matches
    /// [`FlowModel::log_likelihood`]).
    pub fn loglik_gradient(&self, batch: &DataMatrix) -> Result<FlowParams> {
        if batch.n_rows() == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        if batch.n_cols() != self.dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns for model dim {}",
                batch.n_cols(),
                self.dim()
            )));
        }
        let data_std = match &self.input_scaler {
            Some(scaler) => scaler.standardize_matrix(batch),
            None => batch.clone(),
        };
        let idx: Vec<usize> = (0..batch.n_rows()).collect();
        let mut gws = self.make_grad_workspace();
        let mut grad = vec![0.0; self.param_count()];
        self.batch_loglik_grad_std(&data_std, &idx, false, &mut gws, &mut grad)?;
        Ok(FlowParams {
            values: grad,
            layout: self.param_layout(),
        })
    }

    pub(crate) fn make_grad_workspace(&self) -> GradWorkspace {
        let d = self.dim();
        let g_count = self.structure.n_groups();
        let k = self.layers.len();
        let max_group = (0..g_count)
            .map(|g| self.structure.group(g).len())
            .max()
            .unwrap_or(0);
        let max_pre = (0..g_count)
            .map(|g| self.structure.prefix_dim(g))
            .max()
            .unwrap_or(0);
        let layout = self.param_layout();
        let mut seg = vec![vec![(0usize, 0usize); g_count]; k];
        for pair in layout.segments.chunks(2) {
            seg[pair[0].layer][pair[0].group] = (pair[0].offset, pair[1].offset);
        }
        GradWorkspace {
            ws: self.make_workspace(),
            w: vec![vec![0.0; d]; k + 1],
            s_vals: vec![vec![Vec::new(); g_count]; k],
            gates: vec![vec![Vec::new(); g_count]; k],
            g: vec![0.0; d],
            g_next: vec![0.0; d],
            ds: vec![0.0; max_group],
            dt: vec![0.0; max_group],
            ig: vec![0.0; max_pre],
            seg,
        }
    }

    /// Accumulates the gradient of mean log-likelihood over the selected
    /// standardized rows into `grad_out` (overwritten) and returns the mean
    /// standardized-space log-likelihood. `clamp` enables the training-time
    /// scale clamp.
    pub(crate) fn batch_loglik_grad_std(
        &self,
        data_std: &DataMatrix,
        idx: &[usize],
        clamp: bool,
        gws: &mut GradWorkspace,
        grad_out: &mut [f64],
    ) -> Result<f64> {
        if idx.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        grad_out.fill(0.0);
        let mut ll_sum = 0.0;
        for &row in idx {
            ll_sum += self.sample_grad_std(data_std.row(row), clamp, gws, grad_out)?;
        }
        let inv_n = 1.0 / idx.len() as f64;
        for g in grad_out.iter_mut() {
            *g *= inv_n;
        }
        Ok(ll_sum * inv_n)
    }

    /// One-sample reverse-mode pass; accumulates parameter gradients.
    fn sample_grad_std(
        &self,
        x_std: &[f64],
        clamp: bool,
        gws: &mut GradWorkspace,
        grad_acc: &mut [f64],
    ) -> Result<f64> {
        self.check_dim(x_std.len())?;
        let k = self.layers.len();
        let d = self.dim();
        // Inverse sweep, recording per-layer x-side values and scales.
        gws.w[k].copy_from_slice(x_std);
        let mut ld = 0.0;
        for q in (0..k).rev() {
            let (lo, hi) = gws.w.split_at_mut(q + 1);
            ld += self.layer_inverse(
                q,
                &hi[0],
                &mut lo[q],
                clamp,
                &mut gws.ws,
                Some((&mut gws.s_vals[q], &mut gws.gates[q])),
            )?;
        }
        let ll = self.base.log_density(&gws.w[0]) + ld;

        // Reverse accumulation from the base density up through the layers.
        for v in 0..d {
            gws.g[v] = self.base.score(gws.w[0][v]);
        }
        for q in 0..k {
            gws.g_next.fill(0.0);
            let y = &gws.w[q + 1];
            let u = &gws.w[q];
            for g_idx in 0..self.structure.n_groups() {
                let vars = self.structure.group(g_idx);
                let pre_vars = self.structure.prefix_vars(g_idx);
                let (s_off, t_off) = gws.seg[q][g_idx];
                for (kk, &v) in vars.iter().enumerate() {
                    let e = (-gws.s_vals[q][g_idx][kk]).exp();
                    let gu = gws.g[v];
                    gws.g_next[v] += gu * e;
                    gws.dt[kk] = -gu * e;
                    gws.ds[kk] = -(gu * u[v] + 1.0) * gws.gates[q][g_idx][kk];
                }
                match &self.layers[q].conditioners[g_idx] {
                    GroupConditioner::Constants { s, .. } => {
                        let width = s.len();
                        if !self.additive {
                            for kk in 0..width {
                                grad_acc[s_off + kk] += gws.ds[kk];
                            }
                        }
                        for kk in 0..width {
                            grad_acc[t_off + kk] += gws.dt[kk];
                        }
                    }
                    GroupConditioner::Nets { s_net, t_net } => {
                        let pre_dim = pre_vars.len();
                        for (i, &pv) in pre_vars.iter().enumerate() {
                            gws.ws.pre[i] = y[pv];
                        }
                        let sc = gws.ws.scratch[g_idx].as_mut().expect("net group scratch");
                        if !self.additive {
                            gws.ig[..pre_dim].fill(0.0);
                            s_net.backward_scratch(
                                &gws.ws.pre[..pre_dim],
                                &gws.ds[..vars.len()],
                                sc,
                                &mut grad_acc[s_off..s_off + s_net.param_count()],
                                &mut gws.ig[..pre_dim],
                            )?;
                            for (i, &pv) in pre_vars.iter().enumerate() {
                                gws.g_next[pv] += gws.ig[i];
                            }
                        }
                        gws.ig[..pre_dim].fill(0.0);
                        t_net.backward_scratch(
                            &gws.ws.pre[..pre_dim],
                            &gws.dt[..vars.len()],
                            sc,
                            &mut grad_acc[t_off..t_off + t_net.param_count()],
                            &mut gws.ig[..pre_dim],
                        )?;
                        for (i, &pv) in pre_vars.iter().enumerate() {
                            gws.g_next[pv] += gws.ig[i];
                        }
                    }
                }
            }
            std::mem::swap(&mut gws.g, &mut gws.g_next);
        }
        Ok(ll)
    }

    /// Draws `n` samples in original data units.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DataMatrix> {
        if n == 0 {
            return Err(Error::Query("sample count must be positive".into()));
        }
        let mut rng = seeded(seed);
        let mut ws = self.make_workspace();
        let d = self.dim();
        let mut z = vec![0.0; d];
        let mut x = vec![0.0; d];
        let mut out = DataMatrix::zeros(n, d);
        for i in 0..n {
            self.base.sample_into(&mut rng, &mut z);
            self.forward_std_ws(&z, &mut x, &mut ws)?;
            match &self.input_scaler {
                Some(scaler) => scaler.destandardize_into(&x, out.row_mut(i)),
                None => out.row_mut(i).copy_from_slice(&x),
            }
        }
        Ok(out)
    }

    // ----- serialization -----

    /// Self-describing JSON: structure, layer parameters, activation tags,
    /// base kind, scaler. `f64` values survive the round trip exactly.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("flow model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)
            .map_err(|e| Error::State(format!("model deserialization failed: {e}")))?;
        model.validate()?;
        Ok(model)
    }
}

/// Invertible triangular transform interface used by the causal query layer.
/// Implemented by [`FlowModel`] and by hand-set structural models in tests.
pub trait AutoregressiveTransform {
    fn dim(&self) -> usize;
    fn base(&self) -> BaseDistribution;
    fn scaler(&self) -> Option<&Scaler>;
    /// Latent-to-data map in standardized coordinates.
    fn transform(&self, z: &[f64]) -> Result<Vec<f64>>;
    /// Data-to-latent map in standardized coordinates.
    fn invert(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl AutoregressiveTransform for FlowModel {
    fn dim(&self) -> usize {
        FlowModel::dim(self)
    }

    fn base(&self) -> BaseDistribution {
        FlowModel::base(self)
    }

    fn scaler(&self) -> Option<&Scaler> {
        FlowModel::scaler(self)
    }

    fn transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.flow_forward(z)
    }

    fn invert(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.flow_inverse(x)?.0)
    }
}

/// Reusable per-evaluation buffers.
pub(crate) struct Workspace {
    scratch: Vec<Option<NetScratch>>,
    pre: Vec<f64>,
    s_buf: Vec<f64>,
    t_buf: Vec<f64>,
    gate_buf: Vec<f64>,
    buf_a: Vec<f64>,
    #[allow(dead_code)]
    buf_b: Vec<f64>,
}

/// Buffers for reverse-mode gradient sweeps.
pub(crate) struct GradWorkspace {
    ws: Workspace,
    /// w[q] = values below layer q (w[0] = z, w[K] = x).
    w: Vec<Vec<f64>>,
    s_vals: Vec<Vec<Vec<f64>>>,
    gates: Vec<Vec<Vec<f64>>>,
    g: Vec<f64>,
    g_next: Vec<f64>,
    ds: Vec<f64>,
    dt: Vec<f64>,
    ig: Vec<f64>,
    /// (s_offset, t_offset) per [layer][group] into the flat layout.
    seg: Vec<Vec<(usize, usize)>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bivariate one-layer model with constant root (s1, t1) and linear
    /// conditioners s2(x1) = ws*x1 + bs, t2(x1) = wt*x1 + bt.
    fn linear_bivariate(s1: f64, t1: f64, ws: f64, bs: f64, wt: f64, bt: f64) -> FlowModel {
        let structure = FlowStructure::from_ordering(&CausalOrdering::identity(2));
        let layer = AffineLayer {
            conditioners: vec![
                GroupConditioner::Constants {
                    s: vec![s1],
                    t: vec![t1],
                },
                GroupConditioner::Nets {
                    s_net: ConditionerNet::linear(1, 1, vec![ws], vec![bs]).unwrap(),
                    t_net: ConditionerNet::linear(1, 1, vec![wt], vec![bt]).unwrap(),
                },
            ],
        };
        FlowModel::from_parts(structure, vec![layer], BaseDistribution::Laplace, None, false)
            .unwrap()
    }

    fn identity_model(d: usize, base: BaseDistribution) -> FlowModel {
        let structure = FlowStructure::from_ordering(&CausalOrdering::identity(d));
        let mut conditioners = vec![GroupConditioner::Constants {
            s: vec![0.0],
            t: vec![0.0],
        }];
        for g in 1..d {
            conditioners.push(GroupConditioner::Nets {
                s_net: ConditionerNet::linear(g, 1, vec![0.0; g], vec![0.0]).unwrap(),
                t_net: ConditionerNet::linear(g, 1, vec![0.0; g], vec![0.0]).unwrap(),
            });
        }
        FlowModel::from_parts(structure, vec![AffineLayer { conditioners }], base, None, false)
            .unwrap()
    }

    fn random_model(d: usize, n_layers: usize, base: BaseDistribution, seed: u64) -> FlowModel {
        FlowModel::init(
            FlowStructure::from_ordering(&CausalOrdering::identity(d)),
            n_layers,
            &[6],
            Activation::Tanh,
            base,
            false,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn forward_shift_by_cause() {
        // s = 0 everywhere, t2(x1) = x1: z=(1,1) maps to x=(1,2).
        let model = linear_bivariate(0.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let x = model.flow_forward(&[1.0, 1.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn inverse_logdet_is_minus_sum_s() {
        let model = linear_bivariate(std::f64::consts::LN_2, 0.0, 0.0, 0.0, 0.0, 0.0);
        for x in [[0.5, -1.0], [2.0, 3.0], [-4.0, 0.1]] {
            let (_, ld) = model.flow_inverse(&x).unwrap();
            assert!((ld + std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn log_likelihood_at_origin_identity_model() {
        let laplace = identity_model(2, BaseDistribution::Laplace);
        let ll = laplace.log_likelihood(&[0.0, 0.0]).unwrap();
        assert!((ll + 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        let gauss = identity_model(2, BaseDistribution::Gaussian);
        let ll = gauss.log_likelihood(&[0.0, 0.0]).unwrap();
        assert!((ll + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn constant_s_changes_loglik_by_logdet() {
        // x = (0,0): z = 0 either way, but logdet shifts by -ln2.
        let model = linear_bivariate(std::f64::consts::LN_2, 0.0, 0.0, 0.0, 0.0, 0.0);
        let ll = model.log_likelihood(&[0.0, 0.0]).unwrap();
        assert!((ll + 3.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn round_trip_forward_inverse() {
        let mut rng = crate::rng::seeded(31);
        for (d, k, seed) in [(2, 1, 1u64), (3, 2, 2), (5, 3, 3), (1, 2, 4)] {
            let model = random_model(d, k, BaseDistribution::Laplace, seed);
            for _ in 0..20 {
                let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let x = model.flow_forward(&z).unwrap();
                let (z_back, _) = model.flow_inverse(&x).unwrap();
                for j in 0..d {
                    assert!(
                        (z_back[j] - z[j]).abs() <= 1e-9,
                        "d={d} k={k} coord {j}: {} vs {}",
                        z_back[j],
                        z[j]
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_zero_at_stationary_point() {
        let model = identity_model(2, BaseDistribution::Gaussian);
        let batch = DataMatrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        let grad = model.loglik_gradient(&batch).unwrap();
        // Shift gradients vanish at the mode; scale gradients equal z^2-1 = -1.
        for (i, v) in grad.values.iter().enumerate() {
            let (_, _, role, _) = grad.layout.coordinate_of(i).unwrap();
            match role {
                ParamRole::ShiftConst => assert_eq!(*v, 0.0),
                ParamRole::ScaleConst => assert!((*v + 1.0).abs() < 1e-15),
                // Linear nets with zero weights: bias gradients mirror the
                // constant case, weight gradients scale by x1 = 0.
                ParamRole::ScaleNet | ParamRole::ShiftNet => assert!(v.abs() <= 1.0),
            }
        }
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let model = random_model(3, 2, BaseDistribution::Laplace, 11);
        let x = vec![0.4, -1.2, 0.9];
        let single = DataMatrix::new(1, 3, x.clone()).unwrap();
        let double = DataMatrix::new(2, 3, [x.clone(), x].concat()).unwrap();
        let g1 = model.loglik_gradient(&single).unwrap();
        let g2 = model.loglik_gradient(&double).unwrap();
        for (a, b) in g1.values.iter().zip(&g2.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn params_round_trip_and_layout_cover() {
        let model = random_model(3, 2, BaseDistribution::Laplace, 7);
        let params = model.params();
        assert_eq!(params.len(), model.param_count());
        for i in 0..params.len() {
            assert!(params.layout.coordinate_of(i).is_some());
        }
        let mut other = random_model(3, 2, BaseDistribution::Laplace, 8);
        other.set_params(&params).unwrap();
        assert_eq!(other.params().values, params.values);
    }

    #[test]
    fn set_params_rejects_wrong_length() {
        let mut model = random_model(2, 1, BaseDistribution::Laplace, 7);
        assert!(model.set_params_flat(&[0.0]).is_err());
    }

    #[test]
    fn additive_mode_ignores_scale_parameters() {
        let mut model = random_model(2, 2, BaseDistribution::Laplace, 21);
        model.additive = true;
        let z = [0.7, -0.3];
        let x = model.flow_forward(&z).unwrap();
        // Perturbing every scale parameter leaves the transform unchanged.
        let mut params = model.params();
        for (i, v) in params.values.iter_mut().enumerate() {
            if matches!(
                params.layout.coordinate_of(i).unwrap().2,
                ParamRole::ScaleConst | ParamRole::ScaleNet
            ) {
                *v += 3.0;
            }
        }
        let mut perturbed = model.clone();
        perturbed.set_params(&params).unwrap();
        assert_eq!(perturbed.flow_forward(&z).unwrap(), x);
        // And scale gradients are exactly zero.
        let batch = DataMatrix::new(1, 2, vec![0.5, 0.25]).unwrap();
        let grad = model.loglik_gradient(&batch).unwrap();
        for (i, v) in grad.values.iter().enumerate() {
            if matches!(
                grad.layout.coordinate_of(i).unwrap().2,
                ParamRole::ScaleConst | ParamRole::ScaleNet
            ) {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn sample_means_track_shift() {
        let model = identity_model(2, BaseDistribution::Gaussian);
        let data = model.sample(100_000, 99).unwrap();
        for j in 0..2 {
            let mean: f64 = data.column(j).iter().sum::<f64>() / data.n_rows() as f64;
            assert!(mean.abs() < 0.02, "col {j}: {mean}");
        }
        let shifted = linear_bivariate(0.0, 5.0, 0.0, 0.0, 0.0, 0.0);
        let data = shifted.sample(100_000, 100).unwrap();
        let mean: f64 = data.column(0).iter().sum::<f64>() / data.n_rows() as f64;
        assert!((mean - 5.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn sample_is_deterministic_per_seed() {
        let model = random_model(2, 2, BaseDistribution::Laplace, 3);
        assert_eq!(
            model.sample(16, 5).unwrap().values(),
            model.sample(16, 5).unwrap().values()
        );
        assert_ne!(
            model.sample(16, 5).unwrap().values(),
            model.sample(16, 6).unwrap().values()
        );
    }

    #[test]
    fn json_round_trip_is_value_exact() {
        let mut model = random_model(3, 2, BaseDistribution::Laplace, 17);
        model
            .set_scaler(Some(Scaler {
                mean: vec![0.1, -2.0, 1.0 / 3.0],
                scale: vec![1.5, 0.2, 7.0],
            }))
            .unwrap();
        let text = model.to_json();
        let back = FlowModel::from_json(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.params().values, model.params().values);
    }

    #[test]
    fn from_json_rejects_inconsistent_models() {
        let model = random_model(2, 1, BaseDistribution::Laplace, 1);
        let mut value: serde_json::Value = serde_json::from_str(&model.to_json()).unwrap();
        // Damage a net shape: swap the conditioner in as the root group.
        let layers = value["layers"].as_array_mut().unwrap();
        let conds = layers[0]["conditioners"].as_array_mut().unwrap();
        conds.swap(0, 1);
        assert!(FlowModel::from_json(&value.to_string()).is_err());
    }

    #[test]
    fn scaler_dimension_checked() {
        let mut model = random_model(2, 1, BaseDistribution::Laplace, 1);
        assert!(model
            .set_scaler(Some(Scaler {
                mean: vec![0.0],
                scale: vec![1.0],
            }))
            .is_err());
    }

    #[test]
    fn wrong_input_dims_are_rejected() {
        let model = random_model(3, 1, BaseDistribution::Laplace, 1);
        assert!(model.flow_forward(&[0.0, 0.0]).is_err());
        assert!(model.flow_inverse(&[0.0]).is_err());
        assert!(model.log_likelihood(&[0.0; 4]).is_err());
    }

    #[test]
    fn non_finite_input_is_a_data_error() {
        let model = random_model(2, 1, BaseDistribution::Laplace, 1);
        assert!(matches!(
            model.flow_forward(&[f64::NAN, 0.0]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn overflow_names_layer_and_variable() {
        // Constant s = 800 on the root: inverse multiplies by e^{-800} = 0,
        // forward multiplies by e^{800} = overflow at layer 0, variable 0.
        let model = linear_bivariate(800.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        match model.flow_forward(&[1.0, 0.0]) {
            Err(Error::NonFinite { layer, variable }) => {
                assert_eq!((layer, variable), (0, 0));
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }
}
