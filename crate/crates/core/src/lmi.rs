//! Affine symmetric LMI maps and the three stability conditions built on them.
//!
//! Each builder writes the block matrix once as a numeric function of the
//! decision variables. The affine map is then extracted by evaluating that
//! function at zero and at every basis assignment, so the coefficient
//! matrices are exact images of the block formulas.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{relative_degree, stacked_output_map, LtiPlant, PidPlant};
use crate::synthesis::{build_m, validate_sigma, SampledController, SampledPidController};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarShape {
    /// Symmetric `d × d` matrix, stored as its upper triangle row by row.
    Symmetric(usize),
    Scalar,
}

impl VarShape {
    pub fn dim(self) -> usize {
        match self {
            VarShape::Symmetric(d) => d,
            VarShape::Scalar => 1,
        }
    }

    pub fn scalar_count(self) -> usize {
        let d = self.dim();
        d * (d + 1) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positivity {
    PositiveDefinite,
    Nonnegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVar {
    pub name: String,
    pub shape: VarShape,
    pub positivity: Positivity,
    pub offset: usize,
}

/// Ordered set of named decision variables over one flat scalar vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DecisionLayout {
    vars: Vec<DecisionVar>,
    total: usize,
}

impl DecisionLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, shape: VarShape, positivity: Positivity) -> Result<()> {
        if self.vars.iter().any(|v| v.name == name) {
            return Err(Error::LayoutMismatch(format!("duplicate variable {name}")));
        }
        self.vars.push(DecisionVar { name: name.to_string(), shape, positivity, offset: self.total });
        self.total += shape.scalar_count();
        Ok(())
    }

    pub fn vars(&self) -> &[DecisionVar] {
        &self.vars
    }

    pub fn scalar_count(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&DecisionVar> {
        self.vars.iter().find(|v| v.name == name)
    }

    /// Matrix value of one variable from the flat vector.
    pub fn value(&self, var: &DecisionVar, x: &[f64]) -> Mat {
        let d = var.shape.dim();
        let mut m = Mat::zeros(d, d);
        let mut k = var.offset;
        for i in 0..d {
            for j in i..d {
                m[(i, j)] = x[k];
                m[(j, i)] = x[k];
                k += 1;
            }
        }
        m
    }

    /// All variable values, in layout order.
    pub fn unpack(&self, x: &[f64]) -> Result<Vec<Mat>> {
        if x.len() != self.total {
            return Err(Error::LayoutMismatch(format!("expected {} scalars, got {}", self.total, x.len())));
        }
        Ok(self.vars.iter().map(|v| self.value(v, x)).collect())
    }

    /// Flat vector from per-variable matrices (upper triangles are read).
    pub fn pack(&self, values: &[Mat]) -> Result<Vec<f64>> {
        if values.len() != self.vars.len() {
            return Err(Error::LayoutMismatch(format!("expected {} variables, got {}", self.vars.len(), values.len())));
        }
        let mut x = vec![0.0; self.total];
        for (var, m) in self.vars.iter().zip(values) {
            let d = var.shape.dim();
            if m.shape() != (d, d) {
                return Err(Error::LayoutMismatch(format!("variable {} expects {d}x{d}", var.name)));
            }
            let mut k = var.offset;
            for i in 0..d {
                for j in i..d {
                    x[k] = m[(i, j)];
                    k += 1;
                }
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiBlock {
    pub name: String,
    pub size: usize,
}

/// `F(x) = F_0 + Σ_k x_k F_k` over a [`DecisionLayout`], with named diagonal blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineLmi {
    pub label: String,
    blocks: Vec<LmiBlock>,
    layout: DecisionLayout,
    #[serde(with = "linalg::rows_serde")]
    constant: Mat,
    #[serde(with = "linalg::rows_vec_serde")]
    coefficients: Vec<Mat>,
}

impl AffineLmi {
    /// Extract the affine map of `assemble` by probing it at zero and at each basis vector.
    pub fn from_assembler<F>(label: &str, blocks: Vec<LmiBlock>, layout: DecisionLayout, assemble: F) -> Result<Self>
    where
        F: Fn(&[Mat]) -> Mat,
    {
        let dim: usize = blocks.iter().map(|b| b.size).sum();
        let count = layout.scalar_count();
        let mut x = vec![0.0; count];
        let eval = |x: &[f64]| -> Result<Mat> {
            let m = assemble(&layout.unpack(x)?);
            if m.shape() != (dim, dim) {
                return Err(Error::Dimension(format!("{label}: assembled {:?}, blocks declare {dim}", m.shape())));
            }
            Ok(m)
        };
        let constant = linalg::symmetrize(&eval(&x)?);
        let mut coefficients = Vec::with_capacity(count);
        for k in 0..count {
            x[k] = 1.0;
            coefficients.push(linalg::symmetrize(&(eval(&x)? - &constant)));
            x[k] = 0.0;
        }
        let lmi = Self { label: label.to_string(), blocks, layout, constant, coefficients };
        lmi.check()?;
        Ok(lmi)
    }

    pub fn new(label: &str, blocks: Vec<LmiBlock>, layout: DecisionLayout, constant: Mat, coefficients: Vec<Mat>) -> Result<Self> {
        let lmi = Self { label: label.to_string(), blocks, layout, constant, coefficients };
        lmi.check()?;
        Ok(lmi)
    }

    fn check(&self) -> Result<()> {
        let dim: usize = self.blocks.iter().map(|b| b.size).sum();
        if self.constant.shape() != (dim, dim) {
            return Err(Error::Dimension(format!("constant term is {:?}, blocks sum to {dim}", self.constant.shape())));
        }
        if self.coefficients.len() != self.layout.scalar_count() {
            return Err(Error::LayoutMismatch(format!(
                "{} coefficient matrices for {} scalar unknowns",
                self.coefficients.len(),
                self.layout.scalar_count()
            )));
        }
        for c in std::iter::once(&self.constant).chain(&self.coefficients) {
            if c.shape() != (dim, dim) {
                return Err(Error::Dimension("coefficient shape differs from the declared dimension".into()));
            }
            if (c - c.transpose()).amax() > 0.0 {
                return Err(Error::Dimension("coefficient matrix is not symmetric".into()));
            }
            linalg::ensure_finite(c, &self.label)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }
    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }
    pub fn layout(&self) -> &DecisionLayout {
        &self.layout
    }
    pub fn constant(&self) -> &Mat {
        &self.constant
    }
    pub fn coefficients(&self) -> &[Mat] {
        &self.coefficients
    }

    /// Offset of a named block along the diagonal.
    pub fn block_offset(&self, name: &str) -> Option<(usize, usize)> {
        let mut off = 0;
        for b in &self.blocks {
            if b.name == name {
                return Some((off, b.size));
            }
            off += b.size;
        }
        None
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Mat> {
        if x.len() != self.coefficients.len() {
            return Err(Error::LayoutMismatch(format!("expected {} scalars, got {}", self.coefficients.len(), x.len())));
        }
        let mut out = self.constant.clone();
        for (xk, fk) in x.iter().zip(&self.coefficients) {
            if *xk != 0.0 {
                out += fk * *xk;
            }
        }
        Ok(out)
    }

    /// Smallest and largest nonzero coefficient magnitudes across all terms.
    pub fn dynamic_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for c in std::iter::once(&self.constant).chain(&self.coefficients) {
            for &v in c.iter() {
                let a = v.abs();
                if a > 0.0 {
                    lo = lo.min(a);
                    hi = hi.max(a);
                }
            }
        }
        (lo, hi)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let lmi: AffineLmi = serde_json::from_str(s)?;
        lmi.check()?;
        Ok(lmi)
    }
}

/// Solver bookkeeping carried along with a certificate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CertificateDiagnostics {
    pub iterations: usize,
    /// Best normalised margin `t` reached by the solver.
    pub solver_margin: f64,
    /// Scale factor applied to the solver iterate before reporting.
    pub rescale: f64,
    pub pruned_rows: usize,
}

/// Numeric witness for an LMI: one value per decision variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub lmi: String,
    #[serde(with = "certificate_values")]
    pub values: BTreeMap<String, Mat>,
    /// λ_max of the evaluated LMI at these values.
    pub margin: f64,
    #[serde(default)]
    pub diagnostics: CertificateDiagnostics,
}

mod certificate_values {
    use std::collections::BTreeMap;

    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::Value;

    use crate::linalg::{self, Mat};

    pub fn serialize<S: Serializer>(v: &BTreeMap<String, Mat>, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<&String, Value> = v
            .iter()
            .map(|(k, m)| {
                let value = if m.shape() == (1, 1) { Value::from(m[(0, 0)]) } else { serde_json::json!(linalg::to_rows(m)) };
                (k, value)
            })
            .collect();
        map.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Mat>, D::Error> {
        let raw = BTreeMap::<String, Value>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                let m = match v {
                    Value::Number(n) => Mat::from_element(1, 1, n.as_f64().ok_or_else(|| D::Error::custom("bad number"))?),
                    other => {
                        let rows: Vec<Vec<f64>> = serde_json::from_value(other).map_err(D::Error::custom)?;
                        linalg::from_rows(&rows, &k).map_err(D::Error::custom)?
                    }
                };
                Ok((k, m))
            })
            .collect()
    }
}

impl Certificate {
    pub fn from_vector(lmi: &AffineLmi, x: &[f64]) -> Result<Self> {
        let values = lmi
            .layout()
            .vars()
            .iter()
            .zip(lmi.layout().unpack(x)?)
            .map(|(v, m)| (v.name.clone(), m))
            .collect();
        let margin = linalg::lambda_max(&lmi.evaluate(x)?);
        Ok(Self { lmi: lmi.label.clone(), values, margin, diagnostics: CertificateDiagnostics::default() })
    }

    /// Flat vector in the layout's order; every declared variable must be present.
    pub fn to_vector(&self, layout: &DecisionLayout) -> Result<Vec<f64>> {
        if self.values.len() != layout.vars().len() {
            return Err(Error::LayoutMismatch(format!(
                "certificate has {} variables, layout declares {}",
                self.values.len(),
                layout.vars().len()
            )));
        }
        let mats = layout
            .vars()
            .iter()
            .map(|v| {
                self.values
                    .get(&v.name)
                    .cloned()
                    .ok_or_else(|| Error::LayoutMismatch(format!("certificate lacks variable {}", v.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        layout.pack(&mats)
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.values.get(name)
    }

    /// Scalar value of a 1×1 variable.
    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.values.get(name).filter(|m| m.shape() == (1, 1)).map(|m| m[(0, 0)])
    }

    /// Every variable multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for m in out.values.values_mut() {
            *m *= c;
        }
        out.margin *= c;
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Symmetric block matrix assembled from upper-triangular blocks.
struct BlockAssembly {
    offsets: Vec<usize>,
    sizes: Vec<usize>,
    m: Mat,
}

impl BlockAssembly {
    fn new(blocks: &[LmiBlock]) -> Self {
        let sizes: Vec<usize> = blocks.iter().map(|b| b.size).collect();
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Self { offsets, sizes, m: Mat::zeros(acc, acc) }
    }

    /// Sets block `(i, j)` and mirrors its transpose into `(j, i)`.
    fn set(&mut self, i: usize, j: usize, block: &Mat) {
        assert_eq!(block.shape(), (self.sizes[i], self.sizes[j]), "block ({i},{j}) has wrong shape");
        self.m.view_mut((self.offsets[i], self.offsets[j]), block.shape()).copy_from(block);
        if i != j {
            self.m.view_mut((self.offsets[j], self.offsets[i]), (block.ncols(), block.nrows())).copy_from(&block.transpose());
        }
    }

    fn finish(self) -> Mat {
        self.m
    }
}

fn block(name: impl Into<String>, size: usize) -> LmiBlock {
    LmiBlock { name: name.into(), size }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("decay rate must be positive, got {alpha}")))
    }
}

/// Matrices shared by the sampled-data conditions of an LTI plant.
struct SampledData {
    n: usize,
    m: usize,
    l: usize,
    r: usize,
    h: f64,
    /// `q_i h` for `i = 1..r-1`.
    delays: Vec<f64>,
    gains: Vec<Mat>,
    d: Mat,
    b: Mat,
    ca: Mat,
    top_b: Mat,
    top_d: Mat,
    /// `[K_0, K]·M·C̄`.
    feedback: Mat,
}

impl SampledData {
    fn new(plant: &LtiPlant, ctrl: &SampledController) -> Result<Self> {
        let r = ctrl.order();
        if r < 2 {
            return Err(Error::InvalidArgument("sampled-data conditions need relative degree r >= 2".into()));
        }
        let (n, m, l) = (plant.states(), plant.inputs(), plant.outputs());
        if ctrl.inputs() != m || ctrl.outputs() != l {
            return Err(Error::Dimension(format!(
                "controller gains are {}x{}, plant needs {m}x{l}",
                ctrl.inputs(),
                ctrl.outputs()
            )));
        }
        let rd = relative_degree(plant, r)?;
        if rd != r {
            return Err(Error::Dimension(format!("controller has {r} gains but the plant has relative degree {rd}")));
        }
        let h = ctrl.h();
        let mm = build_m(h, ctrl.delays(), r, l)?;
        let cbar = stacked_output_map(plant, r)?;
        let feedback = ctrl.concatenated() * mm * cbar;
        let d = plant.a() + plant.b() * &feedback;
        let top = plant.c_a_pow(r - 1);
        Ok(Self {
            n,
            m,
            l,
            r,
            h,
            delays: ctrl.delays().iter().map(|&q| q as f64 * h).collect(),
            gains: ctrl.gains().to_vec(),
            b: plant.b().clone(),
            ca: plant.c_a_pow(1),
            top_b: &top * plant.b(),
            top_d: &top * &d,
            d,
            feedback,
        })
    }

    fn layout(&self, with_omega: bool) -> Result<DecisionLayout> {
        let mut layout = DecisionLayout::new();
        layout.push("P", VarShape::Symmetric(self.n), Positivity::PositiveDefinite)?;
        for i in 0..self.r {
            layout.push(&format!("W{i}"), VarShape::Symmetric(self.m), Positivity::PositiveDefinite)?;
        }
        for i in 1..self.r {
            layout.push(&format!("R{i}"), VarShape::Symmetric(self.m), Positivity::PositiveDefinite)?;
        }
        if with_omega {
            layout.push("Omega", VarShape::Symmetric(self.m), Positivity::PositiveDefinite)?;
        }
        Ok(layout)
    }

    fn blocks(&self, with_trigger: bool) -> Vec<LmiBlock> {
        let mut blocks = vec![block("x", self.n)];
        blocks.extend((0..self.r).map(|i| block(format!("K{i}δ{i}"), self.m)));
        blocks.extend((1..self.r).map(|i| block(format!("K{i}κ{i}"), self.m)));
        blocks.push(block("H", self.l));
        if with_trigger {
            blocks.push(block("e", self.m));
            blocks.push(block("σΩ", self.m));
        }
        blocks
    }

    /// `H = Σ (q_i h)^r K_iᵀ R_i K_i`.
    fn h_matrix(&self, rs: &[Mat]) -> Mat {
        let mut hm = Mat::zeros(self.l, self.l);
        for (i, ri) in rs.iter().enumerate() {
            let k = &self.gains[i + 1];
            hm += k.transpose() * ri * k * self.delays[i].powi(self.r as i32);
        }
        hm
    }

    /// Writes every block of the sampled-data condition into `asm`.
    fn assemble_base(&self, asm: &mut BlockAssembly, alpha: f64, p: &Mat, ws: &[Mat], rs: &[Mat]) -> Mat {
        let r = self.r;
        let h = self.h;
        let hm = self.h_matrix(rs);
        let mut p11 = p * &self.d + self.d.transpose() * p + p * (2.0 * alpha);
        let weight = h * h * (2.0 * alpha * h).exp();
        for (k, w) in self.gains.iter().zip(ws) {
            let kca = k * &self.ca;
            p11 += kca.transpose() * w * kca * weight;
        }
        asm.set(0, 0, &p11);
        let pb = p * &self.b;
        let top_b_h = self.top_b.transpose() * &hm;
        let h_idx = 2 * r;
        for j in 1..2 * r {
            asm.set(0, j, &pb);
            asm.set(j, h_idx, &top_b_h);
        }
        asm.set(0, h_idx, &(self.top_d.transpose() * &hm));
        let wirtinger = -PI * PI / 4.0;
        asm.set(1, 1, &(&ws[0] * wirtinger));
        for i in 1..r {
            let qh = self.delays[i - 1];
            let decay = (-2.0 * alpha * qh).exp();
            asm.set(1 + i, 1 + i, &(&ws[i] * (wirtinger * decay)));
            let jensen = -factorial(r).powi(2) * decay / qh.powi(r as i32);
            asm.set(r + i, r + i, &(&rs[i - 1] * jensen));
        }
        asm.set(h_idx, h_idx, &(-&hm));
        hm
    }
}

fn split_lti_vars(vals: &[Mat], r: usize) -> (&Mat, &[Mat], &[Mat], &[Mat]) {
    let p = &vals[0];
    let ws = &vals[1..1 + r];
    let rs = &vals[1 + r..2 * r];
    let rest = &vals[2 * r..];
    (p, ws, rs, rest)
}

/// Periodic sampled-data condition for an LTI plant of relative degree `r ≥ 2`.
///
/// Blocks: `x`, `K_iδ_i` (`i = 0..r-1`), `K_iκ_i` (`i = 1..r-1`) and the
/// Schur block of `H`. Unknowns: `P`, `W_0..W_{r-1}`, `R_1..R_{r-1}`.
pub fn build_phi(plant: &LtiPlant, ctrl: &SampledController, alpha: f64) -> Result<AffineLmi> {
    validate_alpha(alpha)?;
    let sd = SampledData::new(plant, ctrl)?;
    let blocks = sd.blocks(false);
    let layout = sd.layout(false)?;
    let r = sd.r;
    AffineLmi::from_assembler("phi", blocks.clone(), layout, |vals| {
        let (p, ws, rs, _) = split_lti_vars(vals, r);
        let mut asm = BlockAssembly::new(&blocks);
        sd.assemble_base(&mut asm, alpha, p, ws, rs);
        asm.finish()
    })
}

/// Event-triggered condition: [`build_phi`] bordered by the trigger error `e_k`
/// and the `σΩ` Schur block. Adds the unknown `Ω`.
pub fn build_phi_e(plant: &LtiPlant, ctrl: &SampledController, alpha: f64, sigma: f64) -> Result<AffineLmi> {
    validate_alpha(alpha)?;
    validate_sigma(sigma)?;
    let sd = SampledData::new(plant, ctrl)?;
    let blocks = sd.blocks(true);
    let layout = sd.layout(true)?;
    let r = sd.r;
    AffineLmi::from_assembler("phi_e", blocks.clone(), layout, |vals| {
        let (p, ws, rs, rest) = split_lti_vars(vals, r);
        let omega = &rest[0];
        let mut asm = BlockAssembly::new(&blocks);
        let hm = sd.assemble_base(&mut asm, alpha, p, ws, rs);
        let (e_idx, s_idx, h_idx) = (2 * r + 1, 2 * r + 2, 2 * r);
        asm.set(0, e_idx, &(p * &sd.b));
        asm.set(h_idx, e_idx, &(&hm * &sd.top_b));
        asm.set(e_idx, e_idx, &(-omega));
        asm.set(0, s_idx, &(sd.feedback.transpose() * omega * sigma));
        let so = omega * sigma;
        for j in 1..2 * r {
            asm.set(j, s_idx, &so);
        }
        asm.set(s_idx, s_idx, &(-&so));
        asm.finish()
    })
}

/// State-space matrices `(A, A_v, B, C)` of the sampled PID loop in `x = (y, ẏ, x_3)`.
pub fn pid_matrices(plant: &PidPlant, ctrl: &SampledPidController) -> (Mat, Mat, Mat, Mat) {
    let (a1, a2, b) = (plant.a1, plant.a2, plant.b);
    let qh = ctrl.q as f64 * ctrl.h;
    let a = Mat::from_row_slice(
        3,
        3,
        &[0.0, 1.0, 0.0, -a2 + b * (ctrl.kp + ctrl.kd), -a1 - qh * b * ctrl.kd, b * ctrl.ki, 1.0, 0.0, 0.0],
    );
    let av = Mat::from_row_slice(3, 3, &[0.0, 0.0, 0.0, b * ctrl.kp, 0.0, b * ctrl.ki, 1.0, 0.0, 0.0]);
    let bm = Mat::from_row_slice(3, 1, &[0.0, b, 0.0]);
    let c = Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    (a, av, bm, c)
}

/// Event-triggered sampled PID condition.
///
/// Blocks: `x`, `v/√h`, `k_dδ`, `k_dκ`, `e_k`, the `σ` block and the Schur block
/// of `G`. Unknowns: `P`, `S` (3×3, positive definite), `W`, `R`, `ω` (nonnegative).
pub fn build_psi(plant: &PidPlant, ctrl: &SampledPidController, alpha: f64) -> Result<AffineLmi> {
    validate_alpha(alpha)?;
    ctrl.validate()?;
    let (a, av, b, _) = pid_matrices(plant, ctrl);
    let (h, sigma, kd) = (ctrl.h, ctrl.sigma, ctrl.kd);
    let qh = ctrl.q as f64 * ctrl.h;
    let sqrt_h = h.sqrt();
    let mut layout = DecisionLayout::new();
    layout.push("P", VarShape::Symmetric(3), Positivity::PositiveDefinite)?;
    layout.push("S", VarShape::Symmetric(3), Positivity::PositiveDefinite)?;
    layout.push("W", VarShape::Scalar, Positivity::Nonnegative)?;
    layout.push("R", VarShape::Scalar, Positivity::Nonnegative)?;
    layout.push("omega", VarShape::Scalar, Positivity::Nonnegative)?;
    let blocks = vec![
        block("x", 3),
        block("v/√h", 3),
        block("k_dδ", 1),
        block("k_dκ", 1),
        block("e", 1),
        block("σ", 1),
        block("G", 3),
    ];
    let mut selector = Mat::zeros(3, 3);
    selector[(1, 1)] = 1.0;
    let u_x = Mat::from_row_slice(3, 1, &[ctrl.kp + ctrl.kd, -qh * ctrl.kd, ctrl.ki]);
    let u_v = Mat::from_row_slice(3, 1, &[ctrl.kp, 0.0, ctrl.ki]);
    let grow = (2.0 * alpha * h).exp();
    let decay = (-2.0 * alpha * qh).exp();
    let wirtinger = PI * PI / 4.0;
    AffineLmi::from_assembler("psi", blocks.clone(), layout, |vals| {
        let (p, s) = (&vals[0], &vals[1]);
        let (w, r, omega) = (vals[2][(0, 0)], vals[3][(0, 0)], vals[4][(0, 0)]);
        let g = s * (h * h * grow) + &selector * (r * kd * kd * qh * qh);
        let scalar = |v: f64| Mat::from_element(1, 1, v);
        let mut asm = BlockAssembly::new(&blocks);
        asm.set(0, 0, &(p * &a + a.transpose() * p + p * (2.0 * alpha) + &selector * (w * kd * kd * h * h * grow)));
        asm.set(0, 1, &(p * &av * sqrt_h));
        let pb = p * &b;
        for j in 2..5 {
            asm.set(0, j, &pb);
        }
        asm.set(0, 5, &(&u_x * (omega * sigma)));
        asm.set(1, 5, &(&u_v * (omega * sigma * sqrt_h)));
        asm.set(0, 6, &(a.transpose() * &g));
        asm.set(1, 1, &(s * (-wirtinger * h)));
        asm.set(1, 6, &(av.transpose() * &g * sqrt_h));
        asm.set(2, 5, &scalar(omega * sigma));
        asm.set(3, 5, &scalar(omega * sigma));
        let btg = b.transpose() * &g;
        for j in 2..5 {
            asm.set(j, 6, &btg);
        }
        asm.set(2, 2, &scalar(-w * wirtinger * decay));
        asm.set(3, 3, &scalar(-r * 4.0 / (qh * qh) * decay));
        asm.set(4, 4, &scalar(-omega));
        asm.set(5, 5, &scalar(-omega * sigma));
        asm.set(6, 6, &(-&g));
        asm.finish()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DerivativeController, PidController};
    use crate::synthesis::{map_gains, map_pid_gains};
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn triple() -> (LtiPlant, SampledController) {
        let plant = LtiPlant::integrator_chain(3);
        let ideal = DerivativeController::scalar(&[-2e-4, -0.06, -0.342]).unwrap();
        (plant, map_gains(&ideal, 0.044, &[30, 60]).unwrap())
    }

    fn pid() -> (PidPlant, SampledPidController) {
        let plant = PidPlant::new(8.4, 0.0, 35.71).unwrap();
        let ctrl = map_pid_gains(&PidController::new(-10.0, -40.0, -0.65).unwrap(), 4.7e-3, 7).unwrap();
        (plant, ctrl)
    }

    fn random_admissible(lmi: &AffineLmi, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mats: Vec<Mat> = lmi
            .layout()
            .vars()
            .iter()
            .map(|v| {
                let d = v.shape.dim();
                let g = Mat::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                &g * g.transpose() + Mat::identity(d, d) * 0.1
            })
            .collect();
        lmi.layout().pack(&mats).unwrap()
    }

    #[test]
    fn phi_dimensions() {
        let (plant, ctrl) = triple();
        let phi = build_phi(&plant, &ctrl, 1e-3).unwrap();
        assert_eq!(phi.dim(), 9);
        assert_eq!(phi.layout().scalar_count(), 11);
        assert_eq!(phi.blocks().len(), 7);
    }

    #[test]
    fn phi_at_identity_p_zero_multipliers() {
        let (plant, ctrl) = triple();
        let alpha = 1e-12;
        let phi = build_phi(&plant, &ctrl, alpha).unwrap();
        let mut mats: Vec<Mat> = phi.layout().vars().iter().map(|v| Mat::zeros(v.shape.dim(), v.shape.dim())).collect();
        mats[0] = Mat::identity(3, 3);
        let val = phi.evaluate(&phi.layout().pack(&mats).unwrap()).unwrap();
        let d = DerivativeController::scalar(&[-2e-4, -0.06, -0.342]).unwrap().closed_loop(&plant).unwrap();
        let top = val.view((0, 0), (3, 3)).into_owned();
        assert!((top - (&d + d.transpose())).amax() < 1e-9);
        assert_eq!(val[(8, 8)], 0.0);
    }

    #[test]
    fn phi_e_dimensions() {
        let (plant, ctrl) = triple();
        let lmi = build_phi_e(&plant, &ctrl, 1e-3, 2e-3).unwrap();
        assert_eq!(lmi.dim(), 11);
        assert_eq!(lmi.layout().scalar_count(), 12);
    }

    #[test]
    fn phi_e_with_zero_sigma_has_empty_trigger_border() {
        let (plant, ctrl) = triple();
        let lmi = build_phi_e(&plant, &ctrl, 1e-3, 0.0).unwrap();
        let (off, size) = lmi.block_offset("σΩ").unwrap();
        assert_eq!(size, 1);
        for c in std::iter::once(lmi.constant()).chain(lmi.coefficients()) {
            assert!(c.row(off).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn phi_e_contains_phi() {
        let (plant, ctrl) = triple();
        let phi = build_phi(&plant, &ctrl, 1e-3).unwrap();
        let phi_e = build_phi_e(&plant, &ctrl, 1e-3, 2e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_admissible(&phi_e, &mut rng);
        let big = phi_e.evaluate(&x).unwrap();
        let small = phi.evaluate(&x[..phi.layout().scalar_count()]).unwrap();
        assert!((big.view((0, 0), (9, 9)).into_owned() - small).amax() < 1e-12);
    }

    #[test]
    fn psi_dimensions_and_state_matrix() {
        let (plant, ctrl) = pid();
        let lmi = build_psi(&plant, &ctrl, 5.0).unwrap();
        assert_eq!(lmi.dim(), 13);
        assert_eq!(lmi.layout().scalar_count(), 15);
        let (a, _, _, _) = pid_matrices(&plant, &ctrl);
        assert!((a[(1, 0)] - (-plant.a2 + plant.b * -10.0)).abs() < 1e-9);
    }

    #[test]
    fn phi_rejects_wrong_order() {
        let plant = LtiPlant::integrator_chain(3);
        let ideal = DerivativeController::scalar(&[-1.0, -1.0]).unwrap();
        let ctrl = map_gains(&ideal, 0.01, &[1]).unwrap();
        assert!(build_phi(&plant, &ctrl, 0.1).is_err());
        let scalar = DerivativeController::scalar(&[-1.0]).unwrap();
        let ctrl = map_gains(&scalar, 0.01, &[]).unwrap();
        assert!(build_phi(&LtiPlant::integrator_chain(1), &ctrl, 0.1).is_err());
    }

    #[test]
    fn json_dump_round_trips() {
        let (plant, ctrl) = pid();
        let lmi = build_psi(&plant, &ctrl, 5.0).unwrap();
        let back = AffineLmi::from_json(&lmi.to_json().unwrap()).unwrap();
        assert_eq!(back, lmi);
    }

    #[test]
    fn certificate_json_round_trips() {
        let (plant, ctrl) = triple();
        let lmi = build_phi(&plant, &ctrl, 1e-3).unwrap();
        let x: Vec<f64> = (0..lmi.layout().scalar_count()).map(|i| i as f64 * 0.25 - 1.0).collect();
        let cert = Certificate::from_vector(&lmi, &x).unwrap();
        let back = Certificate::from_json(&cert.to_json().unwrap()).unwrap();
        assert_eq!(back.to_vector(lmi.layout()).unwrap(), x);
    }

    #[test]
    fn layout_rejects_duplicates() {
        let mut layout = DecisionLayout::new();
        layout.push("P", VarShape::Symmetric(2), Positivity::PositiveDefinite).unwrap();
        assert!(layout.push("P", VarShape::Scalar, Positivity::Nonnegative).is_err());
    }

    fn all_builders() -> Vec<AffineLmi> {
        let (plant, ctrl) = triple();
        let (pp, pc) = pid();
        vec![
            build_phi(&plant, &ctrl, 1e-3).unwrap(),
            build_phi_e(&plant, &ctrl, 1e-3, 2e-3).unwrap(),
            build_psi(&pp, &pc.with_sigma(9e-3).unwrap(), 5.0).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn evaluations_are_symmetric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for lmi in all_builders() {
                let x = random_admissible(&lmi, &mut rng);
                let v = lmi.evaluate(&x).unwrap();
                prop_assert_eq!(v.nrows(), lmi.blocks().iter().map(|b| b.size).sum::<usize>());
                prop_assert!((&v - v.transpose()).amax() < 1e-12);
            }
        }

        #[test]
        fn evaluations_are_affine(seed in any::<u64>(), c1 in -3.0..3.0f64, c2 in -3.0..3.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for lmi in all_builders() {
                let v1 = random_admissible(&lmi, &mut rng);
                let v2 = random_admissible(&lmi, &mut rng);
                let combo: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| c1 * a + c2 * b).collect();
                let lhs = lmi.evaluate(&combo).unwrap();
                let rhs = lmi.evaluate(&v1).unwrap() * c1 + lmi.evaluate(&v2).unwrap() * c2
                    - lmi.constant() * (c1 + c2 - 1.0);
                let scale = 1.0 + lhs.amax().max(rhs.amax());
                prop_assert!((lhs - rhs).amax() <= 1e-11 * scale);
            }
        }
    }
}
