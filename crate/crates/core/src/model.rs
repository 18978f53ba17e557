//! Plants and ideal (derivative-dependent) controllers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Continuous-time LTI plant `ẋ = Ax + Bu`, `y = Cx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LtiPlantRepr", into = "LtiPlantRepr")]
pub struct LtiPlant {
    a: Mat,
    b: Mat,
    c: Mat,
}

#[derive(Serialize, Deserialize)]
struct LtiPlantRepr {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

impl TryFrom<LtiPlantRepr> for LtiPlant {
    type Error = Error;
    fn try_from(r: LtiPlantRepr) -> Result<Self> {
        LtiPlant::new(
            linalg::from_rows(&r.a, "A")?,
            linalg::from_rows(&r.b, "B")?,
            linalg::from_rows(&r.c, "C")?,
        )
    }
}

impl From<LtiPlant> for LtiPlantRepr {
    fn from(p: LtiPlant) -> Self {
        LtiPlantRepr { a: linalg::to_rows(&p.a), b: linalg::to_rows(&p.b), c: linalg::to_rows(&p.c) }
    }
}

impl LtiPlant {
    pub fn new(a: Mat, b: Mat, c: Mat) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!("B must be {n}xm with m >= 1, got {}x{}", b.nrows(), b.ncols())));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::Dimension(format!("C must be lx{n} with l >= 1, got {}x{}", c.nrows(), c.ncols())));
        }
        linalg::ensure_finite(&a, "A")?;
        linalg::ensure_finite(&b, "B")?;
        linalg::ensure_finite(&c, "C")?;
        Ok(Self { a, b, c })
    }

    /// The chain of integrators `y^{(n)} = u`.
    pub fn integrator_chain(n: usize) -> Self {
        let mut a = Mat::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            a[(i, i + 1)] = 1.0;
        }
        let mut b = Mat::zeros(n, 1);
        b[(n - 1, 0)] = 1.0;
        let mut c = Mat::zeros(1, n);
        c[(0, 0)] = 1.0;
        Self { a, b, c }
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn states(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `C·A^i`.
    pub fn c_a_pow(&self, i: usize) -> Mat {
        &self.c * linalg::matrix_power(&self.a, i)
    }

    /// Markov parameter `C·A^i·B`.
    pub fn markov(&self, i: usize) -> Mat {
        self.c_a_pow(i) * &self.b
    }
}

/// Second-order scalar plant `ÿ + a1·ẏ + a2·y = b·u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PidPlantRepr", into = "PidPlantRepr")]
pub struct PidPlant {
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
}

#[derive(Serialize, Deserialize)]
struct PidPlantRepr {
    a1: f64,
    a2: f64,
    b: f64,
}

impl TryFrom<PidPlantRepr> for PidPlant {
    type Error = Error;
    fn try_from(r: PidPlantRepr) -> Result<Self> {
        PidPlant::new(r.a1, r.a2, r.b)
    }
}

impl From<PidPlant> for PidPlantRepr {
    fn from(p: PidPlant) -> Self {
        PidPlantRepr { a1: p.a1, a2: p.a2, b: p.b }
    }
}

impl PidPlant {
    pub fn new(a1: f64, a2: f64, b: f64) -> Result<Self> {
        if !(a1.is_finite() && a2.is_finite() && b.is_finite()) {
            return Err(Error::NonFinite("PID plant coefficients".into()));
        }
        if b == 0.0 {
            return Err(Error::InvalidArgument("PID plant gain b must be nonzero".into()));
        }
        Ok(Self { a1, a2, b })
    }

    /// Two-state realisation with `x = (y, ẏ)`.
    pub fn state_space(&self) -> LtiPlant {
        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -self.a2, -self.a1]);
        let b = Mat::from_row_slice(2, 1, &[0.0, self.b]);
        let c = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        LtiPlant { a, b, c }
    }

    /// Closed loop under the continuous PID law, in the state `(y, ẏ, ∫y)`.
    pub fn ideal_closed_loop(&self, pid: &PidController) -> Mat {
        Mat::from_row_slice(
            3,
            3,
            &[
                0.0,
                1.0,
                0.0,
                -self.a2 + self.b * pid.kp_bar,
                -self.a1 + self.b * pid.kd_bar,
                self.b * pid.ki_bar,
                1.0,
                0.0,
                0.0,
            ],
        )
    }
}

/// Ideal output-derivative feedback `u = Σ K̄_i y^{(i)}`, one `m×l` gain per derivative order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<f64>>>", into = "Vec<Vec<Vec<f64>>>")]
pub struct DerivativeController {
    gains: Vec<Mat>,
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for DerivativeController {
    type Error = Error;
    fn try_from(v: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let gains = v
            .iter()
            .enumerate()
            .map(|(i, g)| linalg::from_rows(g, &format!("K̄_{i}")))
            .collect::<Result<Vec<_>>>()?;
        DerivativeController::new(gains)
    }
}

impl From<DerivativeController> for Vec<Vec<Vec<f64>>> {
    fn from(c: DerivativeController) -> Self {
        c.gains.iter().map(linalg::to_rows).collect()
    }
}

impl DerivativeController {
    pub fn new(gains: Vec<Mat>) -> Result<Self> {
        let first = gains.first().ok_or_else(|| Error::InvalidArgument("at least one gain required".into()))?;
        let shape = first.shape();
        for (i, g) in gains.iter().enumerate() {
            if g.shape() != shape {
                return Err(Error::Dimension(format!("K̄_{i} has shape {:?}, expected {:?}", g.shape(), shape)));
            }
            linalg::ensure_finite(g, "ideal gains")?;
        }
        Ok(Self { gains })
    }

    /// Single-input single-output convenience constructor.
    pub fn scalar(gains: &[f64]) -> Result<Self> {
        Self::new(gains.iter().map(|&g| Mat::from_element(1, 1, g)).collect())
    }

    pub fn gains(&self) -> &[Mat] {
        &self.gains
    }
    pub fn order(&self) -> usize {
        self.gains.len()
    }
    pub fn inputs(&self) -> usize {
        self.gains[0].nrows()
    }
    pub fn outputs(&self) -> usize {
        self.gains[0].ncols()
    }

    /// `[K̄_0, …, K̄_{r-1}]` as one `m × rl` row block.
    pub fn concatenated(&self) -> Mat {
        let (m, l) = (self.inputs(), self.outputs());
        let mut out = Mat::zeros(m, l * self.order());
        for (i, g) in self.gains.iter().enumerate() {
            out.view_mut((0, i * l), (m, l)).copy_from(g);
        }
        out
    }

    /// `Ā + B·[K̄_0..K̄_{r-1}]·C̄`.
    pub fn closed_loop(&self, plant: &LtiPlant) -> Result<Mat> {
        if self.inputs() != plant.inputs() || self.outputs() != plant.outputs() {
            return Err(Error::Dimension("ideal gains do not match plant input/output sizes".into()));
        }
        let cbar = stacked_output_map(plant, self.order())?;
        Ok(plant.a() + plant.b() * self.concatenated() * cbar)
    }
}

/// Continuous PID gains `(k̄_p, k̄_i, k̄_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidController {
    pub kp_bar: f64,
    pub ki_bar: f64,
    pub kd_bar: f64,
}

impl PidController {
    pub fn new(kp_bar: f64, ki_bar: f64, kd_bar: f64) -> Result<Self> {
        if !(kp_bar.is_finite() && ki_bar.is_finite() && kd_bar.is_finite()) {
            return Err(Error::NonFinite("PID gains".into()));
        }
        Ok(Self { kp_bar, ki_bar, kd_bar })
    }
}

/// Tolerance used for the `CA^iB = 0` test.
pub fn markov_tolerance(plant: &LtiPlant, i: usize) -> f64 {
    1e-9 * (1.0 + linalg::norm2(plant.c()) * linalg::norm2(plant.a()).powi(i as i32) * linalg::norm2(plant.b()))
}

/// Smallest `r` with `CA^iB = 0` for `i < r-1` and `CA^{r-1}B ≠ 0`.
pub fn relative_degree(plant: &LtiPlant, r_max: usize) -> Result<usize> {
    if r_max == 0 {
        return Err(Error::InvalidArgument("r_max must be at least 1".into()));
    }
    for i in 0..r_max {
        let norm = linalg::norm2(&plant.markov(i));
        let tol = markov_tolerance(plant, i);
        if norm >= 10.0 * tol {
            return Ok(i + 1);
        }
        if norm > tol {
            return Err(Error::IllConditionedRelativeDegree { power: i, norm });
        }
    }
    Err(Error::NoRelativeDegree(r_max))
}

/// `C̄ = [C; CA; …; CA^{r-1}]`.
pub fn stacked_output_map(plant: &LtiPlant, r: usize) -> Result<Mat> {
    if r == 0 {
        return Err(Error::InvalidArgument("r must be at least 1".into()));
    }
    let (l, n) = (plant.outputs(), plant.states());
    let mut out = Mat::zeros(r * l, n);
    let mut block = plant.c().clone();
    for i in 0..r {
        out.view_mut((i * l, 0), (l, n)).copy_from(&block);
        block = &block * plant.a();
    }
    Ok(out)
}

/// Negated spectral abscissa; positive iff the matrix is Hurwitz.
pub fn decay_rate(closed_loop: &Mat) -> Result<f64> {
    if closed_loop.nrows() != closed_loop.ncols() || closed_loop.is_empty() {
        return Err(Error::Dimension("decay rate needs a non-empty square matrix".into()));
    }
    linalg::ensure_finite(closed_loop, "closed-loop matrix")?;
    Ok(-linalg::spectral_abscissa(closed_loop))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn double_integrator() -> LtiPlant {
        LtiPlant::integrator_chain(2)
    }

    #[test]
    fn relative_degree_examples() {
        assert_eq!(relative_degree(&LtiPlant::integrator_chain(3), 10).unwrap(), 3);
        assert_eq!(relative_degree(&double_integrator(), 10).unwrap(), 2);
        let scalar = LtiPlant::new(Mat::zeros(1, 1), Mat::identity(1, 1), Mat::identity(1, 1)).unwrap();
        assert_eq!(relative_degree(&scalar, 1).unwrap(), 1);
    }

    #[test]
    fn relative_degree_none_and_ambiguous() {
        let p = LtiPlant::new(Mat::zeros(2, 2), Mat::from_row_slice(2, 1, &[0.0, 1.0]), Mat::from_row_slice(1, 2, &[1.0, 0.0]))
            .unwrap();
        assert!(matches!(relative_degree(&p, 5), Err(Error::NoRelativeDegree(5))));
        let p = LtiPlant::new(Mat::zeros(1, 1), Mat::from_element(1, 1, 5e-9), Mat::identity(1, 1)).unwrap();
        assert!(matches!(relative_degree(&p, 3), Err(Error::IllConditionedRelativeDegree { .. })));
        assert!(relative_degree(&double_integrator(), 0).is_err());
    }

    #[test]
    fn stacked_map_examples() {
        let s = stacked_output_map(&LtiPlant::integrator_chain(3), 3).unwrap();
        assert_eq!(s, Mat::identity(3, 3));
        let s = stacked_output_map(&double_integrator(), 2).unwrap();
        assert_eq!(s, Mat::identity(2, 2));
        let p = LtiPlant::integrator_chain(4);
        assert_eq!(stacked_output_map(&p, 1).unwrap(), p.c().clone());
    }

    #[test]
    fn decay_rate_examples() {
        assert_relative_eq!(decay_rate(&(-Mat::identity(2, 2))).unwrap(), 1.0, epsilon = 1e-14);
        let plant = LtiPlant::integrator_chain(3);
        let ideal = DerivativeController::scalar(&[-2e-4, -0.06, -0.342]).unwrap();
        let rate = decay_rate(&ideal.closed_loop(&plant).unwrap()).unwrap();
        assert!(rate > 1e-3, "{rate}");
    }

    #[test]
    fn plant_validation() {
        assert!(LtiPlant::new(Mat::zeros(2, 3), Mat::zeros(2, 1), Mat::zeros(1, 2)).is_err());
        assert!(LtiPlant::new(Mat::zeros(2, 2), Mat::zeros(3, 1), Mat::zeros(1, 2)).is_err());
        let mut a = Mat::zeros(2, 2);
        a[(0, 0)] = f64::NAN;
        assert!(LtiPlant::new(a, Mat::zeros(2, 1), Mat::zeros(1, 2)).is_err());
        assert!(PidPlant::new(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn plant_json_round_trip() {
        let p = LtiPlant::integrator_chain(3);
        let s = serde_json::to_string(&p).unwrap();
        let q: LtiPlant = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }

    proptest! {
        #[test]
        fn relative_degree_invariant_under_output_scaling(scale in prop_oneof![-50.0..-0.01f64, 0.01..50.0f64], n in 2usize..6) {
            let p = LtiPlant::integrator_chain(n);
            let scaled = LtiPlant::new(p.a().clone(), p.b().clone(), p.c() * scale).unwrap();
            prop_assert_eq!(relative_degree(&p, 10).unwrap(), relative_degree(&scaled, 10).unwrap());
        }

        #[test]
        fn stacked_rows_are_powers(entries in proptest::collection::vec(-2.0..2.0f64, 9), r in 1usize..5) {
            let a = Mat::from_row_slice(3, 3, &entries);
            let p = LtiPlant::new(a, Mat::from_row_slice(3, 1, &[0.0, 0.0, 1.0]), Mat::from_row_slice(1, 3, &[1.0, 0.5, 0.0])).unwrap();
            let s = stacked_output_map(&p, r).unwrap();
            for i in 0..r {
                let expected = p.c_a_pow(i);
                for j in 0..3 {
                    prop_assert!((s[(i, j)] - expected[(0, j)]).abs() <= 1e-12 * (1.0 + expected[(0, j)].abs()));
                }
            }
        }

        #[test]
        fn decay_rate_similarity_invariant(d in proptest::collection::vec(0.0..0.4f64, 3), t in proptest::collection::vec(-0.3..0.3f64, 9)) {
            let diag = [-0.5 - d[0], -1.5 - d[1], -2.5 - d[2]];
            let mut dm = Mat::from_diagonal(&nalgebra::DVector::from_row_slice(&diag));
            dm[(0, 1)] = 0.7;
            let tm = Mat::identity(3, 3) + Mat::from_row_slice(3, 3, &t);
            let ti = tm.clone().try_inverse().unwrap();
            let similar = &tm * &dm * ti;
            prop_assert!((decay_rate(&dm).unwrap() - decay_rate(&similar).unwrap()).abs() < 1e-8);
        }
    }
}
