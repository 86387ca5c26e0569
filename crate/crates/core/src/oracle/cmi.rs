//! Exact conditional mutual information on small discrete joints.

use rand::Rng;

use crate::backend::DistTable;
use crate::NeumaierSum;

use super::OracleError;

pub const MAX_AXIS: usize = 16;

/// Joint distribution `p(s, e, t)` over small finite alphabets.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    dims: (usize, usize, usize),
    p: Vec<f64>,
}

impl DiscreteJoint {
    /// `p` is laid out as `p[(s * n_e + e) * n_t + t]`.
    pub fn new(dims: (usize, usize, usize), p: Vec<f64>) -> Result<Self, OracleError> {
        let (ns, ne, nt) = dims;
        if [ns, ne, nt].iter().any(|&d| d == 0 || d > MAX_AXIS) {
            return Err(OracleError::Argument(format!(
                "every axis must have 1..={MAX_AXIS} values, got {dims:?}"
            )));
        }
        if p.len() != ns * ne * nt {
            return Err(OracleError::Argument(format!(
                "table has {} entries, dims {dims:?} need {}",
                p.len(),
                ns * ne * nt
            )));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(OracleError::Argument("probabilities must be finite and non-negative".into()));
        }
        let total = NeumaierSum::from_iter(p.iter().copied()).total();
        if (total - 1.0).abs() > 1e-12 {
            return Err(OracleError::Argument(format!("joint sums to {total}, not 1")));
        }
        Ok(Self { dims, p })
    }

    /// Normalized independent Exp(1) variates: uniform on the simplex.
    pub fn random<R: Rng + ?Sized>(dims: (usize, usize, usize), rng: &mut R) -> Result<Self, OracleError> {
        let n = dims.0 * dims.1 * dims.2;
        let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = raw.iter().sum();
        Self::new(dims, raw.into_iter().map(|v| v / total).collect())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn get(&self, s: usize, e: usize, t: usize) -> f64 {
        let (_, ne, nt) = self.dims;
        self.p[(s * ne + e) * nt + t]
    }

    fn marginal_st(&self) -> Vec<f64> {
        let (ns, ne, nt) = self.dims;
        let mut out = vec![0.0; ns * nt];
        for s in 0..ns {
            for e in 0..ne {
                for t in 0..nt {
                    out[s * nt + t] += self.get(s, e, t);
                }
            }
        }
        out
    }

    fn marginal_se(&self) -> Vec<f64> {
        let (ns, ne, nt) = self.dims;
        (0..ns * ne)
            .map(|se| (0..nt).map(|t| self.p[se * nt + t]).sum())
            .collect()
    }

    fn marginal_s(&self) -> Vec<f64> {
        let (ns, ne, nt) = self.dims;
        (0..ns)
            .map(|s| self.p[s * ne * nt..(s + 1) * ne * nt].iter().sum())
            .collect()
    }
}

/// `-Σ p ln p` terms with `0 ln 0 = 0`.
fn plogq(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * q.ln()
    }
}

/// `H(T | S) - H(T | S, E)` by direct enumeration.
pub fn cmi_entropy_form(joint: &DiscreteJoint) -> f64 {
    let (ns, ne, nt) = joint.dims;
    let p_st = joint.marginal_st();
    let p_s = joint.marginal_s();
    let p_se = joint.marginal_se();

    let mut h_t_given_s = NeumaierSum::new();
    for s in 0..ns {
        for t in 0..nt {
            let pst = p_st[s * nt + t];
            if pst > 0.0 {
                h_t_given_s.add(-plogq(pst, pst / p_s[s]));
            }
        }
    }
    let mut h_t_given_se = NeumaierSum::new();
    for s in 0..ns {
        for e in 0..ne {
            for t in 0..nt {
                let pset = joint.get(s, e, t);
                if pset > 0.0 {
                    h_t_given_se.add(-plogq(pset, pset / p_se[s * ne + e]));
                }
            }
        }
    }
    h_t_given_s.total() - h_t_given_se.total()
}

/// `E_{p(s,e)} [ KL( p(T | s, e) || p(T | s) ) ]`.
pub fn cmi_kl_form(joint: &DiscreteJoint) -> f64 {
    let (ns, ne, nt) = joint.dims;
    let p_st = joint.marginal_st();
    let p_s = joint.marginal_s();
    let p_se = joint.marginal_se();

    let mut total = NeumaierSum::new();
    for s in 0..ns {
        for e in 0..ne {
            let pse = p_se[s * ne + e];
            if pse == 0.0 {
                continue;
            }
            let mut kl = NeumaierSum::new();
            for t in 0..nt {
                let post = joint.get(s, e, t) / pse;
                let prior = p_st[s * nt + t] / p_s[s];
                if post > 0.0 {
                    kl.add(post * (post / prior).ln());
                }
            }
            total.add(pse * kl.total());
        }
    }
    total.total()
}

/// Result of a KL evaluation that may diverge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlValue {
    Finite(f64),
    /// Some token has positive long-context mass but zero short-context mass.
    Infinite,
}

impl KlValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            KlValue::Finite(v) => Some(v),
            KlValue::Infinite => None,
        }
    }
}

/// Full-vocabulary `KL(p_long || p_short)`.
pub fn one_sample_kl(p_long: &DistTable, p_short: &DistTable) -> Result<KlValue, OracleError> {
    if p_long.probs.len() != p_short.probs.len() {
        return Err(OracleError::Argument(format!(
            "support mismatch: {} vs {}",
            p_long.probs.len(),
            p_short.probs.len()
        )));
    }
    let mut sum = NeumaierSum::new();
    for (&pl, &ps) in p_long.probs.iter().zip(&p_short.probs) {
        if pl == 0.0 {
            continue;
        }
        if ps == 0.0 {
            return Ok(KlValue::Infinite);
        }
        sum.add(pl * (pl / ps).ln());
    }
    Ok(KlValue::Finite(sum.total()))
}

/// The single-token term `p_long * ln(p_long / p_short)` of the KL sum.
pub fn surrogate_term(p_long: f64, p_short: f64) -> Result<f64, OracleError> {
    let valid = |p: f64| p > 0.0 && p <= 1.0;
    if !valid(p_long) || !valid(p_short) {
        return Err(OracleError::Argument(format!(
            "probabilities must lie in (0, 1], got ({p_long}, {p_short})"
        )));
    }
    Ok(p_long * (p_long / p_short).ln())
}
