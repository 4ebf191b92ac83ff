//! Loss primitives and the detection loss over the three heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Graph, HeadVars, NetworkOutput, Var, REG_DIMS};
use crate::targets::{Label, TargetAssignment};

pub fn smooth_l1(pred: f64, target: f64) -> f64 {
    let d = pred - target;
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

/// Derivative of [`smooth_l1`] with respect to `pred`.
pub fn smooth_l1_grad(pred: f64, target: f64) -> f64 {
    let d = pred - target;
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

pub fn smooth_l1_vec(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("smooth_l1: {} vs {} elements", pred.len(), target.len())));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| smooth_l1(*p, *t)).collect())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn bce_with_logits(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

/// Derivative of [`bce_with_logits`] with respect to the logit.
pub fn bce_with_logits_grad(z: f64, t: f64) -> f64 {
    sigmoid(z) - t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub cls: f64,
    pub reg: f64,
    pub dir: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { cls: 1.0, reg: 2.0, dir: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.cls, self.reg, self.dir];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("loss weights are all zero".into()));
        }
        Ok(())
    }
}

/// Weighted components; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub dir: f64,
}

/// Loss value plus gradients with respect to the raw head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWithGrad {
    pub parts: LossBreakdown,
    pub d_cls: Vec<f64>,
    pub d_reg: Vec<f64>,
    pub d_dir: Vec<f64>,
}

pub fn detection_loss(cls: &[f64], reg: &[f64], dir: &[f64], tgt: &TargetAssignment, w: &LossWeights) -> Result<LossWithGrad> {
    let n = tgt.labels.len();
    if cls.len() != n || dir.len() != n || reg.len() != n * REG_DIMS {
        return Err(Error::Shape(format!(
            "loss: {n} anchors but heads have {}/{}/{} values",
            cls.len(),
            reg.len(),
            dir.len()
        )));
    }
    let mut d_cls = vec![0.0; n];
    let mut d_reg = vec![0.0; n * REG_DIMS];
    let mut d_dir = vec![0.0; n];
    let counted = tgt.labels.iter().filter(|l| **l != Label::Ignore).count();
    let n_pos = tgt.num_positive();
    let cls_norm = w.cls / counted.max(1) as f64;
    let pos_norm = 1.0 / n_pos.max(1) as f64;
    let (mut lc, mut lr, mut ld) = (0.0, 0.0, 0.0);
    for (i, label) in tgt.labels.iter().enumerate() {
        let t = match label {
            Label::Ignore => continue,
            Label::Positive => 1.0,
            Label::Negative => 0.0,
        };
        lc += bce_with_logits(cls[i], t);
        d_cls[i] = cls_norm * bce_with_logits_grad(cls[i], t);
        if *label == Label::Positive {
            for k in 0..REG_DIMS {
                let (p, q) = (reg[i * REG_DIMS + k], tgt.reg[i][k]);
                lr += smooth_l1(p, q);
                d_reg[i * REG_DIMS + k] = w.reg * pos_norm * smooth_l1_grad(p, q);
            }
            let c = tgt.dir[i] as f64;
            ld += bce_with_logits(dir[i], c);
            d_dir[i] = w.dir * pos_norm * bce_with_logits_grad(dir[i], c);
        }
    }
    let cls_term = cls_norm * lc;
    let reg_term = w.reg * pos_norm * lr;
    let dir_term = w.dir * pos_norm * ld;
    let parts = LossBreakdown { total: cls_term + reg_term + dir_term, cls: cls_term, reg: reg_term, dir: dir_term };
    if !parts.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {parts:?}")));
    }
    Ok(LossWithGrad { parts, d_cls, d_reg, d_dir })
}

pub fn total_loss(out: &NetworkOutput, tgt: &TargetAssignment, w: &LossWeights) -> Result<LossBreakdown> {
    Ok(detection_loss(&out.cls, &out.reg, &out.dir, tgt, w)?.parts)
}

/// Attach the detection loss to a graph as a scalar node.
pub fn loss_node(g: &mut Graph, heads: &HeadVars, tgt: &TargetAssignment, w: &LossWeights) -> Result<(Var, LossBreakdown)> {
    let l = detection_loss(g.value(heads.cls), g.value(heads.reg), g.value(heads.dir), tgt, w)?;
    let v = g.precomputed_scalar(l.parts.total, vec![heads.cls, heads.reg, heads.dir], vec![l.d_cls, l.d_reg, l.d_dir])?;
    Ok((v, l.parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    fn assignment(labels: Vec<Label>) -> TargetAssignment {
        let n = labels.len();
        TargetAssignment {
            matched: labels.iter().map(|l| (*l == Label::Positive).then_some(0)).collect(),
            labels,
            reg: vec![[0.0; REG_DIMS]; n],
            dir: vec![1; n],
        }
    }

    #[test]
    fn primitive_examples() {
        assert_eq!(smooth_l1(0.0, 0.0), 0.0);
        assert_eq!(smooth_l1(0.5, 0.0), 0.125);
        assert_eq!(smooth_l1(2.0, 0.0), 1.5);
        assert_eq!(smooth_l1(-2.0, 0.0), 1.5);
        assert!(smooth_l1_vec(&[1.0], &[1.0, 2.0]).is_err());
        assert_abs_diff_eq!(bce_with_logits(0.0, 1.0), LN_2, epsilon = 1e-15);
        assert!(bce_with_logits(20.0, 1.0) < 1e-8);
        assert_abs_diff_eq!(bce_with_logits(-20.0, 1.0), 20.0, epsilon = 1e-8);
        assert!(bce_with_logits(1e6, 0.0).is_finite());
    }

    #[test]
    fn smooth_l1_is_c1_at_one() {
        let h = 1e-7;
        for s in [1.0, -1.0] {
            let left = (smooth_l1(s - 0.0, 0.0) - smooth_l1(s - h, 0.0)) / h;
            let right = (smooth_l1(s + h, 0.0) - smooth_l1(s, 0.0)) / h;
            assert_abs_diff_eq!(left, s, epsilon = 1e-6);
            assert_abs_diff_eq!(right, s, epsilon = 1e-6);
            assert_eq!(smooth_l1_grad(s, 0.0), s);
        }
    }

    #[test]
    fn primitive_gradients_match_differences() {
        let h = 1e-6;
        for k in 0..41 {
            let z = -4.0 + 0.2 * k as f64 + 0.013;
            for t in [0.0, 1.0] {
                let fd = (bce_with_logits(z + h, t) - bce_with_logits(z - h, t)) / (2.0 * h);
                assert_abs_diff_eq!(fd, bce_with_logits_grad(z, t), epsilon = 1e-8);
                let fd = (smooth_l1(z + h, t) - smooth_l1(z - h, t)) / (2.0 * h);
                assert_abs_diff_eq!(fd, smooth_l1_grad(z, t), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let mut tgt = assignment(vec![Label::Positive, Label::Negative, Label::Negative]);
        tgt.reg[0] = [0.1, -0.2, 0.0, 0.3, 0.0, 0.1, 0.5];
        let mut reg = vec![0.0; 21];
        reg[..7].copy_from_slice(&tgt.reg[0]);
        let l = detection_loss(&[20.0, -20.0, -20.0], &reg, &[20.0, 0.0, 0.0], &tgt, &LossWeights::default()).unwrap();
        assert!(l.parts.total < 1e-6);
    }

    #[test]
    fn zero_positives_and_hand_value() {
        let tgt = assignment(vec![Label::Negative, Label::Ignore]);
        let l = detection_loss(&[0.0, 5.0], &[0.3; 14], &[1.0, 1.0], &tgt, &LossWeights::default()).unwrap();
        assert_eq!((l.parts.reg, l.parts.dir), (0.0, 0.0));
        assert_abs_diff_eq!(l.parts.cls, LN_2, epsilon = 1e-15);

        let tgt = assignment(vec![Label::Positive]);
        let mut reg = vec![0.0; 7];
        reg[2] = 0.5;
        let l = detection_loss(&[0.0], &reg, &[0.0], &tgt, &LossWeights { cls: 0.0, reg: 2.0, dir: 0.0 }).unwrap();
        assert_eq!(l.parts.reg, 0.25);
        assert_eq!(l.parts.total, 0.25);
    }

    #[test]
    fn ignore_anchors_have_no_effect() {
        let tgt = assignment(vec![Label::Positive, Label::Ignore, Label::Negative]);
        let reg = vec![0.2; 21];
        let base = detection_loss(&[0.1, 0.3, -0.4], &reg, &[0.2, 0.0, 0.1], &tgt, &LossWeights::default()).unwrap();
        let mut reg2 = reg.clone();
        for v in &mut reg2[7..14] {
            *v += 3.0;
        }
        let moved = detection_loss(&[0.1, -7.0, -0.4], &reg2, &[0.2, 9.0, 0.1], &tgt, &LossWeights::default()).unwrap();
        assert_eq!(base.parts, moved.parts);
        assert_eq!(base.d_cls[1], 0.0);
        assert!(base.d_reg[7..14].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let mut tgt = assignment(vec![Label::Positive, Label::Negative, Label::Ignore, Label::Positive]);
        tgt.reg[0] = [0.1, 0.2, -0.3, 0.0, 0.4, -0.1, 0.7];
        tgt.reg[3] = [-1.5, 0.0, 0.3, 0.2, -0.4, 0.1, -0.2];
        tgt.dir[3] = 0;
        let cls = vec![0.3, -0.8, 1.1, 0.05];
        let reg: Vec<f64> = (0..28).map(|k| ((k * 7919) % 23) as f64 * 0.11 - 1.2).collect();
        let dir = vec![0.4, -0.2, 0.9, -1.3];
        let w = LossWeights::default();
        let a = detection_loss(&cls, &reg, &dir, &tgt, &w).unwrap();
        let h = 1e-6;
        let f = |c: &[f64], r: &[f64], d: &[f64]| detection_loss(c, r, d, &tgt, &w).unwrap().parts.total;
        for i in 0..cls.len() {
            let (mut p, mut m) = (cls.clone(), cls.clone());
            p[i] += h;
            m[i] -= h;
            assert_abs_diff_eq!((f(&p, &reg, &dir) - f(&m, &reg, &dir)) / (2.0 * h), a.d_cls[i], epsilon = 1e-8);
            let (mut p, mut m) = (dir.clone(), dir.clone());
            p[i] += h;
            m[i] -= h;
            assert_abs_diff_eq!((f(&cls, &reg, &p) - f(&cls, &reg, &m)) / (2.0 * h), a.d_dir[i], epsilon = 1e-8);
        }
        for i in 0..reg.len() {
            let (mut p, mut m) = (reg.clone(), reg.clone());
            p[i] += h;
            m[i] -= h;
            assert_abs_diff_eq!((f(&cls, &p, &dir) - f(&cls, &m, &dir)) / (2.0 * h), a.d_reg[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { cls: 0.0, reg: 0.0, dir: 0.0 }.validate().is_err());
        assert!(LossWeights { cls: -1.0, reg: 1.0, dir: 0.0 }.validate().is_err());
    }
}
