//! Training objectives and the per-iteration loss report.
//!
//! Code-sized L1 terms (style and latent reconstruction) reduce as the mean
//! over the batch of the per-row sum; image-sized L1 terms (diversity and
//! cycle) reduce as the mean over every element.

use std::io::Write;

use serde::{Deserialize, Serialize};
use stylebridge_autograd::Var;

use crate::config::{DiscriminatorHead, ExperimentConfig, ReconMode};
use crate::error::{Error, Result};
use crate::networks::one_hot;
use crate::training::lambda_ds_at;

fn same_shape(context: &'static str, a: Var<'_>, b: Var<'_>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(context, format!("{:?}", a.shape()), format!("{:?}", b.shape())))
    }
}

/// Logistic function, stable for large magnitudes.
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Non-saturating discriminator loss: `mean softplus(-real) + mean softplus(fake)`.
pub fn adv_loss_d<'t>(real_logit: Var<'t>, fake_logit: Var<'t>) -> Var<'t> {
    (-real_logit).softplus().mean() + fake_logit.softplus().mean()
}

/// Non-saturating generator loss: `mean softplus(-fake)`.
pub fn adv_loss_g(fake_logit: Var<'_>) -> Var<'_> {
    (-fake_logit).softplus().mean()
}

/// `(γ/2) · mean over the batch of ‖∂ logit_i / ∂ x_i‖²`.
///
/// `x` must be a trainable leaf that `logits` depends on. The returned value is
/// differentiable with respect to whatever produced `logits`.
pub fn r1_penalty<'t>(logits: Var<'t>, x: Var<'t>, gamma: f64) -> Result<Var<'t>> {
    if !x.requires_grad() {
        return Err(Error::InvalidArgument(
            "R1 penalty needs an input that tracks gradients".into(),
        ));
    }
    let n = x.shape()[0];
    let grad = x.tape().grad(logits.sum(), &[x], true)[0];
    Ok(grad.square().sum() * (0.5 * gamma / n as f64))
}

/// Mean over rows of the L1 distance between two `[n, d]` codes.
pub fn style_recon_loss<'t>(target: Var<'t>, recon: Var<'t>) -> Result<Var<'t>> {
    same_shape("style reconstruction", target, recon)?;
    let n = target.shape()[0];
    Ok((target - recon).abs().sum() * (1.0 / n as f64))
}

/// Same reduction as [`style_recon_loss`], applied to latent codes.
pub fn latent_recon_loss<'t>(z: Var<'t>, recon: Var<'t>) -> Result<Var<'t>> {
    same_shape("latent reconstruction", z, recon)?;
    style_recon_loss(z, recon)
}

/// Mean absolute pixel difference between two translations (to be maximized).
pub fn diversity_loss<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    same_shape("diversity", a, b)?;
    Ok((a - b).abs().mean())
}

/// Mean absolute pixel difference between an image and its round trip.
pub fn cycle_loss<'t>(x: Var<'t>, recon: Var<'t>) -> Result<Var<'t>> {
    same_shape("cycle", x, recon)?;
    Ok((x - recon).abs().mean())
}

/// Mean cross-entropy of `[n, K]` logits against `labels`.
pub fn classification_loss<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let shape = logits.shape();
    let (n, k) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(Error::shape("classification labels", n.to_string(), labels.len().to_string()));
    }
    let tape = logits.tape();
    let values = logits.value();
    let row_max: Vec<f64> = values
        .data()
        .chunks(k)
        .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let shift = tape.constant(stylebridge_autograd::Tensor::new(vec![n, 1], row_max));
    let shifted = logits - shift;
    let log_norm = shifted.exp().sum_to(&[n, 1]).ln();
    let mask = tape.constant(one_hot(labels, k)?);
    let picked = (shifted * mask).sum_to(&[n, 1]);
    Ok((log_norm - picked).mean())
}

/// Effective weights of the generator objective at one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorWeights {
    pub sty: f64,
    pub ds: f64,
    pub cyc: f64,
    pub cls: f64,
}

impl GeneratorWeights {
    pub fn at(cfg: &ExperimentConfig, iter: usize) -> Self {
        GeneratorWeights {
            sty: match cfg.ablation.recon_mode {
                ReconMode::None => 0.0,
                ReconMode::Style | ReconMode::Latent => cfg.lambda_sty,
            },
            ds: if cfg.ablation.use_ds { lambda_ds_at(iter, cfg) } else { 0.0 },
            cyc: cfg.lambda_cyc,
            cls: match cfg.ablation.discriminator_head {
                DiscriminatorHead::Acgan => 1.0,
                DiscriminatorHead::Multitask => 0.0,
            },
        }
    }

    /// `adv + sty·λ_sty − ds·λ_ds + cyc·λ_cyc + cls·λ_cls` on tape variables.
    pub fn combine<'t>(&self, adv: Var<'t>, sty: Var<'t>, ds: Var<'t>, cyc: Var<'t>, cls: Var<'t>) -> Var<'t> {
        adv + sty * self.sty - ds * self.ds + cyc * self.cyc + cls * self.cls
    }
}

/// Raw (unweighted) generator-side loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorParts {
    pub adv: f64,
    pub sty: f64,
    pub ds: f64,
    pub cyc: f64,
    pub cls: f64,
}

/// Raw discriminator-side loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiscriminatorParts {
    pub adv: f64,
    pub r1: f64,
    pub cls: f64,
    /// Mean sigmoid of the real logits.
    pub real_score: f64,
}

/// Every scalar logged for one training step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iter: usize,
    pub mode: String,
    pub adv_d: f64,
    pub r1: f64,
    pub cls_d: f64,
    pub total_d: f64,
    pub adv_g: f64,
    pub sty: f64,
    pub ds: f64,
    pub cyc: f64,
    pub cls_g: f64,
    pub total_g: f64,
    pub lambda_ds: f64,
    pub real_score: f64,
}

pub const CSV_HEADER: &str =
    "iter,mode,adv_d,r1,cls_d,total_d,adv_g,sty,ds,cyc,cls_g,total_g,lambda_ds,real_score";

fn check_finite(term: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { term })
    }
}

/// Weight the generator parts for iteration `iter` into a report.
pub fn assemble_generator_objective(
    parts: &GeneratorParts,
    cfg: &ExperimentConfig,
    iter: usize,
) -> Result<LossReport> {
    let adv = check_finite("adv_g", parts.adv)?;
    let sty = check_finite("sty", parts.sty)?;
    let ds = check_finite("ds", parts.ds)?;
    let cyc = check_finite("cyc", parts.cyc)?;
    let cls = check_finite("cls_g", parts.cls)?;
    let w = GeneratorWeights::at(cfg, iter);
    let total_g = check_finite("total_g", adv + w.sty * sty - w.ds * ds + w.cyc * cyc + w.cls * cls)?;
    Ok(LossReport {
        iter,
        adv_g: adv,
        sty,
        ds,
        cyc,
        cls_g: cls,
        total_g,
        lambda_ds: w.ds,
        ..LossReport::default()
    })
}

impl LossReport {
    /// Attach the discriminator side of the step.
    pub fn with_discriminator(mut self, parts: &DiscriminatorParts) -> Result<Self> {
        self.adv_d = check_finite("adv_d", parts.adv)?;
        self.r1 = check_finite("r1", parts.r1)?;
        self.cls_d = check_finite("cls_d", parts.cls)?;
        self.real_score = check_finite("real_score", parts.real_score)?;
        self.total_d = check_finite("total_d", self.adv_d + self.r1 + self.cls_d)?;
        Ok(self)
    }

    pub fn with_mode(mut self, mode: &str) -> Self {
        self.mode = mode.to_string();
        self
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.mode,
            self.adv_d,
            self.r1,
            self.cls_d,
            self.total_d,
            self.adv_g,
            self.sty,
            self.ds,
            self.cyc,
            self.cls_g,
            self.total_g,
            self.lambda_ds,
            self.real_score
        )
    }

    pub fn json_line(&self) -> String {
        serde_json::to_string(self).expect("loss report serializes")
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", self.csv_row())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_config, Preset};
    use proptest::prelude::*;
    use stylebridge_autograd::{Tape, Tensor};

    const LN2: f64 = std::f64::consts::LN_2;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec())
    }

    #[test]
    fn adversarial_values() {
        let tape = Tape::new();
        let zero = tape.constant(Tensor::zeros(&[3]));
        assert!((adv_loss_d(zero, zero).value().item() - 2.0 * LN2).abs() < 1e-12);
        assert!((adv_loss_g(zero).value().item() - LN2).abs() < 1e-12);
        let big = tape.constant(Tensor::full(&[3], 800.0));
        assert!(adv_loss_d(big, -big).value().item() < 1e-300);
        assert!(adv_loss_g(big).value().item() < 1e-300);
        assert!(adv_loss_d(-big, -big).value().item() >= 800.0);

        let f = tape.param(Tensor::zeros(&[1]));
        let g = tape.gradients(adv_loss_g(f), &[f]);
        assert!((g[0].item() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn r1_hand_values() {
        let tape = Tape::new();
        let x = tape.param(Tensor::full(&[2, 5], 0.3));
        let linear = x.sum_to(&[2, 1]).reshape(&[2]);
        // Each sample's logit is the sum of its 5 inputs: ‖∇‖² = 5 per sample.
        assert!((r1_penalty(linear, x, 1.0).unwrap().value().item() - 2.5).abs() < 1e-12);
        assert_eq!(r1_penalty(linear, x, 0.0).unwrap().value().item(), 0.0);
        let constant = tape.constant(Tensor::full(&[2], 4.0)) + x.sum() * 0.0;
        assert_eq!(r1_penalty(constant, x, 1.0).unwrap().value().item(), 0.0);
        let frozen = tape.constant(Tensor::zeros(&[2, 5]));
        assert!(r1_penalty(linear, frozen, 1.0).is_err());
    }

    #[test]
    fn l1_conventions() {
        let tape = Tape::new();
        let zeros = tape.constant(Tensor::zeros(&[1, 64]));
        let ones = tape.constant(Tensor::ones(&[1, 64]));
        assert_eq!(style_recon_loss(zeros, ones).unwrap().value().item(), 64.0);
        let z16 = tape.constant(Tensor::zeros(&[1, 16]));
        let o16 = tape.constant(Tensor::ones(&[1, 16]));
        assert_eq!(latent_recon_loss(z16, o16).unwrap().value().item(), 16.0);
        let plus = tape.constant(Tensor::ones(&[2, 3, 4, 4]));
        assert_eq!(diversity_loss(plus, -plus).unwrap().value().item(), 2.0);
        assert_eq!(diversity_loss(plus, plus).unwrap().value().item(), 0.0);
        let half = tape.constant(Tensor::full(&[2, 3, 4, 4], 0.5));
        let zero_img = tape.constant(Tensor::zeros(&[2, 3, 4, 4]));
        assert_eq!(cycle_loss(zero_img, half).unwrap().value().item(), 0.5);
        assert!(matches!(style_recon_loss(zeros, z16), Err(Error::Shape { .. })));
        assert!(diversity_loss(plus, zeros).is_err());
    }

    #[test]
    fn classification_matches_log_softmax() {
        let tape = Tape::new();
        let logits = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 500.0, 0.0, -1.0]));
        let got = classification_loss(logits, &[2, 1]).unwrap().value().item();
        let row0 = -(3.0 - (1f64.exp() + 2f64.exp() + 3f64.exp()).ln());
        let row1 = 500.0;
        assert!((got - (row0 + row1) / 2.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn assembly_arithmetic_and_gates() {
        let mut cfg = default_config(Preset::Toy);
        cfg.lambda_sty = 1.0;
        cfg.lambda_ds = 1.0;
        cfg.lambda_cyc = 1.0;
        let parts = GeneratorParts {
            adv: 1.0,
            sty: 2.0,
            ds: 3.0,
            cyc: 4.0,
            cls: 0.0,
        };
        assert_eq!(assemble_generator_objective(&parts, &cfg, 0).unwrap().total_g, 4.0);
        let end = assemble_generator_objective(&parts, &cfg, cfg.ds_decay_iters).unwrap();
        assert_eq!((end.total_g, end.lambda_ds), (7.0, 0.0));
        cfg.ablation.use_ds = false;
        assert_eq!(assemble_generator_objective(&parts, &cfg, 0).unwrap().total_g, 7.0);

        let bad = GeneratorParts {
            cyc: f64::NAN,
            ..parts
        };
        let err = assemble_generator_objective(&bad, &cfg, 0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { term: "cyc" }));
        assert!(err.to_string().contains("cyc"));
    }

    #[test]
    fn report_serialization() {
        let cfg = default_config(Preset::Toy);
        let report = assemble_generator_objective(&GeneratorParts::default(), &cfg, 3)
            .unwrap()
            .with_discriminator(&DiscriminatorParts {
                adv: 1.0,
                r1: 0.5,
                cls: 0.0,
                real_score: 0.5,
            })
            .unwrap()
            .with_mode("latent");
        assert_eq!(report.total_d, 1.5);
        assert_eq!(report.csv_row().split(',').count(), CSV_HEADER.split(',').count());
        let back: LossReport = serde_json::from_str(&report.json_line()).unwrap();
        assert_eq!(back, report);
    }

    /// Central finite differences of a scalar function of one tensor.
    fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Vec<f64> {
        let h = 1e-3;
        (0..x.numel())
            .map(|i| {
                let mut plus = x.clone();
                plus.data_mut()[i] += h;
                let mut minus = x.clone();
                minus.data_mut()[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(analytic: &Tensor, numeric: &[f64]) {
        for (a, n) in analytic.data().iter().zip(numeric) {
            let scale = a.abs().max(n.abs()).max(1e-3);
            assert!((a - n).abs() / scale < 1e-2, "analytic {a} vs numeric {n}");
        }
    }

    type Pair = for<'t> fn(Var<'t>, Var<'t>) -> Result<Var<'t>>;

    /// Values in (-1, 1) whose pairwise differences stay away from the L1 kink.
    fn separated(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec((0.01f64..0.8, prop::bool::ANY), n),
        )
            .prop_map(|(a, offsets)| {
                let b = a
                    .iter()
                    .zip(offsets)
                    .map(|(v, (d, up))| if up { v + d } else { v - d })
                    .collect();
                (a, b)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pairwise_losses_match_finite_differences((a, b) in separated(12)) {
            let losses: [(Pair, &[usize]); 4] = [
                (style_recon_loss, &[3, 4]),
                (latent_recon_loss, &[2, 6]),
                (diversity_loss, &[1, 3, 2, 2]),
                (cycle_loss, &[1, 3, 2, 2]),
            ];
            for (loss, shape) in losses {
                let ta = t(shape, &a);
                let tb = t(shape, &b);
                let tape = Tape::new();
                let va = tape.param(ta.clone());
                let out = loss(va, tape.constant(tb.clone())).unwrap();
                prop_assert!(out.value().item() >= 0.0);
                let g = tape.gradients(out, &[va]);
                let eval = |x: &Tensor| {
                    let tape = Tape::new();
                    loss(tape.constant(x.clone()), tape.constant(tb.clone())).unwrap().value().item()
                };
                assert_close(&g[0], &numeric_grad(&ta, &eval));
                let swapped = loss(tape.constant(tb.clone()), tape.constant(ta.clone())).unwrap();
                prop_assert!((swapped.value().item() - out.value().item()).abs() < 1e-12);
            }
        }

        #[test]
        fn adversarial_losses_match_finite_differences(
            real in prop::collection::vec(-4.0f64..4.0, 5),
            fake in prop::collection::vec(-4.0f64..4.0, 5),
        ) {
            let (tr, tf) = (t(&[5], &real), t(&[5], &fake));
            let tape = Tape::new();
            let (vr, vf) = (tape.param(tr.clone()), tape.param(tf.clone()));
            let g = tape.gradients(adv_loss_d(vr, vf), &[vr, vf]);
            let d_of = |r: &Tensor, f: &Tensor| {
                let tape = Tape::new();
                adv_loss_d(tape.constant(r.clone()), tape.constant(f.clone())).value().item()
            };
            assert_close(&g[0], &numeric_grad(&tr, &|r| d_of(r, &tf)));
            assert_close(&g[1], &numeric_grad(&tf, &|f| d_of(&tr, f)));
            let gg = tape.gradients(adv_loss_g(vf), &[vf]);
            let g_of = |f: &Tensor| {
                let tape = Tape::new();
                adv_loss_g(tape.constant(f.clone())).value().item()
            };
            assert_close(&gg[0], &numeric_grad(&tf, &g_of));
        }

        #[test]
        fn classification_matches_finite_differences(
            logits in prop::collection::vec(-3.0f64..3.0, 6),
            labels in prop::collection::vec(0usize..3, 2),
        ) {
            let tl = t(&[2, 3], &logits);
            let tape = Tape::new();
            let v = tape.param(tl.clone());
            let g = tape.gradients(classification_loss(v, &labels).unwrap(), &[v]);
            let eval = |x: &Tensor| {
                let tape = Tape::new();
                classification_loss(tape.constant(x.clone()), &labels).unwrap().value().item()
            };
            assert_close(&g[0], &numeric_grad(&tl, &eval));
        }

        /// The penalty of a smooth two-layer critic, differentiated with respect to
        /// both its weights and its input.
        #[test]
        fn r1_matches_finite_differences(
            w in prop::collection::vec(-1.0f64..1.0, 12),
            xs in prop::collection::vec(-1.0f64..1.0, 8),
        ) {
            let tw = t(&[3, 4], &w);
            let tx = t(&[2, 4], &xs);
            let penalty = |wv: Var<'_>, xv: Var<'_>| -> f64 {
                let logits = xv.linear(wv, None).tanh().sum_to(&[2, 1]).reshape(&[2]);
                r1_penalty(logits, xv, 1.0).unwrap().value().item()
            };
            let tape = Tape::new();
            let (wv, xv) = (tape.param(tw.clone()), tape.param(tx.clone()));
            let logits = xv.linear(wv, None).tanh().sum_to(&[2, 1]).reshape(&[2]);
            let out = r1_penalty(logits, xv, 1.0).unwrap();
            prop_assert!(out.value().item() >= 0.0);
            let g = tape.gradients(out, &[wv, xv]);
            let by_w = |wt: &Tensor| {
                let tape = Tape::new();
                let (a, b) = (tape.constant(wt.clone()), tape.param(tx.clone()));
                penalty(a, b)
            };
            let by_x = |xt: &Tensor| {
                let tape = Tape::new();
                let (a, b) = (tape.constant(tw.clone()), tape.param(xt.clone()));
                penalty(a, b)
            };
            assert_close(&g[0], &numeric_grad(&tw, &by_w));
            assert_close(&g[1], &numeric_grad(&tx, &by_x));
        }

        #[test]
        fn diversity_enters_with_negative_sign(ds in 0.0f64..5.0, bump in 0.01f64..1.0, iter in 0usize..400) {
            let cfg = default_config(Preset::Toy);
            let parts = GeneratorParts { adv: 1.0, sty: 1.0, ds, cyc: 1.0, cls: 0.0 };
            let more = GeneratorParts { ds: ds + bump, ..parts };
            let a = assemble_generator_objective(&parts, &cfg, iter).unwrap();
            let b = assemble_generator_objective(&more, &cfg, iter).unwrap();
            prop_assert!(b.total_g < a.total_g);
            prop_assert!(((a.total_g - b.total_g) - bump * a.lambda_ds).abs() < 1e-9);
        }
    }
}
