//! Verification routines: analytic loss cases, oracle-equivalence checks,
//! finite-difference gradient verification for every layer type and both
//! losses, grid enumeration, shape contracts, and the overfit sanity run.
//!
//! The `verify` CLI subcommand, the gradient-check test target, and the
//! acceptance suite all call these; the expected values come from closed
//! forms or the independent oracles in [`crate::oracles`], never from the
//! implementation under test.

use crate::losses::{self, demos, LossSpec, Reduction};
use crate::models::{ArchSpec, Autoencoder};
use crate::nn::{Conv2d, ConvT2d, Linear, MaxPool2d};
use crate::oracles::{central_difference_gradient, max_rel_err, naive_squared_error};
use crate::perceptual::{feature_len, feature_side, random_extractor, InputNorm};
use crate::seed::rng_for;
use crate::training::{compute_loss_and_grads, compute_loss_only};
use crate::weights::WeightsContainer;
use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;

pub const GRADIENT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Formats results as pass/fail lines; returns overall success.
pub fn render_results(results: &[CheckResult]) -> (String, bool) {
    let mut out = String::new();
    let mut ok = true;
    for r in results {
        ok &= r.passed;
        out.push_str(&format!(
            "[{}] {:<44} {}\n",
            if r.passed { "pass" } else { "FAIL" },
            r.name,
            r.detail
        ));
    }
    (out, ok)
}

// ---- criterion 1: exact loss analytics ------------------------------------

pub fn loss_analytics() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let x = demos::stripes::<f64>(64, 0);
    let shifted = demos::stripes::<f64>(64, 1);
    let gray = demos::constant::<f64>(64, 0.5);
    let l_shift = losses::elementwise_loss(&x, &shifted, Reduction::Mean).unwrap();
    out.push(CheckResult::new(
        "stripe shift scores mean MSE 1.0",
        (l_shift - 1.0).abs() < 1e-12,
        format!("got {l_shift}"),
    ));
    let l_gray = losses::elementwise_loss(&x, &gray, Reduction::Mean).unwrap();
    out.push(CheckResult::new(
        "constant-gray reconstruction scores 0.25",
        (l_gray - 0.25).abs() < 1e-12,
        format!("got {l_gray}"),
    ));
    let kl0 = losses::kl_loss(&ndarray::arr1(&[0.0f64]), &ndarray::arr1(&[0.0])).unwrap();
    let kl_half = losses::kl_loss(&ndarray::arr1(&[1.0f64]), &ndarray::arr1(&[0.0])).unwrap();
    let kl_e = losses::kl_loss(&ndarray::arr1(&[0.0f64]), &ndarray::arr1(&[1.0])).unwrap();
    let expect_e = 0.5 * (std::f64::consts::E - 2.0);
    let ok = kl0.abs() < 1e-9 && (kl_half - 0.5).abs() < 1e-9 && (kl_e - expect_e).abs() < 1e-9;
    out.push(CheckResult::new(
        "kl closed forms (0, 1/2, (e-2)/2) to 1e-9",
        ok,
        format!("got {kl0}, {kl_half}, {kl_e}"),
    ));
    out
}

// ---- criterion 2: oracle equivalence --------------------------------------

pub fn oracle_equivalence() -> Vec<CheckResult> {
    let ext = random_extractor::<f64>(3);
    let (w1, b1, w2, b2) = ext.weight_arrays();
    let weights = crate::oracles::NaiveExtractorWeights {
        conv1_w: w1.as_slice().unwrap(),
        conv1_b: b1.as_slice().unwrap(),
        conv2_w: w2.as_slice().unwrap(),
        conv2_b: b2.as_slice().unwrap(),
    };
    let mut worst_pix = 0.0f64;
    let mut worst_perc = 0.0f64;
    for pair in 0..10u64 {
        let mut rng = rng_for(pair, "loss-oracle", 0);
        let x = Array3::from_shape_fn((3, 64, 64), |_| rng.random::<f64>());
        let y = Array3::from_shape_fn((3, 64, 64), |_| rng.random::<f64>());
        let ours = losses::elementwise_loss(&x, &y, Reduction::Mean).unwrap();
        let naive = naive_squared_error(x.as_slice().unwrap(), y.as_slice().unwrap(), true);
        worst_pix = worst_pix.max((ours - naive).abs() / naive.max(1e-12));
        let ours_p =
            losses::perceptual_loss(&x, &y, &ext, InputNorm::Raw01, Reduction::Mean).unwrap();
        let (fx, _) =
            crate::oracles::naive_extractor_forward(x.as_slice().unwrap(), 64, &weights);
        let (fy, _) =
            crate::oracles::naive_extractor_forward(y.as_slice().unwrap(), 64, &weights);
        let naive_p = naive_squared_error(&fx, &fy, true);
        worst_perc = worst_perc.max((ours_p - naive_p).abs() / naive_p.max(1e-12));
    }
    vec![
        CheckResult::new(
            "element-wise loss matches double-loop oracle",
            worst_pix < 1e-6,
            format!("worst rel err {worst_pix:.2e} over 10 seeded pairs"),
        ),
        CheckResult::new(
            "perceptual loss matches straight-line oracle",
            worst_perc < 1e-6,
            format!("worst rel err {worst_perc:.2e} over 10 seeded pairs"),
        ),
    ]
}

// ---- criterion 3: gradient verification ------------------------------------

fn check(name: &str, analytic: &[f64], numeric: &[f64]) -> CheckResult {
    let rel = max_rel_err(analytic, numeric);
    CheckResult::new(
        name,
        rel < GRADIENT_TOLERANCE,
        format!("max rel err {rel:.2e} over {} coords", analytic.len()),
    )
}

/// Random direction tensor for scalarizing a map output: `L = sum(y * r)`.
fn direction(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
    let mut rng = rng_for(seed, "direction", 0);
    Array4::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn conv2d_checks() -> Vec<CheckResult> {
    let mut rng = rng_for(1, "gc-conv", 0);
    let conv = Conv2d::<f64>::new(
        Array4::from_shape_fn((3, 2, 3, 3), |_| rng.random_range(-0.5..0.5)),
        Array1::from_shape_fn(3, |_| rng.random_range(-0.1..0.1)),
        2,
        1,
    );
    let x = Array4::from_shape_fn((2, 2, 7, 7), |_| rng.random_range(-1.0..1.0));
    let y = conv.forward(&x);
    let r = direction(y.dim(), 11);
    let (gx, grads) = conv.backward(&x, &r);

    let loss_for = |conv: &Conv2d<f64>, x: &Array4<f64>| (conv.forward(x) * &r).sum();
    let num_x = central_difference_gradient(
        |v| {
            let xp = Array4::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap();
            loss_for(&conv, &xp)
        },
        x.as_slice().unwrap(),
        1e-6,
    );
    let num_w = central_difference_gradient(
        |v| {
            let mut c = conv.clone();
            c.weight = Array4::from_shape_vec(c.weight.raw_dim(), v.to_vec()).unwrap();
            loss_for(&c, &x)
        },
        conv.weight.as_slice().unwrap(),
        1e-6,
    );
    let num_b = central_difference_gradient(
        |v| {
            let mut c = conv.clone();
            c.bias = Array1::from_vec(v.to_vec());
            loss_for(&c, &x)
        },
        conv.bias.as_slice().unwrap(),
        1e-6,
    );
    vec![
        check("conv2d input gradient", gx.as_slice().unwrap(), &num_x),
        check(
            "conv2d weight gradient",
            grads.weight.as_slice().unwrap(),
            &num_w,
        ),
        check("conv2d bias gradient", grads.bias.as_slice().unwrap(), &num_b),
    ]
}

fn convt2d_checks() -> Vec<CheckResult> {
    let mut rng = rng_for(2, "gc-convt", 0);
    let deconv = ConvT2d::<f64>::new(
        Array4::from_shape_fn((3, 2, 4, 4), |_| rng.random_range(-0.5..0.5)),
        Array1::from_shape_fn(2, |_| rng.random_range(-0.1..0.1)),
        2,
    );
    let u = Array4::from_shape_fn((2, 3, 3, 3), |_| rng.random_range(-1.0..1.0));
    let v = deconv.forward(&u);
    let r = direction(v.dim(), 13);
    let (gu, grads) = deconv.backward(&u, &r);

    let loss_for = |d: &ConvT2d<f64>, u: &Array4<f64>| (d.forward(u) * &r).sum();
    let num_u = central_difference_gradient(
        |vals| {
            let up = Array4::from_shape_vec(u.raw_dim(), vals.to_vec()).unwrap();
            loss_for(&deconv, &up)
        },
        u.as_slice().unwrap(),
        1e-6,
    );
    let num_w = central_difference_gradient(
        |vals| {
            let mut d = deconv.clone();
            d.weight = Array4::from_shape_vec(d.weight.raw_dim(), vals.to_vec()).unwrap();
            loss_for(&d, &u)
        },
        deconv.weight.as_slice().unwrap(),
        1e-6,
    );
    let num_b = central_difference_gradient(
        |vals| {
            let mut d = deconv.clone();
            d.bias = Array1::from_vec(vals.to_vec());
            loss_for(&d, &u)
        },
        deconv.bias.as_slice().unwrap(),
        1e-6,
    );
    vec![
        check("convT2d input gradient", gu.as_slice().unwrap(), &num_u),
        check(
            "convT2d weight gradient",
            grads.weight.as_slice().unwrap(),
            &num_w,
        ),
        check(
            "convT2d bias gradient",
            grads.bias.as_slice().unwrap(),
            &num_b,
        ),
    ]
}

fn linear_checks() -> Vec<CheckResult> {
    let mut rng = rng_for(3, "gc-lin", 0);
    let layer = Linear::<f64>::new(
        Array2::from_shape_fn((4, 5), |_| rng.random_range(-0.5..0.5)),
        Array1::from_shape_fn(4, |_| rng.random_range(-0.1..0.1)),
    );
    let x = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
    let r = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
    let (gx, grads) = layer.backward(&x, &r);
    let loss_for = |l: &Linear<f64>, x: &Array2<f64>| (l.forward(x) * &r).sum();
    let num_x = central_difference_gradient(
        |v| {
            let xp = Array2::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap();
            loss_for(&layer, &xp)
        },
        x.as_slice().unwrap(),
        1e-6,
    );
    let num_w = central_difference_gradient(
        |v| {
            let mut l = layer.clone();
            l.weight = Array2::from_shape_vec(l.weight.raw_dim(), v.to_vec()).unwrap();
            loss_for(&l, &x)
        },
        layer.weight.as_slice().unwrap(),
        1e-6,
    );
    vec![
        check("linear input gradient", gx.as_slice().unwrap(), &num_x),
        check(
            "linear weight gradient",
            grads.weight.as_slice().unwrap(),
            &num_w,
        ),
    ]
}

fn pool_and_activation_checks() -> Vec<CheckResult> {
    let mut rng = rng_for(4, "gc-pool", 0);
    let pool = MaxPool2d { kernel: 3, stride: 2 };
    let x = Array4::from_shape_fn((1, 2, 7, 7), |_| rng.random_range(-1.0..1.0));
    let (y, cache) = pool.forward(&x);
    let r = direction(y.dim(), 17);
    let gx = pool.backward(&cache, &r);
    let num_x = central_difference_gradient(
        |v| {
            let xp = Array4::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap();
            (pool.forward(&xp).0 * &r).sum()
        },
        x.as_slice().unwrap(),
        1e-7,
    );
    let mut out = vec![check(
        "maxpool input gradient",
        gx.as_slice().unwrap(),
        &num_x,
    )];

    // relu and sigmoid at points away from the kink
    let x = Array2::from_shape_fn((4, 6), |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random::<bool>() {
            v
        } else {
            -v
        }
    });
    let r2 = Array2::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0));
    let y = crate::nn::relu(&x);
    let g = crate::nn::relu_backward(&y, &r2);
    let num = central_difference_gradient(
        |v| {
            let xp = Array2::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap();
            (crate::nn::relu(&xp) * &r2).sum()
        },
        x.as_slice().unwrap(),
        1e-6,
    );
    out.push(check("relu gradient", g.as_slice().unwrap(), &num));
    let y = crate::nn::sigmoid(&x);
    let g = crate::nn::sigmoid_backward(&y, &r2);
    let num = central_difference_gradient(
        |v| {
            let xp = Array2::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap();
            (crate::nn::sigmoid(&xp) * &r2).sum()
        },
        x.as_slice().unwrap(),
        1e-6,
    );
    out.push(check("sigmoid gradient", g.as_slice().unwrap(), &num));
    out
}

fn loss_gradient_checks() -> Vec<CheckResult> {
    let mut rng = rng_for(5, "gc-loss", 0);
    let mut out = Vec::new();

    // pixel-wise loss gradient with respect to the reconstruction
    let x = Array4::from_shape_fn((2, 3, 8, 8), |_| rng.random::<f64>());
    let xh = Array4::from_shape_fn((2, 3, 8, 8), |_| rng.random::<f64>());
    let g = losses::batch_squared_error_grad(&x, &xh, Reduction::Mean);
    let num = central_difference_gradient(
        |v| {
            let xp = Array4::from_shape_vec(xh.raw_dim(), v.to_vec()).unwrap();
            losses::batch_squared_error(&x, &xp, Reduction::Mean)
        },
        xh.as_slice().unwrap(),
        1e-6,
    );
    out.push(check(
        "pixel-wise loss gradient wrt reconstruction",
        g.as_slice().unwrap(),
        &num,
    ));

    // perceptual loss gradient through the frozen extractor on 3x16x16
    let ext = random_extractor::<f64>(9);
    let x = Array4::from_shape_fn((1, 3, 16, 16), |_| rng.random::<f64>());
    let xh = Array4::from_shape_fn((1, 3, 16, 16), |_| rng.random::<f64>());
    let (f_target, _) = ext.forward_batch(&x, InputNorm::Raw01);
    let (f_recon, pcache) = ext.forward_batch(&xh, InputNorm::Raw01);
    let gfeat = losses::batch_squared_error_grad(&f_target, &f_recon, Reduction::Mean);
    let gxh = ext.backward_input(&pcache, &gfeat, InputNorm::Raw01);
    let num = central_difference_gradient(
        |v| {
            let xp = Array4::from_shape_vec(xh.raw_dim(), v.to_vec()).unwrap();
            let (f, _) = ext.forward_batch(&xp, InputNorm::Raw01);
            losses::batch_squared_error(&f_target, &f, Reduction::Mean)
        },
        xh.as_slice().unwrap(),
        1e-5,
    );
    out.push(check(
        "perceptual loss gradient through frozen extractor",
        gxh.as_slice().unwrap(),
        &num,
    ));

    // extractor feature-sum gradient with respect to the input
    let (f, cache) = ext.forward_batch(&x, InputNorm::Raw01);
    let ones = Array4::from_elem(f.raw_dim(), 1.0);
    let gx = ext.backward_input(&cache, &ones, InputNorm::Raw01);
    let num = central_difference_gradient(
        |v| {
            let xp = Array4::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap();
            ext.forward_batch(&xp, InputNorm::Raw01).0.sum()
        },
        x.as_slice().unwrap(),
        1e-5,
    );
    out.push(check(
        "extractor feature-sum gradient wrt input",
        gx.as_slice().unwrap(),
        &num,
    ));

    // kl gradients against the closed form
    let mu = Array1::from_shape_fn(6, |_| rng.random_range(-2.0..2.0));
    let lv = Array1::from_shape_fn(6, |_| rng.random_range(-2.0..2.0));
    let (_, gmu, glv) = losses::batch_kl(
        &mu.clone().insert_axis(Axis(0)),
        &lv.clone().insert_axis(Axis(0)),
        1.0,
    );
    let num_mu = central_difference_gradient(
        |v| {
            losses::kl_loss(&Array1::from_vec(v.to_vec()), &lv)
                .unwrap()
        },
        mu.as_slice().unwrap(),
        1e-6,
    );
    let num_lv = central_difference_gradient(
        |v| {
            losses::kl_loss(&mu, &Array1::from_vec(v.to_vec()))
                .unwrap()
        },
        lv.as_slice().unwrap(),
        1e-6,
    );
    out.push(check(
        "kl gradient wrt mu",
        gmu.as_slice().unwrap(),
        &num_mu,
    ));
    out.push(check(
        "kl gradient wrt logvar",
        glv.as_slice().unwrap(),
        &num_lv,
    ));
    out
}

/// Tiny architecture with a 16x16 input for composite checks.
fn micro_arch() -> ArchSpec {
    ArchSpec {
        input_size: 16,
        enc_channels: vec![4, 8],
        dec_entry_channels: 16,
        dec_channels: vec![4, 3],
        dec_kernels: vec![6, 6],
    }
}

fn decode_wrt_z_check() -> CheckResult {
    let model = Autoencoder::<f64>::build(ArchSpec::tiny64(), 16, false, 3).unwrap();
    let mut rng = rng_for(6, "gc-dec", 0);
    let z = Array2::from_shape_fn((1, 16), |_| rng.random_range(-1.0..1.0));
    let (y, cache) = model.decode_batch_cached(&z);
    let r = direction(y.dim(), 19);
    let (gz, _) = model.decoder_backward(&cache, &r);
    let num = central_difference_gradient(
        |v| {
            let zp = Array2::from_shape_vec(z.raw_dim(), v.to_vec()).unwrap();
            (model.decode_batch(&zp) * &r).sum()
        },
        z.as_slice().unwrap(),
        1e-6,
    );
    check("decode gradient wrt z", gz.as_slice().unwrap(), &num)
}

/// Serializes assembled gradients with the same names and order as the
/// model's own container.
fn grads_container(
    model: &Autoencoder<f64>,
    comp: &crate::training::GradComputation<f64>,
) -> WeightsContainer {
    let mut c = WeightsContainer::new();
    let enc = comp.enc.as_ref().expect("encoder grads present");
    for (i, g) in enc.convs.iter().enumerate() {
        c.add(&format!("enc.conv{i}.weight"), &g.weight);
        c.add(&format!("enc.conv{i}.bias"), &g.bias);
    }
    c.add("enc.mu.weight", &enc.mu_head.weight);
    c.add("enc.mu.bias", &enc.mu_head.bias);
    c.add("enc.logvar.weight", &enc.logvar_head.weight);
    c.add("enc.logvar.bias", &enc.logvar_head.bias);
    c.add("dec.entry.weight", &comp.dec.entry.weight);
    c.add("dec.entry.bias", &comp.dec.entry.bias);
    for (i, g) in comp.dec.deconvs.iter().enumerate() {
        c.add(&format!("dec.deconv{i}.weight"), &g.weight);
        c.add(&format!("dec.deconv{i}.bias"), &g.bias);
    }
    let _ = model;
    c
}

/// End-to-end check: the assembled objective gradient (either loss, with
/// reparameterization and KL in play) against finite differences on random
/// parameter coordinates.
fn assembled_objective_checks() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut rng = rng_for(7, "gc-full", 0);
    let x = Array4::from_shape_fn((2, 3, 16, 16), |_| rng.random::<f64>());

    for (label, perceptual, variational) in [
        ("pixel-wise VAE objective", false, true),
        ("perceptual AE objective", true, false),
    ] {
        let model = Autoencoder::<f64>::build(micro_arch(), 8, variational, 21).unwrap();
        let spec = if perceptual {
            LossSpec::perceptual(
                Reduction::Mean,
                0.0,
                std::sync::Arc::new(random_extractor::<f64>(31)),
                InputNorm::Raw01,
            )
            .unwrap()
        } else {
            LossSpec::pixelwise(Reduction::Mean, 0.5).unwrap()
        };
        let eps = if variational {
            Some(Array2::from_shape_fn((2, 8), |_| {
                rng.random_range(-1.0..1.0)
            }))
        } else {
            None
        };
        let comp =
            compute_loss_and_grads(&model, &x, &spec, None, eps.as_ref(), false).unwrap();
        let analytic = grads_container(&model, &comp);
        let base = model.to_container();

        // probe 8 random coordinates of every parameter tensor
        let mut analytic_vals = Vec::new();
        let mut numeric_vals = Vec::new();
        let h = 1e-5;
        for name in base.names().map(str::to_string).collect::<Vec<_>>() {
            let entry = base.entry(&name).unwrap().clone();
            let gentry = analytic.entry(&name).unwrap();
            for _ in 0..8.min(entry.values.len()) {
                let idx = rng.random_range(0..entry.values.len());
                let mut probe = |delta: f64| -> f64 {
                    let mut c = base.clone();
                    // rebuild the container with one perturbed coordinate
                    let mut perturbed = WeightsContainer::new();
                    for n2 in c.names().map(str::to_string).collect::<Vec<_>>() {
                        let e2 = c.entry(&n2).unwrap().clone();
                        let mut vals = e2.values.clone();
                        if n2 == name {
                            vals[idx] += delta;
                        }
                        let arr =
                            ndarray::ArrayD::from_shape_vec(e2.shape.clone(), vals).unwrap();
                        perturbed.add(&n2, &arr);
                    }
                    let mut m = model.clone();
                    m.load_container(std::path::Path::new("gc"), &perturbed).unwrap();
                    c = perturbed;
                    let _ = &c;
                    compute_loss_only(&m, &x, &spec, None, eps.as_ref(), false)
                        .unwrap()
                };
                let plus = probe(h);
                let minus = probe(-h);
                numeric_vals.push((plus - minus) / (2.0 * h));
                analytic_vals.push(gentry.values[idx]);
            }
        }
        out.push(check(label, &analytic_vals, &numeric_vals));
    }
    out
}

pub fn gradient_checks() -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.extend(conv2d_checks());
    out.extend(convt2d_checks());
    out.extend(linear_checks());
    out.extend(pool_and_activation_checks());
    out.extend(loss_gradient_checks());
    out.push(decode_wrt_z_check());
    out.extend(assembled_objective_checks());
    out
}

// ---- criterion 4: grid enumeration -----------------------------------------

pub fn grid_enumeration() -> CheckResult {
    let grid = crate::predictors::enumerate_mlp_grid(32, 2);
    let mut unique = std::collections::BTreeSet::new();
    let mut all_valid = true;
    for cfg in &grid {
        all_valid &= cfg.validate().is_ok();
        unique.insert(format!("{cfg:?}"));
    }
    let passed = grid.len() == 36 && unique.len() == 36 && all_valid;
    CheckResult::new(
        "mlp grid enumerates exactly 36 unique configs",
        passed,
        format!("{} configs, {} unique", grid.len(), unique.len()),
    )
}

// ---- criterion 5: shape contracts -------------------------------------------

pub fn shape_contracts() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let ext = random_extractor::<f32>(5);
    let x64 = Array3::<f32>::from_elem((3, 64, 64), 0.3);
    let f64map = crate::perceptual::extract_features(&ext, &x64, InputNorm::Raw01).unwrap();
    out.push(CheckResult::new(
        "extractor maps 3x64x64 to 192x7x7 (m = 9408)",
        f64map.dim() == (192, 7, 7) && feature_len(64) == 9408,
        format!("got {:?}", f64map.dim()),
    ));
    let x96 = Array3::<f32>::from_elem((3, 96, 96), 0.3);
    let f96 = crate::perceptual::extract_features(&ext, &x96, InputNorm::Raw01).unwrap();
    out.push(CheckResult::new(
        "extractor maps 3x96x96 to 192x11x11 (m = 23232)",
        f96.dim() == (192, 11, 11) && feature_len(96) == 23232 && feature_side(96) == 11,
        format!("got {:?}", f96.dim()),
    ));

    let mut rng = rng_for(8, "tile-check", 0);
    let mut all_ok = true;
    for _ in 0..100 {
        let mut img = crate::datasets::ImageU8::zeros(32, 32);
        rng.fill(&mut img.data[..]);
        let tiled = crate::datasets::svhn_tile(&img).unwrap();
        for (qr, qc) in [(0usize, 0usize), (0, 32), (32, 0), (32, 32)] {
            for c in 0..3 {
                for r in 0..32 {
                    for col in 0..32 {
                        all_ok &= tiled.get(c, r + qr, col + qc) == img.get(c, r, col);
                    }
                }
            }
        }
    }
    out.push(CheckResult::new(
        "svhn tile quadrant identity on 100 random images",
        all_ok,
        "all quadrants equal the source".to_string(),
    ));
    out
}

// ---- criterion 6: overfit sanity ---------------------------------------------

/// Trains a tiny pixel-wise autoencoder on a 16-image synthetic batch and
/// reports the final training MSE; the bound is 1e-2 within 500 epochs.
pub fn overfit_sanity() -> CheckResult {
    use crate::datasets::{generate_lander_collection, SceneConfig};
    let cfg = SceneConfig {
        rollouts: 2,
        frames_per_rollout: 16,
        ..Default::default()
    };
    // one rollout (16 frames) lands in the autoencoder part
    let bundle = generate_lander_collection(cfg, 4).unwrap();
    let mut model = Autoencoder::<f32>::build(ArchSpec::tiny64(), 16, false, 9).unwrap();
    let spec = LossSpec::pixelwise(Reduction::Mean, 0.0).unwrap();
    let train_cfg = crate::training::TrainConfig {
        lr: 2e-3,
        batch_size: 16,
        max_epochs: 500,
        patience: 500,
        seed: 5,
        max_batches_per_epoch: None,
        max_val_batches: None,
    };
    match crate::training::train_autoencoder(&mut model, &bundle, &spec, &train_cfg) {
        Ok(run) => {
            let final_train = run.history.last().map(|e| e.train_loss).unwrap_or(f64::NAN);
            let best_train = run
                .history
                .iter()
                .map(|e| e.train_loss)
                .fold(f64::INFINITY, f64::min);
            CheckResult::new(
                "tiny pixel-wise AE overfits 16 images to MSE < 1e-2",
                best_train < 1e-2,
                format!(
                    "best train MSE {best_train:.2e} (final {final_train:.2e}) in {} epochs",
                    run.history.len()
                ),
            )
        }
        Err(e) => CheckResult::new(
            "tiny pixel-wise AE overfits 16 images to MSE < 1e-2",
            false,
            format!("training failed: {e}"),
        ),
    }
}

/// The fast checks: loss analytics, oracle equivalence, gradients, grid,
/// shapes. Excludes the overfit run.
pub fn run_fast_checks() -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.extend(loss_analytics());
    out.extend(oracle_equivalence());
    out.extend(gradient_checks());
    out.push(grid_enumeration());
    out.extend(shape_contracts());
    out
}

/// Everything, including the overfit sanity run.
pub fn run_all_checks() -> Vec<CheckResult> {
    let mut out = run_fast_checks();
    out.push(overfit_sanity());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_checks_all_pass() {
        let results = run_fast_checks();
        let (rendered, ok) = render_results(&results);
        assert!(ok, "\n{rendered}");
    }
}
