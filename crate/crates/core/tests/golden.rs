// Reference digits are kept at full mpmath precision.
#![allow(clippy::excessive_precision)]

mod common;

use common::{check_golden, random_latent};
use factorvid::conditioning::{make_image_conditioning, noise_augment};
use factorvid::denoiser::{CondHandle, DenoiserRequest, GaussianOracle, ToyConfig, ToyFactorizedNet};
use factorvid::guidance::{default_image_spec, default_video_spec};
use factorvid::sampler::{generate_factorized, SamplerConfig};
use factorvid::schedule::Snr;
use factorvid::{NoiseSchedule, Shape};

fn base() -> NoiseSchedule {
    NoiseSchedule::quad(1000, 8.5e-4, 1.2e-2).unwrap()
}

fn rescaled() -> NoiseSchedule {
    base().rescale_zero_terminal_snr().unwrap()
}

/// Reference values computed at 50 significant digits.
#[test]
fn schedule_matches_high_precision_reference() {
    let s = base();
    let close = |a: f64, b: f64, tol: f64| assert!((a - b).abs() <= tol * b.abs(), "{a} vs {b}");
    close(s.signal(1).unwrap(), 0.99957490964909678449, 1e-15);
    close(s.signal(500).unwrap(), 0.52694368812660410694, 1e-13);
    close(s.signal(1000).unwrap(), 0.068264914217167521494, 1e-12);
    close(s.snr(1).unwrap().value(), 1175.4705882352941176, 1e-12);
    close(s.snr(1000).unwrap().value(), 0.0046819167061579586, 1e-11);
    let r = rescaled();
    close(r.signal(500).unwrap(), 0.49229987462536021035, 1e-13);
    assert_eq!(r.snr(1000).unwrap(), Snr::Finite(0.0));
}

/// ᾱ_t computed independently as exp(Σ log1p(−β_i)) with compensated summation.
#[test]
fn schedule_matches_log_domain_product() {
    let s = base();
    let n = 1000;
    let (a, b) = (8.5e-4f64.sqrt(), 1.2e-2f64.sqrt());
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for t in 1..=n {
        let r = a + (t - 1) as f64 / (n - 1) as f64 * (b - a);
        let y = (-(r * r)).ln_1p() - comp;
        let next = sum + y;
        comp = (next - sum) - y;
        sum = next;
        let want = (0.5 * sum).exp();
        let got = s.signal(t).unwrap();
        assert!((got - want).abs() <= 1e-12 * want, "t={t}: {got} vs {want}");
    }
}

#[test]
fn noise_augment_golden() {
    let image = random_latent(Shape::new(1, 4, 4, 4).unwrap(), 3);
    let pack = make_image_conditioning(&image, 5).unwrap();
    let aug = noise_augment(&pack, &rescaled(), 100, 17).unwrap();
    check_golden("noise_augment_t100", aug.cond_latent(), 1e-12);
    assert_eq!(aug.frame_mask(), pack.frame_mask());
    for t in 1..5 {
        assert!(aug.cond_latent().frame(t).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn toy_forward_golden() {
    let mut net = ToyFactorizedNet::new(ToyConfig { channels: 2, hidden: 4, seed: 5 }).unwrap();
    // Move away from the identity initialisation so the temporal path contributes.
    for (i, (_, p)) in net.trainable_mut().into_iter().enumerate() {
        for (j, v) in p.iter_mut().enumerate() {
            *v += 0.05 * (((i * 31 + j * 7) % 13) as f64 - 6.0) / 6.0;
        }
    }
    let shape = Shape::new(4, 2, 4, 4).unwrap();
    let x = random_latent(shape, 11);
    let image = random_latent(shape.with_frames(1), 12);
    let pack = make_image_conditioning(&image, 4).unwrap();
    let req = DenoiserRequest::new(&x, &pack, 640, CondHandle::Full).unwrap();
    let out = net.forward(&req, &rescaled()).unwrap();
    check_golden("toy_forward_t4_c2_h4_w4", &out, 1e-12);
}

#[test]
fn generate_golden() {
    let oracle = GaussianOracle::isotropic(0.5, 0.25).unwrap();
    let cfg = SamplerConfig { num_inference_steps: 50, seed: 21, ..Default::default() };
    let shape = Shape::new(4, 2, 3, 3).unwrap();
    let out = generate_factorized(
        &cfg,
        &cfg.with_seed(22),
        &rescaled(),
        &oracle,
        &default_image_spec(),
        &default_video_spec(),
        shape,
    )
    .unwrap();
    check_golden("generate_image", &out.image, 1e-12);
    check_golden("generate_video", &out.video, 1e-12);
}

/// Scalar DDIM written out directly, for a prior the oracle knows exactly.
fn scalar_ddim(sched: &NoiseSchedule, steps: usize, mu: f64, sigma2: f64, z: f64) -> f64 {
    let n_train = sched.num_steps();
    let ts: Vec<usize> =
        (0..steps).map(|k| (n_train as f64 - k as f64 * n_train as f64 / steps as f64).round() as usize).collect();
    let mut x = z;
    for (i, &t) in ts.iter().enumerate() {
        let (s, n) = (sched.signal_coefs()[t - 1], sched.noise_coefs()[t - 1]);
        let x0 = if s == 0.0 { mu } else { (mu * n * n + s * sigma2 * x) / (s * s * sigma2 + n * n) };
        let eps = (x - s * x0) / n;
        match ts.get(i + 1) {
            Some(&t2) => x = sched.signal_coefs()[t2 - 1] * x0 + sched.noise_coefs()[t2 - 1] * eps,
            None => return x0,
        }
    }
    unreachable!()
}

#[test]
fn generate_matches_scalar_recursion() {
    let sched = rescaled();
    let oracle = GaussianOracle::isotropic(0.5, 0.25).unwrap();
    let cfg = SamplerConfig { num_inference_steps: 50, seed: 21, ..Default::default() };
    let shape = Shape::new(4, 2, 3, 3).unwrap();
    let out = generate_factorized(
        &cfg,
        &cfg.with_seed(22),
        &sched,
        &oracle,
        &default_image_spec(),
        &default_video_spec(),
        shape,
    )
    .unwrap();
    let z_img = factorvid::rng::normal_vec(&mut factorvid::rng::seeded(21), shape.frame_len());
    let z_vid = factorvid::rng::normal_vec(&mut factorvid::rng::seeded(22), shape.len());
    for (got, z) in out.image.data().iter().zip(z_img).chain(out.video.data().iter().zip(z_vid)) {
        let want = scalar_ddim(&sched, 50, 0.5, 0.25, z);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn noise_augment_is_forward_process_on_present_frames() {
    let sched = rescaled();
    let image = random_latent(Shape::new(1, 4, 4, 4).unwrap(), 3);
    let pack = make_image_conditioning(&image, 5).unwrap();
    let aug = noise_augment(&pack, &sched, 100, 17).unwrap();
    let (s, n) = (sched.signal_coefs()[99], sched.noise_coefs()[99]);
    let z = factorvid::rng::normal_vec(&mut factorvid::rng::seeded(17), 64);
    for ((a, x), z) in aug.cond_latent().frame(0).iter().zip(image.data()).zip(z) {
        assert!((a - (s * x + n * z)).abs() < 1e-15);
    }
}
