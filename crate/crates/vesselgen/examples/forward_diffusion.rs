//! Walk a clean mask through the forward noising process and check the
//! closed-form moments empirically.
//!
//! ```bash
//! cargo run --release -p vesselgen --example forward_diffusion
//! ```

use vesselgen::diffusion::{forward_diffuse, masks_to_tensor};
use vesselgen::mask::write_gray_png;
use vesselgen::rng::{fill_standard_normal, rng_from_seed};
use vesselgen::schedule::NoiseSchedule;
use vesselgen::synth::{generate_mask, VesselTreeConfig};
use vesselgen::tensor::Tensor;

fn main() -> vesselgen::Result<()> {
    let out = std::path::Path::new("target/example-out/forward_diffusion");
    std::fs::create_dir_all(out).map_err(|e| vesselgen::Error::io(out, e))?;

    let schedule = NoiseSchedule::linear(100, 1e-3, 0.2)?;
    let mask = generate_mask(&VesselTreeConfig { seed: 7, ..Default::default() })?;
    let raw = masks_to_tensor(&[&mask])?;
    let x0 = raw.scale(2.0).sub(&Tensor::scalar(1.0))?;
    let mut rng = rng_from_seed(1);

    // snapshots along the chain, artery channel as grayscale
    for t in [0usize, 10, 25, 50, 99] {
        let mut eps = vec![0.0f32; x0.len()];
        fill_standard_normal(&mut rng, &mut eps);
        let eps = Tensor::from_vec(x0.shape().to_vec(), eps)?;
        let x_t = forward_diffuse(&x0, &[t], &eps, &schedule)?;
        let plane = 32 * 32;
        write_gray_png(
            &out.join(format!("noised_t{t:03}.png")),
            32,
            32,
            &x_t.values()[..plane],
        )?;
        println!(
            "t = {t:>3}: alpha_bar = {:.5}, expected std of noise term = {:.4}",
            schedule.alpha_bar(t),
            (1.0 - schedule.alpha_bar(t)).sqrt()
        );
    }

    // moment check at mid-chain: mean -> sqrt(ab)*x0, var -> 1 - ab
    let t = 50usize;
    let zeros = Tensor::zeros(&[1, 2, 8, 8]);
    let draws = 100_000;
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    let mut eps = vec![0.0f32; zeros.len()];
    for _ in 0..draws {
        fill_standard_normal(&mut rng, &mut eps);
        let e = Tensor::from_vec(zeros.shape().to_vec(), eps.clone())?;
        let x_t = forward_diffuse(&zeros, &[t], &e, &schedule)?;
        for &v in x_t.values() {
            sum += v as f64;
            sum_sq += (v as f64) * (v as f64);
        }
    }
    let n = (draws * zeros.len()) as f64;
    let mean = sum / n;
    let var = sum_sq / n - mean * mean;
    let expect = 1.0 - schedule.alpha_bar(t);
    println!("\nmoment check at t = {t} over {draws} draws (x0 = 0):");
    println!("  empirical mean {mean:+.5} (expect 0)");
    println!("  empirical var  {var:.5} (expect {expect:.5}, off by {:.2}%)",
             100.0 * (var - expect).abs() / expect);
    println!("\nsnapshots in {}", out.display());
    Ok(())
}
