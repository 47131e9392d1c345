use std::time::Instant;

use autoddpm::denoiser::{ArchConfig, Denoiser, TinyUNet};
use autoddpm::{Image, RandomSource};

fn main() {
    let arch = ArchConfig { zero_output_init: false, ..ArchConfig::default() };
    let net = TinyUNet::<f32>::init(&arch, &mut RandomSource::from_seed(0)).unwrap();
    println!("params {}", net.param_count());
    for size in [32usize, 64] {
        let x = Image::from_fn(size, size, |r, c| ((r * 7 + c * 3) % 11) as f64 / 11.0);
        let n = 20;
        let t0 = Instant::now();
        for _ in 0..n {
            std::hint::black_box(net.predict_eps(&x, 100).unwrap());
        }
        let fwd = t0.elapsed().as_secs_f64() / n as f64;
        let t0 = Instant::now();
        for _ in 0..n {
            std::hint::black_box(net.simple_loss_grad(&x, &x, 100).unwrap());
        }
        let fb = t0.elapsed().as_secs_f64() / n as f64;
        println!("{size}x{size}: forward {:.2} ms, forward+backward {:.2} ms", fwd * 1e3, fb * 1e3);
    }
}
