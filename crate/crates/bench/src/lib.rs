//! Fixtures shared by the kernel benchmarks under `benches/`.

use whitemap::{add_noise, Image, NoiseSpec, ParamMap};

/// Blocky test scene with Gaussian noise, `side × side`.
pub fn noisy_scene(side: usize, sigma: f64) -> (Image, Image) {
    let clean = Image::from_fn(side, side, |r, c| {
        let inside = (r / 16 + c / 16) % 2 == 0;
        if inside { 0.7 } else { 0.25 }
    });
    let noisy = add_noise(&clean, &NoiseSpec::gaussian(sigma, 1)).expect("valid noise spec");
    (clean, noisy)
}

/// Per-pixel map with a ramp of values in `[-3, 1]`.
pub fn ramp_params(pixels: usize) -> ParamMap {
    ParamMap::per_pixel((0..pixels).map(|i| -3.0 + 4.0 * i as f64 / pixels as f64).collect())
}
