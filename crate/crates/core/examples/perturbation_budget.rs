//! Shows the L-infinity clip contract: whatever the generator outputs, the
//! adversarial search never leaves the epsilon ball or the pixel range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siam_oneshot::generator::{apply, Perturbation};
use siam_oneshot::image::Image;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for eps in [8.0, 16.0] {
        let mut worst = 0.0f32;
        for _ in 0..20 {
            let search = Image::from_vec(3, 255, 255, (0..3 * 255 * 255).map(|_| rng.gen_range(0.0..1.0)).collect())?;
            let mut p = Perturbation::zeros(255, eps);
            p.delta.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            let adv = apply(&search, &p)?;
            for (a, s) in adv.data.iter().zip(&search.data) {
                assert!((0.0..=1.0).contains(a));
                worst = worst.max((a - s).abs());
            }
        }
        println!("eps {eps:>4}: max deviation {:.6} (bound {:.6})", worst, eps / 255.0);
    }
    Ok(())
}
