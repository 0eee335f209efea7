use rand::Rng;

use super::{Chain, EnhanceConfig, SmoothField};
use crate::dict::Dictionary;
use crate::field::{GaussianSet, Level, Primitives};
use crate::image::Image;
use crate::raster::gradcheck::{scaled_error, GradReport};

const SIDE: usize = 8;
const PRIMS: usize = 4;
const K: usize = 3;
const ORDER: usize = 2;
const SCENES: usize = 3;
const STEP: f64 = 1e-6;
/// Minimum distance from the clamp and L1 kinks for a scene to be used.
const KINK_MARGIN: f64 = 1e-4;
const MAX_ATTEMPTS: usize = 1000;

fn random_scene(rng: &mut impl Rng) -> (Image, GaussianSet, Dictionary, Vec<f64>, [f64; 3]) {
    let img = Image::from_fn(SIDE, SIDE, 3, |_, _, _| rng.random_range(0.05..0.6));
    let mut prims = Primitives::with_capacity(PRIMS);
    for _ in 0..PRIMS {
        prims.push(
            [rng.random_range(0.0..SIDE as f64), rng.random_range(0.0..SIDE as f64)],
            [rng.random_range(0.3..1.2), rng.random_range(0.3..1.2)],
            rng.random_range(0.0..std::f64::consts::PI),
            rng.random_range(-1.0..2.0),
        );
    }
    let colors = vec![0.0; PRIMS * 3];
    let mut level = Level::from_params(SIDE, SIDE, &prims, 3, &colors).expect("valid level");
    level.freeze();
    let set = GaussianSet::new(vec![level]).expect("valid set");
    let atoms: Vec<f64> = (0..K * ORDER).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dict = Dictionary::from_atoms(K, ORDER, &atoms, 0, "gradcheck").expect("valid dictionary");
    let logits: Vec<f64> = (0..PRIMS * (K + 1)).map(|_| rng.random_range(-1.5..1.5)).collect();
    let bias = [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)];
    (img, set, dict, logits, bias)
}

fn away_from_kinks(chain: &Chain, logits: &[f64], bias: [f64; 3]) -> bool {
    let Ok(fwd) = chain.forward(logits, bias) else {
        return false;
    };
    let gt = chain.context().target_image();
    fwd.pre.data().iter().all(|&v| v.abs() > KINK_MARGIN && (v - 1.0).abs() > KINK_MARGIN)
        && fwd.out.data().iter().zip(gt.data()).all(|(o, g)| (o - g).abs() > KINK_MARGIN)
}

/// Compares the analytic gradient of the Stage-two objective with respect
/// to logits and bias against central differences on small random scenes.
pub fn chain_gradcheck(seed: u64) -> GradReport {
    chain_gradcheck_with(seed, SmoothField::default())
}

pub fn chain_gradcheck_with(seed: u64, smooth: SmoothField) -> GradReport {
    let mut rng = crate::rng::stream(seed, "gradcheck.chain");
    let cfg = EnhanceConfig {
        smooth,
        ..Default::default()
    };
    let mut report = GradReport::default();
    let mut done = 0;
    for _ in 0..MAX_ATTEMPTS {
        if done == SCENES {
            break;
        }
        let (img, set, dict, logits, bias) = random_scene(&mut rng);
        let Ok(chain) = Chain::new(&set, &dict, &img, &cfg) else {
            continue;
        };
        if !away_from_kinks(&chain, &logits, bias) {
            continue;
        }
        done += 1;
        let loss = |l: &[f64], b: [f64; 3]| chain.evaluate(l, b, false).map(|(e, _)| e.terms.total).unwrap_or(f64::NAN);
        let grads = match chain.evaluate(&logits, bias, true) {
            Ok((_, Some(g))) => g,
            _ => {
                report.record("chain/logits", f64::INFINITY);
                continue;
            }
        };
        for i in 0..logits.len() {
            let mut lp = logits.clone();
            lp[i] += STEP;
            let mut lm = logits.clone();
            lm[i] -= STEP;
            let fd = (loss(&lp, bias) - loss(&lm, bias)) / (2.0 * STEP);
            report.record("chain/logits", scaled_error(grads.logits[i], fd));
        }
        for c in 0..3 {
            let mut bp = bias;
            bp[c] += STEP;
            let mut bm = bias;
            bm[c] -= STEP;
            let fd = (loss(&logits, bp) - loss(&logits, bm)) / (2.0 * STEP);
            report.record("chain/bias", scaled_error(grads.bias[c], fd));
        }
    }
    if done < SCENES {
        report.record("chain/scenes", f64::INFINITY);
    }
    report
}
