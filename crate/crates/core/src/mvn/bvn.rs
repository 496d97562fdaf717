//! Bivariate normal probabilities (Drezner–Wesolowsky with Genz's
//! refinements for |r| close to one).
#![allow(clippy::excessive_precision)]

use super::normal::{std_normal_cdf as phid, TWO_PI};

const GL6: [(f64, f64); 3] = [
    (0.1713244923791705, 0.9324695142031522),
    (0.3607615730481384, 0.6612093864662647),
    (0.4679139345726904, 0.2386191860831970),
];

const GL12: [(f64, f64); 6] = [
    (0.04717533638651177, 0.9815606342467191),
    (0.1069393259953183, 0.9041172563704750),
    (0.1600783285433464, 0.7699026741943050),
    (0.2031674267230659, 0.5873179542866171),
    (0.2334925365383547, 0.3678314989981802),
    (0.2491470458134029, 0.1252334085114692),
];

const GL20: [(f64, f64); 10] = [
    (0.01761400713915212, 0.9931285991850949),
    (0.04060142980038694, 0.9639719272779138),
    (0.06267204833410906, 0.9122344282513259),
    (0.08327674157670475, 0.8391169718222188),
    (0.1019301198172404, 0.7463319064601508),
    (0.1181945319615184, 0.6360536807265150),
    (0.1316886384491766, 0.5108670019508271),
    (0.1420961093183821, 0.3737060887154196),
    (0.1491729864726037, 0.2277858511416451),
    (0.1527533871307259, 0.07652652113349733),
];

fn rule(abs_r: f64) -> &'static [(f64, f64)] {
    if abs_r < 0.3 {
        &GL6
    } else if abs_r < 0.75 {
        &GL12
    } else {
        &GL20
    }
}

/// P(X > dh, Y > dk) for a standard bivariate normal with correlation `r`.
pub fn bvn_upper(dh: f64, dk: f64, r: f64) -> f64 {
    if dh == f64::INFINITY || dk == f64::INFINITY {
        return 0.0;
    }
    if dh == f64::NEG_INFINITY {
        return if dk == f64::NEG_INFINITY { 1.0 } else { phid(-dk) };
    }
    if dk == f64::NEG_INFINITY {
        return phid(-dh);
    }
    if r == 0.0 {
        return phid(-dh) * phid(-dk);
    }
    let h = dh;
    let mut k = dk;
    let mut hk = h * k;
    let quad = rule(r.abs());
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = 0.5 * r.asin();
        for &(w, x) in quad {
            for xs in [1.0 - x, 1.0 + x] {
                let sn = (asr * xs).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / TWO_PI + phid(-h) * phid(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let asr = -0.5 * (bs / as_ + hk);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = TWO_PI.sqrt() * phid(-b / a);
                bvn -= (-0.5 * hk).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
            }
            a *= 0.5;
            let mut acc = 0.0;
            for &(w, x) in quad {
                for xi in [1.0 - x, 1.0 + x] {
                    let xs = (a * xi) * (a * xi);
                    let asr = -0.5 * (bs / xs + hk);
                    if asr > -100.0 {
                        let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                        let rs = (1.0 - xs).sqrt();
                        let ep = (-0.5 * hk * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                        acc += w * asr.exp() * (sp - ep);
                    }
                }
            }
            bvn = (a * acc - bvn) / TWO_PI;
        }
        if r > 0.0 {
            bvn += phid(-h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 { phid(k) - phid(h) } else { phid(-h) - phid(-k) };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// P(X ≤ a, Y ≤ b) for a standard bivariate normal with correlation `r`.
pub fn bvn_lower(a: f64, b: f64, r: f64) -> f64 {
    bvn_upper(-a, -b, r)
}

/// P(l1 ≤ X ≤ u1, l2 ≤ Y ≤ u2).
pub fn bvn_rect(lower: [f64; 2], upper: [f64; 2], r: f64) -> f64 {
    let f = |a: f64, b: f64| {
        if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
            0.0
        } else {
            bvn_lower(a, b, r)
        }
    };
    let p = f(upper[0], upper[1]) - f(lower[0], upper[1]) - f(upper[0], lower[1]) + f(lower[0], lower[1]);
    p.clamp(0.0, 1.0)
}
