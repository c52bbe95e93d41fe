//! The one-parameter weight family phi_p = phi^{-1} (phi W phi~)^{1/p},
//! weighted norms, the W-weighted bilinear pairing, and embedding-chain
//! checks on normalized families.

use nalgebra::DVector;

use crate::error::SpaceError;

/// Exponent p in [1, inf], with infinity as an explicit symbolic value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub fn new(p: f64) -> Result<Self, SpaceError> {
        if p.is_infinite() && p > 0.0 {
            Ok(Exponent::Infinity)
        } else if p.is_finite() && p >= 1.0 {
            Ok(Exponent::Finite(p))
        } else {
            Err(SpaceError::ExponentOutOfRange(p))
        }
    }

    pub fn parse(s: &str) -> Result<Self, SpaceError> {
        match s.trim() {
            "inf" | "infinity" | "oo" => Ok(Exponent::Infinity),
            other => other
                .parse::<f64>()
                .map_err(|_| SpaceError::ExponentOutOfRange(f64::NAN))
                .and_then(Exponent::new),
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Exponent::Infinity)
    }

    pub fn value(&self) -> f64 {
        match self {
            Exponent::Finite(p) => *p,
            Exponent::Infinity => f64::INFINITY,
        }
    }

    /// Conjugate exponent: 1/p + 1/p' = 1.
    pub fn conjugate(&self) -> Exponent {
        match self {
            Exponent::Infinity => Exponent::Finite(1.0),
            Exponent::Finite(p) if *p == 1.0 => Exponent::Infinity,
            Exponent::Finite(p) => Exponent::Finite(p / (p - 1.0)),
        }
    }

    /// Key used in p-indexed report tables ("1", "1.5", "2", "inf", ...).
    pub fn label(&self) -> String {
        match self {
            Exponent::Infinity => "inf".to_string(),
            Exponent::Finite(p) => {
                if (p - p.round()).abs() < 1e-12 {
                    format!("{}", p.round() as i64)
                } else {
                    format!("{p}")
                }
            }
        }
    }

    fn inv(&self) -> f64 {
        match self {
            Exponent::Infinity => 0.0,
            Exponent::Finite(p) => 1.0 / p,
        }
    }
}

/// L^p(phi_p) together with its dual weight and normalization state.
#[derive(Debug, Clone)]
pub struct WeightedSpace {
    pub p: Exponent,
    /// phi_p, the norm weight.
    pub weight: DVector<f64>,
    /// phi~_{p'}, the weight of the dual space.
    pub dual_weight: DVector<f64>,
    /// Z = sum phi W phi~ nu after any normalization.
    pub z: f64,
    pub normalized: bool,
    pub nu: DVector<f64>,
    pub w: DVector<f64>,
    pub phi: DVector<f64>,
    pub phi_tilde: DVector<f64>,
}

fn check_positive(name: &'static str, v: &DVector<f64>) -> Result<(), SpaceError> {
    for (i, &x) in v.iter().enumerate() {
        if !(x > 0.0) || !x.is_finite() {
            return Err(SpaceError::NonPositiveInput {
                what: name,
                index: i,
                value: x,
            });
        }
    }
    Ok(())
}

/// Build L^p(phi_p). Normalization rescales phi~ (not phi) so that
/// Z = sum phi W phi~ nu equals one, preserving phi(x0) = 1.
pub fn make_weights(
    phi: &DVector<f64>,
    phi_tilde: &DVector<f64>,
    w: &DVector<f64>,
    nu: &DVector<f64>,
    p: Exponent,
    normalize: bool,
) -> Result<WeightedSpace, SpaceError> {
    check_positive("phi", phi)?;
    check_positive("phi_tilde", phi_tilde)?;
    check_positive("W", w)?;
    check_positive("nu", nu)?;
    let n = phi.len();
    for len in [phi_tilde.len(), w.len(), nu.len()] {
        if len != n {
            return Err(SpaceError::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    let z0: f64 = (0..n).map(|i| phi[i] * w[i] * phi_tilde[i] * nu[i]).sum();
    let phi_tilde = if normalize {
        phi_tilde / z0
    } else {
        phi_tilde.clone()
    };
    let z = if normalize { 1.0 } else { z0 };
    let inv_p = p.inv();
    let inv_q = p.conjugate().inv();
    let product = DVector::from_fn(n, |i, _| phi[i] * w[i] * phi_tilde[i]);
    let weight = DVector::from_fn(n, |i, _| product[i].powf(inv_p) / phi[i]);
    let dual_weight = DVector::from_fn(n, |i, _| product[i].powf(inv_q) / phi_tilde[i]);
    Ok(WeightedSpace {
        p,
        weight,
        dual_weight,
        z,
        normalized: normalize,
        nu: nu.clone(),
        w: w.clone(),
        phi: phi.clone(),
        phi_tilde,
    })
}

/// A consistent family over several exponents (shared normalization).
pub fn make_family(
    phi: &DVector<f64>,
    phi_tilde: &DVector<f64>,
    w: &DVector<f64>,
    nu: &DVector<f64>,
    ps: &[Exponent],
    normalize: bool,
) -> Result<Vec<WeightedSpace>, SpaceError> {
    ps.iter()
        .map(|&p| make_weights(phi, phi_tilde, w, nu, p, normalize))
        .collect()
}

/// `(sum_x |f phi_p|^p nu)^{1/p}`, or `max |f phi_inf|` at p = inf.
pub fn weighted_norm(f: &DVector<f64>, sp: &WeightedSpace) -> f64 {
    match sp.p {
        Exponent::Infinity => f
            .iter()
            .zip(sp.weight.iter())
            .map(|(a, w)| (a * w).abs())
            .fold(0.0, f64::max),
        Exponent::Finite(p) => {
            let s: f64 = f
                .iter()
                .zip(sp.weight.iter())
                .zip(sp.nu.iter())
                .map(|((a, w), nu)| (a * w).abs().powf(p) * nu)
                .sum();
            s.powf(1.0 / p)
        }
    }
}

/// Norm in the dual space L^{p'}(phi~_{p'}).
pub fn dual_norm(g: &DVector<f64>, sp: &WeightedSpace) -> f64 {
    match sp.p.conjugate() {
        Exponent::Infinity => g
            .iter()
            .zip(sp.dual_weight.iter())
            .map(|(a, w)| (a * w).abs())
            .fold(0.0, f64::max),
        Exponent::Finite(q) => {
            let s: f64 = g
                .iter()
                .zip(sp.dual_weight.iter())
                .zip(sp.nu.iter())
                .map(|((a, w), nu)| (a * w).abs().powf(q) * nu)
                .sum();
            s.powf(1.0 / q)
        }
    }
}

/// The bilinear pairing `<g, f> = sum_x g(x) W(x) f(x) nu(x)`.
pub fn pairing(g: &DVector<f64>, f: &DVector<f64>, w: &DVector<f64>, nu: &DVector<f64>) -> f64 {
    g.iter()
        .zip(f.iter())
        .zip(w.iter().zip(nu.iter()))
        .map(|((a, b), (w, nu))| a * b * w * nu)
        .sum()
}

/// A function achieving equality in the Hoelder bound
/// `|<g, f>| <= ||g||_{p', phi~_{p'}} ||f||_{p, phi_p}`.
pub fn holder_extremizer(f: &DVector<f64>, sp: &WeightedSpace) -> DVector<f64> {
    let n = f.len();
    match sp.p {
        // p = inf: mass on the maximizing node of |f phi_inf|
        Exponent::Infinity => {
            let mut best = 0usize;
            let mut best_val = -1.0;
            for i in 0..n {
                let v = (f[i] * sp.weight[i]).abs();
                if v > best_val {
                    best_val = v;
                    best = i;
                }
            }
            let mut g = DVector::zeros(n);
            // g W f nu = |f phi_p| at the peak requires g = sign(f) phi_inf / (W nu)
            g[best] = f[best].signum() * sp.weight[best] / (sp.w[best] * sp.nu[best]);
            g
        }
        Exponent::Finite(p) => {
            // g phi~_{p'} = sign(f phi_p) |f phi_p|^{p-1}  (up to scale)
            DVector::from_fn(n, |i, _| {
                let t = f[i] * sp.weight[i];
                t.signum() * t.abs().powf(p - 1.0) / sp.dual_weight[i]
            })
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ChainReport {
    pub labels: Vec<String>,
    pub norms: Vec<f64>,
    pub monotone: bool,
    pub worst_violation: f64,
    /// When the p=1 and p=inf norms coincide, |f|/phi must be constant;
    /// the constant is reported here.
    pub equality_constant: Option<f64>,
}

/// Verify the norm chain `||f||_1 <= ... <= ||f||_p <= ... <= ||f||_inf`
/// over a normalized family sorted by exponent.
pub fn embedding_chain(f: &DVector<f64>, family: &[WeightedSpace]) -> Result<ChainReport, SpaceError> {
    for sp in family {
        if !sp.normalized || (sp.z - 1.0).abs() > 1e-12 {
            return Err(SpaceError::NotNormalized(sp.z));
        }
    }
    let mut sorted: Vec<&WeightedSpace> = family.iter().collect();
    sorted.sort_by(|a, b| a.p.value().partial_cmp(&b.p.value()).unwrap());
    let norms: Vec<f64> = sorted.iter().map(|sp| weighted_norm(f, sp)).collect();
    let labels: Vec<String> = sorted.iter().map(|sp| sp.p.label()).collect();
    let mut worst: f64 = 0.0;
    for w in norms.windows(2) {
        worst = worst.min(w[1] - w[0]);
    }
    let monotone = worst >= -1e-12;
    let equality_constant = match (norms.first(), norms.last()) {
        (Some(&lo), Some(&hi))
            if sorted.first().map(|s| s.p.value()) == Some(1.0)
                && sorted.last().map(|s| s.p.is_infinite()).unwrap_or(false)
                && (hi - lo).abs() <= 1e-10 * hi.max(1e-300) =>
        {
            // equality forces |f| = c phi
            let c = (0..f.len())
                .map(|i| (f[i] / sorted[0].phi[i]).abs())
                .sum::<f64>()
                / f.len() as f64;
            let uniform = (0..f.len())
                .all(|i| ((f[i] / sorted[0].phi[i]).abs() - c).abs() <= 1e-8 * c.max(1e-300));
            uniform.then_some(c)
        }
        _ => None,
    };
    Ok(ChainReport {
        labels,
        norms,
        monotone,
        worst_violation: worst,
        equality_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rig(n: usize, seed: u64) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = |rng: &mut ChaCha8Rng| {
            DVector::from_fn(n, |_, _| 0.2 + rng.random::<f64>() * 2.0)
        };
        (pos(&mut rng), pos(&mut rng), pos(&mut rng), pos(&mut rng))
    }

    #[test]
    fn infinity_weight_ignores_w_and_phi_tilde() {
        let (phi, pt1, w1, nu) = rig(12, 1);
        let (_, pt2, w2, _) = rig(12, 2);
        let a = make_weights(&phi, &pt1, &w1, &nu, Exponent::Infinity, false).unwrap();
        let b = make_weights(&phi, &pt2, &w2, &nu, Exponent::Infinity, false).unwrap();
        for i in 0..12 {
            assert_relative_eq!(a.weight[i], 1.0 / phi[i], epsilon = 1e-14);
            assert_relative_eq!(b.weight[i], 1.0 / phi[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn p2_symmetric_weight_is_sqrt_w() {
        let (phi, _, w, nu) = rig(9, 3);
        let sp = make_weights(&phi, &phi, &w, &nu, Exponent::Finite(2.0), false).unwrap();
        for i in 0..9 {
            assert_relative_eq!(sp.weight[i], w[i].sqrt(), epsilon = 1e-13);
        }
    }

    #[test]
    fn p1_weight_is_w_phi_tilde_independent_of_phi() {
        let (phi_a, pt, w, nu) = rig(10, 4);
        let (phi_b, _, _, _) = rig(10, 5);
        let a = make_weights(&phi_a, &pt, &w, &nu, Exponent::Finite(1.0), false).unwrap();
        let b = make_weights(&phi_b, &pt, &w, &nu, Exponent::Finite(1.0), false).unwrap();
        for i in 0..10 {
            assert_relative_eq!(a.weight[i], w[i] * pt[i], epsilon = 1e-13);
            assert_relative_eq!(a.weight[i], b.weight[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn phi_has_unit_norm_in_every_normalized_space() {
        let (phi, pt, w, nu) = rig(14, 6);
        for p in [
            Exponent::Finite(1.0),
            Exponent::Finite(1.5),
            Exponent::Finite(2.0),
            Exponent::Finite(3.0),
            Exponent::Infinity,
        ] {
            let sp = make_weights(&phi, &pt, &w, &nu, p, true).unwrap();
            assert_relative_eq!(weighted_norm(&phi, &sp), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn phi_norm_is_z_to_the_inv_p_without_normalization() {
        let (phi, pt, w, nu) = rig(8, 7);
        let z: f64 = (0..8).map(|i| phi[i] * w[i] * pt[i] * nu[i]).sum();
        for p in [1.0, 1.5, 2.0, 3.0] {
            let sp = make_weights(&phi, &pt, &w, &nu, Exponent::Finite(p), false).unwrap();
            assert_relative_eq!(weighted_norm(&phi, &sp), z.powf(1.0 / p), epsilon = 1e-12);
        }
        let sp = make_weights(&phi, &pt, &w, &nu, Exponent::Infinity, false).unwrap();
        assert_relative_eq!(weighted_norm(&phi, &sp), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_function_has_zero_norm() {
        let (phi, pt, w, nu) = rig(5, 8);
        let sp = make_weights(&phi, &pt, &w, &nu, Exponent::Finite(2.0), true).unwrap();
        assert_eq!(weighted_norm(&DVector::zeros(5), &sp), 0.0);
    }

    #[test]
    fn p2_norm_squared_matches_brute_force() {
        let (phi, pt, w, nu) = rig(11, 9);
        let sp = make_weights(&phi, &pt, &w, &nu, Exponent::Finite(2.0), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f = DVector::from_fn(11, |_, _| rng.random::<f64>() - 0.5);
        let brute: f64 = (0..11)
            .map(|i| f[i] * f[i] * sp.weight[i] * sp.weight[i] * nu[i])
            .sum();
        assert_relative_eq!(weighted_norm(&f, &sp).powi(2), brute, epsilon = 1e-13);
    }

    #[test]
    fn pairing_of_ground_pair_is_one_when_normalized() {
        let (phi, pt, w, nu) = rig(13, 11);
        let sp = make_weights(&phi, &pt, &w, &nu, Exponent::Finite(2.0), true).unwrap();
        assert_relative_eq!(pairing(&sp.phi_tilde, &phi, &w, &nu), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pairing_is_symmetric_and_bilinear() {
        let (g, f, w, nu) = rig(9, 12);
        assert_relative_eq!(pairing(&g, &f, &w, &nu), pairing(&f, &g, &w, &nu), epsilon = 1e-13);
        let scaled = pairing(&(2.5 * &g), &f, &w, &nu);
        assert_relative_eq!(scaled, 2.5 * pairing(&g, &f, &w, &nu), epsilon = 1e-12);
    }

    #[test]
    fn holder_inequality_and_extremizer() {
        let (phi, pt, w, nu) = rig(16, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for p in [
            Exponent::Finite(1.0),
            Exponent::Finite(1.5),
            Exponent::Finite(2.0),
            Exponent::Finite(3.0),
            Exponent::Infinity,
        ] {
            let sp = make_weights(&phi, &pt, &w, &nu, p, true).unwrap();
            for _ in 0..100 {
                let f = DVector::from_fn(16, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                let g = DVector::from_fn(16, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                let lhs = pairing(&g, &f, &w, &nu).abs();
                let rhs = dual_norm(&g, &sp) * weighted_norm(&f, &sp);
                assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-14, "p={:?}", p);
            }
            // the extremizer attains the bound
            let f = DVector::from_fn(16, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let g = holder_extremizer(&f, &sp);
            let attained = pairing(&g, &f, &w, &nu).abs();
            let bound = dual_norm(&g, &sp) * weighted_norm(&f, &sp);
            assert_relative_eq!(attained, bound, max_relative = 1e-10);
        }
    }

    #[test]
    fn duality_norm_as_supremum() {
        let (phi, pt, w, nu) = rig(10, 15);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for p in [Exponent::Finite(1.0), Exponent::Finite(2.0), Exponent::Infinity] {
            let sp = make_weights(&phi, &pt, &w, &nu, p, true).unwrap();
            let f = DVector::from_fn(10, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let norm = weighted_norm(&f, &sp);
            // random unit-ball elements never exceed the norm
            let mut best = 0.0f64;
            for _ in 0..500 {
                let g = DVector::from_fn(10, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                let gn = dual_norm(&g, &sp);
                if gn > 0.0 {
                    best = best.max(pairing(&g, &f, &w, &nu).abs() / gn);
                }
            }
            assert!(best <= norm * (1.0 + 1e-10));
            // the extremizer closes the gap
            let g = holder_extremizer(&f, &sp);
            let gn = dual_norm(&g, &sp);
            let attained = pairing(&g, &f, &w, &nu).abs() / gn;
            assert_relative_eq!(attained, norm, max_relative = 1e-6);
        }
    }

    #[test]
    fn chain_is_flat_for_phi_and_increasing_for_indicator() {
        let (phi, pt, w, nu) = rig(12, 17);
        let ps = [
            Exponent::Finite(1.0),
            Exponent::Finite(1.5),
            Exponent::Finite(2.0),
            Exponent::Finite(3.0),
            Exponent::Infinity,
        ];
        let family = make_family(&phi, &pt, &w, &nu, &ps, true).unwrap();
        let chain = embedding_chain(&phi, &family).unwrap();
        assert!(chain.monotone);
        for v in &chain.norms {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-12);
        }
        let mut indicator = DVector::zeros(12);
        indicator[0] = 1.0;
        let chain = embedding_chain(&indicator, &family).unwrap();
        assert!(chain.monotone);
        for w in chain.norms.windows(2) {
            assert!(w[1] > w[0], "strictly increasing chain expected");
        }
    }

    #[test]
    fn equality_diagnostic_detects_scaled_ground_state() {
        let (phi, pt, w, nu) = rig(7, 18);
        let ps = [Exponent::Finite(1.0), Exponent::Finite(2.0), Exponent::Infinity];
        let family = make_family(&phi, &pt, &w, &nu, &ps, true).unwrap();
        let f = 2.0 * &phi;
        let chain = embedding_chain(&f, &family).unwrap();
        assert_relative_eq!(chain.norms[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(chain.norms[2], 2.0, epsilon = 1e-12);
        let c = chain.equality_constant.expect("equality case must be flagged");
        assert_relative_eq!(c, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn unnormalized_family_is_rejected_by_chain() {
        let (phi, pt, w, nu) = rig(6, 19);
        let family = make_family(&phi, &pt, &w, &nu, &[Exponent::Finite(2.0)], false).unwrap();
        assert!(matches!(
            embedding_chain(&phi, &family),
            Err(SpaceError::NotNormalized(_))
        ));
    }

    #[test]
    fn nonpositive_inputs_are_rejected() {
        let (phi, pt, w, nu) = rig(4, 20);
        let mut bad = phi.clone();
        bad[2] = 0.0;
        assert!(matches!(
            make_weights(&bad, &pt, &w, &nu, Exponent::Finite(2.0), false),
            Err(SpaceError::NonPositiveInput { what: "phi", index: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn norm_is_monotone_in_p_on_normalized_families(seed in 0u64..500) {
            let (phi, pt, w, nu) = rig(10, seed.wrapping_add(1000));
            let ps = [
                Exponent::Finite(1.0),
                Exponent::Finite(1.3),
                Exponent::Finite(2.0),
                Exponent::Finite(4.5),
                Exponent::Infinity,
            ];
            let family = make_family(&phi, &pt, &w, &nu, &ps, true).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = DVector::from_fn(10, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let norms: Vec<f64> = family.iter().map(|sp| weighted_norm(&f, sp)).collect();
            for wpair in norms.windows(2) {
                prop_assert!(wpair[1] - wpair[0] >= -1e-12 * wpair[1].abs().max(1.0));
            }
        }
    }
}
