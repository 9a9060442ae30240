//! Line-of-sight channel, SINR/rate and transmit beampattern model for a UAV
//! carrying a vertical uniform linear array at fixed altitude.

use alloc::vec::Vec;

use crate::math;
use crate::numerics::{Complex, ComplexVector, HermitianMatrix};
use crate::scenario::{Point, Rect, Scenario, UavConfig};

/// Information beams `w_k` (amplitude in sqrt(W)) plus the dedicated sensing
/// covariance `R_s` (W).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub info_beams: Vec<ComplexVector>,
    pub sensing_cov: HermitianMatrix,
}

impl BeamformerSet {
    pub fn zeros(num_users: usize, num_antennas: usize) -> Self {
        Self {
            info_beams: (0..num_users).map(|_| ComplexVector::zeros(num_antennas)).collect(),
            sensing_cov: HermitianMatrix::zeros(num_antennas),
        }
    }

    pub fn num_antennas(&self) -> usize {
        self.sensing_cov.dim()
    }

    pub fn total_power(&self) -> f64 {
        self.info_beams.iter().map(ComplexVector::norm_sqr).sum::<f64>() + self.sensing_cov.trace()
    }

    /// Transmit covariance `sum_k w_k w_k^H + R_s`.
    pub fn covariance(&self) -> HermitianMatrix {
        let mut g = self.sensing_cov.clone();
        for w in &self.info_beams {
            g.add_outer(1.0, w);
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub per_user_sinr: Vec<f64>,
    /// bps/Hz
    pub per_user_rate: Vec<f64>,
    /// `sum_k alpha_k * rate_k`
    pub weighted_sum: f64,
}

/// Squared distance between the UAV at `q` (altitude `h`) and ground point `p`.
pub fn slant_distance_sqr(q: Point, p: Point, h: f64) -> f64 {
    (q - p).norm_sqr() + h * h
}

/// Cosine of the angle of departure from the array axis towards `p`.
pub fn aod_cosine(q: Point, p: Point, h: f64) -> f64 {
    h / math::sqrt(slant_distance_sqr(q, p, h))
}

/// Array response `a_m = exp(j 2 pi (d/lambda) m cos(theta))`.
pub fn steering_vector(q: Point, p: Point, uav: &UavConfig) -> ComplexVector {
    steering_from_cosine(aod_cosine(q, p, uav.altitude), uav)
}

pub(crate) fn steering_from_cosine(cos_theta: f64, uav: &UavConfig) -> ComplexVector {
    let phi = math::TAU * uav.antenna_spacing_ratio * cos_theta;
    ComplexVector::from_fn(uav.num_antennas, |m| {
        let ang = phi * m as f64;
        Complex::new(math::cos(ang), math::sin(ang))
    })
}

/// `h = sqrt(beta / d^2) a`
pub fn channel_vector(q: Point, u: Point, uav: &UavConfig) -> ComplexVector {
    let d2 = slant_distance_sqr(q, u, uav.altitude);
    steering_vector(q, u, uav).scaled(math::sqrt(uav.channel_gain_ref / d2))
}

/// Per-user SINR and rate at UAV position `q`.
pub fn sinr_and_rates(q: Point, beams: &BeamformerSet, scenario: &Scenario) -> RateReport {
    let k_users = scenario.users.len();
    let mut sinr = Vec::with_capacity(k_users);
    let mut rate = Vec::with_capacity(k_users);
    let mut weighted = 0.0;
    for (k, user) in scenario.users.iter().enumerate() {
        let h = channel_vector(q, user.position, &scenario.uav);
        let powers: Vec<f64> = beams.info_beams.iter().map(|w| h.dot(w).norm_sqr()).collect();
        let signal = powers.get(k).copied().unwrap_or(0.0);
        let interference: f64 = powers.iter().sum::<f64>() - signal;
        let sensing = beams.sensing_cov.quadratic_form_unchecked(&h).max(0.0);
        let g = signal / (interference.max(0.0) + sensing + user.noise_power);
        let r = math::log2(1.0 + g);
        weighted += user.weight * r;
        sinr.push(g);
        rate.push(r);
    }
    RateReport {
        per_user_sinr: sinr,
        per_user_rate: rate,
        weighted_sum: weighted,
    }
}

/// The sensing points with pairwise distinct slant distances from `q`. The
/// steering vector depends on the point only through that distance, so
/// points at equal range give identical gain constraints.
pub fn distinct_range_points(q: Point, points: &[Point], altitude: f64) -> Vec<Point> {
    let mut seen: Vec<u64> = Vec::with_capacity(points.len());
    let mut out = Vec::with_capacity(points.len());
    for &m in points {
        let key = slant_distance_sqr(q, m, altitude).to_bits();
        if !seen.contains(&key) {
            seen.push(key);
            out.push(m);
        }
    }
    out
}

/// Transmit beampattern gain `a^H (sum_k w_k w_k^H + R_s) a` towards `m`.
pub fn beampattern_gain(q: Point, m: Point, beams: &BeamformerSet, uav: &UavConfig) -> f64 {
    let a = steering_vector(q, m, uav);
    covariance_gain(&a, beams)
}

fn covariance_gain(a: &ComplexVector, beams: &BeamformerSet) -> f64 {
    let info: f64 = beams.info_beams.iter().map(|w| a.dot(w).norm_sqr()).sum();
    (info + beams.sensing_cov.quadratic_form_unchecked(a)).max(0.0)
}

/// `a^H X a` written through magnitudes and phases of the entries of `X`:
/// `sum_a X_aa + 2 sum_{p<q} |X_pq| cos(arg X_pq + 2 pi (d/lambda)(q - p) H / dist)`.
pub fn trace_gain_expansion(x: &HermitianMatrix, dist: f64, uav: &UavConfig) -> f64 {
    let n = x.dim();
    let phi = math::TAU * uav.antenna_spacing_ratio * uav.altitude / dist;
    let mut acc: f64 = x.diagonal().iter().sum();
    for p in 0..n {
        for q in p + 1..n {
            let z = x.get(p, q);
            let mag = z.norm();
            if mag == 0.0 {
                continue;
            }
            acc += 2.0 * mag * math::cos(z.arg() + phi * (q - p) as f64);
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeampatternSample {
    pub position: Point,
    /// Transmit beampattern gain (W).
    pub tx_gain: f64,
    /// `tx_gain * beta / d^2` (W).
    pub rx_gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeampatternMap {
    pub uav_position: Point,
    pub resolution: f64,
    pub samples: Vec<BeampatternSample>,
}

/// Transmit and receive gain at every node of the scenario's search area.
pub fn beampattern_map(
    q: Point,
    beams: &BeamformerSet,
    scenario: &Scenario,
    resolution: f64,
) -> BeampatternMap {
    beampattern_map_over(q, beams, &scenario.uav, &scenario.search_area, resolution)
}

pub fn beampattern_map_over(
    q: Point,
    beams: &BeamformerSet,
    uav: &UavConfig,
    area: &Rect,
    resolution: f64,
) -> BeampatternMap {
    assert!(resolution > 0.0, "grid resolution must be positive");
    let nodes = area.grid(resolution);
    let samples = crate::par::map(&nodes, |&p| {
        let tx = beampattern_gain(q, p, beams, uav);
        let rx = tx * uav.channel_gain_ref / slant_distance_sqr(q, p, uav.altitude);
        BeampatternSample {
            position: p,
            tx_gain: tx,
            rx_gain: rx,
        }
    });
    BeampatternMap {
        uav_position: q,
        resolution,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::quadratic_form;
    use crate::presets;
    use crate::scenario::{SensingGrid, User};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uav(m: usize) -> UavConfig {
        UavConfig {
            num_antennas: m,
            ..presets::reference_uav()
        }
    }

    fn single_user(m: usize, u: Point) -> Scenario {
        Scenario {
            users: alloc::vec![User {
                position: u,
                weight: 1.0,
                noise_power: 1e-14,
            }],
            sensing: SensingGrid {
                points: alloc::vec![Point::new(500.0, 500.0)],
                gain_threshold: 0.0,
            },
            uav: uav(m),
            mission: None,
            search_area: Rect::default(),
        }
    }

    fn random_hermitian(rng: &mut impl Rng, n: usize) -> HermitianMatrix {
        HermitianMatrix::from_upper_fn(n, |_, _| {
            Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    #[test]
    fn aod_examples() {
        let q = Point::new(10.0, 20.0);
        assert_eq!(aod_cosine(q, q, 100.0), 1.0);
        let p = Point::new(110.0, 20.0);
        assert!((aod_cosine(q, p, 100.0) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let p = Point::new(10.0, 20.0 + 3f64.sqrt() * 100.0);
        assert!((aod_cosine(q, p, 100.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn steering_examples() {
        let q = Point::new(0.0, 0.0);
        let a = steering_vector(q, q, &uav(4));
        let expected = [1.0, -1.0, 1.0, -1.0];
        for (z, e) in a.iter().zip(expected) {
            assert!((z - Complex::new(e, 0.0)).norm() < 1e-15);
        }
        assert_eq!(steering_vector(q, q, &uav(1)).as_slice(), &[Complex::new(1.0, 0.0)]);

        let a = steering_vector(q, Point::new(100.0, 0.0), &uav(3));
        for (m, z) in a.iter().enumerate() {
            let phase = core::f64::consts::PI * m as f64 / 2f64.sqrt();
            assert!((z - Complex::from_polar(1.0, phase)).norm() < 1e-14);
        }
    }

    #[test]
    fn channel_examples() {
        let u = Point::new(50.0, 50.0);
        let h = channel_vector(u, u, &uav(12));
        for z in h.iter() {
            assert!((z.norm() - 1e-5).abs() < 1e-18);
        }
        let q = Point::new(300.0, -20.0);
        let h = channel_vector(q, u, &uav(12));
        let d2 = slant_distance_sqr(q, u, 100.0);
        assert!((h.norm_sqr() - 12.0 * 1e-6 / d2).abs() < 1e-12 * h.norm_sqr());
    }

    #[test]
    fn equal_horizontal_distance_gives_equal_steering() {
        let q = Point::new(500.0, 500.0);
        let a1 = steering_vector(q, Point::new(600.0, 500.0), &uav(8));
        let a2 = steering_vector(q, Point::new(500.0, 400.0), &uav(8));
        assert_eq!(a1, a2);
    }

    #[test]
    fn matched_filter_single_user() {
        let u = Point::new(0.0, 0.0);
        let s = single_user(12, u);
        let h = channel_vector(u, u, &s.uav);
        let w = h.scaled(0.5f64.sqrt() / h.norm());
        let beams = BeamformerSet {
            info_beams: alloc::vec![w],
            sensing_cov: HermitianMatrix::zeros(12),
        };
        let rep = sinr_and_rates(u, &beams, &s);
        assert!((rep.per_user_sinr[0] - 6e4).abs() < 1e-9 * 6e4);
        assert!((rep.per_user_rate[0] - 15.872_698_925).abs() < 1e-8);
        assert_eq!(rep.weighted_sum, rep.per_user_rate[0]);
    }

    #[test]
    fn zero_info_beams_give_zero_rates() {
        let s = presets::reference_scenario();
        let mut beams = BeamformerSet::zeros(8, 12);
        beams.sensing_cov = HermitianMatrix::scaled_identity(12, 0.04);
        let rep = sinr_and_rates(Point::new(400.0, 300.0), &beams, &s);
        assert!(rep.per_user_rate.iter().all(|&r| r == 0.0));
        assert_eq!(rep.weighted_sum, 0.0);
    }

    #[test]
    fn isotropic_and_focused_gain() {
        let u = uav(12);
        let q = Point::new(200.0, 300.0);
        let mut beams = BeamformerSet::zeros(2, 12);
        beams.sensing_cov = HermitianMatrix::scaled_identity(12, 0.5 / 12.0);
        for p in [Point::new(0.0, 0.0), q, Point::new(900.0, 1000.0)] {
            assert!((beampattern_gain(q, p, &beams, &u) - 0.5).abs() < 1e-14);
        }
        let m = Point::new(250.0, 380.0);
        let a = steering_vector(q, m, &u);
        beams.sensing_cov = HermitianMatrix::outer(&a).scaled(0.5 / 12.0);
        let oracle = quadratic_form(&beams.sensing_cov, &a).unwrap();
        assert!((beampattern_gain(q, m, &beams, &u) - oracle).abs() < 1e-12);
        assert!((oracle - 6.0).abs() < 1e-12);
        assert_eq!(beampattern_gain(q, m, &BeamformerSet::zeros(2, 12), &u), 0.0);
    }

    #[test]
    fn trace_expansion_examples() {
        let u = uav(6);
        let x = HermitianMatrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        for dist in [100.0, 250.0, 1234.5] {
            assert!((trace_gain_expansion(&x, dist, &u) - 21.0).abs() < 1e-13);
        }
        let q = Point::new(0.0, 0.0);
        let p = Point::new(170.0, 0.0);
        let a = steering_vector(q, p, &u);
        let dist = slant_distance_sqr(q, p, u.altitude).sqrt();
        let got = trace_gain_expansion(&HermitianMatrix::outer(&a), dist, &u);
        assert!((got - 36.0).abs() < 1e-12);
    }

    #[test]
    fn beampattern_map_samples() {
        let s = presets::reference_scenario();
        let q = Point::new(500.0, 500.0);
        let mut beams = BeamformerSet::zeros(8, 12);
        beams.sensing_cov = HermitianMatrix::scaled_identity(12, 0.5 / 12.0);
        beams.info_beams[0] = channel_vector(q, s.users[0].position, &s.uav).scaled(1e4);
        let area = Rect::new(s.sensing.points[4], s.sensing.points[4]);
        let map = beampattern_map_over(q, &beams, &s.uav, &area, 25.0);
        assert_eq!(map.samples.len(), 1);
        assert_eq!(
            map.samples[0].tx_gain,
            beampattern_gain(q, s.sensing.points[4], &beams, &s.uav)
        );

        beams.info_beams[0] = ComplexVector::zeros(12);
        let map = beampattern_map(q, &beams, &s, 250.0);
        assert_eq!(map.samples.len(), 25);
        assert!(map.samples.iter().all(|x| (x.tx_gain - 0.5).abs() < 1e-13));
        let nadir = map.samples.iter().find(|x| x.position == q).unwrap();
        let far = map.samples.iter().find(|x| x.position == Point::new(0.0, 0.0)).unwrap();
        let ratio = nadir.rx_gain / far.rx_gain;
        let expected = slant_distance_sqr(q, far.position, 100.0) / 100.0f64.powi(2);
        assert!((ratio - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn gain_bounded_by_m_times_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = uav(8);
        for _ in 0..200 {
            let b = random_hermitian(&mut rng, 8);
            let mut r = HermitianMatrix::zeros(8);
            r.add_outer(1.0, &b.apply(&[Complex::new(1.0, 0.3); 8]).unwrap());
            let beams = BeamformerSet {
                info_beams: alloc::vec![ComplexVector::from_fn(8, |_| Complex::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0)
                ))],
                sensing_cov: r,
            };
            let q = Point::new(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));
            let m = Point::new(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));
            let g = beampattern_gain(q, m, &beams, &u);
            assert!(g >= 0.0 && g <= 8.0 * beams.total_power() + 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn trace_expansion_matches_quadratic_form(seed in any::<u64>(), m in 1usize..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = uav(m);
            let x = random_hermitian(&mut rng, m);
            let dist = rng.gen_range(100.0..1500.0);
            let a = steering_from_cosine(u.altitude / dist, &u);
            let direct = x.quadratic_form(&a).unwrap();
            let expanded = trace_gain_expansion(&x, dist, &u);
            let scale = 1.0 + x.frobenius_norm() * m as f64;
            prop_assert!((direct - expanded).abs() <= 1e-9 * scale);
        }

        #[test]
        fn steering_depends_only_on_distance(angle in 0.0f64..6.283, r in 0.0f64..800.0) {
            let u = uav(10);
            let q = Point::new(400.0, 300.0);
            let p1 = q + Point::new(r, 0.0);
            let p2 = q + Point::new(r * angle.cos(), r * angle.sin());
            let a1 = steering_vector(q, p1, &u);
            let a2 = steering_vector(q, p2, &u);
            for (x, y) in a1.iter().zip(a2.iter()) {
                prop_assert!((x - y).norm() < 1e-9);
            }
        }

        #[test]
        fn averaged_gain_within_bounds(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = uav(6);
            let b = random_hermitian(&mut rng, 6);
            let cov = crate::numerics::project_psd(&b).unwrap();
            let tr = cov.trace().max(1e-12);
            let beams = BeamformerSet {
                info_beams: alloc::vec::Vec::new(),
                sensing_cov: cov.scaled(0.5 / tr),
            };
            let samples = 600;
            let mean: f64 = (0..samples)
                .map(|i| {
                    let c = (i as f64 + 0.5) / samples as f64;
                    beams.sensing_cov.quadratic_form(&steering_from_cosine(c, &u)).unwrap()
                })
                .sum::<f64>() / samples as f64;
            prop_assert!(mean >= -1e-12 && mean <= 0.5 * 6.0 + 1e-9);
        }

        #[test]
        fn sinr_is_scale_invariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = presets::reference_scenario();
            let mut beams = BeamformerSet::zeros(8, 12);
            for w in beams.info_beams.iter_mut() {
                *w = ComplexVector::from_fn(12, |_| Complex::new(
                    rng.gen_range(-1e-2..1e-2), rng.gen_range(-1e-2..1e-2)));
            }
            let b = random_hermitian(&mut rng, 12);
            beams.sensing_cov = crate::numerics::project_psd(&b).unwrap().scaled(1e-3);
            let q = Point::new(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));
            let base = sinr_and_rates(q, &beams, &s);

            let mut scaled_s = s.clone();
            for u in scaled_s.users.iter_mut() {
                u.noise_power *= scale * scale;
            }
            let scaled = BeamformerSet {
                info_beams: beams.info_beams.iter().map(|w| w.scaled(scale)).collect(),
                sensing_cov: beams.sensing_cov.scaled(scale * scale),
            };
            let other = sinr_and_rates(q, &scaled, &scaled_s);
            for (a, b) in base.per_user_sinr.iter().zip(&other.per_user_sinr) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300));
            }
        }
    }
}
