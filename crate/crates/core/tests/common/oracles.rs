//! Independent reimplementations used as test oracles, and the seeded
//! sweeps that compare the library against them.

use nalgebra::{Matrix2, Matrix4, Vector4};
use phd_core::flow::{
    ipf_flow, migrate, normalizer, npf_flow, IntensitySnapshot, BRACKET_MARGIN, NORMALIZER_FLOOR,
};
use phd_core::ident::{assign_ids, match_tracks};
use phd_core::metrics::ospa;
use phd_core::model::{
    gaussian_likelihood, likelihood_gradient, likelihood_hessian, transition, GaussianLikelihood,
};
use phd_core::phd::{estimate_count, update_weights};
use phd_core::{
    FilterConfig, FlowConfig, FlowKind, Measurement, OspaParams, Particle, ParticlePopulation, TargetState,
    TrackEstimate,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{close4, close44, near, spd2, spd4, state};

pub const FD_STEP: f64 = 1e-4;

pub fn fd_gradient(s: &TargetState, z: &Measurement, r: &Matrix2<f64>) -> Vector4<f64> {
    Vector4::from_fn(|i, _| {
        let e = Vector4::ith(i, FD_STEP);
        let hp = gaussian_likelihood(&s.displaced(&e), z, r).unwrap();
        let hm = gaussian_likelihood(&s.displaced(&-e), z, r).unwrap();
        (hp - hm) / (2.0 * FD_STEP)
    })
}

/// Four-point central second difference.
pub fn fd_hessian(s: &TargetState, z: &Measurement, r: &Matrix2<f64>) -> Matrix4<f64> {
    let h = |d: Vector4<f64>| gaussian_likelihood(&s.displaced(&d), z, r).unwrap();
    Matrix4::from_fn(|i, j| {
        let ei = Vector4::ith(i, FD_STEP);
        let ej = Vector4::ith(j, FD_STEP);
        (h(ei + ej) - h(ei - ej) - h(-ei + ej) + h(-ei - ej)) / (4.0 * FD_STEP * FD_STEP)
    })
}

/// Analytic gradient and Hessian against finite differences (rel. 1e-5 / 1e-4).
pub fn derivative_sweep(seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let r = spd2(&mut rng);
        let s = state(&mut rng);
        let z = near(&mut rng, &s, 6.0);
        let g = likelihood_gradient(&s, &z, &r).unwrap();
        let hess = likelihood_hessian(&s, &z, &r).unwrap();
        let fg = fd_gradient(&s, &z, &r);
        let fh = fd_hessian(&s, &z, &r);
        if !close4(&g, &fg, 1e-5, 1e-300) {
            return Err(format!("case {case}: gradient {g} vs {fg}"));
        }
        if !close44(&hess, &fh, 1e-4, 1e-300) {
            return Err(format!("case {case}: hessian {hess} vs {fh}"));
        }
    }
    Ok(())
}

/// Dense-inverse NPF drift from the public gradient and Hessian.
pub fn npf_oracle(p: &Particle, z: &Measurement, r: &Matrix2<f64>, lambda: f64) -> Vector4<f64> {
    let h = gaussian_likelihood(&p.state, z, r).unwrap();
    let g = likelihood_gradient(&p.state, z, r).unwrap();
    let hess = likelihood_hessian(&p.state, z, r).unwrap();
    let lg = g / h;
    let lh = hess / h - lg * lg.transpose();
    let p_inv = p.covariance.try_inverse().unwrap();
    let bracket = -p_inv + lh * lambda;
    -(bracket.try_inverse().unwrap() * lg)
}

/// Normalizers by brute-force summation over the whole population.
pub fn normalizers_oracle(
    pop: &ParticlePopulation,
    zs: &[Measurement],
    r: &Matrix2<f64>,
    cfg: &FilterConfig,
) -> Vec<f64> {
    let h = |p: &Particle, z: &Measurement| gaussian_likelihood(&p.state, z, r).unwrap();
    zs.iter()
        .enumerate()
        .map(|(k, z)| {
            let explained: f64 = pop.particles[..pop.surviving_count]
                .iter()
                .map(|p| h(p, z) * p.weight)
                .sum();
            let mut births = 0.0;
            for &o in &pop.birth_origin {
                if o == k {
                    births += cfg.birth_weight * (1.0 - explained).max(0.0);
                }
            }
            (cfg.clutter_intensity + births + explained).max(NORMALIZER_FLOOR)
        })
        .collect()
}

pub enum IpfExpect {
    Drift(Vector4<f64>),
    Degenerate,
    /// Within 1e-6 of the margin; either answer is acceptable.
    Borderline,
}

/// Term-by-term IPF drift with a dense inverse. The margin rule is checked
/// through eigenvalues of the whitened curvature `L⁻¹ C L⁻ᵀ` (`P⁻¹ = LLᵀ`).
pub fn ipf_oracle(
    p: &Particle,
    g: &[f64],
    zs: &[Measurement],
    r: &Matrix2<f64>,
    p_d: f64,
    lambda: f64,
) -> IpfExpect {
    let mut curvature = Matrix4::zeros();
    let mut drive = Vector4::zeros();
    for (z, gr) in zs.iter().zip(g) {
        curvature += likelihood_hessian(&p.state, z, r).unwrap() * (lambda * p_d / gr);
        drive += likelihood_gradient(&p.state, z, r).unwrap() * (p_d / gr);
    }
    let p_inv = p.covariance.try_inverse().unwrap();
    // L⁻¹ = chol(P)ᵀ
    let l_inv = p.covariance.cholesky().unwrap().l().transpose();
    let whitened = l_inv * curvature * l_inv.transpose();
    let top = whitened.symmetric_eigen().eigenvalues.max();
    let limit = 1.0 - BRACKET_MARGIN;
    if (top - limit).abs() < 1e-6 {
        return IpfExpect::Borderline;
    }
    if top > limit {
        return IpfExpect::Degenerate;
    }
    let bracket = curvature - p_inv;
    IpfExpect::Drift(-(bracket.try_inverse().unwrap() * drive))
}

pub fn random_population<R: Rng>(
    rng: &mut R,
    zs: &[Measurement],
    cfg: &FilterConfig,
) -> ParticlePopulation {
    let n = rng.random_range(1..12);
    let surviving = (0..n)
        .map(|_| {
            let z = &zs[rng.random_range(0..zs.len())];
            let s = TargetState::new(
                z.azimuth + rng.random_range(-5.0..5.0),
                z.elevation + rng.random_range(-5.0..5.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            Particle::new(s, rng.random_range(0.01..0.5), spd4(rng, 0.5, 6.0))
        })
        .collect();
    let births = phd_core::phd::spawn_births(zs, cfg, rng).unwrap();
    ParticlePopulation::surviving(surviving).with_births(births)
}

/// NPF drift against [`npf_oracle`] at rel. 1e-9.
pub fn npf_sweep(seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let r = spd2(&mut rng);
        let lik = GaussianLikelihood::new(&r).unwrap();
        let s = state(&mut rng);
        let zs: Vec<Measurement> = (0..rng.random_range(1..5))
            .map(|_| near(&mut rng, &s, 8.0))
            .collect();
        let p = Particle::new(s, 1.0, spd4(&mut rng, 0.5, 6.0));
        let lambda = rng.random_range(0.0..=1.0);
        let f = npf_flow(&p, &zs, &lik, lambda, 1e-8).unwrap();
        let nearest = lik.nearest(&s, &zs).unwrap();
        let o = npf_oracle(&p, &zs[nearest], &r, lambda);
        if f.degenerate || !close4(&f.drift, &o, 1e-9, 1e-12) {
            return Err(format!("case {case}: {} vs {o}", f.drift));
        }
    }
    Ok(())
}

/// IPF normalizers (rel. 1e-12) and drift (rel. 1e-9) against the oracles,
/// until `cases` drifts are compared. Returns how many particles the margin
/// rule froze.
pub fn ipf_sweep(seed: u64, cases: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut degenerate) = (0, 0);
    while checked < cases {
        let r = spd2(&mut rng);
        let lik = GaussianLikelihood::new(&r).unwrap();
        let cfg = FilterConfig {
            clutter_intensity: rng.random_range(0.0..1e-3),
            detection_probability: rng.random_range(0.5..1.0),
            births_per_measurement: 5,
            noise: phd_core::NoiseModel {
                measurement_noise_cov: r,
                ..Default::default()
            },
            ..FilterConfig::default()
        };
        let centre = state(&mut rng);
        let zs: Vec<Measurement> = (0..rng.random_range(1..4))
            .map(|_| near(&mut rng, &centre, 10.0))
            .collect();
        let pop = random_population(&mut rng, &zs, &cfg);
        let snap = IntensitySnapshot::capture(&pop, &zs, &lik, &cfg);
        let g_oracle = normalizers_oracle(&pop, &zs, &r, &cfg);
        for (k, (a, b)) in snap.normalizers.iter().zip(&g_oracle).enumerate() {
            if (a - b).abs() > 1e-12 * b || *a != normalizer(k, &pop, &zs, &lik, &cfg) {
                return Err(format!("G[{k}] {a} vs {b}"));
            }
        }
        let lambda = rng.random_range(0.0..=1.0);
        for p in pop.surviving_particles() {
            let p_d = cfg.detection_probability;
            let f = ipf_flow(p, &snap, &zs, &lik, p_d, lambda, 1e-8).unwrap();
            match ipf_oracle(p, &g_oracle, &zs, &r, p_d, lambda) {
                IpfExpect::Drift(o) => {
                    if f.degenerate || !close4(&f.drift, &o, 1e-9, 1e-12) {
                        return Err(format!("drift {} vs {o}", f.drift));
                    }
                    checked += 1;
                }
                IpfExpect::Degenerate => {
                    if !f.degenerate {
                        return Err("margin rule not applied".into());
                    }
                    degenerate += 1;
                }
                IpfExpect::Borderline => {}
            }
        }
    }
    Ok(degenerate)
}

/// Ordered `k`-subsets of `0..n`.
pub fn permutations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n, k - 1) {
        for j in 0..n {
            if !p.contains(&j) {
                let mut q = p.clone();
                q.push(j);
                out.push(q);
            }
        }
    }
    out
}

/// OSPA by exhaustive search over assignments.
pub fn brute_ospa(a: &[TargetState], b: &[TargetState], p: &OspaParams) -> f64 {
    let (s, l) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if l.is_empty() {
        return 0.0;
    }
    let best = permutations(l.len(), s.len())
        .iter()
        .map(|perm| {
            s.iter()
                .zip(perm)
                .map(|(x, &j)| x.position_distance(&l[j]).min(p.cutoff).powf(p.order))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    let pad = p.cutoff.powf(p.order) * (l.len() - s.len()) as f64;
    ((best + pad) / l.len() as f64).powf(1.0 / p.order)
}

fn random_set<R: Rng>(rng: &mut R, max: usize) -> Vec<TargetState> {
    (0..rng.random_range(0..=max))
        .map(|_| TargetState::new(rng.random_range(0.0..360.0), rng.random_range(-60.0..60.0), 0.0, 0.0))
        .collect()
}

/// Exhaustive equivalence for set sizes up to 6 and the metric axioms on
/// triples of sets up to size 3, all at 1e-9.
pub fn ospa_sweep(seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let p = OspaParams {
            cutoff: rng.random_range(1.0..50.0),
            order: rng.random_range(1.0..3.0),
        };
        let (a, b) = (random_set(&mut rng, 6), random_set(&mut rng, 6));
        let (fast, slow) = (ospa(&a, &b, &p), brute_ospa(&a, &b, &p));
        if (fast - slow).abs() > 1e-9 {
            return Err(format!("case {case}: ospa {fast} vs exhaustive {slow}"));
        }
        let (a, b, c) = (random_set(&mut rng, 3), random_set(&mut rng, 3), random_set(&mut rng, 3));
        let ab = ospa(&a, &b, &p);
        if (ab - ospa(&b, &a, &p)).abs() > 1e-9 {
            return Err(format!("case {case}: asymmetric"));
        }
        if ospa(&a, &a, &p) > 1e-9 {
            return Err(format!("case {case}: d(A, A) > 0"));
        }
        if !a.is_empty() && !b.is_empty() && brute_ospa(&a, &b, &p) > 1e-9 && ab <= 0.0 {
            return Err(format!("case {case}: distinct sets at distance 0"));
        }
        if ab > ospa(&a, &c, &p) + ospa(&c, &b, &p) + 1e-9 {
            return Err(format!("case {case}: triangle inequality"));
        }
        if !(0.0..=p.cutoff + 1e-9).contains(&ab) {
            return Err(format!("case {case}: {ab} outside [0, c]"));
        }
    }
    Ok(())
}

pub const GATE: f64 = 10.0;

pub fn track(id: u32, az: f64, el: f64) -> TrackEstimate {
    TrackEstimate {
        id,
        state: TargetState::new(az, el, 0.0, 0.0),
        weight: 1.0,
        coasting: false,
    }
}

pub fn est(az: f64, el: f64) -> (TargetState, f64) {
    (TargetState::new(az, el, 0.0, 0.0), 1.0)
}

/// Hand-built cases of each identification branch: output size, ids and
/// the number of coasted tracks.
pub fn crafted_identity_cases() -> Result<(), String> {
    let prev = [track(1, 10.0, 0.0), track(2, 100.0, 0.0)];
    let cases: [(&[(TargetState, f64)], usize); 5] = [
        (&[], 2),
        (&[est(12.0, 0.0)], 1),
        (&[est(101.0, 0.0), est(9.0, 0.0)], 0),
        (&[est(101.0, 0.0), est(9.0, 0.0), est(250.0, 40.0)], 0),
        (&[est(300.0, 0.0)], 2),
    ];
    for (current, coasted) in cases {
        let out = assign_ids(&prev, current, GATE, 1.0).map_err(|e| e.to_string())?;
        let ids: Vec<u32> = out.iter().map(|t| t.id).collect();
        if ids != [1, 2] {
            return Err(format!("{} estimates: ids {ids:?}", current.len()));
        }
        let got = out.iter().filter(|t| t.coasting).count();
        if got != coasted {
            return Err(format!("{} estimates: {got} coasted, expected {coasted}", current.len()));
        }
    }
    let out = assign_ids(&prev, &[est(101.0, 0.0), est(9.0, 0.0)], GATE, 1.0).unwrap();
    if (out[0].state.azimuth, out[1].state.azimuth) != (9.0, 101.0) {
        return Err("nearest pairing".into());
    }
    let moving = [TrackEstimate {
        state: TargetState::new(10.0, 0.0, 2.0, 0.0),
        ..track(1, 0.0, 0.0)
    }];
    let out = assign_ids(&moving, &[], 15.0, 1.0).unwrap();
    if out[0].state.azimuth != 12.0 || !out[0].coasting {
        return Err("coasting example".into());
    }
    Ok(())
}

/// Coasted tracks equal the noise-free transition bit for bit.
pub fn coasting_sweep(seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let s = TargetState::new(
            rng.random_range(0.0..360.0),
            rng.random_range(-60.0..60.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        let dt = rng.random_range(0.1..2.0);
        let prev = [TrackEstimate { id: 1, state: s, weight: 0.7, coasting: false }];
        let out = assign_ids(&prev, &[], GATE, dt).unwrap();
        let expected = transition(&s, dt, &Vector4::zeros()).unwrap();
        if out[0].state != expected || out[0].weight != 0.7 || !out[0].coasting {
            return Err(format!("case {case}: {:?} vs {expected:?}", out[0]));
        }
    }
    Ok(())
}

/// Three positions pairwise farther apart than `2·GATE`.
fn separated<R: Rng>(rng: &mut R) -> Vec<TargetState> {
    loop {
        let pts: Vec<TargetState> = (0..3)
            .map(|_| TargetState::new(rng.random_range(0.0..360.0), rng.random_range(-60.0..60.0), 0.0, 0.0))
            .collect();
        if (0..3).all(|i| (0..i).all(|j| pts[i].position_distance(&pts[j]) > 2.0 * GATE)) {
            return pts;
        }
    }
}

/// Equal-count scenes where greedy id-order matching picks the minimum
/// total-distance assignment, out of `scenes`.
pub fn greedy_agreement(seed: u64, scenes: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms = permutations(3, 3);
    let mut agree = 0;
    for _ in 0..scenes {
        let pts = separated(&mut rng);
        let prev: Vec<TrackEstimate> = pts
            .iter()
            .enumerate()
            .map(|(i, s)| track(i as u32 + 1, s.azimuth, s.elevation))
            .collect();
        // each target moves by less than a gate, then the estimates are shuffled
        let mut current: Vec<(TargetState, f64)> = pts
            .iter()
            .map(|s| {
                est(
                    s.azimuth + 0.7 * rng.random_range(-GATE..GATE),
                    s.elevation + 0.7 * rng.random_range(-GATE..GATE),
                )
            })
            .collect();
        for i in (1..3).rev() {
            current.swap(i, rng.random_range(0..=i));
        }
        let greedy = match_tracks(&prev, &current, GATE, 1.0).unwrap().tracks;
        let cost = |perm: &Vec<usize>| -> f64 {
            (0..3).map(|i| prev[i].state.position_distance(&current[perm[i]].0)).sum()
        };
        let best = perms.iter().min_by(|a, b| cost(a).total_cmp(&cost(b))).unwrap();
        if (0..3).all(|i| greedy[i].state == current[best[i]].0) {
            agree += 1;
        }
    }
    agree
}

/// With `p_D = 1` and `κ = 0` the updated weights sum to the number of
/// measurements (rel. 1e-9).
pub fn missed_mass_free_update_sweep(seed: u64, populations: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = FilterConfig {
        detection_probability: 1.0,
        clutter_intensity: 0.0,
        ..FilterConfig::default()
    };
    for case in 0..populations {
        let k = rng.random_range(1..6);
        let zs: Vec<Measurement> = (0..k)
            .map(|_| Measurement::new(rng.random_range(0.0..360.0), rng.random_range(-60.0..60.0)))
            .collect();
        let n = rng.random_range(20..300);
        let particles = (0..n)
            .map(|i| {
                let z = &zs[i % k];
                let s = TargetState::new(
                    z.azimuth + rng.random_range(-6.0..6.0),
                    (z.elevation + rng.random_range(-6.0..6.0)).clamp(-89.0, 89.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                Particle::new(s, rng.random_range(0.0..0.1), Matrix4::identity())
            })
            .collect();
        let pop = ParticlePopulation::surviving(particles);
        let out = update_weights(&pop, &zs, &config).map_err(|e| e.to_string())?;
        let total = estimate_count(&out);
        if (total - k as f64).abs() > 1e-9 * k as f64 {
            return Err(format!("case {case}: Σω = {total}, |Z| = {k}"));
        }
    }
    Ok(())
}

/// Zero residual gives exactly zero drift for both flows at any λ, and a
/// zero-diffusion migration leaves such a particle where it is.
pub fn fixed_point_check() -> Result<(), String> {
    let lik = GaussianLikelihood::new(&Matrix2::new(4.0, 1.0, 1.0, 3.0)).unwrap();
    let s = TargetState::new(123.0, -7.0, 0.5, 0.1);
    let z = Measurement::new(123.0, -7.0);
    let p = Particle::new(s, 0.3, Matrix4::identity() * 2.0);
    let pop = ParticlePopulation::surviving(vec![p.clone()]);
    let cfg = FilterConfig {
        noise: phd_core::NoiseModel {
            measurement_noise_cov: *lik.covariance(),
            ..Default::default()
        },
        ..FilterConfig::default()
    };
    let snap = IntensitySnapshot::capture(&pop, &[z], &lik, &cfg);
    for lambda in [0.0, 0.35, 1.0] {
        let npf = npf_flow(&p, &[z], &lik, lambda, 1e-8).map_err(|e| e.to_string())?;
        let ipf = ipf_flow(&p, &snap, &[z], &lik, 0.9, lambda, 1e-8).map_err(|e| e.to_string())?;
        if npf.drift.amax() != 0.0 || ipf.drift.amax() != 0.0 {
            return Err(format!("drift at λ = {lambda}: npf {} ipf {}", npf.drift, ipf.drift));
        }
    }
    let flow = FlowConfig {
        diffusion: 0.0,
        ..FlowConfig::default()
    };
    for kind in [FlowKind::Npf, FlowKind::Ipf] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (out, _) = migrate(&pop, &[z], kind, &flow, &cfg, &mut rng).map_err(|e| e.to_string())?;
        if out.particles[0].state != s {
            return Err(format!("{kind} moved a particle sitting on its measurement"));
        }
    }
    Ok(())
}
