//! Rough per-stage timing of one tracking block at the default scenario.

use leotrack::channel::{self, array_response};
use leotrack::estimators::{self, design_combiner};
use leotrack::geometry::{array_frame, jacobian_g};
use leotrack::linalg;
use leotrack::scenario::Scenario;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::time::Instant;

fn main() {
    let scn = Scenario::default();
    let geom = scn.geometry();
    let grid = scn.angle_grid();
    let lb = scn.link_budget();
    let pilots = scn.pilot_config();
    let (q_sat, q_gu) = scn.initial_states();
    let frame = array_frame(&q_sat).unwrap();
    let z = leotrack::geometry::measurement_map(&q_sat, &q_gu, &frame, scn.wavelength()).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let w = design_combiner(Some((z.elevation, z.azimuth)), &geom, 32);
    let h = array_response(z.elevation, z.azimuth, &geom) * Complex64::new(2.0, 0.5);
    let block = channel::synth_received_block(&h, z.doppler, &w, &pilots, &lb, &mut rng);

    let reps = 50;
    let t = Instant::now();
    for _ in 0..reps { let _ = design_combiner(Some((z.elevation, z.azimuth)), &geom, 32); }
    println!("design_combiner: {:?}/call", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps { let _ = channel::synth_received_block(&h, z.doppler, &w, &pilots, &lb, &mut rng); }
    println!("observe:         {:?}/call", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps { let _ = estimators::esprit_doppler(&block, pilots.t_sym).unwrap(); }
    println!("esprit:          {:?}/call", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps { let _ = estimators::somp_angles(&block, &w, &grid, &geom).unwrap(); }
    println!("somp 100x100:    {:?}/call", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps {
        let _ = leotrack::crlb::crlb_at(z.elevation, z.azimuth, Complex64::new(2.0, 0.5), &w,
            lb.tx_power, lb.noise_var, pilots.n_pilots, pilots.t_sym, &geom).unwrap();
    }
    println!("crlb_at:         {:?}/call", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps { let _ = jacobian_g(&q_sat, &q_gu, &frame, scn.wavelength()).unwrap(); }
    println!("jacobian:        {:?}/call", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps { let _ = estimators::ls_csi(&block, &w, z.doppler, lb.tx_power, pilots.t_sym).unwrap(); }
    println!("ls_csi:          {:?}/call", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps { let _ = linalg::hermitian_eig(&w.sigma()).unwrap(); }
    println!("sigma eig 32x32: {:?}/call", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps { let _ = linalg::pseudo_inverse(w.matrix(), 1e-12); }
    println!("pinv 32x64 svd:  {:?}/call", t.elapsed() / reps);
}
