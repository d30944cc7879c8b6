use std::f64::consts::TAU;

use ddhs_core::frame::{
    compare_runs, equation_residuals, load_ground_motion, newmark_nlrha, AccelUnit, FrameModel,
    GroundMotion, IntegrationOptions, MotionFormat, ResponseHistory, Scheme, SyntheticMotion,
};
use ddhs_core::materials::{BilinearMaterial, BraceProperties, MaterialBrace};
use ddhs_core::pisindy::{PiSession, TrainedPiModel, SCHEMA_VERSION};

const K_BRACE: f64 = 180.0;

fn linear_brace() -> MaterialBrace<BilinearMaterial> {
    MaterialBrace::new(BilinearMaterial::new(K_BRACE, 0.0, f64::INFINITY).unwrap())
}

fn frame(zeta: f64) -> FrameModel {
    FrameModel {
        damping_ratio: zeta,
        ..FrameModel::with_defaults(K_BRACE).unwrap()
    }
}

fn per_step(scheme: Scheme) -> IntegrationOptions {
    IntegrationOptions {
        scheme,
        substeps: 1,
        ..IntegrationOptions::default()
    }
}

/// Mean spacing of upward zero crossings, linearly interpolated.
fn measured_period(t: &[f64], u: &[f64]) -> f64 {
    let crossings: Vec<f64> = (1..u.len())
        .filter(|&k| u[k - 1] < 0.0 && u[k] >= 0.0)
        .map(|k| t[k - 1] + (t[k] - t[k - 1]) * (-u[k - 1]) / (u[k] - u[k - 1]))
        .collect();
    (crossings.last().unwrap() - crossings[0]) / (crossings.len() - 1) as f64
}

#[test]
fn default_frame_has_the_target_period() {
    let f = FrameModel::with_defaults(BraceProperties::default().k1).unwrap();
    assert!((f.natural_period() - 0.492).abs() <= 0.001);
    assert!((f.brace_angle() - (4.0_f64 / 6.0).atan()).abs() < 1e-15);
}

#[test]
fn free_vibration_period() {
    let f = frame(0.0);
    let period = f.natural_period();
    for scheme in [Scheme::Explicit, Scheme::AverageAcceleration] {
        let motion = GroundMotion::zeros(period / 200.0, 200 * 12);
        let opts = IntegrationOptions {
            u0: 10.0,
            ..per_step(scheme)
        };
        let h = newmark_nlrha(&f, &motion, &mut linear_brace(), &opts).unwrap();
        let err = (measured_period(&h.t, &h.u) - period).abs() / period;
        assert!(err <= 1e-3, "{scheme:?}: {err}");
    }
}

#[test]
fn resonant_amplification() {
    let zeta = 0.05;
    let f = frame(zeta);
    let omega = f.circular_frequency();
    let dt = f.natural_period() / 200.0;
    let amp = 100.0;
    let n = 200 * 60;
    let ag: Vec<f64> = (0..=n).map(|k| amp * (omega * k as f64 * dt).sin()).collect();
    let motion = GroundMotion::new(dt, &ag, AccelUnit::MmPerS2, 1.0).unwrap();
    for scheme in [Scheme::Explicit, Scheme::AverageAcceleration] {
        let h = newmark_nlrha(&f, &motion, &mut linear_brace(), &per_step(scheme)).unwrap();
        let tail = &h.u[h.len() - 200 * 5..];
        let peak = tail.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let gain = peak * omega * omega / amp;
        assert!((gain - 1.0 / (2.0 * zeta)).abs() <= 0.02 * 10.0, "{scheme:?}: {gain}");
    }
}

#[test]
fn implicit_scheme_conserves_energy() {
    let f = frame(0.0);
    let period = f.natural_period();
    let motion = GroundMotion::zeros(period / 200.0, 200 * 10 + 1);
    let opts = IntegrationOptions {
        u0: 25.0,
        ..per_step(Scheme::AverageAcceleration)
    };
    let h = newmark_nlrha(&f, &motion, &mut linear_brace(), &opts).unwrap();
    let k = f.lateral_stiffness();
    let m = f.mass / 1000.0;
    let energy: Vec<f64> = (0..h.len())
        .map(|i| 0.5 * m * h.v[i] * h.v[i] + 0.5 * k * h.u[i] * h.u[i])
        .collect();
    for e in &energy {
        assert!((e - energy[0]).abs() <= 0.005 * energy[0]);
    }
}

fn earthquake() -> GroundMotion {
    SyntheticMotion {
        duration: 8.0,
        ..SyntheticMotion::default()
    }
    .generate()
    .unwrap()
}

#[test]
fn equation_of_motion_holds_at_every_sample() {
    let props = BraceProperties::default();
    let f = FrameModel::with_defaults(props.k1).unwrap();
    let motion = earthquake();
    for scheme in [Scheme::Explicit, Scheme::AverageAcceleration] {
        let mut brace = MaterialBrace::new(props.smooth().unwrap());
        let opts = IntegrationOptions {
            scheme,
            ..IntegrationOptions::default()
        };
        let h = newmark_nlrha(&f, &motion, &mut brace, &opts).unwrap();
        assert!(h.peak_brace_deformation() > props.dy);
        let worst = equation_residuals(&f, &h).iter().fold(0.0_f64, |a, r| a.max(r.abs()));
        assert!(worst <= 1e-8, "{scheme:?}: {worst}");
        for k in 0..h.len() {
            assert_eq!(h.drift[k], h.u[k] / f.storey_height);
        }
    }
}

#[test]
fn schemes_converge_together_under_refinement() {
    let props = BraceProperties::default();
    let f = FrameModel::with_defaults(props.k1).unwrap();
    let motion = earthquake();
    let run = |scheme, substeps| -> ResponseHistory {
        let mut brace = MaterialBrace::new(props.smooth().unwrap());
        let opts = IntegrationOptions {
            scheme,
            substeps,
            ..IntegrationOptions::default()
        };
        newmark_nlrha(&f, &motion, &mut brace, &opts).unwrap()
    };
    let gaps: Vec<f64> = [5, 10, 20, 40]
        .iter()
        .map(|&s| {
            compare_runs(&run(Scheme::AverageAcceleration, s), &run(Scheme::Explicit, s))
                .unwrap()
                .nrmse_drift
        })
        .collect();
    for w in gaps.windows(2) {
        assert!(w[1] < w[0], "{gaps:?}");
    }
}

#[test]
fn strong_pulse_leaves_a_permanent_offset() {
    let props = BraceProperties::default();
    let f = FrameModel::with_defaults(props.k1).unwrap();
    let dt = 0.005;
    let pulse = 0.3;
    let ag: Vec<f64> = (0..1200)
        .map(|k| {
            let t = k as f64 * dt;
            if t < pulse { 0.8 * (std::f64::consts::PI * t / pulse).sin() } else { 0.0 }
        })
        .collect();
    let motion = GroundMotion::new(dt, &ag, AccelUnit::G, 1.0).unwrap();
    let mut brace = MaterialBrace::new(props.bilinear().unwrap());
    let h = newmark_nlrha(&f, &motion, &mut brace, &IntegrationOptions::default()).unwrap();
    assert!(h.peak_brace_force() > props.yield_force());
    // The last two periods oscillate about the residual offset.
    let tail = &h.u[h.len() - (2.0 * f.natural_period() / dt) as usize..];
    let offset = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(offset.abs() > 0.5, "residual {offset} mm");
}

#[test]
fn zero_scaled_motion_gives_zero_response() {
    let motion = SyntheticMotion::default().generate().unwrap();
    let silent = GroundMotion::new(motion.dt(), motion.accelerations(), AccelUnit::MmPerS2, 0.0).unwrap();
    let props = BraceProperties::default();
    let f = FrameModel::with_defaults(props.k1).unwrap();
    let mut brace = MaterialBrace::new(props.smooth().unwrap());
    let h = newmark_nlrha(&f, &silent, &mut brace, &IntegrationOptions::default()).unwrap();
    assert_eq!(h.len(), motion.len());
    assert!(h.u.iter().chain(&h.v).chain(&h.r_brace).all(|v| *v == 0.0));
    let report = compare_runs(&h, &h).unwrap();
    assert_eq!((report.nrmse_drift, report.nrmse_force), (0.0, 0.0));
}

#[test]
fn untrained_model_is_a_poor_substitute() {
    let props = BraceProperties::default();
    let f = FrameModel::with_defaults(props.k1).unwrap();
    let motion = earthquake();
    let reference =
        newmark_nlrha(&f, &motion, &mut MaterialBrace::new(props.smooth().unwrap()), &IntegrationOptions::default())
            .unwrap();
    let blank = TrainedPiModel {
        schema_version: SCHEMA_VERSION,
        m: 3,
        lambda: 0.1,
        x_max_train: 60.0,
        nrmse_train: 0.0,
        linear_weight: 0.0,
        constant: 0.0,
        thresholds: vec![15.0, 30.0, 45.0],
        weights: vec![0.0; 3],
    };
    // Without brace stiffness the frame is far too soft for the explicit limit; use the implicit scheme.
    let opts = IntegrationOptions {
        scheme: Scheme::AverageAcceleration,
        ..IntegrationOptions::default()
    };
    let test = newmark_nlrha(&f, &motion, &mut PiSession::new(blank), &opts).unwrap();
    assert!(compare_runs(&reference, &test).unwrap().nrmse_drift > 0.1);
}

#[test]
fn motion_files_load_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("motion.csv");
    std::fs::write(&csv, "t,ag[g]\n0,0\n0.01,0.1\n0.02,-0.05\n0.03,0\n").unwrap();
    let m = load_ground_motion(&csv, MotionFormat::Csv2Col, 2.0, None).unwrap();
    assert_eq!(m.len(), 4);
    assert!((m.dt() - 0.01).abs() < 1e-15);
    assert!((m.accelerations()[1] - 0.2 * 9806.65).abs() < 1e-9);

    let at2 = dir.path().join("motion.AT2");
    let mut text = String::from(
        "PEER NGA STRONG MOTION DATABASE RECORD\nSynthetic, test\n\
         ACCELERATION TIME SERIES IN UNITS OF G\nNPTS=  4000, DT= .0100 SEC\n",
    );
    for k in 0..4000 {
        text.push_str(&format!("{:15.7E}", (TAU * k as f64 / 100.0).sin() * 0.1));
        if k % 5 == 4 {
            text.push('\n');
        }
    }
    std::fs::write(&at2, text).unwrap();
    let m = load_ground_motion(&at2, MotionFormat::PeerAt2, 1.0, None).unwrap();
    assert_eq!(m.len(), 4000);
    assert!((m.dt() - 0.01).abs() < 1e-15);

    std::fs::write(&csv, "t,ag[g]\n0,0\n0.01,0.1\n0.025,0\n").unwrap();
    assert!(load_ground_motion(&csv, MotionFormat::Csv2Col, 1.0, None).is_err());
}
