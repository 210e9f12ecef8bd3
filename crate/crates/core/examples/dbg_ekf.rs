use tooltrack_core::geometry::*;
use tooltrack_core::pose::*;
use nalgebra::{Point2, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let k = CameraIntrinsics { fx: 800.0, fy: 780.0, cx: 360.0, cy: 288.0, width: 720, height: 576 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let kps = KeypointSet::new(std::array::from_fn(|_| {
        Point3::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), 300.0 + rng.random_range(-110.0..150.0))
    }));
    let t_cal = RigidTransform::identity();
    let truth = PoseVector::from_array([0.05, -0.03, 0.02, 4.0, -6.0, 10.0]);
    let z = measurement_fn(&truth, &kps, &t_cal, &k).unwrap();
    let obs: Vec<Observation> = (0..14).map(|i| Observation { part_id: i, pixel: Point2::new(z[2*i], z[2*i+1]), valid: true }).collect();
    let mut state = CorrectionState::new(PoseVector::zero(), initial_covariance());
    for it in 0..30 {
        state = predict(&state);
        state = update(&state, &obs, &kps, &t_cal, &k, true).unwrap();
        let err: Vec<f64> = state.x.to_array().iter().zip(truth.to_array().iter()).map(|(a,b)| a-b).collect();
        println!("iter {it}: err {err:?}");
    }
}
