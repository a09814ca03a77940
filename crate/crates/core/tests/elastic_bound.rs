mod common;

use vibeseg_core::volume::{DisplacementField, ElasticParams};

#[test]
fn displacement_stays_within_five_sigma() {
    let g = common::grid([24, 24, 16], [2.0, 2.0, 4.0]);
    let sigma = 4.0;
    let mut worst: f64 = 0.0;
    for seed in 0..1000 {
        let f = DisplacementField::sample(&g, &ElasticParams { control_spacing: 32.0, sigma, seed }).unwrap();
        for k in 0..16 {
            for j in 0..24 {
                for i in 0..24 {
                    let d = f.at([i, j, k]);
                    worst = worst.max((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt());
                }
            }
        }
    }
    println!("max displacement over 1000 draws: {worst:.4} mm ({:.3} sigma)", worst / sigma);
    assert!(worst <= 5.0 * sigma);
}
