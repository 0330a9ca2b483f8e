//! Temporary profile-fit probe (removed before release).

use levitrap::detection::{self, PixelGrid, ProfileParams};

#[test]
#[ignore]
fn profile_fit_probe() {
    for (a, w) in [(22.5, 4.5), (225.0, 4.5), (800.0, 16.0)] {
        let margin: f64 = a + 5.0 * w + 10.0;
        let len = (2.0 * margin).ceil() as usize + 1;
        let truth = ProfileParams {
            i0: 2.1,
            z0: margin,
            w,
            amp_a: a,
            slope_b: 1.0e-3 * (8.0_f64 / a).min(1.0),
            offset_c: 0.106,
        };
        let grid = PixelGrid {
            origin: 0.0,
            pitch: 1.0,
            len,
        };
        let profile = detection::render_profile(&truth, &grid).unwrap();
        let fit = detection::fit_profile(&profile).unwrap();
        println!(
            "a={a} w={w}: iters {} cost-resid {:.3e}",
            fit.fit.iterations,
            fit.fit.residuals.iter().map(|r| r * r).sum::<f64>()
        );
        let rel = |got: f64, want: f64| (got - want) / want * 100.0;
        println!(
            "  i0 {:+.4}%  z0 {:+.4}%  w {:+.4}%  a {:+.4}%  b {:+.4}%  c {:+.4}%",
            rel(fit.params.i0, truth.i0),
            rel(fit.params.z0, truth.z0),
            rel(fit.params.w, truth.w),
            rel(fit.params.amp_a, truth.amp_a),
            rel(fit.params.slope_b, truth.slope_b),
            rel(fit.params.offset_c, truth.offset_c),
        );
    }
}
